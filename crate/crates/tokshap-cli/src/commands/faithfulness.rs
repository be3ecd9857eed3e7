//! `tokshap faithfulness`: accuracy degradation under top-α masking.

use std::path::PathBuf;

use clap::Args;
use tokshap::dataset::{read_attributions, read_dataset};
use tokshap::faithfulness::{curve_csv, faithfulness_curve};
use tokshap::manifest::RunManifest;
use tokshap::{Attribution, TokenSequence, DEFAULT_PAD_TOKEN};

use super::{manifest_path, parse_f64_list, write_text};
use crate::classifiers::{self, parse_value_mode};

#[derive(Args)]
pub struct FaithfulnessArgs {
    /// Input dataset JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Attributions JSONL (one line per instance).
    #[arg(long)]
    attributions: PathBuf,
    /// builtin:<file>, external:<cmd>, or tcp:<addr>.
    #[arg(long)]
    classifier: String,
    /// Output CSV (alpha, accuracy, n_instances).
    #[arg(long)]
    out: PathBuf,
    /// Masking fractions in (0, 1]; the α=0 row is always included.
    #[arg(long, default_value = "0.01,0.05,0.1,0.2")]
    alphas: String,
    #[arg(long, default_value = DEFAULT_PAD_TOKEN)]
    pad: String,
    #[arg(long)]
    value_mode: Option<String>,
}

pub fn run(args: FaithfulnessArgs) -> anyhow::Result<u8> {
    let alphas = parse_f64_list(&args.alphas, "--alphas")?;
    let requested_mode = args
        .value_mode
        .as_deref()
        .map(parse_value_mode)
        .transpose()?;
    let loaded = classifiers::load(&args.classifier, requested_mode)?;

    let dataset = read_dataset(&args.input)?;
    let instances: Vec<TokenSequence> = dataset
        .records
        .iter()
        .map(|r| r.to_sequence())
        .collect::<tokshap::Result<_>>()?;
    let attributions: Vec<Attribution<f64>> = read_attributions(&args.attributions)?
        .records
        .into_iter()
        .map(Into::into)
        .collect();

    let mut manifest = RunManifest::new("faithfulness");
    manifest.classifier = Some(loaded.identity.clone());
    manifest
        .args
        .insert("alphas".to_string(), args.alphas.clone());
    manifest.args.insert("pad".to_string(), args.pad.clone());
    manifest.record_input("input", &args.input)?;
    manifest.record_input("attributions", &args.attributions)?;
    let hash = manifest.content_hash();

    let rows = faithfulness_curve(
        loaded.classifier.as_ref(),
        &instances,
        &attributions,
        &alphas,
        &args.pad,
    )?;
    write_text(
        &args.out,
        &format!("# manifest: {hash}\n{}", curve_csv(&rows)),
    )?;
    manifest.record_output("curve", &args.out)?;
    manifest.save(&manifest_path(&args.out))?;

    for row in &rows {
        println!(
            "alpha {:>5.2}: accuracy {:.4} over {} instances",
            row.alpha, row.accuracy, row.instances
        );
    }
    Ok(0)
}
