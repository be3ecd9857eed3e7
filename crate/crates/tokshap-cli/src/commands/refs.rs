//! `tokshap refs`: reference attributions for surrogate training.
//!
//! Instances the estimator cannot handle (e.g. too long for exact) are
//! skipped with a warning; any skip turns the exit code to 2 so callers
//! notice the reference set is partial.

use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use tokshap::amortized::{build_reference_dataset, ReferenceMethod};
use tokshap::dataset::{read_dataset, write_references, ReferenceLine};
use tokshap::exact::DEFAULT_EXACT_CAP;
use tokshap::manifest::{seed_digest, RunManifest};
use tokshap::{Method, MethodSpec, TokenSequence, DEFAULT_PAD_TOKEN};

use super::manifest_path;
use crate::classifiers::{self, parse_value_mode};

#[derive(Args)]
pub struct RefsArgs {
    /// Input dataset JSONL.
    #[arg(long)]
    input: PathBuf,
    /// builtin:<file>, external:<cmd>, or tcp:<addr>.
    #[arg(long)]
    classifier: String,
    /// Output references JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Reference estimator: svs:<m> or exact.
    #[arg(long, default_value = "svs:25")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Length ceiling when --method is exact.
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    #[arg(long, default_value = DEFAULT_PAD_TOKEN)]
    pad: String,
    #[arg(long)]
    value_mode: Option<String>,
}

pub fn run(args: RefsArgs) -> anyhow::Result<u8> {
    let spec: MethodSpec = args.method.parse()?;
    let method = match spec {
        MethodSpec::Svs { m } => ReferenceMethod::Svs { m },
        MethodSpec::Exact => ReferenceMethod::Exact {
            cap: args.exact_cap,
        },
        other => bail!("references need svs:<m> or exact, not {other}"),
    };
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

    let mut manifest = RunManifest::new("refs");
    manifest.master_seed = args.seed;
    manifest.classifier = Some(loaded.identity.clone());
    manifest.args.insert("method".to_string(), spec.to_string());
    manifest
        .args
        .insert("exact_cap".to_string(), args.exact_cap.to_string());
    manifest.args.insert("pad".to_string(), args.pad.clone());
    manifest.record_input("input", &args.input)?;
    if spec.method() == Method::Svs {
        let ids = instances.iter().map(|x| x.id.as_str());
        manifest.seed_digest = Some(seed_digest(args.seed, Method::Svs, ids));
    }
    let hash = manifest.content_hash();

    let (records, skips) = build_reference_dataset(
        loaded.classifier.as_ref(),
        &instances,
        method,
        args.seed,
        &args.pad,
    );
    let lines: Vec<ReferenceLine> = records.into_iter().map(Into::into).collect();
    write_references(&args.out, Some(&hash), &lines)?;
    manifest.record_output("references", &args.out)?;
    manifest.save(&manifest_path(&args.out))?;

    println!(
        "built {} references to {} ({} skipped)",
        lines.len(),
        args.out.display(),
        skips.len()
    );
    if skips.is_empty() {
        Ok(0)
    } else {
        for skip in &skips {
            eprintln!("skipped {}: {}", skip.instance_id, skip.detail);
        }
        Ok(2)
    }
}
