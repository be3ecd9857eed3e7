//! `tokshap gen`: synthetic dataset plus ground-truth classifier.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use tokshap::dataset::write_dataset;
use tokshap::manifest::RunManifest;
use tokshap::toygen::{balanced_subsample, generate_dataset, ToySpec};

use super::{manifest_path, parse_usize_list};

#[derive(Args)]
pub struct GenArgs {
    /// Output dataset JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Output classifier descriptor JSON.
    #[arg(long)]
    classifier_out: PathBuf,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Comma-separated lengths, drawn uniformly per instance.
    #[arg(long, default_value = "8")]
    lengths: String,
    /// Vocabulary size; tokens are w000, w001, ...
    #[arg(long, default_value_t = 60)]
    vocab: usize,
    /// How many vocabulary tokens carry nonzero weight.
    #[arg(long, default_value_t = 30)]
    signal: usize,
    #[arg(long, default_value_t = 1.0)]
    weight_scale: f64,
    /// Pair-bonus rules among signal tokens.
    #[arg(long, default_value_t = 8)]
    pairs: usize,
    #[arg(long, default_value_t = 0.75)]
    pair_scale: f64,
    /// Probability of flipping a gold label away from the classifier.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Balanced subsample size kept after generation; 0 keeps everything.
    #[arg(long, default_value_t = 0)]
    subsample: usize,
}

pub fn run(args: GenArgs) -> anyhow::Result<u8> {
    let spec = ToySpec {
        instances: args.instances,
        lengths: parse_usize_list(&args.lengths, "--lengths")?,
        vocab: args.vocab,
        signal: args.signal,
        weight_scale: args.weight_scale,
        pairs: args.pairs,
        pair_scale: args.pair_scale,
        noise: args.noise,
        seed: args.seed,
    };
    let (mut records, descriptor) = generate_dataset(&spec)?;
    if args.subsample > 0 {
        records = balanced_subsample(&records, args.subsample, args.seed)?;
    }

    let mut manifest = RunManifest::new("gen");
    manifest.master_seed = args.seed;
    manifest.classifier = Some(descriptor.identity());
    let args_list = [
        ("instances", args.instances.to_string()),
        ("lengths", args.lengths.clone()),
        ("vocab", args.vocab.to_string()),
        ("signal", args.signal.to_string()),
        ("weight_scale", args.weight_scale.to_string()),
        ("pairs", args.pairs.to_string()),
        ("pair_scale", args.pair_scale.to_string()),
        ("noise", args.noise.to_string()),
        ("subsample", args.subsample.to_string()),
    ];
    for (key, value) in args_list {
        manifest.args.insert(key.to_string(), value);
    }
    let hash = manifest.content_hash();

    write_dataset(&args.out, Some(&hash), &records)
        .with_context(|| format!("writing {}", args.out.display()))?;
    descriptor
        .to_file(&args.classifier_out)
        .with_context(|| format!("writing {}", args.classifier_out.display()))?;
    manifest.record_output("dataset", &args.out)?;
    manifest.record_output("classifier", &args.classifier_out)?;
    manifest.save(&manifest_path(&args.out))?;

    println!(
        "wrote {} instances to {} (classifier {})",
        records.len(),
        args.out.display(),
        descriptor.identity()
    );
    Ok(0)
}
