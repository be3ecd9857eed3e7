//! `tokshap train`: fit the amortized surrogate on reference attributions.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use tokshap::amortized::{train_amortized, ReferenceRecord, TrainConfig};
use tokshap::dataset::read_references;
use tokshap::manifest::RunManifest;
use tokshap::AmortizedConfig;

use super::{manifest_path, write_json_report};

#[derive(Args)]
pub struct TrainArgs {
    /// Reference attributions JSONL (from `tokshap refs`).
    #[arg(long)]
    refs: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON training report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 5e-5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Fraction of the training split used (nested across fractions).
    #[arg(long, default_value_t = 1.0)]
    train_fraction: f64,
    #[arg(long, default_value_t = 1 << 16)]
    hash_buckets: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    head_hidden: usize,
    /// Context window radius; 0 scores tokens from their own embedding.
    #[arg(long, default_value_t = 0)]
    context_radius: usize,
    /// 0 infers the class count from the reference labels.
    #[arg(long, default_value_t = 0)]
    num_classes: usize,
    #[arg(long, default_value_t = 0)]
    hash_salt: u64,
    /// Seed for parameter initialization.
    #[arg(long, default_value_t = 0)]
    param_seed: u64,
}

pub fn run(args: TrainArgs) -> anyhow::Result<u8> {
    let file = read_references(&args.refs)?;
    let records: Vec<ReferenceRecord<f64>> = file
        .records
        .into_iter()
        .map(|line| line.into_record())
        .collect::<tokshap::Result<_>>()?;

    let num_classes = if args.num_classes > 0 {
        args.num_classes
    } else {
        records
            .iter()
            .map(|r| r.label + 1)
            .max()
            .unwrap_or(2)
            .max(2)
    };
    let config = TrainConfig {
        model: AmortizedConfig {
            hash_buckets: args.hash_buckets,
            embed_dim: args.embed_dim,
            head_hidden: args.head_hidden,
            context_radius: args.context_radius,
            num_classes,
            hash_salt: args.hash_salt,
            param_seed: args.param_seed,
        },
        learning_rate: args.learning_rate,
        max_epochs: args.epochs,
        patience: args.patience,
        batch_size: args.batch_size,
        train_fraction: args.train_fraction,
    };

    let mut manifest = RunManifest::new("train");
    manifest.master_seed = args.param_seed;
    let args_list = [
        ("learning_rate", args.learning_rate.to_string()),
        ("epochs", args.epochs.to_string()),
        ("patience", args.patience.to_string()),
        ("batch_size", args.batch_size.to_string()),
        ("train_fraction", args.train_fraction.to_string()),
        ("hash_buckets", args.hash_buckets.to_string()),
        ("embed_dim", args.embed_dim.to_string()),
        ("head_hidden", args.head_hidden.to_string()),
        ("context_radius", args.context_radius.to_string()),
        ("num_classes", num_classes.to_string()),
        ("hash_salt", args.hash_salt.to_string()),
    ];
    for (key, value) in args_list {
        manifest.args.insert(key.to_string(), value);
    }
    manifest.record_input("references", &args.refs)?;
    let hash = manifest.content_hash();

    let (model, report) = train_amortized(&records, &config)?;
    model
        .save(&args.out)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))?;
    manifest.record_output("checkpoint", &args.out)?;
    if let Some(path) = &args.report {
        let document = match serde_json::to_value(&report)? {
            serde_json::Value::Object(map) => map,
            other => unreachable!("report serializes to an object, got {other}"),
        };
        write_json_report(path, &hash, document)?;
        manifest.record_output("report", path)?;
    }
    manifest.save(&manifest_path(&args.out))?;

    println!(
        "trained on {} references: best epoch {}/{}, test MSE {:.6}{}",
        report.records,
        report.best_epoch,
        report.epochs_run,
        report.test_mse,
        match report.test_spearman {
            Some(rho) => format!(", test Spearman {rho:.4}"),
            None => String::new(),
        }
    );
    Ok(0)
}
