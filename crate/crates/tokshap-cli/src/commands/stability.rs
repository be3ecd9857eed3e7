//! `tokshap stability`: cross-seed agreement sweep per method.
//!
//! Each method in `--methods` is rerun under `--seeds` distinct master
//! seeds and all seed pairs are compared. The JSON report aggregates all
//! methods; each method also gets a per-instance CSV next to the report.
//! Labels are always the predicted class so every seed explains the same
//! target.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use tokshap::dataset::read_dataset;
use tokshap::exact::DEFAULT_EXACT_CAP;
use tokshap::manifest::RunManifest;
use tokshap::stability::{stability_sweep, StabilityConfig, StabilityReport};
use tokshap::{
    explain_instance, ExplainOptions, LabelPolicy, MethodSpec, TokenSequence, DEFAULT_PAD_TOKEN,
};

use super::{manifest_path, parse_usize_list, write_json_report, write_text};
use crate::classifiers::{self, parse_value_mode};
use crate::commands::explain::load_model_if_needed;

#[derive(Args)]
pub struct StabilityArgs {
    /// Input dataset JSONL.
    #[arg(long)]
    input: PathBuf,
    /// builtin:<file>, external:<cmd>, or tcp:<addr>.
    #[arg(long)]
    classifier: String,
    /// Output JSON report; per-method CSVs land next to it.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated compact method specs, e.g. ks:25,ks:200,svs:25.
    #[arg(long)]
    methods: String,
    /// Number of master seeds (seed_base, seed_base+1, ...).
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Top-K overlap sizes.
    #[arg(long, default_value = "5,10")]
    topk: String,
    /// Ascending inclusive length-bucket bounds.
    #[arg(long, default_value = "8,16,32")]
    buckets: String,
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    #[arg(long, default_value = DEFAULT_PAD_TOKEN)]
    pad: String,
    #[arg(long)]
    value_mode: Option<String>,
    /// Surrogate checkpoint when a method needs one.
    #[arg(long)]
    model: Option<PathBuf>,
}

/// CSV sibling for one method: `report.json` + `ks:200` gives
/// `report-ks-200.csv`.
fn csv_path(out: &Path, method: &MethodSpec) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stability".to_string());
    let label = method.to_string().replace(':', "-");
    out.with_file_name(format!("{stem}-{label}.csv"))
}

pub fn run(args: StabilityArgs) -> anyhow::Result<u8> {
    let specs: Vec<MethodSpec> = args
        .methods
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<MethodSpec>()
                .with_context(|| format!("--methods: bad entry {part:?}"))
        })
        .collect::<anyhow::Result<_>>()?;
    if specs.is_empty() {
        return Err(anyhow!("--methods must name at least one method"));
    }
    let needs_model = specs.iter().any(MethodSpec::needs_model);
    let model = if needs_model {
        let spec = specs.iter().find(|s| s.needs_model()).unwrap();
        load_model_if_needed(spec, args.model.as_deref())?
    } else {
        None
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
    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed_base + i as u64).collect();
    let ks = parse_usize_list(&args.topk, "--topk")?;
    let bucket_bounds = parse_usize_list(&args.buckets, "--buckets")?;

    let mut manifest = RunManifest::new("stability");
    manifest.master_seed = args.seed_base;
    manifest.classifier = Some(loaded.identity.clone());
    manifest
        .args
        .insert("methods".to_string(), args.methods.clone());
    manifest
        .args
        .insert("seeds".to_string(), args.seeds.to_string());
    manifest
        .args
        .insert("seed_base".to_string(), args.seed_base.to_string());
    manifest.args.insert("topk".to_string(), args.topk.clone());
    manifest
        .args
        .insert("buckets".to_string(), args.buckets.clone());
    manifest.record_input("input", &args.input)?;
    if let Some(path) = &args.model {
        if model.is_some() {
            manifest.record_input("model", path)?;
        }
    }
    let hash = manifest.content_hash();

    let mut reports: Vec<StabilityReport> = Vec::new();
    for spec in &specs {
        let config = StabilityConfig {
            method_label: spec.to_string(),
            seeds: seeds.clone(),
            ks: ks.clone(),
            bucket_bounds: bucket_bounds.clone(),
        };
        let report = stability_sweep(&instances, &config, |x, seed| {
            let options = ExplainOptions {
                method: *spec,
                master_seed: seed,
                label: LabelPolicy::Predicted,
                exact_cap: args.exact_cap,
                pad: &args.pad,
                model: model.as_ref(),
            };
            explain_instance(loaded.classifier.as_ref(), x, &options)
                .map(|outcome| outcome.attribution)
        })?;
        let csv = csv_path(&args.out, spec);
        write_text(
            &csv,
            &format!("# manifest: {hash}\n{}", report.per_instance_csv()),
        )?;
        reports.push(report);
    }

    let mut document = serde_json::Map::new();
    document.insert("reports".to_string(), serde_json::to_value(&reports)?);
    write_json_report(&args.out, &hash, document)?;

    manifest.record_output("report", &args.out)?;
    for spec in &specs {
        let csv = csv_path(&args.out, spec);
        let role = format!("csv:{spec}");
        manifest.record_output(&role, &csv)?;
    }
    manifest.save(&manifest_path(&args.out))?;

    for report in &reports {
        println!(
            "{}: mean Spearman {}, mean MSE {:.6}, {} failures",
            report.method,
            match report.mean_spearman {
                Some(rho) => format!("{rho:.4}"),
                None => "n/a".to_string(),
            },
            report.mean_mse,
            report.failures.len()
        );
    }
    Ok(0)
}
