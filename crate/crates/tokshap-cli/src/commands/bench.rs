//! `tokshap bench`: per-instance latency and evaluation accounting.
//!
//! Every method runs single-threaded over the same instances so timings
//! compare like with like; the first instance is explained once untimed
//! to warm caches and the classifier channel. Evaluation counts come from
//! the per-instance value cache, so they count distinct masked inputs.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::Args;
use serde::Serialize;
use tokshap::dataset::read_dataset;
use tokshap::exact::DEFAULT_EXACT_CAP;
use tokshap::manifest::RunManifest;
use tokshap::{
    explain_instance, ExplainOptions, LabelPolicy, MethodSpec, TokenSequence, DEFAULT_PAD_TOKEN,
};

use super::{manifest_path, write_json_report};
use crate::classifiers::{self, parse_value_mode};
use crate::commands::explain::load_model_if_needed;

#[derive(Args)]
pub struct BenchArgs {
    /// Input dataset JSONL.
    #[arg(long)]
    input: PathBuf,
    /// builtin:<file>, external:<cmd>, or tcp:<addr>.
    #[arg(long)]
    classifier: String,
    /// Output JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated compact method specs, e.g. exact,svs:25,ks:200.
    #[arg(long)]
    methods: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
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

#[derive(Debug, Serialize)]
struct BenchRow {
    method: String,
    instances: usize,
    total_seconds: f64,
    mean_seconds_per_instance: f64,
    /// Distinct masked inputs scored, averaged over instances.
    mean_evaluations: f64,
    min_evaluations: usize,
    max_evaluations: usize,
    /// Coalition-value lookups (cached or not), averaged over instances.
    mean_lookups: f64,
}

pub fn run(args: BenchArgs) -> anyhow::Result<u8> {
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
    if instances.is_empty() {
        return Err(anyhow!("nothing to benchmark in {}", args.input.display()));
    }

    let mut manifest = RunManifest::new("bench");
    manifest.master_seed = args.seed;
    manifest.classifier = Some(loaded.identity.clone());
    manifest
        .args
        .insert("methods".to_string(), args.methods.clone());
    manifest.record_input("input", &args.input)?;
    if let Some(path) = &args.model {
        if model.is_some() {
            manifest.record_input("model", path)?;
        }
    }
    let hash = manifest.content_hash();

    let mut rows: Vec<BenchRow> = Vec::new();
    for spec in &specs {
        let options = ExplainOptions {
            method: *spec,
            master_seed: args.seed,
            label: LabelPolicy::Predicted,
            exact_cap: args.exact_cap,
            pad: &args.pad,
            model: model.as_ref(),
        };
        explain_instance(loaded.classifier.as_ref(), &instances[0], &options)
            .map_err(|e| anyhow!("{spec} warmup on {}: {e}", instances[0].id))?;

        let mut total_seconds = 0.0;
        let mut total_evaluations = 0usize;
        let mut total_lookups = 0usize;
        let mut min_evaluations = usize::MAX;
        let mut max_evaluations = 0usize;
        for x in &instances {
            let start = Instant::now();
            let outcome = explain_instance(loaded.classifier.as_ref(), x, &options)
                .map_err(|e| anyhow!("{spec} on {}: {e}", x.id))?;
            total_seconds += start.elapsed().as_secs_f64();
            total_evaluations += outcome.distinct_evaluations;
            total_lookups += outcome.lookups;
            min_evaluations = min_evaluations.min(outcome.distinct_evaluations);
            max_evaluations = max_evaluations.max(outcome.distinct_evaluations);
        }
        let n = instances.len() as f64;
        rows.push(BenchRow {
            method: spec.to_string(),
            instances: instances.len(),
            total_seconds,
            mean_seconds_per_instance: total_seconds / n,
            mean_evaluations: total_evaluations as f64 / n,
            min_evaluations,
            max_evaluations,
            mean_lookups: total_lookups as f64 / n,
        });
    }

    let mut document = serde_json::Map::new();
    document.insert("rows".to_string(), serde_json::to_value(&rows)?);
    write_json_report(&args.out, &hash, document)?;
    manifest.record_output("report", &args.out)?;
    manifest.save(&manifest_path(&args.out))?;

    for row in &rows {
        println!(
            "{:>16}: {:.3} ms/instance, {:.1} evaluations/instance",
            row.method,
            row.mean_seconds_per_instance * 1e3,
            row.mean_evaluations
        );
    }
    Ok(0)
}
