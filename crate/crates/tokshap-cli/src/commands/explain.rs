//! `tokshap explain`: attribute every instance of a dataset.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use rayon::prelude::*;
use tokshap::dataset::{read_dataset, write_attributions, AttributionLine};
use tokshap::exact::DEFAULT_EXACT_CAP;
use tokshap::manifest::{seed_digest, RunManifest};
use tokshap::{
    explain_instance, AmortizedModel, ExplainOptions, LabelPolicy, Method, MethodSpec,
    TokenSequence, DEFAULT_PAD_TOKEN,
};

use super::manifest_path;
use crate::classifiers::{self, parse_value_mode};

#[derive(Args)]
pub struct ExplainArgs {
    /// Input dataset JSONL.
    #[arg(long)]
    input: PathBuf,
    /// builtin:<file>, external:<cmd>, or tcp:<addr>.
    #[arg(long)]
    classifier: String,
    /// Output attributions JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Method name (exact, svs, ks, amortized, adapt) or compact spec
    /// like svs:25.
    #[arg(long)]
    method: String,
    /// Sampling budget when --method is a bare svs/ks/adapt.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// "pred" explains the predicted class; an integer fixes the class.
    #[arg(long, default_value = "pred")]
    label: String,
    /// prob or raw; defaults to prob for built-ins, handshake for external.
    #[arg(long)]
    value_mode: Option<String>,
    /// as_written or virtual_sample (adapt only).
    #[arg(long)]
    normalization: Option<String>,
    /// Length ceiling for exact enumeration.
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    exact_cap: usize,
    #[arg(long, default_value = DEFAULT_PAD_TOKEN)]
    pad: String,
    /// Surrogate checkpoint, required for amortized and adapt.
    #[arg(long)]
    model: Option<PathBuf>,
}

/// Combines `--method`, `--samples`, and `--normalization` into one spec.
/// Compact specs already carry their budget; passing it twice is an error.
pub(crate) fn resolve_method_spec(
    method: &str,
    samples: Option<u64>,
    normalization: Option<&str>,
) -> anyhow::Result<MethodSpec> {
    let compact = method.contains(':');
    if compact && samples.is_some() {
        bail!("--samples conflicts with the budget inside {method:?}; pass it once");
    }
    if compact && method.matches(':').count() > 1 && normalization.is_some() {
        bail!("--normalization conflicts with the one inside {method:?}; pass it once");
    }
    let text = match samples {
        Some(m) if !compact => format!("{method}:{m}"),
        _ => method.to_string(),
    };
    let mut spec: MethodSpec = text.parse()?;
    if let Some(norm) = normalization {
        match &mut spec {
            MethodSpec::Adapt { normalization, .. } => *normalization = norm.parse()?,
            _ => bail!("--normalization only applies to adapt, not {spec}"),
        }
    }
    Ok(spec)
}

pub(crate) fn parse_label_policy(label: &str) -> anyhow::Result<LabelPolicy> {
    if label == "pred" {
        return Ok(LabelPolicy::Predicted);
    }
    let index: usize = label
        .parse()
        .with_context(|| format!("--label: expected \"pred\" or a class index, got {label:?}"))?;
    Ok(LabelPolicy::Fixed(index))
}

pub(crate) fn load_model_if_needed(
    spec: &MethodSpec,
    model: Option<&Path>,
) -> anyhow::Result<Option<AmortizedModel<f64>>> {
    if !spec.needs_model() {
        return Ok(None);
    }
    let path = model.ok_or_else(|| anyhow!("method {spec} requires --model <checkpoint>"))?;
    let model = AmortizedModel::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Some(model))
}

pub fn run(args: ExplainArgs) -> anyhow::Result<u8> {
    let spec = resolve_method_spec(&args.method, args.samples, args.normalization.as_deref())?;
    let label = parse_label_policy(&args.label)?;
    let requested_mode = args
        .value_mode
        .as_deref()
        .map(parse_value_mode)
        .transpose()?;
    let loaded = classifiers::load(&args.classifier, requested_mode)?;
    let model = load_model_if_needed(&spec, args.model.as_deref())?;

    let dataset = read_dataset(&args.input)?;
    let instances: Vec<TokenSequence> = dataset
        .records
        .iter()
        .map(|r| r.to_sequence())
        .collect::<tokshap::Result<_>>()?;

    let mut manifest = RunManifest::new("explain");
    manifest.master_seed = args.seed;
    manifest.classifier = Some(loaded.identity.clone());
    manifest.args.insert("method".to_string(), spec.to_string());
    manifest
        .args
        .insert("label".to_string(), args.label.clone());
    manifest
        .args
        .insert("exact_cap".to_string(), args.exact_cap.to_string());
    manifest.args.insert("pad".to_string(), args.pad.clone());
    manifest.record_input("input", &args.input)?;
    if let Some(path) = &args.model {
        if model.is_some() {
            manifest.record_input("model", path)?;
        }
    }
    if matches!(spec.method(), Method::Svs | Method::Ks | Method::Adapt) {
        let ids = instances.iter().map(|x| x.id.as_str());
        manifest.seed_digest = Some(seed_digest(args.seed, spec.method(), ids));
    }
    let hash = manifest.content_hash();

    let options = ExplainOptions {
        method: spec,
        master_seed: args.seed,
        label,
        exact_cap: args.exact_cap,
        pad: &args.pad,
        model: model.as_ref(),
    };
    let lines: Vec<AttributionLine> = instances
        .par_iter()
        .map(|x| {
            explain_instance(loaded.classifier.as_ref(), x, &options)
                .map(|outcome| AttributionLine::from(outcome.attribution))
                .map_err(|e| anyhow!("instance {}: {e}", x.id))
        })
        .collect::<anyhow::Result<_>>()?;

    write_attributions(&args.out, Some(&hash), &lines)?;
    manifest.record_output("attributions", &args.out)?;
    manifest.save(&manifest_path(&args.out))?;

    println!(
        "wrote {} attributions ({}) to {}",
        lines.len(),
        spec,
        args.out.display()
    );
    Ok(0)
}
