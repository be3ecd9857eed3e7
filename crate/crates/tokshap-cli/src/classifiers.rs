//! Classifier loading shared by all subcommands.
//!
//! `--classifier` accepts three schemes: `builtin:<file>` builds an
//! in-process classifier from a descriptor JSON, `external:<cmd>` spawns
//! a child process speaking the line protocol on stdio, and `tcp:<addr>`
//! connects to a running server. Built-ins default to probability values
//! unless `--value-mode` says otherwise; external classifiers declare
//! their mode in the handshake, and a conflicting flag is an error.

use std::path::Path;

use anyhow::{bail, Context};
use tokshap::{Classifier, ClassifierDescriptor, ExternalClassifier, ValueMode};

pub struct LoadedClassifier {
    pub classifier: Box<dyn Classifier<f64>>,
    /// Stable identity string recorded in manifests.
    pub identity: String,
}

pub fn load(spec: &str, value_mode: Option<ValueMode>) -> anyhow::Result<LoadedClassifier> {
    if let Some(path) = spec.strip_prefix("builtin:") {
        let descriptor = ClassifierDescriptor::from_file(Path::new(path))
            .with_context(|| format!("loading classifier descriptor {path}"))?;
        let mode = value_mode.unwrap_or(ValueMode::Probability);
        return Ok(LoadedClassifier {
            identity: descriptor.identity(),
            classifier: descriptor.build::<f64>(mode),
        });
    }
    let external = if let Some(cmd) = spec.strip_prefix("external:") {
        ExternalClassifier::spawn(cmd).with_context(|| format!("spawning {cmd:?}"))?
    } else if let Some(addr) = spec.strip_prefix("tcp:") {
        ExternalClassifier::connect_tcp(addr).with_context(|| format!("connecting to {addr}"))?
    } else {
        bail!(
            "unknown classifier spec {spec:?}; expected builtin:<file>, external:<cmd>, or tcp:<addr>"
        );
    };
    let declared = Classifier::<f64>::value_mode(&external);
    if let Some(requested) = value_mode {
        if requested != declared {
            bail!(
                "classifier declares value mode {} but --value-mode asked for {}",
                declared.as_str(),
                requested.as_str()
            );
        }
    }
    Ok(LoadedClassifier {
        identity: Classifier::<f64>::descriptor(&external),
        classifier: Box::new(external),
    })
}

/// Parses `prob`/`raw` (and their long forms) into a [`ValueMode`].
pub fn parse_value_mode(s: &str) -> anyhow::Result<ValueMode> {
    match s {
        "prob" | "probability" => Ok(ValueMode::Probability),
        "raw" | "raw_score" => Ok(ValueMode::RawScore),
        other => bail!("unknown value mode {other:?}; expected prob or raw"),
    }
}
