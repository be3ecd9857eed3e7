//! One module per subcommand, plus small helpers they share.

pub mod bench;
pub mod explain;
pub mod faithfulness;
pub mod gen;
pub mod refs;
pub mod serve;
pub mod stability;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

use anyhow::Context;

/// Sibling manifest path for an output file: `attrs.jsonl` gets
/// `attrs.jsonl.manifest.json`.
pub(crate) fn manifest_path(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{name}.manifest.json"))
}

pub(crate) fn write_text(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes a JSON document with the manifest hash as a top-level field.
pub(crate) fn write_json_report(
    path: &Path,
    manifest_hash: &str,
    mut document: serde_json::Map<String, serde_json::Value>,
) -> anyhow::Result<()> {
    document.insert(
        "manifest".to_string(),
        serde_json::Value::String(manifest_hash.to_string()),
    );
    let mut text = serde_json::to_string_pretty(&document)?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn parse_usize_list(raw: &str, flag: &str) -> anyhow::Result<Vec<usize>> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .with_context(|| format!("{flag}: bad entry {part:?}"))
        })
        .collect()
}

pub(crate) fn parse_f64_list(raw: &str, flag: &str) -> anyhow::Result<Vec<f64>> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .with_context(|| format!("{flag}: bad entry {part:?}"))
        })
        .collect()
}
