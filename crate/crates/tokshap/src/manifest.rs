//! Run manifests: what ran, with which inputs, seeds and outputs.
//!
//! The manifest's content hash covers the run's identity (command, args,
//! seed, classifier, input digests) but not its outputs or timestamp, so
//! the hash can be embedded into the output files themselves. `verify`
//! re-hashes both sides and re-derives the per-instance seed digest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explain::MethodSpec;
use crate::seed::derive_seed;
use crate::types::Method;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader
            .read(&mut buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Digest over the per-instance seeds a sampled method will derive, in
/// instance order. Re-derivable from the dataset ids alone.
pub fn seed_digest<'a>(
    master_seed: u64,
    method: Method,
    ids: impl IntoIterator<Item = &'a str>,
) -> String {
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(derive_seed(master_seed, id, method, 0).to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Canonicalized flags, name → rendered value.
    pub args: BTreeMap<String, String>,
    pub master_seed: u64,
    /// Stable classifier identity, when one was involved.
    pub classifier: Option<String>,
    pub inputs: BTreeMap<String, FileDigest>,
    /// Digest over derived per-instance seeds; None for methods that do
    /// not sample.
    pub seed_digest: Option<String>,
    /// Not part of the content hash.
    pub outputs: BTreeMap<String, FileDigest>,
    /// Not part of the content hash.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: "tokshap".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: BTreeMap::new(),
            master_seed: 0,
            classifier: None,
            inputs: BTreeMap::new(),
            seed_digest: None,
            outputs: BTreeMap::new(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs(),
        }
    }

    pub fn record_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = FileDigest {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        };
        self.inputs.insert(role.to_string(), digest);
        Ok(())
    }

    pub fn record_output(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = FileDigest {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        };
        self.outputs.insert(role.to_string(), digest);
        Ok(())
    }

    /// Hash identifying the run. Outputs and the timestamp are excluded:
    /// output files embed this hash, which must therefore be computable
    /// before they are written.
    pub fn content_hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.outputs.clear();
        hashed.created_unix = 0;
        let json = serde_json::to_string(&hashed).expect("manifest serializes");
        sha256_hex(json.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), 1, e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    fn push(&mut self, name: String, ok: bool, detail: String) {
        self.checks.push(VerifyCheck { name, ok, detail });
    }
}

/// Extracts the manifest hash an output file claims to belong to, if any.
///
/// Three embedding conventions are recognised: JSONL files carry a header
/// record `{"kind": .., "manifest": ..}` on the first line, CSV files carry a
/// leading `# manifest: <hash>` comment, and whole-file JSON reports carry a
/// top-level `"manifest"` string field.
fn embedded_manifest_hash(path: &Path) -> Result<Option<String>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut raw = Vec::new();
    BufReader::new(file)
        .read_until(b'\n', &mut raw)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let Ok(first) = std::str::from_utf8(&raw) else {
        return Ok(None); // Binary output (e.g. a checkpoint): nothing embedded.
    };
    let first = first.trim();
    if let Some(rest) = first.strip_prefix("# manifest:") {
        return Ok(Some(rest.trim().to_string()));
    }
    #[derive(Deserialize)]
    struct Probe {
        #[allow(dead_code)]
        kind: String,
        manifest: String,
    }
    if let Ok(probe) = serde_json::from_str::<Probe>(first) {
        return Ok(Some(probe.manifest));
    }
    if first.starts_with('{') {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&text) {
            if let Some(serde_json::Value::String(hash)) = map.get("manifest") {
                return Ok(Some(hash.clone()));
            }
        }
    }
    Ok(None)
}

fn check_digest(report: &mut VerifyReport, side: &str, role: &str, digest: &FileDigest) -> bool {
    let path = Path::new(&digest.path);
    match file_sha256(path) {
        Ok(actual) if actual == digest.sha256 => {
            report.push(
                format!("{side}:{role}"),
                true,
                format!("{} unchanged", digest.path),
            );
            true
        }
        Ok(actual) => {
            report.push(
                format!("{side}:{role}"),
                false,
                format!(
                    "{} changed: recorded {}.., found {}..",
                    digest.path,
                    &digest.sha256[..12],
                    &actual[..12]
                ),
            );
            false
        }
        Err(err) => {
            report.push(format!("{side}:{role}"), false, err.to_string());
            false
        }
    }
}

/// Re-checks everything a manifest asserts: input and output digests, the
/// manifest hash embedded in output headers, and the derived-seed digest.
pub fn verify_manifest(manifest: &RunManifest) -> VerifyReport {
    let mut report = VerifyReport { checks: Vec::new() };
    let expected_hash = manifest.content_hash();

    for (role, digest) in &manifest.inputs {
        check_digest(&mut report, "input", role, digest);
    }
    for (role, digest) in &manifest.outputs {
        if !check_digest(&mut report, "output", role, digest) {
            continue;
        }
        let path = Path::new(&digest.path);
        match embedded_manifest_hash(path) {
            Ok(Some(embedded)) if embedded == expected_hash => {
                report.push(
                    format!("header:{role}"),
                    true,
                    "embedded manifest hash matches".to_string(),
                );
            }
            Ok(Some(embedded)) => {
                report.push(
                    format!("header:{role}"),
                    false,
                    format!(
                        "embedded manifest hash {}.. does not match {}..",
                        &embedded[..12],
                        &expected_hash[..12]
                    ),
                );
            }
            Ok(None) => {} // Not a headered JSONL file (e.g. CSV, checkpoint).
            Err(err) => {
                report.push(format!("header:{role}"), false, err.to_string());
            }
        }
    }

    if let Some(recorded) = &manifest.seed_digest {
        report.checks.push(rederive_seed_check(manifest, recorded));
    }
    report
}

fn rederive_seed_check(manifest: &RunManifest, recorded: &str) -> VerifyCheck {
    let fail = |detail: String| VerifyCheck {
        name: "seeds".to_string(),
        ok: false,
        detail,
    };
    let Some(method_text) = manifest.args.get("method") else {
        return fail("manifest has a seed digest but no method argument".to_string());
    };
    let method = match method_text.parse::<MethodSpec>() {
        Ok(spec) => spec.method(),
        Err(err) => return fail(err.to_string()),
    };
    let Some(input) = manifest.inputs.get("input") else {
        return fail("manifest has a seed digest but no dataset input".to_string());
    };
    let dataset = match crate::dataset::read_dataset(Path::new(&input.path)) {
        Ok(file) => file,
        Err(err) => return fail(err.to_string()),
    };
    let rederived = seed_digest(
        manifest.master_seed,
        method,
        dataset.records.iter().map(|r| r.id.as_str()),
    );
    if rederived == recorded {
        VerifyCheck {
            name: "seeds".to_string(),
            ok: true,
            detail: format!("{} per-instance seeds re-derived", dataset.records.len()),
        }
    } else {
        fail("re-derived seed digest does not match the manifest".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{write_dataset, DatasetRecord};

    fn sample_manifest() -> RunManifest {
        let mut m = RunManifest::new("explain");
        m.master_seed = 42;
        m.args.insert("method".to_string(), "svs:25".to_string());
        m.classifier = Some("builtin:additive:0011223344556677".to_string());
        m
    }

    #[test]
    fn content_hash_ignores_outputs_and_timestamps() {
        let mut a = sample_manifest();
        let mut b = sample_manifest();
        b.created_unix = a.created_unix + 1000;
        b.outputs.insert(
            "out".to_string(),
            FileDigest {
                path: "x".to_string(),
                sha256: "y".to_string(),
            },
        );
        assert_eq!(a.content_hash(), b.content_hash());

        a.master_seed = 43;
        assert_ne!(a.content_hash(), b.content_hash());
        a.master_seed = 42;
        a.args.insert("samples".to_string(), "25".to_string());
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn manifests_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.manifest.json");
        let manifest = sample_manifest();
        manifest.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(manifest, loaded);
        assert_eq!(manifest.content_hash(), loaded.content_hash());
    }

    #[test]
    fn file_digests_detect_edits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        std::fs::write(&path, "hello\n").unwrap();
        let before = file_sha256(&path).unwrap();
        std::fs::write(&path, "hello!\n").unwrap();
        assert_ne!(before, file_sha256(&path).unwrap());
    }

    #[test]
    fn seed_digests_depend_on_seed_method_and_ids() {
        let ids = ["a", "b", "c"];
        let base = seed_digest(1, Method::Svs, ids);
        assert_eq!(base, seed_digest(1, Method::Svs, ids));
        assert_ne!(base, seed_digest(2, Method::Svs, ids));
        assert_ne!(base, seed_digest(1, Method::Ks, ids));
        assert_ne!(base, seed_digest(1, Method::Svs, ["a", "b"]));
    }

    fn dataset_records() -> Vec<DatasetRecord> {
        vec![
            DatasetRecord {
                id: "a".into(),
                tokens: vec!["x".into()],
                label: 0,
            },
            DatasetRecord {
                id: "b".into(),
                tokens: vec!["y".into()],
                label: 1,
            },
        ]
    }

    #[test]
    fn verify_passes_for_a_consistent_run_and_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let input_path = dir.path().join("data.jsonl");
        let output_path = dir.path().join("attrs.jsonl");
        write_dataset(&input_path, None, &dataset_records()).unwrap();

        let mut manifest = sample_manifest();
        manifest.record_input("input", &input_path).unwrap();
        manifest.seed_digest = Some(seed_digest(42, Method::Svs, ["a", "b"]));
        let hash = manifest.content_hash();
        crate::dataset::write_attributions(&output_path, Some(&hash), &[]).unwrap();
        manifest
            .record_output("attributions", &output_path)
            .unwrap();

        let report = verify_manifest(&manifest);
        assert!(report.all_ok(), "{:?}", report.checks);
        // input + output + header + seeds
        assert_eq!(report.checks.len(), 4);

        // Tamper with the output: digest and header checks must fail.
        crate::dataset::write_attributions(&output_path, Some("0000"), &[]).unwrap();
        let tampered = verify_manifest(&manifest);
        assert!(!tampered.all_ok());
    }

    #[test]
    fn embedded_hashes_are_read_from_csv_and_json_documents() {
        let dir = tempfile::tempdir().unwrap();

        let csv = dir.path().join("curve.csv");
        std::fs::write(&csv, "# manifest: abc123\nalpha,accuracy\n0,1.0\n").unwrap();
        assert_eq!(
            embedded_manifest_hash(&csv).unwrap().as_deref(),
            Some("abc123")
        );

        let json = dir.path().join("report.json");
        std::fs::write(&json, "{\n  \"manifest\": \"def456\",\n  \"rows\": []\n}\n").unwrap();
        assert_eq!(
            embedded_manifest_hash(&json).unwrap().as_deref(),
            Some("def456")
        );

        let plain = dir.path().join("plain.csv");
        std::fs::write(&plain, "alpha,accuracy\n0,1.0\n").unwrap();
        assert_eq!(embedded_manifest_hash(&plain).unwrap(), None);
    }

    #[test]
    fn verify_spots_a_wrong_seed_digest() {
        let dir = tempfile::tempdir().unwrap();
        let input_path = dir.path().join("data.jsonl");
        write_dataset(&input_path, None, &dataset_records()).unwrap();
        let mut manifest = sample_manifest();
        manifest.record_input("input", &input_path).unwrap();
        manifest.seed_digest = Some("bogus".to_string());
        let report = verify_manifest(&manifest);
        assert!(!report.all_ok());
        let seeds = report.checks.iter().find(|c| c.name == "seeds").unwrap();
        assert!(!seeds.ok);
    }
}
