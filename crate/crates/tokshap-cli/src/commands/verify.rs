//! `tokshap verify`: re-check a past run against its manifest.

use std::path::PathBuf;

use clap::Args;
use tokshap::manifest::{verify_manifest, RunManifest};

#[derive(Args)]
pub struct VerifyArgs {
    /// Run manifest to check.
    #[arg(long)]
    manifest: PathBuf,
}

pub fn run(args: VerifyArgs) -> anyhow::Result<u8> {
    let manifest = RunManifest::load(&args.manifest)?;
    let report = verify_manifest(&manifest);
    for check in &report.checks {
        let status = if check.ok { "ok  " } else { "FAIL" };
        println!("{status} {:<24} {}", check.name, check.detail);
    }
    if report.all_ok() {
        println!("verified: {} checks passed", report.checks.len());
        Ok(0)
    } else {
        Ok(1)
    }
}
