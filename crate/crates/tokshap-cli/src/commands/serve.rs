//! `tokshap serve`: host a built-in classifier over stdio or TCP.
//!
//! Exists so the external-classifier transport can be exercised without
//! a second implementation: `--classifier external:"tokshap serve ..."`
//! round-trips every prediction through the wire protocol.

use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use tokshap::classifier::external::serve;
use tokshap::{Classifier, ClassifierDescriptor, ValueMode};

use crate::classifiers::parse_value_mode;

#[derive(Args)]
pub struct ServeArgs {
    /// Classifier descriptor JSON to host.
    #[arg(long)]
    descriptor: PathBuf,
    /// prob or raw.
    #[arg(long, default_value = "prob")]
    value_mode: String,
    /// TCP listen address (e.g. 127.0.0.1:9000); stdio when absent.
    #[arg(long)]
    listen: Option<String>,
}

pub fn run(args: ServeArgs) -> anyhow::Result<u8> {
    let mode: ValueMode = parse_value_mode(&args.value_mode)?;
    let descriptor = ClassifierDescriptor::from_file(&args.descriptor)
        .with_context(|| format!("loading descriptor {}", args.descriptor.display()))?;
    let classifier: Box<dyn Classifier<f64>> = descriptor.build(mode);

    match &args.listen {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve(classifier.as_ref(), stdin.lock(), stdout.lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let local = listener.local_addr().context("resolving bound address")?;
            println!("listening on {local}");
            std::io::stdout().flush().ok();
            for stream in listener.incoming() {
                let stream = stream.with_context(|| format!("accepting on {addr}"))?;
                let reader = BufReader::new(stream.try_clone().context("cloning connection")?);
                if let Err(err) = serve(classifier.as_ref(), reader, stream) {
                    log::warn!("connection ended with error: {err}");
                }
            }
        }
    }
    Ok(0)
}
