//! External classifier adapter: line-delimited JSON over a child process's
//! stdin/stdout or a TCP socket.
//!
//! Frames, one per line, UTF-8:
//!
//! ```text
//! handshake: {"type":"hello"} → {"type":"meta","num_classes":C,"value_mode":"probability"}
//! request:   {"type":"predict","id":7,"inputs":[["tok",...],...]}
//! response:  {"type":"result","id":7,"values":[[v_0,...,v_{C-1}],...]}
//! ```
//!
//! Responses must arrive in request order. The adapter serializes requests
//! over a single channel; the engine's results do not depend on that
//! because classifiers are pure.
//!
//! [`serve`] is the other side of the same protocol, wrapping any
//! [`Classifier`]; the CLI exposes it so a built-in classifier can stand
//! in for a real external model in tests and demos.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::json;

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::types::{TokenSequence, ValueMode};

const DEFAULT_MAX_BATCH: usize = 64;

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ResponseFrame {
    Meta {
        num_classes: usize,
        value_mode: ValueMode,
    },
    Result {
        id: u64,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RequestFrame {
    Hello,
    Predict { id: u64, inputs: Vec<Vec<String>> },
}

struct Channel {
    writer: Box<dyn Write + Send>,
    reader: BufReader<Box<dyn Read + Send>>,
    child: Option<Child>,
    next_id: u64,
}

impl Channel {
    fn send(&mut self, frame: &serde_json::Value) -> Result<()> {
        let mut line = frame.to_string();
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|()| self.writer.flush())
            .map_err(|e| Error::Transport {
                detail: format!("writing frame: {e}"),
            })
    }

    fn receive(&mut self) -> Result<ResponseFrame> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| Error::Transport {
                detail: format!("reading frame: {e}"),
            })?;
        if n == 0 {
            return Err(Error::Transport {
                detail: "channel closed by peer".to_string(),
            });
        }
        serde_json::from_str(&line).map_err(|e| Error::Transport {
            detail: format!("malformed frame {:?}: {e}", line.trim_end()),
        })
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Adapter presenting a remote process or socket as a [`Classifier`].
pub struct ExternalClassifier {
    channel: Mutex<Channel>,
    descriptor: String,
    num_classes: usize,
    value_mode: ValueMode,
    max_batch: usize,
}

impl ExternalClassifier {
    /// Spawns `cmd` through the shell and performs the handshake.
    pub fn spawn(cmd: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport {
                detail: format!("spawning {cmd:?}: {e}"),
            })?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let channel = Channel {
            writer: Box::new(stdin),
            reader: BufReader::new(Box::new(stdout)),
            child: Some(child),
            next_id: 0,
        };
        Self::handshake(channel, format!("external:{cmd}"))
    }

    /// Connects to a TCP endpoint speaking the same frames.
    pub fn connect_tcp(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport {
            detail: format!("connecting to {addr}: {e}"),
        })?;
        let read_half = stream.try_clone().map_err(|e| Error::Transport {
            detail: format!("cloning socket: {e}"),
        })?;
        let channel = Channel {
            writer: Box::new(stream),
            reader: BufReader::new(Box::new(read_half)),
            child: None,
            next_id: 0,
        };
        Self::handshake(channel, format!("external:tcp:{addr}"))
    }

    fn handshake(mut channel: Channel, descriptor: String) -> Result<Self> {
        channel.send(&json!({"type": "hello"}))?;
        match channel.receive()? {
            ResponseFrame::Meta {
                num_classes,
                value_mode,
            } => {
                if num_classes == 0 {
                    return Err(Error::Protocol {
                        detail: "meta frame declares zero classes".to_string(),
                    });
                }
                Ok(ExternalClassifier {
                    channel: Mutex::new(channel),
                    descriptor,
                    num_classes,
                    value_mode,
                    max_batch: DEFAULT_MAX_BATCH,
                })
            }
            other => Err(Error::Protocol {
                detail: format!("expected meta frame, got {other:?}"),
            }),
        }
    }
}

impl<S: Scalar> Classifier<S> for ExternalClassifier {
    fn descriptor(&self) -> String {
        self.descriptor.clone()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn value_mode(&self) -> ValueMode {
        self.value_mode
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn predict_batch(&self, inputs: &[TokenSequence]) -> Result<Vec<Vec<S>>> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut channel = self.channel.lock().expect("channel lock");
        for chunk in inputs.chunks(self.max_batch.max(1)) {
            let id = channel.next_id;
            channel.next_id += 1;
            let token_lists: Vec<&Vec<String>> = chunk.iter().map(|x| &x.tokens).collect();
            channel.send(&json!({"type": "predict", "id": id, "inputs": token_lists}))?;
            match channel.receive()? {
                ResponseFrame::Result {
                    id: reply_id,
                    values,
                } => {
                    if reply_id != id {
                        return Err(Error::Protocol {
                            detail: format!("response id {reply_id} for request {id}"),
                        });
                    }
                    if values.len() != chunk.len() {
                        return Err(Error::Protocol {
                            detail: format!(
                                "{} value vectors for {} inputs",
                                values.len(),
                                chunk.len()
                            ),
                        });
                    }
                    for v in values {
                        if v.len() != self.num_classes {
                            return Err(Error::Protocol {
                                detail: format!(
                                    "value vector of length {} for {} classes",
                                    v.len(),
                                    self.num_classes
                                ),
                            });
                        }
                        out.push(v.into_iter().map(S::from_f64).collect());
                    }
                }
                other => Err(Error::Protocol {
                    detail: format!("expected result frame, got {other:?}"),
                })?,
            }
        }
        Ok(out)
    }
}

/// Serves `classifier` over the wire protocol until the input closes.
pub fn serve<S: Scalar>(
    classifier: &dyn Classifier<S>,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::Transport {
            detail: format!("reading request: {e}"),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: RequestFrame = serde_json::from_str(&line).map_err(|e| Error::Protocol {
            detail: format!("malformed request {:?}: {e}", line.trim_end()),
        })?;
        let reply = match frame {
            RequestFrame::Hello => json!({
                "type": "meta",
                "num_classes": classifier.num_classes(),
                "value_mode": classifier.value_mode(),
            }),
            RequestFrame::Predict { id, inputs } => {
                let sequences = inputs
                    .into_iter()
                    .enumerate()
                    .map(|(i, tokens)| TokenSequence::new(format!("batch-{i}"), tokens))
                    .collect::<Result<Vec<_>>>()?;
                let values = classifier.predict_batch(&sequences)?;
                let values: Vec<Vec<f64>> = values
                    .into_iter()
                    .map(|row| row.into_iter().map(Scalar::as_f64).collect())
                    .collect();
                json!({"type": "result", "id": id, "values": values})
            }
        };
        let mut text = reply.to_string();
        text.push('\n');
        output
            .write_all(text.as_bytes())
            .map_err(|e| Error::Transport {
                detail: format!("writing response: {e}"),
            })?;
        output.flush().map_err(|e| Error::Transport {
            detail: format!("flushing response: {e}"),
        })?;
    }
    Ok(())
}
