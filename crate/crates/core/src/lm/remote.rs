//! Newline-delimited JSON protocol for externally hosted models.
//!
//! Request: `{"history":[ids...]}`. Response: `{"logits":[...]}` or
//! `{"probs":[...]}`, or `{"error":"message"}`.

use super::{LanguageModel, LmDistribution, LmError};
use crate::tokenizer::TokenId;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Serialize, Deserialize)]
struct Request {
    history: Vec<TokenId>,
}

#[derive(Serialize, Deserialize, Default)]
struct Response {
    #[serde(skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

struct Conn {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Client side. One request is in flight at a time.
pub struct RemoteLm {
    vocab_size: usize,
    conn: Mutex<Conn>,
}

impl RemoteLm {
    pub fn from_streams(
        vocab_size: usize,
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Self {
        RemoteLm {
            vocab_size,
            conn: Mutex::new(Conn {
                reader: Box::new(BufReader::new(reader)),
                writer: Box::new(writer),
            }),
        }
    }

    pub fn connect(addr: impl ToSocketAddrs, vocab_size: usize, timeout: Duration) -> Result<Self, LmError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| LmError::Transport(e.to_string()))?
            .next()
            .ok_or_else(|| LmError::Transport("no address".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| LmError::Transport(e.to_string()))?;
        stream
            .set_read_timeout(Some(timeout))
            .and_then(|_| stream.set_write_timeout(Some(timeout)))
            .map_err(|e| LmError::Transport(e.to_string()))?;
        let reader = stream.try_clone().map_err(|e| LmError::Transport(e.to_string()))?;
        Ok(Self::from_streams(vocab_size, reader, stream))
    }
}

impl LanguageModel for RemoteLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, history: &[TokenId]) -> Result<LmDistribution, LmError> {
        let mut conn = self.conn.lock().map_err(|_| LmError::Transport("connection poisoned".into()))?;
        let mut line = serde_json::to_string(&Request { history: history.to_vec() }).expect("ids serialize");
        line.push('\n');
        conn.writer
            .write_all(line.as_bytes())
            .and_then(|_| conn.writer.flush())
            .map_err(|e| LmError::Transport(e.to_string()))?;
        let mut reply = String::new();
        let n = conn.reader.read_line(&mut reply).map_err(|e| LmError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(LmError::Transport("connection closed".into()));
        }
        let resp: Response = serde_json::from_str(reply.trim_end()).map_err(|e| LmError::Protocol(e.to_string()))?;
        let dist = match resp {
            Response { error: Some(msg), .. } => return Err(LmError::Remote(msg)),
            Response { logits: Some(l), probs: None, .. } => LmDistribution::from_logits(l, history.len())?,
            Response { probs: Some(p), logits: None, .. } => LmDistribution::from_probs(p, history.len())?,
            _ => return Err(LmError::Protocol("expected exactly one of logits/probs".into())),
        };
        if dist.len() != self.vocab_size {
            return Err(LmError::Protocol(format!(
                "vector length {} != vocab size {}",
                dist.len(),
                self.vocab_size
            )));
        }
        Ok(dist)
    }
}

/// Answers requests on one connection until the peer closes it.
pub fn serve_connection(
    model: &dyn LanguageModel,
    reader: impl Read,
    mut writer: impl Write,
) -> std::io::Result<()> {
    let reader = BufReader::new(reader);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Err(e) => Response { error: Some(format!("bad request: {e}")), ..Default::default() },
            Ok(req) => match model.next_distribution(&req.history) {
                Ok(d) => Response { probs: Some(d.probs), ..Default::default() },
                Err(e) => Response { error: Some(e.to_string()), ..Default::default() },
            },
        };
        let mut out = serde_json::to_string(&resp).expect("response serializes");
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves `model` on an ephemeral localhost port, one thread per connection.
pub fn spawn_tcp_server(model: Arc<dyn LanguageModel>) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handle = std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let model = Arc::clone(&model);
            std::thread::spawn(move || {
                if let Ok(reader) = stream.try_clone() {
                    let _ = serve_connection(&*model, reader, stream);
                }
            });
        }
    });
    Ok((addr, handle))
}
