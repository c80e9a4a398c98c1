//! Priors served by another process over line-delimited JSON.
//!
//! The provider first writes a handshake line `{"V": int, "name": string}`.
//! Each request `{"rid": int, "context": [int]}` is answered by
//! `{"rid": int, "logprobs": [V floats]}` or `{"rid": int, "error": string}`.
//! Request ids increase monotonically per connection; a `null` log-probability
//! stands for `-inf`, which JSON cannot encode.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_context, log_sum_exp, PriorModel};
use crate::error::{Error, Result};
use crate::table::TokenId;

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

/// Log-sum-exp deviation below which a provider's vector is used verbatim.
const RENORMALIZE_ABOVE: f64 = 1e-9;

#[derive(Debug, Serialize, Deserialize)]
struct Handshake {
    #[serde(rename = "V")]
    vocab_size: usize,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Request {
    rid: i64,
    context: Vec<TokenId>,
}

#[derive(Debug, Deserialize)]
struct Response {
    rid: i64,
    #[serde(default)]
    logprobs: Option<Vec<Option<f64>>>,
    #[serde(default)]
    error: Option<String>,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    next_rid: i64,
    child: Option<Child>,
}

pub struct ExternalPrior {
    name: String,
    vocab_size: usize,
    timeout: Duration,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for ExternalPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPrior")
            .field("name", &self.name)
            .field("vocab_size", &self.vocab_size)
            .finish()
    }
}

fn spawn_line_reader<R: Read + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl ExternalPrior {
    /// Starts `program args...` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String], timeout_ms: u64) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("could not start prior provider {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(
            Box::new(stdin),
            spawn_line_reader(stdout),
            Some(child),
            timeout_ms,
        )
    }

    /// Connects to a provider listening on `addr` (`host:port`).
    pub fn connect(addr: &str, timeout_ms: u64) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Protocol(format!("could not connect to prior provider at {addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        let reader = stream.try_clone()?;
        Self::handshake(Box::new(stream), spawn_line_reader(reader), None, timeout_ms)
    }

    /// Uses an arbitrary stream pair, e.g. an in-process pipe.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout_ms: u64) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(Box::new(writer), spawn_line_reader(reader), None, timeout_ms)
    }

    fn handshake(
        writer: Box<dyn Write + Send>,
        lines: Receiver<io::Result<String>>,
        child: Option<Child>,
        timeout_ms: u64,
    ) -> Result<Self> {
        let timeout = Duration::from_millis(timeout_ms);
        let mut conn = Connection {
            writer,
            lines,
            next_rid: 0,
            child,
        };
        let line = conn.recv(timeout, timeout_ms)?;
        let hs: Handshake = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("bad handshake {line:?}: {e}")))?;
        if hs.vocab_size == 0 {
            return Err(Error::Protocol("provider announced V = 0".into()));
        }
        Ok(Self {
            name: hs.name,
            vocab_size: hs.vocab_size,
            timeout,
            conn: Mutex::new(conn),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl Connection {
    fn recv(&mut self, timeout: Duration, timeout_ms: u64) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Protocol(format!("read from provider failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(timeout_ms)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("provider closed the stream".into())),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl PriorModel for ExternalPrior {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn kind(&self) -> &str {
        "external"
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size)?;
        let timeout_ms = self.timeout.as_millis() as u64;
        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        let rid = conn.next_rid;
        conn.next_rid += 1;
        let mut line = serde_json::to_string(&Request {
            rid,
            context: context.to_vec(),
        })?;
        line.push('\n');
        conn.writer
            .write_all(line.as_bytes())
            .and_then(|_| conn.writer.flush())
            .map_err(|e| Error::Protocol(format!("write to provider failed: {e}")))?;
        loop {
            let line = conn.recv(self.timeout, timeout_ms)?;
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| Error::Protocol(format!("bad response {line:?}: {e}")))?;
            if resp.rid < rid {
                // Late answer to a request that already timed out.
                continue;
            }
            if resp.rid != rid {
                return Err(Error::Protocol(format!("expected rid {rid}, got {}", resp.rid)));
            }
            if let Some(err) = resp.error {
                return Err(Error::Protocol(format!("provider error for rid {rid}: {err}")));
            }
            let raw = resp
                .logprobs
                .ok_or_else(|| Error::Protocol(format!("response {rid} has neither logprobs nor error")))?;
            if raw.len() != self.vocab_size {
                return Err(Error::Protocol(format!(
                    "response {rid} has {} logprobs, expected {}",
                    raw.len(),
                    self.vocab_size
                )));
            }
            let mut lp: Vec<f64> = raw.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect();
            if lp.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Protocol(format!("response {rid} contains NaN or +inf")));
            }
            let z = log_sum_exp(&lp);
            if !z.is_finite() {
                return Err(Error::Protocol(format!("response {rid} has no probability mass")));
            }
            if z.abs() > RENORMALIZE_ABOVE {
                lp.iter_mut().for_each(|v| *v -= z);
            }
            return Ok(lp);
        }
    }
}

/// Serves `prior` over the wire protocol until `input` reaches EOF.
pub fn serve_prior<P, R, W>(prior: &P, name: &str, input: R, mut output: W) -> Result<()>
where
    P: PriorModel + ?Sized,
    R: BufRead,
    W: Write,
{
    serde_json::to_writer(
        &mut output,
        &Handshake {
            vocab_size: prior.vocab_size(),
            name: name.to_owned(),
        },
    )?;
    output.write_all(b"\n")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match prior.next_token_logprobs(&req.context) {
                Ok(lp) => serde_json::json!({ "rid": req.rid, "logprobs": lp }),
                Err(e) => serde_json::json!({ "rid": req.rid, "error": e.to_string() }),
            },
            Err(e) => {
                let rid = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("rid").and_then(|r| r.as_i64()))
                    .unwrap_or(-1);
                serde_json::json!({ "rid": rid, "error": format!("bad request: {e}") })
            }
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{train_ngram, uniform_logprobs, UniformPrior};
    use std::io::{BufReader, PipeReader, PipeWriter};

    /// Runs `serve_prior` on a thread and connects a client through OS pipes.
    fn in_process<P: PriorModel + 'static>(prior: P) -> ExternalPrior {
        let (req_r, req_w): (PipeReader, PipeWriter) = io::pipe().unwrap();
        let (resp_r, resp_w) = io::pipe().unwrap();
        thread::spawn(move || serve_prior(&prior, "test", BufReader::new(req_r), resp_w));
        ExternalPrior::from_streams(resp_r, req_w, 5_000).unwrap()
    }

    #[test]
    fn echoes_uniform() {
        let ext = in_process(UniformPrior::new(7).unwrap());
        assert_eq!(ext.vocab_size(), 7);
        assert_eq!(ext.name(), "test");
        for ctx in [&[][..], &[1, 2, 6][..]] {
            assert_eq!(ext.next_token_logprobs(ctx).unwrap(), uniform_logprobs(7));
        }
    }

    #[test]
    fn matches_local_ngram() {
        let p = train_ngram(&[vec![0, 1, 2, 0, 1].into()], 2, 0.5, 3).unwrap();
        let ext = in_process(p.clone());
        for ctx in [&[][..], &[0][..], &[2, 1][..]] {
            let a = ext.next_token_logprobs(ctx).unwrap();
            let b = p.next_token_logprobs(ctx).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_context_rejected_locally() {
        let ext = in_process(UniformPrior::new(3).unwrap());
        assert!(matches!(ext.next_token_logprobs(&[3]), Err(Error::TokenOutOfRange { .. })));
    }

    fn scripted(lines: &'static str) -> Result<ExternalPrior> {
        ExternalPrior::from_streams(lines.as_bytes(), io::sink(), 2_000)
    }

    #[test]
    fn protocol_violations() {
        assert!(scripted("garbage\n").is_err());
        let p = scripted("{\"V\":2,\"name\":\"x\"}\n{\"rid\":0,\"error\":\"boom\"}\n").unwrap();
        assert!(matches!(p.next_token_logprobs(&[]), Err(Error::Protocol(m)) if m.contains("boom")));
        let p = scripted("{\"V\":2,\"name\":\"x\"}\n{\"rid\":0,\"logprobs\":[0.0]}\n").unwrap();
        assert!(matches!(p.next_token_logprobs(&[]), Err(Error::Protocol(_))));
        let p = scripted("{\"V\":2,\"name\":\"x\"}\n{\"rid\":5,\"logprobs\":[0.0,0.0]}\n").unwrap();
        assert!(matches!(p.next_token_logprobs(&[]), Err(Error::Protocol(_))));
        let p = scripted("{\"V\":2,\"name\":\"x\"}\n").unwrap();
        assert!(matches!(p.next_token_logprobs(&[]), Err(Error::Protocol(_))));
    }

    #[test]
    fn renormalizes_and_accepts_null() {
        let p = scripted(
            "{\"V\":3,\"name\":\"x\"}\n{\"rid\":0,\"logprobs\":[0.0,0.0,null]}\n",
        )
        .unwrap();
        let lp = p.next_token_logprobs(&[]).unwrap();
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(lp[2], f64::NEG_INFINITY);
    }

    #[test]
    fn skips_stale_rids() {
        let p = scripted(
            "{\"V\":1,\"name\":\"x\"}\n{\"rid\":-3,\"logprobs\":[5.0]}\n{\"rid\":0,\"logprobs\":[0.0]}\n",
        )
        .unwrap();
        assert_eq!(p.next_token_logprobs(&[]).unwrap(), vec![0.0]);
    }

    #[test]
    fn times_out() {
        let (r, _w) = io::pipe().unwrap();
        let err = ExternalPrior::from_streams(r, io::sink(), 50).unwrap_err();
        assert!(matches!(err, Error::Timeout(50)));
    }
}
