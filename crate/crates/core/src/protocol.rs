//! Challenge-response protocol over TCP.
//!
//! Every frame is a big-endian `u32` length followed by that many bytes: one message
//! type byte and the body.
//!
//! | type | message           | body                                        |
//! |------|-------------------|---------------------------------------------|
//! | 0x01 | challenge-request | program digest (32)                         |
//! | 0x02 | challenge         | nonce (16), digest (32), issued-at (u64 BE) |
//! | 0x03 | report            | canonical report bytes                      |
//! | 0x04 | verdict           | verdict JSON                                |
//! | 0x05 | error             | `{"error": code, "message": text}`          |

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::json;
use thiserror::Error;

use crate::prepared::PreparedProgram;
use crate::prover::{AttestationReport, Keys, Nonce, ReportDecodeError};
use crate::verifier::{verify, Verdict, VerifyOptions};

pub const MSG_CHALLENGE_REQUEST: u8 = 0x01;
pub const MSG_CHALLENGE: u8 = 0x02;
pub const MSG_REPORT: u8 = 0x03;
pub const MSG_VERDICT: u8 = 0x04;
pub const MSG_ERROR: u8 = 0x05;
/// Largest accepted frame (type byte plus body).
pub const MAX_FRAME: u32 = 64 << 20;
pub const ADDR_ENV: &str = "CFA_VERIFIER_ADDR";

pub type Digest = [u8; 32];

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("empty frame")]
    Empty,
}

pub fn write_frame<W: Write>(w: &mut W, kind: u8, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len() + 1).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&[kind])?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the length prefix.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(u8, Vec<u8>)>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len == 0 {
        return Err(FrameError::Empty);
    }
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    let kind = buf.remove(0);
    Ok(Some((kind, buf)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Challenge {
    pub nonce: Nonce,
    pub digest: Digest,
    pub issued_at: u64,
}

impl Challenge {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.issued_at.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Challenge> {
        if b.len() != 56 {
            return None;
        }
        Some(Challenge {
            nonce: b[..16].try_into().ok()?,
            digest: b[16..48].try_into().ok()?,
            issued_at: u64::from_be_bytes(b[48..].try_into().ok()?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("no program registered with digest {0}")]
    UnknownProgram(String),
    #[error("no outstanding challenge for this nonce")]
    StaleNonce,
    #[error("a report was already submitted for this nonce")]
    NonceConsumed,
    #[error("malformed report: {0}")]
    Malformed(#[from] ReportDecodeError),
    #[error("malformed request: {0}")]
    BadRequest(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownProgram(_) => "unknown-program",
            ServiceError::StaleNonce => "stale-nonce",
            ServiceError::NonceConsumed => "nonce-consumed",
            ServiceError::Malformed(_) => "malformed-report",
            ServiceError::BadRequest(_) => "bad-request",
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.code(), "message": self.to_string()}).to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Issued,
    Reported,
    Decided,
}

struct Session {
    digest: Digest,
    state: SessionState,
}

struct Registered {
    program: PreparedProgram,
    options: VerifyOptions,
}

/// Verifier side: registered programs, issued nonces and the session log.
pub struct VerifierService {
    keys: Keys,
    programs: HashMap<Digest, Arc<Registered>>,
    sessions: Mutex<HashMap<Nonce, Session>>,
    rng: Mutex<ChaCha20Rng>,
    log: Option<Mutex<BufWriter<File>>>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl VerifierService {
    /// Nonces are drawn from a ChaCha20 stream seeded with `seed`.
    pub fn new(keys: Keys, seed: u64) -> VerifierService {
        VerifierService {
            keys,
            programs: HashMap::new(),
            sessions: Mutex::new(HashMap::new()),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            log: None,
        }
    }

    /// Appends one JSON object per session event to `path`.
    pub fn with_log(mut self, path: &Path) -> io::Result<VerifierService> {
        let f = File::options().create(true).append(true).open(path)?;
        self.log = Some(Mutex::new(BufWriter::new(f)));
        Ok(self)
    }

    pub fn register(&mut self, program: PreparedProgram, options: VerifyOptions) -> Digest {
        let digest = program.digest();
        self.programs.insert(digest, Arc::new(Registered { program, options }));
        digest
    }

    fn record(&self, entry: serde_json::Value) {
        if let Some(log) = &self.log {
            let mut w = log.lock().expect("log lock");
            let _ = writeln!(w, "{entry}");
            let _ = w.flush();
        }
    }

    pub fn issue(&self, digest: &Digest) -> Result<Challenge, ServiceError> {
        if !self.programs.contains_key(digest) {
            return Err(ServiceError::UnknownProgram(hex::encode(digest)));
        }
        let mut nonce = [0u8; 16];
        self.rng.lock().expect("rng lock").fill_bytes(&mut nonce);
        let challenge = Challenge { nonce, digest: *digest, issued_at: now() };
        self.sessions.lock().expect("session lock").insert(nonce, Session { digest: *digest, state: SessionState::Issued });
        self.record(json!({
            "event": "issued", "time": challenge.issued_at,
            "nonce": hex::encode(nonce), "program": hex::encode(digest),
        }));
        Ok(challenge)
    }

    pub fn session_state(&self, nonce: &Nonce) -> Option<SessionState> {
        self.sessions.lock().expect("session lock").get(nonce).map(|s| s.state)
    }

    /// Verifies a report against the session its nonce belongs to. Each nonce is
    /// accepted for at most one submission.
    pub fn submit(&self, report_bytes: &[u8]) -> Result<Verdict, ServiceError> {
        let report = AttestationReport::from_bytes(report_bytes)?;
        let digest = {
            let mut sessions = self.sessions.lock().expect("session lock");
            let session = sessions.get_mut(&report.nonce).ok_or(ServiceError::StaleNonce)?;
            if session.state != SessionState::Issued {
                return Err(ServiceError::NonceConsumed);
            }
            session.state = SessionState::Reported;
            session.digest
        };
        let reg = Arc::clone(&self.programs[&digest]);
        let ctx = reg.program.verifier(&self.keys, report.nonce, reg.options.clone());
        let verdict = verify(&report, &ctx);
        if let Some(s) = self.sessions.lock().expect("session lock").get_mut(&report.nonce) {
            s.state = SessionState::Decided;
        }
        self.record(json!({
            "event": "decided", "time": now(), "nonce": hex::encode(report.nonce),
            "program": hex::encode(digest), "accepted": verdict.accepted, "reason": verdict.reason,
            "nodes_expanded": verdict.nodes_expanded,
        }));
        Ok(verdict)
    }

    /// Answers one request frame.
    pub fn handle(&self, kind: u8, body: &[u8]) -> (u8, Vec<u8>) {
        let reply = match kind {
            MSG_CHALLENGE_REQUEST => match <Digest>::try_from(body) {
                Ok(d) => self.issue(&d).map(|c| (MSG_CHALLENGE, c.to_bytes())),
                Err(_) => Err(ServiceError::BadRequest("digest must be 32 bytes".into())),
            },
            MSG_REPORT => self.submit(body).map(|v| (MSG_VERDICT, v.to_json().into_bytes())),
            other => Err(ServiceError::BadRequest(format!("unexpected message type {other:#04x}"))),
        };
        reply.unwrap_or_else(|e| (MSG_ERROR, e.to_json().into_bytes()))
    }
}

fn serve_connection(service: &VerifierService, stream: TcpStream) -> Result<(), FrameError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some((kind, body)) = read_frame(&mut reader)? {
        let (rk, rb) = service.handle(kind, &body);
        write_frame(&mut writer, rk, &rb)?;
    }
    Ok(())
}

/// Accepts connections until the listener fails, one thread per connection.
pub fn serve(listener: TcpListener, service: Arc<VerifierService>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let service = Arc::clone(&service);
        thread::spawn(move || {
            let _ = serve_connection(&service, stream);
        });
    }
    Ok(())
}

/// Binds `addr` and serves on a background thread.
pub fn spawn_server(addr: impl ToSocketAddrs, service: Arc<VerifierService>) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((local, thread::spawn(move || serve(listener, service))))
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("server closed the connection")]
    Closed,
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Error code reported by the server, if any.
    pub fn server_code(&self) -> Option<&str> {
        match self {
            ClientError::Server { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Verdict as received on the wire, with its exact JSON text.
#[derive(Clone, Debug)]
pub struct RemoteVerdict {
    pub verdict: Verdict,
    pub json: String,
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Client> {
        let stream = TcpStream::connect(addr)?;
        Ok(Client { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }

    fn call(&mut self, kind: u8, body: &[u8], expect: u8) -> Result<Vec<u8>, ClientError> {
        write_frame(&mut self.writer, kind, body)?;
        let (k, b) = read_frame(&mut self.reader)?.ok_or(ClientError::Closed)?;
        if k == MSG_ERROR {
            let v: serde_json::Value = serde_json::from_slice(&b).map_err(|e| ClientError::Protocol(e.to_string()))?;
            return Err(ClientError::Server {
                code: v["error"].as_str().unwrap_or("").to_string(),
                message: v["message"].as_str().unwrap_or("").to_string(),
            });
        }
        if k != expect {
            return Err(ClientError::Protocol(format!("message type {k:#04x}")));
        }
        Ok(b)
    }

    pub fn challenge(&mut self, digest: &Digest) -> Result<Challenge, ClientError> {
        let b = self.call(MSG_CHALLENGE_REQUEST, digest, MSG_CHALLENGE)?;
        Challenge::from_bytes(&b).ok_or_else(|| ClientError::Protocol("challenge body".into()))
    }

    pub fn submit_bytes(&mut self, report: &[u8]) -> Result<RemoteVerdict, ClientError> {
        let b = self.call(MSG_REPORT, report, MSG_VERDICT)?;
        let json = String::from_utf8(b).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let verdict = serde_json::from_str(&json).map_err(|e| ClientError::Protocol(e.to_string()))?;
        Ok(RemoteVerdict { verdict, json })
    }

    pub fn submit(&mut self, report: &AttestationReport) -> Result<RemoteVerdict, ClientError> {
        self.submit_bytes(&report.to_bytes())
    }
}
