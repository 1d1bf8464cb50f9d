//! Length-prefixed binary protocol exposing a [`VecEnv`] over a local TCP socket.
//!
//! Every frame is `u32 body_len` followed by `body_len` bytes; the body starts
//! with a `u8` message type. All integers and floats are little-endian; floats
//! on the wire are `f32`.
//!
//! | type | name       | payload |
//! |------|------------|---------|
//! | 0x01 | HELLO      | `u32 version` |
//! | 0x02 | HELLO_ACK  | `u32 version, u64 config_hash, u32 n_envs, u32 obs_dim, u32 act_dim, u32 n_terms, n_terms × (u16 len, utf8 name)` |
//! | 0x03 | RESET      | `u32 count, count × u32 id` (count 0 resets every env) |
//! | 0x04 | OBS        | `u32 rows, u32 obs_dim, rows·obs_dim × f32` |
//! | 0x05 | STEP       | `n_envs·act_dim × f32` actions, row-major |
//! | 0x06 | STEP_REPLY | `u32 n_envs, u32 obs_dim, u32 n_terms`, obs `f32[n·obs_dim]`, reward `f32[n]`, done `u8[n]`, then per env `u8 outcome, u32 episode_step, f32[n_terms]` |
//! | 0x07 | CLOSE      | empty; the server ends the session |
//! | 0x7F | ERROR      | `u32 code, u32 len, utf8 message` |
//!
//! A session must open with HELLO. Errors in a well-framed message are
//! answered with ERROR and the session continues; an oversized frame is
//! answered with ERROR and the session is closed.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use crate::config::Config;
use crate::env::{StepResult, VecEnv};
use crate::error::{Error, Result};
use crate::tasks::{reward_term_names, EpisodeOutcome};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted frame body, bytes.
pub const MAX_FRAME: usize = 64 << 20;

pub const MSG_HELLO: u8 = 0x01;
pub const MSG_HELLO_ACK: u8 = 0x02;
pub const MSG_RESET: u8 = 0x03;
pub const MSG_OBS: u8 = 0x04;
pub const MSG_STEP: u8 = 0x05;
pub const MSG_STEP_REPLY: u8 = 0x06;
pub const MSG_CLOSE: u8 = 0x07;
pub const MSG_ERROR: u8 = 0x7F;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ErrorCode {
    Malformed = 1,
    Version = 2,
    Shape = 3,
    State = 4,
    Oversize = 5,
    UnknownType = 6,
    InvalidIds = 7,
}

/// Reads one frame body; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_le_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {n} bytes exceeds limit {MAX_FRAME}")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> Result<()> {
    if body.len() > MAX_FRAME {
        return Err(Error::Protocol("frame too large".into()));
    }
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

/// Cursor over a frame body.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Protocol("frame truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Protocol("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{} trailing bytes", self.remaining())))
        }
    }
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(b: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        b.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn error_frame(code: ErrorCode, msg: &str) -> Vec<u8> {
    let mut b = vec![MSG_ERROR];
    put_u32(&mut b, code as u32);
    put_u32(&mut b, msg.len() as u32);
    b.extend_from_slice(msg.as_bytes());
    b
}

fn hello_ack(env: &VecEnv) -> Vec<u8> {
    let cfg = env.config();
    let mut b = vec![MSG_HELLO_ACK];
    put_u32(&mut b, PROTOCOL_VERSION);
    b.extend_from_slice(&cfg.hash().to_le_bytes());
    put_u32(&mut b, env.n_envs() as u32);
    put_u32(&mut b, env.obs_dim() as u32);
    put_u32(&mut b, env.act_dim() as u32);
    let names = reward_term_names(cfg.sim.task);
    put_u32(&mut b, names.len() as u32);
    for n in names {
        b.extend_from_slice(&(n.len() as u16).to_le_bytes());
        b.extend_from_slice(n.as_bytes());
    }
    b
}

fn obs_frame(rows: usize, obs_dim: usize, obs: &[f64]) -> Vec<u8> {
    let mut b = Vec::with_capacity(9 + obs.len() * 4);
    b.push(MSG_OBS);
    put_u32(&mut b, rows as u32);
    put_u32(&mut b, obs_dim as u32);
    put_f32s(&mut b, obs.iter().copied());
    b
}

/// Encodes a step result as a STEP_REPLY body.
pub fn step_reply(r: &StepResult, n_terms: usize) -> Vec<u8> {
    let n = r.reward.len();
    let mut b = Vec::with_capacity(13 + 4 * r.obs.len() + n * (10 + 4 * n_terms));
    b.push(MSG_STEP_REPLY);
    put_u32(&mut b, n as u32);
    put_u32(&mut b, r.obs_dim as u32);
    put_u32(&mut b, n_terms as u32);
    put_f32s(&mut b, r.obs.iter().copied());
    put_f32s(&mut b, r.reward.iter().copied());
    b.extend(r.done.iter().map(|d| *d as u8));
    for info in &r.info {
        b.push(info.outcome.code());
        put_u32(&mut b, info.episode_step as u32);
        put_f32s(&mut b, (0..n_terms).map(|i| info.reward.terms.get(i).map_or(0.0, |t| t.1)));
    }
    b
}

/// Outcome of handling one request.
enum Reply {
    Send(Vec<u8>),
    Close,
}

struct Session<'a> {
    cfg: &'a Config,
    env: Option<VecEnv>,
}

impl Session<'_> {
    fn handle(&mut self, body: &[u8]) -> Reply {
        let mut c = Cursor::new(body);
        let kind = match c.u8() {
            Ok(k) => k,
            Err(_) => return Reply::Send(error_frame(ErrorCode::Malformed, "empty frame")),
        };
        let result = match kind {
            MSG_HELLO => self.hello(&mut c),
            MSG_RESET => self.reset(&mut c),
            MSG_STEP => self.step(&mut c),
            MSG_CLOSE => return Reply::Close,
            other => Err((ErrorCode::UnknownType, format!("unknown message type {other:#04x}"))),
        };
        match result {
            Ok(frame) => Reply::Send(frame),
            Err((code, msg)) => Reply::Send(error_frame(code, &msg)),
        }
    }

    fn hello(&mut self, c: &mut Cursor) -> std::result::Result<Vec<u8>, (ErrorCode, String)> {
        let version = c.u32().map_err(|e| (ErrorCode::Malformed, e.to_string()))?;
        c.finish().map_err(|e| (ErrorCode::Malformed, e.to_string()))?;
        if version != PROTOCOL_VERSION {
            return Err((ErrorCode::Version, format!("client version {version}, server {PROTOCOL_VERSION}")));
        }
        let env = VecEnv::new(self.cfg.clone()).map_err(|e| (ErrorCode::State, e.to_string()))?;
        let ack = hello_ack(&env);
        self.env = Some(env);
        Ok(ack)
    }

    fn env(&mut self) -> std::result::Result<&mut VecEnv, (ErrorCode, String)> {
        self.env.as_mut().ok_or((ErrorCode::State, "HELLO required first".to_string()))
    }

    fn reset(&mut self, c: &mut Cursor) -> std::result::Result<Vec<u8>, (ErrorCode, String)> {
        let malformed = |e: Error| (ErrorCode::Malformed, e.to_string());
        let count = c.u32().map_err(malformed)? as usize;
        if count.checked_mul(4) != Some(c.remaining()) {
            return Err((ErrorCode::Malformed, format!("RESET declares {count} ids, payload has {} bytes", c.remaining())));
        }
        let ids = (0..count).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>().map_err(malformed)?;
        let env = self.env()?;
        let ids: Vec<usize> = if ids.is_empty() { (0..env.n_envs()).collect() } else { ids };
        let obs = env.reset(&ids).map_err(|e| (ErrorCode::InvalidIds, e.to_string()))?;
        Ok(obs_frame(ids.len(), env.obs_dim(), &obs))
    }

    fn step(&mut self, c: &mut Cursor) -> std::result::Result<Vec<u8>, (ErrorCode, String)> {
        let env = self.env()?;
        let expected = env.n_envs() * env.act_dim();
        if c.remaining() != expected * 4 {
            return Err((
                ErrorCode::Shape,
                format!("STEP needs {} bytes of actions, got {}", expected * 4, c.remaining()),
            ));
        }
        let actions: Vec<f64> = c
            .f32s(expected)
            .map_err(|e| (ErrorCode::Malformed, e.to_string()))?
            .into_iter()
            .map(f64::from)
            .collect();
        let r = env.step(&actions).map_err(|e| (ErrorCode::Shape, e.to_string()))?;
        let n_terms = reward_term_names(env.config().sim.task).len();
        Ok(step_reply(&r, n_terms))
    }
}

/// Runs one client session to completion.
pub fn handle_session(cfg: &Config, stream: TcpStream) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut session = Session { cfg, env: None };
    loop {
        let body = match read_frame(&mut reader) {
            Ok(Some(b)) => b,
            Ok(None) => return Ok(()),
            Err(Error::Protocol(msg)) => {
                let _ = write_frame(&mut writer, &error_frame(ErrorCode::Oversize, &msg));
                return Ok(());
            }
            // Truncated frame or broken connection.
            Err(_) => return Ok(()),
        };
        match session.handle(&body) {
            Reply::Send(frame) => write_frame(&mut writer, &frame)?,
            Reply::Close => return Ok(()),
        }
    }
}

/// Accepts clients one at a time on `listener`; stops after `max_sessions`
/// sessions when given. Session I/O errors end that session only.
pub fn serve(cfg: &Config, listener: &TcpListener, max_sessions: Option<usize>) -> Result<()> {
    cfg.validate()?;
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(_) => continue,
        };
        let _ = handle_session(cfg, stream);
        served += 1;
        if max_sessions.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

/// Parsed HELLO_ACK.
#[derive(Debug, Clone, PartialEq)]
pub struct HelloAck {
    pub version: u32,
    pub config_hash: u64,
    pub n_envs: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub term_names: Vec<String>,
}

/// Parsed STEP_REPLY.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReply {
    pub obs: Vec<f32>,
    pub reward: Vec<f32>,
    pub done: Vec<bool>,
    pub outcome: Vec<EpisodeOutcome>,
    pub episode_step: Vec<u32>,
    /// Row-major `n_envs × n_terms`.
    pub terms: Vec<f32>,
}

fn outcome_from_code(code: u8) -> Result<EpisodeOutcome> {
    [
        EpisodeOutcome::Running,
        EpisodeOutcome::Crashed,
        EpisodeOutcome::Hit,
        EpisodeOutcome::TimedOut,
        EpisodeOutcome::GoalReached,
    ]
    .into_iter()
    .find(|o| o.code() == code)
    .ok_or_else(|| Error::Protocol(format!("unknown outcome code {code}")))
}

fn check_error(c: &mut Cursor, kind: u8) -> Result<()> {
    if kind == MSG_ERROR {
        let code = c.u32()?;
        let len = c.u32()? as usize;
        let msg = String::from_utf8_lossy(c.take(len)?).into_owned();
        return Err(Error::Protocol(format!("server error {code}: {msg}")));
    }
    Ok(())
}

/// Blocking client, used by tests and tooling.
pub struct BridgeClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl BridgeClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }

    /// Sends a raw frame body and returns the raw reply body.
    pub fn request_raw(&mut self, body: &[u8]) -> Result<Vec<u8>> {
        write_frame(&mut self.writer, body)?;
        read_frame(&mut self.reader)?.ok_or_else(|| Error::Protocol("connection closed".into()))
    }

    pub fn hello(&mut self) -> Result<HelloAck> {
        let mut body = vec![MSG_HELLO];
        put_u32(&mut body, PROTOCOL_VERSION);
        let reply = self.request_raw(&body)?;
        let mut c = Cursor::new(&reply);
        let kind = c.u8()?;
        check_error(&mut c, kind)?;
        if kind != MSG_HELLO_ACK {
            return Err(Error::Protocol(format!("expected HELLO_ACK, got {kind:#04x}")));
        }
        let version = c.u32()?;
        let config_hash = c.u64()?;
        let (n_envs, obs_dim, act_dim) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
        let n_terms = c.u32()? as usize;
        let mut term_names = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let len = c.u16()? as usize;
            term_names.push(String::from_utf8_lossy(c.take(len)?).into_owned());
        }
        c.finish()?;
        Ok(HelloAck { version, config_hash, n_envs, obs_dim, act_dim, term_names })
    }

    /// Resets `ids` (all when empty); returns the observation rows.
    pub fn reset(&mut self, ids: &[u32]) -> Result<Vec<f32>> {
        let mut body = vec![MSG_RESET];
        put_u32(&mut body, ids.len() as u32);
        for id in ids {
            put_u32(&mut body, *id);
        }
        let reply = self.request_raw(&body)?;
        let mut c = Cursor::new(&reply);
        let kind = c.u8()?;
        check_error(&mut c, kind)?;
        if kind != MSG_OBS {
            return Err(Error::Protocol(format!("expected OBS, got {kind:#04x}")));
        }
        let rows = c.u32()? as usize;
        let dim = c.u32()? as usize;
        let obs = c.f32s(rows * dim)?;
        c.finish()?;
        Ok(obs)
    }

    pub fn step(&mut self, actions: &[f32]) -> Result<StepReply> {
        let mut body = Vec::with_capacity(1 + actions.len() * 4);
        body.push(MSG_STEP);
        for a in actions {
            body.extend_from_slice(&a.to_le_bytes());
        }
        let reply = self.request_raw(&body)?;
        let mut c = Cursor::new(&reply);
        let kind = c.u8()?;
        check_error(&mut c, kind)?;
        if kind != MSG_STEP_REPLY {
            return Err(Error::Protocol(format!("expected STEP_REPLY, got {kind:#04x}")));
        }
        let n = c.u32()? as usize;
        let dim = c.u32()? as usize;
        let n_terms = c.u32()? as usize;
        let obs = c.f32s(n * dim)?;
        let reward = c.f32s(n)?;
        let done = c.take(n)?.iter().map(|b| *b != 0).collect();
        let mut outcome = Vec::with_capacity(n);
        let mut episode_step = Vec::with_capacity(n);
        let mut terms = Vec::with_capacity(n * n_terms);
        for _ in 0..n {
            outcome.push(outcome_from_code(c.u8()?)?);
            episode_step.push(c.u32()?);
            terms.extend(c.f32s(n_terms)?);
        }
        c.finish()?;
        Ok(StepReply { obs, reward, done, outcome, episode_step, terms })
    }

    pub fn close(mut self) -> Result<()> {
        write_frame(&mut self.writer, &[MSG_CLOSE])
    }
}
