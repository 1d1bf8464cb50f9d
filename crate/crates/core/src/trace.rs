//! Per-step flight traces as comma-separated text.
//!
//! Columns: `env, t, px, py, pz, qw, qx, qy, qz, vx, vy, vz, wx, wy, wz`,
//! then `a0..a{n-1}` (raw action), `r_<term>` per reward term, `reward`,
//! `done` (0/1) and `outcome`. Floats are written in shortest round-trip form,
//! so parsing a written trace reproduces every value exactly.

use std::io::{Read, Write};

use crate::env::StepInfo;
use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::tasks::EpisodeOutcome;

const STATE_COLUMNS: [&str; 15] =
    ["env", "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub env: usize,
    pub t: f64,
    pub position: Vec3,
    pub attitude: Quat,
    pub velocity: Vec3,
    pub body_rate: Vec3,
    pub action: Vec<f64>,
    pub terms: Vec<(String, f64)>,
    pub reward: f64,
    pub done: bool,
    pub outcome: EpisodeOutcome,
}

impl TraceRecord {
    pub fn from_step(env: usize, action: &[f64], info: &StepInfo) -> Self {
        let s = &info.state;
        Self {
            env,
            t: info.t,
            position: s.position,
            attitude: s.attitude,
            velocity: s.velocity,
            body_rate: s.body_rate,
            action: action.to_vec(),
            terms: info.reward.terms.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            reward: info.reward.total,
            done: info.outcome.is_terminal(),
            outcome: info.outcome,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Writes `records`; all must share the first record's action width and term names.
pub fn write_trace<W: Write>(w: W, records: &[TraceRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let (n_act, names): (usize, Vec<String>) = match records.first() {
        Some(r) => (r.action.len(), r.terms.iter().map(|(n, _)| n.clone()).collect()),
        None => (0, Vec::new()),
    };
    let mut header: Vec<String> = STATE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..n_act).map(|i| format!("a{i}")));
    header.extend(names.iter().map(|n| format!("r_{n}")));
    header.extend(["reward", "done", "outcome"].map(String::from));
    out.write_record(&header).map_err(csv_err)?;

    for r in records {
        if r.action.len() != n_act || r.terms.len() != names.len() {
            return Err(Error::InvalidArgument("trace records differ in shape".into()));
        }
        let q = &r.attitude;
        let mut row: Vec<String> = vec![r.env.to_string()];
        let floats = [r.t]
            .into_iter()
            .chain(r.position.iter().copied())
            .chain([q.w, q.x, q.y, q.z])
            .chain(r.velocity.iter().copied())
            .chain(r.body_rate.iter().copied())
            .chain(r.action.iter().copied())
            .chain(r.terms.iter().map(|(_, v)| *v))
            .chain([r.reward]);
        row.extend(floats.map(|x| x.to_string()));
        row.push(if r.done { "1" } else { "0" }.to_string());
        row.push(r.outcome.name().to_string());
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header.len() < STATE_COLUMNS.len() + 3 || header[..STATE_COLUMNS.len()] != STATE_COLUMNS {
        return Err(Error::Parse("unrecognized trace header".into()));
    }
    let rest = &header[STATE_COLUMNS.len()..header.len() - 3];
    let n_act = rest.iter().take_while(|h| h.starts_with('a')).count();
    let names: Vec<String> = rest[n_act..]
        .iter()
        .map(|h| h.strip_prefix("r_").map(String::from).ok_or_else(|| Error::Parse(format!("bad column `{h}`"))))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{}`", &row[i])))
        };
        let v3 = |i: usize| -> Result<Vec3> { Ok(Vec3::new(f(i)?, f(i + 1)?, f(i + 2)?)) };
        let env = row[0].parse::<usize>().map_err(|_| Error::Parse(format!("bad env id `{}`", &row[0])))?;
        let base = STATE_COLUMNS.len();
        let action = (0..n_act).map(|i| f(base + i)).collect::<Result<Vec<_>>>()?;
        let terms = names
            .iter()
            .enumerate()
            .map(|(i, n)| Ok((n.clone(), f(base + n_act + i)?)))
            .collect::<Result<Vec<_>>>()?;
        let tail = header.len() - 3;
        let done = match &row[tail + 1] {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse(format!("bad done flag `{other}`"))),
        };
        let outcome = EpisodeOutcome::from_name(&row[tail + 2])
            .ok_or_else(|| Error::Parse(format!("bad outcome `{}`", &row[tail + 2])))?;
        records.push(TraceRecord {
            env,
            t: f(1)?,
            position: v3(2)?,
            attitude: Quat::new(f(5)?, f(6)?, f(7)?, f(8)?),
            velocity: v3(9)?,
            body_rate: v3(12)?,
            action,
            terms,
            reward: f(tail)?,
            done,
            outcome,
        });
    }
    Ok(records)
}

/// True when `t` increases strictly within each episode of each env.
pub fn time_monotone(records: &[TraceRecord]) -> bool {
    let mut last: std::collections::HashMap<usize, f64> = Default::default();
    for r in records {
        if let Some(prev) = last.get(&r.env) {
            if r.t <= *prev {
                return false;
            }
        }
        if r.done {
            last.remove(&r.env);
        } else {
            last.insert(r.env, r.t);
        }
    }
    true
}
