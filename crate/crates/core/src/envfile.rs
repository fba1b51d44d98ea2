//! Text fixtures for environments, so seeded instances can be reused across
//! runs and compared bit-for-bit.
//!
//! The format is line-oriented. Values are written with 17 significant
//! digits, which round-trips every f64 exactly. An MMDP file:
//!
//! ```text
//! cprl-env mmdp 1
//! states 2
//! agents 2
//! actions 3
//! gamma 9.0000000000000002e-1
//! meta-k1 1
//! meta-k2 2
//! meta-rank-preserved 1
//! meta-inflated 0 0
//! reward 0
//! <3^2 entries, whitespace separated, any line breaks>
//! ...
//! transition 0 0
//! <entries>
//! ...
//! end
//! ```
//!
//! A tensor game file replaces the header with `cprl-env game 1`, has
//! `agents`, `actions`, `rank`, one `payoff` block, `factor <agent>` blocks
//! (row-major |U| x rank), and `end`. The `meta-*` lines are optional.
//!
//! Parsing is defensive: every malformed input returns `Error::Parse` with a
//! line number, and sizes are capped so hostile headers cannot trigger huge
//! allocations.

use crate::env::{Mmdp, MmdpMeta, TensorGame};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};
use nalgebra::DMatrix;
use std::fmt::Write as _;

const MAX_STATES: usize = 4096;
const MAX_AGENTS: usize = 16;
const MAX_ACTIONS: usize = 4096;
const MAX_TOTAL_ENTRIES: u128 = 100_000_000;

/// A parsed environment fixture.
#[derive(Debug, Clone)]
pub enum EnvFile {
    Mmdp(Mmdp),
    Game(TensorGame),
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_block(out: &mut String, data: &[f64]) {
    for chunk in data.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Serializes an MMDP, including its generation metadata.
pub fn write_mmdp(m: &Mmdp) -> String {
    let mut out = String::new();
    out.push_str("cprl-env mmdp 1\n");
    let _ = writeln!(out, "states {}", m.num_states());
    let _ = writeln!(out, "agents {}", m.num_agents());
    let _ = writeln!(out, "actions {}", m.actions_per_agent());
    let _ = writeln!(out, "gamma {}", fmt_f64(m.gamma()));
    let meta = m.meta();
    if let Some(k1) = meta.k1 {
        let _ = writeln!(out, "meta-k1 {k1}");
    }
    if let Some(k2) = meta.k2 {
        let _ = writeln!(out, "meta-k2 {k2}");
    }
    let _ = writeln!(out, "meta-rank-preserved {}", u8::from(meta.rank_preserved));
    let flags: Vec<String> = meta
        .transition_rank_inflated
        .iter()
        .map(|&b| u8::from(b).to_string())
        .collect();
    let _ = writeln!(out, "meta-inflated {}", flags.join(" "));
    for s in 0..m.num_states() {
        let _ = writeln!(out, "reward {s}");
        write_block(&mut out, m.reward(s).data());
    }
    for s in 0..m.num_states() {
        for sp in 0..m.num_states() {
            let _ = writeln!(out, "transition {s} {sp}");
            write_block(&mut out, m.transition(s, sp).data());
        }
    }
    out.push_str("end\n");
    out
}

/// Serializes a tensor game, payoff and factor matrices included.
pub fn write_game(g: &TensorGame) -> String {
    let mut out = String::new();
    out.push_str("cprl-env game 1\n");
    let _ = writeln!(out, "agents {}", g.num_agents());
    let _ = writeln!(out, "actions {}", g.actions_per_agent());
    let _ = writeln!(out, "rank {}", g.true_rank());
    out.push_str("payoff\n");
    write_block(&mut out, g.payoff().data());
    for (i, f) in g.factors().iter().enumerate() {
        let _ = writeln!(out, "factor {i}");
        let rows: Vec<f64> = (0..f.nrows())
            .flat_map(|r| (0..f.ncols()).map(move |c| f[(r, c)]))
            .collect();
        write_block(&mut out, &rows);
    }
    out.push_str("end\n");
    out
}

struct Tokens<'a> {
    words: Vec<(usize, &'a str)>, // (line number, token)
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut words = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for w in line.split_whitespace() {
                words.push((lineno + 1, w));
            }
        }
        Tokens { words, pos: 0 }
    }

    fn line(&self) -> usize {
        if self.pos < self.words.len() {
            self.words[self.pos].0
        } else {
            self.words.last().map_or(1, |w| w.0)
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        if self.pos >= self.words.len() {
            return Err(Error::Parse { line: self.line(), msg: "unexpected end of input".into() });
        }
        let (_, w) = self.words[self.pos];
        self.pos += 1;
        Ok(w)
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.pos).map(|&(_, w)| w)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let got = self.next()?;
        if got != word {
            return Err(Error::Parse { line, msg: format!("expected `{word}`, got `{got}`") });
        }
        Ok(())
    }

    fn usize(&mut self) -> Result<usize> {
        let line = self.line();
        let w = self.next()?;
        w.parse::<usize>()
            .map_err(|_| Error::Parse { line, msg: format!("expected integer, got `{w}`") })
    }

    fn f64(&mut self) -> Result<f64> {
        let line = self.line();
        let w = self.next()?;
        let v = w
            .parse::<f64>()
            .map_err(|_| Error::Parse { line, msg: format!("expected number, got `{w}`") })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, msg: format!("non-finite value `{w}`") });
        }
        Ok(v)
    }

    fn f64_block(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn flag(&mut self) -> Result<bool> {
        let line = self.line();
        match self.next()? {
            "0" => Ok(false),
            "1" => Ok(true),
            w => Err(Error::Parse { line, msg: format!("expected 0 or 1, got `{w}`") }),
        }
    }
}

fn parse_err(tokens: &Tokens, msg: impl Into<String>) -> Error {
    Error::Parse { line: tokens.line(), msg: msg.into() }
}

fn checked_sizes(states: usize, agents: usize, actions: usize) -> Result<usize> {
    if states == 0 || states > MAX_STATES {
        return Err(Error::invalid(format!("states {states} out of 1..={MAX_STATES}")));
    }
    if agents == 0 || agents > MAX_AGENTS {
        return Err(Error::invalid(format!("agents {agents} out of 1..={MAX_AGENTS}")));
    }
    if actions == 0 || actions > MAX_ACTIONS {
        return Err(Error::invalid(format!("actions {actions} out of 1..={MAX_ACTIONS}")));
    }
    let joint = (actions as u128).pow(agents as u32);
    let total = joint * (states as u128) * (states as u128 + 1);
    if total > MAX_TOTAL_ENTRIES {
        return Err(Error::invalid(format!("fixture would hold {total} entries")));
    }
    Ok(joint as usize)
}

fn parse_mmdp_body(t: &mut Tokens) -> Result<Mmdp> {
    t.expect("states")?;
    let states = t.usize()?;
    t.expect("agents")?;
    let agents = t.usize()?;
    t.expect("actions")?;
    let actions = t.usize()?;
    let joint = checked_sizes(states, agents, actions).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Parse { line: t.line(), msg },
        other => other,
    })?;
    t.expect("gamma")?;
    let gamma = t.f64()?;

    let mut k1 = None;
    let mut k2 = None;
    let mut rank_preserved = false;
    let mut inflated = vec![false; states];
    loop {
        match t.peek() {
            Some("meta-k1") => {
                t.next()?;
                k1 = Some(t.usize()?);
            }
            Some("meta-k2") => {
                t.next()?;
                k2 = Some(t.usize()?);
            }
            Some("meta-rank-preserved") => {
                t.next()?;
                rank_preserved = t.flag()?;
            }
            Some("meta-inflated") => {
                t.next()?;
                for f in inflated.iter_mut() {
                    *f = t.flag()?;
                }
            }
            _ => break,
        }
    }

    let shape = Shape::cubic(agents, actions)?;
    let mut reward: Vec<Option<DenseTensor>> = vec![None; states];
    for _ in 0..states {
        t.expect("reward")?;
        let s = t.usize()?;
        if s >= states {
            return Err(parse_err(t, format!("reward state {s} out of range")));
        }
        if reward[s].is_some() {
            return Err(parse_err(t, format!("duplicate reward block for state {s}")));
        }
        reward[s] = Some(DenseTensor::new(shape.clone(), t.f64_block(joint)?)?);
    }
    let mut transition: Vec<Vec<Option<DenseTensor>>> = vec![vec![None; states]; states];
    for _ in 0..states * states {
        t.expect("transition")?;
        let s = t.usize()?;
        let sp = t.usize()?;
        if s >= states || sp >= states {
            return Err(parse_err(t, format!("transition pair ({s},{sp}) out of range")));
        }
        if transition[s][sp].is_some() {
            return Err(parse_err(t, format!("duplicate transition block ({s},{sp})")));
        }
        transition[s][sp] = Some(DenseTensor::new(shape.clone(), t.f64_block(joint)?)?);
    }
    t.expect("end")?;

    let reward: Vec<DenseTensor> = reward.into_iter().map(|r| r.expect("all filled")).collect();
    let transition: Vec<Vec<DenseTensor>> = transition
        .into_iter()
        .map(|row| row.into_iter().map(|p| p.expect("all filled")).collect())
        .collect();
    let mut m = Mmdp::new(agents, actions, gamma, reward, transition)?;
    m.set_meta(MmdpMeta { k1, k2, rank_preserved, transition_rank_inflated: inflated });
    Ok(m)
}

fn parse_game_body(t: &mut Tokens) -> Result<TensorGame> {
    t.expect("agents")?;
    let agents = t.usize()?;
    t.expect("actions")?;
    let actions = t.usize()?;
    t.expect("rank")?;
    let rank = t.usize()?;
    let joint = checked_sizes(1, agents, actions).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Parse { line: t.line(), msg },
        other => other,
    })?;
    if rank == 0 || (rank as u128) * (actions as u128) * (agents as u128) > MAX_TOTAL_ENTRIES {
        return Err(parse_err(t, format!("rank {rank} out of range")));
    }

    t.expect("payoff")?;
    let shape = Shape::cubic(agents, actions)?;
    let payoff = DenseTensor::new(shape, t.f64_block(joint)?)?;
    let mut factors = Vec::with_capacity(agents);
    for i in 0..agents {
        t.expect("factor")?;
        let got = t.usize()?;
        if got != i {
            return Err(parse_err(t, format!("expected factor {i}, got {got}")));
        }
        let block = t.f64_block(actions * rank)?;
        factors.push(DMatrix::from_fn(actions, rank, |r, c| block[r * rank + c]));
    }
    t.expect("end")?;
    TensorGame::new(rank, payoff, factors)
}

/// Parses either fixture kind from text.
pub fn parse_env(text: &str) -> Result<EnvFile> {
    let mut t = Tokens::new(text);
    t.expect("cprl-env")?;
    let kind = t.next()?.to_string();
    let version = t.usize()?;
    if version != 1 {
        return Err(parse_err(&t, format!("unsupported version {version}")));
    }
    match kind.as_str() {
        "mmdp" => Ok(EnvFile::Mmdp(parse_mmdp_body(&mut t)?)),
        "game" => Ok(EnvFile::Game(parse_game_body(&mut t)?)),
        other => Err(parse_err(&t, format!("unknown fixture kind `{other}`"))),
    }
}

pub fn parse_mmdp(text: &str) -> Result<Mmdp> {
    match parse_env(text)? {
        EnvFile::Mmdp(m) => Ok(m),
        EnvFile::Game(_) => Err(Error::invalid("expected an mmdp fixture, found a game")),
    }
}

pub fn parse_game(text: &str) -> Result<TensorGame> {
    match parse_env(text)? {
        EnvFile::Game(g) => Ok(g),
        EnvFile::Mmdp(_) => Err(Error::invalid("expected a game fixture, found an mmdp")),
    }
}
