//! Offline transition datasets and their line-delimited file format.
//!
//! A dataset file is JSON-lines: the first line is a header object carrying
//! the environment id, state/action dimensions, discount and episode
//! horizon; each following line is one transition encoded as the array
//! `[s, a, r, s_next, done]`, where states and actions are either integer
//! indices (tabular) or arrays of reals (continuous). Reals round-trip at
//! full precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A state observation: a tabular index or a continuous vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum State {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl State {
    pub fn index(&self) -> usize {
        match self {
            State::Discrete(i) => *i,
            State::Continuous(_) => panic!("index() on a continuous state"),
        }
    }

    pub fn vector(&self) -> &[f64] {
        match self {
            State::Continuous(v) => v,
            State::Discrete(_) => panic!("vector() on a discrete state"),
        }
    }
}

/// An action: a tabular index or a continuous vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> usize {
        match self {
            Action::Discrete(i) => *i,
            Action::Continuous(_) => panic!("index() on a continuous action"),
        }
    }

    pub fn vector(&self) -> &[f64] {
        match self {
            Action::Continuous(v) => v,
            Action::Discrete(_) => panic!("vector() on a discrete action"),
        }
    }
}

/// One `(s, a, r, s', done)` observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: Action,
    pub r: f64,
    pub s_next: State,
    pub done: bool,
}

/// Header metadata carried on the first line of a dataset file.
///
/// For tabular environments `state_dim`/`action_dim` are the space sizes
/// and indices must lie below them; for continuous environments they are
/// vector lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env_id: String,
    pub discrete: bool,
    pub state_dim: usize,
    pub action_dim: usize,
    pub gamma: f64,
    pub max_steps: usize,
    /// Tag of the collecting policy.
    #[serde(default)]
    pub behavior: String,
    #[serde(default)]
    pub seed: u64,
}

/// An ordered collection of transitions; prefix-slicing by `n` yields the
/// first `n` observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, transitions: Vec<Transition>) -> Result<Self> {
        for (i, t) in transitions.iter().enumerate() {
            validate_transition(&header, t).map_err(|e| match e {
                Error::Parse { msg, .. } => Error::Parse { line: i + 2, msg },
                other => other,
            })?;
        }
        Ok(Self { header, transitions })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// First `n` transitions (the whole dataset if `n` exceeds its length).
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            header: self.header.clone(),
            transitions: self.transitions[..n.min(self.transitions.len())].to_vec(),
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.r).collect()
    }

    /// Completed episodes: maximal runs of transitions each terminated by a
    /// `done` flag. A trailing run without `done` is not returned.
    pub fn episodes(&self) -> Vec<&[Transition]> {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, t) in self.transitions.iter().enumerate() {
            if t.done {
                out.push(&self.transitions[start..=i]);
                start = i + 1;
            }
        }
        out
    }

    /// Split into deterministic train/validation index sets by seeded
    /// shuffle. The validation part receives `ceil(frac * n)` points.
    pub fn split_indices(&self, validation_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_val = ((validation_frac * self.len() as f64).ceil() as usize).min(self.len());
        let val = idx[..n_val].to_vec();
        let train = idx[n_val..].to_vec();
        (train, val)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            header: self.header.clone(),
            transitions: indices.iter().map(|&i| self.transitions[i].clone()).collect(),
        }
    }
}

fn validate_transition(header: &DatasetHeader, t: &Transition) -> Result<()> {
    let check_state = |s: &State, what: &str| -> Result<()> {
        match (header.discrete, s) {
            (true, State::Discrete(i)) => {
                if *i >= header.state_dim {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("{what} index {i} out of range (n_states={})", header.state_dim),
                    });
                }
            }
            (false, State::Continuous(v)) => {
                if v.len() != header.state_dim {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("{what} has {} dims, header says {}", v.len(), header.state_dim),
                    });
                }
            }
            _ => {
                return Err(Error::Parse { line: 0, msg: format!("{what} kind does not match header") });
            }
        }
        Ok(())
    };
    check_state(&t.s, "state")?;
    check_state(&t.s_next, "next state")?;
    match (header.discrete, &t.a) {
        (true, Action::Discrete(i)) => {
            if *i >= header.action_dim {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("action index {i} out of range (n_actions={})", header.action_dim),
                });
            }
        }
        (false, Action::Continuous(v)) => {
            if v.len() != header.action_dim {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("action has {} dims, header says {}", v.len(), header.action_dim),
                });
            }
        }
        _ => return Err(Error::Parse { line: 0, msg: "action kind does not match header".into() }),
    }
    if !t.r.is_finite() {
        return Err(Error::Parse { line: 0, msg: format!("non-finite reward {}", t.r) });
    }
    Ok(())
}

/// Write a dataset to `path` in the line-delimited format.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &ds.header).map_err(|e| Error::Data(e.to_string()))?;
    writeln!(w)?;
    for t in &ds.transitions {
        let record = (&t.s, &t.a, t.r, &t.s_next, t.done);
        serde_json::to_writer(&mut w, &record).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset from `path`, rejecting dimension mismatches with the line
/// number of the offending record.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "missing header line".into() })??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad header: {e}") })?;
    let mut transitions = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: (State, Action, f64, State, bool) = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let t = Transition { s: record.0, a: record.1, r: record.2, s_next: record.3, done: record.4 };
        validate_transition(&header, &t).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse { line: line_no, msg },
            other => other,
        })?;
        transitions.push(t);
    }
    Ok(Dataset { header, transitions })
}
