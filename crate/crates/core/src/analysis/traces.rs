//! Observation traces and the trace-exchange anonymity condition.
//!
//! Hop indices are 1-based: transmission `i` of a trace goes from `S_i` to
//! `R_i` at time `t_i`. A message from a client through `l` mix layers
//! yields `l + 2` transmissions, the last of which reaches the destination
//! provider.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("hop index {index} out of range for trace length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub sender: String,
    pub time: f64,
    pub handle: u64,
    pub recipient: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace(pub Vec<Transmission>);

impl Trace {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based access.
    pub fn hop(&self, i: usize) -> &Transmission {
        &self.0[i - 1]
    }

    pub fn destination(&self) -> &str {
        &self.0.last().expect("nonempty trace").recipient
    }

    /// Linked hops (`R_i = S_{i+1}`) and strictly increasing times.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.0.len() < 2 {
            return Err(TraceError::InvalidTrace("fewer than two transmissions".into()));
        }
        for (i, w) in self.0.windows(2).enumerate() {
            if w[0].recipient != w[1].sender {
                return Err(TraceError::InvalidTrace(format!("hop {} does not link to hop {}", i + 1, i + 2)));
            }
            if !(w[0].time < w[1].time) {
                return Err(TraceError::InvalidTrace(format!("time does not increase at hop {}", i + 2)));
            }
        }
        Ok(())
    }

    /// [`Trace::validate`] plus role checks: the first sender is a client,
    /// the first and last recipients are providers.
    pub fn validate_roles(
        &self,
        is_client: impl Fn(&str) -> bool,
        is_provider: impl Fn(&str) -> bool,
    ) -> Result<(), TraceError> {
        self.validate()?;
        if !is_client(&self.0[0].sender) {
            return Err(TraceError::InvalidTrace("first sender is not a client".into()));
        }
        if !is_provider(&self.0[0].recipient) {
            return Err(TraceError::InvalidTrace("first recipient is not a provider".into()));
        }
        if !is_provider(self.destination()) {
            return Err(TraceError::InvalidTrace("last recipient is not a provider".into()));
        }
        Ok(())
    }
}

/// Whether `x` and `y` meet at the same node at hop `i` with overlapping
/// residence there: `R_{x,i} = R_{y,i}`, `t_{x,i} < t_{y,i+1}`, `t_{y,i} < t_{x,i+1}`.
pub fn trace_join(x: &Trace, y: &Trace, i: usize) -> Result<bool, TraceError> {
    x.validate()?;
    y.validate()?;
    let len = x.len().min(y.len());
    if i < 1 || i >= len {
        return Err(TraceError::IndexOutOfRange { index: i, len });
    }
    Ok(joins_unchecked(x, y, i))
}

fn joins_unchecked(x: &Trace, y: &Trace, i: usize) -> bool {
    let (xi, xn) = (x.hop(i), x.hop(i + 1));
    let (yi, yn) = (y.hop(i), y.hop(i + 1));
    xi.recipient == yi.recipient && xi.time < yn.time && yi.time < xn.time
}

struct ChainSearch<'a> {
    drops: &'a [Trace],
    compromised: &'a HashSet<String>,
    len: usize,
    memo: HashMap<(usize, usize), BTreeSet<usize>>,
}

impl ChainSearch<'_> {
    fn honest_join(&self, a: &Trace, b: &Trace, hop: usize) -> bool {
        !self.compromised.contains(&a.hop(hop).recipient) && joins_unchecked(a, b, hop)
    }

    /// Chain lengths achievable from drop trace `d`, joined at `hop`, to a
    /// drop trace ending at `dest`.
    fn chain_from_drop(&mut self, d: usize, hop: usize, dest: &str) -> BTreeSet<usize> {
        if let Some(hit) = self.memo.get(&(d, hop)) {
            return hit.clone();
        }
        let mut out = BTreeSet::new();
        if self.drops[d].destination() == dest {
            out.insert(1);
        }
        for next_hop in hop + 1..self.len {
            for e in 0..self.drops.len() {
                if e != d && self.honest_join(&self.drops[d], &self.drops[e], next_hop) {
                    for k in self.chain_from_drop(e, next_hop, dest) {
                        out.insert(k + 1);
                    }
                }
            }
        }
        self.memo.insert((d, hop), out.clone());
        out
    }

    fn chain_from_challenge(&mut self, start: &Trace, dest: &str) -> BTreeSet<usize> {
        self.memo.clear();
        let mut out = BTreeSet::new();
        for hop in 2..self.len {
            for d in 0..self.drops.len() {
                if self.honest_join(start, &self.drops[d], hop) {
                    out.extend(self.chain_from_drop(d, hop, dest));
                }
            }
        }
        out
    }
}

/// Whether the drop traffic lets the two challenge messages exchange
/// destinations through honest mixes.
///
/// True iff for some common `k >= 1` there is a chain of `k` drop traces
/// starting with one that joins `tr_c`, each joining the next at a strictly
/// later hop in `2..L-1`, the last ending at `tr_d`'s destination; and a
/// chain of the same length from `tr_d` to `tr_c`'s destination. All join
/// nodes must be honest.
pub fn anonymity_condition_holds(
    challenge: (&Trace, &Trace),
    drop_traces: &[Trace],
    compromised: &HashSet<String>,
) -> Result<bool, TraceError> {
    let (tr_c, tr_d) = challenge;
    tr_c.validate()?;
    tr_d.validate()?;
    let len = tr_c.len();
    if tr_d.len() != len {
        return Err(TraceError::InvalidTrace("challenge traces differ in length".into()));
    }
    for t in drop_traces {
        t.validate()?;
        if t.len() != len {
            return Err(TraceError::InvalidTrace("drop trace length differs from challenge".into()));
        }
    }
    let mut search = ChainSearch { drops: drop_traces, compromised, len, memo: HashMap::new() };
    let via_c = search.chain_from_challenge(tr_c, tr_d.destination());
    if via_c.is_empty() {
        return Ok(false);
    }
    let via_d = search.chain_from_challenge(tr_d, tr_c.destination());
    Ok(via_c.intersection(&via_d).next().is_some())
}
