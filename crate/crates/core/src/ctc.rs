//! CTC forward recursions, sequence probabilities and prefix scores.
//!
//! Every quantity here is exact over the frames it covers. Beam
//! approximations live in the search modules, which only use
//! [`ctc_step_blank`] and [`ctc_extend`] on their own states.

use std::num::NonZeroUsize;

use lru::LruCache;

use crate::error::{Error, Result};
use crate::semiring::{floor, log_add, LogProb, LOG_ONE, LOG_ZERO};
use crate::types::{CtcState, EmissionMatrix, FrameRow, Label};

pub const DEFAULT_CACHE_CAPACITY: usize = 10_000;

fn row_for_frame(lattice: &EmissionMatrix, frame: usize) -> Result<FrameRow<'_>> {
    if frame == 0 || frame > lattice.frames() {
        return Err(Error::Horizon { frame, limit: lattice.frames() });
    }
    Ok(lattice.row(frame - 1))
}

/// Copies a sequence to the next frame by blank or by repeating its last
/// label. `last` is the sequence's final label, `None` for the empty one.
#[inline]
pub fn step_blank_row(state: &CtcState, last: Option<Label>, row: FrameRow<'_>) -> CtcState {
    let gamma_b = floor(row.blank() + log_add(state.gamma_b, state.gamma_n));
    let gamma_n = match last {
        Some(l) => floor(row.label(l) + state.gamma_n),
        None => LOG_ZERO,
    };
    CtcState { gamma_b, gamma_n, frame: state.frame + 1 }
}

/// Extends a sequence ending in `last` by `label` at the next frame.
/// A repeated label must be separated by a blank.
#[inline]
pub fn extend_row(parent: &CtcState, last: Option<Label>, label: Label, row: FrameRow<'_>) -> CtcState {
    let reach = if last == Some(label) { parent.gamma_b } else { log_add(parent.gamma_b, parent.gamma_n) };
    CtcState { gamma_b: LOG_ZERO, gamma_n: floor(row.label(label) + reach), frame: parent.frame + 1 }
}

/// Blank/repeat transition of `state` into frame `state.frame + 1`.
pub fn ctc_step_blank(state: &CtcState, last: Option<Label>, lattice: &EmissionMatrix) -> Result<CtcState> {
    let row = row_for_frame(lattice, state.frame + 1)?;
    if let Some(l) = last {
        check_label(l, lattice)?;
    }
    Ok(step_blank_row(state, last, row))
}

/// Label expansion of `parent` into frame `parent.frame + 1`.
pub fn ctc_extend(parent: &CtcState, parent_seq: &[Label], label: Label, lattice: &EmissionMatrix) -> Result<CtcState> {
    check_label(label, lattice)?;
    let row = row_for_frame(lattice, parent.frame + 1)?;
    Ok(extend_row(parent, parent_seq.last().copied(), label, row))
}

fn check_label(label: Label, lattice: &EmissionMatrix) -> Result<()> {
    if label.index() >= lattice.num_labels() {
        return Err(Error::InvalidToken { index: label.index(), size: lattice.num_labels() });
    }
    Ok(())
}

/// Merges two partial masses of the same sequence at the same frame.
#[inline]
pub fn merge_states(a: &CtcState, b: &CtcState) -> CtcState {
    debug_assert_eq!(a.frame, b.frame);
    CtcState { gamma_b: log_add(a.gamma_b, b.gamma_b), gamma_n: log_add(a.gamma_n, b.gamma_n), frame: a.frame }
}

/// `log p(Y | frames 1..t)`.
#[inline]
pub fn fsync_score(state: &CtcState) -> LogProb {
    log_add(state.gamma_b, state.gamma_n)
}

/// Probability that frames `1..=horizon` collapse to exactly `seq`.
///
/// Runs the forward recursion for every prefix of `seq` side by side; no
/// caching.
pub fn full_sequence_prob(seq: &[Label], lattice: &EmissionMatrix, horizon: usize) -> Result<LogProb> {
    if horizon > lattice.frames() {
        return Err(Error::Horizon { frame: horizon, limit: lattice.frames() });
    }
    for &l in seq {
        check_label(l, lattice)?;
    }
    let n = seq.len();
    let mut states = vec![CtcState::unreachable(0); n + 1];
    states[0] = CtcState::initial();
    let mut next = states.clone();
    for t in 0..horizon {
        let row = lattice.row(t);
        for j in 0..=n {
            let last = if j == 0 { None } else { Some(seq[j - 1]) };
            let copy = step_blank_row(&states[j], last, row);
            next[j] = if j == 0 {
                copy
            } else {
                let prev_last = if j >= 2 { Some(seq[j - 2]) } else { None };
                merge_states(&copy, &extend_row(&states[j - 1], prev_last, seq[j - 1], row))
            };
        }
        std::mem::swap(&mut states, &mut next);
    }
    Ok(fsync_score(&states[n]))
}

/// Scores of every one-label continuation of a prefix, plus the mass of
/// the prefix being the complete output.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtensionScores {
    /// `prefix_score(prefix . v)` per label `v`.
    pub labels: Vec<LogProb>,
    /// `full_sequence_prob(prefix)`.
    pub stop: LogProb,
}

/// Forward table of one sequence. Frames before `offset` are unreachable.
#[derive(Clone, Debug)]
struct ForwardTable {
    offset: usize,
    gamma_b: Vec<LogProb>,
    gamma_n: Vec<LogProb>,
    /// Last frame covered.
    upto: usize,
    ext: Option<Accumulator>,
    ext_scores: Option<(usize, ExtensionScores)>,
}

impl ForwardTable {
    fn root() -> Self {
        Self { offset: 0, gamma_b: vec![LOG_ONE], gamma_n: vec![LOG_ZERO], upto: 0, ext: None, ext_scores: None }
    }

    fn unreachable_at_zero() -> Self {
        Self { offset: 1, gamma_b: Vec::new(), gamma_n: Vec::new(), upto: 0, ext: None, ext_scores: None }
    }

    #[inline]
    fn state(&self, frame: usize) -> CtcState {
        debug_assert!(frame <= self.upto);
        if frame < self.offset {
            CtcState::unreachable(frame)
        } else {
            let k = frame - self.offset;
            CtcState { gamma_b: self.gamma_b[k], gamma_n: self.gamma_n[k], frame }
        }
    }

    fn push(&mut self, s: CtcState) {
        debug_assert_eq!(s.frame, self.upto + 1);
        self.upto = s.frame;
        if self.gamma_b.is_empty() && s.is_dead() {
            self.offset = s.frame + 1;
        } else {
            self.gamma_b.push(s.gamma_b);
            self.gamma_n.push(s.gamma_n);
        }
    }
}

/// Running sums `sum_t exp(phi(t-1)) * q_t(v)` kept in linear scale
/// relative to `scale`.
#[derive(Clone, Debug)]
struct Accumulator {
    horizon: usize,
    scale: f64,
    acc: Vec<f64>,
    last_scale: f64,
    last_acc: f64,
}

impl Accumulator {
    fn new(num_labels: usize) -> Self {
        Self { horizon: 0, scale: LOG_ZERO, acc: vec![0.0; num_labels], last_scale: LOG_ZERO, last_acc: 0.0 }
    }

    /// Adds frame `horizon + 1`, given the prefix state at `horizon`.
    fn advance(&mut self, prev: &CtcState, last: Option<Label>, row: FrameRow<'_>) {
        self.horizon += 1;
        let lw = log_add(prev.gamma_b, prev.gamma_n);
        if lw != LOG_ZERO {
            if lw > self.scale {
                if self.scale != LOG_ZERO {
                    let f = (self.scale - lw).exp();
                    self.acc.iter_mut().for_each(|a| *a *= f);
                }
                self.scale = lw;
            }
            let w = (lw - self.scale).exp();
            for (a, p) in self.acc.iter_mut().zip(row.label_probs()) {
                *a += w * p;
            }
        }
        if let Some(l) = last {
            let lb = prev.gamma_b;
            if lb != LOG_ZERO {
                if lb > self.last_scale {
                    if self.last_scale != LOG_ZERO {
                        self.last_acc *= (self.last_scale - lb).exp();
                    }
                    self.last_scale = lb;
                }
                self.last_acc += (lb - self.last_scale).exp() * row.label_probs()[l.index()];
            }
        }
    }

    fn scores(&self, last: Option<Label>) -> Vec<LogProb> {
        let mut out: Vec<LogProb> = self.acc.iter().map(|a| floor(a.ln() + self.scale)).collect();
        if let Some(l) = last {
            out[l.index()] = floor(self.last_acc.ln() + self.last_scale);
        }
        out
    }
}

/// Session-local store of exact forward tables keyed by label sequence,
/// with least-recently-used eviction.
///
/// Serves exact sequence states, full-sequence probabilities and prefix
/// scores at any horizon. Results do not depend on what is cached.
pub struct PrefixScoreCache<'a> {
    lattice: &'a EmissionMatrix,
    tables: LruCache<Vec<Label>, ForwardTable>,
}

impl<'a> PrefixScoreCache<'a> {
    pub fn new(lattice: &'a EmissionMatrix) -> Self {
        Self::with_capacity(lattice, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_capacity(lattice: &'a EmissionMatrix, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("capacity is positive");
        Self { lattice, tables: LruCache::new(cap) }
    }

    pub fn lattice(&self) -> &'a EmissionMatrix {
        self.lattice
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    fn check(&self, seq: &[Label], horizon: usize) -> Result<()> {
        if horizon > self.lattice.frames() {
            return Err(Error::Horizon { frame: horizon, limit: self.lattice.frames() });
        }
        for &l in seq {
            check_label(l, self.lattice)?;
        }
        Ok(())
    }

    /// Makes sure `seq` and its ancestors are tabulated through `upto`.
    fn ensure(&mut self, seq: &[Label], upto: usize) {
        if let Some(t) = self.tables.get(seq) {
            if t.upto >= upto {
                return;
            }
        }
        let mut table = self.tables.pop(seq).unwrap_or_else(|| {
            if seq.is_empty() {
                ForwardTable::root()
            } else {
                ForwardTable::unreachable_at_zero()
            }
        });
        if table.upto >= upto {
            self.tables.put(seq.to_vec(), table);
            return;
        }
        let last = seq.last().copied();
        if seq.is_empty() {
            for t in table.upto + 1..=upto {
                let s = step_blank_row(&table.state(t - 1), None, self.lattice.row(t - 1));
                table.push(s);
            }
        } else {
            let parent_seq = &seq[..seq.len() - 1];
            self.ensure(parent_seq, upto - 1);
            let parent = self.tables.peek(parent_seq).expect("parent was just tabulated");
            let parent_last = parent_seq.last().copied();
            let label = seq[seq.len() - 1];
            for t in table.upto + 1..=upto {
                let row = self.lattice.row(t - 1);
                let copy = step_blank_row(&table.state(t - 1), last, row);
                let grow = extend_row(&parent.state(t - 1), parent_last, label, row);
                table.push(merge_states(&copy, &grow));
            }
        }
        self.tables.put(seq.to_vec(), table);
    }

    /// Exact forward state of `seq` at `frame`.
    pub fn state(&mut self, seq: &[Label], frame: usize) -> Result<CtcState> {
        self.check(seq, frame)?;
        self.ensure(seq, frame);
        Ok(self.tables.peek(seq).expect("tabulated").state(frame))
    }

    /// Cached equivalent of [`full_sequence_prob`].
    pub fn full_sequence_prob(&mut self, seq: &[Label], horizon: usize) -> Result<LogProb> {
        Ok(fsync_score(&self.state(seq, horizon)?))
    }

    /// Probability that the collapsed output of frames `1..=horizon` starts
    /// with `prefix`. The prefix being the whole output counts.
    pub fn prefix_score(&mut self, prefix: &[Label], horizon: usize) -> Result<LogProb> {
        match prefix.split_last() {
            None => {
                self.check(prefix, horizon)?;
                Ok(LOG_ONE)
            }
            Some((&last, parent)) => {
                check_label(last, self.lattice)?;
                Ok(self.extension_scores(parent, horizon)?.labels[last.index()])
            }
        }
    }

    /// Prefix scores of all one-label continuations of `prefix` and its
    /// stop mass, at `horizon`.
    pub fn extension_scores(&mut self, prefix: &[Label], horizon: usize) -> Result<ExtensionScores> {
        self.check(prefix, horizon)?;
        self.ensure(prefix, horizon);
        let lattice = self.lattice;
        let last = prefix.last().copied();
        let table = self.tables.get_mut(prefix).expect("tabulated");
        if let Some((h, s)) = &table.ext_scores {
            if *h == horizon {
                return Ok(s.clone());
            }
        }
        let stop = fsync_score(&table.state(horizon));
        let advance_to = |acc: &mut Accumulator, table: &ForwardTable| {
            while acc.horizon < horizon {
                let t = acc.horizon;
                acc.advance(&table.state(t), last, lattice.row(t));
            }
        };
        let labels = match table.ext.take() {
            Some(mut acc) if acc.horizon <= horizon => {
                advance_to(&mut acc, table);
                let labels = acc.scores(last);
                table.ext = Some(acc);
                labels
            }
            kept => {
                // Requested horizon is behind the running sums: recompute
                // from frame 1 without disturbing them.
                let mut acc = Accumulator::new(lattice.num_labels());
                advance_to(&mut acc, table);
                let labels = acc.scores(last);
                table.ext = kept.or(Some(acc));
                labels
            }
        };
        let scores = ExtensionScores { labels, stop };
        table.ext_scores = Some((horizon, scores.clone()));
        Ok(scores)
    }
}
