//! Fused scores, ranking order and options shared by the three searches.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::ctc::{PrefixScoreCache, DEFAULT_CACHE_CAPACITY};
use crate::error::Result;
use crate::scorers::Scorers;
use crate::semiring::{weighted, LogProb};
use crate::types::{Label, ScoreWeights};

/// Default expansion floor: labels with posterior below `e^-10` at a frame
/// are not expanded there.
pub const DEFAULT_EXPANSION_FLOOR: LogProb = -10.0;

/// `λ_ctc·ctc + λ_lm·lm + λ_att·att + λ_len·len`.
#[inline]
pub fn fused(weights: &ScoreWeights, ctc: LogProb, lm: LogProb, att: LogProb, len: usize) -> f64 {
    weighted(weights.ctc, ctc) + weighted(weights.lm, lm) + weighted(weights.att, att) + weights.len * len as f64
}

/// Beam order: higher score first, then shorter sequence, then
/// lexicographic label order.
#[inline]
pub fn rank_order(score_a: f64, seq_a: &[Label], score_b: f64, seq_b: &[Label]) -> Ordering {
    score_b
        .partial_cmp(&score_a)
        .unwrap_or(Ordering::Equal)
        .then_with(|| seq_a.len().cmp(&seq_b.len()))
        .then_with(|| seq_a.cmp(seq_b))
}

/// A label sequence stored as a shared prefix and an optional last label,
/// so that one-label expansions can be ranked before they are built.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SeqView<'a> {
    pub base: &'a [Label],
    pub tail: Option<Label>,
}

impl SeqView<'_> {
    pub fn len(&self) -> usize {
        self.base.len() + usize::from(self.tail.is_some())
    }

    pub fn to_vec(self) -> Vec<Label> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.base);
        v.extend(self.tail);
        v
    }
}

/// [`rank_order`] over [`SeqView`]s.
pub(crate) fn rank_view_order(score_a: f64, a: SeqView<'_>, score_b: f64, b: SeqView<'_>) -> Ordering {
    score_b
        .partial_cmp(&score_a)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.len().cmp(&b.len()))
        .then_with(|| a.base.iter().chain(&a.tail).cmp(b.base.iter().chain(&b.tail)))
}

/// Where a selection candidate comes from: an index into the fully built
/// candidates or into the deferred expansions.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Origin {
    Kept(usize),
    Grown(usize),
}

/// Sorts `items` by `cmp` and keeps the first `keep`.
pub(crate) fn select_top<T>(items: &mut Vec<T>, keep: usize, mut cmp: impl FnMut(&T, &T) -> Ordering) {
    if keep == 0 {
        items.clear();
        return;
    }
    if items.len() > keep {
        items.select_nth_unstable_by(keep - 1, &mut cmp);
        items.truncate(keep);
    }
    items.sort_by(cmp);
}

/// Maps `(parent, label)` to the index of the sequence spelling
/// `seqs[parent]` followed by `label`, for every such pair within `seqs`.
/// Sequences must be distinct.
pub(crate) fn child_links(seqs: &[&[Label]]) -> HashMap<(usize, Label), usize> {
    let position: HashMap<&[Label], usize> = seqs.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let mut links = HashMap::new();
    for (k, s) in seqs.iter().enumerate() {
        if let Some((&last, parent)) = s.split_last() {
            if let Some(&p) = position.get(parent) {
                links.insert((p, last), k);
            }
        }
    }
    links
}

/// A complete hypothesis scored over the whole lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedHypothesis {
    pub labels: Vec<Label>,
    /// `full_sequence_prob(labels, T)`.
    pub ctc: LogProb,
    pub beta_lm: LogProb,
    pub beta_att: LogProb,
    pub eos_lm: LogProb,
    pub eos_att: LogProb,
    /// Fused score including the `<eos>` terms; the ranking key.
    pub score: f64,
    /// Fused score over the labels alone.
    pub score_without_eos: f64,
}

impl DecodedHypothesis {
    /// Scores `labels` from scratch against the full lattice.
    pub fn terminal(
        labels: Vec<Label>,
        cache: &mut PrefixScoreCache<'_>,
        scorers: &Scorers<'_>,
        weights: &ScoreWeights,
    ) -> Result<Self> {
        let horizon = cache.lattice().frames();
        let ctc = cache.full_sequence_prob(&labels, horizon)?;
        let beta = scorers.beta(&labels, cache, horizon)?;
        let len = labels.len();
        Ok(Self {
            ctc,
            beta_lm: beta.lm,
            beta_att: beta.att,
            eos_lm: beta.eos_lm,
            eos_att: beta.eos_att,
            score: fused(weights, ctc, beta.lm + beta.eos_lm, beta.att + beta.eos_att, len),
            score_without_eos: fused(weights, ctc, beta.lm, beta.att, len),
            labels,
        })
    }
}

/// Sorts by [`rank_order`].
pub fn rank(hyps: &mut [DecodedHypothesis]) {
    hyps.sort_by(|a, b| rank_order(a.score, &a.labels, b.score, &b.labels));
}

/// Rescores a final candidate set against the full lattice and ranks it.
pub fn rank_terminal(
    candidates: impl IntoIterator<Item = Vec<Label>>,
    cache: &mut PrefixScoreCache<'_>,
    scorers: &Scorers<'_>,
    weights: &ScoreWeights,
) -> Result<Vec<DecodedHypothesis>> {
    let mut out = candidates
        .into_iter()
        .map(|seq| DecodedHypothesis::terminal(seq, cache, scorers, weights))
        .collect::<Result<Vec<_>>>()?;
    rank(&mut out);
    Ok(out)
}

/// Knobs shared by the searches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOptions {
    /// Labels whose frame log-posterior is below this are not expanded.
    /// `None` expands every label with non-zero posterior.
    pub expansion_floor: Option<LogProb>,
    pub cache_capacity: usize,
    /// Record a [`crate::trace::DecodeTrace`].
    pub trace: bool,
    /// Integrated search only.
    pub ancestor_pruning: bool,
    /// Label-synchronous search only; defaults to the frame count.
    pub max_len: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            expansion_floor: Some(DEFAULT_EXPANSION_FLOOR),
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            trace: false,
            ancestor_pruning: true,
            max_len: None,
        }
    }
}

impl SearchOptions {
    /// No expansion floor; used where results must match exhaustive search.
    pub fn exact() -> Self {
        Self { expansion_floor: None, ..Self::default() }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = true;
        self
    }

    #[inline]
    pub(crate) fn expands(&self, log_q: LogProb) -> bool {
        log_q != f64::NEG_INFINITY && self.expansion_floor.is_none_or(|f| log_q >= f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_examples() {
        let w = ScoreWeights::new(0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(fused(&w, -3.0, -1.0, -2.0, 3), 3.0);
        let w = ScoreWeights::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(fused(&w, 0.0, 0.0, f64::NEG_INFINITY, 0), 0.0);
    }

    #[test]
    fn ranking_ties() {
        let a = [Label(0)];
        let b = [Label(1)];
        let ab = [Label(0), Label(1)];
        assert_eq!(rank_order(-1.0, &a, -2.0, &b), Ordering::Less);
        assert_eq!(rank_order(-1.0, &ab, -1.0, &b), Ordering::Greater);
        assert_eq!(rank_order(-1.0, &a, -1.0, &b), Ordering::Less);
        assert_eq!(rank_order(f64::NEG_INFINITY, &b, f64::NEG_INFINITY, &a), Ordering::Greater);
    }
}
