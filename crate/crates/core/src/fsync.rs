//! Frame-synchronous CTC prefix beam search with shallow fusion.
//!
//! Label scorers are queried at the current frame as their horizon, so the
//! beam after frame `t` depends on frames `1..=t` only.

use crate::ctc::{extend_row, fsync_score, merge_states, step_blank_row, PrefixScoreCache};
use crate::error::{Error, Result};
use crate::fusion::{
    child_links, fused, rank_terminal, rank_view_order, select_top, DecodedHypothesis, Origin, SearchOptions, SeqView,
};
use crate::scorers::Scorers;
use crate::semiring::LogProb;
use crate::trace::{DecodeTrace, TraceEntry, TraceStep};
use crate::types::{CtcState, EmissionMatrix, Label, ScoreWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct FHypothesis {
    pub seq: Vec<Label>,
    pub ctc: CtcState,
    pub beta_lm: LogProb,
    pub beta_att: LogProb,
}

impl FHypothesis {
    pub fn initial() -> Self {
        Self { seq: Vec::new(), ctc: CtcState::initial(), beta_lm: 0.0, beta_att: 0.0 }
    }
}

pub fn fsync_fused_score(h: &FHypothesis, weights: &ScoreWeights) -> f64 {
    fused(weights, fsync_score(&h.ctc), h.beta_lm, h.beta_att, h.seq.len())
}

/// Advances `beam` by one frame and keeps the best `beam_size`.
///
/// Sequences reached by both a copy and an expansion are merged by
/// log-adding their masses; the copy's label scores are kept since both
/// paths share the label sequence.
pub fn fsync_step(
    beam: &[FHypothesis],
    cache: &mut PrefixScoreCache<'_>,
    scorers: &Scorers<'_>,
    weights: &ScoreWeights,
    beam_size: usize,
    options: &SearchOptions,
) -> Result<Vec<FHypothesis>> {
    let Some(first) = beam.first() else {
        return Err(Error::SearchState("empty beam".into()));
    };
    let t = first.ctc.frame + 1;
    if beam.iter().any(|h| h.ctc.frame + 1 != t) {
        return Err(Error::SearchState("beam mixes frames".into()));
    }
    let lattice = cache.lattice();
    if t > lattice.frames() {
        return Err(Error::Horizon { frame: t, limit: lattice.frames() });
    }
    let row = lattice.row(t - 1);

    let seqs: Vec<&[Label]> = beam.iter().map(|h| h.seq.as_slice()).collect();
    let links = child_links(&seqs);
    let mut copies: Vec<FHypothesis> = beam
        .iter()
        .map(|h| FHypothesis { ctc: step_blank_row(&h.ctc, h.seq.last().copied(), row), ..h.clone() })
        .collect();
    let mut grown: Vec<Grown> = Vec::new();
    for (parent, h) in beam.iter().enumerate() {
        let last = h.seq.last().copied();
        let mut next = None;
        for (v, &q) in row.label_log_probs().iter().enumerate() {
            if !options.expands(q) {
                continue;
            }
            let label = Label(v as u32);
            let ctc = extend_row(&h.ctc, last, label, row);
            if ctc.is_dead() {
                continue;
            }
            if let Some(&k) = links.get(&(parent, label)) {
                copies[k].ctc = merge_states(&copies[k].ctc, &ctc);
                continue;
            }
            if next.is_none() {
                next = Some(scorers.next(&h.seq, cache, t)?);
            }
            let (lm, att) = next.as_ref().map_or((0.0, 0.0), |n| n.get(Some(label)));
            let (beta_lm, beta_att) = (h.beta_lm + lm, h.beta_att + att);
            let score = fused(weights, fsync_score(&ctc), beta_lm, beta_att, h.seq.len() + 1);
            grown.push(Grown { score, parent, label, ctc, beta_lm, beta_att });
        }
    }

    let mut ranked: Vec<(f64, SeqView<'_>, Origin)> = copies
        .iter()
        .enumerate()
        .filter(|(_, h)| !h.ctc.is_dead())
        .map(|(k, h)| (fsync_fused_score(h, weights), SeqView { base: &h.seq, tail: None }, Origin::Kept(k)))
        .chain(
            grown
                .iter()
                .enumerate()
                .map(|(k, g)| (g.score, SeqView { base: &beam[g.parent].seq, tail: Some(g.label) }, Origin::Grown(k))),
        )
        .collect();
    select_top(&mut ranked, beam_size, |a, b| rank_view_order(a.0, a.1, b.0, b.1));
    Ok(ranked
        .into_iter()
        .map(|(_, view, origin)| match origin {
            Origin::Kept(k) => copies[k].clone(),
            Origin::Grown(k) => {
                let g = &grown[k];
                FHypothesis { seq: view.to_vec(), ctc: g.ctc, beta_lm: g.beta_lm, beta_att: g.beta_att }
            }
        })
        .collect())
}

/// A one-label expansion, built only if it survives selection.
struct Grown {
    score: f64,
    parent: usize,
    label: Label,
    ctc: CtcState,
    beta_lm: LogProb,
    beta_att: LogProb,
}

#[derive(Clone, Debug)]
pub struct FsyncOutput {
    /// Final beam rescored over the whole lattice, best first.
    pub ranked: Vec<DecodedHypothesis>,
    /// Beam after the last frame, in search order.
    pub beam: Vec<FHypothesis>,
    pub trace: Option<DecodeTrace>,
}

impl FsyncOutput {
    pub fn best(&self) -> Option<&DecodedHypothesis> {
        self.ranked.first()
    }
}

/// Runs the frame-synchronous search over every frame of `lattice`.
pub fn fsync_decode(
    lattice: &EmissionMatrix,
    scorers: &Scorers<'_>,
    weights: &ScoreWeights,
    beam_size: usize,
    options: &SearchOptions,
) -> Result<FsyncOutput> {
    weights.validate()?;
    if beam_size == 0 {
        return Err(Error::Config("beam size must be positive".into()));
    }
    let mut cache = PrefixScoreCache::with_capacity(lattice, options.cache_capacity);
    let mut beam = vec![FHypothesis::initial()];
    let mut trace = options.trace.then(DecodeTrace::default);
    for t in 1..=lattice.frames() {
        beam = fsync_step(&beam, &mut cache, scorers, weights, beam_size, options)?;
        if beam.is_empty() {
            return Err(Error::EmptyResult { partial: Vec::new() });
        }
        if let Some(trace) = trace.as_mut() {
            let entries = beam
                .iter()
                .map(|h| TraceEntry {
                    labels: h.seq.clone(),
                    score: fsync_fused_score(h, weights),
                    prioritized: false,
                    finished: false,
                })
                .collect();
            let i = beam.iter().map(|h| h.seq.len()).min().unwrap_or(0);
            trace.steps.push(TraceStep { t, i, entries, pruned: Vec::new() });
        }
    }
    let ranked = rank_terminal(beam.iter().map(|h| h.seq.clone()), &mut cache, scorers, weights)?;
    Ok(FsyncOutput { ranked, beam, trace })
}
