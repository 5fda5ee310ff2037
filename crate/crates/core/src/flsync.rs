//! Integrated frame- and label-synchronous search.
//!
//! Frames are processed in blocks; within block `b` the lattice is visible
//! up to its horizon `T_b`. At each frame:
//!
//! 1. If the shortest beam hypothesis is longer than the current label step
//!    `i`, a label-synchronous step runs: `i` moves to that length, every
//!    distinct `(i-1)`-prefix is extended by every label and scored with the
//!    prefix probability at `T_b`, and the best `B` become prioritized
//!    hypotheses with exact CTC states at the current frame.
//! 2. The beam is advanced one frame by blank/repeat copies and label
//!    expansions as in the frame-synchronous search.
//! 3. A prioritized root is retired when every established successor
//!    (a longer descendant that survived an earlier beam selection) scores
//!    above it.
//! 4. Prioritized hypotheses are kept unconditionally and the rest of the
//!    beam is filled to `B'` by score.
//!
//! Label-scorer terms cover only the first `i` labels of each hypothesis.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::ctc::{extend_row, fsync_score, merge_states, step_blank_row, PrefixScoreCache};
use crate::error::{Error, Result};
use crate::fusion::{
    child_links, fused, rank_order, rank_terminal, rank_view_order, select_top, DecodedHypothesis, Origin,
    SearchOptions, SeqView,
};
use crate::scorers::{NextScores, Scorers};
use crate::semiring::LogProb;
use crate::trace::{DecodeTrace, TraceEntry, TraceStep};
use crate::types::{BeamConfig, BlockSchedule, CtcState, EmissionMatrix, Label, ScoreWeights};

pub type RootId = u64;

#[derive(Clone, Debug, PartialEq)]
pub struct FLHypothesis {
    pub seq: Vec<Label>,
    pub ctc: CtcState,
    /// Number of leading labels covered by the label-scorer terms.
    pub lsync_len: usize,
    pub beta_lm: LogProb,
    pub beta_att: LogProb,
    pub prioritized: bool,
    /// Prioritized root this hypothesis descends from, if still live.
    pub root: Option<RootId>,
    /// Survived at least one beam selection in its current form.
    pub established: bool,
}

impl FLHypothesis {
    pub fn initial() -> Self {
        Self {
            seq: Vec::new(),
            ctc: CtcState::initial(),
            lsync_len: 0,
            beta_lm: 0.0,
            beta_att: 0.0,
            prioritized: false,
            root: None,
            established: true,
        }
    }
}

pub fn fl_fused_score(h: &FLHypothesis, weights: &ScoreWeights) -> f64 {
    fused(weights, fsync_score(&h.ctc), h.beta_lm, h.beta_att, h.lsync_len)
}

fn by_score(weights: &ScoreWeights) -> impl Fn(&FLHypothesis, &FLHypothesis) -> Ordering + '_ {
    move |a, b| rank_order(fl_fused_score(a, weights), &a.seq, fl_fused_score(b, weights), &b.seq)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FLBeam {
    pub hypotheses: Vec<FLHypothesis>,
    /// Last frame processed.
    pub frame: usize,
    /// Current label step `i`.
    pub lsync_step: usize,
}

impl FLBeam {
    pub fn initial() -> Self {
        Self { hypotheses: vec![FLHypothesis::initial()], frame: 0, lsync_step: 0 }
    }
}

/// Retires every prioritized root scoring below all of its established
/// successors. Roots without such successors stay. Descendants of a retired
/// root lose their stamp. Returns the retired sequences.
pub fn ancestor_prune(candidates: &mut Vec<FLHypothesis>, weights: &ScoreWeights) -> Vec<Vec<Label>> {
    retire_roots(candidates, weights).0
}

/// [`ancestor_prune`], also returning the retired root ids.
fn retire_roots(candidates: &mut Vec<FLHypothesis>, weights: &ScoreWeights) -> (Vec<Vec<Label>>, HashSet<RootId>) {
    let mut worst: HashMap<RootId, f64> = HashMap::new();
    let mut root_len: HashMap<RootId, usize> = HashMap::new();
    for h in candidates.iter().filter(|h| h.prioritized) {
        if let Some(r) = h.root {
            root_len.insert(r, h.seq.len());
        }
    }
    for h in candidates.iter().filter(|h| !h.prioritized && h.established) {
        let Some(r) = h.root else { continue };
        if root_len.get(&r).is_some_and(|&len| h.seq.len() > len) {
            let s = fl_fused_score(h, weights);
            worst.entry(r).and_modify(|w| *w = w.min(s)).or_insert(s);
        }
    }
    let mut retired: HashSet<RootId> = HashSet::new();
    let mut pruned = Vec::new();
    candidates.retain(|h| {
        if !h.prioritized {
            return true;
        }
        let Some(r) = h.root else { return true };
        match worst.get(&r) {
            Some(&w) if fl_fused_score(h, weights) < w => {
                retired.insert(r);
                pruned.push(h.seq.clone());
                false
            }
            _ => true,
        }
    });
    for h in candidates.iter_mut() {
        if h.root.is_some_and(|r| retired.contains(&r)) {
            h.root = None;
        }
    }
    (pruned, retired)
}

/// Counters collected over one decode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlSyncStats {
    pub lsync_steps: usize,
    pub prioritized: usize,
    pub pruned_roots: usize,
}

#[derive(Clone, Debug)]
pub struct FlSyncOutput {
    /// Final beam rescored over the whole lattice, best first.
    pub ranked: Vec<DecodedHypothesis>,
    pub beam: FLBeam,
    pub trace: Option<DecodeTrace>,
    pub stats: FlSyncStats,
}

impl FlSyncOutput {
    pub fn best(&self) -> Option<&DecodedHypothesis> {
        self.ranked.first()
    }
}

struct PrefixEntry {
    seq: Vec<Label>,
    beta_lm: LogProb,
    beta_att: LogProb,
    next: NextScores,
}

/// A one-label expansion, built only if it survives selection.
struct Grown {
    score: f64,
    parent: usize,
    label: Label,
    ctc: CtcState,
}

/// Incremental state of one integrated decode.
pub struct FlSyncSearch<'a, 's> {
    cache: PrefixScoreCache<'a>,
    scorers: Scorers<'s>,
    weights: ScoreWeights,
    beams: BeamConfig,
    options: SearchOptions,
    beam: FLBeam,
    next_root: RootId,
    trace: Option<DecodeTrace>,
    stats: FlSyncStats,
}

impl<'a, 's> FlSyncSearch<'a, 's> {
    pub fn new(
        lattice: &'a EmissionMatrix,
        scorers: Scorers<'s>,
        weights: ScoreWeights,
        beams: BeamConfig,
        options: SearchOptions,
    ) -> Result<Self> {
        weights.validate()?;
        BeamConfig::new(beams.total, beams.lsync)?;
        Ok(Self {
            cache: PrefixScoreCache::with_capacity(lattice, options.cache_capacity),
            scorers,
            weights,
            beams,
            options,
            beam: FLBeam::initial(),
            next_root: 0,
            trace: options.trace.then(DecodeTrace::default),
            stats: FlSyncStats::default(),
        })
    }

    pub fn beam(&self) -> &FLBeam {
        &self.beam
    }

    pub fn stats(&self) -> FlSyncStats {
        self.stats
    }

    /// Runs the label-synchronous step for frame `t` if the beam's shortest
    /// hypothesis is past the current label step. Rescores the beam's label
    /// terms to the new step, clears old priorities and returns the new
    /// prioritized hypotheses with CTC states at `t`.
    pub fn lsync_prefix_step(&mut self, t: usize, horizon: usize) -> Result<Vec<FLHypothesis>> {
        let Some(min_len) = self.beam.hypotheses.iter().map(|h| h.seq.len()).min() else {
            return Err(Error::SearchState("empty beam".into()));
        };
        let old = self.beam.lsync_step;
        if old >= min_len {
            return Ok(Vec::new());
        }
        let i = min_len;

        let mut prefixes: Vec<PrefixEntry> = Vec::new();
        let mut position: HashMap<&[Label], usize> = HashMap::new();
        let mut owner: Vec<usize> = Vec::with_capacity(self.beam.hypotheses.len());
        for h in &self.beam.hypotheses {
            let p = &h.seq[..i - 1];
            if let Some(&k) = position.get(p) {
                owner.push(k);
                continue;
            }
            owner.push(prefixes.len());
            let (mut beta_lm, mut beta_att) = (h.beta_lm, h.beta_att);
            for j in old..i - 1 {
                let (lm, att) = self.scorers.next(&p[..j], &mut self.cache, horizon)?.get(Some(p[j]));
                beta_lm += lm;
                beta_att += att;
            }
            let next = self.scorers.next(p, &mut self.cache, horizon)?;
            position.insert(p, prefixes.len());
            prefixes.push(PrefixEntry { seq: p.to_vec(), beta_lm, beta_att, next });
        }

        let mut candidates: Vec<(f64, usize, Label, LogProb, LogProb)> = Vec::new();
        for (k, entry) in prefixes.iter().enumerate() {
            let ext = self.cache.extension_scores(&entry.seq, horizon)?;
            for (v, &ctc) in ext.labels.iter().enumerate() {
                let label = Label(v as u32);
                let (lm, att) = entry.next.get(Some(label));
                let (beta_lm, beta_att) = (entry.beta_lm + lm, entry.beta_att + att);
                let score = fused(&self.weights, ctc, beta_lm, beta_att, i);
                if score > f64::NEG_INFINITY {
                    candidates.push((score, k, label, beta_lm, beta_att));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| prefixes[a.1].seq.cmp(&prefixes[b.1].seq))
                .then_with(|| a.2.cmp(&b.2))
        });
        candidates.truncate(self.beams.lsync);

        for (h, &k) in self.beam.hypotheses.iter_mut().zip(&owner) {
            let entry = &prefixes[k];
            let (lm, att) = entry.next.get(Some(h.seq[i - 1]));
            h.beta_lm = entry.beta_lm + lm;
            h.beta_att = entry.beta_att + att;
            h.lsync_len = i;
            h.prioritized = false;
            h.root = None;
        }

        let mut out = Vec::with_capacity(candidates.len());
        for (_, k, label, beta_lm, beta_att) in candidates {
            let mut seq = prefixes[k].seq.clone();
            seq.push(label);
            let ctc = self.cache.state(&seq, t)?;
            if ctc.is_dead() {
                continue;
            }
            out.push(FLHypothesis {
                seq,
                ctc,
                lsync_len: i,
                beta_lm,
                beta_att,
                prioritized: true,
                root: Some(self.next_root),
                established: false,
            });
            self.next_root += 1;
        }
        self.beam.lsync_step = i;
        self.stats.lsync_steps += 1;
        self.stats.prioritized += out.len();
        Ok(out)
    }

    /// Processes frame `t` with the lattice visible up to `horizon`.
    pub fn step(&mut self, t: usize, horizon: usize) -> Result<()> {
        let lattice = self.cache.lattice();
        if t != self.beam.frame + 1 || t > horizon {
            return Err(Error::SearchState(format!("frame {t} out of order at frame {}", self.beam.frame)));
        }
        if horizon > lattice.frames() {
            return Err(Error::Horizon { frame: horizon, limit: lattice.frames() });
        }
        let prioritized = self.lsync_prefix_step(t, horizon)?;
        let row = lattice.row(t - 1);

        let beam = &self.beam.hypotheses;
        let seqs: Vec<&[Label]> = beam.iter().map(|h| h.seq.as_slice()).collect();
        let links = child_links(&seqs);
        let mut pool: Vec<FLHypothesis> = beam
            .iter()
            .map(|h| FLHypothesis {
                ctc: step_blank_row(&h.ctc, h.seq.last().copied(), row),
                established: true,
                ..h.clone()
            })
            .collect();
        let mut grown: Vec<Grown> = Vec::new();
        for (parent, h) in beam.iter().enumerate() {
            let last = h.seq.last().copied();
            for (v, &q) in row.label_log_probs().iter().enumerate() {
                if !self.options.expands(q) {
                    continue;
                }
                let label = Label(v as u32);
                let ctc = extend_row(&h.ctc, last, label, row);
                if ctc.is_dead() {
                    continue;
                }
                if let Some(&k) = links.get(&(parent, label)) {
                    let e = &mut pool[k];
                    e.ctc = merge_states(&e.ctc, &ctc);
                    // Mass now flows through the root; count it as a successor.
                    if e.root.is_none() && !e.prioritized {
                        e.root = h.root;
                    }
                    continue;
                }
                let score = fused(&self.weights, fsync_score(&ctc), h.beta_lm, h.beta_att, h.lsync_len);
                grown.push(Grown { score, parent, label, ctc });
            }
        }
        // Prioritized sequences have exactly `lsync_step` labels and every
        // expansion has more, so they can only meet copies. A prioritized
        // state is exact over every alignment, so it replaces rather than
        // adds to the copy's partial mass.
        let position: HashMap<&[Label], usize> = seqs.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        for p in prioritized {
            match position.get(p.seq.as_slice()) {
                Some(&k) => {
                    let e = &mut pool[k];
                    e.ctc = p.ctc;
                    e.prioritized = true;
                    e.root = p.root;
                }
                None => pool.push(p),
            }
        }
        pool.retain(|h| !h.ctc.is_dead());

        // Expansions are never established, so they cannot retire a root.
        let (pruned, retired) =
            if self.options.ancestor_pruning { retire_roots(&mut pool, &self.weights) } else { Default::default() };
        self.stats.pruned_roots += pruned.len();

        let (mut kept, rest): (Vec<_>, Vec<_>) = pool.into_iter().partition(|h| h.prioritized);
        let mut ranked: Vec<(f64, SeqView<'_>, Origin)> =
            rest.iter()
                .enumerate()
                .map(|(k, h)| (fl_fused_score(h, &self.weights), SeqView { base: &h.seq, tail: None }, Origin::Kept(k)))
                .chain(grown.iter().enumerate().map(|(k, g)| {
                    (g.score, SeqView { base: &beam[g.parent].seq, tail: Some(g.label) }, Origin::Grown(k))
                }))
                .collect();
        select_top(&mut ranked, self.beams.total.saturating_sub(kept.len()), |a, b| {
            rank_view_order(a.0, a.1, b.0, b.1)
        });
        for (_, view, origin) in ranked {
            kept.push(match origin {
                Origin::Kept(k) => rest[k].clone(),
                Origin::Grown(k) => {
                    let g = &grown[k];
                    let h = &beam[g.parent];
                    FLHypothesis {
                        seq: view.to_vec(),
                        ctc: g.ctc,
                        root: h.root.filter(|r| !retired.contains(r)),
                        prioritized: false,
                        established: false,
                        ..*h
                    }
                }
            });
        }
        kept.sort_by(by_score(&self.weights));
        if kept.is_empty() {
            return Err(Error::EmptyResult { partial: Vec::new() });
        }
        self.beam.hypotheses = kept;
        self.beam.frame = t;

        if let Some(trace) = self.trace.as_mut() {
            let entries = self
                .beam
                .hypotheses
                .iter()
                .map(|h| TraceEntry {
                    labels: h.seq.clone(),
                    score: fl_fused_score(h, &self.weights),
                    prioritized: h.prioritized,
                    finished: false,
                })
                .collect();
            trace.steps.push(TraceStep { t, i: self.beam.lsync_step, entries, pruned });
        }
        Ok(())
    }

    /// Processes every remaining frame up to `horizon`.
    pub fn run_block(&mut self, horizon: usize) -> Result<()> {
        for t in self.beam.frame + 1..=horizon {
            self.step(t, horizon)?;
        }
        Ok(())
    }

    /// Rescores the final beam over the whole lattice.
    pub fn finish(mut self) -> Result<FlSyncOutput> {
        let frames = self.cache.lattice().frames();
        if self.beam.frame != frames {
            return Err(Error::SearchState(format!("finished at frame {} of {frames}", self.beam.frame)));
        }
        let seqs = self.beam.hypotheses.iter().map(|h| h.seq.clone());
        let ranked = rank_terminal(seqs, &mut self.cache, &self.scorers, &self.weights)?;
        Ok(FlSyncOutput { ranked, beam: self.beam, trace: self.trace, stats: self.stats })
    }
}

/// Runs the integrated search over `lattice` block by block.
pub fn flsync_decode(
    lattice: &EmissionMatrix,
    schedule: &BlockSchedule,
    scorers: &Scorers<'_>,
    weights: &ScoreWeights,
    beams: BeamConfig,
    options: &SearchOptions,
) -> Result<FlSyncOutput> {
    if schedule.total_frames() != lattice.frames() {
        return Err(Error::Config(format!(
            "schedule covers {} frames, lattice has {}",
            schedule.total_frames(),
            lattice.frames()
        )));
    }
    let mut search = FlSyncSearch::new(lattice, *scorers, *weights, beams, *options)?;
    for &horizon in schedule.horizons() {
        search.run_block(horizon)?;
    }
    search.finish()
}
