//! Label-synchronous joint search.
//!
//! Each step extends every unfinished hypothesis by one label or `<eos>`,
//! scoring the CTC term with the prefix probability over the whole lattice.

use crate::ctc::PrefixScoreCache;
use crate::error::{Error, Result};
use crate::fusion::{fused, rank, rank_order, DecodedHypothesis, SearchOptions};
use crate::scorers::Scorers;
use crate::semiring::LogProb;
use crate::trace::{DecodeTrace, TraceEntry, TraceStep};
use crate::types::{EmissionMatrix, Label, ScoreWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct LHypothesis {
    pub seq: Vec<Label>,
    /// Prefix probability while unfinished, full sequence probability once
    /// finished.
    pub ctc: LogProb,
    pub beta_lm: LogProb,
    pub beta_att: LogProb,
    /// `<eos>` terms; zero until finished.
    pub eos_lm: LogProb,
    pub eos_att: LogProb,
    pub finished: bool,
}

impl LHypothesis {
    pub fn initial() -> Self {
        Self { seq: Vec::new(), ctc: 0.0, beta_lm: 0.0, beta_att: 0.0, eos_lm: 0.0, eos_att: 0.0, finished: false }
    }

    fn into_decoded(self, weights: &ScoreWeights) -> DecodedHypothesis {
        DecodedHypothesis {
            score: lsync_joint_score(&self, weights),
            score_without_eos: fused(weights, self.ctc, self.beta_lm, self.beta_att, self.seq.len()),
            ctc: self.ctc,
            beta_lm: self.beta_lm,
            beta_att: self.beta_att,
            eos_lm: self.eos_lm,
            eos_att: self.eos_att,
            labels: self.seq,
        }
    }
}

pub fn lsync_joint_score(h: &LHypothesis, weights: &ScoreWeights) -> f64 {
    fused(weights, h.ctc, h.beta_lm + h.eos_lm, h.beta_att + h.eos_att, h.seq.len())
}

#[derive(Clone, Debug)]
pub struct LsyncOutput {
    /// Finished hypotheses, best first.
    pub ranked: Vec<DecodedHypothesis>,
    pub trace: Option<DecodeTrace>,
}

impl LsyncOutput {
    pub fn best(&self) -> Option<&DecodedHypothesis> {
        self.ranked.first()
    }
}

/// Runs the label-synchronous search with `beam_size` unfinished
/// hypotheses per step. Hypotheses reach at most `options.max_len` labels,
/// defaulting to the frame count.
pub fn lsync_decode(
    lattice: &EmissionMatrix,
    scorers: &Scorers<'_>,
    weights: &ScoreWeights,
    beam_size: usize,
    options: &SearchOptions,
) -> Result<LsyncOutput> {
    weights.validate()?;
    if beam_size == 0 {
        return Err(Error::Config("beam size must be positive".into()));
    }
    let horizon = lattice.frames();
    let max_len = options.max_len.unwrap_or(horizon);
    let mut cache = PrefixScoreCache::with_capacity(lattice, options.cache_capacity);
    let mut trace = options.trace.then(DecodeTrace::default);
    let mut beam = vec![LHypothesis::initial()];
    let mut finished: Vec<LHypothesis> = Vec::new();

    for i in 1..=max_len + 1 {
        let mut candidates: Vec<(f64, LHypothesis)> = Vec::new();
        let mut ended = Vec::new();
        for h in &beam {
            let ext = cache.extension_scores(&h.seq, horizon)?;
            let next = scorers.next(&h.seq, &mut cache, horizon)?;
            let (eos_lm, eos_att) = next.get(None);
            let done = LHypothesis { ctc: ext.stop, eos_lm, eos_att, finished: true, ..h.clone() };
            if lsync_joint_score(&done, weights) > f64::NEG_INFINITY {
                ended.push(done);
            }
            if h.seq.len() >= max_len {
                continue;
            }
            for (v, &ctc) in ext.labels.iter().enumerate() {
                let label = Label(v as u32);
                let (lm, att) = next.get(Some(label));
                let mut seq = h.seq.clone();
                seq.push(label);
                let child = LHypothesis {
                    seq,
                    ctc,
                    beta_lm: h.beta_lm + lm,
                    beta_att: h.beta_att + att,
                    eos_lm: 0.0,
                    eos_att: 0.0,
                    finished: false,
                };
                let score = lsync_joint_score(&child, weights);
                if score > f64::NEG_INFINITY {
                    candidates.push((score, child));
                }
            }
        }
        candidates.sort_by(|a, b| rank_order(a.0, &a.1.seq, b.0, &b.1.seq));
        candidates.truncate(beam_size);
        beam = candidates.into_iter().map(|(_, h)| h).collect();
        if let Some(trace) = trace.as_mut() {
            let entries = beam
                .iter()
                .chain(&ended)
                .map(|h| TraceEntry {
                    labels: h.seq.clone(),
                    score: lsync_joint_score(h, weights),
                    prioritized: false,
                    finished: h.finished,
                })
                .collect();
            trace.steps.push(TraceStep { t: horizon, i, entries, pruned: Vec::new() });
        }
        finished.append(&mut ended);
        if beam.is_empty() {
            break;
        }
    }

    if finished.is_empty() {
        return Err(Error::EmptyResult { partial: beam.into_iter().map(|h| h.seq).collect() });
    }
    let mut ranked: Vec<DecodedHypothesis> = finished.into_iter().map(|h| h.into_decoded(weights)).collect();
    rank(&mut ranked);
    Ok(LsyncOutput { ranked, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::full_sequence_prob;
    use crate::scorers::SurrogateAttDec;

    #[test]
    fn finds_best_sequence_on_small_lattice() {
        let lattice = EmissionMatrix::from_probs(&[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
        let out =
            lsync_decode(&lattice, &Scorers::none(), &ScoreWeights::ctc_only(), 4, &SearchOptions::exact()).unwrap();
        assert_eq!(out.ranked[0].labels, vec![Label(0)]);
        assert!((out.ranked[0].score - 0.8f64.ln()).abs() < 1e-12);
        assert_eq!(out.ranked[1].labels, Vec::<Label>::new());
        assert_eq!(out.ranked.len(), 2);
    }

    #[test]
    fn finished_scores_are_terminal() {
        let lattice =
            EmissionMatrix::from_probs(&[vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.1, 0.2, 0.7]]).unwrap();
        let att = SurrogateAttDec::default();
        let scorers = Scorers::new(None, Some(&att));
        let w = ScoreWeights::new(0.5, 0.0, 0.5, 0.5).unwrap();
        let out = lsync_decode(&lattice, &scorers, &w, 3, &SearchOptions::exact()).unwrap();
        let mut cache = PrefixScoreCache::new(&lattice);
        for h in &out.ranked {
            let t = DecodedHypothesis::terminal(h.labels.clone(), &mut cache, &scorers, &w).unwrap();
            assert!((t.score - h.score).abs() < 1e-9);
            assert!((h.ctc - full_sequence_prob(&h.labels, &lattice, 3).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn max_len_bounds_length() {
        let lattice = EmissionMatrix::from_probs(&[vec![0.1, 0.9], vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let opts = SearchOptions { max_len: Some(1), ..SearchOptions::exact() };
        let out = lsync_decode(&lattice, &Scorers::none(), &ScoreWeights::ctc_only(), 4, &opts).unwrap();
        assert!(out.ranked.iter().all(|h| h.labels.len() <= 1));
    }

    #[test]
    fn unreachable_lattice_is_an_error() {
        // Blank never fires, so every output has one label.
        let lattice = EmissionMatrix::from_probs(&[vec![0.0, 1.0]]).unwrap();
        let opts = SearchOptions { max_len: Some(0), ..SearchOptions::exact() };
        let r = lsync_decode(&lattice, &Scorers::none(), &ScoreWeights::ctc_only(), 2, &opts);
        assert!(matches!(r, Err(Error::EmptyResult { .. })));
    }
}
