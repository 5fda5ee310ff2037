//! Exhaustive references, planted-truth lattices and strategy comparison.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::PrefixScoreCache;
use crate::error::{Error, Result};
use crate::flsync::flsync_decode;
use crate::fsync::fsync_decode;
use crate::fusion::{fused, rank, DecodedHypothesis, SearchOptions};
use crate::lsync::lsync_decode;
use crate::scorers::Scorers;
use crate::semiring::{log_add, LogProb, LOG_ZERO};
use crate::types::{collapse_alignment, BeamConfig, BlockSchedule, EmissionMatrix, Label, ScoreWeights, Vocabulary};

/// Largest candidate count the exhaustive searches will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Number of label sequences of length `0..=max_len`.
pub fn sequence_count(num_labels: usize, max_len: usize) -> u128 {
    let v = num_labels as u128;
    let mut total: u128 = 0;
    let mut layer: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(v);
    }
    total
}

/// Every sequence up to `max_len` labels with a finite terminal score,
/// ranked best first.
pub fn exhaustive_ranking(
    lattice: &EmissionMatrix,
    scorers: &Scorers<'_>,
    weights: &ScoreWeights,
    max_len: usize,
) -> Result<Vec<DecodedHypothesis>> {
    weights.validate()?;
    let count = sequence_count(lattice.num_labels(), max_len);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard { count, limit: ENUMERATION_LIMIT });
    }
    let mut walk = Walk {
        cache: PrefixScoreCache::new(lattice),
        scorers,
        weights,
        max_len,
        horizon: lattice.frames(),
        out: Vec::new(),
    };
    let mut seq = Vec::with_capacity(max_len);
    walk.visit(&mut seq, 0.0, 0.0)?;
    let mut out = walk.out;
    rank(&mut out);
    Ok(out)
}

pub fn exhaustive_best(
    lattice: &EmissionMatrix,
    scorers: &Scorers<'_>,
    weights: &ScoreWeights,
    max_len: usize,
) -> Result<DecodedHypothesis> {
    exhaustive_ranking(lattice, scorers, weights, max_len)?
        .into_iter()
        .next()
        .ok_or(Error::EmptyResult { partial: Vec::new() })
}

struct Walk<'a, 'b, 's> {
    cache: PrefixScoreCache<'a>,
    scorers: &'b Scorers<'s>,
    weights: &'b ScoreWeights,
    max_len: usize,
    horizon: usize,
    out: Vec<DecodedHypothesis>,
}

impl Walk<'_, '_, '_> {
    fn visit(&mut self, seq: &mut Vec<Label>, beta_lm: LogProb, beta_att: LogProb) -> Result<()> {
        let next = self.scorers.next(seq, &mut self.cache, self.horizon)?;
        let (eos_lm, eos_att) = next.get(None);
        let ctc = self.cache.full_sequence_prob(seq, self.horizon)?;
        let len = seq.len();
        let score = fused(self.weights, ctc, beta_lm + eos_lm, beta_att + eos_att, len);
        if score > f64::NEG_INFINITY {
            self.out.push(DecodedHypothesis {
                labels: seq.clone(),
                ctc,
                beta_lm,
                beta_att,
                eos_lm,
                eos_att,
                score,
                score_without_eos: fused(self.weights, ctc, beta_lm, beta_att, len),
            });
        }
        if len == self.max_len {
            return Ok(());
        }
        if self.weights.ctc > 0.0 && self.cache.prefix_score(seq, self.horizon)? == LOG_ZERO {
            return Ok(());
        }
        for v in 0..self.cache.lattice().num_labels() {
            let label = Label(v as u32);
            let (lm, att) = next.get(Some(label));
            seq.push(label);
            self.visit(seq, beta_lm + lm, beta_att + att)?;
            seq.pop();
        }
        Ok(())
    }
}

/// Probability of every label sequence, by summing over all alignments of
/// frames `1..=horizon`. Unreachable sequences are absent.
pub fn alignment_posteriors(lattice: &EmissionMatrix, horizon: usize) -> Result<BTreeMap<Vec<Label>, LogProb>> {
    if horizon > lattice.frames() {
        return Err(Error::Horizon { frame: horizon, limit: lattice.frames() });
    }
    let width = lattice.num_labels() + 1;
    let count = (width as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard { count, limit: ENUMERATION_LIMIT });
    }
    let mut out: BTreeMap<Vec<Label>, LogProb> = BTreeMap::new();
    let mut alignment = vec![0usize; horizon];
    loop {
        let mut log_p = 0.0;
        for (t, &col) in alignment.iter().enumerate() {
            let row = lattice.row(t);
            log_p += if col == 0 { row.blank() } else { row.label(Label(col as u32 - 1)) };
        }
        if log_p > LOG_ZERO {
            let seq = collapse_alignment(&alignment, lattice.num_labels())?;
            let slot = out.entry(seq).or_insert(LOG_ZERO);
            *slot = log_add(*slot, log_p);
        }
        // Odometer increment over columns.
        let mut k = 0;
        loop {
            if k == horizon {
                return Ok(out);
            }
            alignment[k] += 1;
            if alignment[k] < width {
                break;
            }
            alignment[k] = 0;
            k += 1;
        }
    }
}

/// Early frames where decoy labels outweigh the first truth label.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialPrefix {
    pub frames: usize,
    pub decoys: Vec<Label>,
    /// Each decoy's weight is drawn from this range, relative to the first
    /// truth label and to blank, which both get weight 1.
    pub decoy_weight: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub truth: Vec<Label>,
    pub num_labels: usize,
    pub frames_per_label: usize,
    /// Mass spread over confusable labels on every truth frame.
    pub noise: f64,
    pub adversarial_prefix: Option<AdversarialPrefix>,
    pub seed: u64,
}

/// Builds a lattice whose frames spell out `spec.truth`.
///
/// Each truth label spans `frames_per_label` frames where it takes a random
/// share of `1 - noise`, blank taking the rest of that mass; `noise` is
/// spread at random over the other labels. Repeated truth labels are
/// separated by a blank frame. An adversarial prefix is prepended.
pub fn generate_lattice(spec: &SyntheticSpec) -> Result<EmissionMatrix> {
    if !(0.0..1.0).contains(&spec.noise) {
        return Err(Error::Lattice(format!("noise {} outside [0, 1)", spec.noise)));
    }
    if spec.truth.is_empty() {
        return Err(Error::Lattice("truth must be non-empty".into()));
    }
    if spec.frames_per_label == 0 {
        return Err(Error::Lattice("frames per label must be positive".into()));
    }
    let v = spec.num_labels;
    for &l in &spec.truth {
        if l.index() >= v {
            return Err(Error::InvalidToken { index: l.index(), size: v });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows: Vec<Vec<f64>> = Vec::new();

    if let Some(adv) = &spec.adversarial_prefix {
        let first = spec.truth[0];
        let (lo, hi) = adv.decoy_weight;
        if adv.decoys.iter().any(|&d| d == first || d.index() >= v) || !(0.0 < lo && lo <= hi) {
            return Err(Error::Lattice("invalid adversarial prefix".into()));
        }
        for _ in 0..adv.frames {
            let mut row = vec![0.0; v + 1];
            for w in row.iter_mut().skip(1) {
                *w = rng.gen_range(0.0..0.5);
            }
            row[0] = 1.0;
            row[first.index() + 1] = 1.0;
            for &d in &adv.decoys {
                row[d.index() + 1] = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            }
            rows.push(row);
        }
    }

    let clean = 1.0 - spec.noise;
    let push_frame = |rows: &mut Vec<Vec<f64>>, rng: &mut ChaCha8Rng, label: Option<Label>| {
        let mut row = vec![0.0; v + 1];
        let confusions: Vec<usize> = (0..v).filter(|&k| Some(Label(k as u32)) != label).collect();
        if spec.noise > 0.0 && !confusions.is_empty() {
            let weights: Vec<f64> = confusions.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (&k, w) in confusions.iter().zip(&weights) {
                row[k + 1] = spec.noise * w / total;
            }
        } else {
            // Nothing to confuse with; blank absorbs the mass.
            row[0] += spec.noise;
        }
        match label {
            Some(l) => {
                let share = rng.gen_range(0.6..0.95);
                row[l.index() + 1] += clean * share;
                row[0] += clean * (1.0 - share);
            }
            None => row[0] += clean,
        }
        rows.push(row);
    };
    for (j, &l) in spec.truth.iter().enumerate() {
        if j > 0 && spec.truth[j - 1] == l {
            push_frame(&mut rows, &mut rng, None);
        }
        for _ in 0..spec.frames_per_label {
            push_frame(&mut rows, &mut rng, Some(l));
        }
    }
    EmissionMatrix::from_weights(&rows)
}

/// Adversarial specs over 13 labels: truths of two or three labels drawn
/// from labels 0..3, one prefix frame where labels 3..13 act as decoys.
pub fn adversarial_suite(count: usize, seed: u64) -> Vec<SyntheticSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decoys: Vec<Label> = (3..13).map(Label).collect();
    (0..count)
        .map(|_| {
            let len = rng.gen_range(2..=3);
            let truth = (0..len).map(|_| Label(rng.gen_range(0..3))).collect();
            SyntheticSpec {
                truth,
                num_labels: 13,
                frames_per_label: 3,
                noise: 0.1,
                adversarial_prefix: Some(AdversarialPrefix {
                    frames: 1,
                    decoys: decoys.clone(),
                    decoy_weight: (1.2, 1.6),
                }),
                seed: rng.gen(),
            }
        })
        .collect()
}

/// Plain noisy specs with random sizes, for broad coverage.
pub fn random_suite(count: usize, seed: u64) -> Vec<SyntheticSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let num_labels = rng.gen_range(2..=6);
            let len = rng.gen_range(1..=4);
            SyntheticSpec {
                truth: (0..len).map(|_| Label(rng.gen_range(0..num_labels as u32))).collect(),
                num_labels,
                frames_per_label: rng.gen_range(1..=3),
                noise: rng.gen_range(0.0..0.6),
                adversarial_prefix: None,
                seed: rng.gen(),
            }
        })
        .collect()
}

/// Levenshtein distance with unit costs and its rate over
/// `max(1, |reference|)`.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (usize, f64) {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[hypothesis.len()];
    (d, d as f64 / reference.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    Fsync,
    Lsync,
    Flsync,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Fsync, Strategy::Lsync, Strategy::Flsync];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Fsync => "fsync",
            Strategy::Lsync => "lsync",
            Strategy::Flsync => "flsync",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// How one strategy fared on one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyReport {
    pub strategy: Strategy,
    /// The exhaustive best is among the final hypotheses.
    pub retained: bool,
    /// Frame (label step for the label-synchronous search) after which the
    /// exhaustive best could no longer be produced.
    pub first_drop: Option<usize>,
    pub best: Vec<Label>,
    pub best_score: f64,
    pub edit_distance: usize,
    pub error_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneReport {
    pub truth: Vec<Label>,
    pub reference: DecodedHypothesis,
    pub strategies: Vec<StrategyReport>,
}

impl PruneReport {
    pub fn get(&self, strategy: Strategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|r| r.strategy == strategy)
    }

    /// One line per strategy:
    /// `strategy<TAB>retained<TAB>first_drop<TAB>distance<TAB>best`, with
    /// `-` for no drop.
    pub fn write_records<W: Write>(&self, vocab: &Vocabulary, out: &mut W) -> io::Result<()> {
        for r in &self.strategies {
            let drop = r.first_drop.map_or_else(|| "-".to_string(), |d| d.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.strategy.name(),
                u8::from(r.retained),
                drop,
                r.edit_distance,
                vocab.render(&r.best)
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompareConfig {
    pub weights: ScoreWeights,
    pub beams: BeamConfig,
    pub hop: usize,
    pub options: SearchOptions,
    /// Length bound for the exhaustive reference.
    pub oracle_max_len: usize,
}

/// Runs the three strategies and the exhaustive reference on one lattice.
/// The baselines use the total beam width `B'`.
pub fn compare_strategies(
    lattice: &EmissionMatrix,
    truth: &[Label],
    scorers: &Scorers<'_>,
    config: &CompareConfig,
) -> Result<PruneReport> {
    let reference = exhaustive_best(lattice, scorers, &config.weights, config.oracle_max_len)?;
    let options = config.options.with_trace();
    let schedule = BlockSchedule::with_hop(config.hop, lattice.frames())?;
    let total = config.beams.total;

    let f = fsync_decode(lattice, scorers, &config.weights, total, &options)?;
    let l = lsync_decode(lattice, scorers, &config.weights, total, &options)?;
    let fl = flsync_decode(lattice, &schedule, scorers, &config.weights, config.beams, &options)?;

    let report = |strategy, ranked: &[DecodedHypothesis], drop: Option<usize>| {
        let best = ranked.first().map(|h| h.labels.clone()).unwrap_or_default();
        let (edit_distance, error_rate) = edit_distance(truth, &best);
        StrategyReport {
            strategy,
            retained: ranked.iter().any(|h| h.labels == reference.labels),
            first_drop: drop,
            best_score: ranked.first().map_or(f64::NEG_INFINITY, |h| h.score),
            best,
            edit_distance,
            error_rate,
        }
    };
    let target = &reference.labels;
    let strategies = vec![
        report(Strategy::Fsync, &f.ranked, f.trace.as_ref().and_then(|t| t.first_drop(target, false))),
        report(Strategy::Lsync, &l.ranked, l.trace.as_ref().and_then(|t| t.first_drop(target, true))),
        report(Strategy::Flsync, &fl.ranked, fl.trace.as_ref().and_then(|t| t.first_drop(target, false))),
    ];
    Ok(PruneReport { truth: truth.to_vec(), reference, strategies })
}

/// Per-strategy totals over a set of reports.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteSummary {
    pub utterances: usize,
    retained: [usize; 3],
    distance: [usize; 3],
    reference_words: usize,
}

impl SuiteSummary {
    pub fn add(&mut self, report: &PruneReport) {
        self.utterances += 1;
        self.reference_words += report.truth.len();
        for r in &report.strategies {
            let k = r.strategy as usize;
            self.retained[k] += usize::from(r.retained);
            self.distance[k] += r.edit_distance;
        }
    }

    pub fn retention_rate(&self, strategy: Strategy) -> f64 {
        self.retained[strategy as usize] as f64 / self.utterances.max(1) as f64
    }

    pub fn mean_edit_distance(&self, strategy: Strategy) -> f64 {
        self.distance[strategy as usize] as f64 / self.utterances.max(1) as f64
    }

    /// Total distance over total reference length.
    pub fn error_rate(&self, strategy: Strategy) -> f64 {
        self.distance[strategy as usize] as f64 / self.reference_words.max(1) as f64
    }

    pub fn write_table<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "strategy\tutterances\tretention\tmean_distance\terror_rate")?;
        for s in Strategy::ALL {
            writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                s.name(),
                self.utterances,
                self.retention_rate(s),
                self.mean_edit_distance(s),
                self.error_rate(s)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&seq("abc"), &seq("abd")), (1, 1.0 / 3.0));
        assert_eq!(edit_distance(&seq("abc"), &seq("abc")), (0, 0.0));
        assert_eq!(edit_distance(&seq(""), &seq("ab")), (2, 2.0));
        assert_eq!(edit_distance(&seq("kitten"), &seq("sitting")).0, 3);
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(a in "[abc]{0,6}", b in "[abc]{0,6}", c in "[abc]{0,6}") {
            let (a, b, c) = (seq(&a), seq(&b), seq(&c));
            let d = |x: &[char], y: &[char]| edit_distance(x, y).0;
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert_eq!(d(&a, &a), 0);
        }

        #[test]
        fn generated_rows_are_normalized(
            truth in proptest::collection::vec(0u32..4, 1..4),
            fpl in 1usize..4,
            noise in 0.0f64..0.95,
            seed in any::<u64>(),
            adversarial in any::<bool>(),
        ) {
            let truth: Vec<Label> = truth.into_iter().map(Label).collect();
            let adversarial_prefix = (adversarial && truth[0] != Label(4)).then(|| AdversarialPrefix {
                frames: 2,
                decoys: vec![Label(4), Label(5)],
                decoy_weight: (1.2, 1.8),
            });
            let spec = SyntheticSpec { truth, num_labels: 6, frames_per_label: fpl, noise, adversarial_prefix, seed };
            let m = generate_lattice(&spec).unwrap();
            for row in m.prob_rows() {
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_lattice_greedy_decodes_to_truth() {
        for truth in [vec![Label(0)], vec![Label(1), Label(1), Label(0)], vec![Label(2), Label(0), Label(1)]] {
            let spec = SyntheticSpec {
                truth: truth.clone(),
                num_labels: 3,
                frames_per_label: 2,
                noise: 0.0,
                adversarial_prefix: None,
                seed: 9,
            };
            let m = generate_lattice(&spec).unwrap();
            let greedy: Vec<usize> =
                m.prob_rows().map(|r| (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap()).collect();
            assert_eq!(collapse_alignment(&greedy, 3).unwrap(), truth);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = |seed| SyntheticSpec {
            truth: vec![Label(0), Label(1)],
            num_labels: 3,
            frames_per_label: 2,
            noise: 0.3,
            adversarial_prefix: None,
            seed,
        };
        assert_eq!(generate_lattice(&spec(4)).unwrap(), generate_lattice(&spec(4)).unwrap());
        assert_ne!(generate_lattice(&spec(4)).unwrap(), generate_lattice(&spec(5)).unwrap());
    }

    #[test]
    fn generation_rejects_bad_specs() {
        let base = SyntheticSpec {
            truth: vec![Label(0)],
            num_labels: 2,
            frames_per_label: 1,
            noise: 1.0,
            adversarial_prefix: None,
            seed: 0,
        };
        assert!(generate_lattice(&base).is_err());
        assert!(generate_lattice(&SyntheticSpec { noise: 0.1, truth: vec![], ..base.clone() }).is_err());
        let adv = AdversarialPrefix { frames: 1, decoys: vec![Label(0)], decoy_weight: (1.5, 1.9) };
        assert!(generate_lattice(&SyntheticSpec { noise: 0.1, adversarial_prefix: Some(adv), ..base }).is_err());
    }

    #[test]
    fn exhaustive_examples() {
        let e1 = EmissionMatrix::from_probs(&[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
        let best = exhaustive_best(&e1, &Scorers::none(), &ScoreWeights::ctc_only(), 2).unwrap();
        assert_eq!(best.labels, vec![Label(0)]);
        assert!((best.score - 0.8f64.ln()).abs() < 1e-12);

        let blank = EmissionMatrix::from_probs(&[vec![1.0, 0.0]]).unwrap();
        let best = exhaustive_best(&blank, &Scorers::none(), &ScoreWeights::ctc_only(), 1).unwrap();
        assert!(best.labels.is_empty());
        assert_eq!(best.score, 0.0);

        let length = ScoreWeights::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let best = exhaustive_best(&e1, &Scorers::none(), &length, 2).unwrap();
        assert_eq!(best.labels.len(), 2);
    }

    #[test]
    fn enumeration_guard() {
        let m = EmissionMatrix::from_weights(&[vec![1.0; 11]]).unwrap();
        let r = exhaustive_ranking(&m, &Scorers::none(), &ScoreWeights::ctc_only(), 6);
        assert!(matches!(r, Err(Error::EnumerationGuard { .. })));
        assert_eq!(sequence_count(2, 2), 7);
    }

    #[test]
    fn alignment_posteriors_sum_to_one() {
        let e1 = EmissionMatrix::from_probs(&[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
        let post = alignment_posteriors(&e1, 2).unwrap();
        assert_eq!(post.len(), 2);
        assert!((post[&vec![Label(0)]] - 0.8f64.ln()).abs() < 1e-12);
        assert!((post[&vec![]] - 0.2f64.ln()).abs() < 1e-12);
    }
}
