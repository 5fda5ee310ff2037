//! Label-synchronous scorers: `p(next | context, frames 1..horizon)` over
//! the labels plus end-of-sequence.

use std::collections::HashMap;

use crate::ctc::PrefixScoreCache;
use crate::error::{Error, Result};
use crate::semiring::{logsumexp, LogProb, LOG_ZERO};
use crate::types::{Label, Vocabulary};

/// Normalized log distribution over `V ∪ {eos}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NextLabelDist {
    pub labels: Vec<LogProb>,
    pub eos: LogProb,
}

impl NextLabelDist {
    pub fn uniform(num_labels: usize) -> Self {
        let p = -((num_labels + 1) as f64).ln();
        Self { labels: vec![p; num_labels], eos: p }
    }

    /// Normalizes unnormalized log-weights; falls back to uniform when all
    /// weights are zero.
    pub fn from_log_weights(mut labels: Vec<LogProb>, eos: LogProb) -> Self {
        let mut all = labels.clone();
        all.push(eos);
        let z = logsumexp(&all);
        if z == LOG_ZERO || !z.is_finite() {
            return Self::uniform(labels.len());
        }
        labels.iter_mut().for_each(|l| *l -= z);
        Self { labels, eos: eos - z }
    }

    #[inline]
    pub fn label(&self, label: Label) -> LogProb {
        self.labels[label.index()]
    }

    /// `ln sum exp` over all outcomes; 0 for a normalized distribution.
    pub fn log_total(&self) -> LogProb {
        let mut all = self.labels.clone();
        all.push(self.eos);
        logsumexp(&all)
    }
}

/// A label-synchronous model.
///
/// `ctc` gives access to the lattice frames `1..=horizon`; input-independent
/// scorers ignore it.
pub trait LabelScorer: Send + Sync {
    fn score_next(&self, context: &[Label], ctc: &mut PrefixScoreCache<'_>, horizon: usize) -> Result<NextLabelDist>;
}

/// Every outcome equally likely.
#[derive(Clone, Copy, Debug)]
pub struct UniformScorer {
    pub num_labels: usize,
}

impl LabelScorer for UniformScorer {
    fn score_next(
        &self,
        _context: &[Label],
        _ctc: &mut PrefixScoreCache<'_>,
        _horizon: usize,
    ) -> Result<NextLabelDist> {
        Ok(NextLabelDist::uniform(self.num_labels))
    }
}

/// Add-k smoothed n-gram model over label sequences.
///
/// Contexts are the previous `order - 1` tokens as token ids, padded on
/// the left with `<sos>`. Next-token counts are indexed by label, with
/// `<eos>` at index `num_labels`.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    k: f64,
    num_labels: usize,
    counts: HashMap<Vec<u32>, Vec<u64>>,
}

impl NGramModel {
    pub fn train(corpus: &[Vec<Label>], num_labels: usize, order: usize, k: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Training("corpus is empty".into()));
        }
        let mut model = Self::empty(num_labels, order, k)?;
        for seq in corpus {
            if let Some(bad) = seq.iter().find(|l| l.index() >= num_labels) {
                return Err(Error::Training(format!("label {bad} outside vocabulary of {num_labels}")));
            }
            for j in 0..=seq.len() {
                let next = if j == seq.len() { num_labels } else { seq[j].index() };
                let ctx = model.context(&seq[..j]);
                model.counts.entry(ctx).or_insert_with(|| vec![0; num_labels + 1])[next] += 1;
            }
        }
        Ok(model)
    }

    pub fn empty(num_labels: usize, order: usize, k: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Training("order must be at least 1".into()));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Training("smoothing constant must be positive".into()));
        }
        Ok(Self { order, k, num_labels, counts: HashMap::new() })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Context key for the next token after `history`.
    pub fn context(&self, history: &[Label]) -> Vec<u32> {
        let n = self.order - 1;
        let mut ctx = vec![Vocabulary::SOS_ID as u32; n.saturating_sub(history.len())];
        let take = n.min(history.len());
        ctx.extend(history[history.len() - take..].iter().map(|&l| Vocabulary::token_id(l) as u32));
        ctx
    }

    /// Adds `count` observations of `next` (`None` for `<eos>`) after `context`.
    pub fn add_count(&mut self, context: Vec<u32>, next: Option<Label>, count: u64) -> Result<()> {
        if context.len() != self.order - 1 {
            return Err(Error::Training(format!("context length {} for order {}", context.len(), self.order)));
        }
        let idx = match next {
            Some(l) if l.index() < self.num_labels => l.index(),
            Some(l) => return Err(Error::Training(format!("label {l} outside vocabulary"))),
            None => self.num_labels,
        };
        self.counts.entry(context).or_insert_with(|| vec![0; self.num_labels + 1])[idx] += count;
        Ok(())
    }

    /// Non-zero counts as `(context, next, count)`, sorted for stable output.
    pub fn entries(&self) -> Vec<(&[u32], Option<Label>, u64)> {
        let mut out: Vec<_> = self
            .counts
            .iter()
            .flat_map(|(ctx, row)| {
                row.iter().enumerate().filter(|(_, c)| **c > 0).map(move |(i, &c)| {
                    let next = (i < self.num_labels).then_some(Label(i as u32));
                    (ctx.as_slice(), next, c)
                })
            })
            .collect();
        out.sort_by(|a, b| {
            a.0.cmp(b.0).then(a.1.map(|l| l.0).unwrap_or(u32::MAX).cmp(&b.1.map(|l| l.0).unwrap_or(u32::MAX)))
        });
        out
    }

    pub fn next_dist(&self, history: &[Label]) -> NextLabelDist {
        let denom_extra = self.k * (self.num_labels + 1) as f64;
        match self.counts.get(&self.context(history)) {
            None => NextLabelDist::uniform(self.num_labels),
            Some(row) => {
                let total: u64 = row.iter().sum();
                let log_denom = (total as f64 + denom_extra).ln();
                let lp = |c: u64| (c as f64 + self.k).ln() - log_denom;
                NextLabelDist {
                    labels: row[..self.num_labels].iter().map(|&c| lp(c)).collect(),
                    eos: lp(row[self.num_labels]),
                }
            }
        }
    }
}

impl LabelScorer for NGramModel {
    fn score_next(&self, context: &[Label], _ctc: &mut PrefixScoreCache<'_>, _horizon: usize) -> Result<NextLabelDist> {
        Ok(self.next_dist(context))
    }
}

/// Stand-in for an attention decoder that sees every frame up to the
/// horizon: `p(v | Y) ∝ prefix_score(Y v)^(1/τ)` and
/// `p(eos | Y) ∝ full_sequence_prob(Y)^(1/τ)`.
///
/// At `τ = 1` the chain rule telescopes, so the implied distribution over
/// complete sequences is the CTC distribution itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateAttDec {
    temperature: f64,
}

impl SurrogateAttDec {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(Self { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Default for SurrogateAttDec {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

impl LabelScorer for SurrogateAttDec {
    fn score_next(&self, context: &[Label], ctc: &mut PrefixScoreCache<'_>, horizon: usize) -> Result<NextLabelDist> {
        let ext = ctc.extension_scores(context, horizon)?;
        let inv = 1.0 / self.temperature;
        let labels = ext.labels.iter().map(|&s| s * inv).collect();
        Ok(NextLabelDist::from_log_weights(labels, ext.stop * inv))
    }
}

/// The label scorers taking part in a search. A missing scorer contributes
/// zero to its fused term.
#[derive(Clone, Copy, Default)]
pub struct Scorers<'s> {
    pub lm: Option<&'s dyn LabelScorer>,
    pub att: Option<&'s dyn LabelScorer>,
}

/// Both scorers' distributions for one context.
#[derive(Clone, Debug, Default)]
pub struct NextScores {
    pub lm: Option<NextLabelDist>,
    pub att: Option<NextLabelDist>,
}

impl NextScores {
    /// `(lm, att)` log-probabilities of `next`, `None` meaning `<eos>`.
    pub fn get(&self, next: Option<Label>) -> (LogProb, LogProb) {
        let pick = |d: &Option<NextLabelDist>| match (d, next) {
            (None, _) => 0.0,
            (Some(d), Some(l)) => d.label(l),
            (Some(d), None) => d.eos,
        };
        (pick(&self.lm), pick(&self.att))
    }
}

/// Accumulated label-synchronous scores of a sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BetaTerms {
    pub lm: LogProb,
    pub att: LogProb,
    pub eos_lm: LogProb,
    pub eos_att: LogProb,
}

impl<'s> Scorers<'s> {
    pub fn new(lm: Option<&'s dyn LabelScorer>, att: Option<&'s dyn LabelScorer>) -> Self {
        Self { lm, att }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.lm.is_none() && self.att.is_none()
    }

    pub fn next(&self, context: &[Label], ctc: &mut PrefixScoreCache<'_>, horizon: usize) -> Result<NextScores> {
        let lm = self.lm.map(|s| s.score_next(context, ctc, horizon)).transpose()?;
        let att = self.att.map(|s| s.score_next(context, ctc, horizon)).transpose()?;
        Ok(NextScores { lm, att })
    }

    /// Recomputes the label-synchronous scores of `seq` from scratch at
    /// `horizon`, including the `<eos>` terms.
    pub fn beta(&self, seq: &[Label], ctc: &mut PrefixScoreCache<'_>, horizon: usize) -> Result<BetaTerms> {
        let mut beta = BetaTerms::default();
        if self.is_empty() {
            return Ok(beta);
        }
        for j in 0..=seq.len() {
            let next = self.next(&seq[..j], ctc, horizon)?;
            let (lm, att) = next.get(seq.get(j).copied());
            if j < seq.len() {
                beta.lm += lm;
                beta.att += att;
            } else {
                beta.eos_lm = lm;
                beta.eos_att = att;
            }
        }
        Ok(beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EmissionMatrix;
    use proptest::prelude::*;

    const A: Label = Label(0);
    const B: Label = Label(1);
    const C: Label = Label(2);

    fn toy_lm() -> NGramModel {
        let corpus = vec![vec![A, B], vec![A, B], vec![A, C]];
        NGramModel::train(&corpus, 3, 2, 1.0).unwrap()
    }

    #[test]
    fn lm_train_examples() {
        let lm = toy_lm();
        let after_a = lm.next_dist(&[A]);
        assert!((after_a.label(B).exp() - 3.0 / 7.0).abs() < 1e-12);
        assert!((lm.next_dist(&[B]).eos.exp() - 0.5).abs() < 1e-12);
        assert!(after_a.log_total().abs() < 1e-12);
        let trigram = NGramModel::train(&[vec![A, B], vec![A, B], vec![A, C]], 3, 3, 1.0).unwrap();
        let unseen = trigram.next_dist(&[C, B]);
        for p in unseen.labels.iter().chain([&unseen.eos]) {
            assert!((p.exp() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn lm_training_errors() {
        assert!(matches!(NGramModel::train(&[], 3, 2, 1.0), Err(Error::Training(_))));
        assert!(NGramModel::train(&[vec![A]], 3, 0, 1.0).is_err());
        assert!(NGramModel::train(&[vec![A]], 3, 2, 0.0).is_err());
        assert!(NGramModel::train(&[vec![Label(7)]], 3, 2, 1.0).is_err());
    }

    #[test]
    fn lm_context_padding() {
        let lm = NGramModel::empty(3, 3, 1.0).unwrap();
        let sos = Vocabulary::SOS_ID as u32;
        assert_eq!(lm.context(&[]), vec![sos, sos]);
        assert_eq!(lm.context(&[A]), vec![sos, 3]);
        assert_eq!(lm.context(&[A, B, C]), vec![4, 5]);
        assert!(NGramModel::empty(3, 1, 1.0).unwrap().context(&[A]).is_empty());
    }

    #[test]
    fn uniform_scorer() {
        let lat = EmissionMatrix::from_probs(&[vec![0.5, 0.5, 0.0, 0.0]]).unwrap();
        let mut cache = PrefixScoreCache::new(&lat);
        let d = UniformScorer { num_labels: 3 }.score_next(&[A], &mut cache, 1).unwrap();
        assert!(d.labels.iter().chain([&d.eos]).all(|p| (p - 0.25f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn surrogate_on_e1() {
        let lat = EmissionMatrix::from_probs(&[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
        let mut cache = PrefixScoreCache::new(&lat);
        let att = SurrogateAttDec::default();
        let d = att.score_next(&[], &mut cache, 2).unwrap();
        assert!((d.label(A).exp() - 0.8).abs() < 1e-12);
        assert!((d.eos.exp() - 0.2).abs() < 1e-12);
        let d = att.score_next(&[A], &mut cache, 2).unwrap();
        assert!(d.eos.abs() < 1e-12);
        assert_eq!(d.label(A), LOG_ZERO);
        assert!(SurrogateAttDec::new(0.0).is_err());
    }

    #[test]
    fn surrogate_unreachable_context_is_uniform() {
        let lat = EmissionMatrix::from_probs(&[vec![0.4, 0.6]]).unwrap();
        let mut cache = PrefixScoreCache::new(&lat);
        let d = SurrogateAttDec::default().score_next(&[A, A], &mut cache, 1).unwrap();
        assert_eq!(d, NextLabelDist::uniform(1));
    }

    #[test]
    fn beta_accumulates_with_eos() {
        let lm = toy_lm();
        let lat = EmissionMatrix::from_probs(&[vec![0.25, 0.25, 0.25, 0.25]]).unwrap();
        let mut cache = PrefixScoreCache::new(&lat);
        let scorers = Scorers::new(Some(&lm), None);
        let beta = scorers.beta(&[A, B], &mut cache, 1).unwrap();
        let expect = lm.next_dist(&[]).label(A) + lm.next_dist(&[A]).label(B);
        assert!((beta.lm - expect).abs() < 1e-12);
        assert!((beta.eos_lm - lm.next_dist(&[A, B]).eos).abs() < 1e-12);
        assert_eq!(beta.att, 0.0);
    }

    fn random_lattice(rows: Vec<Vec<f64>>) -> EmissionMatrix {
        EmissionMatrix::from_weights(&rows).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn scorers_are_normalized(
            rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 1..6),
            ctx in prop::collection::vec(0u32..3, 0..5),
            tau in 0.3f64..3.0,
            horizon_frac in 0.0f64..=1.0,
        ) {
            let lat = random_lattice(rows);
            let horizon = ((lat.frames() as f64) * horizon_frac).round() as usize;
            let ctx: Vec<Label> = ctx.into_iter().map(Label).collect();
            let mut cache = PrefixScoreCache::new(&lat);
            let lm = NGramModel::train(&[vec![A, B], vec![C]], 3, 2, 0.5).unwrap();
            let scorers: [&dyn LabelScorer; 3] = [
                &UniformScorer { num_labels: 3 },
                &lm,
                &SurrogateAttDec::new(tau).unwrap(),
            ];
            for s in scorers {
                let d = s.score_next(&ctx, &mut cache, horizon).unwrap();
                prop_assert!(d.log_total().abs() < 1e-8);
            }
            prop_assert_eq!(lm.next_dist(&ctx), lm.score_next(&ctx, &mut cache, horizon).unwrap());
        }
    }
}
