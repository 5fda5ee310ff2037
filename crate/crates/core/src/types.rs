//! Shared domain types.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::semiring::{logsumexp, LogProb, LOG_ONE, LOG_ZERO};

/// Index of a non-reserved output label, `0..vocab.len()`.
///
/// Blank, start-of-sequence and end-of-sequence are not representable as a
/// `Label`, so a `[Label]` never contains a reserved token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u32);

impl Label {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const BLANK_NAME: &str = "<blank>";
pub const SOS_NAME: &str = "<sos>";
pub const EOS_NAME: &str = "<eos>";

/// Output alphabet with its three reserved tokens.
///
/// Token ids are fixed: 0 is blank, 1 is `<sos>`, 2 is `<eos>` and label
/// `k` has token id `k + 3`. Emission columns use a different layout: column
/// 0 is blank and column `k + 1` is label `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    labels: Vec<String>,
    index: HashMap<String, Label>,
}

impl Vocabulary {
    pub const BLANK_ID: usize = 0;
    pub const SOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;
    const FIRST_LABEL_ID: usize = 3;

    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Config("vocabulary needs at least one label".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("label {l:?} is empty or has whitespace")));
            }
            if l == BLANK_NAME || l == SOS_NAME || l == EOS_NAME {
                return Err(Error::Config(format!("label {l:?} is reserved")));
            }
            if index.insert(l.clone(), Label(i as u32)).is_some() {
                return Err(Error::Config(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    /// Labels named `l0`, `l1`, ...
    pub fn numbered(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| format!("l{i}")))
    }

    /// Number of non-reserved labels, `|V|`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, label: Label) -> &str {
        &self.labels[label.index()]
    }

    pub fn lookup(&self, name: &str) -> Option<Label> {
        self.index.get(name).copied()
    }

    pub fn token_id(label: Label) -> usize {
        label.index() + Self::FIRST_LABEL_ID
    }

    /// Token ids covering the whole alphabet including reserved entries.
    pub fn token_count(&self) -> usize {
        self.labels.len() + Self::FIRST_LABEL_ID
    }

    pub fn label_of_token(&self, id: usize) -> Result<Label> {
        if id < Self::FIRST_LABEL_ID || id >= self.token_count() {
            return Err(Error::InvalidToken { index: id, size: self.token_count() });
        }
        Ok(Label((id - Self::FIRST_LABEL_ID) as u32))
    }

    /// Parses whitespace-separated label names.
    pub fn parse_sequence(&self, text: &str) -> Result<Vec<Label>> {
        text.split_whitespace()
            .map(|w| self.lookup(w).ok_or_else(|| Error::Config(format!("unknown label {w:?}"))))
            .collect()
    }

    pub fn render(&self, seq: &[Label]) -> String {
        let names: Vec<&str> = seq.iter().map(|&l| self.name(l)).collect();
        names.join(" ")
    }
}

/// One frame of the posterior lattice.
#[derive(Clone, Copy, Debug)]
pub struct FrameRow<'a> {
    log_probs: &'a [LogProb],
    probs: &'a [f64],
}

impl<'a> FrameRow<'a> {
    #[inline]
    pub fn blank(&self) -> LogProb {
        self.log_probs[0]
    }

    #[inline]
    pub fn label(&self, label: Label) -> LogProb {
        self.log_probs[label.index() + 1]
    }

    /// Linear-domain label probabilities, indexed by label.
    #[inline]
    pub fn label_probs(&self) -> &'a [f64] {
        &self.probs[1..]
    }

    /// Log-probabilities of labels only, indexed by label.
    #[inline]
    pub fn label_log_probs(&self) -> &'a [LogProb] {
        &self.log_probs[1..]
    }

    pub fn num_labels(&self) -> usize {
        self.log_probs.len() - 1
    }
}

/// Per-frame posterior distribution over blank and the labels.
///
/// Rows are stored twice, as probabilities and as natural logs. Equality
/// compares the probabilities.
#[derive(Clone, Debug)]
pub struct EmissionMatrix {
    frames: usize,
    width: usize,
    probs: Vec<f64>,
    log_probs: Vec<LogProb>,
}

impl PartialEq for EmissionMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.frames == other.frames && self.width == other.width && self.probs == other.probs
    }
}

/// Tolerance on `|sum(row) - 1|` accepted by the constructors.
pub const ROW_TOLERANCE: f64 = 1e-9;

impl EmissionMatrix {
    /// Builds a lattice from probability rows laid out as `[blank, l0, l1, ...]`.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let (frames, width) = Self::check_shape(rows)?;
        let mut probs = Vec::with_capacity(frames * width);
        for (t, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Lattice(format!("row {t} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Lattice(format!("row {t} sums to {sum}")));
            }
            probs.extend_from_slice(row);
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { frames, width, probs, log_probs })
    }

    /// Builds a lattice from natural-log rows laid out as `[blank, l0, l1, ...]`.
    pub fn from_log_probs(rows: &[Vec<LogProb>]) -> Result<Self> {
        let (frames, width) = Self::check_shape(rows)?;
        let mut log_probs = Vec::with_capacity(frames * width);
        for (t, row) in rows.iter().enumerate() {
            if row.iter().any(|v| v.is_nan() || *v > 0.0) {
                return Err(Error::Lattice(format!("row {t} has an invalid log-probability")));
            }
            let total = logsumexp(row);
            if total.is_infinite() || total.abs() > ROW_TOLERANCE {
                return Err(Error::Lattice(format!("row {t} has log-mass {total}")));
            }
            log_probs.extend_from_slice(row);
        }
        let probs = log_probs.iter().map(|v| v.exp()).collect();
        Ok(Self { frames, width, probs, log_probs })
    }

    /// Normalizes each row of non-negative weights and builds the lattice.
    pub fn from_weights(rows: &[Vec<f64>]) -> Result<Self> {
        let mut normalized = Vec::with_capacity(rows.len());
        for (t, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) || row.iter().any(|w| *w < 0.0) {
                return Err(Error::Lattice(format!("row {t} cannot be normalized")));
            }
            normalized.push(row.iter().map(|w| w / sum).collect());
        }
        Self::from_probs(&normalized)
    }

    fn check_shape<T>(rows: &[Vec<T>]) -> Result<(usize, usize)> {
        if rows.is_empty() {
            return Err(Error::Lattice("lattice needs at least one frame".into()));
        }
        let width = rows[0].len();
        if width < 2 {
            return Err(Error::Lattice("rows need blank plus at least one label".into()));
        }
        if let Some(t) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Lattice(format!("row {t} has {} entries, expected {width}", rows[t].len())));
        }
        Ok((rows.len(), width))
    }

    /// Frame count `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Label count `|V|` (row width minus blank).
    pub fn num_labels(&self) -> usize {
        self.width - 1
    }

    /// Row for zero-based index `idx`; frame `t` (1-based) is `row(t - 1)`.
    #[inline]
    pub fn row(&self, idx: usize) -> FrameRow<'_> {
        let s = idx * self.width;
        FrameRow { log_probs: &self.log_probs[s..s + self.width], probs: &self.probs[s..s + self.width] }
    }

    pub fn prob_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.width)
    }

    /// Truncates to the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> Result<Self> {
        if frames == 0 || frames > self.frames {
            return Err(Error::Horizon { frame: frames, limit: self.frames });
        }
        Ok(Self {
            frames,
            width: self.width,
            probs: self.probs[..frames * self.width].to_vec(),
            log_probs: self.log_probs[..frames * self.width].to_vec(),
        })
    }
}

/// Forward mass of one label sequence at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtcState {
    /// Alignments ending in blank.
    pub gamma_b: LogProb,
    /// Alignments ending in the last label.
    pub gamma_n: LogProb,
    pub frame: usize,
}

impl CtcState {
    /// The empty sequence before any frame.
    pub const fn initial() -> Self {
        Self { gamma_b: LOG_ONE, gamma_n: LOG_ZERO, frame: 0 }
    }

    pub const fn unreachable(frame: usize) -> Self {
        Self { gamma_b: LOG_ZERO, gamma_n: LOG_ZERO, frame }
    }

    pub fn is_dead(&self) -> bool {
        self.gamma_b == LOG_ZERO && self.gamma_n == LOG_ZERO
    }
}

/// Log-linear fusion weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreWeights {
    pub ctc: f64,
    pub lm: f64,
    pub att: f64,
    /// Reward per label; may be negative.
    pub len: f64,
}

impl ScoreWeights {
    pub fn new(ctc: f64, lm: f64, att: f64, len: f64) -> Result<Self> {
        let w = Self { ctc, lm, att, len };
        w.validate()?;
        Ok(w)
    }

    pub fn ctc_only() -> Self {
        Self { ctc: 1.0, lm: 0.0, att: 0.0, len: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.ctc, self.lm, self.att, self.len];
        if all.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("fusion weights must be finite".into()));
        }
        if self.ctc < 0.0 || self.lm < 0.0 || self.att < 0.0 {
            return Err(Error::Config("ctc, lm and att weights must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for ScoreWeights {
    /// `lm = 0.3`, `ctc = 0.5`, `att = 1 - ctc`, `len = 1`.
    fn default() -> Self {
        Self { ctc: 0.5, lm: 0.3, att: 0.5, len: 1.0 }
    }
}

/// Beam capacities: `total` hypotheses overall, of which at most `lsync`
/// come from the label-synchronous step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub total: usize,
    pub lsync: usize,
}

impl BeamConfig {
    pub fn new(total: usize, lsync: usize) -> Result<Self> {
        if lsync == 0 || lsync > total {
            return Err(Error::Config(format!("beam sizes need 1 <= B ({lsync}) <= B' ({total})")));
        }
        Ok(Self { total, lsync })
    }

    /// Large enough to never prune at desk scale.
    pub fn unbounded() -> Self {
        Self { total: usize::MAX / 2, lsync: usize::MAX / 2 }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { total: 10, lsync: 5 }
    }
}

pub const DEFAULT_HOP: usize = 16;

/// Increasing sequence of streaming horizons ending at the last frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSchedule {
    hop: usize,
    total_frames: usize,
    horizons: Vec<usize>,
}

impl BlockSchedule {
    /// Horizons `hop, 2*hop, ...`, closed by `total_frames`.
    pub fn with_hop(hop: usize, total_frames: usize) -> Result<Self> {
        if hop == 0 || total_frames == 0 {
            return Err(Error::Config("hop and frame count must be positive".into()));
        }
        let mut horizons: Vec<usize> = (1..).map(|b| b * hop).take_while(|&h| h < total_frames).collect();
        horizons.push(total_frames);
        Ok(Self { hop, total_frames, horizons })
    }

    /// The whole lattice as one block.
    pub fn single_block(total_frames: usize) -> Result<Self> {
        Self::with_hop(total_frames.max(1), total_frames)
    }

    pub fn from_horizons(horizons: Vec<usize>, total_frames: usize) -> Result<Self> {
        if horizons.is_empty() || horizons.last() != Some(&total_frames) {
            return Err(Error::Config("last horizon must equal the frame count".into()));
        }
        if horizons[0] == 0 || horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("horizons must be positive and strictly increasing".into()));
        }
        let hop = horizons[0];
        Ok(Self { hop, total_frames, horizons })
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn horizons(&self) -> &[usize] {
        &self.horizons
    }
}

/// Maps an alignment to its label sequence: merge repeats, then drop blanks.
///
/// Alignment entries use emission-column indices: 0 is blank and `k + 1` is
/// label `k`.
pub fn collapse_alignment(alignment: &[usize], num_labels: usize) -> Result<Vec<Label>> {
    let mut out = Vec::new();
    let mut prev = None;
    for &z in alignment {
        if z > num_labels {
            return Err(Error::InvalidToken { index: z, size: num_labels + 1 });
        }
        if prev != Some(z) && z != 0 {
            out.push(Label((z - 1) as u32));
        }
        prev = Some(z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: usize = 1;
    const PHI: usize = 0;

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse_alignment(&[A, PHI, A], 1).unwrap(), vec![Label(0), Label(0)]);
        assert_eq!(collapse_alignment(&[A, A, PHI], 1).unwrap(), vec![Label(0)]);
        assert!(collapse_alignment(&[PHI, PHI], 1).unwrap().is_empty());
        assert!(matches!(collapse_alignment(&[2], 1), Err(Error::InvalidToken { .. })));
    }

    proptest! {
        #[test]
        fn collapse_fixes_its_range(seq in prop::collection::vec(0usize..4, 0..12)) {
            let once = collapse_alignment(&seq, 3).unwrap();
            let mut dedup = once.clone();
            dedup.dedup();
            if dedup == once {
                let cols: Vec<usize> = once.iter().map(|l| l.index() + 1).collect();
                prop_assert_eq!(collapse_alignment(&cols, 3).unwrap(), once);
            }
        }
    }

    #[test]
    fn vocabulary_reserved_ids() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        assert_eq!(Vocabulary::token_id(Label(0)), 3);
        assert_eq!(v.label_of_token(4).unwrap(), Label(1));
        assert!(v.label_of_token(Vocabulary::EOS_ID).is_err());
        assert!(v.label_of_token(5).is_err());
        assert!(Vocabulary::new(["a", "a"]).is_err());
        assert!(Vocabulary::new(["<eos>"]).is_err());
        assert!(Vocabulary::new(Vec::<String>::new()).is_err());
        assert_eq!(v.parse_sequence("b a").unwrap(), vec![Label(1), Label(0)]);
        assert_eq!(v.render(&[Label(1), Label(0)]), "b a");
    }

    #[test]
    fn emission_rows_normalized() {
        let m = EmissionMatrix::from_probs(&[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
        assert_eq!(m.frames(), 2);
        assert_eq!(m.num_labels(), 1);
        for t in 0..2 {
            let r = m.row(t);
            let total = logsumexp(&[r.blank(), r.label(Label(0))]);
            assert!(total.abs() < 1e-9);
        }
        assert!(EmissionMatrix::from_probs(&[vec![0.4, 0.5]]).is_err());
        assert!(EmissionMatrix::from_probs(&[]).is_err());
        assert!(EmissionMatrix::from_probs(&[vec![0.4, 0.6], vec![1.0]]).is_err());
        let l = EmissionMatrix::from_log_probs(&[vec![0.4f64.ln(), 0.6f64.ln()]]).unwrap();
        assert!((l.row(0).blank() - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn schedule_horizons() {
        let s = BlockSchedule::with_hop(16, 40).unwrap();
        assert_eq!(s.horizons(), &[16, 32, 40]);
        assert_eq!(BlockSchedule::with_hop(16, 32).unwrap().horizons(), &[16, 32]);
        assert_eq!(BlockSchedule::single_block(7).unwrap().horizons(), &[7]);
        assert_eq!(BlockSchedule::with_hop(7, 7).unwrap(), BlockSchedule::single_block(7).unwrap());
        assert!(BlockSchedule::from_horizons(vec![3, 3, 5], 5).is_err());
        assert!(BlockSchedule::from_horizons(vec![3, 4], 5).is_err());
        assert!(BlockSchedule::with_hop(0, 5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BeamConfig::new(5, 10).is_err());
        assert!(BeamConfig::new(5, 0).is_err());
        assert_eq!(BeamConfig::default(), BeamConfig { total: 10, lsync: 5 });
        assert!(ScoreWeights::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        assert!(ScoreWeights::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(ScoreWeights::new(1.0, 0.0, 0.0, -2.0).is_ok());
        let d = ScoreWeights::default();
        assert_eq!((d.ctc, d.lm, d.att, d.len), (0.5, 0.3, 0.5, 1.0));
    }
}
