//! Per-step record of beam contents.
//!
//! Serialized one beam entry per line:
//! `t<TAB>i<TAB>rank<TAB>prioritized<TAB>score<TAB>labels`, with labels
//! space-separated and `prioritized` written as `1`/`0`. Finished
//! label-synchronous entries end their label field with `<eos>`.

use std::io::{self, Write};

use crate::types::{Label, Vocabulary, EOS_NAME};

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub labels: Vec<Label>,
    pub score: f64,
    pub prioritized: bool,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    /// Frame; the label-synchronous search records the frame count.
    pub t: usize,
    /// Label-synchronous step.
    pub i: usize,
    /// Ranked beam after this step.
    pub entries: Vec<TraceEntry>,
    /// Prioritized roots removed by ancestor pruning at this step.
    pub pruned: Vec<Vec<Label>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeTrace {
    pub steps: Vec<TraceStep>,
}

impl DecodeTrace {
    pub fn pruned_count(&self) -> usize {
        self.steps.iter().map(|s| s.pruned.len()).sum()
    }

    /// First step after which no live entry can still complete to
    /// `target`: no unfinished entry is a prefix of it and no finished entry
    /// equals it. Returns the step's `t` for frame-led searches and its `i`
    /// when `by_label_step` is set.
    pub fn first_drop(&self, target: &[Label], by_label_step: bool) -> Option<usize> {
        let mut finished = false;
        for step in &self.steps {
            finished |= step.entries.iter().any(|e| e.finished && e.labels == target);
            let alive = step.entries.iter().any(|e| !e.finished && target.starts_with(&e.labels));
            if !alive && !finished {
                return Some(if by_label_step { step.i } else { step.t });
            }
        }
        None
    }

    pub fn write<W: Write>(&self, vocab: &Vocabulary, out: &mut W) -> io::Result<()> {
        for step in &self.steps {
            for (rank, e) in step.entries.iter().enumerate() {
                let mut labels = vocab.render(&e.labels);
                if e.finished {
                    if !labels.is_empty() {
                        labels.push(' ');
                    }
                    labels.push_str(EOS_NAME);
                }
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{:.6}\t{}",
                    step.t,
                    step.i,
                    rank,
                    u8::from(e.prioritized),
                    e.score,
                    labels
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(labels: &[u32], finished: bool) -> TraceEntry {
        TraceEntry { labels: labels.iter().map(|&l| Label(l)).collect(), score: -1.5, prioritized: !finished, finished }
    }

    #[test]
    fn writes_tab_separated_rows() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let trace = DecodeTrace {
            steps: vec![TraceStep {
                t: 3,
                i: 1,
                entries: vec![entry(&[0, 1], false), entry(&[], true)],
                pruned: vec![],
            }],
        };
        let mut buf = Vec::new();
        trace.write(&vocab, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "3\t1\t0\t1\t-1.500000\ta b\n3\t1\t1\t0\t-1.500000\t<eos>\n");
        for line in text.lines() {
            assert_eq!(line.split('\t').count(), 6);
        }
    }

    #[test]
    fn first_drop_tracks_prefixes() {
        let target = [Label(0), Label(1)];
        let step = |t, labels: &[u32]| TraceStep { t, i: t, entries: vec![entry(labels, false)], pruned: vec![] };
        let trace = DecodeTrace { steps: vec![step(1, &[0]), step(2, &[0, 1]), step(3, &[1])] };
        assert_eq!(trace.first_drop(&target, false), Some(3));
        let kept = DecodeTrace { steps: vec![step(1, &[]), step(2, &[0, 1])] };
        assert_eq!(kept.first_drop(&target, false), None);
        let finished = DecodeTrace {
            steps: vec![
                TraceStep { t: 1, i: 3, entries: vec![entry(&[0, 1], true)], pruned: vec![] },
                TraceStep { t: 1, i: 4, entries: vec![], pruned: vec![] },
            ],
        };
        assert_eq!(finished.first_drop(&target, true), None);
    }
}
