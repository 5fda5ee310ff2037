//! Text formats for lattices, n-gram models and label corpora.
//!
//! Emission files:
//!
//! ```text
//! EMIT <T> <|V|+1>
//! <label names, in column order after blank>
//! <T rows of probabilities: blank first, then each label>
//! ```
//!
//! N-gram files start with `NGRAM <order> <k>` followed by
//! `context<TAB>token<TAB>count` lines, where `context` is a space-separated
//! list of token names (`<sos>` for padding) and `token` may be `<eos>`.
//!
//! Blank lines and lines starting with `#` are ignored in both.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scorers::NGramModel;
use crate::types::{EmissionMatrix, Label, Vocabulary, EOS_NAME, ROW_TOLERANCE, SOS_NAME};

/// Rows off by more than this are rejected.
pub const ROW_REJECT: f64 = 1e-3;
/// Rows off by more than this are renormalized with a warning.
pub const ROW_WARN: f64 = 1e-6;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn format_err(line: usize, message: impl Into<String>) -> Error {
    Error::Format { line, message: message.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmissionFile {
    pub vocab: Vocabulary,
    pub matrix: EmissionMatrix,
}

pub fn parse_emission(text: &str) -> Result<EmissionFile> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| format_err(1, "missing EMIT header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (frames, width) = match fields.as_slice() {
        ["EMIT", t, w] => match (t.parse::<usize>(), w.parse::<usize>()) {
            (Ok(t), Ok(w)) if t >= 1 && w >= 2 => (t, w),
            _ => return Err(format_err(hline, "EMIT needs a positive frame count and width of at least 2")),
        },
        _ => return Err(format_err(hline, "expected `EMIT <T> <width>`")),
    };
    let (vline, names) = lines.next().ok_or_else(|| format_err(hline + 1, "missing vocabulary line"))?;
    let names: Vec<&str> = names.split_whitespace().collect();
    if names.len() != width - 1 {
        return Err(format_err(vline, format!("vocabulary has {} labels, header says {}", names.len(), width - 1)));
    }
    let vocab = Vocabulary::new(names.iter().copied()).map_err(|e| format_err(vline, e.to_string()))?;

    let mut rows = Vec::with_capacity(frames);
    let mut exact = true;
    for (n, line) in lines {
        if rows.len() == frames {
            return Err(format_err(n, format!("more than {frames} rows")));
        }
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().ok().filter(|p| p.is_finite() && *p >= 0.0))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| format_err(n, "values must be finite non-negative numbers"))?;
        if row.len() != width {
            return Err(format_err(n, format!("row has {} values, expected {width}", row.len())));
        }
        let sum: f64 = row.iter().sum();
        let off = (sum - 1.0).abs();
        // A little slack so that a row written as exactly 0.999 passes.
        if off > ROW_REJECT + 1e-12 {
            return Err(format_err(n, format!("row sums to {sum}")));
        }
        if off > ROW_WARN {
            log::warn!("line {n}: row sums to {sum}, renormalizing");
        }
        exact &= off <= ROW_TOLERANCE;
        rows.push(row);
    }
    if rows.len() != frames {
        return Err(format_err(text.lines().count(), format!("expected {frames} rows, found {}", rows.len())));
    }
    let matrix = if exact { EmissionMatrix::from_probs(&rows)? } else { EmissionMatrix::from_weights(&rows)? };
    Ok(EmissionFile { vocab, matrix })
}

pub fn write_emission<W: Write>(vocab: &Vocabulary, matrix: &EmissionMatrix, out: &mut W) -> io::Result<()> {
    writeln!(out, "EMIT {} {}", matrix.frames(), matrix.num_labels() + 1)?;
    writeln!(out, "{}", vocab.labels().join(" "))?;
    for row in matrix.prob_rows() {
        let cells: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        writeln!(out, "{}", cells.join(" "))?;
    }
    Ok(())
}

pub fn load_emission(path: &Path) -> Result<EmissionFile> {
    parse_emission(&fs::read_to_string(path)?)
}

pub fn save_emission(path: &Path, vocab: &Vocabulary, matrix: &EmissionMatrix) -> Result<()> {
    if vocab.len() != matrix.num_labels() {
        return Err(Error::Config(format!("vocabulary has {} labels, lattice {}", vocab.len(), matrix.num_labels())));
    }
    let mut buf = Vec::new();
    write_emission(vocab, matrix, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn token_name(vocab: &Vocabulary, id: u32) -> &str {
    if id as usize == Vocabulary::SOS_ID {
        SOS_NAME
    } else {
        vocab.label_of_token(id as usize).map_or("?", |l| vocab.name(l))
    }
}

pub fn write_ngram<W: Write>(model: &NGramModel, vocab: &Vocabulary, out: &mut W) -> io::Result<()> {
    writeln!(out, "NGRAM {} {}", model.order(), model.smoothing())?;
    for (ctx, next, count) in model.entries() {
        let ctx: Vec<&str> = ctx.iter().map(|&id| token_name(vocab, id)).collect();
        let next = next.map_or(EOS_NAME, |l| vocab.name(l));
        writeln!(out, "{}\t{}\t{}", ctx.join(" "), next, count)?;
    }
    Ok(())
}

pub fn parse_ngram(text: &str, vocab: &Vocabulary) -> Result<NGramModel> {
    // The tab-separated body may have an empty context field, so lines are
    // not trimmed before splitting.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| format_err(1, "missing NGRAM header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let mut model = match fields.as_slice() {
        ["NGRAM", n, k] => match (n.parse::<usize>(), k.parse::<f64>()) {
            (Ok(n), Ok(k)) => NGramModel::empty(vocab.len(), n, k).map_err(|e| format_err(hline, e.to_string()))?,
            _ => return Err(format_err(hline, "NGRAM needs an integer order and a number")),
        },
        _ => return Err(format_err(hline, "expected `NGRAM <order> <k>`")),
    };
    for (n, line) in lines {
        let parts: Vec<&str> = line.split('\t').collect();
        let [ctx, next, count] = parts.as_slice() else {
            return Err(format_err(n, "expected context<TAB>token<TAB>count"));
        };
        let context = ctx
            .split_whitespace()
            .map(|w| {
                if w == SOS_NAME {
                    Ok(Vocabulary::SOS_ID as u32)
                } else {
                    vocab
                        .lookup(w)
                        .map(|l| Vocabulary::token_id(l) as u32)
                        .ok_or_else(|| format_err(n, format!("unknown token {w:?}")))
                }
            })
            .collect::<Result<Vec<u32>>>()?;
        let next = match next.trim() {
            EOS_NAME => None,
            w => Some(vocab.lookup(w).ok_or_else(|| format_err(n, format!("unknown token {w:?}")))?),
        };
        let count = count.trim().parse::<u64>().map_err(|_| format_err(n, "count must be a non-negative integer"))?;
        model.add_count(context, next, count).map_err(|e| format_err(n, e.to_string()))?;
    }
    Ok(model)
}

/// One label sequence per line, names separated by whitespace. Empty lines
/// are empty sequences.
pub fn parse_corpus(text: &str, vocab: &Vocabulary) -> Result<Vec<Vec<Label>>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| vocab.parse_sequence(l).map_err(|e| format_err(i + 1, e.to_string())))
        .collect()
}
