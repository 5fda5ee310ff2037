#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flsync_core::scorers::NGramModel;
use flsync_core::{collapse_alignment, EmissionMatrix, Label, ScoreWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random lattice with `frames` rows over `labels` labels. About one entry
/// in ten is exactly zero; blank stays positive so every row has mass.
pub fn random_lattice(rng: &mut ChaCha8Rng, frames: usize, labels: usize) -> EmissionMatrix {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            (0..=labels).map(|k| if k > 0 && rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.01..1.0) }).collect()
        })
        .collect();
    EmissionMatrix::from_weights(&rows).unwrap()
}

/// Lattice with sizes drawn from `1..=max_frames` and `1..=max_labels`.
pub fn small_lattice(rng: &mut ChaCha8Rng, max_frames: usize, max_labels: usize) -> EmissionMatrix {
    let t = rng.gen_range(1..=max_frames);
    let v = rng.gen_range(1..=max_labels);
    random_lattice(rng, t, v)
}

/// Collapsed output of one alignment drawn from the lattice posteriors.
pub fn sample_output(rng: &mut ChaCha8Rng, lattice: &EmissionMatrix) -> Vec<Label> {
    let alignment: Vec<usize> = lattice
        .prob_rows()
        .map(|row| {
            let mut u = rng.gen_range(0.0..1.0);
            for (k, &p) in row.iter().enumerate() {
                if u < p {
                    return k;
                }
                u -= p;
            }
            0
        })
        .collect();
    collapse_alignment(&alignment, lattice.num_labels()).unwrap()
}

/// Every sequence over `labels` labels of length `0..=max_len`, shortest
/// first.
pub fn all_sequences(labels: usize, max_len: usize) -> Vec<Vec<Label>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<Label>| {
                (0..labels as u32).map(move |v| {
                    let mut n = s.clone();
                    n.push(Label(v));
                    n
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

pub fn random_weights(rng: &mut ChaCha8Rng) -> ScoreWeights {
    ScoreWeights::new(
        rng.gen_range(0.1..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..2.0),
    )
    .unwrap()
}

/// Bigram model trained on a few random sequences.
pub fn random_lm(rng: &mut ChaCha8Rng, labels: usize) -> NGramModel {
    let corpus: Vec<Vec<Label>> =
        (0..8).map(|_| (0..rng.gen_range(0..5)).map(|_| Label(rng.gen_range(0..labels as u32))).collect()).collect();
    NGramModel::train(&corpus, labels, 2, 0.5).unwrap()
}
