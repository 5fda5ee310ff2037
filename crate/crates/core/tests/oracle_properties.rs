mod common;

use flsync_core::fsync::fsync_decode;
use flsync_core::fusion::SearchOptions;
use flsync_core::oracle::{
    adversarial_suite, compare_strategies, exhaustive_best, exhaustive_ranking, generate_lattice, random_suite,
    CompareConfig, Strategy, SuiteSummary, SyntheticSpec,
};
use flsync_core::scorers::Scorers;
use flsync_core::{collapse_alignment, BeamConfig, EmissionMatrix, ScoreWeights};

fn ctc_config(oracle_max_len: usize) -> CompareConfig {
    CompareConfig {
        weights: ScoreWeights::ctc_only(),
        beams: BeamConfig::new(10, 5).unwrap(),
        hop: 16,
        options: SearchOptions::default(),
        oracle_max_len,
    }
}

#[test]
fn adversarial_example_hides_truth_from_greedy_frame_search() {
    // Search the suite for an utterance whose exhaustive best is the truth while a
    // one-wide frame search loses it on the decoy frame.
    let weights = ScoreWeights::ctc_only();
    let spec = adversarial_suite(50, 11)
        .into_iter()
        .find(|spec| {
            let lattice = generate_lattice(spec).unwrap();
            let best = exhaustive_best(&lattice, &Scorers::none(), &weights, 4).unwrap();
            let out =
                fsync_decode(&lattice, &Scorers::none(), &weights, 1, &SearchOptions::default().with_trace()).unwrap();
            best.labels == spec.truth && out.trace.unwrap().first_drop(&spec.truth, false) == Some(1)
        })
        .expect("no adversarial utterance loses its truth on the decoy frame");
    assert_eq!(spec.adversarial_prefix.as_ref().unwrap().frames, 1);
}

#[test]
fn noiseless_lattices_are_easy_for_every_strategy() {
    for spec in random_suite(40, 9) {
        let spec = SyntheticSpec { noise: 0.0, ..spec };
        let lattice = generate_lattice(&spec).unwrap();
        let argmax: Vec<usize> = lattice
            .prob_rows()
            .map(|row| (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best }))
            .collect();
        assert_eq!(collapse_alignment(&argmax, lattice.num_labels()).unwrap(), spec.truth);
        // Summed alignments can still favour a shorter output than the
        // argmax path, so strategies are held to the exhaustive reference.
        let report = compare_strategies(&lattice, &spec.truth, &Scorers::none(), &ctc_config(4)).unwrap();
        for s in &report.strategies {
            assert_eq!(s.best, report.reference.labels, "{:?}", s.strategy);
            assert!(s.retained);
        }
    }
}

#[test]
fn unpruned_strategies_report_the_exhaustive_best() {
    let mut summary = SuiteSummary::default();
    for spec in
        random_suite(60, 23).into_iter().filter(|s| s.num_labels <= 3 && s.truth.len() * s.frames_per_label <= 6)
    {
        let lattice = generate_lattice(&spec).unwrap();
        let config = CompareConfig {
            beams: BeamConfig::new(2000, 2000).unwrap(),
            options: SearchOptions::exact(),
            oracle_max_len: lattice.frames(),
            ..ctc_config(0)
        };
        let report = compare_strategies(&lattice, &spec.truth, &Scorers::none(), &config).unwrap();
        for s in &report.strategies {
            assert!(s.retained, "{:?}", s.strategy);
            assert_eq!(s.best, report.reference.labels, "{:?}", s.strategy);
            assert!((s.best_score - report.reference.score).abs() < 1e-9);
        }
        summary.add(&report);
    }
    assert!(summary.utterances > 0);
    for s in Strategy::ALL {
        assert_eq!(summary.retention_rate(s), 1.0);
    }
}

#[test]
fn first_drop_marks_the_step_the_reference_left_the_beam() {
    let mut recovered = 0;
    for spec in adversarial_suite(30, 5) {
        let lattice = generate_lattice(&spec).unwrap();
        let report = compare_strategies(&lattice, &spec.truth, &Scorers::none(), &ctc_config(4)).unwrap();
        for s in &report.strategies {
            if let Some(t) = s.first_drop {
                assert!(t >= 1 && t <= lattice.frames());
            }
            match s.strategy {
                // Baselines only grow live entries, so a lost reference
                // stays lost.
                Strategy::Fsync | Strategy::Lsync => assert_ne!(s.retained, s.first_drop.is_some(), "{:?}", s.strategy),
                // The label step can re-propose a prefix the frame beam lost.
                Strategy::Flsync => recovered += usize::from(s.retained && s.first_drop.is_some()),
            }
        }
    }
    assert!(recovered > 0);
}

#[test]
fn ranking_puts_the_empty_output_first_on_an_all_blank_lattice() {
    let lattice = EmissionMatrix::from_probs(&[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
    let ranked = exhaustive_ranking(&lattice, &Scorers::none(), &ScoreWeights::ctc_only(), 2).unwrap();
    assert!(ranked[0].labels.is_empty());
    assert_eq!(ranked[0].score, 0.0);
}

#[test]
fn length_reward_alone_prefers_the_longest_reachable_output() {
    let lattice = EmissionMatrix::from_probs(&vec![vec![0.5, 0.25, 0.25]; 3]).unwrap();
    let weights = ScoreWeights::new(1e-9, 0.0, 0.0, 50.0).unwrap();
    let best = exhaustive_best(&lattice, &Scorers::none(), &weights, 3).unwrap();
    assert_eq!(best.labels.len(), 3);
    assert!(best.labels.iter().all(|l| l.index() < 2));
}
