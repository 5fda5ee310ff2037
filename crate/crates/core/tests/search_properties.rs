mod common;

use proptest::prelude::*;
use rand::Rng;

use flsync_core::ctc::PrefixScoreCache;
use flsync_core::flsync::{flsync_decode, FlSyncSearch};
use flsync_core::fsync::{fsync_decode, fsync_step, FHypothesis};
use flsync_core::fusion::SearchOptions;
use flsync_core::lsync::lsync_decode;
use flsync_core::oracle::{adversarial_suite, exhaustive_best, generate_lattice, random_suite};
use flsync_core::scorers::{LabelScorer, Scorers, SurrogateAttDec};
use flsync_core::{BeamConfig, BlockSchedule, EmissionMatrix, Label, ScoreWeights};

fn e1() -> EmissionMatrix {
    EmissionMatrix::from_probs(&[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fsync_has_no_lookahead(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let lattice = common::small_lattice(&mut rng, 6, 3);
        let att = SurrogateAttDec::default();
        let sc = Scorers::new(None, Some(&att as &dyn LabelScorer));
        let weights = common::random_weights(&mut rng);
        let options = SearchOptions::default();
        let mut cache = PrefixScoreCache::new(&lattice);
        let mut beam = vec![FHypothesis::initial()];
        for t in 1..=lattice.frames() {
            beam = fsync_step(&beam, &mut cache, &sc, &weights, 3, &options).unwrap();
            let short = lattice.truncated(t).unwrap();
            let out = fsync_decode(&short, &sc, &weights, 3, &options).unwrap();
            prop_assert_eq!(&out.beam, &beam);
        }
    }

    #[test]
    fn fsync_label_terms_match_scratch_sums(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let lattice = common::small_lattice(&mut rng, 6, 3);
        let lm = common::random_lm(&mut rng, lattice.num_labels());
        let sc = Scorers::new(Some(&lm as &dyn LabelScorer), None);
        let weights = common::random_weights(&mut rng);
        let out = fsync_decode(&lattice, &sc, &weights, 4, &SearchOptions::default()).unwrap();
        let mut cache = PrefixScoreCache::new(&lattice);
        for h in &out.beam {
            let beta = sc.beta(&h.seq, &mut cache, lattice.frames()).unwrap();
            prop_assert!((h.beta_lm - beta.lm).abs() < 1e-9);
        }
    }

    #[test]
    fn flsync_beam_invariants_hold_every_frame(seed in any::<u64>(), total in 1usize..6, hop in 1usize..5) {
        let mut rng = common::rng(seed);
        let lattice = common::small_lattice(&mut rng, 8, 4);
        let lsync = rng.gen_range(1..=total);
        let beams = BeamConfig::new(total, lsync).unwrap();
        let att = SurrogateAttDec::default();
        let sc = Scorers::new(None, Some(&att as &dyn LabelScorer));
        let weights = common::random_weights(&mut rng);
        let schedule = BlockSchedule::with_hop(hop, lattice.frames()).unwrap();
        let mut search = FlSyncSearch::new(&lattice, sc, weights, beams, SearchOptions::default()).unwrap();
        for &horizon in schedule.horizons() {
            for t in search.beam().frame + 1..=horizon {
                let before = search.beam().clone();
                let min_len = before.hypotheses.iter().map(|h| h.seq.len()).min().unwrap();
                search.step(t, horizon).unwrap();
                let after = search.beam();
                prop_assert!(after.hypotheses.len() <= total);
                prop_assert!(after.hypotheses.iter().filter(|h| h.prioritized).count() <= lsync);
                // The label step only moves, and only to the shortest length.
                if after.lsync_step != before.lsync_step {
                    prop_assert_eq!(after.lsync_step, min_len);
                    prop_assert!(after.lsync_step > before.lsync_step);
                }
                let new_min = after.hypotheses.iter().map(|h| h.seq.len()).min().unwrap();
                prop_assert!(after.lsync_step <= new_min + 1);
                prop_assert!(after.hypotheses.iter().all(|h| h.ctc.frame == t && h.lsync_len <= h.seq.len()));
            }
        }
        prop_assert!(!search.finish().unwrap().ranked.is_empty());
    }
}

#[test]
fn fsync_best_score_grows_with_beam_width() {
    let mut rng = common::rng(41);
    let mut violations = Vec::new();
    let mut checked = [0usize; 2];
    for n in 0..200 {
        let lattice = common::small_lattice(&mut rng, 6, 3);
        let ctc_only = n % 2 == 0;
        let weights = if ctc_only { ScoreWeights::ctc_only() } else { common::random_weights(&mut rng) };
        let lm = common::random_lm(&mut rng, lattice.num_labels());
        let sc = Scorers::new(Some(&lm as &dyn LabelScorer), None);
        let mut last = f64::NEG_INFINITY;
        for width in 1..=6 {
            let out = fsync_decode(&lattice, &sc, &weights, width, &SearchOptions::exact()).unwrap();
            let best = out.best().unwrap().score;
            checked[usize::from(ctc_only)] += 1;
            if best < last - 1e-12 {
                violations.push(format!("lattice {n} (ctc_only={ctc_only}) width {width}: {best} < {last}"));
            }
            last = best;
        }
    }
    println!("checked {checked:?} (fused, ctc-only); violations {}", violations.len());
    for v in &violations {
        println!("  {v}");
    }
    assert!(violations.is_empty(), "{} widths lowered the best score", violations.len());
}

#[test]
fn flsync_e1_single_block() {
    let lattice = e1();
    let schedule = BlockSchedule::single_block(2).unwrap();
    let out = flsync_decode(
        &lattice,
        &schedule,
        &Scorers::none(),
        &ScoreWeights::ctc_only(),
        BeamConfig::new(2, 1).unwrap(),
        &SearchOptions::default(),
    )
    .unwrap();
    let labels: Vec<Vec<Label>> = out.ranked.iter().map(|h| h.labels.clone()).collect();
    assert_eq!(labels, vec![vec![Label(0)], vec![]]);
    assert!((out.ranked[0].score - 0.8f64.ln()).abs() < 1e-12);
}

#[test]
fn flsync_one_hot_blank_frame_stays_empty() {
    let lattice = EmissionMatrix::from_probs(&[vec![1.0, 0.0, 0.0]]).unwrap();
    let schedule = BlockSchedule::single_block(1).unwrap();
    let out = flsync_decode(
        &lattice,
        &schedule,
        &Scorers::none(),
        &ScoreWeights::ctc_only(),
        BeamConfig::default(),
        &SearchOptions::default(),
    )
    .unwrap();
    assert_eq!(out.beam.hypotheses.len(), 1);
    assert!(out.beam.hypotheses[0].seq.is_empty());
    assert_eq!(out.beam.lsync_step, 0);
    assert_eq!(out.ranked[0].score, 0.0);
}

#[test]
fn label_led_search_can_lose_what_flsync_keeps() {
    // Small label-synchronous beams rank prefixes by their whole-lattice
    // mass, which can favour a prefix whose completions all score poorly.
    let weights = ScoreWeights::ctc_only();
    let beams = BeamConfig::new(2, 1).unwrap();
    let mut found = 0;
    for spec in random_suite(200, 5).into_iter().chain(adversarial_suite(100, 11)) {
        let lattice = generate_lattice(&spec).unwrap();
        let best = exhaustive_best(&lattice, &Scorers::none(), &weights, lattice.frames().min(4)).unwrap();
        if best.labels.len() > 4 {
            continue;
        }
        let l = lsync_decode(&lattice, &Scorers::none(), &weights, beams.lsync, &SearchOptions::default()).unwrap();
        let schedule = BlockSchedule::with_hop(16, lattice.frames()).unwrap();
        let fl =
            flsync_decode(&lattice, &schedule, &Scorers::none(), &weights, beams, &SearchOptions::default()).unwrap();
        let in_l = l.ranked.iter().any(|h| h.labels == best.labels);
        let in_fl = fl.ranked.iter().any(|h| h.labels == best.labels);
        found += usize::from(!in_l && in_fl);
    }
    println!("lattices where only the integrated search kept the exhaustive best: {found}");
    assert!(found > 0);
}
