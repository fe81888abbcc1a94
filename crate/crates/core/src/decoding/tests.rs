use proptest::prelude::*;

use super::*;
use crate::constraints::{ConstraintAutomaton, ConstraintSet};

const EOS: TokenId = 0;

fn greedy(scorer: &mut RandomScorer, max_len: usize) -> Vec<TokenId> {
    let mut out = Vec::new();
    for _ in 0..max_len {
        let lp = scorer.log_probs(&out).unwrap();
        let mut best = 0;
        for (t, &l) in lp.iter().enumerate() {
            if l > lp[best] {
                best = t;
            }
        }
        out.push(best as TokenId);
        if best as TokenId == EOS {
            break;
        }
    }
    out
}

fn tiny_cfg(mode: DecodeMode, beam: usize, max_len: usize) -> DecodeConfig {
    DecodeConfig { beam_size: beam, max_len_ratio: 0.0, max_len_offset: max_len, length_penalty: 0.6, mode }
}

fn rescore(scorer: &mut RandomScorer, tokens: &[TokenId]) -> f64 {
    (0..tokens.len()).map(|i| scorer.log_probs(&tokens[..i]).unwrap()[tokens[i] as usize]).sum()
}

#[test]
fn beam_one_is_greedy() {
    for seed in 0..50 {
        let mut s = RandomScorer::new(6, EOS, seed);
        let expect = greedy(&mut s, 7);
        let h = beam_search(&mut s, 1, &tiny_cfg(DecodeMode::Plain, 1, 7)).unwrap();
        assert_eq!(h.tokens, expect);
    }
}

#[test]
fn saturating_plain_beam_is_exhaustive() {
    for seed in 0..30 {
        let mut s = RandomScorer::new(5, EOS, seed);
        let h = beam_search(&mut s, 0, &tiny_cfg(DecodeMode::Plain, 625, 4)).unwrap();
        let BruteForceResult::Found { tokens, normalized, .. } =
            brute_force_decode(&mut s, &ConstraintSet::empty(), 4, 0.6).unwrap()
        else {
            panic!("unconstrained search is always feasible")
        };
        assert_eq!(h.tokens, tokens);
        assert!((h.normalized_score(0.6) - normalized).abs() < 1e-12);
    }
}

#[test]
fn plain_dispatch_tracks_constraints_without_steering() {
    let cs = ConstraintSet::new(vec![vec![3], vec![2, 5]]).unwrap();
    let aut = ConstraintAutomaton::new(&cs).unwrap();
    for seed in 0..30 {
        let cfg = tiny_cfg(DecodeMode::Plain, 3, 8);
        let tracked = decode(&mut RandomScorer::new(7, EOS, seed), 2, &cs, &cfg).unwrap();
        let plain = beam_search(&mut RandomScorer::new(7, EOS, seed), 2, &cfg).unwrap();
        assert_eq!(tracked.tokens, plain.tokens);
        assert_eq!(tracked.tokens_met(), aut.run(tracked.content()).tokens_met());
    }
}

#[test]
fn decoding_is_deterministic() {
    let cs = ConstraintSet::new(vec![vec![3, 4], vec![2]]).unwrap();
    for mode in [DecodeMode::Plain, DecodeMode::Gbs, DecodeMode::Dba] {
        let cfg = tiny_cfg(mode, 3, 8);
        let a = decode(&mut RandomScorer::new(8, EOS, 4), 0, &cs, &cfg);
        let b = decode(&mut RandomScorer::new(8, EOS, 4), 0, &cs, &cfg);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

#[test]
fn empty_constraints_reduce_to_beam_search() {
    for seed in 0..40 {
        for beam in [1, 2, 4] {
            let plain =
                beam_search(&mut RandomScorer::new(7, EOS, seed), 3, &tiny_cfg(DecodeMode::Plain, beam, 9)).unwrap();
            let cs = ConstraintSet::empty();
            let gbs = gbs_decode(&mut RandomScorer::new(7, EOS, seed), 3, &cs, &tiny_cfg(DecodeMode::Gbs, beam, 9));
            let dba = dba_decode(&mut RandomScorer::new(7, EOS, seed), 3, &cs, &tiny_cfg(DecodeMode::Dba, beam, 9));
            assert_eq!(gbs.unwrap(), plain);
            assert_eq!(dba.unwrap(), plain);
        }
    }
}

#[test]
fn infeasible_constraints_are_reported() {
    let mut s = RandomScorer::new(5, EOS, 1);
    let cs = ConstraintSet::new(vec![vec![1, 2, 3]]).unwrap();
    assert_eq!(brute_force_decode(&mut s, &cs, 3, 0.6).unwrap(), BruteForceResult::Infeasible);
    // Length 3 fits the phrase but not the eos: complete, returned unfinished.
    let h = gbs_decode(&mut s, 0, &cs, &tiny_cfg(DecodeMode::Gbs, 4, 3)).unwrap();
    assert!(!h.finished);
    assert_eq!(h.tokens, vec![1, 2, 3]);
    let err = dba_decode(&mut s, 0, &cs, &tiny_cfg(DecodeMode::Dba, 4, 2)).unwrap_err();
    assert!(matches!(err, Error::ConstraintFailure { met: 2, total: 3, .. }));
}

#[test]
fn brute_force_guard_refuses_large_spaces() {
    let mut s = RandomScorer::new(40, EOS, 1);
    assert!(matches!(brute_force_decode(&mut s, &ConstraintSet::empty(), 4, 0.6), Err(Error::Refused(_))));
}

#[test]
fn naive_containment() {
    let cs = ConstraintSet::new(vec![vec![1, 2], vec![1, 2]]).unwrap();
    assert!(!contains_all(&[1, 2, 2], &cs));
    assert!(contains_all(&[1, 2, 3, 1, 2], &cs));
}

/// Random tiny instance: vocabulary of 4..=6, one or two constraints of one
/// or two tokens, max_len 4..=5.
fn tiny_instance(seed: u64) -> (RandomScorer, ConstraintSet, usize) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v = rng.random_range(4..=6usize);
    let k = rng.random_range(1..=2);
    let phrases =
        (0..k).map(|_| (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..v as TokenId)).collect()).collect();
    let max_len = rng.random_range(4..=5);
    (RandomScorer::new(v, EOS, seed), ConstraintSet::new(phrases).unwrap(), max_len)
}

#[test]
fn saturating_gbs_and_dba_match_the_oracle() {
    for seed in 0..60 {
        let (mut s, cs, max_len) = tiny_instance(seed);
        let sat = s.vocab_size().pow(max_len as u32);
        let oracle = brute_force_decode(&mut s, &cs, max_len, 0.6).unwrap();
        for mode in [DecodeMode::Gbs, DecodeMode::Dba] {
            let got = decode(&mut s, 0, &cs, &tiny_cfg(mode, sat, max_len));
            match (&oracle, got) {
                (BruteForceResult::Found { tokens, normalized, .. }, Ok(h)) => {
                    assert!((h.normalized_score(0.6) - normalized).abs() < 1e-9, "seed {seed} {mode}");
                    assert_eq!(&h.tokens, tokens);
                }
                (BruteForceResult::Infeasible, Err(Error::ConstraintFailure { .. })) => {}
                (BruteForceResult::Infeasible, Ok(h)) if !h.finished => {}
                (o, g) => panic!("seed {seed} {mode}: oracle {o:?} vs {g:?}"),
            }
        }
    }
}

#[test]
fn returned_scores_are_sums_of_step_scores() {
    for seed in 0..30 {
        let (mut s, cs, max_len) = tiny_instance(seed + 1000);
        for mode in [DecodeMode::Plain, DecodeMode::Gbs, DecodeMode::Dba] {
            let h = match decode(&mut s, 0, &cs, &tiny_cfg(mode, 3, max_len + 2)) {
                Ok(h) => h,
                Err(Error::ConstraintFailure { best, .. }) => *best,
                Err(e) => panic!("{e}"),
            };
            assert!((rescore(&mut s, &h.tokens) - h.score).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn finished_constrained_outputs_contain_every_phrase(
        seed in 0u64..1_000_000,
        beam in 1usize..6,
        phrases in proptest::collection::vec(proptest::collection::vec(1u32..8, 1..3), 1..4),
    ) {
        let cs = ConstraintSet::new(phrases).unwrap();
        let aut = ConstraintAutomaton::new(&cs).unwrap();
        for mode in [DecodeMode::Gbs, DecodeMode::Dba] {
            let mut s = RandomScorer::new(8, EOS, seed);
            if let Ok(h) = decode(&mut s, 4, &cs, &tiny_cfg(mode, beam, 12)) {
                if h.finished {
                    prop_assert_eq!(*h.tokens.last().unwrap(), EOS);
                }
                prop_assert_eq!(h.tokens_met(), cs.total_tokens());
                prop_assert!(aut.is_complete(&aut.run(h.content())));
                prop_assert!(contains_all(h.content(), &cs));
            }
        }
    }

    #[test]
    fn larger_saturating_beams_never_score_worse(seed in 0u64..1_000_000) {
        let (mut s, cs, max_len) = tiny_instance(seed);
        let sat = s.vocab_size().pow(max_len as u32);
        let a = gbs_decode(&mut s, 0, &cs, &tiny_cfg(DecodeMode::Gbs, sat, max_len));
        let b = gbs_decode(&mut s, 0, &cs, &tiny_cfg(DecodeMode::Gbs, 2 * sat, max_len));
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!(b.normalized_score(0.6) >= a.normalized_score(0.6) - 1e-12);
        }
    }
}
