use dte_core::corpus::PhoneId;
use dte_core::decoder::{
    align_edits, recognition_score, train_bigram_lm, viterbi_decode, BigramPhoneLm, DecodeGraph, DecodeParams,
    EditCounts, EditOp,
};
use dte_core::hmm::{tie_states, HmmTopology, TiedStateMap, Triphone, TriphoneCounts};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

struct Instance {
    map: TiedStateMap,
    topology: HmmTopology,
    lm: BigramPhoneLm,
    scores: Array2<f32>,
    params: DecodeParams,
}

fn instance(rng: &mut ChaCha8Rng, phones: usize, frames: usize) -> Instance {
    let mut counts = TriphoneCounts::new();
    for _ in 0..5 {
        let tri = Triphone::new(rng.random_range(0..phones), rng.random_range(0..phones), rng.random_range(0..phones));
        counts.insert((tri, rng.random_range(0..3)), 5);
    }
    let map = tie_states(&counts, phones, 1, u32::MAX);
    let s = map.num_states();
    let topology = HmmTopology::new((0..s).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
    let seqs: Vec<Vec<PhoneId>> = (0..4)
        .map(|_| (0..rng.random_range(1..5)).map(|_| rng.random_range(0..phones)).collect())
        .collect();
    let lm = train_bigram_lm(&seqs, phones, 0.5).unwrap();
    let scores = Array2::from_shape_fn((frames, s), |_| rng.random_range(-6.0f32..0.0));
    let params = DecodeParams {
        lm_scale: rng.random_range(0.0f32..3.0),
        insertion_penalty: rng.random_range(-4.0f32..2.0),
        ..DecodeParams::default()
    };
    Instance {
        map,
        topology,
        lm,
        scores,
        params,
    }
}

fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn path_count(phones: usize, frames: usize) -> usize {
    (1..=frames / 3).map(|k| phones.pow(k as u32) * binom(frames - 1, 3 * k - 1)).sum()
}

/// Best score over every phone sequence and state segmentation, accumulated in time order.
fn brute_force(inst: &Instance, phones: usize, sil: PhoneId) -> (f64, Vec<PhoneId>, usize) {
    let frames = inst.scores.nrows();
    let scale = inst.params.lm_scale as f64;
    let penalty = inst.params.insertion_penalty as f64;
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut paths = 0;
    for k in 1..=frames / 3 {
        for code in 0..phones.pow(k as u32) {
            let seq: Vec<PhoneId> = (0..k).map(|i| code / phones.pow(i as u32) % phones).collect();
            // Chain of 3k states with their tied ids.
            let chain: Vec<usize> = (0..3 * k)
                .map(|j| {
                    let i = j / 3;
                    let l = if i == 0 { sil } else { seq[i - 1] };
                    let r = if i + 1 == k { sil } else { seq[i + 1] };
                    inst.map.lookup(Triphone::new(l, seq[i], r), (j % 3) as u8)
                })
                .collect();
            let emit = |t: usize, j: usize| inst.scores[[t, chain[j]]] as f64;
            let start = scale * inst.lm.log_start(seq[0]) + emit(0, 0);
            let mut stack = vec![(0usize, 0usize, start)];
            while let Some((t, j, acc)) = stack.pop() {
                if t + 1 == frames {
                    if j + 1 == 3 * k {
                        paths += 1;
                        let total = acc + scale * inst.lm.log_end(seq[k - 1]);
                        if total > best.0 {
                            best = (total, seq.clone());
                        }
                    }
                    continue;
                }
                let id = chain[j];
                stack.push((t + 1, j, acc + inst.topology.log_self_loop(id) + emit(t + 1, j)));
                if j + 1 < 3 * k {
                    let mut next = acc + inst.topology.log_forward(id);
                    if j % 3 == 2 {
                        let i = j / 3;
                        next += scale * inst.lm.log_prob(seq[i], seq[i + 1]) + penalty;
                    }
                    stack.push((t + 1, j + 1, next + emit(t + 1, j + 1)));
                }
            }
        }
    }
    (best.0, best.1, paths)
}

#[test]
fn decoding_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..150 {
        let phones = rng.random_range(2..4);
        let frames = rng.random_range(3..8);
        if path_count(phones, frames) > 200 {
            continue;
        }
        let inst = instance(&mut rng, phones, frames);
        let graph = DecodeGraph::new(&inst.map, &inst.topology, 0).unwrap();
        let res = viterbi_decode(inst.scores.view(), &graph, &inst.lm, &inst.params).unwrap();
        let (score, seq, paths) = brute_force(&inst, phones, 0);
        assert_eq!(paths, path_count(phones, frames));
        assert_eq!(res.score, score, "case {case}");
        assert_eq!(res.full_phones, seq, "case {case}");
        assert_eq!(res.phones, seq.iter().copied().filter(|&p| p != 0).collect::<Vec<_>>());
        assert_eq!(res.tied_path.len(), frames);
    }
}

#[test]
fn wide_beam_is_exact_and_narrow_beam_never_beats_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let inst = instance(&mut rng, 4, 30);
        let graph = DecodeGraph::new(&inst.map, &inst.topology, 0).unwrap();
        let exact = viterbi_decode(inst.scores.view(), &graph, &inst.lm, &inst.params).unwrap();
        let wide = DecodeParams {
            beam: Some(1e6),
            ..inst.params
        };
        assert_eq!(viterbi_decode(inst.scores.view(), &graph, &inst.lm, &wide).unwrap(), exact);
        let narrow = DecodeParams {
            beam: Some(rng.random_range(0.5f32..5.0)),
            ..inst.params
        };
        if let Ok(r) = viterbi_decode(inst.scores.view(), &graph, &inst.lm, &narrow) {
            assert!(r.score <= exact.score);
        }
    }
}

#[test]
fn larger_insertion_penalty_never_shortens_the_hypothesis() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let inst = instance(&mut rng, 4, 40);
        let graph = DecodeGraph::new(&inst.map, &inst.topology, 0).unwrap();
        let mut last = 0;
        for penalty in [-20.0f32, -8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0] {
            let params = DecodeParams {
                insertion_penalty: penalty,
                ..inst.params
            };
            let n = viterbi_decode(inst.scores.view(), &graph, &inst.lm, &params)
                .unwrap()
                .full_phones
                .len();
            assert!(n >= last, "penalty {penalty}: {n} < {last}");
            last = n;
        }
    }
}

/// Minimum edits over every alignment, enumerated recursively.
fn exhaustive_errors(r: &[u8], h: &[u8]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, _) => h.len(),
        (_, None) => r.len(),
        (Some((a, rr)), Some((b, hh))) => {
            let diag = exhaustive_errors(rr, hh) + usize::from(a != b);
            let del = exhaustive_errors(rr, h) + 1;
            let ins = exhaustive_errors(r, hh) + 1;
            diag.min(del).min(ins)
        }
    }
}

proptest! {
    #[test]
    fn bigram_rows_are_distributions(
        seqs in prop::collection::vec(prop::collection::vec(0usize..5, 1..8), 1..6),
        alpha in 0.01f64..3.0,
    ) {
        let lm = train_bigram_lm(&seqs, 5, alpha).unwrap();
        for a in 0..5 {
            let s: f64 = (0..5).map(|b| lm.log_prob(a, b).exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        let s: f64 = (0..5).map(|b| lm.log_start(b).exp()).sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        let s: f64 = (0..5).map(|b| lm.log_end(b).exp()).sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn edit_counts_are_minimal_and_consistent(
        r in prop::collection::vec(0u8..3, 0..7),
        h in prop::collection::vec(0u8..3, 0..7),
    ) {
        let rp: Vec<PhoneId> = r.iter().map(|&x| x as PhoneId).collect();
        let hp: Vec<PhoneId> = h.iter().map(|&x| x as PhoneId).collect();
        let ops = align_edits(&rp, &hp);
        let c = EditCounts::from_ops(&ops);
        prop_assert_eq!(c.errors(), exhaustive_errors(&r, &h));
        prop_assert_eq!(c.n, r.len());
        let consumed_ref = ops.iter().filter(|o| !matches!(o, EditOp::Ins)).count();
        let consumed_hyp = ops.iter().filter(|o| !matches!(o, EditOp::Del)).count();
        prop_assert_eq!(consumed_ref, r.len());
        prop_assert_eq!(consumed_hyp, h.len());

        let refs: BTreeMap<String, Vec<PhoneId>> = [("u".to_string(), rp)].into();
        let hyps: BTreeMap<String, Vec<PhoneId>> = [("u".to_string(), hp)].into();
        prop_assert_eq!(recognition_score(&refs, &hyps).unwrap(), c);
    }
}
