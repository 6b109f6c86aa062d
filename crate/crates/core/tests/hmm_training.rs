use dte_core::corpus::{expand_transcript, generate_synthetic_corpus, PhoneId, PhoneSet, Split, SynthSpec};
use dte_core::features::{append_deltas, FeatureMatrix, FrontEndConfig, MfccExtractor, NormStats};
use dte_core::hmm::{
    force_align, tie_states, train_monophone_gmm, train_tied_triphone_gmm, count_triphone_states, AcousticModel,
    AlignTarget, DiagGmm, GmmEmission, HmmConfig, HmmTopology, TiedStateMap, Triphone, TriphoneCounts,
    UtteranceHmm,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, phones: usize, dim: usize) -> AcousticModel {
    let symbols: Vec<String> = (0..phones).map(|i| if i == 0 { "sil".into() } else { format!("p{i}") }).collect();
    let phone_set = PhoneSet::new(&symbols, "sil").unwrap();
    let mut counts = TriphoneCounts::new();
    for _ in 0..6 {
        let tri = Triphone::new(rng.random_range(0..phones), rng.random_range(0..phones), rng.random_range(0..phones));
        counts.insert((tri, rng.random_range(0..3)), rng.random_range(1..10));
    }
    let map: TiedStateMap = tie_states(&counts, phones, 4, u32::MAX);
    let s = map.num_states();
    let states = (0..s)
        .map(|_| {
            let mean = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let var = (0..dim).map(|_| rng.random_range(0.3..2.0)).collect();
            DiagGmm::single(mean, var).unwrap()
        })
        .collect();
    let topology = HmmTopology::new((0..s).map(|_| rng.random_range(0.1..0.9)).collect()).unwrap();
    AcousticModel::new(phone_set, map, topology, GmmEmission::new(states).unwrap()).unwrap()
}

/// Every left-to-right path, scored in time order.
fn brute_force(hmm: &UtteranceHmm, emit: &dyn Fn(usize, usize) -> f64, frames: usize) -> (f64, usize) {
    let n = hmm.num_states();
    let mut best = f64::NEG_INFINITY;
    let mut paths = 0;
    let mut stack = vec![(0usize, 0usize, emit(0, hmm.tied[0]))];
    while let Some((t, j, score)) = stack.pop() {
        if t + 1 == frames {
            if j + 1 == n {
                paths += 1;
                best = best.max(score);
            }
            continue;
        }
        if n - 1 - j > frames - 1 - t {
            continue;
        }
        stack.push((t + 1, j, score + hmm.log_self[j] + emit(t + 1, hmm.tied[j])));
        if j + 1 < n {
            stack.push((t + 1, j + 1, score + hmm.log_forward[j] + emit(t + 1, hmm.tied[j + 1])));
        }
    }
    (best, paths)
}

#[test]
fn forced_alignment_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..60 {
        let phones = rng.random_range(2..4);
        let model = random_model(&mut rng, phones, 2);
        let len = rng.random_range(1..3);
        let seq: Vec<PhoneId> = (0..len).map(|_| rng.random_range(0..phones)).collect();
        let frames = 3 * len + rng.random_range(0..4);
        let data: Vec<f32> = (0..frames * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let feats = FeatureMatrix::new(format!("u{case}"), frames, 2, data, 10.0, 25.0).unwrap();

        let hmm = UtteranceHmm::new(&seq, &model.tied, &model.topology, 0);
        let emit = |t: usize, id: usize| model.emission.state(id).log_likelihood(feats.row(t));
        let (oracle, paths) = brute_force(&hmm, &emit, frames);
        assert!((1..=200).contains(&paths));

        let res = force_align(&feats, &seq, &model).unwrap();
        assert_eq!(res.log_prob, oracle, "case {case}");
        assert_eq!(res.alignment.tied.len(), frames);
        assert_eq!(res.positions[0], 0);
        assert_eq!(*res.positions.last().unwrap() as usize, len - 1);
        assert!(res.states.windows(2).zip(res.positions.windows(2)).all(|(s, p)| {
            (p[0] == p[1] && s[1] >= s[0]) || (p[1] == p[0] + 1 && s[0] == 2 && s[1] == 0)
        }));
    }
}

#[test]
fn too_short_utterance_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_model(&mut rng, 3, 2);
    let feats = FeatureMatrix::new("u", 5, 2, vec![0.0; 10], 10.0, 25.0).unwrap();
    assert!(force_align(&feats, &[1, 2], &model).is_err());
}

#[test]
fn em_objective_never_decreases_on_synthetic_speech() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        phones: 5,
        words: 6,
        train_utts: 12,
        dev_utts: 1,
        test_utts: 1,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, 4, dir.path()).unwrap();
    let m = corpus.manifest(Split::Train);
    let ex = MfccExtractor::new(FrontEndConfig::default()).unwrap();
    let raw: Vec<FeatureMatrix> = m
        .records
        .iter()
        .map(|r| append_deltas(&ex.compute(&m.load_utterance(r).unwrap()).unwrap()))
        .collect();
    let stats = NormStats::fit(raw.iter()).unwrap();
    let feats: Vec<FeatureMatrix> = raw.iter().map(|f| stats.apply(f).unwrap()).collect();
    let phones: Vec<Vec<PhoneId>> = m
        .records
        .iter()
        .map(|r| expand_transcript(&r.transcript, &m.lexicon, &m.phone_set, false).unwrap())
        .collect();
    let data: Vec<AlignTarget> = feats
        .iter()
        .zip(&phones)
        .map(|(f, p)| AlignTarget { features: f, phones: p })
        .collect();
    let cfg = HmmConfig {
        em_iters: 4,
        mix_schedule: vec![1, 2],
        min_count: 10,
        ..HmmConfig::default()
    };
    let (mono, hist) = train_monophone_gmm(&data, &m.phone_set, &cfg).unwrap();
    assert!(hist.records.len() >= 8);
    assert!(hist.is_monotone(1e-6), "{:?}", hist.records);

    let aligned: Vec<_> = data.iter().map(|d| force_align(d.features, d.phones, &mono).unwrap()).collect();
    let counts = count_triphone_states(phones.iter().map(Vec::as_slice).zip(aligned.iter()), 0);
    let map = tie_states(&counts, m.phone_set.len(), cfg.min_count, u32::MAX);
    assert!(map.num_states() > 3 * m.phone_set.len());
    let (tri, thist) = train_tied_triphone_gmm(&data, map, &mono, &cfg).unwrap();
    assert!(thist.is_monotone(1e-6), "{:?}", thist.records);

    let dir2 = tempfile::tempdir().unwrap();
    let path = dir2.path().join("tri.gmm");
    tri.save(&path).unwrap();
    let back = AcousticModel::load(&path).unwrap();
    assert_eq!(back.num_states(), tri.num_states());
}
