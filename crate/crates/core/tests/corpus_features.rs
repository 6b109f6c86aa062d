use std::collections::BTreeMap;
use std::path::Path;

use dte_core::corpus::{generate_synthetic_corpus, load_manifest, Split, SynthSpec};
use dte_core::features::{append_deltas, FrontEndConfig, MfccExtractor};

fn small_spec() -> SynthSpec {
    SynthSpec {
        phones: 5,
        words: 6,
        train_utts: 6,
        dev_utts: 2,
        test_utts: 2,
        ..SynthSpec::default()
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthetic_corpus_is_byte_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    generate_synthetic_corpus(&small_spec(), 5, a.path()).unwrap();
    generate_synthetic_corpus(&small_spec(), 5, b.path()).unwrap();
    generate_synthetic_corpus(&small_spec(), 6, c.path()).unwrap();
    let (ta, tb, tc) = (read_tree(a.path()), read_tree(b.path()), read_tree(c.path()));
    assert!(ta.len() > 10);
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn manifests_round_trip_and_transcripts_match_spans() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&small_spec(), 9, dir.path()).unwrap();
    for split in Split::ALL {
        let path = dir.path().join(format!("{}.manifest", split.name()));
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(&loaded, corpus.manifest(split));

        let again = dir.path().join(format!("{}.copy.manifest", split.name()));
        loaded.save(&again).unwrap();
        assert_eq!(load_manifest(&again).unwrap().records, loaded.records);

        for rec in &loaded.records {
            let emitted: Vec<usize> = corpus.spans[&rec.id]
                .iter()
                .map(|s| s.phone)
                .filter(|&p| p != 0)
                .collect();
            let expected: Vec<usize> = rec
                .transcript
                .iter()
                .flat_map(|w| loaded.lexicon.pronunciations(w).unwrap()[0].clone())
                .collect();
            assert_eq!(emitted, expected, "{}", rec.id);
        }
    }
}

#[test]
fn noise_free_phones_are_separable_by_nearest_centroid() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        snr_db: f32::INFINITY,
        ..small_spec()
    };
    let corpus = generate_synthetic_corpus(&spec, 3, dir.path()).unwrap();
    let cfg = FrontEndConfig::default();
    let ex = MfccExtractor::new(cfg.clone()).unwrap();

    let mut frames: Vec<(usize, Vec<f32>)> = Vec::new();
    for split in Split::ALL {
        let m = corpus.manifest(split);
        for rec in &m.records {
            let f = ex.compute(&m.load_utterance(rec).unwrap()).unwrap();
            let labels = corpus.frame_labels(&rec.id, cfg.frame_len(), cfg.shift(), f.num_frames());
            for (t, &p) in labels.iter().enumerate() {
                frames.push((p, f.row(t).to_vec()));
            }
        }
    }
    let dim = frames[0].1.len();
    let mut sums = vec![vec![0f64; dim]; spec.phones];
    let mut counts = vec![0usize; spec.phones];
    for (p, x) in &frames {
        counts[*p] += 1;
        for (s, &v) in sums[*p].iter_mut().zip(x) {
            *s += v as f64;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n.max(1) as f64).collect())
        .collect();
    let correct = frames
        .iter()
        .filter(|(p, x)| {
            let best = (0..spec.phones)
                .filter(|&q| counts[q] > 0)
                .min_by(|&a, &b| {
                    let d = |q: usize| -> f64 {
                        x.iter()
                            .zip(&centroids[q])
                            .skip(1)
                            .map(|(&v, &c)| (v as f64 - c).powi(2))
                            .sum()
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            best == *p
        })
        .count();
    let acc = correct as f64 / frames.len() as f64;
    assert!(acc > 0.95, "nearest-centroid accuracy {acc}");
}

#[test]
fn mfcc_with_deltas_is_39_dimensional() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&small_spec(), 1, dir.path()).unwrap();
    let m = corpus.manifest(Split::Test);
    let ex = MfccExtractor::new(FrontEndConfig::default()).unwrap();
    let utt = m.load_utterance(&m.records[0]).unwrap();
    let f = append_deltas(&ex.compute(&utt).unwrap());
    assert_eq!(f.dim(), 39);
    assert_eq!(f.num_frames(), FrontEndConfig::default().num_frames(utt.samples.len()));
    assert!(f.as_slice().iter().all(|v| v.is_finite()));
}
