use proptest::prelude::*;
use voxdep::audio::{LogMelExtractor, MelConfig};
use voxdep::augment::{augment_speaker, build_depression_training_set, saliency_ranking, AugmentConfig};
use voxdep::corpus::{Interval, PhonemeAlignment, VowelLabel};
use voxdep::depression::window_partition;
use voxdep::embed::SpeakerEmbeddings;
use voxdep::eval::pearson;
use voxdep::seed;
use voxdep::segment::{segment_spans, OverlapPolicy};
use voxdep::tensor::{Graph, Tensor};

const PHONES: [&str; 8] = ["aa", "eh", "iy", "ow", "uw", "s", "t", "sil"];

fn alignment_strategy() -> impl Strategy<Value = (PhonemeAlignment, f64)> {
    prop::collection::vec((1u32..400, 0usize..PHONES.len()), 1..30).prop_map(|parts| {
        let mut t = 0.0;
        let intervals = parts
            .into_iter()
            .map(|(len, p)| {
                let iv = Interval {
                    start_ms: t,
                    end_ms: t + len as f64,
                    phone: PHONES[p].into(),
                };
                t += len as f64;
                iv
            })
            .collect();
        (PhonemeAlignment::new(intervals).unwrap(), t)
    })
}

fn speaker(u: usize, label: u8, salt: u64) -> SpeakerEmbeddings {
    SpeakerEmbeddings {
        speaker_id: format!("P{salt}"),
        label,
        rows: (0..u).map(|i| vec![(i + 1) as f32 * 0.5; 8]).collect(),
        saliency: (0..u).map(|i| ((i as u64 * 2654435761 + salt) % 97) as f64).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spp_output_is_fixed_and_constant_preserving(h in 1usize..40, w in 1usize..40, v in -3.0f64..3.0) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full([1, 4, h, w], v));
        let y = g.spp(x, &[1, 2, 4]).unwrap();
        prop_assert_eq!(g.shape(y), &[1, 4 * 21]);
        prop_assert!(g.value(y).data().iter().all(|&o| o == v));
    }

    #[test]
    fn segmentation_invariants((align, dur) in alignment_strategy()) {
        let policy = OverlapPolicy::default();
        let spans = segment_spans(dur, &align, &policy);
        for s in &spans {
            prop_assert!(s.end_ms <= dur + 1e-9);
            prop_assert!((s.end_ms - s.start_ms - 250.0).abs() < 1e-9);
        }
        for pair in spans.windows(2) {
            let hop = pair[1].start_ms - pair[0].start_ms;
            prop_assert!((hop - 250.0 * policy.ratio(pair[0].label)).abs() < 1e-6);
        }
        if let Some(last) = spans.last() {
            let next = last.start_ms + 250.0 * policy.ratio(last.label);
            prop_assert!(next + 250.0 > dur + 1e-9);
        } else {
            prop_assert!(dur < 250.0);
        }
    }

    #[test]
    fn labels_never_claim_absent_vowels((align, dur) in alignment_strategy()) {
        for s in segment_spans(dur, &align, &OverlapPolicy::uniform(0.5)) {
            let present = align.intervals.iter().any(|iv| {
                iv.label() == s.label && iv.end_ms > s.start_ms && iv.start_ms < s.end_ms
            });
            prop_assert!(present || s.label == VowelLabel::Other);
        }
    }

    #[test]
    fn augmentation_invariants(u in 1usize..90, label in 0u8..2, p in 0usize..8, salt in 0u64..1000) {
        let cfg = AugmentConfig { p, ..AugmentConfig::default() };
        let spk = speaker(u, label, salt);
        let z = augment_speaker(&spk, &cfg, &mut seed::rng(salt, &["prop"])).unwrap();
        prop_assert_eq!(z.len(), if label == 1 { 8 } else { 4 });
        for s in &z {
            let prov = &s.provenance;
            prop_assert_eq!(s.rows.len(), cfg.n);
            prop_assert_eq!(s.label(), label);
            let real = cfg.n.min(u);
            let expected = p.min(real.saturating_sub(cfg.r));
            prop_assert_eq!(prov.perturbed.len(), expected);
            let ranking = saliency_ranking(&spk.saliency[prov.window_start..prov.window_start + real]);
            let top: Vec<usize> = ranking.into_iter().take(cfg.r).collect();
            prop_assert!(prov.perturbed.iter().all(|i| !top.contains(i)));
            let constant_rows = s.rows[..real].iter().filter(|r| r.iter().all(|&v| v == cfg.c)).count();
            prop_assert_eq!(constant_rows, expected);
            for (i, row) in s.rows[..real].iter().enumerate() {
                if !prov.perturbed.contains(&i) {
                    prop_assert_eq!(row, &spk.rows[prov.window_start + i]);
                }
            }
            prop_assert!(s.rows[real..].iter().all(|r| r.iter().all(|&v| v == cfg.c)));
        }
    }

    #[test]
    fn dataset_size_is_sum_of_quotas(labels in prop::collection::vec(0u8..2, 1..12)) {
        let speakers: Vec<_> = labels.iter().enumerate().map(|(i, &l)| speaker(50, l, i as u64)).collect();
        let cfg = AugmentConfig::default();
        let set = build_depression_training_set(&speakers, &cfg, 5).unwrap();
        let want: usize = labels.iter().map(|&l| if l == 1 { 8 } else { 4 }).sum();
        prop_assert_eq!(set.samples.len(), want);
    }

    #[test]
    fn window_partition_covers_whole_windows(u in 1usize..500, n in prop::sample::select(vec![10usize, 21, 42])) {
        let w = window_partition(u, n);
        if u < n {
            prop_assert_eq!(w, vec![0..u]);
        } else {
            prop_assert_eq!(w.len(), u / n);
            for (k, r) in w.iter().enumerate() {
                prop_assert_eq!(r.clone(), k * n..(k + 1) * n);
            }
        }
    }

    #[test]
    fn log_mel_frames_and_gain_monotonicity(len in 512usize..6000, gain in 1.1f32..4.0, seed in 0u64..100) {
        let ex = LogMelExtractor::new(MelConfig::default());
        let x: Vec<f32> = (0..len)
            .map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f32 / 500.0 - 1.0) * 0.2)
            .collect();
        let a = ex.extract_samples(&x).unwrap();
        prop_assert_eq!(a.n_frames, 1 + (len - 512) / 128);
        let louder: Vec<f32> = x.iter().map(|v| v * gain).collect();
        let b = ex.extract_samples(&louder).unwrap();
        prop_assert!(a.values.iter().zip(&b.values).all(|(p, q)| q >= p));
    }

    #[test]
    fn pearson_is_bounded(x in prop::collection::vec(-100.0f64..100.0, 3..40), k in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| k * v + (i % 3) as f64).collect();
        if let Some(r) = pearson(&x, &y) {
            prop_assert!(r.abs() <= 1.0);
        }
    }
}
