use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxdep::audio::{estimate_f0_track, LogMelPatch, PitchConfig, Waveform};
use voxdep::depression::{DepressionCnn, DepressionCnnConfig};
use voxdep::embed::SpeakerEmbeddings;
use voxdep::par;
use voxdep::vowel::{predict_patches, VowelCnn, VowelCnnConfig};

fn patches(count: usize, rng: &mut ChaCha8Rng) -> Vec<LogMelPatch> {
    (0..count)
        .map(|_| LogMelPatch {
            n_mels: 128,
            n_frames: 28,
            n_fft: 512,
            hop: 128,
            values: (0..128 * 28).map(|_| rng.random_range(-8.0f32..0.0)).collect(),
        })
        .collect()
}

fn vowel_inference(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = VowelCnn::<f32>::new(VowelCnnConfig::default(), 1).unwrap();
    let data = patches(128, &mut rng);
    let refs: Vec<&LogMelPatch> = data.iter().collect();
    let mut g = c.benchmark_group("vowel_inference_128");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| predict_patches(&model, black_box(&refs), 16).unwrap()));
    g.bench_function("sequential", |b| {
        b.iter(|| par::sequential(|| predict_patches(&model, black_box(&refs), 16).unwrap()))
    });
    g.finish();
}

fn pitch_track(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<f32> = (0..32_000)
        .map(|i| (0.3 * (2.0 * std::f64::consts::PI * 140.0 * i as f64 / 16_000.0).sin()) as f32 + rng.random_range(-0.01..0.01))
        .collect();
    let w = Waveform::new(samples, 16_000);
    let cfg = PitchConfig::default();
    let mut g = c.benchmark_group("f0_track_2s");
    g.bench_function("parallel", |b| b.iter(|| estimate_f0_track(black_box(&w), &cfg)));
    g.bench_function("sequential", |b| b.iter(|| par::sequential(|| estimate_f0_track(black_box(&w), &cfg))));
    g.finish();
}

fn speaker_voting(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = DepressionCnn::<f32>::new(DepressionCnnConfig::default(), 42, 3).unwrap();
    let speakers: Vec<SpeakerEmbeddings> = (0..12)
        .map(|i| SpeakerEmbeddings {
            speaker_id: format!("S{i:03}"),
            label: (i % 2) as u8,
            rows: (0..120).map(|_| (0..128).map(|_| rng.random_range(0.0f32..1.0)).collect()).collect(),
            saliency: vec![0.0; 120],
        })
        .collect();
    let run = || par::try_map_slice(&speakers, |s| model.predict_speaker(s, 0.001)).unwrap();
    let mut g = c.benchmark_group("predict_12_speakers");
    g.bench_function("parallel", |b| b.iter(|| black_box(run())));
    g.bench_function("sequential", |b| b.iter(|| par::sequential(|| black_box(run()))));
    g.finish();
}

criterion_group!(benches, vowel_inference, pitch_track, speaker_voting);
criterion_main!(benches);
