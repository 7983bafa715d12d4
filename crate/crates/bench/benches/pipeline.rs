//! Hot-path benchmarks: filtering, R-peak detection, feature extraction,
//! and one multi-task training step.

use criterion::{criterion_group, criterion_main, Criterion};
use painrec_core::data::synthesize_ecg;
use painrec_core::features::{hrv_features, sc_features};
use painrec_core::nn::{backward, NetworkParams, NetworkSpec};
use painrec_core::signal::{bandpass_filter, detect_r_peaks, ibi_series, BandpassSpec, SampledSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn window_512() -> SampledSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..2816).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SampledSignal::new(samples, 512.0).unwrap()
}

fn bench_bandpass(c: &mut Criterion) {
    let sig = window_512();
    let spec = BandpassSpec::default();
    c.bench_function("bandpass_5p5s_512hz_order4", |b| {
        b.iter(|| bandpass_filter(black_box(&sig), black_box(&spec)).unwrap())
    });
}

fn bench_qrs(c: &mut Criterion) {
    let (ecg, _) = synthesize_ecg(72.0, 5.5, 512.0, 0.05, 2).unwrap();
    c.bench_function("detect_r_peaks_5p5s_512hz", |b| {
        b.iter(|| detect_r_peaks(black_box(&ecg)).unwrap())
    });
}

fn bench_features(c: &mut Criterion) {
    let sig = window_512();
    c.bench_function("sc_features_2816_samples", |b| {
        b.iter(|| sc_features(black_box(&sig)).unwrap())
    });

    let (ecg, _) = synthesize_ecg(72.0, 5.5, 512.0, 0.0, 3).unwrap();
    let ibis = ibi_series(&detect_r_peaks(&ecg).unwrap()).unwrap();
    c.bench_function("hrv_features", |b| {
        b.iter(|| hrv_features(black_box(&ibis)).unwrap())
    });
}

fn bench_nn_step(c: &mut Criterion) {
    let task_ids: Vec<String> = (0..20).map(|t| format!("s{t:02}")).collect();
    let spec = NetworkSpec::new(17, vec![32], vec![8], task_ids).unwrap();
    let params = NetworkParams::init(&spec, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch: Vec<(Vec<f64>, f64, usize)> = (0..32)
        .map(|i| {
            let x: Vec<f64> = (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (x, (i % 2) as f64, i % 20)
        })
        .collect();
    c.bench_function("mtnn_backward_batch32_20tasks", |b| {
        b.iter(|| backward(black_box(&params), black_box(&spec), black_box(&batch), None).unwrap())
    });
}

criterion_group!(benches, bench_bandpass, bench_qrs, bench_features, bench_nn_step);
criterion_main!(benches);
