//! Seeded synthetic data: skin-conductance windows with a class-scaled
//! phasic rise and ECG windows built from a QRS template train. The
//! generator records every window's true parameters, making it the ground
//! truth for detector and classifier tests.

use super::{ClassLabel, DataError, Dataset, Sample, SynthConfig, WINDOW_DURATION_S};
use crate::seed;
use crate::signal::{BeatSeries, SampledSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tonic skin-conductance level shared by all synthetic subjects. Keeping
/// it constant means pooled models cannot identify subjects from absolute
/// level: subject differences live entirely in the response gain.
const SC_BASELINE: f64 = 2.0;
/// Heart-rate shift (bpm) per unit effect size between baseline and the
/// strongest class.
const HR_SPAN_BPM: f64 = 8.0;
const HR_BASELINE_BPM: f64 = 70.0;
/// Relative sd of the per-beat interval jitter in dataset ECG windows.
const IBI_JITTER: f64 = 0.02;

/// Generating parameters of one synthetic window.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub sample_index: usize,
    pub subject_id: String,
    pub label: ClassLabel,
    /// Realized skin-conductance response amplitude (signal units).
    pub class_effect: f64,
    pub subject_gain: f64,
    pub hr_bpm: f64,
    pub beat_times_s: Vec<f64>,
}

/// Per-window generating parameters for a synthesized dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub records: Vec<GroundTruthRecord>,
}

/// Standard normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout independent of any distribution-crate internals.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// ECG waveform morphology: (amplitude, center offset s, width s) of the
/// P, Q, R, S and T waves relative to the R peak.
const ECG_WAVES: [(f64, f64, f64); 5] = [
    (0.10, -0.180, 0.035),
    (-0.12, -0.035, 0.008),
    (1.00, 0.000, 0.012),
    (-0.20, 0.030, 0.009),
    (0.20, 0.220, 0.050),
];
/// Template support half-width in seconds.
const TEMPLATE_HALF_S: f64 = 0.45;

fn template_value(dt: f64) -> f64 {
    ECG_WAVES
        .iter()
        .map(|&(amp, center, sigma)| {
            let d = dt - center;
            amp * (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum()
}

fn render_beats(beat_times_s: &[f64], n: usize, fs: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for &tb in beat_times_s {
        let lo = ((tb - TEMPLATE_HALF_S) * fs).ceil().max(0.0) as usize;
        let hi = (((tb + TEMPLATE_HALF_S) * fs).floor() as usize).min(n.saturating_sub(1));
        for (i, v) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *v += template_value(i as f64 / fs - tb);
        }
    }
    out
}

/// Phasic skin-conductance response: logistic rise with ~1 s onset latency
/// and exponential recovery, peak amplitude ~1.
fn phasic_shape(t: f64) -> f64 {
    let rise = 1.0 / (1.0 + (-(t - 1.6) / 0.25).exp());
    let recovery = (-(t - 3.8).max(0.0) / 1.5).exp();
    rise * recovery
}

/// Regular QRS train with the first beat at 0.5 s and exact `60/bpm`
/// spacing. Beat placement is pure arithmetic, so the returned beat times
/// are independent of the noise level.
pub fn synthesize_ecg(
    heart_rate_bpm: f64,
    duration_s: f64,
    sample_rate_hz: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(SampledSignal, BeatSeries), DataError> {
    if !(30.0..=220.0).contains(&heart_rate_bpm) {
        return Err(DataError::Config(format!(
            "heart rate {heart_rate_bpm} bpm outside [30, 220]"
        )));
    }
    if duration_s <= 0.0 || sample_rate_hz <= 0.0 || noise_sd < 0.0 {
        return Err(DataError::Config(
            "duration and sample rate must be positive, noise_sd nonnegative".into(),
        ));
    }

    let period = 60.0 / heart_rate_bpm;
    let mut beat_times = Vec::new();
    let mut k = 0usize;
    loop {
        let t = 0.5 + k as f64 * period;
        // Sub-microsecond tolerance keeps beats that land exactly on the
        // window edge despite float rounding.
        if t > duration_s + 1e-6 {
            break;
        }
        beat_times.push(t.min(duration_s));
        k += 1;
    }

    let n = (duration_s * sample_rate_hz).round() as usize;
    let mut samples = render_beats(&beat_times, n, sample_rate_hz);
    if noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "ecg-noise", 0));
        for v in &mut samples {
            *v += noise_sd * normal(&mut rng);
        }
    }

    let signal = SampledSignal::new(samples, sample_rate_hz)?;
    let beats = BeatSeries::new(beat_times, duration_s)?;
    Ok((signal, beats))
}

/// Builds a full synthetic dataset plus its generating parameters.
///
/// Each subject draws a response gain `1 + heterogeneity * z`; each window
/// of class `c` then gets a skin-conductance amplitude
/// `effect_size * (0.5 + gain * (c/4 - 0.5))` and a matching heart-rate
/// shift. With gain 1 the response grows linearly from baseline to the
/// strongest class; a negative gain reverses the direction, so the pooled
/// class-conditional distributions collapse while per-subject ones stay
/// separable.
pub fn synthesize_dataset(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth), DataError> {
    if cfg.n_subjects == 0 || cfg.per_class == 0 {
        return Err(DataError::Config(
            "n_subjects and per_class must be at least 1".into(),
        ));
    }
    if cfg.sample_rate_hz <= 0.0 {
        return Err(DataError::Config("sample_rate_hz must be positive".into()));
    }
    if cfg.effect_size < 0.0 || cfg.subject_heterogeneity < 0.0 || cfg.noise_sd < 0.0 {
        return Err(DataError::Config(
            "effect_size, subject_heterogeneity and noise_sd must be nonnegative".into(),
        ));
    }

    let fs = cfg.sample_rate_hz;
    let n = (WINDOW_DURATION_S * fs).round() as usize;
    let mut samples = Vec::with_capacity(cfg.n_subjects * 5 * cfg.per_class);
    let mut records = Vec::with_capacity(samples.capacity());

    for s in 0..cfg.n_subjects {
        let subject_id = format!("s{s:03}");
        let mut gain_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "gain", s as u64));
        let gain = 1.0 + cfg.subject_heterogeneity * normal(&mut gain_rng);

        for label in ClassLabel::ALL {
            let class_frac = label.index() as f64 / 4.0;
            let response = 0.5 + gain * (class_frac - 0.5);
            let amplitude = cfg.effect_size * response;
            let hr = (HR_BASELINE_BPM + HR_SPAN_BPM * cfg.effect_size * gain * (class_frac - 0.5))
                .clamp(40.0, 200.0);

            for _ in 0..cfg.per_class {
                let idx = samples.len();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "window", idx as u64));

                let sc: Vec<f64> = (0..n)
                    .map(|i| {
                        let t = i as f64 / fs;
                        SC_BASELINE + amplitude * phasic_shape(t) + cfg.noise_sd * normal(&mut rng)
                    })
                    .collect();

                let period = 60.0 / hr;
                let mut beat_times = Vec::new();
                let mut t = period * rng.gen_range(0.3..0.7);
                while t <= WINDOW_DURATION_S {
                    beat_times.push(t);
                    t += period * (1.0 + IBI_JITTER * normal(&mut rng));
                }
                let mut ecg = render_beats(&beat_times, n, fs);
                if cfg.noise_sd > 0.0 {
                    for v in &mut ecg {
                        *v += cfg.noise_sd * normal(&mut rng);
                    }
                }

                samples.push(Sample {
                    subject_id: subject_id.clone(),
                    label,
                    sc_window: Some(SampledSignal::new(sc, fs)?),
                    ecg_window: Some(SampledSignal::new(ecg, fs)?),
                    features: None,
                });
                records.push(GroundTruthRecord {
                    sample_index: idx,
                    subject_id: subject_id.clone(),
                    label,
                    class_effect: amplitude,
                    subject_gain: gain,
                    hr_bpm: hr,
                    beat_times_s: beat_times,
                });
            }
        }
    }

    Ok((Dataset::new(samples)?, GroundTruth { records }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_sc(sample: &Sample) -> f64 {
        sample
            .sc_window
            .as_ref()
            .unwrap()
            .samples()
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    #[test]
    fn regular_train_beat_arithmetic() {
        let (_, beats) = synthesize_ecg(60.0, 10.0, 512.0, 0.0, 0).unwrap();
        let expected: Vec<f64> = (0..10).map(|k| 0.5 + k as f64).collect();
        assert_eq!(beats.beat_times_s(), expected.as_slice());

        let (_, beats) = synthesize_ecg(120.0, 5.5, 512.0, 0.0, 0).unwrap();
        assert_eq!(beats.len(), 11);
        for w in beats.beat_times_s().windows(2) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_does_not_move_beats() {
        let (clean, beats_a) = synthesize_ecg(75.0, 6.0, 256.0, 0.0, 5).unwrap();
        let (noisy, beats_b) = synthesize_ecg(75.0, 6.0, 256.0, 0.05, 5).unwrap();
        assert_eq!(beats_a, beats_b);
        assert_ne!(clean.samples(), noisy.samples());
    }

    #[test]
    fn heart_rate_bounds_are_enforced() {
        assert!(synthesize_ecg(20.0, 5.0, 512.0, 0.0, 0).is_err());
        assert!(synthesize_ecg(250.0, 5.0, 512.0, 0.0, 0).is_err());
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let cfg = SynthConfig {
            n_subjects: 2,
            per_class: 3,
            sample_rate_hz: 128.0,
            ..SynthConfig::default()
        };
        let (a, gta) = synthesize_dataset(&cfg).unwrap();
        let (b, gtb) = synthesize_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(gta, gtb);

        let (c, _) = synthesize_dataset(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_effect_mixes_classes() {
        let cfg = SynthConfig {
            n_subjects: 10,
            per_class: 20,
            sample_rate_hz: 64.0,
            effect_size: 0.0,
            noise_sd: 0.05,
            seed: 3,
            ..SynthConfig::default()
        };
        let (ds, _) = synthesize_dataset(&cfg).unwrap();
        let bln: Vec<f64> = ds
            .samples()
            .iter()
            .filter(|s| s.label == ClassLabel::Bln)
            .map(max_sc)
            .collect();
        let p4: Vec<f64> = ds
            .samples()
            .iter()
            .filter(|s| s.label == ClassLabel::P4)
            .map(max_sc)
            .collect();
        // Welch t statistic must stay below the p = 0.01 two-sided bound.
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let var = |x: &[f64]| {
            let m = mean(x);
            x.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
        };
        let t = (mean(&bln) - mean(&p4)).abs()
            / (var(&bln) / bln.len() as f64 + var(&p4) / p4.len() as f64).sqrt();
        assert!(t < 2.6, "t = {t}");
    }

    #[test]
    fn strong_effect_separates_extreme_classes_without_overlap() {
        let cfg = SynthConfig {
            n_subjects: 10,
            per_class: 20,
            sample_rate_hz: 64.0,
            effect_size: 0.5,
            subject_heterogeneity: 0.0,
            noise_sd: 0.05,
            seed: 4,
        };
        let (ds, _) = synthesize_dataset(&cfg).unwrap();
        let bln_max = ds
            .samples()
            .iter()
            .filter(|s| s.label == ClassLabel::Bln)
            .map(max_sc)
            .fold(f64::NEG_INFINITY, f64::max);
        let p4_min = ds
            .samples()
            .iter()
            .filter(|s| s.label == ClassLabel::P4)
            .map(max_sc)
            .fold(f64::INFINITY, f64::min);
        assert!(
            p4_min > bln_max,
            "overlap: BLN max {bln_max}, P4 min {p4_min}"
        );
    }

    #[test]
    fn mean_max_sc_is_monotone_in_class() {
        let cfg = SynthConfig {
            n_subjects: 10,
            per_class: 20,
            sample_rate_hz: 64.0,
            effect_size: 0.4,
            subject_heterogeneity: 0.0,
            noise_sd: 0.05,
            seed: 5,
        };
        let (ds, _) = synthesize_dataset(&cfg).unwrap();
        let means: Vec<f64> = ClassLabel::ALL
            .iter()
            .map(|&label| {
                let v: Vec<f64> = ds
                    .samples()
                    .iter()
                    .filter(|s| s.label == label)
                    .map(max_sc)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        for w in means.windows(2) {
            assert!(w[1] >= w[0], "class means not monotone: {means:?}");
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = SynthConfig {
            per_class: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(
            synthesize_dataset(&bad),
            Err(DataError::Config(_))
        ));
    }
}
