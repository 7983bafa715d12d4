//! The 17 per-window features: 12 time-domain skin-conductance descriptors
//! and 5 heart-rate-variability measures, plus train-set standardization.
//!
//! Feature order is fixed and shared by every consumer (CSV columns, model
//! inputs, reports): indices 0-11 are skin conductance, 12-16 are ECG.

use crate::signal::{
    bandpass_filter, detect_r_peaks, ibi_series, BandpassSpec, IbiSeries, SampledSignal,
    SignalError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_SC_FEATURES: usize = 12;
pub const NUM_HRV_FEATURES: usize = 5;
pub const NUM_FEATURES: usize = NUM_SC_FEATURES + NUM_HRV_FEATURES;

/// Human-readable names, index-aligned with [`FeatureVector::values`].
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "sc_max",
    "sc_range",
    "sc_std",
    "sc_iqr",
    "sc_rms",
    "sc_mean",
    "sc_mavfd",
    "sc_mavfsd",
    "sc_mavfd_std",
    "sc_mavfsd_std",
    "sc_skewness",
    "sc_kurtosis",
    "ibi_mean",
    "ibi_rmssd",
    "ibi_sdnn",
    "ibi_slope",
    "ibi_sdnn_rmssd_ratio",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("window too short for skin-conductance features: {0} samples, need 3")]
    WindowTooShort(usize),
    #[error("need at least 2 intervals for HRV features, got {0}")]
    TooFewIntervals(usize),
    #[error("standardization needs at least 2 training rows, got {0}")]
    EmptyTrainingSet(usize),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// One window's 17 features with per-feature validity.
///
/// Invalid entries (e.g. HRV on a window where no beats were found) hold the
/// sentinel 0.0 and are excluded from standardization fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: [f64; NUM_FEATURES],
    valid: [bool; NUM_FEATURES],
}

impl FeatureVector {
    /// Assembles a vector from the two modality blocks; a `None` block is
    /// marked invalid and zeroed.
    pub fn from_blocks(sc: Option<[f64; NUM_SC_FEATURES]>, hrv: Option<[f64; NUM_HRV_FEATURES]>) -> Self {
        let mut values = [0.0; NUM_FEATURES];
        let mut valid = [false; NUM_FEATURES];
        if let Some(sc) = sc {
            values[..NUM_SC_FEATURES].copy_from_slice(&sc);
            valid[..NUM_SC_FEATURES].fill(true);
        }
        if let Some(hrv) = hrv {
            values[NUM_SC_FEATURES..].copy_from_slice(&hrv);
            valid[NUM_SC_FEATURES..].fill(true);
        }
        Self { values, valid }
    }

    /// Builds from raw arrays, zeroing any entry flagged invalid.
    pub fn from_raw(mut values: [f64; NUM_FEATURES], valid: [bool; NUM_FEATURES]) -> Self {
        for (v, &ok) in values.iter_mut().zip(valid.iter()) {
            if !ok {
                *v = 0.0;
            }
        }
        Self { values, valid }
    }

    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.values
    }

    pub fn valid(&self) -> &[bool; NUM_FEATURES] {
        &self.valid
    }

    pub fn hrv_valid(&self) -> bool {
        self.valid[NUM_SC_FEATURES..].iter().all(|&v| v)
    }
}

/// Per-feature mean and sample standard deviation fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: [f64; NUM_FEATURES],
    pub stds: [f64; NUM_FEATURES],
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (N-1 in the denominator), the convention used
/// throughout the crate.
fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|&v| (v - m) * (v - m)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile at fractional rank `q * (N - 1)`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Mean absolute value of first differences.
fn mavfd(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64
}

/// Mean absolute value of second differences (lag-2 spacing).
fn mavfsd(x: &[f64]) -> f64 {
    (0..x.len() - 2)
        .map(|i| (x[i + 2] - x[i]).abs())
        .sum::<f64>()
        / (x.len() - 2) as f64
}

/// The 12 skin-conductance features in their canonical order: max, range,
/// std, IQR, RMS, mean, mavfd, mavfsd, mavfd and mavfsd of the standardized
/// signal, skewness, kurtosis.
///
/// Central moments share the N-1 normalization of the sample variance;
/// zero-variance windows return 0 for the standardized-signal and shape
/// features.
pub fn sc_features(window: &SampledSignal) -> Result<[f64; NUM_SC_FEATURES], FeatureError> {
    let x = window.samples();
    let n = x.len();
    if n < 3 {
        return Err(FeatureError::WindowTooShort(n));
    }

    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let min = x.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let m = mean(x);
    let std = sample_std(x);
    let rms = (x.iter().map(|&v| v * v).sum::<f64>() / n as f64).sqrt();

    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);

    let fd = mavfd(x);
    let sd = mavfsd(x);

    let (fd_star, sd_star, skew, kurt) = if std > 0.0 {
        let star: Vec<f64> = x.iter().map(|&v| (v - m) / std).collect();
        let m2 = x.iter().map(|&v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let m3 = x.iter().map(|&v| (v - m).powi(3)).sum::<f64>() / (n - 1) as f64;
        let m4 = x.iter().map(|&v| (v - m).powi(4)).sum::<f64>() / (n - 1) as f64;
        (
            mavfd(&star),
            mavfsd(&star),
            m3 / m2.powf(1.5),
            m4 / (m2 * m2),
        )
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };

    Ok([
        max, max - min, std, iqr, rms, m, fd, sd, fd_star, sd_star, skew, kurt,
    ])
}

/// The 5 HRV features: mean IBI, RMSSD, SDNN, least-squares slope of IBI
/// against interval index, and SDNN/RMSSD (0 when RMSSD is 0).
pub fn hrv_features(ibis: &IbiSeries) -> Result<[f64; NUM_HRV_FEATURES], FeatureError> {
    let y = ibis.intervals_ms();
    let n = y.len();
    if n < 2 {
        return Err(FeatureError::TooFewIntervals(n));
    }

    let m = mean(y);
    let rmssd = (y
        .windows(2)
        .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
        .sum::<f64>()
        / (n - 1) as f64)
        .sqrt();
    let sdnn = sample_std(y);

    let idx_mean = (n - 1) as f64 / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let d = i as f64 - idx_mean;
        num += d * (v - m);
        den += d * d;
    }
    let slope = num / den;

    let ratio = if rmssd > 0.0 { sdnn / rmssd } else { 0.0 };
    Ok([m, rmssd, sdnn, slope, ratio])
}

/// Signal-to-feature settings for raw windows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// ECG pre-filter applied before R-peak detection.
    pub ecg_band: BandpassSpec,
}

/// Runs the full chain for one window pair. Missing modalities and windows
/// where beat detection fails yield masked-invalid blocks; configuration
/// errors (bad band, too-short signals) propagate.
pub fn extract_window_features(
    sc: Option<&SampledSignal>,
    ecg: Option<&SampledSignal>,
    cfg: &ExtractionConfig,
) -> Result<FeatureVector, FeatureError> {
    let sc_block = match sc {
        Some(window) => Some(sc_features(window)?),
        None => None,
    };
    let hrv_block = match ecg {
        Some(window) => {
            let filtered = bandpass_filter(window, &cfg.ecg_band)?;
            match detect_r_peaks(&filtered) {
                Ok(beats) => match ibi_series(&beats) {
                    Ok(ibis) => match hrv_features(&ibis) {
                        Ok(block) => Some(block),
                        Err(FeatureError::TooFewIntervals(_)) => None,
                        Err(e) => return Err(e),
                    },
                    Err(SignalError::TooFewBeats(_)) => None,
                    Err(e) => return Err(e.into()),
                },
                Err(SignalError::NoBeatsDetected) => None,
                Err(e) => return Err(e.into()),
            }
        }
        None => None,
    };
    Ok(FeatureVector::from_blocks(sc_block, hrv_block))
}

/// Per-feature mean and sample std over training rows; only valid entries
/// contribute. Columns with fewer than two valid entries get std 0 and are
/// zeroed by [`apply_standardization`].
pub fn fit_standardization(rows: &[FeatureVector]) -> Result<StandardizationStats, FeatureError> {
    if rows.len() < 2 {
        return Err(FeatureError::EmptyTrainingSet(rows.len()));
    }
    let mut means = [0.0; NUM_FEATURES];
    let mut stds = [0.0; NUM_FEATURES];
    for f in 0..NUM_FEATURES {
        let col: Vec<f64> = rows
            .iter()
            .filter(|r| r.valid[f])
            .map(|r| r.values[f])
            .collect();
        match col.len() {
            0 => {}
            1 => means[f] = col[0],
            // a constant column gets std exactly 0, untouched by rounding
            _ if col.iter().all(|&v| v == col[0]) => means[f] = col[0],
            _ => {
                means[f] = mean(&col);
                stds[f] = sample_std(&col);
            }
        }
    }
    Ok(StandardizationStats { means, stds })
}

/// Z-scores every valid entry in place; columns with zero std are zeroed,
/// invalid entries stay at the 0.0 sentinel.
pub fn apply_standardization(rows: &mut [FeatureVector], stats: &StandardizationStats) {
    for row in rows {
        for f in 0..NUM_FEATURES {
            if !row.valid[f] {
                row.values[f] = 0.0;
            } else if stats.stds[f] > 0.0 {
                row.values[f] = (row.values[f] - stats.means[f]) / stats.stds[f];
            } else {
                row.values[f] = 0.0;
            }
        }
    }
}
