//! Deterministic digital signal processing for the raw biosignal windows:
//! zero-phase Butterworth bandpass filtering, R-peak detection on ECG, and
//! inter-beat-interval construction. Skin conductance needs no conditioning
//! and is consumed raw by the feature extractor.

mod butterworth;
mod qrs;

pub use butterworth::butterworth_bandpass_sos;
pub use qrs::detect_r_peaks;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
    #[error("signal must contain at least one finite sample")]
    EmptySignal,
    #[error("signal contains a non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error(
        "band edges [{low_hz}, {high_hz}] Hz invalid for Nyquist {nyquist_hz} Hz \
         (need 0 < low < high < Nyquist)"
    )]
    BandEdge {
        low_hz: f64,
        high_hz: f64,
        nyquist_hz: f64,
    },
    #[error("signal too short for the operation: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("sample rate {0} Hz below the 100 Hz minimum for R-peak detection")]
    SampleRateTooLow(f64),
    #[error("no heart beats detected: adaptive thresholds never fired")]
    NoBeatsDetected,
    #[error("need at least 2 beats to form intervals, got {0}")]
    TooFewBeats(usize),
    #[error("beat times must be strictly increasing within [0, duration]")]
    InvalidBeatTimes,
}

/// A uniformly sampled real-valued time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl SampledSignal {
    /// Builds a signal, validating that the rate is positive, the series is
    /// non-empty, and every sample is finite.
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self, SignalError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SignalError::InvalidSampleRate(sample_rate_hz));
        }
        if samples.is_empty() {
            return Err(SignalError::EmptySignal);
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Window duration in seconds (`len / rate`).
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Butterworth bandpass description. Validated against the actual sample
/// rate when applied; out-of-range bands are an error, never clamped.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl BandpassSpec {
    pub fn new(low_hz: f64, high_hz: f64, order: usize) -> Self {
        Self {
            low_hz,
            high_hz,
            order,
        }
    }

    pub(crate) fn validate(&self, sample_rate_hz: f64) -> Result<(), SignalError> {
        let nyquist = sample_rate_hz / 2.0;
        let ok = self.low_hz > 0.0
            && self.low_hz < self.high_hz
            && self.high_hz < nyquist
            && self.order >= 1
            && self.low_hz.is_finite()
            && self.high_hz.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SignalError::BandEdge {
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                nyquist_hz: nyquist,
            })
        }
    }
}

impl Default for BandpassSpec {
    /// The ECG pre-filter band used throughout the pipeline.
    fn default() -> Self {
        Self {
            low_hz: 0.1,
            high_hz: 250.0,
            order: 4,
        }
    }
}

/// Detected heart-beat fiducial times, seconds from window start.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSeries {
    beat_times_s: Vec<f64>,
}

impl BeatSeries {
    /// Builds a beat series, validating strict monotonicity and the
    /// `[0, duration]` range.
    pub fn new(beat_times_s: Vec<f64>, duration_s: f64) -> Result<Self, SignalError> {
        let increasing = beat_times_s.windows(2).all(|w| w[0] < w[1]);
        let in_range = beat_times_s
            .iter()
            .all(|&t| t.is_finite() && t >= 0.0 && t <= duration_s);
        if increasing && in_range {
            Ok(Self { beat_times_s })
        } else {
            Err(SignalError::InvalidBeatTimes)
        }
    }

    pub fn beat_times_s(&self) -> &[f64] {
        &self.beat_times_s
    }

    pub fn len(&self) -> usize {
        self.beat_times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat_times_s.is_empty()
    }
}

/// Consecutive inter-beat intervals in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct IbiSeries {
    intervals_ms: Vec<f64>,
}

impl IbiSeries {
    /// Builds a series from pre-measured intervals; every interval must be
    /// positive and finite.
    pub fn from_intervals(intervals_ms: Vec<f64>) -> Result<Self, SignalError> {
        if intervals_ms.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(SignalError::InvalidBeatTimes);
        }
        Ok(Self { intervals_ms })
    }

    pub fn intervals_ms(&self) -> &[f64] {
        &self.intervals_ms
    }

    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }
}

/// Applies a Butterworth bandpass forward and backward (zero phase, squared
/// magnitude response). Output has the same length and sample rate.
pub fn bandpass_filter(
    signal: &SampledSignal,
    spec: &BandpassSpec,
) -> Result<SampledSignal, SignalError> {
    spec.validate(signal.sample_rate_hz())?;
    let min_len = 3 * spec.order;
    if signal.len() < min_len {
        return Err(SignalError::SignalTooShort {
            len: signal.len(),
            min: min_len,
        });
    }
    let sos = butterworth_bandpass_sos(
        spec.low_hz,
        spec.high_hz,
        spec.order,
        signal.sample_rate_hz(),
    );
    let filtered = butterworth::sosfiltfilt(&sos, signal.samples());
    SampledSignal::new(filtered, signal.sample_rate_hz())
}

/// Differences consecutive beat times into intervals (milliseconds).
pub fn ibi_series(beats: &BeatSeries) -> Result<IbiSeries, SignalError> {
    let times = beats.beat_times_s();
    if times.len() < 2 {
        return Err(SignalError::TooFewBeats(times.len()));
    }
    let intervals_ms = times.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
    Ok(IbiSeries { intervals_ms })
}
