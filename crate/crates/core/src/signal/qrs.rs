//! R-peak detection: bandpass, derivative, squaring, moving-window
//! integration, then adaptive dual-threshold peak picking with a 200 ms
//! refractory period, 360 ms T-wave discrimination, and RR-gap search-back.

use super::{bandpass_filter, BandpassSpec, BeatSeries, SampledSignal, SignalError};

const QRS_BAND_LOW_HZ: f64 = 5.0;
const QRS_BAND_HIGH_HZ: f64 = 15.0;
const INTEGRATION_WINDOW_S: f64 = 0.150;
const REFRACTORY_S: f64 = 0.200;
const T_WAVE_WINDOW_S: f64 = 0.360;
const SEARCH_BACK_S: f64 = 0.150;
const EDGE_GUARD_S: f64 = 0.5;
const MIN_RATE_HZ: f64 = 100.0;
const MIN_DURATION_S: f64 = 2.0;
/// Peaks classified as signal must stand this far above the noise estimate,
/// otherwise the window is declared beat-free (flat or pure-noise input).
const MIN_SIGNAL_NOISE_RATIO: f64 = 8.0;

/// Detects R peaks in an ECG window and returns their times in seconds.
pub fn detect_r_peaks(ecg: &SampledSignal) -> Result<BeatSeries, SignalError> {
    let fs = ecg.sample_rate_hz();
    if fs < MIN_RATE_HZ {
        return Err(SignalError::SampleRateTooLow(fs));
    }
    if ecg.duration_s() < MIN_DURATION_S {
        return Err(SignalError::SignalTooShort {
            len: ecg.len(),
            min: (MIN_DURATION_S * fs).ceil() as usize,
        });
    }

    let band = BandpassSpec::new(QRS_BAND_LOW_HZ, QRS_BAND_HIGH_HZ, 2);
    let filtered = bandpass_filter(ecg, &band)?;
    let filtered = filtered.samples();

    let deriv = five_point_derivative(filtered);
    let integrated = moving_window_mean_square(&deriv, (INTEGRATION_WINDOW_S * fs) as usize);

    let detector = PeakPicker::new(fs, filtered, &deriv, &integrated);
    let beat_indices = detector.run()?;

    let times = beat_indices.iter().map(|&i| i as f64 / fs).collect();
    BeatSeries::new(times, ecg.duration_s())
}

/// Centered five-point derivative; edges clamp to the signal bounds.
fn five_point_derivative(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    (0..n as isize)
        .map(|i| (-at(i - 2) - 2.0 * at(i - 1) + 2.0 * at(i + 1) + at(i + 2)) / 8.0)
        .collect()
}

/// Trailing mean of squared samples over `window` samples.
fn moving_window_mean_square(x: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut sum = 0.0;
    for i in 0..x.len() {
        sum += x[i] * x[i];
        if i >= window {
            sum -= x[i - window] * x[i - window];
        }
        out.push(sum / window.min(i + 1) as f64);
    }
    out
}

struct PeakPicker<'a> {
    fs: f64,
    filtered: &'a [f64],
    deriv: &'a [f64],
    integrated: &'a [f64],
    refractory: usize,
    t_wave_window: usize,
    search_back: usize,
}

struct Detection {
    mwi_index: usize,
    slope: f64,
}

impl<'a> PeakPicker<'a> {
    fn new(fs: f64, filtered: &'a [f64], deriv: &'a [f64], integrated: &'a [f64]) -> Self {
        Self {
            fs,
            filtered,
            deriv,
            integrated,
            refractory: (REFRACTORY_S * fs) as usize,
            t_wave_window: (T_WAVE_WINDOW_S * fs) as usize,
            search_back: (SEARCH_BACK_S * fs) as usize,
        }
    }

    fn run(&self) -> Result<Vec<usize>, SignalError> {
        let candidates = self.local_maxima();
        if candidates.is_empty() {
            return Err(SignalError::NoBeatsDetected);
        }

        // Threshold seeds come from the window interior so that edge
        // transients of the zero-phase filter cannot inflate them; peaks in
        // the guard bands are still examined.
        let guard = (EDGE_GUARD_S * self.fs) as usize;
        let interior = if self.integrated.len() > 2 * guard + 1 {
            &self.integrated[guard..self.integrated.len() - guard]
        } else {
            self.integrated
        };
        let seed = interior.iter().fold(0.0f64, |m, &v| m.max(v));
        if seed <= 0.0 {
            return Err(SignalError::NoBeatsDetected);
        }

        let mut spki = 0.25 * seed;
        let mut npki = 0.125 * seed;
        let mut detections: Vec<Detection> = Vec::new();

        for &idx in &candidates {
            let value = self.integrated[idx];
            let threshold = npki + 0.25 * (spki - npki);
            let since_last = detections
                .last()
                .map(|d| idx - d.mwi_index)
                .unwrap_or(usize::MAX);
            if since_last < self.refractory {
                continue;
            }
            if value >= threshold {
                let slope = self.peak_slope(idx);
                let is_t_wave = since_last < self.t_wave_window
                    && detections
                        .last()
                        .map(|d| slope < d.slope / 2.0)
                        .unwrap_or(false);
                if is_t_wave {
                    npki = 0.125 * value + 0.875 * npki;
                } else {
                    spki = 0.125 * value + 0.875 * spki;
                    detections.push(Detection {
                        mwi_index: idx,
                        slope,
                    });
                }
            } else {
                npki = 0.125 * value + 0.875 * npki;
            }
        }

        if detections.is_empty() {
            return Err(SignalError::NoBeatsDetected);
        }
        if spki < MIN_SIGNAL_NOISE_RATIO * npki {
            return Err(SignalError::NoBeatsDetected);
        }

        self.search_back_missed(&mut detections, npki, spki, &candidates);

        let mut beats: Vec<usize> = detections
            .iter()
            .map(|d| self.locate_r(d.mwi_index))
            .collect();
        beats.sort_unstable();
        beats.dedup();
        self.enforce_refractory(&mut beats);
        self.drop_suppressed_beats(&mut beats);
        if beats.is_empty() {
            return Err(SignalError::NoBeatsDetected);
        }
        Ok(beats)
    }

    /// A QRS cut by the window edge loses its filtered main lobe to the
    /// reflection padding and localizes onto a small sidelobe. R amplitudes
    /// within a window are otherwise uniform, so beats far below the median
    /// amplitude are artifacts.
    fn drop_suppressed_beats(&self, beats: &mut Vec<usize>) {
        if beats.len() < 3 {
            return;
        }
        let mut values: Vec<f64> = beats.iter().map(|&b| self.filtered[b]).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        let median = values[values.len() / 2];
        if median <= 0.0 {
            return;
        }
        beats.retain(|&b| self.filtered[b] >= 0.35 * median);
    }

    /// Strict-left / non-strict-right local maxima of the integrated signal.
    fn local_maxima(&self) -> Vec<usize> {
        let m = self.integrated;
        (1..m.len().saturating_sub(1))
            .filter(|&i| m[i] > m[i - 1] && m[i] >= m[i + 1])
            .collect()
    }

    /// Maximum absolute derivative in the window preceding an MWI peak,
    /// used for T-wave discrimination.
    fn peak_slope(&self, idx: usize) -> f64 {
        let lo = idx.saturating_sub(self.search_back);
        self.deriv[lo..=idx.min(self.deriv.len() - 1)]
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Second pass over RR gaps larger than 1.66x the running average,
    /// accepting the best candidate above the lower threshold.
    fn search_back_missed(
        &self,
        detections: &mut Vec<Detection>,
        npki: f64,
        spki: f64,
        candidates: &[usize],
    ) {
        if detections.len() < 2 {
            return;
        }
        let avg_rr: f64 = {
            let idxs: Vec<usize> = detections.iter().map(|d| d.mwi_index).collect();
            let total: usize = idxs.windows(2).map(|w| w[1] - w[0]).sum();
            total as f64 / (idxs.len() - 1) as f64
        };
        let threshold2 = 0.5 * (npki + 0.25 * (spki - npki));
        let mut added = Vec::new();
        for pair in detections.windows(2) {
            let (a, b) = (pair[0].mwi_index, pair[1].mwi_index);
            if (b - a) as f64 > 1.66 * avg_rr {
                let best = candidates
                    .iter()
                    .filter(|&&c| c > a + self.refractory && c + self.refractory < b)
                    .filter(|&&c| self.integrated[c] >= threshold2)
                    .max_by(|&&x, &&y| self.integrated[x].total_cmp(&self.integrated[y]));
                if let Some(&c) = best {
                    added.push(Detection {
                        mwi_index: c,
                        slope: self.peak_slope(c),
                    });
                }
            }
        }
        detections.extend(added);
        detections.sort_by_key(|d| d.mwi_index);
    }

    /// The MWI peak trails the R wave; the fiducial point is the maximum of
    /// the bandpassed ECG in the preceding 150 ms.
    fn locate_r(&self, mwi_index: usize) -> usize {
        let lo = mwi_index.saturating_sub(self.search_back);
        let hi = mwi_index.min(self.filtered.len() - 1);
        (lo..=hi)
            .max_by(|&i, &j| self.filtered[i].total_cmp(&self.filtered[j]))
            .unwrap_or(mwi_index)
    }

    /// Merges beats closer than the refractory period, keeping the larger
    /// filtered amplitude.
    fn enforce_refractory(&self, beats: &mut Vec<usize>) {
        let mut kept: Vec<usize> = Vec::with_capacity(beats.len());
        for &b in beats.iter() {
            match kept.last() {
                Some(&prev) if b - prev < self.refractory => {
                    if self.filtered[b] > self.filtered[prev] {
                        *kept.last_mut().unwrap() = b;
                    }
                }
                _ => kept.push(b),
            }
        }
        *beats = kept;
    }
}
