//! Butterworth bandpass design (analog prototype → lowpass-to-bandpass
//! transform → bilinear transform) factored into second-order sections, and
//! a zero-phase forward-backward cascade runner with reflective padding and
//! steady-state initial conditions.

use std::f64::consts::PI;

/// Minimal complex arithmetic for the pole transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
struct C {
    re: f64,
    im: f64,
}

impl C {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    fn add(self, o: C) -> C {
        C::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: C) -> C {
        C::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: C) -> C {
        C::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn div(self, o: C) -> C {
        let d = o.re * o.re + o.im * o.im;
        C::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    fn scale(self, k: f64) -> C {
        C::new(self.re * k, self.im * k)
    }

    fn sqrt(self) -> C {
        let r = (self.re * self.re + self.im * self.im).sqrt();
        let theta = self.im.atan2(self.re) / 2.0;
        C::new(r.sqrt() * theta.cos(), r.sqrt() * theta.sin())
    }

    fn abs_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// One biquad in direct form II transposed:
/// `y[n] = b0 x[n] + z1;  z1' = b1 x[n] - a1 y[n] + z2;  z2' = b2 x[n] - a2 y[n]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3], // a[0] normalized to 1
}

impl Sos {
    /// Steady-state filter state for a unit-step input, used to suppress
    /// start-up transients.
    fn step_state(&self) -> (f64, f64) {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2]);
        let z1 = dc - self.b[0];
        let z2 = z1 - self.b[1] + self.a[1] * dc;
        (z1, z2)
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }

    /// Complex frequency response at digital angular frequency `omega`.
    fn response(&self, omega: f64) -> C {
        let z1 = C::new(omega.cos(), -omega.sin()); // z^-1
        let z2 = z1.mul(z1);
        let num = C::new(self.b[0], 0.0)
            .add(z1.scale(self.b[1]))
            .add(z2.scale(self.b[2]));
        let den = C::new(1.0, 0.0)
            .add(z1.scale(self.a[1]))
            .add(z2.scale(self.a[2]));
        num.div(den)
    }
}

/// Designs an order-`n` digital Butterworth bandpass as `n` biquads.
///
/// Band edges are pre-warped so the digital -3 dB points land exactly on
/// `low_hz`/`high_hz`; gain is normalized to 1 at the geometric band center.
/// The caller must have validated `0 < low < high < fs/2` and `n >= 1`.
pub fn butterworth_bandpass_sos(low_hz: f64, high_hz: f64, n: usize, fs: f64) -> Vec<Sos> {
    let w1 = (PI * low_hz / fs).tan();
    let w2 = (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    // Analog lowpass prototype poles on the unit circle, left half plane.
    let mut analog_poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = C::new(theta.cos(), theta.sin());
        // Lowpass-to-bandpass: each prototype pole splits into two.
        let pb = p.scale(bw / 2.0);
        let disc = pb.mul(pb).sub(C::new(w0_sq, 0.0)).sqrt();
        analog_poles.push(pb.add(disc));
        analog_poles.push(pb.sub(disc));
    }

    // Bilinear transform: s -> (1 - z^-1)/(1 + z^-1), i.e. z = (1 + s)/(1 - s).
    let digital_poles: Vec<C> = analog_poles
        .iter()
        .map(|&s| C::new(1.0 + s.re, s.im).div(C::new(1.0 - s.re, -s.im)))
        .collect();

    // Pair conjugate (or real) poles into biquads. The numerator of each
    // section is (1 - z^-2): one zero at z = 1, one at z = -1.
    let mut remaining = digital_poles;
    let mut sections = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let p = remaining.swap_remove(0);
        let partner_idx = remaining
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (a.re - p.re).abs() + (a.im + p.im).abs();
                let db = (b.re - p.re).abs() + (b.im + p.im).abs();
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .expect("pole count is even");
        let q = remaining.swap_remove(partner_idx);
        // (1 - p z^-1)(1 - q z^-1): for a conjugate pair a2 = |p|^2; the
        // real product also covers the occasional real-real pairing.
        sections.push(Sos {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(p.re + q.re), p.mul(q).re],
        });
    }

    // Unity gain at the warped center frequency.
    let omega_c = 2.0 * w0_sq.sqrt().atan();
    let gain_sq: f64 = sections
        .iter()
        .map(|s| s.response(omega_c).abs_sq())
        .product();
    let per_section = (1.0 / gain_sq.sqrt()).powf(1.0 / n as f64);
    for s in &mut sections {
        s.b[0] *= per_section;
        s.b[2] *= per_section;
    }
    sections
}

fn sosfilt_in_place(sos: &[Sos], x: &mut [f64]) {
    // Initial conditions: per-section steady state for a step of the first
    // sample, cascaded through the DC gains of the preceding sections.
    let mut level = x[0];
    let mut states: Vec<(f64, f64)> = Vec::with_capacity(sos.len());
    for s in sos {
        let (z1, z2) = s.step_state();
        states.push((z1 * level, z2 * level));
        level *= s.dc_gain();
    }
    for (s, st) in sos.iter().zip(states.iter_mut()) {
        let (mut z1, mut z2) = *st;
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[1] * y + z2;
            z2 = s.b[2] * input - s.a[2] * y;
            *v = y;
        }
    }
}

/// Longest pole time constant of the cascade, in samples. Narrow or
/// near-DC bands have very slow transients; padding must cover them.
fn max_time_constant(sos: &[Sos]) -> f64 {
    let mut tau: f64 = 1.0;
    for s in sos {
        let disc = s.a[1] * s.a[1] - 4.0 * s.a[2];
        let mag = if disc <= 0.0 {
            s.a[2].max(0.0).sqrt()
        } else {
            let r1 = (-s.a[1] + disc.sqrt()) / 2.0;
            let r2 = (-s.a[1] - disc.sqrt()) / 2.0;
            r1.abs().max(r2.abs())
        };
        if mag > 0.0 && mag < 1.0 {
            tau = tau.max(-1.0 / mag.ln());
        }
    }
    tau
}

/// Forward-backward cascade filtering with odd-reflection padding.
/// Zero phase; the effective magnitude response is squared.
pub fn sosfiltfilt(sos: &[Sos], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let taps = 2 * sos.len() + 1;
    // Pad long enough for the slowest transient to decay below ~e^-6.
    let pad = (3 * taps)
        .max((6.0 * max_time_constant(sos)).ceil() as usize)
        .min(n.saturating_sub(1));

    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }

    sosfilt_in_place(sos, &mut ext);
    ext.reverse();
    sosfilt_in_place(sos, &mut ext);
    ext.reverse();

    ext[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_stable() {
        // All poles strictly inside the unit circle.
        for &(low, high, order, fs) in &[
            (0.1, 250.0, 4, 512.0),
            (5.0, 15.0, 2, 512.0),
            (20.0, 40.0, 4, 512.0),
            (1.0, 30.0, 3, 256.0),
            (0.5, 45.0, 5, 100.0),
        ] {
            let sos = butterworth_bandpass_sos(low, high, order, fs);
            assert_eq!(sos.len(), order);
            for s in &sos {
                // |a2| < 1 and |a1| < 1 + a2 is the biquad stability triangle
                assert!(s.a[2].abs() < 1.0, "unstable: {s:?}");
                assert!(s.a[1].abs() < 1.0 + s.a[2], "unstable: {s:?}");
            }
        }
    }

    #[test]
    fn magnitude_matches_analytic_butterworth() {
        let (low, high, order, fs) = (5.0, 15.0, 4usize, 512.0);
        let sos = butterworth_bandpass_sos(low, high, order, fs);
        let warp = |f: f64| (PI * f / fs).tan();
        let (w1, w2) = (warp(low), warp(high));
        for &f in &[1.0, 3.0, 5.0, 8.0, 10.0, 15.0, 25.0, 60.0, 120.0] {
            let omega = 2.0 * PI * f / fs;
            let got_sq: f64 = sos.iter().map(|s| s.response(omega).abs_sq()).product();
            let v = warp(f);
            let x = (v * v - w1 * w2) / ((w2 - w1) * v);
            let want_sq = 1.0 / (1.0 + x.powi(2 * order as i32));
            assert!(
                (got_sq - want_sq).abs() < 1e-9 * want_sq.max(1e-12),
                "f={f}: got {got_sq}, want {want_sq}"
            );
        }
    }

    #[test]
    fn half_power_at_band_edges() {
        let sos = butterworth_bandpass_sos(5.0, 15.0, 4, 512.0);
        for f in [5.0, 15.0] {
            let omega = 2.0 * PI * f / 512.0;
            let g: f64 = sos.iter().map(|s| s.response(omega).abs_sq()).product();
            assert!((g - 0.5).abs() < 1e-9, "edge {f}: {g}");
        }
    }
}
