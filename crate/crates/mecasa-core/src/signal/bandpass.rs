//! Zero-phase Butterworth band-pass filtering.
//!
//! A 4th-order Butterworth prototype is transformed to a band-pass filter
//! (8 poles), discretized with the bilinear transform into second-order
//! sections, and applied forward-backward with odd-reflection padding so the
//! net filter has zero phase.

use super::{SignalError, SignalRecording, SignalResult};

#[derive(Debug, Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Complex {
        Complex { re, im }
    }
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
    fn scale(self, s: f64) -> Complex {
        Complex::new(self.re * s, self.im * s)
    }
    fn sqrt(self) -> Complex {
        let r = (self.re * self.re + self.im * self.im).sqrt();
        let theta = self.im.atan2(self.re) / 2.0;
        Complex::new(r.sqrt() * theta.cos(), r.sqrt() * theta.sin())
    }
    fn abs(self) -> f64 {
        (self.re * self.re + self.im * self.im).sqrt()
    }
}

/// One second-order section in z^-1 form with unity a0.
#[derive(Debug, Clone)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, omega: f64) -> Complex {
        let z1 = Complex::new(omega.cos(), -omega.sin()); // z^-1
        let z2 = z1.mul(z1);
        let num = Complex::new(self.b[0], 0.0)
            .add(z1.scale(self.b[1]))
            .add(z2.scale(self.b[2]));
        let den = Complex::new(1.0, 0.0)
            .add(z1.scale(self.a[0]))
            .add(z2.scale(self.a[1]));
        num.div(den)
    }
}

/// Cascaded second-order sections plus an overall gain.
#[derive(Debug, Clone)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub gain: f64,
}

impl SosFilter {
    /// Butterworth band-pass of prototype order `order` between `lo` and
    /// `hi` Hz at sampling rate `fs`.
    pub fn butterworth_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> SignalResult<SosFilter> {
        if !(0.0 < lo && lo < hi && hi < fs / 2.0) {
            return Err(SignalError::Nyquist { lo, hi, fs });
        }
        let fs2 = 2.0 * fs;
        let w1 = fs2 * (std::f64::consts::PI * lo / fs).tan();
        let w2 = fs2 * (std::f64::consts::PI * hi / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        // Prototype poles on the unit circle, left half-plane.
        let n = order;
        let mut analog_poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = std::f64::consts::PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex::new(theta.cos(), theta.sin());
            // Low-pass to band-pass: s^2 - p*bw*s + w0^2 = 0.
            let pb = p.scale(bw);
            let disc = pb.mul(pb).sub(Complex::new(4.0 * w0sq, 0.0)).sqrt();
            analog_poles.push(pb.add(disc).scale(0.5));
            analog_poles.push(pb.sub(disc).scale(0.5));
        }

        // Bilinear transform: z = (2fs + s) / (2fs - s).
        let digital_poles: Vec<Complex> = analog_poles
            .iter()
            .map(|&s| Complex::new(fs2, 0.0).add(s).div(Complex::new(fs2, 0.0).sub(s)))
            .collect();

        // Pair conjugates (and stray real poles) into biquads. Zeros: n at
        // z=1 and n at z=-1, one of each per section.
        let tol = 1e-9;
        let mut complex_poles: Vec<Complex> = digital_poles
            .iter()
            .filter(|p| p.im > tol)
            .cloned()
            .collect();
        let mut real_poles: Vec<f64> = digital_poles
            .iter()
            .filter(|p| p.im.abs() <= tol)
            .map(|p| p.re)
            .collect();
        complex_poles.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        real_poles.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut sections = Vec::new();
        for p in &complex_poles {
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * p.re, p.re * p.re + p.im * p.im],
            });
        }
        for pair in real_poles.chunks(2) {
            let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(r1 + r2), r1 * r2],
            });
        }
        debug_assert_eq!(sections.len(), n);

        // Normalize to unity gain at the warped center frequency.
        let f_center = (w0sq.sqrt() / fs2).atan() * 2.0; // digital radians
        let mut filt = SosFilter { sections, gain: 1.0 };
        let mag = filt.magnitude(f_center);
        filt.gain = 1.0 / mag;
        Ok(filt)
    }

    pub fn magnitude(&self, omega: f64) -> f64 {
        let mut h = Complex::new(self.gain, 0.0);
        for s in &self.sections {
            h = h.mul(s.response(omega));
        }
        h.abs()
    }

    /// Single forward pass over one channel.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| v * self.gain).collect();
        for s in &self.sections {
            let (mut s1, mut s2) = (0.0f64, 0.0f64);
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + s1;
                s1 = s.b[1] * xin - s.a[0] * out + s2;
                s2 = s.b[2] * xin - s.a[1] * out;
                *v = out;
            }
        }
        y
    }

    /// Forward-backward pass with odd-reflection padding: zero phase.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        let pad = pad.min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Band-pass every channel of a recording between `lo` and `hi` Hz with a
/// 4th-order zero-phase Butterworth filter.
pub fn bandpass_filter(rec: &SignalRecording, lo: f64, hi: f64) -> SignalResult<SignalRecording> {
    let filt = SosFilter::butterworth_bandpass(4, lo, hi, rec.fs)?;
    // Long enough for the low edge's transient to settle.
    let pad = ((3.0 * rec.fs / lo).ceil() as usize).min(rec.samples.saturating_sub(1));
    let mut out = rec.clone();
    for c in 0..rec.channels {
        let filtered = filt.filtfilt(rec.channel(c), pad);
        out.data[c * rec.samples..(c + 1) * rec.samples].copy_from_slice(&filtered);
    }
    Ok(out)
}

/// Amplitude of the `freq` Hz component of `x`, via projection onto the
/// complex exponential. Oracle used by filter tests.
pub fn tone_amplitude(x: &[f64], fs: f64, freq: f64) -> f64 {
    let n = x.len() as f64;
    let w = 2.0 * std::f64::consts::PI * freq / fs;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        re += v * (w * i as f64).cos();
        im += v * (w * i as f64).sin();
    }
    2.0 * (re * re + im * im).sqrt() / n
}
