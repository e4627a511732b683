//! Band-limited resampling with a windowed-sinc kernel.
//!
//! Downsampling low-passes at 0.45 * fs_out before decimation; upsampling
//! interpolates with a sinc band-limited to the input Nyquist. Kernel
//! coefficients are renormalized per output sample over the taps that fall
//! inside the signal, which keeps DC exact and tames edge droop.

use super::{SignalError, SignalRecording, SignalResult};

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let t = std::f64::consts::PI * (x + 1.0);
    0.42 - 0.5 * (t).cos() + 0.08 * (2.0 * t).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resample one channel from `fs_in` to `fs_out`.
pub fn resample_channel(x: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    let n_out = ((x.len() as f64) * fs_out / fs_in).round() as usize;
    // Cutoff relative to the input Nyquist.
    let cut = if fs_out < fs_in {
        0.45 * fs_out / (fs_in / 2.0)
    } else {
        0.9
    };
    let half_width = ((32.0 / cut).ceil() as usize).clamp(8, 1024);
    let mut out = vec![0.0; n_out];
    for (m, o) in out.iter_mut().enumerate() {
        let center = m as f64 * fs_in / fs_out;
        let lo = (center.floor() as isize - half_width as isize).max(0) as usize;
        let hi = ((center.floor() as isize + half_width as isize + 1).max(0) as usize)
            .min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        let mut norm = 0.0;
        for k in lo..=hi {
            let t = k as f64 - center;
            let w = sinc(cut * t) * blackman(t / half_width as f64);
            acc += w * x[k];
            norm += w;
        }
        *o = if norm.abs() > 1e-12 { acc / norm } else { 0.0 };
    }
    out
}

/// Resample every channel of a recording to `fs_out` Hz.
pub fn resample(rec: &SignalRecording, fs_out: f64) -> SignalResult<SignalRecording> {
    if fs_out <= 0.0 {
        return Err(SignalError::InvalidRate { fs: fs_out });
    }
    let n_out = ((rec.samples as f64) * fs_out / rec.fs).round() as usize;
    if n_out == 0 {
        return Err(SignalError::EmptyOutput {
            fs_in: rec.fs,
            fs_out,
        });
    }
    let mut data = Vec::with_capacity(rec.channels * n_out);
    for c in 0..rec.channels {
        data.extend(resample_channel(rec.channel(c), rec.fs, fs_out));
    }
    let mut out = rec.clone();
    out.data = data;
    out.samples = n_out;
    out.fs = fs_out;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Modality;

    fn rec(data: Vec<f64>, fs: f64) -> SignalRecording {
        SignalRecording::new(data, 1, fs, Modality::Eeg).unwrap()
    }

    #[test]
    fn output_length_arithmetic() {
        let r = rec(vec![0.0; 1000], 100.0);
        let y = resample(&r, 10.0).unwrap();
        assert_eq!(y.samples, 100);
        assert_eq!(y.fs, 10.0);
    }

    #[test]
    fn zero_output_rejected() {
        let r = rec(vec![0.0; 5], 1000.0);
        assert!(resample(&r, 0.01).is_err());
        assert!(resample(&r, -1.0).is_err());
    }

    #[test]
    fn downsampled_sine_tracks_ideal() {
        let fs_in = 100.0;
        let n = 3000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 1.0 * i as f64 / fs_in).sin())
            .collect();
        let y = resample(&rec(x, fs_in), 10.0).unwrap();
        let ideal: Vec<f64> = (0..y.samples)
            .map(|i| (2.0 * std::f64::consts::PI * 1.0 * i as f64 / 10.0).sin())
            .collect();
        let dot: f64 = y.data.iter().zip(&ideal).map(|(a, b)| a * b).sum();
        let na: f64 = y.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = ideal.iter().map(|v| v * v).sum::<f64>().sqrt();
        let corr = dot / (na * nb);
        assert!(corr >= 0.999, "correlation {corr}");
    }

    #[test]
    fn round_trip_up_down_preserves_band_limited_signal() {
        let fs = 10.0;
        let n = 3000;
        // Band-limited below 4 Hz.
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * std::f64::consts::PI * 0.7 * t).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 2.3 * t).cos()
                    + 0.2 * (2.0 * std::f64::consts::PI * 3.4 * t).sin()
            })
            .collect();
        let up = resample(&rec(x.clone(), fs), 128.0).unwrap();
        let back = resample(&up, fs).unwrap();
        assert_eq!(back.samples, n);
        let rms: f64 = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let err: f64 = (x
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(err < 0.01 * rms, "round-trip RMSE {err} vs RMS {rms}");
    }

    #[test]
    fn dc_preserved() {
        let r = rec(vec![2.5; 500], 100.0);
        let y = resample(&r, 37.0).unwrap();
        for v in &y.data {
            assert!((v - 2.5).abs() < 1e-9);
        }
    }
}
