//! fNIRS conversions: raw intensity -> optical density, and optical density
//! -> total hemoglobin via the modified Beer-Lambert law.

use serde::{Deserialize, Serialize};

use super::{Modality, SignalError, SignalRecording, SignalResult};

/// Constants of the modified Beer-Lambert inversion. Extinction coefficients
/// are tabulated values at the device's two wavelengths; they affect the HbT
/// scale only (standardization removes scale before modeling).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MbllConfig {
    /// nm, ordered to match the recording's channel halves.
    pub wavelengths: [f64; 2],
    /// Rows: wavelength; columns: [HbO, HbR]. Units cm^-1 (mol/L)^-1.
    pub extinction: [[f64; 2]; 2],
    /// Source-detector distance in cm.
    pub distance_cm: f64,
    /// Differential pathlength factor per wavelength.
    pub dpf: [f64; 2],
}

impl Default for MbllConfig {
    fn default() -> MbllConfig {
        // Cope's tabulation at 760/850 nm, in cm^-1 mM^-1 scaled to mol/L.
        MbllConfig {
            wavelengths: [760.0, 850.0],
            extinction: [[586.0, 1548.5], [1058.0, 691.3]],
            distance_cm: 3.0,
            dpf: [6.0, 6.0],
        }
    }
}

/// OD(t) = -log10(I(t) / I_ref) per channel, with I_ref the temporal mean of
/// that channel.
pub fn to_optical_density(rec: &SignalRecording) -> SignalResult<SignalRecording> {
    if rec.modality != Modality::FnirsRaw {
        return Err(SignalError::WrongModality {
            expected: Modality::FnirsRaw,
            actual: rec.modality,
        });
    }
    let mut out = rec.clone();
    out.modality = Modality::FnirsOd;
    for c in 0..rec.channels {
        let x = rec.channel(c);
        if let Some(bad) = x.iter().position(|&v| v <= 0.0) {
            return Err(SignalError::NonPositiveIntensity {
                channel: c,
                sample: bad,
            });
        }
        let i_ref = x.iter().sum::<f64>() / x.len() as f64;
        for (i, &v) in x.iter().enumerate() {
            out.data[c * rec.samples + i] = -(v / i_ref).log10();
        }
    }
    Ok(out)
}

fn invert_2x2(m: [[f64; 2]; 2]) -> SignalResult<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    // Condition number estimate via Frobenius norms.
    let norm = (m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2)).sqrt();
    let inv_norm = norm / det.abs().max(f64::MIN_POSITIVE);
    let condition = norm * inv_norm;
    if !det.is_finite() || condition > 1e6 {
        return Err(SignalError::SingularExtinction { condition });
    }
    Ok([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Solve the two-wavelength modified Beer-Lambert system per site and emit
/// HbT = dHbO + dHbR. Channel halves hold the two wavelengths in the same
/// site order, so 2S OD channels become S HbT channels.
pub fn mbll_to_hbt(od: &SignalRecording, cfg: &MbllConfig) -> SignalResult<SignalRecording> {
    if od.modality != Modality::FnirsOd {
        return Err(SignalError::WrongModality {
            expected: Modality::FnirsOd,
            actual: od.modality,
        });
    }
    if od.channels % 2 != 0 {
        return Err(SignalError::UnpairedChannels {
            channels: od.channels,
        });
    }
    if let Some(w) = &od.wavelengths {
        let sites = od.channels / 2;
        let paired = (0..sites).all(|s| {
            (w[s] - cfg.wavelengths[0]).abs() < 1.0
                && (w[s + sites] - cfg.wavelengths[1]).abs() < 1.0
        });
        if !paired {
            return Err(SignalError::UnpairedChannels {
                channels: od.channels,
            });
        }
    }
    let inv = invert_2x2(cfg.extinction)?;
    let sites = od.channels / 2;
    let path = [
        cfg.distance_cm * cfg.dpf[0],
        cfg.distance_cm * cfg.dpf[1],
    ];
    let mut data = vec![0.0; sites * od.samples];
    for s in 0..sites {
        let od0 = od.channel(s);
        let od1 = od.channel(s + sites);
        for t in 0..od.samples {
            let rhs = [od0[t] / path[0], od1[t] / path[1]];
            let hbo = inv[0][0] * rhs[0] + inv[0][1] * rhs[1];
            let hbr = inv[1][0] * rhs[0] + inv[1][1] * rhs[1];
            data[s * od.samples + t] = hbo + hbr;
        }
    }
    let mut out = od.clone();
    out.data = data;
    out.channels = sites;
    out.modality = Modality::FnirsHbt;
    out.channel_labels = (0..sites).map(|i| format!("site{i}")).collect();
    out.wavelengths = None;
    Ok(out)
}

/// (dHbO, dHbR) per site, for tests that need both chromophores.
pub fn mbll_solve(
    od_pair: (&[f64], &[f64]),
    cfg: &MbllConfig,
) -> SignalResult<(Vec<f64>, Vec<f64>)> {
    let inv = invert_2x2(cfg.extinction)?;
    let path = [
        cfg.distance_cm * cfg.dpf[0],
        cfg.distance_cm * cfg.dpf[1],
    ];
    let n = od_pair.0.len();
    let mut hbo = vec![0.0; n];
    let mut hbr = vec![0.0; n];
    for t in 0..n {
        let rhs = [od_pair.0[t] / path[0], od_pair.1[t] / path[1]];
        hbo[t] = inv[0][0] * rhs[0] + inv[0][1] * rhs[1];
        hbr[t] = inv[1][0] * rhs[0] + inv[1][1] * rhs[1];
    }
    Ok((hbo, hbr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(data: Vec<f64>, channels: usize) -> SignalRecording {
        SignalRecording::new(data, channels, 25.0, Modality::FnirsRaw).unwrap()
    }

    #[test]
    fn od_of_reference_is_zero() {
        let r = raw(vec![5.0; 100], 1);
        let od = to_optical_density(&r).unwrap();
        for v in &od.data {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(od.modality, Modality::FnirsOd);
    }

    #[test]
    fn od_log10_definition() {
        // One dip to I_ref/10 among many reference samples.
        let mut data = vec![10.0; 1000];
        data[500] = 1.0;
        let r = raw(data, 1);
        let od = to_optical_density(&r).unwrap();
        let i_ref = (999.0 * 10.0 + 1.0) / 1000.0;
        let want = -(1.0f64 / i_ref).log10();
        assert!((od.data[500] - want).abs() < 1e-12);
        // Against the exact-ratio case: I = I_ref / 10 -> OD = 1.
        assert!((-(0.1f64).log10() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn od_invariant_under_intensity_scaling() {
        let base: Vec<f64> = (0..200).map(|i| 5.0 + (i as f64 * 0.1).sin()).collect();
        let doubled: Vec<f64> = base.iter().map(|v| v * 2.0).collect();
        let a = to_optical_density(&raw(base, 1)).unwrap();
        let b = to_optical_density(&raw(doubled, 1)).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn od_rejects_non_positive_intensity() {
        let mut data = vec![1.0; 60];
        data[40] = 0.0;
        let r = SignalRecording::new(data, 2, 25.0, Modality::FnirsRaw).unwrap();
        match to_optical_density(&r) {
            Err(SignalError::NonPositiveIntensity { channel, sample }) => {
                assert_eq!((channel, sample), (1, 10));
            }
            other => panic!("expected NonPositiveIntensity, got {other:?}"),
        }
    }

    #[test]
    fn mbll_zero_od_gives_zero_hbt() {
        let mut od = raw(vec![1.0; 200], 2);
        od.modality = Modality::FnirsOd;
        od.data = vec![0.0; 200];
        let hbt = mbll_to_hbt(&od, &MbllConfig::default()).unwrap();
        assert_eq!(hbt.channels, 1);
        assert!(hbt.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mbll_forward_round_trip() {
        let cfg = MbllConfig::default();
        let (hbo_true, hbr_true) = (1e-6, 5e-7);
        // Forward-synthesize OD at both wavelengths.
        let n = 50;
        let mut data = vec![0.0; 2 * n];
        for w in 0..2 {
            let od = (cfg.extinction[w][0] * hbo_true + cfg.extinction[w][1] * hbr_true)
                * cfg.distance_cm
                * cfg.dpf[w];
            for t in 0..n {
                data[w * n + t] = od;
            }
        }
        let mut rec = raw(vec![1.0; 2 * n], 2);
        rec.modality = Modality::FnirsOd;
        rec.data = data;
        let (hbo, hbr) = mbll_solve((rec.channel(0), rec.channel(1)), &cfg).unwrap();
        for t in 0..n {
            assert!((hbo[t] - hbo_true).abs() / hbo_true < 1e-10);
            assert!((hbr[t] - hbr_true).abs() / hbr_true < 1e-10);
        }
        let hbt = mbll_to_hbt(&rec, &cfg).unwrap();
        for t in 0..n {
            let want = hbo[t] + hbr[t];
            assert!((hbt.data[t] - want).abs() < 1e-18);
        }
    }

    #[test]
    fn mbll_rejects_odd_channel_count() {
        let mut rec = raw(vec![1.0; 300], 3);
        rec.modality = Modality::FnirsOd;
        assert!(matches!(
            mbll_to_hbt(&rec, &MbllConfig::default()),
            Err(SignalError::UnpairedChannels { .. })
        ));
    }

    #[test]
    fn mbll_rejects_singular_extinction() {
        let cfg = MbllConfig {
            extinction: [[1.0, 1.0], [1.0, 1.0 + 1e-9]],
            ..MbllConfig::default()
        };
        let mut rec = raw(vec![1.0; 100], 2);
        rec.modality = Modality::FnirsOd;
        assert!(matches!(
            mbll_to_hbt(&rec, &cfg),
            Err(SignalError::SingularExtinction { .. })
        ));
    }

    #[test]
    fn mbll_halves_channel_count_68_to_34() {
        let mut rec = SignalRecording::new(vec![0.5; 68 * 10], 68, 10.0, Modality::FnirsRaw)
            .unwrap();
        rec.modality = Modality::FnirsOd;
        let hbt = mbll_to_hbt(&rec, &MbllConfig::default()).unwrap();
        assert_eq!(hbt.channels, 34);
        assert_eq!(hbt.samples, 10);
    }
}
