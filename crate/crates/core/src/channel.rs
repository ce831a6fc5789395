//! THz link budget and the noisy end-to-end channel.
//!
//! The channel gain is flat over the signal band and splits into a spreading
//! term and a molecular absorption term, `h = sqrt(h_p * h_m)` in amplitude:
//!
//! - spreading: `h_p = Gt * Gr * c^2 / ((4 pi)^2 f^2 d^2)`
//! - absorption: `h_m = exp(-kappa * d)` with kappa in 1/m
//!
//! The absorption coefficient comes from a coarse built-in table for standard
//! indoor air (50% relative humidity, 300.15 K, 101325 Pa) spanning 0.1-0.45
//! THz, or from an explicit override for anything outside that range or for
//! other atmospheres.
//!
//! [`transmit_through`] pushes one unit-power symbol through the cascade of
//! TX mismatch, channel gain, RX mismatch and additive noise. The transmit
//! power scales the symbol by sqrt(ps), so with the [`calibrate_snr`] state
//! (h = 1, no = 1) the received signal-to-noise ratio is exactly `ps`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::impairments::{effective_leakage, IqiCoefficients};
use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Antenna geometry of a point-to-point link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub distance_m: f64,
    pub freq_hz: f64,
    pub gt_dbi: f64,
    pub gr_dbi: f64,
}

impl LinkGeometry {
    pub fn new(distance_m: f64, freq_hz: f64, gt_dbi: f64, gr_dbi: f64) -> Result<LinkGeometry> {
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "distance must be positive, got {distance_m}"
            )));
        }
        if !(freq_hz > 0.0 && freq_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "carrier frequency must be positive, got {freq_hz}"
            )));
        }
        Ok(LinkGeometry {
            distance_m,
            freq_hz,
            gt_dbi,
            gr_dbi,
        })
    }
}

/// Atmospheric state for the absorption lookup.
///
/// The built-in table only covers the standard state; any other humidity,
/// temperature or pressure requires `kappa_override`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atmosphere {
    pub rel_humidity: f64,
    pub temperature_k: f64,
    pub pressure_pa: f64,
    /// Absorption coefficient in 1/m, bypassing the table when set.
    pub kappa_override: Option<f64>,
}

impl Default for Atmosphere {
    fn default() -> Self {
        Atmosphere {
            rel_humidity: 0.5,
            temperature_k: 300.15,
            pressure_pa: 101_325.0,
            kappa_override: None,
        }
    }
}

/// Coarse absorption table for standard air, (frequency GHz, kappa 1/m).
///
/// Entries follow the shape of the published gas attenuation curves for a
/// moist sea-level atmosphere: windows near 0.1 and 0.22-0.3 THz, water
/// vapor lines near 0.183, 0.325 and 0.38 THz. Values are indicative at a
/// 10 GHz grid; precision work should supply a measured override.
const KAPPA_TABLE: [(f64, f64); 36] = [
    (100.0, 1.4e-4),
    (110.0, 1.7e-4),
    (120.0, 2.5e-4),
    (130.0, 3.0e-4),
    (140.0, 3.7e-4),
    (150.0, 4.6e-4),
    (160.0, 8.1e-4),
    (170.0, 1.6e-3),
    (180.0, 8.1e-3),
    (190.0, 9.2e-3),
    (200.0, 2.8e-3),
    (210.0, 1.6e-3),
    (220.0, 1.4e-3),
    (230.0, 1.3e-3),
    (240.0, 1.3e-3),
    (250.0, 1.4e-3),
    (260.0, 1.5e-3),
    (270.0, 1.6e-3),
    (280.0, 1.8e-3),
    (290.0, 2.2e-3),
    (300.0, 2.5e-3),
    (310.0, 3.2e-3),
    (320.0, 6.9e-3),
    (330.0, 1.4e-2),
    (340.0, 9.2e-3),
    (350.0, 5.8e-3),
    (360.0, 6.9e-3),
    (370.0, 2.1e-2),
    (380.0, 6.9e-2),
    (390.0, 4.6e-2),
    (400.0, 2.3e-2),
    (410.0, 1.4e-2),
    (420.0, 1.0e-2),
    (430.0, 9.2e-3),
    (440.0, 8.7e-3),
    (450.0, 9.2e-3),
];

/// Free-space spreading power gain Gt*Gr*c^2 / ((4 pi f d)^2).
pub fn path_gain(geo: &LinkGeometry) -> f64 {
    let gt = 10f64.powf(geo.gt_dbi / 10.0);
    let gr = 10f64.powf(geo.gr_dbi / 10.0);
    let four_pi = 4.0 * std::f64::consts::PI;
    gt * gr * (SPEED_OF_LIGHT / (four_pi * geo.freq_hz * geo.distance_m)).powi(2)
}

/// Molecular absorption power gain exp(-kappa * d).
///
/// Uses `atm.kappa_override` when present; otherwise interpolates the built-in
/// standard-air table and errors for frequencies outside its span.
pub fn absorption_gain(geo: &LinkGeometry, atm: &Atmosphere) -> Result<f64> {
    let kappa = match atm.kappa_override {
        Some(k) => {
            if !(k >= 0.0) || !k.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "kappa override must be finite and non-negative, got {k}"
                )));
            }
            k
        }
        None => kappa_from_table(geo.freq_hz)?,
    };
    Ok((-kappa * geo.distance_m).exp())
}

fn kappa_from_table(freq_hz: f64) -> Result<f64> {
    let f_ghz = freq_hz / 1e9;
    let (min, max) = (KAPPA_TABLE[0].0, KAPPA_TABLE[KAPPA_TABLE.len() - 1].0);
    if f_ghz < min || f_ghz > max {
        return Err(Error::FrequencyOutOfRange {
            freq_ghz: f_ghz,
            min_ghz: min,
            max_ghz: max,
        });
    }
    let idx = KAPPA_TABLE
        .iter()
        .rposition(|(f, _)| *f <= f_ghz)
        .expect("range checked above");
    if idx == KAPPA_TABLE.len() - 1 {
        return Ok(KAPPA_TABLE[idx].1);
    }
    let (f0, k0) = KAPPA_TABLE[idx];
    let (f1, k1) = KAPPA_TABLE[idx + 1];
    Ok(k0 + (k1 - k0) * (f_ghz - f0) / (f1 - f0))
}

/// Amplitude channel gain h = sqrt(h_p * h_m).
pub fn channel_gain(geo: &LinkGeometry, atm: &Atmosphere) -> Result<f64> {
    Ok((path_gain(geo) * absorption_gain(geo, atm)?).sqrt())
}

/// Deterministic link state for one simulation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    /// Amplitude channel gain.
    pub h: f64,
    /// Transmit power applied to the unit-power symbol stream.
    pub ps: f64,
    /// Total complex noise power at the receiver input.
    pub no: f64,
}

impl LinkState {
    pub fn new(h: f64, ps: f64, no: f64) -> Result<LinkState> {
        if !(h > 0.0 && ps > 0.0 && no >= 0.0) || !(h + ps + no).is_finite() {
            return Err(Error::InvalidParameter(format!(
                "link state needs h > 0, ps > 0, no >= 0; got h={h}, ps={ps}, no={no}"
            )));
        }
        Ok(LinkState { h, ps, no })
    }

    /// Nominal h^2 Ps / No in dB; infinite for a noiseless state.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.h * self.h * self.ps / self.no).log10()
    }
}

/// Normalized state with h = 1, no = 1 and ps = 10^(snr_db/10), so the
/// nominal SNR equals `snr_db` exactly.
pub fn calibrate_snr(snr_db: f64) -> LinkState {
    LinkState {
        h: 1.0,
        ps: 10f64.powf(snr_db / 10.0),
        no: 1.0,
    }
}

/// One circular complex Gaussian draw with total power `no`.
///
/// Real and imaginary parts are drawn in that order, each with variance no/2.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, no: f64) -> Complex64 {
    let scale = (no * 0.5).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

/// [`transmit_through`] with the receiver noise sample supplied by the
/// caller, for training loops that replay a pre-drawn noise dataset:
///
/// r = xi1*h*sqrt(ps)*s + xi2*h*sqrt(ps)*conj(s) + k1*n + k2*conj(n)
pub fn transmit_with_noise(
    s: Complex64,
    g: &IqiCoefficients,
    k: &IqiCoefficients,
    link: &LinkState,
    n: Complex64,
) -> Complex64 {
    let leak = effective_leakage(g, k);
    let amp = link.h * link.ps.sqrt();
    leak.xi1 * amp * s + leak.xi2 * amp * s.conj() + k.c1 * n + k.c2 * n.conj()
}

/// Pushes one symbol through TX mismatch, the channel and RX mismatch,
/// adding receiver noise:
///
/// r = xi1*h*sqrt(ps)*s + xi2*h*sqrt(ps)*conj(s) + k1*n + k2*conj(n)
///
/// The noise draw consumes exactly two values from `rng` (see [`draw_noise`]),
/// which keeps interleaved simulation streams reproducible.
pub fn transmit_through<R: Rng + ?Sized>(
    s: Complex64,
    g: &IqiCoefficients,
    k: &IqiCoefficients,
    link: &LinkState,
    rng: &mut R,
) -> Complex64 {
    let n = draw_noise(rng, link.no);
    transmit_with_noise(s, g, k, link, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impairments::{rx_coeffs, sdnr, tx_coeffs, IrrSplit, Mismatch};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn path_gain_matches_pocket_calculator_case() {
        // 100 GHz carrier over 10 m with 30 dBi on both ends.
        let geo = LinkGeometry::new(10.0, 100e9, 30.0, 30.0).unwrap();
        let hp = path_gain(&geo);
        let c = SPEED_OF_LIGHT;
        let expect = 1e6 * c * c / ((4.0 * std::f64::consts::PI).powi(2) * 1e22 * 100.0);
        assert!((hp - expect).abs() / expect < 1e-12);
        assert!((hp - 5.6915e-4).abs() / 5.6915e-4 < 1e-4);
        assert!((10.0 * hp.log10() + 32.447).abs() < 1e-2);
    }

    #[test]
    fn path_gain_follows_inverse_square_laws() {
        let base = LinkGeometry::new(10.0, 200e9, 10.0, 20.0).unwrap();
        let double_d = LinkGeometry::new(20.0, 200e9, 10.0, 20.0).unwrap();
        let double_f = LinkGeometry::new(10.0, 400e9, 10.0, 20.0).unwrap();
        assert!((path_gain(&double_d) - path_gain(&base) / 4.0).abs() < 1e-18);
        assert!((path_gain(&double_f) - path_gain(&base) / 4.0).abs() < 1e-18);
    }

    #[test]
    fn unity_path_gain_at_the_normalizing_geometry() {
        // 0 dBi antennas at d = 1 m and f = c / (4 pi) make every factor cancel.
        let geo = LinkGeometry::new(1.0, SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI), 0.0, 0.0)
            .unwrap();
        assert!((path_gain(&geo) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absorption_override_and_degenerate_cases() {
        let geo = LinkGeometry::new(10.0, 100e9, 0.0, 0.0).unwrap();
        let atm = Atmosphere {
            kappa_override: Some(0.001),
            ..Atmosphere::default()
        };
        assert!((absorption_gain(&geo, &atm).unwrap() - (-0.01f64).exp()).abs() < 1e-15);
        let clear = Atmosphere {
            kappa_override: Some(0.0),
            ..Atmosphere::default()
        };
        assert!((absorption_gain(&geo, &clear).unwrap() - 1.0).abs() < 1e-15);
        let bad = Atmosphere {
            kappa_override: Some(-1.0),
            ..Atmosphere::default()
        };
        assert!(absorption_gain(&geo, &bad).is_err());
    }

    #[test]
    fn standard_air_at_100_ghz_is_nearly_transparent_over_10_m() {
        let geo = LinkGeometry::new(10.0, 100e9, 0.0, 0.0).unwrap();
        let hm = absorption_gain(&geo, &Atmosphere::default()).unwrap();
        assert!(hm > 0.99 && hm < 1.0);
    }

    #[test]
    fn absorption_table_interpolates_and_peaks_at_water_lines() {
        let atm = Atmosphere::default();
        let k_at = |f_hz: f64| -> f64 {
            let geo = LinkGeometry::new(1.0, f_hz, 0.0, 0.0).unwrap();
            -absorption_gain(&geo, &atm).unwrap().ln()
        };
        // Midpoint between grid lines lies between the endpoints.
        let (k100, k105, k110) = (k_at(100e9), k_at(105e9), k_at(110e9));
        assert!(k100 < k105 && k105 < k110);
        // The 183 GHz and 380 GHz water lines dominate their neighborhoods.
        assert!(k_at(190e9) > 10.0 * k_at(150e9));
        assert!(k_at(380e9) > k_at(340e9));
    }

    #[test]
    fn out_of_table_frequency_requires_override() {
        let geo = LinkGeometry::new(10.0, 60e9, 0.0, 0.0).unwrap();
        match absorption_gain(&geo, &Atmosphere::default()) {
            Err(Error::FrequencyOutOfRange { freq_ghz, .. }) => {
                assert!((freq_ghz - 60.0).abs() < 1e-9)
            }
            other => panic!("expected range error, got {other:?}"),
        }
        let atm = Atmosphere {
            kappa_override: Some(0.0002),
            ..Atmosphere::default()
        };
        assert!(absorption_gain(&geo, &atm).is_ok());
    }

    #[test]
    fn channel_gain_composes_both_attenuations() {
        let geo = LinkGeometry::new(10.0, 100e9, 30.0, 30.0).unwrap();
        let atm = Atmosphere {
            kappa_override: Some(0.0),
            ..Atmosphere::default()
        };
        let h = channel_gain(&geo, &atm).unwrap();
        assert!((h - path_gain(&geo).sqrt()).abs() < 1e-15);
        // Full standard-air case stays close to the absorption-free value.
        let h_air = channel_gain(&geo, &Atmosphere::default()).unwrap();
        assert!((h_air - 2.386e-2).abs() / 2.386e-2 < 1e-3);
    }

    #[test]
    fn calibrate_snr_pins_the_nominal_ratio() {
        for snr in [-5.0, 0.0, 10.0, 27.5] {
            let link = calibrate_snr(snr);
            assert_eq!(link.h, 1.0);
            assert_eq!(link.no, 1.0);
            assert!((link.snr_db() - snr).abs() < 1e-12);
        }
        assert!((calibrate_snr(0.0).ps - 1.0).abs() < 1e-15);
        assert!((calibrate_snr(10.0).ps - 10.0).abs() < 1e-15);
    }

    #[test]
    fn ideal_noiseless_channel_is_pure_scaling() {
        let g = tx_coeffs(Mismatch::IDEAL);
        let k = rx_coeffs(Mismatch::IDEAL);
        let link = LinkState::new(0.37, 1.0, f64::MIN_POSITIVE).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = Complex64::new(0.6, -0.8);
        let r = transmit_through(s, &g, &k, &link, &mut rng);
        assert!((r - s * 0.37).norm() < 1e-12);
    }

    #[test]
    fn silence_reveals_filtered_noise_power() {
        // With s = 0 the received power is (|k1|^2 + |k2|^2) * no.
        let mm = Mismatch::from_irr_db(15.0, IrrSplit::AmplitudeOnly).unwrap();
        let (g, k) = (tx_coeffs(mm), rx_coeffs(mm));
        let link = LinkState::new(1.0, 1.0, 2.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut acc = 0.0;
        let mut mean = Complex64::new(0.0, 0.0);
        for _ in 0..n {
            let r = transmit_through(Complex64::new(0.0, 0.0), &g, &k, &link, &mut rng);
            acc += r.norm_sqr();
            mean += r;
        }
        let expect = (k.c1.norm_sqr() + k.c2.norm_sqr()) * link.no;
        assert!((acc / n as f64 - expect).abs() / expect < 0.01);
        assert!((mean / n as f64).norm() < 3.0 * (expect / n as f64).sqrt());
    }

    #[test]
    fn fused_channel_equals_two_stage_application() {
        // Same symbol and same noise stream through the fused leakage form and
        // through explicit TX-then-RX application must agree exactly.
        let tx_mm = Mismatch::new(1.08, 0.15).unwrap();
        let rx_mm = Mismatch::new(0.91, -0.07).unwrap();
        let (g, k) = (tx_coeffs(tx_mm), rx_coeffs(rx_mm));
        let link = LinkState::new(0.8, 2.5, 0.3).unwrap();
        let s = Complex64::new(-0.4, 1.1);
        let mut rng_a = ChaCha12Rng::seed_from_u64(42);
        let mut rng_b = rng_a.clone();
        let fused = transmit_through(s, &g, &k, &link, &mut rng_a);
        let x = apply_tx_iqi_standalone(s, &g) * link.h * link.ps.sqrt();
        let n = draw_noise(&mut rng_b, link.no);
        let staged = k.c1 * (x + n) + k.c2 * (x + n).conj();
        assert!((fused - staged).norm() < 1e-12);
    }

    fn apply_tx_iqi_standalone(s: Complex64, g: &IqiCoefficients) -> Complex64 {
        g.c1 * s + g.c2 * s.conj()
    }

    #[test]
    fn seeded_channel_is_reproducible() {
        let mm = Mismatch::from_irr_db(20.0, IrrSplit::PhaseOnly).unwrap();
        let (g, k) = (tx_coeffs(mm), rx_coeffs(mm));
        let link = calibrate_snr(5.0);
        let run = || {
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            (0..64)
                .map(|i| {
                    transmit_through(
                        Complex64::new(i as f64 * 0.01, -0.5),
                        &g,
                        &k,
                        &link,
                        &mut rng,
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_link_sdnr_stays_below_calibrated_snr() {
        let mm = Mismatch::from_irr_db(20.0, IrrSplit::AmplitudeOnly).unwrap();
        let (g, k) = (tx_coeffs(mm), rx_coeffs(mm));
        let leak = crate::impairments::effective_leakage(&g, &k);
        let link = calibrate_snr(5.0);
        let gamma = sdnr(&leak, &k, link.h, link.ps, link.no).unwrap();
        assert!(gamma < 10f64.powf(0.5));
    }
}
