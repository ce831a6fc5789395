//! Gray-labelled square QAM reference system.
//!
//! Classical benchmark for the learned mapper/demapper: a square grid with
//! independent per-axis Gray labelling, unit mean power, and a
//! minimum-distance detector that knows the nominal channel scale but is
//! unaware of IQ imbalance. Because the detector ignores the conjugate
//! image term, its error rate hits a floor as noise vanishes; the floor is
//! computed here exactly by enumerating all messages through a zero-noise
//! cascade, which doubles as an independent check on the simulator.
//!
//! Labelling convention: the first m/2 message bits select the in-phase
//! level, the remaining m/2 the quadrature level, each half read as a
//! reflected Gray code over level positions. Nearest-distance ties resolve
//! to the lower message index.

use num_complex::Complex64;

use crate::channel::LinkState;
use crate::impairments::{apply_tx_iqi, IqiCoefficients};
use crate::mapper::{bit_errors, Constellation, MessageBits};
use crate::{Error, Result};

/// Square Gray-labelled QAM constellation for an even number of bits.
#[derive(Debug, Clone)]
pub struct QamGrid {
    m: usize,
    points: Vec<Complex64>,
}

/// Position of a label in the reflected Gray sequence (inverse of
/// `pos ^ (pos >> 1)`).
fn gray_decode(label: usize) -> usize {
    let mut pos = label;
    let mut shift = 1;
    while (label >> shift) != 0 {
        pos ^= label >> shift;
        shift += 1;
    }
    pos
}

impl QamGrid {
    /// Builds the 2^m-point grid; `m` must be even so the square factors
    /// into two identical amplitude ladders.
    pub fn new(m: usize) -> Result<QamGrid> {
        if m == 0 || m % 2 != 0 || m > 16 {
            return Err(Error::InvalidParameter(format!(
                "square QAM needs an even number of bits in 2..=16, got {m}"
            )));
        }
        let half = m / 2;
        let levels = 1usize << half;
        // Unit mean power over the grid: per-axis levels are odd multiples
        // of `step`, and E[I^2 + Q^2] = 2 step^2 (L^2 - 1) / 3.
        let step = (3.0 / (2.0 * ((levels * levels - 1) as f64))).sqrt();
        let amplitude = |label: usize| {
            let pos = gray_decode(label) as f64;
            (2.0 * pos - (levels as f64 - 1.0)) * step
        };
        let points = (0..(1usize << m))
            .map(|index| {
                let vi = index >> half;
                let vq = index & (levels - 1);
                Complex64::new(amplitude(vi), amplitude(vq))
            })
            .collect();
        Ok(QamGrid { m, points })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// The grid as a generic constellation, for code paths shared with the
    /// learned mapper.
    pub fn constellation(&self) -> Constellation {
        Constellation::new(self.points.clone()).expect("grid size is a power of two")
    }
}

/// Transmit symbol for a message, by Gray-labelled lookup.
pub fn qam_modulate(grid: &QamGrid, msg: &MessageBits) -> Result<Complex64> {
    if msg.m() != grid.m {
        return Err(Error::DimensionMismatch(format!(
            "{}-bit message on a {}-bit grid",
            msg.m(),
            grid.m
        )));
    }
    Ok(grid.points[msg.to_index()])
}

/// Minimum-distance decision that knows the nominal scale h*sqrt(ps) but
/// nothing about IQ imbalance. Ties go to the lower message index.
pub fn qam_detect_unaware(grid: &QamGrid, r: Complex64, link: &LinkState) -> MessageBits {
    MessageBits::from_index(qam_detect_index(grid, r, link), grid.m)
}

/// Same detector, returning the message index; the allocation-free form
/// Monte Carlo loops want.
pub fn qam_detect_index(grid: &QamGrid, r: Complex64, link: &LinkState) -> usize {
    let normalized = r / (link.h * link.ps.sqrt());
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in grid.points.iter().enumerate() {
        let d = (normalized - p).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Exact zero-noise bit error rate of the unaware detector under the given
/// TX/RX mismatch, by enumerating every message.
///
/// Deliberately routes through the staged operations (TX mismatch, scalar
/// channel, RX mismatch applied longhand) rather than the fused cascade, so
/// it stays an independent oracle for the Monte Carlo path.
pub fn qam_floor_oracle(grid: &QamGrid, g: &IqiCoefficients, k: &IqiCoefficients) -> Result<f64> {
    let link = LinkState::new(1.0, 1.0, 0.0)?;
    let mut wrong_bits = 0u64;
    for index in 0..grid.points.len() {
        let msg = MessageBits::from_index(index, grid.m);
        let x = apply_tx_iqi(qam_modulate(grid, &msg)?, g);
        let y = x * link.h * link.ps.sqrt();
        let r = k.c1 * y + k.c2 * y.conj();
        let decided = qam_detect_unaware(grid, r, &link);
        wrong_bits += u64::from(bit_errors(&msg, &decided)?);
    }
    Ok(wrong_bits as f64 / (grid.m as f64 * grid.points.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{calibrate_snr, transmit_through};
    use crate::impairments::{rx_coeffs, tx_coeffs, IrrSplit, Mismatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Gaussian tail probability via Simpson's rule on the density, kept
    /// free of any library math beyond exp.
    fn q_simpson(x: f64) -> f64 {
        let upper = x + 12.0;
        let n = 20_000;
        let h = (upper - x) / n as f64;
        let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = density(x) + density(upper);
        for i in 1..n {
            let w = if i % 2 == 0 { 2.0 } else { 4.0 };
            acc += w * density(x + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn qpsk_points_sit_on_the_unit_circle_diagonals() {
        let grid = QamGrid::new(2).unwrap();
        let a = 0.5f64.sqrt();
        let expect = [
            Complex64::new(-a, -a),
            Complex64::new(-a, a),
            Complex64::new(a, -a),
            Complex64::new(a, a),
        ];
        for (p, e) in grid.points().iter().zip(&expect) {
            assert!((p - e).norm() < 1e-12);
        }
    }

    #[test]
    fn sixteen_qam_levels_and_power_are_standard() {
        let grid = QamGrid::new(4).unwrap();
        let d = 0.1f64.sqrt();
        // Message 0 = 0000 sits at the lowest corner; 14 = 1110 has
        // in-phase label 3 (level +1) and quadrature label 2 (level +3).
        assert!((grid.points()[0] - Complex64::new(-3.0 * d, -3.0 * d)).norm() < 1e-12);
        assert!((grid.points()[14] - Complex64::new(d, 3.0 * d)).norm() < 1e-12);
        for m in [2usize, 4, 6] {
            let c = QamGrid::new(m).unwrap().constellation();
            assert!((c.mean_power() - 1.0).abs() < 1e-12);
        }
        assert!(QamGrid::new(3).is_err());
        assert!(QamGrid::new(0).is_err());
    }

    #[test]
    fn gray_labelling_differs_by_one_bit_between_neighbours() {
        // Exhaustive: any two points at the minimum grid spacing must have
        // Hamming distance exactly 1. That is the defining property of the
        // labelling, so it is checked for every even m in range.
        for m in [2usize, 4, 6] {
            let grid = QamGrid::new(m).unwrap();
            let c = grid.constellation();
            let dmin = c.min_distance();
            let pts = grid.points();
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    if ((pts[i] - pts[j]).norm() - dmin).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "m={m}: {i} vs {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_noise_ideal_cascade_decides_every_message_correctly() {
        let grid = QamGrid::new(4).unwrap();
        let g = tx_coeffs(Mismatch::IDEAL);
        let k = rx_coeffs(Mismatch::IDEAL);
        let link = LinkState::new(0.5, 7.0, 0.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for index in 0..16 {
            let msg = MessageBits::from_index(index, 4);
            let r = transmit_through(qam_modulate(&grid, &msg).unwrap(), &g, &k, &link, &mut rng);
            assert_eq!(qam_detect_unaware(&grid, r, &link), msg);
        }
    }

    #[test]
    fn qpsk_error_rate_tracks_the_gaussian_tail() {
        // Monte Carlo against the closed-form benchmark BER = Q(sqrt(snr))
        // for Gray QPSK, with Q evaluated by independent quadrature. Checked
        // at three points within three binomial standard deviations.
        let grid = QamGrid::new(2).unwrap();
        let g = tx_coeffs(Mismatch::IDEAL);
        let k = rx_coeffs(Mismatch::IDEAL);
        let mut rng = ChaCha12Rng::seed_from_u64(20_240_4);
        for snr_db in [0.0, 4.0, 8.0] {
            let link = calibrate_snr(snr_db);
            let p = q_simpson(10f64.powf(snr_db / 10.0).sqrt());
            let symbols = 200_000usize;
            let mut wrong = 0u64;
            for _ in 0..symbols {
                let idx: usize = rng.random_range(0..4);
                let msg = MessageBits::from_index(idx, 2);
                let r =
                    transmit_through(qam_modulate(&grid, &msg).unwrap(), &g, &k, &link, &mut rng);
                let decided = qam_detect_unaware(&grid, r, &link);
                wrong += u64::from(bit_errors(&msg, &decided).unwrap());
            }
            let bits = (2 * symbols) as f64;
            let ber = wrong as f64 / bits;
            let sigma = (p * (1.0 - p) / bits).sqrt();
            assert!(
                (ber - p).abs() < 3.0 * sigma,
                "snr {snr_db} dB: ber {ber} vs theory {p} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn floor_oracle_matches_hand_derived_values() {
        // Both-ends amplitude-only mismatch at 15 dB IRR compresses the
        // quadrature axis by epsilon^2 ~ 0.487. Collapsing the 8-level
        // ladder onto 4 detected levels costs exactly one Gray bit per
        // message on average for m=6 and half a bit for m=4; QPSK keeps the
        // correct signs and stays floor-free.
        let mm = Mismatch::from_irr_db(15.0, IrrSplit::AmplitudeOnly).unwrap();
        let g = tx_coeffs(mm);
        let k = rx_coeffs(mm);
        let floor6 = qam_floor_oracle(&QamGrid::new(6).unwrap(), &g, &k).unwrap();
        assert!((floor6 - 1.0 / 6.0).abs() < 1e-12, "m=6 floor {floor6}");
        let floor4 = qam_floor_oracle(&QamGrid::new(4).unwrap(), &g, &k).unwrap();
        assert!((floor4 - 0.125).abs() < 1e-12, "m=4 floor {floor4}");
        let floor2 = qam_floor_oracle(&QamGrid::new(2).unwrap(), &g, &k).unwrap();
        assert_eq!(floor2, 0.0);
    }

    #[test]
    fn floor_vanishes_for_ideal_hardware() {
        let g = tx_coeffs(Mismatch::IDEAL);
        let k = rx_coeffs(Mismatch::IDEAL);
        for m in [2usize, 4, 6] {
            let grid = QamGrid::new(m).unwrap();
            assert_eq!(qam_floor_oracle(&grid, &g, &k).unwrap(), 0.0);
        }
    }

    #[test]
    fn floor_grows_with_worse_hardware() {
        let grid = QamGrid::new(6).unwrap();
        let mut last = -1.0;
        for irr in [25.0, 18.0, 12.0] {
            let mm = Mismatch::from_irr_db(irr, IrrSplit::AmplitudeOnly).unwrap();
            let f = qam_floor_oracle(&grid, &tx_coeffs(mm), &rx_coeffs(mm)).unwrap();
            assert!(f >= last, "floor not monotone at {irr} dB");
            last = f;
        }
        assert!(last > 0.2);
    }

    #[test]
    fn detection_ties_resolve_to_the_lower_index() {
        let grid = QamGrid::new(2).unwrap();
        let link = LinkState::new(1.0, 1.0, 0.0).unwrap();
        // The origin is equidistant from all four points: index 0 wins.
        let msg = qam_detect_unaware(&grid, Complex64::new(0.0, 0.0), &link);
        assert_eq!(msg.to_index(), 0);
        // On the positive real axis, equidistant between indices 2 and 3.
        let msg = qam_detect_unaware(&grid, Complex64::new(1.0, 0.0), &link);
        assert_eq!(msg.to_index(), 2);
    }
}
