//! Monte Carlo bit-error-rate measurement and sweep orchestration.
//!
//! A [`LinkSystem`] pairs a modulation rule with a hard decision rule; the
//! engine pushes uniform random messages through the impaired channel until
//! a stopping rule fires and reports the estimated BER. Sweeps iterate a
//! (m, IRR, SNR) grid for one system kind, training learned systems on the
//! fly, and serialize every point to CSV.
//!
//! ## Reproducibility
//!
//! Each grid point derives a job seed from the master seed and the point's
//! coordinates, so points can run in any order or in parallel without
//! changing results. Within a point, symbols are processed in fixed-size
//! chunks; chunk i draws from its own stream derived from the job seed, and
//! chunk results fold in index order. The stopping decision happens between
//! fixed-width waves of chunks. None of this depends on the thread count,
//! so sequential and parallel runs emit byte-identical CSV.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::baseline::{qam_detect_index, QamGrid};
use crate::channel::{transmit_through, LinkState};
use crate::exec::{derive_seed, derive_stream, map_indexed, Exec};
use crate::impairments::{IrrSplit, Mismatch};
use crate::mapper::{generate_constellation, sdnr_feature};
use crate::neural::DenseNet;
use crate::training::{train_conventional, train_rl, TrainConfig, TrainEnv, TrainedPair};
use crate::{Error, Result};

/// Symbols per Monte Carlo chunk; each chunk owns a derived RNG stream.
pub const MC_CHUNK_SYMBOLS: usize = 2048;

/// Chunks launched per wave; the stop rule is checked between waves.
/// Constant (not the thread count) so the stopping point is reproducible.
const WAVE_CHUNKS: usize = 16;

/// Which transceiver a sweep measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Baseline,
    LearnedConv,
    LearnedRl,
}

impl SystemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SystemKind::Baseline => "baseline",
            SystemKind::LearnedConv => "learned-conv",
            SystemKind::LearnedRl => "learned-rl",
        }
    }

    pub fn from_str(name: &str) -> Result<SystemKind> {
        match name {
            "baseline" => Ok(SystemKind::Baseline),
            "learned-conv" => Ok(SystemKind::LearnedConv),
            "learned-rl" => Ok(SystemKind::LearnedRl),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }
}

/// When to stop collecting bits at one point: enough errors for the target
/// resolution, or a hard budget cap, whichever comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    pub min_errors: u64,
    pub max_bits: u64,
}

impl Default for StopRule {
    /// 100 errors keeps the relative error near 10%; 10^7 bits bounds the
    /// runtime when the true BER is below resolution.
    fn default() -> StopRule {
        StopRule {
            min_errors: 100,
            max_bits: 10_000_000,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.min_errors == 0 || self.max_bits == 0 {
            return Err(Error::Config(
                "stopping rule needs positive error and bit budgets".into(),
            ));
        }
        Ok(())
    }
}

/// One measured BER point.
#[derive(Debug, Clone)]
pub struct BerPoint {
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    /// True when the bit budget ran out before `min_errors` errors; the
    /// estimate then only bounds the true BER.
    pub censored: bool,
    pub wall_seconds: f64,
}

impl BerPoint {
    /// Conservative BER bound for censored points: at least the
    /// rule-of-three count of errors is assumed.
    pub fn ber_upper_bound(&self) -> f64 {
        self.errors.max(3) as f64 / self.bits as f64
    }
}

/// A modulation plus hard-decision rule, measurable by the Monte Carlo
/// engine. Message values are plain indices in `0..2^m`; bit errors are
/// counted on the index bits.
pub trait LinkSystem {
    fn m(&self) -> usize;
    fn modulate(&self, msg: usize) -> Complex64;
    fn decide(&self, r: Complex64) -> usize;
}

/// Gray-labelled square QAM with the impairment-unaware detector.
pub struct BaselineSystem {
    grid: QamGrid,
    link: LinkState,
}

impl BaselineSystem {
    /// The link must be the one the engine transmits through, since the
    /// detector divides out its gain.
    pub fn new(m: usize, link: LinkState) -> Result<BaselineSystem> {
        Ok(BaselineSystem {
            grid: QamGrid::new(m)?,
            link,
        })
    }
}

impl LinkSystem for BaselineSystem {
    fn m(&self) -> usize {
        self.grid.m()
    }

    fn modulate(&self, msg: usize) -> Complex64 {
        self.grid.points()[msg]
    }

    fn decide(&self, r: Complex64) -> usize {
        qam_detect_index(&self.grid, r, &self.link)
    }
}

/// A trained mapper/demapper pair frozen at one operating SDNR.
pub struct LearnedSystem {
    points: Vec<Complex64>,
    rx_net: DenseNet,
    feature: f64,
    m: usize,
}

impl LearnedSystem {
    /// Regenerates the constellation at the SDNR of the environment the
    /// system will be measured in, which may differ from the training SNR.
    pub fn from_pair(pair: &TrainedPair, env: &TrainEnv) -> Result<LearnedSystem> {
        let constellation = generate_constellation(&pair.tx_net, env.sdnr_db)?;
        Ok(LearnedSystem {
            points: constellation.points().to_vec(),
            rx_net: pair.rx_net.clone(),
            feature: sdnr_feature(env.sdnr_db),
            m: pair.config.m,
        })
    }
}

impl LinkSystem for LearnedSystem {
    fn m(&self) -> usize {
        self.m
    }

    fn modulate(&self, msg: usize) -> Complex64 {
        self.points[msg]
    }

    /// Posterior argmax with ties to the lower index — the same rule as
    /// the hard decision in the demapper module, checked by a test there
    /// is no drift between the two.
    fn decide(&self, r: Complex64) -> usize {
        let probs = self.rx_net.forward(&[r.re, r.im, self.feature]);
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        best
    }
}

fn run_chunk<S: LinkSystem>(
    system: &S,
    env: &TrainEnv,
    job_seed: u64,
    chunk: u64,
) -> (u64, u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_stream(job_seed, chunk));
    let m = system.m();
    let mut errors = 0u64;
    // Per symbol: message index first, then the noise pair.
    for _ in 0..MC_CHUNK_SYMBOLS {
        let msg = rng.random_range(0..(1usize << m));
        let x = system.modulate(msg);
        let r = transmit_through(x, &env.g, &env.k, &env.link, &mut rng);
        let decided = system.decide(r);
        errors += ((msg ^ decided) as u64).count_ones() as u64;
    }
    ((MC_CHUNK_SYMBOLS * m) as u64, errors)
}

/// Measures the BER of one system in one environment.
///
/// Counts whole chunks only, so the final bit total can overshoot the stop
/// thresholds by at most one wave.
pub fn run_ber_point<S: LinkSystem + Sync>(
    system: &S,
    env: &TrainEnv,
    stop: &StopRule,
    job_seed: u64,
    exec: Exec,
) -> Result<BerPoint> {
    stop.validate()?;
    let start = std::time::Instant::now();
    let mut bits = 0u64;
    let mut errors = 0u64;
    let mut next_chunk = 0u64;
    loop {
        let wave = map_indexed(exec, WAVE_CHUNKS, |i| {
            run_chunk(system, env, job_seed, next_chunk + i as u64)
        });
        for (b, e) in wave {
            bits += b;
            errors += e;
        }
        next_chunk += WAVE_CHUNKS as u64;
        if errors >= stop.min_errors || bits >= stop.max_bits {
            break;
        }
    }
    Ok(BerPoint {
        bits,
        errors,
        ber: errors as f64 / bits as f64,
        censored: errors < stop.min_errors,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Grid description for a BER sweep of one system kind.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub system: SystemKind,
    pub m_list: Vec<usize>,
    /// IRR per side in dB; `f64::INFINITY` means ideal hardware.
    pub irr_db_list: Vec<f64>,
    pub snr_db_list: Vec<f64>,
    pub irr_split: IrrSplit,
    pub stop: StopRule,
    pub seed: u64,
    /// Budget template for learned systems; each grid point trains its own
    /// pair from it with the point's m, mismatch, SNR and a derived seed.
    pub train_base: Option<TrainConfig>,
    /// Pins the training SNR of every point; `None` trains each point at
    /// its own evaluation SNR.
    pub train_snr_db: Option<f64>,
}

impl SweepSpec {
    pub fn new(system: SystemKind) -> SweepSpec {
        SweepSpec {
            system,
            m_list: Vec::new(),
            irr_db_list: Vec::new(),
            snr_db_list: Vec::new(),
            irr_split: IrrSplit::AmplitudeOnly,
            stop: StopRule::default(),
            seed: 1,
            train_base: None,
            train_snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_list.is_empty() || self.irr_db_list.is_empty() || self.snr_db_list.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        self.stop.validate()?;
        for &m in &self.m_list {
            if m == 0 || m > 16 {
                return Err(Error::Config(format!("bits per symbol out of range: {m}")));
            }
            if self.system == SystemKind::Baseline && m % 2 != 0 {
                return Err(Error::Config(format!(
                    "square QAM baseline needs an even number of bits, got {m}"
                )));
            }
        }
        for &irr in &self.irr_db_list {
            if irr.is_nan() || irr <= 0.0 {
                return Err(Error::Config(format!("IRR must be positive dB or inf, got {irr}")));
            }
        }
        for &snr in &self.snr_db_list {
            if !snr.is_finite() {
                return Err(Error::Config(format!("SNR grid entries must be finite, got {snr}")));
            }
        }
        if self.system != SystemKind::Baseline && self.train_base.is_none() {
            return Err(Error::Config(
                "a learned-system sweep trains at every grid point and needs train budgets \
                 (evaluate a saved checkpoint with the eval command instead)"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One sweep grid point with its measurement and the seed that drove it.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub system: SystemKind,
    pub m: usize,
    pub irr_db: f64,
    pub snr_db: f64,
    pub point: BerPoint,
    pub seed: u64,
}

/// Sweep results plus non-fatal observations (BER rising with SNR on a
/// learned curve, typically a sign of an under-trained point).
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub warnings: Vec<String>,
}

/// Runs the full grid in deterministic order: m outermost, then IRR, then
/// SNR. Learned grid points train their own pair before measuring.
pub fn run_sweep(spec: &SweepSpec, exec: Exec) -> Result<SweepOutcome> {
    spec.validate()?;
    let mut records = Vec::new();
    for &m in &spec.m_list {
        for &irr_db in &spec.irr_db_list {
            for &snr_db in &spec.snr_db_list {
                let tag = format!("{}/{}/{}/{}", spec.system.as_str(), m, irr_db, snr_db);
                let job_seed = derive_seed(spec.seed, &tag);
                let mm = Mismatch::from_irr_db(irr_db, spec.irr_split)?;
                let env = TrainEnv::new(mm, mm, snr_db)?;
                let point = match spec.system {
                    SystemKind::Baseline => {
                        let system = BaselineSystem::new(m, env.link.clone())?;
                        run_ber_point(&system, &env, &spec.stop, job_seed, exec)?
                    }
                    SystemKind::LearnedConv | SystemKind::LearnedRl => {
                        let mut cfg = spec.train_base.clone().unwrap();
                        cfg.m = m;
                        cfg.tx_mismatch = mm;
                        cfg.rx_mismatch = mm;
                        cfg.snr_db = spec.train_snr_db.unwrap_or(snr_db);
                        cfg.seed = derive_seed(job_seed, "train");
                        let outcome = if spec.system == SystemKind::LearnedConv {
                            train_conventional(&cfg, exec)?
                        } else {
                            train_rl(&cfg, exec)?
                        };
                        let system = LearnedSystem::from_pair(&outcome.pair, &env)?;
                        run_ber_point(&system, &env, &spec.stop, job_seed, exec)?
                    }
                };
                records.push(SweepRecord {
                    system: spec.system,
                    m,
                    irr_db,
                    snr_db,
                    point,
                    seed: job_seed,
                });
            }
        }
    }
    let warnings = if spec.system == SystemKind::Baseline {
        Vec::new()
    } else {
        monotonicity_warnings(&records)
    };
    Ok(SweepOutcome { records, warnings })
}

/// Flags BER rising with SNR along a curve (consecutive records sharing m
/// and IRR). Expected on under-trained learned points; never fatal.
pub fn monotonicity_warnings(records: &[SweepRecord]) -> Vec<String> {
    let mut warnings = Vec::new();
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let same_curve = a.m == b.m && a.irr_db == b.irr_db;
        if same_curve && b.snr_db > a.snr_db && b.point.ber > a.point.ber {
            warnings.push(format!(
                "BER rose with SNR on {} m={} irr={}: {} at {} dB vs {} at {} dB",
                a.system.as_str(),
                a.m,
                a.irr_db,
                a.point.ber,
                a.snr_db,
                b.point.ber,
                b.snr_db
            ));
        }
    }
    warnings
}

/// Fixed-schema CSV; `seed` is the per-point job seed, `irr_db` prints as
/// `inf` for ideal hardware. Wall-clock time deliberately stays out so the
/// file is byte-stable under a fixed seed.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("system,m,irr_db,snr_db,bits,errors,ber,censored,seed\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.system.as_str(),
            r.m,
            r.irr_db,
            r.snr_db,
            r.point.bits,
            r.point.errors,
            r.point.ber,
            r.point.censored,
            r.seed
        ));
    }
    out
}

pub fn write_sweep_csv(records: &[SweepRecord], path: &std::path::Path) -> Result<()> {
    std::fs::write(path, sweep_csv(records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::qam_floor_oracle;
    use crate::demapper::{demap_hard, demap_soft, demapper_net, DemapperInput};
    use crate::impairments::{rx_coeffs, tx_coeffs};
    use crate::mapper::mapper_net;
    use crate::training::Regime;

    /// Gaussian upper-tail probability via Simpson's rule; independent of
    /// the library under test.
    fn q_simpson(x: f64) -> f64 {
        let upper = x + 12.0;
        let n = 20_000;
        let h = (upper - x) / n as f64;
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut sum = phi(x) + phi(upper);
        for i in 1..n {
            let t = x + i as f64 * h;
            sum += phi(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    /// Antipodal one-bit system on the real axis: exact error probability
    /// Q(sqrt(2*Ps/No)) under the ideal channel.
    struct Bpsk;

    impl LinkSystem for Bpsk {
        fn m(&self) -> usize {
            1
        }

        fn modulate(&self, msg: usize) -> Complex64 {
            Complex64::new(if msg == 1 { 1.0 } else { -1.0 }, 0.0)
        }

        fn decide(&self, r: Complex64) -> usize {
            usize::from(r.re > 0.0)
        }
    }

    #[test]
    fn estimator_is_unbiased_against_a_known_error_probability() {
        let snr_db = -2.0;
        let env = TrainEnv::new(Mismatch::IDEAL, Mismatch::IDEAL, snr_db).unwrap();
        let truth = q_simpson((2.0 * env.link.ps).sqrt());
        let stop = StopRule {
            min_errors: 500,
            max_bits: 10_000_000,
        };
        let mut bits = 0u64;
        let mut errors = 0u64;
        for seed in 0..20 {
            let point = run_ber_point(&Bpsk, &env, &stop, derive_seed(seed, "bpsk"), Exec::auto())
                .unwrap();
            assert!(!point.censored);
            bits += point.bits;
            errors += point.errors;
        }
        let pooled = errors as f64 / bits as f64;
        let sigma = (truth * (1.0 - truth) / bits as f64).sqrt();
        assert!(
            (pooled - truth).abs() < 3.0 * sigma,
            "pooled {pooled} vs truth {truth} (sigma {sigma})"
        );
    }

    #[test]
    fn unreachable_error_target_censors_the_point() {
        // Ideal QPSK at 20 dB: BER ~ Q(10), far below the bit budget's
        // resolution, so the point must come back censored.
        let env = TrainEnv::new(Mismatch::IDEAL, Mismatch::IDEAL, 20.0).unwrap();
        let system = BaselineSystem::new(2, env.link.clone()).unwrap();
        let stop = StopRule {
            min_errors: 100,
            max_bits: 2_000_000,
        };
        let point = run_ber_point(&system, &env, &stop, 7, Exec::auto()).unwrap();
        assert!(point.censored);
        assert!(point.bits >= 2_000_000);
        assert!(point.errors < 100);
        assert!(point.ber_upper_bound() >= point.ber);
        assert!(point.ber_upper_bound() > 0.0);
    }

    #[test]
    fn baseline_point_matches_the_zero_noise_floor_oracle() {
        // At very high SNR only the conjugate image causes errors, so the
        // Monte Carlo estimate must land on the enumerated floor.
        let mm = Mismatch::from_irr_db(12.0, IrrSplit::AmplitudeOnly).unwrap();
        let env = TrainEnv::new(mm, mm, 40.0).unwrap();
        let grid = QamGrid::new(4).unwrap();
        let floor = qam_floor_oracle(&grid, &tx_coeffs(mm), &rx_coeffs(mm)).unwrap();
        let system = BaselineSystem::new(4, env.link.clone()).unwrap();
        let stop = StopRule {
            min_errors: 2000,
            max_bits: 10_000_000,
        };
        let point = run_ber_point(&system, &env, &stop, 3, Exec::auto()).unwrap();
        assert!(floor > 0.0);
        assert!(
            (point.ber - floor).abs() < 0.07 * floor,
            "mc {} vs floor {}",
            point.ber,
            floor
        );
    }

    #[test]
    fn baseline_curve_plateaus_above_the_floor() {
        let spec = SweepSpec {
            m_list: vec![6],
            irr_db_list: vec![15.0],
            snr_db_list: vec![30.0, 40.0],
            stop: StopRule {
                min_errors: 8000,
                max_bits: 10_000_000,
            },
            seed: 4,
            ..SweepSpec::new(SystemKind::Baseline)
        };
        let outcome = run_sweep(&spec, Exec::auto()).unwrap();
        let ratio = outcome.records[0].point.ber / outcome.records[1].point.ber;
        assert!(
            (0.95..=1.05).contains(&ratio),
            "plateau ratio {ratio} outside window"
        );
    }

    #[test]
    fn repeated_runs_and_exec_modes_emit_identical_csv() {
        let spec = SweepSpec {
            m_list: vec![2, 4],
            irr_db_list: vec![f64::INFINITY, 15.0],
            snr_db_list: vec![2.0, 6.0],
            seed: 9,
            ..SweepSpec::new(SystemKind::Baseline)
        };
        let a = sweep_csv(&run_sweep(&spec, Exec::Sequential).unwrap().records);
        let b = sweep_csv(&run_sweep(&spec, Exec::Sequential).unwrap().records);
        assert_eq!(a, b);
        #[cfg(feature = "parallel")]
        {
            let c = sweep_csv(&run_sweep(&spec, Exec::Parallel).unwrap().records);
            assert_eq!(a, c);
        }
        assert!(a.starts_with("system,m,irr_db,snr_db,bits,errors,ber,censored,seed\n"));
        assert_eq!(a.lines().count(), 1 + 8);
        // Ideal hardware serializes its IRR as inf.
        assert!(a.contains("baseline,2,inf,2,"));
    }

    #[test]
    fn learned_sweep_trains_at_each_point_and_reports_sane_ber() {
        let base = TrainConfig {
            dataset_size: 2048,
            batch: 128,
            rounds: 120,
            adam_lr: 3e-3,
            hidden_rx: 32,
            ..TrainConfig::conventional_defaults(2, 0.0)
        };
        let spec = SweepSpec {
            m_list: vec![2],
            irr_db_list: vec![20.0],
            snr_db_list: vec![8.0],
            stop: StopRule {
                min_errors: 100,
                max_bits: 500_000,
            },
            seed: 12,
            train_base: Some(base),
            ..SweepSpec::new(SystemKind::LearnedConv)
        };
        let outcome = run_sweep(&spec, Exec::auto()).unwrap();
        assert_eq!(outcome.records.len(), 1);
        let rec = &outcome.records[0];
        assert_eq!(rec.system, SystemKind::LearnedConv);
        // A trained 4-point system at 8 dB must beat coin flipping by far.
        assert!(
            rec.point.ber < 0.05,
            "learned point unexpectedly bad: {}",
            rec.point.ber
        );
        let csv = sweep_csv(&outcome.records);
        assert!(csv.contains("learned-conv,2,20,8,"));
    }

    #[test]
    fn learned_system_decisions_match_the_demapper() {
        // The sweep-path argmax must agree with the reference hard
        // decision for every sample.
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let pair = TrainedPair {
            regime: Regime::Conventional,
            tx_net: mapper_net(3, &mut rng).unwrap(),
            rx_net: demapper_net(3, 16, &mut rng).unwrap(),
            config: TrainConfig::conventional_defaults(3, 6.0),
            final_loss: 0.0,
        };
        let env = TrainEnv::new(Mismatch::IDEAL, Mismatch::IDEAL, 6.0).unwrap();
        let system = LearnedSystem::from_pair(&pair, &env).unwrap();
        for _ in 0..200 {
            let r = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let posterior = demap_soft(
                &pair.rx_net,
                &DemapperInput {
                    r,
                    sdnr_db: env.sdnr_db,
                },
            )
            .unwrap();
            let reference = demap_hard(&posterior).to_index();
            assert_eq!(system.decide(r), reference);
        }
    }

    #[test]
    fn sweep_specs_are_validated_before_any_work() {
        let empty = SweepSpec::new(SystemKind::Baseline);
        assert!(empty.validate().is_err());
        let mut odd = SweepSpec::new(SystemKind::Baseline);
        odd.m_list = vec![3];
        odd.irr_db_list = vec![f64::INFINITY];
        odd.snr_db_list = vec![0.0];
        assert!(odd.validate().is_err());
        let mut learned = SweepSpec::new(SystemKind::LearnedConv);
        learned.m_list = vec![2];
        learned.irr_db_list = vec![15.0];
        learned.snr_db_list = vec![0.0];
        // No training budget supplied.
        assert!(learned.validate().is_err());
        learned.train_base = Some(TrainConfig::conventional_defaults(2, 0.0));
        assert!(learned.validate().is_ok());
        learned.irr_db_list = vec![-3.0];
        assert!(learned.validate().is_err());
    }
}
