//! `sweep`: BER grid over m, IRR and SNR for one system kind.
//!
//! Baseline sweeps measure the square-QAM chain directly. Learned sweeps
//! need a source for the networks: `--train` fits a fresh pair at every grid
//! point from the `train.` budget keys, `--pair` measures one saved pair
//! across the grid instead (its mapper re-emits the constellation at each
//! point's distortion ratio). Per-point seeds are derived from the master
//! seed and the grid coordinates, so the CSV is byte-stable no matter how
//! the work is scheduled.

use std::path::PathBuf;

use thzlink::exec::{derive_seed, Exec};
use thzlink::impairments::Mismatch;
use thzlink::sim::{
    monotonicity_warnings, run_ber_point, run_sweep, sweep_csv, LearnedSystem, StopRule,
    SweepOutcome, SweepRecord, SweepSpec, SystemKind,
};
use thzlink::training::{load_pair, Regime, TrainEnv, TrainedPair};
use thzlink::{Error, Result};

use crate::eval::kind_of;
use crate::settings::Settings;
use crate::train::{irr_split_from, train_config_from, TRAIN_KEYS};

pub const SWEEP_KEYS: &[&str] = &[
    "sweep.system",
    "sweep.m_list",
    "sweep.irr_db_list",
    "sweep.snr_db_list",
    "sweep.irr_split",
    "sweep.min_errors",
    "sweep.max_bits",
    "sweep.seed",
    "sweep.train_snr_db",
    "sweep.train",
    "sweep.pair",
    "sweep.csv",
];

pub fn run(
    config: Option<&PathBuf>,
    sets: &[String],
    train_flag: bool,
    pair_flag: Option<String>,
    csv_flag: Option<PathBuf>,
    exec: Exec,
) -> Result<()> {
    let s = Settings::load(config, sets)?;
    let known: Vec<&str> = SWEEP_KEYS.iter().chain(TRAIN_KEYS).copied().collect();
    s.reject_strays(&known, &["sweep.", "train."])?;

    let train = train_flag || s.bool_or("sweep.train", false)?;
    let pair_prefix = pair_flag.or_else(|| s.text("sweep.pair"));
    if train && pair_prefix.is_some() {
        return Err(Error::Config(
            "--train and --pair are mutually exclusive".into(),
        ));
    }
    let pair = match &pair_prefix {
        Some(prefix) => Some(load_pair(prefix)?),
        None => None,
    };
    let kind = match s.text("sweep.system") {
        Some(name) => SystemKind::from_str(&name)?,
        None => match &pair {
            Some(pair) => kind_of(pair.regime),
            None => SystemKind::Baseline,
        },
    };
    if kind == SystemKind::Baseline && (train || pair.is_some()) {
        return Err(Error::Config(
            "baseline sweeps neither train nor load checkpoints".into(),
        ));
    }

    let mut spec = SweepSpec::new(kind);
    spec.irr_split = irr_split_from(&s, "sweep.irr_split")?;
    spec.m_list = s.usize_list("sweep.m_list")?.unwrap_or_default();
    spec.irr_db_list = s
        .f64_list("sweep.irr_db_list")?
        .unwrap_or_else(|| vec![f64::INFINITY]);
    spec.snr_db_list = s.f64_list("sweep.snr_db_list")?.unwrap_or_default();
    spec.stop = StopRule {
        min_errors: s.u64_or("sweep.min_errors", 100)?,
        max_bits: s.u64_or("sweep.max_bits", 10_000_000)?,
    };
    spec.seed = s.u64_or("sweep.seed", 1)?;
    spec.train_snr_db = s.opt_f64("sweep.train_snr_db")?;

    let outcome = match (&pair, kind) {
        (Some(pair), _) => checkpoint_sweep(&mut spec, pair, exec)?,
        (None, SystemKind::Baseline) => run_sweep(&spec, exec)?,
        (None, _) if train => {
            let regime = match kind {
                SystemKind::LearnedConv => Regime::Conventional,
                SystemKind::LearnedRl => Regime::Reinforce,
                SystemKind::Baseline => unreachable!("baseline handled above"),
            };
            spec.train_base = Some(train_config_from(&s, regime)?);
            run_sweep(&spec, exec)?
        }
        (None, _) => {
            return Err(Error::Config(
                "learned sweep without a checkpoint: pass --pair PREFIX or --train".into(),
            ))
        }
    };

    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    let csv = sweep_csv(&outcome.records);
    match csv_flag.or_else(|| s.text("sweep.csv").map(PathBuf::from)) {
        Some(path) => {
            std::fs::write(&path, &csv)?;
            eprintln!("wrote {} points to {}", outcome.records.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// Measures one saved pair over the grid. The grid's m axis must match the
/// pair; each point rebuilds the channel at its own IRR and SNR.
fn checkpoint_sweep(spec: &mut SweepSpec, pair: &TrainedPair, exec: Exec) -> Result<SweepOutcome> {
    let kind = kind_of(pair.regime);
    if spec.system != kind {
        return Err(Error::Config(format!(
            "sweep.system says {} but the checkpoint was trained as {}",
            spec.system.as_str(),
            kind.as_str()
        )));
    }
    if spec.m_list.is_empty() {
        spec.m_list = vec![pair.config.m];
    }
    if spec.m_list != [pair.config.m] {
        return Err(Error::Config(format!(
            "checkpoint is for m={}; sweep.m_list cannot differ",
            pair.config.m
        )));
    }
    // The validator demands train budgets for learned systems; a checkpoint
    // sweep trains nothing, so the pair's own config stands in.
    spec.train_base = Some(pair.config.clone());
    spec.validate()?;
    let mut records = Vec::new();
    for &m in &spec.m_list {
        for &irr_db in &spec.irr_db_list {
            for &snr_db in &spec.snr_db_list {
                let tag = format!("{}/{}/{}/{}", kind.as_str(), m, irr_db, snr_db);
                let job_seed = derive_seed(spec.seed, &tag);
                let mm = Mismatch::from_irr_db(irr_db, spec.irr_split)?;
                let env = TrainEnv::new(mm, mm, snr_db)?;
                let system = LearnedSystem::from_pair(pair, &env)?;
                let point = run_ber_point(&system, &env, &spec.stop, job_seed, exec)?;
                records.push(SweepRecord {
                    system: kind,
                    m,
                    irr_db,
                    snr_db,
                    point,
                    seed: job_seed,
                });
            }
        }
    }
    let warnings = monotonicity_warnings(&records);
    Ok(SweepOutcome { records, warnings })
}
