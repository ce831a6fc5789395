//! `eval` and `export-constellation`: inspect a saved mapper/demapper pair.
//!
//! `eval` replays the pair over a list of SNRs and reports the Monte Carlo
//! cross-entropy and BER per point, optionally as sweep-schema CSV.
//! `export-constellation` dumps the constellation the mapper emits at an
//! operating SNR as a text record for external plotting.

use std::path::PathBuf;

use thzlink::exec::{derive_seed, Exec};
use thzlink::mapper::{constellation_to_string, generate_constellation};
use thzlink::sim::{
    run_ber_point, write_sweep_csv, LearnedSystem, StopRule, SweepRecord, SystemKind,
};
use thzlink::training::{evaluate_loss, load_pair, Regime, TrainEnv};
use thzlink::{Error, Result};

use crate::settings::Settings;

pub const EVAL_KEYS: &[&str] = &[
    "eval.pair",
    "eval.snr_db_list",
    "eval.samples",
    "eval.min_errors",
    "eval.max_bits",
    "eval.seed",
    "eval.csv",
];

pub const EXPORT_KEYS: &[&str] = &["export.pair", "export.out", "export.snr_db"];

pub fn kind_of(regime: Regime) -> SystemKind {
    match regime {
        Regime::Conventional => SystemKind::LearnedConv,
        Regime::Reinforce => SystemKind::LearnedRl,
    }
}

pub fn run_eval(
    config: Option<&PathBuf>,
    sets: &[String],
    pair_flag: Option<String>,
    csv_flag: Option<PathBuf>,
    exec: Exec,
) -> Result<()> {
    let s = Settings::load(config, sets)?;
    s.reject_strays(EVAL_KEYS, &["eval."])?;
    let prefix = pair_flag
        .or_else(|| s.text("eval.pair"))
        .ok_or_else(|| Error::Config("no checkpoint: pass --pair or set eval.pair".into()))?;
    let pair = load_pair(&prefix)?;
    let kind = kind_of(pair.regime);
    let snrs = s
        .f64_list("eval.snr_db_list")?
        .unwrap_or_else(|| vec![pair.config.snr_db]);
    if snrs.is_empty() {
        return Err(Error::Config("eval.snr_db_list must be non-empty".into()));
    }
    let samples = s.usize_or("eval.samples", 20_000)?;
    let stop = StopRule {
        min_errors: s.u64_or("eval.min_errors", 100)?,
        max_bits: s.u64_or("eval.max_bits", 10_000_000)?,
    };
    stop.validate()?;
    let master = s.u64_or("eval.seed", 1)?;
    // The CSV irr column reports the transmit side; both sides are equal in
    // every stock experiment.
    let irr_db = pair.config.tx_mismatch.irr_db();
    println!(
        "pair {prefix}: {} m={} trained at {} dB, tx irr {} dB",
        pair.regime.as_str(),
        pair.config.m,
        pair.config.snr_db,
        irr_db
    );
    let mut records = Vec::new();
    for &snr_db in &snrs {
        let env = TrainEnv::new(pair.config.tx_mismatch, pair.config.rx_mismatch, snr_db)?;
        let system = LearnedSystem::from_pair(&pair, &env)?;
        let tag = format!("{}/{}/{}/{}", kind.as_str(), pair.config.m, irr_db, snr_db);
        let job_seed = derive_seed(master, &tag);
        let point = run_ber_point(&system, &env, &stop, job_seed, exec)?;
        let loss = evaluate_loss(&pair, snr_db, samples, derive_seed(job_seed, "loss"), exec)?;
        println!(
            "snr {snr_db} dB  loss {loss:.4}  ber {:.4e}  ({} errors / {} bits{})",
            point.ber,
            point.errors,
            point.bits,
            if point.censored { ", censored" } else { "" }
        );
        records.push(SweepRecord {
            system: kind,
            m: pair.config.m,
            irr_db,
            snr_db,
            point,
            seed: job_seed,
        });
    }
    if let Some(path) = csv_flag.or_else(|| s.text("eval.csv").map(PathBuf::from)) {
        write_sweep_csv(&records, &path)?;
        eprintln!("wrote {} points to {}", records.len(), path.display());
    }
    Ok(())
}

pub fn run_export(
    config: Option<&PathBuf>,
    sets: &[String],
    pair_flag: Option<String>,
    out_flag: Option<PathBuf>,
    snr_flag: Option<f64>,
) -> Result<()> {
    let s = Settings::load(config, sets)?;
    s.reject_strays(EXPORT_KEYS, &["export."])?;
    let prefix = pair_flag
        .or_else(|| s.text("export.pair"))
        .ok_or_else(|| Error::Config("no checkpoint: pass --pair or set export.pair".into()))?;
    let pair = load_pair(&prefix)?;
    let snr_db = match snr_flag {
        Some(v) => v,
        None => s.opt_f64("export.snr_db")?.unwrap_or(pair.config.snr_db),
    };
    let env = TrainEnv::new(pair.config.tx_mismatch, pair.config.rx_mismatch, snr_db)?;
    let constellation = generate_constellation(&pair.tx_net, env.sdnr_db)?;
    let text = constellation_to_string(&constellation, env.sdnr_db);
    match out_flag.or_else(|| s.text("export.out").map(PathBuf::from)) {
        Some(path) => std::fs::write(&path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
