//! `train-conv` and `train-rl`: run one co-training job and save the pair.
//!
//! Both commands share the `train.` namespace; the regime only changes which
//! defaults seed the budget and which trainer runs. Outputs land under one
//! prefix: the two network checkpoints, the metadata record and the per-round
//! loss log.

use std::path::{Path, PathBuf};

use thzlink::exec::Exec;
use thzlink::impairments::{IrrSplit, Mismatch};
use thzlink::training::{
    save_pair, train_conventional, train_rl, zero_noise_round_trip, Regime, TrainConfig,
};
use thzlink::{Error, Result};

use crate::settings::Settings;

/// Every key of the `train.` namespace.
pub const TRAIN_KEYS: &[&str] = &[
    "train.m",
    "train.snr_db",
    "train.snr_jitter_db",
    "train.tx_irr_db",
    "train.rx_irr_db",
    "train.irr_split",
    "train.dataset_size",
    "train.batch",
    "train.rounds",
    "train.rx_iters",
    "train.tx_iters",
    "train.lr_adam",
    "train.lr_sgd",
    "train.sigma2",
    "train.finetune_samples",
    "train.hidden_rx",
    "train.seed",
    "train.out",
];

/// Reads an IRR split key; absent means amplitude-only.
pub fn irr_split_from(s: &Settings, key: &str) -> Result<IrrSplit> {
    match s.text(key).as_deref() {
        None | Some("amplitude") => Ok(IrrSplit::AmplitudeOnly),
        Some("phase") => Ok(IrrSplit::PhaseOnly),
        Some(other) => Err(Error::Config(format!(
            "{key} must be `amplitude` or `phase`, got `{other}`"
        ))),
    }
}

/// Regime defaults overlaid with whatever `train.` keys are present.
pub fn train_config_from(s: &Settings, regime: Regime) -> Result<TrainConfig> {
    let m = s.usize_or("train.m", 4)?;
    let snr_db = s.f64_or("train.snr_db", 10.0)?;
    let mut cfg = match regime {
        Regime::Conventional => TrainConfig::conventional_defaults(m, snr_db),
        Regime::Reinforce => TrainConfig::reinforce_defaults(m, snr_db),
    };
    let split = irr_split_from(s, "train.irr_split")?;
    if let Some(irr) = s.opt_f64("train.tx_irr_db")? {
        cfg.tx_mismatch = Mismatch::from_irr_db(irr, split)?;
    }
    if let Some(irr) = s.opt_f64("train.rx_irr_db")? {
        cfg.rx_mismatch = Mismatch::from_irr_db(irr, split)?;
    }
    if let Some(v) = s.opt_f64("train.snr_jitter_db")? {
        cfg.snr_jitter_db = v;
    }
    if let Some(v) = s.opt_usize("train.dataset_size")? {
        cfg.dataset_size = v;
    }
    if let Some(v) = s.opt_usize("train.batch")? {
        cfg.batch = v;
    }
    if let Some(v) = s.opt_usize("train.rounds")? {
        cfg.rounds = v;
    }
    if let Some(v) = s.opt_usize("train.rx_iters")? {
        cfg.rx_iters = v;
    }
    if let Some(v) = s.opt_usize("train.tx_iters")? {
        cfg.tx_iters = v;
    }
    if let Some(v) = s.opt_f64("train.lr_adam")? {
        cfg.adam_lr = v;
    }
    if let Some(v) = s.opt_f64("train.lr_sgd")? {
        cfg.sgd_lr = v;
    }
    if let Some(v) = s.opt_f64("train.sigma2")? {
        cfg.sigma2 = v;
    }
    if let Some(v) = s.opt_usize("train.finetune_samples")? {
        cfg.finetune_samples = v;
    }
    if let Some(v) = s.opt_usize("train.hidden_rx")? {
        cfg.hidden_rx = v;
    }
    if let Some(v) = s.opt_u64("train.seed")? {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(
    regime: Regime,
    config: Option<&PathBuf>,
    sets: &[String],
    out: Option<String>,
    exec: Exec,
) -> Result<()> {
    let s = Settings::load(config, sets)?;
    s.reject_strays(TRAIN_KEYS, &["train."])?;
    let cfg = train_config_from(&s, regime)?;
    let out = out
        .or_else(|| s.text("train.out"))
        .ok_or_else(|| Error::Config("no output prefix: pass --out or set train.out".into()))?;
    let outcome = match regime {
        Regime::Conventional => train_conventional(&cfg, exec)?,
        Regime::Reinforce => train_rl(&cfg, exec)?,
    };
    save_pair(&outcome.pair, &out)?;
    outcome.log.write_csv(Path::new(&format!("{out}.log.csv")))?;
    if let Some(round) = outcome.plateau {
        eprintln!("warning: loss stopped improving around round {round}");
    }
    println!("{}", outcome.ledger.report());
    println!("final loss {:.6}", outcome.pair.final_loss);
    let gate = zero_noise_round_trip(&outcome.pair)?;
    println!("zero-noise gate: {}", if gate { "pass" } else { "FAIL" });
    println!("saved {out}.tx.net {out}.rx.net {out}.meta {out}.log.csv");
    Ok(())
}
