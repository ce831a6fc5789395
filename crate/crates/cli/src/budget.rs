//! `link-budget`: free-space spreading and molecular absorption of one hop.
//!
//! Prints the power budget a physical deployment would see. The simulator's
//! SNR axis is calibrated independently (h normalized to 1), so this command
//! is a planning aid, not an input to training or sweeps.

use std::path::PathBuf;

use thzlink::channel::{absorption_gain, channel_gain, path_gain, Atmosphere, LinkGeometry};
use thzlink::Result;

use crate::settings::Settings;

pub const CHANNEL_KEYS: &[&str] = &[
    "channel.distance_m",
    "channel.freq_ghz",
    "channel.gt_dbi",
    "channel.gr_dbi",
    "channel.rel_humidity",
    "channel.temperature_k",
    "channel.pressure_pa",
    "channel.kappa",
];

pub fn run(config: Option<&PathBuf>, sets: &[String]) -> Result<()> {
    let s = Settings::load(config, sets)?;
    s.reject_strays(CHANNEL_KEYS, &["channel."])?;
    let distance_m = s.f64_or("channel.distance_m", 10.0)?;
    let freq_ghz = s.f64_or("channel.freq_ghz", 300.0)?;
    let geo = LinkGeometry::new(
        distance_m,
        freq_ghz * 1e9,
        s.f64_or("channel.gt_dbi", 20.0)?,
        s.f64_or("channel.gr_dbi", 20.0)?,
    )?;
    let mut atm = Atmosphere::default();
    if let Some(v) = s.opt_f64("channel.rel_humidity")? {
        atm.rel_humidity = v;
    }
    if let Some(v) = s.opt_f64("channel.temperature_k")? {
        atm.temperature_k = v;
    }
    if let Some(v) = s.opt_f64("channel.pressure_pa")? {
        atm.pressure_pa = v;
    }
    if let Some(v) = s.opt_f64("channel.kappa")? {
        atm.kappa_override = Some(v);
    }
    let spread = path_gain(&geo);
    let absorb = absorption_gain(&geo, &atm)?;
    let h = channel_gain(&geo, &atm)?;
    let kappa = -absorb.ln() / distance_m;
    println!("distance          {distance_m} m");
    println!("frequency         {freq_ghz} GHz");
    println!("kappa             {kappa:.4e} 1/m");
    println!("spreading gain    {:.2} dB", 10.0 * spread.log10());
    println!("absorption gain   {:.2} dB", 10.0 * absorb.log10());
    println!(
        "channel gain      {:.2} dB (amplitude h = {h:.4e})",
        20.0 * h.log10()
    );
    Ok(())
}
