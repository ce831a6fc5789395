//! Co-training of the constellation network and the demapper.
//!
//! Two regimes are provided. Conventional training alternates demapper
//! SGD steps with mapper Adam steps, where the mapper update backpropagates
//! through the whole differentiable chain (constellation normalization,
//! widely-linear channel, demapper) — so per-sample received-signal
//! gradients must travel back from the receiver to the transmitter.
//! Reinforcement training removes that gradient feedback: the transmitter
//! perturbs its symbols with a Gaussian exploration policy, the receiver
//! returns only per-example scalar losses, and the mapper follows the
//! score-function (policy-gradient) estimator instead.
//!
//! ## Exchange accounting
//!
//! The two ends communicate exclusively through values counted by an
//! [`ExchangeLedger`]:
//!
//! * constellation publishes, TX→RX: 2^(m+1) reals per round (and one extra
//!   publish before reinforcement fine-tuning);
//! * conventional gradient feedback, RX→TX: two reals per sample per mapper
//!   iteration;
//! * reinforcement loss feedback, RX→TX: one real per sample per mapper
//!   iteration.
//!
//! Neither endpoint ever reads the other's network parameters.
//!
//! ## Schedule and budget
//!
//! Each round publishes the current constellation, runs `rx_iters` demapper
//! SGD batches on fresh received samples, then `tx_iters` mapper updates
//! (one, by default). Batches cycle through a pre-drawn dataset of
//! (message, noise) pairs, so a fixed seed makes the whole run — including
//! the saved checkpoints — bit-reproducible; reinforcement runs end with a
//! demapper-only fine-tuning pass on freshly drawn samples. Divergence
//! (non-finite loss or parameters) aborts with the failing round.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::channel::{calibrate_snr, draw_noise, transmit_with_noise, LinkState};
use crate::demapper::{demap_hard, demap_soft, demapper_net, DemapperInput, DEFAULT_HIDDEN_UNITS};
use crate::exec::{chunked_fold, Exec};
use crate::impairments::{effective_leakage, rx_coeffs, sdnr, tx_coeffs, IqiCoefficients, Mismatch};
use crate::mapper::{
    generate_constellation, mapper_net, normalization_backward, points_from_raw, sdnr_feature,
};
use crate::neural::{
    cce_loss, load_checkpoint, optimizer_step, save_checkpoint, DenseNet, ForwardCache,
    GradientTape, OptimizerState,
};
use crate::{Error, Result};

/// Samples per parallel work item inside one batch.
const BATCH_CHUNK: usize = 32;

/// Rounds without improvement before the plateau marker is set.
const PATIENCE_ROUNDS: usize = 50;

/// Which optimization scheme produced a trained pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Conventional,
    Reinforce,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Conventional => "conventional",
            Regime::Reinforce => "reinforce",
        }
    }

    pub fn from_str(name: &str) -> Result<Regime> {
        match name {
            "conventional" => Ok(Regime::Conventional),
            "reinforce" => Ok(Regime::Reinforce),
            other => Err(Error::InvalidParameter(format!("unknown regime '{other}'"))),
        }
    }
}

/// Complete description of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub m: usize,
    /// Nominal SNR the pair is trained for; the link is normalized so this
    /// is exactly h^2 Ps / No in dB.
    pub snr_db: f64,
    /// Half-width of a per-round uniform SNR draw around `snr_db`; zero
    /// trains at the single nominal SNR. Randomizing exposes the networks
    /// to a band of operating points instead of one.
    pub snr_jitter_db: f64,
    pub tx_mismatch: Mismatch,
    pub rx_mismatch: Mismatch,
    /// Pre-drawn (message, noise) pairs cycled through by the batches.
    pub dataset_size: usize,
    pub batch: usize,
    /// Alternation rounds; each runs `rx_iters` demapper batches and
    /// `tx_iters` mapper batches.
    pub rounds: usize,
    pub rx_iters: usize,
    pub tx_iters: usize,
    /// Adam rate for the mapper.
    pub adam_lr: f64,
    /// SGD rate for the demapper.
    pub sgd_lr: f64,
    /// Exploration variance of the reinforcement policy.
    pub sigma2: f64,
    /// Fresh samples for the demapper-only fine-tuning pass (reinforcement).
    pub finetune_samples: usize,
    pub hidden_rx: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for conventional training at one (m, SNR) operating point.
    pub fn conventional_defaults(m: usize, snr_db: f64) -> TrainConfig {
        TrainConfig {
            m,
            snr_db,
            snr_jitter_db: 0.0,
            tx_mismatch: Mismatch::IDEAL,
            rx_mismatch: Mismatch::IDEAL,
            dataset_size: 100_000,
            batch: 256,
            rounds: 400,
            rx_iters: 10,
            tx_iters: 1,
            adam_lr: 1e-3,
            sgd_lr: 1e-2,
            sigma2: 0.02,
            finetune_samples: 3000,
            hidden_rx: DEFAULT_HIDDEN_UNITS,
            seed: 1,
        }
    }

    /// Defaults for reinforcement training; 1:1 alternation with a smaller
    /// dataset plus fine-tuning, over more rounds (the loss-only estimator
    /// is noisier than backpropagated gradients).
    pub fn reinforce_defaults(m: usize, snr_db: f64) -> TrainConfig {
        TrainConfig {
            dataset_size: 10_000,
            rounds: 1500,
            rx_iters: 1,
            tx_iters: 1,
            ..TrainConfig::conventional_defaults(m, snr_db)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > 16 {
            return Err(Error::Config(format!("bits per symbol out of range: {}", self.m)));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("training SNR must be finite".into()));
        }
        if !(self.snr_jitter_db >= 0.0 && self.snr_jitter_db.is_finite()) {
            return Err(Error::Config(format!(
                "SNR jitter must be finite and non-negative, got {}",
                self.snr_jitter_db
            )));
        }
        if self.batch == 0 || self.dataset_size < self.batch {
            return Err(Error::Config(format!(
                "dataset of {} cannot feed batches of {}",
                self.dataset_size, self.batch
            )));
        }
        if self.rounds == 0 || self.rx_iters == 0 || self.tx_iters == 0 {
            return Err(Error::Config("rounds and per-round iteration counts must be positive".into()));
        }
        for (name, lr) in [("adam_lr", self.adam_lr), ("sgd_lr", self.sgd_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {lr}")));
            }
        }
        if !(self.sigma2 > 0.0 && self.sigma2 <= 0.5) {
            return Err(Error::Config(format!(
                "exploration variance must lie in (0, 0.5], got {}",
                self.sigma2
            )));
        }
        if self.hidden_rx == 0 {
            return Err(Error::Config("demapper hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed channel context of a training or evaluation run: mismatch
/// coefficients, the SNR-calibrated link, the resulting SDNR both networks
/// are conditioned on, and the widely-linear gains `r = alpha*x +
/// beta*conj(x) + filtered noise`.
#[derive(Debug, Clone)]
pub struct TrainEnv {
    pub g: IqiCoefficients,
    pub k: IqiCoefficients,
    pub link: LinkState,
    pub sdnr_db: f64,
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl TrainEnv {
    pub fn new(tx_mm: Mismatch, rx_mm: Mismatch, snr_db: f64) -> Result<TrainEnv> {
        let g = tx_coeffs(tx_mm);
        let k = rx_coeffs(rx_mm);
        let link = calibrate_snr(snr_db);
        let leak = effective_leakage(&g, &k);
        let sdnr_db = 10.0 * sdnr(&leak, &k, link.h, link.ps, link.no)?.log10();
        let amp = link.h * link.ps.sqrt();
        Ok(TrainEnv {
            alpha: leak.xi1 * amp,
            beta: leak.xi2 * amp,
            g,
            k,
            link,
            sdnr_db,
        })
    }

    pub fn for_config(cfg: &TrainConfig) -> Result<TrainEnv> {
        TrainEnv::new(cfg.tx_mismatch, cfg.rx_mismatch, cfg.snr_db)
    }
}

/// Scalar traffic between the two ends of the link during training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExchangeLedger {
    pub rounds: u64,
    pub scalars_tx_to_rx: u64,
    pub scalars_rx_to_tx: u64,
}

impl ExchangeLedger {
    fn publish_constellation(&mut self, m: usize) {
        self.scalars_tx_to_rx += 1u64 << (m + 1);
    }

    fn feedback(&mut self, scalars: u64) {
        self.scalars_rx_to_tx += scalars;
    }

    /// One-line traffic summary for logs and command output.
    pub fn report(&self) -> String {
        format!(
            "{} rounds, {} scalars TX->RX (constellations), {} scalars RX->TX (feedback)",
            self.rounds, self.scalars_tx_to_rx, self.scalars_rx_to_tx
        )
    }
}

/// Which phase of a round a log row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Rx,
    Tx,
    FineTune,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Rx => "rx",
            Phase::Tx => "tx",
            Phase::FineTune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub round: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub scalars_tx_to_rx: u64,
    pub scalars_rx_to_tx: u64,
}

/// Per-phase loss trace with cumulative ledger snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    fn push(&mut self, round: usize, phase: Phase, mean_loss: f64, ledger: &ExchangeLedger) {
        self.rows.push(LogRow {
            round,
            phase,
            mean_loss,
            scalars_tx_to_rx: ledger.scalars_tx_to_rx,
            scalars_rx_to_tx: ledger.scalars_rx_to_tx,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,phase,mean_loss,scalars_tx_to_rx,scalars_rx_to_tx\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.round,
                row.phase.as_str(),
                row.mean_loss,
                row.scalars_tx_to_rx,
                row.scalars_rx_to_tx
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Mapper and demapper trained together, with the run that produced them.
#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub regime: Regime,
    pub tx_net: DenseNet,
    pub rx_net: DenseNet,
    pub config: TrainConfig,
    pub final_loss: f64,
}

/// Everything a training run returns.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pair: TrainedPair,
    pub ledger: ExchangeLedger,
    pub log: TrainLog,
    /// Round at which the loss stopped improving for a full patience
    /// window, if that happened; informational, not an error.
    pub plateau: Option<usize>,
}

// ---------------------------------------------------------------------------
// Endpoints
// ---------------------------------------------------------------------------

/// Transmit-side trainer; owns the mapper network and only ever sees
/// constellation-point gradients.
struct TxEndpoint {
    net: DenseNet,
    opt: OptimizerState,
    feature: f64,
    cache: ForwardCache,
    raw: Vec<f64>,
    mean_power: f64,
    points: Vec<Complex64>,
}

impl TxEndpoint {
    fn new<R: Rng + ?Sized>(
        m: usize,
        sdnr_db: f64,
        opt: OptimizerState,
        rng: &mut R,
    ) -> Result<TxEndpoint> {
        let mut net = mapper_net(m, rng)?;
        let feature = sdnr_feature(sdnr_db);
        // With zero biases the network output is identically zero when the
        // conditioning feature is exactly zero (SDNR of 10 dB), which
        // leaves nothing to normalize and no gradient to follow. Break the
        // dead start with small positive hidden biases: positive keeps every
        // ReLU unit alive at zero input (a negative bias would stay dead and
        // gradient-free forever there). The retry covers the measure-zero
        // event that the output row still cancels to nothing.
        for _ in 0..8 {
            if !net.forward(&[feature]).iter().all(|v| *v == 0.0) {
                break;
            }
            let hidden = &mut net.layers_mut()[0];
            let limit = (6.0 / (hidden.inputs + hidden.units) as f64).sqrt();
            for b in hidden.b.iter_mut() {
                *b = rng.random_range(0.0..limit);
            }
        }
        let cache = ForwardCache::for_net(&net);
        let mut tx = TxEndpoint {
            net,
            opt,
            feature,
            cache,
            raw: Vec::new(),
            mean_power: 0.0,
            points: Vec::new(),
        };
        tx.refresh()?;
        Ok(tx)
    }

    /// Wraps an existing mapper without the cold-start check; test hook for
    /// driving the chain from a handcrafted network.
    #[cfg(test)]
    fn from_net(net: DenseNet, sdnr_db: f64, opt: OptimizerState) -> Result<TxEndpoint> {
        let cache = ForwardCache::for_net(&net);
        let mut tx = TxEndpoint {
            net,
            opt,
            feature: sdnr_feature(sdnr_db),
            cache,
            raw: Vec::new(),
            mean_power: 0.0,
            points: Vec::new(),
        };
        tx.refresh()?;
        Ok(tx)
    }

    /// Moves the endpoint to a different operating SDNR; takes effect at
    /// the next refresh.
    fn set_feature(&mut self, sdnr_db: f64) {
        self.feature = sdnr_feature(sdnr_db);
    }

    /// Re-runs the network and refreshes the normalized constellation and
    /// the cached activations the backward pass needs.
    fn refresh(&mut self) -> Result<()> {
        self.net.forward_cached(&[self.feature], &mut self.cache);
        self.raw = self.cache.output().to_vec();
        let (points, mean_power) = points_from_raw(&self.raw)?;
        self.points = points;
        self.mean_power = mean_power;
        Ok(())
    }

    /// Parameter gradients for a loss gradient on the normalized points,
    /// pulled through the power normalization and the network.
    fn gradient(&self, point_grad: &[(f64, f64)]) -> GradientTape {
        let raw_grad = normalization_backward(&self.raw, self.mean_power, point_grad);
        let mut tape = GradientTape::zeroed_like(&self.net);
        let mut input_grad = Vec::new();
        self.net.backward(&self.cache, &raw_grad, &mut tape, &mut input_grad);
        tape
    }

    fn step(&mut self, tape: &GradientTape) {
        optimizer_step(&mut self.net, tape, &mut self.opt);
    }
}

/// Receive-side trainer; owns the demapper network and only ever exposes
/// losses and received-signal gradients.
struct RxEndpoint {
    net: DenseNet,
    opt: OptimizerState,
}

impl RxEndpoint {
    fn new<R: Rng + ?Sized>(
        m: usize,
        hidden: usize,
        opt: OptimizerState,
        rng: &mut R,
    ) -> Result<RxEndpoint> {
        Ok(RxEndpoint {
            net: demapper_net(m, hidden, rng)?,
            opt,
        })
    }

    /// Mean loss and mean parameter gradient over a batch of labelled
    /// received samples. Chunked so the fold order, and therefore the
    /// result, is identical under every `Exec`.
    fn batch_gradient(
        &self,
        samples: &[(usize, Complex64)],
        sdnr_db: f64,
        exec: Exec,
    ) -> Result<(f64, GradientTape)> {
        let feat = sdnr_feature(sdnr_db);
        let n = samples.len();
        let folded = chunked_fold(
            exec,
            n,
            BATCH_CHUNK,
            |range| {
                let mut cache = ForwardCache::for_net(&self.net);
                let mut tape = GradientTape::zeroed_like(&self.net);
                let mut scratch = Vec::new();
                let mut loss_sum = 0.0;
                let mut failure = None;
                for i in range {
                    let (msg, r) = samples[i];
                    self.net.forward_cached(&[r.re, r.im, feat], &mut cache);
                    match cce_loss(cache.output(), msg) {
                        Ok((loss, grad)) => {
                            loss_sum += loss;
                            self.net.backward(&cache, &grad, &mut tape, &mut scratch);
                        }
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
                (loss_sum, tape, failure)
            },
            Ok((0.0, GradientTape::zeroed_like(&self.net))),
            |acc, (loss, tape, failure)| {
                let (mut loss_sum, mut total) = acc?;
                if let Some(e) = failure {
                    return Err(e);
                }
                loss_sum += loss;
                total.add_assign(&tape);
                Ok((loss_sum, total))
            },
        );
        let (loss_sum, mut tape) = folded?;
        tape.scale(1.0 / n as f64);
        Ok((loss_sum / n as f64, tape))
    }

    /// One SGD update on a batch; returns the mean loss.
    fn sgd_batch(
        &mut self,
        samples: &[(usize, Complex64)],
        sdnr_db: f64,
        exec: Exec,
    ) -> Result<f64> {
        let (loss, tape) = self.batch_gradient(samples, sdnr_db, exec)?;
        optimizer_step(&mut self.net, &tape, &mut self.opt);
        Ok(loss)
    }

    /// Per-sample loss gradients at the received-signal input, without
    /// touching the demapper parameters. This is the feedback conventional
    /// training sends across the link.
    fn input_gradients(
        &self,
        samples: &[(usize, Complex64)],
        sdnr_db: f64,
        exec: Exec,
    ) -> Result<(f64, Vec<(f64, f64)>)> {
        let feat = sdnr_feature(sdnr_db);
        let n = samples.len();
        let folded = chunked_fold(
            exec,
            n,
            BATCH_CHUNK,
            |range| {
                let mut cache = ForwardCache::for_net(&self.net);
                let mut tape = GradientTape::zeroed_like(&self.net);
                let mut input_grad = Vec::new();
                let mut out = Vec::with_capacity(range.len());
                let mut loss_sum = 0.0;
                let mut failure = None;
                for i in range {
                    let (msg, r) = samples[i];
                    self.net.forward_cached(&[r.re, r.im, feat], &mut cache);
                    match cce_loss(cache.output(), msg) {
                        Ok((loss, grad)) => {
                            loss_sum += loss;
                            self.net.backward(&cache, &grad, &mut tape, &mut input_grad);
                            out.push((input_grad[0], input_grad[1]));
                        }
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
                (loss_sum, out, failure)
            },
            Ok((0.0, Vec::with_capacity(n))),
            |acc, (loss, grads, failure)| {
                let (mut loss_sum, mut all) = acc?;
                if let Some(e) = failure {
                    return Err(e);
                }
                loss_sum += loss;
                all.extend(grads);
                Ok((loss_sum, all))
            },
        );
        let (loss_sum, grads) = folded?;
        Ok((loss_sum / n as f64, grads))
    }

    /// Per-sample losses only — the feedback reinforcement training sends.
    fn losses(&self, samples: &[(usize, Complex64)], sdnr_db: f64, exec: Exec) -> Result<Vec<f64>> {
        let feat = sdnr_feature(sdnr_db);
        let folded = chunked_fold(
            exec,
            samples.len(),
            BATCH_CHUNK,
            |range| {
                let mut cache = ForwardCache::for_net(&self.net);
                let mut out = Vec::with_capacity(range.len());
                let mut failure = None;
                for i in range {
                    let (msg, r) = samples[i];
                    self.net.forward_cached(&[r.re, r.im, feat], &mut cache);
                    match cce_loss(cache.output(), msg) {
                        Ok((loss, _)) => out.push(loss),
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
                (out, failure)
            },
            Ok(Vec::with_capacity(samples.len())),
            |acc, (losses, failure)| {
                let mut all = acc?;
                if let Some(e) = failure {
                    return Err(e);
                }
                all.extend(losses);
                Ok(all)
            },
        );
        folded
    }
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// Pre-drawn training data: uniform messages and receiver noise samples,
/// consumed cyclically so every batch is deterministic given the seed.
struct Dataset {
    messages: Vec<usize>,
    noise: Vec<Complex64>,
    cursor: usize,
}

impl Dataset {
    /// Per sample, the message is drawn before the noise pair.
    fn draw<R: Rng + ?Sized>(size: usize, m: usize, no: f64, rng: &mut R) -> Dataset {
        let mut messages = Vec::with_capacity(size);
        let mut noise = Vec::with_capacity(size);
        for _ in 0..size {
            messages.push(rng.random_range(0..(1usize << m)));
            noise.push(draw_noise(rng, no));
        }
        Dataset {
            messages,
            noise,
            cursor: 0,
        }
    }

    fn next_batch(&mut self, n: usize) -> (Vec<usize>, Vec<Complex64>) {
        let mut msgs = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n);
        for _ in 0..n {
            msgs.push(self.messages[self.cursor]);
            noise.push(self.noise[self.cursor]);
            self.cursor = (self.cursor + 1) % self.messages.len();
        }
        (msgs, noise)
    }
}

/// Receiver-side samples for one batch of messages sent as constellation
/// points through the impaired link with pre-drawn noise.
fn received_batch(
    points: &[Complex64],
    msgs: &[usize],
    noise: &[Complex64],
    env: &TrainEnv,
) -> Vec<(usize, Complex64)> {
    msgs.iter()
        .zip(noise)
        .map(|(&b, &n)| (b, transmit_with_noise(points[b], &env.g, &env.k, &env.link, n)))
        .collect()
}

/// Adjoint of the widely-linear channel `r = alpha*x + beta*conj(x)`:
/// maps a gradient at `r` (as a real pair) to the gradient at `x`.
fn channel_adjoint(alpha: Complex64, beta: Complex64, g_re: f64, g_im: f64) -> (f64, f64) {
    (
        (alpha.re + beta.re) * g_re + (alpha.im + beta.im) * g_im,
        (beta.im - alpha.im) * g_re + (alpha.re - beta.re) * g_im,
    )
}

/// Gradient of the log-density of the Gaussian exploration policy
/// `x_tilde = mix*x + sqrt(sigma2)*w` with respect to the clean point `x`,
/// as a real pair. Multiplied by the per-sample loss, this is the
/// score-function estimate of the loss gradient at `x`.
pub fn score_gradient(x: Complex64, x_tilde: Complex64, mix: f64, sigma2: f64) -> (f64, f64) {
    let d = x_tilde - x * mix;
    let scale = 2.0 * mix / sigma2;
    (scale * d.re, scale * d.im)
}

fn net_is_finite(net: &DenseNet) -> bool {
    net.layers()
        .iter()
        .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
}

/// Running plateau detector over the per-round end-to-end loss.
struct PlateauWatch {
    best: f64,
    since: usize,
    hit: Option<usize>,
}

impl PlateauWatch {
    fn new() -> PlateauWatch {
        PlateauWatch {
            best: f64::INFINITY,
            since: 0,
            hit: None,
        }
    }

    fn observe(&mut self, round: usize, loss: f64) {
        if loss < self.best - 1e-4 {
            self.best = loss;
            self.since = 0;
        } else {
            self.since += 1;
            if self.since >= PATIENCE_ROUNDS && self.hit.is_none() {
                self.hit = Some(round);
            }
        }
    }
}

fn check_divergence(
    round: usize,
    loss: f64,
    tx: &TxEndpoint,
    rx: &RxEndpoint,
) -> Result<()> {
    if !loss.is_finite() || !net_is_finite(&tx.net) || !net_is_finite(&rx.net) {
        return Err(Error::TrainingDiverged { round, loss });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training regimes
// ---------------------------------------------------------------------------

/// Conventional alternating training: demapper SGD on fresh received
/// batches, mapper Adam through the full differentiable chain.
pub fn train_conventional(cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = TrainEnv::for_config(cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut tx = TxEndpoint::new(cfg.m, env.sdnr_db, OptimizerState::adam(cfg.adam_lr), &mut rng)?;
    let mut rx = RxEndpoint::new(cfg.m, cfg.hidden_rx, OptimizerState::sgd(cfg.sgd_lr), &mut rng)?;
    let mut dataset = Dataset::draw(cfg.dataset_size, cfg.m, env.link.no, &mut rng);
    let mut ledger = ExchangeLedger::default();
    let mut log = TrainLog::default();
    let mut watch = PlateauWatch::new();
    let mut final_loss = f64::NAN;

    for round in 0..cfg.rounds {
        // A positive jitter re-draws the round's operating SNR; the link
        // normalization keeps the noise level fixed, so the pre-drawn
        // dataset stays valid and only the gains and the feature move.
        let env_r = if cfg.snr_jitter_db > 0.0 {
            let snr = cfg.snr_db + rng.random_range(-cfg.snr_jitter_db..cfg.snr_jitter_db);
            let e = TrainEnv::new(cfg.tx_mismatch, cfg.rx_mismatch, snr)?;
            tx.set_feature(e.sdnr_db);
            e
        } else {
            env.clone()
        };
        tx.refresh()?;
        ledger.publish_constellation(cfg.m);

        let mut rx_loss = 0.0;
        for _ in 0..cfg.rx_iters {
            let (msgs, noise) = dataset.next_batch(cfg.batch);
            let samples = received_batch(&tx.points, &msgs, &noise, &env_r);
            rx_loss += rx.sgd_batch(&samples, env_r.sdnr_db, exec)?;
        }
        log.push(round, Phase::Rx, rx_loss / cfg.rx_iters as f64, &ledger);

        let mut tx_loss = 0.0;
        for _ in 0..cfg.tx_iters {
            tx.refresh()?;
            let (msgs, noise) = dataset.next_batch(cfg.batch);
            let samples = received_batch(&tx.points, &msgs, &noise, &env_r);
            let (mean_loss, grads) = rx.input_gradients(&samples, env_r.sdnr_db, exec)?;
            ledger.feedback(2 * cfg.batch as u64);
            let scale = 1.0 / cfg.batch as f64;
            let mut point_grad = vec![(0.0, 0.0); 1 << cfg.m];
            for (&b, (g_re, g_im)) in msgs.iter().zip(grads) {
                let (du, dv) = channel_adjoint(env_r.alpha, env_r.beta, g_re, g_im);
                point_grad[b].0 += du * scale;
                point_grad[b].1 += dv * scale;
            }
            let tape = tx.gradient(&point_grad);
            tx.step(&tape);
            tx_loss += mean_loss;
        }
        final_loss = tx_loss / cfg.tx_iters as f64;
        log.push(round, Phase::Tx, final_loss, &ledger);

        ledger.rounds += 1;
        watch.observe(round, final_loss);
        check_divergence(round, final_loss, &tx, &rx)?;
    }

    Ok(TrainOutcome {
        pair: TrainedPair {
            regime: Regime::Conventional,
            tx_net: tx.net,
            rx_net: rx.net,
            config: cfg.clone(),
            final_loss,
        },
        ledger,
        log,
        plateau: watch.hit,
    })
}

/// Reinforcement training: the mapper learns from scalar losses fed back by
/// the demapper over Gaussian-perturbed transmissions; no gradient crosses
/// the channel. Ends with a demapper-only fine-tuning pass on fresh
/// samples of the final constellation.
pub fn train_rl(cfg: &TrainConfig, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = TrainEnv::for_config(cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut tx = TxEndpoint::new(cfg.m, env.sdnr_db, OptimizerState::adam(cfg.adam_lr), &mut rng)?;
    let mut rx = RxEndpoint::new(cfg.m, cfg.hidden_rx, OptimizerState::sgd(cfg.sgd_lr), &mut rng)?;
    let mut dataset = Dataset::draw(cfg.dataset_size, cfg.m, env.link.no, &mut rng);
    let mut ledger = ExchangeLedger::default();
    let mut log = TrainLog::default();
    let mut watch = PlateauWatch::new();
    let mix = (1.0 - cfg.sigma2).sqrt();
    let mut final_loss = f64::NAN;

    for round in 0..cfg.rounds {
        let env_r = if cfg.snr_jitter_db > 0.0 {
            let snr = cfg.snr_db + rng.random_range(-cfg.snr_jitter_db..cfg.snr_jitter_db);
            let e = TrainEnv::new(cfg.tx_mismatch, cfg.rx_mismatch, snr)?;
            tx.set_feature(e.sdnr_db);
            e
        } else {
            env.clone()
        };
        tx.refresh()?;
        ledger.publish_constellation(cfg.m);

        let mut rx_loss = 0.0;
        for _ in 0..cfg.rx_iters {
            let (msgs, noise) = dataset.next_batch(cfg.batch);
            let samples = received_batch(&tx.points, &msgs, &noise, &env_r);
            rx_loss += rx.sgd_batch(&samples, env_r.sdnr_db, exec)?;
        }
        log.push(round, Phase::Rx, rx_loss / cfg.rx_iters as f64, &ledger);

        let mut tx_loss = 0.0;
        for _ in 0..cfg.tx_iters {
            tx.refresh()?;
            let (msgs, noise) = dataset.next_batch(cfg.batch);
            // Exploration draws happen sequentially, before any parallel
            // fan-out, to keep the run reproducible.
            let perturbed: Vec<Complex64> = msgs
                .iter()
                .map(|&b| tx.points[b] * mix + draw_noise(&mut rng, cfg.sigma2))
                .collect();
            let samples: Vec<(usize, Complex64)> = msgs
                .iter()
                .zip(perturbed.iter().zip(&noise))
                .map(|(&b, (&x, &n))| {
                    (b, transmit_with_noise(x, &env_r.g, &env_r.k, &env_r.link, n))
                })
                .collect();
            let losses = rx.losses(&samples, env_r.sdnr_db, exec)?;
            ledger.feedback(cfg.batch as u64);
            let scale = 1.0 / cfg.batch as f64;
            let mut point_grad = vec![(0.0, 0.0); 1 << cfg.m];
            for ((&b, &x_tilde), &loss) in msgs.iter().zip(&perturbed).zip(&losses) {
                let (su, sv) = score_gradient(tx.points[b], x_tilde, mix, cfg.sigma2);
                point_grad[b].0 += loss * su * scale;
                point_grad[b].1 += loss * sv * scale;
            }
            let tape = tx.gradient(&point_grad);
            tx.step(&tape);
            tx_loss += losses.iter().sum::<f64>() * scale;
        }
        final_loss = tx_loss / cfg.tx_iters as f64;
        log.push(round, Phase::Tx, final_loss, &ledger);

        ledger.rounds += 1;
        watch.observe(round, final_loss);
        check_divergence(round, final_loss, &tx, &rx)?;
    }

    // Fine-tune the demapper alone on fresh, unperturbed samples of the
    // final constellation, which costs one more publish. Back at the
    // nominal SNR in case the rounds were jittered.
    if cfg.finetune_samples > 0 {
        tx.set_feature(env.sdnr_db);
        tx.refresh()?;
        ledger.publish_constellation(cfg.m);
        let fresh = Dataset::draw(cfg.finetune_samples, cfg.m, env.link.no, &mut rng);
        for (msgs, noise) in fresh
            .messages
            .chunks(cfg.batch)
            .zip(fresh.noise.chunks(cfg.batch))
        {
            let samples = received_batch(&tx.points, msgs, noise, &env);
            final_loss = rx.sgd_batch(&samples, env.sdnr_db, exec)?;
            log.push(cfg.rounds, Phase::FineTune, final_loss, &ledger);
        }
        check_divergence(cfg.rounds, final_loss, &tx, &rx)?;
    }

    Ok(TrainOutcome {
        pair: TrainedPair {
            regime: Regime::Reinforce,
            tx_net: tx.net,
            rx_net: rx.net,
            config: cfg.clone(),
            final_loss,
        },
        ledger,
        log,
        plateau: watch.hit,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Monte Carlo mean cross-entropy of a trained pair at an SNR, over fresh
/// channel noise. The constellation is regenerated at the SDNR implied by
/// the pair's configured hardware and the requested SNR.
pub fn evaluate_loss(
    pair: &TrainedPair,
    snr_db: f64,
    n_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("evaluation needs at least one sample".into()));
    }
    let env = TrainEnv::new(pair.config.tx_mismatch, pair.config.rx_mismatch, snr_db)?;
    let constellation = generate_constellation(&pair.tx_net, env.sdnr_db)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut dataset = Dataset::draw(n_samples, pair.config.m, env.link.no, &mut rng);
    let (msgs, noise) = dataset.next_batch(n_samples);
    let samples = received_batch(constellation.points(), &msgs, &noise, &env);
    let feat = sdnr_feature(env.sdnr_db);
    let folded = chunked_fold(
        exec,
        n_samples,
        BATCH_CHUNK,
        |range| {
            let mut cache = ForwardCache::for_net(&pair.rx_net);
            let mut sum = 0.0;
            let mut failure = None;
            for i in range {
                let (msg, r) = samples[i];
                pair.rx_net.forward_cached(&[r.re, r.im, feat], &mut cache);
                match cce_loss(cache.output(), msg) {
                    Ok((loss, _)) => sum += loss,
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            (sum, failure)
        },
        Ok(0.0),
        |acc, (sum, failure)| {
            let total = acc?;
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(total + sum)
        },
    );
    Ok(folded? / n_samples as f64)
}

/// Noiseless sanity gate: every message, sent through the impaired channel
/// with the noise switched off, must be recovered exactly by the hard
/// decision. A pair that fails this cannot be trusted at any SNR.
pub fn zero_noise_round_trip(pair: &TrainedPair) -> Result<bool> {
    let env = TrainEnv::for_config(&pair.config)?;
    let constellation = generate_constellation(&pair.tx_net, env.sdnr_db)?;
    for (index, &x) in constellation.points().iter().enumerate() {
        let r = env.alpha * x + env.beta * x.conj();
        let posterior = demap_soft(
            &pair.rx_net,
            &DemapperInput {
                r,
                sdnr_db: env.sdnr_db,
            },
        )?;
        if demap_hard(&posterior).to_index() != index {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Paired checkpoints
// ---------------------------------------------------------------------------

/// Saves `{prefix}.tx.net`, `{prefix}.rx.net` and `{prefix}.meta`.
pub fn save_pair(pair: &TrainedPair, prefix: &str) -> Result<()> {
    use std::fmt::Write;
    save_checkpoint(&pair.tx_net, std::path::Path::new(&format!("{prefix}.tx.net")))?;
    save_checkpoint(&pair.rx_net, std::path::Path::new(&format!("{prefix}.rx.net")))?;
    let c = &pair.config;
    let mut meta = String::new();
    writeln!(meta, "trained pair v1").unwrap();
    writeln!(meta, "regime {}", pair.regime.as_str()).unwrap();
    writeln!(meta, "m {}", c.m).unwrap();
    writeln!(meta, "snr_db {}", c.snr_db).unwrap();
    writeln!(meta, "snr_jitter_db {}", c.snr_jitter_db).unwrap();
    writeln!(meta, "tx_epsilon {}", c.tx_mismatch.epsilon).unwrap();
    writeln!(meta, "tx_phi {}", c.tx_mismatch.phi).unwrap();
    writeln!(meta, "rx_epsilon {}", c.rx_mismatch.epsilon).unwrap();
    writeln!(meta, "rx_phi {}", c.rx_mismatch.phi).unwrap();
    writeln!(meta, "dataset_size {}", c.dataset_size).unwrap();
    writeln!(meta, "batch {}", c.batch).unwrap();
    writeln!(meta, "rounds {}", c.rounds).unwrap();
    writeln!(meta, "rx_iters {}", c.rx_iters).unwrap();
    writeln!(meta, "tx_iters {}", c.tx_iters).unwrap();
    writeln!(meta, "adam_lr {}", c.adam_lr).unwrap();
    writeln!(meta, "sgd_lr {}", c.sgd_lr).unwrap();
    writeln!(meta, "sigma2 {}", c.sigma2).unwrap();
    writeln!(meta, "finetune_samples {}", c.finetune_samples).unwrap();
    writeln!(meta, "hidden_rx {}", c.hidden_rx).unwrap();
    writeln!(meta, "seed {}", c.seed).unwrap();
    writeln!(meta, "final_loss {}", pair.final_loss).unwrap();
    std::fs::write(format!("{prefix}.meta"), meta)?;
    Ok(())
}

/// Loads a pair saved by [`save_pair`] and validates that the networks have
/// the topology the recorded `m` demands.
pub fn load_pair(prefix: &str) -> Result<TrainedPair> {
    let meta_path = format!("{prefix}.meta");
    let text = std::fs::read_to_string(&meta_path)?;
    let malformed = |reason: &str| Error::MalformedFile {
        path: meta_path.clone(),
        reason: reason.into(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("trained pair v1") {
        return Err(malformed("missing trained pair v1 header"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| malformed("truncated metadata"))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_owned)
            .ok_or_else(|| malformed(&format!("expected key '{key}'")))
    };
    let parse_f64 = |s: String, key: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| malformed(&format!("bad float for '{key}'")))
    };
    let parse_usize = |s: String, key: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| malformed(&format!("bad integer for '{key}'")))
    };
    let regime = Regime::from_str(&field("regime")?)?;
    let m = parse_usize(field("m")?, "m")?;
    let snr_db = parse_f64(field("snr_db")?, "snr_db")?;
    let snr_jitter_db = parse_f64(field("snr_jitter_db")?, "snr_jitter_db")?;
    let tx_eps = parse_f64(field("tx_epsilon")?, "tx_epsilon")?;
    let tx_phi = parse_f64(field("tx_phi")?, "tx_phi")?;
    let rx_eps = parse_f64(field("rx_epsilon")?, "rx_epsilon")?;
    let rx_phi = parse_f64(field("rx_phi")?, "rx_phi")?;
    let cfg = TrainConfig {
        m,
        snr_db,
        snr_jitter_db,
        tx_mismatch: Mismatch::new(tx_eps, tx_phi)?,
        rx_mismatch: Mismatch::new(rx_eps, rx_phi)?,
        dataset_size: parse_usize(field("dataset_size")?, "dataset_size")?,
        batch: parse_usize(field("batch")?, "batch")?,
        rounds: parse_usize(field("rounds")?, "rounds")?,
        rx_iters: parse_usize(field("rx_iters")?, "rx_iters")?,
        tx_iters: parse_usize(field("tx_iters")?, "tx_iters")?,
        adam_lr: parse_f64(field("adam_lr")?, "adam_lr")?,
        sgd_lr: parse_f64(field("sgd_lr")?, "sgd_lr")?,
        sigma2: parse_f64(field("sigma2")?, "sigma2")?,
        finetune_samples: parse_usize(field("finetune_samples")?, "finetune_samples")?,
        hidden_rx: parse_usize(field("hidden_rx")?, "hidden_rx")?,
        seed: field("seed")?
            .parse()
            .map_err(|_| malformed("bad integer for 'seed'"))?,
    };
    let final_loss = parse_f64(field("final_loss")?, "final_loss")?;
    if lines.next().is_some() {
        return Err(malformed("trailing lines after metadata"));
    }
    let tx_net = load_checkpoint(std::path::Path::new(&format!("{prefix}.tx.net")))?;
    let rx_net = load_checkpoint(std::path::Path::new(&format!("{prefix}.rx.net")))?;
    if tx_net.input_dim() != 1 || tx_net.output_dim() != (1 << (m + 1)) {
        return Err(malformed("mapper network shape does not match m"));
    }
    if rx_net.input_dim() != 3 || rx_net.output_dim() != (1 << m) {
        return Err(malformed("demapper network shape does not match m"));
    }
    Ok(TrainedPair {
        regime,
        tx_net,
        rx_net,
        config: cfg,
        final_loss,
    })
}
