//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Everything the trainer needs lives here: Glorot-initialized layers,
//! cached forward passes, reverse-mode gradients for parameters and inputs,
//! the softmax/cross-entropy pair, SGD and Adam updates, and a plain-text
//! checkpoint format that round-trips every f64 bit for bit.
//!
//! The networks are small (a few hundred units), run in f64 throughout and
//! avoid any allocation in the per-sample hot path by reusing
//! [`ForwardCache`] and [`GradientTape`] buffers.
//!
//! ## Gradient convention
//!
//! [`DenseNet::backward`] consumes the gradient of the loss with respect to
//! the network output. The one exception is a final [`Activation::Softmax`]
//! layer: there the caller passes the gradient with respect to the logits,
//! which for cross-entropy is simply `p - u` as returned by [`cce_loss`].
//! This fused form avoids materializing the softmax Jacobian and is exact.

use rand::Rng;

use crate::{Error, Result};

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_name(name: &str) -> Result<Activation> {
        match name {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::InvalidParameter(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// One dense layer: `units x inputs` weight matrix in row-major order
/// (row u holds the incoming weights of unit u), a bias per unit and an
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub units: usize,
    pub act: Activation,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Shape request for one layer of a new network.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub units: usize,
    pub act: Activation,
}

impl LayerSpec {
    pub fn new(units: usize, act: Activation) -> LayerSpec {
        LayerSpec { units, act }
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a network with Glorot-uniform weights and zero biases.
    ///
    /// Weights of each layer are drawn from U(-L, L) with
    /// L = sqrt(6 / (fan_in + fan_out)), in storage order, so a seeded RNG
    /// reproduces the same network exactly. Softmax is only legal on the
    /// final layer.
    pub fn glorot_init<R: Rng + ?Sized>(
        input_dim: usize,
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<DenseNet> {
        let mut net = DenseNet::zeroed(input_dim, specs)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.units) as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// All-zero parameters; useful as a degenerate reference (a zeroed
    /// softmax head emits the uniform distribution).
    pub fn zeroed(input_dim: usize, specs: &[LayerSpec]) -> Result<DenseNet> {
        if input_dim == 0 || specs.is_empty() {
            return Err(Error::InvalidParameter(
                "network needs a positive input dimension and at least one layer".into(),
            ));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut inputs = input_dim;
        for (i, spec) in specs.iter().enumerate() {
            if spec.units == 0 {
                return Err(Error::InvalidParameter(format!("layer {i} has zero units")));
            }
            if spec.act == Activation::Softmax && i != specs.len() - 1 {
                return Err(Error::InvalidParameter(
                    "softmax is only supported on the final layer".into(),
                ));
            }
            layers.push(Layer {
                inputs,
                units: spec.units,
                act: spec.act,
                w: vec![0.0; spec.units * inputs],
                b: vec![0.0; spec.units],
            });
            inputs = spec.units;
        }
        Ok(DenseNet { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().units
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers for callers that adjust parameters
    /// outside [`optimizer_step`] (custom initialization, perturbations in
    /// tests). Shapes must not be changed.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Convenience forward pass allocating a fresh cache.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = ForwardCache::for_net(self);
        self.forward_cached(x, &mut cache);
        cache.output().to_vec()
    }

    /// Forward pass writing every intermediate activation into `cache`.
    pub fn forward_cached(&self, x: &[f64], cache: &mut ForwardCache) {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        cache.input.clear();
        cache.input.extend_from_slice(x);
        // Split borrow: completed layer outputs on the left, the buffer
        // being written on the right.
        for (li, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.post.split_at_mut(li);
            let dst = &mut rest[0];
            let src: &[f64] = if li == 0 { &cache.input } else { &done[li - 1] };
            debug_assert_eq!(src.len(), layer.inputs);
            for u in 0..layer.units {
                let row = &layer.w[u * layer.inputs..(u + 1) * layer.inputs];
                let mut acc = layer.b[u];
                for (wi, xi) in row.iter().zip(src) {
                    acc += wi * xi;
                }
                dst[u] = acc;
            }
            match layer.act {
                Activation::Linear => {}
                Activation::Relu => {
                    for v in dst.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                Activation::Softmax => softmax_in_place(dst),
            }
        }
    }

    /// Reverse pass. Accumulates parameter gradients into `tape` (so batches
    /// can sum over samples) and writes the loss gradient with respect to the
    /// network input into `input_grad`.
    ///
    /// `out_grad` is dL/d(output), except when the final layer is softmax:
    /// then it is dL/d(logits), i.e. `p - u` for cross-entropy. ReLU uses the
    /// zero subgradient at exactly zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
        tape: &mut GradientTape,
        input_grad: &mut Vec<f64>,
    ) {
        assert_eq!(out_grad.len(), self.output_dim(), "gradient dimension mismatch");
        assert_eq!(tape.layers.len(), self.layers.len(), "tape shape mismatch");
        let mut delta: Vec<f64> = out_grad.to_vec();
        let mut below: Vec<f64> = Vec::new();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            // delta currently holds dL/d(post activation of layer li), or
            // dL/d(logits) when li is a softmax head.
            match layer.act {
                Activation::Relu => {
                    let post = &cache.post[li];
                    for (d, p) in delta.iter_mut().zip(post) {
                        if *p <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Linear | Activation::Softmax => {}
            }
            let input: &[f64] = if li == 0 { &cache.input } else { &cache.post[li - 1] };
            let grad = &mut tape.layers[li];
            below.clear();
            below.resize(layer.inputs, 0.0);
            for u in 0..layer.units {
                let d = delta[u];
                grad.b[u] += d;
                if d != 0.0 {
                    let row = &layer.w[u * layer.inputs..(u + 1) * layer.inputs];
                    let wrow = &mut grad.w[u * layer.inputs..(u + 1) * layer.inputs];
                    for i in 0..layer.inputs {
                        wrow[i] += d * input[i];
                        below[i] += d * row[i];
                    }
                }
            }
            std::mem::swap(&mut delta, &mut below);
        }
        input_grad.clear();
        input_grad.extend_from_slice(&delta);
    }
}

/// Numerically stable softmax with a 1e-12 probability floor, renormalized
/// so the outputs still sum to one.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let mut clamped_sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v / sum).max(1e-12);
        clamped_sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= clamped_sum;
    }
}

/// Categorical cross-entropy of a probability vector against a one-hot
/// target given by index. Returns the loss and its gradient with respect to
/// the logits that produced `probs` through softmax: `p - u`.
///
/// Probabilities are clamped to 1e-12 before the log.
pub fn cce_loss(probs: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "target index {target} outside posterior of size {}",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cce_loss expects a probability vector, sum was {sum}"
        )));
    }
    let loss = -probs[target].max(1e-12).ln();
    let mut grad = probs.to_vec();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Per-sample activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn for_net(net: &DenseNet) -> ForwardCache {
        ForwardCache {
            input: Vec::with_capacity(net.input_dim()),
            post: net.layers.iter().map(|l| vec![0.0; l.units]).collect(),
        }
    }

    /// Output of the most recent forward pass.
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("cache is never empty")
    }
}

/// Parameter gradients with the same shape as a network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl GradientTape {
    pub fn zeroed_like(net: &DenseNet) -> GradientTape {
        GradientTape {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v *= factor);
            l.b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Adds another tape of identical shape, used for the ordered batch
    /// reduction.
    pub fn add_assign(&mut self, other: &GradientTape) {
        assert_eq!(self.layers.len(), other.layers.len(), "tape shape mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
    }
}

/// Gradient descent flavor applied by [`optimizer_step`].
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<LayerGrad>,
        v: Vec<LayerGrad>,
    },
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> OptimizerState {
        OptimizerState::Sgd { lr }
    }

    /// Adam with the customary (0.9, 0.999, 1e-8) constants. Moment buffers
    /// are allocated on first use to match the tape shape.
    pub fn adam(lr: f64) -> OptimizerState {
        OptimizerState::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// Applies one descent update `net <- net - direction(tape)` in place.
///
/// SGD subtracts `lr * g`. Adam keeps exponential moment estimates with
/// bias correction: m_hat = m / (1 - b1^t), v_hat = v / (1 - b2^t),
/// theta -= lr * m_hat / (sqrt(v_hat) + eps).
pub fn optimizer_step(net: &mut DenseNet, tape: &GradientTape, opt: &mut OptimizerState) {
    assert_eq!(net.layers.len(), tape.layers.len(), "tape shape mismatch");
    match opt {
        OptimizerState::Sgd { lr } => {
            let lr = *lr;
            for (layer, grad) in net.layers.iter_mut().zip(&tape.layers) {
                for (w, g) in layer.w.iter_mut().zip(&grad.w) {
                    *w -= lr * g;
                }
                for (b, g) in layer.b.iter_mut().zip(&grad.b) {
                    *b -= lr * g;
                }
            }
        }
        OptimizerState::Adam {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        } => {
            if m.is_empty() {
                *m = tape
                    .layers
                    .iter()
                    .map(|l| LayerGrad {
                        w: vec![0.0; l.w.len()],
                        b: vec![0.0; l.b.len()],
                    })
                    .collect();
                *v = m.clone();
            }
            *step += 1;
            let t = *step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for li in 0..net.layers.len() {
                let layer = &mut net.layers[li];
                let grad = &tape.layers[li];
                let adam_update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..theta.len() {
                        m[i] = *beta1 * m[i] + (1.0 - *beta1) * g[i];
                        v[i] = *beta2 * v[i] + (1.0 - *beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        theta[i] -= *lr * m_hat / (v_hat.sqrt() + *eps);
                    }
                };
                adam_update(&mut layer.w, &grad.w, &mut m[li].w, &mut v[li].w);
                adam_update(&mut layer.b, &grad.b, &mut m[li].b, &mut v[li].b);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

/// Serializes a network to the plain-text checkpoint format.
///
/// The format is self-describing and line oriented:
///
/// ```text
/// densenet v1
/// input 3
/// layers 2
/// layer 0 relu 3 16
/// w <16*3 values, row-major>
/// b <16 values>
/// layer 1 softmax 16 4
/// ...
/// end
/// ```
///
/// Floats are written with Rust's shortest round-trip formatting, so
/// save/load reproduces every parameter bit for bit and re-saving yields a
/// byte-identical file.
pub fn checkpoint_to_string(net: &DenseNet) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "densenet v1").unwrap();
    writeln!(out, "input {}", net.input_dim()).unwrap();
    writeln!(out, "layers {}", net.layers.len()).unwrap();
    for (i, layer) in net.layers.iter().enumerate() {
        writeln!(
            out,
            "layer {i} {} {} {}",
            layer.act.name(),
            layer.inputs,
            layer.units
        )
        .unwrap();
        out.push('w');
        for w in &layer.w {
            write!(out, " {w}").unwrap();
        }
        out.push('\n');
        out.push('b');
        for b in &layer.b {
            write!(out, " {b}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "end").unwrap();
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<DenseNet> {
    let malformed = |reason: &str| Error::MalformedFile {
        path: "<string>".into(),
        reason: reason.into(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("densenet v1") {
        return Err(malformed("missing densenet v1 header"));
    }
    let input_dim: usize = parse_kv(lines.next(), "input").ok_or_else(|| malformed("bad input line"))?;
    let n_layers: usize = parse_kv(lines.next(), "layers").ok_or_else(|| malformed("bad layers line"))?;
    if n_layers == 0 {
        return Err(malformed("zero layers"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut expect_inputs = input_dim;
    for li in 0..n_layers {
        let header = lines.next().ok_or_else(|| malformed("truncated layer header"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "layer" || parts[1] != li.to_string() {
            return Err(malformed(&format!("bad header for layer {li}")));
        }
        let act = Activation::from_name(parts[2])
            .map_err(|_| malformed(&format!("unknown activation in layer {li}")))?;
        let inputs: usize = parts[3].parse().map_err(|_| malformed("bad layer input size"))?;
        let units: usize = parts[4].parse().map_err(|_| malformed("bad layer unit count"))?;
        if inputs != expect_inputs || units == 0 {
            return Err(malformed(&format!("inconsistent shape in layer {li}")));
        }
        let w = parse_values(lines.next(), 'w', units * inputs)
            .ok_or_else(|| malformed(&format!("bad weight row in layer {li}")))?;
        let b = parse_values(lines.next(), 'b', units)
            .ok_or_else(|| malformed(&format!("bad bias row in layer {li}")))?;
        layers.push(Layer {
            inputs,
            units,
            act,
            w,
            b,
        });
        expect_inputs = units;
    }
    if lines.next() != Some("end") {
        return Err(malformed("missing end marker"));
    }
    Ok(DenseNet { layers })
}

fn parse_kv(line: Option<&str>, key: &str) -> Option<usize> {
    let line = line?;
    let rest = line.strip_prefix(key)?.trim();
    rest.parse().ok()
}

fn parse_values(line: Option<&str>, tag: char, expect: usize) -> Option<Vec<f64>> {
    let line = line?;
    let rest = line.strip_prefix(tag)?;
    let vals: Option<Vec<f64>> = rest.split_whitespace().map(|t| t.parse().ok()).collect();
    let vals = vals?;
    (vals.len() == expect).then_some(vals)
}

/// Writes a checkpoint file.
pub fn save_checkpoint(net: &DenseNet, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(net))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: &std::path::Path) -> Result<DenseNet> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_str(&text).map_err(|e| match e {
        Error::MalformedFile { reason, .. } => Error::MalformedFile {
            path: path.display().to_string(),
            reason,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn relu_net(input: usize, hidden: usize, out: usize, act: Activation, seed: u64) -> DenseNet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DenseNet::glorot_init(
            input,
            &[
                LayerSpec::new(hidden, Activation::Relu),
                LayerSpec::new(out, act),
            ],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn glorot_respects_the_fan_bound() {
        // A 1-to-1 layer has limit sqrt(6/2) = sqrt(3).
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..200 {
            let net =
                DenseNet::glorot_init(1, &[LayerSpec::new(1, Activation::Linear)], &mut rng)
                    .unwrap();
            let w = net.layers()[0].w[0];
            assert!(w.abs() < 3f64.sqrt());
            assert_eq!(net.layers()[0].b[0], 0.0);
        }
    }

    #[test]
    fn glorot_variance_matches_fan_average() {
        // Var(U(-L, L)) = L^2/3 = 2 / (fan_in + fan_out).
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let net = DenseNet::glorot_init(
            40,
            &[LayerSpec::new(2500, Activation::Linear)],
            &mut rng,
        )
        .unwrap();
        let w = &net.layers()[0].w;
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let expect = 2.0 / (40.0 + 2500.0);
        assert!((var - expect).abs() / expect < 0.05, "var {var} expect {expect}");
        assert!(mean.abs() < 3.0 * (expect / w.len() as f64).sqrt());
    }

    #[test]
    fn glorot_is_seed_deterministic() {
        let a = relu_net(3, 16, 4, Activation::Softmax, 42);
        let b = relu_net(3, 16, 4, Activation::Softmax, 42);
        let c = relu_net(3, 16, 4, Activation::Softmax, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn softmax_anywhere_but_last_is_rejected() {
        let specs = [
            LayerSpec::new(4, Activation::Softmax),
            LayerSpec::new(2, Activation::Linear),
        ];
        assert!(DenseNet::zeroed(3, &specs).is_err());
        assert!(DenseNet::zeroed(0, &[LayerSpec::new(1, Activation::Linear)]).is_err());
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 2-in, 2-hidden ReLU, 1-out linear with fixed parameters.
        let mut net = DenseNet::zeroed(
            2,
            &[
                LayerSpec::new(2, Activation::Relu),
                LayerSpec::new(1, Activation::Linear),
            ],
        )
        .unwrap();
        net.layers[0].w = vec![1.0, 0.5, -0.5, 2.0];
        net.layers[0].b = vec![0.1, -0.1];
        net.layers[1].w = vec![2.0, -1.0];
        net.layers[1].b = vec![0.5];
        // pre = [0.6, -2.6] -> relu [0.6, 0] -> 2*0.6 + 0.5 = 1.7
        let out = net.forward(&[1.0, -1.0]);
        assert_eq!(out.len(), 1);
        assert!((out[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn zeroed_softmax_head_is_uniform() {
        let net = DenseNet::zeroed(
            3,
            &[
                LayerSpec::new(8, Activation::Relu),
                LayerSpec::new(16, Activation::Softmax),
            ],
        )
        .unwrap();
        let out = net.forward(&[0.3, -2.0, 5.0]);
        for p in &out {
            assert!((p - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_stays_positive() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mut logits: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
            softmax_in_place(&mut logits);
            let sum: f64 = logits.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(logits.iter().all(|p| *p > 0.0));
        }
        // Extreme spread exercises the clamp floor.
        let mut logits = vec![0.0, -800.0, -750.0, 3.0];
        softmax_in_place(&mut logits);
        assert!(logits.iter().all(|p| *p > 0.0));
        assert!((logits.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cce_loss_edge_values() {
        // Exact one-hot prediction costs zero.
        let (loss, grad) = cce_loss(&[0.0, 1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(loss, 0.0);
        assert!((grad[1] - 0.0).abs() < 1e-15 && grad[0].abs() < 1e-15);
        // Uniform over 4 costs ln 4.
        let (loss, _) = cce_loss(&[0.25; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        // Malformed inputs are rejected.
        assert!(cce_loss(&[0.5, 0.2], 0).is_err());
        assert!(cce_loss(&[0.5, 0.5], 2).is_err());
    }

    /// Central finite differences over every parameter of `net`.
    fn fd_param_gradients(
        net: &DenseNet,
        x: &[f64],
        loss_of: &dyn Fn(&DenseNet) -> f64,
    ) -> GradientTape {
        let mut fd = GradientTape::zeroed_like(net);
        let h = 1e-4;
        let mut probe = net.clone();
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].w.len() {
                let orig = probe.layers[li].w[wi];
                probe.layers[li].w[wi] = orig + h;
                let up = loss_of(&probe);
                probe.layers[li].w[wi] = orig - h;
                let down = loss_of(&probe);
                probe.layers[li].w[wi] = orig;
                fd.layers[li].w[wi] = (up - down) / (2.0 * h);
            }
            for bi in 0..net.layers[li].b.len() {
                let orig = probe.layers[li].b[bi];
                probe.layers[li].b[bi] = orig + h;
                let up = loss_of(&probe);
                probe.layers[li].b[bi] = orig - h;
                let down = loss_of(&probe);
                probe.layers[li].b[bi] = orig;
                fd.layers[li].b[bi] = (up - down) / (2.0 * h);
            }
        }
        let _ = x;
        fd
    }

    fn max_rel_err(a: &GradientTape, b: &GradientTape) -> f64 {
        let mut worst: f64 = 0.0;
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            for (x, y) in la.w.iter().zip(&lb.w).chain(la.b.iter().zip(&lb.b)) {
                let denom = x.abs().max(y.abs()).max(1.0);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences_for_cce() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for trial in 0..10 {
            let net = relu_net(3, 12, 8, Activation::Softmax, 100 + trial);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let target = (trial % 8) as usize;
            let loss_of = |n: &DenseNet| {
                let p = n.forward(&x);
                cce_loss(&p, target).unwrap().0
            };
            let mut cache = ForwardCache::for_net(&net);
            net.forward_cached(&x, &mut cache);
            let (_, logit_grad) = cce_loss(cache.output(), target).unwrap();
            let mut tape = GradientTape::zeroed_like(&net);
            let mut input_grad = Vec::new();
            net.backward(&cache, &logit_grad, &mut tape, &mut input_grad);
            let fd = fd_param_gradients(&net, &x, &loss_of);
            assert!(
                max_rel_err(&tape, &fd) < 1e-4,
                "trial {trial}: rel err {}",
                max_rel_err(&tape, &fd)
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences_for_squared_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for trial in 0..10 {
            let net = relu_net(2, 10, 6, Activation::Linear, 500 + trial);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss_of = |n: &DenseNet| {
                let y = n.forward(&x);
                y.iter().zip(&target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum::<f64>()
            };
            let mut cache = ForwardCache::for_net(&net);
            net.forward_cached(&x, &mut cache);
            let out_grad: Vec<f64> =
                cache.output().iter().zip(&target).map(|(a, b)| a - b).collect();
            let mut tape = GradientTape::zeroed_like(&net);
            let mut input_grad = Vec::new();
            net.backward(&cache, &out_grad, &mut tape, &mut input_grad);
            let fd = fd_param_gradients(&net, &x, &loss_of);
            assert!(max_rel_err(&tape, &fd) < 1e-4);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = relu_net(4, 10, 5, Activation::Softmax, 77);
        let x0 = [0.3, -0.7, 1.2, 0.05];
        let target = 2;
        let mut cache = ForwardCache::for_net(&net);
        net.forward_cached(&x0, &mut cache);
        let (_, logit_grad) = cce_loss(cache.output(), target).unwrap();
        let mut tape = GradientTape::zeroed_like(&net);
        let mut input_grad = Vec::new();
        net.backward(&cache, &logit_grad, &mut tape, &mut input_grad);
        let h = 1e-5;
        for i in 0..4 {
            let mut xp = x0;
            xp[i] += h;
            let up = cce_loss(&net.forward(&xp), target).unwrap().0;
            xp[i] -= 2.0 * h;
            let down = cce_loss(&net.forward(&xp), target).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(input_grad[i].abs()).max(1.0);
            assert!((fd - input_grad[i]).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn relu_at_exactly_zero_blocks_the_gradient() {
        // One unit whose pre-activation lands exactly on zero: w*x + b = 0.
        let mut net = DenseNet::zeroed(
            1,
            &[
                LayerSpec::new(1, Activation::Relu),
                LayerSpec::new(1, Activation::Linear),
            ],
        )
        .unwrap();
        net.layers[0].w = vec![1.0];
        net.layers[0].b = vec![-1.0];
        net.layers[1].w = vec![3.0];
        let mut cache = ForwardCache::for_net(&net);
        net.forward_cached(&[1.0], &mut cache);
        let mut tape = GradientTape::zeroed_like(&net);
        let mut input_grad = Vec::new();
        net.backward(&cache, &[1.0], &mut tape, &mut input_grad);
        assert_eq!(tape.layers[0].w[0], 0.0);
        assert_eq!(tape.layers[0].b[0], 0.0);
        assert_eq!(input_grad[0], 0.0);
        // The downstream layer still sees its (zero) activation gradient.
        assert_eq!(tape.layers[1].w[0], 0.0);
        assert_eq!(tape.layers[1].b[0], 1.0);
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let net = relu_net(2, 6, 3, Activation::Softmax, 9);
        let xs = [[0.1, 0.2], [-0.4, 0.9], [1.5, -1.5]];
        let mut summed = GradientTape::zeroed_like(&net);
        let mut cache = ForwardCache::for_net(&net);
        let mut input_grad = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            net.forward_cached(x, &mut cache);
            let (_, g) = cce_loss(cache.output(), i).unwrap();
            net.backward(&cache, &g, &mut summed, &mut input_grad);
        }
        let mut reduced = GradientTape::zeroed_like(&net);
        for (i, x) in xs.iter().enumerate() {
            let mut single = GradientTape::zeroed_like(&net);
            net.forward_cached(x, &mut cache);
            let (_, g) = cce_loss(cache.output(), i).unwrap();
            net.backward(&cache, &g, &mut single, &mut input_grad);
            reduced.add_assign(&single);
        }
        for (a, b) in summed.layers.iter().zip(&reduced.layers) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sgd_step_on_scalar_quadratic() {
        // theta = 1, lr = 0.1, loss = theta^2: one step lands on 0.8.
        let mut net = DenseNet::zeroed(1, &[LayerSpec::new(1, Activation::Linear)]).unwrap();
        net.layers[0].b = vec![1.0];
        let mut opt = OptimizerState::sgd(0.1);
        let mut tape = GradientTape::zeroed_like(&net);
        tape.layers[0].b[0] = 2.0 * net.layers[0].b[0];
        optimizer_step(&mut net, &tape, &mut opt);
        assert!((net.layers[0].b[0] - 0.8).abs() < 1e-15);
        // Zero gradient leaves parameters untouched.
        tape.zero();
        let before = net.clone();
        optimizer_step(&mut net, &tape, &mut opt);
        assert_eq!(net, before);
    }

    #[test]
    fn adam_trajectory_matches_scalar_reference() {
        // Same quadratic driven by an independent scalar implementation of
        // the update equations.
        let mut net = DenseNet::zeroed(1, &[LayerSpec::new(1, Activation::Linear)]).unwrap();
        net.layers[0].b = vec![1.0];
        let mut opt = OptimizerState::adam(0.1);
        let mut tape = GradientTape::zeroed_like(&net);

        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        for t in 1..=500 {
            let g = 2.0 * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);

            tape.layers[0].b[0] = 2.0 * net.layers[0].b[0];
            optimizer_step(&mut net, &tape, &mut opt);
            assert!(
                (net.layers[0].b[0] - theta).abs() < 1e-12,
                "diverged from reference at step {t}"
            );
        }
        assert!(theta.abs() < 1e-3, "reference did not converge: {theta}");
        assert!(net.layers[0].b[0].abs() < 1e-3);
    }

    #[test]
    fn adam_and_sgd_are_deterministic_over_a_training_loop() {
        let run = |seed: u64| {
            let mut net = relu_net(2, 8, 4, Activation::Softmax, seed);
            let mut opt = OptimizerState::adam(1e-2);
            let mut cache = ForwardCache::for_net(&net);
            let mut input_grad = Vec::new();
            for i in 0..50 {
                let x = [(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()];
                let mut tape = GradientTape::zeroed_like(&net);
                net.forward_cached(&x, &mut cache);
                let (_, g) = cce_loss(cache.output(), i % 4).unwrap();
                net.backward(&cache, &g, &mut tape, &mut input_grad);
                optimizer_step(&mut net, &tape, &mut opt);
            }
            checkpoint_to_string(&net)
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = relu_net(3, 16, 4, Activation::Softmax, 2024);
        let text = checkpoint_to_string(&net);
        let loaded = checkpoint_from_str(&text).unwrap();
        assert_eq!(net, loaded);
        // Bitwise equality of every parameter, and byte equality on re-save.
        for (a, b) in net.layers().iter().zip(loaded.layers()) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(text, checkpoint_to_string(&loaded));
    }

    #[test]
    fn checkpoint_rejects_malformed_text() {
        let net = relu_net(2, 4, 2, Activation::Linear, 8);
        let good = checkpoint_to_string(&net);
        assert!(checkpoint_from_str("densenet v2\n").is_err());
        assert!(checkpoint_from_str(&good.replace("layers 2", "layers 3")).is_err());
        assert!(checkpoint_from_str(&good.replace("relu", "gelu")).is_err());
        assert!(checkpoint_from_str(good.trim_end_matches("end\n")).is_err());
        // Truncated weight row: drop the last value of the first w line.
        let cut: String = good
            .lines()
            .map(|l| {
                if l.starts_with('w') {
                    l.rsplit_once(' ').map_or(l, |(head, _)| head).to_string()
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(checkpoint_from_str(&cut).is_err());
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let net = relu_net(1, 8, 8, Activation::Linear, 31);
        let dir = std::env::temp_dir().join("thzlink-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.txt");
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(net, loaded);
        std::fs::remove_file(&path).ok();
    }
}
