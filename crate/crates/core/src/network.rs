//! Multilayer perceptron building blocks, Adam and a plateau LR schedule.
//!
//! Layer order follows the transfer network used throughout the crate:
//! input batch-normalization, an input projection, `n_hidden_layers` blocks
//! of `linear -> dropout -> relu`, and a linear output projection.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const NORM_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

/// Architecture and optimisation settings of one MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Derived from the model family and problem when omitted.
    #[serde(default)]
    pub n_inputs: usize,
    #[serde(default)]
    pub n_outputs: usize,
    pub n_hidden_layers: usize,
    pub nodes_per_layer: usize,
    pub dropout_p: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl MlpSpec {
    /// Transfer-network settings for the acoustic problem: 3 inputs,
    /// 4 amplitudes out, 3 hidden layers of 50, lr 1e-4, batch 25, 100 epochs.
    pub fn acoustic() -> Self {
        Self {
            n_inputs: 3,
            n_outputs: 4,
            n_hidden_layers: 3,
            nodes_per_layer: 50,
            dropout_p: 0.1,
            learning_rate: 1e-4,
            batch_size: 25,
            max_epochs: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_inputs", self.n_inputs),
            ("n_outputs", self.n_outputs),
            ("nodes_per_layer", self.nodes_per_layer),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn with_io(&self, n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            n_inputs,
            n_outputs,
            ..self.clone()
        }
    }
}

/// Whether a forward pass is training (batch statistics, dropout) or
/// evaluation (running statistics, no dropout).
pub enum Mode<'r> {
    Train(&'r mut dyn RngCore),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn xavier(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = xavier_bound(n_in, n_out);
        let w = (0..n_in * n_out).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            weight: Tensor::from_raw(n_out, n_in, w),
            bias: Tensor::zeros(1, n_out),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(n_out, n_in),
            bias: Tensor::zeros(1, n_out),
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Batch normalization over input features.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl InputNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::ones(1, features),
            beta: Tensor::zeros(1, features),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: NORM_MOMENTUM,
            eps: NORM_EPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub norm: InputNorm,
    pub linear_in: Linear,
    pub hidden: Vec<Linear>,
    pub linear_out: Linear,
}

/// Learnable parameters of an [`Mlp`] registered on one tape, in
/// [`Mlp::param_names`] order.
pub struct BoundMlp<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundMlp<'t> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl Mlp {
    /// Deterministic initialization from a seed.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = spec.nodes_per_layer;
        Self {
            spec: spec.clone(),
            norm: InputNorm::new(spec.n_inputs),
            linear_in: Linear::xavier(spec.n_inputs, h, &mut rng),
            hidden: (0..spec.n_hidden_layers)
                .map(|_| Linear::xavier(h, h, &mut rng))
                .collect(),
            linear_out: Linear::xavier(h, spec.n_outputs, &mut rng),
        }
    }

    /// All weights and biases zero; normalization at identity.
    pub fn zeros(spec: &MlpSpec) -> Self {
        let h = spec.nodes_per_layer;
        Self {
            spec: spec.clone(),
            norm: InputNorm::new(spec.n_inputs),
            linear_in: Linear::zeros(spec.n_inputs, h),
            hidden: (0..spec.n_hidden_layers).map(|_| Linear::zeros(h, h)).collect(),
            linear_out: Linear::zeros(h, spec.n_outputs),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "norm.gamma".to_string(),
            "norm.beta".to_string(),
            "linear_in.weight".to_string(),
            "linear_in.bias".to_string(),
        ];
        for i in 0..self.hidden.len() {
            names.push(format!("hidden.{i}.weight"));
            names.push(format!("hidden.{i}.bias"));
        }
        names.push("linear_out.weight".to_string());
        names.push("linear_out.bias".to_string());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.norm.gamma,
            &self.norm.beta,
            &self.linear_in.weight,
            &self.linear_in.bias,
        ];
        for l in &self.hidden {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.linear_out.weight);
        out.push(&self.linear_out.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.norm.gamma,
            &mut self.norm.beta,
            &mut self.linear_in.weight,
            &mut self.linear_in.bias,
        ];
        for l in &mut self.hidden {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.linear_out.weight);
        out.push(&mut self.linear_out.bias);
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            vars: self.params().into_iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Runs the network on `x` (`batch x n_inputs`).
    ///
    /// In training mode the input statistics of this batch update the
    /// running estimates, and dropout masks are drawn from the mode's RNG.
    pub fn forward<'t>(&mut self, bound: &BoundMlp<'t>, x: Var<'t>, mode: Mode<'_>) -> Result<Var<'t>> {
        let (batch, width) = x.shape();
        if width != self.spec.n_inputs {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {width}",
                self.spec.n_inputs
            )));
        }
        if batch == 0 {
            return Err(Error::contract("empty batch"));
        }
        if mode.is_train() && batch < 2 {
            return Err(Error::contract(
                "batch normalization needs at least 2 rows in training mode",
            ));
        }
        let tape = x.tape();
        let v = bound.vars();
        let mut idx = 0;
        let mut next = || {
            let var = v[idx];
            idx += 1;
            var
        };
        let (gamma, beta) = (next(), next());

        let ones_col = tape.leaf(Tensor::ones(batch, 1));
        let normed = match mode {
            Mode::Train(_) => {
                let avg = tape.leaf(Tensor::full(1, batch, 1.0 / batch as f64));
                let mean = avg.matmul(x);
                let centered = x.add_row(mean.neg());
                let var = avg.matmul(centered.powf(2.0)?);
                let inv_std = var.shift(self.norm.eps).powf(-0.5)?;
                self.update_running(&mean.value(), &var.value(), batch);
                centered.mul(ones_col.matmul(inv_std))
            }
            Mode::Eval => {
                let neg_mean = Tensor::from_raw(1, width, self.norm.running_mean.iter().map(|m| -m).collect());
                let inv_std = Tensor::from_raw(
                    1,
                    width,
                    self.norm
                        .running_var
                        .iter()
                        .map(|v| 1.0 / (v + self.norm.eps).sqrt())
                        .collect(),
                );
                x.add_row(tape.leaf(neg_mean))
                    .mul(ones_col.matmul(tape.leaf(inv_std)))
            }
        };
        let scaled = normed.mul(ones_col.matmul(gamma)).add_row(beta);

        let (w, b) = (next(), next());
        let mut out = linear(scaled, w, b);
        let p = self.spec.dropout_p;
        let mut rng = match mode {
            Mode::Train(rng) => Some(rng),
            Mode::Eval => None,
        };
        for _ in 0..self.hidden.len() {
            let (w, b) = (next(), next());
            let mut z = linear(out, w, b);
            if let Some(rng) = rng.as_deref_mut() {
                if p > 0.0 {
                    let mask = dropout_mask(z.shape(), p, rng);
                    z = z.mul(tape.leaf(mask));
                }
            }
            out = z.relu();
        }
        let (w, b) = (next(), next());
        Ok(linear(out, w, b))
    }

    fn update_running(&mut self, mean: &Tensor, var: &Tensor, batch: usize) {
        let m = self.norm.momentum;
        let correction = batch as f64 / (batch as f64 - 1.0);
        for (i, (rm, rv)) in self
            .norm
            .running_mean
            .iter_mut()
            .zip(self.norm.running_var.iter_mut())
            .enumerate()
        {
            *rm = (1.0 - m) * *rm + m * mean.data()[i];
            *rv = (1.0 - m) * *rv + m * var.data()[i] * correction;
        }
    }

    /// Eval-mode output for a constant batch.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        // eval mode never touches running statistics
        let mut scratch = self.clone();
        Ok(scratch.forward(&bound, tape.leaf(x.clone()), Mode::Eval)?.value())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params: Vec<NamedArray> = self
            .param_names()
            .into_iter()
            .zip(self.params())
            .map(|(name, t)| NamedArray {
                name,
                rows: t.rows(),
                cols: t.cols(),
                values: t.data().to_vec(),
            })
            .collect();
        let d = self.spec.n_inputs;
        params.push(NamedArray {
            name: "norm.running_mean".into(),
            rows: 1,
            cols: d,
            values: self.norm.running_mean.clone(),
        });
        params.push(NamedArray {
            name: "norm.running_var".into(),
            rows: 1,
            cols: d,
            values: self.norm.running_var.clone(),
        });
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.spec.validate()?;
        let mut mlp = Mlp::zeros(&ck.spec);
        let lookup = |name: &str| {
            ck.params
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{name}`")))
        };
        for (name, slot) in mlp.param_names().into_iter().zip(mlp.params_mut()) {
            let arr = lookup(&name)?;
            let t = Tensor::new(arr.rows, arr.cols, arr.values.clone())?;
            if t.shape() != slot.shape() {
                return Err(Error::Config(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        let d = ck.spec.n_inputs;
        for (name, dst) in [
            ("norm.running_mean", &mut mlp.norm.running_mean),
            ("norm.running_var", &mut mlp.norm.running_var),
        ] {
            let arr = lookup(name)?;
            if arr.values.len() != d {
                return Err(Error::Config(format!("`{name}` has {} values, expected {d}", arr.values.len())));
            }
            *dst = arr.values.clone();
        }
        Ok(mlp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string_pretty(&self.to_checkpoint())?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

fn linear<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Var<'t> {
    x.matmul_t(weight).add_row(bias)
}

/// Inverted-dropout mask: `0` with probability `p`, otherwise `1/(1-p)`.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut dyn RngCore) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let data = (0..shape.0 * shape.1)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::from_raw(shape.0, shape.1, data)
}

/// Mean of squared differences.
pub fn mse_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::contract(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok((pred - target).powf(2.0)?.mean())
}

pub const CHECKPOINT_FORMAT: &str = "optma-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: MlpSpec,
    pub params: Vec<NamedArray>,
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. A non-finite gradient rejects the whole step and
    /// leaves parameters and moments untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::contract(format!("gradient {i} shape mismatch")));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                let gj = g.data()[j];
                md[j] = self.beta1 * md[j] + (1.0 - self.beta1) * gj;
                vd[j] = self.beta2 * vd[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` consecutive calls without an
/// improvement larger than `threshold`, never going below `min_lr`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad_calls: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            factor: 0.5,
            patience: 10,
            threshold: 1e-6,
            min_lr: 1e-7,
            best: f64::INFINITY,
            bad_calls: 0,
        }
    }

    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad_calls = 0;
        } else {
            self.bad_calls += 1;
            if self.bad_calls >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_calls = 0;
            }
        }
        self.lr
    }
}
