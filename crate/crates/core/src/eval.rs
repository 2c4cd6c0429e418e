//! Training loop, error metrics and the repeated-seed experiment runner.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, config_hash, Dataset, NormStats, OracleKind, Problem, DEFAULT_NOISE_DB};
use crate::error::{Error, Result};
use crate::models::{Family, Model, ModelSpec};
use crate::network::{mse_loss, Adam, MlpSpec, Mode, PlateauScheduler};
use crate::parallel::{self, Execution};
use crate::physics::{PhysicsConfig, R_MIN};
use crate::rng::{self, Stream};
use crate::split::{self, SplitSpec};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Fraction of the training side held out for model selection on
/// extrapolation splits.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Rows per chunk when predicting in parallel.
const PREDICT_CHUNK: usize = 512;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Mean mini-batch loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate in effect after each epoch's scheduler step.
    pub lr: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.train_loss.last().copied()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_loss[e])
    }
}

/// Mini-batches over `order`; a trailing single row joins the previous batch
/// so that batch normalization always sees at least two rows.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - 1 - out.last().map_or(0, |b| b.len());
        out.pop();
        out.push(&order[start..]);
    }
    out
}

/// Eval-mode predictions computed in row chunks.
pub fn predict(model: &Model, x: &Tensor, exec: Execution) -> Result<Vec<f64>> {
    if x.rows() <= PREDICT_CHUNK {
        return model.predict(x);
    }
    let chunks: Vec<Vec<usize>> = (0..x.rows())
        .collect::<Vec<_>>()
        .chunks(PREDICT_CHUNK)
        .map(<[usize]>::to_vec)
        .collect();
    let parts = parallel::map(exec, chunks, |idx| model.predict(&x.select_rows(&idx)));
    let mut out = Vec::with_capacity(x.rows());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn raw_mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Trains with Adam on shuffled mini-batches for `spec.max_epochs` epochs,
/// stepping the plateau scheduler on the validation loss, and returns the
/// parameters with the lowest validation loss.
pub fn train(model: Model, train_set: &Dataset, val_set: &Dataset, seed: u64) -> Result<(Model, History)> {
    train_with(model, train_set, val_set, seed, Execution::default())
}

pub fn train_with(
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    seed: u64,
    exec: Execution,
) -> Result<(Model, History)> {
    let spec: MlpSpec = model.spec.mlp.clone();
    if train_set.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if train_set.len() < 2 && spec.max_epochs > 0 {
        return Err(Error::contract("batch normalization needs at least 2 training rows"));
    }
    let mut history = History::default();
    if spec.max_epochs == 0 {
        return Ok((model, history));
    }

    let mut adam = Adam::new(model.net.params());
    let mut scheduler = PlateauScheduler::new(spec.learning_rate);
    let mut shuffle_rng = rng::stream(seed, Stream::Shuffle, 0);
    let mut dropout_rng = rng::stream(seed, Stream::Dropout, 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, crate::network::Mlp)> = None;
    let family = model.family();

    for epoch in 0..spec.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in batches(&order, spec.batch_size).into_iter().enumerate() {
            let diverged = |reason: String| Error::Divergence {
                epoch,
                batch: b,
                reason: format!("{family}: {reason}"),
            };
            let x = train_set.inputs().select_rows(idx);
            let y = Tensor::column(idx.iter().map(|&i| train_set.targets()[i]).collect())?;
            let tape = Tape::new();
            let bound = model.net.bind(&tape);
            let pred = model.forward(&tape, &bound, &x, Mode::Train(&mut dropout_rng))?;
            let loss = mse_loss(pred, tape.leaf(y))?;
            let lv = loss.value().item();
            if !lv.is_finite() {
                return Err(diverged(format!("loss is {lv}")));
            }
            let grads = tape.backward(loss);
            let g: Vec<Tensor> = bound.vars().iter().map(|v| grads.wrt(*v)).collect();
            adam.step(model.net.params_mut(), &g, scheduler.lr)
                .map_err(|e| diverged(e.to_string()))?;
            loss_sum += lv * idx.len() as f64;
        }
        history.train_loss.push(loss_sum / train_set.len() as f64);

        if val_set.is_empty() {
            history.val_loss.push(f64::NAN);
            history.lr.push(scheduler.lr);
            continue;
        }
        let val_pred = predict(&model, val_set.inputs(), exec)?;
        let val_loss = raw_mse(&val_pred, val_set.targets());
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                reason: format!("{family}: validation loss is {val_loss}"),
            });
        }
        history.val_loss.push(val_loss);
        history.lr.push(scheduler.step(val_loss));
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.net.clone()));
            history.best_epoch = Some(epoch);
        }
    }
    if let Some((_, net)) = best {
        model.net = net;
    }
    Ok((model, history))
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "metric needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean squared error after min-max normalizing both sides with `stats`.
pub fn mse_normalized(pred: &[f64], truth: &[f64], stats: &NormStats) -> Result<f64> {
    check_lengths(pred, truth)?;
    NormStats::new(stats.t_min, stats.t_max)?;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (stats.apply(t) - stats.apply(p)).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn rmse_normalized(pred: &[f64], truth: &[f64], stats: &NormStats) -> Result<f64> {
    Ok(mse_normalized(pred, truth, stats)?.sqrt())
}

/// Signed percentage `(truth - pred) / truth * 100` per point; `None` where
/// the truth is zero.
pub fn relative_error(pred: &[f64], truth: &[f64]) -> Result<Vec<Option<f64>>> {
    check_lengths(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (t != 0.0).then(|| (t - p) / t * 100.0))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Csv {
        csv: PathBuf,
    },
    Generated {
        n: usize,
        /// Size of the fixed Gramacy test set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_test: Option<usize>,
        /// Seed of the fixed Gramacy test set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_seed: Option<u64>,
        #[serde(default)]
        oracle: OracleKind,
    },
}

pub const DEFAULT_GRAMACY_TEST_SIZE: usize = 200;
pub const DEFAULT_GRAMACY_TEST_SEED: u64 = 20_220_601;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub families: Vec<Family>,
    pub mlp: MlpSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physics: Option<PhysicsConfig>,
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_repeats: Option<usize>,
    /// Measurement noise (dB) added to generated acoustic targets.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_DB
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let DataSource::Csv { csv } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Checks everything that can be checked before any training starts.
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("no model families requested".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if let Some(n) = self.n_repeats {
            if n != self.seeds.len() {
                return Err(Error::Config(format!("n_repeats {n} but {} seeds", self.seeds.len())));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        for &family in &self.families {
            ModelSpec::for_problem(family, self.problem, &self.mlp, self.physics.clone())?;
        }
        match (&self.split, self.problem) {
            (Some(_), p) if p.is_gramacy() => {
                return Err(Error::Config("Gramacy experiments use a fixed test set, not a split".into()))
            }
            (None, Problem::Acoustic) => return Err(Error::Config("acoustic experiments need a split".into())),
            _ => {}
        }
        if let Some(SplitSpec::Percentage { fraction, .. }) = self.split {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
            }
        }
        if let DataSource::Generated { n, .. } = self.data {
            if n == 0 {
                return Err(Error::Config("data.n must be positive".into()));
            }
        }
        Ok(())
    }

    fn validation_note(&self) -> &'static str {
        match &self.split {
            Some(s) if s.is_extrapolation() => {
                "validation: seeded 10% carve-out of the training side (removed from training)"
            }
            _ => "validation: the test set doubles as the validation set for LR scheduling and checkpoint selection",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub family: Family,
    #[serde(flatten)]
    pub status: RunStatus,
    pub n_params: usize,
    pub final_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub test_mse_raw: Option<f64>,
    pub test_mse_norm: Option<f64>,
    pub test_rmse_norm: Option<f64>,
    pub excluded_points: usize,
    /// Per test point; `null` where the truth is zero.
    pub relative_error: Vec<Option<f64>>,
}

impl ModelRun {
    fn failed(family: Family, message: String) -> Self {
        Self {
            family,
            status: RunStatus::Failed { message },
            n_params: 0,
            final_train_loss: None,
            best_val_loss: None,
            best_epoch: None,
            test_mse_raw: None,
            test_mse_norm: None,
            test_rmse_norm: None,
            excluded_points: 0,
            relative_error: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    /// Size of the split's training side.
    pub train_size: usize,
    /// Rows actually fitted: the training side minus any validation carve-out.
    pub fit_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub norm: NormStats,
    pub test_inputs: Vec<Vec<f64>>,
    pub runs: Vec<ModelRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: Family,
    pub completed_runs: usize,
    pub failed_runs: usize,
    pub mse_norm_mean: Option<f64>,
    pub mse_norm_median: Option<f64>,
    pub rmse_norm_mean: Option<f64>,
    pub rmse_norm_median: Option<f64>,
    pub mse_raw_mean: Option<f64>,
    pub mse_raw_median: Option<f64>,
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub report_version: u32,
    pub config_hash: String,
    pub problem: Problem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    pub validation: String,
    pub families: Vec<Family>,
    pub seeds: Vec<SeedRecord>,
    pub summary: Vec<FamilySummary>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_for(&self, family: Family) -> Option<&FamilySummary> {
        self.summary.iter().find(|s| s.family == family)
    }

    pub fn all_ok(&self) -> bool {
        self.seeds.iter().all(|s| s.runs.iter().all(ModelRun::is_ok))
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

struct Prepared {
    seed: u64,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    train_side: usize,
    norm_source: Vec<f64>,
    radius: Option<f64>,
}

fn prepare_seed(cfg: &ExperimentConfig, seed: u64, loaded: Option<&Dataset>, exec: Execution) -> Result<Prepared> {
    if cfg.problem.is_gramacy() {
        let (n, n_test, test_seed) = match cfg.data {
            DataSource::Generated { n, n_test, test_seed, .. } => (
                n,
                n_test.unwrap_or(DEFAULT_GRAMACY_TEST_SIZE),
                test_seed.unwrap_or(DEFAULT_GRAMACY_TEST_SEED),
            ),
            DataSource::Csv { .. } => {
                return Err(Error::Config("Gramacy experiments generate their own data".into()));
            }
        };
        let train = data::gen_gramacy(cfg.problem, n, rng::derive_seed(seed, Stream::Sampling, 0))?;
        let test = data::gen_gramacy(cfg.problem, n_test, test_seed)?;
        return Ok(Prepared {
            seed,
            norm_source: train.targets().to_vec(),
            train_side: train.len(),
            val: test.clone(),
            train,
            test,
            radius: None,
        });
    }

    let full = match (loaded, &cfg.data) {
        (Some(d), _) => d.clone(),
        (None, DataSource::Generated { n, oracle, .. }) => data::gen_acoustic_with(
            *n,
            rng::derive_seed(seed, Stream::Sampling, 0),
            &oracle.build(),
            cfg.noise,
            exec,
        )?,
        (None, DataSource::Csv { .. }) => unreachable!("CSV data is loaded up front"),
    };
    if let Some(physics) = &cfg.physics {
        for r in 0..full.len() {
            let p = full.point(r);
            if physics.min_source_distance([p[0], p[1], p[2]]) < R_MIN {
                return Err(Error::Config(format!(
                    "data row {r} lies within {R_MIN} m of a partial-physics source"
                )));
            }
        }
    }
    let spec = cfg.split.as_ref().expect("validated");
    let s = spec.apply(&full, rng::derive_seed(seed, Stream::Split, 0))?;
    let (train_idx, val_idx) = if spec.is_extrapolation() {
        split::carve_validation(&s.train, VALIDATION_FRACTION, rng::derive_seed(seed, Stream::Validation, 0))
    } else {
        (s.train.clone(), s.test.clone())
    };
    Ok(Prepared {
        seed,
        norm_source: s.train.iter().map(|&i| full.targets()[i]).collect(),
        train_side: s.train.len(),
        train: full.select(&train_idx),
        val: full.select(&val_idx),
        test: full.select(&s.test),
        radius: s.radius,
    })
}

fn run_one(cfg: &ExperimentConfig, prep: &Prepared, family: Family, exec: Execution) -> Result<(Model, ModelRun)> {
    let spec = ModelSpec::for_problem(family, cfg.problem, &cfg.mlp, cfg.physics.clone())?;
    let model = Model::init(spec, rng::derive_seed(prep.seed, Stream::Init, family.index()))?;
    let (model, history) = train_with(
        model,
        &prep.train,
        &prep.val,
        rng::derive_seed(prep.seed, Stream::Shuffle, family.index()),
        exec,
    )?;
    let pred = predict(&model, prep.test.inputs(), exec)?;
    let truth = prep.test.targets();
    let stats = NormStats::fit(&prep.norm_source)?;
    let re = relative_error(&pred, truth)?;
    let mse = mse_normalized(&pred, truth, &stats)?;
    let run = ModelRun {
        family,
        status: RunStatus::Ok,
        n_params: model.n_params(),
        final_train_loss: history.final_train_loss(),
        best_val_loss: history.best_val_loss(),
        best_epoch: history.best_epoch,
        test_mse_raw: Some(raw_mse(&pred, truth)),
        test_mse_norm: Some(mse),
        test_rmse_norm: Some(mse.sqrt()),
        excluded_points: re.iter().filter(|r| r.is_none()).count(),
        relative_error: re,
    };
    Ok((model, run))
}

fn load_data(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    match &cfg.data {
        DataSource::Csv { csv } if !cfg.problem.is_gramacy() => {
            let d = data::read_csv(csv)?;
            if d.problem() != cfg.problem {
                return Err(Error::Config(format!("{} holds {} data", csv.display(), d.problem())));
            }
            Ok(Some(d))
        }
        _ => Ok(None),
    }
}

/// Trains one family on one seed's data, exactly as the experiment runner
/// would, and returns the fitted model with its test metrics.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, family: Family, exec: Execution) -> Result<(Model, ModelRun)> {
    cfg.validate()?;
    let loaded = load_data(cfg)?;
    let prep = prepare_seed(cfg, seed, loaded.as_ref(), exec)?;
    run_one(cfg, &prep, family, exec)
}

/// Runs every requested family on every seed and aggregates the metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, Execution::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport> {
    cfg.validate()?;
    let loaded = load_data(cfg)?;
    let prepared = parallel::map(exec, cfg.seeds.clone(), |seed| {
        prepare_seed(cfg, seed, loaded.as_ref(), exec)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let tasks: Vec<(usize, Family)> = (0..prepared.len())
        .flat_map(|s| cfg.families.iter().map(move |&f| (s, f)))
        .collect();
    let runs = parallel::map(exec, tasks.clone(), |(s, family)| {
        run_one(cfg, &prepared[s], family, exec)
            .map(|(_, run)| run)
            .unwrap_or_else(|e| ModelRun::failed(family, e.to_string()))
    });

    let mut seeds: Vec<SeedRecord> = prepared
        .iter()
        .map(|p| {
            Ok(SeedRecord {
                seed: p.seed,
                train_size: p.train_side,
                fit_size: p.train.len(),
                val_size: p.val.len(),
                test_size: p.test.len(),
                radius: p.radius,
                norm: NormStats::fit(&p.norm_source)?,
                test_inputs: (0..p.test.len()).map(|r| p.test.point(r).to_vec()).collect(),
                runs: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for ((s, _), run) in tasks.into_iter().zip(runs) {
        seeds[s].runs.push(run);
    }

    let summary = cfg
        .families
        .iter()
        .map(|&family| {
            let ok: Vec<&ModelRun> = seeds
                .iter()
                .flat_map(|s| s.runs.iter())
                .filter(|r| r.family == family && r.is_ok())
                .collect();
            let failed = seeds.iter().flat_map(|s| s.runs.iter()).filter(|r| r.family == family).count() - ok.len();
            let collect = |f: fn(&ModelRun) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let mse = collect(|r| r.test_mse_norm);
            let rmse = collect(|r| r.test_rmse_norm);
            let raw = collect(|r| r.test_mse_raw);
            FamilySummary {
                family,
                completed_runs: ok.len(),
                failed_runs: failed,
                mse_norm_mean: mean(&mse),
                mse_norm_median: median(&mse),
                rmse_norm_mean: mean(&rmse),
                rmse_norm_median: median(&rmse),
                mse_raw_mean: mean(&raw),
                mse_raw_median: median(&raw),
            }
        })
        .collect();

    Ok(ExperimentReport {
        report_version: REPORT_VERSION,
        config_hash: cfg.hash(),
        problem: cfg.problem,
        split: cfg.split.clone(),
        validation: cfg.validation_note().to_string(),
        families: cfg.families.clone(),
        seeds,
        summary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Yz,
    Xz,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::Yz => "yz",
            Plane::Xz => "xz",
        }
    }

    fn axes(self) -> (usize, usize, &'static str, &'static str) {
        match self {
            Plane::Yz => (1, 2, "y", "z"),
            Plane::Xz => (0, 2, "x", "z"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterRow {
    pub family: Family,
    pub seed: u64,
    pub coord1: f64,
    pub coord2: f64,
    pub relative_error: f64,
}

/// One row per test point with a defined relative error, projected onto
/// `plane`.
pub fn emit_scatter(report: &ExperimentReport, plane: Plane) -> Result<Vec<ScatterRow>> {
    if report.problem != Problem::Acoustic {
        return Err(Error::contract("scatter data needs an acoustic report"));
    }
    let (a, b, _, _) = plane.axes();
    let mut rows = Vec::new();
    for s in &report.seeds {
        for run in s.runs.iter().filter(|r| r.is_ok()) {
            for (p, re) in s.test_inputs.iter().zip(&run.relative_error) {
                if let Some(re) = re {
                    rows.push(ScatterRow {
                        family: run.family,
                        seed: s.seed,
                        coord1: p[a],
                        coord2: p[b],
                        relative_error: *re,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn scatter_csv(rows: &[ScatterRow], plane: Plane) -> Result<Vec<u8>> {
    let (_, _, c1, c2) = plane.axes();
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["family", "seed", c1, c2, "re"])?;
        for r in rows {
            w.write_record([
                r.family.to_string(),
                r.seed.to_string(),
                format!("{:.16e}", r.coord1),
                format!("{:.16e}", r.coord2),
                format!("{:.16e}", r.relative_error),
            ])?;
        }
        w.flush()?;
    }
    Ok(out)
}
