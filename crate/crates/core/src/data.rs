//! Benchmark datasets, CSV persistence and min-max normalization.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::parallel::{self, Execution};
use crate::physics::{self, PhysicsConfig, Source, R_MIN};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Lower and upper bounds of the Gramacy-Lee input interval.
pub const GRAMACY_DOMAIN: (f64, f64) = (0.5, 2.5);

/// Half-widths of the acoustic sampling box, metres.
pub const SCAN_HALF_WIDTH: f64 = 1.15;
pub const SCAN_HALF_HEIGHT: f64 = 0.6;

pub const DEFAULT_NOISE_DB: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Fp1,
    Fp2,
    Acoustic,
}

impl Problem {
    pub fn is_gramacy(self) -> bool {
        !matches!(self, Problem::Acoustic)
    }

    pub fn input_width(self) -> usize {
        match self {
            Problem::Acoustic => 3,
            _ => 1,
        }
    }

    pub fn csv_header(self) -> &'static [&'static str] {
        match self {
            Problem::Acoustic => &["x", "y", "z", "spl"],
            _ => &["x", "target"],
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::Fp1 => "fp1",
            Problem::Fp2 => "fp2",
            Problem::Acoustic => "acoustic",
        })
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp1" => Ok(Problem::Fp1),
            "fp2" => Ok(Problem::Fp2),
            "acoustic" => Ok(Problem::Acoustic),
            other => Err(Error::Config(format!("unknown problem `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub problem: Problem,
    pub seed: u64,
    pub config_hash: String,
}

/// Labelled samples. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    targets: Vec<f64>,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Vec<f64>, meta: DatasetMeta) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::contract(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if inputs.cols() != meta.problem.input_width() {
            return Err(Error::contract(format!(
                "{} problem needs {} input columns, got {}",
                meta.problem,
                meta.problem.input_width(),
                inputs.cols()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("dataset targets".into()));
        }
        Ok(Self { inputs, targets, meta })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_tensor(&self) -> Tensor {
        Tensor::from_raw(self.len(), 1, self.targets.clone())
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn problem(&self) -> Problem {
        self.meta.problem
    }

    pub fn point(&self, row: usize) -> &[f64] {
        self.inputs.row_slice(row)
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Hex SHA-256 prefix of a value's canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Uniform samples of a Gramacy-Lee full-physics function on `[0.5, 2.5]`.
pub fn gen_gramacy(problem: Problem, n: usize, seed: u64) -> Result<Dataset> {
    let oracle: fn(f64) -> Result<f64> = match problem {
        Problem::Fp1 => physics::fp1_oracle,
        Problem::Fp2 => physics::fp2_oracle,
        Problem::Acoustic => return Err(Error::contract("gen_gramacy needs fp1 or fp2")),
    };
    if n == 0 {
        return Err(Error::contract("dataset size must be positive"));
    }
    let mut rng = rng::stream(seed, Stream::Sampling, 0);
    let (lo, hi) = GRAMACY_DOMAIN;
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    let targets = xs.iter().map(|&x| oracle(x)).collect::<Result<Vec<_>>>()?;
    let hash = config_hash(&(problem, n, seed));
    Dataset::new(
        Tensor::column(xs)?,
        targets,
        DatasetMeta {
            problem,
            seed,
            config_hash: hash,
        },
    )
}

/// Ground-truth acoustic field: a monopole superposition with fixed
/// amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullPhysicsOracle {
    pub physics: PhysicsConfig,
    pub amplitudes: Vec<f64>,
}

impl FullPhysicsOracle {
    pub fn new(physics: PhysicsConfig, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != physics.n_sources() {
            return Err(Error::Config(format!(
                "{} amplitudes for {} sources",
                amplitudes.len(),
                physics.n_sources()
            )));
        }
        Ok(Self { physics, amplitudes })
    }

    /// The partial-physics field itself, with every amplitude equal to one.
    pub fn partial() -> Self {
        let physics = PhysicsConfig::quadcopter();
        let n = physics.n_sources();
        Self::new(physics, vec![1.0; n]).expect("valid")
    }

    /// SPL at each row of `points` (`n x 3`).
    pub fn spl(&self, points: &Tensor) -> Result<Vec<f64>> {
        let n = points.rows();
        let amps: Vec<f64> = (0..n).flat_map(|_| self.amplitudes.iter().copied()).collect();
        let u = Tensor::new(n, self.amplitudes.len(), amps)?;
        physics::monopole_spl_values(points, &u, &self.physics)
    }

    pub fn spl_at(&self, point: [f64; 3]) -> Result<f64> {
        Ok(self.spl(&Tensor::row(point.to_vec())?)?[0])
    }
}

/// Eight monopoles: the four quadcopter sources (U = 1, 175 Hz, phase 45)
/// plus one source 8 cm below each with U = 0.6, 350 Hz and zero phase.
/// Mirrors x-y symmetry while radiating more strongly downwards.
pub fn default_full_physics_oracle() -> FullPhysicsOracle {
    let upper = PhysicsConfig::quadcopter();
    let mut sources: Vec<Source> = upper.sources().to_vec();
    for s in upper.sources() {
        sources.push(Source {
            x: s.x,
            y: s.y,
            z: -0.08,
            freq_hz: 350.0,
            phase: 0.0,
        });
    }
    let physics = PhysicsConfig::new(sources, upper.sound_speed(), upper.p_ref()).expect("valid");
    FullPhysicsOracle::new(physics, vec![1.0, 1.0, 1.0, 1.0, 0.6, 0.6, 0.6, 0.6]).expect("valid")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// [`default_full_physics_oracle`]
    #[default]
    Default,
    /// [`FullPhysicsOracle::partial`]
    Partial,
}

impl OracleKind {
    pub fn build(self) -> FullPhysicsOracle {
        match self {
            OracleKind::Default => default_full_physics_oracle(),
            OracleKind::Partial => FullPhysicsOracle::partial(),
        }
    }
}

/// Synthetic acoustic measurements: points uniform in the scan box
/// `[-1.15, 1.15]² x [-0.6, 0.6]` m, at least `R_MIN` from every oracle
/// source, labelled with oracle SPL plus Gaussian noise of `noise_db`.
pub fn gen_acoustic(n: usize, seed: u64, oracle: &FullPhysicsOracle, noise_db: f64) -> Result<Dataset> {
    gen_acoustic_with(n, seed, oracle, noise_db, Execution::default())
}

pub fn gen_acoustic_with(
    n: usize,
    seed: u64,
    oracle: &FullPhysicsOracle,
    noise_db: f64,
    exec: Execution,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract("dataset size must be positive"));
    }
    if !(noise_db >= 0.0 && noise_db.is_finite()) {
        return Err(Error::Config(format!("noise_db must be non-negative, got {noise_db}")));
    }
    let mut rng = rng::stream(seed, Stream::Sampling, 0);
    let max_attempts = 2 * n + 64;
    let mut points = Vec::with_capacity(n * 3);
    let mut attempts = 0;
    while points.len() < n * 3 {
        if attempts >= max_attempts {
            return Err(Error::Config(format!(
                "acoustic sampler rejected more than half of {attempts} candidate points"
            )));
        }
        attempts += 1;
        let p = [
            rng.gen_range(-SCAN_HALF_WIDTH..=SCAN_HALF_WIDTH),
            rng.gen_range(-SCAN_HALF_WIDTH..=SCAN_HALF_WIDTH),
            rng.gen_range(-SCAN_HALF_HEIGHT..=SCAN_HALF_HEIGHT),
        ];
        if oracle.physics.min_source_distance(p) >= R_MIN {
            points.extend_from_slice(&p);
        }
    }
    if attempts - n > attempts / 2 {
        return Err(Error::Config("acoustic sampler rejection rate above 50%".into()));
    }
    let inputs = Tensor::new(n, 3, points)?;

    const CHUNK: usize = 256;
    let chunks: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(CHUNK)
        .map(|c| c.to_vec())
        .collect();
    let levels = parallel::map(exec, chunks, |idx| oracle.spl(&inputs.select_rows(&idx)));
    let mut targets = Vec::with_capacity(n);
    for chunk in levels {
        targets.extend(chunk?);
    }
    if noise_db > 0.0 {
        let mut noise_rng = rng::stream(seed, Stream::Noise, 0);
        let normal = Normal::new(0.0, noise_db).expect("valid sigma");
        for t in &mut targets {
            *t += normal.sample(&mut noise_rng);
        }
    }
    let hash = config_hash(&(Problem::Acoustic, n, seed, oracle, noise_db));
    Dataset::new(
        inputs,
        targets,
        DatasetMeta {
            problem: Problem::Acoustic,
            seed,
            config_hash: hash,
        },
    )
}

/// Dataset generator settings as they appear in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub problem: Problem,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_db: f64,
    #[serde(default)]
    pub oracle: OracleKind,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_DB
}

impl GeneratorConfig {
    pub fn generate(&self) -> Result<Dataset> {
        match self.problem {
            Problem::Acoustic => gen_acoustic(self.n, self.seed, &self.oracle.build(), self.noise_db),
            p => gen_gramacy(p, self.n, self.seed),
        }
    }
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `x,y,z,spl` or `x,target` CSV preceded by a `#` metadata line.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &csv_bytes(dataset)?)
}

pub fn csv_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let meta = dataset.meta();
    let mut out = format!(
        "# problem={} seed={} config_hash={}\n",
        meta.problem, meta.seed, meta.config_hash
    )
    .into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(dataset.problem().csv_header())?;
        for r in 0..dataset.len() {
            let mut rec: Vec<String> = dataset.point(r).iter().map(|&v| fmt_real(v)).collect();
            rec.push(fmt_real(dataset.targets()[r]));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut meta: Option<DatasetMeta> = None;
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.strip_prefix('#') {
            meta = parse_meta(rest);
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            message: "empty file".into(),
        });
    }
    let problem = match meta.as_ref().map(|m| m.problem) {
        Some(p) => p,
        None if header.len() == 4 => Problem::Acoustic,
        None => Problem::Fp1,
    };
    let expected = problem.csv_header();
    if header != expected {
        return Err(Error::Header {
            expected: expected.join(","),
            found: header.join(","),
        });
    }
    let width = expected.len() - 1;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value `{field}`"),
                });
            }
            if i < width {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let meta = meta.unwrap_or(DatasetMeta {
        problem,
        seed: 0,
        config_hash: String::new(),
    });
    Dataset::new(Tensor::new(targets.len(), width, inputs)?, targets, meta)
}

fn parse_meta(line: &str) -> Option<DatasetMeta> {
    let mut problem = None;
    let mut seed = None;
    let mut hash = None;
    for kv in line.split_whitespace() {
        let (k, v) = kv.split_once('=')?;
        match k {
            "problem" => problem = v.parse().ok(),
            "seed" => seed = v.parse().ok(),
            "config_hash" => hash = Some(v.to_string()),
            _ => {}
        }
    }
    Some(DatasetMeta {
        problem: problem?,
        seed: seed?,
        config_hash: hash?,
    })
}

/// Min-max range of a reference set of targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub t_min: f64,
    pub t_max: f64,
}

impl NormStats {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("cannot fit normalization on no values"));
        }
        let t_min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let t_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(t_min, t_max)
    }

    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_max > t_min) {
            return Err(Error::DegenerateRange(t_min));
        }
        Ok(Self { t_min, t_max })
    }

    /// Maps `t_min` to 0 and `t_max` to 1; values outside are not clipped.
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.t_min) / (self.t_max - self.t_min)
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gramacy_rows_in_domain() {
        let d = gen_gramacy(Problem::Fp1, 200, 4).unwrap();
        assert_eq!(d.len(), 200);
        for r in 0..d.len() {
            let x = d.point(r)[0];
            assert!((0.5..=2.5).contains(&x));
            assert_eq!(d.targets()[r], physics::fp1_oracle(x).unwrap());
        }
        assert_eq!(d, gen_gramacy(Problem::Fp1, 200, 4).unwrap());
        assert_ne!(d, gen_gramacy(Problem::Fp1, 200, 5).unwrap());
    }

    #[test]
    fn fp2_targets_follow_oracle() {
        let d = gen_gramacy(Problem::Fp2, 50, 1).unwrap();
        for r in 0..d.len() {
            assert_eq!(d.targets()[r], physics::fp2_oracle(d.point(r)[0]).unwrap());
        }
    }

    #[test]
    fn acoustic_respects_min_distance() {
        let oracle = default_full_physics_oracle();
        let d = gen_acoustic(400, 3, &oracle, 0.25).unwrap();
        assert_eq!(d.len(), 400);
        for r in 0..d.len() {
            let p = d.point(r);
            assert!(oracle.physics.min_source_distance([p[0], p[1], p[2]]) >= R_MIN);
            assert!(p[0].abs() <= SCAN_HALF_WIDTH && p[1].abs() <= SCAN_HALF_WIDTH);
            assert!(p[2].abs() <= SCAN_HALF_HEIGHT);
        }
    }

    #[test]
    fn noiseless_targets_equal_oracle() {
        let oracle = default_full_physics_oracle();
        let d = gen_acoustic(300, 8, &oracle, 0.0).unwrap();
        let direct = oracle.spl(d.inputs()).unwrap();
        for (a, b) in d.targets().iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn sequential_and_parallel_generation_agree() {
        let oracle = default_full_physics_oracle();
        let a = gen_acoustic_with(700, 2, &oracle, 0.25, Execution::Sequential).unwrap();
        let b = gen_acoustic_with(700, 2, &oracle, 0.25, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_radiates_downwards() {
        let oracle = default_full_physics_oracle();
        assert!(oracle.spl_at([0.0, 0.0, -0.4]).unwrap() > oracle.spl_at([0.0, 0.0, 0.4]).unwrap());
    }

    #[test]
    fn oracle_has_half_turn_symmetry() {
        let oracle = default_full_physics_oracle();
        let mut rng = rng::stream(99, Stream::Sampling, 0);
        for _ in 0..100 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)];
            if oracle.physics.min_source_distance(p) < R_MIN {
                continue;
            }
            let a = oracle.spl_at(p).unwrap();
            let b = oracle.spl_at([-p[0], -p[1], p[2]]).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b} at {p:?}");
        }
    }

    #[test]
    fn oracle_upper_half_is_partial_physics() {
        let full = default_full_physics_oracle();
        let upper = FullPhysicsOracle::new(full.physics.subset(&[0, 1, 2, 3]).unwrap(), full.amplitudes[..4].to_vec()).unwrap();
        assert_eq!(upper, FullPhysicsOracle::partial());
    }

    #[test]
    fn csv_round_trip() {
        let oracle = default_full_physics_oracle();
        let d = gen_acoustic(1728, 11, &oracle, 0.25).unwrap();
        let text = String::from_utf8(csv_bytes(&d).unwrap()).unwrap();
        assert!(text.lines().nth(1).unwrap() == "x,y,z,spl");
        assert_eq!(parse_csv(&text).unwrap(), d);

        let g = gen_gramacy(Problem::Fp2, 20, 1).unwrap();
        let text = String::from_utf8(csv_bytes(&g).unwrap()).unwrap();
        assert_eq!(parse_csv(&text).unwrap(), g);
    }

    #[test]
    fn csv_errors() {
        let err = parse_csv("# problem=acoustic seed=1 config_hash=ab\nx,y,spl\n1,2,3\n").unwrap_err();
        match err {
            Error::Header { expected, .. } => assert_eq!(expected, "x,y,z,spl"),
            other => panic!("{other:?}"),
        }
        assert!(parse_csv("").is_err());
        assert!(parse_csv("x,target\n").is_err());
        let err = parse_csv("x,target\n1.0,2.0\n1.5,oops\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization() {
        let s = NormStats::fit(&[0.0, 10.0]).unwrap();
        assert_eq!(s.apply(5.0), 0.5);
        assert_eq!(s.apply(0.0), 0.0);
        assert_eq!(s.apply(10.0), 1.0);
        assert_eq!(s.apply(12.0), 1.2);
        assert!(matches!(NormStats::fit(&[3.0, 3.0]), Err(Error::DegenerateRange(_))));
    }
}
