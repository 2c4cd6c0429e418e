//! The gradient-check suite: every tape primitive plus the two physics heads,
//! each at many random points away from kinks and singularities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::gradcheck::GradChecker;
use crate::physics::{self, PhysicsConfig};
use crate::rng::{self, Stream};
use crate::tape::{Fault, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub points: usize,
    pub h: f64,
    pub tol: f64,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            points: 100,
            h: 1e-5,
            tol: 1e-5,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpCheck {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
    /// Coordinates skipped because they sat on a kink.
    pub non_checkable: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub h: f64,
    pub tol: f64,
    pub checks: Vec<OpCheck>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &OpCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Objective = for<'t> fn(&'t Tape, Var<'t>) -> Result<Var<'t>>;
type Sampler = fn(&mut ChaCha8Rng) -> Tensor;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Magnitudes in `[lo, hi)` with random signs.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn row(values: Vec<f64>) -> Tensor {
    Tensor::row(values).expect("finite samples")
}

/// Weighted sum with fixed, asymmetric weights so that errors cannot cancel.
fn reduce<'t>(y: Var<'t>) -> Var<'t> {
    let (r, c) = y.shape();
    let w = y.tape().leaf(Tensor::new(r, c, (0..r * c).map(|i| 0.7 + 0.3 * i as f64).collect()).expect("finite"));
    (y * w).sum()
}

/// Splits a `1 x 2k` row into two `1 x k` halves.
fn halves<'t>(x: Var<'t>) -> (Var<'t>, Var<'t>) {
    let k = x.shape().1 / 2;
    let tape = x.tape();
    let a: Vec<Var<'t>> = (0..k).map(|j| x.slice_col(j)).collect();
    let b: Vec<Var<'t>> = (k..2 * k).map(|j| x.slice_col(j)).collect();
    (tape.concat_cols(&a), tape.concat_cols(&b))
}

fn cases() -> Vec<(&'static str, Sampler, Objective)> {
    vec![
        ("add", |r| row(uniform(r, 6, -2.0, 2.0)), |_, x| {
            let (a, b) = halves(x);
            Ok(reduce(a + b))
        }),
        ("sub", |r| row(uniform(r, 6, -2.0, 2.0)), |_, x| {
            let (a, b) = halves(x);
            Ok(reduce(a - b))
        }),
        ("mul", |r| row(uniform(r, 6, -2.0, 2.0)), |_, x| {
            let (a, b) = halves(x);
            Ok(reduce(a * b))
        }),
        ("div", |r| {
            let mut v = uniform(r, 3, -2.0, 2.0);
            v.extend(away_from_zero(r, 3, 0.3, 2.0));
            row(v)
        }, |_, x| {
            let (a, b) = halves(x);
            Ok(reduce(a.div(b)?))
        }),
        ("neg", |r| row(uniform(r, 4, -2.0, 2.0)), |_, x| Ok(reduce(-x))),
        ("powf", |r| row(uniform(r, 4, 0.2, 2.0)), |_, x| Ok(reduce(x.powf(2.5)?))),
        ("powf_int", |r| row(uniform(r, 4, -2.0, 2.0)), |_, x| Ok(reduce(x.powf(3.0)?))),
        ("sin", |r| row(uniform(r, 4, -4.0, 4.0)), |_, x| Ok(reduce(x.sin()))),
        ("cos", |r| row(uniform(r, 4, -4.0, 4.0)), |_, x| Ok(reduce(x.cos()))),
        ("sqrt", |r| row(uniform(r, 4, 0.1, 3.0)), |_, x| Ok(reduce(x.sqrt()?))),
        ("abs", |r| row(away_from_zero(r, 4, 1e-2, 2.0)), |_, x| Ok(reduce(x.abs()))),
        ("log10", |r| row(uniform(r, 4, 0.1, 5.0)), |_, x| Ok(reduce(x.log10()))),
        ("relu", |r| row(away_from_zero(r, 4, 1e-2, 2.0)), |_, x| Ok(reduce(x.relu()))),
        ("clamp_min", |r| row(away_from_zero(r, 4, 1e-2, 2.0)), |_, x| Ok(reduce(x.clamp_min(0.0)))),
        ("matmul", |r| row(uniform(r, 12, -1.5, 1.5)), |tape, x| {
            // columns of a 3x2 matrix from consecutive triples of x
            let cols = |from: usize| {
                let col = |j: usize| tape.concat_cols(&[x.slice_col(j), x.slice_col(j + 1), x.slice_col(j + 2)]).transpose();
                tape.concat_cols(&[col(from), col(from + 3)])
            };
            Ok(reduce(cols(0).transpose().matmul(cols(6))))
        }),
        ("matmul_t", |r| row(uniform(r, 12, -1.5, 1.5)), |tape, x| {
            let rows = |from: usize| {
                let r = |j: usize| tape.concat_cols(&[x.slice_col(j), x.slice_col(j + 1), x.slice_col(j + 2)]);
                tape.concat_cols(&[r(from).transpose(), r(from + 3).transpose()]).transpose()
            };
            Ok(reduce(rows(0).matmul_t(rows(6))))
        }),
        ("transpose", |r| row(uniform(r, 4, -2.0, 2.0)), |_, x| Ok(reduce(x.transpose()))),
        ("add_row", |r| row(uniform(r, 6, -2.0, 2.0)), |tape, x| {
            let (a, b) = halves(x);
            let batch = tape.leaf(Tensor::from_rows(&[[1.0], [-2.0]]).expect("finite")).matmul(a);
            Ok(reduce(batch.add_row(b)))
        }),
        ("sum", |r| row(uniform(r, 4, -2.0, 2.0)), |_, x| Ok((x * x).sum())),
        ("mean", |r| row(uniform(r, 4, -2.0, 2.0)), |_, x| Ok((x * x).mean())),
        ("concat_cols", |r| row(uniform(r, 4, -2.0, 2.0)), |tape, x| {
            Ok(reduce(tape.concat_cols(&[x.sin(), x])))
        }),
        ("slice_col", |r| row(uniform(r, 4, -2.0, 2.0)), |_, x| Ok(reduce(x.slice_col(2) * x.slice_col(1)))),
        ("scale_shift", |r| row(uniform(r, 4, -2.0, 2.0)), |_, x| {
            Ok(reduce(x.scale(-1.7).shift(0.4) * x))
        }),
        ("monopole_spl_amplitudes", |r| row(uniform(r, 4, 0.5, 1.5)), |tape, x| {
            let cfg = PhysicsConfig::quadcopter();
            let p = tape.leaf(Tensor::from_rows(&[[0.4, -0.3, 0.5]]).expect("finite"));
            Ok(physics::monopole_spl(p, x, &cfg)?.sum())
        }),
        ("monopole_spl_points", sample_point, |tape, x| {
            let cfg = PhysicsConfig::quadcopter();
            let u = tape.leaf(row(PROBE_AMPLITUDES.to_vec()));
            Ok(physics::monopole_spl(x, u, &cfg)?.sum())
        }),
        ("gramacy_pp", |r| row(uniform(r, 3, 0.5, 2.5)), |_, x| Ok(physics::gramacy_pp(x)?.sum())),
    ]
}

const PROBE_AMPLITUDES: [f64; 4] = [1.0, 0.8, 1.2, 0.9];

/// A listener position in the scan box at least 0.3 m from every rotor and
/// away from interference nulls, where the SPL is nearly singular: the
/// coherent pressure must keep at least a tenth of the incoherent sum.
fn sample_point(rng: &mut ChaCha8Rng) -> Tensor {
    let cfg = PhysicsConfig::quadcopter();
    let u = row(PROBE_AMPLITUDES.to_vec());
    loop {
        let p = [rng.gen_range(-1.15..1.15), rng.gen_range(-1.15..1.15), rng.gen_range(-0.6..0.6)];
        if cfg.min_source_distance(p) <= 0.3 {
            continue;
        }
        let incoherent: f64 = cfg
            .sources()
            .iter()
            .zip(PROBE_AMPLITUDES)
            .map(|(s, a)| {
                let q = s.position();
                a / ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .sum();
        let point = row(p.to_vec());
        let spl = physics::monopole_spl_values(&point, &u, &cfg).expect("valid probe")[0];
        if spl >= 20.0 * (0.1 * incoherent / cfg.p_ref()).log10() {
            return point;
        }
    }
}

pub fn op_names() -> Vec<&'static str> {
    cases().into_iter().map(|(n, _, _)| n).collect()
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let checker = GradChecker::new(cfg.h, cfg.tol)?.with_fault(cfg.fault);
    let mut checks = Vec::new();
    for (lane, (name, sample, f)) in cases().into_iter().enumerate() {
        let mut rng = rng::stream(cfg.seed, Stream::Sampling, lane as u64);
        let mut max_rel_error: f64 = 0.0;
        let mut non_checkable = 0;
        let mut passed = true;
        for _ in 0..cfg.points {
            let point = sample(&mut rng);
            let r = checker.check(f, &point)?;
            max_rel_error = max_rel_error.max(r.max_rel_error);
            non_checkable += r.non_checkable();
            passed &= r.passed;
        }
        checks.push(OpCheck {
            name,
            points: cfg.points,
            max_rel_error,
            non_checkable,
            passed,
        });
    }
    Ok(SuiteReport {
        h: cfg.h,
        tol: cfg.tol,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_quickly() {
        let r = run_suite(&SuiteConfig {
            points: 10,
            ..SuiteConfig::default()
        })
        .unwrap();
        for c in &r.checks {
            assert!(c.passed, "{} max rel error {}", c.name, c.max_rel_error);
        }
    }

    #[test]
    fn fault_is_caught_by_cos() {
        let r = run_suite(&SuiteConfig {
            points: 5,
            fault: Some(Fault::CosAdjointSign),
            ..SuiteConfig::default()
        })
        .unwrap();
        assert!(!r.passed);
        let failed: Vec<&str> = r.failures().map(|c| c.name).collect();
        assert!(failed.contains(&"cos"), "{failed:?}");
    }
}
