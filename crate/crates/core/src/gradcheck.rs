//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tape::{Fault, Tape, Var};
use crate::tensor::Tensor;

/// Smallest denominator used when forming relative errors, so that
/// gradients that vanish exactly are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CoordinateCheck {
    Checked { ad: f64, fd: f64, rel_error: f64 },
    /// One-sided differences disagree at every step size: the point sits on
    /// a kink and only a subgradient exists.
    NonDifferentiable { left: f64, right: f64, ad: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
    /// Largest relative error over checkable coordinates.
    pub max_rel_error: f64,
    pub passed: bool,
    /// Objective evaluations spent on finite differences.
    pub fd_evaluations: usize,
    /// Reverse sweeps used to obtain the full AD gradient.
    pub backward_passes: usize,
}

impl GradCheckReport {
    pub fn non_checkable(&self) -> usize {
        self.coordinates
            .iter()
            .filter(|c| matches!(c, CoordinateCheck::NonDifferentiable { .. }))
            .count()
    }
}

/// Compares AD gradients against central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradChecker {
    pub h: f64,
    pub tol: f64,
    pub fault: Option<Fault>,
}

impl GradChecker {
    pub fn new(h: f64, tol: f64) -> Result<Self> {
        if !(1e-7..=1e-4).contains(&h) {
            return Err(Error::contract(format!("step {h} outside [1e-7, 1e-4]")));
        }
        Ok(Self { h, tol, fault: None })
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    fn tape(&self) -> Tape {
        match self.fault {
            Some(f) => Tape::with_fault(f),
            None => Tape::new(),
        }
    }

    fn eval<F>(&self, f: &F, point: &Tensor) -> Result<f64>
    where
        F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
    {
        let tape = self.tape();
        let x = tape.leaf(point.clone());
        let y = f(&tape, x)?;
        if y.shape() != (1, 1) {
            return Err(Error::contract("objective must be scalar-valued"));
        }
        let v = y.value().item();
        if !v.is_finite() {
            return Err(Error::domain("objective is not finite near the check point"));
        }
        Ok(v)
    }

    pub fn check<F>(&self, f: F, point: &Tensor) -> Result<GradCheckReport>
    where
        F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
    {
        let ad = {
            let tape = self.tape();
            let x = tape.leaf(point.clone());
            let y = f(&tape, x)?;
            if y.shape() != (1, 1) {
                return Err(Error::contract("objective must be scalar-valued"));
            }
            if !y.value().item().is_finite() {
                return Err(Error::domain("objective is not finite at the check point"));
            }
            tape.backward(y).wrt(x)
        };

        let h = self.h;
        let f0 = self.eval(&f, point)?;
        let mut evals = 1;
        let mut coordinates = Vec::with_capacity(point.len());
        for i in 0..point.len() {
            let at = |delta: f64| {
                let mut p = point.clone();
                p.data_mut()[i] += delta;
                p
            };
            let plus = self.eval(&f, &at(h))?;
            let minus = self.eval(&f, &at(-h))?;
            let plus_s = self.eval(&f, &at(h / 10.0))?;
            let minus_s = self.eval(&f, &at(-h / 10.0))?;
            evals += 4;

            let right = (plus - f0) / h;
            let left = (f0 - minus) / h;
            let gap = (right - left).abs();
            let gap_small = ((plus_s - f0) - (f0 - minus_s)).abs() / (h / 10.0);
            let g = ad.data()[i];
            // a smooth function's one-sided gap shrinks linearly with h
            let kink = gap_small > 0.5 * gap && gap_small > 1e-6 * right.abs().max(left.abs()).max(1.0);
            if kink {
                coordinates.push(CoordinateCheck::NonDifferentiable { left, right, ad: g });
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            let rel_error = (g - fd).abs() / g.abs().max(fd.abs()).max(REL_ERROR_FLOOR);
            coordinates.push(CoordinateCheck::Checked { ad: g, fd, rel_error });
        }

        let max_rel_error = coordinates
            .iter()
            .filter_map(|c| match c {
                CoordinateCheck::Checked { rel_error, .. } => Some(*rel_error),
                _ => None,
            })
            .fold(0.0, f64::max);
        Ok(GradCheckReport {
            passed: max_rel_error <= self.tol,
            coordinates,
            max_rel_error,
            fd_evaluations: evals,
            backward_passes: 1,
        })
    }
}

/// Checks `f` at `point` with step `h`; passes iff every checkable
/// coordinate has relative error at most `tol`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    GradChecker::new(h, tol)?.check(f, point)
}
