//! Differentiable partial-physics heads.
//!
//! Both heads are written in tape primitives so that adjoints flow through
//! them into whatever produced their inputs.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Minimum allowed distance between a field point and any source, in metres.
pub const R_MIN: f64 = 0.05;

/// `|P|` is clamped to this many pascals before taking the logarithm.
pub const P_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub freq_hz: f64,
    /// Phase offset, radians.
    pub phase: f64,
}

impl Source {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Serialize, Deserialize)]
struct RawPhysicsConfig {
    sources: Vec<Source>,
    sound_speed: f64,
    p_ref: f64,
}

/// Constant parameters of an N-monopole field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhysicsConfig", into = "RawPhysicsConfig")]
pub struct PhysicsConfig {
    sources: Vec<Source>,
    sound_speed: f64,
    p_ref: f64,
    wavenumbers: Vec<f64>,
}

impl TryFrom<RawPhysicsConfig> for PhysicsConfig {
    type Error = Error;

    fn try_from(raw: RawPhysicsConfig) -> Result<Self> {
        PhysicsConfig::new(raw.sources, raw.sound_speed, raw.p_ref)
    }
}

impl From<PhysicsConfig> for RawPhysicsConfig {
    fn from(cfg: PhysicsConfig) -> Self {
        RawPhysicsConfig {
            sources: cfg.sources,
            sound_speed: cfg.sound_speed,
            p_ref: cfg.p_ref,
        }
    }
}

impl PhysicsConfig {
    pub fn new(sources: Vec<Source>, sound_speed: f64, p_ref: f64) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("physics config needs at least one source".into()));
        }
        if !(sound_speed > 0.0 && sound_speed.is_finite()) {
            return Err(Error::Config(format!("sound speed must be positive, got {sound_speed}")));
        }
        if !(p_ref > 0.0 && p_ref.is_finite()) {
            return Err(Error::Config(format!("reference pressure must be positive, got {p_ref}")));
        }
        for (i, s) in sources.iter().enumerate() {
            let vals = [s.x, s.y, s.z, s.freq_hz, s.phase];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("source {i} has non-finite fields")));
            }
        }
        let wavenumbers = sources
            .iter()
            .map(|s| 2.0 * PI * s.freq_hz / sound_speed)
            .collect();
        Ok(Self {
            sources,
            sound_speed,
            p_ref,
            wavenumbers,
        })
    }

    /// Four 175 Hz sources at `(±0.176, ±0.176, 0)` m with phase 45,
    /// `c = 343` m/s and `P_ref = 20 µPa`.
    pub fn quadcopter() -> Self {
        let corners = [(0.176, 0.176), (-0.176, 0.176), (-0.176, -0.176), (0.176, -0.176)];
        let sources = corners
            .iter()
            .map(|&(x, y)| Source {
                x,
                y,
                z: 0.0,
                freq_hz: 175.0,
                phase: 45.0,
            })
            .collect();
        Self::new(sources, 343.0, 20e-6).expect("built-in config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn p_ref(&self) -> f64 {
        self.p_ref
    }

    /// `2π f_n / c` per source, rad/m.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Smallest distance from `point` to any source.
    pub fn min_source_distance(&self, point: [f64; 3]) -> f64 {
        self.sources
            .iter()
            .map(|s| {
                let q = s.position();
                ((point[0] - q[0]).powi(2) + (point[1] - q[1]).powi(2) + (point[2] - q[2]).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// A config containing only the sources at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let sources = indices.iter().map(|&i| self.sources[i].clone()).collect();
        Self::new(sources, self.sound_speed, self.p_ref)
    }
}

/// Sound pressure level in dB of a superposition of monopoles.
///
/// `points` is `batch x 3` (metres), `amplitudes` is `batch x N`. For each
/// source `p_n = U_n cos(κ_n r_n + φ_n) / r_n`; the level is
/// `20 log10(max(|Σ p_n|, P_FLOOR) / P_ref)`.
pub fn monopole_spl<'t>(points: Var<'t>, amplitudes: Var<'t>, cfg: &PhysicsConfig) -> Result<Var<'t>> {
    let (batch, dims) = points.shape();
    if dims != 3 {
        return Err(Error::contract(format!("field points need 3 columns, got {dims}")));
    }
    let (u_rows, n) = amplitudes.shape();
    if n != cfg.n_sources() {
        return Err(Error::contract(format!(
            "{n} amplitude columns for {} sources",
            cfg.n_sources()
        )));
    }
    if u_rows != batch {
        return Err(Error::contract(format!("{u_rows} amplitude rows for {batch} points")));
    }
    let pts = points.value();
    for r in 0..batch {
        let p = pts.row_slice(r);
        let d = cfg.min_source_distance([p[0], p[1], p[2]]);
        if d < R_MIN {
            return Err(Error::domain(format!(
                "point {r} ({:.4}, {:.4}, {:.4}) is {d:.4} m from a source (minimum {R_MIN} m)",
                p[0], p[1], p[2]
            )));
        }
    }

    let coords = [points.slice_col(0), points.slice_col(1), points.slice_col(2)];
    let mut total: Option<Var<'t>> = None;
    for (n, (src, &kappa)) in cfg.sources.iter().zip(&cfg.wavenumbers).enumerate() {
        let q = src.position();
        let mut dist2 = None;
        for (c, &qc) in coords.iter().zip(&q) {
            let sq = c.shift(-qc).powf(2.0)?;
            dist2 = Some(match dist2 {
                Some(acc) => acc + sq,
                None => sq,
            });
        }
        let r = dist2.expect("three coordinates").sqrt()?;
        let wave = r.scale(kappa).shift(src.phase).cos();
        let p_n = amplitudes.slice_col(n).mul(wave).div(r)?;
        total = Some(match total {
            Some(acc) => acc + p_n,
            None => p_n,
        });
    }
    let pressure = total.expect("at least one source");
    Ok(pressure
        .abs()
        .clamp_min(P_FLOOR)
        .scale(1.0 / cfg.p_ref)
        .log10()
        .scale(20.0))
}

/// Evaluates [`monopole_spl`] on constants and returns the levels.
pub fn monopole_spl_values(points: &Tensor, amplitudes: &Tensor, cfg: &PhysicsConfig) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let spl = monopole_spl(tape.leaf(points.clone()), tape.leaf(amplitudes.clone()), cfg)?;
    Ok(spl.value().into_data())
}

/// `sin(10πx) / (2x) + (x − 1)^4`, elementwise.
pub fn gramacy_pp<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let ripple = x.scale(10.0 * PI).sin().div(x.scale(2.0))?;
    let trend = x.shift(-1.0).powf(4.0)?;
    Ok(ripple + trend)
}

pub fn gramacy_pp_value(x: f64) -> Result<f64> {
    if x == 0.0 {
        return Err(Error::domain("gramacy_pp is undefined at x = 0"));
    }
    Ok((10.0 * PI * x).sin() / (2.0 * x) + (x - 1.0).powi(4))
}

/// First full-physics benchmark: `gramacy_pp(3 − x)`.
pub fn fp1_oracle(x: f64) -> Result<f64> {
    gramacy_pp_value(3.0 - x)
}

/// Second full-physics benchmark: `gramacy_pp(0.5 + 2 sin(π(x − 2)/2))`.
pub fn fp2_oracle(x: f64) -> Result<f64> {
    gramacy_pp_value(fp2_inner(x))
}

pub fn fp2_inner(x: f64) -> f64 {
    0.5 + 2.0 * (PI * (x - 2.0) / 2.0).sin()
}
