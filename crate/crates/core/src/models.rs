//! The three compared architectures.
//!
//! * `pure_dd`: an MLP on the raw inputs.
//! * `seq_hybrid`: an MLP on the raw inputs plus one partial-physics
//!   evaluation appended as an extra feature.
//! * `optma_net`: a transfer MLP whose outputs parameterize the partial
//!   physics, which then produces the prediction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Problem;
use crate::error::{Error, Result};
use crate::network::{BoundMlp, Mlp, MlpSpec, Mode};
use crate::physics::{self, PhysicsConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PureDd,
    SeqHybrid,
    OptmaNet,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::PureDd, Family::SeqHybrid, Family::OptmaNet];

    pub fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::PureDd => "pure_dd",
            Family::SeqHybrid => "seq_hybrid",
            Family::OptmaNet => "optma_net",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub problem: Problem,
    pub mlp: MlpSpec,
    /// Partial physics for the acoustic problem. Gramacy problems use the
    /// built-in Gramacy-Lee head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physics: Option<PhysicsConfig>,
}

impl ModelSpec {
    /// Builds a spec whose network widths follow from the family and problem.
    pub fn for_problem(family: Family, problem: Problem, base: &MlpSpec, physics: Option<PhysicsConfig>) -> Result<Self> {
        let n_in = problem.input_width() + usize::from(family == Family::SeqHybrid);
        let n_out = match (family, problem, &physics) {
            (Family::OptmaNet, Problem::Acoustic, Some(cfg)) => cfg.n_sources(),
            (Family::OptmaNet, Problem::Acoustic, None) | (Family::SeqHybrid, Problem::Acoustic, None) => {
                return Err(Error::Config(format!("{family} on the acoustic problem needs a physics config")));
            }
            _ => 1,
        };
        let spec = Self {
            family,
            problem,
            mlp: base.with_io(n_in, n_out),
            physics,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        let hybrid = self.family == Family::SeqHybrid;
        let expected_in = self.problem.input_width() + usize::from(hybrid);
        if self.mlp.n_inputs != expected_in {
            return Err(Error::Config(format!(
                "{} on {} needs {expected_in} network inputs, got {}",
                self.family, self.problem, self.mlp.n_inputs
            )));
        }
        let expected_out = match (self.family, self.problem) {
            (Family::OptmaNet, Problem::Acoustic) | (Family::SeqHybrid, Problem::Acoustic) => {
                let cfg = self.physics.as_ref().ok_or_else(|| {
                    Error::Config(format!("{} on the acoustic problem needs a physics config", self.family))
                })?;
                if self.family == Family::OptmaNet {
                    cfg.n_sources()
                } else {
                    1
                }
            }
            _ => 1,
        };
        if self.mlp.n_outputs != expected_out {
            return Err(Error::Config(format!(
                "{} on {} needs {expected_out} network outputs, got {}",
                self.family, self.problem, self.mlp.n_outputs
            )));
        }
        Ok(())
    }

    fn physics(&self) -> Result<&PhysicsConfig> {
        self.physics
            .as_ref()
            .ok_or_else(|| Error::Config("missing physics config".into()))
    }
}

/// Latent amplitudes produced by an OPTMA-Net transfer network,
/// `batch x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferFeatures(pub Tensor);

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub net: Mlp,
}

impl Model {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = Mlp::init(&spec.mlp, seed);
        Ok(Self { spec, net })
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    /// The tensor fed to the MLP for raw inputs `x`.
    pub fn network_input(&self, x: &Tensor) -> Result<Tensor> {
        let width = self.spec.problem.input_width();
        if x.cols() != width {
            return Err(Error::contract(format!(
                "{} inputs need {width} columns, got {}",
                self.spec.problem,
                x.cols()
            )));
        }
        if self.spec.family != Family::SeqHybrid {
            return Ok(x.clone());
        }
        let feature = physics_feature(&self.spec, x)?;
        let mut data = Vec::with_capacity(x.rows() * (width + 1));
        for r in 0..x.rows() {
            data.extend_from_slice(x.row_slice(r));
            data.push(feature[r]);
        }
        Tensor::new(x.rows(), width + 1, data)
    }

    /// Builds the prediction graph for raw inputs `x` on `tape`.
    pub fn forward<'t>(&mut self, tape: &'t Tape, bound: &BoundMlp<'t>, x: &Tensor, mode: Mode<'_>) -> Result<Var<'t>> {
        let input = tape.leaf(self.network_input(x)?);
        let out = self.net.forward(bound, input, mode)?;
        self.head(tape, x, out)
    }

    fn head<'t>(&self, tape: &'t Tape, x: &Tensor, out: Var<'t>) -> Result<Var<'t>> {
        match (self.spec.family, self.spec.problem) {
            (Family::OptmaNet, Problem::Acoustic) => {
                physics::monopole_spl(tape.leaf(x.clone()), out, self.spec.physics()?)
            }
            (Family::OptmaNet, _) => physics::gramacy_pp(out),
            _ => Ok(out),
        }
    }

    /// Eval-mode predictions, one per row of `x`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.net.bind(&tape);
        let mut scratch = self.clone();
        Ok(scratch.forward(&tape, &bound, x, Mode::Eval)?.value().into_data())
    }

    /// Output of the final transfer layer (the physics-head inputs).
    pub fn extract_transfer_features(&self, x: &Tensor) -> Result<TransferFeatures> {
        if self.spec.family != Family::OptmaNet {
            return Err(Error::contract(format!(
                "transfer features exist only for optma_net, not {}",
                self.spec.family
            )));
        }
        Ok(TransferFeatures(self.net.predict(&self.network_input(x)?)?))
    }
}

/// Partial-physics evaluation appended by the sequential hybrid: the
/// Gramacy-Lee function for 1-D problems, unit-amplitude monopole SPL for
/// the acoustic problem.
pub fn physics_feature(spec: &ModelSpec, x: &Tensor) -> Result<Vec<f64>> {
    match spec.problem {
        Problem::Acoustic => {
            let cfg = spec.physics()?;
            physics::monopole_spl_values(x, &Tensor::ones(x.rows(), cfg.n_sources()), cfg)
        }
        _ => x.data().iter().map(|&v| physics::gramacy_pp_value(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::MlpSpec;

    fn base() -> MlpSpec {
        MlpSpec {
            n_inputs: 0,
            n_outputs: 0,
            n_hidden_layers: 3,
            nodes_per_layer: 12,
            dropout_p: 0.1,
            learning_rate: 1e-3,
            batch_size: 10,
            max_epochs: 1,
        }
    }

    #[test]
    fn widths_follow_family() {
        let q = Some(PhysicsConfig::quadcopter());
        let s = ModelSpec::for_problem(Family::SeqHybrid, Problem::Acoustic, &base(), q.clone()).unwrap();
        assert_eq!(s.mlp.n_inputs, 4);
        let s = ModelSpec::for_problem(Family::SeqHybrid, Problem::Fp1, &base(), None).unwrap();
        assert_eq!(s.mlp.n_inputs, 2);
        let s = ModelSpec::for_problem(Family::OptmaNet, Problem::Acoustic, &base(), q).unwrap();
        assert_eq!((s.mlp.n_inputs, s.mlp.n_outputs), (3, 4));
        let s = ModelSpec::for_problem(Family::OptmaNet, Problem::Fp2, &base(), None).unwrap();
        assert_eq!((s.mlp.n_inputs, s.mlp.n_outputs), (1, 1));
    }

    #[test]
    fn missing_physics_rejected() {
        assert!(ModelSpec::for_problem(Family::OptmaNet, Problem::Acoustic, &base(), None).is_err());
        let mut s = ModelSpec::for_problem(Family::PureDd, Problem::Acoustic, &base(), None).unwrap();
        s.family = Family::OptmaNet;
        assert!(s.validate().is_err());
    }

    #[test]
    fn features_only_for_optma() {
        let s = ModelSpec::for_problem(Family::PureDd, Problem::Fp1, &base(), None).unwrap();
        let m = Model::init(s, 0).unwrap();
        assert!(m.extract_transfer_features(&Tensor::column(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn wrong_input_width_rejected() {
        let s = ModelSpec::for_problem(Family::PureDd, Problem::Fp1, &base(), None).unwrap();
        let m = Model::init(s, 0).unwrap();
        assert!(m.predict(&Tensor::zeros(2, 3)).is_err());
    }

    #[test]
    fn physics_head_adds_no_parameters() {
        let q = Some(PhysicsConfig::quadcopter());
        let optma = Model::init(ModelSpec::for_problem(Family::OptmaNet, Problem::Acoustic, &base(), q).unwrap(), 1).unwrap();
        let transfer = Mlp::init(&optma.spec.mlp, 1);
        assert_eq!(optma.n_params(), transfer.n_params());
    }
}
