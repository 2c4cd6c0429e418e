//! Train/test segmentation: random percentage, first y-z quadrant, and
//! inner sphere.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Problem};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    Percentage {
        fraction: f64,
        /// Overrides the per-run seed when set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Quadrant,
    Radial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 3]>,
    },
}

impl SplitSpec {
    pub fn percentage(fraction: f64) -> Self {
        SplitSpec::Percentage { fraction, seed: None }
    }

    pub fn is_extrapolation(&self) -> bool {
        !matches!(self, SplitSpec::Percentage { .. })
    }

    pub fn apply(&self, d: &Dataset, run_seed: u64) -> Result<Split> {
        match *self {
            SplitSpec::Percentage { fraction, seed } => split_percentage(d, fraction, seed.unwrap_or(run_seed)),
            SplitSpec::Quadrant => split_quadrant(d),
            SplitSpec::Radial { center } => split_radial(d, center.unwrap_or([0.0; 3])),
        }
    }
}

/// Row indices of a partition, each list ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Sphere radius for radial splits.
    pub radius: Option<f64>,
}

impl Split {
    fn from_mask(mask: impl Iterator<Item = bool>, radius: Option<f64>) -> Result<Self> {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, in_train) in mask.enumerate() {
            if in_train {
                train.push(i);
            } else {
                test.push(i);
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config(format!(
                "split leaves an empty side (train {}, test {})",
                train.len(),
                test.len()
            )));
        }
        Ok(Self { train, test, radius })
    }
}

/// `⌊fraction · n⌋` rows chosen uniformly at random for training.
pub fn split_percentage(d: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1)")));
    }
    let n = d.len();
    let k = (fraction * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split, 0));
    let mut in_train = vec![false; n];
    for &i in &idx[..k] {
        in_train[i] = true;
    }
    Split::from_mask(in_train.into_iter(), None)
}

fn require_acoustic(d: &Dataset, what: &str) -> Result<()> {
    if d.problem() != Problem::Acoustic {
        return Err(Error::Config(format!("{what} split needs 3-D acoustic inputs")));
    }
    Ok(())
}

/// Trains on `y >= 0 && z >= 0`; `x` is ignored.
pub fn split_quadrant(d: &Dataset) -> Result<Split> {
    require_acoustic(d, "quadrant")?;
    Split::from_mask(
        (0..d.len()).map(|r| {
            let p = d.point(r);
            p[1] >= 0.0 && p[2] >= 0.0
        }),
        None,
    )
}

/// Trains on points within half the largest distance from `center`.
pub fn split_radial(d: &Dataset, center: [f64; 3]) -> Result<Split> {
    require_acoustic(d, "radial")?;
    let dist: Vec<f64> = (0..d.len())
        .map(|r| {
            let p = d.point(r);
            ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + (p[2] - center[2]).powi(2)).sqrt()
        })
        .collect();
    let radius = dist.iter().copied().fold(0.0, f64::max) / 2.0;
    Split::from_mask(dist.iter().map(|&r| r <= radius), Some(radius))
}

/// Moves a seeded `fraction` of `train` into a validation list.
pub fn carve_validation(train: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let k = ((fraction * train.len() as f64).round() as usize).clamp(1, train.len().saturating_sub(2).max(1));
    let mut shuffled = train.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, Stream::Validation, 0));
    let mut val: Vec<usize> = shuffled[..k].to_vec();
    let mut rest: Vec<usize> = shuffled[k..].to_vec();
    val.sort_unstable();
    rest.sort_unstable();
    (rest, val)
}
