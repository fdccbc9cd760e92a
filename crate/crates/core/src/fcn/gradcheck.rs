//! Central finite-difference verification of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::weighted_cross_entropy;
use super::network::{Network, NetworkConfig, Parameters};
use super::train::{sample_gradient, TrainingSample};
use crate::error::Result;
use crate::model::{BScan, Grid, RegionTag};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const REL_EPS: f64 = 1e-12;

/// Small random input with random labels and class weights.
#[derive(Debug, Clone)]
pub struct Probe {
    pub sample: TrainingSample,
    pub weights: Vec<f64>,
}

impl Probe {
    pub fn random(height: usize, width: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = Grid::from_fn(height, width, |_, _| rng.random::<f64>());
        let labels = Grid::from_fn(height, width, |_, _| rng.random_range(0..num_classes) as u8);
        let weights = (0..num_classes).map(|_| rng.random_range(0.5..10.0)).collect();
        let image = BScan::new(px, "probe", RegionTag::Fovea, "probe").expect("probe pixels lie in [0, 1]");
        Probe {
            sample: TrainingSample {
                image,
                labels,
                ignore: None,
            },
            weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    /// `|a - n| / max(|a|, |n|, REL_EPS)` for every value of the group.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    /// Names of groups whose worst relative error exceeds `tolerance`.
    pub fn flagged(&self, tolerance: f64) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !(g.max_rel_error <= tolerance))
            .map(|g| g.name.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_EPS)
}

fn probe_loss(net: &Network, params: &Parameters, probe: &Probe) -> Result<f64> {
    let probs = net.forward(params, &probe.sample.image)?;
    Ok(weighted_cross_entropy(&probs, &probe.sample.labels, &probe.weights, None)?.loss)
}

/// Checks the network's own backward pass at its seeded initialization.
pub fn gradient_check(nconfig: &NetworkConfig, probe: &Probe) -> Result<GradCheckReport> {
    let net = Network::new(nconfig.clone())?;
    let params = net.init_params();
    let (_, analytic) = sample_gradient(&net, &params, &probe.sample, &probe.weights, false)?;
    compare_gradient(&net, &params, probe, &analytic)
}

/// Compares a supplied gradient against central differences of the probe loss.
pub fn compare_gradient(
    net: &Network,
    params: &Parameters,
    probe: &Probe,
    analytic: &Parameters,
) -> Result<GradCheckReport> {
    net.check_params(params)?;
    net.check_params(analytic)?;
    let mut work = params.clone();
    let mut groups = Vec::with_capacity(params.groups.len());
    for (gi, group) in params.groups.iter().enumerate() {
        let mut rel_errors = Vec::with_capacity(group.values.len());
        for j in 0..group.values.len() {
            let orig = group.values[j];
            work.groups[gi].values[j] = orig + FD_STEP;
            let plus = probe_loss(net, &work, probe)?;
            work.groups[gi].values[j] = orig - FD_STEP;
            let minus = probe_loss(net, &work, probe)?;
            work.groups[gi].values[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            rel_errors.push(relative_error(analytic.groups[gi].values[j], numeric));
        }
        let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
        groups.push(GroupCheck {
            name: group.name.clone(),
            rel_errors,
            max_rel_error,
        });
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { groups, max_rel_error })
}
