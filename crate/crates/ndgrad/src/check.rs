//! Central finite-difference verification of backward passes.
//!
//! The checker rebuilds the graph from scratch for every probe so it exercises
//! the same code path callers use. Relative error compares against
//! `max(|analytic|, |numeric|, floor)`; the floor keeps near-zero gradients
//! from inflating the ratio.

use crate::error::NdError;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct FdConfig {
    /// Central difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Denominator floor for the relative-error ratio.
    pub floor: f64,
    /// Coordinates probed per input tensor; all of them if the tensor is
    /// smaller, a seeded sample otherwise.
    pub probes_per_input: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            probes_per_input: 24,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub probes: usize,
    /// `(input index, flat coordinate, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Checks `d loss / d inputs` for a scalar-valued graph builder against
/// central finite differences.
pub fn check_gradients<F>(inputs: &[Tensor], cfg: &FdConfig, build: F) -> Result<FdReport, NdError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NdError>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64, NdError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|id| grads.get_or_zeros(*id, &g)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FdReport {
        max_rel_err: 0.0,
        probes: 0,
        worst: None,
    };
    for (i, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if t.numel() <= cfg.probes_per_input {
            (0..t.numel()).collect()
        } else {
            sample(&mut rng, t.numel(), cfg.probes_per_input).into_vec()
        };
        for c in coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[c] += cfg.step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[c] -= cfg.step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * cfg.step);
            let a = analytic[i].data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.probes += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((i, c, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Panics with the worst probe when the check fails; for use in tests.
pub fn assert_gradients<F>(inputs: &[Tensor], cfg: &FdConfig, build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NdError>,
{
    let report = check_gradients(inputs, cfg, build).expect("gradient check build failed");
    assert!(
        report.max_rel_err < cfg.tol,
        "gradient check failed: max rel err {:.3e} over {} probes, worst {:?}",
        report.max_rel_err,
        report.probes,
        report.worst
    );
}
