//! Expected-improvement acquisition over GP posteriors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::GpSurrogate;
use crate::par;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("query budget exceeds domain: all {0} nodes already queried")]
    DomainExhausted(usize),
    #[error("non-finite acquisition score at node {0}")]
    NonFiniteScore(usize),
}

/// Orientation of the improvement.
///
/// `Min` treats the incumbent `y*` as a value to be driven down and scores
/// `(y* - mu) Phi(z) + sigma phi(z)` with `z = (y* - mu)/sigma`. `Max`
/// mirrors it for maximization: `(mu - y*) Phi(z') + sigma phi(z')` with
/// `z' = (mu - y*)/sigma`. In both cases `y*` is the best observed value
/// under the chosen orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EiConvention {
    #[default]
    Min,
    Max,
}

/// Standard normal CDF via the complementary error function.
fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Closed-form expected improvement. Exactly zero when `sigma == 0`;
/// subnormal-range results are flushed to zero to keep scores comparable
/// across platforms.
pub fn expected_improvement(mu: f64, sigma: f64, y_star: f64, conv: EiConvention) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let gap = match conv {
        EiConvention::Min => y_star - mu,
        EiConvention::Max => mu - y_star,
    };
    let z = gap / sigma;
    let ei = gap * normal_cdf(z) + sigma * normal_pdf(z);
    if ei < 1e-300 {
        0.0
    } else {
        ei
    }
}

/// Outcome of scoring the whole domain.
#[derive(Debug, Clone)]
pub struct AcquisitionResult {
    /// EI score per node (queried nodes get `-inf` unless requery is allowed).
    pub scores: Vec<f64>,
    pub chosen: usize,
    pub chosen_score: f64,
}

/// Score every node and pick the maximizer, breaking ties toward the
/// smallest index. Already-queried nodes are excluded unless
/// `allow_requery`; `y_star` is the best observed raw value under `conv`
/// (max for `Max`, min for `Min`).
pub fn select_next(
    gp: &GpSurrogate,
    n: usize,
    queried: &[bool],
    conv: EiConvention,
    allow_requery: bool,
) -> Result<AcquisitionResult, AcquisitionError> {
    assert_eq!(queried.len(), n);
    if !allow_requery && queried.iter().all(|&q| q) {
        return Err(AcquisitionError::DomainExhausted(n));
    }
    let y_star = incumbent(gp);
    let nodes: Vec<usize> = (0..n).collect();
    let posterior = gp.predict_batch(&nodes);
    let mut scores = vec![f64::NEG_INFINITY; n];
    let mut chosen = None;
    let mut best = f64::NEG_INFINITY;
    for v in 0..n {
        if queried[v] && !allow_requery {
            continue;
        }
        let (mu, sigma) = posterior[v];
        let ei = expected_improvement(mu, sigma, y_star, conv);
        if !ei.is_finite() {
            return Err(AcquisitionError::NonFiniteScore(v));
        }
        scores[v] = ei;
        if ei > best {
            best = ei;
            chosen = Some(v);
        }
    }
    let chosen = chosen.expect("at least one candidate eligible");
    Ok(AcquisitionResult {
        scores,
        chosen,
        chosen_score: best,
    })
}

/// Incumbent value: the best (maximum) observed raw training value. Both
/// conventions plug the same incumbent into their displays; only the sign
/// of the improvement differs.
pub fn incumbent(gp: &GpSurrogate) -> f64 {
    gp.best_observed()
}

/// EI for a list of candidate (mu, sigma) pairs against a fixed incumbent
/// (data-parallel helper for large scans).
pub fn ei_batch(posterior: &[(f64, f64)], y_star: f64, conv: EiConvention) -> Vec<f64> {
    par::map_slice(posterior, |&(mu, sigma)| {
        expected_improvement(mu, sigma, y_star, conv)
    })
}
