//! Probability primitives: diagonal Gaussians, Bernoulli likelihoods,
//! reparameterized sampling, and the closed-form KL to the standard
//! Gaussian. Pure scalar versions live alongside batched graph builders
//! so evaluation and training share the same formulas through two
//! independently testable routes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::graph::{Graph, NodeId, LOG_CLAMP};

pub const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Encoder log-variance clamp range.
pub const ENC_LOG_VAR_RANGE: (f64, f64) = (-10.0, 10.0);
/// Gaussian decoder log-variance clamp range.
pub const DEC_LOG_VAR_RANGE: (f64, f64) = (-7.0, 0.0);

/// Per-datapoint diagonal Gaussian parameters (mean, log-variance).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianParams {
    mu: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagGaussianParams {
    /// Log-variance is clamped to the encoder range at construction.
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Self {
        assert_eq!(mu.len(), log_var.len(), "mu/log_var length mismatch");
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(ENC_LOG_VAR_RANGE.0, ENC_LOG_VAR_RANGE.1))
            .collect();
        DiagGaussianParams { mu, log_var }
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussianParams { mu: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }
}

#[derive(Debug, Clone)]
pub struct BernoulliParams {
    mean: Vec<f64>,
}

impl BernoulliParams {
    pub fn new(mean: Vec<f64>) -> Self {
        debug_assert!(mean.iter().all(|&m| (0.0..=1.0).contains(&m)));
        BernoulliParams { mean }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

#[derive(Debug, Clone)]
pub struct GaussianLikelihoodParams {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl GaussianLikelihoodParams {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_var.len());
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(DEC_LOG_VAR_RANGE.0, DEC_LOG_VAR_RANGE.1))
            .collect();
        GaussianLikelihoodParams { mean, log_var }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }
}

/// z = mu + eps ⊙ exp(log_var / 2)
pub fn reparam_sample(p: &DiagGaussianParams, eps: &[f64]) -> Vec<f64> {
    assert_eq!(eps.len(), p.dim());
    p.mu
        .iter()
        .zip(&p.log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + e * (0.5 * lv).exp())
        .collect()
}

pub fn standard_normal_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Closed-form KL( N(mu, diag var) || N(0, I) ) = 1/2 Σ (mu² + σ² − log σ² − 1).
pub fn kl_diag_to_standard(p: &DiagGaussianParams) -> f64 {
    0.5 * p
        .mu
        .iter()
        .zip(&p.log_var)
        .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

pub fn diag_gaussian_log_pdf(p: &DiagGaussianParams, z: &[f64]) -> f64 {
    assert_eq!(z.len(), p.dim());
    p.mu
        .iter()
        .zip(&p.log_var)
        .zip(z)
        .map(|((&m, &lv), &zv)| {
            let d = zv - m;
            -0.5 * (LN_2PI + lv) - d * d / (2.0 * lv.exp())
        })
        .sum()
}

pub fn standard_normal_log_pdf(z: &[f64]) -> f64 {
    z.iter().map(|&v| -0.5 * (LN_2PI + v * v)).sum()
}

/// Bernoulli log-pmf with probabilities floored/capped by the log clamp.
pub fn bernoulli_log_pmf(p: &BernoulliParams, x: &[f64]) -> f64 {
    assert_eq!(x.len(), p.mean.len());
    x.iter()
        .zip(&p.mean)
        .map(|(&xv, &m)| xv * m.max(LOG_CLAMP).ln() + (1.0 - xv) * (1.0 - m).max(LOG_CLAMP).ln())
        .sum()
}

pub fn gaussian_likelihood_log_pdf(p: &GaussianLikelihoodParams, x: &[f64]) -> f64 {
    assert_eq!(x.len(), p.mean.len());
    p.mean
        .iter()
        .zip(&p.log_var)
        .zip(x)
        .map(|((&m, &lv), &xv)| {
            let d = xv - m;
            -0.5 * (LN_2PI + lv) - d * d / (2.0 * lv.exp())
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Batched graph builders. Row i of every node corresponds to datapoint i.
// ---------------------------------------------------------------------------

/// z = mu + eps ⊙ exp(log_var/2), all `[B, d]`.
pub fn reparam_node(g: &mut Graph, mu: NodeId, log_var: NodeId, eps: NodeId) -> Result<NodeId> {
    let half_lv = g.scale(log_var, 0.5);
    let sigma = g.exp(half_lv);
    let noise = g.mul(eps, sigma)?;
    g.add(mu, noise)
}

/// Per-row closed-form KL to N(0, I): `[B, d] -> [B]`.
pub fn kl_std_rows(g: &mut Graph, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
    let mu2 = g.square(mu);
    let var = g.exp(log_var);
    let s = g.add(mu2, var)?;
    let s = g.sub(s, log_var)?;
    let s = g.add_scalar(s, -1.0);
    let rows = g.row_sum(s)?;
    Ok(g.scale(rows, 0.5))
}

/// Per-row diagonal Gaussian log-pdf of `z` under row-aligned (mu, log_var).
pub fn diag_log_pdf_rows(
    g: &mut Graph,
    z: NodeId,
    mu: NodeId,
    log_var: NodeId,
) -> Result<NodeId> {
    let d = g.sub(z, mu)?;
    let d2 = g.square(d);
    let neg_lv = g.scale(log_var, -1.0);
    let inv_var = g.exp(neg_lv);
    let quad = g.mul(d2, inv_var)?;
    let term = g.add(quad, log_var)?;
    let term = g.add_scalar(term, LN_2PI);
    let rows = g.row_sum(term)?;
    Ok(g.scale(rows, -0.5))
}

/// Per-row standard normal log-pdf: `[B, d] -> [B]`.
pub fn standard_normal_log_pdf_rows(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    let z2 = g.square(z);
    let z2 = g.add_scalar(z2, LN_2PI);
    let rows = g.row_sum(z2)?;
    Ok(g.scale(rows, -0.5))
}

/// Per-row Bernoulli log-pmf of binary data `x` under decoder means.
pub fn bernoulli_log_pmf_rows(g: &mut Graph, mean: NodeId, x: NodeId) -> Result<NodeId> {
    let log_m = g.log(mean);
    let hit = g.mul(x, log_m)?;
    let neg_m = g.scale(mean, -1.0);
    let one_minus_m = g.add_scalar(neg_m, 1.0);
    let log_1m = g.log(one_minus_m);
    let neg_x = g.scale(x, -1.0);
    let one_minus_x = g.add_scalar(neg_x, 1.0);
    let miss = g.mul(one_minus_x, log_1m)?;
    let s = g.add(hit, miss)?;
    g.row_sum(s)
}

/// Per-row Gaussian log-pdf of `x` under decoder (mean, log_var).
pub fn gaussian_log_pdf_rows(
    g: &mut Graph,
    mean: NodeId,
    log_var: NodeId,
    x: NodeId,
) -> Result<NodeId> {
    diag_log_pdf_rows(g, x, mean, log_var)
}
