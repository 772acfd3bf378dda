//! KL-divergence strategies and the density-ratio classifier objective.
//!
//! Three interchangeable estimates of the per-point KL term:
//!   * `kl_standard`   — closed form against the N(0, I) prior,
//!   * `kl_vamp_mc`    — Monte Carlo against a pseudo-input mixture prior,
//!   * `kl_implicit`   — closed form minus the learned log density ratio
//!                       T(z) ≈ ln(q(z) / p(z)), so the effective prior is
//!                       the aggregated posterior without representing it.
//!
//! The ratio net is trained as a logistic classifier between samples from
//! the aggregated posterior and samples from N(0, I) (`ratio_loss`).

use crate::dist::{self, DiagGaussianParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{EncoderNet, RatioNet, VampComponents};
use crate::nn::ParamSet;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Logits are clamped to this symmetric range before any sigmoid/log,
/// which keeps every downstream log finite without changing the optimum.
pub const T_CLAMP: f64 = 30.0;

/// One KL estimate, split into its analytic and ratio-corrected parts.
///
/// `total = closed_form_part - ratio_part`; the ratio part is zero for the
/// standard prior and folded into `total` directly for the mixture prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub closed_form_part: f64,
    pub ratio_part: f64,
    pub total: f64,
}

/// Closed-form KL(q(z|x) || N(0, I)).
pub fn kl_standard(p: &DiagGaussianParams) -> KlEstimate {
    let total = dist::kl_diag_to_standard(p);
    KlEstimate {
        closed_form_part: total,
        ratio_part: 0.0,
        total,
    }
}

/// Monte Carlo KL(q(z|x) || mixture prior) over samples already drawn
/// from q via the reparameterization trick.
pub fn kl_vamp_mc(
    p: &DiagGaussianParams,
    z_samples: &[Vec<f64>],
    comps: &VampComponents,
) -> Result<KlEstimate> {
    if z_samples.is_empty() {
        return Err(Error::Graph("kl_vamp_mc needs at least one z sample".into()));
    }
    let mut acc = 0.0;
    for z in z_samples {
        acc += dist::diag_gaussian_log_pdf(p, z) - comps.log_prior(z);
    }
    let total = acc / z_samples.len() as f64;
    Ok(KlEstimate {
        closed_form_part: total,
        ratio_part: 0.0,
        total,
    })
}

/// KL against the implicit aggregated-posterior prior:
/// closed-form KL to N(0, I) minus the mean ratio logit over q-samples.
pub fn kl_implicit(
    p: &DiagGaussianParams,
    z_samples: &[Vec<f64>],
    rn: &RatioNet,
    params: &ParamSet,
) -> Result<KlEstimate> {
    if z_samples.is_empty() {
        return Err(Error::Graph("kl_implicit needs at least one z sample".into()));
    }
    let dz = p.dim();
    let mut flat = Vec::with_capacity(z_samples.len() * dz);
    for z in z_samples {
        flat.extend_from_slice(z);
    }
    let zt = Tensor::new(vec![z_samples.len(), dz], flat)?;
    let logits = rn.forward(params, &zt)?;
    let ratio_part = logits.iter().sum::<f64>() / logits.len() as f64;
    let closed_form_part = dist::kl_diag_to_standard(p);
    Ok(KlEstimate {
        closed_form_part,
        ratio_part,
        total: closed_form_part - ratio_part,
    })
}

/// Per-row implicit KL estimate as a graph node: `kl_std_rows - t_rows`.
///
/// `t_rows` must already be the `[B]` ratio-logit node (built frozen and
/// without dropout when this feeds the generative loss).
pub fn kl_implicit_rows(
    g: &mut Graph,
    mu: NodeId,
    log_var: NodeId,
    t_rows: NodeId,
) -> Result<NodeId> {
    let closed = dist::kl_std_rows(g, mu, log_var)?;
    g.sub(closed, t_rows)
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Classifier objective from precomputed logits:
/// mean ln sigma(T(z_q)) + mean ln(1 - sigma(T(z_p))), to be maximized.
pub fn ratio_loss_from_logits(t_agg: &[f64], t_prior: &[f64]) -> Result<f64> {
    if t_agg.is_empty() || t_prior.is_empty() {
        return Err(Error::Graph("ratio_loss needs non-empty batches".into()));
    }
    if t_agg.len() != t_prior.len() {
        return Err(Error::ShapeMismatch {
            op: "ratio_loss".into(),
            detail: format!(
                "class batches must match: {} vs {}",
                t_agg.len(),
                t_prior.len()
            ),
        });
    }
    let pos: f64 = t_agg
        .iter()
        .map(|&t| -softplus(-t.clamp(-T_CLAMP, T_CLAMP)))
        .sum();
    let neg: f64 = t_prior
        .iter()
        .map(|&t| -softplus(t.clamp(-T_CLAMP, T_CLAMP)))
        .sum();
    Ok(pos / t_agg.len() as f64 + neg / t_prior.len() as f64)
}

/// Classifier objective evaluated through the net (no dropout). The
/// training loop uses `ratio_loss_node` instead so dropout masks apply.
pub fn ratio_loss(
    rn: &RatioNet,
    params: &ParamSet,
    z_agg: &Tensor,
    z_prior: &Tensor,
) -> Result<f64> {
    let t_agg = rn.forward(params, z_agg)?;
    let t_prior = rn.forward(params, z_prior)?;
    ratio_loss_from_logits(&t_agg, &t_prior)
}

/// Graph node for the classifier objective given `[B]` logit nodes for the
/// two sample classes. Uses ln sigma(t) = -softplus(-t) built from
/// exp/log primitives, which stays finite inside the clamp range.
pub fn ratio_loss_node(g: &mut Graph, t_agg: NodeId, t_prior: NodeId) -> Result<NodeId> {
    let sa = g.shape_of(t_agg).to_vec();
    let sp = g.shape_of(t_prior).to_vec();
    if sa != sp {
        return Err(Error::ShapeMismatch {
            op: "ratio_loss".into(),
            detail: format!("class batches must match: {:?} vs {:?}", sa, sp),
        });
    }
    let pos = softplus_node(g, t_agg, true);
    let neg = softplus_node(g, t_prior, false);
    let pos_mean = g.mean(pos);
    let neg_mean = g.mean(neg);
    let pos_neg = g.scale(pos_mean, -1.0);
    let neg_neg = g.scale(neg_mean, -1.0);
    g.add(pos_neg, neg_neg)
}

/// softplus(-t) when `negate`, else softplus(t); t clamped first.
fn softplus_node(g: &mut Graph, t: NodeId, negate: bool) -> NodeId {
    let tc = g.clamp(t, -T_CLAMP, T_CLAMP);
    let x = if negate { g.scale(tc, -1.0) } else { tc };
    let e = g.exp(x);
    let p = g.add_scalar(e, 1.0);
    g.log(p)
}

/// Monte Carlo estimate of E_q[grad_phi ln q_phi(z)] for a single point's
/// posterior, with a chunked standard error. The expectation is exactly
/// zero, which is what lets the trainer treat T as constant in phi.
#[derive(Debug, Clone, Copy)]
pub struct ScoreResidual {
    /// Euclidean norm of the averaged score gradient.
    pub residual: f64,
    /// Standard error of that norm, estimated across sample chunks.
    pub se: f64,
}

/// Estimate the score-gradient residual for encoder parameters at `x`.
///
/// Samples z ~ q(z|x) in chunks, differentiates mean ln q_phi(z) with z
/// held fixed (constant bindings, not reparameterized), and averages the
/// per-chunk gradients.
pub fn score_gradient_residual(
    enc: &EncoderNet,
    params: &ParamSet,
    x: &[f64],
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<ScoreResidual> {
    let n_chunks = n_samples.clamp(1, 20);
    let chunk = n_samples.div_ceil(n_chunks);
    let post = enc.encode_point(params, x)?;
    let dz = post.dim();

    let mut g = Graph::new();
    let x_node = g.input("x", &[chunk, x.len()]);
    let (mu, lv) = enc.build(&mut g, x_node, false)?;
    let z_node = g.input("z", &[chunk, dz]);
    let log_q = dist::diag_log_pdf_rows(&mut g, z_node, mu, lv)?;
    let obj = g.mean(log_q);

    let names: Vec<String> = params.group("enc.");
    let x_tile = Tensor::new(
        vec![chunk, x.len()],
        x.iter().copied().cycle().take(chunk * x.len()).collect(),
    )?;

    let mut chunk_grads: Vec<Vec<f64>> = Vec::with_capacity(n_chunks);
    for _ in 0..n_chunks {
        let mut zs = Vec::with_capacity(chunk * dz);
        for _ in 0..chunk {
            let eps: Vec<f64> = (0..dz).map(|_| rng.sample(StandardNormal)).collect();
            zs.extend(dist::reparam_sample(&post, &eps));
        }
        let mut bindings = std::collections::HashMap::new();
        params.bind_into(&mut bindings);
        bindings.insert("x".to_string(), x_tile.clone());
        bindings.insert("z".to_string(), Tensor::new(vec![chunk, dz], zs)?);
        let eval = g.forward(&bindings)?;
        let grads = eval.backward(&g, obj)?;
        let mut flat = Vec::new();
        for name in &names {
            flat.extend_from_slice(grads[name].data());
        }
        chunk_grads.push(flat);
    }

    let dim = chunk_grads[0].len();
    let nc = n_chunks as f64;
    let mut mean = vec![0.0; dim];
    for cg in &chunk_grads {
        for (m, &v) in mean.iter_mut().zip(cg) {
            *m += v / nc;
        }
    }
    let mut se_sq = 0.0;
    if n_chunks > 1 {
        for j in 0..dim {
            let var: f64 = chunk_grads
                .iter()
                .map(|cg| (cg[j] - mean[j]).powi(2))
                .sum::<f64>()
                / (nc - 1.0);
            se_sq += var / nc;
        }
    }
    let residual = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ScoreResidual {
        residual,
        se: se_sq.sqrt(),
    })
}
