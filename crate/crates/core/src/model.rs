//! The four networks and prior parameterizations: encoder q(z|x),
//! decoder p(x|z), the density-ratio logit T(z), and VampPrior
//! pseudo-inputs.
//!
//! Parameter groups by name prefix: `enc.` (phi), `dec.` (theta),
//! `ratio.` (psi), `vamp.` (pseudo-inputs).


use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint;
use crate::dist::{self, DiagGaussianParams, DEC_LOG_VAR_RANGE, ENC_LOG_VAR_RANGE, LN_2PI};
use crate::error::{Error, Result};
use crate::graph::{log_sum_exp, Graph, NodeId};
use crate::nn::{Activation, Dense, GatedDense, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    Bernoulli,
    Gaussian,
}

/// Which prior the KL term is computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    StandardGaussian,
    VampPrior { k_mix: usize },
    ImplicitOptimal,
}

impl PriorMode {
    pub fn tag(&self) -> &'static str {
        match self {
            PriorMode::StandardGaussian => "standard",
            PriorMode::VampPrior { .. } => "vamp",
            PriorMode::ImplicitOptimal => "implicit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub likelihood: Likelihood,
}

impl Arch {
    pub fn onehot(hidden_dim: usize) -> Self {
        Arch { input_dim: 4, hidden_dim, latent_dim: 2, likelihood: Likelihood::Bernoulli }
    }
}

/// Encoder: two gated hidden layers plus linear mu / log-var heads.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub l1: GatedDense,
    pub l2: GatedDense,
    pub mu_head: Dense,
    pub lv_head: Dense,
}

impl EncoderNet {
    pub fn new(arch: &Arch) -> Self {
        let (d, h, z) = (arch.input_dim, arch.hidden_dim, arch.latent_dim);
        EncoderNet {
            l1: GatedDense::new("enc.l1", d, h),
            l2: GatedDense::new("enc.l2", h, h),
            mu_head: Dense::new("enc.mu", h, z, Activation::Identity),
            lv_head: Dense::new("enc.lv", h, z, Activation::Identity),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.l1.init(params, rng);
        self.l2.init(params, rng);
        self.mu_head.init(params, rng);
        self.lv_head.init(params, rng);
    }

    /// Build `(mu, log_var)` nodes for a `[B, D]` input.
    pub fn build(&self, g: &mut Graph, x: NodeId, freeze: bool) -> Result<(NodeId, NodeId)> {
        let h1 = self.l1.build(g, x, freeze)?;
        let h2 = self.l2.build(g, h1, freeze)?;
        let mu = self.mu_head.build(g, h2, freeze)?;
        let lv = self.lv_head.build(g, h2, freeze)?;
        let lv = g.clamp(lv, ENC_LOG_VAR_RANGE.0, ENC_LOG_VAR_RANGE.1);
        Ok((mu, lv))
    }

    /// Pure batched forward: `[B, D] -> ([B, dz], [B, dz])`.
    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let h1 = self.l1.forward(params, x)?;
        let h2 = self.l2.forward(params, &h1)?;
        let mu = self.mu_head.forward(params, &h2)?;
        let lv = self
            .lv_head
            .forward(params, &h2)?
            .map(|v| v.clamp(ENC_LOG_VAR_RANGE.0, ENC_LOG_VAR_RANGE.1));
        Ok((mu, lv))
    }

    pub fn encode_point(&self, params: &ParamSet, x: &[f64]) -> Result<DiagGaussianParams> {
        let xt = Tensor::new(vec![1, x.len()], x.to_vec())?;
        let (mu, lv) = self.forward(params, &xt)?;
        Ok(DiagGaussianParams::new(mu.into_data(), lv.into_data()))
    }
}

/// Decoder output nodes: sigmoid-constrained means, plus a clamped
/// log-variance head for the Gaussian likelihood.
pub struct DecoderNodes {
    pub mean: NodeId,
    pub log_var: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct DecoderNet {
    pub l1: GatedDense,
    pub l2: GatedDense,
    pub mean_head: Dense,
    pub lv_head: Option<Dense>,
}

impl DecoderNet {
    pub fn new(arch: &Arch) -> Self {
        let (d, h, z) = (arch.input_dim, arch.hidden_dim, arch.latent_dim);
        DecoderNet {
            l1: GatedDense::new("dec.l1", z, h),
            l2: GatedDense::new("dec.l2", h, h),
            mean_head: Dense::new("dec.mean", h, d, Activation::Sigmoid),
            lv_head: match arch.likelihood {
                Likelihood::Bernoulli => None,
                Likelihood::Gaussian => Some(Dense::new("dec.lv", h, d, Activation::Identity)),
            },
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.l1.init(params, rng);
        self.l2.init(params, rng);
        self.mean_head.init(params, rng);
        if let Some(lv) = &self.lv_head {
            lv.init(params, rng);
        }
    }

    pub fn build(&self, g: &mut Graph, z: NodeId, freeze: bool) -> Result<DecoderNodes> {
        let h1 = self.l1.build(g, z, freeze)?;
        let h2 = self.l2.build(g, h1, freeze)?;
        let mean = self.mean_head.build(g, h2, freeze)?;
        let log_var = match &self.lv_head {
            Some(head) => {
                let lv = head.build(g, h2, freeze)?;
                Some(g.clamp(lv, DEC_LOG_VAR_RANGE.0, DEC_LOG_VAR_RANGE.1))
            }
            None => None,
        };
        Ok(DecoderNodes { mean, log_var })
    }

    /// Pure batched forward: `[B, dz] -> (means, Option<log_var>)`.
    pub fn forward(&self, params: &ParamSet, z: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let h1 = self.l1.forward(params, z)?;
        let h2 = self.l2.forward(params, &h1)?;
        let mean = self.mean_head.forward(params, &h2)?;
        let lv = match &self.lv_head {
            Some(head) => Some(
                head.forward(params, &h2)?
                    .map(|v| v.clamp(DEC_LOG_VAR_RANGE.0, DEC_LOG_VAR_RANGE.1)),
            ),
            None => None,
        };
        Ok((mean, lv))
    }
}

/// Density-ratio logit network: two tanh layers with dropout, scalar head.
/// The output is the unconstrained logit; sigma(T) is only formed in losses.
#[derive(Debug, Clone)]
pub struct RatioNet {
    pub l1: Dense,
    pub l2: Dense,
    pub head: Dense,
}

impl RatioNet {
    pub fn new(arch: &Arch) -> Self {
        let (h, z) = (arch.hidden_dim, arch.latent_dim);
        RatioNet {
            l1: Dense::new("ratio.l1", z, h, Activation::Tanh),
            l2: Dense::new("ratio.l2", h, h, Activation::Tanh),
            head: Dense::new("ratio.out", h, 1, Activation::Identity),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.l1.init(params, rng);
        self.l2.init(params, rng);
        self.head.init(params, rng);
    }

    /// Build `T(z)` as a `[B]` node. `masks` are inverted-dropout masks for
    /// the two hidden layers (train mode); `None` means eval mode.
    pub fn build(
        &self,
        g: &mut Graph,
        z: NodeId,
        freeze: bool,
        masks: Option<(NodeId, NodeId)>,
    ) -> Result<NodeId> {
        let mut h1 = self.l1.build(g, z, freeze)?;
        if let Some((m1, _)) = masks {
            h1 = g.mul(h1, m1)?;
        }
        let mut h2 = self.l2.build(g, h1, freeze)?;
        if let Some((_, m2)) = masks {
            h2 = g.mul(h2, m2)?;
        }
        let t = self.head.build(g, h2, freeze)?;
        g.row_sum(t)
    }

    /// Eval-mode logits for a `[B, dz]` batch.
    pub fn forward(&self, params: &ParamSet, z: &Tensor) -> Result<Vec<f64>> {
        let h1 = self.l1.forward(params, z)?;
        let h2 = self.l2.forward(params, &h1)?;
        Ok(self.head.forward(params, &h2)?.into_data())
    }

    pub fn logit(&self, params: &ParamSet, z: &[f64]) -> Result<f64> {
        let zt = Tensor::new(vec![1, z.len()], z.to_vec())?;
        Ok(self.forward(params, &zt)?[0])
    }
}

pub const VAMP_PARAM: &str = "vamp.u";

/// VampPrior pseudo-inputs: K data-shaped vectors, clipped to [0, 1]
/// wherever they feed the encoder.
#[derive(Debug, Clone, Copy)]
pub struct VampPseudoInputs {
    pub k_mix: usize,
    pub input_dim: usize,
}

impl VampPseudoInputs {
    /// Initialize from random training rows perturbed by N(0, 0.01) noise.
    pub fn init_from_data(
        &self,
        params: &mut ParamSet,
        train: &Tensor,
        rng: &mut impl Rng,
    ) {
        let n = train.rows();
        let mut data = Vec::with_capacity(self.k_mix * self.input_dim);
        for _ in 0..self.k_mix {
            let row = train.row(rng.gen_range(0..n));
            for &v in row {
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.1;
                data.push(v + noise);
            }
        }
        params.insert(
            VAMP_PARAM,
            Tensor::new(vec![self.k_mix, self.input_dim], data).expect("vamp shape"),
        );
    }

    /// Clipped pseudo-input node (the clipped-relu `min(max(u,0),1)`).
    pub fn build(&self, g: &mut Graph) -> NodeId {
        let u = g.param(VAMP_PARAM, &[self.k_mix, self.input_dim]);
        g.clamp(u, 0.0, 1.0)
    }

    pub fn clipped(&self, params: &ParamSet) -> Tensor {
        params.get(VAMP_PARAM).map(|v| v.clamp(0.0, 1.0))
    }
}

/// Mixture components of the VampPrior: encoder outputs at the clipped
/// pseudo-inputs. Precomputed once, then queried per z.
pub struct VampComponents {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl VampComponents {
    pub fn compute(enc: &EncoderNet, params: &ParamSet, u: &VampPseudoInputs) -> Result<Self> {
        let clipped = u.clipped(params);
        let (mu, log_var) = enc.forward(params, &clipped)?;
        Ok(VampComponents { mu, log_var })
    }

    pub fn k_mix(&self) -> usize {
        self.mu.rows()
    }

    /// log( (1/K) sum_k N(z | mu_k, var_k) ) via log-sum-exp.
    pub fn log_prior(&self, z: &[f64]) -> f64 {
        let k = self.k_mix();
        let logs: Vec<f64> = (0..k)
            .map(|i| {
                let p = DiagGaussianParams::new(self.mu.row(i).to_vec(), self.log_var.row(i).to_vec());
                dist::diag_gaussian_log_pdf(&p, z)
            })
            .collect();
        log_sum_exp(&logs) - (k as f64).ln()
    }
}

/// Build per-row VampPrior log-density for a `[B, dz]` z node.
///
/// The pairwise quadratic form between every z row and every mixture
/// component is assembled from three matmuls:
///   sum_d (z_id - mu_kd)^2 / var_kd
///     = [z^2][1/var]^T - 2 [z][mu/var]^T + bias_k(sum_d mu^2/var).
pub fn vamp_log_prior_rows(
    g: &mut Graph,
    enc: &EncoderNet,
    u: &VampPseudoInputs,
    z: NodeId,
    freeze: bool,
) -> Result<NodeId> {
    let dz = u_latent_dim(g, z);
    let u_node = u.build(g);
    let u_node = if freeze { g.stop_grad(u_node) } else { u_node };
    let (mu_u, lv_u) = enc.build(g, u_node, freeze)?;

    let neg_lv = g.scale(lv_u, -1.0);
    let inv_var = g.exp(neg_lv); // [K, dz]

    let z2 = g.square(z);
    let inv_var_t = g.transpose(inv_var)?;
    let a = g.matmul(z2, inv_var_t)?; // [B, K]

    let mu_over_var = g.mul(mu_u, inv_var)?;
    let mov_t = g.transpose(mu_over_var)?;
    let zm = g.matmul(z, mov_t)?;
    let b = g.scale(zm, -2.0); // [B, K]

    let mu2 = g.square(mu_u);
    let mu2_over_var = g.mul(mu2, inv_var)?;
    let c = g.row_sum(mu2_over_var)?; // [K]

    let lv_sum = g.row_sum(lv_u)?; // [K]

    let quad = g.add(a, b)?;
    let quad = g.add_bias(quad, c)?;
    let full = g.add_bias(quad, lv_sum)?;
    let full = g.add_scalar(full, dz as f64 * LN_2PI);
    let log_pdf = g.scale(full, -0.5); // [B, K] component log-densities

    let lse = g.row_log_sum_exp(log_pdf)?;
    Ok(g.add_scalar(lse, -((u_latent_k(g, log_pdf)) as f64).ln()))
}

fn u_latent_dim(g: &Graph, z: NodeId) -> usize {
    g.shape_of(z)[1]
}

fn u_latent_k(g: &Graph, log_pdf: NodeId) -> usize {
    g.shape_of(log_pdf)[1]
}

/// All parameter sets plus architecture metadata, serialized together.
pub struct ModelBundle {
    pub arch: Arch,
    pub prior: PriorMode,
    pub params: ParamSet,
}

impl ModelBundle {
    /// Initialize all networks. `train` is needed to anchor VampPrior
    /// pseudo-inputs; it may be `None` for other prior modes.
    pub fn init(arch: Arch, prior: PriorMode, train: Option<&Tensor>, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        EncoderNet::new(&arch).init(&mut params, rng);
        DecoderNet::new(&arch).init(&mut params, rng);
        RatioNet::new(&arch).init(&mut params, rng);
        if let PriorMode::VampPrior { k_mix } = prior {
            let train = train.ok_or_else(|| {
                Error::Config("VampPrior initialization needs training data".into())
            })?;
            let u = VampPseudoInputs { k_mix, input_dim: arch.input_dim };
            u.init_from_data(&mut params, train, rng);
        }
        Ok(ModelBundle { arch, prior, params })
    }

    pub fn encoder(&self) -> EncoderNet {
        EncoderNet::new(&self.arch)
    }

    pub fn decoder(&self) -> DecoderNet {
        DecoderNet::new(&self.arch)
    }

    pub fn ratio_net(&self) -> RatioNet {
        RatioNet::new(&self.arch)
    }

    pub fn vamp_inputs(&self) -> Option<VampPseudoInputs> {
        match self.prior {
            PriorMode::VampPrior { k_mix } => {
                Some(VampPseudoInputs { k_mix, input_dim: self.arch.input_dim })
            }
            _ => None,
        }
    }

    /// Parameter group names updated during the VAE step (theta, phi, and
    /// lambda for VampPrior).
    pub fn vae_group(&self) -> Vec<String> {
        let mut names = self.params.group("enc.");
        names.extend(self.params.group("dec."));
        names.extend(self.params.group("vamp."));
        names
    }

    /// Parameter group updated during the ratio step (psi).
    pub fn ratio_group(&self) -> Vec<String> {
        self.params.group("ratio.")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut out = self.params.clone();
        let meta = [
            ("meta/input_dim", self.arch.input_dim as f64),
            ("meta/hidden_dim", self.arch.hidden_dim as f64),
            ("meta/latent_dim", self.arch.latent_dim as f64),
            (
                "meta/likelihood",
                match self.arch.likelihood {
                    Likelihood::Bernoulli => 0.0,
                    Likelihood::Gaussian => 1.0,
                },
            ),
            (
                "meta/prior",
                match self.prior {
                    PriorMode::StandardGaussian => 0.0,
                    PriorMode::VampPrior { .. } => 1.0,
                    PriorMode::ImplicitOptimal => 2.0,
                },
            ),
            (
                "meta/k_mix",
                match self.prior {
                    PriorMode::VampPrior { k_mix } => k_mix as f64,
                    _ => 0.0,
                },
            ),
        ];
        for (name, v) in meta {
            out.insert(name, Tensor::scalar(v));
        }
        checkpoint::save_params(&out, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let loaded = checkpoint::load_params(path)?;
        let meta = |name: &str| -> Result<f64> {
            if loaded.contains(name) {
                Ok(loaded.get(name).item())
            } else {
                Err(Error::Checkpoint(format!("missing metadata record `{name}`")))
            }
        };
        let likelihood = if meta("meta/likelihood")? == 0.0 {
            Likelihood::Bernoulli
        } else {
            Likelihood::Gaussian
        };
        let arch = Arch {
            input_dim: meta("meta/input_dim")? as usize,
            hidden_dim: meta("meta/hidden_dim")? as usize,
            latent_dim: meta("meta/latent_dim")? as usize,
            likelihood,
        };
        let prior = match meta("meta/prior")? as usize {
            0 => PriorMode::StandardGaussian,
            1 => PriorMode::VampPrior { k_mix: meta("meta/k_mix")? as usize },
            2 => PriorMode::ImplicitOptimal,
            other => return Err(Error::Checkpoint(format!("unknown prior tag {other}"))),
        };
        let mut params = ParamSet::new();
        for (name, t) in loaded.iter() {
            if !name.starts_with("meta/") {
                params.insert(name.clone(), t.clone());
            }
        }
        Ok(ModelBundle { arch, prior, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::finite_diff_check;
    use std::collections::HashMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_arch() -> Arch {
        Arch { input_dim: 4, hidden_dim: 8, latent_dim: 2, likelihood: Likelihood::Bernoulli }
    }

    fn toy_bundle(seed: u64) -> ModelBundle {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        ModelBundle::init(toy_arch(), PriorMode::StandardGaussian, None, &mut rng).unwrap()
    }

    #[test]
    fn encode_batch_shape_contract() {
        let bundle = toy_bundle(1);
        let x = Tensor::new(vec![5, 4], vec![0.25; 20]).unwrap();
        let (mu, lv) = bundle.encoder().forward(&bundle.params, &x).unwrap();
        assert_eq!(mu.shape(), &[5, 2]);
        assert_eq!(lv.shape(), &[5, 2]);
    }

    #[test]
    fn zero_weight_encoder_outputs_head_bias() {
        let mut bundle = toy_bundle(2);
        for name in bundle.params.group("enc.") {
            let shape = bundle.params.get(&name).shape().to_vec();
            bundle.params.insert(name, Tensor::zeros(&shape));
        }
        bundle.params.insert("enc.mu.b", Tensor::vector(vec![0.7, -0.3]));
        let x = Tensor::new(vec![3, 4], vec![0.9, 0.1, 0.5, 0.0, 1.0, 1.0, 0.2, 0.3, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (mu, _) = bundle.encoder().forward(&bundle.params, &x).unwrap();
        for i in 0..3 {
            assert_eq!(mu.row(i), &[0.7, -0.3]);
        }
    }

    #[test]
    fn decoder_means_stay_in_unit_interval() {
        let bundle = toy_bundle(3);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..100 {
            let z = Tensor::new(vec![1, 2], vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]).unwrap();
            let (mean, _) = bundle.decoder().forward(&bundle.params, &z).unwrap();
            assert!(mean.data().iter().all(|&m| m > 0.0 && m < 1.0));
        }
    }

    #[test]
    fn zero_weight_decoder_mean_is_half() {
        let mut bundle = toy_bundle(5);
        for name in bundle.params.group("dec.") {
            let shape = bundle.params.get(&name).shape().to_vec();
            bundle.params.insert(name, Tensor::zeros(&shape));
        }
        let z = Tensor::new(vec![1, 2], vec![1.3, -0.4]).unwrap();
        let (mean, _) = bundle.decoder().forward(&bundle.params, &z).unwrap();
        assert!(mean.data().iter().all(|&m| (m - 0.5).abs() < 1e-12));
    }

    #[test]
    fn ratio_logit_zero_net_is_bias() {
        let mut bundle = toy_bundle(6);
        for name in bundle.params.group("ratio.") {
            let shape = bundle.params.get(&name).shape().to_vec();
            bundle.params.insert(name, Tensor::zeros(&shape));
        }
        bundle.params.insert("ratio.out.b", Tensor::vector(vec![1.25]));
        let t = bundle.ratio_net().logit(&bundle.params, &[0.3, -0.9]).unwrap();
        assert_eq!(t, 1.25);
    }

    #[test]
    fn ratio_eval_is_reproducible() {
        let bundle = toy_bundle(7);
        let a = bundle.ratio_net().logit(&bundle.params, &[0.5, 0.5]).unwrap();
        let b = bundle.ratio_net().logit(&bundle.params, &[0.5, 0.5]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn encoder_gradients_pass_finite_diff() {
        let bundle = toy_bundle(8);
        let enc = bundle.encoder();
        let mut g = Graph::new();
        let x = g.input("x", &[2, 4]);
        let (mu, lv) = enc.build(&mut g, x, false).unwrap();
        let both = g.concat_cols(&[mu, lv]).unwrap();
        let sq = g.square(both);
        let out = g.mean(sq);
        let mut bindings = HashMap::new();
        bindings.insert(
            "x".to_string(),
            Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
        );
        bundle.params.bind_into(&mut bindings);
        let names = bundle.params.group("enc.");
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let err = finite_diff_check(&g, &bindings, out, &refs, 1e-5).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn vamp_log_prior_single_component() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let arch = toy_arch();
        let train = Tensor::new(vec![4, 4], vec![
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]).unwrap();
        let bundle =
            ModelBundle::init(arch, PriorMode::VampPrior { k_mix: 1 }, Some(&train), &mut rng)
                .unwrap();
        let u = bundle.vamp_inputs().unwrap();
        let comps = VampComponents::compute(&bundle.encoder(), &bundle.params, &u).unwrap();
        let z = [0.3, -0.4];
        let p = DiagGaussianParams::new(comps.mu.row(0).to_vec(), comps.log_var.row(0).to_vec());
        let direct = dist::diag_gaussian_log_pdf(&p, &z);
        assert!((comps.log_prior(&z) - direct).abs() < 1e-12);
    }

    #[test]
    fn vamp_duplicate_components_collapse() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let arch = toy_arch();
        let train = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut bundle =
            ModelBundle::init(arch, PriorMode::VampPrior { k_mix: 2 }, Some(&train), &mut rng)
                .unwrap();
        // force u1 == u2
        let row = bundle.params.get(VAMP_PARAM).row(0).to_vec();
        let mut dup = row.clone();
        dup.extend_from_slice(&row);
        bundle.params.insert(VAMP_PARAM, Tensor::new(vec![2, 4], dup).unwrap());
        let u = bundle.vamp_inputs().unwrap();
        let comps = VampComponents::compute(&bundle.encoder(), &bundle.params, &u).unwrap();
        let z = [0.1, 0.9];
        let p = DiagGaussianParams::new(comps.mu.row(0).to_vec(), comps.log_var.row(0).to_vec());
        let single = dist::diag_gaussian_log_pdf(&p, &z);
        assert!((comps.log_prior(&z) - single).abs() < 1e-12);
    }

    #[test]
    fn vamp_log_prior_matches_naive_sum_and_permutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let arch = toy_arch();
        let train = Tensor::new(vec![4, 4], vec![
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]).unwrap();
        let bundle =
            ModelBundle::init(arch, PriorMode::VampPrior { k_mix: 3 }, Some(&train), &mut rng)
                .unwrap();
        let u = bundle.vamp_inputs().unwrap();
        let comps = VampComponents::compute(&bundle.encoder(), &bundle.params, &u).unwrap();
        let z = [0.25, -1.5];
        // naive-sum oracle in plain arithmetic
        let mut naive = 0.0;
        for k in 0..3 {
            let p = DiagGaussianParams::new(comps.mu.row(k).to_vec(), comps.log_var.row(k).to_vec());
            naive += dist::diag_gaussian_log_pdf(&p, &z).exp();
        }
        let naive = (naive / 3.0).ln();
        assert!((comps.log_prior(&z) - naive).abs() < 1e-10);

        // permutation invariance of the mixture
        let permuted = VampComponents {
            mu: Tensor::new(vec![3, 2], {
                let mut v = comps.mu.row(2).to_vec();
                v.extend_from_slice(comps.mu.row(0));
                v.extend_from_slice(comps.mu.row(1));
                v
            }).unwrap(),
            log_var: Tensor::new(vec![3, 2], {
                let mut v = comps.log_var.row(2).to_vec();
                v.extend_from_slice(comps.log_var.row(0));
                v.extend_from_slice(comps.log_var.row(1));
                v
            }).unwrap(),
        };
        assert!((comps.log_prior(&z) - permuted.log_prior(&z)).abs() < 1e-12);
    }

    #[test]
    fn vamp_graph_rows_match_pure() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let arch = toy_arch();
        let train = Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let bundle =
            ModelBundle::init(arch, PriorMode::VampPrior { k_mix: 3 }, Some(&train), &mut rng)
                .unwrap();
        let u = bundle.vamp_inputs().unwrap();
        let enc = bundle.encoder();

        let mut g = Graph::new();
        let z = g.input("z", &[4, 2]);
        let lp = vamp_log_prior_rows(&mut g, &enc, &u, z, false).unwrap();
        let z_t = Tensor::new(
            vec![4, 2],
            (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let mut bindings = HashMap::new();
        bindings.insert("z".to_string(), z_t.clone());
        bundle.params.bind_into(&mut bindings);
        let eval = g.forward(&bindings).unwrap();

        let comps = VampComponents::compute(&enc, &bundle.params, &u).unwrap();
        for i in 0..4 {
            let pure = comps.log_prior(z_t.row(i));
            assert!((eval.value(lp).data()[i] - pure).abs() < 1e-10);
        }
    }

    #[test]
    fn vamp_prior_normalizes_on_2d_grid() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let arch = toy_arch();
        let train = Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let bundle =
            ModelBundle::init(arch, PriorMode::VampPrior { k_mix: 2 }, Some(&train), &mut rng)
                .unwrap();
        let u = bundle.vamp_inputs().unwrap();
        let comps = VampComponents::compute(&bundle.encoder(), &bundle.params, &u).unwrap();
        let n = 600;
        let (a, b) = (-8.0, 8.0);
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let w = if (i == 0 || i == n) && (j == 0 || j == n) {
                    0.25
                } else if i == 0 || i == n || j == 0 || j == n {
                    0.5
                } else {
                    1.0
                };
                acc += w * comps.log_prior(&[a + i as f64 * h, a + j as f64 * h]).exp();
            }
        }
        assert!((acc * h * h - 1.0).abs() < 1e-2, "integral {}", acc * h * h);
    }

    #[test]
    fn bundle_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let train = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let bundle = ModelBundle::init(
            toy_arch(),
            PriorMode::VampPrior { k_mix: 2 },
            Some(&train),
            &mut rng,
        )
        .unwrap();
        bundle.save(&path).unwrap();
        let loaded = ModelBundle::load(&path).unwrap();
        assert_eq!(loaded.arch, bundle.arch);
        assert_eq!(loaded.prior, bundle.prior);
        assert_eq!(loaded.params.len(), bundle.params.len());
        for (name, t) in bundle.params.iter() {
            assert_eq!(loaded.params.get(name), t);
        }
    }
}
