//! Model evaluation: ELBO, importance-sampled log-likelihood, latent
//! exports, and multi-seed aggregation.
//!
//! For the implicit prior the marginal density of the prior is never
//! represented; evaluation substitutes ln q(z) ≈ ln p(z) + T(z), which is
//! the identity the ratio net was trained to satisfy. Reported numbers for
//! that mode are therefore estimator-dependent approximations.

use crate::dist::{self, DiagGaussianParams};
use crate::error::{Error, Result};
use crate::graph::log_sum_exp;
use crate::model::{
    DecoderNet, EncoderNet, Likelihood, ModelBundle, PriorMode, RatioNet, VampComponents,
};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Mean ELBO over a batch, split into its logged components.
#[derive(Debug, Clone, Copy)]
pub struct ElboParts {
    pub elbo: f64,
    /// Mean closed-form KL to N(0, I) (for the mixture prior: the MC KL).
    pub kl_closed: f64,
    /// Mean ratio logit correction (zero unless the prior is implicit).
    pub kl_ratio: f64,
    pub recon: f64,
}

impl ElboParts {
    pub fn kl_total(&self) -> f64 {
        self.kl_closed - self.kl_ratio
    }
}

/// Eval-mode view of a model bundle with the prior context precomputed.
pub struct Evaluator<'a> {
    pub bundle: &'a ModelBundle,
    enc: EncoderNet,
    dec: DecoderNet,
    rn: Option<RatioNet>,
    comps: Option<VampComponents>,
}

impl<'a> Evaluator<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Result<Self> {
        let enc = bundle.encoder();
        let dec = bundle.decoder();
        let rn = match bundle.prior {
            PriorMode::ImplicitOptimal => Some(bundle.ratio_net()),
            _ => None,
        };
        let comps = match bundle.vamp_inputs() {
            Some(u) => Some(VampComponents::compute(&enc, &bundle.params, &u)?),
            None => None,
        };
        Ok(Evaluator { bundle, enc, dec, rn, comps })
    }

    pub fn latent_dim(&self) -> usize {
        self.bundle.arch.latent_dim
    }

    /// ln prior(z); for the implicit prior this is the ln p(z) + T(z)
    /// substitution described in the module docs.
    pub fn log_prior(&self, z: &[f64]) -> Result<f64> {
        match self.bundle.prior {
            PriorMode::StandardGaussian => Ok(dist::standard_normal_log_pdf(z)),
            PriorMode::VampPrior { .. } => {
                Ok(self.comps.as_ref().expect("vamp components").log_prior(z))
            }
            PriorMode::ImplicitOptimal => {
                let t = self
                    .rn
                    .as_ref()
                    .expect("ratio net")
                    .logit(&self.bundle.params, z)?;
                Ok(dist::standard_normal_log_pdf(z) + t)
            }
        }
    }

    fn recon_log_pdf(&self, x: &[f64], mean: &[f64], lv: Option<&[f64]>) -> f64 {
        match self.bundle.arch.likelihood {
            Likelihood::Bernoulli => dist::bernoulli_log_pmf(
                &crate::dist::BernoulliParams::new(mean.to_vec()),
                x,
            ),
            Likelihood::Gaussian => dist::gaussian_likelihood_log_pdf(
                &crate::dist::GaussianLikelihoodParams::new(
                    mean.to_vec(),
                    lv.expect("gaussian decoder log_var").to_vec(),
                ),
                x,
            ),
        }
    }

    /// Batch ELBO with caller-supplied noise: `eps` holds L matrices of
    /// shape `[N, dz]`. This is the deterministic core the trainer's
    /// objective is checked against.
    pub fn elbo_batch_with_eps(&self, x: &Tensor, eps: &[Tensor]) -> Result<ElboParts> {
        if eps.is_empty() {
            return Err(Error::Graph("elbo needs at least one noise draw".into()));
        }
        let n = x.rows();
        let dz = self.latent_dim();
        let (mu, lv) = self.enc.forward(&self.bundle.params, x)?;
        let l = eps.len();

        // Sample all L z-batches, decode each as one matrix op.
        let mut recon_sum = 0.0;
        let mut z_rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(l); n]; // per point, L samples
        for e in eps {
            if e.shape() != [n, dz] {
                return Err(Error::ShapeMismatch {
                    op: "elbo".into(),
                    detail: format!("eps shape {:?}, expected [{n}, {dz}]", e.shape()),
                });
            }
            let mut z_data = Vec::with_capacity(n * dz);
            for i in 0..n {
                let post = DiagGaussianParams::new(mu.row(i).to_vec(), lv.row(i).to_vec());
                let z = dist::reparam_sample(&post, e.row(i));
                z_data.extend_from_slice(&z);
                z_rows[i].push(z);
            }
            let z_t = Tensor::new(vec![n, dz], z_data)?;
            let (dec_mean, dec_lv) = self.dec.forward(&self.bundle.params, &z_t)?;
            for i in 0..n {
                recon_sum +=
                    self.recon_log_pdf(x.row(i), dec_mean.row(i), dec_lv.as_ref().map(|t| t.row(i)));
            }
        }
        let recon = recon_sum / (n * l) as f64;

        let mut kl_closed = 0.0;
        let mut kl_ratio = 0.0;
        for i in 0..n {
            let post = DiagGaussianParams::new(mu.row(i).to_vec(), lv.row(i).to_vec());
            match self.bundle.prior {
                PriorMode::StandardGaussian => {
                    kl_closed += dist::kl_diag_to_standard(&post);
                }
                PriorMode::VampPrior { .. } => {
                    let est = crate::klterm::kl_vamp_mc(
                        &post,
                        &z_rows[i],
                        self.comps.as_ref().expect("vamp components"),
                    )?;
                    kl_closed += est.total;
                }
                PriorMode::ImplicitOptimal => {
                    let est = crate::klterm::kl_implicit(
                        &post,
                        &z_rows[i],
                        self.rn.as_ref().expect("ratio net"),
                        &self.bundle.params,
                    )?;
                    kl_closed += est.closed_form_part;
                    kl_ratio += est.ratio_part;
                }
            }
        }
        kl_closed /= n as f64;
        kl_ratio /= n as f64;
        Ok(ElboParts {
            elbo: recon - (kl_closed - kl_ratio),
            kl_closed,
            kl_ratio,
            recon,
        })
    }

    /// Batch ELBO with L fresh noise draws.
    pub fn elbo_batch(&self, x: &Tensor, l: usize, rng: &mut impl Rng) -> Result<ElboParts> {
        let n = x.rows();
        let dz = self.latent_dim();
        let eps: Vec<Tensor> = (0..l.max(1))
            .map(|_| {
                let data: Vec<f64> = (0..n * dz)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect();
                Tensor::new(vec![n, dz], data)
            })
            .collect::<Result<_>>()?;
        self.elbo_batch_with_eps(x, &eps)
    }

    /// ELBO of a single point with L samples.
    pub fn elbo(&self, x: &[f64], l: usize, rng: &mut impl Rng) -> Result<f64> {
        let xt = Tensor::new(vec![1, x.len()], x.to_vec())?;
        Ok(self.elbo_batch(&xt, l, rng)?.elbo)
    }

    /// Importance-sampled estimate of ln p(x): log-mean-exp over S
    /// posterior samples of ln p(x|z) + ln prior(z) - ln q(z|x).
    pub fn is_log_likelihood(&self, x: &[f64], s: usize, rng: &mut impl Rng) -> Result<f64> {
        if s == 0 {
            return Err(Error::Graph("importance sampling needs S >= 1".into()));
        }
        let dz = self.latent_dim();
        let post = self.enc.encode_point(&self.bundle.params, x)?;
        let mut z_data = Vec::with_capacity(s * dz);
        let mut zs = Vec::with_capacity(s);
        for _ in 0..s {
            let eps = dist::standard_normal_vec(dz, rng);
            let z = dist::reparam_sample(&post, &eps);
            z_data.extend_from_slice(&z);
            zs.push(z);
        }
        let z_t = Tensor::new(vec![s, dz], z_data)?;
        let (dec_mean, dec_lv) = self.dec.forward(&self.bundle.params, &z_t)?;
        let mut log_w = Vec::with_capacity(s);
        for (i, z) in zs.iter().enumerate() {
            let recon =
                self.recon_log_pdf(x, dec_mean.row(i), dec_lv.as_ref().map(|t| t.row(i)));
            log_w.push(recon + self.log_prior(z)? - dist::diag_gaussian_log_pdf(&post, z));
        }
        Ok(log_sum_exp(&log_w) - (s as f64).ln())
    }

    /// Mean IS log-likelihood over a matrix of points.
    pub fn is_log_likelihood_mean(
        &self,
        x: &Tensor,
        s: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..x.rows() {
            acc += self.is_log_likelihood(x.row(i), s, rng)?;
        }
        Ok(acc / x.rows() as f64)
    }

    /// Write one sampled z per row of `x` as CSV (`z0,...,label`); only the
    /// first `coords` latent coordinates are emitted. Returns the row count.
    pub fn export_latents(
        &self,
        x: &Tensor,
        labels: Option<&[usize]>,
        coords: usize,
        out: &Path,
        rng: &mut impl Rng,
    ) -> Result<usize> {
        let dz = self.latent_dim();
        let coords = coords.min(dz);
        let (mu, lv) = self.enc.forward(&self.bundle.params, x)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(out)?);
        let header: Vec<String> = (0..coords).map(|i| format!("z{i}")).collect();
        writeln!(f, "{},label", header.join(","))?;
        for i in 0..x.rows() {
            let post = DiagGaussianParams::new(mu.row(i).to_vec(), lv.row(i).to_vec());
            let eps = dist::standard_normal_vec(dz, rng);
            let z = dist::reparam_sample(&post, &eps);
            let cols: Vec<String> = z[..coords].iter().map(|v| format!("{v}")).collect();
            let label = labels.map(|l| l[i] as i64).unwrap_or(-1);
            writeln!(f, "{},{label}", cols.join(","))?;
        }
        f.flush()?;
        Ok(x.rows())
    }
}

/// Per-run evaluation metrics, serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub prior: String,
    pub seed: u64,
    pub elbo: f64,
    pub is_log_likelihood: f64,
    pub is_samples: usize,
}

/// Mean ± sample standard deviation across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub n_runs: usize,
    pub elbo_mean: f64,
    pub elbo_std: f64,
    pub ll_mean: f64,
    pub ll_std: f64,
    pub per_run: Vec<EvalReport>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Aggregate at least two per-seed reports into mean ± std summaries.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedSummary> {
    if reports.len() < 2 {
        return Err(Error::Data(format!(
            "seed aggregation needs >= 2 reports, got {}",
            reports.len()
        )));
    }
    let elbos: Vec<f64> = reports.iter().map(|r| r.elbo).collect();
    let lls: Vec<f64> = reports.iter().map(|r| r.is_log_likelihood).collect();
    let (elbo_mean, elbo_std) = mean_std(&elbos);
    let (ll_mean, ll_std) = mean_std(&lls);
    Ok(SeedSummary {
        n_runs: reports.len(),
        elbo_mean,
        elbo_std,
        ll_mean,
        ll_std,
        per_run: reports.to_vec(),
    })
}

/// "mean ± std" with two decimals, the usual results-table format.
pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}
