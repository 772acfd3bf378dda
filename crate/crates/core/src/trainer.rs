//! Two-timescale training loop: generative/inference updates alternate
//! with density-ratio classifier updates, under KL warm-up, optional
//! dynamic binarization, and early stopping on validation ELBO.

use crate::data::Dataset;
use crate::dist;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::graph::{Graph, NodeId};
use crate::model::{Arch, ModelBundle, PriorMode};
use crate::nn::{dropout_mask, AdamConfig, AdamState, ParamSet};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::path::PathBuf;

/// Hyperparameters of one training run. Defaults follow the reference
/// protocol: batch 100, lr 3e-4, one reparameterization sample, warm-up
/// over 100 epochs, up to 1,000 epochs with patience 50, and a 1:10
/// epoch ratio between generative and ratio-net updates.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub prior_mode: PriorMode,
    pub batch_size: usize,
    pub lr: f64,
    /// Reparameterization samples per data point (L).
    pub l_samples: usize,
    /// Generative-update count per outer cycle (epochs, or steps when
    /// `step_level`).
    pub j1: usize,
    /// Ratio-net update count per outer cycle.
    pub j2: usize,
    /// Interpret `j1`/`j2` as minibatch steps instead of epochs.
    pub step_level: bool,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dynamic_binarization: bool,
    pub dropout_keep: f64,
    /// When set, the best checkpoint is rewritten on every validation
    /// improvement.
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(prior_mode: PriorMode) -> Self {
        TrainConfig {
            prior_mode,
            batch_size: 100,
            lr: 3e-4,
            l_samples: 1,
            j1: 1,
            j2: 10,
            step_level: false,
            warmup_epochs: 100,
            max_epochs: 1_000,
            patience: 50,
            seed: 0,
            dynamic_binarization: false,
            dropout_keep: 0.5,
            checkpoint_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.j1 < 1 || self.j2 < 1 {
            return bad(format!("j1/j2 must be >= 1, got {}/{}", self.j1, self.j2));
        }
        if self.l_samples < 1 {
            return bad("l_samples must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.warmup_epochs > self.max_epochs && self.max_epochs > 0 {
            return bad(format!(
                "warmup_epochs {} exceeds max_epochs {}",
                self.warmup_epochs, self.max_epochs
            ));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout_keep must be in (0, 1], got {}", self.dropout_keep));
        }
        Ok(())
    }
}

/// Linear KL warm-up multiplier: min(1, epoch / warmup_epochs).
pub fn warmup_beta(epoch: usize, warmup_epochs: usize) -> f64 {
    if warmup_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / warmup_epochs as f64).min(1.0)
    }
}

/// Resample binary pixels from [0,1] intensities.
pub fn dynamic_binarize(batch: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch.data().len());
    for &v in batch.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Data(format!(
                "binarization input {v} outside [0, 1]"
            )));
        }
        data.push(if rng.gen::<f64>() < v { 1.0 } else { 0.0 });
    }
    Tensor::new(batch.shape().to_vec(), data)
}

/// One logged row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub beta: f64,
    pub train_elbo: f64,
    pub valid_elbo: f64,
    pub kl_closed: f64,
    pub kl_ratio: f64,
    pub ratio_loss: f64,
}

pub const LOG_HEADER: &str = "epoch,beta,train_elbo,valid_elbo,kl_closed,kl_ratio,ratio_loss";

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for row in log {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.epoch,
            row.beta,
            row.train_elbo,
            row.valid_elbo,
            row.kl_closed,
            row.kl_ratio,
            row.ratio_loss
        ));
    }
    s
}

/// Result of a completed run: the best-validation checkpoint plus the log.
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_valid_elbo: Option<f64>,
}

/// A training error together with whatever was logged before it.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub partial_log: Vec<EpochLog>,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} logged epochs)", self.error, self.partial_log.len())
    }
}

impl std::error::Error for TrainFailure {}

/// Per-step statistics read off the graph before the update.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Warm-up-scaled objective being ascended.
    pub objective: f64,
    /// Unscaled ELBO of the batch (beta = 1 form).
    pub elbo: f64,
    pub kl_closed: f64,
    pub kl_ratio: f64,
}

struct VaeGraph {
    g: Graph,
    loss: NodeId,
    objective: NodeId,
    elbo: NodeId,
    kl_closed: NodeId,
    kl_ratio: NodeId,
}

struct RatioGraph {
    g: Graph,
    loss: NodeId,
    objective: NodeId,
}

/// Owns the model, both optimizers, and the RNG stream of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    rng: ChaCha20Rng,
    adam_vae: AdamState,
    adam_ratio: AdamState,
    vae_names: Vec<String>,
    ratio_names: Vec<String>,
    vae_graphs: HashMap<(usize, u64), VaeGraph>,
    ratio_graphs: HashMap<usize, RatioGraph>,
}

impl Trainer {
    pub fn new(arch: Arch, config: TrainConfig, train_data: &Tensor) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let bundle = ModelBundle::init(arch, config.prior_mode, Some(train_data), &mut rng)?;
        let vae_names = bundle.vae_group();
        let ratio_names = bundle.ratio_group();
        Ok(Trainer {
            adam_vae: AdamState::new(AdamConfig::with_lr(config.lr)),
            adam_ratio: AdamState::new(AdamConfig::with_lr(config.lr)),
            config,
            bundle,
            rng,
            vae_names,
            ratio_names,
            vae_graphs: HashMap::new(),
            ratio_graphs: HashMap::new(),
        })
    }

    fn build_vae_graph(&self, rows: usize, beta: f64) -> Result<VaeGraph> {
        let arch = &self.bundle.arch;
        let enc = self.bundle.encoder();
        let dec = self.bundle.decoder();
        let l = self.config.l_samples;

        let mut g = Graph::new();
        let x = g.input("x", &[rows, arch.input_dim]);
        let (mu, lv) = enc.build(&mut g, x, false)?;

        let mut recon_acc: Option<NodeId> = None;
        let mut extra_acc: Option<NodeId> = None; // ratio logits or MC KL rows
        for li in 0..l {
            let eps = g.input(&format!("eps{li}"), &[rows, arch.latent_dim]);
            let z = dist::reparam_node(&mut g, mu, lv, eps)?;
            let dn = dec.build(&mut g, z, false)?;
            let recon = match self.bundle.arch.likelihood {
                crate::model::Likelihood::Bernoulli => {
                    dist::bernoulli_log_pmf_rows(&mut g, dn.mean, x)?
                }
                crate::model::Likelihood::Gaussian => {
                    let dlv = dn.log_var.ok_or_else(|| {
                        Error::Graph("gaussian decoder without log_var head".into())
                    })?;
                    dist::gaussian_log_pdf_rows(&mut g, dn.mean, dlv, x)?
                }
            };
            recon_acc = Some(match recon_acc {
                None => recon,
                Some(a) => g.add(a, recon)?,
            });
            let extra = match self.bundle.prior {
                PriorMode::StandardGaussian => None,
                PriorMode::ImplicitOptimal => {
                    // T frozen, eval mode: gradient reaches phi only
                    // through z.
                    let rn = self.bundle.ratio_net();
                    Some(rn.build(&mut g, z, true, None)?)
                }
                PriorMode::VampPrior { .. } => {
                    let u = self.bundle.vamp_inputs().expect("vamp inputs");
                    let log_q = dist::diag_log_pdf_rows(&mut g, z, mu, lv)?;
                    let log_p = crate::model::vamp_log_prior_rows(&mut g, &enc, &u, z, false)?;
                    Some(g.sub(log_q, log_p)?)
                }
            };
            if let Some(e) = extra {
                extra_acc = Some(match extra_acc {
                    None => e,
                    Some(a) => g.add(a, e)?,
                });
            }
        }
        let recon_rows = g.scale(recon_acc.expect("l >= 1"), 1.0 / l as f64);
        let recon_mean = g.mean(recon_rows);

        let (kl_closed, kl_ratio, kl_rows) = match self.bundle.prior {
            PriorMode::StandardGaussian => {
                let kl = dist::kl_std_rows(&mut g, mu, lv)?;
                let zero = g.constant(Tensor::scalar(0.0));
                (g.mean(kl), zero, kl)
            }
            PriorMode::ImplicitOptimal => {
                let closed = dist::kl_std_rows(&mut g, mu, lv)?;
                let t_rows = g.scale(extra_acc.expect("ratio rows"), 1.0 / l as f64);
                let kl = g.sub(closed, t_rows)?;
                (g.mean(closed), g.mean(t_rows), kl)
            }
            PriorMode::VampPrior { .. } => {
                let kl = g.scale(extra_acc.expect("mc kl rows"), 1.0 / l as f64);
                let zero = g.constant(Tensor::scalar(0.0));
                (g.mean(kl), zero, kl)
            }
        };
        let kl_mean = g.mean(kl_rows);

        let neg_kl = g.scale(kl_mean, -1.0);
        let elbo = g.add(recon_mean, neg_kl)?;
        let scaled_kl = g.scale(kl_mean, -beta);
        let objective = g.add(recon_mean, scaled_kl)?;
        let loss = g.scale(objective, -1.0);
        Ok(VaeGraph { g, loss, objective, elbo, kl_closed, kl_ratio })
    }

    fn build_ratio_graph(&self, rows: usize) -> Result<RatioGraph> {
        let arch = &self.bundle.arch;
        let enc = self.bundle.encoder();
        let rn = self.bundle.ratio_net();
        let mut g = Graph::new();
        let x = g.input("x", &[rows, arch.input_dim]);
        // The encoder only supplies samples here; freeze it so the
        // backward pass stops at the ratio parameters.
        let (mu, lv) = enc.build(&mut g, x, true)?;
        let eps = g.input("eps", &[rows, arch.latent_dim]);
        let z = dist::reparam_node(&mut g, mu, lv, eps)?;
        let zp = g.input("zp", &[rows, arch.latent_dim]);
        let m1a = g.input("m1a", &[rows, arch.hidden_dim]);
        let m2a = g.input("m2a", &[rows, arch.hidden_dim]);
        let m1p = g.input("m1p", &[rows, arch.hidden_dim]);
        let m2p = g.input("m2p", &[rows, arch.hidden_dim]);
        let t_a = rn.build(&mut g, z, false, Some((m1a, m2a)))?;
        let t_p = rn.build(&mut g, zp, false, Some((m1p, m2p)))?;
        let objective = crate::klterm::ratio_loss_node(&mut g, t_a, t_p)?;
        let loss = g.scale(objective, -1.0);
        Ok(RatioGraph { g, loss, objective })
    }

    fn sample_eps(&mut self, rows: usize) -> Result<Tensor> {
        let dz = self.bundle.arch.latent_dim;
        let data: Vec<f64> = (0..rows * dz)
            .map(|_| self.rng.sample(StandardNormal))
            .collect();
        Tensor::new(vec![rows, dz], data)
    }

    /// One ascent step on the warm-up-scaled objective with caller-fixed
    /// noise; updates encoder/decoder (and pseudo-inputs), never the
    /// ratio net.
    pub fn vae_step_with_eps(&mut self, x: &Tensor, eps: &[Tensor], beta: f64) -> Result<StepStats> {
        if eps.len() != self.config.l_samples {
            return Err(Error::Graph(format!(
                "expected {} noise draws, got {}",
                self.config.l_samples,
                eps.len()
            )));
        }
        let key = (x.rows(), beta.to_bits());
        if !self.vae_graphs.contains_key(&key) {
            let built = self.build_vae_graph(x.rows(), beta)?;
            self.vae_graphs.insert(key, built);
        }
        let vg = &self.vae_graphs[&key];

        let mut bindings = HashMap::new();
        self.bundle.params.bind_into(&mut bindings);
        bindings.insert("x".to_string(), x.clone());
        for (li, e) in eps.iter().enumerate() {
            bindings.insert(format!("eps{li}"), e.clone());
        }
        let evaln = vg.g.forward(&bindings)?;
        let stats = StepStats {
            objective: evaln.value(vg.objective).item(),
            elbo: evaln.value(vg.elbo).item(),
            kl_closed: evaln.value(vg.kl_closed).item(),
            kl_ratio: evaln.value(vg.kl_ratio).item(),
        };
        let grads = evaln.backward(&vg.g, vg.loss)?;
        self.adam_vae
            .step(&mut self.bundle.params, &grads, &self.vae_names)?;
        Ok(stats)
    }

    /// `vae_step_with_eps` with fresh noise from the run's RNG stream.
    pub fn vae_step(&mut self, x: &Tensor, beta: f64) -> Result<StepStats> {
        let eps: Vec<Tensor> = (0..self.config.l_samples)
            .map(|_| self.sample_eps(x.rows()))
            .collect::<Result<_>>()?;
        self.vae_step_with_eps(x, &eps, beta)
    }

    /// Objective value at the current parameters without updating them.
    pub fn vae_objective(&mut self, x: &Tensor, eps: &[Tensor], beta: f64) -> Result<f64> {
        let key = (x.rows(), beta.to_bits());
        if !self.vae_graphs.contains_key(&key) {
            let built = self.build_vae_graph(x.rows(), beta)?;
            self.vae_graphs.insert(key, built);
        }
        let vg = &self.vae_graphs[&key];
        let mut bindings = HashMap::new();
        self.bundle.params.bind_into(&mut bindings);
        bindings.insert("x".to_string(), x.clone());
        for (li, e) in eps.iter().enumerate() {
            bindings.insert(format!("eps{li}"), e.clone());
        }
        Ok(vg.g.forward(&bindings)?.value(vg.objective).item())
    }

    /// One ascent step of the classifier objective on a training batch:
    /// aggregated-posterior samples come from encoding `x` (ancestral
    /// sampling), prior samples from N(0, I). Returns the objective value
    /// at the pre-step parameters. Only the ratio net moves.
    pub fn ratio_step(&mut self, x: &Tensor) -> Result<f64> {
        if !matches!(self.bundle.prior, PriorMode::ImplicitOptimal) {
            return Err(Error::Config(
                "ratio_step requires the implicit-optimal prior".into(),
            ));
        }
        let rows = x.rows();
        let h = self.bundle.arch.hidden_dim;
        let keep = self.config.dropout_keep;
        if !self.ratio_graphs.contains_key(&rows) {
            let built = self.build_ratio_graph(rows)?;
            self.ratio_graphs.insert(rows, built);
        }

        let eps = self.sample_eps(rows)?;
        let zp = self.sample_eps(rows)?;
        let m1a = dropout_mask(&[rows, h], keep, &mut self.rng)?;
        let m2a = dropout_mask(&[rows, h], keep, &mut self.rng)?;
        let m1p = dropout_mask(&[rows, h], keep, &mut self.rng)?;
        let m2p = dropout_mask(&[rows, h], keep, &mut self.rng)?;

        let rg = &self.ratio_graphs[&rows];
        let mut bindings = HashMap::new();
        self.bundle.params.bind_into(&mut bindings);
        bindings.insert("x".to_string(), x.clone());
        bindings.insert("eps".to_string(), eps);
        bindings.insert("zp".to_string(), zp);
        bindings.insert("m1a".to_string(), m1a);
        bindings.insert("m2a".to_string(), m2a);
        bindings.insert("m1p".to_string(), m1p);
        bindings.insert("m2p".to_string(), m2p);
        let evaln = rg.g.forward(&bindings)?;
        let objective = evaln.value(rg.objective).item();
        let grads = evaln.backward(&rg.g, rg.loss)?;
        self.adam_ratio
            .step(&mut self.bundle.params, &grads, &self.ratio_names)?;
        Ok(objective)
    }

    fn assemble_batch(&self, data: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(idx.len() * data.cols());
        for &i in idx {
            rows.extend_from_slice(data.row(i));
        }
        Tensor::new(vec![idx.len(), data.cols()], rows)
    }

    fn prepare_batch(&mut self, data: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let batch = self.assemble_batch(data, idx)?;
        if self.config.dynamic_binarization {
            dynamic_binarize(&batch, &mut self.rng)
        } else {
            Ok(batch)
        }
    }
}

fn batch_indices(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Run the full two-timescale loop and return the best-validation model.
pub fn train(
    arch: Arch,
    config: &TrainConfig,
    ds: &Dataset,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let mut log: Vec<EpochLog> = Vec::new();
    let fail = |error: Error, log: &[EpochLog]| TrainFailure {
        error,
        partial_log: log.to_vec(),
    };

    let mut trainer =
        Trainer::new(arch, config.clone(), &ds.train).map_err(|e| fail(e, &log))?;
    let implicit = matches!(config.prior_mode, PriorMode::ImplicitOptimal);

    let mut best_params: Option<ParamSet> = None;
    let mut best_epoch = None;
    let mut best_valid = f64::NEG_INFINITY;
    let mut since_improvement = 0usize;

    for epoch in 0..config.max_epochs {
        let beta = warmup_beta(epoch, config.warmup_epochs);
        let mut train_elbo = 0.0;
        let mut kl_closed = 0.0;
        let mut kl_ratio = 0.0;
        let mut seen = 0usize;
        let mut ratio_loss_sum = 0.0;
        let mut ratio_steps = 0usize;

        let run_ratio_pass = |trainer: &mut Trainer,
                                  sum: &mut f64,
                                  count: &mut usize,
                                  log: &[EpochLog]|
         -> std::result::Result<(), TrainFailure> {
            let batches = batch_indices(ds.train.rows(), config.batch_size, &mut trainer.rng);
            for (bi, idx) in batches.iter().enumerate() {
                let batch = trainer
                    .prepare_batch(&ds.train, idx)
                    .map_err(|e| fail(e, log))?;
                let obj = trainer.ratio_step(&batch).map_err(|e| {
                    fail(
                        Error::Graph(format!("epoch {epoch} ratio batch {bi}: {e}")),
                        log,
                    )
                })?;
                *sum += obj;
                *count += 1;
            }
            Ok(())
        };

        if config.step_level && implicit {
            // Alternate j1 generative steps with j2 ratio steps inside
            // one pass over the shuffled training set.
            let batches = batch_indices(ds.train.rows(), config.batch_size, &mut trainer.rng);
            let mut since_ratio = 0usize;
            for (bi, idx) in batches.iter().enumerate() {
                let batch = trainer
                    .prepare_batch(&ds.train, idx)
                    .map_err(|e| fail(e, &log))?;
                let stats = trainer.vae_step(&batch, beta).map_err(|e| {
                    fail(Error::Graph(format!("epoch {epoch} batch {bi}: {e}")), &log)
                })?;
                train_elbo += stats.elbo * idx.len() as f64;
                kl_closed += stats.kl_closed * idx.len() as f64;
                kl_ratio += stats.kl_ratio * idx.len() as f64;
                seen += idx.len();
                since_ratio += 1;
                if since_ratio == config.j1 {
                    since_ratio = 0;
                    for _ in 0..config.j2 {
                        let ridx = batch_indices(ds.train.rows(), config.batch_size, &mut trainer.rng)
                            .into_iter()
                            .next()
                            .expect("non-empty train split");
                        let rbatch = trainer
                            .prepare_batch(&ds.train, &ridx)
                            .map_err(|e| fail(e, &log))?;
                        ratio_loss_sum += trainer.ratio_step(&rbatch).map_err(|e| {
                            fail(Error::Graph(format!("epoch {epoch} ratio: {e}")), &log)
                        })?;
                        ratio_steps += 1;
                    }
                }
            }
        } else {
            // Epoch granularity: j1 epochs of generative updates, then
            // j2 epochs of ratio-net updates.
            for _ in 0..config.j1 {
                let batches = batch_indices(ds.train.rows(), config.batch_size, &mut trainer.rng);
                for (bi, idx) in batches.iter().enumerate() {
                    let batch = trainer
                        .prepare_batch(&ds.train, idx)
                        .map_err(|e| fail(e, &log))?;
                    let stats = trainer.vae_step(&batch, beta).map_err(|e| {
                        fail(Error::Graph(format!("epoch {epoch} batch {bi}: {e}")), &log)
                    })?;
                    train_elbo += stats.elbo * idx.len() as f64;
                    kl_closed += stats.kl_closed * idx.len() as f64;
                    kl_ratio += stats.kl_ratio * idx.len() as f64;
                    seen += idx.len();
                }
            }
            if implicit {
                for _ in 0..config.j2 {
                    run_ratio_pass(&mut trainer, &mut ratio_loss_sum, &mut ratio_steps, &log)?;
                }
            }
        }

        train_elbo /= seen as f64;
        kl_closed /= seen as f64;
        kl_ratio /= seen as f64;
        let ratio_loss = if ratio_steps > 0 {
            ratio_loss_sum / ratio_steps as f64
        } else {
            0.0
        };

        let valid_elbo = {
            let ev = Evaluator::new(&trainer.bundle).map_err(|e| fail(e, &log))?;
            ev.elbo_batch(&ds.valid, config.l_samples, &mut trainer.rng)
                .map_err(|e| fail(e, &log))?
                .elbo
        };

        log.push(EpochLog {
            epoch,
            beta,
            train_elbo,
            valid_elbo,
            kl_closed,
            kl_ratio,
            ratio_loss,
        });

        if valid_elbo > best_valid {
            best_valid = valid_elbo;
            best_epoch = Some(epoch);
            best_params = Some(trainer.bundle.params.clone());
            since_improvement = 0;
            if let Some(path) = &config.checkpoint_path {
                trainer.bundle.save(path).map_err(|e| fail(e, &log))?;
            }
        } else {
            since_improvement += 1;
            if since_improvement > config.patience {
                break;
            }
        }
    }

    let mut bundle = trainer.bundle;
    if let Some(p) = best_params {
        bundle.params = p;
    }
    Ok(TrainOutcome {
        bundle,
        log,
        best_epoch,
        best_valid_elbo: best_epoch.map(|_| best_valid),
    })
}


#[cfg(test)]
impl Trainer {
    /// Test-only: one ratio step where both sample classes are drawn from
    /// N(0, I), so the fixed point of the objective is -2 ln 2.
    fn ratio_step_on_equal_batches(&mut self) -> Result<f64> {
        let rows = 50;
        let h = self.bundle.arch.hidden_dim;
        let keep = self.config.dropout_keep;
        let rn = self.bundle.ratio_net();
        let mut g = Graph::new();
        let za = g.input("za", &[rows, self.bundle.arch.latent_dim]);
        let zp = g.input("zp", &[rows, self.bundle.arch.latent_dim]);
        let m1a = g.input("m1a", &[rows, h]);
        let m2a = g.input("m2a", &[rows, h]);
        let m1p = g.input("m1p", &[rows, h]);
        let m2p = g.input("m2p", &[rows, h]);
        let ta = rn.build(&mut g, za, false, Some((m1a, m2a)))?;
        let tp = rn.build(&mut g, zp, false, Some((m1p, m2p)))?;
        let obj = crate::klterm::ratio_loss_node(&mut g, ta, tp)?;
        let loss = g.scale(obj, -1.0);
        let mut bindings = HashMap::new();
        self.bundle.params.bind_into(&mut bindings);
        bindings.insert("za".to_string(), self.sample_eps(rows)?);
        bindings.insert("zp".to_string(), self.sample_eps(rows)?);
        for name in ["m1a", "m2a", "m1p", "m2p"] {
            bindings.insert(name.to_string(), dropout_mask(&[rows, h], keep, &mut self.rng)?);
        }
        let evaln = g.forward(&bindings)?;
        let value = evaln.value(obj).item();
        let grads = evaln.backward(&g, loss)?;
        self.adam_ratio
            .step(&mut self.bundle.params, &grads, &self.ratio_names)?;
        Ok(value)
    }
}
