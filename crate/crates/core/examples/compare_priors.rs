//! Train the same architecture under all three priors (standard
//! Gaussian, mixture-of-posteriors, implicit) and compare test-set ELBO
//! and importance-sampled log-likelihood.
//!
//! Run with: cargo run --release --example compare_priors

use iopvae::data::generate_onehot;
use iopvae::eval::Evaluator;
use iopvae::model::{Arch, Likelihood, PriorMode};
use iopvae::trainer::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let dataset = generate_onehot(&mut rng, true);
    let arch = Arch {
        input_dim: dataset.dim,
        hidden_dim: 50,
        latent_dim: 2,
        likelihood: Likelihood::Bernoulli,
    };

    for prior in [
        PriorMode::StandardGaussian,
        PriorMode::VampPrior { k_mix: 50 },
        PriorMode::ImplicitOptimal,
    ] {
        let mut cfg = TrainConfig::new(prior);
        cfg.lr = 1e-3;
        cfg.warmup_epochs = 15;
        cfg.max_epochs = 80;
        cfg.patience = 25;
        cfg.seed = 1;
        let outcome = train(arch, &cfg, &dataset).expect("training");

        let ev = Evaluator::new(&outcome.bundle).expect("evaluator");
        let mut eval_rng = ChaCha20Rng::seed_from_u64(100);
        let parts = ev.elbo_batch(&dataset.test, 1, &mut eval_rng).expect("elbo");
        let ll = ev
            .is_log_likelihood_mean(&dataset.test, 10, &mut eval_rng)
            .expect("log-likelihood");
        println!(
            "{:<9}  test ELBO {:>8.4}  (recon {:>8.4}, KL {:>7.4})  IS log-likelihood {:>8.4}",
            prior.tag(),
            parts.elbo,
            parts.recon,
            parts.kl_total(),
            ll
        );
    }
}
