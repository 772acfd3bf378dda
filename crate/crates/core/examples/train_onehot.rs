//! Train a small VAE with the implicit prior on the synthetic one-hot
//! dataset, then report the best validation ELBO.
//!
//! Run with: cargo run --release --example train_onehot

use iopvae::data::generate_onehot;
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
    let mut cfg = TrainConfig::new(PriorMode::ImplicitOptimal);
    cfg.lr = 1e-3;
    cfg.warmup_epochs = 10;
    cfg.max_epochs = 60;
    cfg.patience = 20;
    cfg.seed = 1;

    let outcome = train(arch, &cfg, &dataset).expect("training");
    for log in outcome.log.iter().step_by(10) {
        println!(
            "epoch {:>3}  beta {:.2}  train ELBO {:>8.4}  valid ELBO {:>8.4}  ratio loss {:>8.4}",
            log.epoch, log.beta, log.train_elbo, log.valid_elbo, log.ratio_loss
        );
    }
    println!(
        "best validation ELBO {:.4} at epoch {}",
        outcome.best_valid_elbo.unwrap(),
        outcome.best_epoch.unwrap()
    );
}
