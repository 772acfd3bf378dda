//! Train briefly, then export 2-D latent means for the test split as CSV
//! (one row per point, with its class label) for plotting.
//!
//! Run with: cargo run --release --example export_latents

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
    let mut cfg = TrainConfig::new(PriorMode::ImplicitOptimal);
    cfg.lr = 1e-3;
    cfg.warmup_epochs = 10;
    cfg.max_epochs = 60;
    cfg.patience = 20;
    cfg.seed = 1;
    let outcome = train(arch, &cfg, &dataset).expect("training");

    let ev = Evaluator::new(&outcome.bundle).expect("evaluator");
    let out = std::env::temp_dir().join("onehot-latents.csv");
    let n = ev
        .export_latents(
            &dataset.test,
            dataset.test_labels.as_deref(),
            2,
            &out,
            &mut rng,
        )
        .expect("export");
    println!("wrote {n} latent rows to {}", out.display());

    let csv = std::fs::read_to_string(&out).unwrap();
    for line in csv.lines().take(6) {
        println!("{line}");
    }
}
