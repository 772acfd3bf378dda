//! Train the logistic density-ratio classifier to recover an analytic
//! log-ratio ln(q(z)/p(z)) between two known Gaussians, then compare its
//! output to the truth on held-out samples.
//!
//! Run with: cargo run --release --example density_ratio

use iopvae::dist::{self, DiagGaussianParams};
use iopvae::graph::Graph;
use iopvae::klterm;
use iopvae::model::{Arch, Likelihood, RatioNet};
use iopvae::nn::{AdamConfig, AdamState, ParamSet};
use iopvae::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;

fn main() {
    let arch = Arch {
        input_dim: 2,
        hidden_dim: 64,
        latent_dim: 2,
        likelihood: Likelihood::Bernoulli,
    };
    // q = N([1, 1], 0.25 I), p = N(0, I): the log ratio is known exactly.
    let q = DiagGaussianParams::new(vec![1.0, 1.0], vec![0.25f64.ln(); 2]);

    let rn = RatioNet::new(&arch);
    let mut params = ParamSet::new();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    rn.init(&mut params, &mut rng);
    let names = params.group("ratio.");

    let batch = 256;
    let mut g = Graph::new();
    let za = g.input("za", &[batch, 2]);
    let zp = g.input("zp", &[batch, 2]);
    let ta = rn.build(&mut g, za, false, None).unwrap();
    let tp = rn.build(&mut g, zp, false, None).unwrap();
    let obj = klterm::ratio_loss_node(&mut g, ta, tp).unwrap();
    let loss = g.scale(obj, -1.0);

    // Coarse phase at lr 3e-3, then a fine phase at 3e-4 to settle.
    let mut adam = AdamState::new(AdamConfig::with_lr(3e-3));
    for step in 0..3_000 {
        if step == 2_000 {
            adam = AdamState::new(AdamConfig::with_lr(3e-4));
        }
        let mut za_v = Vec::with_capacity(batch * 2);
        let mut zp_v = Vec::with_capacity(batch * 2);
        for _ in 0..batch {
            let eps = dist::standard_normal_vec(2, &mut rng);
            za_v.extend(dist::reparam_sample(&q, &eps));
            zp_v.extend(dist::standard_normal_vec(2, &mut rng));
        }
        let mut bind = HashMap::new();
        params.bind_into(&mut bind);
        bind.insert("za".into(), Tensor::new(vec![batch, 2], za_v).unwrap());
        bind.insert("zp".into(), Tensor::new(vec![batch, 2], zp_v).unwrap());
        let eval = g.forward(&bind).unwrap();
        if step % 300 == 0 {
            println!("step {step:>4}  classifier objective {:.4}", -eval.value(loss).item());
        }
        let grads = eval.backward(&g, loss).unwrap();
        adam.step(&mut params, &grads, &names).unwrap();
    }

    let mut err = 0.0;
    let n = 500;
    for _ in 0..n {
        let eps = dist::standard_normal_vec(2, &mut rng);
        let z = dist::reparam_sample(&q, &eps);
        let truth = dist::diag_gaussian_log_pdf(&q, &z) - dist::standard_normal_log_pdf(&z);
        err += (rn.logit(&params, &z).unwrap() - truth).abs();
    }
    println!("mean |T(z) - analytic log ratio| over {n} samples: {:.4}", err / n as f64);
}
