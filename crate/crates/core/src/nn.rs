//! Layers, initialization, dropout, and the Adam optimizer.
//!
//! Layers are graph builders: a layer owns parameter *names* and shapes,
//! the actual tensors live in a [`ParamSet`]. The same layer can build
//! nodes into a training graph or run a plain (pure) forward pass for
//! evaluation — both routes share the parameter storage.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph, NodeId};
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in sorted-name order for determinism.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Copy every parameter into a graph binding map.
    pub fn bind_into(&self, bindings: &mut HashMap<String, Tensor>) {
        for (name, t) in &self.map {
            bindings.insert(name.clone(), t.clone());
        }
    }

    /// Parameters whose name starts with the given prefix (a parameter group).
    pub fn group(&self, prefix: &str) -> Vec<String> {
        self.map.keys().filter(|n| n.starts_with(prefix)).cloned().collect()
    }
}

/// Uniform Glorot initialization: entries in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    assert!(fan_in >= 1 && fan_out >= 1);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

/// Plain dense layer `act(x W + b)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense { name: name.into(), in_dim, out_dim, activation }
    }

    fn w_name(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        params.insert(self.w_name(), glorot_init(self.in_dim, self.out_dim, rng));
        params.insert(self.b_name(), Tensor::zeros(&[self.out_dim]));
    }

    /// Build the layer into a graph. With `freeze` set the parameter leaves
    /// are wrapped in stop-gradient, so the layer is a constant w.r.t. its
    /// own weights while gradients still flow through `x`.
    pub fn build(&self, g: &mut Graph, x: NodeId, freeze: bool) -> Result<NodeId> {
        let mut w = g.param(&self.w_name(), &[self.in_dim, self.out_dim]);
        let mut b = g.param(&self.b_name(), &[self.out_dim]);
        if freeze {
            w = g.stop_grad(w);
            b = g.stop_grad(b);
        }
        let h = g.matmul(x, w)?;
        let h = g.add_bias(h, b)?;
        Ok(match self.activation {
            Activation::Identity => h,
            Activation::Tanh => g.tanh(h),
            Activation::Sigmoid => g.sigmoid(h),
        })
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let w = params.get(&self.w_name());
        let b = params.get(&self.b_name());
        let mut h = x.as_matrix().matmul(w)?;
        let (m, n) = (h.rows(), h.cols());
        for i in 0..m {
            let row = &mut h.data_mut()[i * n..(i + 1) * n];
            for (o, &bb) in row.iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        Ok(match self.activation {
            Activation::Identity => h,
            Activation::Tanh => h.map(f64::tanh),
            Activation::Sigmoid => h.map(sigmoid),
        })
    }
}

/// Gated dense layer: `(x W_h + b_h) ⊙ σ(x W_g + b_g)`.
#[derive(Debug, Clone)]
pub struct GatedDense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GatedDense {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        GatedDense { name: name.into(), in_dim, out_dim }
    }

    fn value_path(&self) -> Dense {
        Dense::new(format!("{}.h", self.name), self.in_dim, self.out_dim, Activation::Identity)
    }

    fn gate_path(&self) -> Dense {
        Dense::new(format!("{}.g", self.name), self.in_dim, self.out_dim, Activation::Sigmoid)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.value_path().init(params, rng);
        self.gate_path().init(params, rng);
    }

    pub fn build(&self, g: &mut Graph, x: NodeId, freeze: bool) -> Result<NodeId> {
        let h = self.value_path().build(g, x, freeze)?;
        let gate = self.gate_path().build(g, x, freeze)?;
        g.mul(h, gate)
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let h = self.value_path().forward(params, x)?;
        let gate = self.gate_path().forward(params, x)?;
        h.mul(&gate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct DropoutSpec {
    pub keep: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn train(keep: f64) -> Self {
        DropoutSpec { keep, mode: Mode::Train }
    }

    pub fn eval() -> Self {
        DropoutSpec { keep: 1.0, mode: Mode::Eval }
    }
}

/// Inverted-dropout mask: entries are 0 or 1/keep.
pub fn dropout_mask(shape: &[usize], keep: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if keep <= 0.0 || keep > 1.0 {
        return Err(Error::Config(format!("dropout keep probability {keep} not in (0, 1]")));
    }
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Apply inverted dropout. Eval mode and keep = 1 are the identity.
pub fn dropout_apply(x: &Tensor, spec: &DropoutSpec, rng: &mut impl Rng) -> Result<Tensor> {
    if spec.keep <= 0.0 || spec.keep > 1.0 {
        return Err(Error::Config(format!("dropout keep probability {} not in (0, 1]", spec.keep)));
    }
    if spec.mode == Mode::Eval || spec.keep == 1.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.shape(), spec.keep, rng)?;
    x.mul(&mask)
}

/// Adam hyperparameters. Defaults follow the optimizer's original paper.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state for one parameter group. Minimizes: callers hand it the
/// gradient of a loss (negate an objective to ascend).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over the listed parameters.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &HashMap<String, Tensor>,
        names: &[String],
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for name in names {
            let grad = match grads.get(name) {
                Some(g) => g,
                None => continue,
            };
            if grad.has_nan() {
                return Err(Error::NanGradient(name.clone()));
            }
            let p = params.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            for ((pv, mv), (vv, &g)) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut().iter_mut().zip(grad.data()))
            {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * g;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn glorot_bound_holds() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let w = glorot_init(500, 500, &mut rng);
        let bound = (6.0 / 1000.0_f64).sqrt();
        assert!((bound - 0.07745966).abs() < 1e-6);
        assert!(w.data().iter().all(|&v| v > -bound && v < bound));
    }

    #[test]
    fn glorot_is_seed_deterministic() {
        let a = glorot_init(20, 30, &mut ChaCha20Rng::seed_from_u64(3));
        let b = glorot_init(20, 30, &mut ChaCha20Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_sample_mean_near_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let w = glorot_init(1000, 1000, &mut rng);
        let n = w.len() as f64;
        let bound = (6.0 / 2000.0_f64).sqrt();
        let sigma = bound / 3.0_f64.sqrt(); // std of U(-b, b)
        let mean = w.sum() / n;
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn gated_layer_with_zero_gate_halves_value_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let layer = GatedDense::new("l", 3, 2);
        let mut params = ParamSet::new();
        layer.init(&mut params, &mut rng);
        // zero gate path: sigmoid(0) = 0.5 everywhere
        params.insert("l.g.w", Tensor::zeros(&[3, 2]));
        params.insert("l.g.b", Tensor::zeros(&[2]));
        let x = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let h = layer.forward(&params, &x).unwrap();
        let value = Dense::new("l.h", 3, 2, Activation::Identity)
            .forward(&params, &x)
            .unwrap();
        for (a, b) in h.data().iter().zip(value.data()) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn gated_layer_saturated_gate_passes_value() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let layer = GatedDense::new("l", 3, 2);
        let mut params = ParamSet::new();
        layer.init(&mut params, &mut rng);
        params.insert("l.g.w", Tensor::zeros(&[3, 2]));
        params.insert("l.g.b", Tensor::full(&[2], 20.0));
        let x = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let h = layer.forward(&params, &x).unwrap();
        let value = Dense::new("l.h", 3, 2, Activation::Identity)
            .forward(&params, &x)
            .unwrap();
        for (a, b) in h.data().iter().zip(value.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn graph_and_pure_forward_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let layer = GatedDense::new("l", 4, 3);
        let mut params = ParamSet::new();
        layer.init(&mut params, &mut rng);

        let mut g = Graph::new();
        let x = g.input("x", &[2, 4]);
        let h = layer.build(&mut g, x, false).unwrap();

        let xt = Tensor::matrix(2, 4, vec![0.1, -0.2, 0.3, 1.0, -1.5, 0.0, 0.7, 0.2]).unwrap();
        let mut bindings = HashMap::new();
        bindings.insert("x".to_string(), xt.clone());
        params.bind_into(&mut bindings);
        let via_graph = g.forward(&bindings).unwrap().value(h).clone();
        let pure = layer.forward(&params, &xt).unwrap();
        assert_eq!(via_graph, pure);
    }

    #[test]
    fn dropout_eval_and_keep_one_are_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(dropout_apply(&x, &DropoutSpec::eval(), &mut rng).unwrap(), x);
        assert_eq!(
            dropout_apply(&x, &DropoutSpec::train(1.0), &mut rng).unwrap(),
            x
        );
    }

    #[test]
    fn dropout_rejects_nonpositive_keep() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = Tensor::vector(vec![1.0]);
        assert!(dropout_apply(&x, &DropoutSpec::train(0.0), &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let spec = DropoutSpec::train(0.5);
        let x = Tensor::vector(vec![1.0]);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += dropout_apply(&x, &spec, &mut rng).unwrap().data()[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.5, -2.0]));
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3));
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::zeros(&[2]));
        adam.step(&mut params, &grads, &["w".to_string()]).unwrap();
        assert_eq!(params.get("w").data(), &[1.5, -2.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // Bias-corrected first step with constant gradient: update = lr * sign(g)
        // up to the eps perturbation.
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![0.0, 0.0]));
        let lr = 1e-2;
        let mut adam = AdamState::new(AdamConfig::with_lr(lr));
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![3.0, -0.5]));
        adam.step(&mut params, &grads, &["w".to_string()]).unwrap();
        assert!((params.get("w").data()[0] + lr).abs() < 1e-6);
        assert!((params.get("w").data()[1] - lr).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_invariant_to_gradient_scale() {
        let names = ["w".to_string()];
        let run = |scale: f64| {
            let mut params = ParamSet::new();
            params.insert("w", Tensor::vector(vec![1.0]));
            let mut adam = AdamState::new(AdamConfig { eps: 0.0, ..AdamConfig::with_lr(1e-3) });
            let mut grads = HashMap::new();
            grads.insert("w".to_string(), Tensor::vector(vec![0.7 * scale]));
            adam.step(&mut params, &grads, &names).unwrap();
            params.get("w").data()[0]
        };
        assert!((run(1.0) - run(100.0)).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![2.0]));
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-2));
        let names = ["w".to_string()];
        let mut prev = f64::INFINITY;
        for i in 0..500 {
            let w = params.get("w").data()[0];
            let f = w * w;
            if i % 100 == 0 {
                assert!(f <= prev + 1e-9, "objective went up at step {i}");
                prev = f;
            }
            let mut grads = HashMap::new();
            grads.insert("w".to_string(), Tensor::vector(vec![2.0 * w]));
            adam.step(&mut params, &grads, &names).unwrap();
        }
        // Adam hovers around the minimum with step size ~lr, so allow that slack.
        assert!(params.get("w").data()[0].abs() < 5e-2);
    }

    #[test]
    fn adam_flags_nan_gradients() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![0.0]));
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3));
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![f64::NAN]));
        let err = adam.step(&mut params, &grads, &["w".to_string()]).unwrap_err();
        assert!(err.to_string().contains('w'));
    }
}
