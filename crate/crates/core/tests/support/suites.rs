//! Measurement routines shared by the property tests and the acceptance run.
//! Each returns the measured quantity; callers decide pass or fail.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vpn_core::autodiff::{grad_check, Tape, Tensor, Var};
use vpn_core::models::{BaseArch, BaseClassifier, Generator};
use vpn_core::pinoise::{
    batch_standard_normal, clean_cross_entropy, loss_vpn, reparameterize, sample_standard_normal,
    vpn_graph, Trainable,
};
use vpn_core::rng::Streams;
use vpn_core::Result;

use super::mi_oracle::{mutual_information_exact, JointTable};

pub const PRIMITIVE_STEP: f64 = 1e-5;
pub const VPN_STEP: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
        .expect("sized")
}

/// Entries with magnitude in `[0.1, 2)` and random sign, clear of the relu kink.
fn signed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let t = uniform(rng, rows, cols, 0.1, 2.0);
    let signs: Vec<f64> = (0..t.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::from_vec(rows, cols, t.data().iter().zip(signs).map(|(v, s)| v * s).collect()).expect("sized")
}

/// `sum(v * w)`, turning any node into a scalar with a generic gradient.
fn contract(tape: &mut Tape, v: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(w.clone());
    let p = tape.hadamard(v, w)?;
    Ok(tape.sum(p))
}

type Case = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// Worst finite-difference error per primitive over `configs` random shapes
/// and values.
pub fn primitive_gradient_errors(configs: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "matmul", "add", "add_row", "hadamard", "relu", "softplus", "log_softmax",
        "cap_row_norm", "gather_rows", "nll_mean", "sum", "scale",
    ];
    let mut worst = vec![0.0f64; names.len()];
    for _ in 0..configs {
        let r = rng.random_range(1..=4);
        let c = rng.random_range(2..=5);
        let k = rng.random_range(1..=4);
        let w = uniform(&mut rng, r, c, -1.0, 1.0);
        let x = uniform(&mut rng, r, c, -2.0, 2.0);

        let mut cases: Vec<(usize, Tensor, Case)> = Vec::new();
        {
            let b = uniform(&mut rng, c, k, -1.0, 1.0);
            let a = uniform(&mut rng, r, c, -1.0, 1.0);
            let wk = uniform(&mut rng, r, k, -1.0, 1.0);
            let (b2, wk2) = (b.clone(), wk.clone());
            cases.push((0, a.clone(), Box::new(move |t, p| {
                let b = t.constant(b2.clone());
                let y = t.matmul(p, b)?;
                contract(t, y, &wk2)
            })));
            cases.push((0, b, Box::new(move |t, p| {
                let a = t.constant(a.clone());
                let y = t.matmul(a, p)?;
                contract(t, y, &wk)
            })));
        }
        {
            let other = uniform(&mut rng, r, c, -1.0, 1.0);
            let w2 = w.clone();
            cases.push((1, x.clone(), Box::new(move |t, p| {
                let o = t.constant(other.clone());
                let y = t.add(p, o)?;
                let y = t.hadamard(y, y)?;
                contract(t, y, &w2)
            })));
        }
        {
            let row = uniform(&mut rng, 1, c, -1.0, 1.0);
            let (w2, w3, x2) = (w.clone(), w.clone(), x.clone());
            let row2 = row.clone();
            cases.push((2, x.clone(), Box::new(move |t, p| {
                let rv = t.constant(row2.clone());
                let y = t.add_row(p, rv)?;
                let y = t.hadamard(y, y)?;
                contract(t, y, &w2)
            })));
            cases.push((2, row, Box::new(move |t, p| {
                let xv = t.constant(x2.clone());
                let y = t.add_row(xv, p)?;
                let y = t.hadamard(y, y)?;
                contract(t, y, &w3)
            })));
        }
        {
            let other = uniform(&mut rng, r, c, -1.0, 1.0);
            let (w2, w3) = (w.clone(), w.clone());
            cases.push((3, x.clone(), Box::new(move |t, p| {
                let o = t.constant(other.clone());
                let y = t.hadamard(p, o)?;
                contract(t, y, &w2)
            })));
            cases.push((3, x.clone(), Box::new(move |t, p| {
                let y = t.hadamard(p, p)?;
                contract(t, y, &w3)
            })));
        }
        {
            let w2 = w.clone();
            cases.push((4, signed(&mut rng, r, c), Box::new(move |t, p| {
                let y = t.relu(p);
                contract(t, y, &w2)
            })));
        }
        {
            let w2 = w.clone();
            cases.push((5, uniform(&mut rng, r, c, -3.0, 3.0), Box::new(move |t, p| {
                let y = t.softplus(p);
                contract(t, y, &w2)
            })));
        }
        {
            let w2 = w.clone();
            cases.push((6, x.clone(), Box::new(move |t, p| {
                let y = t.log_softmax(p)?;
                contract(t, y, &w2)
            })));
        }
        {
            // rows are scaled so the cap binds on some rows and not others
            let mut v = uniform(&mut rng, r, c, -1.0, 1.0);
            let cap = rng.random_range(0.5..1.5);
            for i in 0..r {
                let target = if rng.random::<bool>() { cap * 1.5 } else { cap * 0.6 };
                let norm = v.row(i).iter().map(|z| z * z).sum::<f64>().sqrt();
                v.row_mut(i).iter_mut().for_each(|z| *z *= target / norm);
            }
            let w2 = w.clone();
            cases.push((7, v, Box::new(move |t, p| {
                let y = t.cap_row_norm(p, cap)?;
                contract(t, y, &w2)
            })));
        }
        {
            let picks = rng.random_range(1..=6);
            let index: Vec<usize> = (0..picks).map(|_| rng.random_range(0..r)).collect();
            let wg = uniform(&mut rng, picks, c, -1.0, 1.0);
            cases.push((8, x.clone(), Box::new(move |t, p| {
                let y = t.gather_rows(p, index.clone())?;
                let y = t.hadamard(y, y)?;
                contract(t, y, &wg)
            })));
        }
        {
            let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
            let l2 = labels.clone();
            cases.push((9, x.clone(), Box::new(move |t, p| {
                let y = t.hadamard(p, p)?;
                t.nll_mean(y, labels.clone())
            })));
            cases.push((9, x.clone(), Box::new(move |t, p| {
                let y = t.log_softmax(p)?;
                t.nll_mean(y, l2.clone())
            })));
        }
        {
            cases.push((10, x.clone(), Box::new(|t, p| {
                let y = t.hadamard(p, p)?;
                Ok(t.sum(y))
            })));
        }
        {
            let factor = rng.random_range(-3.0..3.0);
            let w2 = w.clone();
            cases.push((11, x.clone(), Box::new(move |t, p| {
                let y = t.scale(p, factor);
                let y = t.hadamard(y, y)?;
                contract(t, y, &w2)
            })));
        }

        for (slot, theta, f) in cases {
            let err = grad_check(|t, p| f(t, p), &theta, PRIMITIVE_STEP).expect("finite objective");
            worst[slot] = worst[slot].max(err);
        }
    }
    names.into_iter().zip(worst).collect()
}

/// One random VPN problem: a base model, a generator, a batch and its draws.
pub struct VpnCase {
    pub base: BaseClassifier,
    pub generator: Generator,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub eps_std: Tensor,
    pub m: usize,
}

impl VpnCase {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let d = rng.random_range(2..=5);
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let arch = if rng.random::<bool>() { BaseArch::Sr } else { BaseArch::Dnn3 };
        let mut base = BaseClassifier::new(arch, d, k, rng.random_range(3..=6), rng.random());
        // large caps leave the norm bound inactive, small ones make it bind
        let cap = if rng.random::<bool>() { 50.0 } else { rng.random_range(0.05..0.5) };
        let mut generator =
            Generator::new(d, k, rng.random_range(3..=6), 0.01 / k as f64, cap, rng.random()).expect("valid");
        // zero biases put rows with a dead first layer exactly on a relu kink
        for layer in base.net_mut().layers_mut().iter_mut().chain(generator.net_mut().layers_mut()) {
            layer.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let x = uniform(rng, n, d, 0.0, 1.0);
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        let eps_std = Tensor::from_vec(
            n * m,
            d,
            (0..n * m * d).map(|_| -> f64 { StandardNormal.sample(&mut *rng) }).collect(),
        )
        .expect("sized");
        VpnCase {
            base,
            generator,
            x,
            labels,
            eps_std,
            m,
        }
    }

    fn loss(&self, base: &BaseClassifier, generator: &Generator) -> f64 {
        let mut tape = Tape::new();
        let g = vpn_graph(&mut tape, base, generator, Trainable::NONE, &self.x, &self.labels, &self.eps_std, self.m)
            .expect("finite loss");
        tape.value(g.loss).item().expect("scalar")
    }

    /// Worst relative error between tape gradients and central differences
    /// over every parameter of both networks.
    pub fn gradient_error(&self, h: f64) -> f64 {
        let mut tape = Tape::new();
        let g = vpn_graph(
            &mut tape, &self.base, &self.generator, Trainable::BOTH, &self.x, &self.labels, &self.eps_std, self.m,
        )
        .expect("finite loss");
        tape.backward(g.loss).expect("scalar loss");
        let base_grads: Vec<Tensor> = g.base.grads(&tape).expect("trainable").into_iter().cloned().collect();
        let gen_grads: Vec<Tensor> = g.generator.grads(&tape).expect("trainable").into_iter().cloned().collect();

        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs() + 1e-12);
        let mut worst = 0.0f64;
        for (p, grad) in base_grads.iter().enumerate() {
            for i in 0..grad.len() {
                let numeric = central(h, |delta| {
                    let mut b = self.base.clone();
                    b.net_mut().params_mut()[p].data_mut()[i] += delta;
                    self.loss(&b, &self.generator)
                });

                worst = worst.max(rel(grad.data()[i], numeric));
            }
        }
        for (p, grad) in gen_grads.iter().enumerate() {
            for i in 0..grad.len() {
                let numeric = central(h, |delta| {
                    let mut gen = self.generator.clone();
                    gen.net_mut().params_mut()[p].data_mut()[i] += delta;
                    self.loss(&self.base, &gen)
                });
                worst = worst.max(rel(grad.data()[i], numeric));
            }
        }
        worst
    }
}

/// Five-point stencil, fourth order in `h`.
fn central(h: f64, f: impl Fn(f64) -> f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

/// Worst gradient error of the full VPN loss over `configs` random cases.
pub fn vpn_gradient_error(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..configs)
        .map(|_| VpnCase::random(&mut rng).gradient_error(VPN_STEP))
        .fold(0.0, f64::max)
}

/// Smallest `I - (L + H(T))` over random instances, each scored against a
/// random `q` and the true posterior.
pub fn bound_min_slack(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..instances {
        let nx = rng.random_range(1..=4);
        let ny = rng.random_range(2..=5);
        let ne = rng.random_range(2..=6);
        let t = JointTable::random(&mut rng, nx, ny, ne);
        let i = mutual_information_exact(&t);
        let h = t.task_entropy();
        for q in [t.random_q(&mut rng), t.posterior_q()] {
            let l = t.variational_objective(&q).expect("normalised q");
            worst = worst.min(i - (l + h));
        }
    }
    worst
}

pub struct EstimatorVariance {
    pub noise_sizes: Vec<usize>,
    pub variances: Vec<f64>,
    pub slope: f64,
}

/// Variance of the VPN loss estimate across independent resamplings for
/// each noise size, with frozen models and a fixed batch.
pub fn estimator_variance(resamplings: usize, seed: u64) -> EstimatorVariance {
    let (d, k, n) = (6, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = BaseClassifier::new(BaseArch::Dnn3, d, k, 8, seed);
    let generator = Generator::new(d, k, 8, 0.01 / k as f64, 3.0, seed + 1).expect("valid");
    let x = uniform(&mut rng, n, d, 0.0, 1.0);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let ids: Vec<usize> = (0..n).collect();
    let streams = Streams::new(seed);

    let noise_sizes = vec![1, 4, 16];
    let variances: Vec<f64> = noise_sizes
        .iter()
        .map(|&m| {
            let estimates: Vec<f64> = (0..resamplings as u64)
                .map(|r| loss_vpn(&base, &generator, &x, &labels, &ids, m, &streams, r).expect("finite"))
                .collect();
            super::mean_std(&estimates).1.powi(2)
        })
        .collect();
    let xs: Vec<f64> = noise_sizes.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    EstimatorVariance {
        slope: super::slope(&xs, &ys),
        noise_sizes,
        variances,
    }
}

/// Largest `|L_VPN - clean cross-entropy|` with a vanishing cap.
pub fn degenerate_gap(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..configs {
        let d = rng.random_range(2..=8);
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=16);
        let m = rng.random_range(1..=4);
        let base = BaseClassifier::new(BaseArch::Dnn3, d, k, 8, rng.random());
        let generator = Generator::new(d, k, 8, 0.01 / k as f64, 1e-9, rng.random()).expect("valid");
        let x = uniform(&mut rng, n, d, 0.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let ids: Vec<usize> = (0..n).collect();
        let noisy = loss_vpn(&base, &generator, &x, &labels, &ids, m, &Streams::new(seed), c as u64).expect("finite");
        let clean = clean_cross_entropy(&base, &x, &labels).expect("finite");
        worst = worst.max((noisy - clean).abs());
    }
    worst
}

pub struct ReparamStats {
    pub target: Vec<f64>,
    pub std: Vec<f64>,
    pub mean: Vec<f64>,
}

impl ReparamStats {
    pub fn worst_relative_std_error(&self) -> f64 {
        self.std.iter().zip(&self.target).map(|(s, t)| (s / t - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Per-coordinate statistics of `draws` reparameterized samples.
pub fn reparam_stats(sigma: &[f64], draws: usize, seed: u64) -> ReparamStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_std = sample_standard_normal(&mut rng, sigma.len(), draws).expect("m >= 1");
    let sigma_rows = Tensor::from_vec(draws, sigma.len(), sigma.repeat(draws)).expect("sized");
    let eps = reparameterize(&eps_std, &sigma_rows).expect("matching shapes");
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for j in 0..sigma.len() {
        let column: Vec<f64> = (0..draws).map(|i| eps.get(i, j)).collect();
        let (m, s) = super::mean_std(&column);
        mean.push(m);
        std.push(s);
    }
    ReparamStats {
        target: sigma.to_vec(),
        std,
        mean,
    }
}

/// The draws used for a batch do not depend on batch order or composition.
pub fn draws_are_order_free(seed: u64) -> bool {
    let streams = Streams::new(seed);
    let mut ids: Vec<usize> = (0..12).collect();
    let a = batch_standard_normal(&streams, 3, &ids, 2, 5).expect("m >= 1");
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let b = batch_standard_normal(&streams, 3, &ids, 2, 5).expect("m >= 1");
    ids.iter().enumerate().all(|(pos, &id)| {
        (0..2).all(|j| a.row(id * 2 + j) == b.row(pos * 2 + j))
    })
}
