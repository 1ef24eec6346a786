//! Gaussian noise sampling, the reparameterization and the Monte-Carlo
//! VPN loss
//!
//! ```text
//! L = -1/(n m) sum_i sum_j log softmax(h(x_i + e_ij * sigma(x_i, y_i)))[y_i]
//! ```

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{kernels, Tape, Tensor, Var};
use crate::models::{BaseClassifier, BoundMlp, Generator};
use crate::rng::{Domain, Streams};
use crate::{Result, VpnError};

/// Zero-mean Gaussian with diagonal covariance `diag(sigma^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussianNoise {
    sigma: Vec<f64>,
}

/// A standard-normal draw and its reparameterized image.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub eps_std: Vec<f64>,
    pub eps: Vec<f64>,
}

impl DiagonalGaussianNoise {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(bad) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(VpnError::Contract(format!(
                "noise scale must be positive and finite, got {bad}"
            )));
        }
        Ok(DiagonalGaussianNoise { sigma })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn variance(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        let eps_std: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let eps = eps_std.iter().zip(&self.sigma).map(|(e, s)| e * s).collect();
        NoiseDraw { eps_std, eps }
    }
}

/// `m` i.i.d. `N(0, I_d)` vectors as the rows of an `m x d` tensor.
pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R, d: usize, m: usize) -> Result<Tensor> {
    if m == 0 {
        return Err(VpnError::Contract("noise size m must be at least 1".into()));
    }
    let data = (0..m * d).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(m, d, data)
}

/// `eps = eps_std * sigma`, elementwise.
pub fn reparameterize(eps_std: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    kernels::hadamard(eps_std, sigma)
}

/// Training draws for a batch: row `i * m + j` is draw `j` for the sample
/// with dataset index `sample_ids[i]`, taken from its own
/// `(epoch, sample, j)` stream.
pub fn batch_standard_normal(
    streams: &Streams,
    epoch: u64,
    sample_ids: &[usize],
    m: usize,
    d: usize,
) -> Result<Tensor> {
    if m == 0 {
        return Err(VpnError::Contract("noise size m must be at least 1".into()));
    }
    let mut data = Vec::with_capacity(sample_ids.len() * m * d);
    for &id in sample_ids {
        for j in 0..m {
            let mut rng = streams.stream(Domain::TrainNoise, epoch, id as u64, j as u64);
            data.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        }
    }
    Tensor::from_vec(sample_ids.len() * m, d, data)
}

/// Handles into a recorded VPN loss graph.
#[derive(Clone, Debug)]
pub struct VpnGraph {
    pub loss: Var,
    /// `n*m x |Y|` logits on the noisy inputs, rows in draw order.
    pub logits: Var,
    /// `n x d` noise scales.
    pub sigma: Var,
    pub base: BoundMlp,
    pub generator: BoundMlp,
}

/// Which of the two networks receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub base: bool,
    pub generator: bool,
}

impl Trainable {
    pub const BOTH: Trainable = Trainable {
        base: true,
        generator: true,
    };
    pub const GENERATOR: Trainable = Trainable {
        base: false,
        generator: true,
    };
    pub const NONE: Trainable = Trainable {
        base: false,
        generator: false,
    };
}

/// Records the VPN loss for a batch on `tape`.
///
/// `eps_std` holds `m` standard-normal rows per sample (see
/// [`batch_standard_normal`] for the row order).
pub fn vpn_graph(
    tape: &mut Tape,
    base: &BaseClassifier,
    generator: &Generator,
    trainable: Trainable,
    x: &Tensor,
    labels: &[usize],
    eps_std: &Tensor,
    m: usize,
) -> Result<VpnGraph> {
    let n = x.rows();
    if n == 0 {
        return Err(VpnError::Contract("loss_vpn needs a non-empty batch".into()));
    }
    if m == 0 {
        return Err(VpnError::Contract("noise size m must be at least 1".into()));
    }
    if labels.len() != n {
        return Err(VpnError::dim("loss_vpn", format!("{} labels for {n} rows", labels.len())));
    }
    if eps_std.shape() != [n * m, x.cols()] {
        return Err(VpnError::dim(
            "loss_vpn",
            format!("noise draws {:?}, expected [{}, {}]", eps_std.shape(), n * m, x.cols()),
        ));
    }

    let gen_vars = generator.bind(tape, trainable.generator);
    let base_vars = base.bind(tape, trainable.base);

    let sigma = generator.sigma_on_tape(tape, &gen_vars, x, labels)?;
    let repeat: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();
    let sigma_rep = tape.gather_rows(sigma, repeat.clone())?;
    let draws = tape.constant(eps_std.clone());
    let eps = tape.hadamard(draws, sigma_rep)?;
    let x_rep = tape.constant(kernels::gather_rows(x, &repeat)?);
    let noisy = tape.add(x_rep, eps)?;
    let logits = base.logits_on_tape(tape, &base_vars, noisy)?;

    if !tape.value(logits).is_finite() {
        return Err(VpnError::Numeric(diagnostics("non-finite logits", tape, sigma, logits)));
    }
    let logp = tape.log_softmax(logits)?;
    let rep_labels = repeat.iter().map(|&i| labels[i]).collect();
    let loss = tape.nll_mean(logp, rep_labels)?;
    if !tape.value(loss).data()[0].is_finite() {
        return Err(VpnError::Numeric(diagnostics("non-finite loss", tape, sigma, logits)));
    }
    Ok(VpnGraph {
        loss,
        logits,
        sigma,
        base: base_vars,
        generator: gen_vars,
    })
}

fn diagnostics(what: &str, tape: &Tape, sigma: Var, logits: Var) -> String {
    let max_abs = |t: &Tensor| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    format!(
        "{what}: loss_vpn max sigma = {}, max |logit| = {}",
        max_abs(tape.value(sigma)),
        max_abs(tape.value(logits))
    )
}

/// Value of the VPN loss with fresh draws from the `(epoch, sample, j)`
/// training streams.
#[allow(clippy::too_many_arguments)]
pub fn loss_vpn(
    base: &BaseClassifier,
    generator: &Generator,
    x: &Tensor,
    labels: &[usize],
    sample_ids: &[usize],
    m: usize,
    streams: &Streams,
    epoch: u64,
) -> Result<f64> {
    if sample_ids.len() != x.rows() {
        return Err(VpnError::dim(
            "loss_vpn",
            format!("{} sample ids for {} rows", sample_ids.len(), x.rows()),
        ));
    }
    let eps_std = batch_standard_normal(streams, epoch, sample_ids, m, x.cols())?;
    let mut tape = Tape::new();
    let graph = vpn_graph(&mut tape, base, generator, Trainable::NONE, x, labels, &eps_std, m)?;
    tape.value(graph.loss).item()
}

/// Mean cross-entropy of the base model on clean inputs.
pub fn clean_cross_entropy(base: &BaseClassifier, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let logp = kernels::log_softmax(&base.logits(x, None)?)?;
    if labels.len() != x.rows() || labels.is_empty() {
        return Err(VpnError::dim("cross_entropy", "labels do not match rows"));
    }
    Ok(labels.iter().enumerate().map(|(i, &y)| -logp.get(i, y)).sum::<f64>() / labels.len() as f64)
}
