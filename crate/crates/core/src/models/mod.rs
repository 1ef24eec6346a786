//! Base classifiers, the noise generator and the `(x, y)` fusion encoding.

mod checkpoint;
mod mlp;

pub use checkpoint::{
    load_base, load_generator, read_checkpoint, save_base, save_generator, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use mlp::{BoundMlp, ForwardCounter, Linear, Mlp};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Tape, Tensor, Var};
use crate::rng::{Domain, Streams};
use crate::{Result, VpnError};

/// Width of the hidden layers of the three-layer networks.
pub const DEFAULT_HIDDEN: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseArch {
    /// Softmax regression: one affine map `d -> |Y|`.
    Sr,
    /// `d - hidden - hidden - |Y|` ReLU network.
    Dnn3,
}

impl fmt::Display for BaseArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseArch::Sr => "sr",
            BaseArch::Dnn3 => "dnn3",
        })
    }
}

impl FromStr for BaseArch {
    type Err = VpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(BaseArch::Sr),
            "dnn3" => Ok(BaseArch::Dnn3),
            other => Err(VpnError::Contract(format!("unknown base model `{other}`"))),
        }
    }
}

/// `gamma = 0.01 / |Y|`.
pub fn default_gamma(class_count: usize) -> f64 {
    0.01 / class_count as f64
}

/// `C = 0.1 * sqrt(d)`.
pub fn default_cap(d: usize) -> f64 {
    0.1 * (d as f64).sqrt()
}

/// `x + gamma * y`: the class index added to every coordinate.
pub fn encode_label_bias(x: &[f64], y: usize, gamma: f64) -> Vec<f64> {
    let shift = gamma * y as f64;
    x.iter().map(|v| v + shift).collect()
}

/// Row-wise [`encode_label_bias`] over a batch.
pub fn encode_label_bias_batch(x: &Tensor, labels: &[usize], gamma: f64) -> Result<Tensor> {
    if labels.len() != x.rows() {
        return Err(VpnError::dim(
            "encode_label_bias",
            format!("{} labels for {} rows", labels.len(), x.rows()),
        ));
    }
    let mut out = x.clone();
    for (r, &y) in labels.iter().enumerate() {
        let shift = gamma * y as f64;
        for v in out.row_mut(r) {
            *v += shift;
        }
    }
    Ok(out)
}

/// The classifier `h` whose softmax output plays the role of `q(y | x, eps)`.
#[derive(Clone, Debug)]
pub struct BaseClassifier {
    arch: BaseArch,
    d: usize,
    class_count: usize,
    hidden: usize,
    net: Mlp,
    forwards: ForwardCounter,
}

impl BaseClassifier {
    pub fn new(arch: BaseArch, d: usize, class_count: usize, hidden: usize, seed: u64) -> Self {
        let sizes = match arch {
            BaseArch::Sr => vec![d, class_count],
            BaseArch::Dnn3 => vec![d, hidden, hidden, class_count],
        };
        let mut rng = Streams::new(seed).stream(Domain::Init, 0, 0, 0);
        BaseClassifier {
            arch,
            d,
            class_count,
            hidden,
            net: Mlp::new(&sizes, &mut rng),
            forwards: ForwardCounter::default(),
        }
    }

    pub fn sr(d: usize, class_count: usize, seed: u64) -> Self {
        BaseClassifier::new(BaseArch::Sr, d, class_count, 0, seed)
    }

    pub fn dnn3(d: usize, class_count: usize, hidden: usize, seed: u64) -> Self {
        BaseClassifier::new(BaseArch::Dnn3, d, class_count, hidden, seed)
    }

    pub(crate) fn from_parts(
        arch: BaseArch,
        d: usize,
        class_count: usize,
        hidden: usize,
        net: Mlp,
    ) -> Result<Self> {
        let layers = match arch {
            BaseArch::Sr => 1,
            BaseArch::Dnn3 => 3,
        };
        if net.layers().len() != layers
            || net.input_dim() != d
            || net.output_dim() != class_count
        {
            return Err(VpnError::Format(format!(
                "{arch} network layout does not match d={d}, classes={class_count}"
            )));
        }
        Ok(BaseClassifier {
            arch,
            d,
            class_count,
            hidden,
            net,
            forwards: ForwardCounter::default(),
        })
    }

    pub fn arch(&self) -> BaseArch {
        self.arch
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Rows forwarded through this model since creation or the last reset.
    pub fn forward_count(&self) -> &ForwardCounter {
        &self.forwards
    }

    /// Logits of `x + eps`; `eps = None` is the clean pass.
    pub fn logits(&self, x: &Tensor, eps: Option<&Tensor>) -> Result<Tensor> {
        self.check_input(x)?;
        let input = match eps {
            Some(e) => kernels::add(x, e)?,
            None => x.clone(),
        };
        self.forwards.add(input.rows());
        self.net.forward(&input)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        self.net.bind(tape, trainable)
    }

    /// Tape version of [`BaseClassifier::logits`] on an already-formed input.
    pub fn logits_on_tape(&self, tape: &mut Tape, bound: &BoundMlp, input: Var) -> Result<Var> {
        self.check_input(tape.value(input))?;
        self.forwards.add(tape.value(input).rows());
        bound.forward(tape, input)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.d {
            return Err(VpnError::dim(
                "classifier_forward",
                format!("input has {} features, model expects {}", x.cols(), self.d),
            ));
        }
        Ok(())
    }
}

/// The network `f` mapping `(x, y)` to per-coordinate noise standard
/// deviations: `sigma = cap(softplus(net(x + gamma * y)), C)`.
#[derive(Clone, Debug)]
pub struct Generator {
    d: usize,
    class_count: usize,
    hidden: usize,
    gamma: f64,
    cap: f64,
    net: Mlp,
    trained_steps: u64,
    forwards: ForwardCounter,
}

impl Generator {
    pub fn new(
        d: usize,
        class_count: usize,
        hidden: usize,
        gamma: f64,
        cap: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = Streams::new(seed).stream(Domain::Init, 1, 0, 0);
        let net = Mlp::new(&[d, hidden, hidden, d], &mut rng);
        Generator::from_parts(d, class_count, hidden, gamma, cap, net, 0)
    }

    /// Generator with the default `gamma` and `C` for this shape.
    pub fn with_defaults(d: usize, class_count: usize, hidden: usize, seed: u64) -> Result<Self> {
        Generator::new(
            d,
            class_count,
            hidden,
            default_gamma(class_count),
            default_cap(d),
            seed,
        )
    }

    pub(crate) fn from_parts(
        d: usize,
        class_count: usize,
        hidden: usize,
        gamma: f64,
        cap: f64,
        net: Mlp,
        trained_steps: u64,
    ) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(VpnError::Contract(format!(
                "noise norm cap must be positive and finite, got {cap}"
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(VpnError::Contract(format!("gamma must be >= 0, got {gamma}")));
        }
        if net.layers().len() != 3 || net.input_dim() != d || net.output_dim() != d {
            return Err(VpnError::Format(format!(
                "generator network layout does not match d={d}"
            )));
        }
        Ok(Generator {
            d,
            class_count,
            hidden,
            gamma,
            cap,
            net,
            trained_steps,
            forwards: ForwardCounter::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn forward_count(&self) -> &ForwardCounter {
        &self.forwards
    }

    /// Optimizer steps applied so far.
    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }

    pub(crate) fn record_step(&mut self) {
        self.trained_steps += 1;
    }

    /// Marks the generator as usable for inference without training it,
    /// e.g. for hand-built test fixtures.
    pub fn mark_trained(&mut self) {
        self.trained_steps = self.trained_steps.max(1);
    }

    fn check(&self, x: &Tensor, labels: &[usize]) -> Result<()> {
        if x.cols() != self.d {
            return Err(VpnError::dim(
                "generator_forward",
                format!("input has {} features, generator expects {}", x.cols(), self.d),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.class_count) {
            return Err(VpnError::Contract(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    /// Noise standard deviations for each row of `x` under its label.
    pub fn sigma(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        self.check(x, labels)?;
        let encoded = encode_label_bias_batch(x, labels, self.gamma)?;
        self.forwards.add(x.rows());
        let raw = self.net.forward(&encoded)?;
        Ok(kernels::cap_row_norm(&kernels::softplus(&raw), self.cap))
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        self.net.bind(tape, trainable)
    }

    pub fn sigma_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundMlp,
        x: &Tensor,
        labels: &[usize],
    ) -> Result<Var> {
        self.check(x, labels)?;
        let encoded = tape.constant(encode_label_bias_batch(x, labels, self.gamma)?);
        self.forwards.add(x.rows());
        let raw = bound.forward(tape, encoded)?;
        let positive = tape.softplus(raw);
        tape.cap_row_norm(positive, self.cap)
    }
}
