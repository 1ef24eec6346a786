//! Training loops for the four regimes, with best-validation selection.

mod adam;
mod config;
mod metrics;

pub use adam::Adam;
pub use config::{Mode, TrainConfig};
pub use metrics::{EpochRecord, RunMetrics, METRICS_HEADER};

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{kernels, Tape, Tensor};
use crate::data_io::{batches, DatasetSplit, Part};
use crate::inference::{eval_streams, evaluate_clean, evaluate_noisy};
use crate::models::{BaseClassifier, Generator};
use crate::pinoise::{batch_standard_normal, vpn_graph, Trainable};
use crate::rng::{Domain, Streams};
use crate::{Result, VpnError};

/// Called after every epoch with the record and the current (not the best)
/// models.
pub type EpochHook<'a> =
    dyn FnMut(&EpochRecord, &BaseClassifier, Option<&Generator>) -> Result<()> + 'a;

/// State of a run that hit a non-finite loss. The models are those at the end
/// of the last completed epoch (the initial models if none completed).
#[derive(Debug)]
pub struct DivergedRun {
    pub epoch: usize,
    /// 0-based index of the offending batch within the epoch.
    pub batch: usize,
    pub loss: f64,
    pub base: BaseClassifier,
    pub generator: Option<Generator>,
    pub metrics: RunMetrics,
}

/// Best-validation models and the full trajectory.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub base: BaseClassifier,
    pub generator: Option<Generator>,
    pub metrics: RunMetrics,
}

/// Adds `N(0, 1)` noise to `floor(fraction * d)` distinct coordinates of `x`
/// and returns the coordinates touched.
pub fn add_random_pixel_noise<R: Rng + ?Sized>(
    x: &mut [f64],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(VpnError::Contract(format!(
            "random pixel fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let d = x.len();
    let count = ((fraction * d as f64) + 1e-9).floor() as usize;
    let picked = rand::seq::index::sample(rng, d, count.min(d)).into_vec();
    for &i in &picked {
        let z: f64 = StandardNormal.sample(rng);
        x[i] += z;
    }
    Ok(picked)
}

pub fn train_baseline(
    split: &DatasetSplit,
    base: BaseClassifier,
    config: &TrainConfig,
) -> Result<(BaseClassifier, RunMetrics)> {
    let config = TrainConfig {
        mode: Mode::Baseline,
        ..config.clone()
    };
    let run = train(split, base, None, &config, None)?;
    Ok((run.base, run.metrics))
}

pub fn train_random(
    split: &DatasetSplit,
    base: BaseClassifier,
    config: &TrainConfig,
) -> Result<(BaseClassifier, RunMetrics)> {
    let config = TrainConfig {
        mode: Mode::Random,
        ..config.clone()
    };
    let run = train(split, base, None, &config, None)?;
    Ok((run.base, run.metrics))
}

pub fn train_joint(
    split: &DatasetSplit,
    base: BaseClassifier,
    generator: Generator,
    config: &TrainConfig,
) -> Result<(BaseClassifier, Generator, RunMetrics)> {
    let config = TrainConfig {
        mode: Mode::Joint,
        ..config.clone()
    };
    let run = train(split, base, Some(generator), &config, None)?;
    let generator = run.generator.expect("joint run keeps its generator");
    Ok((run.base, generator, run.metrics))
}

/// Trains the generator against a frozen `base`.
pub fn train_fixed_base(
    split: &DatasetSplit,
    base: &BaseClassifier,
    generator: Generator,
    config: &TrainConfig,
) -> Result<(Generator, RunMetrics)> {
    let config = TrainConfig {
        mode: Mode::FixedBase,
        ..config.clone()
    };
    let run = train(split, base.clone(), Some(generator), &config, None)?;
    let generator = run.generator.expect("fixed-base run keeps its generator");
    Ok((generator, run.metrics))
}

/// Runs `config.mode` and returns the models from the epoch with the best
/// validation accuracy.
pub fn train(
    split: &DatasetSplit,
    base: BaseClassifier,
    generator: Option<Generator>,
    config: &TrainConfig,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<TrainedRun> {
    config.validate()?;
    check_setup(split, &base, generator.as_ref(), config)?;
    Trainer::new(split, base, generator, config).run(hook)
}

fn check_setup(
    split: &DatasetSplit,
    base: &BaseClassifier,
    generator: Option<&Generator>,
    config: &TrainConfig,
) -> Result<()> {
    let (n_train, n_val, n_test) = split.sizes();
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(VpnError::Contract(format!(
            "training needs non-empty train/validation/test sections, got {n_train}/{n_val}/{n_test}"
        )));
    }
    if base.dim() != split.dim() || base.class_count() != split.class_count() {
        return Err(VpnError::Contract(format!(
            "base model is {}->{}, dataset is {}->{}",
            base.dim(),
            base.class_count(),
            split.dim(),
            split.class_count()
        )));
    }
    match (config.mode.uses_generator(), generator) {
        (true, None) => Err(VpnError::Contract(format!("mode {} needs a generator", config.mode))),
        (false, Some(_)) => Err(VpnError::Contract(format!(
            "mode {} does not use a generator",
            config.mode
        ))),
        (true, Some(g)) if g.dim() != split.dim() || g.class_count() != split.class_count() => {
            Err(VpnError::Contract(format!(
                "generator is for d={} |Y|={}, dataset has d={} |Y|={}",
                g.dim(),
                g.class_count(),
                split.dim(),
                split.class_count()
            )))
        }
        _ => Ok(()),
    }
}

struct Snapshot {
    base: BaseClassifier,
    generator: Option<Generator>,
}

struct Trainer<'a> {
    split: &'a DatasetSplit,
    config: &'a TrainConfig,
    streams: Streams,
    base: BaseClassifier,
    generator: Option<Generator>,
    base_opt: Adam,
    gen_opt: Adam,
    metrics: RunMetrics,
    last: Snapshot,
}

struct BatchResult {
    loss: f64,
    correct: usize,
    rows: usize,
}

enum StepError {
    Diverged(f64),
    Other(VpnError),
}

impl From<VpnError> for StepError {
    fn from(e: VpnError) -> Self {
        match e {
            VpnError::Numeric(_) => StepError::Diverged(f64::NAN),
            other => StepError::Other(other),
        }
    }
}

impl<'a> Trainer<'a> {
    fn new(
        split: &'a DatasetSplit,
        base: BaseClassifier,
        generator: Option<Generator>,
        config: &'a TrainConfig,
    ) -> Self {
        let last = Snapshot {
            base: base.clone(),
            generator: generator.clone(),
        };
        Trainer {
            split,
            config,
            streams: Streams::new(config.seed),
            base,
            generator,
            base_opt: Adam::new(config.learning_rate),
            gen_opt: Adam::new(config.learning_rate),
            metrics: RunMetrics::new(),
            last,
        }
    }

    fn run(mut self, mut hook: Option<&mut EpochHook<'_>>) -> Result<TrainedRun> {
        let mut best: Option<Snapshot> = None;
        for epoch in 1..=self.config.epochs {
            let record = self.epoch(epoch)?;
            self.metrics.push(record)?;
            let record = self.metrics.last().expect("just pushed");
            if self.metrics.best_record().map(|r| r.epoch) == Some(epoch) {
                best = Some(Snapshot {
                    base: self.base.clone(),
                    generator: self.generator.clone(),
                });
            }
            if let Some(h) = hook.as_deref_mut() {
                h(record, &self.base, self.generator.as_ref())?;
            }
            self.last = Snapshot {
                base: self.base.clone(),
                generator: self.generator.clone(),
            };
        }
        let best = best.expect("at least one epoch ran");
        Ok(TrainedRun {
            base: best.base,
            generator: best.generator,
            metrics: self.metrics,
        })
    }

    fn epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let started = Instant::now();
        let train = self.split.train();
        let base_rows0 = self.base.forward_count().get();
        let gen_rows0 = self.generator.as_ref().map_or(0, |g| g.forward_count().get());

        let mut batch_losses = Vec::new();
        let (mut weighted, mut correct, mut rows, mut samples) = (0.0, 0usize, 0usize, 0usize);
        for (b, ids) in batches(train, self.config.batch_size, self.config.seed, epoch as u64)?
            .into_iter()
            .enumerate()
        {
            let result = match self.step(epoch, &ids) {
                Ok(r) if r.loss.is_finite() => r,
                Ok(r) => return Err(self.diverged(epoch, b, r.loss)),
                Err(StepError::Diverged(loss)) => return Err(self.diverged(epoch, b, loss)),
                Err(StepError::Other(e)) => return Err(e),
            };
            batch_losses.push(result.loss);
            weighted += result.loss * ids.len() as f64;
            samples += ids.len();
            correct += result.correct;
            rows += result.rows;
        }
        let base_forward_rows = self.base.forward_count().get() - base_rows0;
        let generator_forward_rows =
            self.generator.as_ref().map_or(0, |g| g.forward_count().get()) - gen_rows0;

        let (val_acc, test_acc, clean_test_acc) = self.evaluate()?;
        Ok(EpochRecord {
            epoch,
            train_loss: weighted / samples as f64,
            train_acc: correct as f64 / rows as f64,
            val_acc,
            test_acc,
            clean_test_acc,
            seconds: started.elapsed().as_secs_f64(),
            batch_losses,
            base_forward_rows,
            generator_forward_rows,
        })
    }

    fn evaluate(&self) -> Result<(f64, f64, Option<f64>)> {
        let (val, test) = (self.split.validation(), self.split.test());
        match &self.generator {
            Some(g) => {
                let spc = self.config.samples_per_class;
                let seed = self.config.seed;
                let val_acc =
                    evaluate_noisy(&self.base, g, val, &eval_streams(seed, Part::Validation), spc)?;
                let test_acc =
                    evaluate_noisy(&self.base, g, test, &eval_streams(seed, Part::Test), spc)?;
                Ok((val_acc, test_acc, Some(evaluate_clean(&self.base, test)?)))
            }
            None => Ok((evaluate_clean(&self.base, val)?, evaluate_clean(&self.base, test)?, None)),
        }
    }

    fn diverged(&self, epoch: usize, batch: usize, loss: f64) -> VpnError {
        VpnError::Diverged(Box::new(DivergedRun {
            epoch,
            batch,
            loss,
            base: self.last.base.clone(),
            generator: self.last.generator.clone(),
            metrics: self.metrics.clone(),
        }))
    }

    fn step(&mut self, epoch: usize, ids: &[usize]) -> std::result::Result<BatchResult, StepError> {
        let (mut x, labels) = self.split.train().gather(ids);
        match self.config.mode {
            Mode::Baseline => self.clean_step(&x, &labels),
            Mode::Random => {
                let d = x.cols();
                for (r, &id) in ids.iter().enumerate() {
                    let mut rng = self.streams.stream(Domain::RandomPixels, epoch as u64, id as u64, 0);
                    add_random_pixel_noise(
                        &mut x.data_mut()[r * d..(r + 1) * d],
                        self.config.random_pixel_fraction,
                        &mut rng,
                    )?;
                }
                self.clean_step(&x, &labels)
            }
            Mode::Joint => self.noisy_step(epoch, ids, &x, &labels, Trainable::BOTH),
            Mode::FixedBase => self.noisy_step(epoch, ids, &x, &labels, Trainable::GENERATOR),
        }
    }

    fn clean_step(
        &mut self,
        x: &Tensor,
        labels: &[usize],
    ) -> std::result::Result<BatchResult, StepError> {
        let mut tape = Tape::new();
        let bound = self.base.bind(&mut tape, true);
        let input = tape.constant(x.clone());
        let logits = self.base.logits_on_tape(&mut tape, &bound, input)?;
        let logp = tape.log_softmax(logits)?;
        let loss = tape.nll_mean(logp, labels.to_vec())?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(StepError::Diverged(value));
        }
        let correct = count_correct(tape.value(logits), labels, 1);
        tape.backward(loss)?;
        let grads = bound.grads(&tape).expect("base bound as trainable");
        self.base_opt.step(&mut self.base.net_mut().params_mut(), &grads)?;
        Ok(BatchResult {
            loss: value,
            correct,
            rows: labels.len(),
        })
    }

    fn noisy_step(
        &mut self,
        epoch: usize,
        ids: &[usize],
        x: &Tensor,
        labels: &[usize],
        trainable: Trainable,
    ) -> std::result::Result<BatchResult, StepError> {
        let m = self.config.noise_size;
        let generator = self.generator.as_mut().expect("checked before training");
        let eps_std = batch_standard_normal(&self.streams, epoch as u64, ids, m, x.cols())?;
        let mut tape = Tape::new();
        let graph = vpn_graph(&mut tape, &self.base, generator, trainable, x, labels, &eps_std, m)?;
        let value = tape.value(graph.loss).item()?;
        if !value.is_finite() {
            return Err(StepError::Diverged(value));
        }
        let correct = count_correct(tape.value(graph.logits), labels, m);
        tape.backward(graph.loss)?;

        if trainable.base {
            let grads = graph.base.grads(&tape).expect("base bound as trainable");
            self.base_opt.step(&mut self.base.net_mut().params_mut(), &grads)?;
        }
        let grads = graph.generator.grads(&tape).expect("generator bound as trainable");
        self.gen_opt.step(&mut generator.net_mut().params_mut(), &grads)?;
        generator.record_step();
        Ok(BatchResult {
            loss: value,
            correct,
            rows: labels.len() * m,
        })
    }
}

/// Correct rows of `logits`, where row `i * m + j` belongs to `labels[i]`.
fn count_correct(logits: &Tensor, labels: &[usize], m: usize) -> usize {
    kernels::argmax_rows(logits)
        .iter()
        .enumerate()
        .filter(|(r, &p)| p == labels[r / m])
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::make_blobs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_pixel_count_is_floor_of_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![0.5; 784];
        let touched = add_random_pixel_noise(&mut x, 0.1, &mut rng).unwrap();
        assert_eq!(touched.len(), 78);
        let changed = x.iter().filter(|&&v| v != 0.5).count();
        assert_eq!(changed, 78);
        let mut y = vec![0.0; 100];
        assert_eq!(add_random_pixel_noise(&mut y, 0.29, &mut rng).unwrap().len(), 29);
        assert!(add_random_pixel_noise(&mut y, -0.1, &mut rng).is_err());
    }

    #[test]
    fn mode_and_generator_must_agree() {
        let split = make_blobs(2, 3, 8, 4.0, 0).unwrap();
        let base = BaseClassifier::sr(3, 2, 0);
        let gen = Generator::new(3, 2, 4, 0.005, 0.1, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::with_mode(Mode::Joint)
        };
        assert!(matches!(
            train(&split, base.clone(), None, &cfg, None),
            Err(VpnError::Contract(_))
        ));
        let cfg = TrainConfig::with_mode(Mode::Baseline);
        assert!(matches!(
            train(&split, base, Some(gen), &cfg, None),
            Err(VpnError::Contract(_))
        ));
    }

    #[test]
    fn fixed_base_leaves_base_untouched_and_marks_generator() {
        let split = make_blobs(2, 3, 16, 4.0, 1).unwrap();
        let base = BaseClassifier::sr(3, 2, 2);
        let before = base.net().checksum();
        let gen = Generator::new(3, 2, 8, 0.005, 0.2, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (gen, metrics) = train_fixed_base(&split, &base, gen, &cfg).unwrap();
        assert_eq!(base.net().checksum(), before);
        assert!(gen.trained_steps() > 0);
        assert_eq!(metrics.records().len(), 2);
    }

    #[test]
    fn hook_sees_every_epoch() {
        let split = make_blobs(2, 3, 8, 4.0, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let mut hook = |r: &EpochRecord, _: &BaseClassifier, g: Option<&Generator>| {
            assert!(g.is_none());
            seen.push(r.epoch);
            Ok(())
        };
        train(&split, BaseClassifier::sr(3, 2, 0), None, &cfg, Some(&mut hook)).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn divergence_reports_batch_and_last_models() {
        let split = make_blobs(2, 3, 8, 4.0, 0).unwrap();
        let mut base = BaseClassifier::sr(3, 2, 0);
        base.net_mut().params_mut()[0].data_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        match train_baseline(&split, base, &cfg) {
            Err(VpnError::Diverged(run)) => {
                assert_eq!((run.epoch, run.batch), (1, 0));
                assert!(run.metrics.records().is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
