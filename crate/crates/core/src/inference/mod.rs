//! Per-class noisy prediction, clean prediction, accuracy and heatmaps.

mod heatmap;

pub use heatmap::{
    contrast_statistic, export_heatmap, read_pgm, read_variance_csv, write_pgm, Contrast,
    HeatmapArtifact, HeatmapPaths, Pgm,
};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::autodiff::{kernels, Tensor};
use crate::data_io::{Part, Section};
use crate::models::{BaseClassifier, Generator};
use crate::rng::{Domain, Streams};
use crate::{Result, VpnError};

/// Samples evaluated together in one batched forward.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `scores[Y]` is `q(y = Y | x, eps_Y)`; for clean prediction, the
    /// softmax of the clean logits.
    pub scores: Vec<f64>,
    pub label: usize,
    /// Noise added under each class hypothesis, one `samples x d` tensor per
    /// class. Empty unless requested.
    pub noise: Vec<Tensor>,
}

/// Evaluation streams for one part of a dataset, so validation and test
/// samples with the same index draw different noise.
pub fn eval_streams(seed: u64, part: Part) -> Streams {
    Streams::new(seed).fork(part as u64 + 1)
}

/// Clean prediction for a batch: one forward pass per row.
pub fn predict_clean_batch(base: &BaseClassifier, x: &Tensor) -> Result<Vec<Prediction>> {
    let probs = kernels::softmax(&base.logits(x, None)?)?;
    Ok((0..probs.rows())
        .map(|r| Prediction {
            scores: probs.row(r).to_vec(),
            label: kernels::argmax(probs.row(r)),
            noise: Vec::new(),
        })
        .collect())
}

pub fn predict_clean(base: &BaseClassifier, x: &[f64]) -> Result<Prediction> {
    let mut p = predict_clean_batch(base, &Tensor::row_vector(x))?;
    Ok(p.remove(0))
}

fn check_pair(base: &BaseClassifier, generator: &Generator) -> Result<()> {
    if generator.trained_steps() == 0 {
        return Err(VpnError::Contract(
            "generator has never been trained; refusing noisy inference".into(),
        ));
    }
    if base.dim() != generator.dim() || base.class_count() != generator.class_count() {
        return Err(VpnError::Contract(format!(
            "base (d={}, classes={}) and generator (d={}, classes={}) are incompatible",
            base.dim(),
            base.class_count(),
            generator.dim(),
            generator.class_count()
        )));
    }
    Ok(())
}

/// Noisy prediction for a batch of samples.
///
/// For each class `Y`: `sigma_Y = f(x, Y)`, `eps_Y = e * sigma_Y` with `e`
/// from the `(sample, Y, s)` evaluation stream, and the score is the `Y`-th
/// softmax coordinate of `h(x + eps_Y)`, averaged over `samples_per_class`
/// draws. The prediction is the arg max of the scores.
pub fn predict_noisy_batch(
    base: &BaseClassifier,
    generator: &Generator,
    x: &Tensor,
    sample_ids: &[usize],
    streams: &Streams,
    samples_per_class: usize,
    keep_noise: bool,
) -> Result<Vec<Prediction>> {
    check_pair(base, generator)?;
    if samples_per_class == 0 {
        return Err(VpnError::Contract("samples_per_class must be at least 1".into()));
    }
    if sample_ids.len() != x.rows() {
        return Err(VpnError::dim(
            "predict_with_noise",
            format!("{} sample ids for {} rows", sample_ids.len(), x.rows()),
        ));
    }
    let (n, d, k) = (x.rows(), x.cols(), base.class_count());
    let mut scores = vec![vec![0.0; k]; n];
    let mut noise: Vec<Vec<Tensor>> = vec![Vec::new(); n];

    for class in 0..k {
        let sigma = generator.sigma(x, &vec![class; n])?;
        let mut kept: Vec<Vec<f64>> = vec![Vec::new(); n];
        for s in 0..samples_per_class {
            let mut eps_std = Vec::with_capacity(n * d);
            for &id in sample_ids {
                let mut rng = streams.stream(Domain::EvalNoise, id as u64, class as u64, s as u64);
                eps_std.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            }
            let eps = kernels::hadamard(&Tensor::from_vec(n, d, eps_std)?, &sigma)?;
            let probs = kernels::softmax(&base.logits(x, Some(&eps))?)?;
            for r in 0..n {
                scores[r][class] += probs.get(r, class) / samples_per_class as f64;
                if keep_noise {
                    kept[r].extend_from_slice(eps.row(r));
                }
            }
        }
        if keep_noise {
            for (r, v) in kept.into_iter().enumerate() {
                noise[r].push(Tensor::from_vec(samples_per_class, d, v)?);
            }
        }
    }

    Ok(scores
        .into_iter()
        .zip(noise)
        .map(|(scores, noise)| Prediction {
            label: kernels::argmax(&scores),
            scores,
            noise,
        })
        .collect())
}

/// Noisy prediction for a single sample, keeping the noise for audit.
pub fn predict_with_noise(
    base: &BaseClassifier,
    generator: &Generator,
    x: &[f64],
    sample_id: usize,
    streams: &Streams,
    samples_per_class: usize,
) -> Result<Prediction> {
    let mut p = predict_noisy_batch(
        base,
        generator,
        &Tensor::row_vector(x),
        &[sample_id],
        streams,
        samples_per_class,
        true,
    )?;
    Ok(p.remove(0))
}

/// Fraction of `predicted` equal to `labels`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(VpnError::Contract("accuracy of an empty section".into()));
    }
    if predicted.len() != labels.len() {
        return Err(VpnError::dim(
            "accuracy",
            format!("{} predictions for {} labels", predicted.len(), labels.len()),
        ));
    }
    let correct = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

fn predict_section<F>(section: &Section, predict: F) -> Result<Vec<usize>>
where
    F: Fn(&Tensor, &[usize]) -> Result<Vec<Prediction>> + Sync,
{
    let ids: Vec<usize> = (0..section.len()).collect();
    let chunks: Vec<Vec<usize>> = ids
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (x, _) = section.gather(chunk);
            Ok(predict(&x, chunk)?.into_iter().map(|p| p.label).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Clean accuracy of `base` on `section`.
pub fn evaluate_clean(base: &BaseClassifier, section: &Section) -> Result<f64> {
    if section.is_empty() {
        return Err(VpnError::Contract("accuracy of an empty section".into()));
    }
    let predicted = predict_section(section, |x, _| predict_clean_batch(base, x))?;
    accuracy(&predicted, section.labels())
}

/// Noisy-inference accuracy; sample `i` of the section draws from
/// evaluation stream `i`.
pub fn evaluate_noisy(
    base: &BaseClassifier,
    generator: &Generator,
    section: &Section,
    streams: &Streams,
    samples_per_class: usize,
) -> Result<f64> {
    if section.is_empty() {
        return Err(VpnError::Contract("accuracy of an empty section".into()));
    }
    let predicted = predict_section(section, |x, ids| {
        predict_noisy_batch(base, generator, x, ids, streams, samples_per_class, false)
    })?;
    accuracy(&predicted, section.labels())
}
