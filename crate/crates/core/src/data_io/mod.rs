//! Datasets: IDX ingestion, synthetic generators and seeded batching.
//!
//! All features are scaled to `[0, 1]` on load.

mod batching;
mod idx;
mod synthetic;

pub use batching::{batch_indices, batches};
pub use idx::{load_idx, load_idx_dir, write_idx_images, write_idx_labels, IdxData, IdxFiles};
pub use synthetic::{make_blobs, make_glyphs, BLOB_STD};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::{Result, VpnError};

/// Spatial layout of a flattened feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn gray(height: usize, width: usize) -> Self {
        ImageShape {
            height,
            width,
            channels: 1,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Borrowed view of one `(x, y)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledSample<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// A list of samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    d: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Section {
    pub fn new(d: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != d * labels.len() {
            return Err(VpnError::Consistency(format!(
                "{} feature values for {} samples of dimension {d}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Section {
            d,
            features,
            labels,
        })
    }

    pub fn empty(d: usize) -> Self {
        Section {
            d,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_samples(d: usize, samples: &[LabeledSample<'_>]) -> Result<Self> {
        let mut features = Vec::with_capacity(samples.len() * d);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            if s.features.len() != d {
                return Err(VpnError::Consistency(format!(
                    "sample of dimension {} in a section of dimension {d}",
                    s.features.len()
                )));
            }
            features.extend_from_slice(s.features);
            labels.push(s.label);
        }
        Ok(Section {
            d,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> LabeledSample<'_> {
        LabeledSample {
            features: &self.features[i * self.d..(i + 1) * self.d],
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledSample<'_>> {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Stacks the selected samples into an `n x d` tensor plus labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.sample(i);
            data.extend_from_slice(s.features);
            labels.push(s.label);
        }
        let x = Tensor::from_vec(indices.len(), self.d, data).expect("rows have length d");
        (x, labels)
    }

    /// Splits off the last `count` samples.
    fn split_tail(mut self, count: usize) -> (Section, Section) {
        let keep = self.len() - count;
        let tail_features = self.features.split_off(keep * self.d);
        let tail_labels = self.labels.split_off(keep);
        let tail = Section {
            d: self.d,
            features: tail_features,
            labels: tail_labels,
        };
        (self, tail)
    }
}

/// Train/validation/test partition of one dataset. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    train: Section,
    validation: Section,
    test: Section,
    d: usize,
    class_count: usize,
    image_shape: Option<ImageShape>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Validation,
    Test,
}

impl DatasetSplit {
    pub fn new(
        train: Section,
        validation: Section,
        test: Section,
        class_count: usize,
        image_shape: Option<ImageShape>,
    ) -> Result<Self> {
        let d = train.dim();
        for (name, s) in [("validation", &validation), ("test", &test)] {
            if s.dim() != d {
                return Err(VpnError::Consistency(format!(
                    "{name} dimension {} differs from train dimension {d}",
                    s.dim()
                )));
            }
        }
        for s in [&train, &validation, &test] {
            if let Some(&bad) = s.labels().iter().find(|&&y| y >= class_count) {
                return Err(VpnError::Consistency(format!(
                    "label {bad} out of range for {class_count} classes"
                )));
            }
            if let Some(bad) = s.features().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(VpnError::Consistency(format!(
                    "feature value {bad} outside [0, 1]"
                )));
            }
        }
        if let Some(shape) = image_shape {
            if shape.pixels() != d {
                return Err(VpnError::Consistency(format!(
                    "image shape {shape:?} does not cover {d} features"
                )));
            }
        }
        Ok(DatasetSplit {
            train,
            validation,
            test,
            d,
            class_count,
            image_shape,
        })
    }

    pub fn train(&self) -> &Section {
        &self.train
    }

    pub fn validation(&self) -> &Section {
        &self.validation
    }

    pub fn test(&self) -> &Section {
        &self.test
    }

    pub fn part(&self, part: Part) -> &Section {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image_shape
    }

    /// `(train, validation, test)` sizes.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    /// Copy with every section cut to at most the given sizes. Used for
    /// quick runs on large datasets.
    pub fn truncated(&self, train: usize, validation: usize, test: usize) -> DatasetSplit {
        let cut = |s: &Section, n: usize| {
            let n = n.min(s.len());
            Section {
                d: s.d,
                features: s.features[..n * s.d].to_vec(),
                labels: s.labels[..n].to_vec(),
            }
        };
        DatasetSplit {
            train: cut(&self.train, train),
            validation: cut(&self.validation, validation),
            test: cut(&self.test, test),
            ..self.clone()
        }
    }
}
