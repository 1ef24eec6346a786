#![allow(dead_code)]

pub mod mi_oracle;
pub mod suites;

use vpn_core::data_io::{make_blobs, DatasetSplit};
use vpn_core::models::{BaseClassifier, Generator};

pub fn blobs(class_count: usize, d: usize, per_class: usize, seed: u64) -> DatasetSplit {
    make_blobs(class_count, d, per_class, 0.8, seed).expect("valid blob parameters")
}

pub fn small_generator(d: usize, k: usize, hidden: usize, cap: f64, seed: u64) -> Generator {
    Generator::new(d, k, hidden, 0.01 / k as f64, cap, seed).expect("valid generator")
}

pub fn small_base(d: usize, k: usize, seed: u64) -> BaseClassifier {
    BaseClassifier::sr(d, k, seed)
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
