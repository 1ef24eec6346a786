use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use vpn_core::data_io::{load_idx_dir, make_blobs, make_glyphs, DatasetSplit, IdxFiles};

use crate::settings::{Dataset, RunSpec, DATA_DIR_ENV};

const BLOB_SEPARATION: f64 = 1.0;

/// Loads the dataset named in `spec`, or explains why it cannot be found.
pub fn load(spec: &RunSpec) -> anyhow::Result<DatasetSplit> {
    match spec.dataset {
        Dataset::FashionMnist | Dataset::Mnist => {
            let root = spec.data_dir.as_deref().ok_or_else(|| {
                anyhow!("no data directory for {}: pass --data-dir or set {DATA_DIR_ENV}", spec.dataset)
            })?;
            let dir = idx_dir(root, spec.dataset)?;
            load_idx_dir(&dir).with_context(|| format!("cannot load {} from {}", spec.dataset, dir.display()))
        }
        Dataset::Blobs => make_blobs(spec.classes, spec.dim, spec.per_class, BLOB_SEPARATION, spec.seed)
            .context("invalid blob parameters"),
        Dataset::Glyphs => {
            make_glyphs(spec.classes, spec.dim, spec.per_class, spec.seed).context("invalid glyph parameters")
        }
    }
}

/// `root` itself, or a subdirectory named after the dataset.
fn idx_dir(root: &Path, dataset: Dataset) -> anyhow::Result<PathBuf> {
    let named = [dataset.to_string(), dataset.to_string().replace('-', "_")];
    let candidates = named.iter().map(|n| root.join(n)).chain([root.to_path_buf()]);
    for dir in candidates {
        if IdxFiles::locate(&dir).is_ok() {
            return Ok(dir);
        }
    }
    Err(anyhow!("{} IDX files not found under {}", dataset, root.display()))
}
