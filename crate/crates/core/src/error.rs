use std::io;

use thiserror::Error;

use crate::training::DivergedRun;

pub type Result<T> = std::result::Result<T, VpnError>;

#[derive(Debug, Error)]
pub enum VpnError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("training diverged at epoch {} batch {}: loss = {}", .0.epoch, .0.batch, .0.loss)]
    Diverged(Box<DivergedRun>),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl VpnError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        VpnError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
