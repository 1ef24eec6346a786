use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{DatasetSplit, ImageShape, Section};
use crate::{Result, VpnError};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
/// Images held out of the training file for validation, as in the usual
/// 50k/10k/10k partition of the 60k/10k distribution.
const VALIDATION_SIZE: usize = 10_000;

/// Decoded pair of IDX image and label files.
#[derive(Clone, Debug)]
pub struct IdxData {
    pub section: Section,
    pub rows: usize,
    pub cols: usize,
}

/// Reads a file, transparently gunzipping it when it starts with the gzip
/// magic bytes.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!(
                    "{} is truncated: wanted {n} bytes at offset {}, {} left",
                    self.what.display(),
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            )
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn expect_magic(cur: &mut Cursor<'_>, want: u32) -> Result<()> {
    let got = cur.u32_be()?;
    if got != want {
        return Err(VpnError::Format(format!(
            "{}: magic {got} (0x{got:08x}), expected {want}",
            cur.what.display()
        )));
    }
    Ok(())
}

/// Loads an IDX image file (`u8`, 3 dimensions) and its label file.
///
/// Pixel bytes are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxData> {
    let image_bytes = read_maybe_gz(images_path)?;
    let mut cur = Cursor {
        bytes: &image_bytes,
        pos: 0,
        what: images_path,
    };
    expect_magic(&mut cur, IMAGE_MAGIC)?;
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let d = rows * cols;
    let pixels = cur.take(count * d)?;
    let features: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();

    let label_bytes = read_maybe_gz(labels_path)?;
    let mut cur = Cursor {
        bytes: &label_bytes,
        pos: 0,
        what: labels_path,
    };
    expect_magic(&mut cur, LABEL_MAGIC)?;
    let label_count = cur.u32_be()? as usize;
    if label_count != count {
        return Err(VpnError::Consistency(format!(
            "{} holds {count} images but {} holds {label_count} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    let labels = cur.take(count)?.iter().map(|&b| usize::from(b)).collect();

    Ok(IdxData {
        section: Section::new(d, features, labels)?,
        rows,
        cols,
    })
}

/// Locations of the four files of an MNIST-style distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl IdxFiles {
    /// Finds the standard file names in `dir`, with or without `.gz`.
    pub fn locate(dir: &Path) -> Result<Self> {
        let find = |stem: &str| -> Result<PathBuf> {
            for name in [stem.to_string(), format!("{stem}.gz")] {
                let p = dir.join(name);
                if p.is_file() {
                    return Ok(p);
                }
            }
            Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{stem}[.gz] not found in {}", dir.display()),
            )
            .into())
        };
        Ok(IdxFiles {
            train_images: find("train-images-idx3-ubyte")?,
            train_labels: find("train-labels-idx1-ubyte")?,
            test_images: find("t10k-images-idx3-ubyte")?,
            test_labels: find("t10k-labels-idx1-ubyte")?,
        })
    }
}

/// Loads a full MNIST-style distribution from `dir`.
///
/// The validation set is the tail of the training file: 10,000 images when
/// the file has 60,000, and one sixth of it for smaller files.
pub fn load_idx_dir(dir: &Path) -> Result<DatasetSplit> {
    let files = IdxFiles::locate(dir)?;
    let train = load_idx(&files.train_images, &files.train_labels)?;
    let test = load_idx(&files.test_images, &files.test_labels)?;
    if (train.rows, train.cols) != (test.rows, test.cols) {
        return Err(VpnError::Consistency(format!(
            "train images are {}x{}, test images {}x{}",
            train.rows, train.cols, test.rows, test.cols
        )));
    }
    let class_count = train
        .section
        .labels()
        .iter()
        .chain(test.section.labels())
        .max()
        .map_or(0, |m| m + 1);
    let n = train.section.len();
    let (train_part, validation) = train.section.split_tail(VALIDATION_SIZE.min(n / 6));
    DatasetSplit::new(
        train_part,
        validation,
        test.section,
        class_count,
        Some(ImageShape::gray(train.rows, train.cols)),
    )
}

fn open_writer(path: &Path, gzip: bool) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path)?);
    Ok(if gzip {
        Box::new(GzEncoder::new(file, Compression::fast()))
    } else {
        Box::new(file)
    })
}

/// Writes `count` images of `rows x cols` bytes in IDX format.
pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    rows: usize,
    cols: usize,
    gzip: bool,
) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(VpnError::Consistency(format!(
            "{} pixel bytes are not a whole number of {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut w = open_writer(path, gzip)?;
    for v in [IMAGE_MAGIC, (pixels.len() / per) as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8], gzip: bool) -> Result<()> {
    let mut w = open_writer(path, gzip)?;
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}
