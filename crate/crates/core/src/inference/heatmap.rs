use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::data_io::ImageShape;
use crate::models::Generator;
use crate::pinoise::DiagonalGaussianNoise;
use crate::rng::{Domain, Streams};
use crate::{Result, VpnError};

/// Where to write the artifacts for one sample: files are named
/// `<dir>/<stem>_{variance|noise|composite}.{pgm|csv}`.
#[derive(Clone, Debug)]
pub struct HeatmapPaths {
    pub dir: PathBuf,
    pub stem: String,
}

impl HeatmapPaths {
    pub fn new(dir: impl Into<PathBuf>, stem: impl Into<String>) -> Self {
        HeatmapPaths {
            dir: dir.into(),
            stem: stem.into(),
        }
    }

    pub fn file(&self, kind: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{}_{kind}.{ext}", self.stem))
    }
}

/// Per-pixel noise variance of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapArtifact {
    pub shape: ImageShape,
    pub variance: Vec<f64>,
    /// Bounds used for the 8-bit normalisation.
    pub min: f64,
    pub max: f64,
    pub files: Vec<PathBuf>,
}

/// 8-bit binary greymap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub max_value: u16,
    pub pixels: Vec<u8>,
}

/// Rows of the written image: channels are stacked vertically.
fn pgm_rows(shape: ImageShape) -> usize {
    shape.height * shape.channels
}

/// Min-max scaling to `0..=255`; a constant image maps to mid-grey 128.
fn normalise(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let pixels = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - min) / span).round() as u8
            } else {
                128
            }
        })
        .collect();
    (pixels, min, max)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(VpnError::Contract(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(VpnError::Format(format!("{}: truncated PGM header", path.display())));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte after maxval
    if fields[0] != "P5" {
        return Err(VpnError::Format(format!("{}: not a P5 image", path.display())));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| VpnError::Format(format!("{}: bad PGM field `{s}`", path.display())))
    };
    let (width, height, max_value) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max_value == 0 || max_value > 255 {
        return Err(VpnError::Format(format!("{}: unsupported maxval {max_value}", path.display())));
    }
    let pixels = bytes.get(pos..).unwrap_or_default().to_vec();
    if pixels.len() != width * height {
        return Err(VpnError::Format(format!(
            "{}: {} pixel bytes for {width}x{height}",
            path.display(),
            pixels.len()
        )));
    }
    Ok(Pgm {
        width,
        height,
        max_value: max_value as u16,
        pixels,
    })
}

fn write_csv(path: &Path, values: &[f64], width: usize) -> Result<()> {
    let mut out = Vec::new();
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads back a CSV written by [`export_heatmap`], flattened row-major.
pub fn read_variance_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .flat_map(|l| l.split(','))
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| VpnError::Format(format!("{}: bad value `{v}`", path.display())))
        })
        .collect()
}

/// Writes the variance heatmap (CSV and PGM), one sampled noise image and
/// the noisy composite for sample `x` under label `y`.
///
/// The noise is drawn from the visualisation stream keyed by `sample_id`.
pub fn export_heatmap(
    generator: &Generator,
    x: &[f64],
    y: usize,
    shape: ImageShape,
    paths: &HeatmapPaths,
    streams: &Streams,
    sample_id: usize,
) -> Result<HeatmapArtifact> {
    if shape.pixels() != x.len() || x.len() != generator.dim() {
        return Err(VpnError::Contract(format!(
            "image shape {shape:?} ({} values) does not match input of {} and generator of {}",
            shape.pixels(),
            x.len(),
            generator.dim()
        )));
    }
    let sigma = generator.sigma(&Tensor::row_vector(x), &[y])?;
    let noise = DiagonalGaussianNoise::new(sigma.row(0).to_vec())?;
    let variance = noise.variance();
    let draw = noise.draw(&mut streams.stream(Domain::Visualize, sample_id as u64, y as u64, 0));

    let (width, height) = (shape.width, pgm_rows(shape));
    let mut files = Vec::with_capacity(4);

    let csv = paths.file("variance", "csv");
    write_csv(&csv, &variance, width)?;
    files.push(csv);

    let (heat, min, max) = normalise(&variance);
    let heat_path = paths.file("variance", "pgm");
    write_pgm(&heat_path, width, height, &heat)?;
    files.push(heat_path);

    let (noise_px, _, _) = normalise(&draw.eps);
    let noise_path = paths.file("noise", "pgm");
    write_pgm(&noise_path, width, height, &noise_px)?;
    files.push(noise_path);

    let composite: Vec<u8> = x
        .iter()
        .zip(&draw.eps)
        .map(|(a, e)| ((a + e).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let composite_path = paths.file("composite", "pgm");
    write_pgm(&composite_path, width, height, &composite)?;
    files.push(composite_path);

    Ok(HeatmapArtifact {
        shape,
        variance,
        min,
        max,
        files,
    })
}

/// Variance on object pixels versus background pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contrast {
    pub foreground_mean: f64,
    pub background_mean: f64,
    /// `foreground_mean - background_mean`.
    pub difference: f64,
    /// Difference over the pooled standard deviation (Cohen's d); 0 when
    /// the pooled deviation vanishes.
    pub effect_size: f64,
    pub foreground_pixels: usize,
    pub background_pixels: usize,
}

/// Splits pixels by `x > threshold` and compares their mean variance.
pub fn contrast_statistic(variance: &[f64], x: &[f64], threshold: f64) -> Result<Contrast> {
    if variance.len() != x.len() {
        return Err(VpnError::dim(
            "contrast_statistic",
            format!("{} variances for {} pixels", variance.len(), x.len()),
        ));
    }
    let (fg, bg): (Vec<(f64, f64)>, Vec<(f64, f64)>) = variance
        .iter()
        .copied()
        .zip(x.iter().copied())
        .partition(|&(_, p)| p > threshold);
    if fg.is_empty() || bg.is_empty() {
        return Err(VpnError::Contract(format!(
            "need both foreground and background pixels (got {} / {})",
            fg.len(),
            bg.len()
        )));
    }
    let stats = |v: &[(f64, f64)]| {
        let n = v.len() as f64;
        let mean = v.iter().map(|p| p.0).sum::<f64>() / n;
        let ss = v.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>();
        (mean, ss)
    };
    let (fm, fss) = stats(&fg);
    let (bm, bss) = stats(&bg);
    let dof = (fg.len() + bg.len()).saturating_sub(2).max(1) as f64;
    let pooled = ((fss + bss) / dof).sqrt();
    let difference = fm - bm;
    Ok(Contrast {
        foreground_mean: fm,
        background_mean: bm,
        difference,
        effect_size: if pooled > 0.0 { difference / pooled } else { 0.0 },
        foreground_pixels: fg.len(),
        background_pixels: bg.len(),
    })
}
