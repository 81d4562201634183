use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use pano_autodiff::{no_grad, ConvParams, Tensor};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{normalize_grayscale, RawImage};
use crate::rng::{stream, Stream};

/// Where a feature set came from: real radiographs, generated images or
/// Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    R,
    F,
    G,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::R => "R",
            Source::F => "F",
            Source::G => "G",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "R" | "r" | "real" => Ok(Source::R),
            "F" | "f" | "fake" => Ok(Source::F),
            "G" | "g" | "gaussian" | "noise" => Ok(Source::G),
            other => Err(Error::Config(format!("unknown feature source '{other}' (expected R, F or G)"))),
        }
    }
}

/// Feature extractors. Only the descriptor (not the weights) is stored with
/// a feature set, so a random-conv extractor is fully identified by its seed.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// Flattened pixels scaled to [0,1].
    Pixel,
    /// Two fixed random conv stages followed by global average pooling.
    RandomConv { seed: u64 },
    /// Pre-extracted features read from a CSV file.
    External(PathBuf),
}

impl Extractor {
    pub fn descriptor(&self) -> String {
        match self {
            Extractor::Pixel => "pixel".into(),
            Extractor::RandomConv { seed } => format!("random_conv(seed={seed})"),
            Extractor::External(p) => format!("external({})", p.display()),
        }
    }
}

impl FromStr for Extractor {
    type Err = Error;

    /// Accepts `pixel`, `random_conv`, `random_conv:SEED`,
    /// `random_conv(seed=SEED)` and `external:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "pixel" {
            return Ok(Extractor::Pixel);
        }
        if let Some(path) = s.strip_prefix("external:") {
            return Ok(Extractor::External(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("random_conv") {
            let seed = rest
                .trim_start_matches([':', '('])
                .trim_start_matches("seed=")
                .trim_end_matches(')');
            let seed = if seed.is_empty() {
                0
            } else {
                seed.parse()
                    .map_err(|_| Error::Config(format!("bad random_conv seed in '{s}'")))?
            };
            return Ok(Extractor::RandomConv { seed });
        }
        Err(Error::Config(format!(
            "unknown extractor '{s}' (expected pixel, random_conv[:SEED] or external:PATH)"
        )))
    }
}

/// N×D feature matrix plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    matrix: DMatrix<f64>,
    source: Source,
    descriptor: String,
}

impl FeatureSet {
    pub fn new(matrix: DMatrix<f64>, source: Source, descriptor: impl Into<String>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Data(format!(
                "feature matrix must be non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if let Some(i) = matrix.iter().position(|v| v.is_nan()) {
            return Err(Error::Data(format!(
                "NaN feature at row {}, column {}",
                i % matrix.nrows(),
                i / matrix.nrows()
            )));
        }
        Ok(Self {
            matrix,
            source,
            descriptor: descriptor.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], source: Source, descriptor: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Format(format!(
                "feature row {i} has {} values, expected {d}",
                rows[i].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), d, &flat), source, descriptor)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Label in the `<count><source>` style, e.g. `25F`.
    pub fn label(&self) -> String {
        format!("{}{}", self.len(), self.source)
    }

    /// Keeps the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::Data(format!("row {bad} out of range for {} rows", self.len())));
        }
        Self::new(self.matrix.select_rows(rows), self.source, self.descriptor.clone())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    /// Writes `#extractor=<descriptor>`, a header `id,f0,..`, then one row
    /// per image. Values use the shortest round-trip representation.
    pub fn write_csv(&self, path: &Path, ids: &[String]) -> Result<()> {
        if ids.len() != self.len() {
            return Err(Error::Data(format!("{} ids for {} feature rows", ids.len(), self.len())));
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "#extractor={}", self.descriptor).map_err(|e| Error::io(path, e))?;
        writeln!(file, "#source={}", self.source).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (i, id) in ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.matrix.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a file written by [`FeatureSet::write_csv`] (or produced by an
    /// external tool in the same layout). Missing `#source` defaults to R.
    pub fn read_csv(path: &Path) -> Result<(Self, Vec<String>)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut descriptor = None;
        let mut source = Source::R;
        let mut body = String::new();
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
                break;
            }
            if let Some(meta) = line.trim_end().strip_prefix('#') {
                if let Some(d) = meta.strip_prefix("extractor=") {
                    descriptor = Some(d.to_string());
                } else if let Some(s) = meta.strip_prefix("source=") {
                    source = s.parse()?;
                }
            } else {
                body.push_str(&line);
                break;
            }
        }
        std::io::Read::read_to_string(&mut reader, &mut body).map_err(|e| Error::io(path, e))?;
        let descriptor = descriptor.ok_or_else(|| {
            Error::Format(format!("{}: missing '#extractor=' header line", path.display()))
        })?;
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let width = r.headers()?.len();
        if width < 2 {
            return Err(Error::Format(format!("{}: no feature columns", path.display())));
        }
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("{}: row {i}: {e}", path.display())))?;
            if rec.len() != width {
                return Err(Error::Format(format!(
                    "{}: row {i} has {} columns, header has {width}",
                    path.display(),
                    rec.len()
                )));
            }
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        Error::Format(format!("{}: row {i}: '{v}' is not a number", path.display()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Format(format!("{}: no feature rows", path.display())));
        }
        Ok((Self::from_rows(&rows, source, descriptor)?, ids))
    }
}

const CONV1_CHANNELS: usize = 16;
/// Output dimension of the random-conv extractor.
pub const RANDOM_CONV_DIM: usize = 64;
const IMAGES_PER_CHUNK: usize = 64;

/// Fixed random features: conv 4×4/2 → leaky ReLU → conv 4×4/2 → ReLU →
/// global average pool. He-scaled Gaussian kernels from the seed.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    k1: Tensor,
    k2: Tensor,
}

impl RandomConvExtractor {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::FeatureInit);
        let mut kernel = |shape: [usize; 4]| -> Result<Tensor> {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let n = shape.iter().product();
            Ok(Tensor::new((0..n).map(|_| normal.sample(&mut rng)).collect(), &shape)?)
        };
        Ok(Self {
            k1: kernel([CONV1_CHANNELS, 1, 4, 4])?,
            k2: kernel([RANDOM_CONV_DIM, CONV1_CHANNELS, 4, 4])?,
        })
    }

    /// Features for a batch `[N,1,H,W]`, H and W at least 4.
    pub fn features(&self, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        let _off = no_grad();
        let p = ConvParams::new(2, 1);
        let h = batch.conv2d(&self.k1, p)?.leaky_relu(0.2);
        let h = h.conv2d(&self.k2, p)?.relu();
        let pooled = h.mean_axes(&[2, 3])?;
        Ok(pooled.data().chunks(RANDOM_CONV_DIM).map(<[f64]>::to_vec).collect())
    }
}

fn check_same_size(images: &[RawImage]) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("feature extraction needs at least one image".into()))?;
    let (w, h) = (first.width(), first.height());
    if let Some(i) = images.iter().position(|im| im.width() != w || im.height() != h) {
        return Err(Error::Dimension(format!(
            "image {i} is {}x{}, expected {w}x{h}",
            images[i].width(),
            images[i].height()
        )));
    }
    Ok((w, h))
}

/// Extracts one feature row per image.
pub fn extract_features(images: &[RawImage], extractor: &Extractor, source: Source) -> Result<FeatureSet> {
    let descriptor = extractor.descriptor();
    match extractor {
        Extractor::Pixel => {
            check_same_size(images)?;
            let rows: Vec<Vec<f64>> = images
                .iter()
                .map(|im| im.pixels().iter().map(|&v| f64::from(v) / 255.0).collect())
                .collect();
            FeatureSet::from_rows(&rows, source, descriptor)
        }
        Extractor::RandomConv { seed } => {
            let (w, h) = check_same_size(images)?;
            if w < 4 || h < 4 {
                return Err(Error::Dimension(format!("random_conv needs images of at least 4x4, got {w}x{h}")));
            }
            let net = RandomConvExtractor::new(*seed)?;
            let mut rows = Vec::with_capacity(images.len());
            for chunk in images.chunks(IMAGES_PER_CHUNK) {
                let tensors = chunk
                    .iter()
                    .map(normalize_grayscale)
                    .collect::<Result<Vec<_>>>()?;
                let mut data = Vec::with_capacity(chunk.len() * w * h);
                for t in &tensors {
                    data.extend_from_slice(t.data());
                }
                let batch = Tensor::new(data, &[chunk.len(), 1, h, w])?;
                rows.extend(net.features(&batch)?);
            }
            FeatureSet::from_rows(&rows, source, descriptor)
        }
        Extractor::External(path) => {
            let (set, _) = FeatureSet::read_csv(path)?;
            if !images.is_empty() && set.len() != images.len() {
                return Err(Error::Format(format!(
                    "{} holds {} feature rows for {} images",
                    path.display(),
                    set.len(),
                    images.len()
                )));
            }
            Ok(FeatureSet { source, ..set })
        }
    }
}
