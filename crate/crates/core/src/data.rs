//! Datasets: in-memory storage, the synthetic line-with-noise generator, the
//! MNIST IDX loader and CSV export.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::named_stream;
use crate::scalar::Scalar;

/// Regression target or class label of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<T> {
    Real(T),
    Class(u8),
}

/// One input/output pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub x: Vec<T>,
    pub y: Target<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    Real(Vec<T>),
    Class { labels: Vec<u8>, classes: usize },
}

/// Examples stored row-major: `features[i*dim .. (i+1)*dim]` is example `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    dim: usize,
    features: Vec<T>,
    targets: Targets<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn regression(dim: usize, features: Vec<T>, targets: Vec<T>) -> Result<Self> {
        Self::checked(dim, features, Targets::Real(targets))
    }

    pub fn classification(
        dim: usize,
        features: Vec<T>,
        labels: Vec<u8>,
        classes: usize,
    ) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Input(format!(
                "label {bad} outside 0..{classes}"
            )));
        }
        Self::checked(dim, features, Targets::Class { labels, classes })
    }

    fn checked(dim: usize, features: Vec<T>, targets: Targets<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("feature dimension must be positive"));
        }
        let n = match &targets {
            Targets::Real(y) => y.len(),
            Targets::Class { labels, .. } => labels.len(),
        };
        if features.len() != n * dim {
            return Err(Error::usage(format!(
                "{} feature values do not form {n} rows of dimension {dim}",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite feature in example {}",
                i / dim
            )));
        }
        Ok(Self {
            dim,
            features,
            targets,
        })
    }

    /// Builds a dataset from owned examples. All examples must share the
    /// same feature dimension and target kind; class datasets get `classes`
    /// outputs.
    pub fn from_examples(examples: &[Example<T>], classes: Option<usize>) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::usage("no examples given"))?;
        let dim = first.x.len();
        let mut features = Vec::with_capacity(examples.len() * dim);
        for e in examples {
            if e.x.len() != dim {
                return Err(Error::usage("examples have differing feature dimensions"));
            }
            features.extend_from_slice(&e.x);
        }
        match classes {
            None => {
                let y = examples
                    .iter()
                    .map(|e| match e.y {
                        Target::Real(v) => Ok(v),
                        Target::Class(_) => Err(Error::usage("mixed target kinds")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::regression(dim, features, y)
            }
            Some(c) => {
                let labels = examples
                    .iter()
                    .map(|e| match e.y {
                        Target::Class(l) => Ok(l),
                        Target::Real(_) => Err(Error::usage("mixed target kinds")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::classification(dim, features, labels, c)
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn targets(&self) -> &Targets<T> {
        &self.targets
    }

    pub fn target(&self, i: usize) -> Target<T> {
        match &self.targets {
            Targets::Real(y) => Target::Real(y[i]),
            Targets::Class { labels, .. } => Target::Class(labels[i]),
        }
    }

    pub fn example(&self, i: usize) -> Example<T> {
        Example {
            x: self.row(i).to_vec(),
            y: self.target(i),
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Class { classes, .. } => Some(*classes),
            Targets::Real(_) => None,
        }
    }

    /// Copy of the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Real(y) => Targets::Real(indices.iter().map(|&i| y[i]).collect()),
            Targets::Class { labels, classes } => Targets::Class {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        Self {
            dim: self.dim,
            features,
            targets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic {
        spec: RegressionSpec,
        /// Training indices that received the extra outlier noise.
        outliers: Vec<usize>,
    },
    File {
        paths: Vec<PathBuf>,
        sha256: String,
    },
}

#[derive(Debug, Clone)]
pub struct DatasetHandle<T> {
    pub data: Dataset<T>,
    pub split: Split,
    pub provenance: Provenance,
}

/// Synthetic 1D regression: `y = slope·x + intercept + U(−noise, noise)`,
/// with `outlier_count` training points receiving an extra
/// `U(−outlier_half_width, outlier_half_width)` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSpec {
    pub slope: f64,
    pub intercept: f64,
    pub noise_half_width: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub outlier_count: usize,
    pub outlier_half_width: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// Supplied by the caller rather than read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            slope: 2.0,
            intercept: 1.0,
            noise_half_width: 5.0,
            n_train: 1000,
            n_test: 10000,
            outlier_count: 0,
            outlier_half_width: 20.0,
            x_min: 0.0,
            x_max: 10.0,
            seed: 0,
        }
    }
}

impl RegressionSpec {
    pub fn with_outliers(mut self) -> Self {
        self.outlier_count = 20;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("dataset.n_train", "split sizes must be positive"));
        }
        if self.outlier_count > self.n_train {
            return Err(Error::config(
                "dataset.outlier_count",
                format!(
                    "{} outliers requested from {} training points",
                    self.outlier_count, self.n_train
                ),
            ));
        }
        if !(self.noise_half_width >= 0.0) || !(self.outlier_half_width >= 0.0) {
            return Err(Error::config("dataset.noise_half_width", "noise widths must be nonnegative"));
        }
        if !(self.x_max > self.x_min) {
            return Err(Error::config("dataset.x_max", "x_max must exceed x_min"));
        }
        Ok(())
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    (2.0 * rng.random::<f64>() - 1.0) * half_width
}

fn line_points<R: Rng + ?Sized>(spec: &RegressionSpec, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = spec.x_min + rng.random::<f64>() * (spec.x_max - spec.x_min);
        let y = spec.slope * x + spec.intercept + symmetric(rng, spec.noise_half_width);
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}

/// Generates the train and test splits. Outliers are the first
/// `outlier_count` entries of a seeded permutation of the training indices;
/// the test split never has outliers.
pub fn gen_regression<T: Scalar>(
    spec: &RegressionSpec,
) -> Result<(DatasetHandle<T>, DatasetHandle<T>)> {
    spec.validate()?;
    let (xs, mut ys) = line_points(spec, spec.n_train, &mut named_stream(spec.seed, "data.train"));

    let mut outlier_rng = named_stream(spec.seed, "data.outliers");
    let mut perm: Vec<usize> = (0..spec.n_train).collect();
    perm.shuffle(&mut outlier_rng);
    let mut outliers = perm[..spec.outlier_count].to_vec();
    for &i in &outliers {
        ys[i] += symmetric(&mut outlier_rng, spec.outlier_half_width);
    }
    outliers.sort_unstable();

    let (tx, ty) = line_points(spec, spec.n_test, &mut named_stream(spec.seed, "data.test"));

    let convert = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    let provenance = Provenance::Synthetic {
        spec: *spec,
        outliers,
    };
    let train = DatasetHandle {
        data: Dataset::regression(1, convert(xs), convert(ys))?,
        split: Split::Train,
        provenance: provenance.clone(),
    };
    let test = DatasetHandle {
        data: Dataset::regression(1, convert(tx), convert(ty))?,
        split: Split::Test,
        provenance,
    };
    Ok((train, test))
}

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;
pub const MNIST_SIDE: usize = 28;

#[derive(Debug, Clone, Copy)]
pub struct MnistOptions {
    /// Divide pixel values by 255.
    pub scale: bool,
    /// Keep only the first `limit` examples.
    pub limit: Option<usize>,
}

impl Default for MnistOptions {
    fn default() -> Self {
        Self {
            scale: true,
            limit: None,
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                field,
                offset as u64,
                format!("file ends after {} bytes", bytes.len()),
            )
        })
}

/// Parses an IDX image file and its label file held in memory.
pub fn parse_mnist<T: Scalar>(images: &[u8], labels: &[u8], opts: MnistOptions) -> Result<Dataset<T>> {
    let magic = be_u32(images, 0, "images.magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            "images.magic",
            0,
            format!("expected {IDX_IMAGES_MAGIC}, found {magic}"),
        ));
    }
    let count = be_u32(images, 4, "images.count")? as usize;
    let rows = be_u32(images, 8, "images.rows")? as usize;
    let cols = be_u32(images, 12, "images.cols")? as usize;
    if rows != MNIST_SIDE {
        return Err(Error::format("images.rows", 8, format!("expected 28, found {rows}")));
    }
    if cols != MNIST_SIDE {
        return Err(Error::format("images.cols", 12, format!("expected 28, found {cols}")));
    }
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if images.len() != expected {
        return Err(Error::format(
            "images.data",
            images.len().min(expected) as u64,
            format!(
                "{count} images need {expected} bytes, file has {}",
                images.len()
            ),
        ));
    }

    let lmagic = be_u32(labels, 0, "labels.magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            "labels.magic",
            0,
            format!("expected {IDX_LABELS_MAGIC}, found {lmagic}"),
        ));
    }
    let lcount = be_u32(labels, 4, "labels.count")? as usize;
    if lcount != count {
        return Err(Error::format(
            "labels.count",
            4,
            format!("{lcount} labels for {count} images"),
        ));
    }
    if labels.len() != 8 + lcount {
        return Err(Error::format(
            "labels.data",
            labels.len().min(8 + lcount) as u64,
            format!("{lcount} labels need {} bytes, file has {}", 8 + lcount, labels.len()),
        ));
    }
    if let Some(i) = labels[8..].iter().position(|&l| l > 9) {
        return Err(Error::format(
            "labels.data",
            (8 + i) as u64,
            format!("label {} outside 0..=9", labels[8 + i]),
        ));
    }

    let keep = opts.limit.map_or(count, |l| l.min(count));
    let scale = if opts.scale { T::of(1.0 / 255.0) } else { T::one() };
    let features: Vec<T> = images[16..16 + keep * pixels]
        .iter()
        .map(|&p| T::of(p as f64) * scale)
        .collect();
    Dataset::classification(pixels, features, labels[8..8 + keep].to_vec(), 10)
}

/// Loads an MNIST split from IDX files on disk.
pub fn load_mnist<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    split: Split,
    opts: MnistOptions,
) -> Result<DatasetHandle<T>> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    let data = parse_mnist(&images, &labels, opts)?;
    let mut hasher = Sha256::new();
    hasher.update(&images);
    hasher.update(&labels);
    let sha256 = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    Ok(DatasetHandle {
        data,
        split,
        provenance: Provenance::File {
            paths: vec![images_path.to_path_buf(), labels_path.to_path_buf()],
            sha256,
        },
    })
}

/// File names of the standard MNIST distribution inside `dir`.
pub fn mnist_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Ratio of a sampled run's test loss to the full-data run's test loss.
pub fn normalized_test_loss(model_loss: f64, full_data_baseline_loss: f64) -> Result<f64> {
    if !(full_data_baseline_loss > 0.0) {
        return Err(Error::usage(format!(
            "baseline loss must be positive, got {full_data_baseline_loss}"
        )));
    }
    Ok(model_loss / full_data_baseline_loss)
}

/// Writes a one-feature regression dataset as `x,y` CSV.
pub fn write_regression_csv<T: Scalar, W: Write>(mut w: W, data: &Dataset<T>) -> Result<()> {
    let Targets::Real(ys) = data.targets() else {
        return Err(Error::usage("CSV export is for regression datasets"));
    };
    if data.dim() != 1 {
        return Err(Error::usage("CSV export expects one feature per example"));
    }
    writeln!(w, "x,y")?;
    for (x, y) in data.features().iter().zip(ys) {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

/// Reads an `x,y` CSV written by [`write_regression_csv`].
pub fn read_regression_csv<T: Scalar, R: BufRead>(r: R, field: &str) -> Result<Dataset<T>> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut offset = 0u64;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let here = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if n == 0 {
            if trimmed != "x,y" {
                return Err(Error::format(field, 0, format!("expected header 'x,y', found '{trimmed}'")));
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let parsed = trimmed.split_once(',').and_then(|(a, b)| {
            Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?))
        });
        let Some((x, y)) = parsed else {
            return Err(Error::format(field, here, format!("line {} is not 'x,y': '{trimmed}'", n + 1)));
        };
        xs.push(T::of(x));
        ys.push(T::of(y));
    }
    if xs.is_empty() {
        return Err(Error::format(field, offset, "no data rows"));
    }
    Dataset::regression(1, xs, ys)
}
