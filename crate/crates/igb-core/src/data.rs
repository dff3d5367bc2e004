//! Dataset generation, preprocessing, and file ingestion.
//!
//! Datasets are immutable after construction and safe to share read-only
//! across runs. All generators are deterministic per seed.

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{IgbError, Result};

/// Where a dataset came from, serialized alongside results as a JSON
/// sidecar so any run can be traced back to its inputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic {
        generator: String,
        seed: u64,
    },
    File {
        path: String,
        sha256: String,
    },
    Derived {
        op: String,
        /// Feature indices left centered-only because their variance was zero.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        degenerate_features: Vec<usize>,
        source: Box<Provenance>,
    },
}

/// Input matrix (N × d) plus integer labels in `[0, num_classes)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(IgbError::Config("dataset is empty".into()));
        }
        if self.labels.len() != self.len() {
            return Err(IgbError::Shape(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(IgbError::Config(format!(
                "label {l} out of range for {} classes",
                self.num_classes
            )));
        }
        if self.inputs.iter().any(|x| !x.is_finite()) {
            return Err(IgbError::NonFinite("dataset inputs".into()));
        }
        Ok(())
    }

    /// Remap labels through a table of `(from, to)` pairs, e.g. merging
    /// digit classes into even/odd. Labels not listed are left unchanged.
    pub fn remap_labels(&self, map: &[(usize, usize)]) -> Result<Dataset> {
        let mut labels = self.labels.clone();
        for l in &mut labels {
            if let Some(&(_, to)) = map.iter().find(|&&(from, _)| from == *l) {
                *l = to;
            }
        }
        let num_classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
        let out = Dataset {
            inputs: self.inputs.clone(),
            labels,
            num_classes,
            provenance: Provenance::Derived {
                op: format!("remap_labels({map:?})"),
                degenerate_features: vec![],
                source: Box::new(self.provenance.clone()),
            },
        };
        out.validate()?;
        Ok(out)
    }
}

/// Two balanced Gaussian blobs in d dimensions: class 0 is N(−μ·1, I),
/// class 1 is N(+μ·1, I) with μ = mu_scale / sqrt(d), so the class overlap
/// does not vanish as d grows. Rows are shuffled with the same seed.
pub fn gaussian_blob(n_per_class: usize, d: usize, mu_scale: f64, seed: u64) -> Result<Dataset> {
    if d < 1 || n_per_class < 1 {
        return Err(IgbError::Config(format!(
            "gaussian_blob needs d >= 1 and n_per_class >= 1, got d={d}, n_per_class={n_per_class}"
        )));
    }
    let mu = mu_scale / (d as f64).sqrt();
    let n = 2 * n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for a in 0..n {
        let label = if a < n_per_class { 0 } else { 1 };
        let center = if label == 0 { -mu } else { mu };
        for x in inputs.row_mut(a) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = z + center;
        }
        labels.push(label);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let shuffled = inputs.select(Axis(0), &order);
    let labels = order.iter().map(|&i| labels[i]).collect();
    let ds = Dataset {
        inputs: shuffled,
        labels,
        num_classes: 2,
        provenance: Provenance::Synthetic {
            generator: format!("gaussian_blob(n_per_class={n_per_class}, d={d}, mu_scale={mu_scale})"),
            seed,
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Single-class N(0, I) inputs for static ensemble experiments; labels all 0.
pub fn unlabeled_gaussian(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if d < 1 || n < 1 {
        return Err(IgbError::Config(format!(
            "unlabeled_gaussian needs n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Array2::<f64>::zeros((n, d));
    for x in inputs.iter_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
    let ds = Dataset {
        inputs,
        labels: vec![0; n],
        num_classes: 2,
        provenance: Provenance::Synthetic {
            generator: format!("unlabeled_gaussian(n={n}, d={d})"),
            seed,
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Add a constant to every input entry. Used to tune the level of guessing
/// bias without touching the architecture.
pub fn shift_pixels(data: &Dataset, c: f64) -> Dataset {
    Dataset {
        inputs: &data.inputs + c,
        labels: data.labels.clone(),
        num_classes: data.num_classes,
        provenance: Provenance::Derived {
            op: format!("shift_pixels({c})"),
            degenerate_features: vec![],
            source: Box::new(data.provenance.clone()),
        },
    }
}

/// Standardize each feature to zero mean and unit variance over the
/// dataset. Features with zero variance are centered only and flagged in
/// the provenance.
pub fn standardize(data: &Dataset) -> Dataset {
    let n = data.len() as f64;
    let mut inputs = data.inputs.clone();
    let mut degenerate = Vec::new();
    for (j, mut col) in inputs.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if var > 0.0 {
            let inv = 1.0 / var.sqrt();
            col.mapv_inplace(|x| (x - mean) * inv);
        } else {
            col.mapv_inplace(|x| x - mean);
            degenerate.push(j);
        }
    }
    Dataset {
        inputs,
        labels: data.labels.clone(),
        num_classes: data.num_classes,
        provenance: Provenance::Derived {
            op: "standardize".into(),
            degenerate_features: degenerate,
            source: Box::new(data.provenance.clone()),
        },
    }
}

fn file_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

/// Load a dataset from a headered CSV file; every column except the label
/// column is a feature.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let sha = file_sha256(&bytes);
    let mut reader = csv::Reader::from_reader(Cursor::new(&bytes));
    let headers = reader
        .headers()
        .map_err(|e| IgbError::Parse(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = match label_column {
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IgbError::Parse(format!("label column '{name}' not in header")))?,
        LabelColumn::Index(i) => {
            if *i >= headers.len() {
                return Err(IgbError::Parse(format!(
                    "label column index {i} out of range for {} columns",
                    headers.len()
                )));
            }
            *i
        }
    };
    let d = headers.len() - 1;
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IgbError::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(IgbError::Parse(format!(
                "line {}: {} fields, expected {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                let l: usize = field.trim().parse().map_err(|_| {
                    IgbError::Parse(format!("line {}: bad label '{field}'", line + 2))
                })?;
                labels.push(l);
            } else {
                let v: f64 = field.trim().parse().map_err(|_| {
                    IgbError::Parse(format!("line {}: bad value '{field}'", line + 2))
                })?;
                rows.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(IgbError::Parse(format!("{}: no data rows", path.display())));
    }
    let inputs = Array2::from_shape_vec((n, d), rows)
        .map_err(|e| IgbError::Shape(format!("csv reshape: {e}")))?;
    let num_classes = labels.iter().max().map_or(2, |m| m + 1).max(2);
    let ds = Dataset {
        inputs,
        labels,
        num_classes,
        provenance: Provenance::File {
            path: path.display().to_string(),
            sha256: sha,
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset as CSV with header `feat_0,...,feat_{d-1},label`.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path.as_ref()).map_err(|e| IgbError::Parse(e.to_string()))?;
    let d = data.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("feat_{j}")).collect();
    header.push("label".into());
    writer
        .write_record(&header)
        .map_err(|e| IgbError::Parse(e.to_string()))?;
    for (row, &label) in data.inputs.rows().into_iter().zip(&data.labels) {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        record.push(label.to_string());
        writer
            .write_record(&record)
            .map_err(|e| IgbError::Parse(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Data source for ensemble and training experiments: either a seeded
/// generator or an ingested file, plus preprocessing switches.
///
/// Serialized flat, with a `kind` discriminator and strict unknown-key
/// rejection, so experiment configs cannot carry silent typos.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(try_from = "DataSpecRepr", into = "DataSpecRepr")]
pub struct DataSpec {
    pub source: DataSource,
    /// Reuse one dataset across all ensemble runs instead of drawing a
    /// fresh one per run. File sources are always fixed.
    pub fixed: bool,
    /// Constant added to every input entry after generation.
    pub shift: f64,
    /// Standardize features to zero mean / unit variance after loading.
    pub standardize: bool,
    /// Label remapping table applied after loading, e.g. digit → parity.
    pub label_map: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    UnlabeledGaussian {
        n: usize,
        dim: usize,
    },
    GaussianBlob {
        n_per_class: usize,
        dim: usize,
        mu_scale: f64,
    },
    Csv {
        path: String,
        label_column: LabelColumn,
    },
    Idx {
        images: String,
        labels: String,
    },
}

/// Flat wire form of [`DataSpec`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSpecRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_column: Option<LabelColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    images: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<String>,
    #[serde(default)]
    fixed: bool,
    #[serde(default)]
    shift: f64,
    #[serde(default)]
    standardize: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    label_map: Vec<(usize, usize)>,
}

impl TryFrom<DataSpecRepr> for DataSpec {
    type Error = String;

    fn try_from(r: DataSpecRepr) -> std::result::Result<Self, String> {
        let need = |opt: Option<usize>, field: &str| {
            opt.ok_or_else(|| format!("data kind \"{}\" requires field `{field}`", r.kind))
        };
        let source = match r.kind.as_str() {
            "unlabeled-gaussian" => DataSource::UnlabeledGaussian {
                n: need(r.n, "n")?,
                dim: need(r.dim, "dim")?,
            },
            "gaussian-blob" => DataSource::GaussianBlob {
                n_per_class: need(r.n_per_class, "n_per_class")?,
                dim: need(r.dim, "dim")?,
                mu_scale: r.mu_scale.unwrap_or(1.0),
            },
            "csv" => DataSource::Csv {
                path: r
                    .path
                    .ok_or_else(|| "data kind \"csv\" requires field `path`".to_string())?,
                label_column: r
                    .label_column
                    .ok_or_else(|| "data kind \"csv\" requires field `label_column`".to_string())?,
            },
            "idx" => DataSource::Idx {
                images: r
                    .images
                    .ok_or_else(|| "data kind \"idx\" requires field `images`".to_string())?,
                labels: r
                    .labels
                    .ok_or_else(|| "data kind \"idx\" requires field `labels`".to_string())?,
            },
            other => {
                return Err(format!(
                    "unknown data kind \"{other}\" (expected unlabeled-gaussian, \
                     gaussian-blob, csv, or idx)"
                ))
            }
        };
        Ok(DataSpec {
            source,
            fixed: r.fixed,
            shift: r.shift,
            standardize: r.standardize,
            label_map: r.label_map,
        })
    }
}

impl From<DataSpec> for DataSpecRepr {
    fn from(s: DataSpec) -> Self {
        let mut r = DataSpecRepr {
            kind: String::new(),
            n: None,
            dim: None,
            n_per_class: None,
            mu_scale: None,
            path: None,
            label_column: None,
            images: None,
            labels: None,
            fixed: s.fixed,
            shift: s.shift,
            standardize: s.standardize,
            label_map: s.label_map,
        };
        match s.source {
            DataSource::UnlabeledGaussian { n, dim } => {
                r.kind = "unlabeled-gaussian".into();
                r.n = Some(n);
                r.dim = Some(dim);
            }
            DataSource::GaussianBlob {
                n_per_class,
                dim,
                mu_scale,
            } => {
                r.kind = "gaussian-blob".into();
                r.n_per_class = Some(n_per_class);
                r.dim = Some(dim);
                r.mu_scale = Some(mu_scale);
            }
            DataSource::Csv { path, label_column } => {
                r.kind = "csv".into();
                r.path = Some(path);
                r.label_column = Some(label_column);
            }
            DataSource::Idx { images, labels } => {
                r.kind = "idx".into();
                r.images = Some(images);
                r.labels = Some(labels);
            }
        }
        r
    }
}

impl DataSpec {
    pub fn unlabeled(n: usize, dim: usize) -> Self {
        DataSpec {
            source: DataSource::UnlabeledGaussian { n, dim },
            fixed: false,
            shift: 0.0,
            standardize: false,
            label_map: Vec::new(),
        }
    }

    pub fn blob(n_per_class: usize, dim: usize, mu_scale: f64) -> Self {
        DataSpec {
            source: DataSource::GaussianBlob {
                n_per_class,
                dim,
                mu_scale,
            },
            fixed: false,
            shift: 0.0,
            standardize: false,
            label_map: Vec::new(),
        }
    }

    /// Whether every run sees the same dataset.
    pub fn is_fixed(&self) -> bool {
        self.fixed || matches!(self.source, DataSource::Csv { .. } | DataSource::Idx { .. })
    }

    /// Input dimension the realized dataset will have, when known without
    /// touching the filesystem.
    pub fn dim_hint(&self) -> Option<usize> {
        match self.source {
            DataSource::UnlabeledGaussian { dim, .. } => Some(dim),
            DataSource::GaussianBlob { dim, .. } => Some(dim),
            _ => None,
        }
    }

    /// Materialize the dataset for one seed, applying the preprocessing
    /// switches in order: shift, standardize, label map.
    pub fn realize(&self, seed: u64) -> Result<Dataset> {
        let mut ds = match &self.source {
            DataSource::UnlabeledGaussian { n, dim } => unlabeled_gaussian(*n, *dim, seed)?,
            DataSource::GaussianBlob {
                n_per_class,
                dim,
                mu_scale,
            } => gaussian_blob(*n_per_class, *dim, *mu_scale, seed)?,
            DataSource::Csv { path, label_column } => load_csv(path, label_column)?,
            DataSource::Idx { images, labels } => load_idx(images, labels)?,
        };
        if self.shift != 0.0 {
            ds = shift_pixels(&ds, self.shift);
        }
        if self.standardize {
            ds = standardize(&ds);
        }
        if !self.label_map.is_empty() {
            ds = ds.remap_labels(&self.label_map)?;
        }
        Ok(ds)
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label pair (the de-facto MNIST format, big-endian).
/// Pixels are scaled from `[0, 255]` to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let sha = file_sha256(&image_bytes);

    let mut cur = Cursor::new(&image_bytes[..]);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|e| IgbError::Parse(format!("{}: {e}", images_path.display())))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(IgbError::Parse(format!(
            "{}: bad magic {magic:#010x} at byte 0, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let count = cur.read_u32::<BigEndian>().map_err(io_to_parse)? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(io_to_parse)? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(io_to_parse)? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; count * d];
    cur.read_exact(&mut pixels).map_err(|e| {
        IgbError::Parse(format!(
            "{}: truncated at byte {}: {e}",
            images_path.display(),
            16 + pixels.len()
        ))
    })?;
    let inputs = Array2::from_shape_vec(
        (count, d),
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .map_err(|e| IgbError::Shape(format!("idx reshape: {e}")))?;

    let mut cur = Cursor::new(&label_bytes[..]);
    let magic = cur.read_u32::<BigEndian>().map_err(io_to_parse)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(IgbError::Parse(format!(
            "{}: bad magic {magic:#010x} at byte 0, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let label_count = cur.read_u32::<BigEndian>().map_err(io_to_parse)? as usize;
    if label_count != count {
        return Err(IgbError::Parse(format!(
            "{} labels for {count} images",
            label_count
        )));
    }
    let mut raw = vec![0u8; label_count];
    cur.read_exact(&mut raw)
        .map_err(|e| IgbError::Parse(format!("{}: truncated: {e}", labels_path.display())))?;
    let labels: Vec<usize> = raw.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |m| m + 1).max(2);
    let ds = Dataset {
        inputs,
        labels,
        num_classes,
        provenance: Provenance::File {
            path: images_path.display().to_string(),
            sha256: sha,
        },
    };
    ds.validate()?;
    Ok(ds)
}

fn io_to_parse(e: std::io::Error) -> IgbError {
    IgbError::Parse(e.to_string())
}
