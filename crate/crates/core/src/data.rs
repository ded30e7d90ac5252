//! Multi-view datasets on disk and in memory.
//!
//! A dataset is a JSON manifest naming a labels file and one binary view
//! file per view. View files are `EVMV-VW1` followed by little-endian `u32`
//! rows and dims and a row-major little-endian `f32` payload. Labels are one
//! `id,label` line per sample, in row order. Paths inside the manifest are
//! resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const VIEW_MAGIC: &[u8; 8] = b"EVMV-VW1";
const VIEW_HEADER_LEN: usize = 16;

/// Default split fractions (train, validation, test).
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.64, 0.16, 0.20);

/// One view's features: `rows × dims`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    pub name: String,
    rows: usize,
    dims: usize,
    data: Vec<f32>,
}

impl ViewMatrix {
    pub fn new(name: impl Into<String>, rows: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if rows == 0 || dims == 0 {
            return Err(Error::Dimension(format!(
                "view {name} must have at least one row and one column"
            )));
        }
        if rows.checked_mul(dims) != Some(data.len()) {
            return Err(Error::Dimension(format!(
                "view {name}: {rows} x {dims} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!("view {name} has non-finite values")));
        }
        Ok(Self {
            name,
            rows,
            dims,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            name: self.name.clone(),
            rows: indices.len(),
            dims: self.dims,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VIEW_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(VIEW_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a view file image; `origin` only labels error messages.
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < VIEW_MAGIC.len() || &bytes[..VIEW_MAGIC.len()] != VIEW_MAGIC {
            let found = &bytes[..bytes.len().min(VIEW_MAGIC.len())];
            return Err(Error::BadMagic {
                path: origin.to_string(),
                expected: String::from_utf8_lossy(VIEW_MAGIC).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        if bytes.len() < VIEW_HEADER_LEN {
            return Err(Error::Truncated {
                path: origin.to_string(),
                expected: VIEW_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
        let dims = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
        let overflow = || Error::DimensionOverflow {
            path: origin.to_string(),
            rows,
            dims,
        };
        let payload = rows
            .checked_mul(dims)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(overflow)?;
        let expected = payload.checked_add(VIEW_HEADER_LEN).ok_or_else(overflow)?;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                path: origin.to_string(),
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::TrailingBytes {
                path: origin.to_string(),
                expected,
                actual: bytes.len(),
            });
        }
        let data = bytes[VIEW_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(name, rows as usize, dims as usize, data).map_err(|e| Error::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })
    }
}

/// Reads a view file; the view is named after the file stem.
pub fn read_view_matrix(path: impl AsRef<Path>) -> Result<ViewMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ViewMatrix::from_bytes(name, &bytes, &path.display().to_string())
}

pub fn write_view_matrix(vm: &ViewMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, vm.to_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub path: String,
    pub dims: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub num_classes: usize,
    pub labels_path: String,
    pub views: Vec<ViewEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.views.is_empty() {
            return Err(Error::Config("manifest lists no views".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.views {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Config(format!("duplicate view name {}", v.name)));
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Aligned per-view features with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub num_classes: usize,
    sample_ids: Vec<String>,
    labels: Vec<usize>,
    views: Vec<ViewMatrix>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        sample_ids: Vec<String>,
        labels: Vec<usize>,
        views: Vec<ViewMatrix>,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Config("dataset needs at least one view".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if sample_ids.len() != labels.len() {
            return Err(Error::Alignment(format!(
                "{} sample ids but {} labels",
                sample_ids.len(),
                labels.len()
            )));
        }
        for v in &views {
            if v.rows() != labels.len() {
                return Err(Error::Alignment(format!(
                    "view {} has {} rows but there are {} labels",
                    v.name,
                    v.rows(),
                    labels.len()
                )));
            }
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::LabelRange {
                sample: sample_ids[i].clone(),
                label: labels[i],
                num_classes,
            });
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            sample_ids,
            labels,
            views,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn views(&self) -> &[ViewMatrix] {
        &self.views
    }

    pub fn view_names(&self) -> Vec<String> {
        self.views.iter().map(|v| v.name.clone()).collect()
    }

    pub fn position_of(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }

    /// Sample `i`'s features for every view, widened to `f64`.
    pub fn features(&self, i: usize) -> Vec<Vec<f64>> {
        self.views
            .iter()
            .map(|v| v.row(i).iter().map(|&x| x as f64).collect())
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            num_classes: self.num_classes,
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            views: self.views.iter().map(|v| v.select_rows(indices)).collect(),
        }
    }

    /// Keeps only the named views, in the order given.
    pub fn select_views<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let views = names
            .iter()
            .map(|n| {
                self.views
                    .iter()
                    .find(|v| v.name == n.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("dataset has no view {}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            self.name.clone(),
            self.num_classes,
            self.sample_ids.clone(),
            self.labels.clone(),
            views,
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes `manifest.json`, `labels.csv` and one `<view>.vw` per view into
    /// `dir`; returns the manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut labels = String::new();
        for (id, l) in self.sample_ids.iter().zip(&self.labels) {
            labels.push_str(&format!("{id},{l}\n"));
        }
        let labels_path = dir.join("labels.csv");
        fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
        let mut entries = Vec::with_capacity(self.views.len());
        for v in &self.views {
            let file = format!("{}.vw", v.name);
            write_view_matrix(v, dir.join(&file))?;
            entries.push(ViewEntry {
                name: v.name.clone(),
                path: file,
                dims: v.dims(),
            });
        }
        let manifest = DatasetManifest {
            dataset_name: self.name.clone(),
            num_classes: self.num_classes,
            labels_path: "labels.csv".into(),
            views: entries,
        };
        let manifest_path = dir.join("manifest.json");
        manifest.write(&manifest_path)?;
        Ok(manifest_path)
    }
}

fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            msg: format!("line {}: {msg}", lineno + 1),
        };
        let (id, label) = line
            .rsplit_once(',')
            .ok_or_else(|| parse_err(format!("expected id,label but got {line:?}")))?;
        let label = label
            .trim()
            .parse::<usize>()
            .map_err(|e| parse_err(format!("label {label:?}: {e}")))?;
        ids.push(id.trim().to_string());
        labels.push(label);
    }
    Ok((ids, labels))
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let (ids, labels) = read_labels(&base.join(&manifest.labels_path))?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let path = base.join(&entry.path);
        let mut vm = read_view_matrix(&path)?;
        if vm.dims() != entry.dims {
            return Err(Error::Alignment(format!(
                "view {} declares {} dims but {} has {}",
                entry.name,
                entry.dims,
                path.display(),
                vm.dims()
            )));
        }
        vm.name = entry.name.clone();
        views.push(vm);
    }
    LabeledDataset::new(manifest.dataset_name, manifest.num_classes, ids, labels, views)
}

/// Index sets of a stratified split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled stratified split; each index list is sorted ascending.
pub fn stratified_split_indices(
    labels: &[usize],
    num_classes: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitIndices> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must all be positive"
        )));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must sum to 1"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..num_classes {
        let mut members = by_class.remove(&c).unwrap_or_default();
        if members.len() < 3 {
            return Err(Error::Stratification(format!(
                "class {c} has {} samples, need at least 3",
                members.len()
            )));
        }
        let mut r = rng::stream(seed, c as u64);
        rng::shuffle(&mut r, &mut members);
        let n = members.len() as f64;
        let n_train = (ft * n).round() as usize;
        let n_val = ((fv * n).round() as usize).min(members.len() - n_train);
        out.train.extend_from_slice(&members[..n_train]);
        out.val.extend_from_slice(&members[n_train..n_train + n_val]);
        out.test.extend_from_slice(&members[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn stratified_split(
    ds: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let idx = stratified_split_indices(ds.labels(), ds.num_classes, fractions, seed)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.val), ds.subset(&idx.test)))
}

/// Default view names: the semantic view followed by the reasoning views.
pub fn default_view_names(n: usize) -> Vec<String> {
    const NAMED: [&str; 4] = ["semantic", "symptom", "emotion", "cognitive"];
    (0..n)
        .map(|v| NAMED.get(v).map(|s| s.to_string()).unwrap_or(format!("view{v}")))
        .collect()
}

/// Gaussian class-mixture generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dims: Vec<usize>,
    /// Scale of the class means per view; 0 makes a view class-independent.
    pub informativeness: Vec<f64>,
    /// Fraction of labels reassigned to a different, uniformly drawn class.
    pub label_noise: f64,
    pub seed: u64,
    pub view_names: Vec<String>,
}

impl SynthConfig {
    pub fn num_views(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.dims.len();
        if self.num_classes < 2 || self.samples_per_class == 0 || v == 0 {
            return Err(Error::Config(
                "need at least 2 classes, 1 sample per class and 1 view".into(),
            ));
        }
        if self.informativeness.len() != v || self.view_names.len() != v {
            return Err(Error::Config(format!(
                "{v} views but {} informativeness values and {} names",
                self.informativeness.len(),
                self.view_names.len()
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config("view dims must be positive".into()));
        }
        if self.informativeness.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Config("informativeness must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must lie in [0, 1)".into()));
        }
        let unique: HashSet<&String> = self.view_names.iter().collect();
        if unique.len() != v {
            return Err(Error::Config("view names must be unique".into()));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 2,
            samples_per_class: 1000,
            dims: vec![4, 4, 4],
            informativeness: vec![1.0, 0.6, 0.0],
            label_noise: 0.1,
            seed: 42,
            view_names: default_view_names(3),
        }
    }
}

const MEAN_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Samples are interleaved by class (`sample i` has clean class `i mod K`).
/// Means, features and label noise use separate streams, so changing the
/// noise level leaves the features untouched.
pub fn synth_generate(cfg: &SynthConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let k = cfg.num_classes;
    let n = k * cfg.samples_per_class;
    let mut means_rng = rng::stream(cfg.seed, MEAN_STREAM);
    let means: Vec<Vec<Vec<f64>>> = cfg
        .dims
        .iter()
        .zip(&cfg.informativeness)
        .map(|(&d, &scale)| {
            (0..k)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut means_rng);
                            scale * g
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut sample_rng = rng::stream(cfg.seed, SAMPLE_STREAM);
    let mut data: Vec<Vec<f32>> = cfg.dims.iter().map(|&d| Vec::with_capacity(n * d)).collect();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c);
        for (v, view_means) in means.iter().enumerate() {
            for &mu in &view_means[c] {
                let g: f64 = StandardNormal.sample(&mut sample_rng);
                data[v].push((mu + g) as f32);
            }
        }
    }

    let mut noise_rng = rng::stream(cfg.seed, NOISE_STREAM);
    for label in &mut labels {
        let u = rng::unit_f64(&mut noise_rng);
        let other = rng::index(&mut noise_rng, k - 1);
        if u < cfg.label_noise {
            *label = if other >= *label { other + 1 } else { other };
        }
    }

    let views = data
        .into_iter()
        .zip(&cfg.view_names)
        .zip(&cfg.dims)
        .map(|((values, name), &d)| ViewMatrix::new(name.clone(), n, d, values))
        .collect::<Result<Vec<_>>>()?;
    let ids = (0..n).map(|i| format!("s{i:05}")).collect();
    LabeledDataset::new(format!("synth-{}", cfg.seed), k, ids, labels, views)
}
