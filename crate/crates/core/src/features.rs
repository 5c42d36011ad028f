//! Dataset ingestion, preprocessing and synthetic drift scenarios.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FarmError, Result};
use crate::matrix::{sq_dist, Matrix};

/// Dense feature rows with optional family labels and sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub data: Matrix,
    pub labels: Option<Vec<String>>,
    pub ids: Option<Vec<String>>,
}

impl FeatureMatrix {
    pub fn new(data: Matrix, labels: Option<Vec<String>>, ids: Option<Vec<String>>) -> Result<Self> {
        if data.cols() == 0 {
            return Err(FarmError::InvalidArgument("feature matrix has no columns".into()));
        }
        if !data.all_finite() {
            return Err(FarmError::InvalidArgument("feature matrix contains non-finite values".into()));
        }
        for (what, v) in [("labels", &labels), ("ids", &ids)] {
            if let Some(v) = v {
                if v.len() != data.rows() {
                    return Err(FarmError::InvalidArgument(format!(
                        "{what} length {} does not match {} rows",
                        v.len(),
                        data.rows()
                    )));
                }
            }
        }
        if let Some(l) = &labels {
            if let Some(i) = l.iter().position(|s| s.is_empty()) {
                return Err(FarmError::MalformedRow {
                    row: i + 1,
                    reason: "empty label".into(),
                });
            }
        }
        Ok(Self { data, labels, ids })
    }

    pub fn n_samples(&self) -> usize {
        self.data.rows()
    }

    pub fn n_features(&self) -> usize {
        self.data.cols()
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.as_ref().map(|l| l[i].as_str())
    }

    /// Sample id of row `i`; falls back to the row index when no ids were loaded.
    pub fn id(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn require_labels(&self) -> Result<&[String]> {
        self.labels
            .as_deref()
            .ok_or_else(|| FarmError::InvalidArgument("labels required".into()))
    }

    /// Sorted distinct family names.
    pub fn families(&self) -> Vec<String> {
        self.indices_by_label().into_keys().collect()
    }

    /// Row indices grouped by label, in ascending row order within each group.
    pub fn indices_by_label(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        if let Some(labels) = &self.labels {
            for (i, l) in labels.iter().enumerate() {
                out.entry(l.clone()).or_default().push(i);
            }
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i].clone()).collect()),
            ids: self
                .ids
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    /// Rows whose label is `family`.
    pub fn family_subset(&self, family: &str) -> FeatureMatrix {
        let idx: Vec<usize> = match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == family).collect(),
            None => Vec::new(),
        };
        self.subset(&idx)
    }

    /// Row-wise concatenation. Labels/ids are kept only when every part has them.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let data = Matrix::vstack(&parts.iter().map(|p| &p.data).collect::<Vec<_>>())?;
        let labels = if parts.iter().all(|p| p.labels.is_some()) {
            Some(parts.iter().flat_map(|p| p.labels.clone().unwrap()).collect())
        } else {
            None
        };
        let ids = if parts.iter().all(|p| p.ids.is_some()) {
            Some(parts.iter().flat_map(|p| p.ids.clone().unwrap()).collect())
        } else {
            None
        };
        Ok(FeatureMatrix { data, labels, ids })
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion

/// Names of the non-feature columns in a CSV file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub label: Option<String>,
    pub id: Option<String>,
}

impl CsvColumns {
    pub fn labeled(label: &str) -> Self {
        Self {
            label: Some(label.to_string()),
            id: None,
        }
    }
}

/// One parsed CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub features: Vec<f64>,
    pub label: Option<String>,
    pub id: Option<String>,
}

/// Column layout resolved against a header row.
#[derive(Debug, Clone)]
pub struct CsvLayout {
    width: usize,
    label_idx: Option<usize>,
    id_idx: Option<usize>,
    feature_idx: Vec<usize>,
    feature_names: Vec<String>,
}

impl CsvLayout {
    /// Resolves `columns` against `header`. A named column missing from the header
    /// is an error.
    pub fn from_header(header: &csv::StringRecord, columns: &CsvColumns) -> Result<Self> {
        let find = |name: &Option<String>| -> Result<Option<usize>> {
            match name {
                None => Ok(None),
                Some(n) => header
                    .iter()
                    .position(|h| h.trim() == n)
                    .map(Some)
                    .ok_or_else(|| FarmError::InvalidArgument(format!("column '{n}' not found in header"))),
            }
        };
        let label_idx = find(&columns.label)?;
        let id_idx = find(&columns.id)?;
        let feature_idx: Vec<usize> = (0..header.len())
            .filter(|&i| Some(i) != label_idx && Some(i) != id_idx)
            .collect();
        if feature_idx.is_empty() {
            return Err(FarmError::InvalidArgument("no feature columns in header".into()));
        }
        let feature_names = feature_idx.iter().map(|&i| header[i].trim().to_string()).collect();
        Ok(Self {
            width: header.len(),
            label_idx,
            id_idx,
            feature_idx,
            feature_names,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_idx.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn has_labels(&self) -> bool {
        self.label_idx.is_some()
    }

    /// Parses one record. `row` is the 1-based data row number used in errors.
    pub fn parse(&self, record: &csv::StringRecord, row: usize) -> Result<CsvRow> {
        if record.len() != self.width {
            return Err(FarmError::MalformedRow {
                row,
                reason: format!("expected {} cells, found {}", self.width, record.len()),
            });
        }
        let mut features = Vec::with_capacity(self.feature_idx.len());
        for (&c, name) in self.feature_idx.iter().zip(&self.feature_names) {
            let cell = record[c].trim();
            let v: f64 = cell.parse().map_err(|_| FarmError::MalformedRow {
                row,
                reason: format!("column '{name}': '{cell}' is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(FarmError::MalformedRow {
                    row,
                    reason: format!("column '{name}': non-finite value '{cell}'"),
                });
            }
            features.push(v);
        }
        let label = match self.label_idx {
            Some(c) => {
                let l = record[c].trim();
                if l.is_empty() {
                    return Err(FarmError::MalformedRow {
                        row,
                        reason: "empty label".into(),
                    });
                }
                Some(l.to_string())
            }
            None => None,
        };
        let id = self.id_idx.map(|c| record[c].trim().to_string());
        Ok(CsvRow { features, label, id })
    }
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| FarmError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

/// Reads a headed CSV file into a [`FeatureMatrix`]. Every row is validated;
/// the first malformed row aborts the load.
pub fn load_csv(path: impl AsRef<Path>, columns: &CsvColumns) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    if header.is_empty() {
        return Err(FarmError::Empty(format!("{} has no header", path.display())));
    }
    let layout = CsvLayout::from_header(&header, columns)?;
    let mut data = Matrix::with_cols(layout.n_features());
    let mut labels = layout.has_labels().then(Vec::new);
    let mut ids = columns.id.as_ref().map(|_| Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = layout.parse(&rec, i + 1)?;
        data.push_row(&row.features)?;
        if let (Some(ls), Some(l)) = (labels.as_mut(), row.label) {
            ls.push(l);
        }
        if let (Some(is), Some(id)) = (ids.as_mut(), row.id) {
            is.push(id);
        }
    }
    if data.rows() == 0 {
        return Err(FarmError::Empty(format!("{} has no data rows", path.display())));
    }
    FeatureMatrix::new(data, labels, ids)
}

/// Serializes a matrix as CSV with generated feature names `f0..`, plus `id`
/// and `label` columns when present.
pub fn csv_bytes(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = Vec::new();
    if m.ids.is_some() {
        header.push("id".into());
    }
    header.extend((0..m.n_features()).map(|j| format!("f{j}")));
    if m.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..m.n_samples() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ids) = &m.ids {
            rec.push(ids[i].clone());
        }
        rec.extend(m.data.row(i).iter().map(|v| format!("{v:?}")));
        if let Some(l) = &m.labels {
            rec.push(l[i].clone());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| FarmError::InvalidArgument(format!("csv buffer: {e}")))
}

/// [`csv_bytes`] written atomically to `path`.
pub fn write_csv(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    crate::checkpoint::write_atomic(path.as_ref(), &csv_bytes(m)?)
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Fitted variance filter plus per-feature quantile maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub input_width: usize,
    pub retained_indices: Vec<usize>,
    pub quantile_maps: Vec<Vec<f64>>,
    pub variance_floor: f64,
}

impl PreprocessState {
    pub fn output_width(&self) -> usize {
        self.retained_indices.len()
    }

    pub fn resolution(&self) -> usize {
        self.quantile_maps.first().map_or(0, Vec::len)
    }

    /// Maps one raw row to its quantile-normalized retained features.
    pub fn transform_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.input_width {
            return Err(FarmError::DimensionMismatch {
                context: "preprocess input",
                expected: self.input_width,
                actual: raw.len(),
            });
        }
        Ok(self
            .retained_indices
            .iter()
            .zip(&self.quantile_maps)
            .map(|(&j, map)| quantile_position(map, raw[j]))
            .collect())
    }
}

/// Empirical quantile of sorted `values` at level `q` in `[0, 1]`, linearly
/// interpolated between order statistics.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Position of `v` on the CDF described by `map` (values at evenly spaced
/// levels `0..=1`). Flat runs in the map resolve to their midpoint level.
fn quantile_position(map: &[f64], v: f64) -> f64 {
    let n = map.len();
    let last = n - 1;
    if v < map[0] {
        return 0.0;
    }
    if v > map[last] {
        return 1.0;
    }
    let level = |i: usize| i as f64 / last as f64;
    // upper: interpolate from the last knot <= v
    let upper = {
        let i = map.partition_point(|&m| m <= v) - 1;
        if i == last {
            1.0
        } else {
            let (x0, x1) = (map[i], map[i + 1]);
            level(i) + (v - x0) / (x1 - x0) * (level(i + 1) - level(i))
        }
    };
    // lower: interpolate up to the first knot >= v
    let lower = {
        let i = map.partition_point(|&m| m < v);
        if i == 0 {
            0.0
        } else {
            let (x0, x1) = (map[i - 1], map[i]);
            level(i - 1) + (v - x0) / (x1 - x0) * (level(i) - level(i - 1))
        }
    };
    0.5 * (upper + lower)
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Fits the variance filter and quantile maps on `train`.
pub fn fit_preprocess(train: &FeatureMatrix, variance_floor: f64, quantile_resolution: usize) -> Result<PreprocessState> {
    if train.n_samples() == 0 {
        return Err(FarmError::Empty("training matrix".into()));
    }
    if !(variance_floor >= 0.0 && variance_floor.is_finite()) {
        return Err(FarmError::InvalidArgument(format!("variance floor {variance_floor} must be >= 0")));
    }
    if quantile_resolution < 2 {
        return Err(FarmError::InvalidArgument("quantile resolution must be >= 2".into()));
    }
    let mut retained_indices = Vec::new();
    let mut quantile_maps = Vec::new();
    for j in 0..train.n_features() {
        let mut col = train.data.column(j);
        if population_variance(&col) <= variance_floor {
            continue;
        }
        col.sort_by(f64::total_cmp);
        let map = (0..quantile_resolution)
            .map(|k| interpolated_quantile(&col, k as f64 / (quantile_resolution - 1) as f64))
            .collect();
        retained_indices.push(j);
        quantile_maps.push(map);
    }
    if retained_indices.is_empty() {
        return Err(FarmError::Preprocess(format!(
            "variance floor {variance_floor} removed every feature"
        )));
    }
    Ok(PreprocessState {
        input_width: train.n_features(),
        retained_indices,
        quantile_maps,
        variance_floor,
    })
}

/// Applies a fitted [`PreprocessState`]; labels and ids are carried through.
pub fn apply_preprocess(state: &PreprocessState, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.n_features() != state.input_width {
        return Err(FarmError::DimensionMismatch {
            context: "preprocess input",
            expected: state.input_width,
            actual: x.n_features(),
        });
    }
    let mut out = Matrix::with_cols(state.output_width());
    for r in x.data.iter_rows() {
        out.push_row(&state.transform_row(r)?)?;
    }
    Ok(FeatureMatrix {
        data: out,
        labels: x.labels.clone(),
        ids: x.ids.clone(),
    })
}

// ---------------------------------------------------------------------------
// Splitting

/// Seeded train/validation split, stratified by label when labels exist.
/// Both halves keep the input row order.
pub fn split(data: &FeatureMatrix, train_fraction: f64, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FarmError::InvalidArgument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let take = |n: usize| ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    if data.labels.is_some() {
        for (label, mut idx) in data.indices_by_label() {
            if idx.len() < 2 {
                return Err(FarmError::InvalidArgument(format!(
                    "class '{label}' has {} sample(s); stratified split needs at least 2",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let k = take(idx.len());
            train_idx.extend_from_slice(&idx[..k]);
            val_idx.extend_from_slice(&idx[k..]);
        }
    } else {
        if data.n_samples() < 2 {
            return Err(FarmError::InvalidArgument("split needs at least 2 rows".into()));
        }
        let mut idx: Vec<usize> = (0..data.n_samples()).collect();
        idx.shuffle(&mut rng);
        let k = take(idx.len());
        train_idx.extend_from_slice(&idx[..k]);
        val_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&val_idx)))
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    pub center: Vec<f64>,
    pub scale: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolvedShift {
    pub family: String,
    pub displacement: Vec<f64>,
    pub scale_inflation: f64,
}

/// Gaussian-blob stand-in for a training / evolved / unseen benchmark split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub known_families: Vec<FamilySpec>,
    pub evolved_shift: Vec<EvolvedShift>,
    pub unseen_families: Vec<FamilySpec>,
    pub ambient_dim: usize,
    /// Extra constant columns appended to every row.
    #[serde(default)]
    pub constant_features: usize,
    pub seed: u64,
}

/// Knobs for [`SyntheticScenario::separated`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub known: Vec<String>,
    pub unseen: Vec<String>,
    pub samples_per_family: usize,
    pub ambient_dim: usize,
    /// Pairwise distance between known centers, in units of blob std.
    pub separation_factor: f64,
    /// Pairwise distance between unseen centers, in units of blob std.
    pub unseen_separation_factor: f64,
    /// Number of ambient axes that carry family structure.
    pub signal_dim: usize,
    /// Norm of each evolved family's displacement, in units of blob std.
    pub shift_sigma: f64,
    pub scale_inflation: f64,
    pub blob_std: f64,
    pub constant_features: usize,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            known: ["fam-a", "fam-b", "fam-c", "fam-d", "fam-e", "fam-f"].map(String::from).to_vec(),
            unseen: ["new-a", "new-b"].map(String::from).to_vec(),
            samples_per_family: 300,
            ambient_dim: 12,
            separation_factor: 6.0,
            unseen_separation_factor: 6.0,
            signal_dim: 3,
            shift_sigma: 3.0,
            scale_inflation: 1.0,
            blob_std: 1.0,
            constant_features: 2,
            seed: 7,
        }
    }
}

impl SyntheticScenario {
    /// Draws every family center (known and unseen) inside a shared
    /// `signal_dim`-dimensional subspace spanned by randomly chosen ambient
    /// axes. Centers are rejection-sampled so that known centers are at least
    /// `separation_factor * blob_std` apart and each unseen center is at least
    /// `unseen_separation_factor * blob_std` from every other center. Evolved
    /// displacements are random directions inside the same subspace with norm
    /// `shift_sigma * blob_std`. The remaining axes carry pure noise.
    pub fn separated(p: &ScenarioParams) -> Result<Self> {
        let total = p.known.len() + p.unseen.len();
        if p.signal_dim == 0 || p.signal_dim > p.ambient_dim {
            return Err(FarmError::InvalidArgument(format!(
                "signal_dim must be in 1..={}, got {}",
                p.ambient_dim, p.signal_dim
            )));
        }
        if total == 0 {
            return Err(FarmError::InvalidArgument("scenario needs at least one family".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x5eed_cafe);
        let mut axes: Vec<usize> = (0..p.ambient_dim).collect();
        axes.shuffle(&mut rng);
        axes.truncate(p.signal_dim);

        let mut placed: Vec<Vec<f64>> = Vec::with_capacity(total);
        let min_sep = |i: usize, j: usize| {
            let f = if i < p.known.len() && j < p.known.len() {
                p.separation_factor
            } else {
                p.unseen_separation_factor
            };
            f * p.blob_std
        };
        let widest = p.separation_factor.max(p.unseen_separation_factor) * p.blob_std;
        let mut half_width = 0.5 * widest;
        for i in 0..total {
            let mut failures = 0usize;
            loop {
                let cand: Vec<f64> = (0..p.signal_dim).map(|_| rng.random_range(-half_width..=half_width)).collect();
                let ok = placed
                    .iter()
                    .enumerate()
                    .all(|(j, c)| sq_dist(&cand, c).sqrt() >= min_sep(i, j));
                if ok {
                    placed.push(cand);
                    break;
                }
                failures += 1;
                if failures % 200 == 0 {
                    half_width *= 1.1;
                }
            }
        }
        let embed = |sub: &[f64]| {
            let mut v = vec![0.0; p.ambient_dim];
            for (&a, &x) in axes.iter().zip(sub) {
                v[a] = x;
            }
            v
        };
        let family = |name: &String, sub: &[f64]| FamilySpec {
            name: name.clone(),
            center: embed(sub),
            scale: p.blob_std,
            count: p.samples_per_family,
        };
        let known_families = p.known.iter().zip(&placed).map(|(n, c)| family(n, c)).collect();
        let unseen_families = p.unseen.iter().zip(&placed[p.known.len()..]).map(|(n, c)| family(n, c)).collect();
        let evolved_shift = p
            .known
            .iter()
            .map(|name| {
                let mut dir: Vec<f64> = (0..p.signal_dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                dir.iter_mut().for_each(|v| *v *= p.shift_sigma * p.blob_std / norm);
                EvolvedShift {
                    family: name.clone(),
                    displacement: embed(&dir),
                    scale_inflation: p.scale_inflation,
                }
            })
            .collect();
        let s = SyntheticScenario {
            known_families,
            evolved_shift,
            unseen_families,
            ambient_dim: p.ambient_dim,
            constant_features: p.constant_features,
            seed: p.seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim < 2 {
            return Err(FarmError::InvalidArgument("ambient_dim must be >= 2".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in self.known_families.iter().chain(&self.unseen_families) {
            if !seen.insert(f.name.as_str()) {
                return Err(FarmError::InvalidArgument(format!("duplicate family name '{}'", f.name)));
            }
            if f.count == 0 {
                return Err(FarmError::InvalidArgument(format!("family '{}' has zero samples", f.name)));
            }
            if f.center.len() != self.ambient_dim {
                return Err(FarmError::DimensionMismatch {
                    context: "family center",
                    expected: self.ambient_dim,
                    actual: f.center.len(),
                });
            }
            if !(f.scale > 0.0 && f.scale.is_finite()) {
                return Err(FarmError::InvalidArgument(format!("family '{}' scale must be > 0", f.name)));
            }
        }
        for s in &self.evolved_shift {
            if !self.known_families.iter().any(|f| f.name == s.family) {
                return Err(FarmError::InvalidArgument(format!(
                    "evolved shift names unknown family '{}'",
                    s.family
                )));
            }
            if s.displacement.len() != self.ambient_dim {
                return Err(FarmError::DimensionMismatch {
                    context: "evolved displacement",
                    expected: self.ambient_dim,
                    actual: s.displacement.len(),
                });
            }
        }
        Ok(())
    }
}

/// Synthetic train / evolved / unseen matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub train: FeatureMatrix,
    pub evolved: FeatureMatrix,
    pub unseen: FeatureMatrix,
}

/// Samples the three scenario splits. Output is a pure function of `spec`.
pub fn generate_scenario(spec: &SyntheticScenario) -> Result<ScenarioData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.ambient_dim + spec.constant_features;
    let blob = |fams: &[(&FamilySpec, Vec<f64>, f64)], tag: &str, rng: &mut ChaCha8Rng| -> Result<FeatureMatrix> {
        let mut data = Matrix::with_cols(width);
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for (f, center, scale) in fams {
            for i in 0..f.count {
                let mut row: Vec<f64> = center
                    .iter()
                    .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                row.extend(std::iter::repeat_n(1.0, spec.constant_features));
                data.push_row(&row)?;
                labels.push(f.name.clone());
                ids.push(format!("{}-{tag}-{i}", f.name));
            }
        }
        FeatureMatrix::new(data, Some(labels), Some(ids))
    };
    let known: Vec<_> = spec
        .known_families
        .iter()
        .map(|f| (f, f.center.clone(), f.scale))
        .collect();
    let evolved: Vec<_> = spec
        .known_families
        .iter()
        .map(|f| match spec.evolved_shift.iter().find(|s| s.family == f.name) {
            Some(s) => (
                f,
                f.center.iter().zip(&s.displacement).map(|(c, d)| c + d).collect(),
                f.scale * s.scale_inflation,
            ),
            None => (f, f.center.clone(), f.scale),
        })
        .collect();
    let unseen: Vec<_> = spec
        .unseen_families
        .iter()
        .map(|f| (f, f.center.clone(), f.scale))
        .collect();
    let train = blob(&known, "train", &mut rng)?;
    let evolved = blob(&evolved, "evolved", &mut rng)?;
    let unseen = if unseen.is_empty() {
        FeatureMatrix {
            data: Matrix::with_cols(width),
            labels: Some(Vec::new()),
            ids: Some(Vec::new()),
        }
    } else {
        blob(&unseen, "unseen", &mut rng)?
    };
    Ok(ScenarioData { train, evolved, unseen })
}
