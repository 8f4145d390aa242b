//! File formats and dataset surgery: supervised CSV, IDX image/label pairs,
//! the partial-label CSV format, model checkpoints, deterministic splits,
//! and train-statistics standardization.
//!
//! Every loader funnels through the dataset constructors, so a file that
//! would violate a candidate-set or containment invariant is rejected at the
//! door with its line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write as _};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::TransitionMatrixModel;
use crate::model::Model;
use crate::types::{
    CandidateSet, ModelSpec, PartialDataset, SupervisedDataset,
};

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path_str(path),
        line,
        msg: msg.into(),
    }
}

/// Loads "f0,...,f{d-1},label" rows, with an optional header line. k is
/// max(label) + 1 unless `k_override` pins it (labels must then fit).
pub fn load_supervised_csv(path: impl AsRef<Path>, k_override: Option<usize>) -> Result<SupervisedDataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut d: Option<usize> = None;
    let mut saw_header = false;

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if d.is_none() && !saw_header && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            saw_header = true;
            continue;
        }
        let width = *d.get_or_insert(fields.len());
        if fields.len() != width {
            return Err(Error::RaggedRows {
                path: path_str(path),
                line: line_no,
                expected: width,
                got: fields.len(),
            });
        }
        if width < 2 {
            return Err(parse_err(
                path,
                line_no,
                "need at least one feature column and a label column",
            ));
        }
        for f in &fields[..width - 1] {
            features.push(f.parse::<f64>().map_err(|e| {
                parse_err(path, line_no, format!("bad feature value {f:?}: {e}"))
            })?);
        }
        let label: usize = fields[width - 1].parse().map_err(|e| {
            parse_err(path, line_no, format!("bad label {:?}: {e}", fields[width - 1]))
        })?;
        if let Some(k) = k_override {
            if label >= k {
                return Err(Error::LabelOutOfRange {
                    path: path_str(path),
                    line: line_no,
                    label,
                    k,
                });
            }
        }
        labels.push(label);
    }

    let d = d.ok_or_else(|| parse_err(path, 0, "no data rows"))?;
    let n = labels.len();
    let features = Array2::from_shape_vec((n, d - 1), features).expect("counted while parsing");
    match k_override {
        Some(k) => SupervisedDataset::new(features, labels, k),
        None => SupervisedDataset::with_inferred_k(features, labels),
    }
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|e| truncated(e, path))
}

fn truncated(e: std::io::Error, path: &Path) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated {
            path: path_str(path),
        }
    } else {
        Error::Io(e)
    }
}

/// Loads a big-endian IDX image file plus its label file. Pixels land in
/// [0, 1] (divided by 255), images flattened row-major.
pub fn load_idx_images(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<SupervisedDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut ir = BufReader::new(File::open(images_path)?);
    let magic = idx_read_u32(&mut ir, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: path_str(images_path),
            got: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = idx_read_u32(&mut ir, images_path)? as usize;
    let rows = idx_read_u32(&mut ir, images_path)? as usize;
    let cols = idx_read_u32(&mut ir, images_path)? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; count * d];
    ir.read_exact(&mut pixels)
        .map_err(|e| truncated(e, images_path))?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    let magic = idx_read_u32(&mut lr, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: path_str(labels_path),
            got: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let label_count = idx_read_u32(&mut lr, labels_path)? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images_path: path_str(images_path),
            labels_path: path_str(labels_path),
            images: count,
            labels: label_count,
        });
    }
    let mut raw_labels = vec![0u8; label_count];
    lr.read_exact(&mut raw_labels)
        .map_err(|e| truncated(e, labels_path))?;

    let features = Array2::from_shape_vec(
        (count, d),
        pixels.into_iter().map(|p| p as f64 / 255.0).collect(),
    )
    .expect("sized above");
    let labels: Vec<usize> = raw_labels.into_iter().map(|l| l as usize).collect();
    SupervisedDataset::with_inferred_k(features, labels)
}

/// Writes the partial-label CSV format:
///
/// ```text
/// # k=3
/// f0,f1,candidates,true
/// 5.0000000000000000e-1,1.5000000000000000e0,0|2,0
/// ```
///
/// Features carry 17 significant digits so the round-trip is exact; the
/// "true" column appears only when hidden labels are present.
pub fn save_partial_csv(pds: &PartialDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "# k={}", pds.k())?;
    let mut header: Vec<String> = (0..pds.d()).map(|j| format!("f{j}")).collect();
    header.push("candidates".into());
    if pds.hidden_labels().is_some() {
        header.push("true".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (o, (row, set)) in pds
        .features()
        .rows()
        .into_iter()
        .zip(pds.candidates())
        .enumerate()
    {
        for v in row.iter() {
            write!(w, "{v:.16e},")?;
        }
        write!(w, "{set}")?;
        if let Some(hidden) = pds.hidden_labels() {
            write!(w, ",{}", hidden[o])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format written by `save_partial_csv`. The "# k=" comment and
/// the header line are both required; the header disambiguates the column
/// layout (a singleton candidate set would otherwise parse as a feature).
pub fn load_partial_csv(path: impl AsRef<Path>) -> Result<PartialDataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);

    let mut k: Option<usize> = None;
    let mut columns: Option<(usize, bool)> = None; // (d, has_true_column)
    let mut features: Vec<f64> = Vec::new();
    let mut candidates: Vec<CandidateSet> = Vec::new();
    let mut hidden: Vec<usize> = Vec::new();

    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(value) = comment.strip_prefix("k=") {
                let parsed = value.trim().parse::<usize>().map_err(|e| {
                    parse_err(path, line_no, format!("bad k declaration {value:?}: {e}"))
                })?;
                k = Some(parsed);
            }
            continue;
        }
        let k = k.ok_or_else(|| {
            parse_err(path, line_no, "missing \"# k=<int>\" header before data")
        })?;

        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let (d, has_true) = match columns {
            Some(c) => c,
            None => {
                // First non-comment line must be the header naming the
                // candidates column.
                let cand_pos = fields.iter().position(|&f| f == "candidates");
                let Some(d) = cand_pos else {
                    return Err(parse_err(
                        path,
                        line_no,
                        "expected a header line containing a \"candidates\" column",
                    ));
                };
                let has_true = match fields.len() - d {
                    1 => false,
                    2 if fields[d + 1] == "true" => true,
                    _ => {
                        return Err(parse_err(
                            path,
                            line_no,
                            "columns after \"candidates\" must be a single optional \"true\"",
                        ))
                    }
                };
                if d == 0 {
                    return Err(parse_err(path, line_no, "need at least one feature column"));
                }
                columns = Some((d, has_true));
                continue;
            }
        };

        let expected_cols = d + 1 + usize::from(has_true);
        if fields.len() != expected_cols {
            return Err(Error::RaggedRows {
                path: path_str(path),
                line: line_no,
                expected: expected_cols,
                got: fields.len(),
            });
        }
        for f in &fields[..d] {
            features.push(f.parse::<f64>().map_err(|e| {
                parse_err(path, line_no, format!("bad feature value {f:?}: {e}"))
            })?);
        }
        let cand_field = fields[d];
        if cand_field.is_empty() {
            return Err(Error::EmptyCandidates {
                path: path_str(path),
                line: line_no,
            });
        }
        let mut indices = Vec::new();
        for part in cand_field.split('|') {
            let idx = part.parse::<usize>().map_err(|e| {
                parse_err(path, line_no, format!("bad candidate index {part:?}: {e}"))
            })?;
            if idx >= k {
                return Err(Error::BadIndex {
                    path: path_str(path),
                    line: line_no,
                    index: idx,
                    k,
                });
            }
            indices.push(idx);
        }
        let set = CandidateSet::from_indices(k, &indices).map_err(|e| match e {
            Error::EmptySet => Error::EmptyCandidates {
                path: path_str(path),
                line: line_no,
            },
            Error::FullSet { k } => Error::FullCandidates {
                path: path_str(path),
                line: line_no,
                k,
            },
            Error::OutOfRange { index, k } => Error::BadIndex {
                path: path_str(path),
                line: line_no,
                index,
                k,
            },
            other => other,
        })?;
        if has_true {
            let label: usize = fields[d + 1].parse().map_err(|e| {
                parse_err(path, line_no, format!("bad true label {:?}: {e}", fields[d + 1]))
            })?;
            if label >= k {
                return Err(Error::LabelOutOfRange {
                    path: path_str(path),
                    line: line_no,
                    label,
                    k,
                });
            }
            if !set.contains(label) {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("true label {label} is not among the candidates {set}"),
                ));
            }
            hidden.push(label);
        }
        candidates.push(set);
    }

    let k = k.ok_or_else(|| parse_err(path, 0, "missing \"# k=<int>\" header"))?;
    let Some((d, has_true)) = columns else {
        return Err(parse_err(path, 0, "no data rows"));
    };
    let n = candidates.len();
    let features = Array2::from_shape_vec((n, d), features).expect("counted while parsing");
    PartialDataset::new(features, candidates, has_true.then_some(hidden), k)
}

/// How to cut a dataset in two: the held-out side receives
/// floor(fraction * n) examples, drawn by a seeded shuffle.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
}

fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&spec.fraction) {
        return Err(Error::Config(format!(
            "split fraction {} must lie in [0, 1)",
            spec.fraction
        )));
    }
    let held = (spec.fraction * n as f64).floor() as usize;
    if spec.fraction > 0.0 && held == 0 {
        return Err(Error::Config(format!(
            "split fraction {} of {n} examples leaves an empty holdout",
            spec.fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut heldout: Vec<usize> = order[..held].to_vec();
    let mut train: Vec<usize> = order[held..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();
    Ok((train, heldout))
}

/// Deterministic (train, heldout) split of a supervised dataset.
pub fn split_supervised(
    ds: &SupervisedDataset,
    spec: &SplitSpec,
) -> Result<(SupervisedDataset, SupervisedDataset)> {
    let (train_idx, held_idx) = split_indices(ds.n(), spec)?;
    Ok((
        subset_supervised(ds, &train_idx)?,
        subset_supervised(ds, &held_idx)?,
    ))
}

/// Deterministic (train, heldout) split of a partial dataset.
pub fn split_partial(
    pds: &PartialDataset,
    spec: &SplitSpec,
) -> Result<(PartialDataset, PartialDataset)> {
    let (train_idx, held_idx) = split_indices(pds.n(), spec)?;
    Ok((
        subset_partial(pds, &train_idx)?,
        subset_partial(pds, &held_idx)?,
    ))
}

fn subset_supervised(ds: &SupervisedDataset, idx: &[usize]) -> Result<SupervisedDataset> {
    SupervisedDataset::new(
        ds.features().select(Axis(0), idx),
        idx.iter().map(|&i| ds.labels()[i]).collect(),
        ds.k(),
    )
}

/// Row subset of a partial dataset, preserving k and hidden labels.
pub fn subset_partial(pds: &PartialDataset, idx: &[usize]) -> Result<PartialDataset> {
    PartialDataset::new(
        pds.features().select(Axis(0), idx),
        idx.iter().map(|&i| pds.candidates()[i].clone()).collect(),
        pds.hidden_labels()
            .map(|h| idx.iter().map(|&i| h[i]).collect()),
        pds.k(),
    )
}

/// Per-feature mean and standard deviation fitted on training data only.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl FeatureStats {
    /// Fits on the training features. Standard deviations below 1e-8 are
    /// floored there, so constant features transform to zeros.
    pub fn fit(features: &Array2<f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Config("cannot standardize an empty dataset".into()));
        }
        let mean = features.mean_axis(Axis(0)).expect("n > 0");
        let mut var = Array1::<f64>::zeros(features.ncols());
        for row in features.rows() {
            for (j, &v) in row.iter().enumerate() {
                let c = v - mean[j];
                var[j] += c * c;
            }
        }
        let std = var.mapv(|v| (v / n as f64).sqrt().max(1e-8));
        Ok(FeatureStats { mean, std })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn std(&self) -> &Array1<f64> {
        &self.std
    }

    /// Z-scores `features` with the fitted statistics.
    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                context: "standardize",
                expected: format!("{} features", self.mean.len()),
                got: format!("{}", features.ncols()),
            });
        }
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Applies `stats` to a supervised dataset, keeping labels and k.
pub fn standardize_supervised(
    ds: &SupervisedDataset,
    stats: &FeatureStats,
) -> Result<SupervisedDataset> {
    SupervisedDataset::new(stats.transform(ds.features())?, ds.labels().to_vec(), ds.k())
}

/// Applies `stats` to a partial dataset, keeping candidates and k.
pub fn standardize_partial(pds: &PartialDataset, stats: &FeatureStats) -> Result<PartialDataset> {
    PartialDataset::new(
        stats.transform(pds.features())?,
        pds.candidates().to_vec(),
        pds.hidden_labels().map(<[usize]>::to_vec),
        pds.k(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct TMatrixFile {
    k: usize,
    #[serde(rename = "T")]
    t: Vec<Vec<f64>>,
}

/// Loads a transition matrix from JSON of the form
/// `{"k": 3, "T": [[1.0, 0.4, 0.1], ...]}` and validates it.
pub fn load_tmatrix(path: impl AsRef<Path>) -> Result<TransitionMatrixModel> {
    let path = path.as_ref();
    let file: TMatrixFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| parse_err(path, 0, format!("bad transition matrix file: {e}")))?;
    if file.t.len() != file.k || file.t.iter().any(|row| row.len() != file.k) {
        return Err(parse_err(
            path,
            0,
            format!("\"T\" must be a {0}x{0} matrix to match \"k\"", file.k),
        ));
    }
    let flat: Vec<f64> = file.t.into_iter().flatten().collect();
    let t = Array2::from_shape_vec((file.k, file.k), flat).expect("checked above");
    TransitionMatrixModel::new(t)
}

/// Writes a transition matrix in the JSON form read by `load_tmatrix`.
pub fn save_tmatrix(model: &TransitionMatrixModel, path: impl AsRef<Path>) -> Result<()> {
    let t = model.t();
    let file = TMatrixFile {
        k: t.nrows(),
        t: t.rows().into_iter().map(|r| r.to_vec()).collect(),
    };
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut w, &file)
        .map_err(|e| Error::Config(format!("cannot serialize transition matrix: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    d: usize,
    k: usize,
    hidden: Option<usize>,
    params: usize,
    params_file: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".bin");
    os.into()
}

/// Saves a model as a JSON header at `path` plus a flat little-endian f64
/// parameter array at `path`.bin, in `param_slices` order.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bin_path = sidecar_path(path);
    let header = CheckpointHeader {
        kind: match model.spec() {
            ModelSpec::Linear => "linear".into(),
            ModelSpec::Mlp { .. } => "mlp".into(),
        },
        d: model.d(),
        k: model.k(),
        hidden: match model.spec() {
            ModelSpec::Linear => None,
            ModelSpec::Mlp { hidden } => Some(hidden),
        },
        params: model.param_count(),
        params_file: bin_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut hw = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut hw, &header)
        .map_err(|e| Error::Config(format!("cannot serialize checkpoint header: {e}")))?;
    hw.write_all(b"\n")?;
    hw.flush()?;

    let mut bw = BufWriter::new(File::create(&bin_path)?);
    for slice in model.param_slices() {
        for &v in slice {
            bw.write_f64::<LittleEndian>(v)?;
        }
    }
    bw.flush()?;
    Ok(())
}

/// Loads a model saved by `save_model`.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let header: CheckpointHeader = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| parse_err(path, 0, format!("bad checkpoint header: {e}")))?;

    let bin_path = sidecar_path(path);
    let mut br = BufReader::new(File::open(&bin_path)?);
    let mut params = vec![0f64; header.params];
    for v in params.iter_mut() {
        *v = br
            .read_f64::<LittleEndian>()
            .map_err(|e| truncated(e, &bin_path))?;
    }
    if br.read_u8().is_ok() {
        return Err(parse_err(
            &bin_path,
            0,
            "parameter file longer than the header declares",
        ));
    }

    let take2 = |flat: &[f64], rows: usize, cols: usize, at: &mut usize| {
        let a = Array2::from_shape_vec((rows, cols), flat[*at..*at + rows * cols].to_vec())
            .expect("length checked");
        *at += rows * cols;
        a
    };
    let take1 = |flat: &[f64], len: usize, at: &mut usize| {
        let a = Array1::from_vec(flat[*at..*at + len].to_vec());
        *at += len;
        a
    };

    let (d, k) = (header.d, header.k);
    let model = match header.kind.as_str() {
        "linear" => {
            if header.params != k * d + k {
                return Err(parse_err(path, 0, "parameter count does not match shape"));
            }
            let mut at = 0;
            Model::Linear {
                w: take2(&params, k, d, &mut at),
                b: take1(&params, k, &mut at),
            }
        }
        "mlp" => {
            let h = header
                .hidden
                .ok_or_else(|| parse_err(path, 0, "mlp checkpoint missing hidden width"))?;
            if header.params != h * d + h + k * h + k {
                return Err(parse_err(path, 0, "parameter count does not match shape"));
            }
            let mut at = 0;
            Model::Mlp {
                w1: take2(&params, h, d, &mut at),
                b1: take1(&params, h, &mut at),
                w2: take2(&params, k, h, &mut at),
                b2: take1(&params, k, &mut at),
            }
        }
        other => return Err(parse_err(path, 0, format!("unknown model kind {other:?}"))),
    };
    Ok(model)
}
