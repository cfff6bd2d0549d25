//! Datasets: CSV and IDX loading, per-feature normalization and the
//! train/validation split.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::random::{Rng, Stream};
use crate::tensor::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard deviations below this are replaced by it during normalization.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature statistics used to normalize a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, already floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Population mean and standard deviation of every column.
    pub fn compute(features: &Matrix) -> Self {
        let (n, m) = (features.rows(), features.cols());
        let mut mean = vec![0.0; m];
        for r in 0..n {
            for (acc, v) in mean.iter_mut().zip(features.row(r)) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let mut var = vec![0.0; m];
        for r in 0..n {
            for ((acc, v), mu) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &mut Dataset) -> Result<()> {
        if ds.features.cols() != self.mean.len() {
            return Err(Error::shape(
                "normalize",
                format!("{} features", self.mean.len()),
                ds.features.shape(),
            ));
        }
        for r in 0..ds.features.rows() {
            for ((v, mu), sd) in ds.features.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        ds.stats = Some(self.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One example per row.
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Statistics this dataset was normalized with, if any.
    pub stats: Option<FeatureStats>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("dataset features must be finite".into()));
        }
        Ok(Self {
            features,
            labels,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&l| l + 1)
    }

    pub fn example(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    /// New dataset holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let m = self.num_features();
        let mut data = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Matrix::from_vec(indices.len(), m, data).expect("row lengths match"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            stats: self.stats.clone(),
        }
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
    /// Column name; requires a header row.
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

/// Loads a rectangular numeric CSV file. Every column except the label
/// column becomes a feature; labels must be non-negative integers.
pub fn load_csv(path: &Path, label: &LabelColumn, header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut records = reader.records();
    let mut names: Option<Vec<String>> = None;
    if header {
        if let Some(rec) = records.next() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            names = Some(rec.iter().map(str::to_string).collect());
        }
    }

    let mut width: Option<usize> = names.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected,
                found: rec.len(),
            });
        }
        let li = match label_idx {
            Some(i) => i,
            None => {
                let i = resolve_label_column(path, label, names.as_deref(), expected)?;
                label_idx = Some(i);
                i
            }
        };
        for (col, cell) in rec.iter().enumerate() {
            let non_numeric = || Error::NonNumeric {
                path: path.to_path_buf(),
                line,
                column: col + 1,
                value: cell.to_string(),
            };
            if col == li {
                labels.push(cell.parse::<usize>().map_err(|_| non_numeric())?);
            } else {
                let v: f64 = cell.parse().map_err(|_| non_numeric())?;
                if !v.is_finite() {
                    return Err(non_numeric());
                }
                data.push(v);
            }
        }
    }
    let width = width.unwrap_or(0);
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(Matrix::from_vec(labels.len(), width - 1, data)?, labels)
}

fn resolve_label_column(path: &Path, label: &LabelColumn, names: Option<&[String]>, width: usize) -> Result<usize> {
    let missing = |column: String| Error::MissingLabelColumn {
        path: path.to_path_buf(),
        column,
    };
    match label {
        LabelColumn::Last if width > 0 => Ok(width - 1),
        LabelColumn::Last => Err(missing("last".into())),
        LabelColumn::Index(i) if *i < width => Ok(*i),
        LabelColumn::Index(i) => Err(missing(i.to_string())),
        LabelColumn::Name(name) => names
            .and_then(|ns| ns.iter().position(|n| n == name))
            .ok_or_else(|| missing(name.clone())),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::InvalidArgument(format!("{}: truncated IDX header", path.display())))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an IDX image file (u8, three dimensions) and its label file. Each
/// image is flattened row-major into one feature row.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    let count = read_be_u32(&images, 4, images_path)? as usize;
    let rows = read_be_u32(&images, 8, images_path)? as usize;
    let cols = read_be_u32(&images, 12, images_path)? as usize;
    let pixels = &images[16..];
    if pixels.len() != count * rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} pixel bytes, found {}",
            images_path.display(),
            count * rows * cols,
            pixels.len()
        )));
    }

    let labels = fs::read(labels_path)?;
    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let label_count = read_be_u32(&labels, 4, labels_path)? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != label_count {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} label bytes, found {}",
            labels_path.display(),
            label_count,
            label_bytes.len()
        )));
    }
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let features = Matrix::from_vec(count, rows * cols, pixels.iter().map(|&p| f64::from(p)).collect())?;
    Dataset::new(features, label_bytes.iter().map(|&l| usize::from(l)).collect())
}

/// Writes `images` (each `rows * cols` bytes) and `labels` as an IDX pair.
pub fn write_idx(images_path: &Path, labels_path: &Path, rows: usize, cols: usize, images: &[u8], labels: &[u8]) -> Result<()> {
    if images.len() != labels.len() * rows * cols {
        return Err(Error::CountMismatch {
            images: images.len() / (rows * cols).max(1),
            labels: labels.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [labels.len(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(images);
    fs::write(images_path, out)?;

    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(labels_path, out)?;
    Ok(())
}

/// Normalizes every column of `train` to zero mean and unit population
/// standard deviation, and applies the same (train) statistics to `others`.
pub fn normalize(train: &mut Dataset, others: &mut [&mut Dataset]) -> Result<FeatureStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = FeatureStats::compute(&train.features);
    stats.apply(train)?;
    for ds in others.iter_mut() {
        stats.apply(ds)?;
    }
    Ok(stats)
}

/// Random split holding back `floor(n * val_fraction)` examples for
/// validation. Returns `(train, validation)`.
pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let n = ds.len();
    let n_val = (n as f64 * val_fraction).floor() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut Rng::for_stream(seed, Stream::Split));
    let (val_idx, train_idx) = perm.split_at(n_val);
    Ok((ds.select(train_idx), ds.select(val_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_label_last() {
        let f = write_tmp("1,2,0\n3,4,1\n");
        let ds = load_csv(f.path(), &LabelColumn::Last, false).unwrap();
        assert_eq!(ds.features, Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        assert_eq!(ds.labels, vec![0, 1]);
    }

    #[test]
    fn csv_header_and_named_label() {
        let f = write_tmp("label,a,b\n2,1.5,-1\n0,0,3e2\n");
        let ds = load_csv(f.path(), &LabelColumn::Name("label".into()), true).unwrap();
        assert_eq!(ds.labels, vec![2, 0]);
        assert_eq!(ds.features, Matrix::from_rows(&[&[1.5, -1.0], &[0.0, 300.0]]));
        let ds = load_csv(f.path(), &LabelColumn::Index(0), true).unwrap();
        assert_eq!(ds.labels, vec![2, 0]);
    }

    #[test]
    fn csv_ragged_row_reports_line() {
        let f = write_tmp("1,2,0\n3,4\n");
        match load_csv(f.path(), &LabelColumn::Last, false) {
            Err(Error::RaggedRow { line, expected, found, .. }) => {
                assert_eq!((line, expected, found), (2, 3, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_non_numeric_and_missing_label() {
        let f = write_tmp("1,x,0\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::Last, false),
            Err(Error::NonNumeric { line: 1, column: 2, .. })
        ));
        let f = write_tmp("1,2,0.5\n");
        assert!(matches!(load_csv(f.path(), &LabelColumn::Last, false), Err(Error::NonNumeric { .. })));
        let f = write_tmp("a,b\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::Name("y".into()), true),
            Err(Error::MissingLabelColumn { .. })
        ));
        let f = write_tmp("1,0\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::Index(5), false),
            Err(Error::MissingLabelColumn { .. })
        ));
    }

    #[test]
    fn idx_hand_built_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        fs::write(&img, bytes).unwrap();
        fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.features.as_slice(), &[0.0, 255.0, 128.0, 64.0]);
        assert_eq!(ds.labels, vec![7]);
    }

    #[test]
    fn idx_count_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&img, &lab, 1, 2, &[1, 2, 3, 4], &[0, 1]).unwrap();
        assert_eq!(load_idx(&img, &lab).unwrap().len(), 2);

        let lab3 = dir.path().join("lab3");
        fs::write(&lab3, [0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2]).unwrap();
        assert!(matches!(load_idx(&img, &lab3), Err(Error::CountMismatch { images: 2, labels: 3 })));

        let err = load_idx(&lab, &lab).unwrap_err();
        assert!(matches!(err, Error::BadMagic { expected: IDX_IMAGES_MAGIC, .. }));
        assert!(err.to_string().contains("0x00000803"), "{err}");
    }

    #[test]
    fn normalize_symmetric_pair_and_constant_column() {
        let mut ds = Dataset::new(Matrix::from_rows(&[&[1.0, 5.0], &[3.0, 5.0]]), vec![0, 1]).unwrap();
        let stats = normalize(&mut ds, &mut []).unwrap();
        assert_eq!(ds.features, Matrix::from_rows(&[&[-1.0, 0.0], &[1.0, 0.0]]));
        assert_eq!(stats.std[1], STD_FLOOR);
    }

    #[test]
    fn normalize_uses_train_statistics_for_other_splits() {
        let mut train = Dataset::new(Matrix::from_rows(&[&[0.0], &[2.0]]), vec![0, 0]).unwrap();
        let mut test = Dataset::new(Matrix::from_rows(&[&[10.0], &[12.0]]), vec![0, 0]).unwrap();
        normalize(&mut train, &mut [&mut test]).unwrap();
        // train mean 1, std 1: the test split is shifted, not re-centered
        assert_eq!(test.features.as_slice(), &[9.0, 11.0]);
        assert!(normalize(&mut Dataset::new(Matrix::zeros(0, 1), vec![]).unwrap(), &mut []).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = Dataset::new(Matrix::from_vec(10, 1, (0..10).map(f64::from).collect()).unwrap(), vec![0; 10]).unwrap();
        let (train, val) = split(&ds, 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (9, 1));
        assert_eq!(split(&ds, 0.1, 3).unwrap(), (train, val));
        assert!(split(&ds, 0.0, 3).is_err());
    }

    #[test]
    fn split_seeds_give_distinct_permutations() {
        let ds = Dataset::new(Matrix::from_vec(100, 1, (0..100).map(f64::from).collect()).unwrap(), vec![0; 100]).unwrap();
        let (a, _) = split(&ds, 0.1, 1).unwrap();
        let (b, _) = split(&ds, 0.1, 2).unwrap();
        assert_ne!(a.features, b.features);
    }
}
