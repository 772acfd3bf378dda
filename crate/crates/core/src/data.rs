//! Dataset synthesis and ingestion: the OneHot generator, IDX image/label
//! files, CSV matrices, seeded splits, and manifest checks.

use crate::error::{Error, Result};
use crate::model::Likelihood;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

/// A dataset split into train/valid/test matrices with optional labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    pub likelihood: Likelihood,
    pub train: Tensor,
    pub valid: Tensor,
    pub test: Tensor,
    pub train_labels: Option<Vec<usize>>,
    pub valid_labels: Option<Vec<usize>>,
    pub test_labels: Option<Vec<usize>>,
}

/// Expected dimensions and split sizes for the known datasets.
#[derive(Debug, Clone, Copy)]
pub struct Manifest {
    pub name: &'static str,
    pub dim: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

pub const MANIFESTS: &[Manifest] = &[
    Manifest { name: "onehot", dim: 4, train: 1_000, valid: 100, test: 1_000 },
    Manifest { name: "mnist", dim: 784, train: 50_000, valid: 10_000, test: 10_000 },
    Manifest { name: "omniglot", dim: 784, train: 23_000, valid: 1_345, test: 8_070 },
    Manifest { name: "freyfaces", dim: 560, train: 1_565, valid: 200, test: 200 },
    Manifest { name: "histopathology", dim: 784, train: 6_800, valid: 2_000, test: 2_000 },
];

pub fn manifest_for(name: &str) -> Option<&'static Manifest> {
    MANIFESTS.iter().find(|m| m.name == name)
}

fn onehot_rows(n: usize, rng: &mut impl Rng) -> (Tensor, Vec<usize>) {
    let mut data = vec![0.0; n * 4];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let hot = rng.gen_range(0..4);
        data[i * 4 + hot] = 1.0;
        labels.push(hot);
    }
    (Tensor::new(vec![n, 4], data).expect("onehot shape"), labels)
}

/// Synthesize the four-symbol one-hot dataset (train 1,000 / valid 100 /
/// test 1,000, uniform labels). With `valid_from_train` (the default used
/// by the CLI), validation rows are a random subset of the training rows,
/// so train and validation share the same empirical distribution exactly;
/// otherwise validation is drawn fresh.
pub fn generate_onehot(rng: &mut impl Rng, valid_from_train: bool) -> Dataset {
    let (train, train_labels) = onehot_rows(1_000, rng);
    let (valid, valid_labels) = if valid_from_train {
        let mut idx: Vec<usize> = (0..1_000).collect();
        idx.shuffle(rng);
        idx.truncate(100);
        let mut data = Vec::with_capacity(100 * 4);
        let mut labels = Vec::with_capacity(100);
        for &i in &idx {
            data.extend_from_slice(train.row(i));
            labels.push(train_labels[i]);
        }
        (Tensor::new(vec![100, 4], data).expect("valid shape"), labels)
    } else {
        onehot_rows(100, rng)
    };
    let (test, test_labels) = onehot_rows(1_000, rng);
    Dataset {
        name: "onehot".into(),
        dim: 4,
        likelihood: Likelihood::Bernoulli,
        train,
        valid,
        test,
        train_labels: Some(train_labels),
        valid_labels: Some(valid_labels),
        test_labels: Some(test_labels),
    }
}

// ---------------------------------------------------------------------------
// IDX binary format: big-endian magic (0x801 labels, 0x803 images) and dims.
// ---------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(buf: &[u8], offset: usize, what: &str) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(offset..offset + 4)
        .ok_or(Error::Idx {
            offset,
            detail: format!("truncated while reading {what}"),
        })?
        .try_into()
        .expect("slice length 4");
    Ok(u32::from_be_bytes(bytes))
}

/// Load an IDX image file as an `[n, rows*cols]` matrix scaled to [0, 1].
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let magic = read_u32_be(&buf, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx {
            offset: 0,
            detail: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&buf, 4, "item count")? as usize;
    let rows = read_u32_be(&buf, 8, "row count")? as usize;
    let cols = read_u32_be(&buf, 12, "column count")? as usize;
    let dim = rows * cols;
    let expected = 16 + n * dim;
    if buf.len() < expected {
        return Err(Error::Idx {
            offset: buf.len(),
            detail: format!("truncated pixel data: have {} bytes, need {expected}", buf.len()),
        });
    }
    let data: Vec<f64> = buf[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, dim], data)
}

/// Load an IDX label file as a vector of class indices.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let magic = read_u32_be(&buf, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx {
            offset: 0,
            detail: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&buf, 4, "item count")? as usize;
    if buf.len() < 8 + n {
        return Err(Error::Idx {
            offset: buf.len(),
            detail: format!("truncated label data: have {} bytes, need {}", buf.len(), 8 + n),
        });
    }
    Ok(buf[8..8 + n].iter().map(|&b| b as usize).collect())
}

/// Write a [0,1]-scaled matrix as an IDX image file (`rows x cols` must
/// multiply to the matrix column count). Values are scaled back by 255.
pub fn write_idx_images(path: &Path, m: &Tensor, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != m.cols() {
        return Err(Error::Idx {
            offset: 0,
            detail: format!("{rows}x{cols} grid does not match {} columns", m.cols()),
        });
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    f.write_all(&(m.rows() as u32).to_be_bytes())?;
    f.write_all(&(rows as u32).to_be_bytes())?;
    f.write_all(&(cols as u32).to_be_bytes())?;
    let bytes: Vec<u8> = m
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    let bytes: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Load a CSV matrix of reals in [0, 1]; with `labeled`, the last column
/// is parsed as an integer class label.
pub fn load_csv_matrix(path: &Path, labeled: bool) -> Result<(Tensor, Option<Vec<usize>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut cols = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let feat_n = if labeled { fields.len() - 1 } else { fields.len() };
        match cols {
            None => cols = Some(feat_n),
            Some(c) if c != feat_n => {
                return Err(Error::Data(format!(
                    "{}: line {} has {} feature columns, expected {}",
                    path.display(),
                    lineno + 1,
                    feat_n,
                    c
                )))
            }
            _ => {}
        }
        for field in &fields[..feat_n] {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}: not a number: {field:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            data.push(v);
        }
        if labeled {
            let l: usize = fields[feat_n].trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}: not an integer label: {:?}",
                    path.display(),
                    lineno + 1,
                    fields[feat_n]
                ))
            })?;
            labels.push(l);
        }
    }
    let cols = cols.ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let n = data.len() / cols;
    Ok((
        Tensor::new(vec![n, cols], data)?,
        if labeled { Some(labels) } else { None },
    ))
}

/// Partition `m`'s rows into disjoint splits of the given sizes after a
/// seed-deterministic shuffle. Labels, when given, follow their rows.
pub fn split_rows(
    m: &Tensor,
    labels: Option<&[usize]>,
    sizes: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<(Tensor, Option<Vec<usize>>)>> {
    let total: usize = sizes.iter().sum();
    if total > m.rows() {
        return Err(Error::Data(format!(
            "split sizes sum to {total} but the matrix has {} rows",
            m.rows()
        )));
    }
    if let Some(l) = labels {
        if l.len() != m.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                l.len(),
                m.rows()
            )));
        }
    }
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    idx.shuffle(rng);
    let mut out = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for &size in sizes {
        let part = &idx[cursor..cursor + size];
        cursor += size;
        let mut data = Vec::with_capacity(size * m.cols());
        let mut part_labels = labels.map(|_| Vec::with_capacity(size));
        for &i in part {
            data.extend_from_slice(m.row(i));
            if let (Some(pl), Some(l)) = (part_labels.as_mut(), labels) {
                pl.push(l[i]);
            }
        }
        out.push((Tensor::new(vec![size, m.cols()], data)?, part_labels));
    }
    Ok(out)
}

/// Assemble the MNIST dataset from the four standard IDX files under
/// `root`: 50,000/10,000 train/valid from the 60k train file (seeded
/// shuffle) plus the 10,000-image test file.
pub fn load_mnist(root: &Path, rng: &mut impl Rng) -> Result<Dataset> {
    load_mnist_subsample(root, rng, 50_000, 10_000)
}

/// Like `load_mnist` but with reduced train/valid sizes for constrained
/// runs. The test split is always loaded whole.
pub fn load_mnist_subsample(
    root: &Path,
    rng: &mut impl Rng,
    train_size: usize,
    valid_size: usize,
) -> Result<Dataset> {
    let join = |f: &str| {
        let p = root.join(f);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Data(format!("missing dataset file: {}", p.display())))
        }
    };
    let train_x = load_idx_images(&join("train-images-idx3-ubyte")?)?;
    let train_y = load_idx_labels(&join("train-labels-idx1-ubyte")?)?;
    let test = load_idx_images(&join("t10k-images-idx3-ubyte")?)?;
    let test_labels = load_idx_labels(&join("t10k-labels-idx1-ubyte")?)?;
    let mut parts = split_rows(&train_x, Some(&train_y), &[train_size, valid_size], rng)?;
    let (valid, valid_labels) = parts.pop().expect("two parts");
    let (train, train_labels) = parts.pop().expect("two parts");
    Ok(Dataset {
        name: "mnist".into(),
        dim: 784,
        likelihood: Likelihood::Bernoulli,
        train,
        valid,
        test,
        train_labels,
        valid_labels,
        test_labels: Some(test_labels),
    })
}

/// Compare a dataset against its built-in manifest; returns all mismatch
/// descriptions (empty = ok).
pub fn manifest_check(ds: &Dataset) -> Vec<String> {
    let Some(m) = manifest_for(&ds.name) else {
        return vec![format!("no manifest for dataset {:?}", ds.name)];
    };
    let mut report = Vec::new();
    let mut check = |field: &str, got: usize, want: usize| {
        if got != want {
            report.push(format!("{field}: expected {want}, found {got}"));
        }
    };
    check("dim", ds.dim, m.dim);
    check("train size", ds.train.rows(), m.train);
    check("valid size", ds.valid.rows(), m.valid);
    check("test size", ds.test.rows(), m.test);
    for (split, t) in [("train", &ds.train), ("valid", &ds.valid), ("test", &ds.test)] {
        if t.cols() != ds.dim {
            report.push(format!("{split} width {} != dim {}", t.cols(), ds.dim));
        }
        if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            report.push(format!("{split} has values outside [0, 1]"));
        }
    }
    report
}
