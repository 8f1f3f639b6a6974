//! CIFAR-10 binary batches, seeded splits, mini-batches, prediction CSVs
//! and a two-component PCA projection.
//!
//! A CIFAR-10 record is one label byte followed by 3072 pixel bytes: the
//! red plane, then green, then blue, each 32x32 row-major.

use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io_util::{expect_magic, read_bytes, write_atomic, write_bytes, write_u32};
use crate::linalg::{mean_and_covariance, sorted_eigen};
use crate::tensor::{read_u32, Tensor};

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const IMAGE_BYTES: usize = 3 * 32 * 32;
const RECORD_BYTES: usize = IMAGE_BYTES + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `[N, C, H, W]` (or `[N, D]` once flattened by preprocessing).
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!("label {bad} out of range")));
        }
        Ok(LabeledDataset { images, labels, class_names })
    }

    pub fn cifar_class_names() -> Vec<String> {
        CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            images: self.images.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        })
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Result<LabeledDataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn with_images(&self, images: Tensor) -> Result<LabeledDataset> {
        LabeledDataset::new(images, self.labels.clone(), self.class_names.clone())
    }
}

/// Parses the concatenation of CIFAR-10 binary batch files.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        parse_records(&bytes, &mut pixels, &mut labels).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })?;
    }
    if labels.is_empty() {
        return Err(Error::Data("no CIFAR-10 records found".into()));
    }
    let n = labels.len();
    LabeledDataset::new(
        Tensor::new(vec![n, 3, 32, 32], pixels)?,
        labels,
        LabeledDataset::cifar_class_names(),
    )
}

/// Parses an in-memory batch file.
pub fn parse_records(bytes: &[u8], pixels: &mut Vec<f64>, labels: &mut Vec<usize>) -> Result<()> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Data(format!(
            "truncated file: {} bytes is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Data(format!("record {i}: label byte {label} >= 10")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| f64::from(b)));
    }
    Ok(())
}

/// Writes images back in the binary record format. Pixel values must be
/// integers in `[0, 255]`.
pub fn write_cifar10(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    if ds.images.row_len() != IMAGE_BYTES {
        return Err(Error::dim("write_cifar10", ds.images.shape(), &[ds.len(), 3, 32, 32]));
    }
    let mut out = Vec::with_capacity(ds.len() * RECORD_BYTES);
    for (i, &label) in ds.labels.iter().enumerate() {
        out.push(u8::try_from(label).map_err(|_| Error::Data(format!("label {label} too large")))?);
        for &v in ds.images.row(i) {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::Data(format!("pixel value {v} is not a byte")));
            }
            out.push(v as u8);
        }
    }
    write_atomic(path.as_ref(), &out)
}

/// Seeded shuffle, then the first `floor(N * fraction)` samples form the
/// training half. Both halves keep the original relative order.
pub fn split(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = ds.len();
    let cut = (n as f64 * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..cut].to_vec();
    let mut valid = order[cut..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok((ds.select(&train)?, ds.select(&valid)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// One epoch of mini-batches over a fresh permutation. The final short
/// batch is kept.
pub struct BatchIterator<'a> {
    ds: &'a LabeledDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(ds: &'a LabeledDataset, batch_size: usize, rng: &mut impl Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(rng);
        Ok(BatchIterator { ds, order, batch_size, pos: 0 })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(self.ds.images.select_rows(idx).map(|inputs| Batch {
            inputs,
            labels: idx.iter().map(|&i| self.ds.labels[i]).collect(),
        }))
    }
}

pub fn format_predictions(ids: &[u64], labels: &[usize], class_names: &[String]) -> Result<String> {
    if ids.len() != labels.len() {
        return Err(Error::invalid(format!("{} ids but {} labels", ids.len(), labels.len())));
    }
    let mut out = String::from("id,label\n");
    for (id, &l) in ids.iter().zip(labels) {
        let name = class_names
            .get(l)
            .ok_or_else(|| Error::invalid(format!("label {l} has no class name")))?;
        writeln!(out, "{id},{name}").expect("writing to a String");
    }
    Ok(out)
}

pub fn write_predictions(ids: &[u64], labels: &[usize], class_names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let text = format_predictions(ids, labels, class_names)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Projection onto the two leading principal components.
///
/// At most `sample_cap` rows (seeded subsample) enter the covariance; all
/// rows are projected. Each eigenvector's largest-magnitude coordinate is
/// made positive.
pub fn pca2(ds: &LabeledDataset, sample_cap: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::Data(format!("pca2 needs at least 2 samples, got {n}")));
    }
    let d = ds.images.row_len();
    let flat = ds.images.reshape(&[n, d])?;
    let fit = if n > sample_cap.max(2) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(sample_cap.max(2));
        idx.sort_unstable();
        flat.select_rows(&idx)?
    } else {
        flat.clone()
    };
    let (mean, cov) = mean_and_covariance(&fit)?;
    let (_, vectors) = sorted_eigen(cov);
    let comps = vectors.ncols().min(2);
    let mut axes = Vec::with_capacity(2);
    for c in 0..comps {
        let mut v: Vec<f64> = vectors.column(c).iter().copied().collect();
        let pivot = crate::tensor::argmax_by(d, |i| v[i].abs());
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    let mut out = Vec::with_capacity(n * 2);
    for r in 0..n {
        let row = flat.row(r);
        for axis in &axes {
            let mut acc = 0.0;
            for ((x, m), a) in row.iter().zip(&mean).zip(axis) {
                acc += (x - m) * a;
            }
            out.push(acc);
        }
    }
    Ok((Tensor::new(vec![n, 2], out)?, ds.labels.clone()))
}

pub fn write_scatter_csv(points: &Tensor, labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("x,y,label\n");
    for (r, l) in labels.iter().enumerate() {
        let p = points.row(r);
        writeln!(out, "{},{},{l}", p[0], p[1]).expect("writing to a String");
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

impl LabeledDataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(b"LDS1");
        self.images.write_to(&mut w)?;
        write_u32(&mut w, self.labels.len() as u32)?;
        for &l in &self.labels {
            write_u32(&mut w, l as u32)?;
        }
        write_u32(&mut w, self.class_names.len() as u32)?;
        for name in &self.class_names {
            write_bytes(&mut w, name.as_bytes())?;
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        expect_magic(&mut r, b"LDS1")?;
        let images = Tensor::read_from(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let labels = (0..n).map(|_| read_u32(&mut r).map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
        let c = read_u32(&mut r)? as usize;
        let class_names = (0..c)
            .map(|_| {
                let b = read_bytes(&mut r)?;
                String::from_utf8(b).map_err(|_| Error::Format("non-UTF-8 class name".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        if r.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        LabeledDataset::new(images, labels, class_names).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        LabeledDataset::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, IMAGE_BYTES));
        r
    }

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut bytes = record(3, 0);
        bytes[1] = 7; // first red pixel
        bytes[1 + 1024] = 9; // first green pixel
        fs::write(&p, bytes).unwrap();
        let ds = load_cifar10(&[&p]).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![3]);
        assert_eq!(ds.images.shape(), &[1, 3, 32, 32]);
        assert_eq!(ds.images.data()[0], 7.0);
        assert_eq!(ds.images.data()[1024], 9.0);
    }

    #[test]
    fn truncated_and_bad_label() {
        let mut px = Vec::new();
        let mut lb = Vec::new();
        assert!(parse_records(&vec![0u8; IMAGE_BYTES], &mut px, &mut lb).is_err());
        assert!(parse_records(&record(10, 0), &mut px, &mut lb).is_err());
    }

    #[test]
    fn multiple_files_concatenate() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for f in 0..3u8 {
            let p = dir.path().join(format!("b{f}.bin"));
            let mut bytes = Vec::new();
            for i in 0..4u8 {
                bytes.extend(record((f + i) % 10, i));
            }
            fs::write(&p, bytes).unwrap();
            paths.push(p);
        }
        assert_eq!(load_cifar10(&paths).unwrap().len(), 12);
    }

    fn synthetic(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = Tensor::from_fn(&[n, 3, 32, 32], |_| f64::from(rng.gen::<u8>()));
        let labels = (0..n).map(|_| rng.gen_range(0..10)).collect();
        LabeledDataset::new(images, labels, LabeledDataset::cifar_class_names()).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let ds = synthetic(5, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.bin");
        write_cifar10(&ds, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 5 * 3073);
        assert_eq!(load_cifar10(&[&p]).unwrap(), ds);
    }

    #[test]
    fn prepared_round_trip() {
        let ds = synthetic(4, 9);
        assert_eq!(LabeledDataset::from_bytes(&ds.to_bytes().unwrap()).unwrap(), ds);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = synthetic(10, 2);
        let (a, b) = split(&ds, 0.9, 7).unwrap();
        assert_eq!((a.len(), b.len()), (9, 1));
        let (c, d) = split(&ds, 0.9, 7).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, d);
        assert!(split(&ds, 0.0, 7).is_err());
        assert!(split(&ds, 1.0, 7).is_err());
    }

    #[test]
    fn split_counts_for_full_training_set() {
        let n = 50_000;
        let cut = (n as f64 * 0.9).floor() as usize;
        assert_eq!((cut, n - cut), (45_000, 5_000));
    }

    #[test]
    fn split_halves_partition_the_data() {
        let ds = synthetic(37, 3);
        let (a, b) = split(&ds, 0.7, 11).unwrap();
        let key = |d: &LabeledDataset, i: usize| (d.labels[i], d.images.row(i).iter().map(|&v| v as u8).collect::<Vec<_>>());
        let mut all: Vec<_> = (0..ds.len()).map(|i| key(&ds, i)).collect();
        let mut parts: Vec<_> = (0..a.len()).map(|i| key(&a, i)).chain((0..b.len()).map(|i| key(&b, i))).collect();
        all.sort();
        parts.sort();
        assert_eq!(all, parts);
    }

    #[test]
    fn batches_cover_epoch_once() {
        let ds = synthetic(23, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let it = BatchIterator::new(&ds, 5, &mut rng).unwrap();
        let mut seen = [0; 23];
        for i in it.order() {
            seen[*i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = it.map(|b| b.unwrap().labels.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 5, 3]);
    }

    #[test]
    fn prediction_csv() {
        let names = LabeledDataset::cifar_class_names();
        assert_eq!(format_predictions(&[1], &[0], &names).unwrap(), "id,label\n1,airplane\n");
        assert_eq!(format_predictions(&[], &[], &names).unwrap(), "id,label\n");
        assert!(format_predictions(&[1, 2], &[0], &names).is_err());
    }

    fn flat_dataset(rows: Vec<Vec<f64>>) -> LabeledDataset {
        let n = rows.len();
        let d = rows[0].len();
        let images = Tensor::new(vec![n, d], rows.into_iter().flatten().collect()).unwrap();
        LabeledDataset::new(images, vec![0; n], LabeledDataset::cifar_class_names()).unwrap()
    }

    fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = xs.clone().count() as f64;
        let m = xs.clone().sum::<f64>() / n;
        xs.map(|x| (x - m) * (x - m)).sum::<f64>() / n
    }

    #[test]
    fn pca_rank_one_data() {
        let dir: Vec<f64> = (0..300).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let rows = (0..20).map(|t| dir.iter().map(|d| d * (t as f64 - 9.5)).collect()).collect();
        let (p, _) = pca2(&flat_dataset(rows), 10_000, 0).unwrap();
        let v1 = variance((0..20).map(|r| p.row(r)[0]));
        let v2 = variance((0..20).map(|r| p.row(r)[1]));
        assert!(v2 <= 1e-8 * v1, "{v1} {v2}");
    }

    #[test]
    fn pca_isotropic_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = (0..10_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![a, b]
            })
            .collect();
        let (p, _) = pca2(&flat_dataset(rows), 10_000, 0).unwrap();
        let v1 = variance((0..10_000).map(|r| p.row(r)[0]));
        let v2 = variance((0..10_000).map(|r| p.row(r)[1]));
        assert!(v1 >= v2);
        assert!((v1 - v2).abs() / v1 < 0.1);
    }

    #[test]
    fn pca_duplicates_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut rows = base.clone();
        rows.push(base[4].clone());
        let (p, _) = pca2(&flat_dataset(rows.clone()), 10_000, 0).unwrap();
        assert_eq!(p.row(4), p.row(30));

        let mut perm: Vec<usize> = (0..31).collect();
        perm.shuffle(&mut rng);
        let shuffled = perm.iter().map(|&i| rows[i].clone()).collect();
        let (q, _) = pca2(&flat_dataset(shuffled), 10_000, 0).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((q.row(k)[c] - p.row(i)[c]).abs() < 1e-9);
            }
        }
        assert!(pca2(&flat_dataset(vec![vec![1.0, 2.0]]), 10, 0).is_err());
    }
}
