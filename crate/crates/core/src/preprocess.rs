//! Image normalisation: rescaling, centering, grayscale, global contrast
//! normalisation, ZCA whitening and a spherical K-means patch dictionary.
//!
//! Every statistic is fitted on training images only and then applied
//! unchanged to validation and test images.

use std::fmt;
use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io_util::{expect_magic, read_f64, read_u64, sha256_hex, write_atomic, write_f64, write_u32, write_u64};
use crate::linalg::{matmul_blocked, mean_and_covariance, sorted_eigen, to_tensor};
use crate::tensor::{read_u32, Tensor};

pub const GCN_EPSILON: f64 = 1e-8;
pub const DEFAULT_FUDGE: f64 = 0.01;
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Divides by 255 and subtracts a per-dimension mean fitted on `x / 255`.
pub fn rescale_center(x: &Tensor, mean: &Tensor) -> Result<Tensor> {
    let d = x.row_len();
    if mean.len() != d {
        return Err(Error::dim("rescale_center", x.shape(), mean.shape()));
    }
    let mut out = x.scale(1.0 / 255.0);
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(mean.data()) {
            *v -= m;
        }
    }
    Ok(out)
}

/// Per-dimension mean over rows.
pub fn column_mean(x: &Tensor) -> Result<Tensor> {
    if x.rows() == 0 {
        return Err(Error::Data("mean of an empty set".into()));
    }
    let mut mean = vec![0.0; x.row_len()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    let n = x.rows() as f64;
    Ok(Tensor::vector(mean.into_iter().map(|m| m / n).collect()))
}

/// `[N, 3, H, W] -> [N, 1, H, W]` by luma weighting.
pub fn grayscale(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::invalid(format!("grayscale needs [N, 3, H, W], got {s:?}")));
    }
    let (n, plane) = (s[0], s[2] * s[3]);
    let src = x.data();
    let mut out = Vec::with_capacity(n * plane);
    for i in 0..n {
        let base = i * 3 * plane;
        for p in 0..plane {
            out.push(
                LUMA_WEIGHTS[0] * src[base + p]
                    + LUMA_WEIGHTS[1] * src[base + plane + p]
                    + LUMA_WEIGHTS[2] * src[base + 2 * plane + p],
            );
        }
    }
    Tensor::new(vec![n, 1, s[2], s[3]], out)
}

/// Per image: subtract its mean, divide by `max(eps, ||centered|| / sqrt(D))`.
pub fn gcn(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let d = x.row_len();
    if d == 0 {
        return out;
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let rms = (row.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt();
        let scale = rms.max(GCN_EPSILON);
        row.iter_mut().for_each(|v| *v /= scale);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocStats {
    pub mean: Tensor,
    pub w_zca: Tensor,
    pub fudge: f64,
    pub count: usize,
}

/// `W = E diag(1 / sqrt(lambda + fudge)) E^T` of the population covariance.
pub fn fit_zca(x: &Tensor, fudge: f64) -> Result<PreprocStats> {
    if !(fudge >= 0.0 && fudge.is_finite()) {
        return Err(Error::Config(format!("fudge {fudge} must be finite and non-negative")));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::Data(format!("ZCA needs at least 2 samples, got {n}")));
    }
    let flat = x.reshape(&[n, x.row_len()])?;
    let (mean, cov) = mean_and_covariance(&flat)?;
    let (values, vectors) = sorted_eigen(cov);
    let d = values.len();
    let mut inv_sqrt = Vec::with_capacity(d);
    for &l in &values {
        let denom = (l.max(0.0) + fudge).sqrt();
        if denom == 0.0 {
            return Err(Error::Numeric("singular covariance with zero fudge".into()));
        }
        inv_sqrt.push(1.0 / denom);
    }
    let scaled = DMatrix::from_fn(d, d, |r, c| vectors[(r, c)] * inv_sqrt[c]);
    let w = &scaled * vectors.transpose();
    let w = (&w + w.transpose()) * 0.5;
    let w_zca = to_tensor(&w);
    w_zca.check_finite()?;
    Ok(PreprocStats { mean: Tensor::vector(mean), w_zca, fudge, count: n })
}

/// `(x - mean) W_zca`, row-wise.
pub fn apply_zca(stats: &PreprocStats, x: &Tensor) -> Result<Tensor> {
    let d = stats.mean.len();
    if x.row_len() != d {
        return Err(Error::dim("apply_zca", x.shape(), stats.w_zca.shape()));
    }
    let mut centered = x.reshape(&[x.rows(), d])?;
    for r in 0..centered.rows() {
        for (v, m) in centered.row_mut(r).iter_mut().zip(stats.mean.data()) {
            *v -= m;
        }
    }
    matmul_blocked(&centered, &stats.w_zca)
}

impl PreprocStats {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"ZCAS")?;
        write_f64(w, self.fudge)?;
        write_u64(w, self.count as u64)?;
        self.mean.write_to(w)?;
        self.w_zca.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, b"ZCAS")?;
        let fudge = read_f64(r)?;
        let count = read_u64(r)? as usize;
        let mean = Tensor::read_from(r)?;
        let w_zca = Tensor::read_from(r)?;
        if w_zca.shape() != [mean.len(), mean.len()] {
            return Err(Error::Format("ZCA matrix does not match mean length".into()));
        }
        Ok(PreprocStats { mean, w_zca, fudge, count })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Raw,
    RescaleCenter,
    Gcn,
    GcnZca,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [Pipeline::Raw, Pipeline::RescaleCenter, Pipeline::Gcn, Pipeline::GcnZca];

    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(c: u32) -> Result<Self> {
        Pipeline::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown pipeline code {c}")))
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::Raw => "raw",
            Pipeline::RescaleCenter => "rescale-center",
            Pipeline::Gcn => "gcn",
            Pipeline::GcnZca => "gcn-zca",
        })
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline {s:?} (raw, rescale-center, gcn, gcn-zca)")))
    }
}

/// Where the optional `[0, 1]` rescaling sits in a GCN pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescaleOrder {
    None,
    /// Divide raw pixels by 255 before GCN.
    First,
    /// Min-max map the final output to `[0, 1]` using training extremes.
    Last,
}

impl RescaleOrder {
    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(c: u32) -> Result<Self> {
        [RescaleOrder::None, RescaleOrder::First, RescaleOrder::Last]
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown rescale code {c}")))
    }
}

impl fmt::Display for RescaleOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RescaleOrder::None => "none",
            RescaleOrder::First => "first",
            RescaleOrder::Last => "last",
        })
    }
}

impl FromStr for RescaleOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RescaleOrder::None),
            "first" => Ok(RescaleOrder::First),
            "last" => Ok(RescaleOrder::Last),
            _ => Err(Error::Config(format!("unknown rescale order {s:?} (none, first, last)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub pipeline: Pipeline,
    pub grayscale: bool,
    pub rescale: RescaleOrder,
    pub fudge: f64,
}

impl PipelineConfig {
    pub fn new(pipeline: Pipeline) -> Self {
        PipelineConfig { pipeline, grayscale: false, rescale: RescaleOrder::None, fudge: DEFAULT_FUDGE }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rescale != RescaleOrder::None && !matches!(self.pipeline, Pipeline::Gcn | Pipeline::GcnZca) {
            return Err(Error::Config(format!("rescale order applies only to gcn pipelines, not {}", self.pipeline)));
        }
        if !(self.fudge >= 0.0 && self.fudge.is_finite()) {
            return Err(Error::Config(format!("fudge {} must be finite and non-negative", self.fudge)));
        }
        Ok(())
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pipeline)?;
        if self.grayscale {
            f.write_str(" grayscale")?;
        }
        if self.rescale != RescaleOrder::None {
            write!(f, " rescale={}", self.rescale)?;
        }
        if self.pipeline == Pipeline::GcnZca {
            write!(f, " fudge={}", self.fudge)?;
        }
        Ok(())
    }
}

/// A pipeline together with everything fitted on the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub center: Option<Tensor>,
    pub zca: Option<PreprocStats>,
    pub range: Option<(f64, f64)>,
    /// Per-sample shape after the pipeline, e.g. `[1, 32, 32]`.
    pub output_shape: Vec<usize>,
}

impl FittedPipeline {
    pub fn fit(config: PipelineConfig, train: &Tensor) -> Result<Self> {
        config.validate()?;
        let mut fitted = FittedPipeline { config, center: None, zca: None, range: None, output_shape: Vec::new() };
        let x = fitted.front(train)?;
        let x = match config.pipeline {
            Pipeline::Raw => x,
            Pipeline::RescaleCenter => {
                let mean = column_mean(&x)?;
                let out = centered(&x, &mean)?;
                fitted.center = Some(mean);
                out
            }
            Pipeline::Gcn => gcn(&x),
            Pipeline::GcnZca => {
                let g = gcn(&x);
                let stats = fit_zca(&g, config.fudge)?;
                let out = apply_zca(&stats, &g)?.into_shape(x.shape())?;
                fitted.zca = Some(stats);
                out
            }
        };
        if config.rescale == RescaleOrder::Last {
            let lo = x.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            fitted.range = Some((lo, hi));
        }
        fitted.output_shape = x.shape()[1..].to_vec();
        Ok(fitted)
    }

    /// Grayscale and the `/255` step of rescaling pipelines.
    fn front(&self, x: &Tensor) -> Result<Tensor> {
        let x = if self.config.grayscale { grayscale(x)? } else { x.clone() };
        let divide = self.config.pipeline == Pipeline::RescaleCenter || self.config.rescale == RescaleOrder::First;
        Ok(if divide { x.scale(1.0 / 255.0) } else { x })
    }

    pub fn apply(&self, images: &Tensor) -> Result<Tensor> {
        let x = self.front(images)?;
        let mut x = match self.config.pipeline {
            Pipeline::Raw => x,
            Pipeline::Gcn => gcn(&x),
            Pipeline::RescaleCenter => {
                let mean = self.center.as_ref().ok_or_else(|| Error::Format("missing centering mean".into()))?;
                centered(&x, mean)?
            }
            Pipeline::GcnZca => {
                let stats = self.zca.as_ref().ok_or_else(|| Error::Format("missing ZCA statistics".into()))?;
                apply_zca(stats, &gcn(&x))?.into_shape(x.shape())?
            }
        };
        if let Some((lo, hi)) = self.range {
            let span = hi - lo;
            x.data_mut().iter_mut().for_each(|v| *v = if span > 0.0 { (*v - lo) / span } else { 0.0 });
        }
        if x.shape()[1..] != self.output_shape[..] {
            return Err(Error::dim("pipeline output", &x.shape()[1..], &self.output_shape));
        }
        x.check_finite()?;
        Ok(x)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(b"PREP")?;
        write_u32(&mut w, 1)?;
        write_u32(&mut w, self.config.pipeline.code())?;
        write_u32(&mut w, u32::from(self.config.grayscale))?;
        write_u32(&mut w, self.config.rescale.code())?;
        write_f64(&mut w, self.config.fudge)?;
        write_u32(&mut w, self.output_shape.len() as u32)?;
        for &d in &self.output_shape {
            write_u32(&mut w, d as u32)?;
        }
        match &self.center {
            Some(m) => {
                write_u32(&mut w, 1)?;
                m.write_to(&mut w)?;
            }
            None => write_u32(&mut w, 0)?,
        }
        match &self.zca {
            Some(s) => {
                write_u32(&mut w, 1)?;
                s.write_to(&mut w)?;
            }
            None => write_u32(&mut w, 0)?,
        }
        match self.range {
            Some((lo, hi)) => {
                write_u32(&mut w, 1)?;
                write_f64(&mut w, lo)?;
                write_f64(&mut w, hi)?;
            }
            None => write_u32(&mut w, 0)?,
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        expect_magic(&mut r, b"PREP")?;
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported preprocessing version {version}")));
        }
        let pipeline = Pipeline::from_code(read_u32(&mut r)?)?;
        let grayscale = read_u32(&mut r)? != 0;
        let rescale = RescaleOrder::from_code(read_u32(&mut r)?)?;
        let fudge = read_f64(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible output rank {rank}")));
        }
        let output_shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<_>>()?;
        let center = if read_u32(&mut r)? != 0 { Some(Tensor::read_from(&mut r)?) } else { None };
        let zca = if read_u32(&mut r)? != 0 { Some(PreprocStats::read_from(&mut r)?) } else { None };
        let range = if read_u32(&mut r)? != 0 { Some((read_f64(&mut r)?, read_f64(&mut r)?)) } else { None };
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Format("trailing bytes after preprocessing statistics".into()));
        }
        Ok(FittedPipeline { config: PipelineConfig { pipeline, grayscale, rescale, fudge }, center, zca, range, output_shape })
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FittedPipeline::from_bytes(&std::fs::read(path)?)
    }
}

fn centered(x: &Tensor, mean: &Tensor) -> Result<Tensor> {
    if mean.len() != x.row_len() {
        return Err(Error::dim("center", x.shape(), mean.shape()));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(mean.data()) {
            *v -= m;
        }
    }
    Ok(out)
}

pub const DEFAULT_PATCH: usize = 6;
pub const DEFAULT_CENTROIDS: usize = 400;
pub const DEFAULT_KMEANS_ITERS: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// `[P, C]`, unit-norm columns.
    pub atoms: Tensor,
    pub alpha: f64,
    pub patch_size: usize,
    pub channels: usize,
}

/// `count` patches of `size x size` at uniformly random positions.
pub fn extract_patches(images: &Tensor, size: usize, count: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 || s[0] == 0 || size == 0 || size > s[2] || size > s[3] {
        return Err(Error::invalid(format!("cannot cut {size}x{size} patches from {s:?}")));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    let p = c * size * size;
    let mut out = Vec::with_capacity(count * p);
    for _ in 0..count {
        let img = rng.gen_range(0..s[0]);
        let top = rng.gen_range(0..=h - size);
        let left = rng.gen_range(0..=w - size);
        let base = images.row(img);
        for ch in 0..c {
            for i in 0..size {
                let start = ch * h * w + (top + i) * w + left;
                out.extend_from_slice(&base[start..start + size]);
            }
        }
    }
    Tensor::new(vec![count, p], out)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Index of the atom with the largest dot product for each row; ties go
/// to the lowest index.
pub fn assign(atoms: &Tensor, patches: &Tensor) -> Result<Vec<usize>> {
    if atoms.rank() != 2 || atoms.shape()[0] != patches.row_len() {
        return Err(Error::dim("assign", patches.shape(), atoms.shape()));
    }
    let dots = patches.matmul(atoms)?;
    Ok(dots.argmax_rows())
}

/// Spherical K-means on the rows of `patches`.
pub fn learn_dictionary(patches: &Tensor, centroids: usize, iters: usize, alpha: f64, seed: u64) -> Result<Tensor> {
    let (m, p) = (patches.rows(), patches.row_len());
    if centroids == 0 || m < centroids {
        return Err(Error::Data(format!("need at least {centroids} patches, got {m}")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha {alpha} must be non-negative")));
    }
    let mut data = patches.reshape(&[m, p])?;
    for r in 0..m {
        normalize(data.row_mut(r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = sample(&mut rng, m, centroids).into_vec();
    // atoms stored as rows while iterating, transposed at the end
    let mut rows = data.select_rows(&init)?;
    for _ in 0..iters {
        let atoms = rows.transpose2d()?;
        let dots = data.matmul(&atoms)?;
        let owner = dots.argmax_rows();
        let mut sums = Tensor::zeros(&[centroids, p]);
        let mut members = vec![0usize; centroids];
        for (r, &c) in owner.iter().enumerate() {
            members[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(data.row(r)) {
                *s += v;
            }
        }
        // farthest patches first, each used at most once for re-seeding
        let mut far: Vec<usize> = (0..m).collect();
        far.sort_by(|&a, &b| dots.row(a)[owner[a]].total_cmp(&dots.row(b)[owner[b]]).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for (c, &count) in members.iter().enumerate() {
            let norm = normalize(sums.row_mut(c));
            if count == 0 || norm == 0.0 {
                let r = far.next().expect("m >= centroids");
                sums.row_mut(c).copy_from_slice(data.row(r));
            }
        }
        rows = sums;
    }
    rows.transpose2d()
}

impl Dictionary {
    pub fn learn(images: &Tensor, patch_size: usize, centroids: usize, iters: usize, alpha: f64, patches_per_centroid: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = centroids.saturating_mul(patches_per_centroid.max(1));
        let patches = extract_patches(images, patch_size, count, &mut rng)?;
        let atoms = learn_dictionary(&patches, centroids, iters, alpha, rng.gen())?;
        Ok(Dictionary { atoms, alpha, patch_size, channels: images.shape()[1] })
    }

    pub fn centroids(&self) -> usize {
        self.atoms.shape()[1]
    }

    /// `max(0, |D^T x| - alpha)` for each row of `x`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.atoms.shape()[0];
        let flat = if x.rank() == 1 { x.reshape(&[1, x.len()])? } else { x.reshape(&[x.rows(), x.row_len()])? };
        if flat.row_len() != p {
            return Err(Error::dim("encode", x.shape(), self.atoms.shape()));
        }
        let z = flat.matmul(&self.atoms)?.map(|v| (v.abs() - self.alpha).max(0.0));
        if x.rank() == 1 {
            z.into_shape(&[self.centroids()])
        } else {
            Ok(z)
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(b"DICT")?;
        write_f64(&mut w, self.alpha)?;
        write_u32(&mut w, self.patch_size as u32)?;
        write_u32(&mut w, self.channels as u32)?;
        self.atoms.write_to(&mut w)?;
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        expect_magic(&mut r, b"DICT")?;
        let alpha = read_f64(&mut r)?;
        let patch_size = read_u32(&mut r)? as usize;
        let channels = read_u32(&mut r)? as usize;
        let atoms = Tensor::read_from(&mut r)?;
        if atoms.rank() != 2 || atoms.shape()[0] != channels * patch_size * patch_size {
            return Err(Error::Format("dictionary atoms do not match patch geometry".into()));
        }
        Ok(Dictionary { atoms, alpha, patch_size, channels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Dictionary::from_bytes(&std::fs::read(path)?)
    }
}
