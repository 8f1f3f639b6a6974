//! Dense row-major `f64` tensor and the kernel set the rest of the crate
//! builds on.
//!
//! Image batches use NCHW order (batch, channel, height, width). Every
//! reduction sums in ascending index order, starting from `0.0`, so results
//! are reproducible bit-for-bit for a given build. All operations take their
//! inputs by reference and return fresh tensors.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Pointwise binary operations supported by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Max,
    /// Multiply by the operand (which must be a scalar).
    Scale,
    /// Absolute value of the left-hand side; the operand is ignored.
    Abs,
}

/// Right-hand side of an elementwise operation: a same-shape tensor or a
/// scalar broadcast to every element.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl From<f64> for Operand<'_> {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Tensor(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    /// Index of the maximum; ties resolve to the lowest index.
    Argmax,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended
    /// for literals in tests and examples.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix literal");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of the leading axis, or 0 for a rank-0 tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements per leading-axis entry.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::dim(op, other, &[0, 0])),
        }
    }

    /// Matrix product `[M,K] x [K,N] -> [M,N]`.
    ///
    /// Each output element accumulates `a[i,k] * b[k,j]` for ascending `k`,
    /// starting from zero.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn elementwise<'a>(&self, op: ElementwiseOp, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        let rhs = rhs.into();
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |a, b| a + b,
            ElementwiseOp::Sub => |a, b| a - b,
            ElementwiseOp::Mul | ElementwiseOp::Scale => |a, b| a * b,
            ElementwiseOp::Max => f64::max,
            ElementwiseOp::Abs => |a, _| a.abs(),
        };
        let data = match rhs {
            Operand::Scalar(s) => self.data.iter().map(|&a| f(a, s)).collect(),
            Operand::Tensor(_) if op == ElementwiseOp::Abs => {
                self.data.iter().map(|a| a.abs()).collect()
            }
            Operand::Tensor(t) => {
                if op == ElementwiseOp::Scale {
                    return Err(Error::invalid("scale takes a scalar operand"));
                }
                if t.shape != self.shape {
                    return Err(Error::dim("elementwise", &self.shape, &t.shape));
                }
                self.data.iter().zip(&t.data).map(|(&a, &b)| f(a, b)).collect()
            }
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Mul, rhs)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn abs(&self) -> Tensor {
        self.map(f64::abs)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reduces along `axis`, removing it from the shape.
    pub fn reduce(&self, op: ReduceOp, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        let len = self.shape[axis];
        if len == 0 && op != ReduceOp::Sum {
            return Err(Error::invalid(format!("{op:?} over empty axis {axis}")));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| self.data[(o * len + a) * inner + i];
                let v = match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let mut acc = 0.0;
                        for a in 0..len {
                            acc += at(a);
                        }
                        if op == ReduceOp::Mean {
                            acc / len as f64
                        } else {
                            acc
                        }
                    }
                    ReduceOp::Max => at(argmax_by(len, at)),
                    ReduceOp::Argmax => argmax_by(len, at) as f64,
                };
                out.push(v);
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Flat index of the maximum element; ties resolve to the lowest index.
    pub fn argmax_flat(&self) -> Option<usize> {
        if self.data.is_empty() {
            None
        } else {
            Some(argmax_by(self.data.len(), |i| self.data[i]))
        }
    }

    /// Row-wise argmax of a matrix, lowest index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let w = self.row_len();
        (0..self.rows())
            .map(|r| {
                let row = &self.data[r * w..(r + 1) * w];
                argmax_by(w, |i| row[i])
            })
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        squared_norm(&self.data).sqrt()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose2d")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Copies `range` along `axis`.
    pub fn slice(&self, axis: usize, range: Range<usize>) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        if range.start > range.end || range.end > self.shape[axis] {
            return Err(Error::OutOfBounds(format!(
                "slice {range:?} on axis {axis} of {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let len = self.shape[axis];
        let mut data = Vec::with_capacity(outer * range.len() * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&self.data[base + range.start * inner..base + range.end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = range.len();
        Ok(Tensor { shape, data })
    }

    /// Gathers leading-axis entries in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let w = self.row_len();
        let n = self.rows();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= n {
                return Err(Error::OutOfBounds(format!("row {i} of {n}")));
            }
            data.extend_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            return Err(Error::invalid("select_rows on rank-0 tensor"));
        }
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.is_empty() || &p.shape[1..] != tail {
                return Err(Error::dim("concat_rows", &first.shape, &p.shape));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor { shape, data })
    }

    /// Fails with the flat index of the first NaN or infinite element.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i} of tensor {:?}",
                self.data[i], self.shape
            ))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes `TNSR`, `u32` rank, `u32` dims, then the `f64` payload, all
    /// little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let rank = read_u32(r)? as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::io_util::write_atomic(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let bytes = std::fs::read(path)?;
        Tensor::read_from(&mut bytes.as_slice())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Lowest index of the maximum of `f(0..len)`. `len` must be non-zero.
pub(crate) fn argmax_by(len: usize, f: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_v = f(0);
    for i in 1..len {
        let v = f(i);
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub(crate) fn squared_norm(v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in v {
        acc += x * x;
    }
    acc
}

/// `out[m,n] += a[m,k] * b[k,n]`, row-major, i-k-j loop order.
///
/// For every output element the products are added in ascending `k`, so
/// the result equals a naive dot-product loop bit-for-bit.
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[k,m]^T * b[k,n]` without materialising the transpose.
/// Accumulation runs over ascending `k` for each output element.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[3, 3], &mut rng);
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::matrix(&[&[1.0], &[1.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Tensor::matrix(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_shape_mismatch_names_both() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[4, 5])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn transposed_kernels_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[5, 4], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let mut out = vec![0.0; 12];
        gemm_tn(a.data(), b.data(), &mut out, 4, 5, 3);
        let expect = a.transpose2d().unwrap().matmul(&b).unwrap();
        assert_eq!(out, expect.data());

        let c = random(&[3, 4], &mut rng);
        let mut out = vec![0.0; 15];
        gemm_nt(a.data(), c.data(), &mut out, 5, 4, 3);
        let expect = a.matmul(&c.transpose2d().unwrap()).unwrap();
        for (x, y) in out.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn elementwise_basics() {
        let x = Tensor::vector(vec![-1.0, 2.0]);
        assert_eq!(x.elementwise(ElementwiseOp::Add, 0.0).unwrap(), x);
        assert_eq!(
            x.elementwise(ElementwiseOp::Max, 0.0).unwrap().data(),
            &[0.0, 2.0]
        );
        let y = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(y.elementwise(ElementwiseOp::Scale, 0.5).unwrap().data(), &[0.5, 1.0]);
        assert_eq!(x.elementwise(ElementwiseOp::Abs, 0.0).unwrap().data(), &[1.0, 2.0]);
        assert!(x.add(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn reductions() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(x.reduce(ReduceOp::Sum, 0).unwrap().data(), &[6.0]);
        let t = Tensor::vector(vec![0.2, 0.5, 0.5]);
        assert_eq!(t.reduce(ReduceOp::Argmax, 0).unwrap().data(), &[1.0]);
        assert!(Tensor::zeros(&[0]).reduce(ReduceOp::Mean, 0).is_err());
        assert!(x.reduce(ReduceOp::Sum, 1).is_err());

        let m = Tensor::matrix(&[&[1.0, 5.0, 2.0], &[7.0, 0.0, 7.0]]);
        assert_eq!(m.reduce(ReduceOp::Max, 1).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(m.reduce(ReduceOp::Argmax, 1).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(m.reduce(ReduceOp::Mean, 0).unwrap().data(), &[4.0, 2.5, 4.5]);
        assert_eq!(m.argmax_rows(), vec![1, 0]);
    }

    #[test]
    fn shape_ops() {
        let x = Tensor::vector((1..=6).map(f64::from).collect());
        let r = x.reshape(&[2, 3]).unwrap();
        assert_eq!(r.reshape(&[6]).unwrap(), x);
        assert!(x.reshape(&[4]).is_err());
        assert_eq!(r.transpose2d().unwrap().transpose2d().unwrap(), r);
        assert!(r.slice(1, 2..4).is_err());
        assert_eq!(r.slice(1, 1..3).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(r.select_rows(&[1, 0]).unwrap().data(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn finite_check_reports_index() {
        let t = Tensor::vector(vec![0.0, f64::NAN]);
        assert!(!t.is_finite());
        assert!(t.check_finite().unwrap_err().to_string().contains("index 1"));
    }

    #[test]
    fn serialization_layout() {
        let t = Tensor::matrix(&[&[1.5, -2.0]]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TNSR");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 32);
        assert_eq!(Tensor::read_from(&mut buf.as_slice()).unwrap(), t);
        assert!(Tensor::read_from(&mut &b"XXXX"[..]).is_err());
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&[m, k], &mut rng);
            let b = random(&[k, n], &mut rng);
            let c = random(&[n, p], &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(y.abs()).max(1.0));
            }
        }

        #[test]
        fn sum_matches_scalar_loop(values in proptest::collection::vec(-1e3f64..1e3, 0..2000)) {
            let t = Tensor::vector(values.clone());
            let mut acc = 0.0;
            for v in &values {
                acc += v;
            }
            prop_assert_eq!(t.sum().to_bits(), acc.to_bits());
            prop_assert_eq!(t.reduce(ReduceOp::Sum, 0).unwrap().data()[0].to_bits(), acc.to_bits());
        }

        #[test]
        fn binary_round_trip(shape in proptest::collection::vec(0usize..4, 0..4), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random(&shape, &mut rng);
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = Tensor::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
