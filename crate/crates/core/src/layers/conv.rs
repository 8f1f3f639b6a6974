use super::{LayerGrads, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

/// Valid-mode, stride-1 output size.
pub fn conv_output_dims(h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
    (kh >= 1 && kw >= 1 && h >= kh && w >= kw).then(|| (h - kh + 1, w - kw + 1))
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn of(params: &LayerParams, x: &Tensor) -> Result<Self> {
        let ws = params.weights.shape();
        let &[cout, cin, kh, kw] = ws else {
            return Err(Error::dim("conv weights", ws, &[0, 0, 0, 0]));
        };
        if params.biases.shape() != [cout] {
            return Err(Error::dim("conv biases", params.biases.shape(), &[cout]));
        }
        let &[n, xc, h, w] = x.shape() else {
            return Err(Error::dim("conv_forward", x.shape(), ws));
        };
        if xc != cin {
            return Err(Error::dim("conv_forward", x.shape(), ws));
        }
        let (oh, ow) = conv_output_dims(h, w, kh, kw).ok_or_else(|| {
            Error::invalid(format!("kernel {kh}x{kw} larger than input {h}x{w}"))
        })?;
        Ok(Geometry { n, cin, h, w, cout, kh, kw, oh, ow })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one sample into `[cin*kh*kw, oh*ow]`, row index ordered
    /// (channel, kernel row, kernel column).
    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.cin {
            let plane = &sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let src = &plane[(oy + ki) * self.w + kj..(oy + ki) * self.w + kj + self.ow];
                        dst[oy * self.ow..(oy + 1) * self.ow].copy_from_slice(src);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], sample: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.cin {
            let plane = &mut sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let base = (oy + ki) * self.w + kj;
                        let dst = &mut plane[base..base + self.ow];
                        for (d, s) in dst.iter_mut().zip(&src[oy * self.ow..(oy + 1) * self.ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip), stride 1, no padding, with one
/// shared bias per output map.
///
/// Each output is the sum over (channel, kernel row, kernel column) in
/// that order, then plus the bias.
pub fn conv_forward(params: &LayerParams, x: &Tensor) -> Result<Tensor> {
    let g = Geometry::of(params, x)?;
    let (k, p) = (g.patch_len(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut out = vec![0.0; g.n * out_len];
    let mut cols = vec![0.0; k * p];
    let bias = params.biases.data();
    for s in 0..g.n {
        g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        gemm(params.weights.data(), &cols, dst, g.cout, k, p);
        for (map, &b) in dst.chunks_exact_mut(p).zip(bias) {
            for v in map {
                *v += b;
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

/// Exact gradients for weights, biases and (optionally) the input.
pub fn conv_backward(
    params: &LayerParams,
    x: &Tensor,
    d_out: &Tensor,
    want_input: bool,
) -> Result<LayerGrads> {
    let g = Geometry::of(params, x)?;
    if d_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::dim("conv_backward", d_out.shape(), &[g.n, g.cout, g.oh, g.ow]));
    }
    let (k, p) = (g.patch_len(), g.positions());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut dw = vec![0.0; g.cout * k];
    let mut db = vec![0.0; g.cout];
    let mut dx = if want_input { vec![0.0; x.len()] } else { Vec::new() };
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    for s in 0..g.n {
        let dy = &d_out.data()[s * out_len..(s + 1) * out_len];
        g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
        gemm_nt(dy, &cols, &mut dw, g.cout, p, k);
        for (acc, map) in db.iter_mut().zip(dy.chunks_exact(p)) {
            for v in map {
                *acc += v;
            }
        }
        if want_input {
            dcols.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(params.weights.data(), dy, &mut dcols, k, g.cout, p);
            g.col2im(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    Ok(LayerGrads {
        weights: Tensor::new(params.weights.shape().to_vec(), dw)?,
        biases: Tensor::vector(db),
        input: if want_input {
            Some(Tensor::new(x.shape().to_vec(), dx)?)
        } else {
            None
        },
    })
}
