//! Loop-based numeric kernels on raw row-major slices. The tape calls these.
//! Convolutions go through im2col and a dense matmul.

use crate::tensor::Real;

/// `c[m,n] = a[m,k] · b[k,n]`
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `da[m,k] = dc[m,n] · bᵀ`
pub fn matmul_grad_a<T: Real>(dc: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut da = vec![T::zero(); m * k];
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in dcrow.iter().zip(brow) {
                acc += x * y;
            }
            da[i * k + p] = acc;
        }
    }
    da
}

/// `db[k,n] = aᵀ · dc[m,n]`
pub fn matmul_grad_b<T: Real>(dc: &[T], a: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut db = vec![T::zero(); k * n];
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &g) in dbrow.iter_mut().zip(dcrow) {
                *d += av * g;
            }
        }
    }
    db
}

/// Geometry of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Returns `None` when the kernel does not fit the padded input.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: usize,
        in_channels: usize,
        height: usize,
        width: usize,
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if stride == 0 || height + 2 * padding < kernel_h || width + 2 * padding < kernel_w {
            return None;
        }
        Some(Self {
            batch,
            in_channels,
            height,
            width,
            filters,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (height + 2 * padding - kernel_h) / stride + 1,
            out_w: (width + 2 * padding - kernel_w) / stride + 1,
        })
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.filters * self.out_h * self.out_w
    }

    /// Output rows `o` whose input row `o*stride + k - padding` lies inside `[0, extent)`.
    #[inline]
    fn valid(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.padding as isize;
        // o*s + off >= 0  and  o*s + off <= extent-1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_num = extent as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out as isize);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

/// Unfold patches into rows: row `(n, oy, ox)`, column `(c, ki, kj)`.
fn im2col<T: Real>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let ck = g.in_channels * g.kernel_h * g.kernel_w;
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.height * g.width;
    let mut col = vec![T::zero(); g.batch * out_plane * ck];
    for n in 0..g.batch {
        for c in 0..g.in_channels {
            let x = &input[(n * g.in_channels + c) * in_plane..][..in_plane];
            for ki in 0..g.kernel_h {
                let (ylo, yhi) = g.valid(ki, g.height, g.out_h);
                for kj in 0..g.kernel_w {
                    let (xlo, xhi) = g.valid(kj, g.width, g.out_w);
                    let q = (c * g.kernel_h + ki) * g.kernel_w + kj;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ki - g.padding;
                        for ox in xlo..xhi {
                            let r = n * out_plane + oy * g.out_w + ox;
                            col[r * ck + q] = x[iy * g.width + ox * g.stride + kj - g.padding];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom) -> Vec<T> {
    let ck = g.in_channels * g.kernel_h * g.kernel_w;
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.height * g.width;
    let mut din = vec![T::zero(); g.batch * g.in_channels * in_plane];
    for n in 0..g.batch {
        for c in 0..g.in_channels {
            let dx = &mut din[(n * g.in_channels + c) * in_plane..][..in_plane];
            for ki in 0..g.kernel_h {
                let (ylo, yhi) = g.valid(ki, g.height, g.out_h);
                for kj in 0..g.kernel_w {
                    let (xlo, xhi) = g.valid(kj, g.width, g.out_w);
                    let q = (c * g.kernel_h + ki) * g.kernel_w + kj;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ki - g.padding;
                        for ox in xlo..xhi {
                            let r = n * out_plane + oy * g.out_w + ox;
                            dx[iy * g.width + ox * g.stride + kj - g.padding] += col[r * ck + q];
                        }
                    }
                }
            }
        }
    }
    din
}

/// NCHW output to `[(n, oy, ox), f]` rows.
fn to_rows<T: Real>(dout: &[T], g: &ConvGeom) -> Vec<T> {
    let out_plane = g.out_h * g.out_w;
    let mut rows = vec![T::zero(); dout.len()];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let src = &dout[(n * g.filters + f) * out_plane..][..out_plane];
            for (p, &v) in src.iter().enumerate() {
                rows[(n * out_plane + p) * g.filters + f] = v;
            }
        }
    }
    rows
}

pub fn conv2d_forward<T: Real>(input: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let ck = g.in_channels * g.kernel_h * g.kernel_w;
    let out_plane = g.out_h * g.out_w;
    let col = im2col(input, g);
    let mut kt = vec![T::zero(); ck * g.filters];
    for f in 0..g.filters {
        for q in 0..ck {
            kt[q * g.filters + f] = kernel[f * ck + q];
        }
    }
    let rows = matmul(&col, &kt, g.batch * out_plane, ck, g.filters);
    let mut out = vec![T::zero(); g.output_len()];
    for n in 0..g.batch {
        for p in 0..out_plane {
            let r = &rows[(n * out_plane + p) * g.filters..][..g.filters];
            for (f, &v) in r.iter().enumerate() {
                out[(n * g.filters + f) * out_plane + p] = v;
            }
        }
    }
    out
}

pub fn conv2d_grad_input<T: Real>(dout: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let ck = g.in_channels * g.kernel_h * g.kernel_w;
    let rows = to_rows(dout, g);
    let dcol = matmul(&rows, kernel, g.batch * g.out_h * g.out_w, g.filters, ck);
    col2im(&dcol, g)
}

pub fn conv2d_grad_kernel<T: Real>(dout: &[T], input: &[T], g: &ConvGeom) -> Vec<T> {
    let ck = g.in_channels * g.kernel_h * g.kernel_w;
    let rows = to_rows(dout, g);
    let col = im2col(input, g);
    matmul_grad_b(&col, &rows, g.batch * g.out_h * g.out_w, g.filters, ck)
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

/// Index of the largest entry in each row (first on ties).
pub fn argmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
