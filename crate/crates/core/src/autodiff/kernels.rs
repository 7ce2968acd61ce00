//! Low-level numeric kernels shared by the forward and backward passes.
//!
//! Everything here is sequential and deterministic. Reductions accumulate in
//! `f64` over the flat input index; matrix products go through
//! `matrixmultiply`, which has a fixed blocking order for a given shape.

/// `c = alpha * op(a) * op(b) + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_rs: isize,
    a_cs: isize,
    b: &[f32],
    b_rs: isize,
    b_cs: isize,
    c: &mut [f32],
    beta: f32,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, a_rs, a_cs));
    assert!(b.len() >= span(k, n, b_rs, b_cs));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs,
            a_cs,
            b.as_ptr(),
            b_rs,
            b_cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// A 1x1 stride-1 unpadded convolution is a plain matrix product on NHWC data.
    pub fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds NHWC input into `(batch*out_h*out_w, k_h*k_w*in_c)` patches, zero padded.
pub(crate) fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let plen = g.patch_len();
    let mut cols = vec![0.0f32; g.rows() * plen];
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * plen..(row + 1) * plen];
                for ky in 0..g.k_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.k_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = ((b * g.in_h + iy as usize) * g.in_w + ix as usize) * g.in_c;
                        let d = (ky * g.k_w + kx) * g.in_c;
                        dst[d..d + g.in_c].copy_from_slice(&x[src..src + g.in_c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input grid.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let plen = g.patch_len();
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src_row = &cols[row * plen..(row + 1) * plen];
                for ky in 0..g.k_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.k_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let dst = ((b * g.in_h + iy as usize) * g.in_w + ix as usize) * g.in_c;
                        let s = (ky * g.k_w + kx) * g.in_c;
                        for c in 0..g.in_c {
                            dx[dst + c] += src_row[s + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = acc;
        acc *= shape[d];
    }
    strides
}

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` expressed in the index space of `out`; broadcast axes get 0.
pub(crate) fn aligned_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(src);
    let lead = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < lead || src[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Walks `out_shape` row by row (rows = last axis). For each row calls
/// `f(out_offset, base_a, base_b)`; within a row, index `j` maps to
/// `base + j * stride_last` for each operand.
pub(crate) fn walk_rows(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let row_len = out_shape[rank - 1];
    let n_rows: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    for r in 0..n_rows {
        f(r * row_len, base_a, base_b);
        // odometer increment over the leading axes
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            base_a += sa[d];
            base_b += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base_a -= sa[d] * out_shape[d];
            base_b -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Sums `g` (shaped `out_shape`) down to `target` under broadcasting, in f64.
pub(crate) fn reduce_to_shape(g: &[f32], out_shape: &[usize], target: &[usize]) -> Vec<f32> {
    if out_shape == target {
        return g.to_vec();
    }
    let st = aligned_strides(target, out_shape);
    let zeros = vec![0; out_shape.len()];
    let n: usize = target.iter().product();
    let mut acc = vec![0f64; n];
    let row_len = out_shape.last().copied().unwrap_or(1);
    let s_last = st.last().copied().unwrap_or(0);
    walk_rows(out_shape, &st, &zeros, |o, bt, _| {
        let src = &g[o..o + row_len];
        if s_last == 1 {
            let dst = &mut acc[bt..bt + row_len];
            dst.iter_mut().zip(src).for_each(|(a, &v)| *a += v as f64);
        } else {
            for (j, &v) in src.iter().enumerate() {
                acc[bt + j * s_last] += v as f64;
            }
        }
    });
    acc.into_iter().map(|v| v as f32).collect()
}

#[inline]
pub(crate) fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 5], &[4, 1]), Some(vec![2, 4, 5]));
        assert_eq!(broadcast_shape(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shape(&[3], &[4]), None);
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g: Vec<f32> = (0..6).map(|v| v as f32).collect();
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[3]), vec![3.0, 5.0, 7.0]);
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[2, 1]), vec![3.0, 12.0]);
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[]), vec![15.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom {
            batch: 2,
            in_h: 5,
            in_w: 4,
            in_c: 3,
            k_h: 4,
            k_w: 4,
            out_c: 1,
            stride: 2,
            pad: 1,
            out_h: 2,
            out_w: 2,
        };
        let x: Vec<f32> = (0..2 * 5 * 4 * 3).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let y: Vec<f32> = (0..g.rows() * g.patch_len()).map(|i| ((i * 5) % 13) as f32 - 6.0).collect();
        let cols = im2col(&x, &g);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut dx = vec![0.0; x.len()];
        col2im(&y, &g, &mut dx);
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn stable_scalar_functions() {
        assert!((softplus(0.0) - std::f32::consts::LN_2).abs() < 1e-7);
        assert_eq!(softplus(-200.0), 0.0);
        assert!(sigmoid(-1e4) >= 0.0 && sigmoid(1e4) <= 1.0);
    }
}
