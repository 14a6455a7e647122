//! Low-level kernels: GEMM and the im2col / col2im pair used by the
//! convolution layers.

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`
/// and `op(b)` of shape `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements checked by the assertion.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Writes the transpose of the row-major `rows x cols` matrix `src` into `dst`.
pub fn transpose(src: &[f32], rows: usize, cols: usize, dst: &mut [f32]) {
    const BLOCK: usize = 32;
    assert!(src.len() >= rows * cols && dst.len() >= rows * cols);
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Geometry of a 2D convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Output size follows the usual floor rule. Returns `None` when the
    /// kernel does not fit.
    pub fn new(channels: usize, in_h: usize, in_w: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let ph = in_h + 2 * pad;
        let pw = in_w + 2 * pad;
        if kernel == 0 || stride == 0 || ph < kernel || pw < kernel {
            return None;
        }
        Some(Self {
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            pad,
            out_h: (ph - kernel) / stride + 1,
            out_w: (pw - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `image` (C x H x W) into columns (C*k*k x out_h*out_w).
pub fn im2col(image: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let ncols = g.col_cols();
    debug_assert_eq!(cols.len(), g.col_rows() * ncols);
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_outputs(ky, g.pad, g.stride, g.in_h, g.out_h);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_outputs(kx, g.pad, g.stride, g.in_w, g.out_w);
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if oy < y_lo || oy >= y_hi || x_lo >= x_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    line[..x_lo].fill(0.0);
                    line[x_hi..].fill(0.0);
                    let x0 = x_lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[x_lo..x_hi].copy_from_slice(&src[x0..x0 + x_hi - x_lo]);
                    } else {
                        for (j, v) in line[x_lo..x_hi].iter_mut().enumerate() {
                            *v = src[x0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Transposed im2col: one row of `col_rows()` patch values per output pixel.
pub fn im2row(image: &[f32], g: &ConvGeometry, rows_out: &mut [f32]) {
    let nrows = g.col_rows();
    debug_assert_eq!(rows_out.len(), nrows * g.col_cols());
    let k = g.kernel;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let dst = &mut rows_out[(oy * g.out_w + ox) * nrows..(oy * g.out_w + ox + 1) * nrows];
            let x_start = (ox * g.stride) as isize - g.pad as isize;
            for c in 0..g.channels {
                let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let seg = &mut dst[(c * k + ky) * k..(c * k + ky + 1) * k];
                    if iy < 0 || iy >= g.in_h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    if x_start >= 0 && x_start as usize + k <= g.in_w {
                        seg.copy_from_slice(&src[x_start as usize..x_start as usize + k]);
                    } else {
                        for (kx, v) in seg.iter_mut().enumerate() {
                            let ix = x_start + kx as isize;
                            *v = if ix < 0 || ix >= g.in_w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Output indices `[lo, hi)` whose tap at kernel offset `off` lands inside
/// an input of length `in_size`.
fn valid_outputs(off: usize, pad: usize, stride: usize, in_size: usize, out_size: usize) -> (usize, usize) {
    let lo = if pad > off { (pad - off).div_ceil(stride) } else { 0 };
    let hi = if in_size + pad > off { ((in_size + pad - off - 1) / stride + 1).min(out_size) } else { 0 };
    (lo.min(hi), hi)
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
pub fn col2im(cols: &[f32], g: &ConvGeometry, image: &mut [f32]) {
    let ncols = g.col_cols();
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_outputs(ky, g.pad, g.stride, g.in_h, g.out_h);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_outputs(kx, g.pad, g.stride, g.in_w, g.out_w);
                if x_lo >= x_hi {
                    continue;
                }
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let line = &src[oy * g.out_w + x_lo..oy * g.out_w + x_hi];
                    let x0 = x_lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, v) in dst[x0..x0 + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in line.iter().enumerate() {
                            dst[x0 + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f32]) -> Vec<f32> {
        let mut t = vec![0.0; x.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32).sin()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, 1.0, aa, ta, bb, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-4, "trans=({ta},{tb})");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry::new(2, 7, 6, 3, 2, 1).unwrap();
        let x: Vec<f32> = (0..2 * 7 * 6).map(|i| ((i * 37 % 11) as f32) - 5.0).collect();
        let y: Vec<f32> = (0..g.col_rows() * g.col_cols()).map(|i| ((i * 13 % 7) as f32) - 3.0).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let lhs: f32 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn im2row_is_transposed_im2col() {
        for (c, h, w, k, st, p) in [(2, 7, 6, 3, 2, 1), (1, 9, 8, 5, 1, 2), (3, 6, 6, 4, 1, 0), (2, 10, 9, 5, 2, 2)] {
            let g = ConvGeometry::new(c, h, w, k, st, p).unwrap();
            let x: Vec<f32> = (0..c * h * w).map(|i| i as f32 * 0.1 - 1.0).collect();
            let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
            let mut rows = vec![1.0; cols.len()];
            let mut t = vec![0.0; cols.len()];
            im2col(&x, &g, &mut cols);
            im2row(&x, &g, &mut rows);
            super::transpose(&cols, g.col_rows(), g.col_cols(), &mut t);
            assert_eq!(rows, t);
        }
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        let g = ConvGeometry::new(2, 7, 6, 3, 2, 1).unwrap();
        let x: Vec<f32> = (0..2 * 7 * 6).map(|i| i as f32 + 1.0).collect();
        let mut cols = vec![f32::NAN; g.col_rows() * g.col_cols()];
        im2col(&x, &g, &mut cols);
        for c in 0..2 {
            for ky in 0..3 {
                for kx in 0..3 {
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            let want = if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 { 0.0 } else { x[c * 42 + iy as usize * 6 + ix as usize] };
                            assert_eq!(cols[((c * 3 + ky) * 3 + kx) * g.col_cols() + oy * g.out_w + ox], want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn geometry_halving_and_valid() {
        let g = ConvGeometry::new(1, 64, 64, 5, 2, 2).unwrap();
        assert_eq!((g.out_h, g.out_w), (32, 32));
        let g = ConvGeometry::new(1, 64, 64, 5, 1, 0).unwrap();
        assert_eq!((g.out_h, g.out_w), (60, 60));
        assert!(ConvGeometry::new(1, 2, 2, 3, 1, 0).is_none());
    }
}
