//! Dense kernels shared by the graph ops.

/// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`. `a_t` means `a` is stored `k x m`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// Geometry of a 2-D sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn conv(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let out = |d: usize| (d + 2 * pad).saturating_sub(kernel) / stride + 1;
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: out(height),
            out_w: out(width),
        }
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output columns `lo..hi` whose tap `kx` lands inside the input row.
fn valid_span(g: &Window, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride).min(g.out_w);
    let hi = if g.width + g.pad > kx {
        ((g.width + g.pad - kx - 1) / g.stride + 1).min(g.out_w)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfold `x` (`C x H x W`) into a `(C*k*k) x (out_h*out_w)` matrix; out-of-range taps are zero.
pub fn im2col(x: &[f64], g: &Window, col: &mut [f64]) {
    im2col_rows(x, g, 0, g.out_h, col)
}

/// [`im2col`] restricted to output rows `oy0..oy1`; `col` is `(C*k*k) x ((oy1-oy0)*out_w)`.
pub fn im2col_rows(x: &[f64], g: &Window, oy0: usize, oy1: usize, col: &mut [f64]) {
    let k = g.kernel;
    let cols = (oy1 - oy0) * g.out_w;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[(oy - oy0) * g.out_w..(oy - oy0 + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let (lo, hi) = valid_span(g, kx);
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if hi == lo {
                        continue;
                    }
                    let first = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `x` (`C x H x W`).
pub fn col2im(col: &[f64], g: &Window, x: &mut [f64]) {
    let k = g.kernel;
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let (lo, hi) = valid_span(g, kx);
                    if hi == lo {
                        continue;
                    }
                    let first = lo * g.stride + kx - g.pad;
                    let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                        *d += v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_for_all_transpose_flags() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                want[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, &mut c, 0.0);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    fn naive_im2col(x: &[f64], g: &Window) -> Vec<f64> {
        let k = g.kernel;
        let mut col = vec![0.0; g.rows() * g.cols()];
        for c in 0..g.channels {
            for ky in 0..k {
                for kx in 0..k {
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                col[((c * k + ky) * k + kx) * g.cols() + oy * g.out_w + ox] =
                                    x[(c * g.height + iy as usize) * g.width + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    #[test]
    fn im2col_matches_naive_unfold() {
        for (h, w, k, stride, pad) in [(5, 6, 3, 1, 1), (5, 6, 3, 2, 1), (7, 4, 7, 1, 3), (3, 3, 4, 2, 2), (2, 9, 3, 3, 0), (4, 4, 1, 1, 0)] {
            let g = Window::conv(2, h, w, k, stride, pad);
            let x: Vec<f64> = (0..2 * h * w).map(|i| i as f64 + 1.0).collect();
            let mut col = vec![f64::NAN; g.rows() * g.cols()];
            im2col(&x, &g, &mut col);
            assert_eq!(col, naive_im2col(&x, &g), "{g:?}");
            let mut band = vec![f64::NAN; g.rows() * g.out_w];
            im2col_rows(&x, &g, g.out_h - 1, g.out_h, &mut band);
            for r in 0..g.rows() {
                assert_eq!(band[r * g.out_w..(r + 1) * g.out_w], col[r * g.cols() + (g.out_h - 1) * g.out_w..(r + 1) * g.cols()]);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = Window::conv(2, 5, 6, 3, 2, 1);
        let x: Vec<f64> = (0..2 * 5 * 6).map(|i| (i as f64 * 0.37).cos()).collect();
        let c: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).sin()).collect();
        let mut col = vec![0.0; g.rows() * g.cols()];
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
