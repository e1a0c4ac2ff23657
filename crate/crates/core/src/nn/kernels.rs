//! Dense inner loops shared by the convolution layers.
//!
//! Matrices are row-major slices. All routines accumulate into `out`. The
//! innermost loops run over contiguous memory so they auto-vectorize; the
//! summation order is fixed, so results are reproducible bit for bit.

use crate::nn::Scalar;

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut lanes = [T::ZERO; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            lanes[l] += a[l] * b[l];
        }
    }
    let mut tail = T::ZERO;
    for (&a, &b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// `out (m×n) += a (m×k) · b (k×n)`
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], orow);
        }
    }
}

/// `out (k×n) += aᵀ · b` with `a` m×k and `b` m×n.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= m * n && out.len() >= k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], brow, &mut out[p * n..(p + 1) * n]);
        }
    }
}

/// `out (m×k) += a · bᵀ` with `a` m×n and `b` k×n.
pub fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert!(a.len() >= m * n && b.len() >= k * n && out.len() >= m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// Sampling geometry between a large map and the small strided map it
/// convolves down to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lowering {
    pub channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Lowering {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Range of small-map indices `j` with `0 <= j*stride + offset - pad < big`.
    #[inline]
    fn valid(&self, small: usize, big: usize, offset: usize) -> (usize, usize) {
        let s = self.stride;
        // smallest j with j*s + offset >= pad
        let lo = if offset >= self.pad { 0 } else { (self.pad - offset).div_ceil(s) };
        // largest j with j*s + offset - pad <= big - 1, exclusive bound
        let hi = if big + self.pad > offset {
            ((big + self.pad - offset - 1) / s + 1).min(small)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Gather patches of `big` (channels × big_h × big_w) into `col` (rows × cols).
    pub fn im2col<T: Scalar>(&self, big: &[T], col: &mut [T]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad);
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &big[c * self.big_h * self.big_w..(c + 1) * self.big_h * self.big_w];
            for ky in 0..k {
                let (ilo, ihi) = self.valid(self.small_h, self.big_h, ky);
                for kx in 0..k {
                    let (jlo, jhi) = self.valid(self.small_w, self.big_w, kx);
                    let row = &mut col[((c * k + ky) * k + kx) * ncols..][..ncols];
                    row.fill(T::ZERO);
                    for i in ilo..ihi {
                        let y = i * s + ky - pad;
                        let src = &plane[y * self.big_w..(y + 1) * self.big_w];
                        let dst = &mut row[i * self.small_w..(i + 1) * self.small_w];
                        for j in jlo..jhi {
                            dst[j] = src[j * s + kx - pad];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `col` back onto `big`; the adjoint of `im2col`.
    pub fn col2im<T: Scalar>(&self, col: &[T], big: &mut [T]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad);
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &mut big[c * self.big_h * self.big_w..(c + 1) * self.big_h * self.big_w];
            for ky in 0..k {
                let (ilo, ihi) = self.valid(self.small_h, self.big_h, ky);
                for kx in 0..k {
                    let (jlo, jhi) = self.valid(self.small_w, self.big_w, kx);
                    let row = &col[((c * k + ky) * k + kx) * ncols..][..ncols];
                    for i in ilo..ihi {
                        let y = i * s + ky - pad;
                        let dst = &mut plane[y * self.big_w..(y + 1) * self.big_w];
                        let src = &row[i * self.small_w..(i + 1) * self.small_w];
                        for j in jlo..jhi {
                            dst[j * s + kx - pad] += src[j];
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

    fn naive_mm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        out
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    fn fill(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 0.618_033_988_7).fract() - 0.5).collect()
    }

    #[test]
    fn gemm_variants_match_naive_product() {
        let (m, k, n) = (5, 7, 19);
        let a = fill(m * k, 0.1);
        let b = fill(k * n, 0.7);
        let expect = naive_mm(m, k, n, &a, &b);

        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut out);
        assert!(out.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));

        // aᵀ stored as (k×m) so that (aᵀ)ᵀ·b = a·b
        let at = transpose(m, k, &a);
        let mut out = vec![0.0; m * n];
        gemm_tn(k, m, n, &at, &b, &mut out);
        assert!(out.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));

        let bt = transpose(k, n, &b);
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut out);
        assert!(out.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        for (big, stride, kernel) in [(8usize, 2usize, 5usize), (7, 1, 3), (9, 2, 3), (4, 2, 5), (6, 3, 1)] {
            let small = big.div_ceil(stride);
            let g = Lowering {
                channels: 2,
                big_h: big,
                big_w: big,
                small_h: small,
                small_w: small,
                kernel,
                stride,
                pad: (kernel - 1) / 2,
            };
            let x = fill(2 * big * big, 0.3);
            let y = fill(g.rows() * g.cols(), 0.9);
            let mut col = vec![0.0; g.rows() * g.cols()];
            g.im2col(&x, &mut col);
            let mut back = vec![0.0; x.len()];
            g.col2im(&y, &mut back);
            let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "big {big} stride {stride} kernel {kernel}");
        }
    }
}
