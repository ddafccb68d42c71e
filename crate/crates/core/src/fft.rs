//! Centered unitary discrete Fourier transforms.
//!
//! The 2D transform used by the encoding operator places DC at the center
//! index `floor(n/2)` of each axis and is scaled by `1/sqrt(nx*ny)`, so the
//! forward map is unitary and its adjoint equals its inverse. Explicitly,
//! with `c = floor(n/2)`:
//!
//! ```text
//! K[k] = n^(-1/2) * sum_x f[x] * exp(-2*pi*i * (k - c) * (x - c) / n)
//! ```
//!
//! per axis. This is implemented as a standard FFT with unit-modulus phase
//! tables applied before and after, which keeps the definition exact for odd
//! lengths as well.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

struct Axis {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// pre[x] = exp(+2*pi*i*c*x/n)
    pre: Vec<Complex64>,
    /// post[k] = exp(+2*pi*i*c*k/n) * exp(-2*pi*i*c^2/n) / sqrt(n)
    post: Vec<Complex64>,
}

impl Axis {
    fn new(planner: &mut FftPlanner<f64>, len: usize) -> Self {
        let c = (len / 2) as f64;
        let n = len as f64;
        let pre = (0..len)
            .map(|x| Complex64::from_polar(1.0, 2.0 * PI * c * x as f64 / n))
            .collect();
        let global = Complex64::from_polar(1.0, -2.0 * PI * c * c / n);
        let scale = 1.0 / n.sqrt();
        let post = (0..len)
            .map(|k| Complex64::from_polar(scale, 2.0 * PI * c * k as f64 / n) * global)
            .collect();
        Axis {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            pre,
            post,
        }
    }

    fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    fn forward_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        for (v, p) in buf.iter_mut().zip(self.pre.iter()) {
            *v *= p;
        }
        self.forward
            .process_with_scratch(buf, &mut scratch[..self.forward.get_inplace_scratch_len()]);
        for (v, p) in buf.iter_mut().zip(self.post.iter()) {
            *v *= p;
        }
    }

    fn inverse_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        for (v, p) in buf.iter_mut().zip(self.post.iter()) {
            *v *= p.conj();
        }
        self.inverse
            .process_with_scratch(buf, &mut scratch[..self.inverse.get_inplace_scratch_len()]);
        for (v, p) in buf.iter_mut().zip(self.pre.iter()) {
            *v *= p.conj();
        }
    }
}

/// Planned centered unitary 2D DFT for a fixed nx x ny grid.
///
/// The transform object is immutable and safe to share across threads;
/// per-call scratch is allocated locally.
pub struct FftEngine {
    x: Axis,
    y: Axis,
}

impl FftEngine {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftEngine {
            x: Axis::new(&mut planner, nx),
            y: Axis::new(&mut planner, ny),
        }
    }

    pub fn nx(&self) -> usize {
        self.x.len
    }

    pub fn ny(&self) -> usize {
        self.y.len
    }

    /// Forward centered unitary 2D DFT of one ny x nx plane, in place.
    pub fn fft2(&self, plane: &mut [Complex64]) {
        self.transform2(plane, true);
    }

    /// Inverse (= adjoint) centered unitary 2D DFT, in place.
    pub fn ifft2(&self, plane: &mut [Complex64]) {
        self.transform2(plane, false);
    }

    fn transform2(&self, plane: &mut [Complex64], forward: bool) {
        let (nx, ny) = (self.x.len, self.y.len);
        debug_assert_eq!(plane.len(), nx * ny);
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.x.scratch_len().max(self.y.scratch_len())];
        // rows along x (contiguous)
        for row in plane.chunks_mut(nx) {
            if forward {
                self.x.forward_in_place(row, &mut scratch);
            } else {
                self.x.inverse_in_place(row, &mut scratch);
            }
        }
        // columns along y (strided gather/scatter)
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for x in 0..nx {
            for y in 0..ny {
                col[y] = plane[y * nx + x];
            }
            if forward {
                self.y.forward_in_place(&mut col, &mut scratch);
            } else {
                self.y.inverse_in_place(&mut col, &mut scratch);
            }
            for y in 0..ny {
                plane[y * nx + x] = col[y];
            }
        }
    }
}

/// Planned unitary 1D DFT along the time axis (uncentered), used by the
/// x-f sparsity transform.
pub struct TimeFft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl TimeFft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        TimeFft {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, scratch);
        let s = 1.0 / (self.len as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, scratch);
        let s = 1.0 / (self.len as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense centered unitary DFT matrix built directly from the definition.
    fn dft_matrix(n: usize) -> Vec<Complex64> {
        let c = (n / 2) as f64;
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        for k in 0..n {
            for x in 0..n {
                let phase = -2.0 * PI * (k as f64 - c) * (x as f64 - c) / n as f64;
                m[k * n + x] = Complex64::from_polar(1.0 / (n as f64).sqrt(), phase);
            }
        }
        m
    }

    fn pseudo_random(len: usize, seed: u64) -> Vec<Complex64> {
        let mut s = seed;
        let mut next = move || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        (0..len).map(|_| Complex64::new(next(), next())).collect()
    }

    fn check_against_dense(nx: usize, ny: usize) {
        let eng = FftEngine::new(nx, ny);
        let fx = dft_matrix(nx);
        let fy = dft_matrix(ny);
        let img = pseudo_random(nx * ny, 42 + (nx * 1000 + ny) as u64);

        // dense reference: rows then columns
        let mut want = vec![Complex64::new(0.0, 0.0); nx * ny];
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..ny {
                    for x in 0..nx {
                        acc += fy[ky * ny + y] * fx[kx * nx + x] * img[y * nx + x];
                    }
                }
                want[ky * nx + kx] = acc;
            }
        }

        let mut got = img.clone();
        eng.fft2(&mut got);
        let err: f64 = got
            .iter()
            .zip(want.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale: f64 = want.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / scale < 1e-12, "fft2 vs dense: {} ({}x{})", err / scale, nx, ny);

        // inverse round-trips
        eng.ifft2(&mut got);
        let rt: f64 = got
            .iter()
            .zip(img.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(rt < 1e-12, "round trip: {rt}");
    }

    #[test]
    fn matches_dense_definition_even() {
        check_against_dense(8, 8);
        check_against_dense(4, 6);
    }

    #[test]
    fn matches_dense_definition_odd() {
        check_against_dense(5, 7);
        check_against_dense(9, 4);
    }

    #[test]
    fn dc_lands_at_center() {
        let (nx, ny) = (8, 6);
        let eng = FftEngine::new(nx, ny);
        let mut plane = vec![Complex64::new(1.0, 0.0); nx * ny];
        eng.fft2(&mut plane);
        let center = (ny / 2) * nx + nx / 2;
        let total: f64 = plane.iter().map(|v| v.norm_sqr()).sum();
        assert!((plane[center].norm_sqr() - total).abs() < 1e-10);
        assert!((plane[center].re - (nx as f64 * ny as f64).sqrt()).abs() < 1e-10);
        assert!(plane[center].im.abs() < 1e-10);
    }

    #[test]
    fn time_fft_unitary() {
        let f = TimeFft::new(16);
        let mut scratch = vec![Complex64::new(0.0, 0.0); f.scratch_len()];
        let orig = pseudo_random(16, 7);
        let mut buf = orig.clone();
        f.forward(&mut buf, &mut scratch);
        let e_in: f64 = orig.iter().map(|v| v.norm_sqr()).sum();
        let e_out: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        assert!((e_in - e_out).abs() < 1e-12 * e_in);
        f.inverse(&mut buf, &mut scratch);
        for (a, b) in buf.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
