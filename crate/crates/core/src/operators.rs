//! The subspace-constrained encoding operator, its adjoint, and the three
//! normal-operator variants.
//!
//! The forward model maps spatial coefficients U through the expansion
//! X = U * V, coil weighting S, a centered unitary 2D DFT per coil and frame,
//! and the (ky, t) sampling mask M. The normal operator A^H A comes in three
//! algebraically equivalent forms:
//!
//! - `normal_naive`: adjoint(forward(U)), expanding to all T frames,
//! - `normal_exchanged`: S and F act on the L basis images first, the mask
//!   contraction V^H M V runs in the time domain,
//! - `normal_reduced`: the mask contraction is precomputed into per-row
//!   L x L blocks ([`PhiOperator`]), so the cost of that stage no longer
//!   depends on T.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{check_dim, Error, Result};
use crate::exec;
use crate::fft::FftEngine;
use crate::linalg::{dot, nrm2};
use crate::types::{
    CasoratiImage, CoilSensitivities, KtMask, MultiCoilKspace, SpatialBasis, TemporalBasis,
};

// ---------------------------------------------------------------------------
// encoding operator and adjoint
// ---------------------------------------------------------------------------

fn check_grid(fft: &FftEngine, nx: usize, ny: usize) -> Result<()> {
    check_dim("nx", fft.nx(), nx)?;
    check_dim("ny", fft.ny(), ny)
}

fn check_encode_dims(
    u: &SpatialBasis,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    mask: &KtMask,
) -> Result<()> {
    check_dim("nx", u.nx(), s.nx())?;
    check_dim("ny", u.ny(), s.ny())?;
    check_dim("model order", u.order(), v.order())?;
    check_dim("frames", v.frames(), mask.frames())?;
    check_dim("ny", u.ny(), mask.ny())
}

/// Forward encoding A(U) = M .* F (S .* (U * V)): multi-coil k-space with
/// zeros at unsampled (ky, t) locations.
pub fn forward_encode(
    u: &SpatialBasis,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    mask: &KtMask,
    fft: &FftEngine,
) -> Result<MultiCoilKspace> {
    check_encode_dims(u, v, s, mask)?;
    check_grid(fft, u.nx(), u.ny())?;
    let (nx, ny, n) = (u.nx(), u.ny(), u.n());
    let (coils, frames) = (s.coils(), v.frames());

    let x = u.expand(v)?;
    let mut data = vec![Complex64::new(0.0, 0.0); coils * frames * n];
    exec::fill_chunks(&mut data, n, |p, plane| {
        let j = p / frames;
        let t = p % frames;
        let map = s.map(j);
        for ((o, &sv), &xv) in plane.iter_mut().zip(map.iter()).zip(x.frame(t).iter()) {
            *o = sv * xv;
        }
        fft.fft2(plane);
        for ky in 0..ny {
            if !mask.is_sampled(ky, t) {
                for o in plane[ky * nx..(ky + 1) * nx].iter_mut() {
                    *o = Complex64::new(0.0, 0.0);
                }
            }
        }
    });
    MultiCoilKspace::new(coils, nx, ny, frames, data, mask.clone())
}

/// Adjoint encoding A^H(Y): conj(S)-weighted coil sum of the inverse DFT,
/// contracted against V^H along time.
pub fn adjoint_encode(
    y: &MultiCoilKspace,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    fft: &FftEngine,
) -> Result<SpatialBasis> {
    check_dim("coils", y.coils(), s.coils())?;
    check_dim("nx", y.nx(), s.nx())?;
    check_dim("ny", y.ny(), s.ny())?;
    check_dim("frames", y.frames(), v.frames())?;
    check_grid(fft, y.nx(), y.ny())?;
    let n = y.nx() * y.ny();
    let (coils, frames) = (y.coils(), y.frames());

    // coil-combined image series Z (frames in parallel, coil sum in fixed order)
    let mut z = CasoratiImage::zeros(y.nx(), y.ny(), frames);
    exec::fill_chunks(z.data_mut(), n, |t, frame| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..coils {
            buf.copy_from_slice(y.plane(j, t));
            fft.ifft2(&mut buf);
            let map = s.map(j);
            for ((o, &sv), &bv) in frame.iter_mut().zip(map.iter()).zip(buf.iter()) {
                *o += sv.conj() * bv;
            }
        }
    });
    z.contract(v)
}

// ---------------------------------------------------------------------------
// normal operator variants
// ---------------------------------------------------------------------------

/// A^H A applied literally: forward to all T frames, then adjoint.
pub fn normal_naive(
    u: &SpatialBasis,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    mask: &KtMask,
    fft: &FftEngine,
) -> Result<SpatialBasis> {
    let y = forward_encode(u, v, s, mask, fft)?;
    adjoint_encode(&y, v, s, fft)
}

/// Transforms the L basis images through S and F for every coil.
/// Returns coils * order planes of n entries each.
fn basis_kspace(
    u: &SpatialBasis,
    s: &CoilSensitivities,
    fft: &FftEngine,
) -> Vec<Complex64> {
    let n = u.n();
    let (coils, order) = (s.coils(), u.order());
    let mut g = vec![Complex64::new(0.0, 0.0); coils * order * n];
    exec::fill_chunks(&mut g, n, |p, plane| {
        let j = p / order;
        let l = p % order;
        let map = s.map(j);
        for ((o, &sv), &uv) in plane.iter_mut().zip(map.iter()).zip(u.basis_image(l).iter()) {
            *o = sv * uv;
        }
        fft.fft2(plane);
    });
    g
}

/// Inverse-transforms per-coil basis k-space planes and accumulates the
/// conj(S)-weighted coil sum into a spatial basis.
fn basis_image_sum(
    mut h: Vec<Complex64>,
    s: &CoilSensitivities,
    order: usize,
    fft: &FftEngine,
) -> Result<SpatialBasis> {
    let n = s.n();
    let coils = s.coils();
    exec::for_each_chunk_mut(&mut h, n, |_, plane| {
        fft.ifft2(plane);
    });
    let mut out = vec![Complex64::new(0.0, 0.0); order * n];
    exec::fill_chunks(&mut out, n, |l, chunk| {
        for j in 0..coils {
            let plane = &h[(j * order + l) * n..(j * order + l + 1) * n];
            let map = s.map(j);
            for ((o, &sv), &hv) in chunk.iter_mut().zip(map.iter()).zip(plane.iter()) {
                *o += sv.conj() * hv;
            }
        }
    });
    SpatialBasis::new(s.nx(), s.ny(), order, out)
}

/// A^H A with the operator order exchanged: S^H F^H (V^H M V) F S, so the
/// DFT stage runs on L basis images instead of T frames. The mask
/// contraction still expands each k-space location to its sampled time
/// points and back.
pub fn normal_exchanged(
    u: &SpatialBasis,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    mask: &KtMask,
    fft: &FftEngine,
) -> Result<SpatialBasis> {
    check_encode_dims(u, v, s, mask)?;
    check_grid(fft, u.nx(), u.ny())?;
    let (nx, ny, n) = (u.nx(), u.ny(), u.n());
    let (coils, order) = (s.coils(), u.order());

    let g = basis_kspace(u, s, fft);
    let sampled: Vec<Vec<usize>> = (0..ny).map(|ky| mask.sampled_times(ky)).collect();

    // per (coil, ky) row: expand to sampled time points, contract back
    let rows = exec::map_indexed(coils * ny, |idx| {
        let j = idx / ny;
        let ky = idx % ny;
        let times = &sampled[ky];
        let base = ky * nx;
        let mut row = vec![Complex64::new(0.0, 0.0); order * nx];
        let mut expanded = vec![Complex64::new(0.0, 0.0); times.len()];
        for kx in 0..nx {
            let k = base + kx;
            for (a, &t) in expanded.iter_mut().zip(times.iter()) {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..order {
                    acc += g[(j * order + l) * n + k] * v.at(l, t);
                }
                *a = acc;
            }
            for lp in 0..order {
                let mut acc = Complex64::new(0.0, 0.0);
                for (&a, &t) in expanded.iter().zip(times.iter()) {
                    acc += a * v.at(lp, t).conj();
                }
                row[lp * nx + kx] = acc;
            }
        }
        row
    });

    let mut h = vec![Complex64::new(0.0, 0.0); coils * order * n];
    for j in 0..coils {
        for ky in 0..ny {
            let row = &rows[j * ny + ky];
            for l in 0..order {
                let dst = (j * order + l) * n + ky * nx;
                h[dst..dst + nx].copy_from_slice(&row[l * nx..(l + 1) * nx]);
            }
        }
    }
    basis_image_sum(h, s, order, fft)
}

// ---------------------------------------------------------------------------
// merged mask-contraction operator
// ---------------------------------------------------------------------------

/// The merged mask-contraction kernel: one Hermitian PSD L x L block per
/// distinct phase-encode row pattern, with a ky -> block index map.
/// Identical (ky, t) patterns share a block, so Cartesian masks store at most
/// Ny blocks instead of one per spatial location.
#[derive(Debug, Clone)]
pub struct PhiOperator {
    order: usize,
    frames: usize,
    blocks: Vec<Complex64>,
    row_index: Vec<usize>,
}

impl PhiOperator {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn ny(&self) -> usize {
        self.row_index.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len() / (self.order * self.order)
    }

    /// Block id for phase-encode row `ky`.
    pub fn row_index(&self) -> &[usize] {
        &self.row_index
    }

    /// Row-major L x L block with the given id.
    pub fn block(&self, id: usize) -> &[Complex64] {
        let sz = self.order * self.order;
        &self.blocks[id * sz..(id + 1) * sz]
    }

    pub fn block_for_row(&self, ky: usize) -> &[Complex64] {
        self.block(self.row_index[ky])
    }

    /// Applies the block for row `ky` to a coefficient row vector:
    /// out = g * B. Returns the number of complex multiply-adds spent.
    pub fn apply_row(&self, ky: usize, g: &[Complex64], out: &mut [Complex64]) -> u64 {
        let l = self.order;
        let b = self.block_for_row(ky);
        for (lp, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (gl, brow) in g.iter().zip(b.chunks_exact(l)) {
                acc += gl * brow[lp];
            }
            *o = acc;
        }
        (l * l) as u64
    }
}

/// Builds the merged operator: for each distinct mask row pattern m,
/// block = V * diag(m) * V^H, deduplicated across identical ky rows.
pub fn build_phi(v: &TemporalBasis, mask: &KtMask) -> Result<PhiOperator> {
    check_dim("frames", v.frames(), mask.frames())?;
    if mask.ny() == 0 {
        return Err(Error::invalid("mask has no phase-encode rows"));
    }
    let order = v.order();
    let sz = order * order;

    let mut patterns: std::collections::HashMap<&[bool], usize> = std::collections::HashMap::new();
    let mut blocks: Vec<Complex64> = Vec::new();
    let mut row_index = vec![0usize; mask.ny()];
    for ky in 0..mask.ny() {
        let row = mask.row(ky);
        let id = *patterns.entry(row).or_insert_with(|| {
            let mut block = vec![Complex64::new(0.0, 0.0); sz];
            for a in 0..order {
                // diagonal entry is a real sum of squared magnitudes
                let mut diag = 0.0f64;
                for (t, &m) in row.iter().enumerate() {
                    if m {
                        diag += v.at(a, t).norm_sqr();
                    }
                }
                block[a * order + a] = Complex64::new(diag, 0.0);
                for b in (a + 1)..order {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (t, &m) in row.iter().enumerate() {
                        if m {
                            acc += v.at(a, t) * v.at(b, t).conj();
                        }
                    }
                    block[a * order + b] = acc;
                    block[b * order + a] = acc.conj();
                }
            }
            blocks.extend_from_slice(&block);
            blocks.len() / sz - 1
        });
        row_index[ky] = id;
    }

    Ok(PhiOperator {
        order,
        frames: v.frames(),
        blocks,
        row_index,
    })
}

/// A^H A with the mask contraction merged into the precomputed Phi blocks:
/// S^H F^H Phi F S. Only L-frame transforms are performed and the
/// contraction stage costs L^2 multiply-adds per k-space location,
/// independent of T.
pub fn normal_reduced(
    u: &SpatialBasis,
    phi: &PhiOperator,
    s: &CoilSensitivities,
    fft: &FftEngine,
) -> Result<SpatialBasis> {
    normal_reduced_counted(u, phi, s, fft).map(|(out, _)| out)
}

/// Same as [`normal_reduced`] but also reports the number of complex
/// multiply-adds spent in the mask-contraction stage.
pub fn normal_reduced_counted(
    u: &SpatialBasis,
    phi: &PhiOperator,
    s: &CoilSensitivities,
    fft: &FftEngine,
) -> Result<(SpatialBasis, u64)> {
    check_dim("model order", u.order(), phi.order())?;
    check_dim("ny", u.ny(), phi.ny())?;
    check_dim("nx", u.nx(), s.nx())?;
    check_dim("ny", u.ny(), s.ny())?;
    check_grid(fft, u.nx(), u.ny())?;
    let (nx, ny, n) = (u.nx(), u.ny(), u.n());
    let (coils, order) = (s.coils(), u.order());

    let g = basis_kspace(u, s, fft);

    let rows = exec::map_indexed(coils * ny, |idx| {
        let j = idx / ny;
        let ky = idx % ny;
        let base = ky * nx;
        let mut row = vec![Complex64::new(0.0, 0.0); order * nx];
        let mut gv = vec![Complex64::new(0.0, 0.0); order];
        let mut ov = vec![Complex64::new(0.0, 0.0); order];
        let mut count = 0u64;
        for kx in 0..nx {
            let k = base + kx;
            for (l, gl) in gv.iter_mut().enumerate() {
                *gl = g[(j * order + l) * n + k];
            }
            count += phi.apply_row(ky, &gv, &mut ov);
            for (lp, &o) in ov.iter().enumerate() {
                row[lp * nx + kx] = o;
            }
        }
        (row, count)
    });

    let mut h = vec![Complex64::new(0.0, 0.0); coils * order * n];
    let mut contraction_madds = 0u64;
    for j in 0..coils {
        for ky in 0..ny {
            let (row, count) = &rows[j * ny + ky];
            contraction_madds += count;
            for l in 0..order {
                let dst = (j * order + l) * n + ky * nx;
                h[dst..dst + nx].copy_from_slice(&row[l * nx..(l + 1) * nx]);
            }
        }
    }
    let out = basis_image_sum(h, s, order, fft)?;
    Ok((out, contraction_madds))
}

// ---------------------------------------------------------------------------
// temporal regularization kernel
// ---------------------------------------------------------------------------

/// Forward difference along time: column t of the result is X[:, t+1] - X[:, t].
/// Empty (zero frames) when T <= 1.
pub fn temporal_difference(x: &CasoratiImage) -> CasoratiImage {
    let frames = x.frames();
    if frames <= 1 {
        return CasoratiImage::zeros(x.nx(), x.ny(), 0);
    }
    let n = x.n();
    let mut out = CasoratiImage::zeros(x.nx(), x.ny(), frames - 1);
    exec::fill_chunks(out.data_mut(), n, |t, frame| {
        let next = x.frame(t + 1);
        let cur = x.frame(t);
        for ((o, &a), &b) in frame.iter_mut().zip(next.iter()).zip(cur.iter()) {
            *o = a - b;
        }
    });
    out
}

/// Temporal-difference Gram matrix Psi = (V D^T)(V D^T)^H, the L x L
/// regularization kernel. Zero when T = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMatrix {
    order: usize,
    data: Vec<Complex64>,
}

impl PsiMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Row-major L x L entries.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, a: usize, b: usize) -> Complex64 {
        self.data[a * self.order + b]
    }

    /// Right-multiplication U * Psi, the gradient of the temporal-difference
    /// penalty (1/2)||(U V) D^T||_F^2 with respect to U.
    pub fn apply_right(&self, u: &SpatialBasis) -> Result<SpatialBasis> {
        check_dim("model order", u.order(), self.order)?;
        let n = u.n();
        let order = self.order;
        let mut out = vec![Complex64::new(0.0, 0.0); order * n];
        exec::fill_chunks(&mut out, n, |lp, chunk| {
            for l in 0..order {
                let w = self.at(l, lp);
                if w == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (o, &uv) in chunk.iter_mut().zip(u.basis_image(l).iter()) {
                    *o += uv * w;
                }
            }
        });
        SpatialBasis::new(u.nx(), u.ny(), order, out)
    }
}

/// Builds Psi from the temporal basis using the (T-1) x T forward-difference
/// matrix, no wraparound.
pub fn build_psi(v: &TemporalBasis) -> PsiMatrix {
    let order = v.order();
    let frames = v.frames();
    let mut data = vec![Complex64::new(0.0, 0.0); order * order];
    if frames > 1 {
        let dv: Vec<Complex64> = (0..order)
            .flat_map(|l| (0..frames - 1).map(move |t| v.at(l, t + 1) - v.at(l, t)))
            .collect();
        let w = frames - 1;
        for a in 0..order {
            let mut diag = 0.0f64;
            for t in 0..w {
                diag += dv[a * w + t].norm_sqr();
            }
            data[a * order + a] = Complex64::new(diag, 0.0);
            for b in (a + 1)..order {
                let mut acc = Complex64::new(0.0, 0.0);
                for t in 0..w {
                    acc += dv[a * w + t] * dv[b * w + t].conj();
                }
                data[a * order + b] = acc;
                data[b * order + a] = acc.conj();
            }
        }
    }
    PsiMatrix { order, data }
}

// ---------------------------------------------------------------------------
// spectral norm estimation
// ---------------------------------------------------------------------------

/// Power-iteration estimate of the largest eigenvalue of a Hermitian PSD
/// map on spatial bases. The Rayleigh quotient of the iterates is monotone
/// nondecreasing, so more iterations never overshoot. Deterministically
/// re-seeds if the operator annihilates the start vector.
pub fn operator_norm_estimate<F>(nx: usize, ny: usize, order: usize, iters: usize, apply: F) -> f64
where
    F: Fn(&SpatialBasis) -> SpatialBasis,
{
    const SEED: u64 = 0x7073_7274_6e6f_726d;
    for attempt in 0..4 {
        let mut rng = ChaCha12Rng::seed_from_u64(SEED.wrapping_add(attempt));
        let mut data: Vec<Complex64> = (0..nx * ny * order)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let norm = nrm2(&data);
        if norm == 0.0 {
            continue;
        }
        for d in data.iter_mut() {
            *d /= norm;
        }
        let mut x = SpatialBasis::new(nx, ny, order, data).expect("norm estimate shape");
        let mut rho = 0.0f64;
        let mut annihilated = false;
        for _ in 0..iters {
            let y = apply(&x);
            rho = dot(x.data(), y.data()).re.max(0.0);
            let ynorm = nrm2(y.data());
            if ynorm == 0.0 {
                annihilated = true;
                break;
            }
            let mut ydata = y.into_data();
            for d in ydata.iter_mut() {
                *d /= ynorm;
            }
            x = SpatialBasis::new(nx, ny, order, ydata).expect("norm estimate shape");
        }
        if !annihilated {
            return rho;
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_engine() -> FftEngine {
        FftEngine::new(4, 4)
    }

    fn orthonormal_basis(order: usize, frames: usize, seed: u64) -> TemporalBasis {
        // random rows orthonormalized by modified Gram-Schmidt
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<Complex64>> = (0..order)
            .map(|_| {
                (0..frames)
                    .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                    .collect()
            })
            .collect();
        for l in 0..order {
            for prev in 0..l {
                let proj = dot(&rows[prev], &rows[l]);
                let prev_row = rows[prev].clone();
                for (r, p) in rows[l].iter_mut().zip(prev_row.iter()) {
                    *r -= proj * p;
                }
            }
            let norm = nrm2(&rows[l]);
            for r in rows[l].iter_mut() {
                *r /= norm;
            }
        }
        TemporalBasis::new(order, frames, rows.concat()).unwrap()
    }

    #[test]
    fn forward_zero_input_zero_output() {
        let fft = small_engine();
        let u = SpatialBasis::zeros(4, 4, 2);
        let v = orthonormal_basis(2, 6, 3);
        let s = CoilSensitivities::uniform(4, 4);
        let mask = KtMask::full(4, 6);
        let y = forward_encode(&u, &v, &s, &mask, &fft).unwrap();
        assert!(y.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn forward_identity_subspace_is_per_frame_dft() {
        // L = T, V = I, J = 1, S = 1, full mask: output is the 2D DFT of each column of U
        let fft = small_engine();
        let frames = 3;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let data: Vec<Complex64> = (0..16 * frames)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let u = SpatialBasis::new(4, 4, frames, data.clone()).unwrap();
        let v = TemporalBasis::identity(frames);
        let s = CoilSensitivities::uniform(4, 4);
        let mask = KtMask::full(4, frames);
        let y = forward_encode(&u, &v, &s, &mask, &fft).unwrap();
        for t in 0..frames {
            let mut want = data[t * 16..(t + 1) * 16].to_vec();
            fft.fft2(&mut want);
            for (a, b) in y.plane(0, t).iter().zip(want.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_zero_is_zero() {
        let fft = small_engine();
        let v = orthonormal_basis(2, 5, 4);
        let s = CoilSensitivities::uniform(4, 4);
        let mask = KtMask::full(4, 5);
        let y = MultiCoilKspace::zeros(1, 4, 4, 5, mask).unwrap();
        let u = adjoint_encode(&y, &v, &s, &fft).unwrap();
        assert!(u.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn full_sampling_normal_is_identity() {
        // full mask, orthonormal V, RSS-1 S, unitary F: A^H A = I
        let fft = small_engine();
        let v = orthonormal_basis(3, 8, 5);
        let s = CoilSensitivities::uniform(4, 4);
        let mask = KtMask::full(4, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let data: Vec<Complex64> = (0..16 * 3)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let u = SpatialBasis::new(4, 4, 3, data).unwrap();
        let out = normal_naive(&u, &v, &s, &mask, &fft).unwrap();
        let err = crate::linalg::rel_err(out.data(), u.data());
        assert!(err < 1e-10, "rel err {err}");
    }

    #[test]
    fn phi_full_row_is_identity_and_empty_row_is_zero() {
        let v = orthonormal_basis(3, 8, 7);
        // ky=0 fully sampled, ky=1 never sampled, ky=2..3 sampled at t=0 to
        // keep every frame nonempty
        let mut rows = vec![false; 4 * 8];
        for t in 0..8 {
            rows[t] = true; // ky = 0
        }
        for t in 0..8 {
            rows[2 * 8 + t] = true; // ky = 2: full as well (hosts all frames)
        }
        let mask = KtMask::new(4, 8, rows).unwrap();
        let phi = build_phi(&v, &mask).unwrap();
        let b_full = phi.block_for_row(0);
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((b_full[a * 3 + b] - want).norm() < 1e-10);
            }
        }
        let b_zero = phi.block_for_row(1);
        assert!(b_zero.iter().all(|z| z.norm() == 0.0));
        // deduplication: rows 0 and 2 share a pattern
        assert_eq!(phi.row_index()[0], phi.row_index()[2]);
        assert_eq!(phi.n_blocks(), 2);
    }

    #[test]
    fn phi_block_matches_expand_mask_contract() {
        // block applied to a row vector equals (m .* (u * V)) * V^H
        let order = 3;
        let frames = 8;
        let v = orthonormal_basis(order, frames, 9);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut rows = vec![false; frames];
        for r in rows.iter_mut() {
            *r = rng.gen::<f64>() < 0.5;
        }
        rows[0] = true; // frame coverage
        let mask_rows: Vec<bool> = rows.clone();
        let mask = KtMask::new(1, frames, mask_rows).unwrap();
        let phi = build_phi(&v, &mask).unwrap();
        for _ in 0..20 {
            let g: Vec<Complex64> = (0..order)
                .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let mut got = vec![Complex64::new(0.0, 0.0); order];
            phi.apply_row(0, &g, &mut got);
            // oracle: expand, mask, contract
            let mut want = vec![Complex64::new(0.0, 0.0); order];
            for lp in 0..order {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &m) in rows.iter().enumerate() {
                    if m {
                        let mut a = Complex64::new(0.0, 0.0);
                        for l in 0..order {
                            a += g[l] * v.at(l, t);
                        }
                        acc += a * v.at(lp, t).conj();
                    }
                }
                want[lp] = acc;
            }
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn temporal_difference_cases() {
        // constant in time -> zeros
        let n = 4;
        let frames = 5;
        let base: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let mut data = Vec::new();
        for _ in 0..frames {
            data.extend_from_slice(&base);
        }
        let x = CasoratiImage::new(2, 2, frames, data).unwrap();
        let d = temporal_difference(&x);
        assert_eq!(d.frames(), frames - 1);
        assert!(d.data().iter().all(|z| z.norm() == 0.0));

        // T = 1 -> empty
        let x1 = CasoratiImage::zeros(2, 2, 1);
        assert_eq!(temporal_difference(&x1).frames(), 0);

        // linear ramp X[:, t] = t * c -> every column equals c
        let c: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0 + i as f64, -0.5)).collect();
        let mut ramp = Vec::new();
        for t in 0..frames {
            ramp.extend(c.iter().map(|&v| v * t as f64));
        }
        let xr = CasoratiImage::new(2, 2, frames, ramp).unwrap();
        let dr = temporal_difference(&xr);
        for t in 0..frames - 1 {
            for (a, b) in dr.frame(t).iter().zip(c.iter()) {
                assert!((a - b).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn psi_single_frame_is_zero() {
        let v = TemporalBasis::new(1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap();
        let psi = build_psi(&v);
        assert!(psi.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn psi_constant_row_annihilated() {
        // one constant row, one oscillating row
        let frames = 6;
        let c = Complex64::new(1.0 / (frames as f64).sqrt(), 0.0);
        let mut data = vec![c; frames];
        for t in 0..frames {
            data.push(Complex64::new(if t % 2 == 0 { 0.4 } else { -0.4 }, 0.1 * t as f64));
        }
        let v = TemporalBasis::new(2, frames, data).unwrap();
        let psi = build_psi(&v);
        assert!(psi.at(0, 0).norm() < 1e-14);
        assert!(psi.at(0, 1).norm() < 1e-14);
        assert!(psi.at(1, 0).norm() < 1e-14);
        assert!(psi.at(1, 1).norm() > 0.0);
    }

    #[test]
    fn norm_estimate_identity_and_diagonal() {
        let id = operator_norm_estimate(2, 2, 1, 10, |x| x.clone());
        assert!((id - 1.0).abs() < 1e-6);

        // diagonal map scaling each basis image: eigenvalues {3, 2, 1}
        let scales = [3.0, 2.0, 1.0];
        let rho = operator_norm_estimate(2, 2, 3, 50, |x| {
            let mut out = x.clone();
            let n = x.n();
            for (l, &sc) in scales.iter().enumerate() {
                for v in out.data_mut()[l * n..(l + 1) * n].iter_mut() {
                    *v *= sc;
                }
            }
            out
        });
        assert!((rho - 3.0).abs() < 1e-4, "rho {rho}");
    }

    #[test]
    fn norm_estimate_monotone_in_iterations() {
        let scales = [2.5, 1.0, 0.3];
        let apply = |x: &SpatialBasis| {
            let mut out = x.clone();
            let n = x.n();
            for (l, &sc) in scales.iter().enumerate() {
                for v in out.data_mut()[l * n..(l + 1) * n].iter_mut() {
                    *v *= sc;
                }
            }
            out
        };
        let mut last = 0.0;
        for iters in 1..20 {
            let rho = operator_norm_estimate(2, 2, 3, iters, apply);
            assert!(rho >= last - 1e-12, "iteration {iters}: {rho} < {last}");
            last = rho;
        }
    }
}
