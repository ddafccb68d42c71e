//! Reconstruction solvers: conjugate gradient on the reduced normal
//! equations (unregularized and Tikhonov temporal-difference regularized)
//! and the x-f soft-thresholding POCS comparator.

use std::time::Instant;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec;
use crate::fft::{FftEngine, TimeFft};
use crate::linalg::{all_finite, axpy, dot, nrm2};
use crate::operators::{
    adjoint_encode, build_phi, build_psi, normal_reduced, operator_norm_estimate,
};
use crate::types::{CoilSensitivities, MultiCoilKspace, SpatialBasis, TemporalBasis};

/// Reconstruction algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Lsqr,
    Tikhonov,
    Xfl1,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsqr" => Ok(Algorithm::Lsqr),
            "tikhonov" => Ok(Algorithm::Tikhonov),
            "xfl1" => Ok(Algorithm::Xfl1),
            other => Err(Error::invalid(format!(
                "unknown algorithm `{other}` (expected lsqr, tikhonov or xfl1)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Algorithm::Lsqr => "lsqr",
            Algorithm::Tikhonov => "tikhonov",
            Algorithm::Xfl1 => "xfl1",
        };
        f.write_str(name)
    }
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct ReconConfig {
    pub algorithm: Algorithm,
    /// Regularization weight; interpreted on unit-normalized data.
    pub lambda: f64,
    /// Model order L of the temporal subspace.
    pub order: usize,
    pub max_iters: usize,
    /// Relative-residual stopping threshold.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            algorithm: Algorithm::Tikhonov,
            lambda: 2e-2,
            order: 20,
            max_iters: 50,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.order == 0 {
            return Err(Error::invalid("model order must be at least 1"));
        }
        Ok(())
    }
}

/// Per-solve diagnostics. The traces hold one entry per iteration;
/// `objective_trace` stores the quadratic-form objective for CG and a
/// data-consistency + L1 surrogate for POCS.
#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub wall_time: f64,
    pub residual_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub time_trace: Vec<f64>,
}

impl SolveReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,residual,objective,seconds\n");
        for k in 0..self.residual_trace.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                k + 1,
                self.residual_trace[k],
                self.objective_trace[k],
                self.time_trace[k],
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        crate::fsio::write_atomic(path, self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Conjugate gradient for Hermitian positive semidefinite systems, from zero
/// initialization. Stops when the relative residual drops to `tol` or after
/// `max_iters` iterations.
pub fn solve_cg<F>(
    apply_system: F,
    rhs: &SpatialBasis,
    tol: f64,
    max_iters: usize,
) -> Result<(SpatialBasis, SolveReport)>
where
    F: Fn(&SpatialBasis) -> Result<SpatialBasis>,
{
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    if !all_finite(rhs.data()) {
        return Err(Error::invalid("right-hand side contains non-finite values"));
    }

    let t0 = Instant::now();
    let (nx, ny, order) = (rhs.nx(), rhs.ny(), rhs.order());
    let mut x = SpatialBasis::zeros(nx, ny, order);
    let mut hx = vec![Complex64::new(0.0, 0.0); x.data().len()];
    let mut r = rhs.data().to_vec();
    let mut p = rhs.clone();
    let mut rs = r.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let b_norm = rs.sqrt();
    let mut report = SolveReport::default();

    if b_norm == 0.0 {
        report.wall_time = t0.elapsed().as_secs_f64();
        return Ok((x, report));
    }

    for k in 0..max_iters {
        let ap = apply_system(&p)?;
        let denom = dot(p.data(), ap.data()).re;
        if !denom.is_finite() {
            return Err(Error::NonFinite {
                stage: "cg curvature",
                iteration: k,
            });
        }
        if denom <= 0.0 {
            // search direction carries no energy; nothing left to solve
            break;
        }
        let alpha = rs / denom;
        axpy(Complex64::new(alpha, 0.0), p.data(), x.data_mut());
        axpy(Complex64::new(alpha, 0.0), ap.data(), &mut hx);
        axpy(Complex64::new(-alpha, 0.0), ap.data(), &mut r);
        let rs_new = r.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if !rs_new.is_finite() {
            return Err(Error::NonFinite {
                stage: "cg residual",
                iteration: k,
            });
        }
        let rel = rs_new.sqrt() / b_norm;
        let objective = 0.5 * dot(x.data(), &hx).re - dot(rhs.data(), x.data()).re;
        report.residual_trace.push(rel);
        report.objective_trace.push(objective);
        report.time_trace.push(t0.elapsed().as_secs_f64());
        report.iterations = k + 1;
        if rel <= tol {
            break;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        let mut p_data = p.into_data();
        for (pv, rv) in p_data.iter_mut().zip(r.iter()) {
            *pv = rv + *pv * beta;
        }
        p = SpatialBasis::new(nx, ny, order, p_data)?;
    }

    report.final_residual = report.residual_trace.last().copied().unwrap_or(0.0);
    report.wall_time = t0.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Unregularized least-squares reconstruction: CG on A^H A U = A^H y using
/// the reduced normal operator.
pub fn recon_lsqr(
    data: &MultiCoilKspace,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    config: &ReconConfig,
    fft: &FftEngine,
) -> Result<(SpatialBasis, SolveReport)> {
    config.validate()?;
    let phi = build_phi(v, data.mask())?;
    let rhs = adjoint_encode(data, v, s, fft)?;
    solve_cg(
        |u| normal_reduced(u, &phi, s, fft),
        &rhs,
        config.tol,
        config.max_iters,
    )
}

/// Tikhonov temporal-difference reconstruction: CG on
/// (A^H A + lambda * Psi) U = A^H y. lambda = 0 reduces exactly to
/// [`recon_lsqr`].
pub fn recon_tikhonov(
    data: &MultiCoilKspace,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    config: &ReconConfig,
    fft: &FftEngine,
) -> Result<(SpatialBasis, SolveReport)> {
    config.validate()?;
    let phi = build_phi(v, data.mask())?;
    let psi = build_psi(v);
    let rhs = adjoint_encode(data, v, s, fft)?;
    let lambda = config.lambda;
    solve_cg(
        |u| {
            let mut out = normal_reduced(u, &phi, s, fft)?;
            if lambda > 0.0 {
                let reg = psi.apply_right(u)?;
                axpy(Complex64::new(lambda, 0.0), reg.data(), out.data_mut());
            }
            Ok(out)
        },
        &rhs,
        config.tol,
        config.max_iters,
    )
}

/// Complex soft-thresholding: z -> z * max(|z| - tau, 0) / |z|, with zero
/// staying zero. `tau` must be nonnegative.
pub fn soft_threshold_complex(z: &[Complex64], tau: f64) -> Vec<Complex64> {
    assert!(tau >= 0.0, "threshold must be nonnegative");
    z.iter().map(|&v| soft_threshold_one(v, tau)).collect()
}

#[inline]
fn soft_threshold_one(z: Complex64, tau: f64) -> Complex64 {
    let mag = z.norm();
    if mag <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        z * ((mag - tau) / mag)
    }
}

/// Expands U * V into location-major storage: row i holds the T time samples
/// of location i. This keeps the per-location temporal FFTs contiguous.
fn expand_location_major(u: &SpatialBasis, v: &TemporalBasis) -> Vec<Complex64> {
    let n = u.n();
    let frames = v.frames();
    let order = u.order();
    let mut out = vec![Complex64::new(0.0, 0.0); n * frames];
    exec::fill_chunks(&mut out, frames, |i, row| {
        for l in 0..order {
            let coeff = u.at(i, l);
            for (t, o) in row.iter_mut().enumerate() {
                *o += coeff * v.at(l, t);
            }
        }
    });
    out
}

/// Contracts location-major data against V^H: U = X * V^H.
fn contract_location_major(
    z: &[Complex64],
    v: &TemporalBasis,
    nx: usize,
    ny: usize,
) -> Result<SpatialBasis> {
    let n = nx * ny;
    let frames = v.frames();
    let order = v.order();
    debug_assert_eq!(z.len(), n * frames);
    let mut out = vec![Complex64::new(0.0, 0.0); order * n];
    exec::fill_chunks(&mut out, n, |l, chunk| {
        for (i, o) in chunk.iter_mut().enumerate() {
            let row = &z[i * frames..(i + 1) * frames];
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &zv) in row.iter().enumerate() {
                acc += zv * v.at(l, t).conj();
            }
            *o = acc;
        }
    });
    SpatialBasis::new(nx, ny, order, out)
}

/// x-f sparse reconstruction by POCS: a gradient step on the data term with
/// step 0.99 / ||A^H A||, followed by complex soft thresholding in the
/// temporal Fourier domain and re-projection onto the subspace. Runs
/// `max_iters` iterations or until the relative iterate change drops
/// below `tol`.
pub fn recon_xfl1_pocs(
    data: &MultiCoilKspace,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    config: &ReconConfig,
    fft: &FftEngine,
) -> Result<(SpatialBasis, SolveReport)> {
    config.validate()?;
    let t0 = Instant::now();
    let phi = build_phi(v, data.mask())?;
    let rhs = adjoint_encode(data, v, s, fft)?;
    let (nx, ny, order) = (rhs.nx(), rhs.ny(), rhs.order());
    let n = nx * ny;
    let frames = v.frames();
    let lambda = config.lambda;

    let rho = operator_norm_estimate(nx, ny, order, 30, |u| {
        normal_reduced(u, &phi, s, fft).expect("normal operator application")
    });
    let gamma = if rho > 0.0 { 0.99 / rho } else { 1.0 };

    let time_fft = TimeFft::new(frames);
    let rhs_norm = nrm2(rhs.data()).max(f64::MIN_POSITIVE);
    let y_norm_sq: f64 = data.data().iter().map(|z| z.norm_sqr()).sum();

    let mut u = SpatialBasis::zeros(nx, ny, order);
    let mut report = SolveReport::default();

    for k in 0..config.max_iters {
        let au = normal_reduced(&u, &phi, s, fft)?;
        if !all_finite(au.data()) {
            return Err(Error::NonFinite {
                stage: "pocs gradient",
                iteration: k,
            });
        }
        let data_term = 0.5
            * (dot(u.data(), au.data()).re - 2.0 * dot(rhs.data(), u.data()).re + y_norm_sq);
        let residual = {
            let mut g = au.data().to_vec();
            axpy(Complex64::new(-1.0, 0.0), rhs.data(), &mut g);
            nrm2(&g) / rhs_norm
        };

        // gradient step
        let mut stepped = u.clone();
        axpy(Complex64::new(-gamma, 0.0), au.data(), stepped.data_mut());
        axpy(Complex64::new(gamma, 0.0), rhs.data(), stepped.data_mut());

        // sparsity projection in the temporal Fourier domain
        let mut x = expand_location_major(&stepped, v);
        let mut l1_per_loc = vec![0.0f64; n];
        exec::for_each_chunk_pair_mut(&mut x, frames, &mut l1_per_loc, 1, |_, row, l1| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); time_fft.scratch_len()];
            time_fft.forward(row, &mut scratch);
            let mut acc = 0.0;
            for zv in row.iter_mut() {
                acc += zv.norm();
                *zv = soft_threshold_one(*zv, lambda);
            }
            l1[0] = acc;
            time_fft.inverse(row, &mut scratch);
        });
        let l1_total: f64 = l1_per_loc.iter().sum();
        let u_next = contract_location_major(&x, v, nx, ny)?;

        let change = {
            let mut d = u_next.data().to_vec();
            axpy(Complex64::new(-1.0, 0.0), u.data(), &mut d);
            nrm2(&d) / nrm2(u.data()).max(f64::MIN_POSITIVE)
        };
        u = u_next;

        report.residual_trace.push(residual);
        report.objective_trace.push(data_term + lambda * l1_total);
        report.time_trace.push(t0.elapsed().as_secs_f64());
        report.iterations = k + 1;
        if change <= config.tol {
            break;
        }
    }

    report.final_residual = report.residual_trace.last().copied().unwrap_or(0.0);
    report.wall_time = t0.elapsed().as_secs_f64();
    Ok((u, report))
}

/// Dispatches on the configured algorithm.
pub fn reconstruct(
    data: &MultiCoilKspace,
    v: &TemporalBasis,
    s: &CoilSensitivities,
    config: &ReconConfig,
    fft: &FftEngine,
) -> Result<(SpatialBasis, SolveReport)> {
    match config.algorithm {
        Algorithm::Lsqr => recon_lsqr(data, v, s, config, fft),
        Algorithm::Tikhonov => recon_tikhonov(data, v, s, config, fft),
        Algorithm::Xfl1 => recon_xfl1_pocs(data, v, s, config, fft),
    }
}
