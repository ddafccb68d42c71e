//! End-to-end reconstruction pipeline: coil compression, normalization,
//! temporal-basis extraction, sensitivity estimation, solver dispatch, and
//! metric computation.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec;
use crate::fft::FftEngine;
use crate::metrics::{nrmse, psnr, ssim, MetricsRecord};
use crate::simulator::SimulatedDataset;
use crate::solvers::{reconstruct, ReconConfig, SolveReport};
use crate::subspace::extract_temporal_basis;
use crate::types::{CasoratiImage, CoilSensitivities, MultiCoilKspace};

/// Where the solver's coil sensitivity maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivitySource {
    /// Estimate from the time-averaged sampled k-space (the default).
    Estimate,
    /// Use the maps carried by the dataset. Skips coil compression, since
    /// mixed virtual coils would no longer match the stored maps.
    DatasetTruth,
}

/// Pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub recon: ReconConfig,
    /// Compressed coil count.
    pub coils_out: usize,
    pub compute_metrics: bool,
    pub sens_source: SensitivitySource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            recon: ReconConfig::default(),
            coils_out: 6,
            compute_metrics: true,
            sens_source: SensitivitySource::Estimate,
        }
    }
}

/// Coil-space mixing produced by compression: data maps through `mixing`
/// (coils x coils_out) and `energy_retained` reports the kept fraction of
/// total signal energy.
#[derive(Debug, Clone)]
pub struct CoilCompression {
    pub coils_in: usize,
    pub coils_out: usize,
    pub mixing: Vec<Complex64>,
    pub energy_retained: f64,
}

/// Global SVD coil compression: the sampled k-space samples form a
/// (samples x J) matrix whose top right-singular directions define the
/// virtual coils. Implemented through the J x J Gram matrix.
pub fn compress_coils(
    y: &MultiCoilKspace,
    coils_out: usize,
) -> Result<(MultiCoilKspace, CoilCompression)> {
    let coils = y.coils();
    if coils_out == 0 || coils_out > coils {
        return Err(Error::shape("coils", coils, coils_out));
    }
    let n = y.nx() * y.ny();
    let frames = y.frames();

    // Gram matrix over all samples (unsampled entries are zero and
    // contribute nothing)
    let mut gram = DMatrix::<Complex64>::zeros(coils, coils);
    for a in 0..coils {
        for b in a..coils {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..frames {
                let pa = y.plane(a, t);
                let pb = y.plane(b, t);
                for (za, zb) in pa.iter().zip(pb.iter()) {
                    acc += za.conj() * zb;
                }
            }
            gram[(a, b)] = acc;
            gram[(b, a)] = acc.conj();
        }
    }

    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut idx: Vec<usize> = (0..coils).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let total: f64 = eig.eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    let kept: f64 = idx
        .iter()
        .take(coils_out)
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .sum();
    let energy_retained = if total > 0.0 { kept / total } else { 1.0 };

    let mut mixing = vec![Complex64::new(0.0, 0.0); coils * coils_out];
    for (c, &i) in idx.iter().take(coils_out).enumerate() {
        for j in 0..coils {
            mixing[j * coils_out + c] = eig.eigenvectors[(j, i)];
        }
    }

    let mut data = vec![Complex64::new(0.0, 0.0); coils_out * frames * n];
    exec::fill_chunks(&mut data, n, |p, plane| {
        let c = p / frames;
        let t = p % frames;
        for j in 0..coils {
            let w = mixing[j * coils_out + c];
            for (o, &z) in plane.iter_mut().zip(y.plane(j, t).iter()) {
                *o += z * w;
            }
        }
    });
    let compressed = MultiCoilKspace::new(coils_out, y.nx(), y.ny(), frames, data, y.mask().clone())?;
    Ok((
        compressed,
        CoilCompression {
            coils_in: coils,
            coils_out,
            mixing,
            energy_retained,
        },
    ))
}

/// Scales the data so its maximum magnitude is 1; returns the scale for
/// un-normalizing outputs.
pub fn normalize(y: &MultiCoilKspace) -> Result<(MultiCoilKspace, f64)> {
    let scale = y.max_abs();
    if scale == 0.0 {
        return Err(Error::invalid("cannot normalize all-zero data"));
    }
    let mut scaled = y.clone();
    let inv = Complex64::new(1.0 / scale, 0.0);
    scaled.scale(inv);
    Ok((scaled, scale))
}

/// Estimates coil sensitivity maps from the time-averaged sampled k-space:
/// per coil, sampled lines are averaged over the frames where they were
/// acquired, inverse-transformed, and divided by the root-sum-of-squares
/// image (zeroed where the RSS falls below 1e-8 of its maximum).
pub fn estimate_sensitivities(y: &MultiCoilKspace, fft: &FftEngine) -> Result<CoilSensitivities> {
    let (nx, ny, n) = (y.nx(), y.ny(), y.nx() * y.ny());
    let coils = y.coils();
    let mask = y.mask();

    let counts: Vec<usize> = (0..ny).map(|ky| mask.sampled_times(ky).len()).collect();
    if let Some(ky) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "phase-encode line {ky} is never sampled; cannot average over time"
        )));
    }

    let mut imgs = vec![Complex64::new(0.0, 0.0); coils * n];
    exec::fill_chunks(&mut imgs, n, |j, avg| {
        for t in 0..y.frames() {
            let plane = y.plane(j, t);
            for ky in 0..ny {
                if mask.is_sampled(ky, t) {
                    for (o, &z) in avg[ky * nx..(ky + 1) * nx]
                        .iter_mut()
                        .zip(plane[ky * nx..(ky + 1) * nx].iter())
                    {
                        *o += z;
                    }
                }
            }
        }
        for ky in 0..ny {
            let c = counts[ky] as f64;
            for o in avg[ky * nx..(ky + 1) * nx].iter_mut() {
                *o /= c;
            }
        }
        fft.ifft2(avg);
    });

    let mut rss = vec![0.0f64; n];
    for j in 0..coils {
        for (r, z) in rss.iter_mut().zip(imgs[j * n..(j + 1) * n].iter()) {
            *r += z.norm_sqr();
        }
    }
    for r in rss.iter_mut() {
        *r = r.sqrt();
    }
    let max_rss = rss.iter().copied().fold(0.0, f64::max);
    let threshold = 1e-8 * max_rss;
    for j in 0..coils {
        for (z, &r) in imgs[j * n..(j + 1) * n].iter_mut().zip(rss.iter()) {
            if r < threshold {
                *z = Complex64::new(0.0, 0.0);
            } else {
                *z /= r;
            }
        }
    }
    CoilSensitivities::new(coils, nx, ny, imgs)
}

/// Runs the full reconstruction pipeline on a dataset. Metrics are computed
/// against `reference` when given, otherwise against the dataset's own
/// ground truth, and only when `config.compute_metrics` is set.
pub fn run_recon(
    dataset: &SimulatedDataset,
    config: &PipelineConfig,
    reference: Option<&CasoratiImage>,
) -> Result<(CasoratiImage, Option<MetricsRecord>, SolveReport)> {
    config.recon.validate()?;
    let coils_in = dataset.kspace.coils();
    if config.coils_out == 0 || config.coils_out > coils_in {
        return Err(Error::shape("coils", coils_in, config.coils_out).in_stage("compress"));
    }

    // coil compression (skipped when solving with the dataset's own maps)
    let (y, nav) = match config.sens_source {
        SensitivitySource::Estimate => {
            let (y, cc) = compress_coils(&dataset.kspace, config.coils_out)
                .map_err(|e| e.in_stage("compress"))?;
            let nav = dataset
                .nav
                .mix_coils(&cc.mixing, cc.coils_out)
                .map_err(|e| e.in_stage("compress"))?;
            (y, nav)
        }
        SensitivitySource::DatasetTruth => {
            if config.coils_out != coils_in {
                return Err(Error::invalid(
                    "dataset-truth sensitivities require coils_out = coils (compression would mix coils)",
                )
                .in_stage("compress"));
            }
            (dataset.kspace.clone(), dataset.nav.clone())
        }
    };

    let (y, scale) = normalize(&y).map_err(|e| e.in_stage("normalize"))?;

    let v = extract_temporal_basis(&nav, config.recon.order)
        .map_err(|e| e.in_stage("extract_temporal_basis"))?;

    let fft = FftEngine::new(y.nx(), y.ny());
    let sens = match config.sens_source {
        SensitivitySource::Estimate => estimate_sensitivities(&y, &fft)
            .map_err(|e| e.in_stage("estimate_sensitivities"))?,
        SensitivitySource::DatasetTruth => dataset.sens.clone(),
    };

    let (u, report) =
        reconstruct(&y, &v, &sens, &config.recon, &fft).map_err(|e| e.in_stage("solve"))?;

    let mut xhat = u.expand(&v).map_err(|e| e.in_stage("expand"))?;
    let scale_c = Complex64::new(scale, 0.0);
    for z in xhat.data_mut() {
        *z *= scale_c;
    }

    let metrics = if config.compute_metrics {
        let xref = reference.unwrap_or(&dataset.truth);
        let nkspc = dataset.mask.sampled_count() as f64 / dataset.mask.ny() as f64;
        Some(MetricsRecord {
            algorithm: config.recon.algorithm.to_string(),
            lambda: config.recon.lambda,
            nkspc,
            order: config.recon.order,
            nrmse: nrmse(&xhat, xref).map_err(|e| e.in_stage("metrics"))?,
            psnr_db: psnr(&xhat, xref).map_err(|e| e.in_stage("metrics"))?,
            ssim: ssim(&xhat, xref).map_err(|e| e.in_stage("metrics"))?,
            recon_seconds: report.wall_time,
        })
    } else {
        None
    };

    Ok((xhat, metrics, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate, PhantomSpec, SamplingSpec};

    fn tiny_dataset() -> SimulatedDataset {
        let phantom = PhantomSpec {
            nx: 12,
            ny: 12,
            frames: 24,
            heart_period: 8,
            resp_period: 12,
            n_objects: 2,
            seed: 42,
            rank_exact: None,
            cardiac_jitter: 0.1,
            resp_amplitude: 0.5,
        };
        let sampling = SamplingSpec {
            nkspc: 4,
            nav_interval: 3,
            lines_per_frame: 2,
            seed: 7,
        };
        simulate(&phantom, &sampling, 3, 0.0).unwrap()
    }

    #[test]
    fn normalize_round_trip() {
        let d = tiny_dataset();
        let (scaled, scale) = normalize(&d.kspace).unwrap();
        assert!((scaled.max_abs() - 1.0).abs() < 1e-12);
        for (a, b) in scaled.data().iter().zip(d.kspace.data().iter()) {
            assert!((a * scale - b).norm() <= 1e-15 * b.norm().max(1.0));
        }
        // already normalized: identity with scale 1
        let (again, s2) = normalize(&scaled).unwrap();
        assert!((s2 - 1.0).abs() < 1e-12);
        for (a, b) in again.data().iter().zip(scaled.data().iter()) {
            assert!((a - b).norm() < 1e-15);
        }
        // scaling input by 7 scales the reported factor by 7
        let mut scaled7 = d.kspace.clone();
        scaled7.scale(Complex64::new(7.0, 0.0));
        let (out7, s7) = normalize(&scaled7).unwrap();
        assert!((s7 / scale - 7.0).abs() < 1e-12);
        for (a, b) in out7.data().iter().zip(scaled.data().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        let d = tiny_dataset();
        let zero =
            MultiCoilKspace::zeros(1, d.kspace.nx(), d.kspace.ny(), d.kspace.frames(), d.mask.clone())
                .unwrap();
        assert!(normalize(&zero).is_err());
    }

    #[test]
    fn duplicate_coils_compress_losslessly() {
        let d = tiny_dataset();
        // stack the same coil twice
        let n = d.kspace.nx() * d.kspace.ny();
        let frames = d.kspace.frames();
        let mut data = Vec::new();
        data.extend_from_slice(&d.kspace.data()[..frames * n]);
        data.extend_from_slice(&d.kspace.data()[..frames * n]);
        let dup = MultiCoilKspace::new(
            2,
            d.kspace.nx(),
            d.kspace.ny(),
            frames,
            data,
            d.mask.clone(),
        )
        .unwrap();
        let (_, cc) = compress_coils(&dup, 1).unwrap();
        assert!(
            (cc.energy_retained - 1.0).abs() < 1e-12,
            "energy {}",
            cc.energy_retained
        );
    }

    #[test]
    fn compress_rejects_too_many_coils() {
        let d = tiny_dataset();
        assert!(compress_coils(&d.kspace, 4).is_err());
        assert!(compress_coils(&d.kspace, 0).is_err());
    }
}
