//! Image-quality metrics against a reference dynamic image.
//!
//! All three metrics compare magnitude images, which makes them invariant to
//! the spatial phase gauge that coil-sensitivity normalization leaves behind.
//! Fixed definitions (so independent implementations can agree bit-for-bit):
//!
//! - nRMSE  = || |xhat| - |xref| ||_F / || xref ||_F over all pixels and frames
//! - PSNR   = 20 log10( max|xref| / rms(|xhat| - |xref|) ), "inf" when equal
//! - SSIM   = mean over frames of the mean per-frame SSIM map, 11x11 Gaussian
//!   window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range max|xref|,
//!   evaluated at positions where the window fits entirely inside the frame.

use crate::error::{check_dim, Error, Result};
use crate::exec;
use crate::types::CasoratiImage;

/// One metrics row with provenance fields, serialized to the sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub algorithm: String,
    pub lambda: f64,
    pub nkspc: f64,
    pub order: usize,
    pub nrmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub recon_seconds: f64,
}

impl MetricsRecord {
    pub fn csv_header() -> &'static str {
        "algorithm,lambda,nkspc,L,nrmse,psnr_db,ssim,recon_seconds"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.algorithm,
            self.lambda,
            self.nkspc,
            self.order,
            self.nrmse,
            self.psnr_db,
            self.ssim,
            self.recon_seconds
        )
    }
}

fn check_pair(xhat: &CasoratiImage, xref: &CasoratiImage) -> Result<()> {
    check_dim("nx", xref.nx(), xhat.nx())?;
    check_dim("ny", xref.ny(), xhat.ny())?;
    check_dim("frames", xref.frames(), xhat.frames())
}

fn ref_norm(xref: &CasoratiImage) -> Result<f64> {
    let norm = xref
        .data()
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("reference image is zero"));
    }
    Ok(norm)
}

/// Normalized root-mean-square error of the magnitude images.
pub fn nrmse(xhat: &CasoratiImage, xref: &CasoratiImage) -> Result<f64> {
    check_pair(xhat, xref)?;
    let norm = ref_norm(xref)?;
    let err: f64 = xhat
        .data()
        .iter()
        .zip(xref.data().iter())
        .map(|(a, b)| {
            let d = a.norm() - b.norm();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    Ok(err / norm)
}

/// Peak signal-to-noise ratio in decibels; positive infinity for identical
/// magnitudes.
pub fn psnr(xhat: &CasoratiImage, xref: &CasoratiImage) -> Result<f64> {
    check_pair(xhat, xref)?;
    ref_norm(xref)?;
    let peak = xref.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let count = xref.data().len() as f64;
    let mse: f64 = xhat
        .data()
        .iter()
        .zip(xref.data().iter())
        .map(|(a, b)| {
            let d = a.norm() - b.norm();
            d * d
        })
        .sum::<f64>()
        / count;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let y = (i / size) as f64 - c;
            let x = (i % size) as f64 - c;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Structural similarity of the magnitude images, averaged over frames.
/// Frames smaller than the 11x11 window fall back to the largest odd window
/// that fits.
pub fn ssim(xhat: &CasoratiImage, xref: &CasoratiImage) -> Result<f64> {
    check_pair(xhat, xref)?;
    ref_norm(xref)?;
    let (nx, ny) = (xref.nx(), xref.ny());
    let mut win = 11usize;
    let smallest = nx.min(ny);
    if smallest < win {
        win = if smallest % 2 == 0 { smallest - 1 } else { smallest };
    }
    if win == 0 {
        return Err(Error::invalid("frame too small for any SSIM window"));
    }
    let window = gaussian_window(win, 1.5);
    let peak = xref.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);

    let per_frame: Vec<f64> = exec::map_indexed(xref.frames(), |t| {
        let a: Vec<f64> = xhat.frame(t).iter().map(|z| z.norm()).collect();
        let b: Vec<f64> = xref.frame(t).iter().map(|z| z.norm()).collect();
        frame_ssim(&a, &b, nx, ny, win, &window, c1, c2)
    });
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

fn frame_ssim(
    a: &[f64],
    b: &[f64],
    nx: usize,
    ny: usize,
    win: usize,
    window: &[f64],
    c1: f64,
    c2: f64,
) -> f64 {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for oy in 0..=(ny - win) {
        for ox in 0..=(nx - win) {
            let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
            let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
            for wy in 0..win {
                for wx in 0..win {
                    let w = window[wy * win + wx];
                    let va = a[(oy + wy) * nx + ox + wx];
                    let vb = b[(oy + wy) * nx + ox + wx];
                    mu_a += w * va;
                    mu_b += w * vb;
                    aa += w * va * va;
                    bb += w * vb * vb;
                    ab += w * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn image_from(vals: &[f64], nx: usize, ny: usize, frames: usize) -> CasoratiImage {
        let data: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        CasoratiImage::new(nx, ny, frames, data).unwrap()
    }

    fn test_pair() -> (CasoratiImage, CasoratiImage) {
        let nx = 16;
        let ny = 16;
        let frames = 3;
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut s = 77u64;
        let mut next = move || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for _ in 0..nx * ny * frames {
            let v = next();
            b.push(v);
            a.push(v + 0.05 * (next() - 0.5));
        }
        (
            image_from(&a, nx, ny, frames),
            image_from(&b, nx, ny, frames),
        )
    }

    #[test]
    fn nrmse_trivials() {
        let (_, xref) = test_pair();
        assert!(nrmse(&xref, &xref).unwrap() < 1e-15);
        let zero = CasoratiImage::zeros(xref.nx(), xref.ny(), xref.frames());
        assert!((nrmse(&zero, &xref).unwrap() - 1.0).abs() < 1e-12);
        // single-entry perturbation on a zero entry
        let mut xhat = xref.clone();
        let mut with_zero = xref.clone();
        with_zero.data_mut()[0] = Complex64::new(0.0, 0.0);
        xhat.data_mut().copy_from_slice(with_zero.data());
        xhat.data_mut()[0] = Complex64::new(1e-3, 0.0);
        let norm = with_zero
            .data()
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let got = nrmse(&xhat, &with_zero).unwrap();
        assert!((got - 1e-3 / norm).abs() < 1e-15);
        // zero reference rejected
        let z = CasoratiImage::zeros(4, 4, 1);
        assert!(nrmse(&z, &z).is_err());
    }

    #[test]
    fn psnr_trivials() {
        let (_, xref) = test_pair();
        assert!(psnr(&xref, &xref).unwrap().is_infinite());
        // rmse equal to the peak gives 0 dB: xhat = xref + peak on a constant image
        let base = image_from(&vec![1.0; 16], 4, 4, 1);
        let shifted = image_from(&vec![2.0; 16], 4, 4, 1);
        let db = psnr(&shifted, &base).unwrap();
        assert!(db.abs() < 1e-12, "{db}");
        // halving the error adds ~6.02 dB
        let half = image_from(&vec![1.5; 16], 4, 4, 1);
        let db_half = psnr(&half, &base).unwrap();
        assert!((db_half - 20.0 * 2.0f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn psnr_nrmse_identity() {
        let (xhat, xref) = test_pair();
        let n = nrmse(&xhat, &xref).unwrap();
        let p = psnr(&xhat, &xref).unwrap();
        let peak = xref.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let norm = xref
            .data()
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let count = (xref.data().len() as f64).sqrt();
        let p_from_n = 20.0 * (peak * count / (n * norm)).log10();
        assert!((p - p_from_n).abs() < 1e-9, "{p} vs {p_from_n}");
    }

    #[test]
    fn ssim_trivials() {
        let (_, xref) = test_pair();
        let s = ssim(&xref, &xref).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");

        // luminance ordering: mild rescale beats strong rescale
        let mut near = xref.clone();
        for z in near.data_mut() {
            *z *= 0.99;
        }
        let mut far = xref.clone();
        for z in far.data_mut() {
            *z *= 0.5;
        }
        let s_near = ssim(&near, &xref).unwrap();
        let s_far = ssim(&far, &xref).unwrap();
        assert!(s_near < 1.0);
        assert!(s_near > s_far, "{s_near} vs {s_far}");
    }

    #[test]
    fn ssim_small_frames_shrink_window() {
        let a = image_from(&vec![1.0; 5 * 5], 5, 5, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_phase_invariant() {
        let (xhat, xref) = test_pair();
        let rot = Complex64::from_polar(1.0, 0.821);
        let mut xhat_r = xhat.clone();
        let mut xref_r = xref.clone();
        for z in xhat_r.data_mut() {
            *z *= rot;
        }
        for z in xref_r.data_mut() {
            *z *= rot;
        }
        assert!((nrmse(&xhat, &xref).unwrap() - nrmse(&xhat_r, &xref_r).unwrap()).abs() < 1e-14);
        assert!((psnr(&xhat, &xref).unwrap() - psnr(&xhat_r, &xref_r).unwrap()).abs() < 1e-10);
        assert!((ssim(&xhat, &xref).unwrap() - ssim(&xhat_r, &xref_r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn record_csv_layout() {
        let rec = MetricsRecord {
            algorithm: "lsqr".into(),
            lambda: 0.0,
            nkspc: 9.0,
            order: 4,
            nrmse: 0.01,
            psnr_db: f64::INFINITY,
            ssim: 0.99,
            recon_seconds: 1.5,
        };
        assert_eq!(
            MetricsRecord::csv_header(),
            "algorithm,lambda,nkspc,L,nrmse,psnr_db,ssim,recon_seconds"
        );
        assert_eq!(rec.csv_row(), "lsqr,0,9,4,0.01,inf,0.99,1.5");
    }
}
