//! Core data containers: Casorati matrices, the subspace factors, coil maps,
//! sampling masks and measured k-space.
//!
//! Layout conventions (all row-major within the stated order):
//! - images index spatial locations as `i = y * nx + x`, with `x` the fully
//!   sampled frequency-encode axis and `y` the phase-encode axis,
//! - [`CasoratiImage`] stores frames contiguously: entry `(i, t)` lives at
//!   `data[t * n + i]`,
//! - [`SpatialBasis`] stores basis images contiguously: `(i, l)` at
//!   `data[l * n + i]`,
//! - [`TemporalBasis`] stores rows contiguously: `(l, t)` at `data[l * t_len + t]`,
//! - [`MultiCoilKspace`] stores one `ny * nx` plane per `(coil, frame)`.

use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::exec;

/// Complex dynamic image arranged as an N x T Casorati matrix
/// (N = nx * ny spatial locations, T frames).
#[derive(Debug, Clone, PartialEq)]
pub struct CasoratiImage {
    data: Vec<Complex64>,
    nx: usize,
    ny: usize,
    frames: usize,
}

impl CasoratiImage {
    pub fn new(nx: usize, ny: usize, frames: usize, data: Vec<Complex64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("image grid must be nonempty"));
        }
        check_dim("casorati data", nx * ny * frames, data.len())?;
        Ok(Self {
            data,
            nx,
            ny,
            frames,
        })
    }

    pub fn zeros(nx: usize, ny: usize, frames: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); nx * ny * frames],
            nx,
            ny,
            frames,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Number of spatial locations N = nx * ny.
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.n();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let n = self.n();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Entry at spatial location `i`, frame `t`.
    pub fn at(&self, i: usize, t: usize) -> Complex64 {
        self.data[t * self.n() + i]
    }

    /// Contracts against the temporal basis: U = X * V^H.
    pub fn contract(&self, v: &TemporalBasis) -> Result<SpatialBasis> {
        check_dim("frames", self.frames, v.frames())?;
        let n = self.n();
        let order = v.order();
        let mut out = vec![Complex64::new(0.0, 0.0); n * order];
        exec::fill_chunks(&mut out, n, |l, chunk| {
            let row = v.row(l);
            for (t, &vt) in row.iter().enumerate() {
                let w = vt.conj();
                let frame = self.frame(t);
                for (o, &f) in chunk.iter_mut().zip(frame.iter()) {
                    *o += f * w;
                }
            }
        });
        SpatialBasis::new(self.nx, self.ny, order, out)
    }
}

/// Spatial basis U: N x L subspace coefficients, one column per basis image.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBasis {
    data: Vec<Complex64>,
    nx: usize,
    ny: usize,
    order: usize,
}

impl SpatialBasis {
    pub fn new(nx: usize, ny: usize, order: usize, data: Vec<Complex64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("image grid must be nonempty"));
        }
        if order == 0 {
            return Err(Error::invalid("model order must be at least 1"));
        }
        check_dim("basis data", nx * ny * order, data.len())?;
        Ok(Self {
            data,
            nx,
            ny,
            order,
        })
    }

    pub fn zeros(nx: usize, ny: usize, order: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); nx * ny * order],
            nx,
            ny,
            order,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn basis_image(&self, l: usize) -> &[Complex64] {
        let n = self.n();
        &self.data[l * n..(l + 1) * n]
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Entry at spatial location `i`, basis index `l`.
    pub fn at(&self, i: usize, l: usize) -> Complex64 {
        self.data[l * self.n() + i]
    }

    /// Expands to the full Casorati matrix: X = U * V.
    pub fn expand(&self, v: &TemporalBasis) -> Result<CasoratiImage> {
        check_dim("model order", self.order, v.order())?;
        let n = self.n();
        let frames = v.frames();
        let mut out = vec![Complex64::new(0.0, 0.0); n * frames];
        exec::fill_chunks(&mut out, n, |t, frame| {
            for l in 0..self.order {
                let w = v.at(l, t);
                let img = self.basis_image(l);
                for (o, &u) in frame.iter_mut().zip(img.iter()) {
                    *o += u * w;
                }
            }
        });
        CasoratiImage::new(self.nx, self.ny, frames, out)
    }
}

/// Temporal basis V: L x T, rows spanning the temporal subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBasis {
    data: Vec<Complex64>,
    order: usize,
    frames: usize,
}

impl TemporalBasis {
    pub fn new(order: usize, frames: usize, data: Vec<Complex64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("model order must be at least 1"));
        }
        if order > frames {
            return Err(Error::shape("model order", frames, order));
        }
        check_dim("temporal basis data", order * frames, data.len())?;
        Ok(Self {
            data,
            order,
            frames,
        })
    }

    /// The identity subspace V = I_T (L = T).
    pub fn identity(frames: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); frames * frames];
        for l in 0..frames {
            data[l * frames + l] = Complex64::new(1.0, 0.0);
        }
        Self {
            data,
            order: frames,
            frames,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, l: usize) -> &[Complex64] {
        &self.data[l * self.frames..(l + 1) * self.frames]
    }

    pub fn at(&self, l: usize, t: usize) -> Complex64 {
        self.data[l * self.frames + t]
    }

    /// Largest deviation of V * V^H from the identity; zero for orthonormal rows.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.order {
            for b in 0..self.order {
                let mut g = Complex64::new(0.0, 0.0);
                for t in 0..self.frames {
                    g += self.at(a, t) * self.at(b, t).conj();
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }
}

/// Multi-channel coil sensitivity maps: J x N.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    data: Vec<Complex64>,
    coils: usize,
    nx: usize,
    ny: usize,
}

impl CoilSensitivities {
    pub fn new(coils: usize, nx: usize, ny: usize, data: Vec<Complex64>) -> Result<Self> {
        if coils == 0 {
            return Err(Error::invalid("at least one coil required"));
        }
        check_dim("sensitivity data", coils * nx * ny, data.len())?;
        Ok(Self {
            data,
            coils,
            nx,
            ny,
        })
    }

    /// Single uniform coil (S = 1 everywhere).
    pub fn uniform(nx: usize, ny: usize) -> Self {
        Self {
            data: vec![Complex64::new(1.0, 0.0); nx * ny],
            coils: 1,
            nx,
            ny,
        }
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn map(&self, j: usize) -> &[Complex64] {
        let n = self.n();
        &self.data[j * n..(j + 1) * n]
    }

    /// Root-sum-of-squares magnitude over coils at every location.
    pub fn rss(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0f64; n];
        for j in 0..self.coils {
            for (o, &s) in out.iter_mut().zip(self.map(j).iter()) {
                *o += s.norm_sqr();
            }
        }
        for o in out.iter_mut() {
            *o = o.sqrt();
        }
        out
    }
}

/// Cartesian (ky, t) sampling mask: Ny phase-encode rows by T frames.
/// The frequency-encode direction kx is always fully sampled, so the mask
/// broadcasts along kx when applied to k-space data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KtMask {
    rows: Vec<bool>,
    ny: usize,
    frames: usize,
}

impl KtMask {
    /// Builds a mask from row-major Ny x T booleans. Every frame must sample
    /// at least one line.
    pub fn new(ny: usize, frames: usize, rows: Vec<bool>) -> Result<Self> {
        if ny == 0 || frames == 0 {
            return Err(Error::invalid("mask must be nonempty"));
        }
        check_dim("mask data", ny * frames, rows.len())?;
        let mask = Self { rows, ny, frames };
        for t in 0..frames {
            if !(0..ny).any(|ky| mask.is_sampled(ky, t)) {
                return Err(Error::invalid(format!(
                    "mask frame {t} samples no phase-encode line"
                )));
            }
        }
        Ok(mask)
    }

    pub fn full(ny: usize, frames: usize) -> Self {
        Self {
            rows: vec![true; ny * frames],
            ny,
            frames,
        }
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn is_sampled(&self, ky: usize, t: usize) -> bool {
        self.rows[ky * self.frames + t]
    }

    /// The full (ky, t) pattern of one phase-encode row.
    pub fn row(&self, ky: usize) -> &[bool] {
        &self.rows[ky * self.frames..(ky + 1) * self.frames]
    }

    /// Total number of sampled (ky, t) lines.
    pub fn sampled_count(&self) -> usize {
        self.rows.iter().filter(|&&b| b).count()
    }

    /// Frame indices at which row `ky` is sampled.
    pub fn sampled_times(&self, ky: usize) -> Vec<usize> {
        (0..self.frames)
            .filter(|&t| self.is_sampled(ky, t))
            .collect()
    }

    /// Phase-encode rows sampled in frame `t`.
    pub fn sampled_rows(&self, t: usize) -> Vec<usize> {
        (0..self.ny).filter(|&ky| self.is_sampled(ky, t)).collect()
    }

    /// Mean per-frame undersampling factor counting one navigator readout
    /// per frame alongside the imaging lines.
    pub fn acceleration_with_navigator(&self) -> f64 {
        let lines = self.sampled_count() as f64 / self.frames as f64;
        self.ny as f64 / (lines + 1.0)
    }
}

/// Measured multi-coil k-space: J x nx x ny x T, exactly zero at unsampled
/// (ky, t) locations.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKspace {
    data: Vec<Complex64>,
    coils: usize,
    nx: usize,
    ny: usize,
    frames: usize,
    mask: KtMask,
}

impl MultiCoilKspace {
    /// Builds masked k-space; any value at an unsampled location is zeroed so
    /// the stored data always satisfies the mask invariant.
    pub fn new(
        coils: usize,
        nx: usize,
        ny: usize,
        frames: usize,
        mut data: Vec<Complex64>,
        mask: KtMask,
    ) -> Result<Self> {
        if coils == 0 {
            return Err(Error::invalid("at least one coil required"));
        }
        check_dim("mask rows", ny, mask.ny())?;
        check_dim("frames", frames, mask.frames())?;
        check_dim("kspace data", coils * nx * ny * frames, data.len())?;
        apply_mask_in_place(&mut data, coils, nx, ny, frames, &mask);
        Ok(Self {
            data,
            coils,
            nx,
            ny,
            frames,
            mask,
        })
    }

    pub fn zeros(coils: usize, nx: usize, ny: usize, frames: usize, mask: KtMask) -> Result<Self> {
        let data = vec![Complex64::new(0.0, 0.0); coils * nx * ny * frames];
        Self::new(coils, nx, ny, frames, data, mask)
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn mask(&self) -> &KtMask {
        &self.mask
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// One nx * ny k-space plane for coil `j`, frame `t` (ky-major rows).
    pub fn plane(&self, j: usize, t: usize) -> &[Complex64] {
        let n = self.nx * self.ny;
        let p = j * self.frames + t;
        &self.data[p * n..(p + 1) * n]
    }

    pub fn at(&self, j: usize, kx: usize, ky: usize, t: usize) -> Complex64 {
        self.plane(j, t)[ky * self.nx + kx]
    }

    /// Scales every sample in place (noise-free linearity helper).
    pub fn scale(&mut self, factor: Complex64) {
        for v in self.data.iter_mut() {
            *v *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Zeroes unsampled rows of per-(coil, frame) k-space planes.
pub(crate) fn apply_mask_in_place(
    data: &mut [Complex64],
    coils: usize,
    nx: usize,
    ny: usize,
    frames: usize,
    mask: &KtMask,
) {
    debug_assert_eq!(data.len(), coils * nx * ny * frames);
    let n = nx * ny;
    exec::for_each_chunk_mut(data, n, |p, plane| {
        let t = p % frames;
        for ky in 0..ny {
            if !mask.is_sampled(ky, t) {
                for v in plane[ky * nx..(ky + 1) * nx].iter_mut() {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
    });
}
