//! Synthetic acquisition: dynamic phantoms, coil sensitivity maps, the
//! interleaved navigating/imaging sampling schedule, and noisy undersampled
//! multi-coil k-space.
//!
//! All generation is seed-deterministic: identical specs produce bit-identical
//! datasets. Noise uses one counter-derived substream per (coil, frame) plane
//! so results do not depend on thread scheduling.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{check_dim, Error, Result};
use crate::exec;
use crate::fft::FftEngine;
use crate::linalg::{dot, nrm2};
use crate::subspace::NavigatorCasorati;
use crate::types::{CasoratiImage, CoilSensitivities, KtMask, MultiCoilKspace, SpatialBasis, TemporalBasis};

const STREAM_PHANTOM: u64 = 0x7068_616e_746f_6d00;
const STREAM_LOWRANK: u64 = 0x6c6f_7772_616e_6b00;
const STREAM_SENS: u64 = 0x7365_6e73_6d61_7000;
const STREAM_MASK: u64 = 0x6d61_736b_0000_0000;
const STREAM_NOISE: u64 = 0x6e6f_6973_6500_0000;
const STREAM_NAV_NOISE: u64 = 0x6e61_766e_6f69_7300;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn substream(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    splitmix(seed ^ tag ^ splitmix(a.wrapping_mul(0x9e37_79b9).wrapping_add(b)))
}

/// One standard-normal pair via Box-Muller.
fn gaussian_pair(rng: &mut ChaCha12Rng) -> (f64, f64) {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    (r * th.cos(), r * th.sin())
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// ---------------------------------------------------------------------------
// phantom generation
// ---------------------------------------------------------------------------

/// Dynamic phantom parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub frames: usize,
    /// Frames per cardiac cycle.
    pub heart_period: usize,
    /// Frames per respiratory cycle.
    pub resp_period: usize,
    pub n_objects: usize,
    pub seed: u64,
    /// When set, the phantom is built as an exactly rank-L factorization
    /// instead of the ellipse renderer.
    pub rank_exact: Option<usize>,
    /// Per-cycle random period perturbation as a fraction (0 disables).
    pub cardiac_jitter: f64,
    /// Peak whole-frame vertical translation in pixels (0 disables).
    pub resp_amplitude: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            nx: 64,
            ny: 64,
            frames: 192,
            heart_period: 24,
            resp_period: 75,
            n_objects: 6,
            seed: 1234,
            rank_exact: None,
            cardiac_jitter: 0.1,
            resp_amplitude: 2.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 {
            return Err(Error::invalid("phantom grid must be at least 8x8"));
        }
        if self.heart_period < 2 || self.resp_period < 2 {
            return Err(Error::invalid("motion periods must span at least 2 frames"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("at least one frame required"));
        }
        if !(self.cardiac_jitter >= 0.0 && self.cardiac_jitter < 1.0) {
            return Err(Error::invalid("cardiac jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    theta: f64,
    intensity: f64,
    edge: f64,
}

/// Renders the phantom: smooth-edged ellipses, the first of which pulses with
/// the cardiac cycle (period jittered per cycle), all translated vertically
/// with respiration. Real-valued image content.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<CasoratiImage> {
    spec.validate()?;
    let (nx, ny, frames) = (spec.nx, spec.ny, spec.frames);
    if spec.n_objects == 0 {
        return Ok(CasoratiImage::zeros(nx, ny, frames));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ STREAM_PHANTOM);
    let min_dim = nx.min(ny) as f64;

    let mut objects = Vec::with_capacity(spec.n_objects);
    for k in 0..spec.n_objects {
        let (lo, hi) = if k == 0 { (0.40, 0.60) } else { (0.25, 0.75) };
        objects.push(Ellipse {
            cx: nx as f64 * rng.gen_range(lo..hi),
            cy: ny as f64 * rng.gen_range(lo..hi),
            ax: min_dim * rng.gen_range(0.08..0.22),
            ay: min_dim * rng.gen_range(0.08..0.22),
            theta: rng.gen_range(0.0..std::f64::consts::PI),
            intensity: rng.gen_range(0.4..1.0),
            edge: rng.gen_range(0.8..2.0),
        });
    }

    // cardiac phase with per-cycle period jitter
    let mut cardiac_scale = vec![1.0f64; frames];
    {
        let mut cycle_start = 0.0f64;
        let mut cycle_len = jittered_period(spec, &mut rng);
        for (t, scale) in cardiac_scale.iter_mut().enumerate() {
            let tt = t as f64;
            let mut start = cycle_start;
            let mut len = cycle_len;
            while tt >= start + len {
                start += len;
                len = jittered_period(spec, &mut rng);
            }
            cycle_start = start;
            cycle_len = len;
            let phase = (tt - start) / len;
            *scale = 1.0 + 0.25 * (2.0 * std::f64::consts::PI * phase).sin();
        }
    }

    let resp_shift: Vec<f64> = (0..frames)
        .map(|t| {
            spec.resp_amplitude
                * (2.0 * std::f64::consts::PI * t as f64 / spec.resp_period as f64).sin()
        })
        .collect();

    let n = nx * ny;
    let mut x = CasoratiImage::zeros(nx, ny, frames);
    exec::fill_chunks(x.data_mut(), n, |t, frame| {
        let dy = resp_shift[t];
        for (k, obj) in objects.iter().enumerate() {
            let (ax, ay) = if k == 0 {
                (obj.ax * cardiac_scale[t], obj.ay * cardiac_scale[t])
            } else {
                (obj.ax, obj.ay)
            };
            let cy = obj.cy + dy;
            let (sin_t, cos_t) = obj.theta.sin_cos();
            let sharp = ax.min(ay) / obj.edge;
            for y in 0..ny {
                let fy = y as f64 - cy;
                for xx in 0..nx {
                    let fx = xx as f64 - obj.cx;
                    let xr = (fx * cos_t + fy * sin_t) / ax;
                    let yr = (-fx * sin_t + fy * cos_t) / ay;
                    let r = (xr * xr + yr * yr).sqrt();
                    let val = obj.intensity * sigmoid(-(r - 1.0) * sharp);
                    frame[y * nx + xx] += Complex64::new(val, 0.0);
                }
            }
        }
    });
    Ok(x)
}

fn jittered_period(spec: &PhantomSpec, rng: &mut ChaCha12Rng) -> f64 {
    let base = spec.heart_period as f64;
    if spec.cardiac_jitter == 0.0 {
        base
    } else {
        let u: f64 = rng.gen_range(-1.0..1.0);
        (base * (1.0 + spec.cardiac_jitter * u)).max(2.0)
    }
}

/// Builds an exactly rank-L phantom X = U * V with smooth random spatial
/// maps and orthonormal temporal rows.
pub fn generate_lowrank_phantom(
    spec: &PhantomSpec,
    rank: usize,
) -> Result<(CasoratiImage, SpatialBasis, TemporalBasis)> {
    spec.validate()?;
    let (nx, ny, frames) = (spec.nx, spec.ny, spec.frames);
    let n = nx * ny;
    if rank == 0 || rank > n.min(frames) {
        return Err(Error::invalid(format!(
            "rank {rank} outside [1, min(N, T)] = [1, {}]",
            n.min(frames)
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ STREAM_LOWRANK);
    let min_dim = nx.min(ny) as f64;

    // smooth complex spatial maps inside an elliptical support
    let mut u_data = vec![Complex64::new(0.0, 0.0); rank * n];
    let (env_cx, env_cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let (env_ax, env_ay) = (0.42 * nx as f64, 0.42 * ny as f64);
    for l in 0..rank {
        let blobs: Vec<(f64, f64, f64, Complex64)> = (0..10)
            .map(|_| {
                (
                    nx as f64 * rng.gen_range(0.2..0.8),
                    ny as f64 * rng.gen_range(0.2..0.8),
                    min_dim * rng.gen_range(0.10..0.30),
                    Complex64::from_polar(
                        rng.gen_range(0.3..1.0),
                        rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                    ),
                )
            })
            .collect();
        for y in 0..ny {
            for x in 0..nx {
                let ex = (x as f64 - env_cx) / env_ax;
                let ey = (y as f64 - env_cy) / env_ay;
                let env = sigmoid(-((ex * ex + ey * ey).sqrt() - 1.0) * 8.0);
                let mut val = Complex64::new(0.0, 0.0);
                for &(bx, by, w, amp) in &blobs {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    val += amp * (-d2 / (2.0 * w * w)).exp();
                }
                u_data[l * n + y * nx + x] = val * env;
            }
        }
    }
    let u = SpatialBasis::new(nx, ny, rank, u_data)?;

    // smooth random temporal rows, orthonormalized
    let mut rows: Vec<Vec<Complex64>> = (0..rank)
        .map(|_| {
            let harmonics: Vec<(f64, f64, f64)> = (0..5)
                .map(|h| {
                    (
                        rng.gen_range(0.2..1.0) / (h as f64 + 1.0),
                        h as f64 + rng.gen_range(0.0..0.5),
                        rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                    )
                })
                .collect();
            (0..frames)
                .map(|t| {
                    let tt = t as f64 / frames as f64;
                    let mut v = Complex64::new(0.0, 0.0);
                    for &(a, fq, ph) in &harmonics {
                        v += Complex64::from_polar(
                            a,
                            2.0 * std::f64::consts::PI * fq * tt + ph,
                        );
                    }
                    v
                })
                .collect()
        })
        .collect();
    for l in 0..rank {
        for prev in 0..l {
            let proj = dot(&rows[prev], &rows[l]);
            let prev_row = rows[prev].clone();
            for (r, p) in rows[l].iter_mut().zip(prev_row.iter()) {
                *r -= proj * p;
            }
        }
        let norm = nrm2(&rows[l]);
        if norm < 1e-9 {
            return Err(Error::invalid(
                "degenerate temporal rows; choose a different seed or rank",
            ));
        }
        for r in rows[l].iter_mut() {
            *r /= norm;
        }
    }
    let v = TemporalBasis::new(rank, frames, rows.concat())?;
    let x = u.expand(&v)?;
    Ok((x, u, v))
}

// ---------------------------------------------------------------------------
// coil sensitivities
// ---------------------------------------------------------------------------

/// Smooth complex Gaussian-lobe coil profiles centered at distinct border
/// positions with mild linear phase, normalized so the root-sum-of-squares
/// is exactly 1 everywhere.
pub fn generate_sensitivities(
    coils: usize,
    nx: usize,
    ny: usize,
    seed: u64,
) -> Result<CoilSensitivities> {
    if coils == 0 {
        return Err(Error::invalid("at least one coil required"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ STREAM_SENS);
    let n = nx * ny;
    let min_dim = nx.min(ny) as f64;
    let (cx0, cy0) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let radius = 0.58 * min_dim;

    let mut data = vec![Complex64::new(0.0, 0.0); coils * n];
    for j in 0..coils {
        let angle = 2.0 * std::f64::consts::PI * j as f64 / coils as f64
            + rng.gen_range(-0.15..0.15);
        let (cx, cy) = (cx0 + radius * angle.cos(), cy0 + radius * angle.sin());
        let width = min_dim * rng.gen_range(0.45..0.65);
        let (px, py) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        for y in 0..ny {
            for x in 0..nx {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = px * (x as f64 - cx0) / nx as f64 + py * (y as f64 - cy0) / ny as f64;
                data[j * n + y * nx + x] = Complex64::from_polar(mag, phase);
            }
        }
    }
    // RSS normalization (every lobe is strictly positive, so RSS > 0)
    let mut rss = vec![0.0f64; n];
    for j in 0..coils {
        for (r, z) in rss.iter_mut().zip(data[j * n..(j + 1) * n].iter()) {
            *r += z.norm_sqr();
        }
    }
    for r in rss.iter_mut() {
        *r = r.sqrt();
    }
    for j in 0..coils {
        for (z, &r) in data[j * n..(j + 1) * n].iter_mut().zip(rss.iter()) {
            *z /= r;
        }
    }
    CoilSensitivities::new(coils, nx, ny, data)
}

// ---------------------------------------------------------------------------
// sampling schedule
// ---------------------------------------------------------------------------

/// Interleaved acquisition parameters. One navigator readout is acquired per
/// frame alongside `lines_per_frame` imaging readouts; `nkspc` counts how
/// many full k-spaces' worth of imaging lines the schedule acquires in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingSpec {
    pub nkspc: usize,
    /// Imaging readouts per navigator readout.
    pub nav_interval: usize,
    pub lines_per_frame: usize,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            nkspc: 9,
            nav_interval: 3,
            lines_per_frame: 3,
            seed: 77,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nkspc == 0 {
            return Err(Error::invalid("nkspc must be positive"));
        }
        if self.nav_interval == 0 || self.lines_per_frame == 0 {
            return Err(Error::invalid(
                "nav_interval and lines_per_frame must be positive",
            ));
        }
        Ok(())
    }
}

/// One acquired readout in schedule order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Imaging { frame: usize, ky: usize },
    Navigator { frame: usize },
}

/// Full interleaved readout order plus the navigator line position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingSchedule {
    pub readouts: Vec<Readout>,
    pub center_ky: usize,
}

/// Draws the imaging mask by seeded random permutation sweeps: each sweep
/// visits every ky once before any line repeats, and exactly nkspc * ny
/// imaging lines are distributed over the frames (earlier frames take the
/// remainder). The navigator occupies the center ky line in every frame and
/// is not marked in the imaging mask.
pub fn generate_sampling(
    spec: &SamplingSpec,
    ny: usize,
    frames: usize,
) -> Result<(KtMask, Vec<usize>, SamplingSchedule)> {
    spec.validate()?;
    if ny == 0 || frames == 0 {
        return Err(Error::invalid("grid and frame count must be positive"));
    }
    if spec.lines_per_frame > ny {
        return Err(Error::invalid(format!(
            "lines_per_frame {} exceeds ny {}",
            spec.lines_per_frame, ny
        )));
    }
    let total = spec.nkspc * ny;
    let capacity = spec.lines_per_frame * frames;
    if total > capacity {
        let needed = total.div_ceil(spec.lines_per_frame);
        return Err(Error::invalid(format!(
            "line budget infeasible: {total} imaging lines need at least {needed} frames at {} lines per frame",
            spec.lines_per_frame
        )));
    }
    if total < frames {
        return Err(Error::invalid(format!(
            "line budget infeasible: {total} imaging lines cannot cover {frames} frames (at most {total} frames)"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ STREAM_MASK);
    let mut deck: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut rows = vec![false; ny * frames];
    let mut readouts = Vec::with_capacity(total + frames);
    let center_ky = ny / 2;

    let base = total / frames;
    let rem = total % frames;
    for t in 0..frames {
        let count = base + usize::from(t < rem);
        let mut in_frame: Vec<usize> = Vec::with_capacity(count);
        let mut carry: Vec<usize> = Vec::new();
        while in_frame.len() < count {
            let ky = match deck.pop_front() {
                Some(ky) => ky,
                None => {
                    let mut sweep: Vec<usize> = (0..ny).collect();
                    sweep.shuffle(&mut rng);
                    deck.extend(sweep);
                    deck.pop_front().unwrap()
                }
            };
            if in_frame.contains(&ky) {
                carry.push(ky);
            } else {
                in_frame.push(ky);
            }
        }
        for ky in carry.into_iter().rev() {
            deck.push_front(ky);
        }
        for &ky in &in_frame {
            rows[ky * frames + t] = true;
            readouts.push(Readout::Imaging { frame: t, ky });
        }
        readouts.push(Readout::Navigator { frame: t });
    }

    let mask = KtMask::new(ny, frames, rows)?;
    let frame_map = (0..frames).collect();
    Ok((mask, frame_map, SamplingSchedule { readouts, center_ky }))
}

// ---------------------------------------------------------------------------
// forward sampling with noise
// ---------------------------------------------------------------------------

/// Evaluates the full forward model at the sampled locations, injecting
/// i.i.d. complex Gaussian noise with variance `sigma2` split evenly between
/// real and imaginary parts. Navigator samples are extracted at the center
/// ky line with independent noise.
pub fn sample_kspace(
    x: &CasoratiImage,
    s: &CoilSensitivities,
    mask: &KtMask,
    sigma2: f64,
    seed: u64,
    fft: &FftEngine,
) -> Result<(MultiCoilKspace, NavigatorCasorati)> {
    if sigma2 < 0.0 {
        return Err(Error::invalid("noise variance must be nonnegative"));
    }
    check_dim("nx", x.nx(), s.nx())?;
    check_dim("ny", x.ny(), s.ny())?;
    check_dim("ny", x.ny(), mask.ny())?;
    check_dim("frames", x.frames(), mask.frames())?;
    check_dim("nx", fft.nx(), x.nx())?;
    check_dim("ny", fft.ny(), x.ny())?;
    let (nx, ny, n) = (x.nx(), x.ny(), x.n());
    let (coils, frames) = (s.coils(), x.frames());
    let center_ky = ny / 2;
    let amp = (sigma2 / 2.0).sqrt();

    let mut planes = vec![Complex64::new(0.0, 0.0); coils * frames * n];
    let mut nav_cols = vec![Complex64::new(0.0, 0.0); coils * frames * nx];
    exec::for_each_chunk_pair_mut(&mut planes, n, &mut nav_cols, nx, |p, plane, nav_line| {
        let j = p / frames;
        let t = p % frames;
        let map = s.map(j);
        for ((o, &sv), &xv) in plane.iter_mut().zip(map.iter()).zip(x.frame(t).iter()) {
            *o = sv * xv;
        }
        fft.fft2(plane);

        // navigator: center line + its own noise stream
        let mut nav_rng =
            ChaCha12Rng::seed_from_u64(substream(seed, STREAM_NAV_NOISE, j as u64, t as u64));
        for (kx, o) in nav_line.iter_mut().enumerate() {
            let (g1, g2) = gaussian_pair(&mut nav_rng);
            *o = plane[center_ky * nx + kx] + Complex64::new(amp * g1, amp * g2);
        }

        // imaging samples: noise drawn in fixed (ky, kx) order over sampled rows
        let mut rng =
            ChaCha12Rng::seed_from_u64(substream(seed, STREAM_NOISE, j as u64, t as u64));
        for ky in 0..ny {
            if mask.is_sampled(ky, t) {
                for o in plane[ky * nx..(ky + 1) * nx].iter_mut() {
                    let (g1, g2) = gaussian_pair(&mut rng);
                    *o += Complex64::new(amp * g1, amp * g2);
                }
            } else {
                for o in plane[ky * nx..(ky + 1) * nx].iter_mut() {
                    *o = Complex64::new(0.0, 0.0);
                }
            }
        }
    });

    let kspace = MultiCoilKspace::new(coils, nx, ny, frames, planes, mask.clone())?;
    // navigator rows are stacked coil-major: row p = coil (p / nx), kx (p % nx)
    let mut nav_data = vec![Complex64::new(0.0, 0.0); coils * nx * frames];
    for j in 0..coils {
        for t in 0..frames {
            for kx in 0..nx {
                nav_data[(j * nx + kx) * frames + t] = nav_cols[(j * frames + t) * nx + kx];
            }
        }
    }
    let nav = NavigatorCasorati::new(coils, nx, frames, nav_data, (0..frames).collect())?;
    Ok((kspace, nav))
}

// ---------------------------------------------------------------------------
// dataset bundle
// ---------------------------------------------------------------------------

/// Everything a reconstruction needs plus the ground truth it came from.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub truth: CasoratiImage,
    pub sens: CoilSensitivities,
    pub kspace: MultiCoilKspace,
    pub nav: NavigatorCasorati,
    pub mask: KtMask,
    pub sigma2: f64,
}

/// Generates a complete dataset: phantom, sensitivities, schedule, and noisy
/// undersampled k-space.
pub fn simulate(
    phantom: &PhantomSpec,
    sampling: &SamplingSpec,
    coils: usize,
    sigma2: f64,
) -> Result<SimulatedDataset> {
    let truth = match phantom.rank_exact {
        Some(rank) => generate_lowrank_phantom(phantom, rank)?.0,
        None => generate_phantom(phantom)?,
    };
    let sens = generate_sensitivities(coils, phantom.nx, phantom.ny, phantom.seed)?;
    let (mask, _frame_map, _schedule) = generate_sampling(sampling, phantom.ny, phantom.frames)?;
    let fft = FftEngine::new(phantom.nx, phantom.ny);
    let (kspace, nav) = sample_kspace(&truth, &sens, &mask, sigma2, sampling.seed, &fft)?;
    Ok(SimulatedDataset {
        truth,
        sens,
        kspace,
        nav,
        mask,
        sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            nx: 16,
            ny: 16,
            frames: 24,
            heart_period: 8,
            resp_period: 12,
            n_objects: 3,
            seed: 5,
            rank_exact: None,
            cardiac_jitter: 0.1,
            resp_amplitude: 1.0,
        }
    }

    #[test]
    fn empty_phantom_is_zero() {
        let mut spec = small_spec();
        spec.n_objects = 0;
        let x = generate_phantom(&spec).unwrap();
        assert!(x.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn phantom_deterministic() {
        let spec = small_spec();
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_cycle_when_period_equals_frames() {
        let mut spec = small_spec();
        spec.heart_period = spec.frames;
        spec.cardiac_jitter = 0.0;
        spec.resp_amplitude = 0.0;
        spec.n_objects = 1;
        let x = generate_phantom(&spec).unwrap();
        // motion exists but is a single smooth cycle: frames differ
        let first = x.frame(0);
        let mid = x.frame(spec.frames / 4);
        let diff: f64 = first
            .iter()
            .zip(mid.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        assert!(diff > 1e-6, "ventricle should move within the cycle");
    }

    #[test]
    fn lowrank_phantom_construction() {
        let spec = small_spec();
        let (x, u, v) = generate_lowrank_phantom(&spec, 1).unwrap();
        assert!(v.orthonormality_defect() < 1e-10);
        // rank 1: every frame is a scalar multiple of the basis image
        for t in 0..x.frames() {
            let scale = v.at(0, t);
            for (a, &b) in x.frame(t).iter().zip(u.basis_image(0).iter()) {
                assert!((a - b * scale).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sensitivities_rss_is_one() {
        for coils in [1usize, 4, 8] {
            let s = generate_sensitivities(coils, 16, 16, 3).unwrap();
            for r in s.rss() {
                assert!((r - 1.0).abs() < 1e-12, "rss {r}");
            }
        }
        // J = 1: unit magnitude everywhere
        let s1 = generate_sensitivities(1, 16, 16, 3).unwrap();
        for z in s1.map(0) {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sensitivities_pairwise_distinct() {
        let s = generate_sensitivities(8, 24, 24, 11).unwrap();
        for a in 0..8 {
            for b in (a + 1)..8 {
                let ma = s.map(a);
                let mb = s.map(b);
                let corr = dot(ma, mb).norm() / (nrm2(ma) * nrm2(mb));
                assert!(corr < 0.99, "coils {a},{b} correlate at {corr}");
            }
        }
    }

    #[test]
    fn sampling_complete_sweeps() {
        // nkspc * ny == lines_per_frame * frames: every ky sampled exactly nkspc times
        let spec = SamplingSpec {
            nkspc: 3,
            nav_interval: 3,
            lines_per_frame: 3,
            seed: 9,
        };
        let ny = 12;
        let frames = spec.nkspc * ny / spec.lines_per_frame;
        let (mask, frame_map, schedule) = generate_sampling(&spec, ny, frames).unwrap();
        assert_eq!(mask.sampled_count(), spec.nkspc * ny);
        for ky in 0..ny {
            assert_eq!(mask.sampled_times(ky).len(), spec.nkspc, "ky {ky}");
        }
        assert_eq!(frame_map, (0..frames).collect::<Vec<_>>());
        assert_eq!(schedule.center_ky, ny / 2);
        // one navigator per frame, after that frame's imaging lines
        let navs = schedule
            .readouts
            .iter()
            .filter(|r| matches!(r, Readout::Navigator { .. }))
            .count();
        assert_eq!(navs, frames);
    }

    #[test]
    fn sampling_rejects_infeasible_budgets() {
        let spec = SamplingSpec {
            nkspc: 9,
            nav_interval: 3,
            lines_per_frame: 3,
            seed: 1,
        };
        // too few frames for the budget
        let err = generate_sampling(&spec, 12, 10).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("at least 36 frames"), "{msg}");
        // too many frames for the budget (some frame would be empty)
        let err2 = generate_sampling(&spec, 12, 1000).unwrap_err();
        assert!(format!("{err2}").contains("cannot cover"), "{err2}");
    }

    #[test]
    fn default_schedule_undersampling_factor() {
        let spec = SamplingSpec::default();
        let ny = 150;
        let frames = spec.nkspc * ny / spec.lines_per_frame;
        let (mask, _, _) = generate_sampling(&spec, ny, frames).unwrap();
        let r = mask.acceleration_with_navigator();
        assert!(
            (37.0..=42.0).contains(&r),
            "acceleration {r} outside 37-42"
        );
    }

    #[test]
    fn noiseless_full_sampling_is_exact_dft() {
        let spec = small_spec();
        let x = generate_phantom(&spec).unwrap();
        let s = CoilSensitivities::uniform(spec.nx, spec.ny);
        let mask = KtMask::full(spec.ny, spec.frames);
        let fft = FftEngine::new(spec.nx, spec.ny);
        let (y, _nav) = sample_kspace(&x, &s, &mask, 0.0, 3, &fft).unwrap();
        for t in [0usize, spec.frames / 2] {
            let mut want = x.frame(t).to_vec();
            fft.fft2(&mut want);
            for (a, b) in y.plane(0, t).iter().zip(want.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_linearity_at_zero_noise() {
        let spec = small_spec();
        let x = generate_phantom(&spec).unwrap();
        let mut x2 = x.clone();
        for z in x2.data_mut() {
            *z *= 2.0;
        }
        let s = generate_sensitivities(2, spec.nx, spec.ny, 3).unwrap();
        let sampling = SamplingSpec {
            nkspc: 2,
            nav_interval: 3,
            lines_per_frame: 2,
            seed: 21,
        };
        let (mask, _, _) = generate_sampling(&sampling, spec.ny, spec.frames).unwrap();
        let fft = FftEngine::new(spec.nx, spec.ny);
        let (y1, n1) = sample_kspace(&x, &s, &mask, 0.0, 5, &fft).unwrap();
        let (y2, n2) = sample_kspace(&x2, &s, &mask, 0.0, 5, &fft).unwrap();
        for (a, b) in y2.data().iter().zip(y1.data().iter()) {
            assert!((a - b * 2.0).norm() < 1e-10);
        }
        for (a, b) in n2.data().iter().zip(n1.data().iter()) {
            assert!((a - b * 2.0).norm() < 1e-10);
        }
    }

    #[test]
    fn noise_variance_calibrated() {
        // zero image: sampled entries are pure noise with variance sigma2
        let (nx, ny, frames) = (16, 16, 40);
        let x = CasoratiImage::zeros(nx, ny, frames);
        let s = generate_sensitivities(2, nx, ny, 4).unwrap();
        let mask = KtMask::full(ny, frames);
        let fft = FftEngine::new(nx, ny);
        let sigma2 = 0.37;
        let (y, _) = sample_kspace(&x, &s, &mask, sigma2, 99, &fft).unwrap();
        let count = y.data().len();
        assert!(count >= 10_000);
        let var: f64 = y.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / count as f64;
        assert!(
            (var - sigma2).abs() < 0.1 * sigma2,
            "empirical {var} vs {sigma2}"
        );
    }

    #[test]
    fn simulate_deterministic() {
        let phantom = small_spec();
        let sampling = SamplingSpec {
            nkspc: 2,
            nav_interval: 3,
            lines_per_frame: 2,
            seed: 13,
        };
        let a = simulate(&phantom, &sampling, 2, 0.01).unwrap();
        let b = simulate(&phantom, &sampling, 2, 0.01).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.kspace, b.kspace);
        assert_eq!(a.nav, b.nav);
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn navigator_sufficiency() {
        let phantom = small_spec();
        let sampling = SamplingSpec {
            nkspc: 2,
            nav_interval: 3,
            lines_per_frame: 2,
            seed: 13,
        };
        let d = simulate(&phantom, &sampling, 2, 0.0).unwrap();
        // nav has one column per frame: enough for any L <= T
        assert_eq!(d.nav.cols(), phantom.frames);
        assert_eq!(d.nav.rows(), 2 * phantom.nx);
    }
}
