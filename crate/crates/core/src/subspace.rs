//! Temporal subspace extraction from navigator data and model-order
//! selection.
//!
//! The navigator stream samples the center phase-encode line at full frame
//! rate; its Casorati matrix is decomposed by SVD and the leading right
//! singular vectors become the rows of V. Model-order selection predicts the
//! reconstruction error of the rank-L projection estimator under complex
//! Gaussian noise and picks the order that is robust across noise levels.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::exec;
use crate::types::{CasoratiImage, TemporalBasis};

/// Navigator Casorati matrix: P rows (kx samples stacked over coils at the
/// center ky line) by T_nav navigator time points, plus the map from
/// navigator time index to reconstruction frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct NavigatorCasorati {
    data: Vec<Complex64>,
    coils: usize,
    kx: usize,
    cols: usize,
    frame_map: Vec<usize>,
}

impl NavigatorCasorati {
    /// Row-major (coils * kx) x T_nav data; row p = coil (p / kx), kx sample
    /// (p % kx). `frame_map` must be strictly increasing, one entry per
    /// navigator time point.
    pub fn new(
        coils: usize,
        kx: usize,
        cols: usize,
        data: Vec<Complex64>,
        frame_map: Vec<usize>,
    ) -> Result<Self> {
        if coils == 0 || kx == 0 || cols == 0 {
            return Err(Error::invalid("navigator matrix must be nonempty"));
        }
        check_dim("navigator data", coils * kx * cols, data.len())?;
        check_dim("frame map", cols, frame_map.len())?;
        if frame_map.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("frame map must be strictly increasing"));
        }
        Ok(Self {
            data,
            coils,
            kx,
            cols,
            frame_map,
        })
    }

    pub fn rows(&self) -> usize {
        self.coils * self.kx
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn kx_len(&self) -> usize {
        self.kx
    }

    pub fn frame_map(&self) -> &[usize] {
        &self.frame_map
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, p: usize, q: usize) -> Complex64 {
        self.data[p * self.cols + q]
    }

    /// Mixes the coil dimension with a (coils x coils_out) matrix, as used
    /// by coil compression. Row p of coil j maps through column c of the
    /// mixing matrix.
    pub fn mix_coils(&self, mixing: &[Complex64], coils_out: usize) -> Result<Self> {
        check_dim("mixing matrix", self.coils * coils_out, mixing.len())?;
        let mut data = vec![Complex64::new(0.0, 0.0); coils_out * self.kx * self.cols];
        for c in 0..coils_out {
            for j in 0..self.coils {
                let w = mixing[j * coils_out + c];
                for x in 0..self.kx {
                    let src = (j * self.kx + x) * self.cols;
                    let dst = (c * self.kx + x) * self.cols;
                    for q in 0..self.cols {
                        data[dst + q] += self.data[src + q] * w;
                    }
                }
            }
        }
        NavigatorCasorati::new(coils_out, self.kx, self.cols, data, self.frame_map.clone())
    }
}

/// Extracts the temporal basis: the first L right singular vectors of the
/// navigator Casorati matrix, ordered by descending singular value.
///
/// Each row's phase is fixed so that its largest-magnitude entry is real
/// positive, making the output deterministic. When the navigator grid is
/// sparser than the frame grid, each frame takes the value of the most
/// recent navigator time point.
pub fn extract_temporal_basis(nav: &NavigatorCasorati, order: usize) -> Result<TemporalBasis> {
    if order == 0 {
        return Err(Error::invalid("model order must be at least 1"));
    }
    let bound = nav.rows().min(nav.cols());
    if order > bound {
        return Err(Error::shape("model order", bound, order));
    }

    let mat = DMatrix::from_row_slice(nav.rows(), nav.cols(), nav.data());
    let svd = mat.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::invalid("SVD did not produce right singular vectors"))?;
    let sigma = svd.singular_values;

    // rows sorted by descending singular value
    let mut idx: Vec<usize> = (0..sigma.len()).collect();
    idx.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());

    let t_nav = nav.cols();
    let mut rows: Vec<Vec<Complex64>> = Vec::with_capacity(order);
    for &r in idx.iter().take(order) {
        let mut row: Vec<Complex64> = (0..t_nav).map(|q| vt[(r, q)]).collect();
        // phase gauge: largest-magnitude entry real positive
        let (mut best, mut best_mag) = (0usize, 0.0f64);
        for (q, z) in row.iter().enumerate() {
            if z.norm() > best_mag {
                best_mag = z.norm();
                best = q;
            }
        }
        if best_mag > 0.0 {
            let phase = row[best] / best_mag;
            let rot = phase.conj();
            for z in row.iter_mut() {
                *z *= rot;
            }
        }
        rows.push(row);
    }

    let frames = nav.frame_map().last().unwrap() + 1;
    let mut data = vec![Complex64::new(0.0, 0.0); order * frames];
    for (l, row) in rows.iter().enumerate() {
        let mut q = 0usize;
        for f in 0..frames {
            while q + 1 < t_nav && nav.frame_map()[q + 1] <= f {
                q += 1;
            }
            data[l * frames + f] = row[q];
        }
    }
    TemporalBasis::new(order, frames, data)
}

/// Predicted per-pixel RMS reconstruction error of the rank-L projection
/// estimator under i.i.d. complex Gaussian noise of variance `sigma2`:
///
/// ```text
/// e_pix = sqrt((||X V^H V - X||_F^2 + N * L * sigma2) / (N * T))
/// ```
///
/// The normalization makes the value the expected root-mean-square error per
/// pixel of (X + E) projected onto the row space of V.
pub fn predicted_error(
    x: &CasoratiImage,
    v: &TemporalBasis,
    sigma2: f64,
    order: usize,
) -> Result<f64> {
    if sigma2 < 0.0 {
        return Err(Error::invalid("noise variance must be nonnegative"));
    }
    check_dim("model order", v.order(), order)?;
    check_dim("frames", x.frames(), v.frames())?;
    let u = x.contract(v)?;
    let xp = u.expand(v)?;
    let proj_sq: f64 = xp
        .data()
        .iter()
        .zip(x.data().iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let n = x.n() as f64;
    let t = x.frames() as f64;
    Ok(((proj_sq + n * order as f64 * sigma2) / (n * t)).sqrt())
}

/// One point of the model-order study.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOrderEntry {
    pub order: usize,
    pub sigma2: f64,
    pub e_pix: f64,
}

/// Predicted error over a grid of noise levels and model orders,
/// sorted by (sigma2, L).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelOrderCurve {
    pub entries: Vec<ModelOrderEntry>,
}

impl ModelOrderCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,sigma2,e_pix\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.order, e.sigma2, e.e_pix));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        crate::fsio::write_atomic(path, self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Evaluates the predicted-error formula for every (sigma2, L) pair,
/// re-extracting V from the navigator for each L.
pub fn model_order_curve(
    x: &CasoratiImage,
    nav: &NavigatorCasorati,
    sigma2_list: &[f64],
    orders: &[usize],
) -> Result<ModelOrderCurve> {
    if orders.is_empty() || sigma2_list.is_empty() {
        return Err(Error::invalid("model-order grid must be nonempty"));
    }
    if let Some(&bad) = sigma2_list.iter().find(|&&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::invalid(format!("invalid noise variance {bad}")));
    }
    let bases: Vec<Result<TemporalBasis>> =
        exec::map_indexed(orders.len(), |i| extract_temporal_basis(nav, orders[i]));
    let mut entries = Vec::with_capacity(orders.len() * sigma2_list.len());
    for (i, basis) in bases.into_iter().enumerate() {
        let v = basis?;
        let order = orders[i];
        // projection residual does not depend on sigma2; reuse it
        let base_sq = {
            let u = x.contract(&v)?;
            let xp = u.expand(&v)?;
            xp.data()
                .iter()
                .zip(x.data().iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
        };
        let n = x.n() as f64;
        let t = x.frames() as f64;
        for &s2 in sigma2_list {
            let e_pix = ((base_sq + n * order as f64 * s2) / (n * t)).sqrt();
            entries.push(ModelOrderEntry {
                order,
                sigma2: s2,
                e_pix,
            });
        }
    }
    entries.sort_by(|a, b| {
        a.sigma2
            .partial_cmp(&b.sigma2)
            .unwrap()
            .then(a.order.cmp(&b.order))
    });
    Ok(ModelOrderCurve { entries })
}

/// Picks the model order minimizing the worst-case predicted error across
/// the provided noise levels; ties break toward the smaller order.
pub fn select_model_order(curve: &ModelOrderCurve) -> Result<usize> {
    if curve.entries.is_empty() {
        return Err(Error::invalid("model-order curve is empty"));
    }
    let mut worst: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for e in &curve.entries {
        let w = worst.entry(e.order).or_insert(f64::NEG_INFINITY);
        if e.e_pix > *w {
            *w = e.e_pix;
        }
    }
    let mut best_order = 0usize;
    let mut best_val = f64::INFINITY;
    for (&order, &val) in worst.iter() {
        if val < best_val {
            best_val = val;
            best_order = order;
        }
    }
    Ok(best_order)
}
