//! Sparse parametric channel estimation: angular dictionaries, the stacked
//! sensing matrix over pilot shapes, orthogonal matching pursuit, mutual
//! coherence analysis, and greedy coherence-minimizing pilot selection.

use crate::channel::{steering_for_shape, ChannelVector};
use crate::error::{FimError, Result};
use crate::geometry::{
    element_positions, fourier_pilot_shapes, random_pilot_shapes, ArrayGeometry, DeformationShape,
};
use crate::parallel::par_map;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Discrete grid of candidate departure angles.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    /// `(theta, phi)` pairs, radians.
    pub angles: Vec<(f64, f64)>,
}

impl AngularGrid {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// Stacked sensing matrix: column `d` is the vertical stack of the steering
/// vectors of grid angle `d` across all pilot shapes.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    /// `(M*N) x D` complex matrix.
    pub phi: Array2<Complex64>,
    pub source_shapes: Vec<DeformationShape>,
    pub grid: AngularGrid,
}

/// Result of a sparse recovery run.
#[derive(Debug, Clone)]
pub struct SparseSolution {
    /// Selected dictionary atom indices, in selection order.
    pub support: Vec<usize>,
    /// Complex gains from the final least-squares refit.
    pub gains: Vec<Complex64>,
    /// Norm of the final residual.
    pub residual_norm: f64,
    /// Residual norm after each selection (starting from `||y||`).
    pub residual_history: Vec<f64>,
    /// Set when a rank-deficient support fit forced a pseudo-inverse refit.
    pub pinv_fallback: bool,
}

impl SparseSolution {
    pub fn empty(norm_y: f64) -> Self {
        Self {
            support: Vec::new(),
            gains: Vec::new(),
            residual_norm: norm_y,
            residual_history: vec![norm_y],
            pinv_fallback: false,
        }
    }
}

/// Cell-centered uniform grid over `theta, phi` in `(0, pi)`.
pub fn angular_grid(d_theta: usize, d_phi: usize) -> Result<AngularGrid> {
    if d_theta == 0 || d_phi == 0 {
        return Err(FimError::InvalidConfig("grid counts must be >= 1".into()));
    }
    let mut angles = Vec::with_capacity(d_theta * d_phi);
    for it in 0..d_theta {
        let theta = PI * (it as f64 + 0.5) / d_theta as f64;
        for ip in 0..d_phi {
            let phi = PI * (ip as f64 + 0.5) / d_phi as f64;
            angles.push((theta, phi));
        }
    }
    Ok(AngularGrid { angles })
}

/// Dictionary of steering vectors at every grid angle for one deformed
/// array: `N x D`.
pub fn build_dictionary(
    shape: &DeformationShape,
    grid: &AngularGrid,
    geom: &ArrayGeometry,
) -> Result<Array2<Complex64>> {
    let n = geom.n_elements();
    if shape.len() != n {
        return Err(FimError::DimensionMismatch(format!(
            "shape length {} vs {} elements",
            shape.len(),
            n
        )));
    }
    let pos = element_positions(geom, shape)?;
    let center = nalgebra::Vector3::new(geom.center[0], geom.center[1], geom.center[2]);
    let kappa = geom.wavenumber();
    let mut dict = Array2::zeros((n, grid.len()));
    for (d, &(theta, phi)) in grid.angles.iter().enumerate() {
        let u = crate::channel::direction_vector(theta, phi);
        for (row, p) in pos.as_slice().iter().enumerate() {
            dict[[row, d]] = Complex64::from_polar(1.0, kappa * (p - center).dot(&u));
        }
    }
    Ok(dict)
}

/// Vertically stack per-shape dictionaries, shape-major: rows
/// `m*N .. (m+1)*N` come from pilot shape `m`.
pub fn stack_sensing_matrix(
    shapes: &[DeformationShape],
    grid: &AngularGrid,
    geom: &ArrayGeometry,
) -> Result<SensingMatrix> {
    if shapes.is_empty() {
        return Err(FimError::InvalidConfig("need at least one pilot shape".into()));
    }
    let n = geom.n_elements();
    let d = grid.len();
    let mut phi = Array2::zeros((shapes.len() * n, d));
    for (m, shape) in shapes.iter().enumerate() {
        let dict = build_dictionary(shape, grid, geom)?;
        phi.slice_mut(ndarray::s![m * n..(m + 1) * n, ..]).assign(&dict);
    }
    Ok(SensingMatrix { phi, source_shapes: shapes.to_vec(), grid: grid.clone() })
}

/// Stack the pilot measurements into the single observation vector matching
/// the sensing matrix row layout.
pub fn stack_measurements(measurements: &[ChannelVector]) -> Array1<Complex64> {
    let n = measurements.first().map_or(0, |m| m.len());
    let mut y = Array1::zeros(measurements.len() * n);
    for (m, h) in measurements.iter().enumerate() {
        for (i, &v) in h.iter().enumerate() {
            y[m * n + i] = v;
        }
    }
    y
}

/// Orthogonal matching pursuit over the stacked system. Selects the atom
/// maximizing `|phi_d^H r| / ||phi_d||`, refits least squares on the support
/// (incremental QR with reorthogonalization), and stops at `max_atoms` atoms
/// or when `||r|| <= residual_tol * ||y||`.
pub fn omp(
    y_stack: &Array1<Complex64>,
    sensing: &SensingMatrix,
    max_atoms: usize,
    residual_tol: f64,
) -> Result<SparseSolution> {
    let (rows, n_atoms) = (sensing.phi.nrows(), sensing.phi.ncols());
    if y_stack.len() != rows {
        return Err(FimError::DimensionMismatch(format!(
            "observation length {} vs sensing rows {rows}",
            y_stack.len()
        )));
    }
    if max_atoms > n_atoms.min(rows) {
        return Err(FimError::InvalidConfig(format!(
            "max_atoms {max_atoms} exceeds min(D, M*N) = {}",
            n_atoms.min(rows)
        )));
    }
    if residual_tol < 0.0 {
        return Err(FimError::InvalidConfig("residual_tol must be >= 0".into()));
    }

    let norm_y = y_stack.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let mut sol = SparseSolution::empty(norm_y);
    let mut residual = y_stack.clone();
    let mut resid_norm = norm_y;
    // orthonormal basis of the selected atoms plus the R factor (by columns)
    let mut q_basis: Vec<Array1<Complex64>> = Vec::new();
    let mut r_cols: Vec<Vec<Complex64>> = Vec::new();
    let mut qty: Vec<Complex64> = Vec::new();
    let col_norms: Vec<f64> = (0..n_atoms)
        .map(|d| sensing.phi.column(d).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut in_support = vec![false; n_atoms];

    while sol.support.len() < max_atoms && resid_norm > residual_tol * norm_y {
        // matched-filter scan
        let scores = par_map(n_atoms, |d| {
            if in_support[d] || col_norms[d] == 0.0 {
                return -1.0;
            }
            let col = sensing.phi.column(d);
            let corr: Complex64 = col.iter().zip(residual.iter()).map(|(a, r)| a.conj() * r).sum();
            corr.norm() / col_norms[d]
        });
        let (best, best_score) = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(d, &s)| (d, s))
            .unwrap();
        if best_score <= 0.0 {
            break;
        }

        // orthogonalize the new atom against the current basis (two passes)
        let mut q: Array1<Complex64> = sensing.phi.column(best).to_owned();
        let mut r_col = vec![Complex64::default(); q_basis.len()];
        for _pass in 0..2 {
            for (i, qi) in q_basis.iter().enumerate() {
                let c: Complex64 = qi.iter().zip(q.iter()).map(|(a, b)| a.conj() * b).sum();
                r_col[i] += c;
                q.zip_mut_with(qi, |qv, av| *qv -= c * av);
            }
        }
        let rho = q.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if rho <= 1e-10 * col_norms[best] {
            // atom already in the span: the support fit is rank deficient
            sol.pinv_fallback = true;
            break;
        }
        q.mapv_inplace(|v| v / rho);
        let proj: Complex64 = q.iter().zip(residual.iter()).map(|(a, r)| a.conj() * r).sum();
        residual.zip_mut_with(&q, |rv, qv| *rv -= proj * qv);
        resid_norm = residual.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();

        r_col.push(Complex64::new(rho, 0.0));
        r_cols.push(r_col);
        q_basis.push(q);
        qty.push(proj);
        in_support[best] = true;
        sol.support.push(best);
        sol.residual_history.push(resid_norm);
    }

    // gains: back-substitute R x = Q^H y
    let s = sol.support.len();
    let mut gains = vec![Complex64::default(); s];
    for i in (0..s).rev() {
        let mut acc = qty[i];
        for j in i + 1..s {
            acc -= r_cols[j][i] * gains[j];
        }
        gains[i] = acc / r_cols[i][i];
    }
    if sol.pinv_fallback && s > 0 {
        gains = pinv_refit(sensing, &sol.support, y_stack)?;
    }
    sol.gains = gains;
    sol.residual_norm = resid_norm;
    Ok(sol)
}

/// SVD least-squares refit of the support submatrix, used when the
/// incremental QR detects rank deficiency.
fn pinv_refit(
    sensing: &SensingMatrix,
    support: &[usize],
    y: &Array1<Complex64>,
) -> Result<Vec<Complex64>> {
    let rows = sensing.phi.nrows();
    let sub = DMatrix::from_fn(rows, support.len(), |r, c| sensing.phi[[r, support[c]]]);
    let rhs = DVector::from_fn(rows, |r, _| y[r]);
    let svd = sub.svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    let x = svd
        .solve(&rhs, eps)
        .map_err(|e| FimError::Singular(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

/// Synthesize the channel at a target shape from a recovered sparse
/// solution: sum of `gain_d * steering(target, theta_d, phi_d)`.
pub fn omp_estimate(
    solution: &SparseSolution,
    target_shape: &DeformationShape,
    grid: &AngularGrid,
    geom: &ArrayGeometry,
) -> Result<ChannelVector> {
    let n = geom.n_elements();
    let mut est: ChannelVector = Array1::zeros(n);
    for (&d, &gain) in solution.support.iter().zip(&solution.gains) {
        let (theta, phi) = grid.angles[d];
        let a = steering_for_shape(geom, target_shape, theta, phi)?;
        est.zip_mut_with(&a, |e, v| *e += gain * v);
    }
    Ok(est)
}

/// Mutual coherence: maximum normalized inner product between distinct
/// columns of the sensing matrix.
pub fn mutual_coherence(sensing: &SensingMatrix) -> Result<f64> {
    coherence_of_matrix(&sensing.phi)
}

/// Mutual coherence of an arbitrary column dictionary.
pub fn coherence_of_matrix(phi: &Array2<Complex64>) -> Result<f64> {
    let d = phi.ncols();
    if d < 2 {
        return Err(FimError::InvalidConfig("coherence needs at least two atoms".into()));
    }
    let norms: Vec<f64> = (0..d)
        .map(|c| phi.column(c).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let row_max = par_map(d - 1, |i| {
        let ci = phi.column(i);
        let mut best = 0.0f64;
        for j in i + 1..d {
            let cj = phi.column(j);
            let dot: Complex64 = ci.iter().zip(cj.iter()).map(|(a, b)| a.conj() * b).sum();
            let mu = dot.norm() / (norms[i] * norms[j]);
            if mu > best {
                best = mu;
            }
        }
        best
    });
    Ok(row_max.into_iter().fold(0.0, f64::max))
}

/// Upper-triangle Gram contribution `A^H A` of one shape's dictionary,
/// stored row-major over pairs `i <= j`.
fn gram_triangle(dict: &Array2<Complex64>) -> Vec<Complex64> {
    let d = dict.ncols();
    let mut tri = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        let ci = dict.column(i);
        for j in i..d {
            let cj = dict.column(j);
            tri.push(ci.iter().zip(cj.iter()).map(|(a, b)| a.conj() * b).sum());
        }
    }
    tri
}

fn triangle_coherence(tri: &[Complex64], d: usize) -> f64 {
    // unit-modulus dictionary entries make every diagonal entry equal, so
    // normalize off-diagonals by the shared diagonal value
    let mut idx = 0usize;
    let mut diag = 1.0f64;
    let mut best = 0.0f64;
    for i in 0..d {
        for j in i..d {
            if i == j {
                if i == 0 {
                    diag = tri[idx].re;
                }
            } else {
                let v = tri[idx].norm();
                if v > best {
                    best = v;
                }
            }
            idx += 1;
        }
    }
    best / diag
}

/// Greedily build an `m`-shape pilot set from a candidate pool, at each step
/// adding the candidate that minimizes the mutual coherence of the stacked
/// dictionary of the selected shapes plus that candidate. Ties break toward
/// the lower pool index.
pub fn greedy_pilot_selection(
    candidate_pool: &[DeformationShape],
    m: usize,
    grid: &AngularGrid,
    geom: &ArrayGeometry,
) -> Result<Vec<DeformationShape>> {
    if candidate_pool.len() < m || m == 0 {
        return Err(FimError::InvalidConfig(format!(
            "pool of {} cannot supply {m} pilots",
            candidate_pool.len()
        )));
    }
    if grid.len() < 2 {
        return Err(FimError::InvalidConfig("grid must have at least two angles".into()));
    }
    let d = grid.len();
    // per-candidate Gram contributions, computed once
    let grams = par_map(candidate_pool.len(), |c| {
        let dict = build_dictionary(&candidate_pool[c], grid, geom)?;
        Ok::<_, FimError>(gram_triangle(&dict))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let tri_len = d * (d + 1) / 2;
    let mut acc = vec![Complex64::default(); tri_len];
    let mut selected: Vec<usize> = Vec::with_capacity(m);
    let mut available: Vec<usize> = (0..candidate_pool.len()).collect();
    for _ in 0..m {
        let scores = par_map(available.len(), |slot| {
            let c = available[slot];
            let mut merged = vec![Complex64::default(); tri_len];
            for (t, v) in merged.iter_mut().enumerate() {
                *v = acc[t] + grams[c][t];
            }
            triangle_coherence(&merged, d)
        });
        let best_slot = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
            .map(|(slot, _)| slot)
            .unwrap();
        let chosen = available.remove(best_slot);
        for (t, v) in acc.iter_mut().enumerate() {
            *v += grams[chosen][t];
        }
        selected.push(chosen);
    }
    Ok(selected.into_iter().map(|c| candidate_pool[c].clone()).collect())
}

/// Pilot-shape design kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PilotKind {
    Fourier,
    Random,
    Greedy,
}

impl std::fmt::Display for PilotKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PilotKind::Fourier => write!(f, "fourier"),
            PilotKind::Random => write!(f, "random"),
            PilotKind::Greedy => write!(f, "greedy"),
        }
    }
}

/// Default candidate pool for greedy selection: the cosine basis up to
/// `max(u, v) <= 7` (capped at the array size) plus 16 seeded random shapes.
pub fn default_greedy_pool(
    geom: &ArrayGeometry,
    bound: f64,
    seed: u64,
) -> Result<Vec<DeformationShape>> {
    let n_fourier = geom.n_elements().min(64);
    let mut pool = fourier_pilot_shapes(n_fourier, geom, bound)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.extend(random_pilot_shapes(16, geom, bound, &mut rng)?);
    Ok(pool)
}

/// Generate `m` probing shapes of the requested kind. Greedy selection uses
/// the default 16x16 angular grid and candidate pool.
pub fn pilot_shape_set(
    m: usize,
    kind: PilotKind,
    geom: &ArrayGeometry,
    bound: f64,
    seed: u64,
) -> Result<Vec<DeformationShape>> {
    match kind {
        PilotKind::Fourier => fourier_pilot_shapes(m, geom, bound),
        PilotKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_pilot_shapes(m, geom, bound, &mut rng)
        }
        PilotKind::Greedy => {
            let pool = default_greedy_pool(geom, bound, seed)?;
            let grid = angular_grid(16, 16)?;
            greedy_pilot_selection(&pool, m, &grid, geom)
        }
    }
}
