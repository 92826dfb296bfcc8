//! Interpolation estimators over the deformation space: nearest neighbor,
//! 1D linear interpolation, KNN local-linear combination, and kernel ridge
//! regression with an RBF kernel.

use crate::channel::{ChannelVector, PilotSet};
use crate::error::{FimError, Result};
use crate::geometry::DeformationShape;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// Configuration of the KNN local-linear estimator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    /// Neighbor count `k`.
    pub neighbors: usize,
    /// Relative ridge regularization of the weight solve.
    pub ridge_eps: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { neighbors: 5, ridge_eps: 1e-8 }
    }
}

/// Fitted kernel ridge regression model.
#[derive(Debug, Clone)]
pub struct KrrModel {
    /// RBF bandwidth (1/m^2).
    pub gamma: f64,
    /// Regularization.
    pub lambda: f64,
    pub pilot_shapes: Vec<DeformationShape>,
    /// `M x N` complex coefficients.
    pub coefficients: Array2<Complex64>,
    /// `M x M` kernel matrix of the pilot shapes.
    pub kernel_matrix: Array2<f64>,
}

/// Return the measurement of the pilot shape closest to the target; ties
/// break toward the lowest index.
pub fn nearest_neighbor_estimate(pilots: &PilotSet, target: &DeformationShape) -> Result<ChannelVector> {
    if pilots.is_empty() {
        return Err(FimError::InvalidConfig("empty pilot set".into()));
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (m, shape) in pilots.shapes.iter().enumerate() {
        let d = shape.distance(target);
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    Ok(pilots.measurements[best].clone())
}

/// Linear interpolation between two measurements at scalar abscissae:
/// `h_a + (h_b - h_a) * (t - a) / (b - a)`.
pub fn linear_interp_1d(
    zeta_a: f64,
    h_a: &ChannelVector,
    zeta_b: f64,
    h_b: &ChannelVector,
    zeta_target: f64,
) -> Result<ChannelVector> {
    if zeta_a == zeta_b {
        return Err(FimError::InvalidConfig("coincident interpolation abscissae".into()));
    }
    if h_a.len() != h_b.len() {
        return Err(FimError::DimensionMismatch("interpolation endpoint lengths differ".into()));
    }
    let t = (zeta_target - zeta_a) / (zeta_b - zeta_a);
    Ok(h_a
        .iter()
        .zip(h_b)
        .map(|(a, b)| a + (b - a) * t)
        .collect())
}

/// Indices of the `k` nearest pilot shapes and the local-linear weights
/// reconstructing the target: solve `(Z^T Z + eps I) w = Z^T zeta_target`
/// with `eps = ridge_eps * trace(Z^T Z) / k`.
pub fn knn_weights(
    pilot_shapes: &[DeformationShape],
    target: &DeformationShape,
    cfg: &KnnConfig,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let m = pilot_shapes.len();
    let k = cfg.neighbors;
    if k == 0 || k > m {
        return Err(FimError::InvalidConfig(format!(
            "neighbor count {k} out of range for {m} pilots"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let dists: Vec<f64> = pilot_shapes.iter().map(|s| s.distance(target)).collect();
    order.sort_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b)));
    let indices: Vec<usize> = order[..k].to_vec();

    let n = target.len();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (a, &ia) in indices.iter().enumerate() {
        let za = pilot_shapes[ia].values();
        for (b, &ib) in indices.iter().enumerate().skip(a) {
            let zb = pilot_shapes[ib].values();
            let dot: f64 = (0..n).map(|i| za[i] * zb[i]).sum();
            gram[(a, b)] = dot;
            gram[(b, a)] = dot;
        }
        rhs[a] = (0..n).map(|i| za[i] * target.values()[i]).sum();
    }
    let eps = cfg.ridge_eps * gram.trace() / k as f64;
    for d in 0..k {
        gram[(d, d)] += eps;
    }
    let weights = solve_spd(&gram, &rhs)?;
    Ok((indices, weights.iter().copied().collect()))
}

/// Apply KNN local-linear weights to the corresponding measurements.
pub fn knn_estimate(pilots: &PilotSet, target: &DeformationShape, cfg: &KnnConfig) -> Result<ChannelVector> {
    let (indices, weights) = knn_weights(&pilots.shapes, target, cfg)?;
    let n = pilots.measurements[0].len();
    let mut est: ChannelVector = Array1::zeros(n);
    for (&idx, &w) in indices.iter().zip(&weights) {
        est.zip_mut_with(&pilots.measurements[idx], |e, h| *e += h * w);
    }
    Ok(est)
}

/// Radial basis function kernel `exp(-gamma * ||a - b||^2)`.
pub fn rbf_kernel(a: &DeformationShape, b: &DeformationShape, gamma: f64) -> f64 {
    let d = a.distance(b);
    (-gamma * d * d).exp()
}

/// Median-distance heuristic bandwidth: `1 / (2 * median(||zi - zj||)^2)`.
/// Falls back to 1.0 with fewer than two pilots.
pub fn median_heuristic_gamma(shapes: &[DeformationShape]) -> f64 {
    let mut dists: Vec<f64> = Vec::new();
    for i in 0..shapes.len() {
        for j in i + 1..shapes.len() {
            dists.push(shapes[i].distance(&shapes[j]));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median <= 0.0 {
        1.0
    } else {
        1.0 / (2.0 * median * median)
    }
}

/// Fit the KRR coefficients `C = (K + lambda I)^-1 H_pilots`. When `gamma`
/// is unset the median-distance heuristic is used.
pub fn krr_fit(pilots: &PilotSet, gamma: Option<f64>, lambda: f64) -> Result<KrrModel> {
    if pilots.is_empty() {
        return Err(FimError::InvalidConfig("empty pilot set".into()));
    }
    if lambda < 0.0 {
        return Err(FimError::InvalidConfig("lambda must be >= 0".into()));
    }
    let m = pilots.len();
    let n = pilots.measurements[0].len();
    let gamma = gamma.unwrap_or_else(|| median_heuristic_gamma(&pilots.shapes));

    let mut kernel_matrix = Array2::zeros((m, m));
    let mut reg = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let k = rbf_kernel(&pilots.shapes[i], &pilots.shapes[j], gamma);
            kernel_matrix[[i, j]] = k;
            kernel_matrix[[j, i]] = k;
            reg[(i, j)] = k;
            reg[(j, i)] = k;
        }
        reg[(i, i)] += lambda;
    }

    let mut rhs_re = DMatrix::zeros(m, n);
    let mut rhs_im = DMatrix::zeros(m, n);
    for (i, h) in pilots.measurements.iter().enumerate() {
        for (j, v) in h.iter().enumerate() {
            rhs_re[(i, j)] = v.re;
            rhs_im[(i, j)] = v.im;
        }
    }
    let sol_re = solve_spd_matrix(&reg, &rhs_re)?;
    let sol_im = solve_spd_matrix(&reg, &rhs_im)?;
    let coefficients = Array2::from_shape_fn((m, n), |(i, j)| {
        Complex64::new(sol_re[(i, j)], sol_im[(i, j)])
    });
    Ok(KrrModel {
        gamma,
        lambda,
        pilot_shapes: pilots.shapes.clone(),
        coefficients,
        kernel_matrix,
    })
}

/// Evaluate a fitted KRR model at a target shape: `k_target^T C`.
pub fn krr_estimate(model: &KrrModel, target: &DeformationShape) -> ChannelVector {
    let n = model.coefficients.ncols();
    let mut est: ChannelVector = Array1::zeros(n);
    for (m, shape) in model.pilot_shapes.iter().enumerate() {
        let k = rbf_kernel(target, shape, model.gamma);
        for j in 0..n {
            est[j] += model.coefficients[[m, j]] * k;
        }
    }
    est
}

/// Solve an SPD system by Cholesky, falling back to an SVD pseudo-inverse
/// (singular values below `1e-12 * smax` dropped) when the factorization
/// fails.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12 * svd.singular_values.max())
        .map_err(|e| FimError::Singular(e.to_string()))
}

fn solve_spd_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12 * svd.singular_values.max())
        .map_err(|e| FimError::Singular(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{observe_pilots, sample_channel_realization, ChannelParams};
    use crate::geometry::{random_pilot_shapes, ArrayGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const WL: f64 = 0.0107;

    fn shape(values: Vec<f64>, bound: f64) -> DeformationShape {
        DeformationShape::new(values, bound).unwrap()
    }

    fn cvec(values: &[(f64, f64)]) -> ChannelVector {
        values.iter().map(|&(re, im)| Complex64::new(re, im)).collect()
    }

    fn pilot_set(shapes: Vec<DeformationShape>, meas: Vec<ChannelVector>) -> PilotSet {
        PilotSet::new(shapes, meas, 0.0).unwrap()
    }

    /// Test-only dense solver: Gaussian elimination with partial pivoting,
    /// independent of the nalgebra path used by the implementation.
    fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
        let mut rhs = b.to_vec();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
            m.swap(col, piv);
            rhs.swap(col, piv);
            for row in col + 1..n {
                let f = m[row][col] / m[col][col];
                for c in col..n {
                    m[row][c] -= f * m[col][c];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = rhs[row];
            for c in row + 1..n {
                acc -= m[row][c] * x[c];
            }
            x[row] = acc / m[row][row];
        }
        x
    }

    #[test]
    fn nn_returns_exact_pilot_measurement() {
        let shapes = vec![
            shape(vec![0.1, 0.0], 1.0),
            shape(vec![0.0, 0.2], 1.0),
            shape(vec![-0.3, 0.3], 1.0),
        ];
        let meas = vec![
            cvec(&[(1.0, 0.0), (0.0, 0.0)]),
            cvec(&[(0.0, 1.0), (0.0, 0.0)]),
            cvec(&[(0.0, 0.0), (1.0, 1.0)]),
        ];
        let pilots = pilot_set(shapes.clone(), meas.clone());
        let est = nearest_neighbor_estimate(&pilots, &shapes[2]).unwrap();
        assert_eq!(est, meas[2]);
    }

    #[test]
    fn nn_ties_break_to_lowest_index() {
        let shapes = vec![shape(vec![1.0], 2.0), shape(vec![-1.0], 2.0)];
        let meas = vec![cvec(&[(5.0, 0.0)]), cvec(&[(7.0, 0.0)])];
        let pilots = pilot_set(shapes, meas.clone());
        let est = nearest_neighbor_estimate(&pilots, &shape(vec![0.0], 2.0)).unwrap();
        assert_eq!(est, meas[0]);
    }

    #[test]
    fn nn_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let shapes = random_pilot_shapes(8, &geom, 0.5, &mut rng).unwrap();
        let meas: Vec<ChannelVector> = (0..8)
            .map(|i| (0..16).map(|j| Complex64::new(i as f64, j as f64)).collect())
            .collect();
        let pilots = pilot_set(shapes.clone(), meas.clone());
        for _ in 0..20 {
            let t = random_pilot_shapes(1, &geom, 0.5, &mut rng).unwrap().remove(0);
            let est = nearest_neighbor_estimate(&pilots, &t).unwrap();
            let best = (0..8)
                .min_by(|&a, &b| {
                    shapes[a].distance(&t).partial_cmp(&shapes[b].distance(&t)).unwrap()
                })
                .unwrap();
            assert_eq!(est, meas[best]);
        }
    }

    #[test]
    fn linear_interp_endpoint_midpoint_quarter() {
        let h_a = cvec(&[(1.0, 0.0), (2.0, 2.0)]);
        let h_b = cvec(&[(3.0, 0.0), (0.0, -2.0)]);
        let at_a = linear_interp_1d(0.0, &h_a, 1.0, &h_b, 0.0).unwrap();
        assert_eq!(at_a, h_a);
        let mid = linear_interp_1d(0.0, &h_a, 1.0, &h_b, 0.5).unwrap();
        assert_eq!(mid, cvec(&[(2.0, 0.0), (1.0, 0.0)]));
        let quarter = linear_interp_1d(0.0, &h_a, 1.0, &h_b, 0.25).unwrap();
        assert_eq!(quarter, cvec(&[(1.5, 0.0), (1.5, 1.0)]));
        assert!(linear_interp_1d(1.0, &h_a, 1.0, &h_b, 0.5).is_err());
    }

    #[test]
    fn knn_single_neighbor_scalar_least_squares() {
        let z1 = shape(vec![0.2, -0.4, 0.6], 1.0);
        let target = shape(vec![0.1, -0.2, 0.3], 1.0);
        let cfg = KnnConfig { neighbors: 1, ridge_eps: 0.0 };
        let (idx, w) = knn_weights(&[z1], &target, &cfg).unwrap();
        assert_eq!(idx, vec![0]);
        assert!((w[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn knn_reproduces_exact_neighbor() {
        let shapes = vec![
            shape(vec![1.0, 0.0, 0.0], 2.0),
            shape(vec![0.0, 1.0, 0.0], 2.0),
            shape(vec![0.0, 0.0, 1.0], 2.0),
        ];
        let cfg = KnnConfig { neighbors: 3, ridge_eps: 0.0 };
        let (idx, w) = knn_weights(&shapes, &shapes[1], &cfg).unwrap();
        let pos = idx.iter().position(|&i| i == 1).unwrap();
        for (i, &wi) in w.iter().enumerate() {
            let expect = if i == pos { 1.0 } else { 0.0 };
            assert!((wi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_weights_match_dense_solver_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let shapes = random_pilot_shapes(10, &geom, 0.5, &mut rng).unwrap();
        let target = random_pilot_shapes(1, &geom, 0.5, &mut rng).unwrap().remove(0);
        let cfg = KnnConfig { neighbors: 5, ridge_eps: 0.0 };
        let (idx, w) = knn_weights(&shapes, &target, &cfg).unwrap();

        // oracle: normal equations solved by the test-local elimination
        let k = idx.len();
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for a in 0..k {
            for b in 0..k {
                gram[a][b] = shapes[idx[a]]
                    .values()
                    .iter()
                    .zip(shapes[idx[b]].values())
                    .map(|(x, y)| x * y)
                    .sum();
            }
            rhs[a] = shapes[idx[a]]
                .values()
                .iter()
                .zip(target.values())
                .map(|(x, y)| x * y)
                .sum();
        }
        let expect = gauss_solve(&gram, &rhs);
        for i in 0..k {
            assert!((w[i] - expect[i]).abs() < 1e-9, "w[{i}] {} vs {}", w[i], expect[i]);
        }
    }

    #[test]
    fn knn_normal_equations_residual_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let shapes = random_pilot_shapes(12, &geom, 0.5, &mut rng).unwrap();
        let target = random_pilot_shapes(1, &geom, 0.5, &mut rng).unwrap().remove(0);
        let cfg = KnnConfig { neighbors: 6, ridge_eps: 0.0 };
        let (idx, w) = knn_weights(&shapes, &target, &cfg).unwrap();
        // || Z^T (t - Z w) || < 1e-9 * || Z^T t ||
        let n = target.len();
        let mut resid = vec![0.0; n];
        for i in 0..n {
            resid[i] = target.values()[i]
                - idx.iter().zip(&w).map(|(&m, &wm)| wm * shapes[m].values()[i]).sum::<f64>();
        }
        let mut zt_r = 0.0f64;
        let mut zt_t = 0.0f64;
        for &m in &idx {
            let zr: f64 = shapes[m].values().iter().zip(&resid).map(|(z, r)| z * r).sum();
            let zt: f64 = shapes[m].values().iter().zip(target.values()).map(|(z, t)| z * t).sum();
            zt_r += zr * zr;
            zt_t += zt * zt;
        }
        assert!(zt_r.sqrt() < 1e-9 * zt_t.sqrt());
    }

    #[test]
    fn knn_estimate_midpoint_averages_measurements() {
        // Two near pilots symmetric about the target (u +- d with u . d = 0),
        // two far pilots that k = 2 must skip.
        let u = [0.3, 0.3, 0.0, 0.0];
        let d = [0.0, 0.0, 0.2, -0.2];
        let mk = |sign: f64| {
            shape((0..4).map(|i| u[i] + sign * d[i]).collect(), 10.0)
        };
        let shapes = vec![
            mk(1.0),
            mk(-1.0),
            shape(vec![5.0, -5.0, 5.0, -5.0], 10.0),
            shape(vec![-5.0, 5.0, -5.0, 5.0], 10.0),
        ];
        let meas = vec![
            cvec(&[(1.0, 1.0); 4]),
            cvec(&[(3.0, -1.0); 4]),
            cvec(&[(100.0, 0.0); 4]),
            cvec(&[(-100.0, 0.0); 4]),
        ];
        let pilots = pilot_set(shapes, meas);
        let target = shape(u.to_vec(), 10.0);
        let cfg = KnnConfig { neighbors: 2, ridge_eps: 0.0 };
        let est = knn_estimate(&pilots, &target, &cfg).unwrap();
        for v in est.iter() {
            assert!((v - Complex64::new(2.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn estimators_are_linear_in_measurements() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let shapes = random_pilot_shapes(8, &geom, 0.5, &mut rng).unwrap();
        let meas: Vec<ChannelVector> = (0..8)
            .map(|_| {
                (0..16)
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let scaled: Vec<ChannelVector> = meas.iter().map(|h| h.mapv(|v| v * 3.0)).collect();
        let target = random_pilot_shapes(1, &geom, 0.5, &mut rng).unwrap().remove(0);
        let p1 = pilot_set(shapes.clone(), meas);
        let p2 = pilot_set(shapes, scaled);
        let cfg = KnnConfig::default();

        let pairs = [
            (nearest_neighbor_estimate(&p1, &target).unwrap(), nearest_neighbor_estimate(&p2, &target).unwrap()),
            (knn_estimate(&p1, &target, &cfg).unwrap(), knn_estimate(&p2, &target, &cfg).unwrap()),
            (
                krr_estimate(&krr_fit(&p1, None, 1e-2).unwrap(), &target),
                krr_estimate(&krr_fit(&p2, None, 1e-2).unwrap(), &target),
            ),
        ];
        for (base, scaled) in pairs {
            for n in 0..16 {
                assert!((scaled[n] - base[n] * 3.0).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn rbf_kernel_basics() {
        let a = shape(vec![0.3, -0.1], 1.0);
        let b = shape(vec![-0.2, 0.4], 1.0);
        assert!((rbf_kernel(&a, &a, 2.0) - 1.0).abs() < 1e-15);
        assert!((rbf_kernel(&a, &b, 1.7) - rbf_kernel(&b, &a, 1.7)).abs() < 1e-15);
        let unit_apart = shape(vec![1.0, 0.0], 2.0);
        let origin = shape(vec![0.0, 0.0], 2.0);
        assert!((rbf_kernel(&unit_apart, &origin, 1.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn krr_single_pilot_closed_form() {
        let shapes = vec![shape(vec![0.1, 0.2], 1.0)];
        let meas = vec![cvec(&[(2.0, -1.0), (4.0, 0.5)])];
        let lambda = 0.5;
        let model = krr_fit(&pilot_set(shapes, meas.clone()), Some(1.0), lambda).unwrap();
        for j in 0..2 {
            let expect = meas[0][j] / (1.0 + lambda);
            assert!((model.coefficients[[0, j]] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn ridgeless_krr_interpolates_pilots() {
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let params = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let real = sample_channel_realization(&params, &mut rng);
        let shapes = random_pilot_shapes(6, &geom, 0.5 * WL, &mut rng).unwrap();
        let pilots = observe_pilots(&real, &shapes, 20.0, &geom, &mut rng).unwrap();
        let model = krr_fit(&pilots, None, 0.0).unwrap();
        for (m, shape) in pilots.shapes.iter().enumerate() {
            let est = krr_estimate(&model, shape);
            let err: f64 = est
                .iter()
                .zip(&pilots.measurements[m])
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let scale: f64 = pilots.measurements[m].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-8 * scale.max(1.0), "pilot {m} err {err}");
        }
    }

    #[test]
    fn huge_lambda_shrinks_estimates_to_zero() {
        let shapes = vec![shape(vec![0.1, 0.0], 1.0), shape(vec![0.0, 0.1], 1.0)];
        let meas = vec![cvec(&[(1.0, 0.0), (0.0, 1.0)]), cvec(&[(2.0, 0.0), (1.0, 0.0)])];
        let model = krr_fit(&pilot_set(shapes.clone(), meas), Some(1.0), 1e6).unwrap();
        let coeff_norm: f64 = model.coefficients.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!(coeff_norm < 1e-5);
        let est = krr_estimate(&model, &shapes[0]);
        assert!(est.iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-5);
    }

    #[test]
    fn far_target_estimate_vanishes() {
        let shapes = vec![shape(vec![0.01, 0.0], 50.0), shape(vec![0.0, 0.01], 50.0)];
        let meas = vec![cvec(&[(1.0, 0.0), (0.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])];
        let model = krr_fit(&pilot_set(shapes, meas), Some(100.0), 1e-3).unwrap();
        let far = shape(vec![30.0, -30.0], 50.0);
        let est = krr_estimate(&model, &far);
        assert!(est.iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn krr_estimate_matches_naive_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let shapes = random_pilot_shapes(6, &geom, 0.5, &mut rng).unwrap();
        let meas: Vec<ChannelVector> = (0..6)
            .map(|_| {
                (0..16)
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let lambda = 0.05;
        let gamma = 3.0;
        let pilots = pilot_set(shapes.clone(), meas.clone());
        let model = krr_fit(&pilots, Some(gamma), lambda).unwrap();
        let target = random_pilot_shapes(1, &geom, 0.5, &mut rng).unwrap().remove(0);
        let est = krr_estimate(&model, &target);

        // oracle: invert (K + lambda I) column by column with the test-local
        // solver, then evaluate k_t^T C directly.
        let m = 6;
        let mut kmat = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                let d = shapes[i].distance(&shapes[j]);
                kmat[i][j] = (-gamma * d * d).exp();
            }
            kmat[i][i] += lambda;
        }
        let kt: Vec<f64> = shapes
            .iter()
            .map(|s| {
                let d = s.distance(&target);
                (-gamma * d * d).exp()
            })
            .collect();
        for j in 0..16 {
            let rhs_re: Vec<f64> = (0..m).map(|i| meas[i][j].re).collect();
            let rhs_im: Vec<f64> = (0..m).map(|i| meas[i][j].im).collect();
            let cr = gauss_solve(&kmat, &rhs_re);
            let ci = gauss_solve(&kmat, &rhs_im);
            let expect = Complex64::new(
                kt.iter().zip(&cr).map(|(k, c)| k * c).sum(),
                kt.iter().zip(&ci).map(|(k, c)| k * c).sum(),
            );
            assert!((est[j] - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn kernel_matrix_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let shapes = random_pilot_shapes(10, &geom, 0.5, &mut rng).unwrap();
        let meas: Vec<ChannelVector> = (0..10).map(|_| Array1::zeros(16)).collect();
        let model = krr_fit(&pilot_set(shapes, meas), None, 1e-3).unwrap();
        let m = 10;
        let km = DMatrix::from_fn(m, m, |i, j| model.kernel_matrix[[i, j]]);
        let trace = km.trace();
        let eig = km.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10 * trace / m as f64, "min eigenvalue {min}");
    }

    #[test]
    fn krr_residual_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let geom = ArrayGeometry::half_wavelength(4, 4, WL).unwrap();
        let shapes = random_pilot_shapes(8, &geom, 0.5, &mut rng).unwrap();
        let meas: Vec<ChannelVector> = (0..8)
            .map(|_| {
                (0..16)
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let lambda = 1e-2;
        let pilots = pilot_set(shapes, meas.clone());
        let model = krr_fit(&pilots, None, lambda).unwrap();
        // || (K + lambda I) C - H ||_F < 1e-9 * || H ||_F
        let mut resid = 0.0f64;
        let mut h_norm = 0.0f64;
        for i in 0..8 {
            for j in 0..16 {
                let mut acc = Complex64::default();
                for l in 0..8 {
                    let mut k = model.kernel_matrix[[i, l]];
                    if i == l {
                        k += lambda;
                    }
                    acc += model.coefficients[[l, j]] * k;
                }
                resid += (acc - meas[i][j]).norm_sqr();
                h_norm += meas[i][j].norm_sqr();
            }
        }
        assert!(resid.sqrt() < 1e-9 * h_norm.sqrt());
    }
}
