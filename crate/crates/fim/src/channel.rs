//! Clustered multipath mmWave channel synthesis for a deformable array:
//! steering vectors and their rigid/flexible decomposition, realization
//! sampling, orthogonal pilot frames with despreading, and channel metrics.
//!
//! Phases are measured relative to the array center, which for the default
//! origin-centered geometry reduces to the plain position inner product.

use crate::error::{FimError, Result};
use crate::geometry::{basis_vectors, element_positions, ArrayGeometry, DeformationShape};
use nalgebra::Vector3;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Complex per-element channel response, length `N`.
pub type ChannelVector = Array1<Complex64>;

/// Unit direction vector of a departure angle pair (elevation, azimuth).
pub fn direction_vector(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Parameters of the clustered multipath channel generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Scattering clusters per user.
    pub clusters: usize,
    /// Paths per cluster.
    pub paths_per_cluster: usize,
    /// Path loss exponent.
    pub pathloss_exponent: f64,
    /// Linear path loss at the reference distance.
    pub reference_loss: f64,
    /// Reference distance, meters.
    pub reference_distance: f64,
    /// Carrier frequency, Hz.
    pub carrier_frequency: f64,
    /// Std of per-path Gaussian angle offsets around the cluster mean, radians.
    pub angular_spread: f64,
    /// Base-station position, meters.
    pub bs_position: [f64; 3],
    /// Diagonal corners of the user placement volume, meters.
    pub user_box: [[f64; 3]; 2],
    /// Scale gains so the expected per-element channel power is 1.
    pub normalize_power: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            clusters: 5,
            paths_per_cluster: 6,
            pathloss_exponent: 2.2,
            reference_loss: 1.0,
            reference_distance: 1.0,
            carrier_frequency: 28e9,
            angular_spread: 5.0_f64.to_radians(),
            bs_position: [0.0, 0.0, 10.0],
            user_box: [[-10.0, 10.0, 0.0], [10.0, 30.0, 0.0]],
            normalize_power: true,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.paths_per_cluster == 0 {
            return Err(FimError::InvalidConfig("cluster/path counts must be >= 1".into()));
        }
        if self.pathloss_exponent <= 0.0
            || self.reference_distance <= 0.0
            || self.angular_spread < 0.0
        {
            return Err(FimError::InvalidConfig("bad channel parameters".into()));
        }
        Ok(())
    }

    /// Carrier wavelength `c / f_c`, meters.
    pub fn wavelength(&self) -> f64 {
        299_792_458.0 / self.carrier_frequency
    }

    /// Large-scale path loss `P0 * (d / d0)^(-nu)`.
    pub fn pathloss(&self, distance: f64) -> f64 {
        self.reference_loss * (distance / self.reference_distance).powf(-self.pathloss_exponent)
    }
}

/// One propagation path: departure angles, complex gain, cached direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComponent {
    pub theta: f64,
    pub phi: f64,
    pub gain: Complex64,
    pub direction: Vector3<f64>,
}

impl PathComponent {
    pub fn new(theta: f64, phi: f64, gain: Complex64) -> Self {
        Self { theta, phi, gain, direction: direction_vector(theta, phi) }
    }
}

/// A sampled multipath environment for one user.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    clusters: Vec<Vec<PathComponent>>,
    /// Distance from the base station to the sampled user position, meters.
    pub user_distance: f64,
    /// Normalization factor that was applied to every gain (1 when disabled).
    pub power_scale: f64,
    /// Whether gains were scaled for unit expected per-element power.
    pub normalized: bool,
}

impl ChannelRealization {
    pub fn from_clusters(clusters: Vec<Vec<PathComponent>>, user_distance: f64) -> Self {
        Self { clusters, user_distance, power_scale: 1.0, normalized: false }
    }

    pub fn clusters(&self) -> &[Vec<PathComponent>] {
        &self.clusters
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathComponent> {
        self.clusters.iter().flatten()
    }

    pub fn total_paths(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

/// `M` probing shapes with their noisy channel measurements.
#[derive(Debug, Clone)]
pub struct PilotSet {
    pub shapes: Vec<DeformationShape>,
    pub measurements: Vec<ChannelVector>,
    /// Per-complex-element noise variance of the measurements.
    pub noise_variance: f64,
}

impl PilotSet {
    pub fn new(shapes: Vec<DeformationShape>, measurements: Vec<ChannelVector>, noise_variance: f64) -> Result<Self> {
        if shapes.is_empty() || shapes.len() != measurements.len() {
            return Err(FimError::DimensionMismatch(format!(
                "{} shapes vs {} measurements",
                shapes.len(),
                measurements.len()
            )));
        }
        Ok(Self { shapes, measurements, noise_variance })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

/// Orthogonal pilot sequences, one column of length `P` per user.
#[derive(Debug, Clone)]
pub struct PilotMatrix {
    /// `P x K`, unit-power symbols.
    pub sequences: Array2<Complex64>,
}

impl PilotMatrix {
    pub fn n_slots(&self) -> usize {
        self.sequences.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.sequences.ncols()
    }

    pub fn column(&self, k: usize) -> Array1<Complex64> {
        self.sequences.column(k).to_owned()
    }
}

/// Steering vector of a deformed array toward departure direction
/// `(theta, phi)`: entry `n = exp(j * 2pi/lambda * <p_n - p_c, u>)`.
pub fn steering_vector(
    positions: &[Vector3<f64>],
    center: &Vector3<f64>,
    theta: f64,
    phi: f64,
    wavelength: f64,
) -> ChannelVector {
    let u = direction_vector(theta, phi);
    let kappa = 2.0 * PI / wavelength;
    positions
        .iter()
        .map(|p| Complex64::from_polar(1.0, kappa * (p - center).dot(&u)))
        .collect()
}

/// Steering vector for a geometry plus deformation shape.
pub fn steering_for_shape(
    geom: &ArrayGeometry,
    shape: &DeformationShape,
    theta: f64,
    phi: f64,
) -> Result<ChannelVector> {
    let pos = element_positions(geom, shape)?;
    let center = Vector3::new(geom.center[0], geom.center[1], geom.center[2]);
    Ok(steering_vector(pos.as_slice(), &center, theta, phi, geom.wavelength))
}

/// Phase response of the undeformed planar array.
pub fn rigid_steering(geom: &ArrayGeometry, theta: f64, phi: f64) -> ChannelVector {
    let (i, j, _) = basis_vectors(geom.orientation);
    let u = direction_vector(theta, phi);
    let kappa = geom.wavenumber();
    (0..geom.n_elements())
        .map(|n| {
            let (x, z) = geom.local_coords(n);
            Complex64::from_polar(1.0, kappa * (x * i + z * j).dot(&u))
        })
        .collect()
}

/// Additional per-element phase induced by the perpendicular deformation.
pub fn flex_factor(shape: &DeformationShape, geom: &ArrayGeometry, theta: f64, phi: f64) -> Result<ChannelVector> {
    if shape.len() != geom.n_elements() {
        return Err(FimError::DimensionMismatch(format!(
            "shape length {} vs {} elements",
            shape.len(),
            geom.n_elements()
        )));
    }
    let (_, _, k) = basis_vectors(geom.orientation);
    let u = direction_vector(theta, phi);
    let ku = k.dot(&u);
    let kappa = geom.wavenumber();
    Ok(shape
        .values()
        .iter()
        .map(|&z| Complex64::from_polar(1.0, kappa * z * ku))
        .collect())
}

/// Draw a clustered multipath realization: cluster mean angles uniform on
/// `[pi/4, 3pi/4]`, per-path Gaussian offsets clamped into `(0, pi)`, gains
/// `sqrt(beta) / sqrt(L*G) * CN(0, 1)`, optionally rescaled for unit
/// expected per-element power.
pub fn sample_channel_realization<R: Rng>(params: &ChannelParams, rng: &mut R) -> ChannelRealization {
    let [lo, hi] = params.user_box;
    let user = Vector3::new(
        sample_coord(rng, lo[0], hi[0]),
        sample_coord(rng, lo[1], hi[1]),
        sample_coord(rng, lo[2], hi[2]),
    );
    let bs = Vector3::new(params.bs_position[0], params.bs_position[1], params.bs_position[2]);
    let distance = (user - bs).norm();
    let beta = params.pathloss(distance);
    let total = (params.clusters * params.paths_per_cluster) as f64;
    let power_scale = if params.normalize_power { 1.0 / beta.sqrt() } else { 1.0 };
    let amp = beta.sqrt() / total.sqrt() * power_scale;

    const ANGLE_EPS: f64 = 1e-3;
    let clusters = (0..params.clusters)
        .map(|_| {
            let theta_mean = rng.random_range(PI / 4.0..=3.0 * PI / 4.0);
            let phi_mean = rng.random_range(PI / 4.0..=3.0 * PI / 4.0);
            (0..params.paths_per_cluster)
                .map(|_| {
                    let dt: f64 = rng.sample(StandardNormal);
                    let dp: f64 = rng.sample(StandardNormal);
                    let theta = (theta_mean + params.angular_spread * dt)
                        .clamp(ANGLE_EPS, PI - ANGLE_EPS);
                    let phi = (phi_mean + params.angular_spread * dp)
                        .clamp(ANGLE_EPS, PI - ANGLE_EPS);
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    let g = Complex64::new(re, im) / 2.0_f64.sqrt();
                    PathComponent::new(theta, phi, amp * g)
                })
                .collect()
        })
        .collect();

    ChannelRealization {
        clusters,
        user_distance: distance,
        power_scale,
        normalized: params.normalize_power,
    }
}

fn sample_coord<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo.min(hi)..=lo.max(hi))
    }
}

/// Channel vector of a realization at a given deformation shape:
/// `h = sum over paths of gain * steering`.
pub fn synthesize_channel(
    real: &ChannelRealization,
    shape: &DeformationShape,
    geom: &ArrayGeometry,
) -> Result<ChannelVector> {
    let n = geom.n_elements();
    if shape.len() != n {
        return Err(FimError::DimensionMismatch(format!(
            "shape length {} vs {} elements",
            shape.len(),
            n
        )));
    }
    let pos = element_positions(geom, shape)?;
    let center = Vector3::new(geom.center[0], geom.center[1], geom.center[2]);
    let kappa = geom.wavenumber();
    let mut h = Array1::zeros(n);
    for path in real.paths() {
        let u = path.direction;
        for (idx, p) in pos.as_slice().iter().enumerate() {
            let phase = kappa * (p - center).dot(&u);
            h[idx] += path.gain * Complex64::from_polar(1.0, phase);
        }
    }
    Ok(h)
}

/// First `K` columns of the `P`-point DFT matrix at unit symbol power.
pub fn make_orthogonal_pilots(n_users: usize, n_slots: usize) -> Result<PilotMatrix> {
    if n_slots < n_users || n_users == 0 {
        return Err(FimError::InvalidConfig(format!(
            "need P >= K >= 1, got K={n_users} P={n_slots}"
        )));
    }
    let mut sequences = Array2::zeros((n_slots, n_users));
    for k in 0..n_users {
        for p in 0..n_slots {
            let phase = -2.0 * PI * (k * p) as f64 / n_slots as f64;
            sequences[[p, k]] = Complex64::from_polar(1.0, phase);
        }
    }
    Ok(PilotMatrix { sequences })
}

/// Received uplink frame `Y = sum_k h_k s_k^H + W` with i.i.d. circular
/// Gaussian noise of per-element variance `sigma_w^2`.
pub fn uplink_frame<R: Rng>(
    channels: &[ChannelVector],
    pilots: &PilotMatrix,
    sigma_w: f64,
    rng: &mut R,
) -> Result<Array2<Complex64>> {
    if channels.len() != pilots.n_users() {
        return Err(FimError::DimensionMismatch(format!(
            "{} channels vs {} pilot columns",
            channels.len(),
            pilots.n_users()
        )));
    }
    let n = channels.first().map_or(0, |h| h.len());
    if channels.iter().any(|h| h.len() != n) || n == 0 {
        return Err(FimError::DimensionMismatch("channel lengths differ".into()));
    }
    let p = pilots.n_slots();
    let comp_std = sigma_w / 2.0_f64.sqrt();
    let mut y = Array2::zeros((n, p));
    for (k, h) in channels.iter().enumerate() {
        for (row, &hv) in h.iter().enumerate() {
            for slot in 0..p {
                y[[row, slot]] += hv * pilots.sequences[[slot, k]].conj();
            }
        }
    }
    for v in y.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re, im) * comp_std;
    }
    Ok(y)
}

/// Project a received frame onto one user's pilot sequence:
/// `(1/P) * Y * s_k`, recovering `h_k` plus noise of variance
/// `sigma_w^2 / P` per element.
pub fn despread(frame: &Array2<Complex64>, pilot_column: &Array1<Complex64>) -> Result<ChannelVector> {
    let p = pilot_column.len();
    if frame.ncols() != p {
        return Err(FimError::DimensionMismatch(format!(
            "frame has {} slots, pilot column {}",
            frame.ncols(),
            p
        )));
    }
    let scale = 1.0 / p as f64;
    Ok(frame
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(pilot_column).map(|(y, s)| y * s).sum::<Complex64>() * scale)
        .collect())
}

/// Observe the channel at each probing shape at the given SNR. Channels are
/// assumed power-normalized, so the per-element noise variance is
/// `10^(-snr_db / 10)` directly.
pub fn observe_pilots<R: Rng>(
    real: &ChannelRealization,
    shapes: &[DeformationShape],
    snr_db: f64,
    geom: &ArrayGeometry,
    rng: &mut R,
) -> Result<PilotSet> {
    let noise_variance = 10.0_f64.powf(-snr_db / 10.0);
    let comp_std = (noise_variance / 2.0).sqrt();
    let measurements = shapes
        .iter()
        .map(|shape| {
            let mut h = synthesize_channel(real, shape, geom)?;
            for v in h.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v += Complex64::new(re, im) * comp_std;
            }
            Ok(h)
        })
        .collect::<Result<Vec<_>>>()?;
    PilotSet::new(shapes.to_vec(), measurements, noise_variance)
}

/// Normalized mean squared error `||est - truth||^2 / ||truth||^2`.
pub fn nmse(estimate: &ChannelVector, truth: &ChannelVector) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(FimError::DimensionMismatch(format!(
            "estimate length {} vs truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    let den: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    if den <= 0.0 {
        return Err(FimError::InvalidConfig("zero-norm truth in nmse".into()));
    }
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(num / den)
}

/// Unnormalized 2D DFT of the channel over the element grid (the flattening
/// map `n = ix * nz + iz`). Satisfies `||spectrum||^2 = N * ||h||^2`.
pub fn spatial_spectrum(h: &ChannelVector, nx: usize, nz: usize) -> Result<Array2<Complex64>> {
    if h.len() != nx * nz {
        return Err(FimError::DimensionMismatch(format!(
            "channel length {} vs grid {}x{}",
            h.len(),
            nx,
            nz
        )));
    }
    let mut planner = FftPlanner::new();
    let fft_z = planner.plan_fft_forward(nz);
    let fft_x = planner.plan_fft_forward(nx);

    let mut grid = Array2::zeros((nx, nz));
    for ix in 0..nx {
        for iz in 0..nz {
            grid[[ix, iz]] = h[ix * nz + iz];
        }
    }
    let mut buf = vec![Complex64::default(); nz];
    for mut row in grid.rows_mut() {
        buf.copy_from_slice(row.as_slice().expect("row contiguous"));
        fft_z.process(&mut buf);
        for (dst, src) in row.iter_mut().zip(&buf) {
            *dst = *src;
        }
    }
    let mut col_buf = vec![Complex64::default(); nx];
    for iz in 0..nz {
        for ix in 0..nx {
            col_buf[ix] = grid[[ix, iz]];
        }
        fft_x.process(&mut col_buf);
        for ix in 0..nx {
            grid[[ix, iz]] = col_buf[ix];
        }
    }
    Ok(grid)
}
