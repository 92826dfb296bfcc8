//! FIM array geometry: orientation frames, element layout, deformation
//! shapes, and the structured pilot-shape generators.
//!
//! The surface is an `nx` x `nz` grid of radiating elements on a flexible
//! substrate. Each element can be displaced perpendicular to the surface by
//! `zeta_n` meters, bounded by the hardware limit `bound`. Elements are
//! flattened column-major along z: index `n = ix * nz + iz`, so consecutive
//! indices sweep a column.

use crate::error::{FimError, Result};
use nalgebra::Vector3;
use rand::Rng;
use std::f64::consts::PI;

/// Orientation of the surface in the global frame: elevation `theta`,
/// azimuth `phi`, spin `rho`, all in radians.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Orientation {
    pub theta: f64,
    pub phi: f64,
    pub rho: f64,
}

impl Orientation {
    /// The canonical frame used throughout the workbench: the undeformed
    /// array lies in the global x-z plane and deforms along +y. This is the
    /// orientation whose basis vectors are `i=[1,0,0]`, `j=[0,0,1]`,
    /// `k=[0,1,0]`.
    pub const CANONICAL: Orientation = Orientation {
        theta: PI / 2.0,
        phi: PI / 2.0,
        rho: 0.0,
    };

    fn validate(&self) -> Result<()> {
        if !(0.0..PI).contains(&self.theta)
            || !(0.0..PI).contains(&self.phi)
            || !(0.0..2.0 * PI).contains(&self.rho)
        {
            return Err(FimError::InvalidConfig(format!(
                "orientation angles out of range: theta={} phi={} rho={}",
                self.theta, self.phi, self.rho
            )));
        }
        Ok(())
    }
}

/// Planar-array geometry of the FIM.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArrayGeometry {
    /// Element count along the first surface axis.
    pub nx: usize,
    /// Element count along the second surface axis.
    pub nz: usize,
    /// Inter-element spacing along the first axis, in wavelengths.
    pub dx: f64,
    /// Inter-element spacing along the second axis, in wavelengths.
    pub dz: f64,
    /// Surface orientation in the global frame.
    pub orientation: Orientation,
    /// Array center in global coordinates, meters.
    pub center: [f64; 3],
    /// Carrier wavelength, meters.
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(
        nx: usize,
        nz: usize,
        dx: f64,
        dz: f64,
        orientation: Orientation,
        center: [f64; 3],
        wavelength: f64,
    ) -> Result<Self> {
        if nx == 0 || nz == 0 {
            return Err(FimError::InvalidConfig("element counts must be >= 1".into()));
        }
        if dx <= 0.0 || dz <= 0.0 || wavelength <= 0.0 {
            return Err(FimError::InvalidConfig(
                "spacings and wavelength must be positive".into(),
            ));
        }
        orientation.validate()?;
        Ok(Self { nx, nz, dx, dz, orientation, center, wavelength })
    }

    /// Half-wavelength-spaced array in the canonical orientation, centered
    /// at the origin.
    pub fn half_wavelength(nx: usize, nz: usize, wavelength: f64) -> Result<Self> {
        Self::new(nx, nz, 0.5, 0.5, Orientation::CANONICAL, [0.0; 3], wavelength)
    }

    /// Total element count `N = nx * nz`.
    pub fn n_elements(&self) -> usize {
        self.nx * self.nz
    }

    /// Wavenumber `2*pi / wavelength`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Flattened index of grid cell `(ix, iz)`.
    pub fn grid_to_index(&self, ix: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iz < self.nz);
        ix * self.nz + iz
    }

    /// Grid cell of flattened index `n`.
    pub fn index_to_grid(&self, n: usize) -> (usize, usize) {
        debug_assert!(n < self.n_elements());
        (n / self.nz, n % self.nz)
    }

    /// Local in-plane coordinates of element `n`, meters, centered so the
    /// array centroid sits at the origin of the local frame.
    pub fn local_coords(&self, n: usize) -> (f64, f64) {
        let (ix, iz) = self.index_to_grid(n);
        let x = (ix as f64 - (self.nx as f64 - 1.0) / 2.0) * self.dx * self.wavelength;
        let z = (iz as f64 - (self.nz as f64 - 1.0) / 2.0) * self.dz * self.wavelength;
        (x, z)
    }
}

/// Per-element perpendicular displacement vector with its hardware bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationShape {
    displacements: Vec<f64>,
    bound: f64,
}

impl DeformationShape {
    /// Build a shape, checking `|zeta_n| <= bound` for every element.
    pub fn new(displacements: Vec<f64>, bound: f64) -> Result<Self> {
        if bound <= 0.0 {
            return Err(FimError::InvalidConfig("deformation bound must be > 0".into()));
        }
        if let Some(bad) = displacements.iter().find(|z| !z.is_finite() || z.abs() > bound) {
            return Err(FimError::InvalidConfig(format!(
                "displacement {bad} exceeds bound {bound}"
            )));
        }
        Ok(Self { displacements, bound })
    }

    /// The flat (undeformed) shape.
    pub fn zeros(n: usize, bound: f64) -> Result<Self> {
        Self::new(vec![0.0; n], bound)
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.displacements
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Euclidean distance to another shape.
    pub fn distance(&self, other: &DeformationShape) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.displacements
            .iter()
            .zip(&other.displacements)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Global element positions of a (possibly deformed) array.
#[derive(Debug, Clone)]
pub struct ElementPositions {
    positions: Vec<Vector3<f64>>,
    nx: usize,
    nz: usize,
}

impl ElementPositions {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn as_slice(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.nx, self.nz)
    }
}

/// Local orthonormal basis `(i, j, k)` of a surface with the given
/// orientation; `k` is the normal to the undeformed surface.
pub fn basis_vectors(o: Orientation) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let (st, ct) = o.theta.sin_cos();
    let (sp, cp) = o.phi.sin_cos();
    let (sr, cr) = o.rho.sin_cos();
    let i = Vector3::new(sp * cr - ct * cp * sr, -cp * cr - ct * sp * sr, st * sr);
    let j = Vector3::new(-sp * sr - ct * cp * cr, cp * sr - ct * sp * cr, st * cr);
    let k = Vector3::new(st * cp, st * sp, ct);
    (i, j, k)
}

/// Post-deformation global position of every element:
/// `p_n = center + x_n * i + z_n * j + zeta_n * k`.
pub fn element_positions(geom: &ArrayGeometry, shape: &DeformationShape) -> Result<ElementPositions> {
    let n = geom.n_elements();
    if shape.len() != n {
        return Err(FimError::DimensionMismatch(format!(
            "shape has {} displacements, geometry has {} elements",
            shape.len(),
            n
        )));
    }
    let (i, j, k) = basis_vectors(geom.orientation);
    let center = Vector3::new(geom.center[0], geom.center[1], geom.center[2]);
    let positions = (0..n)
        .map(|idx| {
            let (x, z) = geom.local_coords(idx);
            center + x * i + z * j + shape.values()[idx] * k
        })
        .collect();
    Ok(ElementPositions { positions, nx: geom.nx, nz: geom.nz })
}

/// Cosine basis shape with spatial frequency indices `(u, v)`:
/// `zeta_n = bound * cos(2*pi * (u*ix/nx + v*iz/nz))`.
pub fn fourier_basis_shape(u: usize, v: usize, geom: &ArrayGeometry, bound: f64) -> Result<DeformationShape> {
    if bound <= 0.0 {
        return Err(FimError::InvalidConfig("deformation bound must be > 0".into()));
    }
    let displacements = (0..geom.n_elements())
        .map(|n| {
            let (ix, iz) = geom.index_to_grid(n);
            let arg = 2.0 * PI * (u as f64 * ix as f64 / geom.nx as f64
                + v as f64 * iz as f64 / geom.nz as f64);
            bound * arg.cos()
        })
        .collect();
    DeformationShape::new(displacements, bound)
}

/// Enumerate `(u, v)` frequency pairs low-frequency-first: sorted by
/// `(max(u, v), u, v)` ascending. For `m = 16` on an 8x8 array this is
/// exactly the 16 pairs with `max(u, v) <= 3`.
pub fn fourier_pair_order(nx: usize, nz: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..nx)
        .flat_map(|u| (0..nz).map(move |v| (u, v)))
        .collect();
    pairs.sort_by_key(|&(u, v)| (u.max(v), u, v));
    pairs
}

/// The first `m` shapes of the 2D cosine pilot basis.
pub fn fourier_pilot_shapes(m: usize, geom: &ArrayGeometry, bound: f64) -> Result<Vec<DeformationShape>> {
    let n = geom.n_elements();
    if m == 0 {
        return Err(FimError::InvalidConfig("pilot count must be >= 1".into()));
    }
    if m > n {
        return Err(FimError::InvalidConfig(format!(
            "fourier pilot count {m} exceeds basis size {n}"
        )));
    }
    fourier_pair_order(geom.nx, geom.nz)
        .into_iter()
        .take(m)
        .map(|(u, v)| fourier_basis_shape(u, v, geom, bound))
        .collect()
}

/// `m` shapes with i.i.d. uniform displacements on `[-bound, bound]`.
pub fn random_pilot_shapes<R: Rng>(
    m: usize,
    geom: &ArrayGeometry,
    bound: f64,
    rng: &mut R,
) -> Result<Vec<DeformationShape>> {
    if m == 0 {
        return Err(FimError::InvalidConfig("pilot count must be >= 1".into()));
    }
    (0..m)
        .map(|_| {
            let z = (0..geom.n_elements())
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            DeformationShape::new(z, bound)
        })
        .collect()
}

/// One shape with a single element displaced by `delta`, all others flat.
/// Used by the per-element gain sweeps.
pub fn single_element_shape(n_elements: usize, element: usize, delta: f64, bound: f64) -> Result<DeformationShape> {
    if element >= n_elements {
        return Err(FimError::InvalidConfig(format!(
            "element {element} out of range for {n_elements}-element array"
        )));
    }
    let mut z = vec![0.0; n_elements];
    z[element] = delta;
    DeformationShape::new(z, bound)
}
