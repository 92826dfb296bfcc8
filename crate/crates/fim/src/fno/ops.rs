//! Low-level field operations for the neural operator: truncated real-FFT
//! spectral convolutions, pointwise affine maps, activations, pooling and
//! linear upsampling, each with a hand-derived backward pass.
//!
//! FFT conventions: the forward transform is the unnormalized sum
//! `X_k = sum_n x_n exp(-2pi i k n / N)`; the truncated inverse maps kept
//! modes back with `y_n = (1/N) sum_k w_k Re(X_k exp(+2pi i k n / N))`
//! where `w_k` is 1 for the DC (and Nyquist, when N is even) bin and 2
//! otherwise. The backward passes below are the exact adjoints of these
//! real-linear maps, so finite differences agree with them to rounding.

use crate::error::{FimError, Result};
use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Real field over the antenna axis, one row per channel.
pub type Field = Array2<f64>;

/// Thread-safe cache of FFT plans keyed by transform length.
pub struct PlanCache {
    inner: Mutex<PlanCacheInner>,
}

struct PlanCacheInner {
    planner: FftPlanner<f64>,
    plans: HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl PlanCache {
    pub fn new() -> Self {
        Self {
            inner: Mutex::new(PlanCacheInner { planner: FftPlanner::new(), plans: HashMap::new() }),
        }
    }

    fn get(&self, n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
        let mut guard = self.inner.lock().expect("fft plan cache poisoned");
        if !guard.plans.contains_key(&n) {
            let fwd = guard.planner.plan_fft_forward(n);
            let inv = guard.planner.plan_fft_inverse(n);
            guard.plans.insert(n, (fwd, inv));
        }
        let (f, i) = &guard.plans[&n];
        (Arc::clone(f), Arc::clone(i))
    }
}

impl Default for PlanCache {
    fn default() -> Self {
        Self::new()
    }
}

/// Number of non-redundant real-FFT bins for length `n`.
pub fn rfft_bins(n: usize) -> usize {
    n / 2 + 1
}

fn hermitian_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        1.0
    } else {
        2.0
    }
}

/// Forward real FFT of each row, keeping only the first `modes` bins.
pub fn rfft_modes(field: &Field, modes: usize, plans: &PlanCache) -> Array2<Complex64> {
    let (channels, n) = field.dim();
    let (fwd, _) = plans.get(n);
    let mut out = Array2::zeros((channels, modes));
    let mut buf = vec![Complex64::default(); n];
    for c in 0..channels {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(field[[c, i]], 0.0);
        }
        fwd.process(&mut buf);
        for k in 0..modes {
            out[[c, k]] = buf[k];
        }
    }
    out
}

/// Inverse of the truncated real FFT: kept modes back to a real field of
/// length `n`, modes beyond the given ones implicitly zero.
pub fn irfft_trunc(modes_arr: &Array2<Complex64>, n: usize, plans: &PlanCache) -> Field {
    let (channels, modes) = modes_arr.dim();
    let (_, inv) = plans.get(n);
    let scale = 1.0 / n as f64;
    let mut out = Array2::zeros((channels, n));
    let mut buf = vec![Complex64::default(); n];
    for c in 0..channels {
        buf.fill(Complex64::default());
        for k in 0..modes {
            buf[k] = modes_arr[[c, k]] * (hermitian_weight(k, n) * scale);
        }
        inv.process(&mut buf);
        for i in 0..n {
            out[[c, i]] = buf[i].re;
        }
    }
    out
}

/// Adjoint of `rfft_modes`: maps mode-space gradients back to the field.
pub fn rfft_modes_adjoint(g_modes: &Array2<Complex64>, n: usize, plans: &PlanCache) -> Field {
    let (channels, modes) = g_modes.dim();
    let (_, inv) = plans.get(n);
    let mut out = Array2::zeros((channels, n));
    let mut buf = vec![Complex64::default(); n];
    for c in 0..channels {
        buf.fill(Complex64::default());
        for k in 0..modes {
            buf[k] = g_modes[[c, k]];
        }
        inv.process(&mut buf);
        for i in 0..n {
            out[[c, i]] = buf[i].re;
        }
    }
    out
}

/// Adjoint of `irfft_trunc`: maps field gradients to mode-space gradients.
pub fn irfft_trunc_adjoint(g: &Field, modes: usize, plans: &PlanCache) -> Array2<Complex64> {
    let (channels, n) = g.dim();
    let (fwd, _) = plans.get(n);
    let scale = 1.0 / n as f64;
    let mut out = Array2::zeros((channels, modes));
    let mut buf = vec![Complex64::default(); n];
    for c in 0..channels {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(g[[c, i]], 0.0);
        }
        fwd.process(&mut buf);
        for k in 0..modes {
            out[[c, k]] = buf[k] * (hermitian_weight(k, n) * scale);
        }
    }
    out
}

/// Spectral convolution: per kept mode `k`, mix channels with the complex
/// matrix `weights[.., .., k]`; all higher modes are zeroed.
///
/// Fails when `modes > floor(n/2) + 1`, which would index past the
/// non-redundant bins of the real FFT.
pub fn spectral_conv(
    field: &Field,
    weights: &Array3<Complex64>,
    plans: &PlanCache,
) -> Result<(Field, Array2<Complex64>)> {
    let (channels, n) = field.dim();
    let (d_in, d_out, modes) = weights.dim();
    if channels != d_in {
        return Err(FimError::DimensionMismatch(format!(
            "field has {channels} channels, spectral weights expect {d_in}"
        )));
    }
    if modes > rfft_bins(n) {
        return Err(FimError::InvalidConfig(format!(
            "spectral modes {modes} exceed floor({n}/2)+1 = {}",
            rfft_bins(n)
        )));
    }
    let x_hat = rfft_modes(field, modes, plans);
    let mut y_hat = Array2::zeros((d_out, modes));
    for k in 0..modes {
        for o in 0..d_out {
            let mut acc = Complex64::default();
            for i in 0..d_in {
                acc += weights[[i, o, k]] * x_hat[[i, k]];
            }
            y_hat[[o, k]] = acc;
        }
    }
    Ok((irfft_trunc(&y_hat, n, plans), x_hat))
}

/// Backward of [`spectral_conv`]: given the output gradient, the cached
/// input spectrum and the weights, produce the input gradient and the
/// weight gradient.
pub fn spectral_conv_backward(
    g_out: &Field,
    x_hat: &Array2<Complex64>,
    weights: &Array3<Complex64>,
    plans: &PlanCache,
) -> (Field, Array3<Complex64>) {
    let (d_in, d_out, modes) = weights.dim();
    let n = g_out.ncols();
    let g_y = irfft_trunc_adjoint(g_out, modes, plans);
    let mut g_w = Array3::zeros((d_in, d_out, modes));
    let mut g_x = Array2::zeros((d_in, modes));
    for k in 0..modes {
        for o in 0..d_out {
            let gy = g_y[[o, k]];
            for i in 0..d_in {
                g_w[[i, o, k]] += gy * x_hat[[i, k]].conj();
                g_x[[i, k]] += gy * weights[[i, o, k]].conj();
            }
        }
    }
    (rfft_modes_adjoint(&g_x, n, plans), g_w)
}

/// Pointwise affine map `y = W x + b` applied at every position.
pub fn pointwise(field: &Field, weight: &Array2<f64>, bias: &Array1<f64>) -> Field {
    let mut out = weight.dot(field);
    for (o, mut row) in out.rows_mut().into_iter().enumerate() {
        row += bias[o];
    }
    out
}

/// Backward of [`pointwise`]: returns `(g_input, g_weight, g_bias)`.
pub fn pointwise_backward(
    g_out: &Field,
    input: &Field,
    weight: &Array2<f64>,
) -> (Field, Array2<f64>, Array1<f64>) {
    let g_w = g_out.dot(&input.t());
    let g_b = g_out.sum_axis(ndarray::Axis(1));
    let g_in = weight.t().dot(g_out);
    (g_in, g_w, g_b)
}

/// Pointwise nonlinearities available to the Fourier layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Gaussian-error linear unit `0.5 x (1 + erf(x / sqrt(2)))`.
    Gelu,
    /// Pass-through, useful for layer isolation in tests.
    Identity,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            Activation::Identity => x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn apply_field(&self, field: &Field) -> Field {
        match self {
            Activation::Identity => field.clone(),
            _ => field.mapv(|x| self.apply(x)),
        }
    }
}

/// Average adjacent pairs, halving the spatial length.
pub fn avg_pool(field: &Field) -> Result<Field> {
    let (channels, n) = field.dim();
    if n % 2 != 0 {
        return Err(FimError::DimensionMismatch(format!(
            "cannot pool odd spatial length {n}"
        )));
    }
    let mut out = Array2::zeros((channels, n / 2));
    for c in 0..channels {
        for j in 0..n / 2 {
            out[[c, j]] = 0.5 * (field[[c, 2 * j]] + field[[c, 2 * j + 1]]);
        }
    }
    Ok(out)
}

/// Backward of [`avg_pool`].
pub fn avg_pool_backward(g_out: &Field) -> Field {
    let (channels, half) = g_out.dim();
    let mut g_in = Array2::zeros((channels, half * 2));
    for c in 0..channels {
        for j in 0..half {
            let g = 0.5 * g_out[[c, j]];
            g_in[[c, 2 * j]] = g;
            g_in[[c, 2 * j + 1]] = g;
        }
    }
    g_in
}

/// Interpolation stencil for doubling the length: output position `j` reads
/// input coordinate `(j + 0.5)/2 - 0.5`, clamped at the ends (endpoint
/// replication). Returns `(left_index, left_weight)`; the right neighbor is
/// `left_index + 1` with weight `1 - left_weight` when in range.
fn upsample_stencil(j: usize, n_in: usize) -> (usize, f64) {
    let x = (j as f64 + 0.5) / 2.0 - 0.5;
    if x <= 0.0 {
        (0, 1.0)
    } else if x >= (n_in - 1) as f64 {
        (n_in - 1, 1.0)
    } else {
        let i = x.floor() as usize;
        (i, 1.0 - (x - i as f64))
    }
}

/// Double the spatial length by piecewise-linear interpolation with
/// endpoint replication: `upsample([2, 6]) = [2, 3, 5, 6]`.
pub fn upsample_linear(field: &Field) -> Field {
    let (channels, n) = field.dim();
    let mut out = Array2::zeros((channels, n * 2));
    for j in 0..n * 2 {
        let (i, wl) = upsample_stencil(j, n);
        for c in 0..channels {
            let mut v = wl * field[[c, i]];
            if wl < 1.0 {
                v += (1.0 - wl) * field[[c, i + 1]];
            }
            out[[c, j]] = v;
        }
    }
    out
}

/// Backward of [`upsample_linear`].
pub fn upsample_linear_backward(g_out: &Field) -> Field {
    let (channels, n2) = g_out.dim();
    let n = n2 / 2;
    let mut g_in = Array2::zeros((channels, n));
    for j in 0..n2 {
        let (i, wl) = upsample_stencil(j, n);
        for c in 0..channels {
            let g = g_out[[c, j]];
            g_in[[c, i]] += wl * g;
            if wl < 1.0 {
                g_in[[c, i + 1]] += (1.0 - wl) * g;
            }
        }
    }
    g_in
}
