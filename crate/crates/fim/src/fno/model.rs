//! The hierarchical FNO estimator: a U-shaped stack of Fourier layers with
//! average-pool downsampling, linear upsampling and skip concatenations,
//! between a pointwise lifting map and a two-layer pointwise projection.
//!
//! The backward pass is hand-derived, layer by layer, and produces exact
//! gradients of the batch loss with respect to every parameter (complex
//! spectral weights are treated as independent real/imaginary parts).

use super::ops::{
    avg_pool, avg_pool_backward, pointwise, pointwise_backward, rfft_bins, spectral_conv,
    spectral_conv_backward, upsample_linear, upsample_linear_backward, Activation, Field,
    PlanCache,
};
use super::{FeatureField, FnoConfig, NormStats};
use crate::channel::ChannelVector;
use crate::error::{FimError, Result};
use ndarray::{Array1, Array2, Array3, Axis};
use num_complex::Complex64;
use rand::Rng;

/// Parameters of one Fourier block: complex spectral mixing weights plus the
/// parallel pointwise affine path.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoBlockParams {
    /// `(d_in, d_out, modes)` complex tensor applied to the kept modes.
    pub spectral: Array3<Complex64>,
    /// `(d_out, d_in)` pointwise weights.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl FnoBlockParams {
    fn zeros(d_in: usize, d_out: usize, modes: usize) -> Self {
        Self {
            spectral: Array3::zeros((d_in, d_out, modes)),
            weight: Array2::zeros((d_out, d_in)),
            bias: Array1::zeros(d_out),
        }
    }

    fn init<R: Rng>(d_in: usize, d_out: usize, modes: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (d_in * d_out) as f64;
        let spectral = Array3::from_shape_fn((d_in, d_out, modes), |_| {
            Complex64::new(rng.random::<f64>() * scale, rng.random::<f64>() * scale)
        });
        let a = 1.0 / (d_in as f64).sqrt();
        let weight = Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-a..a));
        Self { spectral, weight, bias: Array1::zeros(d_out) }
    }

    fn len(&self) -> usize {
        2 * self.spectral.len() + self.weight.len() + self.bias.len()
    }
}

/// All learnable tensors of the H-FNO. The same structure doubles as the
/// gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoCore {
    pub lifting_weight: Array2<f64>,
    pub lifting_bias: Array1<f64>,
    /// One block per encoder level, index 0 at full resolution.
    pub encoder: Vec<FnoBlockParams>,
    pub bottleneck: FnoBlockParams,
    /// Decoder blocks indexed by the resolution level they fuse at
    /// (index 0 = full resolution, applied last).
    pub decoder: Vec<FnoBlockParams>,
    pub proj_hidden_weight: Array2<f64>,
    pub proj_hidden_bias: Array1<f64>,
    pub proj_out_weight: Array2<f64>,
    pub proj_out_bias: Array1<f64>,
}

/// Gradients of every parameter, same layout as [`FnoCore`].
pub type FnoGrads = FnoCore;

/// Trained model state: tensors plus frozen normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoParams {
    pub core: FnoCore,
    pub norm: NormStats,
}

impl FnoCore {
    /// Zero tensors with the shapes dictated by the configuration.
    pub fn zeros(cfg: &FnoConfig) -> Self {
        let dv = cfg.latent_width;
        let levels = cfg.encoder_levels;
        Self {
            lifting_weight: Array2::zeros((dv, cfg.input_channels)),
            lifting_bias: Array1::zeros(dv),
            encoder: (0..levels)
                .map(|r| FnoBlockParams::zeros(dv, dv, cfg.modes_per_resolution[r]))
                .collect(),
            bottleneck: FnoBlockParams::zeros(dv, dv, cfg.modes_per_resolution[levels]),
            decoder: (0..levels)
                .map(|r| FnoBlockParams::zeros(2 * dv, dv, cfg.modes_per_resolution[r]))
                .collect(),
            proj_hidden_weight: Array2::zeros((dv, dv)),
            proj_hidden_bias: Array1::zeros(dv),
            proj_out_weight: Array2::zeros((cfg.output_channels, dv)),
            proj_out_bias: Array1::zeros(cfg.output_channels),
        }
    }

    /// Seeded initialization: pointwise weights uniform on
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases, spectral weights
    /// with i.i.d. uniform components scaled by `1/(d_in*d_out)`.
    pub fn init<R: Rng>(cfg: &FnoConfig, rng: &mut R) -> Self {
        let dv = cfg.latent_width;
        let levels = cfg.encoder_levels;
        let a_in = 1.0 / (cfg.input_channels as f64).sqrt();
        let lifting_weight =
            Array2::from_shape_fn((dv, cfg.input_channels), |_| rng.random_range(-a_in..a_in));
        let lifting_bias = Array1::zeros(dv);
        let encoder = (0..levels)
            .map(|r| FnoBlockParams::init(dv, dv, cfg.modes_per_resolution[r], rng))
            .collect();
        let bottleneck = FnoBlockParams::init(dv, dv, cfg.modes_per_resolution[levels], rng);
        let decoder = (0..levels)
            .map(|r| FnoBlockParams::init(2 * dv, dv, cfg.modes_per_resolution[r], rng))
            .collect();
        let a_dv = 1.0 / (dv as f64).sqrt();
        Self {
            lifting_weight,
            lifting_bias,
            encoder,
            bottleneck,
            decoder,
            proj_hidden_weight: Array2::from_shape_fn((dv, dv), |_| rng.random_range(-a_dv..a_dv)),
            proj_hidden_bias: Array1::zeros(dv),
            proj_out_weight: Array2::from_shape_fn((cfg.output_channels, dv), |_| {
                rng.random_range(-a_dv..a_dv)
            }),
            proj_out_bias: Array1::zeros(cfg.output_channels),
        }
    }

    /// Total scalar parameter count (complex entries count twice). Depends
    /// only on the configuration, never on the spatial resolution.
    pub fn param_count(&self) -> usize {
        let mut count = self.lifting_weight.len() + self.lifting_bias.len();
        for b in self.encoder.iter().chain([&self.bottleneck]).chain(&self.decoder) {
            count += b.len();
        }
        count
            + self.proj_hidden_weight.len()
            + self.proj_hidden_bias.len()
            + self.proj_out_weight.len()
            + self.proj_out_bias.len()
    }

    /// Named tensors in canonical (checkpoint) order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["lifting.weight".into(), "lifting.bias".into()];
        for (r, _) in self.encoder.iter().enumerate() {
            names.push(format!("encoder{r}.spectral"));
            names.push(format!("encoder{r}.weight"));
            names.push(format!("encoder{r}.bias"));
        }
        names.push("bottleneck.spectral".into());
        names.push("bottleneck.weight".into());
        names.push("bottleneck.bias".into());
        for (r, _) in self.decoder.iter().enumerate() {
            names.push(format!("decoder{r}.spectral"));
            names.push(format!("decoder{r}.weight"));
            names.push(format!("decoder{r}.bias"));
        }
        names.extend([
            "projection.hidden.weight".into(),
            "projection.hidden.bias".into(),
            "projection.out.weight".into(),
            "projection.out.bias".into(),
        ]);
        names
    }

    fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(TensorRef<'a>)) {
        f(TensorRef::Real2(&self.lifting_weight));
        f(TensorRef::Real1(&self.lifting_bias));
        for b in self.encoder.iter().chain([&self.bottleneck]).chain(&self.decoder) {
            f(TensorRef::Cplx3(&b.spectral));
            f(TensorRef::Real2(&b.weight));
            f(TensorRef::Real1(&b.bias));
        }
        f(TensorRef::Real2(&self.proj_hidden_weight));
        f(TensorRef::Real1(&self.proj_hidden_bias));
        f(TensorRef::Real2(&self.proj_out_weight));
        f(TensorRef::Real1(&self.proj_out_bias));
    }

    fn for_each_tensor_mut(&mut self, mut f: impl FnMut(TensorMut<'_>)) {
        f(TensorMut::Real2(&mut self.lifting_weight));
        f(TensorMut::Real1(&mut self.lifting_bias));
        let blocks = self
            .encoder
            .iter_mut()
            .chain([&mut self.bottleneck])
            .chain(self.decoder.iter_mut());
        for b in blocks {
            f(TensorMut::Cplx3(&mut b.spectral));
            f(TensorMut::Real2(&mut b.weight));
            f(TensorMut::Real1(&mut b.bias));
        }
        f(TensorMut::Real2(&mut self.proj_hidden_weight));
        f(TensorMut::Real1(&mut self.proj_hidden_bias));
        f(TensorMut::Real2(&mut self.proj_out_weight));
        f(TensorMut::Real1(&mut self.proj_out_bias));
    }

    /// Flatten every parameter into one vector: tensors in canonical order,
    /// complex entries as (re, im) pairs.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_tensor(|t| match t {
            TensorRef::Real1(a) => out.extend(a.iter()),
            TensorRef::Real2(a) => out.extend(a.iter()),
            TensorRef::Cplx3(a) => {
                for v in a.iter() {
                    out.push(v.re);
                    out.push(v.im);
                }
            }
        });
        out
    }

    /// Inverse of [`FnoCore::flatten`].
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(FimError::DimensionMismatch(format!(
                "flat vector has {} entries, model needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0usize;
        self.for_each_tensor_mut(|t| match t {
            TensorMut::Real1(a) => {
                for v in a.iter_mut() {
                    *v = flat[pos];
                    pos += 1;
                }
            }
            TensorMut::Real2(a) => {
                for v in a.iter_mut() {
                    *v = flat[pos];
                    pos += 1;
                }
            }
            TensorMut::Cplx3(a) => {
                for v in a.iter_mut() {
                    *v = Complex64::new(flat[pos], flat[pos + 1]);
                    pos += 2;
                }
            }
        });
        Ok(())
    }

    /// Accumulate another gradient set into this one.
    pub fn add_assign(&mut self, other: &FnoCore) {
        self.lifting_weight += &other.lifting_weight;
        self.lifting_bias += &other.lifting_bias;
        for (mine, theirs) in self.encoder.iter_mut().zip(&other.encoder) {
            add_block(mine, theirs);
        }
        add_block(&mut self.bottleneck, &other.bottleneck);
        for (mine, theirs) in self.decoder.iter_mut().zip(&other.decoder) {
            add_block(mine, theirs);
        }
        self.proj_hidden_weight += &other.proj_hidden_weight;
        self.proj_hidden_bias += &other.proj_hidden_bias;
        self.proj_out_weight += &other.proj_out_weight;
        self.proj_out_bias += &other.proj_out_bias;
    }
}

fn add_block(dst: &mut FnoBlockParams, src: &FnoBlockParams) {
    dst.spectral += &src.spectral;
    dst.weight += &src.weight;
    dst.bias += &src.bias;
}

enum TensorRef<'a> {
    Real1(&'a Array1<f64>),
    Real2(&'a Array2<f64>),
    Cplx3(&'a Array3<Complex64>),
}

enum TensorMut<'a> {
    Real1(&'a mut Array1<f64>),
    Real2(&'a mut Array2<f64>),
    Cplx3(&'a mut Array3<Complex64>),
}

impl FnoParams {
    /// Seeded initialization with identity normalization statistics; real
    /// statistics are attached by the trainer.
    pub fn init_seeded(cfg: &FnoConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self { core: FnoCore::init(cfg, &mut rng), norm: NormStats::identity(cfg.input_channels) }
    }
}

/// One Fourier layer: `activation(pointwise(x) + spectral(x))`.
pub fn fourier_layer(
    field: &Field,
    block: &FnoBlockParams,
    activation: Activation,
    plans: &PlanCache,
) -> Result<Field> {
    let (out, _) = block_forward(field, block, activation, plans)?;
    Ok(out)
}

struct BlockCache {
    input: Field,
    x_hat: Array2<Complex64>,
    pre: Field,
}

fn block_forward(
    field: &Field,
    block: &FnoBlockParams,
    activation: Activation,
    plans: &PlanCache,
) -> Result<(Field, BlockCache)> {
    if field.nrows() != block.weight.ncols() {
        return Err(FimError::DimensionMismatch(format!(
            "block expects {} channels, field has {}",
            block.weight.ncols(),
            field.nrows()
        )));
    }
    let (spec_out, x_hat) = spectral_conv(field, &block.spectral, plans)?;
    let mut pre = pointwise(field, &block.weight, &block.bias);
    pre += &spec_out;
    let out = activation.apply_field(&pre);
    Ok((out, BlockCache { input: field.clone(), x_hat, pre }))
}

fn block_backward(
    g_out: &Field,
    cache: &BlockCache,
    block: &FnoBlockParams,
    activation: Activation,
    plans: &PlanCache,
) -> (Field, FnoBlockParams) {
    let mut g_pre = g_out.clone();
    if activation != Activation::Identity {
        g_pre.zip_mut_with(&cache.pre, |g, &z| *g *= activation.derivative(z));
    }
    let (g_in_pw, g_w, g_b) = pointwise_backward(&g_pre, &cache.input, &block.weight);
    let (g_in_spec, g_spec) = spectral_conv_backward(&g_pre, &cache.x_hat, &block.spectral, plans);
    let g_in = g_in_pw + g_in_spec;
    (g_in, FnoBlockParams { spectral: g_spec, weight: g_w, bias: g_b })
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    x_std: Field,
    encoder: Vec<BlockCache>,
    /// Encoder block outputs, kept for the skip concatenations.
    encoder_out: Vec<Field>,
    bottleneck: BlockCache,
    /// Decoder caches in application order (coarsest level first).
    decoder: Vec<BlockCache>,
    proj_input: Field,
    proj_hidden_pre: Field,
    proj_hidden_act: Field,
}

fn check_input(cfg: &FnoConfig, input: &FeatureField) -> Result<usize> {
    let (channels, n) = input.dim();
    if channels != cfg.input_channels {
        return Err(FimError::DimensionMismatch(format!(
            "input has {channels} channels, model expects {}",
            cfg.input_channels
        )));
    }
    let div = 1usize << cfg.encoder_levels;
    if n == 0 || n % div != 0 {
        return Err(FimError::DimensionMismatch(format!(
            "spatial length {n} not divisible by 2^{}",
            cfg.encoder_levels
        )));
    }
    for (r, &modes) in cfg.modes_per_resolution.iter().enumerate() {
        let n_r = n >> r;
        if modes > rfft_bins(n_r) {
            return Err(FimError::InvalidConfig(format!(
                "modes {modes} at level {r} exceed floor({n_r}/2)+1"
            )));
        }
    }
    Ok(n)
}

/// Full forward pass retaining the caches needed by [`hfno_backward`].
pub fn hfno_forward_cached(
    params: &FnoParams,
    cfg: &FnoConfig,
    input: &FeatureField,
    plans: &PlanCache,
) -> Result<(ChannelVector, ForwardCache)> {
    let n = check_input(cfg, input)?;
    let act = cfg.activation;
    let x_std = params.norm.standardize(input);
    let mut v = pointwise(&x_std, &params.core.lifting_weight, &params.core.lifting_bias);

    let levels = cfg.encoder_levels;
    let mut encoder = Vec::with_capacity(levels);
    let mut encoder_out = Vec::with_capacity(levels);
    for r in 0..levels {
        let (e, cache) = block_forward(&v, &params.core.encoder[r], act, plans)?;
        v = avg_pool(&e)?;
        encoder.push(cache);
        encoder_out.push(e);
    }
    let (mut u, bottleneck) = block_forward(&v, &params.core.bottleneck, act, plans)?;

    let mut decoder = Vec::with_capacity(levels);
    for r in (0..levels).rev() {
        let up = upsample_linear(&u);
        let skip = &encoder_out[r];
        let mut cat = Array2::zeros((up.nrows() + skip.nrows(), up.ncols()));
        cat.slice_mut(ndarray::s![..up.nrows(), ..]).assign(&up);
        cat.slice_mut(ndarray::s![up.nrows().., ..]).assign(skip);
        let (d, cache) = block_forward(&cat, &params.core.decoder[r], act, plans)?;
        decoder.push(cache);
        u = d;
    }

    let proj_input = u;
    let proj_hidden_pre = pointwise(
        &proj_input,
        &params.core.proj_hidden_weight,
        &params.core.proj_hidden_bias,
    );
    let proj_hidden_act = act.apply_field(&proj_hidden_pre);
    let y = pointwise(&proj_hidden_act, &params.core.proj_out_weight, &params.core.proj_out_bias);

    let out = params.norm.denormalize_output(&y);
    debug_assert_eq!(out.len(), n);
    Ok((
        out,
        ForwardCache {
            x_std,
            encoder,
            encoder_out,
            bottleneck,
            decoder,
            proj_input,
            proj_hidden_pre,
            proj_hidden_act,
        },
    ))
}

/// Forward pass without gradient bookkeeping.
pub fn hfno_forward(
    params: &FnoParams,
    cfg: &FnoConfig,
    input: &FeatureField,
    plans: &PlanCache,
) -> Result<ChannelVector> {
    hfno_forward_cached(params, cfg, input, plans).map(|(out, _)| out)
}

/// Exact reverse-mode gradients of a scalar loss with respect to every
/// parameter, given `d loss / d output` in the `dRe + i dIm` convention.
pub fn hfno_backward(
    params: &FnoParams,
    cfg: &FnoConfig,
    cache: &ForwardCache,
    g_output: &ChannelVector,
    plans: &PlanCache,
) -> FnoGrads {
    let mut grads = FnoCore::zeros(cfg);
    hfno_backward_into(params, cfg, cache, g_output, plans, &mut grads);
    grads
}

/// Same as [`hfno_backward`] but accumulating into an existing gradient
/// set, avoiding per-sample allocations in batched training.
pub fn hfno_backward_into(
    params: &FnoParams,
    cfg: &FnoConfig,
    cache: &ForwardCache,
    g_output: &ChannelVector,
    plans: &PlanCache,
    grads: &mut FnoGrads,
) {
    let act = cfg.activation;
    let n = g_output.len();

    // through output denormalization
    let mut g_y = Array2::zeros((cfg.output_channels, n));
    for i in 0..n {
        g_y[[0, i]] = g_output[i].re * params.norm.output_scale[0];
        g_y[[1, i]] = g_output[i].im * params.norm.output_scale[1];
    }

    // projection
    let (g_hidden_act, g_w2, g_b2) =
        pointwise_backward(&g_y, &cache.proj_hidden_act, &params.core.proj_out_weight);
    grads.proj_out_weight += &g_w2;
    grads.proj_out_bias += &g_b2;
    let mut g_hidden = g_hidden_act;
    if act != Activation::Identity {
        g_hidden.zip_mut_with(&cache.proj_hidden_pre, |g, &z| *g *= act.derivative(z));
    }
    let (mut g, g_w1, g_b1) =
        pointwise_backward(&g_hidden, &cache.proj_input, &params.core.proj_hidden_weight);
    grads.proj_hidden_weight += &g_w1;
    grads.proj_hidden_bias += &g_b1;

    // decoder, last applied first (level 0 upward)
    let levels = cfg.encoder_levels;
    let dv = cfg.latent_width;
    let mut skip_grads: Vec<Option<Field>> = vec![None; levels];
    for r in 0..levels {
        let cache_idx = levels - 1 - r;
        let (g_cat, block_grads) =
            block_backward(&g, &cache.decoder[cache_idx], &params.core.decoder[r], act, plans);
        add_block(&mut grads.decoder[r], &block_grads);
        let g_up = g_cat.slice(ndarray::s![..dv, ..]).to_owned();
        skip_grads[r] = Some(g_cat.slice(ndarray::s![dv.., ..]).to_owned());
        g = upsample_linear_backward(&g_up);
    }

    // bottleneck
    let (g_b, block_grads) = block_backward(&g, &cache.bottleneck, &params.core.bottleneck, act, plans);
    add_block(&mut grads.bottleneck, &block_grads);
    g = g_b;

    // encoder, deepest level first
    for r in (0..levels).rev() {
        let mut g_e = avg_pool_backward(&g);
        if let Some(skip) = &skip_grads[r] {
            g_e += skip;
        }
        let (g_v, block_grads) = block_backward(&g_e, &cache.encoder[r], &params.core.encoder[r], act, plans);
        add_block(&mut grads.encoder[r], &block_grads);
        g = g_v;
    }

    // lifting
    let (_, g_wl, g_bl) = pointwise_backward(&g, &cache.x_std, &params.core.lifting_weight);
    grads.lifting_weight += &g_wl;
    grads.lifting_bias += &g_bl;
}

/// Feature activations at the highest-resolution encoder block and the
/// lowest-resolution bottleneck block, for interpretability exports.
pub fn hfno_activations(
    params: &FnoParams,
    cfg: &FnoConfig,
    input: &FeatureField,
    plans: &PlanCache,
) -> Result<Vec<(String, Field)>> {
    check_input(cfg, input)?;
    let act = cfg.activation;
    let x_std = params.norm.standardize(input);
    let mut v = pointwise(&x_std, &params.core.lifting_weight, &params.core.lifting_bias);
    let mut out = Vec::new();
    for r in 0..cfg.encoder_levels {
        let (e, _) = block_forward(&v, &params.core.encoder[r], act, plans)?;
        if r == 0 {
            out.push(("encoder0".to_string(), e.clone()));
        }
        v = avg_pool(&e)?;
    }
    let (b, _) = block_forward(&v, &params.core.bottleneck, act, plans)?;
    out.push(("bottleneck".to_string(), b));
    Ok(out)
}

/// Per-mode mean magnitude of the complex spectral weights of every block,
/// in forward-application order.
pub fn export_spectral_weights(params: &FnoParams) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    let levels = params.core.encoder.len();
    let describe = |name: String, block: &FnoBlockParams| {
        let (d_in, d_out, modes) = block.spectral.dim();
        let denom = (d_in * d_out) as f64;
        let mags = (0..modes)
            .map(|k| {
                block
                    .spectral
                    .index_axis(Axis(2), k)
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
                    / denom
            })
            .collect();
        (name, mags)
    };
    for (r, b) in params.core.encoder.iter().enumerate() {
        out.push(describe(format!("encoder{r}"), b));
    }
    out.push(describe("bottleneck".into(), &params.core.bottleneck));
    for r in (0..levels).rev() {
        out.push(describe(format!("decoder{r}"), &params.core.decoder[r]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fno::ops::rfft_modes;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> FnoConfig {
        FnoConfig {
            latent_width: 4,
            encoder_levels: 2,
            modes_per_resolution: vec![3, 2, 2],
            input_channels: 7,
            output_channels: 2,
            activation: Activation::Gelu,
        }
    }

    fn random_input(cfg: &FnoConfig, n: usize, seed: u64) -> FeatureField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((cfg.input_channels, n), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_output_has_spatial_length() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 1);
        let plans = PlanCache::new();
        for n in [8usize, 16, 12] {
            let x = random_input(&cfg, n, n as u64);
            let out = hfno_forward(&params, &cfg, &x, &plans).unwrap();
            assert_eq!(out.len(), n);
            assert!(out.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 2);
        let plans = PlanCache::new();
        let x = random_input(&cfg, 8, 3);
        let a = hfno_forward(&params, &cfg, &x, &plans).unwrap();
        let b = hfno_forward(&params, &cfg, &x, &plans).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 3);
        let plans = PlanCache::new();
        // indivisible length
        let x = random_input(&cfg, 10, 4);
        assert!(hfno_forward(&params, &cfg, &x, &plans).is_err());
        // wrong channel count
        let bad = Array2::zeros((3, 8));
        assert!(hfno_forward(&params, &cfg, &bad, &plans).is_err());
        // mode bound violated at the bottleneck: n=4 pools to 1, bins = 1
        let x4 = random_input(&cfg, 4, 5);
        assert!(hfno_forward(&params, &cfg, &x4, &plans).is_err());
    }

    #[test]
    fn parameter_count_is_mesh_independent() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 4);
        let count = params.core.param_count();
        assert_eq!(count, params.core.flatten().len());
        let plans = PlanCache::new();
        for n in [8usize, 16, 32, 100] {
            let x = random_input(&cfg, n, n as u64);
            hfno_forward(&params, &cfg, &x, &plans).unwrap();
        }
        // nothing about the params changed with n; count is struct-only
        assert_eq!(params.core.param_count(), count);
    }

    #[test]
    fn flatten_round_trips() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 5);
        let flat = params.core.flatten();
        let mut rebuilt = FnoCore::zeros(&cfg);
        rebuilt.unflatten_from(&flat).unwrap();
        assert_eq!(rebuilt, params.core);
        assert!(rebuilt.unflatten_from(&flat[1..]).is_err());
    }

    #[test]
    fn fourier_layer_reduces_to_pointwise_when_spectral_zeroed() {
        let plans = PlanCache::new();
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut block = FnoBlockParams::init(2, 3, 2, &mut rng);
        block.spectral.fill(Complex64::default());
        let x = Array2::from_shape_fn((2, n), |_| rng.random_range(-1.0..1.0));
        let y = fourier_layer(&x, &block, Activation::Gelu, &plans).unwrap();
        let expect = pointwise(&x, &block.weight, &block.bias).mapv(|v| Activation::Gelu.apply(v));
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fourier_layer_passthrough_with_identity_paths() {
        let plans = PlanCache::new();
        let n = 8;
        let modes = rfft_bins(n);
        let mut block = FnoBlockParams::zeros(2, 2, modes);
        for k in 0..modes {
            for i in 0..2 {
                block.spectral[[i, i, k]] = Complex64::new(1.0, 0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((2, n), |_| rng.random_range(-1.0..1.0));
        let y = fourier_layer(&x, &block, Activation::Identity, &plans).unwrap();
        for (a, b) in y.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_path_energy_above_modes_is_zero_per_block() {
        let plans = PlanCache::new();
        let n = 16;
        let modes = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut block = FnoBlockParams::init(2, 2, modes, &mut rng);
        // isolate the spectral path
        block.weight.fill(0.0);
        block.bias.fill(0.0);
        let x = Array2::from_shape_fn((2, n), |_| rng.random_range(-1.0..1.0));
        let y = fourier_layer(&x, &block, Activation::Identity, &plans).unwrap();
        let spec = rfft_modes(&y, rfft_bins(n), &plans);
        let total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
        let mut high = 0.0;
        for c in 0..2 {
            for k in modes..rfft_bins(n) {
                high += spec[[c, k]].norm_sqr();
            }
        }
        assert!(high < 1e-10 * total.max(1e-30));
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        // d_v = 4, n = 8, m = 2 (7 input channels): every parameter's
        // gradient against central differences at 1e-4 relative step.
        let cfg = tiny_cfg();
        let plans = PlanCache::new();
        let mut params = FnoParams::init_seeded(&cfg, 11);
        params.norm = NormStats {
            input_mean: Array1::from_elem(cfg.input_channels, 0.1),
            input_scale: Array1::from_elem(cfg.input_channels, 0.9),
            output_mean: [0.05, -0.02],
            output_scale: [1.1, 0.8],
        };
        let n = 8;
        let x = random_input(&cfg, n, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let target: ChannelVector = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();

        let loss_of = |core_flat: &[f64]| -> f64 {
            let mut p = params.clone();
            p.core.unflatten_from(core_flat).unwrap();
            let out = hfno_forward(&p, &cfg, &x, &plans).unwrap();
            out.iter().zip(&target).map(|(a, b)| (a - b).norm_sqr()).sum()
        };

        let (out, cache) = hfno_forward_cached(&params, &cfg, &x, &plans).unwrap();
        let g_out: ChannelVector = out.iter().zip(&target).map(|(a, b)| (a - b) * 2.0).collect();
        let grads = hfno_backward(&params, &cfg, &cache, &g_out, &plans);
        let grads_flat = grads.flatten();
        let base = params.core.flatten();

        let mut checked = 0usize;
        let mut max_rel = 0.0f64;
        let stride = (base.len() / 257).max(1);
        for idx in (0..base.len()).step_by(stride) {
            // step 1e-4 relative, floored at 1e-4 absolute: balances the
            // f64 roundoff and truncation error of the central difference
            let h = 1e-4 * base[idx].abs().max(1.0);
            let mut plus = base.clone();
            plus[idx] += h;
            let mut minus = base.clone();
            minus[idx] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let scale = fd.abs().max(grads_flat[idx].abs()).max(1e-5);
            let rel = (fd - grads_flat[idx]).abs() / scale;
            max_rel = max_rel.max(rel);
            assert!(rel < 1e-4, "param {idx}: analytic {} vs fd {fd} (rel {rel})", grads_flat[idx]);
            checked += 1;
        }
        assert!(checked > 200, "checked only {checked} parameters");
        assert!(max_rel < 1e-4);
    }

    #[test]
    fn zero_error_gives_zero_gradients() {
        let cfg = tiny_cfg();
        let plans = PlanCache::new();
        let params = FnoParams::init_seeded(&cfg, 14);
        let x = random_input(&cfg, 8, 15);
        let (_, cache) = hfno_forward_cached(&params, &cfg, &x, &plans).unwrap();
        let g_out: ChannelVector = Array1::zeros(8);
        let grads = hfno_backward(&params, &cfg, &cache, &g_out, &plans);
        assert!(grads.flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn spectral_export_shapes_and_flatness_at_init() {
        let cfg = tiny_cfg();
        let params = FnoParams::init_seeded(&cfg, 16);
        let export = export_spectral_weights(&params);
        assert_eq!(export.len(), 5);
        assert_eq!(export[0].0, "encoder0");
        assert_eq!(export[0].1.len(), 3);
        assert_eq!(export[2].0, "bottleneck");
        assert_eq!(export[2].1.len(), 2);
        // uniform init: per-mode mean magnitudes are close to each other
        for (name, mags) in &export {
            let mean: f64 = mags.iter().sum::<f64>() / mags.len() as f64;
            for m in mags {
                assert!(
                    (m - mean).abs() < 0.5 * mean,
                    "block {name} mode magnitudes not near-uniform: {mags:?}"
                );
            }
        }
    }

    #[test]
    fn pointwise_only_model_matches_hand_computation() {
        // levels = 0 degenerates the net to lift -> bottleneck -> projection
        let cfg = FnoConfig {
            latent_width: 2,
            encoder_levels: 0,
            modes_per_resolution: vec![1],
            input_channels: 2,
            output_channels: 2,
            activation: Activation::Identity,
        };
        let mut params = FnoParams::init_seeded(&cfg, 17);
        params.core.bottleneck.spectral.fill(Complex64::default());
        let plans = PlanCache::new();
        let x = array![[1.0, -1.0], [0.5, 2.0]];
        let out = hfno_forward(&params, &cfg, &x, &plans).unwrap();

        let v0 = pointwise(&x, &params.core.lifting_weight, &params.core.lifting_bias);
        let b = pointwise(&v0, &params.core.bottleneck.weight, &params.core.bottleneck.bias);
        let h = pointwise(&b, &params.core.proj_hidden_weight, &params.core.proj_hidden_bias);
        let y = pointwise(&h, &params.core.proj_out_weight, &params.core.proj_out_bias);
        for i in 0..2 {
            assert!((out[i].re - y[[0, i]]).abs() < 1e-14);
            assert!((out[i].im - y[[1, i]]).abs() < 1e-14);
        }
    }
}
