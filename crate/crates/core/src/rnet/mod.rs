//! The refinement network: a shallow convolutional encoder-decoder with skip
//! connections that maps RGB + normalized log-depth to a log-space depth
//! residual, with hand-written backpropagation and AdamW.
//!
//! Layout for `levels = L` and channel widths `C_l = base·2^l`:
//!
//! ```text
//! enc0.conv1, enc0.conv2            4 → C0 → C0          stride 1
//! enc{l}.down, enc{l}.conv          C_{l-1} → C_l → C_l  stride 2, 1   (l = 1..L-1)
//! dec{l}.up                         nearest ×2, C_{l+1} → C_l          (l = L-2..0)
//! dec{l}.fuse                       [dec{l}.up ‖ enc{l}] 2C_l → C_l
//! out                               C0 → 1, no activation
//! ```
//!
//! Every convolution is 3×3 with zero padding and is followed by a rectifier,
//! except `out`. There are no normalization layers.

mod adamw;
pub(crate) mod conv;
mod net;
mod refine;

pub use adamw::{adamw_step, AdamWParams, OptimState};
pub use conv::Activation;
pub use net::{backward, backward_into, forward, ForwardCache};
pub use refine::{
    network_input, residual_grad, residual_to_depth, IdentityRefiner, NetworkInput, RefineOutput, Refiner,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::formats::WeightsFile;
use crate::rng::Rng;

/// Floating-point element type the network can run in (f32 for use, f64 for gradient checks).
pub trait Scalar:
    num_traits::Float
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    /// `C ← A·B` (or `C ← C + A·B` when `accumulate`), all strides in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
        accumulate: bool,
    );

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
                accumulate: bool,
            ) {
                assert!(rsa > 0 && csa > 0 && rsb > 0 && csb > 0 && rsc > 0 && csc > 0);
                assert!(span(m, k, rsa, csa) <= a.len());
                assert!(span(k, n, rsb, csb) <= b.len());
                assert!(span(m, n, rsc, csc) <= c.len());
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above keep every strided access inside the slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    /// σ of the multiplicative log-normal noise put on the depth input.
    pub depth_noise_sigma: f64,
    /// Bound on |log-residual|.
    pub residual_clamp: f64,
}

impl Default for RNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            depth_noise_sigma: 0.02,
            residual_clamp: 2.0,
        }
    }
}

impl RNetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.levels >= 1, Config, "rnet.levels must be >= 1");
        ensure!(self.base_channels >= 1, Config, "rnet.base_channels must be >= 1");
        ensure!(self.depth_noise_sigma >= 0.0, Config, "rnet.depth_noise_sigma must be >= 0");
        ensure!(self.residual_clamp > 0.0, Config, "rnet.residual_clamp must be > 0");
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// (name, cin, cout, stride) for every convolution in execution order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize, usize)> {
        let l = self.levels;
        let mut specs = vec![
            ("enc0.conv1".to_string(), INPUT_CHANNELS, self.channels(0), 1),
            ("enc0.conv2".to_string(), self.channels(0), self.channels(0), 1),
        ];
        for lv in 1..l {
            specs.push((format!("enc{lv}.down"), self.channels(lv - 1), self.channels(lv), 2));
            specs.push((format!("enc{lv}.conv"), self.channels(lv), self.channels(lv), 1));
        }
        for lv in (0..l.saturating_sub(1)).rev() {
            specs.push((format!("dec{lv}.up"), self.channels(lv + 1), self.channels(lv), 1));
            specs.push((format!("dec{lv}.fuse"), 2 * self.channels(lv), self.channels(lv), 1));
        }
        specs.push(("out".to_string(), self.channels(0), 1, 1));
        specs
    }
}

/// RGB + normalized log-depth.
pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    /// cout × cin × 3 × 3.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Network parameters in element type `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RNet<T> {
    pub config: RNetConfig,
    pub layers: Vec<ConvLayer<T>>,
}

/// Parameters of the network as used at inference and training time.
pub type RNetWeights = RNet<f32>;

/// Per-parameter gradients, laid out like [`RNet::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(net: &RNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += *b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += *b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|v| *v == T::zero())
    }
}

impl<T: Scalar> RNet<T> {
    /// All-zero parameters for `config`.
    pub fn zeros(config: &RNetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_specs()
            .into_iter()
            .map(|(name, cin, cout, stride)| ConvLayer {
                name,
                cin,
                cout,
                stride,
                weight: vec![T::zero(); cout * cin * 9],
                bias: vec![T::zero(); cout],
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable view of every parameter tensor: weight then bias for each layer.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn params(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn cast<U: Scalar>(&self) -> RNet<U> {
        RNet {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    cin: l.cin,
                    cout: l.cout,
                    stride: l.stride,
                    weight: l.weight.iter().map(|v| U::of(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// The output layer; zero here means the network is the identity refiner.
    pub fn output_layer(&self) -> &ConvLayer<T> {
        self.layers.last().expect("network has an output layer")
    }
}

/// Fan-in scaled normal init (gain √2 for rectifiers), zero biases, and a
/// zero output layer so the untrained network leaves depth unchanged.
pub fn init_weights(config: &RNetConfig, rng: &mut Rng) -> Result<RNetWeights> {
    let mut net = RNet::<f32>::zeros(config)?;
    let last = net.layers.len() - 1;
    for layer in &mut net.layers[..last] {
        let std = (2.0 / (layer.cin * 9) as f64).sqrt();
        for w in &mut layer.weight {
            *w = rng.normal(0.0, std) as f32;
        }
    }
    Ok(net)
}

/// Random weights in every layer including the output (tests, gradient checks).
pub fn init_random_weights(config: &RNetConfig, output_std: f64, rng: &mut Rng) -> Result<RNetWeights> {
    let mut net = init_weights(config, rng)?;
    for layer in &mut net.layers {
        for b in &mut layer.bias {
            *b = rng.normal(0.0, 0.05) as f32;
        }
    }
    let out = net.layers.last_mut().expect("output layer");
    for w in &mut out.weight {
        *w = rng.normal(0.0, output_std) as f32;
    }
    Ok(net)
}

const META_LEVELS: &str = "meta.levels";
const META_BASE: &str = "meta.base_channels";
const META_NOISE: &str = "meta.depth_noise_sigma";
const META_CLAMP: &str = "meta.residual_clamp";

impl RNetWeights {
    /// Serializes as `meta.*` scalars followed by `<layer>.weight` / `<layer>.bias`.
    pub fn to_weights_file(&self) -> WeightsFile {
        let mut f = WeightsFile::new();
        self.append_to(&mut f, "").expect("fresh table has unique names");
        f
    }

    /// Adds this network's tensors under `prefix`.
    pub fn append_to(&self, f: &mut WeightsFile, prefix: &str) -> Result<()> {
        let c = &self.config;
        f.insert(format!("{prefix}{META_LEVELS}"), vec![1], vec![c.levels as f32])?;
        f.insert(format!("{prefix}{META_BASE}"), vec![1], vec![c.base_channels as f32])?;
        f.insert(format!("{prefix}{META_NOISE}"), vec![1], vec![c.depth_noise_sigma as f32])?;
        f.insert(format!("{prefix}{META_CLAMP}"), vec![1], vec![c.residual_clamp as f32])?;
        for l in &self.layers {
            f.insert(format!("{prefix}{}.weight", l.name), vec![l.cout, l.cin, 3, 3], l.weight.clone())?;
            f.insert(format!("{prefix}{}.bias", l.name), vec![l.cout], l.bias.clone())?;
        }
        Ok(())
    }

    pub fn from_weights_file(f: &WeightsFile) -> Result<Self> {
        Self::from_weights_file_prefixed(f, "")
    }

    pub fn from_weights_file_prefixed(f: &WeightsFile, prefix: &str) -> Result<Self> {
        let scalar = |name: &str| -> Result<f64> {
            let t = f
                .get(&format!("{prefix}{name}"))
                .ok_or_else(|| Error::InvalidInput(format!("weights missing {prefix}{name}")))?;
            ensure!(t.data.len() == 1, Shape, "{name} must hold one value");
            // shortest decimal of the stored f32, so 0.02 comes back as 0.02
            Ok(t.data[0].to_string().parse().expect("float display parses"))
        };
        let config = RNetConfig {
            levels: scalar(META_LEVELS)? as usize,
            base_channels: scalar(META_BASE)? as usize,
            depth_noise_sigma: scalar(META_NOISE)?,
            residual_clamp: scalar(META_CLAMP)?,
        };
        let mut net = RNet::<f32>::zeros(&config)?;
        for l in &mut net.layers {
            for (suffix, dims, dst) in [
                ("weight", vec![l.cout, l.cin, 3, 3], &mut l.weight),
                ("bias", vec![l.cout], &mut l.bias),
            ] {
                let name = format!("{prefix}{}.{suffix}", l.name);
                let t = f
                    .get(&name)
                    .ok_or_else(|| Error::InvalidInput(format!("weights missing {name}")))?;
                ensure!(t.dims == dims, Shape, "{name}: dims {:?}, expected {:?}", t.dims, dims);
                dst.copy_from_slice(&t.data);
            }
        }
        ensure!(net.is_finite(), InvalidInput, "weights contain non-finite values");
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_layout() {
        let cfg = RNetConfig::default();
        let names: Vec<String> = cfg.layer_specs().into_iter().map(|s| s.0).collect();
        assert_eq!(
            names,
            [
                "enc0.conv1", "enc0.conv2", "enc1.down", "enc1.conv", "enc2.down", "enc2.conv", "dec1.up", "dec1.fuse",
                "dec0.up", "dec0.fuse", "out"
            ]
        );
        let one = RNetConfig { levels: 1, ..cfg };
        assert_eq!(one.layer_specs().len(), 3);
    }

    #[test]
    fn output_layer_zero_and_deterministic() {
        let cfg = RNetConfig::default();
        let a = init_weights(&cfg, &mut Rng::new(5)).unwrap();
        let b = init_weights(&cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        let out = a.output_layer();
        assert!(out.weight.iter().chain(&out.bias).all(|v| *v == 0.0));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn init_variance_tracks_fan_in() {
        // accumulate at least 1e5 draws per layer over repeated inits
        let cfg = RNetConfig { levels: 2, base_channels: 8, ..Default::default() };
        let specs = cfg.layer_specs();
        let mut sums = vec![(0.0f64, 0usize); specs.len() - 1];
        let mut seed = 0;
        while sums.iter().any(|s| s.1 < 100_000) {
            let net = init_weights(&cfg, &mut Rng::new(seed)).unwrap();
            seed += 1;
            for (acc, l) in sums.iter_mut().zip(&net.layers) {
                acc.0 += l.weight.iter().map(|w| f64::from(*w).powi(2)).sum::<f64>();
                acc.1 += l.weight.len();
            }
        }
        for ((sum, n), spec) in sums.iter().zip(&specs) {
            let target = 2.0 / (spec.1 * 9) as f64;
            let var = sum / *n as f64;
            assert!(var < 3.0 * target && var > target / 3.0, "{}: {var} vs {target}", spec.0);
        }
    }

    #[test]
    fn weights_file_roundtrip() {
        let cfg = RNetConfig { levels: 2, base_channels: 4, ..Default::default() };
        let net = init_random_weights(&cfg, 0.1, &mut Rng::new(1)).unwrap();
        let file = net.to_weights_file();
        let back = RNetWeights::from_weights_file(&file).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_weights_file().to_bytes(), file.to_bytes());
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let mut f = WeightsFile::new();
        f.insert("meta.levels", vec![1], vec![1.0]).unwrap();
        assert!(RNetWeights::from_weights_file(&f).is_err());
    }
}
