//! The fV-SRN model: input encodings, latent grid(s) and the MLP with a
//! density or color head.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::fourier::{FourierEncoder, FourierMode};
use crate::grid::{scatter, KeyframeGrids, LatentGrid, Taps};
use crate::mlp::{ForwardCache, Mlp, MlpGrads};
use crate::volume::ScalarVolume;
use crate::{math, Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One output squashed to `[0, 1]`.
    Density,
    /// Sigmoid rgb plus softplus absorption.
    Color,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Density => 1,
            Head::Color => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionEncoding {
    /// `p ⊕ sin(Bp) ⊕ cos(Bp)`
    Pos,
    /// `p ⊕ d ⊕ sin(Bp) ⊕ cos(Bp)`
    DirP,
    /// `p ⊕ d ⊕ sin(B(p⊕d)) ⊕ cos(B(p⊕d))`
    DirF,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoding {
    None,
    Direct,
    Fourier,
    Both,
}

macro_rules! from_str_table {
    ($ty:ty, $what:literal, { $($pat:pat => $val:expr),* $(,)? }) => {
        impl core::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($pat => Ok($val),)*
                    other => Err(Error::Unknown { what: $what, name: other.to_string() }),
                }
            }
        }
    };
}

from_str_table!(Head, "head", { "density" => Head::Density, "color" => Head::Color });
from_str_table!(DirectionEncoding, "direction encoding", {
    "pos" => DirectionEncoding::Pos,
    "dirp" | "dirP" => DirectionEncoding::DirP,
    "dirf" | "dirF" => DirectionEncoding::DirF,
});
from_str_table!(TimeEncoding, "time encoding", {
    "none" => TimeEncoding::None,
    "direct" => TimeEncoding::Direct,
    "fourier" => TimeEncoding::Fourier,
    "both" => TimeEncoding::Both,
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourierConfig {
    pub mode: FourierMode,
    /// Number of frequencies `m`; `None` means `(c - 4) / 2`.
    pub features: Option<usize>,
    pub sigma: f32,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            mode: FourierMode::Nerf,
            features: None,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub resolution: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub encoding: TimeEncoding,
    /// Frequencies of the time Fourier features.
    pub frequencies: usize,
    /// Timesteps holding a latent grid.
    pub keyframes: Vec<u32>,
    /// Valid timestep range `[first, last]`, also used to normalize `t`.
    pub span: [u32; 2],
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            encoding: TimeEncoding::None,
            frequencies: 4,
            keyframes: vec![0],
            span: [0, 0],
        }
    }
}

impl TemporalConfig {
    pub fn time_features(&self) -> usize {
        match self.encoding {
            TimeEncoding::None => 0,
            TimeEncoding::Direct => 1,
            TimeEncoding::Fourier => 2 * self.frequencies,
            TimeEncoding::Both => 1 + 2 * self.frequencies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub head: Head,
    pub layers: usize,
    pub channels: usize,
    pub activation: Activation,
    pub fourier: FourierConfig,
    pub grid: Option<GridConfig>,
    pub direction: DirectionEncoding,
    pub temporal: Option<TemporalConfig>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            head: Head::Density,
            layers: 4,
            channels: 32,
            activation: Activation::SnakeAlt,
            fourier: FourierConfig::default(),
            grid: Some(GridConfig {
                resolution: 32,
                channels: 16,
            }),
            direction: DirectionEncoding::Pos,
            temporal: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn fourier_features(&self) -> usize {
        match self.fourier.mode {
            FourierMode::Off => 0,
            _ => self
                .fourier
                .features
                .unwrap_or(self.channels.saturating_sub(4) / 2),
        }
    }

    /// Width of the vector fed to the Fourier matrix: 3, or 6 for `dirF`.
    pub fn fourier_input_dim(&self) -> usize {
        match self.direction {
            DirectionEncoding::DirF => 6,
            _ => 3,
        }
    }

    pub fn spatial_width(&self) -> usize {
        match self.direction {
            DirectionEncoding::Pos => 3,
            _ => 6,
        }
    }

    pub fn time_width(&self) -> usize {
        self.temporal
            .as_ref()
            .map_or(0, TemporalConfig::time_features)
    }

    pub fn latent_width(&self) -> usize {
        self.grid.map_or(0, |g| g.channels)
    }

    /// Width of the assembled network input.
    pub fn input_width(&self) -> usize {
        self.spatial_width() + 2 * self.fourier_features() + self.time_width() + self.latent_width()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.layers == 0 || self.channels == 0 {
            return bad("network needs at least one layer and one channel");
        }
        if self.direction != DirectionEncoding::Pos && self.head != Head::Color {
            return bad("direction encodings require the color head");
        }
        if let Some(g) = self.grid {
            if g.resolution < 2 || g.channels == 0 {
                return bad("latent grid needs resolution >= 2 and at least one channel");
            }
        }
        if let Some(t) = &self.temporal {
            if t.span[0] > t.span[1] {
                return bad("temporal span must satisfy first <= last");
            }
            if self.grid.is_some() {
                if t.keyframes.is_empty() {
                    return Err(Error::EmptyKeyframes);
                }
                if t.keyframes.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("keyframes must be strictly increasing");
                }
                if t.keyframes.iter().any(|&k| k < t.span[0] || k > t.span[1]) {
                    return bad("keyframes must lie inside the temporal span");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    None,
    Static(LatentGrid),
    Keyframes(KeyframeGrids),
}

impl Latent {
    pub fn grids(&self) -> &[LatentGrid] {
        match self {
            Latent::None => &[],
            Latent::Static(g) => core::slice::from_ref(g),
            Latent::Keyframes(k) => k.grids(),
        }
    }

    pub fn grids_mut(&mut self) -> &mut [LatentGrid] {
        match self {
            Latent::None => &mut [],
            Latent::Static(g) => core::slice::from_mut(g),
            Latent::Keyframes(k) => k.grids_mut(),
        }
    }
}

/// Where a sample's latent vector came from: trilinear taps shared by up to
/// two keyframe grids with their temporal weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentTap {
    pub taps: Taps,
    pub frames: [(usize, f32); 2],
}

/// A batch of sample queries. Directions are ignored by `pos` models;
/// times are required exactly for temporal models.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub positions: &'a [Vec3],
    pub directions: Option<&'a [Vec3]>,
    pub times: Option<&'a [f32]>,
}

impl<'a> Samples<'a> {
    pub fn positions(positions: &'a [Vec3]) -> Self {
        Self {
            positions,
            directions: None,
            times: None,
        }
    }

    pub fn with_directions(mut self, directions: &'a [Vec3]) -> Self {
        self.directions = Some(directions);
        self
    }

    pub fn with_times(mut self, times: &'a [f32]) -> Self {
        self.times = Some(times);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPrecision {
    F16,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPrecision {
    U8,
    F32,
}

from_str_table!(WeightPrecision, "weight precision", { "f16" => WeightPrecision::F16, "f32" => WeightPrecision::F32 });
from_str_table!(GridPrecision, "grid precision", { "u8" => GridPrecision::U8, "f32" => GridPrecision::F32 });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub network: usize,
    pub grid: usize,
    pub total: usize,
}

/// Parameter gradients shaped like an [`FvsrnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub mlp: MlpGrads<f32>,
    pub grids: Vec<Vec<f32>>,
}

impl GradientBuffer {
    pub fn zero(&mut self) {
        self.mlp.zero();
        self.grids
            .iter_mut()
            .for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
    }

    pub fn add_assign(&mut self, other: &GradientBuffer) {
        self.mlp.add_assign(&other.mlp);
        for (a, b) in self.grids.iter_mut().zip(&other.grids) {
            crate::mlp::axpy(a, 1.0, b);
        }
    }

    pub fn scale(&mut self, s: f32) {
        for l in &mut self.mlp.layers {
            l.weights.iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
        self.grids
            .iter_mut()
            .for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }

    /// Same order as [`FvsrnModel::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f32]> {
        let mut out = self.mlp.slices();
        out.extend(self.grids.iter().map(|g| g.as_slice()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Intermediates of a training forward pass.
#[derive(Debug, Clone)]
pub struct ModelCache {
    raw: Vec<f32>,
    mlp: ForwardCache<f32>,
    taps: Vec<LatentTap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvsrnModel {
    config: ModelConfig,
    mlp: Mlp<f32>,
    fourier: FourierEncoder,
    time_fourier: Option<FourierEncoder>,
    latent: Latent,
}

impl FvsrnModel {
    /// Freshly initialized model; all randomness derives from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::init(
            config.layers,
            config.channels,
            config.input_width(),
            config.head.outputs(),
            config.activation,
            config.seed,
        )?;
        let grid_seed = config.seed.wrapping_add(0x9e37_79b9);
        let latent = match (config.grid, &config.temporal) {
            (None, _) => Latent::None,
            (Some(g), None) => {
                Latent::Static(LatentGrid::random(g.resolution, g.channels, grid_seed)?)
            }
            (Some(g), Some(t)) => Latent::Keyframes(KeyframeGrids::random(
                t.keyframes.clone(),
                g.resolution,
                g.channels,
                grid_seed,
            )?),
        };
        Self::from_parts(config, mlp, latent)
    }

    /// Assembles a model from trained parts, checking that they agree with
    /// the configuration.
    pub fn from_parts(config: ModelConfig, mlp: Mlp<f32>, latent: Latent) -> Result<Self> {
        config.validate()?;
        if mlp.input_dim() != config.input_width() {
            return Err(Error::ShapeMismatch {
                context: "network input width",
                expected: config.input_width(),
                found: mlp.input_dim(),
            });
        }
        if mlp.output_dim() != config.head.outputs() {
            return Err(Error::ShapeMismatch {
                context: "network output width",
                expected: config.head.outputs(),
                found: mlp.output_dim(),
            });
        }
        let latent_ok = match (&latent, config.grid, &config.temporal) {
            (Latent::None, None, _) => true,
            (Latent::Static(g), Some(c), None) => {
                g.resolution() == c.resolution && g.channels() == c.channels
            }
            (Latent::Keyframes(k), Some(c), Some(t)) => {
                k.times() == t.keyframes.as_slice()
                    && k.grids()[0].resolution() == c.resolution
                    && k.grids()[0].channels() == c.channels
            }
            _ => false,
        };
        if !latent_ok {
            return Err(Error::InvalidConfig(
                "latent grids do not match the configuration".into(),
            ));
        }
        let fourier = FourierEncoder::new(
            config.fourier.mode,
            config.fourier_features(),
            config.fourier_input_dim(),
            config.fourier.sigma,
            config.seed.wrapping_add(1),
        )?;
        let time_fourier = match &config.temporal {
            Some(t) if matches!(t.encoding, TimeEncoding::Fourier | TimeEncoding::Both) => Some(
                FourierEncoder::new(FourierMode::Nerf, t.frequencies, 1, 0.0, 0)?,
            ),
            _ => None,
        };
        Ok(Self {
            config,
            mlp,
            fourier,
            time_fourier,
            latent,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp<f32> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<f32> {
        &mut self.mlp
    }

    pub fn latent(&self) -> &Latent {
        &self.latent
    }

    pub fn latent_mut(&mut self) -> &mut Latent {
        &mut self.latent
    }

    pub fn fourier(&self) -> &FourierEncoder {
        &self.fourier
    }

    pub fn head(&self) -> Head {
        self.config.head
    }

    pub fn is_temporal(&self) -> bool {
        self.config.temporal.is_some()
    }

    pub fn temporal_span(&self) -> Option<[u32; 2]> {
        self.config.temporal.as_ref().map(|t| t.span)
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn output_width(&self) -> usize {
        self.config.head.outputs()
    }

    pub fn is_finite(&self) -> bool {
        self.mlp.is_finite()
            && self
                .latent
                .grids()
                .iter()
                .all(|g| g.values().iter().all(|v| v.is_finite()))
    }

    pub fn zero_grads(&self) -> GradientBuffer {
        GradientBuffer {
            mlp: self.mlp.zero_grads(),
            grids: self
                .latent
                .grids()
                .iter()
                .map(|g| vec![0.0; g.len()])
                .collect(),
        }
    }

    /// Network weights and biases followed by every latent grid.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = self.mlp.param_slices_mut();
        out.extend(self.latent.grids_mut().iter_mut().map(|g| g.values_mut()));
        out
    }

    pub fn memory_footprint(
        &self,
        weights: WeightPrecision,
        grid: GridPrecision,
    ) -> MemoryFootprint {
        let network = self.mlp.param_count()
            * match weights {
                WeightPrecision::F16 => 2,
                WeightPrecision::F32 => 4,
            };
        let grid_bytes = self
            .latent
            .grids()
            .iter()
            .map(|g| match grid {
                GridPrecision::F32 => 4 * g.len(),
                GridPrecision::U8 => g.len() + 8 * g.channels(),
            })
            .sum::<usize>();
        MemoryFootprint {
            network,
            grid: grid_bytes,
            total: network + grid_bytes,
        }
    }

    /// Copy whose grids went through the 8-bit quantizer.
    pub fn with_quantized_grids(&self) -> Self {
        let mut out = self.clone();
        for g in out.latent.grids_mut() {
            *g = g.quantize().dequantize();
        }
        out
    }

    fn check_samples(&self, s: &Samples<'_>) -> Result<()> {
        let n = s.len();
        if self.config.direction != DirectionEncoding::Pos {
            match s.directions {
                None => return Err(Error::MissingInput("view direction")),
                Some(d) if d.len() != n => {
                    return Err(Error::ShapeMismatch {
                        context: "sample directions",
                        expected: n,
                        found: d.len(),
                    })
                }
                _ => {}
            }
        }
        match (self.is_temporal(), s.times) {
            (true, None) => return Err(Error::MissingInput("timestep")),
            (false, Some(_)) => {
                return Err(Error::UnexpectedInput("timestep for a non-temporal model"))
            }
            (true, Some(t)) if t.len() != n => {
                return Err(Error::ShapeMismatch {
                    context: "sample times",
                    expected: n,
                    found: t.len(),
                })
            }
            (true, Some(t)) if t.iter().any(|v| !v.is_finite()) => {
                return Err(Error::NonFinite("sample times"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Writes the input vector for one sample into `out` (length
    /// [`input_width`](Self::input_width)) and returns its latent taps.
    pub fn assemble_into(&self, p: Vec3, d: Vec3, t: f32, out: &mut [f32]) -> LatentTap {
        let cfg = &self.config;
        let m = self.fourier.features();
        out[..3].copy_from_slice(&p);
        let mut o = 3;
        if cfg.direction != DirectionEncoding::Pos {
            out[3..6].copy_from_slice(&d);
            o = 6;
        }
        if m > 0 {
            let (sin, rest) = out[o..].split_at_mut(m);
            let v6 = [p[0], p[1], p[2], d[0], d[1], d[2]];
            let v = &v6[..self.fourier.input_dim()];
            self.fourier.encode_sin_cos(v, sin, &mut rest[..m]);
            o += 2 * m;
        }
        if let Some(temporal) = &cfg.temporal {
            let [t0, t1] = temporal.span;
            let tn = if t1 > t0 {
                (t - t0 as f32) / (t1 - t0) as f32
            } else {
                0.0
            };
            if matches!(temporal.encoding, TimeEncoding::Direct | TimeEncoding::Both) {
                out[o] = tn;
                o += 1;
            }
            if let Some(tf) = &self.time_fourier {
                let l = tf.features();
                let (sin, rest) = out[o..].split_at_mut(l);
                tf.encode_sin_cos(&[tn], sin, &mut rest[..l]);
                o += 2 * l;
            }
        }
        let z = &mut out[o..];
        z.iter_mut().for_each(|v| *v = 0.0);
        let mut tap = LatentTap {
            taps: Taps {
                vertex: [0; 8],
                weight: [0.0; 8],
            },
            frames: [(0, 1.0), (0, 0.0)],
        };
        match &self.latent {
            Latent::None => {}
            Latent::Static(g) => {
                tap.taps = g.taps(p);
                g.gather(&tap.taps, 1.0, z);
            }
            Latent::Keyframes(k) => {
                let (i0, i1, w) = k.bracket(t);
                let grids = k.grids();
                tap.taps = grids[0].taps(p);
                tap.frames = [(i0, 1.0 - w), (i1, w)];
                grids[i0].gather(&tap.taps, 1.0 - w, z);
                if w != 0.0 {
                    grids[i1].gather(&tap.taps, w, z);
                }
            }
        }
        tap
    }

    /// Input vector for one sample.
    pub fn assemble_input(&self, p: Vec3, d: Option<Vec3>, t: Option<f32>) -> Result<Vec<f32>> {
        let dirs = d.map(|d| [d]);
        let times = t.map(|t| [t]);
        let samples = Samples {
            positions: &[p],
            directions: dirs.as_ref().map(|d| d.as_slice()),
            times: times.as_ref().map(|t| t.as_slice()),
        };
        Ok(self.assemble_batch(&samples)?.0)
    }

    /// Row-major input matrix for a batch plus per-sample latent taps.
    pub fn assemble_batch(&self, s: &Samples<'_>) -> Result<(Vec<f32>, Vec<LatentTap>)> {
        self.check_samples(s)?;
        let w = self.input_width();
        let mut x = vec![0.0; s.len() * w];
        let mut taps = Vec::with_capacity(s.len());
        for (i, row) in x.chunks_exact_mut(w).enumerate() {
            let d = s.directions.map_or([0.0; 3], |d| d[i]);
            let t = s.times.map_or(0.0, |t| t[i]);
            taps.push(self.assemble_into(s.positions[i], d, t, row));
        }
        Ok((x, taps))
    }

    /// Applies the output head in place to raw network outputs.
    pub fn apply_head(&self, raw: &mut [f32]) {
        match self.config.head {
            Head::Density => raw.iter_mut().for_each(|v| *v = math::sigmoid(*v)),
            Head::Color => {
                for o in raw.chunks_exact_mut(4) {
                    for v in &mut o[..3] {
                        *v = math::sigmoid(*v);
                    }
                    o[3] = math::softplus(o[3]);
                }
            }
        }
    }

    /// Maps an adjoint of the head outputs to an adjoint of the raw outputs.
    fn head_backward(&self, raw: &[f32], out_bar: &[f32]) -> Vec<f32> {
        raw.iter()
            .zip(out_bar)
            .enumerate()
            .map(|(i, (&y, &g))| {
                let s = math::sigmoid(y);
                match self.config.head {
                    Head::Color if i % 4 == 3 => g * s,
                    _ => g * s * (1.0 - s),
                }
            })
            .collect()
    }

    /// Head outputs for an assembled input matrix.
    pub fn infer_inputs(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        let mut y = self.mlp.infer(x, batch)?;
        self.apply_head(&mut y);
        Ok(y)
    }

    /// Head outputs (1 or 4 per sample) for a batch of queries.
    pub fn infer(&self, s: &Samples<'_>) -> Result<Vec<f32>> {
        let (x, _) = self.assemble_batch(s)?;
        self.infer_inputs(&x, s.len())
    }

    pub fn eval_density(&self, s: &Samples<'_>) -> Result<Vec<f32>> {
        if self.config.head != Head::Density {
            return Err(Error::WrongHead {
                expected: "density",
            });
        }
        self.infer(s)
    }

    /// Densities at the voxel centers of a `dims` volume, one z-slice per
    /// network call.
    pub fn decode_volume(&self, dims: [usize; 3], t: Option<f32>) -> Result<ScalarVolume> {
        if self.config.head != Head::Density {
            return Err(Error::WrongHead {
                expected: "density",
            });
        }
        let probe = ScalarVolume::constant(dims, 0.0)?;
        let mut data = Vec::with_capacity(probe.len());
        let mut positions = Vec::with_capacity(dims[0] * dims[1]);
        for k in 0..dims[2] {
            positions.clear();
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    positions.push(probe.voxel_center(i, j, k));
                }
            }
            let times = t.map(|t| vec![t; positions.len()]);
            let mut s = Samples::positions(&positions);
            if let Some(times) = &times {
                s = s.with_times(times);
            }
            data.extend(self.infer(&s)?.into_iter().map(|v| v.clamp(0.0, 1.0)));
        }
        ScalarVolume::new(dims, data)
    }

    /// `(rgb, σ)` per sample.
    pub fn eval_color(&self, s: &Samples<'_>) -> Result<Vec<(Vec3, f32)>> {
        if self.config.head != Head::Color {
            return Err(Error::WrongHead { expected: "color" });
        }
        Ok(self
            .infer(s)?
            .chunks_exact(4)
            .map(|o| ([o[0], o[1], o[2]], o[3]))
            .collect())
    }

    /// Forward pass keeping what [`backward`](Self::backward) needs.
    pub fn forward_train(&self, s: &Samples<'_>) -> Result<(Vec<f32>, ModelCache)> {
        let (x, taps) = self.assemble_batch(s)?;
        let (raw, mlp) = self.mlp.forward(&x, s.len())?;
        let mut out = raw.clone();
        self.apply_head(&mut out);
        Ok((out, ModelCache { raw, mlp, taps }))
    }

    /// Accumulates parameter gradients of `Σ out_bar ⊙ out` into `grads`.
    /// Grid gradients are scattered serially so results are deterministic.
    pub fn backward(
        &self,
        cache: &ModelCache,
        out_bar: &[f32],
        grads: &mut GradientBuffer,
    ) -> Result<()> {
        if out_bar.len() != cache.raw.len() {
            return Err(Error::ShapeMismatch {
                context: "model output adjoint",
                expected: cache.raw.len(),
                found: out_bar.len(),
            });
        }
        if out_bar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model output adjoint"));
        }
        let raw_bar = self.head_backward(&cache.raw, out_bar);
        let grids = self.latent.grids();
        let x_bar =
            self.mlp
                .backward_into(&cache.mlp, &raw_bar, &mut grads.mlp, !grids.is_empty())?;
        if let Some(x_bar) = x_bar {
            let w = self.input_width();
            let f = grids[0].channels();
            for (row, tap) in x_bar.chunks_exact(w).zip(&cache.taps) {
                let z_bar = &row[w - f..];
                for &(g, weight) in &tap.frames {
                    if weight != 0.0 {
                        scatter(&tap.taps, weight, f, z_bar, &mut grads.grids[g]);
                    }
                }
            }
        }
        Ok(())
    }
}
