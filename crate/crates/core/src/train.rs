//! World-space, screen-space and temporal training.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::camera::{orbit_cameras, Camera};
use crate::image::Image;
use crate::metrics;
use crate::model::{FvsrnModel, Head, Samples};
use crate::render::{
    raymarch_backward, raymarch_forward, render_image, ModelSource, RenderSettings, Source,
};
use crate::tf::TransferFunction;
use crate::volume::ScalarVolume;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldTrainConfig {
    pub samples: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
    pub adaptive: bool,
    /// Regenerate the dataset from the error grid every this many epochs.
    pub resample_interval: usize,
    pub error_grid_resolution: usize,
    pub samples_per_voxel: usize,
}

impl Default for WorldTrainConfig {
    fn default() -> Self {
        Self {
            samples: 64 * 64 * 64,
            batch: 8192,
            epochs: 200,
            lr: 0.01,
            seed: 0,
            adaptive: false,
            resample_interval: 50,
            error_grid_resolution: 32,
            samples_per_voxel: 8,
        }
    }
}

impl WorldTrainConfig {
    /// Full-size settings; far too slow for a test suite.
    pub fn full_scale() -> Self {
        Self {
            samples: 256 * 256 * 256,
            batch: 128 * 64 * 64,
            error_grid_resolution: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.batch == 0 || self.batch > self.samples {
            return Err(Error::InvalidConfig("need 0 < batch <= samples".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.adaptive
            && (self.resample_interval == 0
                || self.error_grid_resolution == 0
                || self.samples_per_voxel == 0)
        {
            return Err(Error::InvalidConfig(
                "adaptive sampling needs positive interval and grid sizes".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth for world-space training.
#[derive(Debug, Clone, Copy)]
pub enum WorldTarget<'a> {
    Density(&'a ScalarVolume),
    /// Transfer-function colors and absorption of a volume.
    Color {
        volume: &'a ScalarVolume,
        tf: &'a TransferFunction,
    },
}

impl WorldTarget<'_> {
    pub fn channels(&self) -> usize {
        match self {
            WorldTarget::Density(_) => 1,
            WorldTarget::Color { .. } => 4,
        }
    }

    pub fn head(&self) -> Head {
        match self {
            WorldTarget::Density(_) => Head::Density,
            WorldTarget::Color { .. } => Head::Color,
        }
    }

    pub fn value_into(&self, p: Vec3, out: &mut Vec<f32>) {
        match self {
            WorldTarget::Density(v) => out.push(v.sample(p)),
            WorldTarget::Color { volume, tf } => {
                let (rgb, sigma) = tf.eval(volume.sample(p));
                out.extend_from_slice(&[rgb[0], rgb[1], rgb[2], sigma]);
            }
        }
    }
}

/// Training pairs; `values` holds `channels` entries per position.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub positions: Vec<Vec3>,
    pub times: Option<Vec<f32>>,
    pub values: Vec<f32>,
    pub channels: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Coarse per-voxel mean absolute prediction error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    resolution: usize,
    values: Vec<f32>,
}

impl ErrorGrid {
    pub fn new(resolution: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != resolution * resolution * resolution {
            return Err(Error::ShapeMismatch {
                context: "error grid",
                expected: resolution * resolution * resolution,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(
                "error grid entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { resolution, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// Lower corner of voxel `i` (x fastest).
    pub fn voxel_origin(&self, i: usize) -> Vec3 {
        let r = self.resolution;
        let h = 1.0 / r as f32;
        [
            (i % r) as f32 * h,
            ((i / r) % r) as f32 * h,
            (i / (r * r)) as f32 * h,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    Uniform,
    /// Voxels drawn with probability proportional to their error, then a
    /// uniform position inside the voxel.
    Importance(&'a ErrorGrid),
}

fn uniform_position(rng: &mut ChaCha8Rng) -> Vec3 {
    [rng.random(), rng.random(), rng.random()]
}

/// Draws `count` positions and looks up their target values.
pub fn sample_world_dataset(
    target: &WorldTarget<'_>,
    count: usize,
    sampler: Sampler<'_>,
    seed: u64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Vec3> = match sampler {
        Sampler::Importance(grid) if grid.total() > 0.0 => {
            let pick = WeightedIndex::new(grid.values())
                .map_err(|e| Error::InvalidConfig(alloc::format!("{e}")))?;
            let h = 1.0 / grid.resolution() as f32;
            (0..count)
                .map(|_| {
                    let o = grid.voxel_origin(pick.sample(&mut rng));
                    let u = uniform_position(&mut rng);
                    [
                        (o[0] + u[0] * h).min(1.0),
                        (o[1] + u[1] * h).min(1.0),
                        (o[2] + u[2] * h).min(1.0),
                    ]
                })
                .collect()
        }
        _ => (0..count).map(|_| uniform_position(&mut rng)).collect(),
    };
    let mut values = Vec::with_capacity(count * target.channels());
    for &p in &positions {
        target.value_into(p, &mut values);
    }
    Ok(Dataset {
        positions,
        times: None,
        values,
        channels: target.channels(),
    })
}

/// Anything that maps a batch of positions to predicted target values.
pub trait Predictor {
    fn predict(&self, positions: &[Vec3]) -> Result<Vec<f32>>;
}

impl Predictor for FvsrnModel {
    fn predict(&self, positions: &[Vec3]) -> Result<Vec<f32>> {
        self.infer(&Samples::positions(positions))
    }
}

impl<F: Fn(&[Vec3]) -> Result<Vec<f32>>> Predictor for F {
    fn predict(&self, positions: &[Vec3]) -> Result<Vec<f32>> {
        self(positions)
    }
}

/// Mean absolute error per voxel from `samples_per_voxel` random positions.
pub fn build_error_grid(
    predictor: &impl Predictor,
    target: &WorldTarget<'_>,
    resolution: usize,
    samples_per_voxel: usize,
    seed: u64,
) -> Result<ErrorGrid> {
    if resolution == 0 || samples_per_voxel == 0 {
        return Err(Error::InvalidConfig(
            "error grid needs positive resolution and sample count".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / resolution as f32;
    let n_vox = resolution * resolution * resolution;
    let ch = target.channels();
    let mut values = Vec::with_capacity(n_vox);
    const VOXELS_PER_BATCH: usize = 1024;
    let mut pos = Vec::new();
    let mut reference = Vec::new();
    for start in (0..n_vox).step_by(VOXELS_PER_BATCH) {
        let end = (start + VOXELS_PER_BATCH).min(n_vox);
        pos.clear();
        reference.clear();
        for v in start..end {
            let o = [
                (v % resolution) as f32 * h,
                ((v / resolution) % resolution) as f32 * h,
                (v / (resolution * resolution)) as f32 * h,
            ];
            for _ in 0..samples_per_voxel {
                let u = uniform_position(&mut rng);
                let p = [o[0] + u[0] * h, o[1] + u[1] * h, o[2] + u[2] * h];
                pos.push(p);
                target.value_into(p, &mut reference);
            }
        }
        let pred = predictor.predict(&pos)?;
        if pred.len() != reference.len() {
            return Err(Error::ShapeMismatch {
                context: "error grid predictions",
                expected: reference.len(),
                found: pred.len(),
            });
        }
        for (pv, rv) in pred
            .chunks(samples_per_voxel * ch)
            .zip(reference.chunks(samples_per_voxel * ch))
        {
            let sum: f64 = pv.iter().zip(rv).map(|(a, b)| (a - b).abs() as f64).sum();
            values.push((sum / pv.len() as f64) as f32);
        }
    }
    ErrorGrid::new(resolution, values)
}

/// Mean absolute error over `count` uniform positions drawn from `seed`.
pub fn evaluate_l1(
    predictor: &impl Predictor,
    target: &WorldTarget<'_>,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let data = sample_world_dataset(target, count, Sampler::Uniform, seed)?;
    let pred = predictor.predict(&data.positions)?;
    Ok(l1(&pred, &data.values))
}

fn l1(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / a.len().max(1) as f64
}

/// Adjoint of the mean absolute error.
fn l1_adjoint(pred: &[f32], target: &[f32]) -> Vec<f32> {
    let scale = 1.0 / pred.len() as f32;
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-epoch progress notification: epoch index and mean training loss.
pub type Progress<'a> = &'a mut dyn FnMut(usize, f32);

fn check_head(model: &FvsrnModel, head: Head) -> Result<()> {
    if model.head() != head {
        return Err(Error::WrongHead {
            expected: match head {
                Head::Density => "density",
                Head::Color => "color",
            },
        });
    }
    Ok(())
}

fn adam_for(model: &mut FvsrnModel) -> AdamState {
    AdamState::for_params(&model.param_slices_mut(), AdamConfig::default())
}

/// One pass over `data` in a seeded random order. Returns the mean loss.
fn run_epoch(
    model: &mut FvsrnModel,
    adam: &mut AdamState,
    data: &Dataset,
    batch: usize,
    lr: f32,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f32> {
    let ch = data.channels;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut grads = model.zero_grads();
    let (mut pos, mut times, mut target) = (Vec::new(), Vec::new(), Vec::new());
    let mut total = 0.0f64;
    for chunk in order.chunks(batch) {
        pos.clear();
        times.clear();
        target.clear();
        for &i in chunk {
            pos.push(data.positions[i]);
            target.extend_from_slice(&data.values[i * ch..(i + 1) * ch]);
            if let Some(t) = &data.times {
                times.push(t[i]);
            }
        }
        let samples = Samples {
            positions: &pos,
            directions: None,
            times: data.times.as_ref().map(|_| times.as_slice()),
        };
        let (pred, cache) = model.forward_train(&samples)?;
        let loss = l1(&pred, &target);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite loss".into(),
            });
        }
        total += loss * chunk.len() as f64;
        grads.zero();
        model.backward(&cache, &l1_adjoint(&pred, &target), &mut grads)?;
        if !grads.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite gradients".into(),
            });
        }
        adam.step(&mut model.param_slices_mut(), &grads.slices(), lr)?;
    }
    Ok((total / data.len() as f64) as f32)
}

/// Trains on position/value pairs with an L1 loss. Returns the loss trace.
pub fn train_world(
    model: &mut FvsrnModel,
    target: &WorldTarget<'_>,
    cfg: &WorldTrainConfig,
    progress: Progress<'_>,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    check_head(model, target.head())?;
    if model.is_temporal() {
        return Err(Error::InvalidConfig(
            "use train_temporal for temporal models".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = sample_world_dataset(target, cfg.samples, Sampler::Uniform, rng.random())?;
    let mut adam = adam_for(model);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.adaptive && epoch > 0 && epoch % cfg.resample_interval == 0 {
            let grid = build_error_grid(
                &*model,
                target,
                cfg.error_grid_resolution,
                cfg.samples_per_voxel,
                rng.random(),
            )?;
            data = sample_world_dataset(
                target,
                cfg.samples,
                Sampler::Importance(&grid),
                rng.random(),
            )?;
        }
        let loss = run_epoch(model, &mut adam, &data, cfg.batch, cfg.lr, &mut rng, epoch)?;
        trace.push(loss);
        progress(epoch, loss);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenTrainConfig {
    pub views: usize,
    pub resolution: usize,
    /// Stepsize of the differentiable renderer in unit-cube coordinates.
    pub stepsize: f32,
    /// Stepsize of the reference renders in voxels of the target volume.
    pub reference_stepsize_voxels: f32,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ScreenTrainConfig {
    fn default() -> Self {
        Self {
            views: 16,
            resolution: 64,
            stepsize: 0.02,
            reference_stepsize_voxels: 0.1,
            epochs: 20,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl ScreenTrainConfig {
    pub fn full_scale() -> Self {
        Self {
            views: 96,
            resolution: 256,
            epochs: 200,
            ..Self::default()
        }
    }
}

/// Trains a color model on images rendered from `volume` through `tf`.
/// The loss is L1 on premultiplied rgb plus opacity.
pub fn train_screen(
    model: &mut FvsrnModel,
    volume: &ScalarVolume,
    tf: &TransferFunction,
    cfg: &ScreenTrainConfig,
    progress: Progress<'_>,
) -> Result<Vec<f32>> {
    check_head(model, Head::Color)?;
    if cfg.views == 0
        || cfg.resolution == 0
        || !(cfg.stepsize > 0.0)
        || !(cfg.reference_stepsize_voxels > 0.0)
    {
        return Err(Error::InvalidConfig(
            "screen training needs views, resolution and stepsizes > 0".into(),
        ));
    }
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if model.is_temporal() {
        return Err(Error::InvalidConfig(
            "screen training expects a static model".into(),
        ));
    }
    let cameras = orbit_cameras(cfg.views, cfg.resolution, cfg.resolution);
    let reference_settings = RenderSettings::default()
        .with_voxel_stepsize(cfg.reference_stepsize_voxels, volume.max_dim());
    let settings = RenderSettings {
        stepsize: cfg.stepsize,
        ..RenderSettings::default()
    };
    let gt = Source::Volume { volume, tf };
    let references: Vec<Vec<[f32; 4]>> = cameras
        .iter()
        .map(|c| Ok(raymarch_forward(&gt, &c.rays()?, &reference_settings, false)?.rgba))
        .collect::<Result<_>>()?;
    let rays: Vec<_> = cameras.iter().map(Camera::rays).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = adam_for(model);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..cfg.views).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &v in &order {
            let mut grads = model.zero_grads();
            let src = ModelSource::new(model);
            let out = raymarch_forward(&Source::Model(src), &rays[v], &settings, true)?;
            let pred: Vec<f32> = out.rgba.iter().flatten().copied().collect();
            let reference: Vec<f32> = references[v].iter().flatten().copied().collect();
            let loss = l1(&pred, &reference);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite loss".into(),
                });
            }
            total += loss;
            let adj = l1_adjoint(&pred, &reference);
            let adj: Vec<[f32; 4]> = adj
                .chunks_exact(4)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect();
            raymarch_backward(
                &src,
                &rays[v],
                &settings,
                out.states.as_deref().unwrap_or(&[]),
                &adj,
                &mut grads,
            )?;
            adam.step(&mut model.param_slices_mut(), &grads.slices(), cfg.lr)?;
        }
        let loss = (total / cfg.views as f64) as f32;
        trace.push(loss);
        progress(epoch, loss);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalTrainConfig {
    /// Timesteps whose volumes are used for training.
    pub train_times: Vec<u32>,
    pub world: WorldTrainConfig,
}

impl Default for TemporalTrainConfig {
    fn default() -> Self {
        Self {
            train_times: (0..=20).step_by(5).collect(),
            world: WorldTrainConfig::default(),
        }
    }
}

/// Trains a temporal density model on `(p, t, value)` triples with `t`
/// drawn uniformly from the training timesteps.
pub fn train_temporal(
    model: &mut FvsrnModel,
    volumes: &mut dyn FnMut(u32) -> Result<ScalarVolume>,
    cfg: &TemporalTrainConfig,
    progress: Progress<'_>,
) -> Result<Vec<f32>> {
    cfg.world.validate()?;
    check_head(model, Head::Density)?;
    let [lo, hi] = model
        .temporal_span()
        .ok_or_else(|| Error::InvalidConfig("train_temporal needs a temporal model".into()))?;
    if cfg.train_times.is_empty() {
        return Err(Error::InvalidConfig(
            "training timesteps must not be empty".into(),
        ));
    }
    if let Some(t) = cfg.train_times.iter().find(|&&t| t < lo || t > hi) {
        return Err(Error::InvalidConfig(alloc::format!(
            "training timestep {t} outside [{lo}, {hi}]"
        )));
    }
    let frames: Vec<ScalarVolume> = cfg
        .train_times
        .iter()
        .map(|&t| volumes(t))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.world.seed);
    let n = cfg.world.samples;
    let mut positions = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let f = rng.random_range(0..frames.len());
        let p = uniform_position(&mut rng);
        positions.push(p);
        times.push(cfg.train_times[f] as f32);
        values.push(frames[f].sample(p));
    }
    let data = Dataset {
        positions,
        times: Some(times),
        values,
        channels: 1,
    };
    let mut adam = adam_for(model);
    let mut trace = Vec::with_capacity(cfg.world.epochs);
    for epoch in 0..cfg.world.epochs {
        let loss = run_epoch(
            model,
            &mut adam,
            &data,
            cfg.world.batch,
            cfg.world.lr,
            &mut rng,
            epoch,
        )?;
        trace.push(loss);
        progress(epoch, loss);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub views: Vec<ViewScore>,
    pub mean: ViewScore,
}

/// Renders `candidate` and `reference` from `n_views` orbit cameras and
/// compares the images.
pub fn evaluate_views(
    candidate: &Source<'_>,
    reference: &Source<'_>,
    n_views: usize,
    resolution: usize,
    settings: &RenderSettings,
) -> Result<ViewMetrics> {
    if n_views == 0 {
        return Err(Error::InvalidConfig("need at least one view".into()));
    }
    let mut views = Vec::with_capacity(n_views);
    for cam in orbit_cameras(n_views, resolution, resolution) {
        let a: Image = render_image(candidate, &cam, settings)?;
        let b: Image = render_image(reference, &cam, settings)?;
        views.push(ViewScore {
            psnr: metrics::psnr_images(&a, &b)?,
            ssim: metrics::ssim(&a, &b)?,
        });
    }
    let n = views.len() as f64;
    let mean = ViewScore {
        psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
    };
    Ok(ViewMetrics { views, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GridConfig, ModelConfig};
    use alloc::vec;

    fn tiny(head: Head) -> FvsrnModel {
        FvsrnModel::new(ModelConfig {
            head,
            layers: 2,
            channels: 16,
            grid: Some(GridConfig {
                resolution: 4,
                channels: 4,
            }),
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn datasets_are_seeded() {
        let vol = ScalarVolume::from_fn([8, 8, 8], |p| p[0]).unwrap();
        let t = WorldTarget::Density(&vol);
        let a = sample_world_dataset(&t, 100, Sampler::Uniform, 3).unwrap();
        assert_eq!(
            a,
            sample_world_dataset(&t, 100, Sampler::Uniform, 3).unwrap()
        );
        assert_ne!(
            a,
            sample_world_dataset(&t, 100, Sampler::Uniform, 4).unwrap()
        );
    }

    #[test]
    fn concentrated_importance() {
        let vol = ScalarVolume::constant([4, 4, 4], 0.5).unwrap();
        let mut e = vec![0.0; 64];
        e[4 * 4 * 2 + 4 + 3] = 1.0;
        let grid = ErrorGrid::new(4, e).unwrap();
        let d = sample_world_dataset(
            &WorldTarget::Density(&vol),
            500,
            Sampler::Importance(&grid),
            1,
        )
        .unwrap();
        assert_eq!(d.len(), 500);
        for p in &d.positions {
            assert!(p[0] >= 0.75 && p[1] >= 0.25 && p[1] <= 0.5 && p[2] >= 0.5 && p[2] <= 0.75);
        }
        let zero = ErrorGrid::new(4, vec![0.0; 64]).unwrap();
        let u = sample_world_dataset(
            &WorldTarget::Density(&vol),
            50,
            Sampler::Importance(&zero),
            1,
        )
        .unwrap();
        assert_eq!(
            u,
            sample_world_dataset(&WorldTarget::Density(&vol), 50, Sampler::Uniform, 1).unwrap()
        );
    }

    #[test]
    fn error_grid_of_offset_predictor() {
        let vol = ScalarVolume::from_fn([8, 8, 8], |p| 0.5 * p[1]).unwrap();
        let t = WorldTarget::Density(&vol);
        let exact = |p: &[Vec3]| Ok(p.iter().map(|&q| vol.sample(q)).collect());
        let g = build_error_grid(&exact, &t, 4, 8, 0).unwrap();
        assert_eq!(g.values().len(), 64);
        assert!(g.values().iter().all(|&v| v == 0.0));
        let offset = |p: &[Vec3]| Ok(p.iter().map(|&q| vol.sample(q) + 0.1).collect());
        let g = build_error_grid(&offset, &t, 4, 8, 0).unwrap();
        assert!(g.values().iter().all(|&v| (v - 0.1).abs() < 1e-5));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let vol = ScalarVolume::from_fn([8, 8, 8], |p| p[0] * p[2]).unwrap();
        let mut m = tiny(Head::Density);
        let before = m.clone();
        let cfg = WorldTrainConfig {
            samples: 512,
            batch: 128,
            epochs: 3,
            lr: 0.0,
            ..WorldTrainConfig::default()
        };
        let trace = train_world(&mut m, &WorldTarget::Density(&vol), &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(m, before);
        assert!(trace.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-6));
    }

    #[test]
    fn training_is_deterministic() {
        let vol = ScalarVolume::from_fn([8, 8, 8], |p| p[0] * p[2]).unwrap();
        let cfg = WorldTrainConfig {
            samples: 1024,
            batch: 256,
            epochs: 4,
            adaptive: true,
            resample_interval: 2,
            error_grid_resolution: 4,
            ..WorldTrainConfig::default()
        };
        let run = || {
            let mut m = tiny(Head::Density);
            let t = train_world(&mut m, &WorldTarget::Density(&vol), &cfg, &mut |_, _| {}).unwrap();
            (m, t)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_head_is_rejected() {
        let vol = ScalarVolume::constant([4, 4, 4], 0.5).unwrap();
        let mut m = tiny(Head::Color);
        let err = train_world(
            &mut m,
            &WorldTarget::Density(&vol),
            &WorldTrainConfig::default(),
            &mut |_, _| {},
        );
        assert!(matches!(err, Err(Error::WrongHead { .. })));
    }

    #[test]
    fn zero_epoch_screen_training_is_identity() {
        let vol = ScalarVolume::constant([4, 4, 4], 0.5).unwrap();
        let mut m = tiny(Head::Color);
        let before = m.clone();
        let cfg = ScreenTrainConfig {
            epochs: 0,
            ..ScreenTrainConfig::default()
        };
        let trace = train_screen(
            &mut m,
            &vol,
            &TransferFunction::ramp(2.0),
            &cfg,
            &mut |_, _| {},
        )
        .unwrap();
        assert!(trace.is_empty());
        assert_eq!(m, before);
    }
}
