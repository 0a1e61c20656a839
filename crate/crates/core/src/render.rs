//! Emission-absorption raymarching with a constant-memory reverse pass.
//!
//! Rays are processed in packets. Within a packet all rays advance one step
//! at a time so that each step evaluates the field for a whole batch of
//! samples. The reverse pass walks the same steps backwards and recovers each
//! pre-step state by inverting the blending equation, so it only keeps one
//! [`RayState`] and its adjoint per ray.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::fused::FusedEvaluator;
use crate::image::Image;
use crate::model::{FvsrnModel, GradientBuffer, Head, Samples};
use crate::tf::TransferFunction;
use crate::volume::ScalarVolume;
use crate::{math, Error, Result, Vec3};

/// Upper bound on per-step opacity.
pub const EPS_BLEND: f32 = 1e-5;
const PACKET: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Distance between samples in unit-cube coordinates.
    pub stepsize: f32,
    pub max_steps: usize,
    pub background: Vec3,
    /// Stop a ray once its opacity reaches this value. Ignored whenever
    /// terminal states are requested.
    pub termination: Option<f32>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            stepsize: 1.0 / 64.0,
            max_steps: 100_000,
            background: [0.0; 3],
            termination: None,
        }
    }
}

impl RenderSettings {
    /// Stepsize given in voxels of a volume with `resolution` voxels per axis.
    pub fn with_voxel_stepsize(mut self, voxels: f32, resolution: usize) -> Self {
        self.stepsize = voxels / resolution as f32;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(Error::InvalidConfig("stepsize must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if let Some(t) = self.termination {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(
                    "termination threshold must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Front-to-back accumulation state. The opacity is stored as the remaining
/// transmittance `t = 1 - A` in double precision: the update
/// `t' = t·(1 - α)` is then a pure product, so inverting it keeps full
/// relative precision even for nearly opaque rays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayState {
    pub c: [f64; 3],
    pub t: f64,
}

impl Default for RayState {
    fn default() -> Self {
        Self {
            c: [0.0; 3],
            t: 1.0,
        }
    }
}

impl RayState {
    pub fn opacity(&self) -> f64 {
        1.0 - self.t
    }
}

/// Opacity of one step and whether the clamp was active.
#[inline]
pub fn step_alpha(sigma: f32, ds: f32) -> (f64, bool) {
    let raw = -math::exp_m1_f64(-(sigma as f64) * ds as f64);
    let cap = 1.0 - EPS_BLEND as f64;
    if raw >= cap {
        (cap, true)
    } else {
        (raw.max(0.0), false)
    }
}

#[inline]
pub fn composite_step(s: RayState, rgb: Vec3, sigma: f32, ds: f32) -> RayState {
    let (alpha, _) = step_alpha(sigma, ds);
    blend(s, rgb, alpha)
}

#[inline]
fn blend(s: RayState, rgb: Vec3, alpha: f64) -> RayState {
    let w = s.t * alpha;
    RayState {
        c: [
            s.c[0] + w * rgb[0] as f64,
            s.c[1] + w * rgb[1] as f64,
            s.c[2] + w * rgb[2] as f64,
        ],
        t: s.t * (1.0 - alpha),
    }
}

/// Recovers the state before [`composite_step`] from the state after it.
#[inline]
pub fn composite_invert(after: RayState, rgb: Vec3, sigma: f32, ds: f32) -> Result<RayState> {
    let (alpha, _) = step_alpha(sigma, ds);
    invert(after, rgb, alpha)
}

#[inline]
fn invert(after: RayState, rgb: Vec3, alpha: f64) -> Result<RayState> {
    if alpha > 1.0 - EPS_BLEND as f64 {
        return Err(Error::InversionUnstable(alpha as f32));
    }
    let t = after.t / (1.0 - alpha);
    let w = t * alpha;
    Ok(RayState {
        c: [
            after.c[0] - w * rgb[0] as f64,
            after.c[1] - w * rgb[1] as f64,
            after.c[2] - w * rgb[2] as f64,
        ],
        t,
    })
}

/// Uniform sampling of one ray: `steps` midpoints spaced `ds` apart starting
/// at `t0 + ds/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySchedule {
    pub t0: f32,
    pub ds: f32,
    pub steps: usize,
}

impl RaySchedule {
    pub fn new(ray: &Ray, settings: &RenderSettings) -> Self {
        let empty = Self {
            t0: 0.0,
            ds: 0.0,
            steps: 0,
        };
        let len2: f32 = ray.direction.iter().map(|v| v * v).sum();
        if !(len2 > 0.0)
            || ray
                .origin
                .iter()
                .chain(&ray.direction)
                .any(|v| !v.is_finite())
        {
            return empty;
        }
        match ray.unit_box_span() {
            Some((t0, t1)) => {
                let len = (t1 - t0) * math::sqrt(len2);
                let steps =
                    (math::ceil(len / settings.stepsize) as usize).clamp(1, settings.max_steps);
                Self {
                    t0,
                    ds: len / steps as f32,
                    steps,
                }
            }
            None => empty,
        }
    }

    pub fn position(&self, ray: &Ray, k: usize) -> Vec3 {
        let len = math::sqrt(ray.direction.iter().map(|v| v * v).sum());
        let p = ray.at(self.t0 + (k as f32 + 0.5) * self.ds / len);
        [
            p[0].clamp(0.0, 1.0),
            p[1].clamp(0.0, 1.0),
            p[2].clamp(0.0, 1.0),
        ]
    }
}

/// A trained model used as a rendering source.
#[derive(Debug, Clone, Copy)]
pub struct ModelSource<'a> {
    pub model: &'a FvsrnModel,
    /// Required for density heads, rejected for color heads.
    pub tf: Option<&'a TransferFunction>,
    pub time: Option<f32>,
    /// Evaluate with the blocked evaluator instead of layer by layer.
    pub fused: Option<&'a FusedEvaluator>,
}

impl<'a> ModelSource<'a> {
    pub fn new(model: &'a FvsrnModel) -> Self {
        Self {
            model,
            tf: None,
            time: None,
            fused: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.model.head(), self.tf) {
            (Head::Density, None) => {
                return Err(Error::MissingInput("transfer function for a density model"))
            }
            (Head::Color, Some(_)) => {
                return Err(Error::UnexpectedInput(
                    "transfer function for a color model",
                ))
            }
            _ => {}
        }
        match (self.model.temporal_span(), self.time) {
            (Some(_), None) => return Err(Error::MissingInput("timestep")),
            (None, Some(_)) => {
                return Err(Error::UnexpectedInput("timestep for a non-temporal model"))
            }
            (Some([a, b]), Some(t)) if !(t >= a as f32 && t <= b as f32) => {
                return Err(Error::InvalidConfig(alloc::format!(
                    "timestep {t} outside [{a}, {b}]"
                )))
            }
            _ => {}
        }
        if let Some(f) = self.fused {
            if f.input_width() != self.model.input_width()
                || f.output_width() != self.model.output_width()
            {
                return Err(Error::PlanMismatch(
                    "fused evaluator was built for another network".into(),
                ));
            }
        }
        Ok(())
    }

    fn samples<'s>(&self, pos: &'s [Vec3], dir: &'s [Vec3], times: &'s [f32]) -> Samples<'s> {
        Samples {
            positions: pos,
            directions: Some(dir),
            times: self.time.map(|_| times),
        }
    }

    fn emit(&self, pos: &[Vec3], dir: &[Vec3], out: &mut Vec<(Vec3, f32)>) -> Result<()> {
        let times = vec![self.time.unwrap_or(0.0); if self.time.is_some() { pos.len() } else { 0 }];
        let samples = self.samples(pos, dir, &times);
        let y = match self.fused {
            Some(f) => {
                let (x, _) = self.model.assemble_batch(&samples)?;
                let mut y = f.eval(&x, pos.len())?;
                self.model.apply_head(&mut y);
                y
            }
            None => self.model.infer(&samples)?,
        };
        out.clear();
        match self.tf {
            Some(tf) => out.extend(y.iter().map(|&d| tf.eval(d))),
            None => out.extend(y.chunks_exact(4).map(|o| ([o[0], o[1], o[2]], o[3]))),
        }
        Ok(())
    }
}

/// Anything the raymarcher can sample.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Volume {
        volume: &'a ScalarVolume,
        tf: &'a TransferFunction,
    },
    Model(ModelSource<'a>),
}

impl Source<'_> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Source::Volume { .. } => Ok(()),
            Source::Model(m) => m.validate(),
        }
    }

    fn emit(&self, pos: &[Vec3], dir: &[Vec3], out: &mut Vec<(Vec3, f32)>) -> Result<()> {
        match self {
            Source::Volume { volume, tf } => {
                out.clear();
                out.extend(pos.iter().map(|&p| tf.eval(volume.sample(p))));
                Ok(())
            }
            Source::Model(m) => m.emit(pos, dir, out),
        }
    }
}

/// Per-ray results of a forward march.
#[derive(Debug, Clone, PartialEq)]
pub struct MarchOutput {
    /// `rgb` composited over the background, plus opacity.
    pub rgba: Vec<[f32; 4]>,
    pub states: Option<Vec<RayState>>,
}

fn unit(v: Vec3) -> Vec3 {
    let l = math::length(v);
    if l > 0.0 {
        [v[0] / l, v[1] / l, v[2] / l]
    } else {
        v
    }
}

fn march_packet(
    source: &Source<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    terminate: Option<f64>,
) -> Result<Vec<RayState>> {
    let sched: Vec<RaySchedule> = rays.iter().map(|r| RaySchedule::new(r, settings)).collect();
    let dirs: Vec<Vec3> = rays.iter().map(|r| unit(r.direction)).collect();
    let mut states = vec![RayState::default(); rays.len()];
    let mut done = vec![false; rays.len()];
    let max_steps = sched.iter().map(|s| s.steps).max().unwrap_or(0);
    let (mut idx, mut pos, mut dir, mut emitted) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..max_steps {
        idx.clear();
        pos.clear();
        dir.clear();
        for (r, s) in sched.iter().enumerate() {
            if k < s.steps && !done[r] {
                idx.push(r);
                pos.push(s.position(&rays[r], k));
                dir.push(dirs[r]);
            }
        }
        if idx.is_empty() {
            break;
        }
        source.emit(&pos, &dir, &mut emitted)?;
        for (&r, &(rgb, sigma)) in idx.iter().zip(&emitted) {
            if !(sigma.is_finite() && rgb.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite("emitted sample"));
            }
            states[r] = composite_step(states[r], rgb, sigma.max(0.0), sched[r].ds);
            if terminate.is_some_and(|t| states[r].opacity() >= t) {
                done[r] = true;
            }
        }
    }
    Ok(states)
}

fn finish(s: &RayState, bg: Vec3) -> [f32; 4] {
    let t = s.t;
    [
        (s.c[0] + t * bg[0] as f64) as f32,
        (s.c[1] + t * bg[1] as f64) as f32,
        (s.c[2] + t * bg[2] as f64) as f32,
        s.opacity() as f32,
    ]
}

/// Marches every ray through the unit cube. Terminal states are returned
/// when `keep_states` is set, which also disables early termination.
pub fn raymarch_forward(
    source: &Source<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    keep_states: bool,
) -> Result<MarchOutput> {
    settings.validate()?;
    source.validate()?;
    let terminate = if keep_states {
        None
    } else {
        settings.termination.map(|t| t as f64)
    };
    let states = for_each_packet(rays, |chunk| {
        march_packet(source, chunk, settings, terminate)
    })?;
    let rgba = states
        .iter()
        .map(|s| finish(s, settings.background))
        .collect();
    Ok(MarchOutput {
        rgba,
        states: keep_states.then_some(states),
    })
}

#[cfg(not(feature = "parallel"))]
fn for_each_packet<T>(rays: &[Ray], f: impl Fn(&[Ray]) -> Result<Vec<T>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(PACKET) {
        out.extend(f(chunk)?);
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
fn for_each_packet<T: Send>(
    rays: &[Ray],
    f: impl Fn(&[Ray]) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let parts: Vec<Result<Vec<T>>> = rays.par_chunks(PACKET).map(&f).collect();
    let mut out = Vec::with_capacity(rays.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Renders a full image for `camera`.
pub fn render_image(
    source: &Source<'_>,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<Image> {
    let rays = camera.rays()?;
    let out = raymarch_forward(source, &rays, settings, false)?;
    let data = out.rgba.into_iter().flatten().collect();
    Image::from_data(camera.width, camera.height, data)
}

/// Per-sample adjoint of one compositing step.
struct StepAdjoint {
    rgb: Vec3,
    sigma: f32,
}

/// Reverse-mode update across one step. `s_bar` holds the adjoint of the
/// post-step state and is overwritten with the adjoint of the pre-step state.
#[inline]
fn step_backward(
    pre: &RayState,
    s_bar: &mut RayState,
    rgb: Vec3,
    sigma: f32,
    ds: f32,
) -> StepAdjoint {
    let (alpha, clamped) = step_alpha(sigma, ds);
    let t = pre.t;
    let mut c_dot = 0.0;
    let mut rgb_bar = [0.0f32; 3];
    for ch in 0..3 {
        rgb_bar[ch] = (s_bar.c[ch] * t * alpha) as f32;
        c_dot += s_bar.c[ch] * rgb[ch] as f64;
    }
    let alpha_bar = (c_dot - s_bar.t) * t;
    let sigma_bar = if clamped {
        0.0
    } else {
        (alpha_bar * ds as f64 * (1.0 - alpha)) as f32
    };
    s_bar.t = alpha * c_dot + s_bar.t * (1.0 - alpha);
    StepAdjoint {
        rgb: rgb_bar,
        sigma: sigma_bar,
    }
}

fn backward_packet(
    source: &ModelSource<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    terminal: &[RayState],
    rgba_bar: &[[f32; 4]],
    grads: &mut GradientBuffer,
) -> Result<()> {
    let model = source.model;
    let sched: Vec<RaySchedule> = rays.iter().map(|r| RaySchedule::new(r, settings)).collect();
    let dirs: Vec<Vec3> = rays.iter().map(|r| unit(r.direction)).collect();
    let bg = settings.background;
    let mut states = terminal.to_vec();
    let mut adj: Vec<RayState> = rgba_bar
        .iter()
        .map(|g| RayState {
            c: [g[0] as f64, g[1] as f64, g[2] as f64],
            t: (bg[0] * g[0] + bg[1] * g[1] + bg[2] * g[2]) as f64 - g[3] as f64,
        })
        .collect();
    let max_steps = sched.iter().map(|s| s.steps).max().unwrap_or(0);
    let times =
        vec![source.time.unwrap_or(0.0); if source.time.is_some() { rays.len() } else { 0 }];
    let (mut idx, mut pos, mut dir, mut out_bar) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in (0..max_steps).rev() {
        idx.clear();
        pos.clear();
        dir.clear();
        for (r, s) in sched.iter().enumerate() {
            if k < s.steps {
                idx.push(r);
                pos.push(s.position(&rays[r], k));
                dir.push(dirs[r]);
            }
        }
        let samples = source.samples(
            &pos,
            &dir,
            &times[..if times.is_empty() { 0 } else { idx.len() }],
        );
        let (y, cache) = model.forward_train(&samples)?;
        out_bar.clear();
        for (j, &r) in idx.iter().enumerate() {
            let (rgb, sigma, d_rgb, d_sigma) = match source.tf {
                Some(tf) => {
                    let (rgb, sigma) = tf.eval(y[j]);
                    let (drgb, dsigma) = tf.derivative(y[j]);
                    (rgb, sigma, drgb, dsigma)
                }
                None => {
                    let o = &y[j * 4..j * 4 + 4];
                    ([o[0], o[1], o[2]], o[3], [0.0; 3], 0.0)
                }
            };
            let ds = sched[r].ds;
            let pre = invert(states[r], rgb, step_alpha(sigma, ds).0)?;
            let a = step_backward(&pre, &mut adj[r], rgb, sigma, ds);
            states[r] = pre;
            match source.tf {
                Some(_) => out_bar.push(
                    a.rgb[0] * d_rgb[0]
                        + a.rgb[1] * d_rgb[1]
                        + a.rgb[2] * d_rgb[2]
                        + a.sigma * d_sigma,
                ),
                None => out_bar.extend_from_slice(&[a.rgb[0], a.rgb[1], a.rgb[2], a.sigma]),
            }
        }
        if out_bar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raymarch adjoint"));
        }
        model.backward(&cache, &out_bar, grads)?;
    }
    Ok(())
}

/// Accumulates into `grads` the parameter gradient of `Σ rgba_bar ⊙ rgba`
/// for the rays of a previous [`raymarch_forward`] call with
/// `keep_states = true`. Pre-step states are recovered by inverting the
/// blending equation, so memory does not grow with the number of steps.
pub fn raymarch_backward(
    source: &ModelSource<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    terminal: &[RayState],
    rgba_bar: &[[f32; 4]],
    grads: &mut GradientBuffer,
) -> Result<()> {
    settings.validate()?;
    source.validate()?;
    for (what, n) in [
        ("terminal states", terminal.len()),
        ("image adjoint", rgba_bar.len()),
    ] {
        if n != rays.len() {
            return Err(Error::ShapeMismatch {
                context: what,
                expected: rays.len(),
                found: n,
            });
        }
    }
    if rgba_bar.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image adjoint"));
    }
    backward_packets(source, rays, settings, terminal, rgba_bar, grads)
}

#[cfg(not(feature = "parallel"))]
fn backward_packets(
    source: &ModelSource<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    terminal: &[RayState],
    rgba_bar: &[[f32; 4]],
    grads: &mut GradientBuffer,
) -> Result<()> {
    for ((r, t), g) in rays
        .chunks(PACKET)
        .zip(terminal.chunks(PACKET))
        .zip(rgba_bar.chunks(PACKET))
    {
        backward_packet(source, r, settings, t, g, grads)?;
    }
    Ok(())
}

/// Each packet accumulates into its own buffer; buffers are merged in packet
/// order so the result does not depend on scheduling.
#[cfg(feature = "parallel")]
fn backward_packets(
    source: &ModelSource<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    terminal: &[RayState],
    rgba_bar: &[[f32; 4]],
    grads: &mut GradientBuffer,
) -> Result<()> {
    use rayon::prelude::*;
    if rays.len() <= PACKET {
        return backward_packet(source, rays, settings, terminal, rgba_bar, grads);
    }
    let parts: Vec<Result<GradientBuffer>> = rays
        .par_chunks(PACKET)
        .zip(terminal.par_chunks(PACKET))
        .zip(rgba_bar.par_chunks(PACKET))
        .map(|((r, t), g)| {
            let mut local = source.model.zero_grads();
            backward_packet(source, r, settings, t, g, &mut local)?;
            Ok(local)
        })
        .collect();
    for p in parts {
        grads.add_assign(&p?);
    }
    Ok(())
}
