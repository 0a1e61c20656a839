//! Finite-difference and stored-intermediate oracles shared by the
//! integration tests and the acceptance run.
#![allow(dead_code)]

use fvsrn_core::camera::Ray;
use fvsrn_core::mlp::{Mlp, Scalar};
use fvsrn_core::model::{FvsrnModel, GradientBuffer, Head, Samples};
use fvsrn_core::render::{
    composite_step, raymarch_backward, raymarch_forward, step_alpha, ModelSource, RaySchedule,
    RayState, RenderSettings, Source,
};
use fvsrn_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tally of analytic-vs-numeric comparisons.
#[derive(Debug, Clone, Copy, Default)]
pub struct Agreement {
    pub probes: usize,
    pub passed: usize,
    pub worst: f64,
}

impl Agreement {
    pub fn record(&mut self, analytic: f64, numeric: f64, tol: f64, floor: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.probes += 1;
        if err < tol {
            self.passed += 1;
        }
        self.worst = self.worst.max(err);
    }

    pub fn merge(&mut self, other: Agreement) {
        self.probes += other.probes;
        self.passed += other.passed;
        self.worst = self.worst.max(other.worst);
    }

    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.probes.max(1) as f64
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_positions(n: usize, seed: u64) -> Vec<Vec3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| [r.random(), r.random(), r.random()])
        .collect()
}

pub fn random_unit(n: usize, seed: u64) -> Vec<Vec3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let v: [f32; 3] = [
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            ];
            let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
            [v[0] / l, v[1] / l, v[2] / l]
        })
        .collect()
}

pub fn random_weights(n: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Checks every weight and bias of `mlp` for the loss `Σ w ⊙ mlp(x)`.
pub fn check_mlp<T: Scalar>(
    mlp: &Mlp<T>,
    x: &[T],
    batch: usize,
    w: &[T],
    h: f64,
    tol: f64,
) -> Agreement {
    let loss = |m: &Mlp<T>| -> f64 {
        let y = m.infer(x, batch).unwrap();
        y.iter()
            .zip(w)
            .map(|(a, b)| a.to_f64().unwrap() * b.to_f64().unwrap())
            .sum()
    };
    let (_, cache) = mlp.forward(x, batch).unwrap();
    let (_, grads) = mlp.backward(&cache, w).unwrap();
    let analytic: Vec<f64> = grads
        .slices()
        .iter()
        .flat_map(|s| s.iter().map(|v| v.to_f64().unwrap()))
        .collect();
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut work = mlp.clone();
    let mut agreement = Agreement::default();
    let mut flat = 0;
    let counts: Vec<usize> = mlp
        .clone()
        .param_slices_mut()
        .iter()
        .map(|s| s.len())
        .collect();
    for (s, &len) in counts.iter().enumerate() {
        for i in 0..len {
            let orig = work.param_slices_mut()[s][i];
            let hh = T::from(h).unwrap();
            work.param_slices_mut()[s][i] = orig + hh;
            let up = loss(&work);
            work.param_slices_mut()[s][i] = orig - hh;
            let down = loss(&work);
            work.param_slices_mut()[s][i] = orig;
            let numeric = (up - down) / (2.0 * hh.to_f64().unwrap());
            agreement.record(analytic[flat], numeric, tol, 1e-3 * scale);
            flat += 1;
        }
    }
    agreement
}

/// `(slice, index)` pairs addressing the parameters of `model` in the order
/// of [`FvsrnModel::param_slices_mut`].
pub fn all_params(model: &mut FvsrnModel) -> Vec<(usize, usize)> {
    model
        .param_slices_mut()
        .iter()
        .enumerate()
        .flat_map(|(s, v)| (0..v.len()).map(move |i| (s, i)))
        .collect()
}

/// Up to `n` random parameters, always including some from every slice.
pub fn sampled_params(model: &mut FvsrnModel, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let lens: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let per = (n / lens.len()).max(1);
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (s, &len) in lens.iter().enumerate() {
        if len <= per {
            out.extend((0..len).map(|i| (s, i)));
        } else {
            out.extend((0..per).map(|_| (s, r.random_range(0..len))));
        }
    }
    out
}

/// Central differences of `loss` at the probed parameters against the
/// matching entries of `analytic`.
pub fn check_params(
    model: &mut FvsrnModel,
    analytic: &GradientBuffer,
    probes: &[(usize, usize)],
    h: f32,
    tol: f64,
    loss: impl Fn(&FvsrnModel) -> f64,
) -> Agreement {
    let slices = analytic.slices();
    let scale = slices
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let mut agreement = Agreement::default();
    for &(s, i) in probes {
        let orig = model.param_slices_mut()[s][i];
        model.param_slices_mut()[s][i] = orig + h;
        let up = loss(model);
        model.param_slices_mut()[s][i] = orig - h;
        let down = loss(model);
        model.param_slices_mut()[s][i] = orig;
        let numeric = (up - down) / (2.0 * h as f64);
        agreement.record(slices[s][i] as f64, numeric, tol, 1e-3 * scale);
    }
    agreement
}

/// Inputs for a model query: positions plus whatever the model requires.
pub struct Query {
    pub positions: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    pub times: Option<Vec<f32>>,
}

impl Query {
    pub fn new(model: &FvsrnModel, n: usize, seed: u64) -> Self {
        let times = model.temporal_span().map(|[a, b]| {
            let mut r = rng(seed + 2);
            (0..n)
                .map(|_| r.random_range(a as f32..=b as f32))
                .collect()
        });
        Self {
            positions: random_positions(n, seed),
            directions: random_unit(n, seed + 1),
            times,
        }
    }

    pub fn samples(&self) -> Samples<'_> {
        let s = Samples::positions(&self.positions).with_directions(&self.directions);
        match &self.times {
            Some(t) => s.with_times(t),
            None => s,
        }
    }
}

/// Head-output loss `Σ w ⊙ model(query)` and its analytic gradient.
pub fn head_loss_and_grads(model: &FvsrnModel, q: &Query, w: &[f32]) -> (f64, GradientBuffer) {
    let (y, cache) = model.forward_train(&q.samples()).unwrap();
    let mut grads = model.zero_grads();
    model.backward(&cache, w, &mut grads).unwrap();
    (dot(&y, w), grads)
}

pub fn head_loss(model: &FvsrnModel, q: &Query, w: &[f32]) -> f64 {
    dot(&model.infer(&q.samples()).unwrap(), w)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Rays from random points outside the unit cube towards random interior
/// targets.
pub fn random_rays(n: usize, seed: u64) -> Vec<Ray> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let target: Vec3 = [
                r.random_range(0.3..0.7),
                r.random_range(0.3..0.7),
                r.random_range(0.3..0.7),
            ];
            let d = random_unit(1, r.random())[0];
            let origin = [
                target[0] - 2.0 * d[0],
                target[1] - 2.0 * d[1],
                target[2] - 2.0 * d[2],
            ];
            Ray {
                origin,
                direction: d,
            }
        })
        .collect()
}

/// `Σ w ⊙ rgba` evaluated from the f64 ray states (zero background).
pub fn render_loss(
    source: &ModelSource<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    w: &[[f32; 4]],
) -> f64 {
    let out = raymarch_forward(&Source::Model(*source), rays, settings, true).unwrap();
    state_loss(out.states.as_ref().unwrap(), w)
}

pub fn state_loss(states: &[RayState], w: &[[f32; 4]]) -> f64 {
    states
        .iter()
        .zip(w)
        .map(|(s, w)| {
            s.c[0] * w[0] as f64
                + s.c[1] * w[1] as f64
                + s.c[2] * w[2] as f64
                + s.opacity() * w[3] as f64
        })
        .sum()
}

/// Gradient through the constant-memory backward pass.
pub fn render_grads(
    source: &ModelSource<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    w: &[[f32; 4]],
) -> GradientBuffer {
    let out = raymarch_forward(&Source::Model(*source), rays, settings, true).unwrap();
    let mut grads = source.model.zero_grads();
    raymarch_backward(
        source,
        rays,
        settings,
        out.states.as_ref().unwrap(),
        w,
        &mut grads,
    )
    .unwrap();
    grads
}

/// Reference backward pass that stores every intermediate: all sample
/// outputs and every ray state are kept from a plain forward march, then the
/// compositing recurrence is differentiated step by step from the stored
/// states (no inversion) and the per-sample adjoints are pushed through one
/// batched network backward pass.
pub fn stored_backward(
    source: &ModelSource<'_>,
    rays: &[Ray],
    settings: &RenderSettings,
    w: &[[f32; 4]],
) -> GradientBuffer {
    let model = source.model;
    let mut positions = Vec::new();
    let mut directions = Vec::new();
    let mut owners = Vec::new();
    let scheds: Vec<RaySchedule> = rays.iter().map(|r| RaySchedule::new(r, settings)).collect();
    for (r, (ray, s)) in rays.iter().zip(&scheds).enumerate() {
        let l = ray.direction.iter().map(|v| v * v).sum::<f32>().sqrt();
        let d = [
            ray.direction[0] / l,
            ray.direction[1] / l,
            ray.direction[2] / l,
        ];
        for k in 0..s.steps {
            positions.push(s.position(ray, k));
            directions.push(d);
            owners.push(r);
        }
    }
    let times = source.time.map(|t| vec![t; positions.len()]);
    let mut samples = Samples::positions(&positions).with_directions(&directions);
    if let Some(t) = &times {
        samples = samples.with_times(t);
    }
    let (y, cache) = model.forward_train(&samples).unwrap();
    let emit = |j: usize| -> (Vec3, f32, Vec3, f32) {
        match (model.head(), source.tf) {
            (Head::Density, Some(tf)) => {
                let (rgb, sigma) = tf.eval(y[j]);
                let (drgb, dsigma) = tf.derivative(y[j]);
                (rgb, sigma, drgb, dsigma)
            }
            _ => (
                [y[4 * j], y[4 * j + 1], y[4 * j + 2]],
                y[4 * j + 3],
                [0.0; 3],
                0.0,
            ),
        }
    };
    let width = model.output_width();
    let mut out_bar = vec![0.0f32; positions.len() * width];
    let mut start = 0;
    for (r, s) in scheds.iter().enumerate() {
        let idx: Vec<usize> = (start..start + s.steps).collect();
        start += s.steps;
        debug_assert!(idx.iter().all(|&j| owners[j] == r));
        // forward with every state stored
        let mut states = vec![RayState::default()];
        for &j in &idx {
            let (rgb, sigma, _, _) = emit(j);
            let next = composite_step(*states.last().unwrap(), rgb, sigma, s.ds);
            states.push(next);
        }
        // reverse sweep over the stored states
        let g = w[r];
        let c_bar = [g[0] as f64, g[1] as f64, g[2] as f64];
        let mut t_bar = -(g[3] as f64);
        for (n, &j) in idx.iter().enumerate().rev() {
            let (rgb, sigma, drgb, dsigma) = emit(j);
            let pre = states[n];
            let (alpha, clamped) = step_alpha(sigma, s.ds);
            let mut rgb_bar = [0.0f64; 3];
            let mut c_dot = 0.0;
            for ch in 0..3 {
                rgb_bar[ch] = c_bar[ch] * pre.t * alpha;
                c_dot += c_bar[ch] * rgb[ch] as f64;
            }
            let alpha_bar = (c_dot - t_bar) * pre.t;
            let sigma_bar = if clamped {
                0.0
            } else {
                alpha_bar * s.ds as f64 * (1.0 - alpha)
            };
            t_bar = alpha * c_dot + t_bar * (1.0 - alpha);
            if width == 1 {
                out_bar[j] = (rgb_bar[0] * drgb[0] as f64
                    + rgb_bar[1] * drgb[1] as f64
                    + rgb_bar[2] * drgb[2] as f64
                    + sigma_bar * dsigma as f64) as f32;
            } else {
                out_bar[4 * j..4 * j + 4].copy_from_slice(&[
                    rgb_bar[0] as f32,
                    rgb_bar[1] as f32,
                    rgb_bar[2] as f32,
                    sigma_bar as f32,
                ]);
            }
        }
    }
    let mut grads = model.zero_grads();
    model.backward(&cache, &out_bar, &mut grads).unwrap();
    grads
}

/// Largest entry-wise difference between two gradient buffers, relative to
/// the largest entry of `reference`.
pub fn max_relative_difference(a: &GradientBuffer, reference: &GradientBuffer) -> f64 {
    let (sa, sr) = (a.slices(), reference.slices());
    let scale = sr
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |m, v| m.max(v.abs() as f64));
    sa.iter()
        .zip(&sr)
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() as f64))
        / scale.max(f64::MIN_POSITIVE)
}
