//! Deterministic synthetic scalar fields used as compression targets.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::volume::ScalarVolume;
use crate::{math, Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Sphere,
    Gaussians,
    MarschnerLobb,
    MovingBlobs,
}

impl core::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "gaussians" => Ok(Self::Gaussians),
            "marschner_lobb" | "marschner-lobb" => Ok(Self::MarschnerLobb),
            "moving_blobs" | "moving-blobs" => Ok(Self::MovingBlobs),
            other => Err(Error::Unknown {
                what: "synthetic field kind",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    /// Sphere center and radius, both in unit-cube coordinates.
    pub center: Vec3,
    pub radius: f32,
    /// Half width of the smooth sphere boundary.
    pub falloff: f32,
    /// Number of Gaussians or blobs.
    pub components: usize,
    /// Range of Gaussian standard deviations.
    pub min_width: f32,
    pub max_width: f32,
    /// Blob standard deviation.
    pub blob_width: f32,
    /// Blob speed in unit-cube lengths per timestep.
    pub speed: f32,
    pub ml_frequency: f32,
    pub ml_alpha: f32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            center: [0.5; 3],
            radius: 0.25,
            falloff: 0.05,
            components: 16,
            min_width: 0.03,
            max_width: 0.1,
            blob_width: 0.06,
            speed: 0.02,
            ml_frequency: 6.0,
            ml_alpha: 0.25,
        }
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn dist2(a: Vec3, b: Vec3) -> f32 {
    let d = math::sub(a, b);
    math::dot(d, d)
}

/// Gaussian components: center, standard deviation, amplitude.
fn gaussian_components(params: &SynthParams) -> Vec<(Vec3, f32, f32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..params.components)
        .map(|_| {
            let c = [
                rng.random_range(0.15..0.85),
                rng.random_range(0.15..0.85),
                rng.random_range(0.15..0.85),
            ];
            let w = if params.max_width > params.min_width {
                rng.random_range(params.min_width..params.max_width)
            } else {
                params.min_width
            };
            let a = rng.random_range(0.5..1.0);
            (c, w, a)
        })
        .collect()
}

/// Blobs bouncing inside `[MARGIN, 1 - MARGIN]³` at constant speed.
#[derive(Debug, Clone)]
pub struct MovingBlobs {
    starts: Vec<Vec3>,
    velocities: Vec<Vec3>,
    width: f32,
}

impl MovingBlobs {
    const MARGIN: f32 = 0.15;

    pub fn new(params: &SynthParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut starts = Vec::new();
        let mut velocities = Vec::new();
        for _ in 0..params.components {
            starts.push([
                rng.random_range(0.25..0.75),
                rng.random_range(0.25..0.75),
                rng.random_range(0.25..0.75),
            ]);
            let dir: Vec3 = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let d = math::normalize(dir);
            velocities.push([
                d[0] * params.speed,
                d[1] * params.speed,
                d[2] * params.speed,
            ]);
        }
        Self {
            starts,
            velocities,
            width: params.blob_width,
        }
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    /// Blob centers at time `t`, reflected off the domain margins.
    pub fn centers(&self, t: f32) -> Vec<Vec3> {
        let lo = Self::MARGIN;
        let span = 1.0 - 2.0 * lo;
        self.starts
            .iter()
            .zip(&self.velocities)
            .map(|(s, v)| {
                let mut c = [0.0; 3];
                for a in 0..3 {
                    // triangle wave keeps the coordinate inside [lo, lo + span]
                    let u = (s[a] + v[a] * t - lo) / span;
                    let m = u - 2.0 * math::floor(u * 0.5);
                    let folded = if m > 1.0 { 2.0 - m } else { m };
                    c[a] = lo + folded * span;
                }
                c
            })
            .collect()
    }

    pub fn value(&self, centers: &[Vec3], p: Vec3) -> f32 {
        let inv = 1.0 / (2.0 * self.width * self.width);
        centers
            .iter()
            .map(|c| math::exp(-dist2(p, *c) * inv))
            .sum::<f32>()
            .min(1.0)
    }
}

/// Samples a synthetic field on a `resolution³` grid. `t` only affects
/// `MovingBlobs`.
pub fn synth_field(
    kind: SynthKind,
    resolution: usize,
    params: &SynthParams,
    t: Option<f32>,
) -> Result<ScalarVolume> {
    if resolution < 2 {
        return Err(Error::InvalidConfig(alloc::format!(
            "synthetic resolution must be at least 2, got {resolution}"
        )));
    }
    let dims = [resolution; 3];
    match kind {
        SynthKind::Sphere => {
            let (c, r, w) = (params.center, params.radius, params.falloff.max(1e-6));
            ScalarVolume::from_fn(dims, |p| {
                let d = math::sqrt(dist2(p, c));
                1.0 - smoothstep(r - w, r + w, d)
            })
        }
        SynthKind::Gaussians => {
            let comps = gaussian_components(params);
            ScalarVolume::from_fn(dims, |p| {
                comps
                    .iter()
                    .map(|&(c, w, a)| a * math::exp(-dist2(p, c) / (2.0 * w * w)))
                    .sum::<f32>()
                    .min(1.0)
            })
        }
        SynthKind::MarschnerLobb => {
            let (fm, alpha) = (params.ml_frequency, params.ml_alpha);
            let pi = core::f32::consts::PI;
            ScalarVolume::from_fn(dims, |p| {
                let (x, y, z) = (2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0, 2.0 * p[2] - 1.0);
                let r = math::sqrt(x * x + y * y);
                let rho_r = math::cos(2.0 * pi * fm * math::cos(0.5 * pi * r));
                (1.0 - math::sin(0.5 * pi * z) + alpha * (1.0 + rho_r)) / (2.0 * (1.0 + alpha))
            })
        }
        SynthKind::MovingBlobs => {
            let blobs = MovingBlobs::new(params);
            let centers = blobs.centers(t.unwrap_or(0.0));
            ScalarVolume::from_fn(dims, |p| blobs.value(&centers, p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_center_is_full() {
        let p = SynthParams::default();
        let vol = synth_field(SynthKind::Sphere, 33, &p, None).unwrap();
        assert_eq!(vol.sample([0.5, 0.5, 0.5]), 1.0);
        assert_eq!(vol.get(0, 0, 0), 0.0);
    }

    #[test]
    fn zero_gaussians_give_zero_volume() {
        let p = SynthParams {
            components: 0,
            ..Default::default()
        };
        let vol = synth_field(SynthKind::Gaussians, 8, &p, None).unwrap();
        assert!(vol.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SynthParams {
            seed: 9,
            ..Default::default()
        };
        for kind in [
            SynthKind::Gaussians,
            SynthKind::MovingBlobs,
            SynthKind::MarschnerLobb,
        ] {
            let a = synth_field(kind, 12, &p, Some(3.0)).unwrap();
            let b = synth_field(kind, 12, &p, Some(3.0)).unwrap();
            assert_eq!(a, b);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    fn centroid(vol: &ScalarVolume) -> Vec3 {
        let d = vol.dims();
        let mut acc = [0.0f64; 3];
        let mut mass = 0.0f64;
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let v = vol.get(i, j, k) as f64;
                    let p = vol.voxel_center(i, j, k);
                    for a in 0..3 {
                        acc[a] += v * p[a] as f64;
                    }
                    mass += v;
                }
            }
        }
        [
            (acc[0] / mass) as f32,
            (acc[1] / mass) as f32,
            (acc[2] / mass) as f32,
        ]
    }

    #[test]
    fn moving_blob_centroid_tracks_velocity() {
        let p = SynthParams {
            components: 1,
            seed: 4,
            speed: 0.03,
            blob_width: 0.05,
            ..Default::default()
        };
        let res = 48;
        let (t, dt) = (1.0, 2.0);
        let a = synth_field(SynthKind::MovingBlobs, res, &p, Some(t)).unwrap();
        let b = synth_field(SynthKind::MovingBlobs, res, &p, Some(t + dt)).unwrap();
        let v = MovingBlobs::new(&p).velocities()[0];
        let (ca, cb) = (centroid(&a), centroid(&b));
        for ax in 0..3 {
            let moved = cb[ax] - ca[ax];
            assert!(
                (moved - v[ax] * dt).abs() < 1.0 / res as f32,
                "axis {ax}: {moved} vs {}",
                v[ax] * dt
            );
        }
    }

    #[test]
    fn unknown_kind_and_tiny_resolution() {
        assert!("torus".parse::<SynthKind>().is_err());
        assert!(synth_field(SynthKind::Sphere, 1, &SynthParams::default(), None).is_err());
    }
}
