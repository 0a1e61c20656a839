use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{cross, length, normalize, sub};
use crate::{math, Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Entry and exit distances of the ray through the unit cube, if it hits.
    pub fn unit_box_span(&self) -> Option<(f32, f32)> {
        let mut t0 = f32::NEG_INFINITY;
        let mut t1 = f32::INFINITY;
        for a in 0..3 {
            let o = self.origin[a];
            let d = self.direction[a];
            if d.abs() < 1e-12 {
                if !(0.0..=1.0).contains(&o) {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut near, mut far) = ((0.0 - o) * inv, (1.0 - o) * inv);
            if near > far {
                core::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        let t0 = t0.max(0.0);
        (t1 > t0).then_some((t0, t1))
    }

    pub fn at(&self, t: f32) -> Vec3 {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

/// Pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f32,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let forward = sub(self.target, self.eye);
        let bad = |m: &str| Err(Error::InvalidConfig(alloc::format!("camera: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if self
            .eye
            .iter()
            .chain(&self.target)
            .chain(&self.up)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite vectors");
        }
        if length(forward) < 1e-9 {
            return bad("eye and target coincide");
        }
        if length(cross(forward, self.up)) < 1e-6 * length(forward) * length(self.up) {
            return bad("up is parallel to the viewing direction");
        }
        if !(self.fov_y > 0.0 && self.fov_y < core::f32::consts::PI) {
            return bad("fov_y must lie in (0, pi)");
        }
        Ok(())
    }

    /// Camera on a sphere of `radius` around `center`, looking at the center
    /// from `direction` (need not be normalized).
    pub fn orbit(
        center: Vec3,
        direction: Vec3,
        radius: f32,
        fov_y: f32,
        width: usize,
        height: usize,
    ) -> Self {
        let d = normalize(direction);
        let eye = [
            center[0] + radius * d[0],
            center[1] + radius * d[1],
            center[2] + radius * d[2],
        ];
        let up = if d[1].abs() > 0.99 {
            [0.0, 0.0, 1.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        Self {
            eye,
            target: center,
            up,
            fov_y,
            width,
            height,
        }
    }

    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = normalize(sub(self.target, self.eye));
        let r = normalize(cross(f, self.up));
        let u = cross(r, f);
        (f, r, u)
    }

    /// One ray through each pixel center, row-major from the top-left pixel.
    pub fn rays(&self) -> Result<Vec<Ray>> {
        self.validate()?;
        let (f, r, u) = self.basis();
        let half = math::tan(0.5 * self.fov_y);
        let aspect = self.width as f32 / self.height as f32;
        let mut rays = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            let sy = (1.0 - 2.0 * (y as f32 + 0.5) / self.height as f32) * half;
            for x in 0..self.width {
                let sx = (2.0 * (x as f32 + 0.5) / self.width as f32 - 1.0) * half * aspect;
                let d = [
                    f[0] + sx * r[0] + sy * u[0],
                    f[1] + sx * r[1] + sy * u[1],
                    f[2] + sx * r[2] + sy * u[2],
                ];
                rays.push(Ray {
                    origin: self.eye,
                    direction: normalize(d),
                });
            }
        }
        Ok(rays)
    }
}

/// `n` nearly uniform unit directions on the sphere (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = core::f32::consts::PI * (3.0 - math::sqrt(5.0));
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f32 + 0.5) / n as f32;
            let r = math::sqrt((1.0 - y * y).max(0.0));
            let (s, c) = math::sin_cos(golden * i as f32);
            [r * c, y, r * s]
        })
        .collect()
}

/// Cameras orbiting the unit cube at a fixed distance, one per Fibonacci
/// direction.
pub fn orbit_cameras(n: usize, width: usize, height: usize) -> Vec<Camera> {
    fibonacci_sphere(n)
        .into_iter()
        .map(|d| Camera::orbit([0.5; 3], d, 2.2, 40f32.to_radians(), width, height))
        .collect()
}
