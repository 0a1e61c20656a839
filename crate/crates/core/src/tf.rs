//! Piecewise-linear transfer functions from density to color and absorption.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub x: f32,
    pub rgb: Vec3,
    /// Absorption per unit length in the unit cube.
    pub sigma: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ControlPoint>", into = "Vec<ControlPoint>")]
pub struct TransferFunction {
    points: Vec<ControlPoint>,
}

impl TryFrom<Vec<ControlPoint>> for TransferFunction {
    type Error = Error;

    fn try_from(points: Vec<ControlPoint>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<TransferFunction> for Vec<ControlPoint> {
    fn from(tf: TransferFunction) -> Self {
        tf.points
    }
}

impl TransferFunction {
    pub fn new(points: Vec<ControlPoint>) -> Result<Self> {
        let bad = |msg: &str| {
            Err(Error::InvalidConfig(alloc::format!(
                "transfer function: {msg}"
            )))
        };
        if points.len() < 2 {
            return bad("needs at least two control points");
        }
        if points[0].x != 0.0 || points[points.len() - 1].x != 1.0 {
            return bad("first point must be at x=0 and last at x=1");
        }
        if points.windows(2).any(|w| !(w[0].x < w[1].x)) {
            return bad("control point positions must be strictly increasing");
        }
        for p in &points {
            if !p.sigma.is_finite() || p.sigma < 0.0 {
                return bad("absorption must be finite and non-negative");
            }
            if p.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad("colors must lie in [0, 1]");
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }

    /// Black-to-white ramp with linearly increasing absorption.
    pub fn ramp(max_sigma: f32) -> Self {
        Self::new(alloc::vec![
            ControlPoint {
                x: 0.0,
                rgb: [0.0; 3],
                sigma: 0.0
            },
            ControlPoint {
                x: 1.0,
                rgb: [1.0; 3],
                sigma: max_sigma
            },
        ])
        .expect("valid preset")
    }

    /// Two narrow peaks, purple and yellow; black and transparent elsewhere.
    pub fn two_peaks(max_sigma: f32) -> Self {
        let purple = [0.55, 0.15, 0.75];
        let yellow = [0.95, 0.85, 0.15];
        let black = [0.0; 3];
        let pt = |x, rgb, sigma| ControlPoint { x, rgb, sigma };
        Self::new(alloc::vec![
            pt(0.0, black, 0.0),
            pt(0.30, black, 0.0),
            pt(0.33, purple, max_sigma),
            pt(0.36, black, 0.0),
            pt(0.64, black, 0.0),
            pt(0.67, yellow, max_sigma),
            pt(0.70, black, 0.0),
            pt(1.0, black, 0.0),
        ])
        .expect("valid preset")
    }

    fn segment(&self, density: f32) -> (usize, f32) {
        let d = density.clamp(0.0, 1.0);
        // index of the last point with x <= d, capped so that i + 1 exists
        let i = self
            .points
            .partition_point(|p| p.x <= d)
            .saturating_sub(1)
            .min(self.points.len() - 2);
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        (i, (d - a.x) / (b.x - a.x))
    }

    /// Color and absorption at `density`, clamped to `[0, 1]`.
    pub fn eval(&self, density: f32) -> (Vec3, f32) {
        let (i, t) = self.segment(density);
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        let rgb = [
            a.rgb[0] + t * (b.rgb[0] - a.rgb[0]),
            a.rgb[1] + t * (b.rgb[1] - a.rgb[1]),
            a.rgb[2] + t * (b.rgb[2] - a.rgb[2]),
        ];
        (rgb, a.sigma + t * (b.sigma - a.sigma))
    }

    /// Derivative of `eval` with respect to density. Zero where the input is
    /// clamped.
    pub fn derivative(&self, density: f32) -> (Vec3, f32) {
        if !(0.0..=1.0).contains(&density) {
            return ([0.0; 3], 0.0);
        }
        let (i, _) = self.segment(density);
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        let inv = 1.0 / (b.x - a.x);
        (
            [
                (b.rgb[0] - a.rgb[0]) * inv,
                (b.rgb[1] - a.rgb[1]) * inv,
                (b.rgb[2] - a.rgb[2]) * inv,
            ],
            (b.sigma - a.sigma) * inv,
        )
    }

    /// Largest absolute slope over all segments and components.
    pub fn lipschitz(&self) -> f32 {
        self.points
            .windows(2)
            .map(|w| {
                let dx = w[1].x - w[0].x;
                let mut m = (w[1].sigma - w[0].sigma).abs();
                for c in 0..3 {
                    m = m.max((w[1].rgb[c] - w[0].rgb[c]).abs());
                }
                m / dx
            })
            .fold(0.0, f32::max)
    }
}
