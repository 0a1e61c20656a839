//! Dense scalar volumes on the unit cube.
//!
//! Voxel `(i, j, k)` of an `X×Y×Z` volume sits at the cell center
//! `((i+0.5)/X, (j+0.5)/Y, (k+0.5)/Z)`; data is stored x-fastest.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{math, Error, Result, Vec3};

/// Affine map from normalized values back to the values stored on disk:
/// `original = offset + scale * normalized`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueMapping {
    pub offset: f32,
    pub scale: f32,
}

impl ValueMapping {
    pub const IDENTITY: ValueMapping = ValueMapping {
        offset: 0.0,
        scale: 1.0,
    };

    pub fn to_original(&self, v: f32) -> f32 {
        self.offset + self.scale * v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    data: Vec<f32>,
    mapping: ValueMapping,
}

impl ScalarVolume {
    /// Wraps normalized data. Every value must be finite and in `[0, 1]`.
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        Self::with_mapping(dims, data, ValueMapping::IDENTITY)
    }

    pub fn with_mapping(dims: [usize; 3], data: Vec<f32>, mapping: ValueMapping) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "volume dimensions must be positive, got {dims:?}"
            )));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "volume data",
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume data"));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "volume values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            dims,
            data,
            mapping,
        })
    }

    pub fn constant(dims: [usize; 3], value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Evaluates `f` at every voxel center. Values are clamped to `[0, 1]`.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(Vec3) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = [
                        (i as f32 + 0.5) / dims[0] as f32,
                        (j as f32 + 0.5) / dims[1] as f32,
                        (k as f32 + 0.5) / dims[2] as f32,
                    ];
                    data.push(f(p).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn mapping(&self) -> ValueMapping {
        self.mapping
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_dim(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(0)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    /// Position of the center of voxel `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            (i as f32 + 0.5) / self.dims[0] as f32,
            (j as f32 + 0.5) / self.dims[1] as f32,
            (k as f32 + 0.5) / self.dims[2] as f32,
        ]
    }

    /// Trilinear interpolation; positions outside the unit cube are clamped.
    pub fn sample(&self, p: Vec3) -> f32 {
        let mut base = [0usize; 3];
        let mut frac = [0f32; 3];
        for a in 0..3 {
            let (b, f) = axis_cell(p[a], self.dims[a]);
            base[a] = b;
            frac[a] = f;
        }
        let step = [
            usize::from(self.dims[0] > 1),
            usize::from(self.dims[1] > 1),
            usize::from(self.dims[2] > 1),
        ];
        let at = |di: usize, dj: usize, dk: usize| {
            self.get(
                base[0] + di * step[0],
                base[1] + dj * step[1],
                base[2] + dk * step[2],
            )
        };
        let x00 = lerp(at(0, 0, 0), at(1, 0, 0), frac[0]);
        let x10 = lerp(at(0, 1, 0), at(1, 1, 0), frac[0]);
        let x01 = lerp(at(0, 0, 1), at(1, 0, 1), frac[0]);
        let x11 = lerp(at(0, 1, 1), at(1, 1, 1), frac[0]);
        let y0 = lerp(x00, x10, frac[1]);
        let y1 = lerp(x01, x11, frac[1]);
        lerp(y0, y1, frac[2])
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Gaussian low-pass filter followed by resampling so that the largest
    /// axis has `target_res` voxels. The filter width is half the subsampling
    /// factor per axis, in source voxels.
    pub fn lowpass_downsample(&self, target_res: usize) -> Result<ScalarVolume> {
        let max_dim = self.max_dim();
        if target_res < 2 || target_res > max_dim {
            return Err(Error::InvalidConfig(alloc::format!(
                "target resolution {target_res} outside [2, {max_dim}]"
            )));
        }
        let mut target = [0usize; 3];
        let mut sigma = [0f64; 3];
        for a in 0..3 {
            let t = num_traits::Float::round((self.dims[a] * target_res) as f64 / max_dim as f64)
                as usize;
            target[a] = t.clamp(1, self.dims[a]);
            sigma[a] = 0.5 * self.dims[a] as f64 / target[a] as f64;
        }
        let mut blurred: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        for a in 0..3 {
            blurred = blur_axis(&blurred, self.dims, a, sigma[a]);
        }
        let blurred = ScalarVolume {
            dims: self.dims,
            data: blurred
                .into_iter()
                .map(|v| (v as f32).clamp(0.0, 1.0))
                .collect(),
            mapping: self.mapping,
        };
        let out = ScalarVolume::from_fn(target, |p| blurred.sample(p))?;
        Ok(ScalarVolume {
            mapping: self.mapping,
            ..out
        })
    }
}

/// Voxel resolution of the low-pass baseline that uses as many values as a
/// latent grid with `resolution³ · channels` entries.
pub fn equal_memory_resolution(resolution: usize, channels: usize) -> usize {
    let entries = (resolution * resolution * resolution * channels) as f64;
    math::round(math::cbrt(entries) as f32) as usize
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Lower voxel index and fractional offset along one axis.
#[inline]
fn axis_cell(p: f32, n: usize) -> (usize, f32) {
    if n == 1 {
        return (0, 0.0);
    }
    let u = (p.clamp(0.0, 1.0) * n as f32 - 0.5).clamp(0.0, (n - 1) as f32);
    let i = (math::floor(u) as usize).min(n - 2);
    (i, u - i as f32)
}

fn blur_axis(src: &[f64], dims: [usize; 3], axis: usize, sigma: f64) -> Vec<f64> {
    let radius = num_traits::Float::ceil(3.0 * sigma) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| {
            let x = d as f64;
            num_traits::Float::exp(-x * x / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let n = dims[axis] as isize;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; src.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let coord = ((idx / stride) % dims[axis]) as isize;
        let line_start = idx - coord as usize * stride;
        let mut acc = 0.0;
        for (w, d) in kernel.iter().zip(-radius..=radius) {
            let c = (coord + d).clamp(0, n - 1) as usize;
            acc += w * src[line_start + c * stride];
        }
        *o = acc;
    }
    out
}
