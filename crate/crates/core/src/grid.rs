//! Trainable volumetric latent grids.
//!
//! A grid of resolution `R` has `R` vertices per axis at `i/(R-1)` and stores
//! `F` channels per vertex, channel-fastest:
//! `values[((k·R + j)·R + i)·F + f]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{math, Error, Result, Vec3};

/// Standard deviation of freshly initialized grid values.
pub const INIT_STD: f32 = 0.1;

/// The eight vertices enclosing a position and their trilinear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taps {
    pub vertex: [usize; 8],
    pub weight: [f32; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    resolution: usize,
    channels: usize,
    values: Vec<f32>,
}

impl LatentGrid {
    pub fn zeros(resolution: usize, channels: usize) -> Result<Self> {
        Self::check_shape(resolution, channels)?;
        Ok(Self {
            resolution,
            channels,
            values: vec![0.0; resolution * resolution * resolution * channels],
        })
    }

    /// Values drawn i.i.d. from `N(0, 0.1²)`.
    pub fn random(resolution: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut grid = Self::zeros(resolution, channels)?;
        let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grid.values
            .iter_mut()
            .for_each(|v| *v = normal.sample(&mut rng));
        Ok(grid)
    }

    pub fn from_values(resolution: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        Self::check_shape(resolution, channels)?;
        let expected = resolution * resolution * resolution * channels;
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "latent grid values",
                expected,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent grid values"));
        }
        Ok(Self {
            resolution,
            channels,
            values,
        })
    }

    fn check_shape(resolution: usize, channels: usize) -> Result<()> {
        if resolution < 2 || channels == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "latent grid needs R >= 2 and F >= 1, got R={resolution}, F={channels}"
            )));
        }
        Ok(())
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn vertex(&self, i: usize, j: usize, k: usize) -> &[f32] {
        let v = self.vertex_index(i, j, k) * self.channels;
        &self.values[v..v + self.channels]
    }

    /// Trilinear taps at `p`, clamped to the unit cube.
    #[inline]
    pub fn taps(&self, p: Vec3) -> Taps {
        let r = self.resolution;
        let mut base = [0usize; 3];
        let mut f = [0f32; 3];
        for a in 0..3 {
            let u = p[a].clamp(0.0, 1.0) * (r - 1) as f32;
            let i = (math::floor(u) as usize).min(r - 2);
            base[a] = i;
            f[a] = u - i as f32;
        }
        let mut taps = Taps {
            vertex: [0; 8],
            weight: [0.0; 8],
        };
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            taps.vertex[c] = self.vertex_index(base[0] + dx, base[1] + dy, base[2] + dz);
            let wx = if dx == 1 { f[0] } else { 1.0 - f[0] };
            let wy = if dy == 1 { f[1] } else { 1.0 - f[1] };
            let wz = if dz == 1 { f[2] } else { 1.0 - f[2] };
            taps.weight[c] = wx * wy * wz;
        }
        taps
    }

    /// Accumulates `scale · Σ w_c · G[v_c]` into `out`.
    #[inline]
    pub fn gather(&self, taps: &Taps, scale: f32, out: &mut [f32]) {
        let f = self.channels;
        for c in 0..8 {
            let w = taps.weight[c] * scale;
            if w != 0.0 {
                let src = &self.values[taps.vertex[c] * f..(taps.vertex[c] + 1) * f];
                crate::mlp::axpy(out, w, src);
            }
        }
    }

    /// Latent vector at `p`.
    pub fn sample(&self, p: Vec3) -> Vec<f32> {
        let mut out = vec![0.0; self.channels];
        self.gather(&self.taps(p), 1.0, &mut out);
        out
    }

    /// Adds `w_c · z̄` to the gradient slots of the eight enclosing vertices.
    pub fn sample_backward(&self, p: Vec3, z_bar: &[f32], grads: &mut [f32]) -> Result<()> {
        if z_bar.len() != self.channels {
            return Err(Error::ShapeMismatch {
                context: "latent adjoint",
                expected: self.channels,
                found: z_bar.len(),
            });
        }
        if grads.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                context: "latent gradient buffer",
                expected: self.values.len(),
                found: grads.len(),
            });
        }
        scatter(&self.taps(p), 1.0, self.channels, z_bar, grads);
        Ok(())
    }

    /// Per-channel 8-bit quantization over each channel's value range.
    pub fn quantize(&self) -> QuantizedLatentGrid {
        let f = self.channels;
        let mut ranges = vec![(f32::INFINITY, f32::NEG_INFINITY); f];
        for vertex in self.values.chunks_exact(f) {
            for (c, &v) in vertex.iter().enumerate() {
                ranges[c].0 = ranges[c].0.min(v);
                ranges[c].1 = ranges[c].1.max(v);
            }
        }
        let codes = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = ranges[i % f];
                if hi > lo {
                    // f32::round rounds half away from zero
                    math::round((v - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        QuantizedLatentGrid {
            resolution: self.resolution,
            channels: f,
            codes,
            ranges,
        }
    }
}

#[inline]
pub(crate) fn scatter(taps: &Taps, scale: f32, channels: usize, z_bar: &[f32], grads: &mut [f32]) {
    for c in 0..8 {
        let w = taps.weight[c] * scale;
        if w != 0.0 {
            let dst = &mut grads[taps.vertex[c] * channels..(taps.vertex[c] + 1) * channels];
            crate::mlp::axpy(dst, w, z_bar);
        }
    }
}

/// 8-bit latent grid with a per-channel `(min, max)` table.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLatentGrid {
    resolution: usize,
    channels: usize,
    codes: Vec<u8>,
    ranges: Vec<(f32, f32)>,
}

impl QuantizedLatentGrid {
    pub fn from_parts(
        resolution: usize,
        channels: usize,
        codes: Vec<u8>,
        ranges: Vec<(f32, f32)>,
    ) -> Result<Self> {
        LatentGrid::check_shape(resolution, channels)?;
        let expected = resolution * resolution * resolution * channels;
        if codes.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "quantized grid codes",
                expected,
                found: codes.len(),
            });
        }
        if ranges.len() != channels {
            return Err(Error::ShapeMismatch {
                context: "quantized grid ranges",
                expected: channels,
                found: ranges.len(),
            });
        }
        if ranges
            .iter()
            .any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::InvalidConfig(
                "quantized grid ranges must satisfy min <= max".into(),
            ));
        }
        Ok(Self {
            resolution,
            channels,
            codes,
            ranges,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn ranges(&self) -> &[(f32, f32)] {
        &self.ranges
    }

    pub fn dequantize(&self) -> LatentGrid {
        let f = self.channels;
        let values = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (lo, hi) = self.ranges[i % f];
                lo + c as f32 / 255.0 * (hi - lo)
            })
            .collect();
        LatentGrid {
            resolution: self.resolution,
            channels: f,
            values,
        }
    }
}

/// Latent grids stored at keyframe timesteps, linearly blended in time.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeGrids {
    times: Vec<u32>,
    grids: Vec<LatentGrid>,
}

impl KeyframeGrids {
    pub fn new(times: Vec<u32>, grids: Vec<LatentGrid>) -> Result<Self> {
        if times.is_empty() || grids.is_empty() {
            return Err(Error::EmptyKeyframes);
        }
        if times.len() != grids.len() {
            return Err(Error::ShapeMismatch {
                context: "keyframe grids",
                expected: times.len(),
                found: grids.len(),
            });
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "keyframe times must be strictly increasing".into(),
            ));
        }
        let (r, f) = (grids[0].resolution, grids[0].channels);
        if grids.iter().any(|g| g.resolution != r || g.channels != f) {
            return Err(Error::InvalidConfig(
                "keyframe grids must share R and F".into(),
            ));
        }
        Ok(Self { times, grids })
    }

    pub fn random(times: Vec<u32>, resolution: usize, channels: usize, seed: u64) -> Result<Self> {
        let grids = (0..times.len())
            .map(|i| LatentGrid::random(resolution, channels, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(times, grids)
    }

    pub fn times(&self) -> &[u32] {
        &self.times
    }

    pub fn grids(&self) -> &[LatentGrid] {
        &self.grids
    }

    pub fn grids_mut(&mut self) -> &mut [LatentGrid] {
        &mut self.grids
    }

    pub fn span(&self) -> (u32, u32) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    /// Bracketing keyframes `(i0, i1)` and the blend weight of `i1`, with `t`
    /// clamped to the keyframe span.
    pub fn bracket(&self, t: f32) -> (usize, usize, f32) {
        let n = self.times.len();
        let (first, last) = (self.times[0] as f32, self.times[n - 1] as f32);
        let t = t.clamp(first, last);
        if n == 1 || t <= first {
            return (0, 0, 0.0);
        }
        if t >= last {
            return (n - 1, n - 1, 0.0);
        }
        let i1 = self.times.partition_point(|&k| (k as f32) <= t);
        let i0 = i1 - 1;
        let (t0, t1) = (self.times[i0] as f32, self.times[i1] as f32);
        (i0, i1, (t - t0) / (t1 - t0))
    }

    pub fn sample(&self, p: Vec3, t: f32) -> Result<Vec<f32>> {
        if !t.is_finite() {
            return Err(Error::NonFinite("keyframe time"));
        }
        let (i0, i1, w) = self.bracket(t);
        let taps = self.grids[0].taps(p);
        let mut out = vec![0.0; self.grids[0].channels];
        self.grids[i0].gather(&taps, 1.0 - w, &mut out);
        if w != 0.0 {
            self.grids[i1].gather(&taps, w, &mut out);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute_sample(g: &LatentGrid, p: Vec3) -> Vec<f64> {
        let r = g.resolution();
        let mut out = vec![0.0f64; g.channels()];
        let u: Vec<f64> = p
            .iter()
            .map(|&x| x.clamp(0.0, 1.0) as f64 * (r - 1) as f64)
            .collect();
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    // tent weights, nonzero only for the enclosing vertices
                    let w = (1.0 - (u[0] - i as f64).abs()).max(0.0)
                        * (1.0 - (u[1] - j as f64).abs()).max(0.0)
                        * (1.0 - (u[2] - k as f64).abs()).max(0.0);
                    if w > 0.0 {
                        for (c, o) in out.iter_mut().enumerate() {
                            *o += w * g.vertex(i, j, k)[c] as f64;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn random_grid_is_seeded() {
        let a = LatentGrid::random(4, 3, 1).unwrap();
        assert_eq!(a, LatentGrid::random(4, 3, 1).unwrap());
        assert_ne!(a, LatentGrid::random(4, 3, 2).unwrap());
        assert_eq!(LatentGrid::zeros(32, 16).unwrap().len(), 524_288);
    }

    #[test]
    fn random_grid_statistics() {
        let g = LatentGrid::random(16, 8, 3).unwrap();
        let n = g.len() as f64;
        let mean = g.values().iter().map(|&v| v as f64).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * INIT_STD as f64 / n.sqrt());
        let var = g
            .values()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((var.sqrt() - INIT_STD as f64).abs() < 0.01);
    }

    #[test]
    fn vertex_queries_are_exact() {
        let g = LatentGrid::random(5, 4, 2).unwrap();
        for &(i, j, k) in &[(0, 0, 0), (4, 4, 4), (1, 3, 2)] {
            let p = [i as f32 / 4.0, j as f32 / 4.0, k as f32 / 4.0];
            let z = g.sample(p);
            for (a, b) in z.iter().zip(g.vertex(i, j, k)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let g = LatentGrid::random(6, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = [rng.random(), rng.random(), rng.random()];
            let z = g.sample(p);
            for (a, b) in z.iter().zip(brute_sample(&g, p)) {
                assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_weights() {
        let g = LatentGrid::random(3, 2, 0).unwrap();
        let mut grads = vec![0.0; g.len()];
        g.sample_backward([0.5, 0.5, 0.5], &[1.0, 2.0], &mut grads)
            .unwrap();
        assert_eq!(&grads[g.vertex_index(1, 1, 1) * 2..][..2], &[1.0, 2.0]);
        assert_eq!(grads.iter().sum::<f32>(), 3.0);

        let mut grads = vec![0.0; g.len()];
        g.sample_backward([0.25, 0.25, 0.25], &[8.0, 0.0], &mut grads)
            .unwrap();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    assert!((grads[g.vertex_index(i, j, k) * 2] - 1.0).abs() < 1e-6);
                }
            }
        }
        assert!(g.sample_backward([0.1; 3], &[1.0], &mut grads).is_err());
    }

    #[test]
    fn quantizer_reference_codes() {
        let mut g = LatentGrid::zeros(2, 2).unwrap();
        let vals = g.values_mut();
        for v in 0..8 {
            vals[v * 2] = if v == 0 {
                -1.0
            } else if v == 1 {
                1.0
            } else {
                0.0
            };
            vals[v * 2 + 1] = 0.7;
        }
        let q = g.quantize();
        assert_eq!(q.codes()[0], 0);
        assert_eq!(q.codes()[2], 255);
        // 0.5 · 255 = 127.5 rounds away from zero
        assert_eq!(q.codes()[4], 128);
        assert!(q.codes().iter().skip(1).step_by(2).all(|&c| c == 0));
        let d = q.dequantize();
        assert!(d.values().iter().skip(1).step_by(2).all(|&v| v == 0.7));
        assert_eq!(d.values()[0], -1.0);
    }

    #[test]
    fn quantization_error_bound() {
        let g = LatentGrid::random(8, 5, 9).unwrap();
        let q = g.quantize();
        let d = q.dequantize();
        for (i, (a, b)) in g.values().iter().zip(d.values()).enumerate() {
            let (lo, hi) = q.ranges()[i % 5];
            assert!((a - b).abs() <= (hi - lo) / 510.0 * (1.0 + 1e-3));
        }
    }

    #[test]
    fn keyframe_blending() {
        let zero = LatentGrid::zeros(3, 2).unwrap();
        let mut one = LatentGrid::zeros(3, 2).unwrap();
        one.values_mut().iter_mut().for_each(|v| *v = 1.0);
        let kf = KeyframeGrids::new(vec![1, 11], vec![zero, one]).unwrap();
        assert_eq!(kf.sample([0.3, 0.2, 0.9], 6.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(kf.sample([0.3, 0.2, 0.9], 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(kf.sample([0.3, 0.2, 0.9], 40.0).unwrap(), vec![1.0, 1.0]);
        assert_eq!(kf.sample([0.3, 0.2, 0.9], -3.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn keyframe_validation() {
        assert_eq!(
            KeyframeGrids::new(vec![], vec![]),
            Err(Error::EmptyKeyframes)
        );
        let g = LatentGrid::zeros(2, 1).unwrap();
        assert!(KeyframeGrids::new(vec![3, 3], vec![g.clone(), g.clone()]).is_err());
        let h = LatentGrid::zeros(3, 1).unwrap();
        assert!(KeyframeGrids::new(vec![1, 2], vec![g, h]).is_err());
    }
}
