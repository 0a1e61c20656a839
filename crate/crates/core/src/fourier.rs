//! Fourier feature encoders `v ↦ v ⊕ sin(Bv) ⊕ cos(Bv)`.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourierMode {
    Off,
    /// Axis-aligned frequencies `2π·2^j`, cycling through the input axes.
    Nerf,
    /// Gaussian random frequencies with standard deviation `2πσ`.
    Random,
}

impl core::str::FromStr for FourierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(Self::Off),
            "nerf" => Ok(Self::Nerf),
            "random" => Ok(Self::Random),
            other => Err(Error::Unknown {
                what: "fourier mode",
                name: other.to_string(),
            }),
        }
    }
}

/// Frozen Fourier matrix `B` (`features × input_dim`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FourierEncoder {
    mode: FourierMode,
    input_dim: usize,
    sigma: f32,
    seed: u64,
    matrix: Vec<f32>,
}

impl FourierEncoder {
    /// Builds the encoder. In `Nerf` mode row `i` is `2π·2^(i / d)·e_(i mod d)`,
    /// so `features = d·L` gives the stacked scaled identities and any other
    /// count truncates the next octave.
    pub fn new(
        mode: FourierMode,
        features: usize,
        input_dim: usize,
        sigma: f32,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig(
                "fourier input dimension must be positive".into(),
            ));
        }
        let two_pi = 2.0 * core::f32::consts::PI;
        let matrix = match mode {
            FourierMode::Off => Vec::new(),
            FourierMode::Nerf => {
                let mut b = vec![0.0; features * input_dim];
                for i in 0..features {
                    let octave = (i / input_dim) as u32;
                    b[i * input_dim + i % input_dim] = two_pi * (1u64 << octave.min(63)) as f32;
                }
                b
            }
            FourierMode::Random => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "random fourier features need sigma > 0".into(),
                    ));
                }
                let normal = Normal::new(0.0f32, two_pi * sigma)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..features * input_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect()
            }
        };
        Ok(Self {
            mode,
            input_dim,
            sigma,
            seed,
            matrix,
        })
    }

    pub fn off(input_dim: usize) -> Self {
        Self::new(FourierMode::Off, 0, input_dim, 0.0, 0).expect("valid")
    }

    pub fn mode(&self) -> FourierMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of frequencies `m` (rows of `B`).
    pub fn features(&self) -> usize {
        self.matrix.len() / self.input_dim
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// Width of `v ⊕ sin(Bv) ⊕ cos(Bv)`.
    pub fn output_dim(&self) -> usize {
        self.input_dim + 2 * self.features()
    }

    /// Writes `sin(Bv)` and `cos(Bv)` into two slices of length `features()`.
    pub fn encode_sin_cos(&self, v: &[f32], sin_out: &mut [f32], cos_out: &mut [f32]) {
        debug_assert_eq!(v.len(), self.input_dim);
        for (i, row) in self.matrix.chunks_exact(self.input_dim).enumerate() {
            let arg: f32 = row.iter().zip(v).map(|(b, x)| b * x).sum();
            let (s, c) = math::sin_cos(arg);
            sin_out[i] = s;
            cos_out[i] = c;
        }
    }

    /// Full encoding `[v | sin(Bv) | cos(Bv)]`.
    pub fn encode(&self, v: &[f32]) -> Result<Vec<f32>> {
        if v.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                context: "fourier input",
                expected: self.input_dim,
                found: v.len(),
            });
        }
        let m = self.features();
        let mut out = vec![0.0; self.output_dim()];
        out[..self.input_dim].copy_from_slice(v);
        let (sin_part, cos_part) = out[self.input_dim..].split_at_mut(m);
        self.encode_sin_cos(v, sin_part, cos_part);
        Ok(out)
    }
}
