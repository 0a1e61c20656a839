use alloc::string::ToString;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{math, Error, Result};

/// Hidden-layer activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softplus,
    /// `x + sin²(x)` (frequency 1).
    Snake,
    /// `0.5x + sin²(x)`.
    SnakeAlt,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::Snake,
        Activation::SnakeAlt,
    ];

    #[inline]
    pub fn eval<T: Float>(self, x: T) -> T {
        let one = T::one();
        let half = T::from(0.5).unwrap();
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => one / (one + (-x).exp()),
            Activation::Softplus => {
                let limit = T::from(20.0).unwrap();
                if x > limit {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Snake => {
                let s = x.sin();
                x + s * s
            }
            Activation::SnakeAlt => {
                let s = x.sin();
                half * x + s * s
            }
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    #[inline]
    pub fn grad<T: Float>(self, x: T) -> T {
        let one = T::one();
        let two = T::from(2.0).unwrap();
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    one
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = one / (one + (-x).exp());
                s * (one - s)
            }
            Activation::Softplus => one / (one + (-x).exp()),
            Activation::Snake => one + (two * x).sin(),
            Activation::SnakeAlt => T::from(0.5).unwrap() + (two * x).sin(),
        }
    }
}

impl Activation {
    /// Single-precision evaluation using [`math::fast_sin`] for the snake
    /// variants so the loops vectorize.
    #[inline]
    pub fn eval_f32(self, x: f32) -> f32 {
        match self {
            Activation::Snake => {
                let s = math::fast_sin(x);
                x + s * s
            }
            Activation::SnakeAlt => {
                let s = math::fast_sin(x);
                0.5 * x + s * s
            }
            other => other.eval(x),
        }
    }

    #[inline]
    pub fn grad_f32(self, x: f32) -> f32 {
        match self {
            Activation::Snake => 1.0 + math::fast_sin(2.0 * x),
            Activation::SnakeAlt => 0.5 + math::fast_sin(2.0 * x),
            other => other.grad(x),
        }
    }
}

impl core::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "softplus" => Ok(Self::Softplus),
            "snake" => Ok(Self::Snake),
            "snake_alt" | "snakealt" => Ok(Self::SnakeAlt),
            other => Err(Error::Unknown {
                what: "activation",
                name: other.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn snake_alt_reference_points() {
        assert_eq!(Activation::SnakeAlt.eval(0.0f64), 0.0);
        assert_eq!(Activation::SnakeAlt.grad(0.0f64), 0.5);
        assert!((Activation::SnakeAlt.eval(PI) - PI / 2.0).abs() < 1e-12);
        assert!((Activation::SnakeAlt.grad(PI) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn snake_alt_matches_cosine_form() {
        for x in [-2.0f64, -0.3, 0.7, 3.9] {
            let cos_form = (x + 1.0 - (2.0 * x).cos()) / 2.0;
            assert!((Activation::SnakeAlt.eval(x) - cos_form).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6f64;
        for act in Activation::ALL {
            for _ in 0..64 {
                let mut x: f64 = rng.random_range(-4.0..4.0);
                if act == Activation::Relu && x.abs() < 1e-3 {
                    x += 0.01;
                }
                let fd = (act.eval(x + h) - act.eval(x - h)) / (2.0 * h);
                let g = act.grad(x);
                let rel = (fd - g).abs() / g.abs().max(1e-3);
                assert!(rel < 1e-4, "{act:?} at {x}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!(
            "snake_alt".parse::<Activation>().unwrap(),
            Activation::SnakeAlt
        );
        assert!("tanh".parse::<Activation>().is_err());
    }
}
