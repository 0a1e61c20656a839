//! Cache-resident blocked evaluation of the network.
//!
//! Samples are processed in tiles of 32. A tile's activations live in a
//! small channel-major scratch (`[channel][lane]`) that is reused layer after
//! layer, and weights are stored as zero-padded 16×16 blocks. The byte
//! accounting follows half-precision storage (2 bytes per entry) even though
//! the arithmetic runs in `f32`; [`FusedPlan::weight_bytes_f32`] and
//! [`FusedPlan::scratch_bytes_f32`] report the actual figures.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::Activation;
use crate::math::fast_sin;
use crate::mlp::Mlp;
use crate::model::FvsrnModel;
use crate::{Error, Result};

pub const BLOCK: usize = 16;
pub const TILE: usize = 32;
/// Fast on-chip memory budget in bytes.
pub const DEFAULT_BUDGET: usize = 48 * 1024;
const ACCOUNTING_BYTES: usize = 2;

/// Rounds `n` up to a multiple of the block size.
pub fn pad(n: usize) -> usize {
    n.div_ceil(BLOCK) * BLOCK
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedPlan {
    /// Unpadded `(inputs, outputs)` per layer.
    pub shapes: Vec<(usize, usize)>,
    /// Padded `(inputs, outputs)` per layer.
    pub padded: Vec<(usize, usize)>,
    pub budget: usize,
    /// Weight and bias bytes.
    pub m_w: usize,
    /// Activation bytes of one tile at the widest layer.
    pub m_s: usize,
    /// Tiles that fit alongside the weights.
    pub w: usize,
}

/// Capacity plan for an `layers`-layer network with `channels` hidden units.
pub fn plan_build(
    layers: usize,
    channels: usize,
    input_width: usize,
    output_width: usize,
    budget: usize,
) -> Result<FusedPlan> {
    if layers == 0 || input_width == 0 || output_width == 0 || (layers > 1 && channels == 0) {
        return Err(Error::InvalidConfig(
            "fused plan needs a non-empty network".into(),
        ));
    }
    let shapes: Vec<(usize, usize)> = (0..layers)
        .map(|i| {
            let n_in = if i == 0 { input_width } else { channels };
            let n_out = if i + 1 == layers {
                output_width
            } else {
                channels
            };
            (n_in, n_out)
        })
        .collect();
    plan_from_shapes(shapes, budget)
}

fn plan_from_shapes(shapes: Vec<(usize, usize)>, budget: usize) -> Result<FusedPlan> {
    let padded: Vec<(usize, usize)> = shapes.iter().map(|&(i, o)| (pad(i), pad(o))).collect();
    let m_w = padded
        .iter()
        .map(|&(i, o)| (i * o + o) * ACCOUNTING_BYTES)
        .sum::<usize>();
    let widest = padded.iter().map(|&(i, o)| i.max(o)).max().unwrap_or(0);
    let m_s = widest * TILE * ACCOUNTING_BYTES;
    if m_w > budget {
        return Err(Error::CapacityExceeded {
            quantity: "weights (m_w)",
            required: m_w,
            budget,
        });
    }
    if m_w + m_s > budget {
        return Err(Error::CapacityExceeded {
            quantity: "weights plus one tile (m_w + m_s)",
            required: m_w + m_s,
            budget,
        });
    }
    Ok(FusedPlan {
        shapes,
        padded,
        budget,
        m_w,
        m_s,
        w: (budget - m_w) / m_s,
    })
}

impl FusedPlan {
    pub fn for_mlp(mlp: &Mlp<f32>, budget: usize) -> Result<Self> {
        plan_from_shapes(
            mlp.layers()
                .iter()
                .map(|l| (l.inputs(), l.outputs()))
                .collect(),
            budget,
        )
    }

    pub fn for_model(model: &FvsrnModel) -> Result<Self> {
        Self::for_mlp(model.mlp(), DEFAULT_BUDGET)
    }

    pub fn widest(&self) -> usize {
        self.padded
            .iter()
            .map(|&(i, o)| i.max(o))
            .max()
            .unwrap_or(0)
    }

    pub fn weight_bytes_f32(&self) -> usize {
        self.m_w / ACCOUNTING_BYTES * 4
    }

    pub fn scratch_bytes_f32(&self) -> usize {
        self.m_s / ACCOUNTING_BYTES * 4
    }
}

#[derive(Debug, Clone)]
struct PackedLayer {
    in_pad: usize,
    out_pad: usize,
    /// `[out block][in block][16 × 16 row-major]`
    blocks: Vec<f32>,
    bias: Vec<f32>,
}

impl PackedLayer {
    fn block(&self, ob: usize, ib: usize) -> &[f32] {
        let nib = self.in_pad / BLOCK;
        let start = (ob * nib + ib) * BLOCK * BLOCK;
        &self.blocks[start..start + BLOCK * BLOCK]
    }
}

/// Network packed according to a [`FusedPlan`].
#[derive(Debug, Clone)]
pub struct FusedEvaluator {
    plan: FusedPlan,
    layers: Vec<PackedLayer>,
    activation: Activation,
    input_width: usize,
    output_width: usize,
}

/// Scratch usage of one tile in accounting bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScratchReport {
    /// Largest activation footprint of a single layer output.
    pub per_layer: usize,
    /// Both ping-pong buffers together.
    pub total: usize,
}

impl FusedEvaluator {
    pub fn new(plan: &FusedPlan, mlp: &Mlp<f32>) -> Result<Self> {
        let shapes: Vec<(usize, usize)> = mlp
            .layers()
            .iter()
            .map(|l| (l.inputs(), l.outputs()))
            .collect();
        if shapes != plan.shapes {
            return Err(Error::PlanMismatch(alloc::format!(
                "plan has layer shapes {:?}, network has {:?}",
                plan.shapes,
                shapes
            )));
        }
        let layers = mlp
            .layers()
            .iter()
            .zip(&plan.padded)
            .map(|(layer, &(in_pad, out_pad))| {
                let mut blocks = vec![0.0; in_pad * out_pad];
                let nib = in_pad / BLOCK;
                for o in 0..layer.outputs() {
                    for (i, &w) in layer.row(o).iter().enumerate() {
                        let (ob, ib) = (o / BLOCK, i / BLOCK);
                        let at = (ob * nib + ib) * BLOCK * BLOCK + (o % BLOCK) * BLOCK + i % BLOCK;
                        blocks[at] = w;
                    }
                }
                let mut bias = vec![0.0; out_pad];
                bias[..layer.outputs()].copy_from_slice(&layer.bias);
                PackedLayer {
                    in_pad,
                    out_pad,
                    blocks,
                    bias,
                }
            })
            .collect();
        Ok(Self {
            plan: plan.clone(),
            layers,
            activation: mlp.activation(),
            input_width: mlp.input_dim(),
            output_width: mlp.output_dim(),
        })
    }

    pub fn plan(&self) -> &FusedPlan {
        &self.plan
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// Scratch entries one tile touches, in the plan's accounting bytes.
    pub fn scratch_report(&self) -> ScratchReport {
        let widest = self.plan.widest();
        ScratchReport {
            per_layer: self
                .layers
                .iter()
                .map(|l| l.out_pad)
                .max()
                .unwrap_or(0)
                .max(self.layers[0].in_pad)
                * TILE
                * ACCOUNTING_BYTES,
            total: 2 * widest * TILE * ACCOUNTING_BYTES,
        }
    }

    /// Raw network outputs for a row-major batch of assembled inputs.
    pub fn eval(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        if x.len() != batch * self.input_width {
            return Err(Error::ShapeMismatch {
                context: "fused input batch",
                expected: batch * self.input_width,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; batch * self.output_width];
        self.eval_into(x, &mut y);
        Ok(y)
    }

    #[cfg(not(feature = "parallel"))]
    fn eval_into(&self, x: &[f32], y: &mut [f32]) {
        let mut scratch = self.scratch();
        for (xt, yt) in x
            .chunks(TILE * self.input_width)
            .zip(y.chunks_mut(TILE * self.output_width))
        {
            self.eval_tile(xt, yt, &mut scratch);
        }
    }

    #[cfg(feature = "parallel")]
    fn eval_into(&self, x: &[f32], y: &mut [f32]) {
        use rayon::prelude::*;
        const TILES_PER_TASK: usize = 64;
        x.par_chunks(TILES_PER_TASK * TILE * self.input_width)
            .zip(y.par_chunks_mut(TILES_PER_TASK * TILE * self.output_width))
            .for_each(|(xc, yc)| {
                let mut scratch = self.scratch();
                for (xt, yt) in xc
                    .chunks(TILE * self.input_width)
                    .zip(yc.chunks_mut(TILE * self.output_width))
                {
                    self.eval_tile(xt, yt, &mut scratch);
                }
            });
    }

    fn scratch(&self) -> [Vec<f32>; 2] {
        let n = self.plan.widest() * TILE;
        [vec![0.0; n], vec![0.0; n]]
    }

    fn eval_tile(&self, x: &[f32], y: &mut [f32], scratch: &mut [Vec<f32>; 2]) {
        let n = x.len() / self.input_width;
        let [a, b] = scratch;
        let (mut src, mut dst) = (a.as_mut_slice(), b.as_mut_slice());
        let in_pad = self.layers[0].in_pad;
        src[..in_pad * TILE].iter_mut().for_each(|v| *v = 0.0);
        for (s, row) in x.chunks_exact(self.input_width).enumerate() {
            for (i, &v) in row.iter().enumerate() {
                src[i * TILE + s] = v;
            }
        }
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            matmul_tile(layer, src, dst);
            if li != last {
                activate(self.activation, &mut dst[..layer.out_pad * TILE]);
            }
            core::mem::swap(&mut src, &mut dst);
        }
        for s in 0..n {
            for o in 0..self.output_width {
                y[s * self.output_width + o] = src[o * TILE + s];
            }
        }
    }
}

#[inline]
fn matmul_tile(layer: &PackedLayer, src: &[f32], dst: &mut [f32]) {
    let nib = layer.in_pad / BLOCK;
    for ob in 0..layer.out_pad / BLOCK {
        for r in 0..BLOCK {
            let o = ob * BLOCK + r;
            let mut acc = [layer.bias[o]; TILE];
            for ib in 0..nib {
                let w = &layer.block(ob, ib)[r * BLOCK..(r + 1) * BLOCK];
                for (c, &wv) in w.iter().enumerate() {
                    let a: &[f32; TILE] =
                        src[(ib * BLOCK + c) * TILE..][..TILE].try_into().unwrap();
                    for s in 0..TILE {
                        acc[s] += wv * a[s];
                    }
                }
            }
            dst[o * TILE..(o + 1) * TILE].copy_from_slice(&acc);
        }
    }
}

fn activate(act: Activation, v: &mut [f32]) {
    match act {
        Activation::SnakeAlt => v.iter_mut().for_each(|x| {
            let s = fast_sin(*x);
            *x = 0.5 * *x + s * s;
        }),
        other => v.iter_mut().for_each(|x| *x = other.eval_f32(*x)),
    }
}

/// Raw network outputs followed by the model head, using the blocked
/// evaluator. `x` holds assembled inputs as produced by
/// [`FvsrnModel::assemble_batch`].
pub fn fused_eval(
    plan: &FusedPlan,
    model: &FvsrnModel,
    x: &[f32],
    batch: usize,
) -> Result<Vec<f32>> {
    let evaluator = FusedEvaluator::new(plan, model.mlp())?;
    let mut y = evaluator.eval(x, batch)?;
    model.apply_head(&mut y);
    Ok(y)
}
