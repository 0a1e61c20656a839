//! `.fvsrn` checkpoints.
//!
//! Layout (little endian): magic `FVSN`, u32 version, u32 header length,
//! UTF-8 JSON [`Header`], then the binary payload. Weights are stored layer
//! by layer (weights row-major, then bias) as f32 or f16. Each latent grid
//! is either raw f32 values or a per-channel `(min, max)` f32 table
//! followed by u8 codes.

use std::path::Path;

use fvsrn_core::grid::{KeyframeGrids, LatentGrid, QuantizedLatentGrid};
use fvsrn_core::mlp::{Layer, Mlp};
use fvsrn_core::model::{FvsrnModel, GridPrecision, Latent, ModelConfig, WeightPrecision};
use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"FVSN";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    /// Offset from the start of the payload.
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub weight_precision: WeightPrecision,
    pub grid_precision: GridPrecision,
    /// `(inputs, outputs)` per layer.
    pub layers: Vec<(usize, usize)>,
    pub weights: Section,
    pub grids: Vec<Section>,
    pub payload_bytes: usize,
    /// Dimensions of the volume the model was trained on, used to convert
    /// stepsizes given in voxels.
    #[serde(default)]
    pub volume_dims: Option<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaveOptions {
    pub weights: WeightPrecision,
    pub grid: GridPrecision,
    pub volume_dims: Option<[usize; 3]>,
}

impl Default for SaveOptions {
    fn default() -> Self {
        Self {
            weights: WeightPrecision::F32,
            grid: GridPrecision::F32,
            volume_dims: None,
        }
    }
}

fn push_weights(out: &mut Vec<u8>, values: &[f32], precision: WeightPrecision) {
    for &v in values {
        match precision {
            WeightPrecision::F32 => out.extend_from_slice(&v.to_le_bytes()),
            WeightPrecision::F16 => out.extend_from_slice(&f16::from_f32(v).to_le_bytes()),
        }
    }
}

fn push_grid(out: &mut Vec<u8>, grid: &LatentGrid, precision: GridPrecision) {
    match precision {
        GridPrecision::F32 => {
            for v in grid.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        GridPrecision::U8 => {
            let q = grid.quantize();
            for &(lo, hi) in q.ranges() {
                out.extend_from_slice(&lo.to_le_bytes());
                out.extend_from_slice(&hi.to_le_bytes());
            }
            out.extend_from_slice(q.codes());
        }
    }
}

pub fn encode(model: &FvsrnModel, opts: &SaveOptions) -> Result<Vec<u8>> {
    let (weights, grid) = (opts.weights, opts.grid);
    let mut payload = Vec::new();
    for layer in model.mlp().layers() {
        push_weights(&mut payload, &layer.weights, weights);
        push_weights(&mut payload, &layer.bias, weights);
    }
    let weight_section = Section {
        offset: 0,
        length: payload.len(),
    };
    let mut grids = Vec::new();
    for g in model.latent().grids() {
        let offset = payload.len();
        push_grid(&mut payload, g, grid);
        grids.push(Section {
            offset,
            length: payload.len() - offset,
        });
    }
    let header = Header {
        config: model.config().clone(),
        weight_precision: weights,
        grid_precision: grid,
        layers: model
            .mlp()
            .layers()
            .iter()
            .map(|l| (l.inputs(), l.outputs()))
            .collect(),
        weights: weight_section,
        grids,
        payload_bytes: payload.len(),
        volume_dims: opts.volume_dims,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn read_f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
}

fn read_weights(bytes: &[u8], precision: WeightPrecision) -> Vec<f32> {
    match precision {
        WeightPrecision::F32 => read_f32s(bytes).collect(),
        WeightPrecision::F16 => bytes
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
    }
}

/// Reads the header without touching the payload.
pub fn decode_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < PREAMBLE {
        return Err(Error::format(
            bytes.len(),
            format!("preamble needs {PREAMBLE} bytes"),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let end = PREAMBLE + len;
    if bytes.len() < end {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..end])
        .map_err(|e| Error::format(PREAMBLE, format!("header: {e}")))?;
    Ok((header, end))
}

pub fn decode(bytes: &[u8]) -> Result<FvsrnModel> {
    decode_with_header(bytes).map(|(_, m)| m)
}

pub fn decode_with_header(bytes: &[u8]) -> Result<(Header, FvsrnModel)> {
    let (h, start) = decode_header(bytes)?;
    let payload = &bytes[start..];
    if payload.len() != h.payload_bytes {
        return Err(Error::format(
            bytes.len(),
            format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                h.payload_bytes
            ),
        ));
    }
    let section = |s: &Section, what: &str| -> Result<&[u8]> {
        s.offset
            .checked_add(s.length)
            .filter(|&e| e <= payload.len())
            .map(|e| &payload[s.offset..e])
            .ok_or_else(|| Error::format(start + s.offset, format!("{what} section out of bounds")))
    };

    let weight_size = match h.weight_precision {
        WeightPrecision::F32 => 4,
        WeightPrecision::F16 => 2,
    };
    let expected: usize = h
        .layers
        .iter()
        .map(|&(i, o)| (i * o + o) * weight_size)
        .sum();
    if h.weights.length != expected {
        return Err(Error::format(
            start,
            format!(
                "weight section is {} bytes, layer shapes need {expected}",
                h.weights.length
            ),
        ));
    }
    let values = read_weights(section(&h.weights, "weight")?, h.weight_precision);
    let mut layers = Vec::with_capacity(h.layers.len());
    let mut at = 0;
    for &(i, o) in &h.layers {
        let w = values[at..at + i * o].to_vec();
        let b = values[at + i * o..at + i * o + o].to_vec();
        at += i * o + o;
        layers.push(Layer::new(i, o, w, b)?);
    }
    let mlp = Mlp::new(layers, h.config.activation)?;

    let grids = match h.config.grid {
        None => Vec::new(),
        Some(g) => {
            let n = g.resolution.pow(3) * g.channels;
            let mut out = Vec::with_capacity(h.grids.len());
            for s in &h.grids {
                let raw = section(s, "grid")?;
                let want = match h.grid_precision {
                    GridPrecision::F32 => 4 * n,
                    GridPrecision::U8 => n + 8 * g.channels,
                };
                if raw.len() != want {
                    return Err(Error::format(
                        start + s.offset,
                        format!("grid section is {} bytes, expected {want}", raw.len()),
                    ));
                }
                let grid = match h.grid_precision {
                    GridPrecision::F32 => {
                        LatentGrid::from_values(g.resolution, g.channels, read_f32s(raw).collect())?
                    }
                    GridPrecision::U8 => {
                        let table = 8 * g.channels;
                        let ranges: Vec<(f32, f32)> = read_f32s(&raw[..table])
                            .collect::<Vec<_>>()
                            .chunks_exact(2)
                            .map(|c| (c[0], c[1]))
                            .collect();
                        QuantizedLatentGrid::from_parts(
                            g.resolution,
                            g.channels,
                            raw[table..].to_vec(),
                            ranges,
                        )?
                        .dequantize()
                    }
                };
                out.push(grid);
            }
            out
        }
    };
    let latent = match (&h.config.grid, &h.config.temporal) {
        (None, _) => Latent::None,
        (Some(_), None) if grids.len() == 1 => Latent::Static(grids.into_iter().next().unwrap()),
        (Some(_), Some(t)) => Latent::Keyframes(KeyframeGrids::new(t.keyframes.clone(), grids)?),
        (Some(_), None) => {
            return Err(Error::format(
                start,
                format!("static model needs one grid, found {}", grids.len()),
            ))
        }
    };
    let model = FvsrnModel::from_parts(h.config.clone(), mlp, latent)?;
    Ok((h, model))
}

pub fn save(model: &FvsrnModel, path: &Path, opts: &SaveOptions) -> Result<()> {
    std::fs::write(path, encode(model, opts)?).at(path)
}

pub fn load(path: &Path) -> Result<FvsrnModel> {
    decode(&std::fs::read(path).at(path)?)
}

pub fn load_with_header(path: &Path) -> Result<(Header, FvsrnModel)> {
    decode_with_header(&std::fs::read(path).at(path)?)
}
