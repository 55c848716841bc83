//! RFG1 grid files: magic `RFG1`, u32 LE `nx ny nz channels`, six f32 LE AABB
//! bounds (min xyz, max xyz), then `nx*ny*nz*channels` f32 LE values with x
//! fastest and channels outermost.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::relu_field::{Aabb, FeatureGrid, CHANNELS};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RFG1";

pub fn encode_grid(grid: &FeatureGrid) -> Vec<u8> {
    let dims = grid.dims();
    let mut out = Vec::with_capacity(4 + 16 + 24 + grid.data().len() * 4);
    out.extend_from_slice(MAGIC);
    for n in [dims[0], dims[1], dims[2], CHANNELS] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    let aabb = grid.aabb();
    for v in aabb.min.iter().chain(&aabb.max) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<FeatureGrid> {
    if bytes.len() < 44 || &bytes[..4] != MAGIC {
        return Err(Error::Schema("not an RFG1 grid file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (nx, ny, nz, ch) = (u32_at(4), u32_at(8), u32_at(12), u32_at(16));
    if ch != CHANNELS {
        return Err(Error::Schema(format!("RFG1 grid has {ch} channels, expected {CHANNELS}")));
    }
    let bounds: Vec<f64> = (0..6).map(|k| f32_at(20 + 4 * k) as f64).collect();
    let aabb = Aabb::new([bounds[0], bounds[1], bounds[2]], [bounds[3], bounds[4], bounds[5]])
        .map_err(|e| Error::Schema(e.to_string()))?;
    let count = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(ch))
        .ok_or_else(|| Error::Schema("RFG1 dimensions overflow".into()))?;
    let payload = &bytes[44..];
    if payload.len() != count * 4 {
        return Err(Error::Schema(format!(
            "RFG1 payload has {} bytes, header implies {}",
            payload.len(),
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureGrid::from_tensor(Tensor::from_vec([ch, nz, ny, nx], data)?, aabb)
}

pub fn write_grid(grid: &FeatureGrid, path: &Path) -> Result<()> {
    fs::write(path, encode_grid(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<FeatureGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}
