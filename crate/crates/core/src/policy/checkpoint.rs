//! Policy checkpoint file: a versioned header describing the architecture
//! and layer shapes, followed by every parameter as little-endian 64-bit
//! floats. Round-trips are bit-exact.
//!
//! Layout:
//! - magic `GPCK` (4 bytes)
//! - format version (u32 LE)
//! - header length (u32 LE), header JSON (architecture + layer shapes)
//! - payload: network parameters in canonical order, then the policy
//!   covariance in row-major order, all f64 LE.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GaussianPolicy, Network, NetworkSpec};
use crate::error::GpsError;
use crate::Result;

const MAGIC: &[u8; 4] = b"GPCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    layers: Vec<(String, Vec<usize>)>,
    sigma_dim: usize,
}

pub fn save(policy: &GaussianPolicy, path: &Path) -> Result<()> {
    let header = Header {
        spec: policy.net.spec.clone(),
        layers: policy.net.layer_shapes(),
        sigma_dim: policy.sigma.nrows(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| GpsError::Checkpoint(format!("header encode: {e}")))?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    for v in policy.net.get_params().iter() {
        file.write_all(&v.to_le_bytes())?;
    }
    let d = policy.sigma.nrows();
    for r in 0..d {
        for c in 0..d {
            file.write_all(&policy.sigma[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<GaussianPolicy> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GpsError::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(GpsError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    file.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| GpsError::Checkpoint(format!("header decode: {e}")))?;

    let mut net = Network::init(header.spec, 0);
    let n = net.param_count();
    let mut buf = [0u8; 8];
    let mut params = nalgebra::DVector::zeros(n);
    for i in 0..n {
        file.read_exact(&mut buf)?;
        params[i] = f64::from_le_bytes(buf);
    }
    net.set_params(&params);
    let d = header.sigma_dim;
    let mut sigma = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            file.read_exact(&mut buf)?;
            sigma[(r, c)] = f64::from_le_bytes(buf);
        }
    }
    // The payload must end exactly here.
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(GpsError::Checkpoint(format!(
            "{} trailing bytes after payload",
            rest.len()
        )));
    }
    Ok(GaussianPolicy { net, sigma })
}
