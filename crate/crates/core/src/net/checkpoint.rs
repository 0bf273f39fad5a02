//! Checkpoint layout: one line of compact JSON describing every tensor,
//! followed by the tensors' values as little-endian f32 in header order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EsmNet, NetConfig};
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

const FORMAT: &str = "spixel-checkpoint";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    buffer: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    iteration: u64,
    config: NetConfig,
    tensors: Vec<Entry>,
}

/// A network together with the iteration it was saved at.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: EsmNet<f32>,
    pub iteration: u64,
}

pub fn save_checkpoint(path: &Path, net: &EsmNet<f32>, iteration: u64) -> Result<()> {
    let entries = |v: &[Param<f32>], buffer| {
        v.iter()
            .map(|p| Entry { name: p.name.clone(), shape: p.value.shape().to_vec(), buffer })
            .collect::<Vec<_>>()
    };
    let mut tensors = entries(net.params(), false);
    tensors.extend(entries(net.buffers(), true));
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        seed: net.seed(),
        iteration,
        config: net.config().clone(),
        tensors,
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    for p in net.params().iter().chain(net.buffers()) {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::format(path, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 4 {
        return Err(Error::format(path, format!("payload has {} bytes, header implies {}", payload.len(), expected * 4)));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let (mut params, mut buffers) = (Vec::new(), Vec::new());
    for entry in header.tensors {
        let n = entry.shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        let p = Param::new(entry.name, Tensor::new(&entry.shape, data)?);
        if entry.buffer {
            buffers.push(p);
        } else {
            params.push(p);
        }
    }
    let net = EsmNet::from_parts(header.config, header.seed, params, buffers)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(Checkpoint { net, iteration: header.iteration })
}
