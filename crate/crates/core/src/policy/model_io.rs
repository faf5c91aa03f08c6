//! Binary model files: magic, versioned JSON header, raw f32 weights.
//!
//! Layout: 4-byte magic `SLDA`; u32 LE header length; that many bytes of
//! JSON header carrying the environment tag, the architecture descriptor,
//! and the format version; u64 LE weight count; then the weights as f32
//! little-endian in fixed layer order (each layer: weight matrix row-major,
//! then bias). Loading rebuilds the network from the descriptor and fails
//! if the payload length disagrees with it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{ArchDescriptor, Net, PolicyModel, MODEL_FORMAT_VERSION};

const MAGIC: [u8; 4] = *b"SLDA";
/// Headers are a few hundred bytes; anything huge means a corrupt length.
const MAX_HEADER_LEN: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Corrupt(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    environment_tag: String,
    descriptor: ArchDescriptor,
}

pub fn save_model(model: &PolicyModel, path: &Path) -> Result<(), ModelIoError> {
    let mut weights = Vec::with_capacity(model.param_count());
    write_net_weights(&model.net, &mut weights);
    let header = ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        environment_tag: model.environment_tag().to_string(),
        descriptor: model.descriptor.clone(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    out.write_all(&(weights.len() as u64).to_le_bytes())?;
    for w in &weights {
        out.write_all(&w.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PolicyModel, ModelIoError> {
    let mut input = BufReader::new(File::open(path)?);

    let magic = read_array::<4>(&mut input)?;
    if magic != MAGIC {
        return Err(ModelIoError::Corrupt("bad magic".into()));
    }
    let header_len = u32::from_le_bytes(read_array::<4>(&mut input)?);
    if header_len > MAX_HEADER_LEN {
        return Err(ModelIoError::Corrupt(format!(
            "header length {header_len} out of range"
        )));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    read_exact_or_corrupt(&mut input, &mut header_bytes)?;
    let header: ModelHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelIoError::Corrupt(format!("bad header: {e}")))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(ModelIoError::VersionMismatch {
            found: header.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    if header.environment_tag != header.descriptor.environment_tag() {
        return Err(ModelIoError::Corrupt(format!(
            "environment tag '{}' does not match descriptor '{}'",
            header.environment_tag,
            header.descriptor.environment_tag()
        )));
    }

    let count = u64::from_le_bytes(read_array::<8>(&mut input)?) as usize;
    let mut model = PolicyModel::new_random(header.descriptor, 0);
    if count != model.param_count() {
        return Err(ModelIoError::Corrupt(format!(
            "weight count {count} does not match architecture ({})",
            model.param_count()
        )));
    }
    let mut payload = vec![0u8; count * 4];
    read_exact_or_corrupt(&mut input, &mut payload)?;
    let mut floats = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    read_net_weights(&mut model.net, &mut floats)
        .ok_or_else(|| ModelIoError::Corrupt("weight payload ended early".into()))?;
    Ok(model)
}

fn read_array<const N: usize>(input: &mut impl Read) -> Result<[u8; N], ModelIoError> {
    let mut buf = [0u8; N];
    read_exact_or_corrupt(input, &mut buf)?;
    Ok(buf)
}

fn read_exact_or_corrupt(input: &mut impl Read, buf: &mut [u8]) -> Result<(), ModelIoError> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelIoError::Corrupt("truncated file".into())
        } else {
            ModelIoError::Io(e)
        }
    })
}

fn write_net_weights(net: &Net, out: &mut Vec<f32>) {
    match net {
        Net::Truss(n) => {
            for c in &n.conv {
                c.write_weights(out);
            }
            n.fc.write_weights(out);
            n.spatial.write_weights(out);
            for l in &n.sel_main {
                l.write_weights(out);
            }
            n.sel_aux.write_weights(out);
            for l in &n.head {
                l.write_weights(out);
            }
        }
        Net::Route(n) => {
            for c in &n.conv {
                c.write_weights(out);
            }
            n.img_fc.write_weights(out);
            n.loc_fc.write_weights(out);
            n.comb_fc.write_weights(out);
            n.dir_head.write_weights(out);
            for l in &n.sel_dir {
                l.write_weights(out);
            }
            n.sel_dist.write_weights(out);
            for l in &n.head {
                l.write_weights(out);
            }
        }
    }
}

fn read_net_weights(net: &mut Net, src: &mut impl Iterator<Item = f32>) -> Option<()> {
    match net {
        Net::Truss(n) => {
            for c in &mut n.conv {
                c.read_weights(src)?;
            }
            n.fc.read_weights(src)?;
            n.spatial.read_weights(src)?;
            for l in &mut n.sel_main {
                l.read_weights(src)?;
            }
            n.sel_aux.read_weights(src)?;
            for l in &mut n.head {
                l.read_weights(src)?;
            }
        }
        Net::Route(n) => {
            for c in &mut n.conv {
                c.read_weights(src)?;
            }
            n.img_fc.read_weights(src)?;
            n.loc_fc.read_weights(src)?;
            n.comb_fc.read_weights(src)?;
            n.dir_head.read_weights(src)?;
            for l in &mut n.sel_dir {
                l.read_weights(src)?;
            }
            n.sel_dist.read_weights(src)?;
            for l in &mut n.head {
                l.read_weights(src)?;
            }
        }
    }
    Some(())
}
