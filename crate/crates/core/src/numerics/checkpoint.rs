//! Model checkpoint file.
//!
//! ```text
//! "EMR1"
//! u32 version (= 1)
//! u32 net count
//! per net:   str name, u32 input dim, u32 layer count,
//!            per layer: u32 in, u32 out, u8 activation (0 identity, 1 relu, 2 tanh)
//! u64 total parameter count
//! per net, per layer: weight block (in*out f64, row-major), bias block (out f64)
//! u64 extension length + extension bytes (opaque, owned by the trainer)
//! ```
//!
//! All integers and floats are little-endian; strings are `u32` length + UTF-8.

use std::path::Path;

use super::matrix::Matrix;
use super::net::{Activation, Layer, ProjectionNet};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMR1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub nets: Vec<(String, ProjectionNet)>,
    pub extension: Vec<u8>,
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Option<&ProjectionNet> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        write_nets(&mut w, &self.nets);
        w.blob(&self.extension);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let nets = read_nets(&mut r)?;
        let extension = r.blob()?.to_vec();
        r.finish()?;
        Ok(Self { nets, extension })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Header then parameter blocks for a list of named nets.
pub fn write_nets(w: &mut ByteWriter, nets: &[(String, ProjectionNet)]) {
    w.u32(nets.len() as u32);
    let mut total = 0u64;
    for (name, net) in nets {
        w.str(name);
        w.u32(net.input_dim() as u32);
        w.u32(net.layers().len() as u32);
        for layer in net.layers() {
            w.u32(layer.input_dim() as u32);
            w.u32(layer.output_dim() as u32);
            w.u8(layer.activation.code());
        }
        total += net.param_count() as u64;
    }
    w.u64(total);
    for (_, net) in nets {
        for layer in net.layers() {
            w.f64s(layer.weight.data());
            w.f64s(&layer.bias);
        }
    }
}

pub fn read_nets(r: &mut ByteReader<'_>) -> Result<Vec<(String, ProjectionNet)>> {
    let count = r.u32()? as usize;
    let mut headers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name = r.str()?;
        let input_dim = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let fan_in = r.u32()? as usize;
            let fan_out = r.u32()? as usize;
            let code = r.u8()?;
            let act = Activation::from_code(code)
                .ok_or_else(|| Error::format("checkpoint", format!("unknown activation code {code}")))?;
            layers.push((fan_in, fan_out, act));
        }
        if layers.first().map(|l| l.0) != Some(input_dim) {
            return Err(Error::format(
                "checkpoint",
                format!("net `{name}` input dim {input_dim} disagrees with its first layer"),
            ));
        }
        headers.push((name, layers));
    }
    let total = r.u64()?;
    let expected: u64 = headers
        .iter()
        .flat_map(|(_, ls)| ls.iter())
        .map(|&(i, o, _)| (i * o + o) as u64)
        .sum();
    if total != expected {
        return Err(Error::format(
            "checkpoint",
            format!("parameter count {total} disagrees with layer spec ({expected})"),
        ));
    }
    let mut nets = Vec::with_capacity(headers.len());
    for (name, specs) in headers {
        let mut layers = Vec::with_capacity(specs.len());
        for (fan_in, fan_out, activation) in specs {
            let weight = Matrix::from_vec(fan_in, fan_out, r.f64s(fan_in * fan_out)?)?;
            let bias = r.f64s(fan_out)?;
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        let net = ProjectionNet::from_layers(layers)
            .map_err(|e| Error::format("checkpoint", format!("net `{name}`: {e}")))?;
        nets.push((name, net));
    }
    Ok(nets)
}
