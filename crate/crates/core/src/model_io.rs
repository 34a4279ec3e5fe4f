//! Binary model files.
//!
//! All integers are little-endian `u32`, all parameters little-endian `f64`.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NDT1"
//! 4       4     precision the model was trained at (32 or 64)
//! 8       4     depth d
//! 12      4     input width
//! 16      4     number of classes
//! 20      ...   layer table, one entry per network in storage order
//!               (feature, 2^d - 1 condition networks in heap order,
//!               2^d target networks left to right):
//!                 u32 layer count, then per layer
//!                 u32 fan_in, u32 fan_out, u32 activation (0 identity, 1 tanh)
//! ...     ...   parameters, same network and layer order: for each layer
//!               the fan_in x fan_out weights row-major, then fan_out biases
//! ```
//!
//! The file must end exactly after the last parameter.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layer::{Activation, DenseLayer, Mlp};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tree::{num_internal, num_leaves, NdtModel};

pub const MAGIC: &[u8; 4] = b"NDT1";

pub fn encode<T: Scalar>(model: &NdtModel<T>, precision: u32) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    u32le(&mut out, precision as usize);
    u32le(&mut out, model.depth());
    u32le(&mut out, model.input_dim());
    u32le(&mut out, model.num_classes());
    for net in model.networks() {
        u32le(&mut out, net.layers().len());
        for l in net.layers() {
            u32le(&mut out, l.fan_in());
            u32le(&mut out, l.fan_out());
            u32le(&mut out, usize::from(l.activation().code()));
        }
    }
    for net in model.networks() {
        for l in net.layers() {
            for v in l.weights().as_slice().iter().chain(l.bias().as_slice()) {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Model {
            path: self.path.to_owned(),
            reason: format!("{} (byte offset {})", reason.into(), self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| self.fail("size overflow"))?)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

/// Decodes a model; returns it with the precision recorded in the header.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<(NdtModel<T>, u32)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic, not an NDT1 model file"));
    }
    let precision = r.u32()? as u32;
    if precision != 32 && precision != 64 {
        return Err(r.fail(format!("unsupported precision {precision}")));
    }
    let depth = r.u32()?;
    if depth > 16 {
        return Err(r.fail(format!("implausible depth {depth}")));
    }
    let input_dim = r.u32()?;
    let num_classes = r.u32()?;
    let nets = 1 + num_internal(depth) + num_leaves(depth);
    let mut table = Vec::with_capacity(nets);
    for _ in 0..nets {
        let count = r.u32()?;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let fan_in = r.u32()?;
            let fan_out = r.u32()?;
            let code = r.u32()?;
            let act = u8::try_from(code)
                .ok()
                .and_then(Activation::from_code)
                .ok_or_else(|| r.fail(format!("unknown activation code {code}")))?;
            layers.push((fan_in, fan_out, act));
        }
        table.push(layers);
    }
    let mut networks = Vec::with_capacity(nets);
    for layers in table {
        let mut built = Vec::with_capacity(layers.len());
        for (fan_in, fan_out, act) in layers {
            let w = r.f64s(fan_in * fan_out)?;
            let b = r.f64s(fan_out)?;
            let layer = DenseLayer::new(
                Tensor::<T>::from_f64(vec![fan_in, fan_out], &w)?,
                Tensor::<T>::from_f64(vec![fan_out], &b)?,
                act,
            )?;
            built.push(layer);
        }
        networks.push(Mlp::from_layers(built).map_err(|e| r.fail(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut it = networks.into_iter();
    let feature = it.next().expect("feature network present");
    let conditions: Vec<_> = it.by_ref().take(num_internal(depth)).collect();
    let targets: Vec<_> = it.collect();
    let model = NdtModel::from_parts(depth, input_dim, num_classes, feature, conditions, targets)
        .map_err(|e| Error::Model {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
    Ok((model, precision))
}

/// Writes atomically: a sibling temp file is renamed into place.
pub fn save<T: Scalar>(model: &NdtModel<T>, precision: u32, path: &Path) -> Result<()> {
    let tmp = tmp_path(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(model, precision))?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<(NdtModel<T>, u32)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}
