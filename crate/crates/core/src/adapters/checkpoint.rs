//! Portable checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "HYPSCKPT"
//! 8       4     u32 container version (1)
//! 12      4     u32 manifest length L
//! 16      L     manifest, UTF-8 JSON
//! 16+L    4     u32 tensor count T
//! then T records:
//!         4     u32 name length N
//!         N     name, UTF-8
//!         8     u64 rows
//!         8     u64 cols
//!         8·rows·cols  f64 entries, row-major
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdaptedLinear, AdapterSpec, Variant};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CONTAINER_MAGIC: &[u8; 8] = b"HYPSCKPT";
pub const CONTAINER_VERSION: u32 = 1;

/// Manifest JSON plus named matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: serde_json::Value,
    pub tensors: Vec<(String, Matrix)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("json values always serialize");
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != CONTAINER_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let manifest: serde_json::Value = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::format(at, format!("manifest is not valid JSON: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
                .to_string();
            let at = r.pos;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::format(at, format!("tensor {name:?} declares {rows}x{cols}, beyond the payload")))?;
            let data: Vec<f64> = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let m = Matrix::new(rows, cols, data).map_err(|e| Error::format(at, format!("tensor {name:?}: {e}")))?;
            tensors.push((name, m));
        }
        if r.remaining() != 0 {
            return Err(Error::format(r.pos, "trailing bytes after last tensor"));
        }
        Ok(Container { manifest, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format(
                self.pos,
                format!("truncated: need {n} bytes, {} remain", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn write_container(container: &Container, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&container.to_bytes())?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    Container::from_bytes(&std::fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub m: usize,
    pub n: usize,
}

/// Manifest of an adapter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub kind: String,
    pub variant: Variant,
    pub rank_a: usize,
    pub rank_b: usize,
    pub scale_a: f64,
    pub scale_b: f64,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<serde_json::Value>,
}

impl AdapterManifest {
    pub fn spec(&self) -> AdapterSpec {
        AdapterSpec {
            variant: self.variant,
            rank_a: self.rank_a,
            rank_b: self.rank_b,
            scale_a: self.scale_a,
            scale_b: self.scale_b,
        }
    }
}

/// Writes named adapted layers; every parameter matrix is stored as
/// `<layer>.<param>`.
pub fn write_adapter_checkpoint(layers: &[(String, AdaptedLinear)], spec: &AdapterSpec, path: &Path) -> Result<()> {
    let manifest = AdapterManifest {
        kind: "adapters".into(),
        variant: spec.variant,
        rank_a: spec.rank_a,
        rank_b: spec.rank_b,
        scale_a: spec.scale_a,
        scale_b: spec.scale_b,
        layers: layers
            .iter()
            .map(|(name, l)| LayerEntry {
                name: name.clone(),
                m: l.out_dim(),
                n: l.in_dim(),
            })
            .collect(),
        architecture: None,
    };
    let mut tensors = Vec::new();
    for (name, l) in layers {
        for (p, m, _) in l.params() {
            tensors.push((format!("{name}.{p}"), m.clone()));
        }
    }
    let container = Container {
        manifest: serde_json::to_value(&manifest).expect("manifest serializes"),
        tensors,
    };
    write_container(&container, path)
}

/// Inverse of [`write_adapter_checkpoint`].
pub fn read_adapter_checkpoint(path: &Path) -> Result<(AdapterSpec, Vec<(String, AdaptedLinear)>)> {
    let c = read_container(path)?;
    let manifest: AdapterManifest = serde_json::from_value(c.manifest.clone())
        .map_err(|e| Error::format(16, format!("not an adapter manifest: {e}")))?;
    let spec = manifest.spec();
    let get = |name: &str| -> Result<Matrix> {
        c.tensor(name)
            .cloned()
            .ok_or_else(|| Error::format(0, format!("missing tensor {name:?}")))
    };
    let v = spec.variant;
    let mut layers = Vec::new();
    for entry in &manifest.layers {
        let n = &entry.name;
        let base = super::LinearLayer {
            w: get(&format!("{n}.w"))?,
            b: get(&format!("{n}.b"))?,
            frozen: v.is_low_rank(),
        };
        let lora = if v.has_parallel() {
            Some(super::LoraBranch {
                a_up: get(&format!("{n}.lora.a_up"))?,
                a_down: get(&format!("{n}.lora.a_down"))?,
                scale: spec.scale_a,
            })
        } else {
            None
        };
        let seq = if v.has_sequential() {
            Some(super::SeqLoraBranch {
                b_up: get(&format!("{n}.seq.b_up"))?,
                b_down: get(&format!("{n}.seq.b_down"))?,
                scale: spec.scale_b,
            })
        } else {
            None
        };
        let pissa = if v.has_split() {
            Some(super::PissaSplit {
                w_pri_up: get(&format!("{n}.pissa.up"))?,
                w_pri_down: get(&format!("{n}.pissa.down"))?,
                w_res: get(&format!("{n}.pissa.res"))?,
            })
        } else {
            None
        };
        if base.w.shape() != (entry.m, entry.n) {
            return Err(Error::format(0, format!("layer {n} declared {}x{} but stores {:?}", entry.m, entry.n, base.w.shape())));
        }
        layers.push((
            n.clone(),
            AdaptedLinear {
                base,
                spec,
                lora,
                seq,
                pissa,
            },
        ));
    }
    Ok((spec, layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{init_adapted, LinearLayer};
    use crate::linalg::{normal_matrix, Rng};

    #[test]
    fn adapter_checkpoint_round_trip() {
        let mut rng = Rng::new(3);
        let spec = AdapterSpec::new(Variant::CPS, 2).with_scales(0.5, 2.0);
        let mut layers = Vec::new();
        for (i, (m, n)) in [(4, 4), (8, 4)].into_iter().enumerate() {
            let l = LinearLayer::new(normal_matrix(m, n, 1.0, &mut rng), normal_matrix(m, 1, 1.0, &mut rng)).unwrap();
            let mut a = init_adapted(l, spec, &mut rng).unwrap();
            a.lora.as_mut().unwrap().a_up = normal_matrix(m, 2, 1.0, &mut rng);
            layers.push((format!("layer{i}"), a));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        write_adapter_checkpoint(&layers, &spec, &path).unwrap();
        let (spec2, back) = read_adapter_checkpoint(&path).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(back, layers);
    }

    #[test]
    fn malformed_containers_error() {
        let c = Container {
            manifest: serde_json::json!({"k": 1}),
            tensors: vec![("x".into(), Matrix::identity(2))],
        };
        let bytes = c.to_bytes();
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
        for cut in 0..bytes.len() {
            assert!(Container::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Container::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut huge = bytes.clone();
        // rows field of the single tensor
        let rows_at = 16 + serde_json::to_vec(&c.manifest).unwrap().len() + 4 + 4 + 1;
        huge[rows_at..rows_at + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Container::from_bytes(&huge).is_err());
    }
}
