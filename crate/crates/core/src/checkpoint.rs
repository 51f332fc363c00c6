//! Single-file checkpoints.
//!
//! ```text
//! "LGCK"  u32 manifest length  manifest (JSON)  f32 blobs (LE)  u32 CRC32
//! ```
//!
//! The CRC covers every byte before it. The manifest records the format
//! version, a kind tag, free-form metadata, and for each tensor its name,
//! shape, byte offset into the blob region and element count.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{ConvParams, DenseParams, LayerParams, NetworkWeights};
use crate::error::{Error, Result};
use crate::genome::{GeneLayerWeights, LearngeneStructure, LearngeneWeights};
use crate::netspec::NetworkSpec;

pub const MAGIC: &[u8; 4] = b"LGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: Value) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((name.into(), shape, data));
    }

    pub fn tensor(&self, name: &str) -> Result<&[f32]> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, d)| d.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, shape, data) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                count: data.len() as u64,
            });
            offset += 4 * data.len() as u64;
        }
        let manifest = serde_json::to_vec(&Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(12 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, _, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("missing LGCK magic".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mlen = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
        if 8 + mlen > body.len() {
            return Err(Error::Checkpoint("manifest length exceeds file".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[8..8 + mlen])?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let blobs = &body[8 + mlen..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for t in manifest.tensors {
            let start = t.offset as usize;
            let end = start + 4 * t.count as usize;
            if end > blobs.len() || t.shape.iter().product::<usize>() as u64 != t.count {
                return Err(Error::Checkpoint(format!("tensor `{}` out of bounds", t.name)));
            }
            let data = blobs[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push((t.name, t.shape, data));
        }
        Ok(Checkpoint {
            kind: manifest.kind,
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn meta_field<T: for<'de> Deserialize<'de>>(meta: &Value, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("manifest missing `{key}`")))?;
    Ok(serde_json::from_value(v.clone())?)
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    if ck.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", ck.kind)));
    }
    Ok(())
}

impl NetworkWeights<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("network", serde_json::json!({ "spec": self.spec }));
        for (layer, p) in self.spec.layers.iter().zip(&self.layers) {
            let id = layer.layer_id;
            match p {
                LayerParams::Conv(c) => {
                    ck.push(format!("L{id}.weight"), vec![c.kernels, c.channels, c.kernel_h, c.kernel_w], c.weight.clone());
                    ck.push(format!("L{id}.bias"), vec![c.kernels], c.bias.clone());
                }
                LayerParams::Dense(d) => {
                    ck.push(format!("L{id}.weight"), vec![d.outputs, d.inputs], d.weight.clone());
                    ck.push(format!("L{id}.bias"), vec![d.outputs], d.bias.clone());
                }
                LayerParams::None => {}
            }
        }
        ck.push("head.weight", vec![self.head.outputs, self.head.inputs], self.head.weight.clone());
        ck.push("head.bias", vec![self.head.outputs], self.head.bias.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        expect_kind(ck, "network")?;
        let spec: NetworkSpec = meta_field(&ck.meta, "spec")?;
        let mut w = NetworkWeights::<f32>::zeros(&spec)?;
        for (layer, p) in spec.layers.iter().zip(w.layers.iter_mut()) {
            let id = layer.layer_id;
            let (weight, bias) = match p {
                LayerParams::Conv(ConvParams { weight, bias, .. })
                | LayerParams::Dense(DenseParams { weight, bias, .. }) => (weight, bias),
                LayerParams::None => continue,
            };
            copy_exact(weight, ck.tensor(&format!("L{id}.weight"))?, id)?;
            copy_exact(bias, ck.tensor(&format!("L{id}.bias"))?, id)?;
        }
        let head_id = spec.layers.len() + 1;
        copy_exact(&mut w.head.weight, ck.tensor("head.weight")?, head_id)?;
        copy_exact(&mut w.head.bias, ck.tensor("head.bias")?, head_id)?;
        if !w.all_finite() {
            return Err(Error::Checkpoint("non-finite weights".into()));
        }
        Ok(w)
    }
}

fn copy_exact(dst: &mut [f32], src: &[f32], layer_id: usize) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Shape {
            layer_id,
            reason: format!("checkpoint holds {} values, spec needs {}", src.len(), dst.len()),
        });
    }
    dst.copy_from_slice(src);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GeneMeta {
    gene_id: String,
    parent_id: Option<String>,
    spec: NetworkSpec,
    structure: LearngeneStructure,
    kernel_sizes: Vec<[usize; 2]>,
}

/// Manifest metadata and tensors of a gene, with tensor names prefixed.
pub fn gene_parts(gene: &LearngeneWeights, prefix: &str) -> (Value, Vec<(String, Vec<usize>, Vec<f32>)>) {
    let meta = GeneMeta {
        gene_id: gene.gene_id.clone(),
        parent_id: gene.parent_id.clone(),
        spec: gene.spec.clone(),
        structure: gene.structure.clone(),
        kernel_sizes: gene.values.iter().map(|v| [v.kernel_h, v.kernel_w]).collect(),
    };
    let mut tensors = Vec::new();
    for (g, v) in gene.structure.layers.iter().zip(&gene.values) {
        tensors.push((
            format!("{prefix}L{}.weight", g.layer_id),
            vec![g.kernels.len(), g.channels.len(), v.kernel_h, v.kernel_w],
            v.weights.clone(),
        ));
        tensors.push((format!("{prefix}L{}.bias", g.layer_id), vec![g.kernels.len()], v.bias.clone()));
    }
    (serde_json::to_value(meta).expect("serializable"), tensors)
}

pub fn gene_from_parts(meta: &Value, ck: &Checkpoint, prefix: &str) -> Result<LearngeneWeights> {
    let meta: GeneMeta = serde_json::from_value(meta.clone())?;
    if meta.kernel_sizes.len() != meta.structure.layers.len() {
        return Err(Error::Checkpoint("gene kernel sizes do not match structure".into()));
    }
    let mut values = Vec::with_capacity(meta.structure.layers.len());
    for (g, [kh, kw]) in meta.structure.layers.iter().zip(&meta.kernel_sizes) {
        values.push(GeneLayerWeights {
            layer_id: g.layer_id,
            kernel_h: *kh,
            kernel_w: *kw,
            weights: ck.tensor(&format!("{prefix}L{}.weight", g.layer_id))?.to_vec(),
            bias: ck.tensor(&format!("{prefix}L{}.bias", g.layer_id))?.to_vec(),
        });
    }
    let gene = LearngeneWeights {
        gene_id: meta.gene_id,
        parent_id: meta.parent_id,
        spec: meta.spec,
        structure: meta.structure,
        values,
    };
    gene.check()?;
    Ok(gene)
}

impl LearngeneWeights {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let (meta, tensors) = gene_parts(self, "");
        let mut ck = Checkpoint::new("learngene", meta);
        for (n, s, d) in tensors {
            ck.push(n, s, d);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        expect_kind(ck, "learngene")?;
        gene_from_parts(&ck.meta, ck, "")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl NetworkWeights<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
