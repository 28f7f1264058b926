//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "ECDB" | version u16
//! B b e s H k seed          (u32 each)
//! C   b×B f32 (one-hot columns)
//! Â   B×B f32
//! blob count u32, then per blob:
//!     name length u16 | UTF-8 name | element count u32 | f32 payload
//! ```
//!
//! Blobs are the model parameters in declaration order, followed by
//! `config.similarity_metric` (0 = L2, 1 = L1) and, once trained,
//! `state.band_weights`. Parameter shapes follow from the config block.

use std::collections::HashMap;
use std::path::Path;

use super::model::{EcdbsModel, FrozenGraph, ModelConfig, Parameterized};
use super::NetworkError;
use crate::band_graph::AssignmentMatrix;
use crate::band_select::SimilarityMetric;
use crate::real::Real;
use crate::rng::{stream, Stream};

const MAGIC: &[u8; 4] = b"ECDB";
const VERSION: u16 = 1;
const METRIC_BLOB: &str = "config.similarity_metric";
const WEIGHTS_BLOB: &str = "state.band_weights";

fn to_u32(v: u64, what: &str) -> Result<u32, NetworkError> {
    u32::try_from(v).map_err(|_| NetworkError::Malformed(format!("{what} {v} does not fit in u32")))
}

pub fn encode_checkpoint<T: Real>(model: &EcdbsModel<T>) -> Result<Vec<u8>, NetworkError> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [
        (c.bands as u64, "band count"),
        (c.clusters as u64, "cluster count"),
        (c.expansion as u64, "expansion"),
        (c.patch_size as u64, "patch size"),
        (c.hidden as u64, "hidden width"),
        (c.neighbors as u64, "neighbour count"),
        (c.seed, "seed"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    for v in model
        .graph
        .clusters
        .to_dense()
        .iter()
        .chain(&model.graph.a_hat)
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut blobs: Vec<(String, Vec<f32>)> = model
        .parameters()
        .into_iter()
        .map(|(n, t)| {
            (
                n,
                t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            )
        })
        .collect();
    let metric = match c.similarity_metric {
        SimilarityMetric::L2 => 0.0,
        SimilarityMetric::L1 => 1.0,
    };
    blobs.push((METRIC_BLOB.into(), vec![metric]));
    if let Some(w) = &model.band_weights {
        blobs.push((WEIGHTS_BLOB.into(), w.iter().map(|&v| v as f32).collect()));
    }
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, data) in blobs {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        let end = self.pos.checked_add(n).ok_or(NetworkError::Truncated)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(NetworkError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NetworkError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NetworkError> {
        let raw = self.take(n.checked_mul(4).ok_or(NetworkError::Truncated)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<EcdbsModel<T>, NetworkError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r
        .take(4)
        .map_err(|_| NetworkError::BadMagic([0; 4]))?
        .try_into()
        .unwrap();
    if &magic != MAGIC {
        return Err(NetworkError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(NetworkError::UnsupportedVersion(version));
    }
    let mut cfg = [0usize; 7];
    for v in &mut cfg {
        *v = r.u32()? as usize;
    }
    let [bands, clusters, expansion, patch_size, hidden, neighbors, seed] = cfg;
    let mut config = ModelConfig {
        bands,
        clusters,
        expansion,
        patch_size,
        hidden,
        neighbors,
        seed: seed as u64,
        similarity_metric: SimilarityMetric::L2,
    };
    config.validate()?;
    let dense = r.f32s(clusters * bands)?;
    let a_hat = r.f32s(bands * bands)?;
    let graph = FrozenGraph {
        a_hat,
        clusters: AssignmentMatrix::from_dense(clusters, bands, &dense)?,
    };
    let count = r.u32()? as usize;
    let mut blobs: HashMap<String, Vec<f32>> = HashMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| NetworkError::Malformed("blob name is not UTF-8".into()))?
            .to_string();
        let n = r.u32()? as usize;
        let data = r.f32s(n)?;
        if blobs.insert(name.clone(), data).is_some() {
            return Err(NetworkError::Malformed(format!("duplicate blob `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(NetworkError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if let Some(m) = blobs.remove(METRIC_BLOB) {
        config.similarity_metric = match m.as_slice() {
            [v] if *v == 0.0 => SimilarityMetric::L2,
            [v] if *v == 1.0 => SimilarityMetric::L1,
            _ => return Err(NetworkError::Malformed("bad similarity metric blob".into())),
        };
    }
    // The init draw is discarded; every parameter is overwritten below.
    let mut model = EcdbsModel::<T>::init(config, graph, &mut stream(0, Stream::Init))?;
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    for (name, tensor) in names.iter().zip(model.parameters_mut()) {
        let data = blobs
            .remove(name)
            .ok_or_else(|| NetworkError::MissingBlob(name.clone()))?;
        if data.len() != tensor.numel() {
            return Err(NetworkError::BlobSize {
                name: name.clone(),
                expected: tensor.numel(),
                got: data.len(),
            });
        }
        for (dst, src) in tensor.data_mut().iter_mut().zip(data) {
            *dst = T::of(f64::from(src));
        }
    }
    if let Some(w) = blobs.remove(WEIGHTS_BLOB) {
        if w.len() != bands {
            return Err(NetworkError::BlobSize {
                name: WEIGHTS_BLOB.into(),
                expected: bands,
                got: w.len(),
            });
        }
        model.band_weights = Some(w.into_iter().map(f64::from).collect());
    }
    if let Some(name) = blobs.keys().min() {
        return Err(NetworkError::Malformed(format!("unknown blob `{name}`")));
    }
    Ok(model)
}

pub fn write_checkpoint<T: Real>(
    model: &EcdbsModel<T>,
    path: impl AsRef<Path>,
) -> Result<(), NetworkError> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<EcdbsModel<T>, NetworkError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
