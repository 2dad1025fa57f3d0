//! Binary embedding store: a `u32` little-endian header length, a JSON
//! header `{dim, count, ids}`, then `count * dim` little-endian `f32`s.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::EmbeddingVec;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    pub ids: Vec<String>,
    pub vectors: Vec<EmbeddingVec>,
}

impl EmbeddingStore {
    pub fn push(&mut self, id: impl Into<String>, v: EmbeddingVec) {
        self.ids.push(id.into());
        self.vectors.push(v);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(EmbeddingVec::dim)
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVec> {
        self.ids.iter().position(|i| i == id).map(|i| &self.vectors[i])
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    ids: Vec<String>,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_embeddings(mut w: impl Write, store: &EmbeddingStore) -> io::Result<()> {
    let dim = store.dim().unwrap_or(0);
    if store.vectors.iter().any(|v| v.dim() != dim) {
        return Err(invalid("embeddings of mixed dimension"));
    }
    let header = serde_json::to_vec(&Header {
        dim,
        count: store.len(),
        ids: store.ids.clone(),
    })
    .map_err(io::Error::other)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for v in &store.vectors {
        for x in v.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embeddings(mut r: impl Read) -> io::Result<EmbeddingStore> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| invalid(format!("embedding header: {e}")))?;
    if header.ids.len() != header.count {
        return Err(invalid("embedding header id count disagrees with count"));
    }
    let mut vectors = Vec::with_capacity(header.count);
    let mut buf = vec![0u8; header.dim * 4];
    for _ in 0..header.count {
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        vectors.push(EmbeddingVec::new(values).map_err(|e| invalid(e.to_string()))?);
    }
    Ok(EmbeddingStore { ids: header.ids, vectors })
}
