//! Little-endian block encoding shared by the nominal and fused model files.

use std::io::{self, Read, Write};

use crate::textdist::EmbeddingVec;

use super::{Exemplar, ExemplarError, Source};

pub(crate) fn corrupt(msg: impl std::fmt::Display) -> ExemplarError {
    ExemplarError::ModelFormat(msg.to_string())
}

fn io_corrupt(e: io::Error) -> ExemplarError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        corrupt("model file is truncated")
    } else {
        ExemplarError::Io(e)
    }
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32, ExemplarError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_corrupt)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64, ExemplarError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_corrupt)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64, ExemplarError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_corrupt)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_bytes(r: &mut impl Read, len: usize) -> Result<Vec<u8>, ExemplarError> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(io_corrupt)?;
    Ok(b)
}

pub(crate) fn read_str(r: &mut impl Read) -> Result<String, ExemplarError> {
    let len = read_u32(r)? as usize;
    String::from_utf8(read_bytes(r, len)?).map_err(|_| corrupt("string block is not UTF-8"))
}

/// Writes magic, version and a length-prefixed JSON header.
pub(crate) fn write_preamble(w: &mut impl Write, magic: &[u8; 8], version: u32, header: &[u8]) -> io::Result<()> {
    w.write_all(magic)?;
    write_u32(w, version)?;
    write_u32(w, header.len() as u32)?;
    w.write_all(header)
}

/// Reads and checks magic and version, returning the raw JSON header.
pub(crate) fn read_preamble(r: &mut impl Read, magic: &[u8; 8], version: u32) -> Result<Vec<u8>, ExemplarError> {
    let got = read_bytes(r, 8)?;
    if got != magic {
        return Err(corrupt("bad magic; not a model file of this kind"));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(ExemplarError::ModelFormat(format!(
            "unsupported model version {v} (expected {version})"
        )));
    }
    let len = read_u32(r)? as usize;
    read_bytes(r, len)
}

/// Embeddings block, texts block and sources block for one entry list.
pub(crate) fn write_entries(w: &mut impl Write, entries: &[Exemplar]) -> io::Result<()> {
    for e in entries {
        for x in e.embedding.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for e in entries {
        write_str(w, &e.text)?;
    }
    for e in entries {
        write_str(w, &e.source.video_id)?;
        write_str(w, &e.source.unit_id)?;
        write_u64(w, e.source.anchor_frame)?;
    }
    Ok(())
}

pub(crate) fn read_entries(r: &mut impl Read, count: usize, dim: usize) -> Result<Vec<Exemplar>, ExemplarError> {
    let mut embeddings = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = read_bytes(r, dim * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        embeddings.push(EmbeddingVec::new(values).map_err(|e| corrupt(format!("embedding block: {e}")))?);
    }
    let mut texts = Vec::with_capacity(count);
    for _ in 0..count {
        texts.push(read_str(r)?);
    }
    let mut entries = Vec::with_capacity(count);
    for (embedding, text) in embeddings.into_iter().zip(texts) {
        let video_id = read_str(r)?;
        let unit_id = read_str(r)?;
        let anchor_frame = read_u64(r)?;
        entries.push(Exemplar {
            embedding,
            text,
            source: Source {
                video_id,
                unit_id,
                anchor_frame,
            },
        });
    }
    Ok(entries)
}

pub(crate) fn expect_eof(r: &mut impl Read) -> Result<(), ExemplarError> {
    let mut b = [0u8; 1];
    match r.read(&mut b) {
        Ok(0) => Ok(()),
        Ok(_) => Err(corrupt("trailing bytes after model payload")),
        Err(e) => Err(ExemplarError::Io(e)),
    }
}
