//! Anomaly scoring against the nominal model and projection of unit scores
//! onto object regions and frames.
//!
//! A unit's score is its distance to the nearest exemplar of the matching
//! kind. Projection gives every member object's box the unit score for each
//! frame in `[t, t + delta)`; regions and frames combine by maximum.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::exemplar::{ExemplarError, NominalModel};
use crate::geom::Rect;
use crate::ingest::{Track, VideoMeta};
use crate::pairing::{Unit, UnitKind};
use crate::textdist::{EmbeddingVec, TextDistError};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Model(#[from] ExemplarError),
    #[error(transparent)]
    TextDist(#[from] TextDistError),
    #[error("unit {unit} refers to unknown track {object}")]
    UnknownTrack { unit: String, object: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub unit_id: String,
    pub kind: UnitKind,
    pub anchor_frame: u64,
    pub delta: u32,
    pub members: Vec<String>,
    pub score: f64,
    pub nearest_exemplar_index: usize,
    pub nearest_text: String,
    pub own_text: String,
}

/// Scores one embedded description against the set matching the unit kind.
pub fn score_embedded(
    unit: &Unit,
    text: &str,
    embedding: &EmbeddingVec,
    model: &NominalModel,
) -> Result<ScoreRecord, ScoreError> {
    let dim = model.dim();
    if dim != 0 && embedding.dim() != dim {
        return Err(TextDistError::DimMismatch {
            expected: dim,
            got: embedding.dim(),
        }
        .into());
    }
    let set = model.set_for(unit.kind);
    let (score, idx) = set.min_distance(embedding, text)?;
    Ok(ScoreRecord {
        unit_id: unit.unit_id.clone(),
        kind: unit.kind,
        anchor_frame: unit.anchor_frame,
        delta: unit.delta,
        members: unit.members.clone(),
        score,
        nearest_exemplar_index: idx,
        nearest_text: set.entries[idx].text.clone(),
        own_text: text.to_string(),
    })
}

/// Embeds `text` with `embedder` and scores it.
pub fn score_unit(
    unit: &Unit,
    text: &str,
    model: &NominalModel,
    embedder: &dyn crate::textdist::EmbedBackend,
) -> Result<ScoreRecord, ScoreError> {
    let embedding = crate::textdist::embed(embedder, text)?;
    score_embedded(unit, text, &embedding, model)
}

/// One already-embedded description ready for scoring.
#[derive(Clone, Debug)]
pub struct ScoringItem {
    pub unit: Unit,
    pub text: String,
    pub embedding: EmbeddingVec,
}

pub fn score_batch(items: &[ScoringItem], model: &NominalModel, exec: Exec) -> Result<Vec<ScoreRecord>, ScoreError> {
    exec.try_map(items, |it| score_embedded(&it.unit, &it.text, &it.embedding, model))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionScore {
    pub frame_idx: u64,
    pub rect: Rect,
    pub score: f64,
}

/// Per-frame maximum score, 0 where no unit is active.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScoreSeries {
    pub values: Vec<f64>,
}

impl FrameScoreSeries {
    pub fn zeros(frames: u64) -> Self {
        Self {
            values: vec![0.0; frames as usize],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn project_scores(
    records: &[ScoreRecord],
    tracks: &HashMap<String, Track>,
    meta: &VideoMeta,
    exec: Exec,
) -> Result<(Vec<RegionScore>, FrameScoreSeries), ScoreError> {
    let (w, h) = (meta.width as f64, meta.height as f64);
    let per_record = exec.try_map(records, |rec| {
        let members: Vec<&Track> = rec
            .members
            .iter()
            .map(|m| {
                tracks.get(m).ok_or_else(|| ScoreError::UnknownTrack {
                    unit: rec.unit_id.clone(),
                    object: m.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let end = (rec.anchor_frame + rec.delta as u64).min(meta.frames);
        let mut out = Vec::with_capacity((end.saturating_sub(rec.anchor_frame) as usize) * members.len());
        for f in rec.anchor_frame..end {
            for t in &members {
                out.push(RegionScore {
                    frame_idx: f,
                    rect: t.bbox_at(f).to_rect().clamp_to(w, h),
                    score: rec.score,
                });
            }
        }
        Ok::<_, ScoreError>(out)
    })?;
    let regions: Vec<RegionScore> = per_record.into_iter().flatten().collect();
    let mut series = FrameScoreSeries::zeros(meta.frames);
    for r in &regions {
        let v = &mut series.values[r.frame_idx as usize];
        if r.score > *v {
            *v = r.score;
        }
    }
    Ok((regions, series))
}

/// Human-readable explanation of one scored unit.
pub fn explain(rec: &ScoreRecord) -> String {
    let label = if rec.score == 0.0 { "nominal" } else { "deviates from nominal" };
    let last = rec.anchor_frame + rec.delta.max(1) as u64 - 1;
    let mut s = String::new();
    let _ = writeln!(s, "unit {} [{}] score {:.5} ({label})", rec.unit_id, rec.kind.as_str(), rec.score);
    let _ = writeln!(s, "  members: {}", rec.members.join(", "));
    let _ = writeln!(s, "  frames:  {}..={}", rec.anchor_frame, last);
    let _ = writeln!(s, "  observed: {}", rec.own_text);
    let _ = writeln!(s, "  nearest nominal (exemplar {}): {}", rec.nearest_exemplar_index, rec.nearest_text);
    s
}

/// The `n` highest-scoring records, descending; equal scores keep input order.
pub fn top_n(records: &[ScoreRecord], n: usize) -> Vec<&ScoreRecord> {
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    sorted.truncate(n);
    sorted
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    unit: String,
    kind: UnitKind,
    t: u64,
    score: f64,
    nearest_text: String,
    own_text: String,
    delta: u32,
    members: Vec<String>,
    nearest_index: usize,
}

#[derive(Serialize, Deserialize)]
struct RegionLine {
    frame: u64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<T>, ScoreError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ScoreError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_scores(mut w: impl Write, records: &[ScoreRecord]) -> io::Result<()> {
    for r in records {
        let line = ScoreLine {
            unit: r.unit_id.clone(),
            kind: r.kind,
            t: r.anchor_frame,
            score: r.score,
            nearest_text: r.nearest_text.clone(),
            own_text: r.own_text.clone(),
            delta: r.delta,
            members: r.members.clone(),
            nearest_index: r.nearest_exemplar_index,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scores(reader: impl BufRead) -> Result<Vec<ScoreRecord>, ScoreError> {
    Ok(read_jsonl::<ScoreLine>(reader)?
        .into_iter()
        .map(|l| ScoreRecord {
            unit_id: l.unit,
            kind: l.kind,
            anchor_frame: l.t,
            delta: l.delta,
            members: l.members,
            score: l.score,
            nearest_exemplar_index: l.nearest_index,
            nearest_text: l.nearest_text,
            own_text: l.own_text,
        })
        .collect())
}

pub fn write_regions(mut w: impl Write, regions: &[RegionScore]) -> io::Result<()> {
    for r in regions {
        let line = RegionLine {
            frame: r.frame_idx,
            x1: r.rect.x_min,
            y1: r.rect.y_min,
            x2: r.rect.x_max,
            y2: r.rect.y_max,
            score: r.score,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_regions(reader: impl BufRead) -> Result<Vec<RegionScore>, ScoreError> {
    Ok(read_jsonl::<RegionLine>(reader)?
        .into_iter()
        .map(|l| RegionScore {
            frame_idx: l.frame,
            rect: Rect::new(l.x1, l.y1, l.x2, l.y2),
            score: l.score,
        })
        .collect())
}

pub fn write_frames(mut w: impl Write, series: &FrameScoreSeries) -> io::Result<()> {
    writeln!(w, "frame_idx,score")?;
    for (i, v) in series.values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}

pub fn read_frames(reader: impl BufRead) -> Result<FrameScoreSeries, ScoreError> {
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ScoreError::Parse { line: i + 1, message };
        let (idx, score) = line.split_once(',').ok_or_else(|| bad("expected frame_idx,score".into()))?;
        let idx: usize = idx.trim().parse().map_err(|e| bad(format!("frame index: {e}")))?;
        if idx != values.len() {
            return Err(bad(format!("frame {idx} out of sequence")));
        }
        values.push(score.trim().parse().map_err(|e| bad(format!("score: {e}")))?);
    }
    Ok(FrameScoreSeries { values })
}
