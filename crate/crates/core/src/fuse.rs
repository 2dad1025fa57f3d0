//! Combined exemplar model over several unit attributes.
//!
//! Every attribute distance lies in `[0, 1]`, and the distance between two
//! units is the maximum over the active attributes. Selection and scoring
//! follow the same greedy admission and nearest-exemplar rules as the
//! description-only model, so with only the description attribute active
//! the two pipelines agree exactly.
//!
//! Attributes:
//! - `class`: 0 for equal class labels, 1 otherwise;
//! - `size`: mean relative width/height difference;
//! - `trajectory`: mean per-step center-offset difference, with offsets
//!   measured in frame diagonals and divided by `trajectory_scale`;
//! - `location`: 0 for the same cell of a `grid x grid` partition, else 1;
//! - `description`: cosine distance of the description embeddings.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::exemplar::{
    self, admit_by_video, corrupt, expect_eof, nearest, read_f64, read_preamble, read_str, read_u32, read_u64, validate_threshold, write_f64,
    write_preamble, write_str, write_u32, write_u64, ExemplarError, ModelMeta, Source,
};
use crate::geom::Rect;
use crate::ingest::{Track, VideoMeta};
use crate::pairing::{Unit, UnitKind};
use crate::score::ScoreRecord;
use crate::textdist::{cosine_distance, EmbeddingVec, TextDistError};

pub const FUSED_MAGIC: &[u8; 8] = b"EXVFUSED";
pub const FUSED_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("no active attributes")]
    NoActiveAttributes,
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("description attribute is active but a unit has no description embedding")]
    MissingDescription,
    #[error("trajectory lengths differ: {0} vs {1}")]
    TrajectoryLength(usize, usize),
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("unit {unit} refers to unknown track {object}")]
    UnknownTrack { unit: String, object: String },
    #[error(transparent)]
    Model(#[from] ExemplarError),
    #[error(transparent)]
    TextDist(#[from] TextDistError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Class,
    Size,
    Trajectory,
    Location,
    Description,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Class,
        Attribute::Size,
        Attribute::Trajectory,
        Attribute::Location,
        Attribute::Description,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Attribute::Class => "class",
            Attribute::Size => "size",
            Attribute::Trajectory => "trajectory",
            Attribute::Location => "location",
            Attribute::Description => "description",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| FuseError::UnknownAttribute(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub active: Vec<Attribute>,
    /// Trajectory scale, in frame diagonals per step.
    pub trajectory_scale: f64,
    pub grid: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            active: Attribute::ALL.to_vec(),
            trajectory_scale: 0.05,
            grid: 4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FuseError> {
        if self.active.is_empty() {
            return Err(FuseError::NoActiveAttributes);
        }
        if !(self.trajectory_scale > 0.0 && self.trajectory_scale.is_finite()) {
            return Err(FuseError::Config("trajectory_scale must be positive".into()));
        }
        if self.grid == 0 {
            return Err(FuseError::Config("grid must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_active(mut self, active: &[Attribute]) -> Self {
        self.active = active.to_vec();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeVector {
    pub class_label: String,
    /// Width and height in pixels.
    pub size: (f64, f64),
    /// Per-step center offsets in frame diagonals.
    pub trajectory: Vec<(f64, f64)>,
    pub grid_cell: (u32, u32),
    pub description: Option<EmbeddingVec>,
}

fn merged_box(tracks: &[&Track], frame: u64) -> Rect {
    tracks
        .iter()
        .map(|t| t.bbox_at(frame).to_rect())
        .reduce(|a, b| a.union(&b))
        .expect("units have at least one member")
}

/// Attributes of a unit from its member tracks at `[t, t + delta]`.
pub fn extract_attributes(
    unit: &Unit,
    tracks: &HashMap<String, Track>,
    meta: &VideoMeta,
    grid: u32,
    description: Option<EmbeddingVec>,
) -> Result<AttributeVector, FuseError> {
    let members: Vec<&Track> = unit
        .members
        .iter()
        .map(|m| {
            tracks.get(m).ok_or_else(|| FuseError::UnknownTrack {
                unit: unit.unit_id.clone(),
                object: m.clone(),
            })
        })
        .collect::<Result<_, _>>()?;
    let t = unit.anchor_frame;
    let at_t = merged_box(&members, t);
    let diag = meta.diagonal();
    let mut trajectory = Vec::with_capacity(unit.delta as usize);
    let mut prev = at_t.center();
    for s in 1..=unit.delta as u64 {
        let c = merged_box(&members, t + s).center();
        trajectory.push(((c.x - prev.x) / diag, (c.y - prev.y) / diag));
        prev = c;
    }
    let center = at_t.center();
    let cell = |v: f64, extent: u32| ((v / extent as f64 * grid as f64).floor().max(0.0) as u32).min(grid - 1);
    Ok(AttributeVector {
        class_label: unit.class_labels.join("+"),
        size: (at_t.width(), at_t.height()),
        trajectory,
        grid_cell: (cell(center.x, meta.width), cell(center.y, meta.height)),
        description,
    })
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

pub fn attribute_distance(a: &AttributeVector, b: &AttributeVector, attr: Attribute, cfg: &FusionConfig) -> Result<f64, FuseError> {
    let d = match attr {
        Attribute::Class => f64::from(a.class_label != b.class_label),
        Attribute::Size => (rel_diff(a.size.0, b.size.0) + rel_diff(a.size.1, b.size.1)) / 2.0,
        Attribute::Trajectory => {
            if a.trajectory.len() != b.trajectory.len() {
                return Err(FuseError::TrajectoryLength(a.trajectory.len(), b.trajectory.len()));
            }
            if a.trajectory.is_empty() {
                0.0
            } else {
                let sum: f64 = a
                    .trajectory
                    .iter()
                    .zip(&b.trajectory)
                    .map(|(p, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                    .sum();
                sum / a.trajectory.len() as f64 / cfg.trajectory_scale
            }
        }
        Attribute::Location => f64::from(a.grid_cell != b.grid_cell),
        Attribute::Description => {
            let (Some(x), Some(y)) = (&a.description, &b.description) else {
                return Err(FuseError::MissingDescription);
            };
            cosine_distance(x, y)?
        }
    };
    Ok(d.clamp(0.0, 1.0))
}

/// Maximum attribute distance over `active`.
pub fn fused_distance(a: &AttributeVector, b: &AttributeVector, active: &[Attribute], cfg: &FusionConfig) -> Result<f64, FuseError> {
    if active.is_empty() {
        return Err(FuseError::NoActiveAttributes);
    }
    let mut best = f64::NEG_INFINITY;
    for &attr in active {
        best = best.max(attribute_distance(a, b, attr, cfg)?);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedEntry {
    pub attrs: AttributeVector,
    pub text: String,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedExemplarSet {
    pub kind: UnitKind,
    pub th: f64,
    pub entries: Vec<FusedEntry>,
}

impl FusedExemplarSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_distance(&self, query: &AttributeVector, cfg: &FusionConfig) -> Result<(f64, usize), FuseError> {
        let probe = FusedEntry {
            attrs: query.clone(),
            text: String::new(),
            source: Source {
                video_id: String::new(),
                unit_id: String::new(),
                anchor_frame: 0,
            },
        };
        nearest(&probe, &self.entries, |q, e| fused_distance(&q.attrs, &e.attrs, &cfg.active, cfg))?
            .ok_or(FuseError::Model(ExemplarError::EmptyModel { kind: self.kind }))
    }
}

/// Greedy selection under the fused distance, per video and then merged in
/// lexicographic video order.
pub fn build_fused_set(stream: Vec<FusedEntry>, kind: UnitKind, th: f64, cfg: &FusionConfig) -> Result<FusedExemplarSet, FuseError> {
    validate_threshold(th)?;
    cfg.validate()?;
    let (entries, _) = admit_by_video(
        stream,
        |e: &FusedEntry| e.source.video_id.as_str(),
        th,
        |c: &FusedEntry, r: &FusedEntry| fused_distance(&c.attrs, &r.attrs, &cfg.active, cfg),
    )?;
    Ok(FusedExemplarSet { kind, th, entries })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedModel {
    pub pair: FusedExemplarSet,
    pub single: FusedExemplarSet,
    pub config: FusionConfig,
    pub meta: ModelMeta,
}

/// One test unit with its extracted attributes.
#[derive(Clone, Debug)]
pub struct FusedItem {
    pub unit: Unit,
    pub text: String,
    pub attrs: AttributeVector,
}

pub fn score_fused(item: &FusedItem, model: &FusedModel) -> Result<ScoreRecord, FuseError> {
    let set = match item.unit.kind {
        UnitKind::Pair => &model.pair,
        UnitKind::Single => &model.single,
    };
    let (score, idx) = set.min_distance(&item.attrs, &model.config)?;
    Ok(ScoreRecord {
        unit_id: item.unit.unit_id.clone(),
        kind: item.unit.kind,
        anchor_frame: item.unit.anchor_frame,
        delta: item.unit.delta,
        members: item.unit.members.clone(),
        score,
        nearest_exemplar_index: idx,
        nearest_text: set.entries[idx].text.clone(),
        own_text: item.text.clone(),
    })
}

pub fn score_fused_batch(items: &[FusedItem], model: &FusedModel, exec: Exec) -> Result<Vec<ScoreRecord>, FuseError> {
    exec.try_map(items, |it| score_fused(it, model))
}

#[derive(Serialize, Deserialize)]
struct FusedHeader {
    version: u32,
    th: f64,
    active: Vec<Attribute>,
    trajectory_scale: f64,
    grid: u32,
    trajectory_len: usize,
    dim: usize,
    backend_id: String,
    describe_backend: String,
    config_hash: String,
    counts: [usize; 2],
    /// Attributes of the reference methods that this model does not carry.
    inactive: Vec<String>,
}

fn write_set(w: &mut impl Write, set: &FusedExemplarSet, dim: usize) -> io::Result<()> {
    for e in &set.entries {
        write_str(w, &e.attrs.class_label)?;
        write_f64(w, e.attrs.size.0)?;
        write_f64(w, e.attrs.size.1)?;
        write_u32(w, e.attrs.grid_cell.0)?;
        write_u32(w, e.attrs.grid_cell.1)?;
        for &(dx, dy) in &e.attrs.trajectory {
            write_f64(w, dx)?;
            write_f64(w, dy)?;
        }
    }
    if dim > 0 {
        for e in &set.entries {
            for x in e.attrs.description.as_ref().map(EmbeddingVec::as_slice).unwrap_or(&[]) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    for e in &set.entries {
        write_str(w, &e.text)?;
    }
    for e in &set.entries {
        write_str(w, &e.source.video_id)?;
        write_str(w, &e.source.unit_id)?;
        write_u64(w, e.source.anchor_frame)?;
    }
    Ok(())
}

fn read_set(r: &mut impl Read, kind: UnitKind, count: usize, th: f64, traj_len: usize, dim: usize) -> Result<FusedExemplarSet, ExemplarError> {
    let mut attrs = Vec::with_capacity(count);
    for _ in 0..count {
        let class_label = read_str(r)?;
        let size = (read_f64(r)?, read_f64(r)?);
        let grid_cell = (read_u32(r)?, read_u32(r)?);
        let mut trajectory = Vec::with_capacity(traj_len);
        for _ in 0..traj_len {
            trajectory.push((read_f64(r)?, read_f64(r)?));
        }
        attrs.push(AttributeVector {
            class_label,
            size,
            trajectory,
            grid_cell,
            description: None,
        });
    }
    if dim > 0 {
        for a in &mut attrs {
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(f32::from_bits(read_u32(r)?));
            }
            a.description = Some(EmbeddingVec::new(values).map_err(|e| corrupt(format!("embedding block: {e}")))?);
        }
    }
    let mut texts = Vec::with_capacity(count);
    for _ in 0..count {
        texts.push(read_str(r)?);
    }
    let mut entries = Vec::with_capacity(count);
    for (attrs, text) in attrs.into_iter().zip(texts) {
        let video_id = read_str(r)?;
        let unit_id = read_str(r)?;
        let anchor_frame = read_u64(r)?;
        entries.push(FusedEntry {
            attrs,
            text,
            source: Source {
                video_id,
                unit_id,
                anchor_frame,
            },
        });
    }
    Ok(FusedExemplarSet { kind, th, entries })
}

impl FusedModel {
    fn entries(&self) -> impl Iterator<Item = &FusedEntry> {
        self.pair.entries.iter().chain(&self.single.entries)
    }

    pub fn dim(&self) -> usize {
        self.entries()
            .find_map(|e| e.attrs.description.as_ref().map(EmbeddingVec::dim))
            .unwrap_or(0)
    }

    fn trajectory_len(&self) -> usize {
        self.entries().next().map(|e| e.attrs.trajectory.len()).unwrap_or(0)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ExemplarError> {
        let dim = self.dim();
        let traj_len = self.trajectory_len();
        for e in self.entries() {
            if e.attrs.trajectory.len() != traj_len {
                return Err(ExemplarError::Inconsistent("trajectory lengths differ".into()));
            }
            if e.attrs.description.as_ref().map(EmbeddingVec::dim).unwrap_or(0) != dim {
                return Err(ExemplarError::Inconsistent("description embeddings must all be present with one dimension, or all absent".into()));
            }
        }
        let header = FusedHeader {
            version: FUSED_VERSION,
            th: self.pair.th,
            active: self.config.active.clone(),
            trajectory_scale: self.config.trajectory_scale,
            grid: self.config.grid,
            trajectory_len: traj_len,
            dim,
            backend_id: self.meta.embed_backend.clone(),
            describe_backend: self.meta.describe_backend.clone(),
            config_hash: self.meta.config_hash.clone(),
            counts: [self.pair.len(), self.single.len()],
            inactive: vec!["pose".into()],
        };
        let header = serde_json::to_vec(&header).map_err(io::Error::other)?;
        write_preamble(w, FUSED_MAGIC, FUSED_VERSION, &header)?;
        write_set(w, &self.pair, dim)?;
        write_set(w, &self.single, dim)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ExemplarError> {
        let raw = read_preamble(r, FUSED_MAGIC, FUSED_VERSION)?;
        let h: FusedHeader = serde_json::from_slice(&raw).map_err(|e| corrupt(format!("header: {e}")))?;
        validate_threshold(h.th).map_err(|e| corrupt(e.to_string()))?;
        let pair = read_set(r, UnitKind::Pair, h.counts[0], h.th, h.trajectory_len, h.dim)?;
        let single = read_set(r, UnitKind::Single, h.counts[1], h.th, h.trajectory_len, h.dim)?;
        expect_eof(r)?;
        let config = FusionConfig {
            active: h.active,
            trajectory_scale: h.trajectory_scale,
            grid: h.grid,
        };
        config.validate().map_err(|e| corrupt(e.to_string()))?;
        Ok(Self {
            pair,
            single,
            config,
            meta: ModelMeta {
                embed_backend: h.backend_id,
                describe_backend: h.describe_backend,
                config_hash: h.config_hash,
            },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ExemplarError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExemplarError> {
        exemplar::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self, ExemplarError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BBox;

    fn av(class: &str, size: (f64, f64), step: (f64, f64), cell: (u32, u32), desc: Option<&[f32]>) -> AttributeVector {
        AttributeVector {
            class_label: class.into(),
            size,
            trajectory: vec![step; 30],
            grid_cell: cell,
            description: desc.map(|d| EmbeddingVec::new(d.to_vec()).unwrap()),
        }
    }

    fn entry(a: AttributeVector, video: &str, t: u64) -> FusedEntry {
        FusedEntry {
            attrs: a,
            text: format!("unit {t}"),
            source: Source {
                video_id: video.into(),
                unit_id: format!("{t}:x"),
                anchor_frame: t,
            },
        }
    }

    #[test]
    fn identical_vectors_are_zero_on_every_attribute() {
        let a = av("person", (40.0, 80.0), (0.001, 0.0), (1, 2), Some(&[0.6, 0.8]));
        let cfg = FusionConfig::default();
        for attr in Attribute::ALL {
            assert_eq!(attribute_distance(&a, &a, attr, &cfg).unwrap(), 0.0, "{attr}");
        }
    }

    #[test]
    fn attribute_examples() {
        let cfg = FusionConfig::default();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let a = av("person", (40.0, 80.0), (0.0, 0.0), (0, 0), Some(&[1.0, 0.0]));
        let b = av("car", (80.0, 80.0), (0.025, 0.0), (0, 1), Some(&[h, h]));
        assert_eq!(attribute_distance(&a, &b, Attribute::Class, &cfg).unwrap(), 1.0);
        assert_eq!(attribute_distance(&a, &b, Attribute::Size, &cfg).unwrap(), 0.25);
        assert!((attribute_distance(&a, &b, Attribute::Trajectory, &cfg).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(attribute_distance(&a, &b, Attribute::Location, &cfg).unwrap(), 1.0);
        let d = attribute_distance(&a, &b, Attribute::Description, &cfg).unwrap();
        assert!((d - 0.29289).abs() < 1e-5);
        let far = av("person", (40.0, 80.0), (1.0, 1.0), (0, 0), None);
        assert_eq!(attribute_distance(&a, &far, Attribute::Trajectory, &cfg).unwrap(), 1.0);
        assert!(matches!(
            attribute_distance(&a, &far, Attribute::Description, &cfg),
            Err(FuseError::MissingDescription)
        ));
    }

    #[test]
    fn fused_distance_is_the_maximum() {
        let cfg = FusionConfig::default();
        let a = av("person", (40.0, 80.0), (0.0, 0.0), (0, 0), Some(&[1.0, 0.0, 0.0]));
        let b = av("person", (40.0, 100.0), (0.0, 0.0), (0, 0), Some(&[0.0, 1.0, 0.0]));
        let without = fused_distance(&a, &b, &[Attribute::Class, Attribute::Size], &cfg).unwrap();
        assert_eq!(without, 0.1);
        let with = fused_distance(&a, &b, &[Attribute::Class, Attribute::Size, Attribute::Description], &cfg).unwrap();
        assert_eq!(with, 1.0);
        assert!(matches!(fused_distance(&a, &b, &[], &cfg), Err(FuseError::NoActiveAttributes)));
    }

    #[test]
    fn class_only_model_keeps_one_entry_per_class() {
        let cfg = FusionConfig::default().with_active(&[Attribute::Class]);
        let stream: Vec<FusedEntry> = (0..20)
            .map(|i| entry(av(if i % 3 == 0 { "car" } else { "person" }, (10.0 + i as f64, 20.0), (0.0, 0.0), (0, 0), None), "v", i))
            .collect();
        for th in [0.1, 0.5, 0.99] {
            assert_eq!(build_fused_set(stream.clone(), UnitKind::Single, th, &cfg).unwrap().len(), 2);
        }
    }

    #[test]
    fn extraction_from_tracks() {
        let meta = VideoMeta {
            video_id: "v".into(),
            width: 1000,
            height: 1000,
            frames: 100,
            fps: 30.0,
        };
        let track = |id: &str, x: f64| Track {
            object_id: id.into(),
            samples: vec![(0, BBox::new(x, 300.0, 20.0, 40.0)), (30, BBox::new(x + 30.0, 300.0, 20.0, 40.0))],
        };
        let tracks: HashMap<String, Track> = [("a".to_string(), track("a", 100.0)), ("b".to_string(), track("b", 200.0))].into_iter().collect();
        let unit = Unit {
            unit_id: "0:a+b".into(),
            kind: UnitKind::Pair,
            members: vec!["a".into(), "b".into()],
            class_labels: vec!["person".into(), "dog".into()],
            anchor_frame: 0,
            delta: 30,
        };
        let a = extract_attributes(&unit, &tracks, &meta, 4, None).unwrap();
        assert_eq!(a.class_label, "person+dog");
        assert_eq!(a.size, (120.0, 40.0));
        assert_eq!(a.grid_cell, (0, 1));
        assert_eq!(a.trajectory.len(), 30);
        let step = 1.0 / meta.diagonal();
        assert!(a.trajectory.iter().all(|&(dx, dy)| (dx - step).abs() < 1e-12 && dy == 0.0));
    }

    #[test]
    fn fused_model_round_trip() {
        let cfg = FusionConfig::default();
        let pair = FusedExemplarSet {
            kind: UnitKind::Pair,
            th: 0.65,
            entries: vec![entry(av("person+person", (90.0, 80.0), (0.001, 0.0), (1, 1), Some(&[0.6, 0.8])), "v", 0)],
        };
        let single = FusedExemplarSet {
            kind: UnitKind::Single,
            th: 0.65,
            entries: vec![
                entry(av("car", (90.0, 50.0), (0.01, 0.0), (2, 1), Some(&[1.0, 0.0])), "v", 30),
                entry(av("person", (40.0, 80.0), (0.0, 0.002), (3, 3), Some(&[0.0, 1.0])), "w", 60),
            ],
        };
        let m = FusedModel {
            pair,
            single,
            config: cfg,
            meta: ModelMeta::default(),
        };
        let bytes = m.to_bytes().unwrap();
        let back = FusedModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FusedModel::read_from(&mut bad.as_slice()), Err(ExemplarError::ModelFormat(_))));
    }
}
