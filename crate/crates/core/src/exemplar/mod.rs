//! The nominal model: greedily selected exemplar descriptions, one set for
//! object pairs and one for single objects.
//!
//! Selection walks the description stream in order. The first element is
//! always admitted; every later element is admitted only if its distance to
//! the nearest exemplar admitted so far is strictly greater than `th`.
//! Elements at exactly `th` are rejected.

mod format;

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairing::UnitKind;
use crate::textdist::{DistanceKind, EmbeddingVec, TextDistError};

pub(crate) use format::{corrupt, expect_eof, read_entries, read_preamble, write_entries, write_preamble};
pub(crate) use format::{read_f64, read_str, read_u32, read_u64, write_f64, write_str, write_u32, write_u64};

pub const DEFAULT_TH: f64 = 0.65;
pub const MODEL_MAGIC: &[u8; 8] = b"EXVMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExemplarError {
    #[error("selection threshold must be finite and in (0, 2), got {0}")]
    InvalidThreshold(f64),
    #[error("the {} exemplar set is empty", .kind.as_str())]
    EmptyModel { kind: UnitKind },
    #[error("exemplar text is empty")]
    EmptyText,
    #[error("inconsistent exemplar sets: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Distance(#[from] TextDistError),
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub video_id: String,
    pub unit_id: String,
    pub anchor_frame: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exemplar {
    pub embedding: EmbeddingVec,
    pub text: String,
    pub source: Source,
}

impl Exemplar {
    pub fn new(embedding: EmbeddingVec, text: impl Into<String>, source: Source) -> Result<Self, ExemplarError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ExemplarError::EmptyText);
        }
        Ok(Self { embedding, text, source })
    }
}

/// A stream element that was not admitted, with the earlier exemplar that
/// covered it.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub stream_index: usize,
    pub nearest: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Admission {
    /// Stream indices of admitted elements, in admission order.
    pub admitted: Vec<usize>,
    pub rejections: Vec<Rejection>,
}

/// Nearest entry to `query` under `dist(query, entry)`; ties go to the
/// lowest index. `None` for an empty slice.
pub fn nearest<T, E>(
    query: &T,
    entries: &[T],
    mut dist: impl FnMut(&T, &T) -> Result<f64, E>,
) -> Result<Option<(f64, usize)>, E> {
    let mut best: Option<(f64, usize)> = None;
    for (i, e) in entries.iter().enumerate() {
        let d = dist(query, e)?;
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, i));
        }
    }
    Ok(best)
}

/// Greedy streaming admission over an arbitrary item type.
pub fn greedy_admit<T: Clone, E>(
    stream: &[T],
    th: f64,
    mut dist: impl FnMut(&T, &T) -> Result<f64, E>,
) -> Result<Admission, E> {
    let mut chosen: Vec<T> = Vec::new();
    let mut admitted = Vec::new();
    let mut rejections = Vec::new();
    for (i, item) in stream.iter().enumerate() {
        match nearest(item, &chosen, &mut dist)? {
            Some((d, j)) if d <= th => rejections.push(Rejection {
                stream_index: i,
                nearest: j,
                distance: d,
            }),
            _ => {
                chosen.push(item.clone());
                admitted.push(i);
            }
        }
    }
    Ok(Admission { admitted, rejections })
}

pub fn validate_threshold(th: f64) -> Result<(), ExemplarError> {
    if th.is_finite() && th > 0.0 && th < 2.0 {
        Ok(())
    } else {
        Err(ExemplarError::InvalidThreshold(th))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarSet {
    pub kind: UnitKind,
    pub th: f64,
    pub distance_kind: DistanceKind,
    pub entries: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn empty(kind: UnitKind, th: f64, distance_kind: DistanceKind) -> Self {
        Self {
            kind,
            th,
            distance_kind,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.embedding.dim())
    }

    /// Distance from a query description to its nearest exemplar and that
    /// exemplar's index.
    pub fn min_distance(&self, embedding: &EmbeddingVec, text: &str) -> Result<(f64, usize), ExemplarError> {
        let mut best: Option<(f64, usize)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = self
                .distance_kind
                .distance((embedding, text), (&e.embedding, &e.text))?;
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, i));
            }
        }
        best.ok_or(ExemplarError::EmptyModel { kind: self.kind })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub set: ExemplarSet,
    /// Rejected stream elements; indices refer to the stream passed in.
    pub rejections: Vec<Rejection>,
}

/// Greedy exemplar selection over `stream` in the given order.
///
/// An empty stream yields an empty set; callers decide whether that is
/// acceptable.
pub fn select_exemplars(
    stream: Vec<Exemplar>,
    kind: UnitKind,
    th: f64,
    distance_kind: DistanceKind,
) -> Result<Selection, ExemplarError> {
    validate_threshold(th)?;
    let admission = greedy_admit(&stream, th, |cand: &Exemplar, reference: &Exemplar| {
        distance_kind.distance((&cand.embedding, &cand.text), (&reference.embedding, &reference.text))
    })?;
    let mut keep = vec![false; stream.len()];
    for &i in &admission.admitted {
        keep[i] = true;
    }
    let entries = stream
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect();
    Ok(Selection {
        set: ExemplarSet {
            kind,
            th,
            distance_kind,
            entries,
        },
        rejections: admission.rejections,
    })
}

/// Merges per-video sets by re-running admission over their concatenation
/// in lexicographic `video_id` order.
pub fn merge_sets(per_video: BTreeMap<String, ExemplarSet>, kind: UnitKind, th: f64, distance_kind: DistanceKind) -> Result<Selection, ExemplarError> {
    let mut stream = Vec::new();
    for (video, set) in per_video {
        if set.kind != kind || set.th != th || set.distance_kind != distance_kind {
            return Err(ExemplarError::Inconsistent(format!(
                "set for video {video} was built with different kind, threshold or distance"
            )));
        }
        stream.extend(set.entries);
    }
    select_exemplars(stream, kind, th, distance_kind)
}

/// Admission per video, then once more over the per-video survivors
/// concatenated in lexicographic video order. Order within a video is
/// preserved; rejections refer to the concatenated stream.
pub fn admit_by_video<T: Clone, E>(
    stream: Vec<T>,
    video_of: impl Fn(&T) -> &str,
    th: f64,
    mut dist: impl FnMut(&T, &T) -> Result<f64, E>,
) -> Result<(Vec<T>, Vec<Rejection>), E> {
    let mut by_video: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for item in stream {
        by_video.entry(video_of(&item).to_string()).or_default().push(item);
    }
    let mut merged = Vec::new();
    for items in by_video.into_values() {
        let a = greedy_admit(&items, th, &mut dist)?;
        merged.extend(a.admitted.into_iter().map(|i| items[i].clone()));
    }
    let a = greedy_admit(&merged, th, &mut dist)?;
    let kept = a.admitted.iter().map(|&i| merged[i].clone()).collect();
    Ok((kept, a.rejections))
}

/// Per-video selection followed by [`merge_sets`].
pub fn build_set(stream: Vec<Exemplar>, kind: UnitKind, th: f64, distance_kind: DistanceKind) -> Result<Selection, ExemplarError> {
    validate_threshold(th)?;
    let (entries, rejections) = admit_by_video(
        stream,
        |e: &Exemplar| e.source.video_id.as_str(),
        th,
        |c: &Exemplar, r: &Exemplar| distance_kind.distance((&c.embedding, &c.text), (&r.embedding, &r.text)),
    )?;
    Ok(Selection {
        set: ExemplarSet {
            kind,
            th,
            distance_kind,
            entries,
        },
        rejections,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub embed_backend: String,
    pub describe_backend: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Counts {
    pair: usize,
    single: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    th: f64,
    distance_kind: DistanceKind,
    dim: usize,
    backend_id: String,
    describe_backend: String,
    config_hash: String,
    counts: Counts,
}

/// `E_pair`, `E_single` and build metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalModel {
    pub pair: ExemplarSet,
    pub single: ExemplarSet,
    pub meta: ModelMeta,
}

impl NominalModel {
    pub fn new(pair: ExemplarSet, single: ExemplarSet, meta: ModelMeta) -> Result<Self, ExemplarError> {
        if pair.kind != UnitKind::Pair || single.kind != UnitKind::Single {
            return Err(ExemplarError::Inconsistent("sets are not (pair, single)".into()));
        }
        if pair.th != single.th || pair.distance_kind != single.distance_kind {
            return Err(ExemplarError::Inconsistent("pair and single sets disagree on threshold or distance".into()));
        }
        let model = Self { pair, single, meta };
        let dim = model.dim();
        if model
            .pair
            .entries
            .iter()
            .chain(&model.single.entries)
            .any(|e| e.embedding.dim() != dim)
        {
            return Err(ExemplarError::Inconsistent("exemplar embeddings of mixed dimension".into()));
        }
        Ok(model)
    }

    /// Embedding dimension, 0 when both sets are empty.
    pub fn dim(&self) -> usize {
        self.pair.dim().or(self.single.dim()).unwrap_or(0)
    }

    pub fn th(&self) -> f64 {
        self.pair.th
    }

    pub fn distance_kind(&self) -> DistanceKind {
        self.pair.distance_kind
    }

    pub fn set_for(&self, kind: UnitKind) -> &ExemplarSet {
        match kind {
            UnitKind::Pair => &self.pair,
            UnitKind::Single => &self.single,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        let header = ModelHeader {
            version: MODEL_VERSION,
            th: self.th(),
            distance_kind: self.distance_kind(),
            dim: self.dim(),
            backend_id: self.meta.embed_backend.clone(),
            describe_backend: self.meta.describe_backend.clone(),
            config_hash: self.meta.config_hash.clone(),
            counts: Counts {
                pair: self.pair.len(),
                single: self.single.len(),
            },
        };
        let header = serde_json::to_vec(&header).map_err(io::Error::other)?;
        write_preamble(w, MODEL_MAGIC, MODEL_VERSION, &header)?;
        write_entries(w, &self.pair.entries)?;
        write_entries(w, &self.single.entries)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ExemplarError> {
        let raw = read_preamble(r, MODEL_MAGIC, MODEL_VERSION)?;
        let h: ModelHeader = serde_json::from_slice(&raw).map_err(|e| corrupt(format!("header: {e}")))?;
        if h.version != MODEL_VERSION {
            return Err(corrupt(format!("header version {} disagrees with preamble", h.version)));
        }
        validate_threshold(h.th).map_err(|e| corrupt(e.to_string()))?;
        let pair = read_entries(r, h.counts.pair, h.dim)?;
        let single = read_entries(r, h.counts.single, h.dim)?;
        expect_eof(r)?;
        Self::new(
            ExemplarSet {
                kind: UnitKind::Pair,
                th: h.th,
                distance_kind: h.distance_kind,
                entries: pair,
            },
            ExemplarSet {
                kind: UnitKind::Single,
                th: h.th,
                distance_kind: h.distance_kind,
                entries: single,
            },
            ModelMeta {
                embed_backend: h.backend_id,
                describe_backend: h.describe_backend,
                config_hash: h.config_hash,
            },
        )
        .map_err(|e| corrupt(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ExemplarError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, ExemplarError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExemplarError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| ExemplarError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(v: &[f32], text: &str, video: &str, t: u64) -> Exemplar {
        Exemplar::new(
            EmbeddingVec::new(v.to_vec()).unwrap(),
            text,
            Source {
                video_id: video.into(),
                unit_id: format!("{t}:a"),
                anchor_frame: t,
            },
        )
        .unwrap()
    }

    fn set(entries: Vec<Exemplar>) -> ExemplarSet {
        ExemplarSet {
            kind: UnitKind::Single,
            th: DEFAULT_TH,
            distance_kind: DistanceKind::Cosine,
            entries,
        }
    }

    #[test]
    fn first_element_is_always_admitted() {
        let s = select_exemplars(vec![ex(&[1.0, 0.0], "a", "v", 0)], UnitKind::Single, 0.65, DistanceKind::Cosine).unwrap();
        assert_eq!(s.set.len(), 1);
    }

    #[test]
    fn duplicate_rejected_orthogonal_admitted() {
        let stream = vec![
            ex(&[1.0, 0.0], "a", "v", 0),
            ex(&[1.0, 0.0], "a", "v", 30),
            ex(&[0.0, 1.0], "b", "v", 60),
        ];
        let s = select_exemplars(stream, UnitKind::Single, 0.65, DistanceKind::Cosine).unwrap();
        let kept: Vec<u64> = s.set.entries.iter().map(|e| e.source.anchor_frame).collect();
        assert_eq!(kept, vec![0, 60]);
        assert_eq!(
            s.rejections,
            vec![Rejection {
                stream_index: 1,
                nearest: 0,
                distance: 0.0
            }]
        );
    }

    #[test]
    fn identical_stream_collapses_to_one() {
        let stream = (0..50).map(|t| ex(&[0.3, 0.4, 0.5], "x", "v", t)).collect();
        let s = select_exemplars(stream, UnitKind::Pair, 0.01, DistanceKind::Cosine).unwrap();
        assert_eq!(s.set.len(), 1);
    }

    #[test]
    fn tie_at_threshold_is_rejected() {
        // distance exactly 1.0 between orthogonal unit vectors
        let stream = vec![ex(&[1.0, 0.0], "a", "v", 0), ex(&[0.0, 1.0], "b", "v", 1)];
        let s = select_exemplars(stream.clone(), UnitKind::Single, 1.0, DistanceKind::Cosine).unwrap();
        assert_eq!(s.set.len(), 1);
        let s = select_exemplars(stream, UnitKind::Single, 0.999, DistanceKind::Cosine).unwrap();
        assert_eq!(s.set.len(), 2);
    }

    #[test]
    fn empty_stream_gives_empty_set_and_bad_threshold_errors() {
        let s = select_exemplars(vec![], UnitKind::Single, 0.65, DistanceKind::Cosine).unwrap();
        assert!(s.set.is_empty());
        for th in [0.0, -1.0, 2.0, f64::NAN] {
            assert!(matches!(
                select_exemplars(vec![], UnitKind::Single, th, DistanceKind::Cosine),
                Err(ExemplarError::InvalidThreshold(_))
            ));
        }
    }

    #[test]
    fn min_distance_examples() {
        let s = set(vec![
            ex(&[1.0, 0.0, 0.0], "a", "v", 0),
            ex(&[0.0, 1.0, 0.0], "b", "v", 1),
            ex(&[0.0, 0.0, 1.0], "c", "v", 2),
        ]);
        let q = EmbeddingVec::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(s.min_distance(&q, "c").unwrap(), (0.0, 2));

        let s2 = set(vec![ex(&[1.0, 0.0, 0.0], "a", "v", 0), ex(&[0.0, 1.0, 0.0], "b", "v", 1)]);
        assert_eq!(s2.min_distance(&q, "c").unwrap(), (1.0, 0));

        let s3 = set(vec![ex(&[1.0, 0.0], "a", "v", 0), ex(&[0.0, 1.0], "b", "v", 1)]);
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let (d, i) = s3.min_distance(&EmbeddingVec::new(vec![h, h]).unwrap(), "q").unwrap();
        assert!((d - (1.0 - std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-6);
        assert_eq!(i, 0);

        assert!(matches!(set(vec![]).min_distance(&q, "c"), Err(ExemplarError::EmptyModel { .. })));
    }

    #[test]
    fn merge_runs_in_lexicographic_video_order() {
        let a = set(vec![ex(&[1.0, 0.0], "a", "b-video", 0)]);
        let b = set(vec![ex(&[1.0, 0.0], "a", "a-video", 0)]);
        let merged = merge_sets(
            [("b-video".to_string(), a), ("a-video".to_string(), b)].into_iter().collect(),
            UnitKind::Single,
            DEFAULT_TH,
            DistanceKind::Cosine,
        )
        .unwrap();
        assert_eq!(merged.set.len(), 1);
        assert_eq!(merged.set.entries[0].source.video_id, "a-video");
    }

    fn model() -> NominalModel {
        let mut pair = set(vec![ex(&[0.6, 0.8], "Two people walk.", "v1", 0)]);
        pair.kind = UnitKind::Pair;
        let single = set(vec![ex(&[1.0, 0.0], "A car drives.", "v1", 30), ex(&[0.0, 1.0], "Someone walks.", "v2", 60)]);
        NominalModel::new(
            pair,
            single,
            ModelMeta {
                embed_backend: "mock-embed-v1".into(),
                describe_backend: "mock-describe-v1".into(),
                config_hash: "abc".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let m = model();
        let bytes = m.to_bytes();
        let back = NominalModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        m.save(&path).unwrap();
        assert_eq!(NominalModel::load(&path).unwrap(), m);
    }

    #[test]
    fn corrupted_or_wrong_version_model_is_a_format_error() {
        let bytes = model().to_bytes();
        let mut bad_header = bytes.clone();
        bad_header[20] ^= 0x5a;
        assert!(matches!(
            NominalModel::read_from(&mut bad_header.as_slice()),
            Err(ExemplarError::ModelFormat(_))
        ));
        let mut bad_version = bytes.clone();
        bad_version[8] = 99;
        let err = NominalModel::read_from(&mut bad_version.as_slice()).unwrap_err();
        assert!(matches!(err, ExemplarError::ModelFormat(ref m) if m.contains("version")));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            NominalModel::read_from(&mut &truncated[..]),
            Err(ExemplarError::ModelFormat(_))
        ));
    }
}
