//! Unit formation: object pairs under the pseudo-depth distance threshold
//! and the single objects left over.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geom::Point;
use crate::ingest::{Detection, VideoMeta};

pub const DEFAULT_DELTA: u32 = 30;

#[derive(Debug, Error, PartialEq)]
pub enum PairingError {
    #[error("pairing threshold h must be positive, got {0}")]
    Threshold(f64),
    #[error("delta must be at least 1")]
    Delta,
    #[error("stride must be at least 1")]
    Stride,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Pair,
    Single,
}

impl UnitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnitKind::Pair => "pair",
            UnitKind::Single => "single",
        }
    }
}

/// A scoring subject: an object pair or a single object anchored at frame
/// `anchor_frame` with horizon `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub unit_id: String,
    pub kind: UnitKind,
    pub members: Vec<String>,
    pub class_labels: Vec<String>,
    pub anchor_frame: u64,
    pub delta: u32,
}

impl Unit {
    pub fn make_id(anchor_frame: u64, members: &[String]) -> String {
        format!("{anchor_frame}:{}", members.join("+"))
    }

    fn new(anchor_frame: u64, delta: u32, objects: &[&Detection]) -> Self {
        let members: Vec<String> = objects.iter().map(|d| d.object_id.clone()).collect();
        let kind = if members.len() == 2 {
            UnitKind::Pair
        } else {
            UnitKind::Single
        };
        Self {
            unit_id: Self::make_id(anchor_frame, &members),
            kind,
            class_labels: objects.iter().map(|d| d.class_label.clone()).collect(),
            members,
            anchor_frame,
            delta,
        }
    }

    /// Globally unique key of this unit inside a corpus of videos.
    pub fn key(&self, video_id: &str) -> String {
        format!("{video_id}/{}", self.unit_id)
    }

    /// Frames `[t, t + delta)` the unit speaks for.
    pub fn frames(&self) -> std::ops::Range<u64> {
        self.anchor_frame..self.anchor_frame + self.delta as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingConfig {
    /// Pairing distance threshold in pixels; pairs need `d < h`.
    pub h: f64,
    pub delta: u32,
    pub stride: u32,
}

impl PairingConfig {
    /// Scene-relative default: `h = 0.25 * diag(W, H)`, `delta = stride = 30`.
    pub fn for_video(meta: &VideoMeta) -> Self {
        Self {
            h: 0.25 * meta.diagonal(),
            delta: DEFAULT_DELTA,
            stride: DEFAULT_DELTA,
        }
    }

    pub fn validate(&self) -> Result<(), PairingError> {
        if !(self.h > 0.0) {
            return Err(PairingError::Threshold(self.h));
        }
        if self.delta == 0 {
            return Err(PairingError::Delta);
        }
        if self.stride == 0 {
            return Err(PairingError::Stride);
        }
        Ok(())
    }
}

/// 3D distance between two object centers using `z = |y1 - y2|` as
/// pseudo-depth, i.e. `sqrt(dx^2 + 2 dy^2)`.
pub fn pseudo_depth_distance(a: Point, b: Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let z = dy.abs();
    (dx * dx + dy * dy + z * z).sqrt()
}

/// Forms the units of one frame.
///
/// Every unordered pair with distance strictly below `h` becomes a pair unit;
/// objects in no pair become single units. Pairs come first, each group
/// ordered by member ids.
pub fn build_units(frame_objects: &[Detection], cfg: &PairingConfig) -> Vec<Unit> {
    let Some(first) = frame_objects.first() else {
        return Vec::new();
    };
    let t = first.frame_idx;
    debug_assert!(frame_objects.iter().all(|d| d.frame_idx == t));

    let mut objects: Vec<&Detection> = frame_objects.iter().collect();
    objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));

    let mut paired = vec![false; objects.len()];
    let mut units = Vec::new();
    for i in 0..objects.len() {
        for j in i + 1..objects.len() {
            let d = pseudo_depth_distance(objects[i].bbox.center(), objects[j].bbox.center());
            if d < cfg.h {
                paired[i] = true;
                paired[j] = true;
                units.push(Unit::new(t, cfg.delta, &[objects[i], objects[j]]));
            }
        }
    }
    for (obj, _) in objects.iter().zip(&paired).filter(|(_, &p)| !p) {
        units.push(Unit::new(t, cfg.delta, &[obj]));
    }
    units
}

/// Anchor frames `0, stride, 2*stride, ...` that still have a future frame
/// `t + delta` inside the video.
pub fn schedule_anchors(meta: &VideoMeta, cfg: &PairingConfig) -> Vec<u64> {
    let delta = cfg.delta as u64;
    (0..meta.frames)
        .step_by(cfg.stride.max(1) as usize)
        .take_while(|t| t + delta < meta.frames)
        .collect()
}

/// Units for every scheduled anchor. `dets` must be sorted by frame.
pub fn build_all_units(
    dets: &[Detection],
    meta: &VideoMeta,
    cfg: &PairingConfig,
    exec: Exec,
) -> Vec<Unit> {
    let anchors = schedule_anchors(meta, cfg);
    exec.flat_map(&anchors, |&t| {
        let lo = dets.partition_point(|d| d.frame_idx < t);
        let hi = dets.partition_point(|d| d.frame_idx <= t);
        build_units(&dets[lo..hi], cfg)
    })
}
