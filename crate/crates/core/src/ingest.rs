//! Object, track and ground-truth data model plus the line-delimited JSON
//! readers and writers for it.
//!
//! Every reader works on a [`BufRead`] one line at a time so detection files
//! for long videos never need to be held as text in memory.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Point, Rect};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate detection of object {object_id:?} in frame {frame}")]
    DuplicateIdentity {
        line: usize,
        frame: u64,
        object_id: String,
    },
    #[error("line {line}: degenerate rect ({x1}, {y1}, {x2}, {y2})")]
    DegenerateRect {
        line: usize,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },
    #[error("line {line}: box size {w}x{h} is not in (0, {limit}]")]
    InvalidBox { line: usize, w: f64, h: f64, limit: f64 },
    #[error("region {index} of track {track} lies outside the {width}x{height} frame")]
    RegionOutOfFrame {
        index: usize,
        track: u64,
        width: u32,
        height: u32,
    },
    #[error("invalid video meta: {0}")]
    InvalidMeta(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Center-size bounding box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn to_rect(&self) -> Rect {
        Rect::new(self.x1(), self.y1(), self.x2(), self.y2())
    }

    pub fn from_rect(r: &Rect) -> Self {
        let c = r.center();
        Self::new(c.x, c.y, r.width(), r.height())
    }

    /// Component-wise linear interpolation, `alpha = 0` gives `self`.
    pub fn lerp(&self, other: &BBox, alpha: f64) -> BBox {
        let mix = |a: f64, b: f64| a + (b - a) * alpha;
        BBox::new(
            mix(self.cx, other.cx),
            mix(self.cy, other.cy),
            mix(self.w, other.w),
            mix(self.h, other.h),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub frame_idx: u64,
    pub object_id: String,
    pub class_label: String,
    pub bbox: BBox,
}

/// Time-ordered samples of one tracked object.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub object_id: String,
    pub samples: Vec<(u64, BBox)>,
}

impl Track {
    pub fn first_frame(&self) -> u64 {
        self.samples[0].0
    }

    pub fn last_frame(&self) -> u64 {
        self.samples[self.samples.len() - 1].0
    }

    pub fn sample_at(&self, frame: u64) -> Option<&BBox> {
        self.samples
            .binary_search_by_key(&frame, |s| s.0)
            .ok()
            .map(|i| &self.samples[i].1)
    }

    /// Box at `frame`: the observed sample if present, linear interpolation
    /// across gaps, the first sample before the track starts and the last
    /// sample after it ends.
    pub fn bbox_at(&self, frame: u64) -> BBox {
        match self.samples.binary_search_by_key(&frame, |s| s.0) {
            Ok(i) => self.samples[i].1,
            Err(0) => self.samples[0].1,
            Err(i) if i == self.samples.len() => self.samples[i - 1].1,
            Err(i) => {
                let (f0, b0) = self.samples[i - 1];
                let (f1, b1) = self.samples[i];
                let alpha = (frame - f0) as f64 / (f1 - f0) as f64;
                b0.lerp(&b1, alpha)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub frames: u64,
    pub fps: f64,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 || !(self.fps > 0.0) {
            return Err(IngestError::InvalidMeta(format!(
                "width, height, frames and fps must be positive (got {}x{}, {} frames, {} fps)",
                self.width, self.height, self.frames, self.fps
            )));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn frame_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtRegion {
    pub frame_idx: u64,
    pub rect: Rect,
    pub track_id: u64,
}

/// Ground-truth anomalous regions and their grouping into anomaly tracks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub regions: Vec<GtRegion>,
    /// Region indices per ground-truth track id.
    pub tracks: BTreeMap<u64, Vec<usize>>,
}

impl GroundTruth {
    pub fn from_regions(regions: Vec<GtRegion>) -> Self {
        let mut tracks: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, r) in regions.iter().enumerate() {
            tracks.entry(r.track_id).or_default().push(i);
        }
        Self { regions, tracks }
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn check_bounds(&self, meta: &VideoMeta) -> Result<()> {
        let frame = meta.frame_rect();
        for (index, r) in self.regions.iter().enumerate() {
            if !frame.contains(&r.rect) {
                return Err(IngestError::RegionOutOfFrame {
                    index,
                    track: r.track_id,
                    width: meta.width,
                    height: meta.height,
                });
            }
        }
        Ok(())
    }

    /// Per-frame 0/1 labels: 1 where any ground-truth region exists.
    pub fn frame_labels(&self, frames: u64) -> Vec<u8> {
        let mut labels = vec![0u8; frames as usize];
        for r in &self.regions {
            if let Some(l) = labels.get_mut(r.frame_idx as usize) {
                *l = 1;
            }
        }
        labels
    }
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    frame: u64,
    id: String,
    class: String,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct GtLine {
    frame: u64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    track: u64,
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, line_no: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| IngestError::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads `detections.jsonl`; output is sorted by `(frame_idx, object_id)`.
///
/// Centers outside the frame are kept, but box sizes must lie in
/// `(0, max(W, H)]`.
pub fn parse_detections(reader: impl BufRead, meta: &VideoMeta) -> Result<Vec<Detection>> {
    let limit = meta.width.max(meta.height) as f64;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionLine = parse_line(&line, line_no)?;
        if rec.class.is_empty() {
            return Err(IngestError::Parse {
                line: line_no,
                message: "empty class label".into(),
            });
        }
        let size_ok = |v: f64| v > 0.0 && v <= limit;
        if !size_ok(rec.w) || !size_ok(rec.h) || !rec.cx.is_finite() || !rec.cy.is_finite() {
            return Err(IngestError::InvalidBox {
                line: line_no,
                w: rec.w,
                h: rec.h,
                limit,
            });
        }
        if !seen.insert((rec.frame, rec.id.clone())) {
            return Err(IngestError::DuplicateIdentity {
                line: line_no,
                frame: rec.frame,
                object_id: rec.id,
            });
        }
        out.push(Detection {
            frame_idx: rec.frame,
            object_id: rec.id,
            class_label: rec.class.to_lowercase(),
            bbox: BBox::new(rec.cx, rec.cy, rec.w, rec.h),
        });
    }
    out.sort_by(|a, b| {
        a.frame_idx
            .cmp(&b.frame_idx)
            .then_with(|| a.object_id.cmp(&b.object_id))
    });
    Ok(out)
}

pub fn write_detections(mut w: impl Write, dets: &[Detection]) -> io::Result<()> {
    for d in dets {
        let line = DetectionLine {
            frame: d.frame_idx,
            id: d.object_id.clone(),
            class: d.class_label.clone(),
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Groups pre-associated detections into one track per object id, ordered
/// by object id.
pub fn tracks_from_detections(dets: &[Detection]) -> Vec<Track> {
    let mut by_id: BTreeMap<&str, Vec<(u64, BBox)>> = BTreeMap::new();
    for d in dets {
        by_id
            .entry(d.object_id.as_str())
            .or_default()
            .push((d.frame_idx, d.bbox));
    }
    by_id
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by_key(|s| s.0);
            Track {
                object_id: id.to_string(),
                samples,
            }
        })
        .collect()
}

pub fn parse_ground_truth(reader: impl BufRead) -> Result<GroundTruth> {
    let mut regions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GtLine = parse_line(&line, line_no)?;
        if !(rec.x1 <= rec.x2 && rec.y1 <= rec.y2) {
            return Err(IngestError::DegenerateRect {
                line: line_no,
                x1: rec.x1,
                y1: rec.y1,
                x2: rec.x2,
                y2: rec.y2,
            });
        }
        regions.push(GtRegion {
            frame_idx: rec.frame,
            rect: Rect::new(rec.x1, rec.y1, rec.x2, rec.y2),
            track_id: rec.track,
        });
    }
    Ok(GroundTruth::from_regions(regions))
}

pub fn write_ground_truth(mut w: impl Write, gt: &GroundTruth) -> io::Result<()> {
    for r in &gt.regions {
        let line = GtLine {
            frame: r.frame_idx,
            x1: r.rect.x_min,
            y1: r.rect.y_min,
            x2: r.rect.x_max,
            y2: r.rect.y_max,
            track: r.track_id,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_meta(reader: impl io::Read) -> Result<VideoMeta> {
    let meta: VideoMeta = serde_json::from_reader(reader).map_err(|e| IngestError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    meta.validate()?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> VideoMeta {
        VideoMeta {
            video_id: "v".into(),
            width: 1280,
            height: 720,
            frames: 100,
            fps: 30.0,
        }
    }

    #[test]
    fn empty_stream_gives_no_detections() {
        assert!(parse_detections(&b""[..], &meta()).unwrap().is_empty());
    }

    #[test]
    fn single_line_round_trips_fields() {
        let src = br#"{"frame": 0, "id": "a", "class": "person", "cx": 100, "cy": 200, "w": 40, "h": 80}"#;
        let dets = parse_detections(&src[..], &meta()).unwrap();
        assert_eq!(
            dets,
            vec![Detection {
                frame_idx: 0,
                object_id: "a".into(),
                class_label: "person".into(),
                bbox: BBox::new(100.0, 200.0, 40.0, 80.0),
            }]
        );
    }

    #[test]
    fn duplicate_identity_is_rejected() {
        let src = concat!(
            r#"{"frame": 3, "id": "a", "class": "person", "cx": 1, "cy": 2, "w": 4, "h": 8}"#,
            "\n",
            r#"{"frame": 3, "id": "a", "class": "person", "cx": 5, "cy": 2, "w": 4, "h": 8}"#,
            "\n"
        );
        match parse_detections(src.as_bytes(), &meta()) {
            Err(IngestError::DuplicateIdentity { line, frame, .. }) => {
                assert_eq!((line, frame), (2, 3));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let src = concat!(
            r#"{"frame": 0, "id": "a", "class": "car", "cx": 1, "cy": 2, "w": 4, "h": 8}"#,
            "\n{not json\n"
        );
        match parse_detections(src.as_bytes(), &meta()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_box_rejected_but_offscreen_center_kept() {
        let big = br#"{"frame": 0, "id": "a", "class": "car", "cx": 1, "cy": 2, "w": 1281, "h": 8}"#;
        assert!(matches!(
            parse_detections(&big[..], &meta()),
            Err(IngestError::InvalidBox { .. })
        ));
        let off = br#"{"frame": 0, "id": "a", "class": "car", "cx": -50, "cy": 900, "w": 10, "h": 8}"#;
        assert_eq!(parse_detections(&off[..], &meta()).unwrap().len(), 1);
    }

    #[test]
    fn output_sorted_by_frame_then_id() {
        let src = concat!(
            r#"{"frame": 1, "id": "b", "class": "car", "cx": 1, "cy": 2, "w": 4, "h": 8}"#,
            "\n",
            r#"{"frame": 0, "id": "z", "class": "car", "cx": 1, "cy": 2, "w": 4, "h": 8}"#,
            "\n",
            r#"{"frame": 1, "id": "a", "class": "car", "cx": 1, "cy": 2, "w": 4, "h": 8}"#,
            "\n"
        );
        let dets = parse_detections(src.as_bytes(), &meta()).unwrap();
        let keys: Vec<_> = dets
            .iter()
            .map(|d| (d.frame_idx, d.object_id.as_str()))
            .collect();
        assert_eq!(keys, vec![(0, "z"), (1, "a"), (1, "b")]);
    }

    fn det(frame: u64, id: &str) -> Detection {
        Detection {
            frame_idx: frame,
            object_id: id.into(),
            class_label: "person".into(),
            bbox: BBox::new(frame as f64, 0.0, 1.0, 1.0),
        }
    }

    #[test]
    fn thirty_frames_make_one_track() {
        let dets: Vec<_> = (0..30).map(|f| det(f, "a")).collect();
        let tracks = tracks_from_detections(&dets);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].samples.len(), 30);
    }

    #[test]
    fn interleaved_ids_are_grouped_and_ordered() {
        let dets = vec![det(2, "b"), det(0, "a"), det(1, "b"), det(1, "a")];
        let tracks = tracks_from_detections(&dets);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].object_id, "a");
        let frames: Vec<_> = tracks[1].samples.iter().map(|s| s.0).collect();
        assert_eq!(frames, vec![1, 2]);
    }

    #[test]
    fn single_detection_is_a_track_of_one() {
        let tracks = tracks_from_detections(&[det(7, "x")]);
        assert_eq!(tracks[0].samples, vec![(7, BBox::new(7.0, 0.0, 1.0, 1.0))]);
    }

    #[test]
    fn bbox_at_interpolates_and_holds() {
        let t = Track {
            object_id: "a".into(),
            samples: vec![
                (10, BBox::new(0.0, 0.0, 10.0, 10.0)),
                (20, BBox::new(100.0, 50.0, 20.0, 10.0)),
            ],
        };
        assert_eq!(t.bbox_at(5), BBox::new(0.0, 0.0, 10.0, 10.0));
        assert_eq!(t.bbox_at(15), BBox::new(50.0, 25.0, 15.0, 10.0));
        assert_eq!(t.bbox_at(99), BBox::new(100.0, 50.0, 20.0, 10.0));
    }

    #[test]
    fn ground_truth_groups_by_track() {
        assert!(parse_ground_truth(&b""[..]).unwrap().is_empty());
        let src = (0..3)
            .map(|f| format!(r#"{{"frame": {f}, "x1": 0, "y1": 0, "x2": 5, "y2": 5, "track": 7}}"#))
            .collect::<Vec<_>>()
            .join("\n");
        let gt = parse_ground_truth(src.as_bytes()).unwrap();
        assert_eq!(gt.regions.len(), 3);
        assert_eq!(gt.tracks.len(), 1);
        assert_eq!(gt.tracks[&7], vec![0, 1, 2]);
    }

    #[test]
    fn degenerate_gt_rect_rejected() {
        let src = br#"{"frame": 0, "x1": 10, "y1": 0, "x2": 5, "y2": 5, "track": 1}"#;
        assert!(matches!(
            parse_ground_truth(&src[..]),
            Err(IngestError::DegenerateRect { line: 1, .. })
        ));
    }

    #[test]
    fn gt_bounds_check() {
        let gt = GroundTruth::from_regions(vec![GtRegion {
            frame_idx: 0,
            rect: Rect::new(1200.0, 0.0, 1300.0, 10.0),
            track_id: 2,
        }]);
        assert!(gt.check_bounds(&meta()).is_err());
    }

    #[test]
    fn meta_parse_validates() {
        let ok = br#"{"video_id": "v", "width": 640, "height": 360, "frames": 10, "fps": 30.0}"#;
        assert_eq!(parse_meta(&ok[..]).unwrap().width, 640);
        let bad = br#"{"video_id": "v", "width": 0, "height": 360, "frames": 10, "fps": 30.0}"#;
        assert!(parse_meta(&bad[..]).is_err());
    }
}
