//! Crop windows shared by the anchor frame and the future frame, and the
//! annotated image crops sent to the description backend.
//!
//! The window is the union of the unit's merged member boxes at `t` and
//! `t + delta`, padded on every side by half its own extent (never less than
//! `w_min` / `h_min`), then clamped to the frame. Both frames are cut with
//! the same window so background and objects stay aligned.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Rect;
use crate::ingest::{Track, VideoMeta};
use crate::pairing::Unit;

pub const DEFAULT_W_MIN: f64 = 240.0;
pub const DEFAULT_H_MIN: f64 = 135.0;
pub const DEFAULT_STROKE_PX: u32 = 3;
pub const RED: Rgb<u8> = Rgb([255, 0, 0]);

#[derive(Debug, Error)]
pub enum CropError {
    #[error("unit {unit_id}: no track for member {member:?}")]
    MissingTrack { unit_id: String, member: String },
    #[error("frame {frame}: {source}")]
    FrameIo {
        frame: u64,
        #[source]
        source: image::ImageError,
    },
    #[error("frame {frame} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FrameSize {
        frame: u64,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("crop window {0:?} is empty")]
    EmptyWindow(Rect),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    /// Half of the minimum crop width.
    pub w_min: f64,
    /// Half of the minimum crop height.
    pub h_min: f64,
    pub stroke_px: u32,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            w_min: DEFAULT_W_MIN,
            h_min: DEFAULT_H_MIN,
            stroke_px: DEFAULT_STROKE_PX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub unit_id: String,
    pub window: Rect,
    pub frames: (u64, u64),
    pub draw_rects_t: Vec<Rect>,
    pub draw_rects_t2: Vec<Rect>,
    /// Members whose track ended before `t + delta`; their last observed box
    /// stands in for the future position.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub held_members: Vec<String>,
}

/// The two annotated crops of a unit; both have the window's dimensions.
#[derive(Clone, Debug)]
pub struct CropImagePair {
    pub image_t: RgbImage,
    pub image_t2: RgbImage,
}

impl CropImagePair {
    /// Lossless PNG encodings of both crops.
    pub fn encode_png(&self) -> Result<(Vec<u8>, Vec<u8>), CropError> {
        Ok((encode_png(&self.image_t)?, encode_png(&self.image_t2)?))
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, CropError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Element-wise min of the top-left corners and max of the bottom-right.
pub fn merge_bbox(a: &Rect, b: &Rect) -> Rect {
    a.union(b)
}

pub fn crop_window(bbox_t: &Rect, bbox_t2: &Rect, meta: &VideoMeta, w_min: f64, h_min: f64) -> Rect {
    let merged = merge_bbox(bbox_t, bbox_t2);
    let w = ((merged.x_max - merged.x_min).abs() / 2.0).max(w_min);
    let h = ((merged.y_max - merged.y_min).abs() / 2.0).max(h_min);
    Rect::new(
        (merged.x_min - w).max(0.0),
        (merged.y_min - h).max(0.0),
        (merged.x_max + w).min(meta.width as f64),
        (merged.y_max + h).min(meta.height as f64),
    )
}

/// Builds the crop specification of `unit` from its members' tracks.
pub fn crop_spec(
    unit: &Unit,
    tracks: &HashMap<String, Track>,
    meta: &VideoMeta,
    cfg: &CropConfig,
) -> Result<CropSpec, CropError> {
    let t = unit.anchor_frame;
    let t2 = t + unit.delta as u64;
    let mut rects_t = Vec::with_capacity(unit.members.len());
    let mut rects_t2 = Vec::with_capacity(unit.members.len());
    let mut held = Vec::new();
    for member in &unit.members {
        let track = tracks.get(member).ok_or_else(|| CropError::MissingTrack {
            unit_id: unit.unit_id.clone(),
            member: member.clone(),
        })?;
        rects_t.push(track.bbox_at(t).to_rect());
        if track.last_frame() < t2 {
            held.push(member.clone());
        }
        rects_t2.push(track.bbox_at(t2).to_rect());
    }
    let merged_t = rects_t.iter().skip(1).fold(rects_t[0], |acc, r| merge_bbox(&acc, r));
    let merged_t2 = rects_t2.iter().skip(1).fold(rects_t2[0], |acc, r| merge_bbox(&acc, r));
    Ok(CropSpec {
        unit_id: unit.unit_id.clone(),
        window: crop_window(&merged_t, &merged_t2, meta, cfg.w_min, cfg.h_min),
        frames: (t, t2),
        draw_rects_t: rects_t,
        draw_rects_t2: rects_t2,
        held_members: held,
    })
}

/// Integer pixel bounds covering a window, limited to the image.
fn pixel_bounds(r: &Rect, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64) as u32;
    let x0 = clamp(r.x_min.floor(), width);
    let y0 = clamp(r.y_min.floor(), height);
    let x1 = clamp(r.x_max.ceil(), width);
    let y1 = clamp(r.y_max.ceil(), height);
    (x0, y0, x1, y1)
}

/// Draws an outline of `stroke` pixels inside `rect` (image coordinates).
pub fn draw_outline(img: &mut RgbImage, rect: &Rect, stroke: u32, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let left = rect.x_min.round() as i64;
    let top = rect.y_min.round() as i64;
    let right = rect.x_max.round() as i64 - 1;
    let bottom = rect.y_max.round() as i64 - 1;
    if right < left || bottom < top {
        return;
    }
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for k in 0..stroke as i64 {
        let (l, t, r, b) = (left + k, top + k, right - k, bottom - k);
        if r < l || b < t {
            break;
        }
        for x in l..=r {
            put(x, t);
            put(x, b);
        }
        for y in t..=b {
            put(l, y);
            put(r, y);
        }
    }
}

fn cut(frame: &RgbImage, window: (u32, u32, u32, u32), rects: &[Rect], stroke: u32, color: Rgb<u8>) -> RgbImage {
    let (x0, y0, x1, y1) = window;
    let mut out = image::imageops::crop_imm(frame, x0, y0, x1 - x0, y1 - y0).to_image();
    for r in rects {
        draw_outline(&mut out, &r.translate(-(x0 as f64), -(y0 as f64)), stroke, color);
    }
    out
}

/// Cuts both frames with the spec's window and outlines every member box.
pub fn annotate_and_crop(
    frame_t: &RgbImage,
    frame_t2: &RgbImage,
    spec: &CropSpec,
    stroke_px: u32,
    color: Rgb<u8>,
) -> Result<CropImagePair, CropError> {
    let (fw, fh) = frame_t.dimensions();
    if frame_t2.dimensions() != (fw, fh) {
        let (got_w, got_h) = frame_t2.dimensions();
        return Err(CropError::FrameSize {
            frame: spec.frames.1,
            got_w,
            got_h,
            want_w: fw,
            want_h: fh,
        });
    }
    let bounds = pixel_bounds(&spec.window, fw, fh);
    if bounds.2 <= bounds.0 || bounds.3 <= bounds.1 {
        return Err(CropError::EmptyWindow(spec.window));
    }
    Ok(CropImagePair {
        image_t: cut(frame_t, bounds, &spec.draw_rects_t, stroke_px, color),
        image_t2: cut(frame_t2, bounds, &spec.draw_rects_t2, stroke_px, color),
    })
}

/// Per-video directories of numbered frame images: `<root>/<video_id>/frames/%06d.png`.
#[derive(Clone, Debug)]
pub struct FrameStore {
    root: PathBuf,
}

impl FrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn frame_path(&self, video_id: &str, frame: u64) -> PathBuf {
        self.root
            .join(video_id)
            .join("frames")
            .join(format!("{frame:06}.png"))
    }

    pub fn load(&self, meta: &VideoMeta, frame: u64) -> Result<RgbImage, CropError> {
        let img = image::open(self.frame_path(&meta.video_id, frame))
            .map_err(|source| CropError::FrameIo { frame, source })?
            .to_rgb8();
        if img.dimensions() != (meta.width, meta.height) {
            return Err(CropError::FrameSize {
                frame,
                got_w: img.width(),
                got_h: img.height(),
                want_w: meta.width,
                want_h: meta.height,
            });
        }
        Ok(img)
    }

    /// Loads both frames of `spec` and produces the annotated crops.
    pub fn crop(&self, meta: &VideoMeta, spec: &CropSpec, cfg: &CropConfig) -> Result<CropImagePair, CropError> {
        let a = self.load(meta, spec.frames.0)?;
        let b = self.load(meta, spec.frames.1)?;
        annotate_and_crop(&a, &b, spec, cfg.stroke_px, RED)
    }
}
