//! Seeded synthetic street scenes with scripted behaviors.
//!
//! A [`Scenario`] is a set of actor scripts (class, keyframed path and a
//! behavior-tag timeline) plus anomaly injections that override the tag of
//! chosen actors over a frame span. [`generate`] expands a scenario into the
//! same artifacts real footage would produce: detections, ground truth,
//! flat frame rasters, and a behavior sidecar that tells the mock
//! description backend what every unit is doing.
//!
//! Scene layout (1280x720): a northern sidewalk around y = 170, a two-lane
//! road (lanes at y = 280 and y = 330, parking at y = 380), the main
//! sidewalk around y = 500 and a lawn around y = 640, with a crosswalk at
//! x = 910.
//!
//! Unit tags: an injection's tag when any member is under an active
//! injection at the anchor frame; otherwise `two_people_walking` for two
//! persons, `drive_road` for a pair with a car, and the actor's own
//! timeline tag for singles.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::describe::{ANOMALY_TAGS, NOMINAL_TAGS};
use crate::exec::Exec;
use crate::geom::Point;
use crate::ingest::{write_detections, write_ground_truth, BBox, Detection, GroundTruth, GtRegion, VideoMeta};
use crate::pairing::{build_all_units, PairingConfig, UnitKind};

pub const WIDTH: u32 = 1280;
pub const HEIGHT: u32 = 720;
pub const FPS: f64 = 30.0;

const NORTH_WALK_Y: f64 = 170.0;
const LANE_EAST_Y: f64 = 280.0;
const LANE_WEST_Y: f64 = 330.0;
const PARKING_Y: f64 = 380.0;
const SIDEWALK_Y: f64 = 500.0;
const LAWN_Y: f64 = 640.0;
const CROSSWALK_X: f64 = 910.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("actor {actor}: waypoint ({x}, {y}) at frame {frame} is outside the frame")]
    WaypointOutside { actor: String, frame: u64, x: f64, y: f64 },
    #[error("actor {0}: path must have at least one keyframe, in non-decreasing frame order")]
    BadPath(String),
    #[error("actor {0} has no behavior tag")]
    NoTag(String),
    #[error("injection {tag:?} names unknown actor {actor}")]
    UnknownActor { tag: String, actor: String },
    #[error("injection {0:?} has an empty span")]
    EmptySpan(String),
    #[error("duplicate actor id {0}")]
    DuplicateActor(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub fn class_size(class: &str) -> (f64, f64) {
    match class {
        "car" => (160.0, 80.0),
        "dog" => (50.0, 35.0),
        "bag" => (30.0, 30.0),
        "box" => (70.0, 70.0),
        _ => (40.0, 90.0),
    }
}

fn class_color(class: &str) -> Rgb<u8> {
    match class {
        "car" => Rgb([230, 200, 40]),
        "dog" => Rgb([140, 90, 40]),
        "bag" => Rgb([60, 160, 60]),
        "box" => Rgb([170, 120, 70]),
        _ => Rgb([40, 90, 200]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorScript {
    pub id: String,
    pub class: String,
    pub size: (f64, f64),
    /// `(frame, center)` keyframes; the actor is visible from the first to
    /// the last keyframe and moves linearly in between.
    pub keys: Vec<(u64, Point)>,
    /// `(from_frame, tag)`, sorted by frame.
    pub tags: Vec<(u64, String)>,
}

impl ActorScript {
    pub fn position(&self, frame: u64) -> Option<Point> {
        let first = self.keys.first()?;
        let last = self.keys.last()?;
        if frame < first.0 || frame > last.0 {
            return None;
        }
        let i = self.keys.partition_point(|k| k.0 <= frame);
        let (f0, p0) = self.keys[i - 1];
        match self.keys.get(i) {
            None => Some(p0),
            Some(&(f1, p1)) => {
                let a = (frame - f0) as f64 / (f1 - f0) as f64;
                Some(Point::new(p0.x + (p1.x - p0.x) * a, p0.y + (p1.y - p0.y) * a))
            }
        }
    }

    pub fn tag_at(&self, frame: u64) -> Option<&str> {
        self.tags.iter().rev().find(|(f, _)| *f <= frame).or(self.tags.first()).map(|(_, t)| t.as_str())
    }
}

/// Builds keyframes from waypoints and speeds.
#[derive(Clone, Debug)]
pub struct PathBuilder {
    keys: Vec<(u64, Point)>,
}

impl PathBuilder {
    pub fn start(frame: u64, at: Point) -> Self {
        Self { keys: vec![(frame, at)] }
    }

    fn last(&self) -> (u64, Point) {
        *self.keys.last().expect("builder always has a keyframe")
    }

    /// Walks to `to` at `speed` pixels per frame.
    pub fn walk_to(mut self, to: Point, speed: f64) -> Self {
        let (f, p) = self.last();
        let dist = ((to.x - p.x).powi(2) + (to.y - p.y).powi(2)).sqrt();
        let frames = (dist / speed).ceil().max(1.0) as u64;
        self.keys.push((f + frames, to));
        self
    }

    /// Stays put until `frame`.
    pub fn hold_until(mut self, frame: u64) -> Self {
        let (f, p) = self.last();
        if frame > f {
            self.keys.push((frame, p));
        }
        self
    }

    pub fn frame(&self) -> u64 {
        self.last().0
    }

    pub fn build(self) -> Vec<(u64, Point)> {
        self.keys
    }
}

/// Frames needed to cover `dist` pixels at `speed`, as used by [`PathBuilder::walk_to`].
fn travel(from: Point, to: Point, speed: f64) -> u64 {
    let dist = ((to.x - from.x).powi(2) + (to.y - from.y).powi(2)).sqrt();
    (dist / speed).ceil().max(1.0) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub tag: String,
    /// Span `[start, end)`.
    pub start: u64,
    pub end: u64,
    pub actors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub frames: u64,
    pub actors: Vec<ActorScript>,
    pub injections: Vec<Injection>,
}

impl Scenario {
    pub fn validate(&self, meta: &VideoMeta) -> Result<(), SynthError> {
        let (w, h) = (meta.width as f64, meta.height as f64);
        let mut seen = std::collections::HashSet::new();
        for a in &self.actors {
            if !seen.insert(a.id.as_str()) {
                return Err(SynthError::DuplicateActor(a.id.clone()));
            }
            if a.keys.is_empty() || a.keys.windows(2).any(|k| k[1].0 < k[0].0) {
                return Err(SynthError::BadPath(a.id.clone()));
            }
            if a.tags.is_empty() {
                return Err(SynthError::NoTag(a.id.clone()));
            }
            for &(frame, p) in &a.keys {
                if !(0.0..=w).contains(&p.x) || !(0.0..=h).contains(&p.y) {
                    return Err(SynthError::WaypointOutside {
                        actor: a.id.clone(),
                        frame,
                        x: p.x,
                        y: p.y,
                    });
                }
            }
        }
        for inj in &self.injections {
            if inj.end <= inj.start {
                return Err(SynthError::EmptySpan(inj.tag.clone()));
            }
            if let Some(missing) = inj.actors.iter().find(|id| !seen.contains(id.as_str())) {
                return Err(SynthError::UnknownActor {
                    tag: inj.tag.clone(),
                    actor: missing.clone(),
                });
            }
        }
        Ok(())
    }

    fn injection_at(&self, actor: &str, frame: u64) -> Option<&Injection> {
        self.injections
            .iter()
            .find(|inj| inj.start <= frame && frame < inj.end && inj.actors.iter().any(|a| a == actor))
    }
}

#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub meta: VideoMeta,
    pub scenario: Scenario,
    pub detections: Vec<Detection>,
    pub gt: GroundTruth,
    /// Unit key (`<video_id>/<unit_id>`) to behavior tag.
    pub behaviors: BTreeMap<String, String>,
    /// Unit key to unit kind, for coverage checks.
    pub unit_kinds: BTreeMap<String, UnitKind>,
}

pub fn generate(scenario: &Scenario, meta: &VideoMeta, pairing: &PairingConfig) -> Result<SynthVideo, SynthError> {
    scenario.validate(meta)?;
    let (w, h) = (meta.width as f64, meta.height as f64);
    let frames = meta.frames.min(scenario.frames);

    let mut detections = Vec::new();
    for f in 0..frames {
        for a in &scenario.actors {
            if let Some(p) = a.position(f) {
                detections.push(Detection {
                    frame_idx: f,
                    object_id: a.id.clone(),
                    class_label: a.class.clone(),
                    bbox: BBox::new(p.x, p.y, a.size.0, a.size.1),
                });
            }
        }
    }
    detections.sort_by(|x, y| (x.frame_idx, &x.object_id).cmp(&(y.frame_idx, &y.object_id)));

    let mut regions = Vec::new();
    let mut track_id = 0;
    for inj in &scenario.injections {
        for actor_id in &inj.actors {
            track_id += 1;
            let a = scenario.actors.iter().find(|a| &a.id == actor_id).expect("validated");
            for f in inj.start..inj.end.min(frames) {
                if let Some(p) = a.position(f) {
                    regions.push(GtRegion {
                        frame_idx: f,
                        rect: BBox::new(p.x, p.y, a.size.0, a.size.1).to_rect().clamp_to(w, h),
                        track_id,
                    });
                }
            }
        }
    }
    regions.sort_by_key(|r| (r.frame_idx, r.track_id));
    let gt = GroundTruth::from_regions(regions);

    let actors: HashMap<&str, &ActorScript> = scenario.actors.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut behaviors = BTreeMap::new();
    let mut unit_kinds = BTreeMap::new();
    for unit in build_all_units(&detections, meta, pairing, Exec::Sequential) {
        let t = unit.anchor_frame;
        let injected = unit.members.iter().find_map(|m| scenario.injection_at(m, t));
        let tag = match injected {
            Some(inj) => inj.tag.clone(),
            None if unit.kind == UnitKind::Pair => {
                if unit.class_labels.iter().all(|c| c == "person") {
                    "two_people_walking".to_string()
                } else {
                    "drive_road".to_string()
                }
            }
            None => actors[unit.members[0].as_str()]
                .tag_at(t)
                .expect("validated")
                .to_string(),
        };
        let key = unit.key(&meta.video_id);
        unit_kinds.insert(key.clone(), unit.kind);
        behaviors.insert(key, tag);
    }

    Ok(SynthVideo {
        meta: meta.clone(),
        scenario: scenario.clone(),
        detections,
        gt,
        behaviors,
        unit_kinds,
    })
}

fn fill(img: &mut RgbImage, y0: f64, y1: f64, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    for y in (y0.max(0.0) as u32)..(y1.min(h as f64) as u32) {
        for x in 0..w {
            img.put_pixel(x, y, color);
        }
    }
}

impl SynthVideo {
    /// Flat raster: gray ground, darker road, lighter sidewalks, green
    /// lawn, and one solid block per visible actor.
    pub fn render_frame(&self, frame: u64) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.meta.width, self.meta.height, Rgb([128, 128, 128]));
        fill(&mut img, NORTH_WALK_Y - 40.0, NORTH_WALK_Y + 40.0, Rgb([170, 170, 170]));
        fill(&mut img, LANE_EAST_Y - 50.0, PARKING_Y + 20.0, Rgb([80, 80, 80]));
        fill(&mut img, SIDEWALK_Y - 50.0, SIDEWALK_Y + 50.0, Rgb([170, 170, 170]));
        fill(&mut img, LAWN_Y - 60.0, self.meta.height as f64, Rgb([90, 150, 90]));
        let lo = self.detections.partition_point(|d| d.frame_idx < frame);
        let hi = self.detections.partition_point(|d| d.frame_idx <= frame);
        for d in &self.detections[lo..hi] {
            let r = d.bbox.to_rect().clamp_to(self.meta.width as f64, self.meta.height as f64);
            let color = class_color(&d.class_label);
            for y in r.y_min as u32..r.y_max as u32 {
                for x in r.x_min as u32..r.x_max as u32 {
                    img.put_pixel(x, y, color);
                }
            }
        }
        img
    }

    /// Writes `meta.json`, `detections.jsonl`, `gt.jsonl`,
    /// `behaviors.jsonl` and `frames/NNNNNN.png` (every `image_every`-th
    /// frame) under `dir/<video_id>/`.
    pub fn write_to(&self, dir: &Path, image_every: u64) -> Result<(), SynthError> {
        let root = dir.join(&self.meta.video_id);
        fs::create_dir_all(root.join("frames"))?;
        fs::write(root.join("meta.json"), serde_json::to_vec_pretty(&self.meta).map_err(io::Error::other)?)?;
        let mut w = BufWriter::new(fs::File::create(root.join("detections.jsonl"))?);
        write_detections(&mut w, &self.detections)?;
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(root.join("gt.jsonl"))?);
        write_ground_truth(&mut w, &self.gt)?;
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(root.join("behaviors.jsonl"))?);
        write_behaviors(&mut w, &self.behaviors)?;
        w.flush()?;
        for f in (0..self.meta.frames).step_by(image_every.max(1) as usize) {
            self.render_frame(f).save(root.join("frames").join(format!("{f:06}.png")))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BehaviorLine {
    unit_key: String,
    tag: String,
}

pub fn write_behaviors(mut w: impl Write, behaviors: &BTreeMap<String, String>) -> io::Result<()> {
    for (k, t) in behaviors {
        serde_json::to_writer(
            &mut w,
            &BehaviorLine {
                unit_key: k.clone(),
                tag: t.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_behaviors(reader: impl BufRead) -> Result<BTreeMap<String, String>, SynthError> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let b: BehaviorLine = serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(b.unit_key, b.tag);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            train_videos: 5,
            test_videos: 3,
            frames: 600,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub fn scene_meta(video_id: &str, frames: u64) -> VideoMeta {
    VideoMeta {
        video_id: video_id.to_string(),
        width: WIDTH,
        height: HEIGHT,
        frames,
        fps: FPS,
    }
}

struct Cast<'a> {
    rng: &'a mut ChaCha8Rng,
    frames: u64,
    actors: Vec<ActorScript>,
    counters: HashMap<&'static str, usize>,
}

impl<'a> Cast<'a> {
    fn new(rng: &'a mut ChaCha8Rng, frames: u64) -> Self {
        Self {
            rng,
            frames,
            actors: Vec::new(),
            counters: HashMap::new(),
        }
    }

    fn next_id(&mut self, class: &'static str) -> String {
        let n = self.counters.entry(class).or_insert(0);
        *n += 1;
        format!("{class}{n:02}")
    }

    fn add(&mut self, class: &'static str, keys: Vec<(u64, Point)>, tags: Vec<(u64, &str)>) -> String {
        let id = self.next_id(class);
        self.actors.push(ActorScript {
            id: id.clone(),
            class: class.to_string(),
            size: class_size(class),
            keys,
            tags: tags.into_iter().map(|(f, t)| (f, t.to_string())).collect(),
        });
        id
    }

    fn car(&mut self, enter: u64, east: bool, speed: f64) -> String {
        let (y, x0, x1) = if east { (LANE_EAST_Y, 90.0, 1190.0) } else { (LANE_WEST_Y, 1190.0, 90.0) };
        let keys = PathBuilder::start(enter, Point::new(x0, y)).walk_to(Point::new(x1, y), speed).build();
        self.add("car", keys, vec![(0, "drive_road")])
    }

    fn random_traffic(&mut self) {
        let n = self.rng.random_range(4..=6);
        for _ in 0..n {
            let enter = self.rng.random_range(0..self.frames.saturating_sub(40).max(1));
            let east = self.rng.random_bool(0.5);
            let speed = self.rng.random_range(6.0..10.0);
            self.car(enter, east, speed);
        }
        // a convoy: two cars close enough to form a pair
        let enter = self.rng.random_range(0..self.frames / 2);
        let speed = self.rng.random_range(6.0..8.0);
        self.car(enter, true, speed);
        self.car(enter + (110.0 / speed).ceil() as u64, true, speed);
    }

    fn walker(&mut self, y: f64, tag: &'static str, enter: u64, x0: f64, east: bool, speed: f64) -> String {
        let x1 = if east { 1250.0 } else { 30.0 };
        let keys = PathBuilder::start(enter, Point::new(x0, y)).walk_to(Point::new(x1, y), speed).build();
        self.add("person", keys, vec![(0, tag)])
    }

    fn random_walkers(&mut self, y: f64, tag: &'static str, n: usize) {
        for _ in 0..n {
            let enter = self.rng.random_range(0..self.frames / 2);
            let x0 = self.rng.random_range(40.0..1240.0);
            let east = self.rng.random_bool(0.5);
            let speed = self.rng.random_range(1.5..2.5);
            let dy = self.rng.random_range(-8.0..8.0);
            self.walker(y + dy, tag, enter, x0, east, speed);
        }
    }

    fn couple(&mut self) {
        let enter = self.rng.random_range(0..self.frames / 3);
        let east = self.rng.random_bool(0.5);
        let x0 = if east { 40.0 } else { 1240.0 };
        let speed = self.rng.random_range(1.5..2.2);
        self.walker(SIDEWALK_Y - 12.0, "walk_sidewalk", enter, x0, east, speed);
        self.walker(SIDEWALK_Y + 12.0, "walk_sidewalk", enter, x0, east, speed);
    }

    fn crosser(&mut self) {
        let enter = self.rng.random_range(0..self.frames / 2);
        let x0 = self.rng.random_range(500.0..800.0);
        let speed = self.rng.random_range(1.8..2.5);
        let b = PathBuilder::start(enter, Point::new(x0, SIDEWALK_Y)).walk_to(Point::new(CROSSWALK_X, SIDEWALK_Y), speed);
        let reach = b.frame();
        let b = b.walk_to(Point::new(CROSSWALK_X, NORTH_WALK_Y), speed);
        let across = b.frame();
        let keys = b.walk_to(Point::new(1250.0, NORTH_WALK_Y), speed).build();
        self.add(
            "person",
            keys,
            vec![(0, "walk_sidewalk"), (reach, "cross_crosswalk"), (across, "walk_sidewalk")],
        );
    }

    fn parked_car(&mut self, x: f64) -> String {
        self.add("car", vec![(0, Point::new(x, PARKING_Y)), (self.frames, Point::new(x, PARKING_Y))], vec![(0, "drive_road")])
    }

    fn nominal_background(&mut self) {
        self.random_traffic();
        let n = self.rng.random_range(3..=4);
        self.random_walkers(SIDEWALK_Y, "walk_sidewalk", n);
        self.couple();
        let n = self.rng.random_range(1..=2);
        self.random_walkers(LAWN_Y, "walk_grass", n);
        let n = self.rng.random_range(1..=2);
        for _ in 0..n {
            self.crosser();
        }
    }
}

/// Nominal-only scene.
pub fn nominal_scenario(seed: u64, frames: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cast = Cast::new(&mut rng, frames);
    let x = cast.rng.random_range(200.0..700.0);
    cast.parked_car(x);
    cast.nominal_background();
    Scenario {
        seed,
        frames,
        actors: cast.actors,
        injections: Vec::new(),
    }
}

fn inject_sit_on_car(cast: &mut Cast, start: u64, end: u64) -> Injection {
    let x = cast.rng.random_range(250.0..650.0);
    let car = cast.parked_car(x);
    let speed = 2.0;
    let from = Point::new(x - 200.0, SIDEWALK_Y);
    let seat = Point::new(x + 10.0, PARKING_Y + 10.0);
    let keys = PathBuilder::start(start - travel(from, seat, speed), from)
        .walk_to(seat, speed)
        .hold_until(end)
        .walk_to(Point::new(x + 10.0, SIDEWALK_Y), speed)
        .walk_to(Point::new(1250.0, SIDEWALK_Y), speed)
        .build();
    let person = cast.add("person", keys, vec![(0, "walk_sidewalk")]);
    Injection {
        tag: "sit_on_car".into(),
        start,
        end,
        actors: vec![person, car],
    }
}

fn inject_crouch(cast: &mut Cast, start: u64, end: u64) -> Injection {
    let x = cast.rng.random_range(300.0..1000.0);
    let speed = 1.8;
    let from = Point::new(40.0, LAWN_Y);
    let spot = Point::new(x, LAWN_Y);
    let keys = PathBuilder::start(start.saturating_sub(travel(from, spot, speed)), from)
        .walk_to(spot, speed)
        .hold_until(end)
        .walk_to(Point::new(1250.0, LAWN_Y), speed)
        .build();
    let person = cast.add("person", keys, vec![(0, "walk_grass")]);
    Injection {
        tag: "crouch_ground".into(),
        start,
        end,
        actors: vec![person],
    }
}

fn inject_dog(cast: &mut Cast, start: u64, end: u64) -> Injection {
    let x0 = cast.rng.random_range(40.0..200.0);
    let x1 = (x0 + 3.0 * (end - start) as f64).min(1250.0);
    let y = LAWN_Y + 20.0;
    let dog = cast.add("dog", vec![(start, Point::new(x0, y)), (end - 1, Point::new(x1, y))], vec![(0, "dog_alone")]);
    Injection {
        tag: "dog_alone".into(),
        start,
        end,
        actors: vec![dog],
    }
}

fn inject_leave_object(cast: &mut Cast, start: u64, end: u64) -> Injection {
    let x = cast.rng.random_range(300.0..900.0);
    let speed = 2.0;
    let from = Point::new(1240.0, SIDEWALK_Y);
    let spot = Point::new(x, SIDEWALK_Y);
    let keys = PathBuilder::start(start.saturating_sub(travel(from, spot, speed)), from)
        .walk_to(spot, speed)
        .hold_until(start + 30)
        .walk_to(Point::new(30.0, SIDEWALK_Y), speed)
        .build();
    let person = cast.add("person", keys, vec![(0, "walk_sidewalk")]);
    let bag_at = Point::new(x + 30.0, SIDEWALK_Y + 30.0);
    let bag = cast.add("bag", vec![(start, bag_at), (end - 1, bag_at)], vec![(0, "leave_object")]);
    Injection {
        tag: "leave_object".into(),
        start,
        end,
        actors: vec![person, bag],
    }
}

fn inject_person_in_box(cast: &mut Cast, start: u64, end: u64) -> Injection {
    let x0 = cast.rng.random_range(100.0..600.0);
    let y = SIDEWALK_Y + 5.0;
    let boxed = cast.add(
        "box",
        vec![(start, Point::new(x0, y)), (end - 1, Point::new(x0 + 0.6 * (end - start) as f64, y))],
        vec![(0, "person_in_box")],
    );
    Injection {
        tag: "person_in_box".into(),
        start,
        end,
        actors: vec![boxed],
    }
}

/// Nominal background plus two injected anomalies; `variant` picks which.
pub fn anomaly_scenario(seed: u64, frames: u64, variant: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cast = Cast::new(&mut rng, frames);
    cast.nominal_background();
    let injections = match variant % 3 {
        0 => vec![inject_crouch(&mut cast, 120, 240), inject_sit_on_car(&mut cast, 300, 420)],
        1 => vec![inject_dog(&mut cast, 210, 360), inject_leave_object(&mut cast, 390, 510)],
        _ => vec![inject_person_in_box(&mut cast, 60, 180), inject_crouch(&mut cast, 330, 450)],
    };
    Scenario {
        seed,
        frames,
        actors: cast.actors,
        injections,
    }
}

/// Seeded suite of nominal training videos and anomaly-injected test
/// videos. Video seeds are drawn in order from one generator seeded by
/// `cfg.seed`.
pub fn suite(cfg: &SuiteConfig, pairing: &PairingConfig) -> Result<Vec<(Split, SynthVideo)>, SynthError> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for i in 0..cfg.train_videos {
        let seed: u64 = master.random();
        let meta = scene_meta(&format!("train_{i:02}"), cfg.frames);
        out.push((Split::Train, generate(&nominal_scenario(seed, cfg.frames), &meta, pairing)?));
    }
    for i in 0..cfg.test_videos {
        let seed: u64 = master.random();
        let meta = scene_meta(&format!("test_{i:02}"), cfg.frames);
        out.push((Split::Test, generate(&anomaly_scenario(seed, cfg.frames, i), &meta, pairing)?));
    }
    Ok(out)
}

/// Pairing used for synthetic scenes: sidewalk, road and lawn objects pair
/// only within their band.
pub fn scene_pairing() -> PairingConfig {
    PairingConfig {
        h: 150.0,
        delta: 30,
        stride: 30,
    }
}

pub fn is_nominal_tag(tag: &str) -> bool {
    NOMINAL_TAGS.contains(&tag)
}

pub fn is_anomaly_tag(tag: &str) -> bool {
    ANOMALY_TAGS.contains(&tag)
}
