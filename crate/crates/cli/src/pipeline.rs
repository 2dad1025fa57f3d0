//! Stage implementations over the stage directory layout.
//!
//! Every stage reads its predecessors' artifacts from
//! `<stage_dir>/<stage>/<video>/`, writes its own under
//! `<stage_dir>/<name>/`, and finishes with a manifest. Output directories
//! are recreated on every run.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use exemvad_core::backend::RetryPolicy;
use exemvad_core::cropper::{annotate_and_crop, crop_spec, encode_png, CropConfig, CropSpec, FrameStore, RED};
use exemvad_core::describe::{
    build_prompt, read_descriptions, write_descriptions, DescribeBackend, DescribeJob, Describer, DescriptionCache,
    DescriptionRecord, HttpDescribeBackend, MockDescribeBackend,
};
use exemvad_core::eval::{evaluate, write_curve_csv, EvalReport};
use exemvad_core::exemplar::{build_set, Exemplar, ModelMeta, NominalModel, Source};
use exemvad_core::fuse::{
    build_fused_set, extract_attributes, score_fused_batch, Attribute, FusedEntry, FusedItem, FusedModel,
};
use exemvad_core::ingest::{
    parse_detections, parse_ground_truth, parse_meta, tracks_from_detections, write_detections, write_ground_truth,
    Detection, GroundTruth, GtRegion, Track, VideoMeta,
};
use exemvad_core::pairing::{build_all_units, Unit, UnitKind};
use exemvad_core::score::{
    explain, project_scores, read_frames, read_regions, read_scores, score_batch, top_n, write_frames, write_regions,
    write_scores, FrameScoreSeries, ScoreRecord, ScoringItem,
};
use exemvad_core::synth::{read_behaviors, scene_meta, suite, SuiteConfig};
use exemvad_core::textdist::{embed_all, EmbedBackend, EmbeddingVec, HttpEmbedder, MockEmbedder};
use exemvad_core::Exec;
use serde::Serialize;

use crate::config::{BackendSpec, PipelineConfig};
use crate::error::CliError;
use crate::manifest::{write_manifest, InputSet, StageManifest};

pub const SYNTH: &str = "synth";
pub const INGEST: &str = "ingest";
pub const PAIR: &str = "pair";
pub const CROP: &str = "crop";
pub const DESCRIBE: &str = "describe";
pub const BUILD: &str = "build";
pub const SCORE: &str = "score";
pub const FUSE_BUILD: &str = "fuse-build";
pub const FUSE_SCORE: &str = "fuse-score";
pub const EVAL: &str = "eval";
pub const FUSE_EVAL: &str = "fuse-eval";

pub const MODEL_FILE: &str = "model.bin";
pub const REPORT_FILE: &str = "report.json";

/// Ingested inputs of one video.
#[derive(Clone, Debug)]
pub struct VideoData {
    pub meta: VideoMeta,
    pub detections: Vec<Detection>,
    pub tracks: HashMap<String, Track>,
    pub gt: GroundTruth,
}

/// One unit together with its description.
struct Described {
    unit: Unit,
    record: DescriptionRecord,
}

#[derive(Serialize)]
struct CropLine<'a> {
    #[serde(flatten)]
    spec: &'a CropSpec,
    image_t: String,
    image_t2: String,
}

#[derive(serde::Deserialize)]
struct CropIndexLine {
    unit_id: String,
    image_t: String,
    image_t2: String,
}

#[derive(Serialize)]
struct BuildSummary {
    pair_exemplars: usize,
    single_exemplars: usize,
    pair_units: usize,
    single_units: usize,
    rejected: usize,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    exec: Exec,
    config_hash: String,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Self {
        if cfg.workers > 0 {
            exemvad_core::exec::init_workers(cfg.workers);
        }
        let config_hash = cfg.config_hash();
        Self {
            cfg,
            exec: Exec::default(),
            config_hash,
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn stage_path(&self, stage: &str) -> PathBuf {
        self.cfg.paths.stage_dir.join(stage)
    }

    fn fresh(&self, stage: &str) -> Result<PathBuf, CliError> {
        let dir = self.stage_path(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }

    fn require(&self, stage: &str, rel: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let path = self.stage_path(stage).join(rel);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::StageDependency {
                stage: stage.to_string(),
                path,
            })
        }
    }

    fn versions(&self, extra: &[(&str, &str)]) -> BTreeMap<String, String> {
        let mut v = BTreeMap::new();
        v.insert("exemvad-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        v.insert("exemvad-core".to_string(), exemvad_core::VERSION.to_string());
        for (k, val) in extra {
            v.insert(k.to_string(), val.to_string());
        }
        v
    }

    fn finish(&self, dir: &Path, stage: &str, inputs: &InputSet, extra: &[(&str, &str)]) -> Result<StageManifest, CliError> {
        write_manifest(dir, stage, &self.config_hash, inputs, self.versions(extra))
    }

    /// Directory holding the raw per-video inputs: the `synth` output when
    /// synthesis is enabled or no data directory is configured, otherwise
    /// `paths.data`.
    pub fn data_root(&self) -> Result<PathBuf, CliError> {
        if self.cfg.synth.enabled || self.cfg.paths.data.is_none() {
            let root = self.stage_path(SYNTH);
            if !root.join(crate::manifest::MANIFEST_FILE).exists() {
                return Err(CliError::StageDependency {
                    stage: SYNTH.into(),
                    path: root,
                });
            }
            return Ok(root);
        }
        let root = self
            .cfg
            .paths
            .data
            .clone()
            .ok_or_else(|| CliError::Config("paths.data is not set and synth is disabled".into()))?;
        if !root.is_dir() {
            return Err(CliError::Config(format!("data directory {} does not exist", root.display())));
        }
        Ok(root)
    }

    /// Training and test video ids, from the config or by directory prefix.
    pub fn videos(&self) -> Result<(Vec<String>, Vec<String>), CliError> {
        let (mut train, mut test) = (self.cfg.paths.train.clone(), self.cfg.paths.test.clone());
        if train.is_empty() || test.is_empty() {
            let root = self.data_root()?;
            let mut found = Vec::new();
            for entry in fs::read_dir(&root).map_err(|e| CliError::io(&root, e))? {
                let entry = entry.map_err(|e| CliError::io(&root, e))?;
                if entry.path().is_dir() {
                    found.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            found.sort();
            if train.is_empty() {
                train = found.iter().filter(|v| v.starts_with("train")).cloned().collect();
            }
            if test.is_empty() {
                test = found.iter().filter(|v| v.starts_with("test")).cloned().collect();
            }
        }
        Ok((train, test))
    }

    fn all_videos(&self) -> Result<Vec<String>, CliError> {
        let (mut all, test) = self.videos()?;
        all.extend(test);
        if all.is_empty() {
            return Err(CliError::Input("no training or test videos found".into()));
        }
        Ok(all)
    }

    fn test_videos(&self) -> Result<Vec<String>, CliError> {
        let (_, test) = self.videos()?;
        if test.is_empty() {
            return Err(CliError::Input("no test videos found".into()));
        }
        Ok(test)
    }

    fn train_videos(&self) -> Result<Vec<String>, CliError> {
        let (train, _) = self.videos()?;
        if train.is_empty() {
            return Err(CliError::Input("no training videos found".into()));
        }
        Ok(train)
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.cfg.backends.max_retries,
            ..RetryPolicy::default()
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.cfg.backends.timeout_secs.max(1))
    }

    fn embedder(&self) -> Box<dyn EmbedBackend> {
        match &self.cfg.backends.embed {
            BackendSpec::Mock => Box::new(MockEmbedder::default()),
            BackendSpec::Http(url) => Box::new(HttpEmbedder::new(url, self.timeout())),
        }
    }

    fn embed_texts(&self, embedder: &dyn EmbedBackend, texts: &[&str]) -> Result<Vec<EmbeddingVec>, CliError> {
        Ok(embed_all(
            embedder,
            texts,
            self.cfg.backends.embed_batch,
            self.cfg.backends.in_flight,
            &self.retry(),
        )?)
    }

    // ---- synth -------------------------------------------------------------

    pub fn synth(&self) -> Result<StageManifest, CliError> {
        let out = self.fresh(SYNTH)?;
        let s = &self.cfg.synth;
        let suite_cfg = SuiteConfig {
            seed: self.cfg.seed,
            train_videos: s.train_videos,
            test_videos: s.test_videos,
            frames: s.frames,
        };
        let pairing = self.cfg.pairing.resolve(&scene_meta("scene", s.frames));
        pairing.validate()?;
        let videos = suite(&suite_cfg, &pairing)?;
        self.exec.try_map(&videos, |(_, v)| v.write_to(&out, s.image_every))?;
        self.finish(&out, SYNTH, &InputSet::default(), &[])
    }

    // ---- ingest ------------------------------------------------------------

    pub fn ingest(&self) -> Result<StageManifest, CliError> {
        let root = self.data_root()?;
        let videos = self.all_videos()?;
        let out = self.fresh(INGEST)?;
        let mut inputs = InputSet::default();
        for v in &videos {
            let src = root.join(v);
            let meta_path = src.join("meta.json");
            let det_path = src.join("detections.jsonl");
            let gt_path = src.join("gt.jsonl");
            let meta = parse_meta(open(&meta_path)?)?;
            meta.validate()?;
            if &meta.video_id != v {
                return Err(CliError::Input(format!(
                    "{}: video_id {:?} does not match directory {v:?}",
                    meta_path.display(),
                    meta.video_id
                )));
            }
            let dets = parse_detections(BufReader::new(open(&det_path)?), &meta)?;
            let gt = if gt_path.exists() {
                inputs.add(format!("data/{v}/gt.jsonl"), &gt_path);
                parse_ground_truth(BufReader::new(open(&gt_path)?))?
            } else {
                GroundTruth::default()
            };
            gt.check_bounds(&meta)?;
            inputs.add(format!("data/{v}/meta.json"), &meta_path);
            inputs.add(format!("data/{v}/detections.jsonl"), &det_path);

            let dir = out.join(v);
            mkdir(&dir)?;
            let mut meta_bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
            meta_bytes.push(b'\n');
            write_file(&dir.join("meta.json"), &meta_bytes)?;
            write_with(&dir.join("detections.jsonl"), |w| write_detections(w, &dets))?;
            write_with(&dir.join("gt.jsonl"), |w| write_ground_truth(w, &gt))?;
        }
        self.finish(&out, INGEST, &inputs, &[])
    }

    /// Loads the ingested artifacts of `video`, recording them in `inputs`.
    pub fn load_video(&self, video: &str, inputs: &mut InputSet) -> Result<VideoData, CliError> {
        let meta_path = self.require(INGEST, format!("{video}/meta.json"))?;
        let det_path = self.require(INGEST, format!("{video}/detections.jsonl"))?;
        let gt_path = self.require(INGEST, format!("{video}/gt.jsonl"))?;
        let meta = parse_meta(open(&meta_path)?)?;
        let detections = parse_detections(BufReader::new(open(&det_path)?), &meta)?;
        let gt = parse_ground_truth(BufReader::new(open(&gt_path)?))?;
        inputs.add(format!("{INGEST}/{video}/meta.json"), meta_path);
        inputs.add(format!("{INGEST}/{video}/detections.jsonl"), det_path);
        inputs.add(format!("{INGEST}/{video}/gt.jsonl"), gt_path);
        let tracks = tracks_from_detections(&detections)
            .into_iter()
            .map(|t| (t.object_id.clone(), t))
            .collect();
        Ok(VideoData {
            meta,
            detections,
            tracks,
            gt,
        })
    }

    // ---- pair --------------------------------------------------------------

    pub fn pair(&self) -> Result<StageManifest, CliError> {
        let videos = self.all_videos()?;
        let mut inputs = InputSet::default();
        let loaded = videos
            .iter()
            .map(|v| self.load_video(v, &mut inputs))
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.fresh(PAIR)?;
        for (v, data) in videos.iter().zip(&loaded) {
            let pairing = self.cfg.pairing.resolve(&data.meta);
            pairing.validate()?;
            let units = build_all_units(&data.detections, &data.meta, &pairing, self.exec);
            let dir = out.join(v);
            mkdir(&dir)?;
            write_with(&dir.join("units.jsonl"), |w| write_jsonl(w, &units))?;
        }
        self.finish(&out, PAIR, &inputs, &[])
    }

    pub fn load_units(&self, video: &str, inputs: &mut InputSet) -> Result<Vec<Unit>, CliError> {
        let path = self.require(PAIR, format!("{video}/units.jsonl"))?;
        let units = read_jsonl(&path)?;
        inputs.add(format!("{PAIR}/{video}/units.jsonl"), path);
        Ok(units)
    }

    // ---- crop --------------------------------------------------------------

    pub fn crop(&self) -> Result<StageManifest, CliError> {
        let root = self.data_root()?;
        let videos = self.all_videos()?;
        let crop_cfg: CropConfig = self.cfg.crop.into();
        let store = FrameStore::new(&root);
        let mut inputs = InputSet::default();
        let mut work = Vec::with_capacity(videos.len());
        for v in &videos {
            let data = self.load_video(v, &mut inputs)?;
            let units = self.load_units(v, &mut inputs)?;
            work.push((v, data, units));
        }
        let out = self.fresh(CROP)?;
        for (v, data, units) in &work {
            let specs = self
                .exec
                .try_map(units, |u| crop_spec(u, &data.tracks, &data.meta, &crop_cfg))?;
            let mut frames: Vec<u64> = specs.iter().flat_map(|s| [s.frames.0, s.frames.1]).collect();
            frames.sort_unstable();
            frames.dedup();
            for &f in &frames {
                inputs.add(format!("data/{v}/frames/{f:06}.png"), store.frame_path(v, f));
            }
            let images: HashMap<u64, _> = frames
                .iter()
                .copied()
                .zip(self.exec.try_map(&frames, |&f| store.load(&data.meta, f))?)
                .collect();
            let encoded = self.exec.try_map(&specs, |spec| {
                let pair = annotate_and_crop(&images[&spec.frames.0], &images[&spec.frames.1], spec, crop_cfg.stroke_px, RED)?;
                Ok::<_, CliError>((encode_png(&pair.image_t)?, encode_png(&pair.image_t2)?))
            })?;
            let dir = out.join(v);
            mkdir(&dir.join("png"))?;
            let mut lines = Vec::with_capacity(specs.len());
            for (i, (spec, (png_t, png_t2))) in specs.iter().zip(&encoded).enumerate() {
                let name_t = format!("png/{i:05}_t.png");
                let name_t2 = format!("png/{i:05}_t2.png");
                write_file(&dir.join(&name_t), png_t)?;
                write_file(&dir.join(&name_t2), png_t2)?;
                lines.push(CropLine {
                    spec,
                    image_t: name_t,
                    image_t2: name_t2,
                });
            }
            write_with(&dir.join("crops.jsonl"), |w| write_jsonl(w, &lines))?;
        }
        self.finish(&out, CROP, &inputs, &[])
    }

    // ---- describe ----------------------------------------------------------

    fn describe_backend(&self, videos: &[String], inputs: &mut InputSet) -> Result<Box<dyn DescribeBackend>, CliError> {
        match &self.cfg.backends.describe {
            BackendSpec::Http(url) => Ok(Box::new(HttpDescribeBackend::new(url, self.timeout()))),
            BackendSpec::Mock => {
                let root = self.data_root()?;
                let mut behaviors = HashMap::new();
                for v in videos {
                    let path = root.join(v).join("behaviors.jsonl");
                    if !path.exists() {
                        return Err(CliError::Config(format!(
                            "the mock describe backend needs {}; use an HTTP backend for real data",
                            path.display()
                        )));
                    }
                    behaviors.extend(read_behaviors(BufReader::new(open(&path)?))?);
                    inputs.add(format!("data/{v}/behaviors.jsonl"), path);
                }
                Ok(Box::new(MockDescribeBackend::new(behaviors)))
            }
        }
    }

    pub fn describe(&self) -> Result<StageManifest, CliError> {
        let videos = self.all_videos()?;
        let mut inputs = InputSet::default();
        let mut jobs_per_video = Vec::with_capacity(videos.len());
        for v in &videos {
            let units = self.load_units(v, &mut inputs)?;
            let index_path = self.require(CROP, format!("{v}/crops.jsonl"))?;
            let index: Vec<CropIndexLine> = read_jsonl(&index_path)?;
            inputs.add(format!("{CROP}/{v}/crops.jsonl"), &index_path);
            if index.len() != units.len() || index.iter().zip(&units).any(|(c, u)| c.unit_id != u.unit_id) {
                return Err(CliError::StageDependency {
                    stage: CROP.into(),
                    path: index_path,
                });
            }
            let crop_dir = self.stage_path(CROP).join(v);
            let mut jobs = Vec::with_capacity(units.len());
            for (unit, c) in units.iter().zip(&index) {
                let read = |name: &str| {
                    let p = crop_dir.join(name);
                    fs::read(&p).map_err(|e| CliError::io(&p, e))
                };
                jobs.push(DescribeJob {
                    unit_key: unit.key(v),
                    unit_id: unit.unit_id.clone(),
                    anchor_frame: unit.anchor_frame,
                    image_t: read(&c.image_t)?,
                    image_t2: read(&c.image_t2)?,
                    prompts: build_prompt(unit),
                });
                inputs.add(format!("{CROP}/{v}/{}", c.image_t), crop_dir.join(&c.image_t));
                inputs.add(format!("{CROP}/{v}/{}", c.image_t2), crop_dir.join(&c.image_t2));
            }
            jobs_per_video.push(jobs);
        }
        let backend = self.describe_backend(&videos, &mut inputs)?;
        let mut describer = Describer::new(backend.as_ref()).with_retry(self.retry());
        if let Some(dir) = &self.cfg.backends.cache_dir {
            describer = describer.with_cache(DescriptionCache::new(dir));
        }
        let out = self.fresh(DESCRIBE)?;
        for (v, jobs) in videos.iter().zip(&jobs_per_video) {
            let records = describer
                .describe_all(jobs, self.cfg.backends.in_flight)
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            let dir = out.join(v);
            mkdir(&dir)?;
            write_with(&dir.join("descriptions.jsonl"), |w| write_descriptions(w, &records))?;
        }
        self.finish(&out, DESCRIBE, &inputs, &[("describe_backend", backend.backend_id())])
    }

    fn load_described(&self, video: &str, inputs: &mut InputSet) -> Result<Vec<Described>, CliError> {
        let units = self.load_units(video, inputs)?;
        let path = self.require(DESCRIBE, format!("{video}/descriptions.jsonl"))?;
        let records = read_descriptions(BufReader::new(open(&path)?))?;
        inputs.add(format!("{DESCRIBE}/{video}/descriptions.jsonl"), &path);
        if records.len() != units.len() || records.iter().zip(&units).any(|(r, u)| r.unit_id != u.unit_id) {
            return Err(CliError::StageDependency {
                stage: DESCRIBE.into(),
                path,
            });
        }
        Ok(units
            .into_iter()
            .zip(records)
            .map(|(unit, record)| Described { unit, record })
            .collect())
    }

    fn describe_backend_id(described: &[(String, Vec<Described>)]) -> String {
        described
            .iter()
            .flat_map(|(_, d)| d.first())
            .map(|d| d.record.backend_id.clone())
            .next()
            .unwrap_or_default()
    }

    // ---- build -------------------------------------------------------------

    pub fn build(&self) -> Result<StageManifest, CliError> {
        let train = self.train_videos()?;
        let mut inputs = InputSet::default();
        let described = train
            .iter()
            .map(|v| Ok((v.clone(), self.load_described(v, &mut inputs)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        let embedder = self.embedder();
        let texts: Vec<&str> = described
            .iter()
            .flat_map(|(_, d)| d.iter().map(|x| x.record.text.as_str()))
            .collect();
        let mut embeddings = self.embed_texts(embedder.as_ref(), &texts)?.into_iter();
        let (mut pair_stream, mut single_stream) = (Vec::new(), Vec::new());
        for (v, items) in &described {
            for d in items {
                let e = Exemplar::new(
                    embeddings.next().expect("one embedding per text"),
                    d.record.text.clone(),
                    Source {
                        video_id: v.clone(),
                        unit_id: d.unit.unit_id.clone(),
                        anchor_frame: d.unit.anchor_frame,
                    },
                )?;
                match d.unit.kind {
                    UnitKind::Pair => pair_stream.push(e),
                    UnitKind::Single => single_stream.push(e),
                }
            }
        }
        let (n_pair, n_single) = (pair_stream.len(), single_stream.len());
        let th = self.cfg.exemplar.th;
        let dk = self.cfg.exemplar.distance;
        let pair = build_set(pair_stream, UnitKind::Pair, th, dk)?;
        let single = build_set(single_stream, UnitKind::Single, th, dk)?;
        let describe_backend = Self::describe_backend_id(&described);
        let summary = BuildSummary {
            pair_exemplars: pair.set.len(),
            single_exemplars: single.set.len(),
            pair_units: n_pair,
            single_units: n_single,
            rejected: pair.rejections.len() + single.rejections.len(),
        };
        let model = NominalModel::new(
            pair.set,
            single.set,
            ModelMeta {
                embed_backend: embedder.backend_id().to_string(),
                describe_backend: describe_backend.clone(),
                config_hash: self.config_hash.clone(),
            },
        )?;
        let out = self.fresh(BUILD)?;
        write_file(&out.join(MODEL_FILE), &model.to_bytes())?;
        write_json(&out.join("summary.json"), &summary)?;
        self.finish(
            &out,
            BUILD,
            &inputs,
            &[("describe_backend", &describe_backend), ("embed_backend", embedder.backend_id())],
        )
    }

    fn model_path(&self) -> Result<PathBuf, CliError> {
        match &self.cfg.paths.model {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => Err(CliError::Config(format!("model {} does not exist", p.display()))),
            None => self.require(BUILD, MODEL_FILE),
        }
    }

    // ---- score -------------------------------------------------------------

    pub fn score(&self) -> Result<StageManifest, CliError> {
        let test = self.test_videos()?;
        let mut inputs = InputSet::default();
        let model_path = self.model_path()?;
        let model = NominalModel::load(&model_path)?;
        inputs.add("model", &model_path);
        let embedder = self.embedder();
        if model.meta.embed_backend != embedder.backend_id() {
            return Err(CliError::Model(format!(
                "model was built with embedding backend {:?} but {:?} is configured",
                model.meta.embed_backend,
                embedder.backend_id()
            )));
        }
        let mut work = Vec::with_capacity(test.len());
        for v in &test {
            let data = self.load_video(v, &mut inputs)?;
            let described = self.load_described(v, &mut inputs)?;
            work.push((v, data, described));
        }
        let out = self.fresh(SCORE)?;
        for (v, data, described) in work {
            let texts: Vec<&str> = described.iter().map(|d| d.record.text.as_str()).collect();
            let embeddings = self.embed_texts(embedder.as_ref(), &texts)?;
            let items: Vec<ScoringItem> = described
                .into_iter()
                .zip(embeddings)
                .map(|(d, embedding)| ScoringItem {
                    unit: d.unit,
                    text: d.record.text,
                    embedding,
                })
                .collect();
            let records = score_batch(&items, &model, self.exec)?;
            self.write_scored(&out.join(v), &records, &data)?;
        }
        self.finish(&out, SCORE, &inputs, &[("embed_backend", embedder.backend_id())])
    }

    fn write_scored(&self, dir: &Path, records: &[ScoreRecord], data: &VideoData) -> Result<(), CliError> {
        let (regions, series) = project_scores(records, &data.tracks, &data.meta, self.exec)?;
        mkdir(dir)?;
        write_with(&dir.join("scores.jsonl"), |w| write_scores(w, records))?;
        write_with(&dir.join("regions.jsonl"), |w| write_regions(w, &regions))?;
        write_with(&dir.join("frames.csv"), |w| write_frames(w, &series))?;
        Ok(())
    }

    // ---- fusion ------------------------------------------------------------

    fn fused_items(
        &self,
        video: &str,
        embedder: &dyn EmbedBackend,
        inputs: &mut InputSet,
    ) -> Result<(VideoData, Vec<FusedItem>), CliError> {
        let data = self.load_video(video, inputs)?;
        let described = self.load_described(video, inputs)?;
        let mut embeddings: Vec<Option<EmbeddingVec>> = if self.cfg.fusion.active.contains(&Attribute::Description) {
            let texts: Vec<&str> = described.iter().map(|d| d.record.text.as_str()).collect();
            self.embed_texts(embedder, &texts)?.into_iter().map(Some).collect()
        } else {
            vec![None; described.len()]
        };
        let grid = self.cfg.fusion.grid;
        let items = described
            .into_iter()
            .zip(embeddings.drain(..))
            .map(|(d, emb)| {
                let attrs = extract_attributes(&d.unit, &data.tracks, &data.meta, grid, emb)?;
                Ok(FusedItem {
                    unit: d.unit,
                    text: d.record.text,
                    attrs,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok((data, items))
    }

    pub fn fuse_build(&self) -> Result<StageManifest, CliError> {
        let train = self.train_videos()?;
        let mut inputs = InputSet::default();
        let embedder = self.embedder();
        let (mut pair_stream, mut single_stream) = (Vec::new(), Vec::new());
        for v in &train {
            let (_, items) = self.fused_items(v, embedder.as_ref(), &mut inputs)?;
            for it in items {
                let entry = FusedEntry {
                    attrs: it.attrs,
                    text: it.text,
                    source: Source {
                        video_id: v.clone(),
                        unit_id: it.unit.unit_id.clone(),
                        anchor_frame: it.unit.anchor_frame,
                    },
                };
                match it.unit.kind {
                    UnitKind::Pair => pair_stream.push(entry),
                    UnitKind::Single => single_stream.push(entry),
                }
            }
        }
        let th = self.cfg.exemplar.th;
        let fusion = &self.cfg.fusion;
        let model = FusedModel {
            pair: build_fused_set(pair_stream, UnitKind::Pair, th, fusion)?,
            single: build_fused_set(single_stream, UnitKind::Single, th, fusion)?,
            config: fusion.clone(),
            meta: ModelMeta {
                embed_backend: embedder.backend_id().to_string(),
                describe_backend: String::new(),
                config_hash: self.config_hash.clone(),
            },
        };
        let out = self.fresh(FUSE_BUILD)?;
        write_file(&out.join(MODEL_FILE), &model.to_bytes()?)?;
        self.finish(&out, FUSE_BUILD, &inputs, &[("embed_backend", embedder.backend_id())])
    }

    pub fn fuse_score(&self) -> Result<StageManifest, CliError> {
        let test = self.test_videos()?;
        let mut inputs = InputSet::default();
        let model_path = self.require(FUSE_BUILD, MODEL_FILE)?;
        let model = FusedModel::load(&model_path)?;
        inputs.add("model", &model_path);
        if model.config.active != self.cfg.fusion.active {
            return Err(CliError::Model(format!(
                "fused model was built with attributes {:?} but {:?} are configured",
                model.config.active, self.cfg.fusion.active
            )));
        }
        let embedder = self.embedder();
        let mut work = Vec::with_capacity(test.len());
        for v in &test {
            work.push((v, self.fused_items(v, embedder.as_ref(), &mut inputs)?));
        }
        let out = self.fresh(FUSE_SCORE)?;
        for (v, (data, items)) in work {
            let records = score_fused_batch(&items, &model, self.exec)?;
            self.write_scored(&out.join(v), &records, &data)?;
        }
        self.finish(&out, FUSE_SCORE, &inputs, &[("embed_backend", embedder.backend_id())])
    }

    // ---- eval / explain ----------------------------------------------------

    /// Pools the test videos into one evaluation instance: frames and track
    /// ids of each video are offset past those of the previous ones.
    pub fn eval(&self, fused: bool) -> Result<EvalReport, CliError> {
        let (source, stage) = if fused { (FUSE_SCORE, FUSE_EVAL) } else { (SCORE, EVAL) };
        let test = self.test_videos()?;
        let mut inputs = InputSet::default();
        let mut regions = Vec::new();
        let mut values = Vec::new();
        let mut gt_regions = Vec::new();
        let mut track_offset = 0u64;
        for v in &test {
            let data = self.load_video(v, &mut inputs)?;
            let region_path = self.require(source, format!("{v}/regions.jsonl"))?;
            let frames_path = self.require(source, format!("{v}/frames.csv"))?;
            let video_regions = read_regions(BufReader::new(open(&region_path)?))?;
            let series = read_frames(BufReader::new(open(&frames_path)?))?;
            inputs.add(format!("{source}/{v}/regions.jsonl"), region_path);
            inputs.add(format!("{source}/{v}/frames.csv"), &frames_path);
            if series.len() as u64 != data.meta.frames {
                return Err(CliError::StageDependency {
                    stage: source.into(),
                    path: frames_path,
                });
            }
            let frame_offset = values.len() as u64;
            regions.extend(video_regions.into_iter().map(|mut r| {
                r.frame_idx += frame_offset;
                r
            }));
            values.extend(series.values);
            let mut max_track = None;
            for r in &data.gt.regions {
                gt_regions.push(GtRegion {
                    frame_idx: r.frame_idx + frame_offset,
                    rect: r.rect,
                    track_id: r.track_id + track_offset,
                });
                max_track = max_track.max(Some(r.track_id));
            }
            if let Some(m) = max_track {
                track_offset += m + 1;
            }
        }
        let gt = GroundTruth::from_regions(gt_regions);
        let series = FrameScoreSeries { values };
        let report = evaluate(&regions, &series, &gt, &self.cfg.eval)?;
        let out = self.fresh(stage)?;
        write_json(&out.join(REPORT_FILE), &report)?;
        for curve in &report.curves {
            write_with(&out.join(format!("{}.csv", curve.criterion)), |w| write_curve_csv(w, &curve.points))?;
        }
        self.finish(&out, stage, &inputs, &[])?;
        Ok(report)
    }

    /// The `top` highest-scoring units over all test videos, one
    /// explanation block each, in descending score order.
    pub fn explain(&self, top: usize, fused: bool) -> Result<Vec<String>, CliError> {
        let source = if fused { FUSE_SCORE } else { SCORE };
        let mut all = Vec::new();
        for v in &self.test_videos()? {
            let path = self.require(source, format!("{v}/scores.jsonl"))?;
            for mut rec in read_scores(BufReader::new(open(&path)?))? {
                rec.unit_id = format!("{v}/{}", rec.unit_id);
                all.push(rec);
            }
        }
        Ok(top_n(&all, top)
            .into_iter()
            .enumerate()
            .map(|(i, rec)| format!("#{} {}", i + 1, explain(rec)))
            .collect())
    }

    // ---- run ---------------------------------------------------------------

    /// Chains every stage: synth (when enabled), ingest, pair, crop,
    /// describe, then build on the training videos and score plus eval on
    /// the test videos. With `fuse`, the fused model is built, scored and
    /// evaluated as well.
    pub fn run(&self, fuse: bool) -> Result<RunOutcome, CliError> {
        if self.cfg.synth.enabled {
            self.synth()?;
        }
        self.ingest()?;
        self.pair()?;
        self.crop()?;
        self.describe()?;
        let (train, test) = self.videos()?;
        if !train.is_empty() {
            self.build()?;
        }
        let mut outcome = RunOutcome::default();
        if !test.is_empty() {
            self.score()?;
            outcome.report = Some(self.eval(false)?);
        }
        if fuse {
            if !train.is_empty() {
                self.fuse_build()?;
            }
            if !test.is_empty() {
                self.fuse_score()?;
                outcome.fused_report = Some(self.eval(true)?);
            }
        }
        Ok(outcome)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub report: Option<EvalReport>,
    pub fused_report: Option<EvalReport>,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn write_jsonl<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    for it in items {
        serde_json::to_writer(&mut *w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
