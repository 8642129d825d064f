//! End-to-end runs: key clips, motion discovery, context labeling,
//! training and evaluation, with content-hash stage skipping.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concepts::ConceptKind;
use crate::context::{run_context_labeling, vocab_path, write_context_labels, ConceptFilterParams, EmbeddingTable};
use crate::error::{invalid, Error, Result};
use crate::ingest::manifest::{load_manifest, DatasetManifest};
use crate::ingest::tensor::read_tensor;
use crate::intervene::{evaluate, Metrics};
use crate::keyclip::{video_key_clips, KeyClipsFile, KeyframeParams};
use crate::motion::{run_motion_discovery, MotionParams};
use crate::train::{load_label_file, train_on_split, DanceModel, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Directory for artifacts without an explicit path.
    pub work_dir: Option<PathBuf>,
    pub clips: Option<PathBuf>,
    pub motion_concepts: Option<PathBuf>,
    pub motion_labels: Option<PathBuf>,
    pub object_candidates: Option<PathBuf>,
    pub scene_candidates: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub object_labels: Option<PathBuf>,
    pub scene_labels: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub train_split: String,
    pub eval_split: String,
    pub clip_length: usize,
    pub keyframes: KeyframeParams,
    pub motion: MotionParams,
    pub concept_filter: ConceptFilterParams,
    pub clamp_pseudo_labels: bool,
    pub train: TrainConfig,
    /// Overrides `train.seed` when set.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            work_dir: None,
            clips: None,
            motion_concepts: None,
            motion_labels: None,
            object_candidates: None,
            scene_candidates: None,
            text_embeddings: None,
            object_labels: None,
            scene_labels: None,
            model_dir: None,
            metrics: None,
            train_split: "train".into(),
            eval_split: "test".into(),
            clip_length: 16,
            keyframes: KeyframeParams::default(),
            motion: MotionParams::default(),
            concept_filter: ConceptFilterParams::default(),
            clamp_pseudo_labels: false,
            train: TrainConfig::default(),
            seed: None,
        }
    }
}

impl RunConfig {
    /// Reads a config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.paths_mut() {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 12] {
        [
            &mut self.manifest,
            &mut self.work_dir,
            &mut self.clips,
            &mut self.motion_concepts,
            &mut self.motion_labels,
            &mut self.object_candidates,
            &mut self.scene_candidates,
            &mut self.text_embeddings,
            &mut self.object_labels,
            &mut self.scene_labels,
            &mut self.model_dir,
            &mut self.metrics,
        ]
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }

    pub fn work_dir(&self) -> Result<PathBuf> {
        if let Some(w) = &self.work_dir {
            return Ok(w.clone());
        }
        let m = self.require(&self.manifest, "--manifest")?;
        Ok(m.parent().unwrap_or(Path::new(".")).join("run"))
    }

    fn artifact(&self, explicit: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        match explicit {
            Some(p) => Ok(p.clone()),
            None => Ok(self.work_dir()?.join(default)),
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing {flag} (not given on the command line or in the config)")))
    }

    /// Artifact paths with defaults under the work directory.
    pub fn paths(&self) -> Result<RunPaths> {
        Ok(RunPaths {
            manifest: self.require(&self.manifest, "--manifest")?.clone(),
            clips: self.artifact(&self.clips, "clips.json")?,
            motion_concepts: self.artifact(&self.motion_concepts, "motion_concepts.json")?,
            motion_labels: self.artifact(&self.motion_labels, "c_m.dtf")?,
            object_candidates: self.require(&self.object_candidates, "--object-candidates")?.clone(),
            scene_candidates: self.require(&self.scene_candidates, "--scene-candidates")?.clone(),
            text_embeddings: self.require(&self.text_embeddings, "--text-embeddings")?.clone(),
            object_labels: self.artifact(&self.object_labels, "c_obj.dtf")?,
            scene_labels: self.artifact(&self.scene_labels, "c_scene.dtf")?,
            model_dir: self.artifact(&self.model_dir, "model")?,
            metrics: self.artifact(&self.metrics, "metrics.json")?,
            stamps: self.work_dir()?.join(".stamps"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub manifest: PathBuf,
    pub clips: PathBuf,
    pub motion_concepts: PathBuf,
    pub motion_labels: PathBuf,
    pub object_candidates: PathBuf,
    pub scene_candidates: PathBuf,
    pub text_embeddings: PathBuf,
    pub object_labels: PathBuf,
    pub scene_labels: PathBuf,
    pub model_dir: PathBuf,
    pub metrics: PathBuf,
    pub stamps: PathBuf,
}

/// Key clip windows for every manifest video that has a frame stack.
pub fn keyclips_stage(manifest: &DatasetManifest, clip_length: usize, params: &KeyframeParams) -> Result<KeyClipsFile> {
    let mut videos = Vec::new();
    for v in manifest.videos() {
        let Some(frames) = &v.frames_path else { continue };
        let stack = read_tensor(frames)?.to_array3()?;
        videos.push(video_key_clips(&stack, clip_length, params, &v.id)?);
    }
    Ok(KeyClipsFile {
        clip_length,
        params: *params,
        videos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub split: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// SHA-256 over the files under `paths` (directories recursively, in
/// sorted order), each prefixed by its name relative to the given root.
pub fn hash_paths(tag: &str, params: &str, paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0]);
    h.update(params.as_bytes());
    for root in paths {
        let mut files = Vec::new();
        collect_files(root, &mut files)?;
        h.update([1]);
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    inputs: String,
    outputs: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: String,
    pub skipped: bool,
}

struct StageRunner<'a> {
    stamps: &'a Path,
    runs: Vec<StageRun>,
}

impl StageRunner<'_> {
    fn run(
        &mut self,
        stage: &str,
        params: &impl Serialize,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<()> {
        let wrap = |e: Error| e.in_stage(stage);
        let params = serde_json::to_string(params).map_err(|e| wrap(Error::Config(e.to_string())))?;
        let input_hash = hash_paths(stage, &params, inputs).map_err(wrap)?;
        let stamp_path = self.stamps.join(format!("{}.json", stage.replace(':', "_")));
        let previous: Option<Stamp> = fs::read_to_string(&stamp_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        if let Some(prev) = previous {
            let outputs_exist = outputs.iter().all(|p| p.exists());
            if prev.inputs == input_hash && outputs_exist && hash_paths("", "", outputs).ok() == Some(prev.outputs) {
                log::info!("{stage}: inputs unchanged, skipping");
                self.runs.push(StageRun { stage: stage.into(), skipped: true });
                return Ok(());
            }
        }
        log::info!("{stage}: running");
        body().map_err(wrap)?;
        let stamp = Stamp {
            inputs: input_hash,
            outputs: hash_paths("", "", outputs).map_err(wrap)?,
        };
        write_json(&stamp_path, &stamp).map_err(wrap)?;
        self.runs.push(StageRun { stage: stage.into(), skipped: false });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageRun>,
    pub model_dir: PathBuf,
    pub metrics: MetricsFile,
}

/// Runs every stage in dependency order. A stage whose inputs, parameters
/// and outputs are unchanged since its last run is skipped.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineReport> {
    let paths = cfg.paths()?;
    let manifest = load_manifest(&paths.manifest).map_err(|e| e.in_stage("load-manifest"))?;
    fs::create_dir_all(&paths.stamps).map_err(|e| Error::io(&paths.stamps, e))?;
    let mut runner = StageRunner {
        stamps: &paths.stamps,
        runs: Vec::new(),
    };
    let videos = manifest.videos();
    let files = |f: &dyn Fn(&crate::ingest::VideoRecord) -> Option<PathBuf>| -> Vec<PathBuf> {
        videos.iter().filter_map(f).collect()
    };
    let frames = files(&|v| v.frames_path.clone());
    let poses = files(&|v| v.pose_dir.clone());
    let features = files(&|v| Some(v.feature_path.clone()));
    let vlm = files(&|v| Some(v.vlm_embedding_path.clone()));
    let with = |base: &[PathBuf], extra: &[&PathBuf]| -> Vec<PathBuf> {
        extra.iter().map(|p| (*p).clone()).chain(base.iter().cloned()).collect()
    };

    let use_clips = !frames.is_empty();
    if use_clips {
        runner.run(
            "keyclips",
            &(cfg.clip_length, cfg.keyframes),
            &with(&frames, &[&paths.manifest]),
            &[paths.clips.clone()],
            || keyclips_stage(&manifest, cfg.clip_length, &cfg.keyframes)?.write(&paths.clips),
        )?;
    }

    let mut motion_inputs = with(&poses, &[&paths.manifest]);
    if use_clips {
        motion_inputs.push(paths.clips.clone());
    }
    runner.run(
        "discover-motion",
        &(&cfg.train_split, cfg.motion),
        &motion_inputs,
        &[paths.motion_concepts.clone(), paths.motion_labels.clone(), crate::concepts::sidecar_path(&paths.motion_labels)],
        || {
            let clips = if use_clips { Some(KeyClipsFile::read(&paths.clips)?) } else { None };
            run_motion_discovery(&manifest, &cfg.train_split, clips.as_ref(), &cfg.motion)?
                .write(&paths.motion_concepts, &paths.motion_labels)
        },
    )?;

    for (stage, kind, candidates, out) in [
        ("label-context:object", ConceptKind::Object, &paths.object_candidates, &paths.object_labels),
        ("label-context:scene", ConceptKind::Scene, &paths.scene_candidates, &paths.scene_labels),
    ] {
        runner.run(
            stage,
            &(cfg.concept_filter, cfg.clamp_pseudo_labels),
            &with(&vlm, &[&paths.manifest, candidates, &paths.text_embeddings, &vocab_path(&paths.text_embeddings)]),
            &[out.clone(), crate::concepts::sidecar_path(out)],
            || {
                let table = EmbeddingTable::load(&paths.text_embeddings)?;
                let (set, labels) =
                    run_context_labeling(&manifest, kind, candidates, &table, &cfg.concept_filter, cfg.clamp_pseudo_labels)?;
                write_context_labels(&manifest, &set, &labels, out)
            },
        )?;
    }

    let train_cfg = cfg.train_config();
    let label_files: Vec<PathBuf> = [&paths.motion_labels, &paths.object_labels, &paths.scene_labels]
        .iter()
        .flat_map(|p| [(*p).clone(), crate::concepts::sidecar_path(p)])
        .collect();
    let mut train_inputs = with(&features, &[&paths.manifest]);
    train_inputs.extend(label_files);
    runner.run(
        "train",
        &(&cfg.train_split, &train_cfg),
        &train_inputs,
        &[paths.model_dir.clone()],
        || {
            let model = train_stage(&manifest, &cfg.train_split, &paths, &train_cfg)?;
            if paths.model_dir.exists() {
                fs::remove_dir_all(&paths.model_dir).map_err(|e| Error::io(&paths.model_dir, e))?;
            }
            model.save(&paths.model_dir)
        },
    )?;

    runner.run(
        "evaluate",
        &cfg.eval_split,
        &with(&features, &[&paths.manifest, &paths.model_dir]),
        &[paths.metrics.clone()],
        || {
            let model = DanceModel::load(&paths.model_dir)?;
            write_json(&paths.metrics, &evaluate_stage(&model, &manifest, &cfg.eval_split)?)
        },
    )?;

    let text = fs::read_to_string(&paths.metrics).map_err(|e| Error::io(&paths.metrics, e))?;
    let metrics: MetricsFile = serde_json::from_str(&text).map_err(|e| Error::json(&paths.metrics, e))?;
    Ok(PipelineReport {
        stages: runner.runs,
        model_dir: paths.model_dir,
        metrics,
    })
}

pub fn train_stage(manifest: &DatasetManifest, split: &str, paths: &RunPaths, cfg: &TrainConfig) -> Result<DanceModel> {
    train_from_label_paths(manifest, split, &paths.motion_labels, &paths.object_labels, &paths.scene_labels, cfg)
}

pub fn train_from_label_paths(
    manifest: &DatasetManifest,
    split: &str,
    motion: &Path,
    object: &Path,
    scene: &Path,
    cfg: &TrainConfig,
) -> Result<DanceModel> {
    let m = load_label_file(motion, ConceptKind::Motion, manifest)?;
    let o = load_label_file(object, ConceptKind::Object, manifest)?;
    let s = load_label_file(scene, ConceptKind::Scene, manifest)?;
    train_on_split(manifest, split, &m, &o, &s, cfg)
}

pub fn evaluate_stage(model: &DanceModel, manifest: &DatasetManifest, split: &str) -> Result<MetricsFile> {
    if manifest.class_names() != model.class_names() {
        return Err(invalid!("model classes differ from the manifest's"));
    }
    Ok(MetricsFile {
        split: split.to_string(),
        metrics: evaluate(model, manifest, split)?,
    })
}
