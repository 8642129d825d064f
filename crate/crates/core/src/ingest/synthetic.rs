//! Seeded synthetic datasets with planted concepts.
//!
//! Every class owns one motion, one object and one scene concept. Features
//! are `x = B c + eps` over the planted concept vector `c = [c_m; c_o; c_s]`;
//! pose clips follow one prototype trajectory per motion concept; video
//! embeddings are built so that pseudo labels recover the planted object
//! and scene labels; frame stacks carry one luminance event per clip so key
//! clip detection finds them.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{load_manifest, DatasetManifest, ManifestFile, VideoRecord};
use super::pose::{write_pose_file, PoseSequence};
use super::tensor::{write_matrix, write_tensor, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub motion_concepts: usize,
    pub object_concepts: usize,
    pub scene_concepts: usize,
    pub videos: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub clip_length: usize,
    pub joints: usize,
    pub max_clips: usize,
    pub test_fraction: f64,
    /// Zero the object and scene columns of `B` for test features.
    pub shift_test_context: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 5,
            motion_concepts: 8,
            object_concepts: 6,
            scene_concepts: 4,
            videos: 200,
            feature_dim: 32,
            noise: 0.01,
            seed: 0,
            clip_length: 16,
            joints: 17,
            max_clips: 5,
            test_fraction: 0.3,
            shift_test_context: false,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.motion_concepts < self.classes || self.object_concepts < self.classes {
            return bad(format!(
                "{} classes need at least as many motion and object concepts (got {} and {})",
                self.classes, self.motion_concepts, self.object_concepts
            ));
        }
        if self.scene_concepts == 0 {
            return bad("need at least one scene concept".into());
        }
        if self.videos < 2 * self.classes {
            return bad(format!("{} videos are too few for {} classes", self.videos, self.classes));
        }
        if self.feature_dim == 0 || self.joints < 2 || self.clip_length < 2 || self.max_clips == 0 {
            return bad("feature_dim, joints, clip_length and max_clips must be positive".into());
        }
        if !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.test_fraction) {
            return bad("noise must be >= 0 and test_fraction in [0, 1)".into());
        }
        Ok(())
    }
}

/// Concepts owned by one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDefinition {
    pub motion: usize,
    pub object: usize,
    pub scene: usize,
}

/// Content of one pose clip of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedClip {
    Motion(usize),
    /// Low-confidence or discontinuous clip that pose filtering drops.
    Junk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub class_names: Vec<String>,
    pub object_names: Vec<String>,
    pub scene_names: Vec<String>,
    pub class_definitions: Vec<ClassDefinition>,
    pub video_ids: Vec<String>,
    pub labels: Vec<usize>,
    /// Per video, clip `s` (1-based) holds `clips[s - 1]`.
    pub clips: Vec<Vec<PlantedClip>>,
    /// `N x M_m` binary.
    pub motion: Array2<f64>,
    /// `N x M_o` soft labels.
    pub object: Array2<f64>,
    /// `N x M_s` soft labels.
    pub scene: Array2<f64>,
    /// `D x M` feature map.
    pub feature_map: Array2<f64>,
}

impl PlantedTruth {
    /// `[c_m, c_o, c_s]`, `N x M`.
    pub fn concept_matrix(&self) -> Array2<f64> {
        ndarray::concatenate![ndarray::Axis(1), self.motion, self.object, self.scene]
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Paths of a generated dataset, all under `root`.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub object_candidates: PathBuf,
    pub scene_candidates: PathBuf,
    pub text_embeddings: PathBuf,
    pub truth_path: PathBuf,
    pub truth: PlantedTruth,
}

impl SyntheticDataset {
    pub fn manifest(&self) -> Result<DatasetManifest> {
        load_manifest(&self.manifest_path)
    }
}

const CLASS_NAMES: [&str; 10] = [
    "jump rope",
    "play guitar",
    "ride bike",
    "shoot hoops",
    "paddle kayak",
    "swing racket",
    "lift weights",
    "throw frisbee",
    "row boat",
    "walk dog",
];
const OBJECTS: [&str; 10] = [
    "skipping rope",
    "acoustic guitar",
    "bicycle",
    "basketball",
    "paddle",
    "tennis racket",
    "barbell",
    "frisbee",
    "oar",
    "leash",
];
const SCENES: [&str; 8] = ["gym", "stage", "road", "court", "river", "park", "lake", "street"];

fn pick_names(list: &[&str], n: usize, fallback: &str) -> Vec<String> {
    (0..n)
        .map(|i| match list.get(i) {
            Some(s) => s.to_string(),
            None => format!("{fallback} {i}"),
        })
        .collect()
}

/// Neutral skeleton: a rough upright figure, `J x 2` around the origin.
fn skeleton(joints: usize) -> Array2<f64> {
    Array2::from_shape_fn((joints, 2), |(j, a)| {
        let t = j as f64 / (joints - 1) as f64;
        if a == 0 {
            30.0 * (6.0 * t).sin() + if j % 2 == 0 { -12.0 } else { 12.0 }
        } else {
            100.0 * t - 50.0
        }
    })
}

struct MotionPrototype {
    freq: f64,
    phase: Array2<f64>,
    amp: Array1<f64>,
}

fn motion_prototypes(m: usize, joints: usize, rng: &mut ChaCha8Rng) -> Vec<MotionPrototype> {
    (0..m)
        .map(|k| MotionPrototype {
            freq: 0.15 + 0.5 * (k as f64 + 0.5) / m as f64,
            phase: Array2::from_shape_fn((joints, 2), |_| rng.random::<f64>() * std::f64::consts::TAU),
            amp: Array1::from_shape_fn(joints, |_| 8.0 + 14.0 * rng.random::<f64>()),
        })
        .collect()
}

fn pose_clip(
    proto: &MotionPrototype,
    base: &Array2<f64>,
    length: usize,
    rng: &mut ChaCha8Rng,
    jitter: &Normal<f64>,
) -> Array3<f64> {
    let joints = base.nrows();
    let scale = 0.85 + 0.3 * rng.random::<f64>();
    let offset = [150.0 + 200.0 * rng.random::<f64>(), 150.0 + 100.0 * rng.random::<f64>()];
    Array3::from_shape_fn((length, joints, 2), |(t, j, a)| {
        let wave = proto.amp[j] * (proto.freq * t as f64 + proto.phase[[j, a]]).sin();
        offset[a] + scale * (base[[j, a]] + wave) + jitter.sample(rng)
    })
}

/// Luminance stack with one smooth brightness event per clip; the event of
/// clip `s` (0-based) is centred on frame `12 + 20 s`.
pub fn event_frames(clips: usize, max_clips: usize, size: usize) -> Array3<f64> {
    let frames = 20 * max_clips + 24;
    let mut level = 0.2;
    let mut out = Array3::zeros((frames, size, size));
    for t in 0..frames {
        out.index_axis_mut(ndarray::Axis(0), t).fill(level);
        // the step from frame t to t + 1 is largest when t + 1 is a centre
        let rise: f64 = (0..clips)
            .map(|s| {
                let centre = 12 + 20 * s;
                let d = (t as isize + 1 - centre as isize).abs();
                (3 - d).max(0) as f64
            })
            .sum();
        level += 0.02 * rise;
    }
    out
}

/// Writes a synthetic dataset under `out_dir` and returns its paths and
/// ground truth. A pure function of `cfg`.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig, out_dir: &Path) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, mm, mo, ms) = (cfg.classes, cfg.motion_concepts, cfg.object_concepts, cfg.scene_concepts);
    let m = mm + mo + ms;
    let class_names = pick_names(&CLASS_NAMES, k, "action");
    let object_names = pick_names(&OBJECTS, mo, "object");
    let scene_names = pick_names(&SCENES, ms, "scene");
    let defs: Vec<ClassDefinition> = (0..k)
        .map(|c| ClassDefinition {
            motion: c,
            object: c,
            scene: c % ms,
        })
        .collect();

    let b_std = 1.0 / (m as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let feature_map = Array2::from_shape_simple_fn((cfg.feature_dim, m), || b_std * normal.sample(&mut rng));
    let mut shifted_map = feature_map.clone();
    shifted_map.slice_mut(ndarray::s![.., mm..]).fill(0.0);
    let protos = motion_prototypes(mm, cfg.joints, &mut rng);
    let base = skeleton(cfg.joints);
    let jitter = Normal::new(0.0, 0.4).expect("valid std");
    let noise = Normal::new(0.0, cfg.noise).expect("valid std");

    // text embedding space: one axis per concept and class name, plus axes
    // for the distractor candidates and a residual axis
    let e_dim = mo + ms + k + 4;
    let (near_axis, collide_axis, long_axis, residual_axis) = (mo + ms + k, mo + ms + k + 1, mo + ms + k + 2, mo + ms + k + 3);
    let axis = |i: usize| Array1::from_shape_fn(e_dim, |d| if d == i { 1.0 } else { 0.0 });
    let near_duplicate = format!("{}s", object_names[0]);
    let collision = format!("{} scene", class_names[1 % k]);
    let long_phrase = "a large crowd of people watching".to_string();
    let mut vocab: Vec<(String, Array1<f64>)> = Vec::new();
    for (i, n) in object_names.iter().enumerate() {
        vocab.push((n.clone(), axis(i)));
    }
    for (i, n) in scene_names.iter().enumerate() {
        vocab.push((n.clone(), axis(mo + i)));
    }
    for (i, n) in class_names.iter().enumerate() {
        vocab.push((n.clone(), axis(mo + ms + i)));
    }
    vocab.push((near_duplicate.clone(), axis(0) * 0.96 + axis(near_axis) * 0.28));
    vocab.push((collision.clone(), axis(mo + ms + 1 % k) * 0.95 + axis(collide_axis) * 0.312));
    vocab.push((long_phrase.clone(), axis(long_axis)));

    let ids: Vec<String> = (0..cfg.videos).map(|i| format!("v{i:04}")).collect();
    let labels: Vec<usize> = (0..cfg.videos).map(|i| i % k).collect();
    let mut test_ids = Vec::new();
    let mut train_ids = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..cfg.videos).filter(|&i| labels[i] == c).collect();
        let n_test = (members.len() as f64 * cfg.test_fraction).round() as usize;
        let n_train = members.len() - n_test;
        for (j, &i) in members.iter().enumerate() {
            if j < n_train {
                train_ids.push(ids[i].clone());
            } else {
                test_ids.push(ids[i].clone());
            }
        }
    }
    train_ids.sort();
    test_ids.sort();

    let mut motion = Array2::zeros((cfg.videos, mm));
    let mut object = Array2::zeros((cfg.videos, mo));
    let mut scene = Array2::zeros((cfg.videos, ms));
    let mut clips_per_video = Vec::with_capacity(cfg.videos);
    let mut records = Vec::with_capacity(cfg.videos);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (i, id) in ids.iter().enumerate() {
        let def = defs[labels[i]];
        let mut clips = Vec::new();
        if rng.random::<f64>() < 0.85 {
            clips.push(PlantedClip::Motion(def.motion));
        }
        for bg in k..mm {
            if rng.random::<f64>() < 0.3 {
                clips.push(PlantedClip::Motion(bg));
            }
        }
        if rng.random::<f64>() < 0.1 {
            let other = (labels[i] + 1 + rng.random_range(0..k - 1)) % k;
            clips.push(PlantedClip::Motion(defs[other].motion));
        }
        if rng.random::<f64>() < 0.15 {
            clips.push(PlantedClip::Junk);
        }
        clips.shuffle(&mut rng);
        clips.truncate(cfg.max_clips);
        for c in &clips {
            if let PlantedClip::Motion(p) = c {
                motion[[i, *p]] = 1.0;
            }
        }
        for o in 0..mo {
            object[[i, o]] = if o == def.object { 0.5 + 0.1 * rng.random::<f64>() } else { 0.1 * rng.random::<f64>() };
        }
        for s in 0..ms {
            scene[[i, s]] = if s == def.scene { 0.5 + 0.1 * rng.random::<f64>() } else { 0.1 * rng.random::<f64>() };
        }

        let pose_dir = out_dir.join("poses").join(id);
        fs::create_dir_all(&pose_dir).map_err(|e| Error::io(&pose_dir, e))?;
        for (s, clip) in clips.iter().enumerate() {
            let (coords, conf) = match clip {
                PlantedClip::Motion(p) => (
                    pose_clip(&protos[*p], &base, cfg.clip_length, &mut rng, &jitter),
                    Array2::from_shape_fn((cfg.clip_length, cfg.joints), |_| 0.8 + 0.2 * rng.random::<f64>()),
                ),
                PlantedClip::Junk => {
                    let p = rng.random_range(0..mm);
                    let mut coords = pose_clip(&protos[p], &base, cfg.clip_length, &mut rng, &jitter);
                    let low_conf = rng.random::<bool>();
                    if !low_conf {
                        // one joint teleports far away mid-clip
                        coords[[cfg.clip_length / 2, 0, 0]] += 2000.0;
                    }
                    let c = if low_conf { 0.1 } else { 0.9 };
                    (coords, Array2::from_elem((cfg.clip_length, cfg.joints), c))
                }
            };
            let seq = PoseSequence::new(coords, conf, id.clone(), s + 1)?;
            write_pose_file(&pose_dir, &seq)?;
        }

        let c = ndarray::concatenate![ndarray::Axis(0), motion.row(i), object.row(i), scene.row(i)];
        let map = if cfg.shift_test_context && test_ids.binary_search(id).is_ok() { &shifted_map } else { &feature_map };
        let x = map.dot(&c) + Array1::from_shape_simple_fn(cfg.feature_dim, || noise.sample(&mut rng));
        let feature_path = PathBuf::from("features").join(format!("{id}.dtf"));
        write_tensor(out_dir.join(&feature_path), &Tensor::from_vector(&x))?;

        let mut e = Array1::<f64>::zeros(e_dim);
        for o in 0..mo {
            e[o] = object[[i, o]];
        }
        for s in 0..ms {
            e[mo + s] = scene[[i, s]];
        }
        e[residual_axis] = (1.0 - e.dot(&e)).max(0.0).sqrt();
        let vlm_path = PathBuf::from("vlm").join(format!("{id}.dtf"));
        write_tensor(out_dir.join(&vlm_path), &Tensor::from_vector(&e))?;

        let frames_path = PathBuf::from("frames").join(format!("{id}.dtf"));
        let stack = event_frames(clips.len(), cfg.max_clips, 4);
        let data: Vec<f32> = stack.iter().map(|&v| v as f32).collect();
        write_tensor(out_dir.join(&frames_path), &Tensor::new(stack.shape().to_vec(), data)?)?;

        records.push(VideoRecord {
            id: id.clone(),
            feature_path,
            pose_dir: Some(PathBuf::from("poses").join(id)),
            vlm_embedding_path: vlm_path,
            label: labels[i],
            frames_path: Some(frames_path),
        });
        clips_per_video.push(clips);
    }

    let manifest_path = out_dir.join("manifest.json");
    ManifestFile {
        class_names: class_names.clone(),
        videos: records,
        splits: [("train".to_string(), train_ids), ("test".to_string(), test_ids)].into_iter().collect(),
    }
    .write(&manifest_path)?;

    // candidate lists: each class proposes its own concepts plus distractors
    let mut objects: Vec<Vec<String>> = vec![Vec::new(); k];
    for (o, name) in object_names.iter().enumerate() {
        objects[o % k].push(name.clone());
    }
    objects[0].push(near_duplicate);
    objects[1 % k].push(collision);
    objects[2 % k].push(long_phrase);
    let mut scenes: Vec<Vec<String>> = vec![Vec::new(); k];
    for (c, def) in defs.iter().enumerate() {
        scenes[c].push(scene_names[def.scene].clone());
    }
    for (s, name) in scene_names.iter().enumerate() {
        scenes[s % k].push(name.to_uppercase());
    }
    let write_candidates = |name: &str, lists: &[Vec<String>]| -> Result<PathBuf> {
        let path = out_dir.join("candidates").join(name);
        fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| Error::io(&path, e))?;
        let map: std::collections::BTreeMap<&str, &Vec<String>> =
            class_names.iter().map(String::as_str).zip(lists.iter()).collect();
        let text = serde_json::to_string_pretty(&map).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    let object_candidates = write_candidates("objects.json", &objects)?;
    let scene_candidates = write_candidates("scenes.json", &scenes)?;

    let text_embeddings = out_dir.join("text_emb.dtf");
    let emb = Array2::from_shape_fn((vocab.len(), e_dim), |(r, c)| vocab[r].1[c]);
    write_matrix(&text_embeddings, &emb)?;
    let vocab_path = crate::context::vocab_path(&text_embeddings);
    let names: Vec<&str> = vocab.iter().map(|(n, _)| n.as_str()).collect();
    let text = serde_json::to_string_pretty(&names).map_err(|e| Error::json(&vocab_path, e))?;
    fs::write(&vocab_path, text + "\n").map_err(|e| Error::io(&vocab_path, e))?;

    let truth = PlantedTruth {
        class_names,
        object_names,
        scene_names,
        class_definitions: defs,
        video_ids: ids,
        labels,
        clips: clips_per_video,
        motion,
        object,
        scene,
        feature_map,
    };
    let truth_path = out_dir.join("planted.json");
    let text = serde_json::to_string_pretty(&truth).map_err(|e| Error::json(&truth_path, e))?;
    fs::write(&truth_path, text + "\n").map_err(|e| Error::io(&truth_path, e))?;

    Ok(SyntheticDataset {
        root: out_dir.to_path_buf(),
        manifest_path,
        object_candidates,
        scene_candidates,
        text_embeddings,
        truth_path,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::ConceptKind;
    use crate::context::{filter_concepts, load_candidates, pseudo_labels, ConceptFilterParams, EmbeddingTable};
    use crate::keyclip::{video_key_clips, KeyframeParams};
    use crate::ingest::tensor::read_tensor;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            videos: 30,
            noise: 0.0,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn too_few_concepts_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            motion_concepts: 3,
            ..small()
        };
        assert!(matches!(generate_synthetic_dataset(&cfg, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = generate_synthetic_dataset(&small(), a.path()).unwrap();
        generate_synthetic_dataset(&small(), b.path()).unwrap();
        for rel in ["manifest.json", "planted.json", "text_emb.dtf", "features/v0007.dtf", "poses/v0003/clip_1.dtf"] {
            assert_eq!(fs::read(a.path().join(rel)).ok(), fs::read(b.path().join(rel)).ok(), "{rel}");
        }
        assert_eq!(da.manifest().unwrap().len(), 30);
    }

    #[test]
    fn noiseless_pseudo_labels_recover_planted_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_dataset(&small(), dir.path()).unwrap();
        let manifest = ds.manifest().unwrap();
        let table = EmbeddingTable::load(&ds.text_embeddings).unwrap();
        let videos = manifest.load_vlm_embeddings(&manifest.all_rows()).unwrap();
        for (path, kind, names, planted) in [
            (&ds.object_candidates, ConceptKind::Object, &ds.truth.object_names, &ds.truth.object),
            (&ds.scene_candidates, ConceptKind::Scene, &ds.truth.scene_names, &ds.truth.scene),
        ] {
            let cands = load_candidates(path, manifest.class_names()).unwrap();
            let set = filter_concepts(&cands, manifest.class_names(), &ConceptFilterParams::default(), kind, &table).unwrap();
            let mut got = set.names.clone();
            got.sort();
            let mut want = names.clone();
            want.sort();
            assert_eq!(got, want);
            let labels = pseudo_labels(&set, &videos, false).unwrap();
            for (j, name) in set.names.iter().enumerate() {
                let col = names.iter().position(|n| n == name).unwrap();
                for i in 0..manifest.len() {
                    assert!((labels[[i, j]] - planted[[i, col]]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn one_keyframe_per_clip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_dataset(&small(), dir.path()).unwrap();
        let manifest = ds.manifest().unwrap();
        for (v, clips) in manifest.videos().iter().zip(&ds.truth.clips) {
            let stack = read_tensor(v.frames_path.as_ref().unwrap()).unwrap().to_array3().unwrap();
            let kc = video_key_clips(&stack, 16, &KeyframeParams::default(), &v.id).unwrap();
            let centres: Vec<usize> = (0..clips.len()).map(|s| 12 + 20 * s).collect();
            let mut got = kc.keyframes.clone();
            got.sort();
            assert_eq!(got, centres, "{}", v.id);
        }
    }
}
