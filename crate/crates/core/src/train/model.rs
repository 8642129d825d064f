//! The trained model: three concept heads, activation standardization and
//! the sparse classifier, plus on-disk persistence.
//!
//! All weight blocks hold values exactly representable in `f32`, so the
//! DTF1 tensors in a model directory round-trip bit-exactly.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::standardize::STD_FLOOR;
use super::TrainConfig;
use crate::concepts::ConceptSpace;
use crate::error::{invalid, Error, Result};
use crate::ingest::tensor::{read_matrix, read_vector, write_matrix, write_tensor, Tensor};

pub const MODEL_FORMAT: &str = "dance-model/1";
pub const MODEL_JSON: &str = "model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub motion: usize,
    pub object: usize,
    pub scene: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn concepts(&self) -> usize {
        self.motion + self.object + self.scene
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    /// Unix seconds.
    pub timestamp: u64,
    pub kind: String,
    pub class: usize,
    pub concept: usize,
    pub old_value: f64,
    pub new_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainSummary {
    pub motion_loss: Option<(f64, f64)>,
    pub object_loss: Option<(f64, f64)>,
    pub scene_loss: Option<(f64, f64)>,
    pub classifier_objective: f64,
    pub classifier_iterations: usize,
    pub classifier_converged: bool,
    pub train_samples: usize,
}

/// Unchecked components of a model; see [`DanceModel::from_parts`].
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub class_names: Vec<String>,
    pub concepts: ConceptSpace,
    pub w_motion: Array2<f64>,
    pub w_object: Array2<f64>,
    pub w_scene: Array2<f64>,
    pub act_mean: Array1<f64>,
    pub act_std: Array1<f64>,
    pub w_a: Array2<f64>,
    pub bias: Array1<f64>,
    pub config: TrainConfig,
    pub summary: TrainSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanceModel {
    class_names: Vec<String>,
    concepts: ConceptSpace,
    w_motion: Array2<f64>,
    w_object: Array2<f64>,
    w_scene: Array2<f64>,
    act_mean: Array1<f64>,
    act_std: Array1<f64>,
    w_a: Array2<f64>,
    bias: Array1<f64>,
    config: TrainConfig,
    summary: TrainSummary,
    edit_log: Vec<EditRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub probs: Array1<f64>,
    pub logits: Array1<f64>,
    /// Raw concept activations.
    pub z: Array1<f64>,
    /// Standardized concept activations.
    pub z_std: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    format: String,
    class_names: Vec<String>,
    dims: ModelDims,
    config: TrainConfig,
    summary: TrainSummary,
    act_mean: Vec<f64>,
    act_std: Vec<f64>,
    concepts: ConceptSpace,
    edit_log: Vec<EditRecord>,
}

const TENSORS: [&str; 5] = ["w_motion.dtf", "w_object.dtf", "w_scene.dtf", "w_a.dtf", "bias.dtf"];

pub fn to_f32_precision(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

impl DanceModel {
    pub fn from_parts(mut p: ModelParts) -> Result<Self> {
        let d = p.w_motion.ncols();
        let (m_m, m_o, m_s) = p.concepts.counts();
        let k = p.class_names.len();
        let m = m_m + m_o + m_s;
        let check = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(invalid!("{name} is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1))
            } else {
                Ok(())
            }
        };
        check("W_motion", p.w_motion.dim(), (m_m, d))?;
        check("W_object", p.w_object.dim(), (m_o, d))?;
        check("W_scene", p.w_scene.dim(), (m_s, d))?;
        check("W_A", p.w_a.dim(), (k, m))?;
        if p.act_mean.len() != m || p.act_std.len() != m || p.bias.len() != k {
            return Err(invalid!("standardization or bias length mismatch"));
        }
        if k == 0 {
            return Err(invalid!("model has no classes"));
        }
        if let Some(s) = p.act_std.iter().find(|&&s| !(s >= STD_FLOOR)) {
            return Err(invalid!("activation std {s} below {STD_FLOOR}"));
        }
        for a in [&mut p.w_motion, &mut p.w_object, &mut p.w_scene, &mut p.w_a] {
            to_f32_precision(a);
        }
        p.bias.mapv_inplace(|v| v as f32 as f64);
        let all = [&p.w_motion, &p.w_object, &p.w_scene, &p.w_a];
        if all.iter().any(|a| a.iter().any(|v| !v.is_finite()))
            || p.bias.iter().chain(&p.act_mean).chain(&p.act_std).any(|v| !v.is_finite())
        {
            return Err(invalid!("model parameters must be finite"));
        }
        Ok(DanceModel {
            class_names: p.class_names,
            concepts: p.concepts,
            w_motion: p.w_motion,
            w_object: p.w_object,
            w_scene: p.w_scene,
            act_mean: p.act_mean,
            act_std: p.act_std,
            w_a: p.w_a,
            bias: p.bias,
            config: p.config,
            summary: p.summary,
            edit_log: Vec::new(),
        })
    }

    pub fn dims(&self) -> ModelDims {
        let (motion, object, scene) = self.concepts.counts();
        ModelDims {
            feature_dim: self.w_motion.ncols(),
            motion,
            object,
            scene,
            classes: self.class_names.len(),
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn concepts(&self) -> &ConceptSpace {
        &self.concepts
    }

    pub fn w_motion(&self) -> &Array2<f64> {
        &self.w_motion
    }

    pub fn w_object(&self) -> &Array2<f64> {
        &self.w_object
    }

    pub fn w_scene(&self) -> &Array2<f64> {
        &self.w_scene
    }

    /// `[W_motion; W_object; W_scene]`, `M x D`.
    pub fn concept_weights(&self) -> Array2<f64> {
        concatenate![Axis(0), self.w_motion, self.w_object, self.w_scene]
    }

    pub fn act_mean(&self) -> &Array1<f64> {
        &self.act_mean
    }

    pub fn act_std(&self) -> &Array1<f64> {
        &self.act_std
    }

    pub fn w_a(&self) -> &Array2<f64> {
        &self.w_a
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn summary(&self) -> &TrainSummary {
        &self.summary
    }

    pub fn edit_log(&self) -> &[EditRecord] {
        &self.edit_log
    }

    /// Sets one classifier weight and appends to the edit log. The value is
    /// stored at `f32` precision; the returned record holds what was stored.
    pub(crate) fn set_class_weight(&mut self, class: usize, concept: usize, value: f64, timestamp: u64) -> EditRecord {
        let old_value = self.w_a[[class, concept]];
        let new_value = value as f32 as f64;
        self.w_a[[class, concept]] = new_value;
        let record = EditRecord {
            timestamp,
            kind: "class_weight".into(),
            class,
            concept,
            old_value,
            new_value,
        };
        self.edit_log.push(record.clone());
        record
    }

    /// Raw activations `z = W_C x`.
    pub fn activations(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let d = self.w_motion.ncols();
        if x.len() != d {
            return Err(invalid!("feature vector has dimension {}, model expects {d}", x.len()));
        }
        Ok(concatenate![
            Axis(0),
            self.w_motion.dot(&x),
            self.w_object.dot(&x),
            self.w_scene.dot(&x)
        ])
    }

    pub fn standardize(&self, z: ArrayView1<f64>) -> Array1<f64> {
        (&z - &self.act_mean) / &self.act_std
    }

    pub fn logits_from_standardized(&self, z_std: ArrayView1<f64>) -> Array1<f64> {
        self.w_a.dot(&z_std) + &self.bias
    }

    pub fn predict_standardized(&self, z: Array1<f64>, z_std: Array1<f64>) -> Prediction {
        let logits = self.logits_from_standardized(z_std.view());
        let probs = softmax(logits.view());
        Prediction {
            class: argmax(logits.view()),
            probs,
            logits,
            z,
            z_std,
        }
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<Prediction> {
        let z = self.activations(x)?;
        let z_std = self.standardize(z.view());
        Ok(self.predict_standardized(z, z_std))
    }

    /// Predicted classes for the rows of `x`.
    pub fn predict_classes(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        x.rows().into_iter().map(|r| self.predict(r).map(|p| p.class)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = ModelJson {
            format: MODEL_FORMAT.into(),
            class_names: self.class_names.clone(),
            dims: self.dims(),
            config: self.config.clone(),
            summary: self.summary.clone(),
            act_mean: self.act_mean.to_vec(),
            act_std: self.act_std.to_vec(),
            concepts: self.concepts.clone(),
            edit_log: self.edit_log.clone(),
        };
        let path = dir.join(MODEL_JSON);
        let text = serde_json::to_string_pretty(&json).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        let blocks = [&self.w_motion, &self.w_object, &self.w_scene, &self.w_a];
        for (name, block) in TENSORS.iter().zip(blocks) {
            write_matrix(dir.join(name), block)?;
        }
        write_tensor(dir.join(TENSORS[4]), &Tensor::from_vector(&self.bias))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let json: ModelJson = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if json.format != MODEL_FORMAT {
            return Err(Error::Format(format!("{}: unknown model format {:?}", path.display(), json.format)));
        }
        let mut model = DanceModel::from_parts(ModelParts {
            class_names: json.class_names,
            concepts: json.concepts,
            w_motion: read_matrix(dir.join(TENSORS[0]))?,
            w_object: read_matrix(dir.join(TENSORS[1]))?,
            w_scene: read_matrix(dir.join(TENSORS[2]))?,
            act_mean: Array1::from_vec(json.act_mean),
            act_std: Array1::from_vec(json.act_std),
            w_a: read_matrix(dir.join(TENSORS[3]))?,
            bias: read_vector(dir.join(TENSORS[4]))?,
            config: json.config,
            summary: json.summary,
        })?;
        if model.dims() != json.dims {
            return Err(invalid!("{}: recorded dims disagree with weight tensors", path.display()));
        }
        model.edit_log = json.edit_log;
        Ok(model)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::concepts::MotionConceptInfo;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_model(seed: u64, d: usize, mm: usize, mo: usize, ms: usize, k: usize) -> DanceModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = mm + mo + ms;
        let mut g = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 2.0 - 1.0);
        let (w_motion, w_object, w_scene, w_a) = (g(mm, d), g(mo, d), g(ms, d), g(k, m));
        let act_mean = g(1, m).row(0).to_owned();
        let act_std = g(1, m).row(0).mapv(|v| v.abs() + 0.1);
        let bias = g(1, k).row(0).to_owned();
        DanceModel::from_parts(ModelParts {
            class_names: (0..k).map(|i| format!("class {i}")).collect(),
            concepts: ConceptSpace {
                motion: (0..mm).map(|i| MotionConceptInfo { name: format!("motion_{i}"), medoid: None }).collect(),
                object: (0..mo).map(|i| format!("object {i}")).collect(),
                scene: (0..ms).map(|i| format!("scene {i}")).collect(),
            },
            w_motion,
            w_object,
            w_scene,
            act_mean,
            act_std,
            w_a,
            bias,
            config: TrainConfig::default(),
            summary: TrainSummary::default(),
        })
        .unwrap()
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let mut m = random_model(1, 4, 2, 1, 1, 4);
        m.w_a.fill(0.0);
        m.bias.fill(0.0);
        let p = m.predict(array![1.0, 2.0, 3.0, 4.0].view()).unwrap();
        for &v in &p.probs {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20 {
            let m = random_model(seed, 6, 3, 2, 2, 4);
            let x = Array1::from_shape_fn(6, |_| rng.random::<f64>() * 4.0 - 2.0);
            let p = m.predict(x.view()).unwrap();
            let wc = m.concept_weights();
            let mut logits = vec![0.0; 4];
            for c in 0..4 {
                logits[c] = m.bias[c];
                for k in 0..7 {
                    let z: f64 = (0..6).map(|j| wc[[k, j]] * x[j]).sum();
                    logits[c] += m.w_a[[c, k]] * (z - m.act_mean[k]) / m.act_std[k];
                }
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for c in 0..4 {
                assert!((p.probs[c] - (logits[c] - mx).exp() / denom).abs() < 1e-12);
            }
            assert!((p.probs.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_shift_invariance_and_argmax_scaling() {
        let l = array![0.3, -1.0, 2.5, 2.4];
        let a = softmax(l.view());
        let b = softmax((&l + 123.0).view());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(argmax(l.view()), argmax((&l * 3.7).view()));
        assert_eq!(argmax(array![1.0, 1.0].view()), 0);
    }

    #[test]
    fn dimension_mismatch() {
        let m = random_model(2, 4, 1, 1, 1, 2);
        assert!(m.predict(array![1.0].view()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = random_model(3, 5, 2, 2, 1, 3);
        m.set_class_weight(1, 2, 0.25, 17);
        m.save(dir.path()).unwrap();
        let back = DanceModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let other = tempfile::tempdir().unwrap();
        back.save(other.path()).unwrap();
        for f in TENSORS.iter().chain([&MODEL_JSON]) {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(other.path().join(f)).unwrap());
        }
    }

    #[test]
    fn floored_std_rejected() {
        let m = random_model(4, 3, 1, 1, 1, 2);
        let mut parts = ModelParts {
            class_names: m.class_names.clone(),
            concepts: m.concepts.clone(),
            w_motion: m.w_motion.clone(),
            w_object: m.w_object.clone(),
            w_scene: m.w_scene.clone(),
            act_mean: m.act_mean.clone(),
            act_std: m.act_std.clone(),
            w_a: m.w_a.clone(),
            bias: m.bias.clone(),
            config: TrainConfig::default(),
            summary: TrainSummary::default(),
        };
        parts.act_std[0] = 0.0;
        assert!(DanceModel::from_parts(parts).is_err());
    }
}
