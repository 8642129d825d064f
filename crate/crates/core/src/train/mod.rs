//! Concept-head and classifier training on frozen backbone features.

pub mod classifier;
pub mod heads;
pub mod losses;
pub mod model;
pub mod standardize;

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use classifier::{train_classifier, ClassifierFit, ClassifierParams};
pub use heads::{train_context_head, train_motion_head, HeadFit};
pub use losses::{bce_loss, cos_cubed_loss, CubedAxis};
pub use model::{DanceModel, EditRecord, ModelDims, ModelParts, Prediction, TrainSummary};
pub use standardize::{standardize_activations, Standardized};

use crate::concepts::{ConceptKind, ConceptLabelsMeta, ConceptSpace, MotionConceptInfo};
use crate::error::{invalid, Error, Result};
use crate::ingest::manifest::DatasetManifest;
use crate::ingest::tensor::read_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Relative step size of the concept heads; 1.0 is calibrated to the
    /// curvature of each loss.
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Mini-batch size of the concept heads; 0 means full batch.
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub classifier_max_iter: usize,
    pub classifier_tol: f64,
    pub seed: u64,
    pub cosine_cubed_axis: CubedAxis,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            momentum: 0.9,
            epochs: 500,
            batch_size: 0,
            lambda: 1e-4,
            alpha: 0.99,
            classifier_max_iter: 20_000,
            classifier_tol: 1e-6,
            seed: 0,
            cosine_cubed_axis: CubedAxis::PerConcept,
        }
    }
}

impl TrainConfig {
    pub fn classifier_params(&self) -> ClassifierParams {
        ClassifierParams {
            lambda: self.lambda,
            alpha: self.alpha,
            max_iter: self.classifier_max_iter,
            tol: self.classifier_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        self.classifier_params().validate()
    }
}

/// Concept labels aligned with the training rows.
#[derive(Debug, Clone, Copy)]
pub struct ConceptTargets<'a> {
    pub motion: ArrayView2<'a, f64>,
    pub object: ArrayView2<'a, f64>,
    pub scene: ArrayView2<'a, f64>,
}

fn fit_head(
    kind: ConceptKind,
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Option<(f64, f64)>)> {
    if c.ncols() == 0 {
        return Ok((Array2::zeros((0, x.ncols())), None));
    }
    let fit = match kind {
        ConceptKind::Motion => train_motion_head(x, c, cfg, rng)?,
        _ => train_context_head(x, c, cfg, rng)?,
    };
    log::info!("{kind} head: loss {:.6} -> {:.6}", fit.initial_loss, fit.final_loss);
    let mut w = fit.weights;
    model::to_f32_precision(&mut w);
    Ok((w, Some((fit.initial_loss, fit.final_loss))))
}

/// Trains the three concept heads, standardizes their activations and fits
/// the classifier. Deterministic for a fixed `cfg.seed`.
pub fn train_model(
    x: ArrayView2<f64>,
    y: &[usize],
    targets: ConceptTargets<'_>,
    concepts: ConceptSpace,
    class_names: Vec<String>,
    cfg: &TrainConfig,
) -> Result<DanceModel> {
    cfg.validate()?;
    let (m_m, m_o, m_s) = concepts.counts();
    let n = x.nrows();
    for (kind, c, m) in [
        (ConceptKind::Motion, targets.motion, m_m),
        (ConceptKind::Object, targets.object, m_o),
        (ConceptKind::Scene, targets.scene, m_s),
    ] {
        if c.dim() != (n, m) {
            return Err(invalid!("{kind} labels are {}x{}, expected {n}x{m}", c.nrows(), c.ncols()));
        }
    }
    if y.len() != n {
        return Err(invalid!("{n} feature rows for {} class labels", y.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w_motion, motion_loss) = fit_head(ConceptKind::Motion, x, targets.motion, cfg, &mut rng)?;
    let (w_object, object_loss) = fit_head(ConceptKind::Object, x, targets.object, cfg, &mut rng)?;
    let (w_scene, scene_loss) = fit_head(ConceptKind::Scene, x, targets.scene, cfg, &mut rng)?;

    let wc = ndarray::concatenate![Axis(0), w_motion, w_object, w_scene];
    let z = x.dot(&wc.t());
    let st = standardize_activations(z.view())?;
    let fit = train_classifier(st.z.view(), y, class_names.len(), &cfg.classifier_params())?;
    log::info!(
        "classifier: objective {:.6} after {} iterations (converged: {})",
        fit.objective,
        fit.iterations,
        fit.converged
    );
    DanceModel::from_parts(ModelParts {
        class_names,
        concepts,
        w_motion,
        w_object,
        w_scene,
        act_mean: st.mean,
        act_std: st.std,
        w_a: fit.weights,
        bias: fit.bias,
        config: cfg.clone(),
        summary: TrainSummary {
            motion_loss,
            object_loss,
            scene_loss,
            classifier_objective: fit.objective,
            classifier_iterations: fit.iterations,
            classifier_converged: fit.converged,
            train_samples: n,
        },
    })
}

/// A concept label tensor with its sidecar, checked against a manifest.
#[derive(Debug, Clone)]
pub struct LabelFile {
    pub meta: ConceptLabelsMeta,
    /// `N x M` over all manifest rows.
    pub labels: Array2<f64>,
}

pub fn load_label_file(path: &Path, kind: ConceptKind, manifest: &DatasetManifest) -> Result<LabelFile> {
    let labels = read_matrix(path)?;
    let meta = ConceptLabelsMeta::read_for(path)?;
    if meta.kind != kind {
        return Err(invalid!("{}: holds {} labels, expected {kind}", path.display(), meta.kind));
    }
    if labels.ncols() != meta.names.len() {
        return Err(invalid!(
            "{}: {} columns but {} concept names",
            path.display(),
            labels.ncols(),
            meta.names.len()
        ));
    }
    let ids: Vec<&str> = manifest.videos().iter().map(|v| v.id.as_str()).collect();
    if meta.video_ids.len() != labels.nrows() || meta.video_ids.iter().map(String::as_str).ne(ids.iter().copied()) {
        return Err(invalid!("{}: rows do not follow the manifest's video order", path.display()));
    }
    Ok(LabelFile { meta, labels })
}

/// Trains on one manifest split from label files written by the concept
/// stages.
pub fn train_on_split(
    manifest: &DatasetManifest,
    split: &str,
    motion: &LabelFile,
    object: &LabelFile,
    scene: &LabelFile,
    cfg: &TrainConfig,
) -> Result<DanceModel> {
    let rows = manifest.split_indices(split)?;
    let x = manifest.load_features(&rows)?;
    let y = manifest.labels(&rows);
    let medoids = motion.meta.medoids.clone();
    let concepts = ConceptSpace {
        motion: motion
            .meta
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| MotionConceptInfo {
                name: name.clone(),
                medoid: medoids.as_ref().map(|m| m[i].clone()),
            })
            .collect(),
        object: object.meta.names.clone(),
        scene: scene.meta.names.clone(),
    };
    let pick = |l: &LabelFile| l.labels.select(Axis(0), &rows);
    let (cm, co, cs) = (pick(motion), pick(object), pick(scene));
    train_model(
        x.view(),
        &y,
        ConceptTargets {
            motion: cm.view(),
            object: co.view(),
            scene: cs.view(),
        },
        concepts,
        manifest.class_names().to_vec(),
        cfg,
    )
}
