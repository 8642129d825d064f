//! Interventions without retraining: removing concepts from one sample's
//! evidence, editing class-concept weights, and measuring their effect.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ingest::manifest::DatasetManifest;
use crate::train::{DanceModel, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeactivationMode {
    /// Set the standardized activation to zero (the training mean).
    #[default]
    Standardized,
    /// Set the raw activation to zero, then standardize.
    Raw,
}

impl std::str::FromStr for DeactivationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standardized" => Ok(DeactivationMode::Standardized),
            "raw" => Ok(DeactivationMode::Raw),
            other => Err(Error::Config(format!("unknown deactivation mode {other:?}"))),
        }
    }
}

fn check_indices(indices: &[usize], m: usize) -> Result<()> {
    match indices.iter().find(|&&k| k >= m) {
        Some(k) => Err(invalid!("concept {k} outside {m} concepts")),
        None => Ok(()),
    }
}

/// Zeroes the listed entries of a standardized activation vector.
pub fn deactivate_concepts(z_std: ArrayView1<f64>, indices: &[usize]) -> Result<Array1<f64>> {
    check_indices(indices, z_std.len())?;
    let mut out = z_std.to_owned();
    for &k in indices {
        out[k] = 0.0;
    }
    Ok(out)
}

/// Prediction for `x` with the listed concepts removed.
pub fn deactivated_prediction(
    model: &DanceModel,
    x: ArrayView1<f64>,
    indices: &[usize],
    mode: DeactivationMode,
) -> Result<Prediction> {
    let z = model.activations(x)?;
    check_indices(indices, z.len())?;
    let z_std = match mode {
        DeactivationMode::Standardized => deactivate_concepts(model.standardize(z.view()).view(), indices)?,
        DeactivationMode::Raw => {
            let mut raw = z.clone();
            for &k in indices {
                raw[k] = 0.0;
            }
            model.standardize(raw.view())
        }
    };
    Ok(model.predict_standardized(z, z_std))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Copy of `model` with `W_A[class, concept] = value`; the edit is logged.
pub fn edit_class_weight(model: &DanceModel, class: usize, concept: usize, value: f64) -> Result<DanceModel> {
    edit_class_weight_at(model, class, concept, value, unix_now())
}

/// As [`edit_class_weight`] with an explicit log timestamp.
pub fn edit_class_weight_at(
    model: &DanceModel,
    class: usize,
    concept: usize,
    value: f64,
    timestamp: u64,
) -> Result<DanceModel> {
    let dims = model.dims();
    if class >= dims.classes {
        return Err(invalid!("class {class} outside {} classes", dims.classes));
    }
    check_indices(&[concept], dims.concepts())?;
    if !value.is_finite() {
        return Err(invalid!("weight must be finite, got {value}"));
    }
    let mut edited = model.clone();
    edited.set_class_weight(class, concept, value, timestamp);
    Ok(edited)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `None` for classes without samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics_from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(invalid!("{} predictions for {} labels", predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(invalid!("cannot evaluate an empty split"));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(invalid!("class index outside {classes} classes"));
        }
        confusion[t][p] += 1;
    }
    let correct = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(Metrics {
        total: truth.len(),
        correct,
        accuracy: correct as f64 / truth.len() as f64,
        per_class_accuracy,
        confusion,
    })
}

pub fn evaluate_features(model: &DanceModel, x: ArrayView2<f64>, y: &[usize]) -> Result<Metrics> {
    let predicted = model.predict_classes(x)?;
    metrics_from_predictions(&predicted, y, model.dims().classes)
}

pub fn evaluate(model: &DanceModel, manifest: &DatasetManifest, split: &str) -> Result<Metrics> {
    let rows = manifest.split_indices(split)?;
    if rows.is_empty() {
        return Err(invalid!("split {split:?} is empty"));
    }
    let x = manifest.load_features(&rows)?;
    evaluate_features(model, x.view(), &manifest.labels(&rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub video_id: String,
    pub label: usize,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub total: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub accuracy_delta: f64,
    /// Wrong before, right after.
    pub fixed: usize,
    /// Right before, wrong after.
    pub broken: usize,
    /// Every sample whose prediction changed.
    pub flips: Vec<Flip>,
}

fn check_compatible(a: &DanceModel, b: &DanceModel) -> Result<()> {
    if a.dims() != b.dims() || a.concepts().names() != b.concepts().names() || a.class_names() != b.class_names() {
        return Err(invalid!("models do not share dimensions and concept space"));
    }
    Ok(())
}

pub fn report_from_predictions(ids: &[String], truth: &[usize], before: &[usize], after: &[usize]) -> Result<InterventionReport> {
    let n = truth.len();
    if ids.len() != n || before.len() != n || after.len() != n {
        return Err(invalid!("report inputs have mismatched lengths"));
    }
    if n == 0 {
        return Err(invalid!("cannot report on an empty split"));
    }
    let mut fixed = 0;
    let mut broken = 0;
    let mut flips = Vec::new();
    for i in 0..n {
        let (b, a, t) = (before[i], after[i], truth[i]);
        if b != t && a == t {
            fixed += 1;
        }
        if b == t && a != t {
            broken += 1;
        }
        if a != b {
            flips.push(Flip {
                video_id: ids[i].clone(),
                label: t,
                before: b,
                after: a,
            });
        }
    }
    let acc = |p: &[usize]| p.iter().zip(truth).filter(|(x, y)| x == y).count() as f64 / n as f64;
    let (accuracy_before, accuracy_after) = (acc(before), acc(after));
    Ok(InterventionReport {
        total: n,
        accuracy_before,
        accuracy_after,
        accuracy_delta: accuracy_after - accuracy_before,
        fixed,
        broken,
        flips,
    })
}

pub fn intervention_report_features(
    before: &DanceModel,
    after: &DanceModel,
    ids: &[String],
    x: ArrayView2<f64>,
    y: &[usize],
) -> Result<InterventionReport> {
    check_compatible(before, after)?;
    let pb = before.predict_classes(x)?;
    let pa = after.predict_classes(x)?;
    report_from_predictions(ids, y, &pb, &pa)
}

pub fn intervention_report(
    before: &DanceModel,
    after: &DanceModel,
    manifest: &DatasetManifest,
    split: &str,
) -> Result<InterventionReport> {
    let rows = manifest.split_indices(split)?;
    let x = manifest.load_features(&rows)?;
    let ids: Vec<String> = rows.iter().map(|&r| manifest.videos()[r].id.clone()).collect();
    intervention_report_features(before, after, &ids, x.view(), &manifest.labels(&rows))
}

/// Deduplicated, sorted concept indices.
pub fn normalize_indices(indices: &[usize]) -> Vec<usize> {
    indices.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}
