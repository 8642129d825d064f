//! Sample-level explanations (concept contributions), class-pair weight
//! summaries and forward/reversed input comparison.
//!
//! Contributions are `z'_k * W_A[c, k]` on standardized activations, so
//! `bias_c + sum_k contribution_k = logit_c` holds exactly up to rounding.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::concepts::ConceptKind;
use crate::error::{invalid, Result};
use crate::ingest::pose::PoseSequence;
use crate::intervene::{deactivated_prediction, DeactivationMode};
use crate::train::{DanceModel, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationItem {
    pub concept_index: usize,
    pub kind: ConceptKind,
    pub name: String,
    pub activation: f64,
    pub weight: f64,
    pub contribution: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub medoid: Option<PoseSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    pub predicted_class: usize,
    pub predicted_name: String,
    pub class_distribution: Vec<f64>,
    pub logits: Vec<f64>,
    /// Bias of the predicted class.
    pub bias: f64,
    pub items: Vec<ExplanationItem>,
    pub deactivated: Vec<usize>,
}

/// `z'_k * W_A[class, k]` for every concept.
pub fn contributions(z_std: ArrayView1<f64>, model: &DanceModel, class: usize) -> Result<Array1<f64>> {
    let k = model.dims().classes;
    if class >= k {
        return Err(invalid!("class {class} outside {k} classes"));
    }
    if z_std.len() != model.dims().concepts() {
        return Err(invalid!("{} activations for {} concepts", z_std.len(), model.dims().concepts()));
    }
    Ok(&z_std * &model.w_a().row(class))
}

/// Concept indices ordered by descending `|v|`, ties by lower index.
pub fn rank_by_magnitude(v: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx
}

fn item(model: &DanceModel, z_std: ArrayView1<f64>, class: usize, k: usize) -> ExplanationItem {
    let space = model.concepts();
    let weight = model.w_a()[[class, k]];
    ExplanationItem {
        concept_index: k,
        kind: space.kind_of(k).expect("index in range"),
        name: space.name(k).expect("index in range").to_string(),
        activation: z_std[k],
        weight,
        contribution: z_std[k] * weight,
        medoid: space.medoid(k).cloned(),
    }
}

/// Builds an explanation from a finished prediction toward its argmax class.
pub fn explanation_from_prediction(model: &DanceModel, pred: &Prediction, k: usize, deactivated: &[usize]) -> Result<Explanation> {
    if k == 0 {
        return Err(invalid!("top-k needs k >= 1"));
    }
    let m = model.dims().concepts();
    let k = if k > m {
        log::warn!("top-k of {k} clamped to {m} concepts");
        m
    } else {
        k
    };
    let class = pred.class;
    let contrib = contributions(pred.z_std.view(), model, class)?;
    let items = rank_by_magnitude(contrib.view())
        .into_iter()
        .take(k)
        .map(|i| item(model, pred.z_std.view(), class, i))
        .collect();
    let mut deactivated = deactivated.to_vec();
    deactivated.sort_unstable();
    deactivated.dedup();
    Ok(Explanation {
        video_id: None,
        predicted_class: class,
        predicted_name: model.class_names()[class].clone(),
        class_distribution: pred.probs.to_vec(),
        logits: pred.logits.to_vec(),
        bias: model.bias()[class],
        items,
        deactivated,
    })
}

pub fn top_k_explanation(x: ArrayView1<f64>, model: &DanceModel, k: usize) -> Result<Explanation> {
    let pred = model.predict(x)?;
    explanation_from_prediction(model, &pred, k, &[])
}

/// Explanation after removing the given concepts; see
/// [`crate::intervene::deactivate_concepts`].
pub fn explain_deactivated(
    x: ArrayView1<f64>,
    model: &DanceModel,
    k: usize,
    deactivated: &[usize],
    mode: DeactivationMode,
) -> Result<Explanation> {
    let pred = deactivated_prediction(model, x, deactivated, mode)?;
    explanation_from_prediction(model, &pred, k, deactivated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SankeyNode {
    Concept {
        index: usize,
        kind: ConceptKind,
        name: String,
        shared: bool,
    },
    Class {
        index: usize,
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyEdge {
    pub concept: usize,
    pub class: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyData {
    pub class_a: usize,
    pub class_b: usize,
    pub nodes: Vec<SankeyNode>,
    pub edges: Vec<SankeyEdge>,
}

impl SankeyData {
    pub fn selected_concepts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                SankeyNode::Concept { index, .. } => Some(*index),
                _ => None,
            })
            .collect()
    }

    pub fn shared_concepts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                SankeyNode::Concept { index, shared: true, .. } => Some(*index),
                _ => None,
            })
            .collect()
    }
}

/// Top `top_n` concepts by `|W_A[class, k]|` with nonzero weight.
pub fn top_weighted_concepts(model: &DanceModel, class: usize, top_n: usize) -> Vec<usize> {
    let row = model.w_a().row(class);
    rank_by_magnitude(row)
        .into_iter()
        .filter(|&k| row[k] != 0.0)
        .take(top_n)
        .collect()
}

/// Concept-to-class weights for a pair of classes: the union of each
/// class's top concepts, with an edge for every nonzero weight. A concept
/// is shared when both classes weight it.
pub fn class_pair_weights(model: &DanceModel, class_a: usize, class_b: usize, top_n: usize) -> Result<SankeyData> {
    let k = model.dims().classes;
    for c in [class_a, class_b] {
        if c >= k {
            return Err(invalid!("class {c} outside {k} classes"));
        }
    }
    if class_a == class_b {
        return Err(invalid!("class pair needs two distinct classes"));
    }
    let mut selected = top_weighted_concepts(model, class_a, top_n);
    selected.extend(top_weighted_concepts(model, class_b, top_n));
    selected.sort_unstable();
    selected.dedup();
    let w = model.w_a();
    let space = model.concepts();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for &c in &selected {
        nodes.push(SankeyNode::Concept {
            index: c,
            kind: space.kind_of(c).expect("index in range"),
            name: space.name(c).expect("index in range").to_string(),
            shared: w[[class_a, c]] != 0.0 && w[[class_b, c]] != 0.0,
        });
        for class in [class_a, class_b] {
            if w[[class, c]] != 0.0 {
                edges.push(SankeyEdge {
                    concept: c,
                    class,
                    weight: w[[class, c]],
                });
            }
        }
    }
    for class in [class_a, class_b] {
        nodes.push(SankeyNode::Class {
            index: class,
            name: model.class_names()[class].clone(),
        });
    }
    Ok(SankeyData {
        class_a,
        class_b,
        nodes,
        edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationComparison {
    pub forward: Explanation,
    pub backward: Explanation,
    pub prediction_changed: bool,
    /// Class the deltas are measured toward (the forward prediction).
    pub reference_class: usize,
    /// `backward - forward` contribution per concept toward
    /// `reference_class`.
    pub deltas: Vec<f64>,
}

/// Compares a clip with its reversed counterpart. Features of the reversed
/// clip come from the caller.
pub fn compare_explanations(
    x_fwd: ArrayView1<f64>,
    x_bwd: ArrayView1<f64>,
    model: &DanceModel,
    k: usize,
) -> Result<ExplanationComparison> {
    let pf = model.predict(x_fwd)?;
    let pb = model.predict(x_bwd)?;
    let reference = pf.class;
    let cf = contributions(pf.z_std.view(), model, reference)?;
    let cb = contributions(pb.z_std.view(), model, reference)?;
    Ok(ExplanationComparison {
        forward: explanation_from_prediction(model, &pf, k, &[])?,
        backward: explanation_from_prediction(model, &pb, k, &[])?,
        prediction_changed: pf.class != pb.class,
        reference_class: reference,
        deltas: (&cb - &cf).to_vec(),
    })
}
