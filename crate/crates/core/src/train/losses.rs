//! Concept-head losses with analytic gradients with respect to the
//! activations `Z` (`N x M`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy averaged over concepts, then over samples.
///
/// Returns the loss and its gradient with respect to `z`.
pub fn bce_loss(z: ArrayView2<f64>, c: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let (n, m) = z.dim();
    let scale = 1.0 / (n * m).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, m));
    ndarray::Zip::from(&mut grad)
        .and(z)
        .and(c)
        .for_each(|g, &zi, &ci| {
            // -[c log s(z) + (1-c) log(1-s(z))] = softplus(z) - c z
            loss += softplus(zi) - ci * zi;
            *g = (sigmoid(zi) - ci) * scale;
        });
    (loss * scale, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubedAxis {
    /// One term per concept: activations across the batch against labels
    /// across the batch.
    #[default]
    PerConcept,
    /// One term per sample: activations across concepts against labels
    /// across concepts.
    PerSample,
}

impl std::str::FromStr for CubedAxis {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "per_concept" => Ok(CubedAxis::PerConcept),
            "per_sample" => Ok(CubedAxis::PerSample),
            other => Err(crate::Error::Config(format!("unknown cosine cubed axis {other:?}"))),
        }
    }
}

/// `-cos(u^3, v^3)` and its gradient with respect to `u`, or `None` when
/// the label vector is all zero.
pub fn cos_cubed_term(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Option<(f64, Array1<f64>)> {
    let b = v.mapv(|x| x * x * x);
    let nb = b.dot(&b).sqrt();
    if nb == 0.0 {
        return None;
    }
    let a = u.mapv(|x| x * x * x);
    let na = a.dot(&a).sqrt();
    if na == 0.0 {
        return Some((0.0, Array1::zeros(u.len())));
    }
    let ab = a.dot(&b);
    let loss = -ab / (na * nb);
    // d(-cos)/da = -(b / (|a||b|) - (a.b) a / (|a|^3 |b|))
    let da = &a * (ab / (na * na * na * nb)) - &b / (na * nb);
    let grad = da * &u.mapv(|x| 3.0 * x * x);
    Some((loss, grad))
}

/// Cosine cubed loss averaged over the terms of the chosen axis.
///
/// Terms whose label vector is all zero are skipped; their count is
/// returned alongside the loss and gradient.
pub fn cos_cubed_loss(
    z: ArrayView2<f64>,
    c: ArrayView2<f64>,
    axis: CubedAxis,
) -> (f64, Array2<f64>, usize) {
    let ax = match axis {
        CubedAxis::PerConcept => Axis(1),
        CubedAxis::PerSample => Axis(0),
    };
    let mut grad = Array2::zeros(z.dim());
    let mut terms = Vec::new();
    let mut skipped = 0;
    for (i, (u, v)) in z.axis_iter(ax).zip(c.axis_iter(ax)).enumerate() {
        match cos_cubed_term(u, v) {
            Some(t) => terms.push((i, t)),
            None => skipped += 1,
        }
    }
    if terms.is_empty() {
        return (0.0, grad, skipped);
    }
    let scale = 1.0 / terms.len() as f64;
    let mut loss = 0.0;
    for (i, (l, g)) in terms {
        loss += l;
        grad.index_axis_mut(ax, i).scaled_add(scale, &g);
    }
    (loss * scale, grad, skipped)
}
