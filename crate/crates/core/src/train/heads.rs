//! Concept heads: linear projections `z = W x` without bias, fitted by
//! gradient descent with momentum.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::losses::{bce_loss, cos_cubed_loss};
use super::TrainConfig;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFit {
    /// `M x D`.
    #[serde(skip)]
    pub weights: Array2<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub skipped_terms: usize,
}

const CONTEXT_STEP: f64 = 1.0;

/// `N(0, 1/D)` initialization.
pub fn init_head(m: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0 / (d.max(1) as f64).sqrt()).expect("valid std");
    Array2::from_shape_simple_fn((m, d), || normal.sample(rng))
}

fn mean_sq_norm(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows().max(1) as f64;
    let s = x.iter().map(|v| v * v).sum::<f64>() / n;
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

fn check_shapes(x: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(invalid!("no training samples"));
    }
    if x.nrows() != c.nrows() {
        return Err(invalid!("{} feature rows for {} label rows", x.nrows(), c.nrows()));
    }
    if x.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(invalid!("non-finite training input"));
    }
    Ok(())
}

/// Runs heavy-ball descent. `loss_grad` maps `(Z, C)` to the loss and its
/// gradient in `Z`. Mini-batches are drawn in a seeded order when
/// `batch_size` is positive and below `N`.
fn descend<F>(
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    mut w: Array2<f64>,
    step: f64,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    loss_grad: F,
) -> HeadFit
where
    F: Fn(ArrayView2<f64>, ArrayView2<f64>) -> (f64, Array2<f64>, usize),
{
    let n = x.nrows();
    let full = |w: &Array2<f64>| loss_grad(x.dot(&w.t()).view(), c);
    let (initial_loss, _, skipped_terms) = full(&w);
    let mut velocity = Array2::<f64>::zeros(w.dim());
    let batch = if cfg.batch_size == 0 || cfg.batch_size >= n { n } else { cfg.batch_size };
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        if batch < n {
            order.shuffle(rng);
        }
        for chunk in order.chunks(batch) {
            let grad_w = if batch == n {
                let (_, gz, _) = loss_grad(x.dot(&w.t()).view(), c);
                gz.t().dot(&x)
            } else {
                let xb = x.select(Axis(0), chunk);
                let cb = c.select(Axis(0), chunk);
                let (_, gz, _) = loss_grad(xb.dot(&w.t()).view(), cb.view());
                gz.t().dot(&xb)
            };
            velocity *= cfg.momentum;
            velocity.scaled_add(-step, &grad_w);
            w += &velocity;
        }
    }
    let (final_loss, _, _) = full(&w);
    HeadFit {
        weights: w,
        initial_loss,
        final_loss,
        skipped_terms,
    }
}

/// Fits the motion head with binary cross-entropy.
pub fn train_motion_head(
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<HeadFit> {
    check_shapes(x, c)?;
    if let Some(v) = c.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(invalid!("motion labels must be binary, found {v}"));
    }
    let m = c.ncols();
    let w = init_head(m, x.ncols(), rng);
    let step = cfg.learning_rate * 4.0 * m as f64 / mean_sq_norm(x);
    Ok(descend(x, c, w, step, cfg, rng, |z, c| {
        let (l, g) = bce_loss(z, c);
        (l, g, 0)
    }))
}

/// Fits an object or scene head with the cosine cubed loss.
pub fn train_context_head(
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<HeadFit> {
    check_shapes(x, c)?;
    let axis = cfg.cosine_cubed_axis;
    let w = init_head(c.ncols(), x.ncols(), rng);
    let sq_norm = w.iter().map(|v| v * v).sum::<f64>();
    let step = cfg.learning_rate * CONTEXT_STEP * sq_norm.max(1e-12);
    let fit = descend(x, c, w, step, cfg, rng, |z, c| cos_cubed_loss(z, c, axis));
    if fit.skipped_terms > 0 {
        log::warn!("{} cosine cubed terms have all-zero labels and were skipped", fit.skipped_terms);
    }
    Ok(fit)
}
