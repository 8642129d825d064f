//! Sparse softmax classifier over standardized concept activations, fitted
//! by proximal gradient descent on an elastic-net objective:
//!
//! `mean CE + lambda * ((1 - alpha) / 2 * |W|_F^2 + alpha * |W|_1)`
//!
//! The bias is not penalized.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub lambda: f64,
    pub alpha: f64,
    pub max_iter: usize,
    /// Stop once the proximal step moves no coordinate by more than this.
    pub tol: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            lambda: 1e-4,
            alpha: 0.99,
            max_iter: 20_000,
            tol: 1e-6,
        }
    }
}

impl ClassifierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }

    fn l1(&self) -> f64 {
        self.lambda * self.alpha
    }

    fn l2(&self) -> f64 {
        self.lambda * (1.0 - self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFit {
    /// `K x M`.
    #[serde(skip)]
    pub weights: Array2<f64>,
    #[serde(skip)]
    pub bias: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Step size of the final accepted iteration.
    pub step: f64,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Mean cross-entropy and its gradients in `W` and `b`.
pub fn cross_entropy(
    z: ArrayView2<f64>,
    y: &[usize],
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = z.nrows() as f64;
    let logits = z.dot(&w.t()) + &b;
    let mut loss = 0.0;
    for (row, &c) in logits.rows().into_iter().zip(y) {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[c];
    }
    let mut p = logits;
    softmax_rows(&mut p);
    for (mut row, &c) in p.rows_mut().into_iter().zip(y) {
        row[c] -= 1.0;
    }
    let gw = p.t().dot(&z) / n;
    let gb = p.sum_axis(Axis(0)) / n;
    (loss / n, gw, gb)
}

fn smooth(z: ArrayView2<f64>, y: &[usize], w: ArrayView2<f64>, b: ArrayView1<f64>, p: &ClassifierParams) -> (f64, Array2<f64>, Array1<f64>) {
    let (ce, mut gw, gb) = cross_entropy(z, y, w, b);
    let l2 = p.l2();
    gw.scaled_add(l2, &w);
    (ce + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>(), gw, gb)
}

/// Full elastic-net objective.
pub fn objective(z: ArrayView2<f64>, y: &[usize], w: ArrayView2<f64>, b: ArrayView1<f64>, p: &ClassifierParams) -> f64 {
    let (f, _, _) = smooth(z, y, w, b, p);
    f + p.l1() * w.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// One proximal gradient step of size `step` from `(w, b)`.
pub fn prox_step(
    z: ArrayView2<f64>,
    y: &[usize],
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    step: f64,
    p: &ClassifierParams,
) -> (Array2<f64>, Array1<f64>) {
    let (_, gw, gb) = smooth(z, y, w, b, p);
    prox_from_grad(w, b, &gw, &gb, step, p)
}

fn prox_from_grad(
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    gw: &Array2<f64>,
    gb: &Array1<f64>,
    step: f64,
    p: &ClassifierParams,
) -> (Array2<f64>, Array1<f64>) {
    let thresh = step * p.l1();
    let mut nw = Array2::zeros(w.dim());
    Zip::from(&mut nw).and(w).and(gw).for_each(|o, &wi, &gi| {
        *o = soft_threshold(wi - step * gi, thresh);
    });
    let nb = &b - &(gb * step);
    (nw, nb)
}

fn max_abs_diff<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Fits `(W, b)` from standardized activations `z` (`N x M`) and labels in
/// `0..k`, starting from zero with backtracking step sizes.
pub fn train_classifier(z: ArrayView2<f64>, y: &[usize], k: usize, params: &ClassifierParams) -> Result<ClassifierFit> {
    params.validate()?;
    let (n, m) = z.dim();
    if n == 0 || y.len() != n {
        return Err(invalid!("{n} activation rows for {} labels", y.len()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= k) {
        return Err(invalid!("label {bad} outside {k} classes"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("non-finite activations"));
    }
    let mut w = Array2::<f64>::zeros((k, m));
    let mut b = Array1::<f64>::zeros(k);
    let mut step = 1.0;
    let (mut f, mut gw, mut gb) = smooth(z, y, w.view(), b.view(), params);
    let l1_of = |w: &Array2<f64>| params.l1() * w.iter().map(|v| v.abs()).sum::<f64>();
    let mut obj = f + l1_of(&w);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        step *= 1.25;
        let mut accepted = None;
        for _ in 0..80 {
            let (nw, nb) = prox_from_grad(w.view(), b.view(), &gw, &gb, step, params);
            let (nf, ngw, ngb) = smooth(z, y, nw.view(), nb.view(), params);
            let dw = &nw - &w;
            let db = &nb - &b;
            let lin = (&gw * &dw).sum() + (&gb * &db).sum();
            let quad = (dw.iter().map(|v| v * v).sum::<f64>() + db.iter().map(|v| v * v).sum::<f64>()) / (2.0 * step);
            let nobj = nf + l1_of(&nw);
            if nf <= f + lin + quad && nobj <= obj {
                accepted = Some((nw, nb, nf, ngw, ngb, nobj));
                break;
            }
            step *= 0.5;
        }
        let Some((nw, nb, nf, ngw, ngb, nobj)) = accepted else {
            log::warn!("classifier line search stalled after {iterations} iterations");
            break;
        };
        let residual = max_abs_diff(nw.iter(), w.iter()).max(max_abs_diff(nb.iter(), b.iter()));
        if residual <= params.tol {
            // keep the iterate whose fixed-point residual was measured
            converged = true;
            break;
        }
        w = nw;
        b = nb;
        f = nf;
        gw = ngw;
        gb = ngb;
        obj = nobj;
        trace.push(obj);
    }
    if !converged {
        log::warn!("classifier stopped after {iterations} iterations without reaching tol {}", params.tol);
    }
    Ok(ClassifierFit {
        weights: w,
        bias: b,
        objective: obj,
        iterations,
        converged,
        step,
        trace,
    })
}
