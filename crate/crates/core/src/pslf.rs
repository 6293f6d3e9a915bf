//! Partially shared latent factor learning: multi-view NMF in which every
//! view's code splits into a view-specific block and a block shared by all
//! views, with simplex view weights and an optional label-constrained term.
//!
//! Objective (unsupervised):
//!
//! ```text
//! sum_p pi_p ||X^p - U^p [V_s^p; V_c]||_F^2 + lambda ||pi||^2
//! ```
//!
//! With labels the objective gains `beta ||V_l - W Y||_F^2 + gamma ||W||_{2,1}`
//! where `V_l` holds the first `N_l` columns of the stacked factor matrix.
//!
//! Every block is updated multiplicatively from a diagonal majorizer, so the
//! objective never increases and factors stay non-negative.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PslfConfig {
    pub k_s: usize,
    pub k_c: usize,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for PslfConfig {
    fn default() -> Self {
        PslfConfig::from_eta(50, 0.2)
    }
}

impl PslfConfig {
    /// Splits `k` latent factors so that `k_c / k` is as close to `eta` as
    /// rounding allows (at least one shared factor).
    pub fn from_eta(k: usize, eta: f64) -> Self {
        let k_c = ((eta * k as f64).round() as usize).clamp(1, k.max(1));
        PslfConfig {
            k_s: k.saturating_sub(k_c),
            k_c,
            lambda: 20.0,
            beta: 0.05,
            gamma: 10.0,
            max_iters: 500,
            tol: 1e-5,
            restarts: 3,
            rng_seed: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k_s + self.k_c
    }

    pub fn eta(&self) -> f64 {
        self.k_c as f64 / self.k() as f64
    }

    fn validate(&self) -> Result<()> {
        if self.k_c < 1 {
            return Err(Error::invalid("at least one shared factor is required"));
        }
        if self.lambda < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::invalid("lambda, beta and gamma must be non-negative"));
        }
        Ok(())
    }
}

/// One-hot label matrix for the first `N_l` shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub y: DMatrix<f64>,
}

impl LabelMatrix {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} >= class count {classes}")));
        }
        let mut y = DMatrix::zeros(classes, labels.len());
        for (j, &l) in labels.iter().enumerate() {
            y[(l, j)] = 1.0;
        }
        Ok(LabelMatrix { y })
    }

    pub fn classes(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_labeled(&self) -> usize {
        self.y.ncols()
    }
}

/// Starting factors for a fit.
#[derive(Debug, Clone)]
pub struct PslfInit {
    pub u: Vec<DMatrix<f64>>,
    pub v_s: Vec<DMatrix<f64>>,
    pub v_c: DMatrix<f64>,
}

impl PslfInit {
    /// Uniform(0,1) entries scaled by `sqrt(mean(X) / K)`.
    pub fn random(x: &[DMatrix<f64>], cfg: &PslfConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = x[0].ncols();
        let k = cfg.k();
        let total: f64 = x.iter().map(|m| m.sum()).sum();
        let count: usize = x.iter().map(|m| m.len()).sum();
        let scale = (total / count.max(1) as f64 / k as f64).sqrt().max(1e-6);
        let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * scale);
        let u = x.iter().map(|m| draw(m.nrows(), k)).collect();
        let v_s = x.iter().map(|_| draw(cfg.k_s, n)).collect();
        let v_c = draw(cfg.k_c, n);
        PslfInit { u, v_s, v_c }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PslfModel {
    pub config: PslfConfig,
    /// Per-view bases `M_p × (K_s + K_c)`, specific columns first.
    pub u: Vec<DMatrix<f64>>,
    pub v_s: Vec<DMatrix<f64>>,
    pub v_c: DMatrix<f64>,
    pub pi: Vec<f64>,
    pub objective_trace: Vec<f64>,
    /// Label basis `(K_s P + K_c) × C` when fitted with labels.
    pub w: Option<DMatrix<f64>>,
    pub n_labeled: usize,
}

impl PslfModel {
    pub fn views(&self) -> usize {
        self.u.len()
    }

    /// Factor matrix of view `p`: `[V_s^p; V_c]`.
    pub fn view_factors(&self, p: usize) -> DMatrix<f64> {
        stack(&[&self.v_s[p], &self.v_c])
    }

    /// Stacked `[V_s^1; ...; V_s^P; V_c]`, one column per shape.
    pub fn fused(&self) -> DMatrix<f64> {
        let mut parts: Vec<&DMatrix<f64>> = self.v_s.iter().collect();
        parts.push(&self.v_c);
        stack(&parts)
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }

    pub fn residuals(&self, x: &[DMatrix<f64>]) -> Vec<f64> {
        (0..self.views())
            .map(|p| (&x[p] - &self.u[p] * self.view_factors(p)).norm_squared())
            .collect()
    }
}

fn stack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.iter().map(|m| m.ncols()).find(|&c| c > 0).unwrap_or(0);
    let rows: usize = parts.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for m in parts {
        if m.nrows() > 0 {
            out.rows_mut(r, m.nrows()).copy_from(*m);
        }
        r += m.nrows();
    }
    out
}

/// `v <- v (a + eps) / (b + eps)` elementwise.
fn mu_step(v: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    for ((vi, ai), bi) in v.iter_mut().zip(a.iter()).zip(b.iter()) {
        *vi *= (ai + EPS) / (bi + EPS);
    }
}

/// Simplex-constrained minimizer of `sum_p pi_p r_p + lambda sum_p pi_p^2`:
/// `pi_p = max(0, (nu - r_p) / (2 lambda))` with `nu` found by bisection.
pub fn update_view_weights(residuals: &[f64], lambda: f64) -> Vec<f64> {
    let p = residuals.len();
    if p == 0 {
        return Vec::new();
    }
    if lambda <= 0.0 {
        // linear objective: all weight on the smallest residual
        let best = (0..p).min_by(|&a, &b| residuals[a].total_cmp(&residuals[b])).unwrap();
        return (0..p).map(|i| f64::from(u8::from(i == best))).collect();
    }
    let weights = |nu: f64| -> Vec<f64> { residuals.iter().map(|r| ((nu - r) / (2.0 * lambda)).max(0.0)).collect() };
    let rmin = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmax = residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (rmin, rmax + 2.0 * lambda);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if weights(mid).iter().sum::<f64>() < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let mut pi = weights(0.5 * (lo + hi));
    let s: f64 = pi.iter().sum();
    if s > 0.0 {
        pi.iter_mut().for_each(|x| *x /= s);
    } else {
        pi = vec![1.0 / p as f64; p];
    }
    pi
}

fn check_inputs(x: &[DMatrix<f64>], cfg: &PslfConfig) -> Result<()> {
    cfg.validate()?;
    let Some(first) = x.first() else {
        return Err(Error::invalid("no views"));
    };
    let n = first.ncols();
    if n == 0 {
        return Err(Error::invalid("no shapes"));
    }
    for (p, m) in x.iter().enumerate() {
        if m.ncols() != n {
            return Err(Error::invalid(format!("view {p} has {} columns, expected {n}", m.ncols())));
        }
        if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::NegativeInput { view: p });
        }
        if m.nrows() < cfg.k() {
            return Err(Error::invalid(format!(
                "K_s + K_c = {} exceeds feature length {} of view {p}",
                cfg.k(),
                m.nrows()
            )));
        }
    }
    Ok(())
}

struct Labeled<'a> {
    y: &'a DMatrix<f64>,
    n_l: usize,
}

fn fused_head(v_s: &[DMatrix<f64>], v_c: &DMatrix<f64>, n_l: usize) -> DMatrix<f64> {
    let mut parts: Vec<DMatrix<f64>> = v_s.iter().map(|m| m.columns(0, n_l).into_owned()).collect();
    parts.push(v_c.columns(0, n_l).into_owned());
    let refs: Vec<&DMatrix<f64>> = parts.iter().collect();
    stack(&refs)
}

struct State {
    u: Vec<DMatrix<f64>>,
    v_s: Vec<DMatrix<f64>>,
    v_c: DMatrix<f64>,
    pi: Vec<f64>,
    w: Option<DMatrix<f64>>,
}

impl State {
    fn view_factors(&self, p: usize) -> DMatrix<f64> {
        stack(&[&self.v_s[p], &self.v_c])
    }

    fn fused_labeled(&self, n_l: usize) -> DMatrix<f64> {
        fused_head(&self.v_s, &self.v_c, n_l)
    }

    fn objective(&self, x: &[DMatrix<f64>], cfg: &PslfConfig, lab: Option<&Labeled>) -> f64 {
        let mut obj = 0.0;
        for (p, xp) in x.iter().enumerate() {
            obj += self.pi[p] * (xp - &self.u[p] * self.view_factors(p)).norm_squared();
        }
        obj += cfg.lambda * self.pi.iter().map(|v| v * v).sum::<f64>();
        if let (Some(lab), Some(w)) = (lab, &self.w) {
            let vl = self.fused_labeled(lab.n_l);
            obj += cfg.beta * (vl - w * lab.y).norm_squared();
            obj += cfg.gamma * w.row_iter().map(|r| r.norm()).sum::<f64>();
        }
        obj
    }
}

/// Runs the block-coordinate updates from `init`.
fn run(x: &[DMatrix<f64>], cfg: &PslfConfig, labels: Option<&LabelMatrix>, init: PslfInit) -> PslfModel {
    let views = x.len();
    let n = x[0].ncols();
    let lab = labels
        .filter(|_| cfg.beta > 0.0)
        .map(|l| Labeled { y: &l.y, n_l: l.n_labeled() });
    let mut st = State {
        u: init.u,
        v_s: init.v_s,
        v_c: init.v_c,
        pi: vec![1.0 / views as f64; views],
        w: None,
    };
    if let Some(lab) = &lab {
        // class means of the labeled codes
        let vl = st.fused_labeled(lab.n_l);
        let counts = lab.y.column_sum();
        let mut w = &vl * lab.y.transpose();
        for (c, cnt) in counts.iter().enumerate() {
            if *cnt > 0.0 {
                w.column_mut(c).scale_mut(1.0 / cnt);
            }
        }
        st.w = Some(w);
    }
    // mask of labeled columns, scaled by beta
    let beta_mask = |m: &DMatrix<f64>, n_l: usize| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), n);
        out.columns_mut(0, n_l).copy_from(&(m.columns(0, n_l) * cfg.beta));
        out
    };

    let mut trace = vec![st.objective(x, cfg, lab.as_ref())];
    for _ in 0..cfg.max_iters {
        for p in 0..views {
            // U^p
            let vp = st.view_factors(p);
            let a = &x[p] * vp.transpose();
            let b = &st.u[p] * (&vp * vp.transpose());
            mu_step(&mut st.u[p], &a, &b);

            // V_s^p
            if cfg.k_s > 0 {
                let us = st.u[p].columns(0, cfg.k_s).into_owned();
                let recon = &st.u[p] * &vp;
                let mut a = us.transpose() * &x[p] * st.pi[p];
                let mut b = us.transpose() * recon * st.pi[p];
                if let (Some(lab), Some(w)) = (&lab, &st.w) {
                    let wp = w.rows(p * cfg.k_s, cfg.k_s) * lab.y;
                    let mut head = a.columns_mut(0, lab.n_l);
                    head += wp * cfg.beta;
                    b += beta_mask(&st.v_s[p], lab.n_l);
                }
                mu_step(&mut st.v_s[p], &a, &b);
            }
        }

        // V_c from all views
        let mut a = DMatrix::zeros(cfg.k_c, n);
        let mut b = DMatrix::zeros(cfg.k_c, n);
        for p in 0..views {
            let uc = st.u[p].columns(cfg.k_s, cfg.k_c).into_owned();
            let recon = &st.u[p] * st.view_factors(p);
            a += uc.transpose() * &x[p] * st.pi[p];
            b += uc.transpose() * recon * st.pi[p];
        }
        if let (Some(lab), Some(w)) = (&lab, &st.w) {
            let wc = w.rows(views * cfg.k_s, cfg.k_c) * lab.y;
            let mut head = a.columns_mut(0, lab.n_l);
            head += wc * cfg.beta;
            b += beta_mask(&st.v_c, lab.n_l);
        }
        mu_step(&mut st.v_c, &a, &b);

        // W: l2,1 term majorized row-wise at the current iterate
        if let (Some(lab), Some(w)) = (&lab, st.w.as_mut()) {
            let vl = fused_head(&st.v_s, &st.v_c, lab.n_l);
            let a = &vl * lab.y.transpose() * cfg.beta;
            let mut b = &*w * (lab.y * lab.y.transpose()) * cfg.beta;
            for (r, norm) in w.row_iter().map(|row| row.norm()).enumerate().collect::<Vec<_>>() {
                if norm > 0.0 {
                    let shrink = w.row(r) * (cfg.gamma / (2.0 * norm));
                    let mut br = b.row_mut(r);
                    br += shrink;
                }
            }
            mu_step(w, &a, &b);
        }

        // view weights
        let residuals: Vec<f64> = (0..views)
            .map(|p| (&x[p] - &st.u[p] * st.view_factors(p)).norm_squared())
            .collect();
        st.pi = update_view_weights(&residuals, cfg.lambda);

        let obj = st.objective(x, cfg, lab.as_ref());
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if (prev - obj).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    PslfModel {
        config: cfg.clone(),
        u: st.u,
        v_s: st.v_s,
        v_c: st.v_c,
        pi: st.pi,
        objective_trace: trace,
        w: st.w,
        n_labeled: lab.as_ref().map_or(0, |l| l.n_l),
    }
}

fn best_of_restarts(
    x: &[DMatrix<f64>],
    cfg: &PslfConfig,
    labels: Option<&LabelMatrix>,
) -> PslfModel {
    (0..cfg.restarts.max(1) as u64)
        .map(|r| {
            let seed = cfg.rng_seed ^ r.wrapping_mul(0xA076_1D64_78BD_642F);
            run(x, cfg, labels, PslfInit::random(x, cfg, seed))
        })
        .min_by(|a, b| a.final_objective().total_cmp(&b.final_objective()))
        .expect("at least one restart")
}

pub fn fit_unsupervised(x: &[DMatrix<f64>], cfg: &PslfConfig) -> Result<PslfModel> {
    check_inputs(x, cfg)?;
    Ok(best_of_restarts(x, cfg, None))
}

/// Single run from explicit starting factors.
pub fn fit_from(x: &[DMatrix<f64>], cfg: &PslfConfig, labels: Option<&LabelMatrix>, init: PslfInit) -> Result<PslfModel> {
    check_inputs(x, cfg)?;
    if let Some(l) = labels {
        check_labels(x, l)?;
    }
    let k = cfg.k();
    let n = x[0].ncols();
    let shapes_ok = init.u.len() == x.len()
        && init.u.iter().zip(x).all(|(u, m)| u.shape() == (m.nrows(), k))
        && init.v_s.len() == x.len()
        && init.v_s.iter().all(|v| v.shape() == (cfg.k_s, n))
        && init.v_c.shape() == (cfg.k_c, n);
    if !shapes_ok {
        return Err(Error::invalid("initial factors do not match the inputs"));
    }
    Ok(run(x, cfg, labels, init))
}

fn check_labels(x: &[DMatrix<f64>], labels: &LabelMatrix) -> Result<()> {
    if labels.classes() < 2 {
        return Err(Error::invalid("label-constrained fitting needs at least two classes"));
    }
    if labels.n_labeled() > x[0].ncols() {
        return Err(Error::invalid("more labeled shapes than shapes"));
    }
    Ok(())
}

/// Label-constrained fit; the first `N_l` columns of every view are the
/// labeled shapes. The returned model carries `W` in `model.w`.
pub fn fit_labeled(x: &[DMatrix<f64>], labels: &LabelMatrix, cfg: &PslfConfig) -> Result<PslfModel> {
    check_inputs(x, cfg)?;
    check_labels(x, labels)?;
    Ok(best_of_restarts(x, cfg, Some(labels)))
}

/// Non-negative least squares `min ||A y - b||, y >= 0` (Lawson–Hanson).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (a.norm() * b.norm()).max(1.0);
    let solve = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub
            .clone()
            .svd(true, true)
            .solve(b, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };
    for _ in 0..3 * n + 10 {
        let grad = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let s = solve(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..n).filter(|&i| passive[i] && s[i] <= 0.0) {
                let denom = x[i] - s[i];
                if denom > 0.0 {
                    alpha = alpha.min(x[i] / denom);
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (&s - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrediction {
    pub scores: Vec<f64>,
    /// `None` when every score is zero.
    pub label: Option<usize>,
}

/// Non-negative codes of each column of `v_u` over the columns of `w`;
/// the hard label is the largest entry (lowest index on ties).
pub fn predict_labels(w: &DMatrix<f64>, v_u: &DMatrix<f64>) -> Result<Vec<LabelPrediction>> {
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateBasis);
    }
    if v_u.nrows() != w.nrows() {
        return Err(Error::invalid("code length does not match the label basis"));
    }
    Ok(v_u
        .column_iter()
        .map(|col| {
            let y = nnls(w, &col.into_owned());
            let scores: Vec<f64> = y.iter().copied().collect();
            let best = scores.iter().cloned().fold(0.0f64, f64::max);
            let label = (best > 0.0).then(|| scores.iter().position(|&s| s == best).unwrap());
            LabelPrediction { scores, label }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>())
    }

    #[test]
    fn eta_split() {
        for k in [2usize, 5, 10, 50] {
            for eta in [0.05, 0.2, 0.5, 0.8, 1.0] {
                let c = PslfConfig::from_eta(k, eta);
                assert_eq!(c.k(), k);
                assert!((c.eta() - eta).abs() <= 0.5 / k as f64 + 1e-12 || c.k_c == 1);
            }
        }
        let d = PslfConfig::default();
        assert_eq!((d.k_s, d.k_c), (40, 10));
        assert_eq!((d.lambda, d.beta, d.gamma), (20.0, 0.05, 10.0));
    }

    #[test]
    fn view_weights_examples() {
        assert_eq!(update_view_weights(&[3.0, 3.0, 3.0], 1.0), vec![1.0 / 3.0; 3]);
        let pi = update_view_weights(&[0.0, 4.0], 1.0);
        assert!((pi[0] - 1.0).abs() < 1e-12 && pi[1].abs() < 1e-12);
        let pi = update_view_weights(&[0.0, 1.0, 5.0, 2.0], 1e9);
        assert!(pi.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn view_weights_minimize_qp() {
        // compare against a dense grid over the 3-simplex
        let r = [0.7, 1.3, 0.2];
        let lambda = 0.4;
        let f = |p: &[f64]| p.iter().zip(&r).map(|(a, b)| a * b + lambda * a * a).sum::<f64>();
        let pi = update_view_weights(&r, lambda);
        let best = f(&pi);
        let steps = 200;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let p = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                assert!(best <= f(&p) + 1e-12);
            }
        }
    }

    #[test]
    fn input_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = rand_mat(6, 5, &mut rng);
        let cfg = PslfConfig { k_s: 1, k_c: 2, ..PslfConfig::default() };
        assert!(fit_unsupervised(&[x.clone()], &PslfConfig { k_s: 5, ..cfg.clone() }).is_err());
        x[(0, 0)] = -1.0;
        assert!(matches!(fit_unsupervised(&[x], &cfg), Err(Error::NegativeInput { view: 0 })));
        let y = LabelMatrix::from_labels(&[0, 0], 1).unwrap();
        let x = rand_mat(6, 5, &mut rng);
        assert!(fit_labeled(&[x], &y, &cfg).is_err());
    }

    #[test]
    fn exact_low_rank_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (k_s, k_c, n) = (1, 2, 12);
        let vc = rand_mat(k_c, n, &mut rng);
        let x: Vec<DMatrix<f64>> = (0..2)
            .map(|_| {
                let u = rand_mat(15, k_s + k_c, &mut rng);
                let vs = rand_mat(k_s, n, &mut rng);
                u * stack(&[&vs, &vc])
            })
            .collect();
        let cfg = PslfConfig { k_s, k_c, lambda: 1.0, max_iters: 20_000, tol: 1e-13, restarts: 3, ..PslfConfig::default() };
        let m = fit_unsupervised(&x, &cfg).unwrap();
        let xnorm: f64 = x.iter().map(|m| m.norm_squared()).sum();
        let pen = cfg.lambda * m.pi.iter().map(|v| v * v).sum::<f64>();
        assert!(m.final_objective() <= pen + 1e-6 * xnorm, "{} vs {}", m.final_objective(), pen);
    }

    #[test]
    fn large_lambda_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<_> = (0..3).map(|p| rand_mat(8, 6, &mut rng) * (1.0 + p as f64)).collect();
        let cfg = PslfConfig { k_s: 1, k_c: 2, lambda: 1e6, max_iters: 30, restarts: 1, ..PslfConfig::default() };
        let m = fit_unsupervised(&x, &cfg).unwrap();
        assert!(m.pi.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-3));
    }

    #[test]
    fn beta_zero_matches_unsupervised() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<_> = (0..2).map(|_| rand_mat(9, 8, &mut rng)).collect();
        let cfg = PslfConfig { k_s: 1, k_c: 2, beta: 0.0, max_iters: 40, restarts: 1, ..PslfConfig::default() };
        let y = LabelMatrix::from_labels(&[0, 1, 0], 2).unwrap();
        let init = PslfInit::random(&x, &cfg, 11);
        let a = fit_from(&x, &cfg, None, init.clone()).unwrap();
        let b = fit_from(&x, &cfg, Some(&y), init).unwrap();
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.fused(), b.fused());
        assert!(b.w.is_none());
    }

    #[test]
    fn labeled_trace_monotone_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<_> = (0..3).map(|_| rand_mat(12, 10, &mut rng)).collect();
        let cfg = PslfConfig { k_s: 2, k_c: 2, beta: 2.0, gamma: 1.0, max_iters: 200, tol: 0.0, restarts: 1, ..PslfConfig::default() };
        let y = LabelMatrix::from_labels(&[0, 1, 2, 0, 1], 3).unwrap();
        let m = fit_labeled(&x, &y, &cfg).unwrap();
        for w in m.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs());
        }
        assert!(m.fused().iter().all(|&v| v >= 0.0));
        assert!(m.w.as_ref().unwrap().iter().all(|&v| v >= 0.0));
    }

    fn brute_nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = a.ncols();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
            let mut y = DVector::zeros(n);
            if !idx.is_empty() {
                let sub = a.select_columns(&idx);
                let ata = sub.transpose() * &sub;
                let Some(chol) = ata.cholesky() else { continue };
                let s = chol.solve(&(sub.transpose() * b));
                if s.iter().any(|&v| v < 0.0) {
                    continue;
                }
                for (k, &j) in idx.iter().enumerate() {
                    y[j] = s[k];
                }
            }
            let r = (b - a * &y).norm_squared();
            if best.as_ref().is_none_or(|(br, _)| r < *br) {
                best = Some((r, y));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn nnls_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..200 {
            let c = 1 + trial % 4;
            let a = rand_mat(6, c, &mut rng);
            let b = DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.3);
            let got = nnls(&a, &b);
            let want = brute_nnls(&a, &b);
            assert!((got - want).amax() < 1e-6, "trial {trial}");
        }
    }

    #[test]
    fn predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = rand_mat(5, 3, &mut rng);
        let mut v = DMatrix::zeros(5, 2);
        v.column_mut(0).copy_from(&w.column(2));
        let p = predict_labels(&w, &v).unwrap();
        assert_eq!(p[0].label, Some(2));
        assert_eq!(p[1].label, None);
        assert!(p[1].scores.iter().all(|&s| s == 0.0));
        assert!(matches!(predict_labels(&DMatrix::zeros(5, 3), &v), Err(Error::DegenerateBasis)));
    }

    /// Plain Lee–Seung updates on nested vectors.
    fn lee_seung(x: &[Vec<f64>], mut w: Vec<Vec<f64>>, mut h: Vec<Vec<f64>>, iters: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (m, n, k) = (x.len(), x[0].len(), h.len());
        for _ in 0..iters {
            let wh = |w: &Vec<Vec<f64>>, h: &Vec<Vec<f64>>, i: usize, j: usize| (0..k).map(|r| w[i][r] * h[r][j]).sum::<f64>();
            let mut nw = w.clone();
            for i in 0..m {
                for r in 0..k {
                    let num: f64 = (0..n).map(|j| x[i][j] * h[r][j]).sum();
                    let den: f64 = (0..n).map(|j| wh(&w, &h, i, j) * h[r][j]).sum();
                    nw[i][r] = w[i][r] * (num + EPS) / (den + EPS);
                }
            }
            w = nw;
            let mut nh = h.clone();
            for r in 0..k {
                for j in 0..n {
                    let num: f64 = (0..m).map(|i| w[i][r] * x[i][j]).sum();
                    let den: f64 = (0..m).map(|i| w[i][r] * wh(&w, &h, i, j)).sum();
                    nh[r][j] = h[r][j] * (num + EPS) / (den + EPS);
                }
            }
            h = nh;
        }
        (w, h)
    }

    #[test]
    fn single_view_shared_only_is_plain_nmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(7, 9, &mut rng);
        let cfg = PslfConfig { k_s: 0, k_c: 3, max_iters: 25, tol: 0.0, restarts: 1, ..PslfConfig::default() };
        let init = PslfInit::random(&[x.clone()], &cfg, 8);
        let to_rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect::<Vec<Vec<f64>>>();
        let (w, h) = lee_seung(&to_rows(&x), to_rows(&init.u[0]), to_rows(&init.v_c), 25);
        let m = fit_from(&[x], &cfg, None, init).unwrap();
        assert_eq!(m.objective_trace.len(), 26);
        for i in 0..7 {
            for r in 0..3 {
                assert!((m.u[0][(i, r)] - w[i][r]).abs() < 1e-9);
            }
        }
        for r in 0..3 {
            for j in 0..9 {
                assert!((m.v_c[(r, j)] - h[r][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn planted_blocks_separate_in_shared_code() {
        // two groups of shapes built from disjoint feature supports in every view
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20;
        let x: Vec<DMatrix<f64>> = (0..3)
            .map(|_| {
                DMatrix::from_fn(16, n, |i, j| {
                    let group = usize::from(j >= n / 2);
                    let on = (i < 8) == (group == 0);
                    if on { 1.0 + 0.1 * rng.random::<f64>() } else { 0.01 * rng.random::<f64>() }
                })
            })
            .collect();
        let cfg = PslfConfig { k_s: 1, k_c: 2, max_iters: 300, restarts: 2, ..PslfConfig::default() };
        let m = fit_unsupervised(&x, &cfg).unwrap();
        let dominant = |j: usize| usize::from(m.v_c[(1, j)] > m.v_c[(0, j)]);
        let g0 = dominant(0);
        assert!((0..n / 2).all(|j| dominant(j) == g0));
        assert!((n / 2..n).all(|j| dominant(j) != g0));
    }

    #[test]
    fn large_gamma_zeroes_more_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x: Vec<_> = (0..2).map(|_| rand_mat(10, 12, &mut rng)).collect();
        let y = LabelMatrix::from_labels(&[0, 1, 0, 1, 0, 1], 2).unwrap();
        let norms = |gamma: f64| {
            let cfg = PslfConfig { k_s: 2, k_c: 2, beta: 1.0, gamma, max_iters: 400, tol: 0.0, restarts: 1, ..PslfConfig::default() };
            let m = fit_labeled(&x, &y, &cfg).unwrap();
            let w = m.w.unwrap();
            (w.row_iter().filter(|r| r.norm() < 1e-3).count(), w.norm())
        };
        let (zero_lo, norm_lo) = norms(0.0);
        let (zero_hi, norm_hi) = norms(50.0);
        assert!(zero_hi >= zero_lo);
        assert!(zero_hi > 0);
        assert!(norm_hi < norm_lo);
    }

    fn planted(rng: &mut ChaCha8Rng, n: usize, views: usize) -> Vec<DMatrix<f64>> {
        (0..views)
            .map(|_| {
                DMatrix::from_fn(16, n, |i, j| {
                    let on = (i < 8) == (j % 2 == 0);
                    if on { 1.0 + 0.1 * rng.random::<f64>() } else { 0.01 * rng.random::<f64>() }
                })
            })
            .collect()
    }

    fn cosine(a: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        a.column(i).dot(&a.column(j)) / (a.column(i).norm() * a.column(j).norm()).max(1e-300)
    }

    #[test]
    fn labels_separate_planted_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = planted(&mut rng, 16, 2);
        let labels: Vec<usize> = (0..8).map(|j| j % 2).collect();
        let y = LabelMatrix::from_labels(&labels, 2).unwrap();
        let cfg = PslfConfig { k_s: 2, k_c: 2, beta: 50.0, gamma: 0.1, max_iters: 500, restarts: 2, ..PslfConfig::default() };
        let m = fit_labeled(&x, &y, &cfg).unwrap();
        let v = m.fused();
        for i in 0..8 {
            for j in i + 1..8 {
                let c = cosine(&v, i, j);
                if i % 2 == j % 2 {
                    assert!(c > 0.8, "within {i},{j}: {c}");
                } else {
                    assert!(c < 0.2, "across {i},{j}: {c}");
                }
            }
        }
    }

    #[test]
    fn huge_gamma_makes_w_row_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = planted(&mut rng, 16, 2);
        let labels: Vec<usize> = (0..8).map(|j| j % 2).collect();
        let y = LabelMatrix::from_labels(&labels, 2).unwrap();
        let cfg = PslfConfig { k_s: 2, k_c: 2, beta: 1.0, gamma: 1e4, max_iters: 300, tol: 0.0, restarts: 1, ..PslfConfig::default() };
        let m = fit_labeled(&x, &y, &cfg).unwrap();
        let w = m.w.unwrap();
        let small = w.row_iter().filter(|r| r.norm() < 1e-6).count();
        assert!(2 * small >= w.nrows(), "{small} of {}", w.nrows());
    }

    #[test]
    fn view_order_permutes_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x: Vec<_> = (0..3).map(|p| rand_mat(10 + p, 9, &mut rng)).collect();
        let cfg = PslfConfig { k_s: 2, k_c: 2, max_iters: 60, tol: 0.0, restarts: 1, ..PslfConfig::default() };
        let init = PslfInit::random(&x, &cfg, 5);
        let order = [2usize, 0, 1];
        let xp: Vec<_> = order.iter().map(|&p| x[p].clone()).collect();
        let initp = PslfInit {
            u: order.iter().map(|&p| init.u[p].clone()).collect(),
            v_s: order.iter().map(|&p| init.v_s[p].clone()).collect(),
            v_c: init.v_c.clone(),
        };
        let a = fit_from(&x, &cfg, None, init).unwrap();
        let b = fit_from(&xp, &cfg, None, initp).unwrap();
        let rel = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).norm() / x.norm();
        assert!(rel(&a.v_c, &b.v_c) < 1e-8);
        for (k, &p) in order.iter().enumerate() {
            assert!(rel(&a.u[p], &b.u[k]) < 1e-8);
            assert!(rel(&a.v_s[p], &b.v_s[k]) < 1e-8);
            assert!((a.pi[p] - b.pi[k]).abs() < 1e-8);
        }
        assert!((a.final_objective() - b.final_objective()).abs() < 1e-8 * a.final_objective());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

            #[test]
            fn objective_never_increases(
                seed in any::<u64>(),
                n in 5usize..30,
                m in 10usize..60,
                views in 1usize..=4,
                k in 2usize..=8,
                labeled in any::<bool>(),
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: Vec<_> = (0..views).map(|_| rand_mat(m, n, &mut rng)).collect();
                let k_c = 1 + (seed as usize % k);
                let cfg = PslfConfig {
                    k_s: k - k_c.min(k), k_c: k_c.min(k), lambda: 1.0 + (seed % 7) as f64,
                    beta: 0.5, gamma: 0.5, max_iters: 15, tol: 0.0, restarts: 1, rng_seed: seed,
                };
                let model = if labeled {
                    let labels: Vec<usize> = (0..n / 2).map(|j| j % 2).collect();
                    fit_labeled(&x, &LabelMatrix::from_labels(&labels, 2).unwrap(), &cfg).unwrap()
                } else {
                    fit_unsupervised(&x, &cfg).unwrap()
                };
                for w in model.objective_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
                }
                prop_assert!(model.fused().iter().all(|&v| v >= 0.0));
                prop_assert!((model.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
