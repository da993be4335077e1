//! Conditional maximum likelihood for the Rasch model.
//!
//! Difficulties are estimated with one reference item fixed at zero (item 0
//! unless configured otherwise). Every user-facing view of the parameters goes
//! through [`itempar`], which re-centres the estimates and their covariance
//! under the requested identification constraint.

use nalgebra::{DMatrix, DVector};

use crate::dataset::ItemResponses;
use crate::error::{Error, Result};
use crate::esf::esf;

/// Estimates above this magnitude mean the likelihood has no finite maximum.
const DIVERGENCE_BOUND: f64 = 50.0;
const MAX_HALVINGS: usize = 20;
const MAX_STEP: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct CmlOptions {
    /// Item whose difficulty is fixed at zero during estimation.
    pub ref_item: usize,
    /// Convergence threshold on the largest absolute gradient entry.
    pub tol: f64,
    pub max_iter: usize,
    /// Optional starting difficulties (length m, any centring).
    pub start: Option<Vec<f64>>,
}

impl Default for CmlOptions {
    fn default() -> Self {
        Self {
            ref_item: 0,
            tol: 1e-8,
            max_iter: 100,
            start: None,
        }
    }
}

/// Weighted sufficient statistics of the conditional likelihood.
#[derive(Debug, Clone)]
pub(crate) struct SuffStats {
    /// Weighted count of correct answers per item, non-extreme persons only.
    pub item_totals: Vec<f64>,
    /// `score_counts[r]`: weighted number of persons with raw score r.
    pub score_counts: Vec<f64>,
}

impl SuffStats {
    pub fn new(responses: &ItemResponses, weights: Option<&[f64]>) -> Self {
        let m = responses.m();
        let mut item_totals = vec![0.0; m];
        let mut score_counts = vec![0.0; m + 1];
        for (i, row) in responses.rows().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let r: usize = row.iter().map(|&v| v as usize).sum();
            score_counts[r] += w;
            if r == 0 || r == m {
                continue;
            }
            for (t, &v) in item_totals.iter_mut().zip(row) {
                if v == 1 {
                    *t += w;
                }
            }
        }
        Self {
            item_totals,
            score_counts,
        }
    }

    fn informative_weight(&self) -> f64 {
        let m = self.item_totals.len();
        self.score_counts[1..m].iter().sum()
    }
}

/// Conditional log-likelihood with gradient and Hessian in the full
/// m-dimensional difficulty parameterization.
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

pub(crate) fn evaluate(beta: &[f64], stats: &SuffStats, order: u8) -> Result<Evaluation> {
    let m = beta.len();
    let eps: Vec<f64> = beta.iter().map(|b| (-b).exp()).collect();
    let e = esf(&eps, order)?;
    let mut loglik = -beta
        .iter()
        .zip(&stats.item_totals)
        .map(|(b, x)| b * x)
        .sum::<f64>();
    for r in 1..m {
        let nr = stats.score_counts[r];
        if nr > 0.0 {
            loglik -= nr * e.gamma[r].ln();
        }
    }
    let mut gradient = DVector::from_iterator(m, stats.item_totals.iter().map(|x| -x));
    let mut hessian = (order == 2).then(|| DMatrix::zeros(m, m));
    if let Some(d1) = &e.d1 {
        let mut p = vec![0.0; m];
        for r in 1..m {
            let nr = stats.score_counts[r];
            if nr == 0.0 {
                continue;
            }
            let g = e.gamma[r];
            for j in 0..m {
                p[j] = eps[j] * d1[(r, j)] / g;
                gradient[j] += nr * p[j];
            }
            if let (Some(h), Some(d2)) = (hessian.as_mut(), &e.d2) {
                for j in 0..m {
                    h[(j, j)] -= nr * p[j] * (1.0 - p[j]);
                    for k in (j + 1)..m {
                        let pjk = eps[j] * eps[k] * d2[r][(j, k)] / g;
                        let v = nr * (pjk - p[j] * p[k]);
                        h[(j, k)] -= v;
                        h[(k, j)] -= v;
                    }
                }
            }
        }
    }
    Ok(Evaluation {
        loglik,
        gradient,
        hessian,
    })
}

/// Result of a CML fit.
#[derive(Debug, Clone)]
pub struct RaschFit {
    pub item_labels: Vec<String>,
    pub ref_item: usize,
    /// Difficulties of all items except `ref_item`, in item order.
    pub beta_free: Vec<f64>,
    pub loglik: f64,
    /// Inverse observed information of the free parameters.
    pub vcov_free: DMatrix<f64>,
    /// Observed information of the free parameters.
    pub info_free: DMatrix<f64>,
    /// Weighted counts of persons per raw score, indexed 0..=m.
    pub score_counts: Vec<f64>,
    pub item_totals: Vec<f64>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_gradient: f64,
}

impl RaschFit {
    pub fn m(&self) -> usize {
        self.item_labels.len()
    }

    /// Indices of the free parameters, in order.
    pub fn free_items(&self) -> Vec<usize> {
        (0..self.m()).filter(|&j| j != self.ref_item).collect()
    }

    /// Difficulties under the estimation constraint (`ref_item` at zero).
    pub fn beta(&self) -> Vec<f64> {
        let mut full = Vec::with_capacity(self.m());
        let mut free = self.beta_free.iter();
        for j in 0..self.m() {
            full.push(if j == self.ref_item {
                0.0
            } else {
                *free.next().expect("free parameter")
            });
        }
        full
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// Number of persons with positive weight.
    pub fn n(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

fn check_degenerate(stats: &SuffStats, labels: &[String]) -> Result<()> {
    let total = stats.informative_weight();
    if total <= 0.0 {
        return Err(Error::Empty(
            "no person with a non-extreme raw score and positive weight".into(),
        ));
    }
    let slack = 1e-12 * total.max(1.0);
    for (j, &x) in stats.item_totals.iter().enumerate() {
        if x <= slack {
            return Err(Error::DegenerateItem {
                label: labels[j].clone(),
                reason: "solved by nobody".into(),
            });
        }
        if x >= total - slack {
            return Err(Error::DegenerateItem {
                label: labels[j].clone(),
                reason: "solved by everybody".into(),
            });
        }
    }
    Ok(())
}

/// A finite CML estimate exists iff the directed graph with an edge j -> k
/// whenever somebody solved j but failed k is strongly connected.
fn check_connected(responses: &ItemResponses, weights: Option<&[f64]>) -> Result<()> {
    let m = responses.m();
    let mut edge = vec![vec![false; m]; m];
    for (i, row) in responses.rows().enumerate() {
        if weights.is_some_and(|w| w[i] == 0.0) {
            continue;
        }
        for j in 0..m {
            if row[j] == 1 {
                for k in 0..m {
                    if row[k] == 0 {
                        edge[j][k] = true;
                    }
                }
            }
        }
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(j) = stack.pop() {
            for k in 0..m {
                let e = if forward { edge[j][k] } else { edge[k][j] };
                if e && !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        seen
    };
    let (fwd, bwd) = (reach(true), reach(false));
    if let Some(j) = (0..m).find(|&j| !fwd[j] || !bwd[j]) {
        return Err(Error::DegenerateItem {
            label: responses.item_labels()[j].clone(),
            reason: "responses separate the items into blocks, no finite estimate exists".into(),
        });
    }
    Ok(())
}

fn drop_index(v: &DVector<f64>, skip: usize) -> DVector<f64> {
    DVector::from_iterator(
        v.len() - 1,
        v.iter().enumerate().filter(|(j, _)| *j != skip).map(|(_, x)| *x),
    )
}

fn drop_row_col(h: &DMatrix<f64>, skip: usize) -> DMatrix<f64> {
    h.clone().remove_row(skip).remove_column(skip)
}

pub fn fit_cml(responses: &ItemResponses, weights: Option<&[f64]>) -> Result<RaschFit> {
    fit_cml_with(responses, weights, &CmlOptions::default())
}

/// Newton iteration with step halving on the conditional log-likelihood.
pub fn fit_cml_with(
    responses: &ItemResponses,
    weights: Option<&[f64]>,
    opts: &CmlOptions,
) -> Result<RaschFit> {
    let m = responses.m();
    let n = responses.n();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Invalid(format!("{} weights for {n} persons", w.len())));
        }
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Invalid("weights must be finite and non-negative".into()));
        }
    }
    if opts.ref_item >= m {
        return Err(Error::Invalid(format!(
            "reference item {} out of range for {m} items",
            opts.ref_item
        )));
    }
    let stats = SuffStats::new(responses, weights);
    check_degenerate(&stats, responses.item_labels())?;
    check_connected(responses, weights)?;

    let refj = opts.ref_item;
    let mut beta = match &opts.start {
        Some(s) if s.len() == m => {
            let shift = s[refj];
            s.iter().map(|b| b - shift).collect()
        }
        _ => vec![0.0; m],
    };

    let mut ev = evaluate(&beta, &stats, 2)?;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let grad = drop_index(&ev.gradient, refj);
        let max_gradient = grad.amax();
        if max_gradient < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let info = -drop_row_col(ev.hessian.as_ref().expect("hessian"), refj);
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => info
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Singular("conditional information".into()))?,
        };
        // near-boundary items have tiny information and huge raw steps
        let mut scale = (MAX_STEP / step.amax()).min(1.0);
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = beta.clone();
            for (k, j) in (0..m).filter(|&j| j != refj).enumerate() {
                cand[j] += scale * step[k];
            }
            let trial = evaluate(&cand, &stats, 0)?;
            if trial.loglik.is_finite()
                && trial.loglik >= ev.loglik - 1e-12 * (1.0 + ev.loglik.abs())
            {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some(c) => {
                beta = c;
                ev = evaluate(&beta, &stats, 2)?;
            }
            None => break,
        }
        if beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND) {
            break;
        }
    }

    if converged {
        // one extra Newton step takes the estimate to machine precision
        let grad = drop_index(&ev.gradient, refj);
        let info = -drop_row_col(ev.hessian.as_ref().expect("hessian"), refj);
        if let Some(ch) = info.cholesky() {
            let step = ch.solve(&grad);
            let mut cand = beta.clone();
            for (k, j) in (0..m).filter(|&j| j != refj).enumerate() {
                cand[j] += step[k];
            }
            let trial = evaluate(&cand, &stats, 2)?;
            if trial.loglik.is_finite() && drop_index(&trial.gradient, refj).amax() <= grad.amax() {
                beta = cand;
                ev = trial;
            }
        }
    }

    let grad = drop_index(&ev.gradient, refj);
    let max_gradient = grad.amax();
    let beta_free: Vec<f64> = (0..m).filter(|&j| j != refj).map(|j| beta[j]).collect();
    if !converged || beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND) {
        return Err(Error::NonConvergence {
            iterations,
            max_gradient,
            last: beta,
        });
    }
    let info_free = -drop_row_col(ev.hessian.as_ref().expect("hessian"), refj);
    let vcov_free = info_free
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("observed information is not positive definite".into()))?
        .inverse();
    let vcov_free = (&vcov_free + vcov_free.transpose()) * 0.5;

    Ok(RaschFit {
        item_labels: responses.item_labels().to_vec(),
        ref_item: refj,
        beta_free,
        loglik: ev.loglik,
        vcov_free,
        info_free,
        score_counts: stats.score_counts,
        item_totals: stats.item_totals,
        weights: weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec),
        iterations,
        converged,
        max_gradient,
    })
}

/// Identification constraint for reporting difficulties. Item indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    SumZero,
    RefItem(usize),
    RefSet(Vec<usize>),
}

impl Constraint {
    /// Weights `c` such that the constraint reads `c' beta = 0`.
    fn weights(&self, m: usize) -> Result<Vec<f64>> {
        let mut c = vec![0.0; m];
        match self {
            Constraint::SumZero => c.iter_mut().for_each(|x| *x = 1.0 / m as f64),
            Constraint::RefItem(k) => {
                if *k >= m {
                    return Err(Error::Invalid(format!("reference item {k} out of range for {m} items")));
                }
                c[*k] = 1.0;
            }
            Constraint::RefSet(set) => {
                if set.is_empty() {
                    return Err(Error::Invalid("reference set is empty".into()));
                }
                let mut s = set.clone();
                s.sort_unstable();
                s.dedup();
                for &k in &s {
                    if k >= m {
                        return Err(Error::Invalid(format!("reference item {k} out of range for {m} items")));
                    }
                    c[k] = 1.0 / s.len() as f64;
                }
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct ItemParameterView {
    pub item_labels: Vec<String>,
    pub beta: Vec<f64>,
    pub constraint: Constraint,
    /// m x m covariance of `beta` (rank m-1).
    pub vcov: DMatrix<f64>,
}

impl ItemParameterView {
    pub fn se(&self) -> Vec<f64> {
        (0..self.beta.len()).map(|j| self.vcov[(j, j)].max(0.0).sqrt()).collect()
    }
}

/// Linear map from the free parameters to the constrained view.
fn view_transform(fit: &RaschFit, c: &[f64]) -> DMatrix<f64> {
    let m = fit.m();
    let mut embed = DMatrix::zeros(m, m - 1);
    for (k, j) in fit.free_items().into_iter().enumerate() {
        embed[(j, k)] = 1.0;
    }
    let mut center = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        for j in 0..m {
            center[(i, j)] -= c[j];
        }
    }
    center * embed
}

pub fn itempar(fit: &RaschFit, constraint: Constraint) -> Result<ItemParameterView> {
    let m = fit.m();
    let c = constraint.weights(m)?;
    let t = view_transform(fit, &c);
    let beta_full = fit.beta();
    let shift: f64 = c.iter().zip(&beta_full).map(|(w, b)| w * b).sum();
    let mut beta: Vec<f64> = beta_full.iter().map(|b| b - shift).collect();
    if let Constraint::RefItem(k) = constraint {
        beta[k] = 0.0;
    }
    let vcov = &t * &fit.vcov_free * t.transpose();
    let vcov = (&vcov + vcov.transpose()) * 0.5;
    Ok(ItemParameterView {
        item_labels: fit.item_labels.clone(),
        beta,
        constraint,
        vcov,
    })
}

/// Ability estimates per raw score under a given item parameter view.
#[derive(Debug, Clone)]
pub struct PersonParameters {
    /// `theta[r - 1]` is the ability for raw score r, r = 1..m-1.
    pub theta: Vec<f64>,
    pub constraint: Constraint,
}

impl PersonParameters {
    pub fn for_score(&self, r: usize) -> Option<f64> {
        if r == 0 {
            return None;
        }
        self.theta.get(r - 1).copied()
    }

    /// Ability per person via the raw score; `None` for extreme scores.
    pub fn assign(&self, responses: &ItemResponses) -> Vec<Option<f64>> {
        responses
            .raw_scores()
            .into_iter()
            .map(|r| self.for_score(r))
            .collect()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Solves `sum_j logistic(theta - beta_j) = r` for theta.
pub fn solve_theta(beta: &[f64], r: f64) -> f64 {
    let expected = |t: f64| beta.iter().map(|b| logistic(t - b)).sum::<f64>();
    let lo0 = beta.iter().copied().fold(f64::INFINITY, f64::min) - 40.0;
    let hi0 = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 40.0;
    let (mut lo, mut hi) = (lo0, hi0);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..50 {
        let f = expected(t) - r;
        let d: f64 = beta
            .iter()
            .map(|b| {
                let p = logistic(t - b);
                p * (1.0 - p)
            })
            .sum();
        if d <= 0.0 {
            break;
        }
        let step = f / d;
        t -= step;
        if step.abs() < 1e-13 {
            break;
        }
    }
    t.clamp(lo0, hi0)
}

pub fn personpar(fit: &RaschFit, constraint: Constraint) -> Result<PersonParameters> {
    let view = itempar(fit, constraint.clone())?;
    let m = fit.m();
    let theta = (1..m).map(|r| solve_theta(&view.beta, r as f64)).collect();
    Ok(PersonParameters { theta, constraint })
}
