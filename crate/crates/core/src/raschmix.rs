//! Finite mixtures of Rasch models fitted by EM.
//!
//! Each component has its own item difficulties and its own distribution of
//! raw scores. A person's density in component c is the score probability
//! times the conditional (CML) likelihood of the response pattern given the
//! raw score. The M-step is a weighted CML fit per component plus a fit of
//! the score distribution to the weighted score counts.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::dataset::ItemResponses;
use crate::error::{Error, Result};
use crate::esf::esf;
use crate::montecarlo::{derive_seed, substream};
use crate::rasch::{fit_cml_with, CmlOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Two-parameter exponential family with location and dispersion terms.
    MeanVar,
    /// One free probability per non-extreme raw score.
    Saturated,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::MeanVar => "meanvar",
            ScoreKind::Saturated => "saturated",
        }
    }
}

/// Distribution of non-extreme raw scores r = 1..m-1.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    /// Model actually fitted (saturated after a fallback).
    pub kind: ScoreKind,
    /// `[location, dispersion]` for meanvar; the probabilities for saturated.
    pub params: Vec<f64>,
    /// `probs[r - 1]` is the probability of raw score r.
    pub probs: Vec<f64>,
    /// Set when a meanvar fit had no finite optimum and fell back to saturated.
    pub fallback: bool,
}

impl ScoreModel {
    pub fn prob(&self, r: usize) -> f64 {
        if r == 0 || r > self.probs.len() {
            0.0
        } else {
            self.probs[r - 1]
        }
    }

    pub fn n_params(&self) -> usize {
        match self.kind {
            ScoreKind::MeanVar => 2,
            ScoreKind::Saturated => self.probs.len() - 1,
        }
    }

    /// Weighted multinomial log-likelihood of score counts (r = 1..m-1).
    pub fn loglik(&self, counts: &[f64]) -> f64 {
        counts
            .iter()
            .zip(&self.probs)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, p)| c * p.ln())
            .sum()
    }
}

/// Location and dispersion basis `(r/m, 4 r (m - r) / m^2)`.
pub fn meanvar_basis(r: usize, m: usize) -> (f64, f64) {
    let (r, m) = (r as f64, m as f64);
    (r / m, 4.0 * r * (m - r) / (m * m))
}

pub fn meanvar_probs(delta: [f64; 2], m: usize) -> Vec<f64> {
    let eta: Vec<f64> = (1..m)
        .map(|r| {
            let (z, z2) = meanvar_basis(r, m);
            delta[0] * z + delta[1] * z2
        })
        .collect();
    let mx = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - mx).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Fits a score model to weighted counts of raw scores 1..m-1.
pub fn score_model_fit(counts: &[f64], kind: ScoreKind) -> Result<ScoreModel> {
    if counts.is_empty() {
        return Err(Error::Invalid("no raw scores to model".into()));
    }
    if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(Error::Invalid("score counts must be finite and non-negative".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Empty("score counts have zero total weight".into()));
    }
    let saturated = |fallback| {
        let probs: Vec<f64> = counts.iter().map(|c| c / total).collect();
        ScoreModel {
            kind: ScoreKind::Saturated,
            params: probs.clone(),
            probs,
            fallback,
        }
    };
    match kind {
        ScoreKind::Saturated => Ok(saturated(false)),
        ScoreKind::MeanVar => Ok(fit_meanvar(counts, total).unwrap_or_else(|| saturated(true))),
    }
}

/// Newton iterations on the concave multinomial log-likelihood; `None` when
/// the information becomes singular or the estimates run off.
fn fit_meanvar(counts: &[f64], total: f64) -> Option<ScoreModel> {
    let m = counts.len() + 1;
    let basis: Vec<Vector2<f64>> = (1..m)
        .map(|r| {
            let (a, b) = meanvar_basis(r, m);
            Vector2::new(a, b)
        })
        .collect();
    let observed: Vector2<f64> = counts.iter().zip(&basis).map(|(c, x)| x * *c).sum();
    let loglik = |d: &Vector2<f64>| {
        let p = meanvar_probs([d[0], d[1]], m);
        counts
            .iter()
            .zip(&p)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, p)| c * p.ln())
            .sum::<f64>()
    };
    let mut delta = Vector2::zeros();
    let mut ll = loglik(&delta);
    for _ in 0..200 {
        let p = meanvar_probs([delta[0], delta[1]], m);
        let mean: Vector2<f64> = p.iter().zip(&basis).map(|(q, x)| x * *q).sum();
        let cov: Matrix2<f64> = p
            .iter()
            .zip(&basis)
            .map(|(q, x)| (x - mean) * (x - mean).transpose() * *q)
            .sum();
        let grad = observed - mean * total;
        let info = cov * total;
        if grad.amax() < 1e-10 * (1.0 + total) {
            return Some(ScoreModel {
                kind: ScoreKind::MeanVar,
                params: vec![delta[0], delta[1]],
                probs: p,
                fallback: false,
            });
        }
        let det = info.determinant();
        if det.is_nan() || det <= 1e-12 * info.trace().powi(2) {
            return None;
        }
        let step = info.try_inverse()? * grad;
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = delta + step * scale;
            let lc = loglik(&cand);
            if lc.is_finite() && lc >= ll - 1e-12 * (1.0 + ll.abs()) {
                delta = cand;
                ll = lc;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved || delta.amax() > 200.0 {
            return None;
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct MixtureOptions {
    pub maxiter: usize,
    /// EM stops when the log-likelihood improves by less than this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self {
            maxiter: 500,
            tol: 1e-8,
            restarts: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub k: usize,
    pub weights: Vec<f64>,
    /// Difficulties per component, centred to sum zero over the finite
    /// entries. An item solved by none (all) of a component's members is
    /// `+inf` (`-inf`) there.
    pub beta: Vec<Vec<f64>>,
    pub score_models: Vec<ScoreModel>,
    pub score_kind: ScoreKind,
    /// n x k responsibilities.
    pub posterior: DMatrix<f64>,
    pub loglik: f64,
    /// Observed-data log-likelihood after every EM iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Persons per component under argmax assignment.
    pub cluster_sizes: Vec<usize>,
    pub n_params: usize,
    pub bic: f64,
    /// Index of the random start that produced this fit.
    pub restart: usize,
}

impl MixtureFit {
    /// Argmax component per person (ties to the lower index).
    pub fn hard_assignment(&self) -> Vec<usize> {
        hard_assign(&self.posterior)
    }

    pub fn score_params(&self) -> Vec<Vec<f64>> {
        self.score_models.iter().map(|s| s.params.clone()).collect()
    }
}

fn hard_assign(post: &DMatrix<f64>) -> Vec<usize> {
    (0..post.nrows())
        .map(|i| {
            let row = post.row(i);
            (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b })
        })
        .collect()
}

struct Component {
    weight: f64,
    beta: Vec<f64>,
    score: ScoreModel,
}

/// Items whose weighted total is within this fraction of 0 or of the total
/// weight are fixed at an infinite difficulty.
const BOUNDARY: f64 = 1e-8;

/// Weighted CML for one component. Items solved by (practically) none or all
/// of the component's members get difficulty `+inf` / `-inf`; the rest are
/// estimated conditionally on those, with inconsistent persons dropped.
fn fit_component(responses: &ItemResponses, weights: &[f64], start: Option<&[f64]>) -> Result<Vec<f64>> {
    let m = responses.m();
    let mut beta = vec![0.0; m];
    let mut w = weights.to_vec();
    let mut active: Vec<usize> = (0..m).collect();
    fix_boundary_items(responses, &mut w, &mut beta, &mut active)?;
    if active.len() < 2 {
        return Ok(beta);
    }
    let labels = responses.item_labels();
    let rows: Vec<Vec<u8>> = responses.rows().map(|row| active.iter().map(|&j| row[j]).collect()).collect();
    let sub = ItemResponses::new(rows, active.iter().map(|&j| labels[j].clone()).collect())?;
    let previous: Vec<f64> = match start {
        Some(s) => active.iter().map(|&j| if s[j].is_finite() { s[j] } else { 0.0 }).collect(),
        None => vec![0.0; active.len()],
    };
    let opts = CmlOptions {
        start: Some(previous.clone()),
        max_iter: 200,
        ..Default::default()
    };
    // Without a finite maximum (items drifting apart in blocks) any update
    // that does not lower the weighted likelihood keeps EM monotone: the last
    // accepted Newton iterate, or the previous difficulties.
    let fitted = match fit_cml_with(&sub, Some(&w), &opts) {
        Ok(fit) => fit.beta(),
        Err(Error::NonConvergence { last, .. }) if last.iter().all(|b| b.is_finite()) => {
            last.iter().map(|b| b - last[0]).collect()
        }
        Err(Error::DegenerateItem { .. }) => previous.iter().map(|b| b - previous[0]).collect(),
        Err(e) => return Err(e),
    };
    for (b, &j) in fitted.into_iter().zip(&active) {
        beta[j] = b;
    }
    Ok(beta)
}

/// Fixes items solved by (almost) none or all of the component at infinite
/// difficulty, repeating until every active item is interior.
fn fix_boundary_items(
    responses: &ItemResponses,
    w: &mut [f64],
    beta: &mut [f64],
    active: &mut Vec<usize>,
) -> Result<()> {
    while active.len() >= 2 {
        let mut totals = vec![0.0; active.len()];
        let mut total = 0.0;
        // every weighted person counts: fixing an item at infinity makes
        // persons who disagree with it impossible, extreme or not
        for (i, row) in responses.rows().enumerate() {
            if w[i] == 0.0 {
                continue;
            }
            total += w[i];
            for (t, &j) in totals.iter_mut().zip(active.iter()) {
                *t += w[i] * f64::from(row[j]);
            }
        }
        if total <= 0.0 {
            return Err(Error::Empty("component has no informative persons".into()));
        }
        let mut fixed = false;
        for (t, &j) in totals.iter().zip(active.iter()) {
            if *t <= BOUNDARY * total {
                beta[j] = f64::INFINITY;
                fixed = true;
            } else if *t >= (1.0 - BOUNDARY) * total {
                beta[j] = f64::NEG_INFINITY;
                fixed = true;
            }
        }
        if !fixed {
            break;
        }
        active.retain(|&j| beta[j].is_finite());
        drop_inconsistent(responses, w, beta);
    }
    Ok(())
}

fn drop_inconsistent(responses: &ItemResponses, w: &mut [f64], beta: &[f64]) {
    for (i, row) in responses.rows().enumerate() {
        if !consistent(row, beta) {
            w[i] = 0.0;
        }
    }
}

/// Whether a response pattern has positive probability under `beta`.
fn consistent(row: &[u8], beta: &[f64]) -> bool {
    row.iter().zip(beta).all(|(&y, &b)| {
        !(b == f64::INFINITY && y == 1 || b == f64::NEG_INFINITY && y == 0)
    })
}

/// Centres the finite entries to sum zero.
fn centre_finite(beta: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = beta.iter().copied().filter(|b| b.is_finite()).collect();
    let mean = if finite.is_empty() { 0.0 } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    beta.iter().map(|b| if b.is_finite() { b - mean } else { *b }).collect()
}

/// log of each person's density in each component (without mixing weights).
fn component_log_density(
    responses: &ItemResponses,
    scores: &[usize],
    beta: &[f64],
    score: &ScoreModel,
) -> Result<Vec<f64>> {
    let always = beta.iter().filter(|&&b| b == f64::NEG_INFINITY).count();
    let free: Vec<usize> = (0..beta.len()).filter(|&j| beta[j].is_finite()).collect();
    let eps: Vec<f64> = free.iter().map(|&j| (-beta[j]).exp()).collect();
    let gamma = if eps.is_empty() { vec![1.0] } else { esf(&eps, 0)?.gamma };
    Ok(responses
        .rows()
        .zip(scores)
        .map(|(row, &r)| {
            if !consistent(row, beta) {
                return f64::NEG_INFINITY;
            }
            let lin: f64 = free.iter().map(|&j| f64::from(row[j]) * beta[j]).sum();
            score.prob(r).ln() - lin - gamma[r - always].ln()
        })
        .collect())
}

/// Posterior responsibilities and the observed-data log-likelihood.
fn e_step(
    responses: &ItemResponses,
    scores: &[usize],
    comps: &[(f64, &[f64], &ScoreModel)],
) -> Result<(DMatrix<f64>, f64)> {
    let n = responses.n();
    let k = comps.len();
    let mut logf = DMatrix::zeros(n, k);
    for (c, (w, beta, score)) in comps.iter().enumerate() {
        let d = component_log_density(responses, scores, beta, score)?;
        for i in 0..n {
            logf[(i, c)] = w.ln() + d[i];
        }
    }
    let mut loglik = 0.0;
    for i in 0..n {
        let mx = (0..k).map(|c| logf[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return Err(Error::Invalid(format!("person {} has zero density in every component", i + 1)));
        }
        let s: f64 = (0..k).map(|c| (logf[(i, c)] - mx).exp()).sum();
        loglik += mx + s.ln();
        for c in 0..k {
            logf[(i, c)] = (logf[(i, c)] - mx).exp() / s;
        }
    }
    Ok((logf, loglik))
}

fn score_counts(scores: &[usize], weights: &[f64], m: usize) -> Vec<f64> {
    let mut counts = vec![0.0; m - 1];
    for (&r, &w) in scores.iter().zip(weights) {
        counts[r - 1] += w;
    }
    counts
}

fn m_step(
    responses: &ItemResponses,
    scores: &[usize],
    post: &DMatrix<f64>,
    previous: Option<&[Component]>,
    kind: ScoreKind,
) -> Result<Vec<Component>> {
    let (n, k) = post.shape();
    let m = responses.m();
    (0..k)
        .map(|c| {
            let w: Vec<f64> = post.column(c).iter().copied().collect();
            let eff: f64 = w.iter().sum();
            if eff < m as f64 {
                return Err(Error::Empty(format!(
                    "component {} collapsed to effective size {eff:.2}",
                    c + 1
                )));
            }
            let beta = fit_component(responses, &w, previous.map(|p| p[c].beta.as_slice()))?;
            let score = score_model_fit(&score_counts(scores, &w, m), kind)?;
            Ok(Component {
                weight: eff / n as f64,
                beta,
                score,
            })
        })
        .collect()
}

struct RunResult {
    comps: Vec<Component>,
    posterior: DMatrix<f64>,
    loglik: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn run_em<R: Rng>(
    responses: &ItemResponses,
    scores: &[usize],
    k: usize,
    kind: ScoreKind,
    opts: &MixtureOptions,
    rng: &mut R,
) -> Result<RunResult> {
    let n = responses.n();
    let mut post = DMatrix::from_fn(n, k, |_, _| Exp1.sample(rng));
    for i in 0..n {
        let s: f64 = post.row(i).sum();
        for c in 0..k {
            post[(i, c)] /= s;
        }
    }
    let mut comps: Option<Vec<Component>> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..opts.maxiter {
        let next = m_step(responses, scores, &post, comps.as_deref(), kind)?;
        let view: Vec<(f64, &[f64], &ScoreModel)> = next
            .iter()
            .map(|c| (c.weight, c.beta.as_slice(), &c.score))
            .collect();
        let (p, ll) = e_step(responses, scores, &view)?;
        post = p;
        comps = Some(next);
        let improvement = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        if improvement.is_some_and(|d| d < opts.tol) {
            converged = true;
            break;
        }
    }
    let loglik = *trace.last().expect("at least one iteration");
    Ok(RunResult {
        comps: comps.expect("at least one iteration"),
        posterior: post,
        loglik,
        iterations: trace.len(),
        trace,
        converged,
    })
}

/// Fits a k-component Rasch mixture, keeping the best of `restarts` random starts.
pub fn fit_em(
    responses: &ItemResponses,
    k: usize,
    kind: ScoreKind,
    opts: &MixtureOptions,
) -> Result<MixtureFit> {
    let m = responses.m();
    let n = responses.n();
    if k == 0 {
        return Err(Error::Invalid("need at least one component".into()));
    }
    if opts.restarts == 0 || opts.maxiter == 0 {
        return Err(Error::Invalid("restarts and maxiter must be positive".into()));
    }
    let scores = responses.raw_scores();
    if let Some(i) = scores.iter().position(|&r| r == 0 || r == m) {
        return Err(Error::Invalid(format!(
            "person {} has an extreme raw score; exclude extreme scores before fitting a mixture",
            i + 1
        )));
    }
    let runs: Vec<(usize, Result<RunResult>)> = (0..opts.restarts)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(derive_seed(opts.seed, &[s as u64]), 0);
            (s, run_em(responses, &scores, k, kind, opts, &mut rng))
        })
        .collect();
    let mut best: Option<(usize, RunResult)> = None;
    let mut last_err = None;
    for (s, r) in runs {
        match r {
            Ok(run) => {
                if best.as_ref().is_none_or(|(_, b)| run.loglik > b.loglik) {
                    best = Some((s, run));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((restart, run)) = best else {
        return Err(Error::Invalid(format!(
            "all {} EM starts failed; last error: {}",
            opts.restarts,
            last_err.map_or_else(String::new, |e| e.to_string())
        )));
    };

    // relabel components by decreasing cluster size, then weight
    let hard = hard_assign(&run.posterior);
    let sizes: Vec<usize> = (0..k).map(|c| hard.iter().filter(|&&h| h == c).count()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        sizes[b]
            .cmp(&sizes[a])
            .then(run.comps[b].weight.total_cmp(&run.comps[a].weight))
    });
    let posterior = DMatrix::from_fn(n, k, |i, c| run.posterior[(i, order[c])]);
    let mut comps: Vec<Option<Component>> = run.comps.into_iter().map(Some).collect();
    let comps: Vec<Component> = order.iter().map(|&c| comps[c].take().expect("each once")).collect();

    let beta = comps.iter().map(|c| centre_finite(&c.beta)).collect();
    let n_params = (k - 1) + k * (m - 1) + comps.iter().map(|c| c.score.n_params()).sum::<usize>();
    let bic = -2.0 * run.loglik + n_params as f64 * (n as f64).ln();
    let cluster_sizes = order.iter().map(|&c| sizes[c]).collect();
    Ok(MixtureFit {
        k,
        weights: comps.iter().map(|c| c.weight).collect(),
        beta,
        score_models: comps.into_iter().map(|c| c.score).collect(),
        score_kind: kind,
        posterior,
        loglik: run.loglik,
        loglik_trace: run.trace,
        iterations: run.iterations,
        converged: run.converged,
        cluster_sizes,
        n_params,
        bic,
        restart,
    })
}

/// Responsibilities of each component for the given persons.
pub fn posterior(fit: &MixtureFit, responses: &ItemResponses) -> Result<DMatrix<f64>> {
    let m = responses.m();
    if fit.beta.first().map(Vec::len) != Some(m) {
        return Err(Error::Invalid("responses do not match the mixture's items".into()));
    }
    let scores = responses.raw_scores();
    if scores.iter().any(|&r| r == 0 || r == m) {
        return Err(Error::Invalid("extreme raw scores have no posterior".into()));
    }
    let view: Vec<(f64, &[f64], &ScoreModel)> = fit
        .weights
        .iter()
        .zip(&fit.beta)
        .zip(&fit.score_models)
        .map(|((w, b), s)| (*w, b.as_slice(), s))
        .collect();
    Ok(e_step(responses, &scores, &view)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasch::{fit_cml, itempar, Constraint};

    #[test]
    fn uniform_counts_give_zero_parameters() {
        let s = score_model_fit(&[10.0; 12], ScoreKind::MeanVar).unwrap();
        assert!(!s.fallback);
        assert!(s.params[0].abs() < 1e-8 && s.params[1].abs() < 1e-8);
        assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_occupied_score_falls_back() {
        let mut c = vec![0.0; 8];
        c[3] = 25.0;
        let s = score_model_fit(&c, ScoreKind::MeanVar).unwrap();
        assert!(s.fallback);
        assert_eq!(s.kind, ScoreKind::Saturated);
        assert_eq!(s.prob(4), 1.0);
    }

    #[test]
    fn two_scores_cannot_identify_dispersion() {
        // m = 3: the dispersion basis is constant over r = 1, 2
        let s = score_model_fit(&[3.0, 5.0], ScoreKind::MeanVar).unwrap();
        assert!(s.fallback);
        assert!((s.prob(1) - 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_is_relative_frequency() {
        let s = score_model_fit(&[1.0, 3.0, 0.0, 4.0], ScoreKind::Saturated).unwrap();
        assert_eq!(s.probs, vec![0.125, 0.375, 0.0, 0.5]);
        assert_eq!(s.n_params(), 3);
    }

    #[test]
    fn invalid_counts() {
        assert!(score_model_fit(&[], ScoreKind::MeanVar).is_err());
        assert!(score_model_fit(&[0.0, 0.0], ScoreKind::MeanVar).is_err());
        assert!(score_model_fit(&[1.0, -1.0], ScoreKind::Saturated).is_err());
    }

    fn small_data() -> ItemResponses {
        let rows = vec![
            vec![1, 0, 1, 0, 1],
            vec![0, 1, 1, 1, 0],
            vec![1, 1, 0, 0, 0],
            vec![0, 0, 1, 0, 1],
            vec![1, 0, 0, 1, 1],
            vec![0, 1, 0, 0, 0],
            vec![1, 1, 1, 0, 1],
            vec![1, 0, 0, 0, 0],
            vec![0, 0, 0, 1, 0],
            vec![1, 1, 0, 1, 0],
        ];
        ItemResponses::from_rows(rows).unwrap()
    }

    #[test]
    fn one_component_is_plain_cml() {
        let resp = small_data();
        let mix = fit_em(&resp, 1, ScoreKind::Saturated, &MixtureOptions::default()).unwrap();
        let plain = fit_cml(&resp, None).unwrap();
        let sz = itempar(&plain, Constraint::SumZero).unwrap();
        for (a, b) in mix.beta[0].iter().zip(&sz.beta) {
            assert!((a - b).abs() < 1e-8);
        }
        let counts = score_counts(&resp.raw_scores(), &[1.0; 10], 5);
        let sm = score_model_fit(&counts, ScoreKind::Saturated).unwrap();
        assert!((mix.loglik - (plain.loglik + sm.loglik(&counts))).abs() < 1e-8);
        assert!(mix.posterior.iter().all(|&p| p == 1.0));
        assert_eq!(mix.cluster_sizes, vec![10]);
    }

    #[test]
    fn never_solved_item_is_fixed_at_infinity() {
        // item 3 is never solved; the others are estimated without it
        let rows = vec![
            vec![1, 0, 0, 1],
            vec![0, 1, 0, 1],
            vec![1, 1, 0, 0],
            vec![0, 0, 0, 1],
            vec![1, 0, 0, 0],
            vec![0, 1, 0, 0],
        ];
        let resp = ItemResponses::from_rows(rows.clone()).unwrap();
        let beta = fit_component(&resp, &[1.0; 6], None).unwrap();
        assert_eq!(beta[2], f64::INFINITY);
        let without: Vec<Vec<u8>> = rows.iter().map(|r| vec![r[0], r[1], r[3]]).collect();
        let plain = fit_cml(&ItemResponses::from_rows(without).unwrap(), None).unwrap().beta();
        for (a, b) in [beta[0], beta[1], beta[3]].iter().zip(&plain) {
            assert!((a - b).abs() < 1e-8);
        }
        let sm = score_model_fit(&[1.0, 1.0, 1.0], ScoreKind::Saturated).unwrap();
        let test = ItemResponses::from_rows(vec![vec![1, 0, 1, 0], vec![1, 0, 0, 0]]).unwrap();
        let d = component_log_density(&test, &test.raw_scores(), &beta, &sm).unwrap();
        assert_eq!(d[0], f64::NEG_INFINITY);
        assert!(d[1].is_finite());
        assert_eq!(centre_finite(&beta)[2], f64::INFINITY);
    }

    #[test]
    fn extreme_rows_rejected() {
        let resp = ItemResponses::from_rows(vec![vec![1, 0, 1], vec![1, 1, 1], vec![0, 1, 0]]).unwrap();
        assert!(fit_em(&resp, 1, ScoreKind::MeanVar, &MixtureOptions::default()).is_err());
        assert!(fit_em(&small_data(), 0, ScoreKind::MeanVar, &MixtureOptions::default()).is_err());
    }

    #[test]
    fn symmetric_components_split_evenly() {
        let resp = ItemResponses::from_rows(vec![vec![1, 0, 1, 0], vec![0, 1, 1, 0]]).unwrap();
        let sm = score_model_fit(&[1.0, 1.0, 1.0], ScoreKind::Saturated).unwrap();
        let fit = MixtureFit {
            k: 2,
            weights: vec![0.5, 0.5],
            beta: vec![vec![-0.5, 0.5, 0.2, -0.2], vec![0.5, -0.5, 0.2, -0.2]],
            score_models: vec![sm.clone(), sm],
            score_kind: ScoreKind::Saturated,
            posterior: DMatrix::zeros(0, 2),
            loglik: 0.0,
            loglik_trace: Vec::new(),
            iterations: 0,
            converged: true,
            cluster_sizes: vec![0, 0],
            n_params: 0,
            bic: 0.0,
            restart: 0,
        };
        // (1,1,0,0) is equally likely under both mirrored components
        let tie = ItemResponses::from_rows(vec![vec![1, 1, 0, 0]]).unwrap();
        let p = posterior(&fit, &tie).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-12);
        let p = posterior(&fit, &resp).unwrap();
        assert!(p[(0, 0)] > 0.5 && p[(1, 1)] > 0.5);
        for i in 0..2 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}
