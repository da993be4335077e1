//! Score-based tests for parameter instability along a covariate.
//!
//! Casewise gradients of the conditional log-likelihood are ordered by the
//! covariate, cumulated and decorrelated with the observed information. Under
//! parameter stability the resulting process behaves like a Brownian bridge,
//! which gives LM statistics per split point and their maximum.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::{format_number, Covariate, CovariateKind, CovariateValues, ItemResponses};
use crate::error::{Error, Result};
use crate::esf::esf;
use crate::montecarlo;
use crate::rasch::RaschFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Sum of LM statistics over categories of a nominal covariate.
    LmNominal,
    /// Maximum LM statistic over trimmed split points of a numeric covariate.
    MaxLmNumeric,
    /// Maximum LM statistic over all level boundaries of an ordinal covariate.
    MaxLmOrdinal,
}

impl Functional {
    pub fn for_kind(kind: CovariateKind) -> Self {
        match kind {
            CovariateKind::Nominal => Functional::LmNominal,
            CovariateKind::Numeric => Functional::MaxLmNumeric,
            CovariateKind::Ordinal => Functional::MaxLmOrdinal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Functional::LmNominal => "LM-nominal",
            Functional::MaxLmNumeric => "maxLM-numeric",
            Functional::MaxLmOrdinal => "maxLM-ordinal-L2",
        }
    }
}

/// Casewise score contributions and their decorrelated cumulative sums.
#[derive(Debug, Clone)]
pub struct ScoreProcess {
    /// n x (m-1) gradients of each person's conditional log-likelihood with
    /// respect to the free difficulties, in the original person order.
    pub contributions: DMatrix<f64>,
    /// Person order used for the cumulative sums.
    pub order: Vec<usize>,
    /// Row k holds the whitened cumulative sum over the first k+1 persons in
    /// `order`, i.e. the process at fraction (k+1)/n.
    pub whitened_cumsum: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl ScoreProcess {
    pub fn n(&self) -> usize {
        self.contributions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.contributions.ncols()
    }

    /// Re-orders the cumulative process by the given person permutation.
    pub fn ordered_by(&self, order: Vec<usize>) -> Result<Self> {
        let n = self.n();
        if order.len() != n {
            return Err(Error::Invalid(format!("order has {} entries for {n} persons", order.len())));
        }
        let whitened_cumsum = whiten_cumsum(&self.contributions, &order, &self.chol);
        Ok(Self {
            contributions: self.contributions.clone(),
            order,
            whitened_cumsum,
            chol: self.chol.clone(),
        })
    }

    /// Whitened sum of the contributions of the given persons.
    fn whitened_sum<'a>(&self, persons: impl Iterator<Item = &'a usize>) -> DVector<f64> {
        let mut s = DVector::zeros(self.dim());
        for &i in persons {
            s += self.contributions.row(i).transpose();
        }
        self.chol
            .solve_lower_triangular(&s)
            .expect("cholesky factor is nonsingular")
    }

    /// Outer-product-of-gradients estimate of the information.
    pub fn outer_product(&self) -> DMatrix<f64> {
        self.contributions.transpose() * &self.contributions
    }
}

fn whiten_cumsum(contrib: &DMatrix<f64>, order: &[usize], chol: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = contrib.shape();
    let mut cum = DMatrix::zeros(n, d);
    let mut acc = DVector::zeros(d);
    for (k, &i) in order.iter().enumerate() {
        acc += contrib.row(i).transpose();
        let w = chol
            .solve_lower_triangular(&acc)
            .expect("cholesky factor is nonsingular");
        cum.set_row(k, &w.transpose());
    }
    cum
}

/// Gradient of each person's conditional log-likelihood at the fitted
/// difficulties, for the free parameters of `fit`. Persons with extreme raw
/// scores contribute zero rows.
pub fn casewise_scores(fit: &RaschFit, responses: &ItemResponses) -> Result<ScoreProcess> {
    let m = fit.m();
    if responses.m() != m {
        return Err(Error::Invalid(format!(
            "fit has {m} items, responses have {}",
            responses.m()
        )));
    }
    let n = responses.n();
    let weights = if fit.weights.len() == n {
        fit.weights.clone()
    } else {
        vec![1.0; n]
    };
    let beta = fit.beta();
    let eps: Vec<f64> = beta.iter().map(|b| (-b).exp()).collect();
    let e = esf(&eps, 1)?;
    let d1 = e.d1.expect("first derivatives");
    let free = fit.free_items();
    let mut contributions = DMatrix::zeros(n, m - 1);
    for (i, row) in responses.rows().enumerate() {
        let r: usize = row.iter().map(|&v| v as usize).sum();
        if r == 0 || r == m || weights[i] == 0.0 {
            continue;
        }
        for (k, &j) in free.iter().enumerate() {
            let p = eps[j] * d1[(r, j)] / e.gamma[r];
            contributions[(i, k)] = weights[i] * (p - f64::from(row[j]));
        }
    }
    let chol = fit
        .info_free
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("observed information".into()))?
        .l();
    let order: Vec<usize> = (0..n).collect();
    let whitened_cumsum = whiten_cumsum(&contributions, &order, &chol);
    Ok(ScoreProcess {
        contributions,
        order,
        whitened_cumsum,
        chol,
    })
}

#[derive(Debug, Clone)]
pub struct TestOptions {
    pub nrep: usize,
    pub seed: u64,
    /// Fraction trimmed at both ends for numeric covariates.
    pub trim: f64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            nrep: 100_000,
            seed: 1,
            trim: 0.1,
        }
    }
}

/// Statistic for splitting into persons with covariate `<= label` vs the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdStat {
    pub label: String,
    /// Covariate sort key at the boundary (value or level code).
    pub key: f64,
    pub fraction: f64,
    pub statistic: f64,
}

#[derive(Debug, Clone)]
pub struct InstabilityResult {
    pub covariate: String,
    pub functional: Functional,
    /// Number of free item parameters tested.
    pub dim: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom of the chi-squared reference (nominal functional).
    pub df: Option<usize>,
    pub per_threshold: Vec<ThresholdStat>,
    pub argmax: Option<usize>,
    /// Simulated 95% critical value of the maximum (max functionals).
    pub critical_95: Option<f64>,
}

impl InstabilityResult {
    pub fn argmax_threshold(&self) -> Option<&ThresholdStat> {
        self.argmax.map(|k| &self.per_threshold[k])
    }
}

/// Stable ordering of persons by covariate with the boundaries between
/// distinct values: `(order, [(persons at or below, key, label)])`.
fn boundaries(cov: &Covariate) -> (Vec<usize>, Vec<(usize, f64, String)>) {
    let keys = cov.order_keys();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let mut bounds = Vec::new();
    for k in 1..order.len() {
        let (prev, cur) = (keys[order[k - 1]], keys[order[k]]);
        if prev != cur {
            let label = match &cov.values {
                CovariateValues::Numeric(_) => format_number(prev),
                CovariateValues::Categorical { levels, .. } => levels[prev as usize].clone(),
            };
            bounds.push((k, prev, label));
        }
    }
    (order, bounds)
}

pub fn instability_test(
    fit: &RaschFit,
    responses: &ItemResponses,
    cov: &Covariate,
    functional: Functional,
    opts: &TestOptions,
) -> Result<InstabilityResult> {
    let n = responses.n();
    if cov.len() != n {
        return Err(Error::Invalid(format!(
            "covariate `{}` has {} values for {n} persons",
            cov.name,
            cov.len()
        )));
    }
    let compatible = match functional {
        Functional::LmNominal => true,
        Functional::MaxLmNumeric => matches!(cov.values, CovariateValues::Numeric(_)),
        Functional::MaxLmOrdinal => cov.kind == CovariateKind::Ordinal,
    };
    if !compatible {
        return Err(Error::Invalid(format!(
            "functional {} does not apply to {:?} covariate `{}`",
            functional.name(),
            cov.kind,
            cov.name
        )));
    }
    let process = casewise_scores(fit, responses)?;
    let dim = process.dim();
    let (order, bounds) = boundaries(cov);

    if functional == Functional::LmNominal {
        let mut start = 0;
        let mut statistic = 0.0;
        let mut cells = 0;
        for end in bounds.iter().map(|b| b.0).chain(std::iter::once(n)) {
            let w = process.whitened_sum(order[start..end].iter());
            statistic += w.norm_squared() * n as f64 / (end - start) as f64;
            cells += 1;
            start = end;
        }
        if cells < 2 {
            return Err(Error::Invalid(format!(
                "covariate `{}` has a single category",
                cov.name
            )));
        }
        let df = dim * (cells - 1);
        let p_value = ChiSquared::new(df as f64)
            .map_err(|e| Error::Invalid(e.to_string()))?
            .sf(statistic);
        return Ok(InstabilityResult {
            covariate: cov.name.clone(),
            functional,
            dim,
            statistic,
            p_value,
            df: Some(df),
            per_threshold: Vec::new(),
            argmax: None,
            critical_95: None,
        });
    }

    let process = process.ordered_by(order)?;
    let nf = n as f64;
    let per_threshold: Vec<ThresholdStat> = bounds
        .into_iter()
        .filter_map(|(count, key, label)| {
            let t = count as f64 / nf;
            let keep = match functional {
                Functional::MaxLmNumeric => t >= opts.trim - 1e-12 && t <= 1.0 - opts.trim + 1e-12,
                _ => true,
            };
            keep.then(|| {
                let w = process.whitened_cumsum.row(count - 1);
                ThresholdStat {
                    label,
                    key,
                    fraction: t,
                    statistic: w.norm_squared() / (t * (1.0 - t)),
                }
            })
        })
        .collect();
    if per_threshold.is_empty() {
        return Err(Error::Invalid(format!(
            "covariate `{}` has no admissible split point",
            cov.name
        )));
    }
    let (argmax, statistic) = per_threshold
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, s)| {
            if s.statistic > acc.1 {
                (k, s.statistic)
            } else {
                acc
            }
        });
    let fractions: Vec<f64> = per_threshold.iter().map(|s| s.fraction).collect();
    let mut draws = simulate_max_lm(&fractions, dim, opts.nrep, opts.seed)?;
    let exceed = draws.iter().filter(|&&d| d >= statistic).count();
    let p_value = exceed as f64 / draws.len() as f64;
    let critical_95 = Some(montecarlo::quantile(&mut draws, 0.95));
    Ok(InstabilityResult {
        covariate: cov.name.clone(),
        functional,
        dim,
        statistic,
        p_value,
        df: None,
        per_threshold,
        argmax: Some(argmax),
        critical_95,
    })
}

/// Draws of `max_k |B(t_k)|^2 / (t_k (1 - t_k))` for a `dim`-dimensional
/// standard Brownian bridge B observed at `fractions`.
pub fn simulate_max_lm(fractions: &[f64], dim: usize, nrep: usize, seed: u64) -> Result<Vec<f64>> {
    if fractions.is_empty() {
        return Err(Error::Invalid("no split fractions".into()));
    }
    if dim == 0 || nrep == 0 {
        return Err(Error::Invalid("dimension and replications must be positive".into()));
    }
    if fractions.iter().any(|&t| !(t > 0.0 && t < 1.0))
        || fractions.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Invalid("fractions must be strictly increasing in (0, 1)".into()));
    }
    let k = fractions.len();
    let mut sd = Vec::with_capacity(k + 1);
    let mut prev = 0.0;
    for &t in fractions {
        sd.push((t - prev).sqrt());
        prev = t;
    }
    sd.push((1.0 - prev).sqrt());
    let denom: Vec<f64> = fractions.iter().map(|t| t * (1.0 - t)).collect();
    Ok(montecarlo::replicate(nrep, seed, |rng| {
        let mut acc = vec![0.0; k];
        let mut walk = vec![0.0; k];
        for _ in 0..dim {
            let mut w = 0.0;
            for (slot, s) in walk.iter_mut().zip(&sd) {
                let z: f64 = StandardNormal.sample(rng);
                w += s * z;
                *slot = w;
            }
            let z: f64 = StandardNormal.sample(rng);
            let w1 = w + sd[k] * z;
            for ((a, &wk), &t) in acc.iter_mut().zip(&walk).zip(fractions) {
                let b = wk - t * w1;
                *a += b * b;
            }
        }
        acc.iter()
            .zip(&denom)
            .map(|(a, d)| a / d)
            .fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// `level`-quantile of the simulated maximum LM statistic.
pub fn critical_value(fractions: &[f64], dim: usize, level: f64, nrep: usize, seed: u64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("level {level} outside (0, 1)")));
    }
    let mut draws = simulate_max_lm(fractions, dim, nrep, seed)?;
    Ok(montecarlo::quantile(&mut draws, level))
}
