//! Two-group DIF analysis: global likelihood-ratio, Wald and score tests,
//! item-wise Wald tests after anchoring both scales at one item, and anchor
//! selection by the Gini coefficient of absolute parameter differences.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::{Covariate, CovariateKind, ExamDataset};
use crate::error::{Error, Result};
use crate::montecarlo;
use crate::rasch::{fit_cml, fit_cml_with, itempar, CmlOptions, Constraint, RaschFit};
use crate::sctest::{instability_test, Functional, TestOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalKind {
    LikelihoodRatio,
    Wald,
    Score,
}

impl GlobalKind {
    pub fn name(self) -> &'static str {
        match self {
            GlobalKind::LikelihoodRatio => "LR",
            GlobalKind::Wald => "Wald",
            GlobalKind::Score => "score",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlobalDifTest {
    pub kind: GlobalKind,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl GlobalDifTest {
    fn new(kind: GlobalKind, statistic: f64, df: usize) -> Result<Self> {
        let p_value = chi2_sf(statistic, df)?;
        Ok(Self {
            kind,
            statistic,
            df,
            p_value,
        })
    }
}

fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    Ok(ChiSquared::new(df as f64)
        .map_err(|e| Error::Invalid(e.to_string()))?
        .sf(x.max(0.0)))
}

/// Upper `level` quantile of the chi-squared distribution.
pub fn chi2_critical(df: usize, level: f64) -> Result<f64> {
    Ok(ChiSquared::new(df as f64)
        .map_err(|e| Error::Invalid(e.to_string()))?
        .inverse_cdf(level))
}

/// A dataset split by a two-valued covariate; the first level in sort order
/// is the reference group, the second the focal group.
#[derive(Debug, Clone)]
pub struct TwoGroups {
    pub labels: [String; 2],
    pub reference: ExamDataset,
    pub focal: ExamDataset,
    pub covariate: Covariate,
}

impl TwoGroups {
    pub fn split(ds: &ExamDataset, group: &str) -> Result<Self> {
        let cov = ds.covariate(group)?;
        let keys = cov.order_keys();
        let mut distinct = keys.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() != 2 {
            return Err(Error::Invalid(format!(
                "grouping covariate `{group}` must take exactly two values, found {}",
                distinct.len()
            )));
        }
        let first = keys.iter().position(|&k| k == distinct[0]).expect("present");
        let second = keys.iter().position(|&k| k == distinct[1]).expect("present");
        let labels = [cov.label(first), cov.label(second)];
        let mask: Vec<bool> = keys.iter().map(|&k| k == distinct[0]).collect();
        let reference = ds.subset(&mask)?;
        let focal = ds.subset(&mask.iter().map(|b| !b).collect::<Vec<_>>())?;
        let codes: Vec<&str> = mask.iter().map(|&b| if b { "ref" } else { "foc" }).collect();
        let covariate = Covariate::categorical(
            group,
            CovariateKind::Nominal,
            &codes,
            Some(vec!["ref".into(), "foc".into()]),
        )?;
        Ok(Self {
            labels,
            reference,
            focal,
            covariate,
        })
    }

    /// CML fits of both groups with the given reference item.
    pub fn fit(&self, ref_item: usize) -> Result<(RaschFit, RaschFit)> {
        let opts = CmlOptions {
            ref_item,
            ..Default::default()
        };
        let wrap = |label: &str| {
            let label = label.to_string();
            move |e| Error::Group {
                group: label,
                source: Box::new(e),
            }
        };
        let a = fit_cml_with(&self.reference.responses, None, &opts).map_err(wrap(&self.labels[0]))?;
        let b = fit_cml_with(&self.focal.responses, None, &opts).map_err(wrap(&self.labels[1]))?;
        Ok((a, b))
    }
}

pub fn lr_test(ds: &ExamDataset, group: &str) -> Result<GlobalDifTest> {
    let groups = TwoGroups::split(ds, group)?;
    let full = fit_cml(&ds.responses, None)?;
    let (a, b) = groups.fit(0)?;
    lr_from_fits(&full, &a, &b)
}

pub fn lr_from_fits(full: &RaschFit, a: &RaschFit, b: &RaschFit) -> Result<GlobalDifTest> {
    let statistic = -2.0 * (full.loglik - (a.loglik + b.loglik));
    GlobalDifTest::new(GlobalKind::LikelihoodRatio, statistic, full.m() - 1)
}

pub fn wald_test_global(ds: &ExamDataset, group: &str) -> Result<GlobalDifTest> {
    wald_test_global_with_ref(ds, group, 0)
}

/// Wald statistic on the free-parameter differences with `ref_item` fixed
/// at zero in both groups.
pub fn wald_test_global_with_ref(ds: &ExamDataset, group: &str, ref_item: usize) -> Result<GlobalDifTest> {
    let groups = TwoGroups::split(ds, group)?;
    let (a, b) = groups.fit(ref_item)?;
    wald_from_fits(&a, &b)
}

pub fn wald_from_fits(a: &RaschFit, b: &RaschFit) -> Result<GlobalDifTest> {
    if a.m() != b.m() || a.ref_item != b.ref_item {
        return Err(Error::Invalid("fits must share items and reference item".into()));
    }
    let d = DVector::from_iterator(
        a.beta_free.len(),
        a.beta_free.iter().zip(&b.beta_free).map(|(x, y)| x - y),
    );
    let v = &a.vcov_free + &b.vcov_free;
    let ch = v
        .cholesky()
        .ok_or_else(|| Error::Singular("sum of group covariances".into()))?;
    let statistic = d.dot(&ch.solve(&d));
    GlobalDifTest::new(GlobalKind::Wald, statistic, a.m() - 1)
}

/// LM statistic from the pooled fit's casewise scores summed within groups.
pub fn score_test_global(ds: &ExamDataset, group: &str) -> Result<GlobalDifTest> {
    let groups = TwoGroups::split(ds, group)?;
    let full = fit_cml(&ds.responses, None)?;
    let r = instability_test(
        &full,
        &ds.responses,
        &groups.covariate,
        Functional::LmNominal,
        &TestOptions::default(),
    )?;
    Ok(GlobalDifTest {
        kind: GlobalKind::Score,
        statistic: r.statistic,
        df: r.df.unwrap_or(full.m() - 1),
        p_value: r.p_value,
    })
}

/// Gini coefficient `sum_i sum_j |d_i - d_j| / (2 k sum d)`; zero for an
/// all-zero vector or fewer than two entries.
pub fn gini(d: &[f64]) -> f64 {
    let k = d.len();
    let total: f64 = d.iter().sum();
    if k < 2 || total <= 0.0 {
        return 0.0;
    }
    let mut s = d.to_vec();
    s.sort_by(f64::total_cmp);
    // sum_{i<j} (d_(j) - d_(i)) = sum_j (2j - k + 1) d_(j) with 0-based j
    let pairs: f64 = s
        .iter()
        .enumerate()
        .map(|(j, x)| (2.0 * j as f64 - k as f64 + 1.0) * x)
        .sum();
    pairs / (k as f64 * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GiniDirection {
    /// Anchor that concentrates the differences in as few items as possible.
    #[default]
    Maximize,
    Minimize,
}

/// Gini coefficient of `|delta_j - delta_k|` over j != k for every candidate
/// anchor k, where delta is the difference of the two difficulty vectors.
pub fn anchor_gini_scores(fit_ref: &RaschFit, fit_foc: &RaschFit) -> Result<Vec<f64>> {
    let m = fit_ref.m();
    if fit_foc.m() != m {
        return Err(Error::Invalid("fits have different numbers of items".into()));
    }
    if m < 3 {
        return Err(Error::Invalid("anchor selection needs at least 3 items".into()));
    }
    let delta: Vec<f64> = fit_ref
        .beta()
        .iter()
        .zip(fit_foc.beta())
        .map(|(a, b)| a - b)
        .collect();
    Ok((0..m)
        .map(|k| {
            let d: Vec<f64> = (0..m)
                .filter(|&j| j != k)
                .map(|j| (delta[j] - delta[k]).abs())
                .collect();
            gini(&d)
        })
        .collect())
}

/// Candidate anchor with the extremal Gini score; ties go to the lowest index.
pub fn anchor_select_gini(fit_ref: &RaschFit, fit_foc: &RaschFit, direction: GiniDirection) -> Result<usize> {
    let scores = anchor_gini_scores(fit_ref, fit_foc)?;
    let mut best = 0;
    for (k, &g) in scores.iter().enumerate().skip(1) {
        let better = match direction {
            GiniDirection::Maximize => g > scores[best],
            GiniDirection::Minimize => g < scores[best],
        };
        if better {
            best = k;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSpec {
    Item(usize),
    Auto,
}

#[derive(Debug, Clone)]
pub struct AnchoredWaldOptions {
    pub anchor: AnchorSpec,
    pub coverage: f64,
    pub nsim: usize,
    pub seed: u64,
    pub direction: GiniDirection,
}

impl Default for AnchoredWaldOptions {
    fn default() -> Self {
        Self {
            anchor: AnchorSpec::Auto,
            coverage: 0.95,
            nsim: 100_000,
            seed: 1,
            direction: GiniDirection::Maximize,
        }
    }
}

/// Item-wise comparison of reference minus focal difficulties with both
/// scales anchored at `anchor`.
#[derive(Debug, Clone)]
pub struct AnchoredWaldReport {
    pub item_labels: Vec<String>,
    pub anchor: usize,
    pub diff: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub critical: f64,
    pub coverage: f64,
    pub significant: Vec<bool>,
}

impl AnchoredWaldReport {
    pub fn flagged(&self) -> Vec<usize> {
        (0..self.t.len()).filter(|&j| self.significant[j]).collect()
    }
}

/// `coverage` quantile of `max_i |Z_i|` for Z ~ N(0, corr), by Monte Carlo.
pub fn simultaneous_critical(corr: &DMatrix<f64>, coverage: f64, nsim: usize, seed: u64) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Invalid(format!("coverage {coverage} outside (0, 1)")));
    }
    if nsim == 0 {
        return Err(Error::Invalid("nsim must be positive".into()));
    }
    let d = corr.nrows();
    let l = corr
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("correlation of item differences".into()))?
        .l();
    let mut draws = montecarlo::replicate(nsim, seed, |rng| {
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        (0..d)
            .map(|i| (0..=i).map(|k| l[(i, k)] * u[k]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    });
    Ok(montecarlo::quantile(&mut draws, coverage))
}

pub fn anchored_wald_fits(
    fit_ref: &RaschFit,
    fit_foc: &RaschFit,
    opts: &AnchoredWaldOptions,
) -> Result<AnchoredWaldReport> {
    let m = fit_ref.m();
    if fit_foc.m() != m {
        return Err(Error::Invalid("fits have different numbers of items".into()));
    }
    let anchor = match opts.anchor {
        AnchorSpec::Item(k) if k < m => k,
        AnchorSpec::Item(k) => {
            return Err(Error::Invalid(format!("anchor item {k} out of range for {m} items")))
        }
        AnchorSpec::Auto => anchor_select_gini(fit_ref, fit_foc, opts.direction)?,
    };
    let a = itempar(fit_ref, Constraint::RefItem(anchor))?;
    let b = itempar(fit_foc, Constraint::RefItem(anchor))?;
    let cov = &a.vcov + &b.vcov;
    let diff: Vec<f64> = a.beta.iter().zip(&b.beta).map(|(x, y)| x - y).collect();
    let se: Vec<f64> = (0..m)
        .map(|j| if j == anchor { 0.0 } else { cov[(j, j)].sqrt() })
        .collect();
    let t: Vec<f64> = (0..m)
        .map(|j| if j == anchor { 0.0 } else { diff[j] / se[j] })
        .collect();
    let free: Vec<usize> = (0..m).filter(|&j| j != anchor).collect();
    let corr = DMatrix::from_fn(free.len(), free.len(), |r, c| {
        let (i, j) = (free[r], free[c]);
        cov[(i, j)] / (se[i] * se[j])
    });
    let critical = simultaneous_critical(&corr, opts.coverage, opts.nsim, opts.seed)?;
    let ci_lower = (0..m).map(|j| diff[j] - critical * se[j]).collect();
    let ci_upper = (0..m).map(|j| diff[j] + critical * se[j]).collect();
    let significant = t.iter().map(|x| x.abs() > critical).collect();
    Ok(AnchoredWaldReport {
        item_labels: fit_ref.item_labels.clone(),
        anchor,
        diff,
        se,
        t,
        ci_lower,
        ci_upper,
        critical,
        coverage: opts.coverage,
        significant,
    })
}

pub fn anchored_wald(ds: &ExamDataset, group: &str, opts: &AnchoredWaldOptions) -> Result<AnchoredWaldReport> {
    let groups = TwoGroups::split(ds, group)?;
    let (a, b) = groups.fit(0)?;
    anchored_wald_fits(&a, &b, opts)
}

/// Global tests plus the anchored item-wise comparison.
#[derive(Debug, Clone)]
pub struct DifReport {
    pub groups: [String; 2],
    pub lr: GlobalDifTest,
    pub wald: GlobalDifTest,
    pub score: GlobalDifTest,
    pub anchored: AnchoredWaldReport,
    pub fits: (RaschFit, RaschFit),
}

pub fn dif_report(ds: &ExamDataset, group: &str, opts: &AnchoredWaldOptions) -> Result<DifReport> {
    let groups = TwoGroups::split(ds, group)?;
    let full = fit_cml(&ds.responses, None)?;
    let (a, b) = groups.fit(0)?;
    let lr = lr_from_fits(&full, &a, &b)?;
    let wald = wald_from_fits(&a, &b)?;
    let score = score_test_global(ds, group)?;
    let anchored = anchored_wald_fits(&a, &b, opts)?;
    Ok(DifReport {
        groups: groups.labels,
        lr,
        wald,
        score,
        anchored,
        fits: (a, b),
    })
}
