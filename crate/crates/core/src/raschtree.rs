//! Model-based recursive partitioning of Rasch models (Rasch trees).
//!
//! Each node fits a Rasch model, tests its item parameters for instability
//! along every covariate, and splits on the covariate with the smallest
//! Bonferroni-adjusted p-value if that is below `alpha`. The split point
//! maximizes the summed conditional log-likelihood of the two children.

use std::collections::HashMap;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::{format_number, Covariate, CovariateKind, CovariateValues, ExamDataset};
use crate::error::{Error, Result};
use crate::montecarlo::derive_seed;
use crate::rasch::{fit_cml, itempar, Constraint, ItemParameterView, RaschFit};
use crate::sctest::{instability_test, Functional, InstabilityResult, TestOptions};

/// Nominal covariates with more levels than this are split along their
/// levels ordered by mean raw score instead of by exhaustive search.
const MAX_EXHAUSTIVE_LEVELS: usize = 10;

#[derive(Debug, Clone)]
pub struct TreeOptions {
    pub alpha: f64,
    pub minsize: usize,
    pub nrep: usize,
    pub seed: u64,
    /// Trimming for numeric covariates in the instability tests.
    pub trim: f64,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            minsize: 50,
            nrep: 100_000,
            seed: 1,
            trim: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    /// Persons with value (or level) at or below `label` go left.
    Threshold { key: f64, label: String },
    /// Persons whose level is in `left` go left.
    Levels { left: Vec<String>, right: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct Split {
    pub covariate: String,
    pub kind: CovariateKind,
    /// Level labels of categorical covariates, used to route new persons.
    pub levels: Option<Vec<String>>,
    pub rule: SplitRule,
    /// Summed conditional log-likelihood of the two children.
    pub loglik: f64,
}

impl Split {
    fn goes_left_key(&self, key: f64) -> bool {
        match &self.rule {
            SplitRule::Threshold { key: t, .. } => key <= *t,
            SplitRule::Levels { left, .. } => {
                let levels = self.levels.as_ref().expect("categorical split has levels");
                left.iter().any(|l| levels.get(key as usize) == Some(l))
            }
        }
    }

    /// Routes a raw value such as a CSV cell.
    pub fn goes_left(&self, raw: &str) -> Result<bool> {
        let key = match &self.levels {
            None => raw.trim().parse::<f64>().map_err(|_| {
                Error::Invalid(format!("`{raw}` is not numeric for covariate `{}`", self.covariate))
            })?,
            Some(levels) => levels
                .iter()
                .position(|l| l == raw.trim())
                .ok_or_else(|| {
                    Error::Invalid(format!("`{raw}` is not a level of covariate `{}`", self.covariate))
                })? as f64,
        };
        Ok(self.goes_left_key(key))
    }

    pub fn describe(&self) -> (String, String) {
        match &self.rule {
            SplitRule::Threshold { label, .. } => (format!("<= {label}"), format!("> {label}")),
            SplitRule::Levels { left, right } => (
                format!("in {{{}}}", left.join(", ")),
                format!("in {{{}}}", right.join(", ")),
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeTest {
    pub result: InstabilityResult,
    /// `min(1, p * number of covariates tested in this node)`.
    pub adjusted_p: f64,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: usize,
    pub depth: usize,
    pub fit: RaschFit,
    /// Row indices into the dataset the tree was grown on.
    pub persons: Vec<usize>,
    pub tests: Vec<NodeTest>,
    pub split: Option<Split>,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn n(&self) -> usize {
        self.persons.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&TreeNode> {
        if self.is_leaf() {
            return vec![self];
        }
        self.children.iter().flat_map(TreeNode::leaves).collect()
    }

    /// All nodes in depth-first pre-order.
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.nodes());
        }
        out
    }

    pub fn find(&self, id: usize) -> Option<&TreeNode> {
        self.nodes().into_iter().find(|n| n.id == id)
    }

    /// Plain-text rendering, one node per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, None);
        out
    }

    fn render_into(&self, out: &mut String, edge: Option<String>) {
        let indent = "|   ".repeat(self.depth.saturating_sub(1));
        let prefix = match &edge {
            Some(e) => format!("{indent}|-- {e} "),
            None => String::new(),
        };
        match &self.split {
            Some(s) => {
                let best = self
                    .tests
                    .iter()
                    .find(|t| t.result.covariate == s.covariate)
                    .map(|t| format!(", p = {:.4}", t.adjusted_p))
                    .unwrap_or_default();
                out.push_str(&format!("{prefix}[{}] {} (n = {}{best})\n", self.id, s.covariate, self.n()));
                let (l, r) = s.describe();
                self.children[0].render_into(out, Some(l));
                self.children[1].render_into(out, Some(r));
            }
            None => out.push_str(&format!("{prefix}[{}] leaf (n = {})\n", self.id, self.n())),
        }
    }
}

pub fn grow(ds: &ExamDataset, covariate_names: &[&str], opts: &TreeOptions) -> Result<TreeNode> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha {} outside (0, 1)", opts.alpha)));
    }
    if opts.minsize < ds.m() + 1 {
        return Err(Error::Invalid(format!(
            "minsize {} must be at least the number of items plus one ({})",
            opts.minsize,
            ds.m() + 1
        )));
    }
    let covariates: Vec<Covariate> = covariate_names
        .iter()
        .map(|name| ds.covariate(name).cloned())
        .collect::<Result<_>>()?;
    let fit = fit_cml(&ds.responses, None)?;
    let mut next_id = 1;
    let persons: Vec<usize> = (0..ds.n()).collect();
    grow_node(ds, &covariates, persons, fit, 0, &mut next_id, opts)
}

fn grow_node(
    ds: &ExamDataset,
    covariates: &[Covariate],
    persons: Vec<usize>,
    fit: RaschFit,
    depth: usize,
    next_id: &mut usize,
    opts: &TreeOptions,
) -> Result<TreeNode> {
    let id = *next_id;
    *next_id += 1;
    let mut node = TreeNode {
        id,
        depth,
        fit,
        persons,
        tests: Vec::new(),
        split: None,
        children: Vec::new(),
    };
    if node.n() < 2 * opts.minsize {
        return Ok(node);
    }
    let local = ds.select_rows(&node.persons)?;
    let local_covs: Vec<Covariate> = covariates
        .iter()
        .map(|c| local.covariate(&c.name).cloned())
        .collect::<Result<_>>()?;

    node.tests = node_tests(&node.fit, &local, &local_covs, id, opts);
    let Some(best) = select_covariate(&node.tests) else {
        return Ok(node);
    };
    if node.tests[best].adjusted_p >= opts.alpha {
        return Ok(node);
    }
    let cov_name = node.tests[best].result.covariate.clone();
    let cov = local_covs
        .iter()
        .find(|c| c.name == cov_name)
        .expect("tested covariate exists");
    let Some((split, left_idx, right_idx, fits)) = best_split(&local, cov, opts.minsize) else {
        return Ok(node);
    };
    let (left_fit, right_fit) = fits;
    let left_persons: Vec<usize> = left_idx.iter().map(|&i| node.persons[i]).collect();
    let right_persons: Vec<usize> = right_idx.iter().map(|&i| node.persons[i]).collect();
    let left = grow_node(ds, covariates, left_persons, left_fit, depth + 1, next_id, opts)?;
    let right = grow_node(ds, covariates, right_persons, right_fit, depth + 1, next_id, opts)?;
    node.split = Some(split);
    node.children = vec![left, right];
    Ok(node)
}

fn node_tests(
    fit: &RaschFit,
    local: &ExamDataset,
    covs: &[Covariate],
    node_id: usize,
    opts: &TreeOptions,
) -> Vec<NodeTest> {
    let results: Vec<InstabilityResult> = covs
        .par_iter()
        .enumerate()
        .filter(|(_, c)| c.n_distinct() >= 2)
        .filter_map(|(k, c)| {
            let t = TestOptions {
                nrep: opts.nrep,
                seed: derive_seed(opts.seed, &[node_id as u64, k as u64]),
                trim: opts.trim,
            };
            instability_test(fit, &local.responses, c, Functional::for_kind(c.kind), &t).ok()
        })
        .collect();
    let k = results.len() as f64;
    results
        .into_iter()
        .map(|result| NodeTest {
            adjusted_p: (result.p_value * k).min(1.0),
            result,
        })
        .collect()
}

/// Pointwise chi-squared tail of the statistic; orders covariates whose
/// simulated p-values tie (typically at zero).
fn pointwise_tail(r: &InstabilityResult) -> f64 {
    let df = r.df.unwrap_or(r.dim) as f64;
    ChiSquared::new(df).map_or(1.0, |d| d.sf(r.statistic))
}

fn select_covariate(tests: &[NodeTest]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, t) in tests.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &tests[b];
                t.adjusted_p < cur.adjusted_p
                    || (t.adjusted_p == cur.adjusted_p
                        && pointwise_tail(&t.result) < pointwise_tail(&cur.result))
            }
        };
        if better {
            best = Some(k);
        }
    }
    best
}

type Candidate = (Split, Vec<usize>, Vec<usize>, (RaschFit, RaschFit));

/// Candidate partitions of the node's persons as (rule, goes-left mask).
fn candidate_rules(local: &ExamDataset, cov: &Covariate, minsize: usize) -> Vec<(SplitRule, Vec<bool>)> {
    let n = local.n();
    let keys = cov.order_keys();
    let admissible = |mask: &Vec<bool>| {
        let left = mask.iter().filter(|&&b| b).count();
        left >= minsize && n - left >= minsize
    };
    let threshold_rules = |keys: &[f64], label_of: &dyn Fn(f64) -> String| {
        let mut distinct = keys.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        distinct[..distinct.len().saturating_sub(1)]
            .iter()
            .map(|&t| {
                let mask: Vec<bool> = keys.iter().map(|&k| k <= t).collect();
                (SplitRule::Threshold { key: t, label: label_of(t) }, mask)
            })
            .filter(|(_, m)| admissible(m))
            .collect::<Vec<_>>()
    };
    match (&cov.values, cov.kind) {
        (CovariateValues::Numeric(_), _) => threshold_rules(&keys, &|t| format_number(t)),
        (CovariateValues::Categorical { levels, .. }, CovariateKind::Ordinal) => {
            threshold_rules(&keys, &|t| levels[t as usize].clone())
        }
        (CovariateValues::Categorical { codes, levels }, _) => {
            let mut present: Vec<usize> = codes.clone();
            present.sort_unstable();
            present.dedup();
            let c = present.len();
            if c < 2 {
                return Vec::new();
            }
            let partitions: Vec<Vec<usize>> = if c <= MAX_EXHAUSTIVE_LEVELS {
                // subsets containing the first present level, excluding the full set
                (0..(1u32 << (c - 1)) - 1)
                    .map(|bits| {
                        let mut left = vec![present[0]];
                        for (b, &lv) in present[1..].iter().enumerate() {
                            if bits & (1 << b) != 0 {
                                left.push(lv);
                            }
                        }
                        left
                    })
                    .collect()
            } else {
                let mut mean: Vec<(usize, f64)> = present
                    .iter()
                    .map(|&lv| {
                        let (s, k) = codes
                            .iter()
                            .zip(&local.raw_scores)
                            .filter(|(&cd, _)| cd == lv)
                            .fold((0.0, 0.0), |(s, k), (_, &r)| (s + r as f64, k + 1.0));
                        (lv, s / k)
                    })
                    .collect();
                mean.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                (1..c).map(|k| mean[..k].iter().map(|x| x.0).collect()).collect()
            };
            partitions
                .into_iter()
                .map(|left| {
                    let mask: Vec<bool> = codes.iter().map(|cd| left.contains(cd)).collect();
                    let names = |set: &mut dyn Iterator<Item = usize>| set.map(|l| levels[l].clone()).collect::<Vec<_>>();
                    let mut sorted_left = left.clone();
                    sorted_left.sort_unstable();
                    let right: Vec<usize> = present.iter().copied().filter(|l| !left.contains(l)).collect();
                    let rule = SplitRule::Levels {
                        left: names(&mut sorted_left.into_iter()),
                        right: names(&mut right.into_iter()),
                    };
                    (rule, mask)
                })
                .filter(|(_, m)| admissible(m))
                .collect()
        }
    }
}

fn best_split(local: &ExamDataset, cov: &Covariate, minsize: usize) -> Option<Candidate> {
    let rules = candidate_rules(local, cov, minsize);
    let evaluated: Vec<Option<Candidate>> = rules
        .into_par_iter()
        .map(|(rule, mask)| {
            let left: Vec<usize> = (0..local.n()).filter(|&i| mask[i]).collect();
            let right: Vec<usize> = (0..local.n()).filter(|&i| !mask[i]).collect();
            let lf = fit_cml(&local.responses.select_rows(&left).ok()?, None).ok()?;
            let rf = fit_cml(&local.responses.select_rows(&right).ok()?, None).ok()?;
            let split = Split {
                covariate: cov.name.clone(),
                kind: cov.kind,
                levels: cov.levels().map(<[String]>::to_vec),
                rule,
                loglik: lf.loglik + rf.loglik,
            };
            Some((split, left, right, (lf, rf)))
        })
        .collect();
    // first maximum in candidate order
    evaluated.into_iter().flatten().fold(None, |best: Option<Candidate>, c| match best {
        Some(b) if b.0.loglik >= c.0.loglik => Some(b),
        _ => Some(c),
    })
}

/// Sum-zero item parameters of every leaf, left to right, with leaf ids.
pub fn node_profiles(tree: &TreeNode) -> Result<Vec<(usize, ItemParameterView)>> {
    tree.leaves()
        .into_iter()
        .map(|leaf| Ok((leaf.id, itempar(&leaf.fit, Constraint::SumZero)?)))
        .collect()
}

/// Leaf id for a person described by raw covariate values.
pub fn predict_node(tree: &TreeNode, values: &HashMap<String, String>) -> Result<usize> {
    let mut node = tree;
    while let Some(split) = &node.split {
        let raw = values
            .get(&split.covariate)
            .ok_or_else(|| Error::Invalid(format!("missing value for covariate `{}`", split.covariate)))?;
        node = if split.goes_left(raw)? {
            &node.children[0]
        } else {
            &node.children[1]
        };
    }
    Ok(node.id)
}
