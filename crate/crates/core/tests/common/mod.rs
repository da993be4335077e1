#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raschkit::simulate::{normal_abilities, rasch_rows};
use raschkit::{Covariate, CovariateKind, ExamDataset, ItemResponses};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Asymptotic p-value of the one-sample Kolmogorov-Smirnov test against
/// Uniform(0, 1), with Stephens' small-sample correction.
pub fn ks_uniform_p(sample: &[f64]) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = v - i as f64 / n;
            let hi = (i + 1) as f64 / n - v;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Adjusted Rand index of two labelings.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    (sum_ij - expected) / (max - expected)
}

/// Elementary symmetric functions and their first derivatives by summing
/// over all 2^m response patterns.
pub fn brute_esf(eps: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = eps.len();
    let mut gamma = vec![0.0; m + 1];
    let mut d1 = vec![vec![0.0; m]; m + 1];
    for mask in 0u32..(1 << m) {
        let r = mask.count_ones() as usize;
        let prod: f64 = (0..m).filter(|j| mask >> j & 1 == 1).map(|j| eps[j]).product();
        gamma[r] += prod;
        for j in 0..m {
            if mask >> j & 1 == 1 {
                d1[r][j] += prod / eps[j];
            }
        }
    }
    (gamma, d1)
}

/// Conditional log-likelihood evaluated pattern by pattern: for each person,
/// `P(y | r) = exp(-y'beta) / sum over patterns z with score r of exp(-z'beta)`.
pub fn brute_cml_loglik(rows: &[Vec<u8>], beta: &[f64]) -> f64 {
    let m = beta.len();
    let mut norm = vec![0.0; m + 1];
    for mask in 0u32..(1 << m) {
        let s: f64 = (0..m).filter(|j| mask >> j & 1 == 1).map(|j| beta[j]).sum();
        norm[mask.count_ones() as usize] += (-s).exp();
    }
    rows.iter()
        .map(|row| {
            let r: usize = row.iter().map(|&v| v as usize).sum();
            let s: f64 = row.iter().zip(beta).map(|(&y, b)| f64::from(y) * b).sum();
            -s - norm[r].ln()
        })
        .sum()
}

/// Maximizes the brute-force likelihood over beta_1 = 0 by coordinate-wise
/// grid refinement, finishing on a grid of spacing below `resolution`.
pub fn grid_search_cml(rows: &[Vec<u8>], m: usize, resolution: f64) -> Vec<f64> {
    let mut beta = vec![0.0; m];
    let mut width = 8.0;
    while width > resolution {
        for _sweep in 0..50 {
            let before = beta.clone();
            for j in 1..m {
                let centre = beta[j];
                let mut best = (f64::NEG_INFINITY, centre);
                for k in -20..=20 {
                    let v = centre + width * k as f64 / 20.0;
                    beta[j] = v;
                    let ll = brute_cml_loglik(rows, &beta);
                    if ll > best.0 {
                        best = (ll, v);
                    }
                }
                beta[j] = best.1;
            }
            if before == beta {
                break;
            }
        }
        width /= 4.0;
    }
    beta
}

/// Items with difficulties `beta`; the first `n_ref` persons are group "1",
/// the rest group "2" and see item `dif_item` shifted by `shift`. Also carries a
/// numeric `age` and nominal `colour` that are unrelated to the responses.
pub fn dif_dataset(seed: u64, beta: &[f64], n_ref: usize, n_foc: usize, dif_item: usize, shift: f64) -> ExamDataset {
    let mut rng = rng(seed);
    let theta_ref = normal_abilities(&mut rng, n_ref, 0.0, 1.0);
    let theta_foc = normal_abilities(&mut rng, n_foc, 0.0, 1.0);
    let mut shifted = beta.to_vec();
    shifted[dif_item] += shift;
    let mut rows = rasch_rows(&mut rng, beta, &theta_ref);
    rows.extend(rasch_rows(&mut rng, &shifted, &theta_foc));
    let n = n_ref + n_foc;
    let group: Vec<&str> = (0..n).map(|i| if i < n_ref { "1" } else { "2" }).collect();
    let age: Vec<f64> = (0..n).map(|_| rng.random_range(18..40) as f64).collect();
    let colours = ["red", "green", "blue"];
    let colour: Vec<&str> = (0..n).map(|_| colours[rng.random_range(0..3)]).collect();
    let labels = (1..=beta.len()).map(|j| format!("i{j}")).collect();
    let responses = ItemResponses::new(rows, labels).unwrap();
    let covariates = vec![
        Covariate::categorical("group", CovariateKind::Nominal, &group, None).unwrap(),
        Covariate::numeric("age", age),
        Covariate::categorical("colour", CovariateKind::Nominal, &colour, None).unwrap(),
    ];
    ExamDataset::new(responses, covariates).unwrap().exclude_extreme_scores().unwrap()
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("workspace root")
}

/// Location of the exam data: `$MATHEXAM14W_CSV` or `data/MathExam14W.csv`.
pub fn exam_csv() -> PathBuf {
    std::env::var_os("MATHEXAM14W_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/MathExam14W.csv"))
}
