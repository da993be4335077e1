//! Elementary symmetric functions of item easiness parameters.
//!
//! For easiness values `eps[0..m]`, `gamma[r]` is the sum over all r-subsets
//! of items of the product of their easiness values. The conditional
//! likelihood of a response pattern given its raw score r has `gamma[r]` as
//! normalizer, so this is the kernel of every CML computation in the crate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `gamma` always, `d1` when order >= 1, `d2` when order == 2.
///
/// `d1[(r, j)]` is the derivative of `gamma[r]` with respect to `eps[j]`.
/// `d2[r][(j, k)]` is the second derivative of `gamma[r]` with respect to
/// `eps[j]` and `eps[k]`; the diagonal is zero since `gamma` is linear in each
/// argument.
#[derive(Debug, Clone)]
pub struct EsfResult {
    pub gamma: Vec<f64>,
    pub d1: Option<DMatrix<f64>>,
    pub d2: Option<Vec<DMatrix<f64>>>,
}

/// Summation recurrence `g_r <- g_r + eps_k * g_{r-1}` over all items except
/// those flagged in `skip`.
fn summation(eps: &[f64], skip: &[usize]) -> Vec<f64> {
    let active = eps.len() - skip.len();
    let mut g = vec![0.0; active + 1];
    g[0] = 1.0;
    let mut used = 0;
    for (k, &e) in eps.iter().enumerate() {
        if skip.contains(&k) {
            continue;
        }
        used += 1;
        for r in (1..=used).rev() {
            g[r] += e * g[r - 1];
        }
    }
    g
}

pub fn esf(eps: &[f64], order: u8) -> Result<EsfResult> {
    let m = eps.len();
    if m == 0 {
        return Err(Error::Invalid("esf needs at least one item".into()));
    }
    if let Some(j) = eps.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Invalid(format!(
            "easiness parameter {j} must be positive and finite, got {}",
            eps[j]
        )));
    }
    if order > 2 {
        return Err(Error::Invalid(format!("esf order must be 0, 1 or 2, got {order}")));
    }
    let gamma = summation(eps, &[]);

    let d1 = (order >= 1).then(|| {
        let mut d1 = DMatrix::zeros(m + 1, m);
        for j in 0..m {
            let without = summation(eps, &[j]);
            for r in 1..=m {
                d1[(r, j)] = without[r - 1];
            }
        }
        d1
    });

    let d2 = (order == 2).then(|| {
        let mut d2 = vec![DMatrix::zeros(m, m); m + 1];
        for j in 0..m {
            for k in (j + 1)..m {
                let without = summation(eps, &[j, k]);
                for r in 2..=m {
                    d2[r][(j, k)] = without[r - 2];
                    d2[r][(k, j)] = without[r - 2];
                }
            }
        }
        d2
    });

    Ok(EsfResult { gamma, d1, d2 })
}
