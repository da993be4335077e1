//! Response simulation from known Rasch parameters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::ItemResponses;
use crate::error::Result;

/// One 0/1 row per ability in `theta`, with P(correct) = logistic(theta - beta_j).
pub fn rasch_rows<R: Rng + ?Sized>(rng: &mut R, beta: &[f64], theta: &[f64]) -> Vec<Vec<u8>> {
    theta
        .iter()
        .map(|&t| {
            beta.iter()
                .map(|&b| {
                    let p = 1.0 / (1.0 + (b - t).exp());
                    u8::from(rng.random::<f64>() < p)
                })
                .collect()
        })
        .collect()
}

/// Normal abilities with mean `mean` and standard deviation `sd`.
pub fn normal_abilities<R: Rng + ?Sized>(rng: &mut R, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + sd * z
        })
        .collect()
}

/// `n` persons with standard normal abilities.
pub fn rasch_responses<R: Rng + ?Sized>(rng: &mut R, beta: &[f64], n: usize) -> Result<ItemResponses> {
    let theta = normal_abilities(rng, n, 0.0, 1.0);
    ItemResponses::from_rows(rasch_rows(rng, beta, &theta))
}
