//! Seeded Monte Carlo loops that give the same draws regardless of how rayon
//! schedules the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Independent generator for substream `stream` of `seed`.
pub(crate) fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `nrep` values of `draw`; chunk k always uses substream k.
pub(crate) fn replicate<F>(nrep: usize, seed: u64, draw: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = nrep.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = substream(seed, k as u64);
            let len = CHUNK.min(nrep - k * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Empirical quantile: the smallest draw with at least `level` of the mass at or below it.
pub(crate) fn quantile(draws: &mut [f64], level: f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let k = ((level * draws.len() as f64).ceil() as usize).clamp(1, draws.len());
    draws[k - 1]
}

/// Mixes a seed with a sequence of identifiers (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, ids: &[u64]) -> u64 {
    let mut z = seed;
    for &id in ids {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(id);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
