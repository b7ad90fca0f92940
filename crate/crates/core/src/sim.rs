//! Seeded path simulation and the Monte Carlo variance estimator.
//!
//! Every path owns its generator, seeded by [`derive_seed`] from the master
//! seed and the path index, so a path never depends on which worker ran it
//! or in which order.

use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use crate::stats::KahanSum;

/// Generator used for every simulated path.
pub type PathRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-path seed: `splitmix64(master_seed ^ splitmix64(path_index))`.
pub fn derive_seed(master_seed: u64, path_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(path_index))
}

pub fn path_rng(master_seed: u64, path_index: u64) -> PathRng {
    PathRng::seed_from_u64(derive_seed(master_seed, path_index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathStates {
    Indices(Vec<usize>),
    Vectors(Vec<Vec<f64>>),
}

impl PathStates {
    pub fn len(&self) -> usize {
        match self {
            PathStates::Indices(v) => v.len(),
            PathStates::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One simulated trajectory. `states` holds `X₀, …, Xₙ`; `partial_sums[k − 1]`
/// is `S_k = ξ(X₁) + … + ξ(X_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub seed: u64,
    pub path_index: u64,
    pub states: PathStates,
    pub partial_sums: Vec<f64>,
    pub n: usize,
}

impl PathSample {
    pub fn final_sum(&self) -> f64 {
        self.partial_sums.last().copied().unwrap_or(0.0)
    }

    /// Largest `|(S_k − S_{k−1}) − ξ(X_k)|` along the path.
    pub fn telescoping_defect(&self, xi: impl Fn(usize) -> f64) -> f64 {
        let mut prev = 0.0;
        let mut worst: f64 = 0.0;
        for (k, s) in self.partial_sums.iter().enumerate() {
            worst = worst.max((s - prev - xi(k + 1)).abs());
            prev = *s;
        }
        worst
    }
}

/// Checks a probability vector on `states` entries.
pub fn validate_law(law: &[f64], states: usize) -> Result<()> {
    if law.len() != states {
        return Err(Error::BadInitialLaw(format!(
            "expected {states} entries, got {}",
            law.len()
        )));
    }
    if let Some(p) = law.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::BadInitialLaw(format!("invalid mass {p}")));
    }
    let total: f64 = law.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadInitialLaw(format!("masses sum to {total}")));
    }
    Ok(())
}

/// Inverse-CDF sampler over a finite probability vector.
#[derive(Debug, Clone)]
pub struct DiscreteSampler {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl DiscreteSampler {
    pub fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        Self {
            cumulative,
            last_positive,
        }
    }

    pub fn sample(&self, rng: &mut PathRng) -> usize {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|c| *c <= u);
        idx.min(self.last_positive)
    }
}

/// Samplers for the initial law and every kernel row.
#[derive(Debug, Clone)]
pub struct FiniteSampler {
    initial: DiscreteSampler,
    rows: Vec<DiscreteSampler>,
}

impl FiniteSampler {
    pub fn new(chain: &FiniteChain, initial_law: Option<&[f64]>) -> Result<Self> {
        let s = chain.states();
        let initial = match initial_law {
            Some(law) => {
                validate_law(law, s)?;
                DiscreteSampler::new(law)
            }
            None => DiscreteSampler::new(chain.stationary().as_slice()),
        };
        let q = chain.kernel();
        let rows = (0..s)
            .map(|x| DiscreteSampler::new(&q.row(x).iter().copied().collect::<Vec<_>>()))
            .collect();
        Ok(Self { initial, rows })
    }

    pub fn step(&self, x: usize, rng: &mut PathRng) -> usize {
        self.rows[x].sample(rng)
    }
}

/// Simulates `X₀, …, Xₙ` with `X₀` drawn from `initial_law` (default ν).
pub fn simulate_finite(
    chain: &FiniteChain,
    n: usize,
    master_seed: u64,
    path_index: u64,
    initial_law: Option<&[f64]>,
) -> Result<PathSample> {
    let sampler = FiniteSampler::new(chain, initial_law)?;
    Ok(simulate_with(chain, &sampler, n, master_seed, path_index))
}

/// Same as [`simulate_finite`] with a prebuilt sampler.
pub fn simulate_with(
    chain: &FiniteChain,
    sampler: &FiniteSampler,
    n: usize,
    master_seed: u64,
    path_index: u64,
) -> PathSample {
    let mut rng = path_rng(master_seed, path_index);
    let xi = chain.observable();
    let mut states = Vec::with_capacity(n + 1);
    let mut partial_sums = Vec::with_capacity(n);
    let mut x = sampler.initial.sample(&mut rng);
    states.push(x);
    let mut sum = 0.0;
    for _ in 0..n {
        x = sampler.step(x, &mut rng);
        sum += xi[x];
        states.push(x);
        partial_sums.push(sum);
    }
    PathSample {
        seed: derive_seed(master_seed, path_index),
        path_index,
        states: PathStates::Indices(states),
        partial_sums,
        n,
    }
}

/// Minimum number of paths accepted by [`mc_variance_estimate`].
pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma2_hat: f64,
    pub stderr: f64,
}

/// Sample variance of `Sₙ/√n` across paths, with standard error
/// `sqrt((m₄ − s⁴)/m)` from the fourth central moment.
pub fn mc_variance_estimate(final_sums: &[f64], n: usize) -> Result<VarianceEstimate> {
    let m = final_sums.len();
    if m < MIN_PATHS {
        return Err(Error::TooFewPaths {
            required: MIN_PATHS,
            got: m,
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("path length must be positive".into()));
    }
    let scale = (n as f64).sqrt();
    let z: Vec<f64> = final_sums.iter().map(|s| s / scale).collect();
    let mf = m as f64;
    let mean = z.iter().copied().collect::<KahanSum>().total() / mf;
    let m2 = z.iter().map(|v| (v - mean).powi(2)).collect::<KahanSum>().total();
    let m4 = z.iter().map(|v| (v - mean).powi(4)).collect::<KahanSum>().total() / mf;
    let sigma2_hat = m2 / (mf - 1.0);
    let biased = m2 / mf;
    let stderr = ((m4 - biased * biased).max(0.0) / mf).sqrt();
    Ok(VarianceEstimate { sigma2_hat, stderr })
}

/// Final sums of paths `0..paths`, computed in parallel, returned in index order.
pub fn finite_final_sums(
    chain: &FiniteChain,
    n: usize,
    paths: usize,
    master_seed: u64,
    initial_law: Option<&[f64]>,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let sampler = FiniteSampler::new(chain, initial_law)?;
    let xi = chain.observable();
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(master_seed, i);
            let mut x = sampler.initial.sample(&mut rng);
            let mut sum = 0.0;
            for _ in 0..n {
                x = sampler.step(x, &mut rng);
                sum += xi[x];
            }
            sum
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;
    use nalgebra::DMatrix;

    fn two_state() -> FiniteChain {
        let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        build_chain(&q, &[1.0, 0.0], None).unwrap()
    }

    #[test]
    fn seeds_differ_and_repeat() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
        // reference value of the SplitMix64 output for state 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn zero_length_path() {
        let p = simulate_finite(&two_state(), 0, 1, 0, None).unwrap();
        assert!(p.partial_sums.is_empty());
        assert_eq!(p.states.len(), 1);
    }

    #[test]
    fn permutation_orbit() {
        let q = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.]);
        let chain = build_chain(&q, &[0.0, 1.0, 2.0], None).unwrap();
        let p = simulate_finite(&chain, 6, 5, 0, Some(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(p.states, PathStates::Indices(vec![0, 1, 2, 0, 1, 2, 0]));
        let xi = chain.observable().clone();
        let PathStates::Indices(st) = &p.states else { unreachable!() };
        assert!(p.telescoping_defect(|k| xi[st[k]]) < 1e-12);
    }

    #[test]
    fn bad_initial_law() {
        let chain = two_state();
        assert!(matches!(
            simulate_finite(&chain, 3, 1, 0, Some(&[0.5, 0.6])),
            Err(Error::BadInitialLaw(_))
        ));
        assert!(matches!(
            simulate_finite(&chain, 3, 1, 0, Some(&[1.0])),
            Err(Error::BadInitialLaw(_))
        ));
    }

    #[test]
    fn occupation_near_stationary() {
        let chain = two_state();
        let n = 100_000;
        let p = simulate_finite(&chain, n, 42, 0, None).unwrap();
        let PathStates::Indices(st) = &p.states else { unreachable!() };
        let freq = st[1..].iter().filter(|x| **x == 0).count() as f64 / n as f64;
        let nu0 = 4.0 / 7.0;
        let band = 3.0 * (nu0 * (1.0 - nu0) / n as f64).sqrt() * 2.0;
        assert!((freq - nu0).abs() <= band, "freq {freq}");
    }

    #[test]
    fn variance_estimate_guards() {
        assert!(matches!(
            mc_variance_estimate(&[1.0; 10], 5),
            Err(Error::TooFewPaths { required: 100, got: 10 })
        ));
        let e = mc_variance_estimate(&[0.0; 200], 5).unwrap();
        assert_eq!(e.sigma2_hat, 0.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn parallel_sums_match_single_paths() {
        let chain = two_state();
        let sums = finite_final_sums(&chain, 50, 8, 11, None).unwrap();
        for (i, s) in sums.iter().enumerate() {
            let p = simulate_finite(&chain, 50, 11, i as u64, None).unwrap();
            assert_eq!(p.final_sum().to_bits(), s.to_bits());
        }
    }
}
