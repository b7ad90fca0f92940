//! Exact and empirical Kolmogorov distances of `Sₙ/(σ√n)` to the standard
//! normal, the characteristic function of `Sₙ`, the Berry–Esseen integral
//! and rate-slope fits.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use crate::linalg::{self, CVector};
use crate::martingale::{ratio_grid, RatioRow};
use crate::poisson::PoissonSolution;
use crate::sim::validate_law;
use crate::spectral::{self, SpectralConfig};
use crate::stats::{linear_fit, normal_cdf, KahanSum};

/// Default cap on `states × (n·span + 1)` for the lattice program.
pub const DEFAULT_BUDGET: u128 = 100_000_000;

fn initial_row(chain: &FiniteChain, initial_law: Option<&[f64]>) -> Result<CVector> {
    let s = chain.states();
    match initial_law {
        Some(law) => {
            validate_law(law, s)?;
            Ok(CVector::from_iterator(s, law.iter().map(|p| Complex64::new(*p, 0.0))))
        }
        None => Ok(chain.stationary().map(|p| Complex64::new(p, 0.0))),
    }
}

/// `E_μ₀[e^{itSₙ}] = μ₀ Q(t)ⁿ 1`.
pub fn charfn_s(chain: &FiniteChain, t: f64, n: usize, initial_law: Option<&[f64]>) -> Result<Complex64> {
    let mu = initial_row(chain, initial_law)?;
    if t == 0.0 || chain.observable().iter().all(|x| *x == 0.0) {
        // Q(t) = Q is stochastic
        return Ok(Complex64::new(1.0, 0.0));
    }
    let k = spectral::fourier_kernel(chain, t);
    Ok(linalg::row_times(&mu, &linalg::mat_pow(&k.matrix, n as u64)).sum())
}

/// `R_S(n) = max_t |E_ν[e^{itSₙ/(σ√n)}] − e^{−t²/2}|·√n/|t|`.
pub fn cor41_ratio(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    n_grid: &[usize],
    t_per_n: usize,
) -> Result<Vec<RatioRow>> {
    let sigma = solution.require_variance()?.sqrt();
    n_grid
        .par_iter()
        .map(|&n| {
            let sq = (n as f64).sqrt();
            let mut best = RatioRow {
                n,
                t_at_max: 0.0,
                ratio: 0.0,
            };
            for t in ratio_grid(n, t_per_n) {
                let d = charfn_s(chain, t / (sigma * sq), n, None)? - (-t * t / 2.0).exp();
                let ratio = d.norm() * sq / t;
                if ratio > best.ratio {
                    best.ratio = ratio;
                    best.t_at_max = t;
                }
            }
            Ok(best)
        })
        .collect()
}

/// Law of `Sₙ` on `offset + step·k`, `k = 0..probs.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDistribution {
    pub offset: f64,
    pub step: f64,
    pub probs: Vec<f64>,
    pub n: usize,
}

impl LatticeDistribution {
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().copied().collect::<KahanSum>().total()
    }

    pub fn atom(&self, k: usize) -> f64 {
        self.offset + self.step * k as f64
    }

    /// `Σ_k p_k e^{it·atom_k}`.
    pub fn charfn(&self, t: f64) -> Complex64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| Complex64::from_polar(*p, t * self.atom(k)))
            .sum()
    }
}

/// Dynamic program over (state, accumulated lattice site).
pub fn exact_sn_distribution(
    chain: &FiniteChain,
    n: usize,
    initial_law: Option<&[f64]>,
    budget: u128,
) -> Result<LatticeDistribution> {
    let lattice = chain.lattice().ok_or(Error::NoLattice)?;
    let s = chain.states();
    let span = lattice.span() as u128;
    let width = n as u128 * span + 1;
    let cells = s as u128 * width;
    if cells > budget {
        return Err(Error::BudgetExceeded { cells, budget });
    }
    let mu: Vec<f64> = match initial_law {
        Some(law) => {
            validate_law(law, s)?;
            law.to_vec()
        }
        None => chain.stationary().iter().copied().collect(),
    };
    let width = width as usize;
    let sites: Vec<usize> = lattice.sites.iter().map(|k| *k as usize).collect();
    let q = chain.kernel();
    let mut cur = vec![vec![0.0; width]; s];
    for x in 0..s {
        cur[x][0] = mu[x];
    }
    let mut used = 1;
    for _ in 0..n {
        let next_used = used + span as usize;
        let next: Vec<Vec<f64>> = (0..s)
            .into_par_iter()
            .map(|y| {
                let mut row = vec![0.0; width];
                let shift = sites[y];
                for x in 0..s {
                    let p = q[(x, y)];
                    if p == 0.0 {
                        continue;
                    }
                    for (dst, src) in row[shift..shift + used].iter_mut().zip(&cur[x][..used]) {
                        *dst += p * src;
                    }
                }
                row
            })
            .collect();
        cur = next;
        used = next_used;
    }
    let probs = (0..width)
        .map(|k| (0..s).map(|x| cur[x][k]).sum::<f64>())
        .collect();
    Ok(LatticeDistribution {
        offset: n as f64 * lattice.offset,
        step: lattice.step,
        probs,
        n,
    })
}

/// `sup_x |P(Sₙ/(σ√n) ≤ x) − Φ(x)|`, checked on both sides of every atom.
pub fn kolmogorov_distance(dist: &LatticeDistribution, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let scale = sigma * (dist.n.max(1) as f64).sqrt();
    let mut cdf = KahanSum::new();
    let mut worst: f64 = 0.0;
    for (k, p) in dist.probs.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let phi = normal_cdf(dist.atom(k) / scale);
        let left = cdf.total();
        cdf.add(*p);
        let right = cdf.total();
        worst = worst.max((left - phi).abs()).max((right - phi).abs());
    }
    Ok(worst)
}

/// Minimum sample count for [`empirical_kolmogorov`].
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistance {
    pub distance: f64,
    pub dkw_epsilon: f64,
}

/// `sqrt(ln(2/δ)/(2m))`.
pub fn dkw_epsilon(m: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * m as f64)).sqrt()
}

/// Sup-distance of the empirical CDF of normalized samples to Φ.
pub fn empirical_kolmogorov(samples: &[f64], delta: f64) -> Result<EmpiricalDistance> {
    let m = samples.len();
    if m < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            required: MIN_SAMPLES,
            got: m,
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mf = m as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < m {
        let x = sorted[i];
        let mut j = i;
        while j < m && sorted[j] == x {
            j += 1;
        }
        let phi = normal_cdf(x);
        worst = worst.max((i as f64 / mf - phi).abs()).max((j as f64 / mf - phi).abs());
        i = j;
    }
    Ok(EmpiricalDistance {
        distance: worst,
        dkw_epsilon: dkw_epsilon(m, delta),
    })
}

/// Largest `α ≤ 0.5/σ` such that `Q(u)` keeps a separated dominant
/// eigenvalue on `[−α, α]`, scanned at 64 points.
pub fn default_alpha(chain: &FiniteChain, solution: &PoissonSolution, gap_min: f64) -> Result<f64> {
    let sigma = solution.require_variance()?.sqrt();
    let top = 0.5 / sigma;
    let cfg = SpectralConfig { t_max: None, gap_min };
    let mut alpha = None;
    for k in 1..=64 {
        let u = top * k as f64 / 64.0;
        if spectral::triple_at(chain, u, &cfg).is_err() {
            break;
        }
        alpha = Some(u);
    }
    alpha.ok_or(Error::SpectralGapLost { u: top / 64.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub panels: usize,
    pub max_panels: usize,
    pub rel_tol: f64,
    pub gap_min: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            panels: 4096,
            max_panels: 1 << 18,
            rel_tol: 1e-8,
            gap_min: spectral::DEFAULT_GAP_MIN,
        }
    }
}

/// `Aₙ` and its three majorants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenIntegral {
    pub n: usize,
    pub alpha: f64,
    pub a_n: f64,
    pub i_n: f64,
    pub j_n: f64,
    pub k_n: f64,
    /// Largest pointwise gap between `E[e^{itSₙ/(σ√n)}]` and
    /// `λⁿ + λⁿL + ⟨μ₀, Nⁿ1⟩` over the quadrature nodes.
    pub identity_residual: f64,
    /// `|S_{2N} − S_N|` for `Aₙ` at the final panel count.
    pub quadrature_error: f64,
    pub panels: usize,
}

impl BerryEsseenIntegral {
    /// `Aₙ − (Iₙ + Jₙ + Kₙ)`, non-positive up to quadrature error.
    pub fn majorant_gap(&self) -> f64 {
        self.a_n - (self.i_n + self.j_n + self.k_n)
    }
}

/// Integrands of `Aₙ, Iₙ, Jₙ, Kₙ` at `t`, plus the pointwise identity defect.
fn integrands(
    chain: &FiniteChain,
    mu: &CVector,
    sigma: f64,
    n: usize,
    t: f64,
    cfg: &SpectralConfig,
) -> Result<[f64; 5]> {
    let sq = (n as f64).sqrt();
    let u = t / (sigma * sq);
    let kernel = spectral::fourier_kernel(chain, u);
    let triple = spectral::dominant_triple(&kernel, chain, cfg).map_err(|e| match e {
        Error::AmbiguousDominant { .. } | Error::NormalizationFailure { .. } => Error::SpectralGapLost { u },
        other => other,
    })?;
    let total = linalg::row_times(mu, &linalg::mat_pow(&kernel.matrix, n as u64)).sum();
    let lambda_n = triple.lambda.powu(n as u32);
    let l = triple.phi.sum() * linalg::pair(mu, &triple.v) - 1.0;
    let rem = linalg::row_times(mu, &linalg::mat_pow(&triple.remainder, n as u64)).sum();
    let gauss = (-t * t / 2.0).exp();
    let defect = (total - (lambda_n + lambda_n * l + rem)).norm();
    let at = t.abs();
    Ok([
        (total - gauss).norm() / at,
        (lambda_n - gauss).norm() / at,
        (lambda_n * l).norm() / at,
        rem.norm() / at,
        defect,
    ])
}

/// Offset used to evaluate the removable point at `t = 0`.
const ZERO_NODE_SHIFT: f64 = 1e-7;

/// Simpson quadrature of `Aₙ`, `Iₙ`, `Jₙ`, `Kₙ` over `t ∈ [−ασ√n, ασ√n]`
/// (`α` in units of the Fourier parameter `u = t/(σ√n)`). The integrands
/// are even, so the half-range is integrated and doubled.
pub fn berry_esseen_integral(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    alpha: f64,
    n: usize,
    initial_law: Option<&[f64]>,
    opts: &QuadratureOptions,
) -> Result<BerryEsseenIntegral> {
    let sigma = solution.require_variance()?.sqrt();
    if n == 0 || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("need n >= 1 and alpha > 0".into()));
    }
    if opts.panels < 2 || !opts.panels.is_multiple_of(2) || !(opts.rel_tol > 0.0) {
        return Err(Error::InvalidArgument("panels must be even and rel_tol positive".into()));
    }
    let mu = initial_row(chain, initial_law)?;
    let cfg = SpectralConfig {
        t_max: None,
        gap_min: opts.gap_min,
    };
    let top = alpha * sigma * (n as f64).sqrt();
    let eval = |t: f64| integrands(chain, &mu, sigma, n, if t == 0.0 { ZERO_NODE_SHIFT * top } else { t }, &cfg);
    let eval_many = |ts: Vec<f64>| ts.into_par_iter().map(eval).collect::<Result<Vec<_>>>();

    let mut panels = opts.panels;
    let mut values = eval_many((0..=panels).map(|i| top * i as f64 / panels as f64).collect())?;
    let mut current = simpson(&values, top);
    loop {
        let doubled = panels * 2;
        let mids = eval_many((0..panels).map(|i| top * (2 * i + 1) as f64 / doubled as f64).collect())?;
        let mut merged = Vec::with_capacity(doubled + 1);
        for (i, v) in values.iter().enumerate() {
            merged.push(*v);
            if i < panels {
                merged.push(mids[i]);
            }
        }
        let refined = simpson(&merged, top);
        let change = (refined[0] - current[0]).abs();
        let converged = (0..4).all(|j| (refined[j] - current[j]).abs() <= opts.rel_tol * refined[j].abs());
        values = merged;
        panels = doubled;
        current = refined;
        if converged || panels >= opts.max_panels {
            let identity_residual = values.iter().map(|v| v[4]).fold(0.0, f64::max);
            return Ok(BerryEsseenIntegral {
                n,
                alpha,
                a_n: current[0],
                i_n: current[1],
                j_n: current[2],
                k_n: current[3],
                identity_residual,
                quadrature_error: change,
                panels,
            });
        }
    }
}

/// Doubled composite Simpson sums over `[0, top]` for the first four columns.
fn simpson(values: &[[f64; 5]], top: f64) -> [f64; 4] {
    let panels = values.len() - 1;
    let h = top / panels as f64;
    let mut out = [0.0; 4];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = KahanSum::new();
        for (i, v) in values.iter().enumerate() {
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc.add(w * v[j]);
        }
        *o = 2.0 * acc.total() * h / 3.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

/// Least squares on `(ln n, ln d)`.
pub fn rate_slope_fit(n_grid: &[usize], distances: &[f64]) -> Result<SlopeFit> {
    if n_grid.len() != distances.len() {
        return Err(Error::DimensionMismatch {
            expected: n_grid.len(),
            got: distances.len(),
        });
    }
    if n_grid.len() < 4 {
        return Err(Error::InvalidArgument("slope fit needs at least 4 points".into()));
    }
    if let Some(index) = distances.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::NonPositiveDistance { index });
    }
    let x: Vec<f64> = n_grid.iter().map(|n| (*n as f64).ln()).collect();
    let y: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let fit = linear_fit(&x, &y);
    Ok(SlopeFit {
        slope: fit.slope,
        stderr: fit.slope_stderr,
        intercept: fit.intercept,
        residuals: fit.residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateMethod {
    #[serde(rename = "exact-dp")]
    ExactDp,
    #[serde(rename = "mc-dkw")]
    McDkw,
}

impl RateMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            RateMethod::ExactDp => "exact-dp",
            RateMethod::McDkw => "mc-dkw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub distance: f64,
    pub method: RateMethod,
    pub band_low: f64,
    pub band_high: f64,
}

impl RatePoint {
    pub fn exact(n: usize, distance: f64) -> Self {
        Self {
            n,
            distance,
            method: RateMethod::ExactDp,
            band_low: distance,
            band_high: distance,
        }
    }

    pub fn empirical(n: usize, e: EmpiricalDistance) -> Self {
        Self {
            n,
            distance: e.distance,
            method: RateMethod::McDkw,
            band_low: (e.distance - e.dkw_epsilon).max(0.0),
            band_high: e.distance + e.dkw_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    pub fit: Option<SlopeFit>,
    pub sigma2: f64,
}

impl RateReport {
    pub fn new(points: Vec<RatePoint>, sigma2: f64) -> Self {
        let n: Vec<usize> = points.iter().map(|p| p.n).collect();
        let d: Vec<f64> = points.iter().map(|p| p.distance).collect();
        let fit = rate_slope_fit(&n, &d).ok();
        Self { points, fit, sigma2 }
    }
}

/// Monte Carlo settings used when the lattice program is unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub paths: usize,
    pub master_seed: u64,
    pub delta: f64,
}

/// Exact distances when the lattice program fits the budget, otherwise
/// Monte Carlo with a DKW band (requires `mc`).
pub fn finite_rate(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    n_grid: &[usize],
    initial_law: Option<&[f64]>,
    budget: u128,
    mc: Option<&McOptions>,
) -> Result<RateReport> {
    let sigma2 = solution.require_variance()?;
    let sigma = sigma2.sqrt();
    let points = n_grid
        .par_iter()
        .map(|&n| match exact_sn_distribution(chain, n, initial_law, budget) {
            Ok(dist) => Ok(RatePoint::exact(n, kolmogorov_distance(&dist, sigma)?)),
            Err(e @ (Error::NoLattice | Error::BudgetExceeded { .. })) => {
                let Some(mc) = mc else { return Err(e) };
                let sums = crate::sim::finite_final_sums(chain, n, mc.paths, mc.master_seed, initial_law)?;
                let scale = sigma * (n as f64).sqrt();
                let z: Vec<f64> = sums.iter().map(|s| s / scale).collect();
                Ok(RatePoint::empirical(n, empirical_kolmogorov(&z, mc.delta)?))
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport::new(points, sigma2))
}

/// Empirical distances from a table of partial sums (paths × checkpoints).
pub fn empirical_rate(sums: &[Vec<f64>], n_grid: &[usize], sigma2: f64, delta: f64) -> Result<RateReport> {
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let points = n_grid
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let scale = (sigma2 * n as f64).sqrt();
            let z: Vec<f64> = sums.iter().map(|row| row[j] / scale).collect();
            Ok(RatePoint::empirical(n, empirical_kolmogorov(&z, delta)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport::new(points, sigma2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;
    use crate::poisson::solve_poisson;
    use nalgebra::DMatrix;

    fn two_state() -> FiniteChain {
        let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        build_chain(&q, &[1.0, 0.0], None).unwrap()
    }

    fn iid_pm1() -> FiniteChain {
        build_chain(&DMatrix::from_element(2, 2, 0.5), &[1.0, -1.0], None).unwrap()
    }

    #[test]
    fn charfn_basics() {
        let chain = two_state();
        assert_eq!(charfn_s(&chain, 0.0, 9, None).unwrap(), Complex64::new(1.0, 0.0));
        let direct: Complex64 = (0..2)
            .map(|x| Complex64::from_polar(chain.stationary()[x], 0.4 * chain.observable()[x]))
            .sum();
        assert!((charfn_s(&chain, 0.4, 1, None).unwrap() - direct).norm() < 1e-15);
    }

    #[test]
    fn charfn_matches_dp() {
        let chain = two_state();
        let dist = exact_sn_distribution(&chain, 50, None, DEFAULT_BUDGET).unwrap();
        let a = charfn_s(&chain, 0.3, 50, None).unwrap();
        assert!((a - dist.charfn(0.3)).norm() < 1e-10);
    }

    #[test]
    fn dp_one_step_and_binomial() {
        let chain = two_state();
        let d1 = exact_sn_distribution(&chain, 1, None, DEFAULT_BUDGET).unwrap();
        assert!((d1.atom(0) + 4.0 / 7.0).abs() < 1e-14);
        assert!((d1.probs[0] - 3.0 / 7.0).abs() < 1e-14);
        assert!((d1.probs[1] - 4.0 / 7.0).abs() < 1e-14);

        let d = exact_sn_distribution(&iid_pm1(), 10, None, DEFAULT_BUDGET).unwrap();
        // ±1 is the lattice −1 + 2ℤ, so k ones sit at site k
        assert_eq!(d.probs.len(), 11);
        let mut binom = 1.0;
        for k in 0..=10usize {
            if k > 0 {
                binom = binom * (10 - k + 1) as f64 / k as f64;
            }
            assert!((d.probs[k] - binom / 1024.0).abs() < 1e-15);
            assert!((d.atom(k) - (2.0 * k as f64 - 10.0)).abs() < 1e-12);
        }
        let big = exact_sn_distribution(&chain, 2000, None, DEFAULT_BUDGET).unwrap();
        assert!((big.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dp_errors() {
        let chain = two_state();
        assert!(matches!(
            exact_sn_distribution(&chain, 100, None, 10),
            Err(Error::BudgetExceeded { .. })
        ));
        let irrational = build_chain(chain.kernel(), &[0.0, std::f64::consts::PI], None).unwrap();
        let other = build_chain(
            &DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.3, 0.3, 0.4, 0.5, 0.25, 0.25]),
            &[0.0, 1.0, std::f64::consts::SQRT_2],
            None,
        )
        .unwrap();
        assert!(irrational.lattice().is_some());
        assert!(matches!(
            exact_sn_distribution(&other, 3, None, DEFAULT_BUDGET),
            Err(Error::NoLattice)
        ));
    }

    #[test]
    fn kolmogorov_two_atoms() {
        let d = exact_sn_distribution(&iid_pm1(), 1, None, DEFAULT_BUDGET).unwrap();
        let k = kolmogorov_distance(&d, 1.0).unwrap();
        assert!((k - (normal_cdf(1.0) - 0.5)).abs() < 1e-15);
        assert!((k - 0.341345).abs() < 1e-6);
        assert!(matches!(kolmogorov_distance(&d, 0.0), Err(Error::DegenerateVariance)));
    }

    #[test]
    fn kolmogorov_zero_atom_invariance() {
        let d = LatticeDistribution {
            offset: -1.0,
            step: 0.5,
            probs: vec![0.25, 0.0, 0.5, 0.0, 0.25],
            n: 1,
        };
        let squeezed = LatticeDistribution {
            offset: -1.0,
            step: 1.0,
            probs: vec![0.25, 0.5, 0.25],
            n: 1,
        };
        assert_eq!(kolmogorov_distance(&d, 1.0).unwrap(), kolmogorov_distance(&squeezed, 1.0).unwrap());
    }

    #[test]
    fn kolmogorov_fine_normal_lattice() {
        let dist = |step: f64| {
            let k = (12.0 / step) as usize;
            let probs: Vec<f64> = (0..=2 * k)
                .map(|i| {
                    let x = (i as f64 - k as f64) * step;
                    normal_cdf(x + step / 2.0) - normal_cdf(x - step / 2.0)
                })
                .collect();
            LatticeDistribution {
                offset: -(k as f64) * step,
                step,
                probs,
                n: 1,
            }
        };
        let coarse = kolmogorov_distance(&dist(0.1), 1.0).unwrap();
        let fine = kolmogorov_distance(&dist(0.001), 1.0).unwrap();
        assert!(fine < coarse / 50.0);
        assert!(fine < 1e-3);
    }

    #[test]
    fn dkw_examples() {
        let eps = dkw_epsilon(5000, 0.05);
        assert!((eps - (40f64.ln() / 10000.0).sqrt()).abs() < 1e-15);
        assert!((eps - 0.019206).abs() < 1e-6);
        let zeros = vec![0.0; 200];
        assert_eq!(empirical_kolmogorov(&zeros, 0.05).unwrap().distance, 0.5);
        assert!(matches!(
            empirical_kolmogorov(&zeros[..50], 0.05),
            Err(Error::TooFewSamples { required: 100, got: 50 })
        ));
    }

    #[test]
    fn slope_fit_examples() {
        let n = [64usize, 128, 256, 512];
        let d: Vec<f64> = n.iter().map(|v| 1.0 / (*v as f64).sqrt()).collect();
        let f = rate_slope_fit(&n, &d).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!(f.stderr < 1e-12);
        let f = rate_slope_fit(&n, &[0.3; 4]).unwrap();
        assert!(f.slope.abs() < 1e-12);
        assert!(matches!(
            rate_slope_fit(&n, &[0.3, 0.2, 0.0, 0.1]),
            Err(Error::NonPositiveDistance { index: 2 })
        ));
    }

    #[test]
    fn two_state_rate_slope() {
        let chain = two_state();
        let sol = solve_poisson(&chain).unwrap();
        let grid: Vec<usize> = (6..=12).map(|k| 1usize << k).collect();
        let report = finite_rate(&chain, &sol, &grid, None, DEFAULT_BUDGET, None).unwrap();
        let slope = report.fit.unwrap().slope;
        assert!((-0.65..=-0.40).contains(&slope), "slope {slope}");
    }

    #[test]
    fn budget_fallback_uses_mc() {
        let chain = two_state();
        let sol = solve_poisson(&chain).unwrap();
        let mc = McOptions {
            paths: 2000,
            master_seed: 1,
            delta: 0.05,
        };
        let r = finite_rate(&chain, &sol, &[64], None, 10, Some(&mc)).unwrap();
        assert_eq!(r.points[0].method, RateMethod::McDkw);
        let exact = finite_rate(&chain, &sol, &[64], None, DEFAULT_BUDGET, None).unwrap();
        let p = r.points[0];
        assert!(p.band_low <= exact.points[0].distance + 1e-12 || p.distance < p.band_high);
    }

    #[test]
    fn berry_esseen_iid_has_no_remainder() {
        let chain = iid_pm1();
        let sol = solve_poisson(&chain).unwrap();
        let opts = QuadratureOptions {
            panels: 256,
            max_panels: 4096,
            ..Default::default()
        };
        let r = berry_esseen_integral(&chain, &sol, 0.4, 64, None, &opts).unwrap();
        assert!(r.j_n < 1e-12, "{r:?}");
        assert!(r.k_n < 1e-12, "{r:?}");
        assert!((r.a_n - r.i_n).abs() < 1e-9);
        assert!(r.identity_residual < 1e-12);
    }

    #[test]
    fn berry_esseen_two_state_band() {
        let chain = two_state();
        let sol = solve_poisson(&chain).unwrap();
        let alpha = default_alpha(&chain, &sol, 1e-6).unwrap();
        assert!(alpha <= 0.5 / sol.sigma() + 1e-15);
        let opts = QuadratureOptions {
            panels: 512,
            max_panels: 1 << 14,
            ..Default::default()
        };
        let scaled: Vec<f64> = [64usize, 256, 1024, 4096]
            .iter()
            .map(|&n| {
                let r = berry_esseen_integral(&chain, &sol, alpha, n, None, &opts).unwrap();
                assert!(r.identity_residual < 1e-9, "{r:?}");
                assert!(r.majorant_gap() <= r.quadrature_error + 1e-9, "{r:?}");
                r.a_n * (n as f64).sqrt()
            })
            .collect();
        let max = scaled.iter().copied().fold(0.0, f64::max);
        let min = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max <= 1.5 * min, "{scaled:?}");
    }

    #[test]
    fn cor41_iid_closed_form() {
        let chain = iid_pm1();
        let sol = solve_poisson(&chain).unwrap();
        let rows = cor41_ratio(&chain, &sol, &[1], 100).unwrap();
        let expected = ratio_grid(1, 100)
            .into_iter()
            .map(|t| (t.cos() - (-t * t / 2.0).exp()).abs() / t)
            .fold(0.0, f64::max);
        assert!((rows[0].ratio - expected).abs() < 1e-14);
    }
}
