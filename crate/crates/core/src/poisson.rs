//! Poisson equation, asymptotic variance and the conditional-variance
//! fluctuation ψ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::{FiniteChain, UNIT_EIGEN_TOL};
use crate::error::{Error, Result};
use crate::linalg;

/// Solution of `ξ̌ − Qξ̌ = ξ` with `ν(ξ̌) = 0`, plus derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub xi_check: DVector<f64>,
    pub q_xi_check: DVector<f64>,
    /// `ν(ξ̌²) − ν((Qξ̌)²)`, clamped at 0.
    pub sigma2: f64,
    /// `Q(ξ̌²) − (Qξ̌)² − σ²`.
    pub psi: DVector<f64>,
    /// Set when σ² vanishes up to rounding.
    pub degenerate: bool,
}

impl PoissonSolution {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Errors with `DegenerateVariance` when σ² is not usable as a scale.
    pub fn require_variance(&self) -> Result<f64> {
        if self.degenerate || !(self.sigma2 > 0.0) {
            Err(Error::DegenerateVariance)
        } else {
            Ok(self.sigma2)
        }
    }

    /// `ψ / σ²`.
    pub fn psi_hat(&self) -> Result<DVector<f64>> {
        let s2 = self.require_variance()?;
        Ok(&self.psi / s2)
    }
}

pub(crate) fn require_gap(chain: &FiniteChain) -> Result<()> {
    let modulus = chain.second_modulus();
    if modulus >= 1.0 - UNIT_EIGEN_TOL {
        Err(Error::NoSpectralGap { modulus })
    } else {
        Ok(())
    }
}

/// Solves `(I − Q) x = rhs` under `ν(x) = 0` through the nonsingular
/// system `(I − Q + 1⊗ν) x = rhs`. `rhs` must be ν-centered.
pub fn solve_centered(chain: &FiniteChain, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    require_gap(chain)?;
    let s = chain.states();
    if rhs.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: rhs.len(),
        });
    }
    let nu = chain.stationary();
    let system = DMatrix::<f64>::identity(s, s) - chain.kernel()
        + DMatrix::from_fn(s, s, |_, j| nu[j]);
    let mut x = linalg::solve_real(&system, rhs)?;
    // one step of iterative refinement
    let residual = rhs - &system * &x;
    x += linalg::solve_real(&system, &residual)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite Poisson solution".into()));
    }
    Ok(x)
}

pub fn solve_poisson(chain: &FiniteChain) -> Result<PoissonSolution> {
    let xi = chain.observable();
    let xi_check = solve_centered(chain, xi)?;
    let q = chain.kernel();
    let nu = chain.stationary();
    let q_xi_check = q * &xi_check;
    let xi_check_sq = xi_check.map(|v| v * v);
    let q_xi_check_sq = q_xi_check.map(|v| v * v);
    let raw_sigma2 = nu.dot(&xi_check_sq) - nu.dot(&q_xi_check_sq);
    let scale = nu.dot(&xi_check_sq);
    let degenerate = raw_sigma2 <= 1e-12 * scale;
    let sigma2 = raw_sigma2.max(0.0);
    let psi = (q * &xi_check_sq - q_xi_check_sq).add_scalar(-sigma2);
    Ok(PoissonSolution {
        xi_check,
        q_xi_check,
        sigma2,
        psi,
        degenerate,
    })
}

/// Terms `a_p = ν(|Qᵖψ|^{3/2})^{2/3}` and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Series {
    pub terms: Vec<f64>,
    pub total: f64,
    /// `exp` of the least-squares slope of `ln a_p` over terms above 1e-14.
    pub decay_ratio: Option<f64>,
}

pub fn h2_series(chain: &FiniteChain, solution: &PoissonSolution, p_max: usize) -> H2Series {
    let q = chain.kernel();
    let nu = chain.stationary();
    let mut g = solution.psi.clone();
    let mut terms = Vec::with_capacity(p_max + 1);
    for p in 0..=p_max {
        if p > 0 {
            g = q * &g;
        }
        let mean: f64 = g.iter().zip(nu.iter()).map(|(v, w)| w * v.abs().powf(1.5)).sum();
        terms.push(mean.powf(2.0 / 3.0));
    }
    let total = terms.iter().sum();
    let (ps, logs): (Vec<f64>, Vec<f64>) = terms
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > 1e-14)
        .map(|(p, a)| (p as f64, a.ln()))
        .unzip();
    let decay_ratio = (ps.len() >= 2).then(|| crate::stats::linear_fit(&ps, &logs).slope.exp());
    H2Series {
        terms,
        total,
        decay_ratio,
    }
}

/// Stationary autocovariances `γ(h) = ν(ξ · Qʰξ)` for `h = 0..=h_max`.
pub fn autocovariances(chain: &FiniteChain, h_max: usize) -> Vec<f64> {
    let xi = chain.observable();
    let nu_xi = xi.component_mul(chain.stationary());
    let mut g = xi.clone();
    let mut out = Vec::with_capacity(h_max + 1);
    for h in 0..=h_max {
        if h > 0 {
            g = chain.kernel() * &g;
        }
        out.push(nu_xi.dot(&g));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceConsistency {
    /// Exact `Var_ν(Sₙ)/n`.
    pub var_over_n: f64,
    /// `var_over_n / σ²`, absent when σ² is degenerate.
    pub ratio: Option<f64>,
}

pub fn variance_consistency(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    n: usize,
) -> Result<VarianceConsistency> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let gamma = autocovariances(chain, n - 1);
    let nf = n as f64;
    let var_over_n = gamma[0]
        + 2.0
            * gamma
                .iter()
                .enumerate()
                .skip(1)
                .map(|(h, g)| (1.0 - h as f64 / nf) * g)
                .sum::<f64>();
    let ratio = solution
        .require_variance()
        .ok()
        .map(|s2| var_over_n / s2);
    Ok(VarianceConsistency { var_over_n, ratio })
}

/// JSON payload of the `poisson` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonReport {
    pub sigma2: f64,
    pub psi_l_inf: f64,
    pub h2_terms: Vec<f64>,
    pub h2_total: f64,
}

impl PoissonReport {
    pub fn new(solution: &PoissonSolution, h2: &H2Series) -> Self {
        Self {
            sigma2: solution.sigma2,
            psi_l_inf: solution.psi.amax(),
            h2_terms: h2.terms.clone(),
            h2_total: h2.total,
        }
    }
}
