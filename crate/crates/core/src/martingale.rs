//! Martingale reduction of `Sₙ` and the three-term split of the
//! characteristic function of the normalized martingale.
//!
//! With `Uₖ = ξ̌(Xₖ) − Qξ̌(Xₖ₋₁)`, `Tₙ = ΣUₖ` and `Vₙ = Qξ̌(X₀) − Qξ̌(Xₙ)`,
//! `Sₙ = Tₙ + Vₙ`. Everything below works with `Ûₖ = Uₖ/σ` and
//! `ψ̂ = ψ/σ²`, so that `E_ν[Û₁²] = 1`.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::poisson::{solve_centered, PoissonSolution};
use crate::sim::{PathSample, PathStates};

/// `M(θ)[x][y] = Q[x][y] e^{iθ(ξ̌(y) − Qξ̌(x))/σ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairKernel {
    pub theta: f64,
    pub matrix: CMatrix,
}

/// Normalized increment `(ξ̌(y) − Qξ̌(x))/σ` for the transition `x → y`.
fn increment(solution: &PoissonSolution, sigma: f64, x: usize, y: usize) -> f64 {
    (solution.xi_check[y] - solution.q_xi_check[x]) / sigma
}

pub fn pair_kernel(chain: &FiniteChain, solution: &PoissonSolution, theta: f64) -> Result<PairKernel> {
    let sigma = solution.require_variance()?.sqrt();
    let q = chain.kernel();
    let matrix = CMatrix::from_fn(q.nrows(), q.ncols(), |x, y| {
        Complex64::from_polar(q[(x, y)], theta * increment(solution, sigma, x, y))
    });
    Ok(PairKernel { theta, matrix })
}

fn nu_row(chain: &FiniteChain) -> CVector {
    chain.stationary().map(|p| Complex64::new(p, 0.0))
}

/// `E_ν[e^{iθT̂ₙ}] = ν M(θ)ⁿ 1`.
pub fn pair_charfn(chain: &FiniteChain, solution: &PoissonSolution, theta: f64, n: usize) -> Result<Complex64> {
    let m = pair_kernel(chain, solution, theta)?;
    let row = linalg::row_times(&nu_row(chain), &linalg::mat_pow(&m.matrix, n as u64));
    Ok(row.sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleIdentity {
    pub t_n: f64,
    pub v_n: f64,
    /// `max_k |S_k − T_k − V_k|` along the path.
    pub max_violation: f64,
}

/// Unnormalized decomposition `Sₙ = Tₙ + Vₙ` along a finite-chain path.
pub fn martingale_identity(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    path: &PathSample,
) -> Result<MartingaleIdentity> {
    let states = match &path.states {
        PathStates::Indices(s) => s,
        PathStates::Vectors(_) => {
            return Err(Error::InvalidArgument(
                "martingale identity needs a finite-chain path".into(),
            ))
        }
    };
    let s = chain.states();
    if let Some(&bad) = states.iter().find(|x| **x >= s) {
        return Err(Error::IndexOutOfRange { index: bad, states: s });
    }
    if states.is_empty() || path.partial_sums.len() + 1 != states.len() {
        return Err(Error::DimensionMismatch {
            expected: path.partial_sums.len() + 1,
            got: states.len(),
        });
    }
    let xc = &solution.xi_check;
    let qxc = &solution.q_xi_check;
    let mut t_n = 0.0;
    let mut v_n = 0.0;
    let mut max_violation: f64 = 0.0;
    for k in 1..states.len() {
        t_n += xc[states[k]] - qxc[states[k - 1]];
        v_n = qxc[states[0]] - qxc[states[k]];
        max_violation = max_violation.max((path.partial_sums[k - 1] - t_n - v_n).abs());
    }
    Ok(MartingaleIdentity {
        t_n,
        v_n,
        max_violation,
    })
}

/// `w(x) = E[Û₁² | X₀ = x] − 1`, computed from the pair increments.
pub fn conditional_w(chain: &FiniteChain, solution: &PoissonSolution) -> Result<DVector<f64>> {
    let sigma = solution.require_variance()?.sqrt();
    let q = chain.kernel();
    let s = chain.states();
    Ok(DVector::from_fn(s, |x, _| {
        (0..s)
            .map(|y| q[(x, y)] * increment(solution, sigma, x, y).powi(2))
            .sum::<f64>()
            - 1.0
    }))
}

/// `max_{x, lag ≤ max_lag} |(Q^lag w)(x) − (Q^lag ψ̂)(x)|`.
pub fn lemma41_check(chain: &FiniteChain, solution: &PoissonSolution, max_lag: usize) -> Result<f64> {
    let mut w = conditional_w(chain, solution)?;
    let mut psi_hat = solution.psi_hat()?;
    let q = chain.kernel();
    let mut worst: f64 = 0.0;
    for lag in 0..=max_lag {
        if lag > 0 {
            w = q * &w;
            psi_hat = q * &psi_hat;
        }
        worst = worst.max((&w - &psi_hat).amax());
    }
    Ok(worst)
}

/// `Z′ = Σ_p Qᵖψ̂`, the ν-centered solution of `(I − Q)Z′ = ψ̂`.
pub fn z_prime(chain: &FiniteChain, solution: &PoissonSolution) -> Result<DVector<f64>> {
    let mut psi_hat = solution.psi_hat()?;
    let shift = chain.nu_mean(&psi_hat);
    psi_hat.add_scalar_mut(-shift);
    solve_centered(chain, &psi_hat)
}

/// `E_ν[|Û₁|³]`.
pub fn increment_third_moment(chain: &FiniteChain, solution: &PoissonSolution) -> Result<f64> {
    let sigma = solution.require_variance()?.sqrt();
    let q = chain.kernel();
    let nu = chain.stationary();
    let s = chain.states();
    Ok((0..s)
        .map(|x| {
            nu[x]
                * (0..s)
                    .map(|y| q[(x, y)] * increment(solution, sigma, x, y).abs().powi(3))
                    .sum::<f64>()
        })
        .sum())
}

/// `E[e^{i(t/√n)T̂ₙ}] − e^{−t²/2} = A + B + C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharfnDecomposition {
    pub t: f64,
    pub n: usize,
    pub total: Complex64,
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
}

impl CharfnDecomposition {
    pub fn residual(&self) -> f64 {
        (self.total - (self.a + self.b + self.c)).norm()
    }
}

/// `u(ix) = e^{ix} − 1 − ix + x²/2`, summed as a Taylor series for `|x| < 1`
/// where the closed form cancels badly.
pub fn u_remainder(x: f64) -> Complex64 {
    if x.abs() < 1.0 {
        let ix = Complex64::new(0.0, x);
        let mut term = ix * ix * ix / 6.0;
        let mut sum = term;
        for k in 4..=24 {
            term *= ix / k as f64;
            sum += term;
        }
        sum
    } else {
        Complex64::from_polar(1.0, x) - Complex64::new(1.0 - x * x / 2.0, x)
    }
}

pub fn abc_decomposition(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    t: f64,
    n: usize,
) -> Result<CharfnDecomposition> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let sigma = solution.require_variance()?.sqrt();
    let nf = n as f64;
    let theta = t / nf.sqrt();
    let m = pair_kernel(chain, solution, theta)?;
    let psi_hat = solution.psi_hat()?.map(|v| Complex64::new(v, 0.0));
    let q = chain.kernel();
    let s = chain.states();
    let beta = CVector::from_fn(s, |x, _| {
        (0..s)
            .map(|y| u_remainder(theta * increment(solution, sigma, x, y)) * q[(x, y)])
            .sum::<Complex64>()
    });
    let r = 1.0 - t * t / (2.0 * nf);
    // rows[m] = ν M^m for m = 0..=n
    let mut row = nu_row(chain);
    let mut b_terms = Vec::with_capacity(n);
    let mut c_terms = Vec::with_capacity(n);
    for _ in 0..n {
        b_terms.push(linalg::pair(&row, &beta));
        c_terms.push(linalg::pair(&row, &psi_hat));
        row = linalg::row_times(&row, &m.matrix);
    }
    let gauss = (-t * t / 2.0).exp();
    let total = row.sum() - gauss;
    // term k pairs with ν M^{n−k−1}
    let mut b = Complex64::new(0.0, 0.0);
    let mut c = Complex64::new(0.0, 0.0);
    let mut rk = 1.0;
    for k in 0..n {
        b += b_terms[n - k - 1] * rk;
        c += c_terms[n - k - 1] * rk;
        rk *= r;
    }
    c *= -(t * t) / (2.0 * nf);
    let a = Complex64::new(r.powi(n as i32) - gauss, 0.0);
    Ok(CharfnDecomposition { t, n, total, a, b, c })
}

/// `k` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..k)
                .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
                .collect()
        }
    }
}

/// Smallest `t` of the ratio scans.
pub const RATIO_T_MIN: f64 = 1e-2;

/// Scan grid `(0, √n]` used by the ratio tables.
pub fn ratio_grid(n: usize, t_per_n: usize) -> Vec<f64> {
    let hi = (n as f64).sqrt();
    log_grid(RATIO_T_MIN.min(hi), hi, t_per_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: usize,
    pub t_at_max: f64,
    pub ratio: f64,
}

/// `R(n) = max_t |E[e^{itT̂ₙ/√n}] − e^{−t²/2}|·√n/|t|` on [`ratio_grid`].
pub fn prop41_ratio(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    n_grid: &[usize],
    t_per_n: usize,
) -> Result<Vec<RatioRow>> {
    solution.require_variance()?;
    n_grid
        .par_iter()
        .map(|&n| {
            let nf = (n as f64).sqrt();
            let mut best = RatioRow {
                n,
                t_at_max: 0.0,
                ratio: 0.0,
            };
            for t in ratio_grid(n, t_per_n) {
                let total = pair_charfn(chain, solution, t / nf, n)? - (-t * t / 2.0).exp();
                let ratio = total.norm() * nf / t;
                if ratio > best.ratio {
                    best.ratio = ratio;
                    best.t_at_max = t;
                }
            }
            Ok(best)
        })
        .collect()
}

/// One CSV row of the `martingale` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRow {
    pub n: usize,
    pub t: f64,
    pub re_total: f64,
    pub im_total: f64,
    pub re_a: f64,
    pub re_b: f64,
    pub re_c: f64,
    pub ratio: f64,
}

pub fn martingale_rows(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    n_grid: &[usize],
    t_per_n: usize,
) -> Result<Vec<MartingaleRow>> {
    let points: Vec<(usize, f64)> = n_grid
        .iter()
        .flat_map(|&n| ratio_grid(n, t_per_n).into_iter().map(move |t| (n, t)))
        .collect();
    points
        .par_iter()
        .map(|&(n, t)| {
            let d = abc_decomposition(chain, solution, t, n)?;
            Ok(MartingaleRow {
                n,
                t,
                re_total: d.total.re,
                im_total: d.total.im,
                re_a: d.a.re,
                re_b: d.b.re,
                re_c: d.c.re,
                ratio: d.total.norm() * (n as f64).sqrt() / t,
            })
        })
        .collect()
}
