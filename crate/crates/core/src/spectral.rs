//! Fourier kernels `Q(t)`, their perturbed dominant spectral triple and the
//! numerical checks around it.
//!
//! `Q(t)(x, y) = Q(x, y) e^{itξ(y)}`. Near `t = 0` the kernel keeps a simple
//! dominant eigenvalue `λ(t)` and splits as
//!
//! ```text
//! Q(t)ⁿ f = λ(t)ⁿ ⟨φ(t), f⟩ v(t) + N(t)ⁿ f
//! ```
//!
//! with `⟨ν, v(t)⟩ = ⟨φ(t), v(t)⟩ = 1`, `φ(t) N(t) = 0`, `N(t) v(t) = 0`.
//! The normalization against ν fixes the eigenvector phase so that
//! `t ↦ (λ, v, φ)` is continuous.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::poisson::PoissonSolution;
use crate::stats;

/// Smallest accepted separation `|λ₁| − |λ₂|` by default.
pub const DEFAULT_GAP_MIN: f64 = 1e-6;
/// Condition number above which a resolvent is treated as singular.
pub const RESOLVENT_COND_MAX: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Half-width of the admissible interval J; `None` disables the check.
    pub t_max: Option<f64>,
    pub gap_min: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            t_max: None,
            gap_min: DEFAULT_GAP_MIN,
        }
    }
}

impl SpectralConfig {
    /// `J = [−0.5/σ, 0.5/σ]`.
    pub fn for_variance(sigma2: f64) -> Self {
        Self {
            t_max: (sigma2 > 0.0).then(|| 0.5 / sigma2.sqrt()),
            gap_min: DEFAULT_GAP_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierKernel {
    pub t: f64,
    pub matrix: CMatrix,
}

pub fn fourier_kernel(chain: &FiniteChain, t: f64) -> FourierKernel {
    let xi = chain.observable();
    let phases: Vec<Complex64> = xi.iter().map(|x| Complex64::from_polar(1.0, t * x)).collect();
    let q = chain.kernel();
    let matrix = CMatrix::from_fn(q.nrows(), q.ncols(), |i, j| phases[j] * q[(i, j)]);
    FourierKernel { t, matrix }
}

/// Dominant eigen-data of `Q(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTriple {
    pub t: f64,
    pub lambda: Complex64,
    pub v: CVector,
    pub phi: CVector,
    pub remainder: CMatrix,
    /// `|λ(t)|` minus the modulus of the next eigenvalue.
    pub gap: f64,
}

impl SpectralTriple {
    /// Largest deviation among the identities the triple must satisfy:
    /// eigen-equation, both normalizations, and `φN = 0`, `Nv = 0`.
    pub fn identity_defects(&self, kernel: &FourierKernel, nu: &DVector<f64>) -> [f64; 5] {
        let nu_c = nu.map(|x| Complex64::new(x, 0.0));
        [
            linalg::sup_norm(&(&kernel.matrix * &self.v - &self.v * self.lambda)),
            (linalg::pair(&self.phi, &self.v) - 1.0).norm(),
            (linalg::pair(&nu_c, &self.v) - 1.0).norm(),
            linalg::sup_norm(&linalg::row_times(&self.phi, &self.remainder)),
            linalg::sup_norm(&(&self.remainder * &self.v)),
        ]
    }
}

fn check_interval(t: f64, cfg: &SpectralConfig) -> Result<()> {
    if let Some(t_max) = cfg.t_max {
        if t.abs() > t_max * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "|t| = {} lies outside the interval J = [-{t_max}, {t_max}]",
                t.abs()
            )));
        }
    }
    Ok(())
}

pub fn dominant_triple(
    kernel: &FourierKernel,
    chain: &FiniteChain,
    cfg: &SpectralConfig,
) -> Result<SpectralTriple> {
    check_interval(kernel.t, cfg)?;
    let m = &kernel.matrix;
    let s = m.nrows();
    let ev = linalg::eigenvalues(m)?;
    let next = ev.get(1).map(|z| z.norm()).unwrap_or(0.0);
    let gap = ev[0].norm() - next;
    if gap < cfg.gap_min {
        return Err(Error::AmbiguousDominant { t: kernel.t, gap });
    }
    let lambda0 = ev[0];
    let shifted = m - CMatrix::identity(s, s) * lambda0;
    let v_raw = linalg::null_vector(&shifted)?;
    let phi_raw = linalg::null_vector(&shifted.transpose())?;

    let nu = chain.stationary();
    let nv: Complex64 = v_raw.iter().zip(nu.iter()).map(|(a, w)| a * w).sum();
    if nv.norm() < 1e-8 * v_raw.norm() {
        return Err(Error::NormalizationFailure { t: kernel.t });
    }
    let v = v_raw / nv;
    let pv = linalg::pair(&phi_raw, &v);
    if pv.norm() < 1e-12 {
        return Err(Error::NormalizationFailure { t: kernel.t });
    }
    let phi = phi_raw / pv;
    // Rayleigh quotient with the biorthogonal pair
    let lambda = linalg::pair(&phi, &(m * &v));
    let remainder = m - (&v * phi.transpose()) * lambda;
    Ok(SpectralTriple {
        t: kernel.t,
        lambda,
        v,
        phi,
        remainder,
        gap,
    })
}

/// Convenience: triple at parameter `t`.
pub fn triple_at(chain: &FiniteChain, t: f64, cfg: &SpectralConfig) -> Result<SpectralTriple> {
    dominant_triple(&fourier_kernel(chain, t), chain, cfg)
}

fn random_vectors(states: usize, trials: usize, seed: u64) -> Vec<CVector> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            CVector::from_fn(states, |_, _| {
                Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
            })
        })
        .collect()
}

/// `max_{n ≤ n_max, f} ||Q(t)ⁿf − λⁿ⟨φ,f⟩v − N(t)ⁿf||_∞ / ||f||_∞` over
/// `trials` seeded random vectors.
pub fn decomposition_residual(
    chain: &FiniteChain,
    t: f64,
    n_max: usize,
    cfg: &SpectralConfig,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let kernel = fourier_kernel(chain, t);
    let triple = dominant_triple(&kernel, chain, cfg)?;
    let mut worst: f64 = 0.0;
    for f in random_vectors(chain.states(), trials, seed) {
        let norm_f = linalg::sup_norm(&f);
        let coeff = linalg::pair(&triple.phi, &f);
        let mut direct = f.clone();
        let mut rem = f.clone();
        let mut lambda_n = Complex64::new(1.0, 0.0);
        for _ in 1..=n_max {
            direct = &kernel.matrix * &direct;
            rem = &triple.remainder * &rem;
            lambda_n *= triple.lambda;
            let split = &triple.v * (lambda_n * coeff) + &rem;
            worst = worst.max(linalg::sup_norm(&(&direct - split)) / norm_f);
        }
    }
    Ok(worst)
}

/// Default contour around the unit eigenvalue of `Q`: center 1, radius half
/// the distance from 1 to the nearest other eigenvalue.
pub fn default_contour(chain: &FiniteChain) -> (Complex64, f64) {
    let one = Complex64::new(1.0, 0.0);
    let mut dists: Vec<f64> = chain.spectrum().iter().map(|z| (one - z).norm()).collect();
    dists.sort_by(f64::total_cmp);
    let radius = dists.get(1).copied().unwrap_or(1.0) / 2.0;
    (one, radius)
}

/// Trapezoid quadrature of `(1/2πi) ∮ (z − Q(t))⁻¹ dz` on a circle.
pub fn contour_projector(
    chain: &FiniteChain,
    t: f64,
    center: Complex64,
    radius: f64,
    m: usize,
) -> Result<CMatrix> {
    if m < 16 {
        return Err(Error::InvalidArgument(format!("need at least 16 nodes, got {m}")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("contour radius must be positive".into()));
    }
    let kernel = fourier_kernel(chain, t);
    let s = chain.states();
    let mut proj = CMatrix::zeros(s, s);
    for j in 0..m {
        let dir = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64);
        let z = center + dir * radius;
        let resolvent_arg = CMatrix::identity(s, s) * z - &kernel.matrix;
        let condition = linalg::condition_number(&resolvent_arg);
        if condition > RESOLVENT_COND_MAX {
            return Err(Error::EigenvalueOnContour { condition });
        }
        let inv = resolvent_arg
            .try_inverse()
            .ok_or(Error::EigenvalueOnContour {
                condition: f64::INFINITY,
            })?;
        proj += inv * (dir * radius / m as f64);
    }
    let enclosed = proj.trace().re.round() as i64;
    if enclosed != 1 {
        return Err(Error::EnclosureViolation { enclosed });
    }
    Ok(proj)
}

/// `sup_f ν(|(z − Q(t))⁻¹f − (z − Q)⁻¹f|)` over seeded extreme points of the
/// W-unit ball, `f(y) = W(y) e^{iθ_y}`.
pub fn resolvent_perturbation(
    chain: &FiniteChain,
    z: Complex64,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let s = chain.states();
    let base = CMatrix::identity(s, s) * z - linalg::to_complex(chain.kernel());
    let shifted = CMatrix::identity(s, s) * z - fourier_kernel(chain, t).matrix;
    for m in [&base, &shifted] {
        if linalg::condition_number(m) > RESOLVENT_COND_MAX {
            return Err(Error::SingularResolvent);
        }
    }
    let base_lu = base.lu();
    let shifted_lu = shifted.lu();
    let nu = chain.stationary();
    let w = chain.weight();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let f = CVector::from_fn(s, |y, _| Complex64::from_polar(w[y], 2.0 * PI * rng.random::<f64>()));
        let a = shifted_lu.solve(&f).ok_or(Error::SingularResolvent)?;
        let b = base_lu.solve(&f).ok_or(Error::SingularResolvent)?;
        let value: f64 = (a - b).iter().zip(nu.iter()).map(|(d, p)| p * d.norm()).sum();
        worst = worst.max(value);
    }
    Ok(worst)
}

/// Fitted exponent `e` in `resolvent_perturbation(t) ≈ C|t|^e`.
pub fn resolvent_exponent(
    chain: &FiniteChain,
    z: Complex64,
    t_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let values = t_grid
        .iter()
        .map(|t| resolvent_perturbation(chain, z, *t, trials, seed))
        .collect::<Result<Vec<_>>>()?;
    stats::power_law_exponent(t_grid, &values, 0.0)
        .map(|(e, _)| e)
        .ok_or_else(|| Error::InvalidArgument("need two nonzero grid points".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaExpansion {
    /// `−2 Re c₂`, to be compared with σ².
    pub second_deriv: f64,
    /// `Im c₃` (c₃ is purely imaginary for real observables).
    pub third_order_coeff: f64,
    pub residuals: Vec<f64>,
}

/// Least-squares fit `λ(u) ≈ 1 + c₂u² + c₃u³ + c₄u⁴` with complex
/// coefficients on a grid excluding 0.
pub fn lambda_expansion(
    chain: &FiniteChain,
    solution: &PoissonSolution,
    u_grid: &[f64],
    cfg: &SpectralConfig,
) -> Result<LambdaExpansion> {
    solution.require_variance()?;
    if u_grid.len() < 3 || u_grid.contains(&0.0) {
        return Err(Error::InvalidArgument(
            "u grid needs at least three nonzero points".into(),
        ));
    }
    let lambdas = u_grid
        .iter()
        .map(|u| triple_at(chain, *u, cfg).map(|tr| tr.lambda))
        .collect::<Result<Vec<_>>>()?;
    let k = u_grid.len();
    let design = nalgebra::DMatrix::from_fn(k, 3, |i, j| u_grid[i].powi(j as i32 + 2));
    let y_re = DVector::from_iterator(k, lambdas.iter().map(|l| l.re - 1.0));
    let y_im = DVector::from_iterator(k, lambdas.iter().map(|l| l.im));
    let svd = design.clone().svd(true, true);
    let c_re = svd.solve(&y_re, 1e-300).map_err(|e| Error::SingularSystem(e.to_string()))?;
    let c_im = svd.solve(&y_im, 1e-300).map_err(|e| Error::SingularSystem(e.to_string()))?;
    let fit_re = &design * &c_re;
    let fit_im = &design * &c_im;
    let residuals = (0..k)
        .map(|i| Complex64::new(y_re[i] - fit_re[i], y_im[i] - fit_im[i]).norm())
        .collect();
    Ok(LambdaExpansion {
        second_deriv: -2.0 * c_re[0],
        third_order_coeff: c_im[1],
        residuals,
    })
}

/// `sup_{t ≠ 0} ν(|e^{itξ} − 1| W) / |t|`.
pub fn h3_check(chain: &FiniteChain, t_grid: &[f64]) -> f64 {
    let nu = chain.stationary();
    let w = chain.weight();
    let xi = chain.observable();
    t_grid
        .iter()
        .filter(|t| **t != 0.0)
        .map(|t| {
            let s: f64 = (0..chain.states())
                .map(|x| nu[x] * (Complex64::from_polar(1.0, t * xi[x]) - 1.0).norm() * w[x])
                .sum();
            s / t.abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H4Bound {
    pub c: f64,
    pub kappa: f64,
}

/// Uniform constants in `||Q(t)ⁿf||_W ≤ Cκⁿ||f||_W + Cν(|f|)` over the grid,
/// with `κ` one notch above the largest subdominant modulus.
pub fn h4_uniform_bound(chain: &FiniteChain, t_grid: &[f64], n_max: usize) -> Result<H4Bound> {
    let mut kappa: f64 = 0.0;
    for &t in t_grid {
        let ev = linalg::eigenvalues(&fourier_kernel(chain, t).matrix)?;
        let k = ev.get(1).map(|z| z.norm()).unwrap_or(0.0) + 1e-6;
        if k >= 1.0 - 1e-9 {
            return Err(Error::ContractionFailure { t, kappa: k });
        }
        kappa = kappa.max(k);
    }
    let w = chain.weight();
    let nu = chain.stationary();
    let s = chain.states();
    let mut c: f64 = 0.0;
    for &t in t_grid {
        let m = fourier_kernel(chain, t).matrix;
        let mut power = m.clone();
        for n in 1..=n_max {
            if n > 1 {
                power = &power * &m;
            }
            let kn = kappa.powi(n as i32);
            for y in 0..s {
                let lhs = (0..s).map(|x| power[(x, y)].norm() / w[x]).fold(0.0, f64::max);
                c = c.max(lhs / (kn / w[y] + nu[y]));
            }
        }
    }
    Ok(H4Bound { c, kappa })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeblinCertificate {
    pub ell: usize,
    /// `max_x W(x)⁻¹ Σ_y |Q^ℓ(x,y) − ν(y)| W(y)`, at most 1/2.
    pub contraction: f64,
    /// `(3/4)^{1/ℓ}`.
    pub bound: f64,
    /// Fractional-knapsack relaxation over sets.
    pub worst_set_value: f64,
    /// Exact maximum over sets; never above `worst_set_value`.
    pub exact_set_value: f64,
    /// State and set attaining `exact_set_value`.
    pub worst_state: usize,
    pub worst_set: Vec<usize>,
}

pub const DOEBLIN_MAX_POWER: usize = 64;

/// Smallest `ℓ` halving the centered kernel in W-operator norm, and the
/// maximum of `Q̃^ℓ(x, A)` over states `x` and sets `A` with
/// `ν̃(A) ≤ 1/(4ν(W))`, both relaxed and exact.
pub fn doeblin_ess_bound(chain: &FiniteChain) -> Result<DoeblinCertificate> {
    let q = chain.kernel();
    let nu = chain.stationary();
    let w = chain.weight();
    let s = chain.states();
    let mut power = q.clone();
    let mut found = None;
    for ell in 1..=DOEBLIN_MAX_POWER {
        if ell > 1 {
            power = &power * q;
        }
        let op = (0..s)
            .map(|x| (0..s).map(|y| (power[(x, y)] - nu[y]).abs() * w[y]).sum::<f64>() / w[x])
            .fold(0.0, f64::max);
        if op <= 0.5 {
            found = Some((ell, op));
            break;
        }
    }
    let (ell, contraction) = found.ok_or(Error::NoContractingPower {
        max_power: DOEBLIN_MAX_POWER,
    })?;
    let nu_w: f64 = nu.dot(w);
    let capacity = 1.0 / (4.0 * nu_w);
    let item_weight: Vec<f64> = (0..s).map(|y| nu[y] * w[y] / nu_w).collect();
    let mut worst_set_value: f64 = 0.0;
    let mut exact_set_value = 0.0;
    let mut worst_state = 0;
    let mut worst_set = Vec::new();
    for x in 0..s {
        let values: Vec<f64> = (0..s).map(|y| power[(x, y)] * w[y] / w[x]).collect();
        worst_set_value = worst_set_value.max(fractional_knapsack(&values, &item_weight, capacity));
        let set = best_subset(&values, &item_weight, capacity);
        let value: f64 = set.iter().map(|&y| values[y]).sum();
        if value > exact_set_value {
            exact_set_value = value;
            worst_state = x;
            worst_set = set;
        }
    }
    Ok(DoeblinCertificate {
        ell,
        contraction,
        bound: 0.75f64.powf(1.0 / ell as f64),
        worst_set_value,
        exact_set_value,
        worst_state,
        worst_set,
    })
}

/// Slack allowed when comparing a set's weight with the capacity.
pub const SET_WEIGHT_TOL: f64 = 1e-12;

/// Greedy optimum of the fractional knapsack (items by value density).
fn fractional_knapsack(values: &[f64], weights: &[f64], capacity: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| density(values, weights, b).total_cmp(&density(values, weights, a)));
    let mut room = capacity;
    let mut total = 0.0;
    for i in order {
        if room <= 0.0 {
            break;
        }
        if weights[i] <= room {
            total += values[i];
            room -= weights[i];
        } else {
            total += values[i] * room / weights[i];
            room = 0.0;
        }
    }
    total
}

fn density(values: &[f64], weights: &[f64], i: usize) -> f64 {
    if weights[i] > 0.0 {
        values[i] / weights[i]
    } else {
        f64::INFINITY
    }
}

/// Exact 0/1 knapsack by branch and bound; returns the chosen indices in
/// increasing order.
fn best_subset(values: &[f64], weights: &[f64], capacity: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    order.sort_by(|&a, &b| density(values, weights, b).total_cmp(&density(values, weights, a)));
    let v: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let wt: Vec<f64> = order.iter().map(|&i| weights[i]).collect();

    struct Search<'a> {
        v: &'a [f64],
        w: &'a [f64],
        cap: f64,
        best: f64,
        best_set: Vec<bool>,
        current: Vec<bool>,
    }

    impl Search<'_> {
        fn go(&mut self, k: usize, used: f64, value: f64) {
            if value > self.best {
                self.best = value;
                self.best_set.clone_from(&self.current);
            }
            if k == self.v.len() {
                return;
            }
            let room = (self.cap + SET_WEIGHT_TOL - used).max(0.0);
            if value + fractional_knapsack(&self.v[k..], &self.w[k..], room) <= self.best {
                return;
            }
            if used + self.w[k] <= self.cap + SET_WEIGHT_TOL {
                self.current[k] = true;
                self.go(k + 1, used + self.w[k], value + self.v[k]);
                self.current[k] = false;
            }
            self.go(k + 1, used, value);
        }
    }

    let mut search = Search {
        v: &v,
        w: &wt,
        cap: capacity,
        best: 0.0,
        best_set: vec![false; v.len()],
        current: vec![false; v.len()],
    };
    search.go(0, 0.0, 0.0);
    let mut set: Vec<usize> = order
        .iter()
        .zip(&search.best_set)
        .filter_map(|(&i, &chosen)| chosen.then_some(i))
        .collect();
    set.sort_unstable();
    set
}

/// One row of a `t`-scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub t: f64,
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub abs_lambda: f64,
    pub gap: f64,
    pub residual_d: f64,
    /// `ν(|v(t) − 1|)`.
    pub b1_value: f64,
    /// `|⟨φ(t), 1⟩ − 1|`.
    pub b2_value: f64,
    /// `max_{n ≤ n_max} ν(|N(t)ⁿ1|) / ρⁿ`.
    pub b3_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub n_max: usize,
    pub rho: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Scans the grid in parallel; rows come back in grid order.
pub fn spectral_scan(
    chain: &FiniteChain,
    t_grid: &[f64],
    cfg: &SpectralConfig,
    opts: &ScanOptions,
) -> Result<Vec<ScanRow>> {
    t_grid
        .par_iter()
        .map(|&t| scan_row(chain, t, cfg, opts))
        .collect()
}

fn scan_row(chain: &FiniteChain, t: f64, cfg: &SpectralConfig, opts: &ScanOptions) -> Result<ScanRow> {
    let triple = triple_at(chain, t, cfg)?;
    let residual_d = decomposition_residual(chain, t, opts.n_max, cfg, opts.trials, opts.seed)?;
    let nu = chain.stationary();
    let s = chain.states();
    let b1_value = (0..s).map(|x| nu[x] * (triple.v[x] - 1.0).norm()).sum();
    let b2_value = (triple.phi.sum() - 1.0).norm();
    let mut g = CVector::from_element(s, Complex64::new(1.0, 0.0));
    let mut b3_value: f64 = 0.0;
    for n in 1..=opts.n_max {
        g = &triple.remainder * &g;
        let v: f64 = (0..s).map(|x| nu[x] * g[x].norm()).sum();
        b3_value = b3_value.max(v / opts.rho.powi(n as i32));
    }
    Ok(ScanRow {
        t,
        re_lambda: triple.lambda.re,
        im_lambda: triple.lambda.im,
        abs_lambda: triple.lambda.norm(),
        gap: triple.gap,
        residual_d,
        b1_value,
        b2_value,
        b3_value,
    })
}

/// Fitted exponents of `|t|` for the b1, b2, b3 columns.
pub fn scan_exponents(rows: &[ScanRow]) -> [Option<f64>; 3] {
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let pick = |f: fn(&ScanRow) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        stats::power_law_exponent(&t, &v, 1e-13).map(|(e, _)| e)
    };
    [pick(|r| r.b1_value), pick(|r| r.b2_value), pick(|r| r.b3_value)]
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
        let q = DMatrix::from_element(2, 2, 0.5);
        build_chain(&q, &[1.0, -1.0], None).unwrap()
    }

    #[test]
    fn kernel_at_zero_is_q() {
        let chain = two_state();
        let k = fourier_kernel(&chain, 0.0);
        assert_eq!(k.matrix, linalg::to_complex(chain.kernel()));
        let k = fourier_kernel(&chain, 0.1);
        let expected = Complex64::from_polar(0.7, 0.1 * 3.0 / 7.0);
        assert!((k.matrix[(0, 0)] - expected).norm() < 1e-15);
        for i in 0..2 {
            let row: f64 = (0..2).map(|j| k.matrix[(i, j)].norm()).sum();
            assert!((row - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_observable_kernel_is_q() {
        let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        let chain = build_chain(&q, &[3.0, 3.0], None).unwrap();
        let k = fourier_kernel(&chain, 1.7);
        assert_eq!(k.matrix, linalg::to_complex(chain.kernel()));
        let tr = dominant_triple(&k, &chain, &SpectralConfig::default()).unwrap();
        assert!((tr.lambda - 1.0).norm() < 1e-14);
    }

    #[test]
    fn triple_at_zero() {
        let chain = two_state();
        let tr = triple_at(&chain, 0.0, &SpectralConfig::default()).unwrap();
        assert!((tr.lambda - 1.0).norm() < 1e-14);
        for x in 0..2 {
            assert!((tr.v[x] - 1.0).norm() < 1e-14);
            assert!((tr.phi[x] - chain.stationary()[x]).norm() < 1e-14);
        }
        let expected = linalg::to_complex(chain.kernel())
            - CMatrix::from_fn(2, 2, |_, j| Complex64::new(chain.stationary()[j], 0.0));
        assert!(linalg::mat_sup_norm(&(&tr.remainder - expected)) < 1e-14);
    }

    #[test]
    fn two_state_lambda_matches_quadratic_root() {
        let chain = two_state();
        let t = 0.05;
        let k = fourier_kernel(&chain, t);
        let (a, b, c, d) = (k.matrix[(0, 0)], k.matrix[(0, 1)], k.matrix[(1, 0)], k.matrix[(1, 1)]);
        let tr = a + d;
        let det = a * d - b * c;
        let disc = (tr * tr - det * 4.0).sqrt();
        let r1 = (tr + disc) / 2.0;
        let r2 = (tr - disc) / 2.0;
        let root = if r1.norm() > r2.norm() { r1 } else { r2 };
        let triple = dominant_triple(&k, &chain, &SpectralConfig::default()).unwrap();
        assert!((triple.lambda - root).norm() < 1e-12);
        let defects = triple.identity_defects(&k, chain.stationary());
        assert!(defects.iter().all(|d| *d < 1e-12), "{defects:?}");
    }

    #[test]
    fn interval_is_enforced() {
        let chain = two_state();
        let cfg = SpectralConfig {
            t_max: Some(0.1),
            ..Default::default()
        };
        assert!(triple_at(&chain, 0.2, &cfg).is_err());
        assert!(triple_at(&chain, -0.1, &cfg).is_ok());
    }

    #[test]
    fn permutation_kernel_is_ambiguous() {
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let chain = build_chain(&q, &[1.0, 0.0], None).unwrap();
        assert!(matches!(
            triple_at(&chain, 0.1, &SpectralConfig::default()),
            Err(Error::AmbiguousDominant { .. })
        ));
    }

    #[test]
    fn decomposition_residual_small() {
        let chain = two_state();
        let cfg = SpectralConfig::default();
        assert!(decomposition_residual(&chain, 0.0, 20, &cfg, 5, 1).unwrap() <= 1e-12);
        assert!(decomposition_residual(&chain, 0.3, 1, &cfg, 5, 1).unwrap() <= 1e-13);
        assert!(decomposition_residual(&chain, 0.3, 30, &cfg, 5, 1).unwrap() <= 1e-9);
    }

    #[test]
    fn contour_projector_at_zero_is_stationary_projection() {
        let chain = two_state();
        let (center, radius) = default_contour(&chain);
        assert!((radius - 0.35).abs() < 1e-12);
        let proj = contour_projector(&chain, 0.0, center, radius, 64).unwrap();
        let expected = CMatrix::from_fn(2, 2, |_, j| Complex64::new(chain.stationary()[j], 0.0));
        assert!(linalg::mat_sup_norm(&(&proj - expected)) < 1e-10);
        assert!((proj.trace() - 1.0).norm() < 1e-8);
    }

    #[test]
    fn contour_projector_matches_triple() {
        let chain = two_state();
        let (center, radius) = default_contour(&chain);
        let proj = contour_projector(&chain, 0.05, center, radius, 128).unwrap();
        let tr = triple_at(&chain, 0.05, &SpectralConfig::default()).unwrap();
        let outer = &tr.v * tr.phi.transpose();
        assert!(linalg::mat_sup_norm(&(&proj - &outer)) < 1e-9);
        assert!(linalg::mat_sup_norm(&(&proj * &proj - &proj)) < 1e-8);
    }

    #[test]
    fn contour_errors() {
        let chain = two_state();
        assert!(matches!(
            contour_projector(&chain, 0.0, Complex64::new(0.5, 0.0), 0.5, 32),
            Err(Error::EigenvalueOnContour { .. })
        ));
        assert!(matches!(
            contour_projector(&chain, 0.0, Complex64::new(0.6, 0.0), 0.5, 32),
            Err(Error::EnclosureViolation { enclosed: 2 })
        ));
        assert!(contour_projector(&chain, 0.0, Complex64::new(1.0, 0.0), 0.3, 8).is_err());
    }

    #[test]
    fn resolvent_perturbation_examples() {
        let chain = two_state();
        let z = Complex64::new(1.0, 0.25);
        assert_eq!(resolvent_perturbation(&chain, z, 0.0, 10, 3).unwrap(), 0.0);
        let e = resolvent_exponent(&chain, z, &[0.01, 0.02, 0.04], 20, 3).unwrap();
        assert!((0.95..=1.05).contains(&e), "exponent {e}");
        let flat = build_chain(chain.kernel(), &[2.0, 2.0], None).unwrap();
        assert_eq!(resolvent_perturbation(&flat, z, 0.3, 10, 3).unwrap(), 0.0);
    }

    #[test]
    fn lambda_expansion_iid_cosine() {
        let chain = iid_pm1();
        let sol = solve_poisson(&chain).unwrap();
        let grid: Vec<f64> = (1..=10).flat_map(|k| [k as f64 * 0.005, -(k as f64) * 0.005]).collect();
        let fit = lambda_expansion(&chain, &sol, &grid, &SpectralConfig::default()).unwrap();
        assert!((fit.second_deriv - 1.0).abs() < 1e-6);
        assert!(fit.third_order_coeff.abs() < 1e-8);
    }

    #[test]
    fn lambda_expansion_needs_variance() {
        let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        let chain = build_chain(&q, &[1.0, 1.0], None).unwrap();
        let sol = solve_poisson(&chain).unwrap();
        assert!(matches!(
            lambda_expansion(&chain, &sol, &[0.01, 0.02, -0.01], &SpectralConfig::default()),
            Err(Error::DegenerateVariance)
        ));
    }

    #[test]
    fn h3_examples() {
        let chain = two_state();
        let v = h3_check(&chain, &[0.1]);
        assert!(v <= 24.0 / 49.0 + 1e-12);
        let near = h3_check(&chain, &[1e-7]);
        assert!((near - 24.0 / 49.0).abs() < 1e-7);
        let flat = build_chain(chain.kernel(), &[1.0, 1.0], None).unwrap();
        assert_eq!(h3_check(&flat, &[0.1, 0.2]), 0.0);
    }

    #[test]
    fn h4_two_state() {
        let chain = two_state();
        let grid: Vec<f64> = (-6..=6).map(|k| k as f64 * 0.05).collect();
        let b = h4_uniform_bound(&chain, &grid, 30).unwrap();
        assert!(b.kappa <= 0.35, "{b:?}");
        assert!(b.c <= 10.0, "{b:?}");
        let at_zero = h4_uniform_bound(&chain, &[0.0], 30).unwrap();
        assert!((at_zero.kappa - 0.3 - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn h4_iid() {
        let chain = iid_pm1();
        let b = h4_uniform_bound(&chain, &[-0.2, 0.0, 0.2], 10).unwrap();
        assert!(b.kappa <= 2e-6);
        assert!(b.c.is_finite());
    }

    #[test]
    fn doeblin_examples() {
        let cert = doeblin_ess_bound(&iid_pm1()).unwrap();
        assert_eq!(cert.ell, 1);
        assert!(cert.worst_set_value <= 0.25 + 1e-15);
        let cert = doeblin_ess_bound(&two_state()).unwrap();
        assert_eq!(cert.ell, 1);
        assert!(cert.contraction <= 0.5);
        assert!(cert.worst_set_value <= 0.75 + 1e-12);
        // ν = (4/7, 3/7): no nonempty set fits under 1/4
        assert_eq!(cert.exact_set_value, 0.0);
        assert!(cert.worst_set.is_empty());
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let perm = build_chain(&q, &[1.0, 0.0], None).unwrap();
        assert!(matches!(doeblin_ess_bound(&perm), Err(Error::NoContractingPower { .. })));
    }

    #[test]
    fn knapsack_greedy() {
        assert_eq!(fractional_knapsack(&[1.0, 3.0], &[0.5, 0.5], 0.5), 3.0);
        assert_eq!(fractional_knapsack(&[1.0, 3.0], &[0.5, 0.5], 0.75), 3.5);
    }

    #[test]
    fn subset_search_is_exact() {
        assert_eq!(best_subset(&[1.0, 3.0], &[0.5, 0.5], 0.75), vec![1]);
        // greedy by density would take item 0 and stop
        assert_eq!(best_subset(&[0.6, 1.0, 1.0], &[0.1, 0.5, 0.5], 1.0), vec![1, 2]);
        assert!(best_subset(&[1.0, 1.0], &[0.6, 0.7], 0.5).is_empty());
        let vals = [0.3, 0.25, 0.2, 0.1, 0.15];
        let wts = [0.35, 0.3, 0.2, 0.05, 0.1];
        let mut best: f64 = 0.0;
        for mask in 0u32..32 {
            let (v, w) = (0..5).filter(|i| mask >> i & 1 == 1).fold((0.0, 0.0), |a, i| (a.0 + vals[i], a.1 + wts[i]));
            if w <= 0.5 + SET_WEIGHT_TOL {
                best = best.max(v);
            }
        }
        let got: f64 = best_subset(&vals, &wts, 0.5).iter().map(|&i| vals[i]).sum();
        assert!((got - best).abs() < 1e-15);
    }

    #[test]
    fn scan_rows_and_exponents() {
        let chain = two_state();
        let opts = ScanOptions {
            n_max: 20,
            rho: 0.4,
            trials: 3,
            seed: 9,
        };
        let grid = [0.01, 0.02, 0.04, 0.08];
        let rows = spectral_scan(&chain, &grid, &SpectralConfig::default(), &opts).unwrap();
        assert_eq!(rows.len(), 4);
        for (row, t) in rows.iter().zip(grid) {
            assert_eq!(row.t, t);
            assert!(row.abs_lambda <= 1.0);
            assert!(row.residual_d <= 1e-9);
        }
        for e in scan_exponents(&rows) {
            assert!(e.unwrap() >= 0.95);
        }
    }
}
