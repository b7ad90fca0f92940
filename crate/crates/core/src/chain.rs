//! Finite-state chains: construction, stationary law, geometric-ergodicity
//! constants and weighted sup norms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on row sums accepted at build time.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Entries above `-NEGATIVE_CLAMP` are treated as rounding noise and set to 0.
pub const NEGATIVE_CLAMP: f64 = 1e-15;
/// Distance to 1 under which an eigenvalue counts as a unit eigenvalue.
pub const UNIT_EIGEN_TOL: f64 = 1e-9;
/// Stationary masses at or below this are pruned from the state space.
pub const PRUNE_TOL: f64 = 1e-13;
/// Tolerance of the lattice detector.
pub const LATTICE_TOL: f64 = 1e-9;
/// Lattice sites are rejected beyond this many steps from the origin.
const LATTICE_MAX_SITE: i64 = 1 << 20;
/// Inflation applied to a defective second eigenvalue.
pub const DEFECTIVE_INFLATION: f64 = 1e-6;
/// Residuals below this multiple of `||f||_W` are indistinguishable from
/// rounding and are ignored when fitting certificate constants.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

/// JSON form of a chain: `{"kernel": [[...]], "observable": [...], "weight": [...]?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub kernel: Vec<Vec<f64>>,
    pub observable: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<f64>>,
}

impl ChainSpec {
    pub fn build(&self) -> Result<FiniteChain> {
        let n = self.kernel.len();
        for row in &self.kernel {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
        }
        let flat: Vec<f64> = self.kernel.iter().flatten().copied().collect();
        let kernel = DMatrix::from_row_slice(n, n, &flat);
        build_chain(&kernel, &self.observable, self.weight.as_deref())
    }
}

/// Observable values of the form `offset + step * sites[x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub offset: f64,
    pub step: f64,
    pub sites: Vec<i64>,
}

impl Lattice {
    pub fn span(&self) -> i64 {
        let max = self.sites.iter().copied().max().unwrap_or(0);
        let min = self.sites.iter().copied().min().unwrap_or(0);
        max - min
    }
}

/// A validated finite chain with its stationary law and centered observable.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    kernel: DMatrix<f64>,
    stationary: DVector<f64>,
    observable: DVector<f64>,
    weight: DVector<f64>,
    lattice: Option<Lattice>,
    spectrum: Vec<Complex64>,
    periodic: bool,
    raw_mean: f64,
    kept_states: Vec<usize>,
}

impl FiniteChain {
    pub fn states(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    /// The ν-centered observable.
    pub fn observable(&self) -> &DVector<f64> {
        &self.observable
    }

    pub fn weight(&self) -> &DVector<f64> {
        &self.weight
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    /// Eigenvalues of the kernel sorted by decreasing modulus.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// True when an eigenvalue other than 1 sits on the unit circle.
    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Stationary mean subtracted from the raw observable.
    pub fn raw_mean(&self) -> f64 {
        self.raw_mean
    }

    /// Indices (in the input kernel) of the states that survived pruning.
    pub fn kept_states(&self) -> &[usize] {
        &self.kept_states
    }

    /// `ν(f)` for a real function.
    pub fn nu_mean(&self, f: &DVector<f64>) -> f64 {
        self.stationary.dot(f)
    }

    /// Modulus of the largest eigenvalue other than the unit one.
    pub fn second_modulus(&self) -> f64 {
        second_modulus(&self.spectrum)
    }

    /// Same chain with a different weight function.
    pub fn with_weight(&self, weight: &[f64]) -> Result<FiniteChain> {
        let w = validate_weight(weight, self.states())?;
        let mut out = self.clone();
        out.weight = w;
        Ok(out)
    }
}

fn validate_weight(weight: &[f64], n: usize) -> Result<DVector<f64>> {
    if weight.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weight.len(),
        });
    }
    if let Some(bad) = weight.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "weight entries must be positive and finite, found {bad}"
        )));
    }
    Ok(DVector::from_column_slice(weight))
}

fn second_modulus(spectrum: &[Complex64]) -> f64 {
    let unit = spectrum
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - Complex64::new(1.0, 0.0))
                .norm()
                .total_cmp(&(b.1 - Complex64::new(1.0, 0.0)).norm())
        })
        .map(|(i, _)| i);
    spectrum
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != unit)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max)
}

/// Validates and normalizes a kernel, returning the cleaned matrix.
fn clean_kernel(kernel: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = kernel.nrows();
    if kernel.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: kernel.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("kernel has no states".into()));
    }
    let mut q = kernel.clone();
    for i in 0..n {
        for j in 0..n {
            let v = q[(i, j)];
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("kernel entry ({i}, {j}) is not finite")));
            }
            if v < -NEGATIVE_CLAMP {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            if v < 0.0 {
                q[(i, j)] = 0.0;
            }
        }
        let sum: f64 = q.row(i).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NonStochastic { row: i, sum });
        }
        q.row_mut(i).scale_mut(1.0 / sum);
    }
    Ok(q)
}

/// Stationary law of a row-stochastic kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub distribution: DVector<f64>,
    /// Set when the kernel has a non-unit eigenvalue on the unit circle.
    pub periodic: bool,
}

/// Solves `ν(Q − I) = 0`, `Σν = 1` as an overdetermined least-squares system.
pub fn stationary_distribution(kernel: &DMatrix<f64>) -> Result<Stationary> {
    let q = clean_kernel(kernel)?;
    let spectrum = linalg::eigenvalues_real(&q)?;
    stationary_with_spectrum(&q, &spectrum)
}

fn stationary_with_spectrum(q: &DMatrix<f64>, spectrum: &[Complex64]) -> Result<Stationary> {
    let n = q.nrows();
    let unit = spectrum
        .iter()
        .filter(|z| (*z - Complex64::new(1.0, 0.0)).norm() <= UNIT_EIGEN_TOL)
        .count();
    if unit > 1 {
        return Err(Error::ReducibleChain { count: unit });
    }
    let periodic = spectrum
        .iter()
        .filter(|z| (*z - Complex64::new(1.0, 0.0)).norm() > UNIT_EIGEN_TOL)
        .any(|z| z.norm() >= 1.0 - UNIT_EIGEN_TOL);

    let mut system = DMatrix::<f64>::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] = q[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        system[(n, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;
    let svd = system.svd(true, true);
    let mut nu = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    for v in nu.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 {
                return Err(Error::SingularSystem(format!(
                    "stationary solve produced a negative mass {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let total: f64 = nu.iter().sum();
    nu /= total;
    Ok(Stationary {
        distribution: nu,
        periodic,
    })
}

/// Power iteration on the lazy kernel `(Q + I)/2`, started from the uniform
/// law. Used as an independent cross-check of the linear solve.
pub fn stationary_power_iteration(kernel: &DMatrix<f64>, tol: f64, max_iter: usize) -> DVector<f64> {
    let n = kernel.nrows();
    let lazy_t = (kernel + DMatrix::<f64>::identity(n, n)).transpose() * 0.5;
    let mut nu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let mut next = &lazy_t * &nu;
        let s: f64 = next.iter().sum();
        next /= s;
        let diff = (&next - &nu).amax();
        nu = next;
        if diff < tol {
            break;
        }
    }
    nu
}

/// Builds a chain: validates the kernel, computes ν, prunes states outside
/// the support, centers the observable and detects a lattice.
pub fn build_chain(
    kernel: &DMatrix<f64>,
    raw_observable: &[f64],
    weight: Option<&[f64]>,
) -> Result<FiniteChain> {
    let q = clean_kernel(kernel)?;
    let n = q.nrows();
    if raw_observable.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: raw_observable.len(),
        });
    }
    if raw_observable.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("observable has non-finite entries".into()));
    }
    let weight = match weight {
        Some(w) => Some(validate_weight(w, n)?),
        None => None,
    };

    let spectrum = linalg::eigenvalues_real(&q)?;
    let stat = stationary_with_spectrum(&q, &spectrum)?;
    let kept: Vec<usize> = (0..n).filter(|&i| stat.distribution[i] > PRUNE_TOL).collect();

    let (q, spectrum, stat, raw, weight) = if kept.len() < n {
        let m = kept.len();
        let mut sub = DMatrix::<f64>::zeros(m, m);
        for (a, &i) in kept.iter().enumerate() {
            for (b, &j) in kept.iter().enumerate() {
                sub[(a, b)] = q[(i, j)];
            }
            let s: f64 = sub.row(a).iter().sum();
            sub.row_mut(a).scale_mut(1.0 / s);
        }
        let spectrum = linalg::eigenvalues_real(&sub)?;
        let stat = stationary_with_spectrum(&sub, &spectrum)?;
        let raw: Vec<f64> = kept.iter().map(|&i| raw_observable[i]).collect();
        let weight = weight.map(|w| DVector::from_iterator(m, kept.iter().map(|&i| w[i])));
        (sub, spectrum, stat, raw, weight)
    } else {
        (q, spectrum, stat, raw_observable.to_vec(), weight)
    };

    let nu = stat.distribution;
    let m = q.nrows();
    let mut xi = DVector::from_vec(raw);
    let first = nu.dot(&xi);
    xi.add_scalar_mut(-first);
    let second = nu.dot(&xi);
    xi.add_scalar_mut(-second);
    let lattice = detect_lattice(xi.as_slice());

    Ok(FiniteChain {
        kernel: q,
        stationary: nu,
        observable: xi,
        weight: weight.unwrap_or_else(|| DVector::from_element(m, 1.0)),
        lattice,
        spectrum,
        periodic: stat.periodic,
        raw_mean: first + second,
        kept_states: kept,
    })
}

fn gcd_tol(mut a: f64, mut b: f64, tol: f64) -> f64 {
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    loop {
        if b <= tol {
            return a;
        }
        let r = a % b;
        if r <= tol || b - r <= tol {
            return b;
        }
        a = b;
        b = r;
    }
}

/// Finds `offset + step * k` structure in the values, or `None`.
pub fn detect_lattice(values: &[f64]) -> Option<Lattice> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let diffs: Vec<f64> = values
        .iter()
        .map(|v| v - min)
        .filter(|d| *d > LATTICE_TOL)
        .collect();
    if diffs.is_empty() {
        return Some(Lattice {
            offset: min,
            step: 1.0,
            sites: vec![0; values.len()],
        });
    }
    let coarse = diffs.iter().skip(1).fold(diffs[0], |g, d| gcd_tol(g, *d, LATTICE_TOL));
    if coarse <= LATTICE_TOL {
        return None;
    }
    let mut sites = Vec::with_capacity(values.len());
    for v in values {
        let k = ((v - min) / coarse).round();
        if k.abs() > LATTICE_MAX_SITE as f64 {
            return None;
        }
        sites.push(k as i64);
    }
    // refine the step by least squares on the integer sites
    let (num, den) = values.iter().zip(&sites).fold((0.0, 0.0), |(n, d), (v, k)| {
        let k = *k as f64;
        (n + k * (v - min), d + k * k)
    });
    let step = num / den;
    let lattice = Lattice {
        offset: min,
        step,
        sites,
    };
    let fits = values
        .iter()
        .zip(&lattice.sites)
        .all(|(v, k)| (v - (lattice.offset + lattice.step * *k as f64)).abs() <= 1e-12);
    fits.then_some(lattice)
}

/// Geometric-ergodicity certificate `||Qⁿf − ν(f)1||_W ≤ C κ₀ⁿ ||f||_W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityCertificate {
    pub kappa0: f64,
    pub c: f64,
    pub n_checked: usize,
    pub defective: bool,
}

impl ErgodicityCertificate {
    /// Largest violation of the certified bound for a particular `f`
    /// (non-positive when the bound holds up to `ROUNDOFF_FLOOR`).
    pub fn violation(&self, chain: &FiniteChain, f: &DVector<f64>) -> f64 {
        let w = chain.weight();
        let nu_f = chain.nu_mean(f);
        let norm_f = weighted_norm(f.as_slice(), w.as_slice()).unwrap_or(f64::INFINITY);
        let mut g = f.clone();
        let mut worst = f64::NEG_INFINITY;
        for n in 1..=self.n_checked {
            g = chain.kernel() * &g;
            let centered = g.add_scalar(-nu_f);
            let lhs = weighted_norm(centered.as_slice(), w.as_slice()).unwrap_or(f64::INFINITY);
            let rhs = self.c * self.kappa0.powi(n as i32) * norm_f + ROUNDOFF_FLOOR * norm_f;
            worst = worst.max(lhs - rhs * (1.0 + 1e-12));
        }
        worst
    }
}

/// `κ₀` from the spectrum and the smallest `C` that makes the certificate
/// hold for every `f`, using the exact W-operator norm of `Qⁿ − 1⊗ν`.
pub fn ergodicity_constants(chain: &FiniteChain, n_max: usize) -> Result<ErgodicityCertificate> {
    let modulus = chain.second_modulus();
    if modulus >= 1.0 - UNIT_EIGEN_TOL {
        return Err(Error::NoSpectralGap { modulus });
    }
    let defective = second_eigenvalue_defective(chain)?;
    let kappa0 = if defective {
        modulus + DEFECTIVE_INFLATION
    } else {
        modulus
    };

    let q = chain.kernel();
    let nu = chain.stationary();
    let w = chain.weight();
    let s = chain.states();
    let mut power = q.clone();
    let mut c: f64 = 0.0;
    for n in 1..=n_max {
        if n > 1 {
            power = &power * q;
        }
        let op = (0..s)
            .map(|x| {
                (0..s)
                    .map(|y| (power[(x, y)] - nu[y]).abs() * w[y])
                    .sum::<f64>()
                    / w[x]
            })
            .fold(0.0, f64::max);
        if op <= ROUNDOFF_FLOOR {
            continue;
        }
        let geometric = kappa0.powi(n as i32);
        if geometric < 1e-300 {
            continue;
        }
        c = c.max((op - ROUNDOFF_FLOOR) / geometric);
    }
    Ok(ErgodicityCertificate {
        kappa0,
        c,
        n_checked: n_max,
        defective,
    })
}

fn second_eigenvalue_defective(chain: &FiniteChain) -> Result<bool> {
    let spec = chain.spectrum();
    let modulus = chain.second_modulus();
    if modulus < 1e-12 {
        return Ok(false);
    }
    let lambda2 = match spec
        .iter()
        .find(|z| (z.norm() - modulus).abs() < 1e-14 && (*z - Complex64::new(1.0, 0.0)).norm() > UNIT_EIGEN_TOL)
    {
        Some(z) => *z,
        None => return Ok(false),
    };
    let cluster = spec.iter().filter(|z| (*z - lambda2).norm() < 1e-6).count();
    if cluster < 2 {
        return Ok(false);
    }
    let s = chain.states();
    let shifted = linalg::to_complex(chain.kernel()) - linalg::CMatrix::identity(s, s) * lambda2;
    let sv = shifted.singular_values();
    let geometric = sv.iter().filter(|v| **v < 1e-8).count();
    Ok(geometric < cluster)
}

/// Values whose modulus can be taken.
pub trait Modulus {
    fn modulus(&self) -> f64;
}

impl Modulus for f64 {
    fn modulus(&self) -> f64 {
        self.abs()
    }
}

impl Modulus for Complex64 {
    fn modulus(&self) -> f64 {
        self.norm()
    }
}

/// `max_x |f(x)| / W(x)`.
pub fn weighted_norm<T: Modulus>(f: &[T], w: &[f64]) -> Result<f64> {
    if f.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: f.len(),
        });
    }
    if w.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    Ok(f.iter()
        .zip(w)
        .map(|(fx, wx)| fx.modulus() / wx)
        .fold(0.0, f64::max))
}

/// Splits a weight `V ≥ 1` into `W = V^(1/3)` and `U = V^(2/3)`.
pub fn derive_weights(v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some((index, value)) = v.iter().enumerate().find(|(_, x)| !(**x >= 1.0)) {
        return Err(Error::WeightBelowOne {
            index,
            value: *value,
        });
    }
    let w: Vec<f64> = v.iter().map(|x| x.cbrt()).collect();
    let u: Vec<f64> = w.iter().map(|x| x * x).collect();
    Ok((w, u))
}
