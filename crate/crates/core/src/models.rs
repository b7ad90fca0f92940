//! Built-in models: finite chains from the catalog and affine iterated
//! random maps `Xₙ = AₙXₙ₋₁ + bₙ` with i.i.d. `(Aₙ, bₙ)`.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{build_chain, ChainSpec, FiniteChain};
use crate::error::{Error, Result};
use crate::sim::{derive_seed, path_rng, PathRng, PathSample, PathStates};
use crate::stats::{normal_cdf, KahanSum};

/// Scalar, flat list or nested matrix of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Param {
    /// Flattens row-major and broadcasts scalars to `len` entries.
    pub fn expand(&self, len: usize) -> Result<Vec<f64>> {
        let flat = match self {
            Param::Scalar(v) => return Ok(vec![*v; len]),
            Param::Vector(v) => v.clone(),
            Param::Matrix(rows) => rows.iter().flatten().copied().collect(),
        };
        if flat.len() != len {
            return Err(Error::SamplerFailure(format!(
                "parameter has {} entries, expected {len}",
                flat.len()
            )));
        }
        Ok(flat)
    }
}

/// Law of a real array. Entries are drawn independently; parameters are
/// scalars (shared by all entries) or arrays of the right length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sampler {
    Constant { value: Param },
    Uniform { low: Param, high: Param },
    Gaussian { mean: Param, std: Param },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

/// A sampler with parameters expanded to a fixed entry count.
#[derive(Debug, Clone)]
enum Compiled {
    Constant(Vec<f64>),
    Uniform(Vec<f64>, Vec<f64>),
    Gaussian(Vec<f64>, Vec<f64>),
    Discrete(Vec<f64>, Vec<f64>, usize),
}

impl Sampler {
    fn compile(&self, len: usize) -> Result<Compiled> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let c = match self {
            Sampler::Constant { value } => Compiled::Constant(value.expand(len)?),
            Sampler::Uniform { low, high } => {
                let (lo, hi) = (low.expand(len)?, high.expand(len)?);
                if !finite(&lo) || !finite(&hi) || lo.iter().zip(&hi).any(|(a, b)| a > b) {
                    return Err(Error::SamplerFailure("uniform needs finite low <= high".into()));
                }
                Compiled::Uniform(lo, hi)
            }
            Sampler::Gaussian { mean, std } => {
                let (m, s) = (mean.expand(len)?, std.expand(len)?);
                if !finite(&m) || !finite(&s) || s.iter().any(|v| *v < 0.0) {
                    return Err(Error::SamplerFailure("gaussian needs finite mean and std >= 0".into()));
                }
                Compiled::Gaussian(m, s)
            }
            Sampler::Discrete { values, probs } => {
                let total: f64 = probs.iter().sum();
                if values.is_empty()
                    || values.len() != probs.len()
                    || probs.iter().any(|p| !(*p >= 0.0))
                    || (total - 1.0).abs() > 1e-9
                    || !finite(values)
                {
                    return Err(Error::SamplerFailure(
                        "discrete needs matching values and a probability vector".into(),
                    ));
                }
                let mut acc = 0.0;
                let cum = probs
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
                Compiled::Discrete(values.clone(), cum, last)
            }
        };
        if let Compiled::Constant(v) = &c {
            if !finite(v) {
                return Err(Error::SamplerFailure("constant must be finite".into()));
            }
        }
        Ok(c)
    }

    /// Mean of each entry.
    pub fn mean(&self, len: usize) -> Result<Vec<f64>> {
        Ok(match self.compile(len)? {
            Compiled::Constant(v) => v,
            Compiled::Uniform(lo, hi) => lo.iter().zip(&hi).map(|(a, b)| (a + b) / 2.0).collect(),
            Compiled::Gaussian(m, _) => m,
            Compiled::Discrete(..) => {
                let Sampler::Discrete { values, probs } = self else { unreachable!() };
                vec![values.iter().zip(probs).map(|(v, p)| v * p).sum(); len]
            }
        })
    }

    /// True when every draw is the zero array.
    pub fn is_zero(&self) -> bool {
        match self {
            Sampler::Constant { value } => match value {
                Param::Scalar(v) => *v == 0.0,
                Param::Vector(v) => v.iter().all(|x| *x == 0.0),
                Param::Matrix(m) => m.iter().flatten().all(|x| *x == 0.0),
            },
            Sampler::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .all(|(v, p)| *v == 0.0 || *p == 0.0),
            _ => false,
        }
    }
}

impl Compiled {
    fn draw(&self, rng: &mut PathRng, out: &mut [f64]) {
        match self {
            Compiled::Constant(v) => out.copy_from_slice(v),
            Compiled::Uniform(lo, hi) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
                }
            }
            Compiled::Gaussian(m, s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m[i] + s[i] * z;
                }
            }
            Compiled::Discrete(values, cum, last) => {
                for o in out.iter_mut() {
                    let u: f64 = rng.random();
                    let k = cum.partition_point(|c| *c <= u).min(*last);
                    *o = values[k];
                }
            }
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self, Compiled::Constant(_))
    }
}

/// Lipschitz observables on `ℝᵈ`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    /// First coordinate.
    #[default]
    Coordinate,
    /// Coordinate with the given index.
    Component(usize),
    /// Euclidean norm.
    Norm,
    /// Distance to the reference point `x₀`.
    CenteredNorm,
    /// Piecewise-linear function of one coordinate, constant outside the knots.
    Tabulated {
        knots: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        coordinate: usize,
    },
}

impl Observable {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Observable::Component(i) if *i >= dim => Err(Error::IndexOutOfRange {
                index: *i,
                states: dim,
            }),
            Observable::Tabulated {
                knots,
                values,
                coordinate,
            } => {
                if *coordinate >= dim {
                    return Err(Error::IndexOutOfRange {
                        index: *coordinate,
                        states: dim,
                    });
                }
                if knots.is_empty()
                    || knots.len() != values.len()
                    || knots.windows(2).any(|w| !(w[0] < w[1]))
                {
                    return Err(Error::SamplerFailure(
                        "tabulated observable needs increasing knots matching values".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], x0: &[f64]) -> f64 {
        match self {
            Observable::Coordinate => x[0],
            Observable::Component(i) => x[*i],
            Observable::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Observable::CenteredNorm => x
                .iter()
                .zip(x0)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
            Observable::Tabulated {
                knots,
                values,
                coordinate,
            } => {
                let v = x[*coordinate];
                let k = knots.partition_point(|t| *t <= v);
                if k == 0 {
                    values[0]
                } else if k == knots.len() {
                    values[k - 1]
                } else {
                    let w = (v - knots[k - 1]) / (knots[k] - knots[k - 1]);
                    values[k - 1] + w * (values[k] - values[k - 1])
                }
            }
        }
    }

    /// Lipschitz constant for the Euclidean metric.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Observable::Tabulated { knots, values, .. } => knots
                .windows(2)
                .zip(values.windows(2))
                .map(|(t, v)| ((v[1] - v[0]) / (t[1] - t[0])).abs())
                .fold(0.0, f64::max),
            _ => 1.0,
        }
    }
}

fn default_pilot_steps() -> usize {
    1_000_000
}

fn default_burn_in() -> usize {
    10_000
}

/// `Xₙ = AₙXₙ₋₁ + bₙ` with `A` drawn as `dim × dim` row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub dim: usize,
    #[serde(rename = "A")]
    pub a: Sampler,
    pub b: Sampler,
    #[serde(default)]
    pub observable: Observable,
    /// Reference point; the origin when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Law of `X₀`; the Dirac mass at `x0` when absent.
    #[serde(default)]
    pub initial_law: Option<Sampler>,
    /// Exact stationary mean of the observable, if known.
    #[serde(default)]
    pub centering: Option<f64>,
    #[serde(default = "default_pilot_steps")]
    pub pilot_steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl AffineModel {
    pub fn new(dim: usize, a: Sampler, b: Sampler) -> Self {
        Self {
            dim,
            a,
            b,
            observable: Observable::Coordinate,
            x0: None,
            initial_law: None,
            centering: None,
            pilot_steps: default_pilot_steps(),
            burn_in: default_burn_in(),
        }
    }

    pub fn reference_point(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<CompiledModel> {
        if self.dim == 0 {
            return Err(Error::SamplerFailure("dimension must be positive".into()));
        }
        self.observable.validate(self.dim)?;
        let x0 = self.reference_point();
        if x0.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x0.len(),
            });
        }
        let initial = match &self.initial_law {
            Some(s) => s.compile(self.dim)?,
            None => Compiled::Constant(x0.clone()),
        };
        Ok(CompiledModel {
            dim: self.dim,
            a: self.a.compile(self.dim * self.dim)?,
            b: self.b.compile(self.dim)?,
            initial,
            observable: self.observable.clone(),
            x0,
        })
    }

    /// Resolves the centering constant, by a pilot run when none is given.
    pub fn center(&self, master_seed: u64) -> Result<CenteredModel> {
        let compiled = self.compile()?;
        let centering = match self.centering {
            Some(value) => Centering {
                value,
                stderr: 0.0,
                method: CenteringMethod::Exact,
            },
            None => compiled.pilot(self.pilot_steps, self.burn_in, master_seed)?,
        };
        Ok(CenteredModel {
            model: self.clone(),
            compiled,
            centering,
        })
    }
}

#[derive(Debug, Clone)]
struct CompiledModel {
    dim: usize,
    a: Compiled,
    b: Compiled,
    initial: Compiled,
    observable: Observable,
    x0: Vec<f64>,
}

/// Path index reserved for the pilot run.
pub const PILOT_PATH_INDEX: u64 = u64::MAX;
const PILOT_BATCHES: usize = 100;

impl CompiledModel {
    fn step(&self, rng: &mut PathRng, x: &mut [f64], a: &mut [f64], b: &mut [f64], next: &mut [f64]) {
        let d = self.dim;
        self.a.draw(rng, a);
        self.b.draw(rng, b);
        for i in 0..d {
            let row = &a[i * d..(i + 1) * d];
            next[i] = row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() + b[i];
        }
        x.copy_from_slice(next);
    }

    /// Runs one path, calling `visit(k, X_k)` for `k = 0..=n`.
    fn run(&self, n: usize, rng: &mut PathRng, mut visit: impl FnMut(usize, &[f64])) -> Result<()> {
        let d = self.dim;
        let mut x = vec![0.0; d];
        self.initial.draw(rng, &mut x);
        let (mut a, mut b, mut next) = (vec![0.0; d * d], vec![0.0; d], vec![0.0; d]);
        visit(0, &x);
        for k in 1..=n {
            self.step(rng, &mut x, &mut a, &mut b, &mut next);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::SamplerFailure(format!("state diverged at step {k}")));
            }
            visit(k, &x);
        }
        Ok(())
    }

    fn pilot(&self, steps: usize, burn_in: usize, master_seed: u64) -> Result<Centering> {
        if steps < PILOT_BATCHES {
            return Err(Error::SamplerFailure(format!(
                "pilot run needs at least {PILOT_BATCHES} steps"
            )));
        }
        let mut rng = path_rng(master_seed, PILOT_PATH_INDEX);
        let batch = steps / PILOT_BATCHES;
        let used = batch * PILOT_BATCHES;
        let mut batch_sums = vec![KahanSum::new(); PILOT_BATCHES];
        self.run(burn_in + used, &mut rng, |k, x| {
            if k > burn_in {
                batch_sums[(k - burn_in - 1) / batch].add(self.observable.eval(x, &self.x0));
            }
        })?;
        let means: Vec<f64> = batch_sums.iter().map(|s| s.total() / batch as f64).collect();
        let value = means.iter().copied().collect::<KahanSum>().total() / PILOT_BATCHES as f64;
        let var = means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / (PILOT_BATCHES - 1) as f64;
        Ok(Centering {
            value,
            stderr: (var / PILOT_BATCHES as f64).sqrt(),
            method: CenteringMethod::Pilot {
                steps: used,
                burn_in,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CenteringMethod {
    Exact,
    Pilot { steps: usize, burn_in: usize },
}

/// Constant subtracted from the observable, with its batch-means error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub value: f64,
    pub stderr: f64,
    pub method: CenteringMethod,
}

/// An affine model together with its resolved centering constant.
#[derive(Debug, Clone)]
pub struct CenteredModel {
    pub model: AffineModel,
    compiled: CompiledModel,
    pub centering: Centering,
}

impl CenteredModel {
    fn xi(&self, x: &[f64]) -> f64 {
        self.compiled.observable.eval(x, &self.compiled.x0) - self.centering.value
    }

    /// `S_k` at each checkpoint (increasing), without storing the path.
    pub fn sums_at(&self, checkpoints: &[usize], master_seed: u64, path_index: u64) -> Result<Vec<f64>> {
        let n = checkpoints.last().copied().unwrap_or(0);
        let mut rng = path_rng(master_seed, path_index);
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = checkpoints.iter().peekable();
        let mut sum = 0.0;
        self.compiled.run(n, &mut rng, |k, x| {
            if k > 0 {
                sum += self.xi(x);
            }
            while next.peek().is_some_and(|c| **c == k) {
                out.push(sum);
                next.next();
            }
        })?;
        Ok(out)
    }

    /// `S_k` at each checkpoint for paths `0..paths`, in path order.
    pub fn sums_table(&self, checkpoints: &[usize], paths: usize, master_seed: u64) -> Result<Vec<Vec<f64>>> {
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("checkpoints must increase".into()));
        }
        (0..paths as u64)
            .into_par_iter()
            .map(|i| self.sums_at(checkpoints, master_seed, i))
            .collect()
    }
}

/// Full path of an affine model, states included.
pub fn simulate_affine(model: &CenteredModel, n: usize, master_seed: u64, path_index: u64) -> Result<PathSample> {
    let mut rng = path_rng(master_seed, path_index);
    let mut states = Vec::with_capacity(n + 1);
    let mut partial_sums = Vec::with_capacity(n);
    let mut sum = 0.0;
    model.compiled.run(n, &mut rng, |k, x| {
        if k > 0 {
            sum += model.xi(x);
            partial_sums.push(sum);
        }
        states.push(x.to_vec());
    })?;
    Ok(PathSample {
        seed: derive_seed(master_seed, path_index),
        path_index,
        states: PathStates::Vectors(states),
        partial_sums,
        n,
    })
}

/// Contraction data of one sampled map `g(x) = Ax + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GMapSample {
    pub c: f64,
    pub d0: f64,
    pub gamma: f64,
}

impl GMapSample {
    pub fn new(c: f64, d0: f64) -> Self {
        Self {
            c,
            d0,
            gamma: 1.0 + c + d0,
        }
    }
}

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 1000;

/// Spectral norm of `A` by power iteration on `AᵀA`.
pub fn operator_norm(a: &DMatrix<f64>, rng: &mut PathRng) -> f64 {
    if a.ncols() == 1 && a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    let ata = a.transpose() * a;
    let mut v = DVector::from_fn(a.ncols(), |_, _| rng.random::<f64>() + 0.5);
    let mut est = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let w = &ata * &v;
        let next = v.dot(&w);
        v = w;
        if (next - est).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            est = next;
            break;
        }
        est = next;
    }
    est.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionStar {
    /// `E[Γ³(1 + c^{1/2})]` under one map.
    pub i1: f64,
    pub i1_stderr: f64,
    /// `E[c^{1/2} max(c, 1)³]` under the `n₀`-fold composition.
    pub i2: f64,
    pub i2_stderr: f64,
    pub pass: bool,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().copied().collect::<KahanSum>().total() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values
        .iter()
        .map(|v| (v - mean).powi(2))
        .collect::<KahanSum>()
        .total()
        / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Monte Carlo estimate of both integrals in condition (*), with
/// `x₀ = 0` and the Euclidean metric.
pub fn condition_star_estimate(model: &AffineModel, n0: usize, samples: usize, master_seed: u64) -> Result<ConditionStar> {
    if n0 == 0 || samples == 0 {
        return Err(Error::InvalidArgument("n0 and samples must be positive".into()));
    }
    let cm = model.compile()?;
    let d = cm.dim;
    let draw = |rng: &mut PathRng| {
        let (mut a, mut b) = (vec![0.0; d * d], vec![0.0; d]);
        cm.a.draw(rng, &mut a);
        cm.b.draw(rng, &mut b);
        (DMatrix::from_row_slice(d, d, &a), DVector::from_vec(b))
    };
    let pairs: Vec<(f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(master_seed, i);
            let (a, b) = draw(&mut rng);
            let single = GMapSample::new(operator_norm(&a, &mut rng), b.norm());
            let mut comp_a = a;
            for _ in 1..n0 {
                let (a, _) = draw(&mut rng);
                comp_a = a * comp_a;
            }
            let c = if n0 == 1 { single.c } else { operator_norm(&comp_a, &mut rng) };
            (
                single.gamma.powi(3) * (1.0 + single.c.sqrt()),
                c.sqrt() * c.max(1.0).powi(3),
            )
        })
        .collect();
    let (v1, v2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (i1, i1_stderr) = mean_stderr(&v1);
    let (i2, i2_stderr) = mean_stderr(&v2);
    let deterministic = cm.a.is_constant() && cm.b.is_constant();
    let (i1_stderr, i2_stderr) = if deterministic { (0.0, 0.0) } else { (i1_stderr, i2_stderr) };
    Ok(ConditionStar {
        i1,
        i1_stderr,
        i2,
        i2_stderr,
        pass: i2 + 2.0 * i2_stderr < 1.0,
    })
}

/// For `A ≡ 0` and discrete scalar `b`, `Xₙ = bₙ` is the i.i.d. chain on the
/// atoms of `b`.
pub fn induced_iid_chain(model: &AffineModel) -> Result<FiniteChain> {
    model.validate()?;
    if !model.a.is_zero() {
        return Err(Error::InvalidArgument("induced chain needs A = 0".into()));
    }
    let Sampler::Discrete { values, probs } = &model.b else {
        return Err(Error::InvalidArgument("induced chain needs a discrete b".into()));
    };
    if model.dim != 1 {
        return Err(Error::InvalidArgument("induced chain needs dimension 1".into()));
    }
    let x0 = model.reference_point();
    let xi: Vec<f64> = values.iter().map(|v| model.observable.eval(&[*v], &x0)).collect();
    let k = values.len();
    build_chain(&DMatrix::from_fn(k, k, |_, j| probs[j]), &xi, None)
}

pub fn two_state(a: f64, b: f64) -> Result<FiniteChain> {
    let q = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, b, 1.0 - b]);
    build_chain(&q, &[1.0, 0.0], None)
}

pub fn iid(p: &[f64], xi: &[f64]) -> Result<FiniteChain> {
    let k = p.len();
    build_chain(&DMatrix::from_fn(k, k, |_, j| p[j]), xi, None)
}

/// Smallest spectral gap `1 − |λ₂|` accepted by [`random_chain`].
pub const RANDOM_CHAIN_MIN_GAP: f64 = 0.2;

/// Random kernel with uniform row weights and integer observable in
/// `0..=4`, redrawn until the spectral gap is at least 0.2.
pub fn random_chain(n: usize, seed: u64) -> Result<FiniteChain> {
    if n < 2 {
        return Err(Error::InvalidArgument("random chain needs at least 2 states".into()));
    }
    for attempt in 0..1000u64 {
        let mut rng = path_rng(seed, attempt);
        let mut q = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() + 1e-3);
        for mut row in q.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
        let xi: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        if xi.iter().all(|v| *v == xi[0]) {
            continue;
        }
        let chain = build_chain(&q, &xi, None)?;
        if 1.0 - chain.second_modulus() >= RANDOM_CHAIN_MIN_GAP {
            return Ok(chain);
        }
    }
    Err(Error::InvalidArgument("no random chain with the required gap".into()))
}

/// `N(a·x, s²)` transitions projected onto the uniform grid of
/// `grid_size` points in `[−x_max, x_max]`, tails folded into the edge cells.
pub fn discretized_ar1(a: f64, s: f64, grid_size: usize, x_max: f64) -> Result<FiniteChain> {
    if grid_size < 2 || !(x_max > 0.0) || !(s > 0.0) {
        return Err(Error::InvalidArgument(
            "discretized AR(1) needs grid_size >= 2, x_max > 0, s > 0".into(),
        ));
    }
    let h = 2.0 * x_max / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| -x_max + h * i as f64).collect();
    let q = DMatrix::from_fn(grid_size, grid_size, |i, j| {
        let mean = a * grid[i];
        let upper = if j + 1 == grid_size { 1.0 } else { normal_cdf((grid[j] + h / 2.0 - mean) / s) };
        let lower = if j == 0 { 0.0 } else { normal_cdf((grid[j] - h / 2.0 - mean) / s) };
        (upper - lower).max(0.0)
    });
    build_chain(&q, &grid, None)
}

/// `Xₙ = aXₙ₋₁ + s·εₙ` started at 0, observable `x` with exact mean 0.
pub fn ar1_scalar(a: f64, s: f64) -> AffineModel {
    let mut m = AffineModel::new(
        1,
        Sampler::Constant { value: Param::Scalar(a) },
        Sampler::Gaussian {
            mean: Param::Scalar(0.0),
            std: Param::Scalar(s),
        },
    );
    m.centering = Some(0.0);
    m
}

/// Model section of an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Chain(ChainSpec),
    TwoState { a: f64, b: f64 },
    Iid { p: Vec<f64>, xi: Vec<f64> },
    RandomChain { n: usize, seed: u64 },
    DiscretizedAr1 { a: f64, s: f64, grid_size: usize, x_max: f64 },
    Ar1Scalar { a: f64, s: f64 },
    Affine(AffineModel),
}

#[derive(Debug, Clone)]
pub enum Model {
    Finite(FiniteChain),
    Affine(AffineModel),
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<Model> {
        Ok(match self {
            ModelSpec::Chain(spec) => Model::Finite(spec.build()?),
            ModelSpec::TwoState { a, b } => Model::Finite(two_state(*a, *b)?),
            ModelSpec::Iid { p, xi } => Model::Finite(iid(p, xi)?),
            ModelSpec::RandomChain { n, seed } => Model::Finite(random_chain(*n, *seed)?),
            ModelSpec::DiscretizedAr1 { a, s, grid_size, x_max } => {
                Model::Finite(discretized_ar1(*a, *s, *grid_size, *x_max)?)
            }
            ModelSpec::Ar1Scalar { a, s } => Model::Affine(ar1_scalar(*a, *s)),
            ModelSpec::Affine(m) => {
                m.validate()?;
                Model::Affine(m.clone())
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub parameters: &'static str,
    pub description: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "chain",
            parameters: "kernel, observable, weight?",
            description: "explicit finite chain",
        },
        CatalogEntry {
            name: "two_state",
            parameters: "a, b",
            description: "kernel [[1-a, a], [b, 1-b]] with the indicator of state 0",
        },
        CatalogEntry {
            name: "iid",
            parameters: "p, xi",
            description: "i.i.d. draws from p with values xi",
        },
        CatalogEntry {
            name: "random_chain",
            parameters: "n, seed",
            description: "seeded random kernel with spectral gap at least 0.2",
        },
        CatalogEntry {
            name: "discretized_ar1",
            parameters: "a, s, grid_size, x_max",
            description: "Gaussian AR(1) transitions projected onto a uniform grid",
        },
        CatalogEntry {
            name: "ar1_scalar",
            parameters: "a, s",
            description: "X_n = a X_(n-1) + s eps_n, observable x",
        },
        CatalogEntry {
            name: "affine",
            parameters: "dim, A, b, observable?, x0?, initial_law?, centering?",
            description: "X_n = A_n X_(n-1) + b_n with i.i.d. sampled (A_n, b_n)",
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: Param) -> Sampler {
        Sampler::Constant { value: v }
    }

    #[test]
    fn json_shape() {
        let text = r#"{"type": "affine", "dim": 2,
            "A": {"type": "constant", "value": [[0.5, 0.0], [0.0, 0.5]]},
            "b": {"type": "gaussian", "mean": 0.0, "std": [1.0, 2.0]},
            "observable": "norm", "x0": [0.0, 0.0]}"#;
        let spec: ModelSpec = serde_json::from_str(text).unwrap();
        let Model::Affine(m) = spec.resolve().unwrap() else { panic!() };
        assert_eq!(m.dim, 2);
        assert_eq!(m.observable, Observable::Norm);
        let back: ModelSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let chain: ModelSpec =
            serde_json::from_str(r#"{"type": "chain", "kernel": [[0.7, 0.3], [0.4, 0.6]], "observable": [1, 0]}"#)
                .unwrap();
        assert!(matches!(chain.resolve().unwrap(), Model::Finite(_)));
    }

    #[test]
    fn sampler_validation() {
        let bad = AffineModel::new(
            1,
            constant(Param::Scalar(0.5)),
            Sampler::Gaussian {
                mean: Param::Scalar(0.0),
                std: Param::Scalar(-1.0),
            },
        );
        assert!(matches!(bad.validate(), Err(Error::SamplerFailure(_))));
        let bad = AffineModel::new(2, constant(Param::Vector(vec![1.0, 2.0])), constant(Param::Scalar(0.0)));
        assert!(matches!(bad.validate(), Err(Error::SamplerFailure(_))));
    }

    #[test]
    fn zero_a_gives_iid_b() {
        let mut m = AffineModel::new(
            1,
            constant(Param::Scalar(0.0)),
            Sampler::Discrete {
                values: vec![-1.0, 1.0],
                probs: vec![0.5, 0.5],
            },
        );
        m.centering = Some(0.0);
        let cm = m.center(1).unwrap();
        let p = simulate_affine(&cm, 20, 4, 0).unwrap();
        let PathStates::Vectors(st) = &p.states else { panic!() };
        for (k, s) in p.partial_sums.iter().enumerate() {
            assert!(st[k + 1][0].abs() == 1.0);
            let direct: f64 = st[1..=k + 1].iter().map(|x| x[0]).sum();
            assert!((s - direct).abs() < 1e-12);
        }
        let chain = induced_iid_chain(&m).unwrap();
        assert_eq!(chain.states(), 2);
        assert!((chain.stationary()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn contraction_without_noise() {
        let mut m = AffineModel::new(1, constant(Param::Scalar(0.5)), constant(Param::Scalar(0.0)));
        m.x0 = Some(vec![8.0]);
        m.centering = Some(0.0);
        let cm = m.center(0).unwrap();
        let p = simulate_affine(&cm, 40, 0, 0).unwrap();
        assert!((p.final_sum() - 8.0).abs() < 1e-9);
        let PathStates::Vectors(st) = &p.states else { panic!() };
        assert_eq!(st[3][0], 1.0);
    }

    #[test]
    fn bounded_noise_envelope() {
        let mut m = AffineModel::new(
            2,
            constant(Param::Matrix(vec![vec![0.3, 0.2], vec![-0.1, 0.4]])),
            Sampler::Uniform {
                low: Param::Scalar(-1.0),
                high: Param::Scalar(1.0),
            },
        );
        m.x0 = Some(vec![10.0, -10.0]);
        m.centering = Some(0.0);
        let cbar = operator_norm(
            &DMatrix::from_row_slice(2, 2, &[0.3, 0.2, -0.1, 0.4]),
            &mut path_rng(0, 0),
        );
        let bmax = 2f64.sqrt();
        let x0 = 200f64.sqrt();
        let cm = m.center(0).unwrap();
        for idx in 0..5 {
            let p = simulate_affine(&cm, 60, 2, idx).unwrap();
            let PathStates::Vectors(st) = &p.states else { panic!() };
            for (n, x) in st.iter().enumerate() {
                let cn = cbar.powi(n as i32);
                let bound = cn * x0 + bmax * (1.0 - cn) / (1.0 - cbar);
                assert!(DVector::from_vec(x.clone()).norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn ar1_stationary_variance() {
        let mut m = ar1_scalar(0.5, 1.0);
        m.initial_law = Some(Sampler::Gaussian {
            mean: Param::Scalar(0.0),
            std: Param::Scalar((4.0f64 / 3.0).sqrt()),
        });
        let cm = m.center(0).unwrap();
        let paths = 20_000;
        let xs: Vec<f64> = (0..paths)
            .map(|i| {
                let p = simulate_affine(&cm, 5, 17, i).unwrap();
                let PathStates::Vectors(st) = p.states else { panic!() };
                st[5][0]
            })
            .collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / paths as f64;
        // stderr of the second moment is sqrt(2)·v/√m
        let band = 4.0 * 2f64.sqrt() * (4.0 / 3.0) / (paths as f64).sqrt();
        assert!((var - 4.0 / 3.0).abs() < band, "var {var}");
    }

    #[test]
    fn pilot_centering() {
        let mut m = AffineModel::new(
            1,
            constant(Param::Scalar(0.5)),
            Sampler::Gaussian {
                mean: Param::Scalar(1.0),
                std: Param::Scalar(1.0),
            },
        );
        m.pilot_steps = 200_000;
        m.burn_in = 1000;
        let cm = m.center(3).unwrap();
        assert!(matches!(cm.centering.method, CenteringMethod::Pilot { .. }));
        assert!((cm.centering.value - 2.0).abs() < 5.0 * cm.centering.stderr);
        assert!(cm.centering.stderr > 0.0 && cm.centering.stderr < 0.05);
    }

    #[test]
    fn sums_at_match_full_path() {
        let cm = ar1_scalar(0.5, 1.0).center(0).unwrap();
        let p = simulate_affine(&cm, 30, 5, 7).unwrap();
        let s = cm.sums_at(&[1, 10, 30], 5, 7).unwrap();
        assert_eq!(s, vec![p.partial_sums[0], p.partial_sums[9], p.partial_sums[29]]);
        let table = cm.sums_table(&[10, 30], 4, 5).unwrap();
        assert_eq!(table[3], cm.sums_at(&[10, 30], 5, 3).unwrap());
    }

    #[test]
    fn condition_star_examples() {
        let m = AffineModel::new(
            2,
            constant(Param::Matrix(vec![vec![0.5, 0.0], vec![0.0, 0.5]])),
            constant(Param::Scalar(0.0)),
        );
        let r = condition_star_estimate(&m, 1, 10, 0).unwrap();
        assert!((r.i2 - 0.5f64.sqrt()).abs() < 1e-10);
        assert!(r.pass);
        let zero = AffineModel::new(
            1,
            constant(Param::Scalar(0.0)),
            Sampler::Gaussian {
                mean: Param::Scalar(0.0),
                std: Param::Scalar(1.0),
            },
        );
        let r = condition_star_estimate(&zero, 1, 2000, 0).unwrap();
        assert_eq!(r.i2, 0.0);
        assert!(r.pass);
        // E[(1 + |Z|)³] = 1 + 3√(2/π) + 3 + 2√(2/π)
        let exact = 4.0 + 5.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((r.i1 - exact).abs() < 4.0 * r.i1_stderr);
    }

    #[test]
    fn condition_star_uniform_a() {
        let m = AffineModel::new(
            1,
            Sampler::Uniform {
                low: Param::Scalar(0.2),
                high: Param::Scalar(0.8),
            },
            Sampler::Gaussian {
                mean: Param::Scalar(0.0),
                std: Param::Scalar(1.0),
            },
        );
        let r = condition_star_estimate(&m, 1, 20_000, 1).unwrap();
        // ∫ √a da / 0.6 over [0.2, 0.8]
        let exact = (0.8f64.powf(1.5) - 0.2f64.powf(1.5)) / 1.5 / 0.6;
        assert!((r.i2 - exact).abs() < 4.0 * r.i2_stderr);
        let comp = condition_star_estimate(&m, 2, 20_000, 1).unwrap();
        assert!(comp.i2 < r.i2);
    }

    #[test]
    fn condition_star_monotone_under_scaling() {
        let base = |s: f64| {
            AffineModel::new(
                1,
                Sampler::Uniform {
                    low: Param::Scalar(0.5 * s),
                    high: Param::Scalar(0.99 * s),
                },
                constant(Param::Scalar(1.0)),
            )
        };
        let mut prev = None;
        for s in [1.0, 0.9, 0.7, 0.5] {
            let r = condition_star_estimate(&base(s), 1, 500, 3).unwrap();
            if let Some(p) = prev {
                assert!(!(p && !r.pass));
            }
            prev = Some(r.pass);
        }
    }

    #[test]
    fn operator_norm_power_iteration() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let svd = a.clone().svd(false, false);
        let exact = svd.singular_values.max();
        assert!((operator_norm(&a, &mut path_rng(1, 1)) - exact).abs() < 1e-8);
    }

    #[test]
    fn catalog_chains() {
        let c = two_state(0.3, 0.4).unwrap();
        assert!((c.stationary()[0] - 4.0 / 7.0).abs() < 1e-14);
        let r = random_chain(8, 5).unwrap();
        assert!(1.0 - r.second_modulus() >= 0.2);
        assert_eq!(r.states(), 8);
        let d = discretized_ar1(0.5, 1.0, 41, 6.0).unwrap();
        assert_eq!(d.states(), 41);
        assert!(d.lattice().is_some());
        for i in 0..41 {
            assert!((d.kernel().row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(catalog().len(), 7);
    }

    #[test]
    fn tabulated_observable() {
        let obs = Observable::Tabulated {
            knots: vec![0.0, 1.0, 3.0],
            values: vec![0.0, 2.0, 3.0],
            coordinate: 0,
        };
        assert_eq!(obs.eval(&[-1.0], &[0.0]), 0.0);
        assert_eq!(obs.eval(&[0.5], &[0.0]), 1.0);
        assert_eq!(obs.eval(&[2.0], &[0.0]), 2.5);
        assert_eq!(obs.eval(&[9.0], &[0.0]), 3.0);
        assert_eq!(obs.lipschitz(), 2.0);
    }
}
