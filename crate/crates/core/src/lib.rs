//! Exact and Monte Carlo laboratory for central-limit rates of strongly
//! ergodic Markov chains.
//!
//! Finite chains are handled exactly: the Poisson equation gives the
//! asymptotic variance, the Fourier kernels `Q(t)` are decomposed
//! spectrally, the martingale reduction of the characteristic function is
//! evaluated by transfer-operator contraction, and Kolmogorov distances
//! come from a lattice dynamic program. Continuous iterated models are
//! handled by seeded, order-independent simulation.

pub mod chain;
pub mod error;
pub mod linalg;
pub mod martingale;
pub mod models;
pub mod poisson;
pub mod rates;
pub mod report;
pub mod runner;
pub mod sim;
pub mod spectral;
pub mod stats;

pub use chain::{build_chain, ChainSpec, ErgodicityCertificate, FiniteChain, Lattice};
pub use error::{Error, Result};
pub use poisson::{solve_poisson, PoissonSolution};
