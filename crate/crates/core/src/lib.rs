//! Classical Hamiltonian ensembles observed through quadratic observables.
//!
//! Complex coordinates `z = (q + ip)/√2` carry the Poisson bracket
//! `{f, g} = −i Σ (∂f/∂z ∂g/∂z̄ − ∂f/∂z̄ ∂g/∂z)`. For U(1)-invariant
//! Hamiltonians the moment matrix `K̂ = E[z z†]` of an ensemble evolves as a
//! density matrix, `i dK̂/dt = [ĥ, K̂]`, with `ĥ` the quadratic part of `H`.
//!
//! - [`observable`]: polynomial observables and their brackets
//! - [`dynamics`]: the classical flow, conservation checks, `ε` rescaling
//! - [`ensemble`]: distributions, sampling and the moment matrix
//! - [`quantum`]: unitary evolution of `K̂`, Magnus propagation, density
//!   matrices and pure-state decompositions
//! - [`decoherence`]: adiabatic frames and dephasing under random slow drives
//! - [`experiment`]: TOML configs, pipelines and reproducible artifacts
//!
//! Each capability has a runnable example:
//!
//! ```text
//! cargo run --release --example poisson_brackets
//! cargo run --release --example classical_flow
//! cargo run --release --example observer_equivalence
//! cargo run --release --example classical_vs_quantum
//! cargo run --release --example epsilon_scaling
//! cargo run --release --example adiabatic_decoherence
//! cargo run --release --example pure_state_decomposition
//! cargo run --release --example run_config -- configs/decoherence.toml out/
//! ```

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoherence;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod observable;
pub mod quantum;
pub mod rng;

pub use error::{Error, Result};
