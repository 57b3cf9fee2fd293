//! Multi-fidelity power-flow toolkit core.
//!
//! Everything in this crate is pure computation over in-memory data:
//!
//! - [`grid`]: network data model, topology vectors, connectivity and
//!   admittance matrices.
//! - [`powerflow`]: the DC approximation (low fidelity) and the full
//!   Newton-Raphson AC solver (high fidelity) with per-line extraction of
//!   active flow, current, voltage and loading.
//! - [`scenario`]: n-k contingency and injection sampling, fidelity-tagged
//!   dataset assembly and z-score normalization.
//! - [`nn`]: dense tanh/identity networks with reverse-mode gradients, Glorot
//!   initialization and Adam.
//! - [`mfnn`]: topology-conditioned latent blocks, the two-fidelity composite
//!   network, its loss and training loop.
//! - [`eval`]: per-quantity error reports and sweep protocols.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, parallel
//! drivers, timing and the command line live in the companion `mfpf` crate.

#![no_std]
#![warn(rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod eval;
pub mod grid;
pub mod linalg;
pub mod mfnn;
pub mod nn;
pub mod powerflow;
pub mod rng;
pub mod scenario;

pub use grid::{
    Bus, BusKind, CaseError, EffectiveNetwork, Generator, Line, Load, NetworkCase, TopologyVector,
    Transformer,
};
pub use powerflow::{Fidelity, Injections, NrConfig, NrInit, PfError, PfSolution};
