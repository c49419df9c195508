//! Guided aging evolution over the NAS-Bench-201 cell space.
//!
//! Each evolution cycle mutates a tournament winner into several children,
//! ranks them with a training-free Jacobian-correlation score, and pays for a
//! full fitness evaluation only on the top child.
//!
//! Modules, bottom-up:
//!
//! - [`arch`]: the six-edge cell genome, sampling, mutation, cell strings.
//! - [`autodiff`]: dense tensors and a reverse-mode tape for input gradients.
//! - [`network`]: turns a cell into a small stem/cells/head network.
//! - [`proxy`]: the Jacobian-correlation score and the [`proxy::Proxy`] trait.
//! - [`bench`]: fitness sources (tabular JSONL, synthetic landscapes, noisy mock proxies).
//! - [`evolution`]: guided evolution, regularized evolution, random search, and the
//!   name-keyed [`evolution::MethodRegistry`].
//! - [`experiment`]: run configuration, multi-seed runs, sweeps, and reports.

pub mod arch;
pub mod autodiff;
pub mod bench;
pub mod evolution;
pub mod experiment;
pub mod network;
pub mod proxy;
pub mod stats;

pub use arch::{ArchEncoding, Operation};
pub use evolution::{EvolutionConfig, FitnessSource, MethodRegistry, SearchMethod, SearchResult};
pub use proxy::{Proxy, ProxyScore};
