//! Neuroevolution toolkit that searches CNN architectures for profiling
//! side-channel attacks with a genetic algorithm.
//!
//! The pipeline runs end to end at desk scale:
//!
//! 1. [`trace_model`] generates synthetic AES first-round S-box leakage
//!    traces with optional Boolean masking and desynchronization, and
//!    performs balanced sampling and normalization.
//! 2. [`trace_store`] persists trace sets in a bit-exact flat binary format.
//! 3. [`neural_engine`] is a minimal, gradient-checked 1-D neural network
//!    engine able to express, train, and run every network the genome
//!    space encodes.
//! 4. [`genome`] encodes a CNN architecture as an evolvable genome with
//!    crossover and polynomial-mutation operators.
//! 5. [`evolution`] runs the generational loop: fitness by short training,
//!    tournament selection with truncation elitism, offspring production,
//!    and checkpointing.
//! 6. [`attack_eval`] scores trained networks as profiling attacks via
//!    log-probability accumulation, key rank, and guessing entropy.
//!
//! All randomness flows through explicit 64-bit seeds; repeated runs are
//! bit-identical regardless of worker count.

pub mod attack_eval;
pub mod evolution;
pub mod genome;
pub mod neural_engine;
pub mod rng;
pub mod trace_model;
pub mod trace_store;

pub use attack_eval::AttackReport;
pub use evolution::{EvolutionConfig, GenerationRecord};
pub use genome::Genome;
pub use neural_engine::{LayerSpec, TrainedNetwork};

pub use trace_model::{TraceParams, TraceSet};
