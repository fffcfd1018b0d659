//! Seeded generator, exact-inference engine, and evaluation harness for
//! causal-reasoning benchmarks under structured noise.
//!
//! The pipeline runs in five stages: a causal graph is sampled
//! ([`dag`]), grounded in a scenario vocabulary ([`textgen`]), equipped
//! with conditional probability tables ([`scm`]), rendered to text with a
//! question whose answer is computed exactly ([`inference`]), and finally
//! perturbed by structured noise ([`noise`]). [`dataset`] wires the stages
//! together and [`eval`] scores answerers against the stored truth.

pub mod dag;
pub mod dataset;
pub mod eval;
pub mod fixtures;
pub mod inference;
pub mod noise;
pub mod par;
pub mod scm;
pub mod seed;
pub mod textgen;

pub use dag::{Dag, Edge, EdgeMetrics, Motif, NodeId, PerturbKind};
pub use dataset::{GenerationConfig, Instance};
pub use inference::{Answer, Event, Query, QueryKind};
pub use noise::{NoiseKind, NoiseRecord};
pub use scm::{Assignment, Cpt, Scm, VarDomain, VariableMeta};
