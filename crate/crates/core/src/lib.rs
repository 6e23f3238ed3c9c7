//! Work/span profiling for fork-join programs.
//!
//! Programs run on the [`runtime`] pool, which records a dynamic program
//! structure tree ([`dpst`]) with per-step work measured by a [`measure`]
//! counter. The tree streams into a profile file ([`profile_io`]). The
//! [`analysis`] module turns a profile into per-spawn-site work, critical
//! work and parallelism; [`causal`] estimates the parallelism gained by
//! speeding up annotated regions.

pub mod analysis;
pub mod causal;
pub mod cli;
pub mod dpst;
pub mod measure;
pub mod profile_io;
pub mod report;
pub mod runtime;
pub mod workloads;
