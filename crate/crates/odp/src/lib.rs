//! Obliviously differentially private statistics over a simulated two-tier
//! memory model.
//!
//! Every algorithm here runs against a [`extmem::TraceRecorder`] that logs
//! each external-memory access; the privacy guarantee covers the joint
//! distribution of the released output and that access trace. The crate
//! provides the query algorithms (histogram, distinct count, heavy hitters,
//! frequency oracle), the oblivious building blocks they stand on (Batcher
//! sorting networks, tag-based shuffles, linear-scan ORAM), an empirical
//! verification harness, and a privacy-budget ledger.

pub mod budget;
pub mod dataset;
pub mod extmem;
pub mod noise;
pub mod oprim;
pub mod queries;
pub mod sketches;
pub mod verify;
