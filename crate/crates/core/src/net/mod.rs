//! Networked feature oracle.
//!
//! Each worker holds one contiguous column block of `F` and answers the four
//! oracle queries for it over a small length-prefixed binary protocol. The
//! master fans a query out to all workers concurrently and reduces the
//! partial results in shard order, so a distributed run is bit-identical to
//! a [`crate::LocalOracle`] using the same [`crate::ShardLayout`].
//!
//! Wire format: `[u64 LE payload length][u8 opcode][payload]`. Matrices are
//! row-major `f64` preceded by `u32` row and column counts; vectors are
//! `n x 1` matrices.

pub mod frame;
mod master;
mod worker;

pub use master::{timeout_from_env, DistributedOracle, Traffic, DEFAULT_TIMEOUT_SECS, TIMEOUT_ENV};
pub use worker::{decode_load_shard, worker_serve, write_load_shard_payload, Worker};

/// Upper bound on the bytes one connection carries in one direction for a
/// single query, with `n` the instances held by that worker.
pub fn per_query_byte_budget(k: usize, n: usize) -> u64 {
    8 * (k * k + n) as u64 + 64
}
