//! Kernel smoothing manifold models.
//!
//! This crate implements single-task manifold learning with a kernel
//! smoothing manifold model (KSMM) and its multi-task extension
//! (MT-KSMM), in which per-task models are coordinated by a higher-order
//! KSMM over a latent task space. Instance transfer merges samples
//! across nearby tasks, while model transfer smooths the task embeddings
//! themselves, yielding a general model that maps a sample latent point
//! and a task latent point to visible space.
//!
//! The crate is `no_std` compatible (with `alloc`); IO, file formats and
//! the experiment CLI live in the companion `mtksmm` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod datasets;
pub mod error;
pub mod ksmm;
pub mod metrics;
pub mod mt_ksmm;
pub mod numerics;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
