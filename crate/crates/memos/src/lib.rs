//! Runtime for the MemOS memory substrate: storage backends, the vault,
//! the kernel API, pipelines, the HTTP service and the workload harness.

pub mod backend;
pub mod config;
pub mod kernel;
pub mod pipeline;
pub mod service;
pub mod store;
pub mod vault;
pub mod workload;

pub use kernel::{Kernel, KernelConfig, KernelError, Session};
pub use memos_core;
