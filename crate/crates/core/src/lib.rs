#![cfg_attr(not(feature = "std"), no_std)]
#![doc = "Allocation-only kernel of the MemOS memory substrate."]

extern crate alloc;

pub mod canon;
pub mod context;
pub mod governance;
pub mod ids;
pub mod lifecycle;
pub mod memcube;
pub mod mip;
pub mod operator;
pub mod reader;
pub mod scheduler;

pub use ids::{CubeId, PrincipalId, Timestamp};
pub use memcube::*;
