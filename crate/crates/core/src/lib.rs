//! Platform-independent core of the `meshbus` middleware.
//!
//! Everything in this crate is pure computation over owned or borrowed
//! buffers and needs only `alloc`:
//!
//! - [`name`]: validated channel and frame identifiers.
//! - [`wire`]: the bit-exact frame layout used whenever a message leaves
//!   the process, and the outer length prefix used on byte streams.
//! - [`codec`]: the pluggable serialization seam and the reference codecs.
//! - [`transform`]: rigid transforms and the coordinate frame tree.
//! - [`stats`]: latency summaries and the throughput rule used by the
//!   benchmark harness.
//!
//! IO, threads, configuration files and the CLI live in the `meshbus` crate.

#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod codec;
pub mod name;
pub mod stats;
pub mod transform;
pub mod wire;

pub use codec::{Codec, CodecRegistry, DecodeError, DynCodec, RegistryError, SharedCodec};
pub use name::{ChannelId, FrameId, NameError};
pub use transform::{FrameTree, RigidTransform, TreeError};
pub use wire::{pack, unpack, DiscardReason, PackError, WireFrame, WireHeader};
