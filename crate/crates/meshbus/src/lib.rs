//! Brokerless publish/subscribe middleware.
//!
//! Processes build an in-process dataflow [`graph`] of channels and nodes.
//! Values published locally are shared by reference. A per-process
//! [`bridge`] forwards the channels named in `network_setting.yaml` to
//! other processes or devices as framed messages, and feeds frames it
//! receives back into the local graph. [`runtime::Runtime`] ties these
//! together with codecs, a parameter store, a clock and a transform tree.
//!
//! ```no_run
//! use meshbus::graph::InvokeType;
//! use meshbus::runtime::init_runtime;
//!
//! let rt = init_runtime(std::path::Path::new("config")).unwrap();
//! rt.from_any::<String, _>("greetings", InvokeType::Serial, "string", |msg| {
//!     println!("{}", *msg);
//! })
//! .unwrap();
//! rt.to_any("greetings", String::from("hello")).unwrap();
//! ```

pub mod bench;
pub mod bridge;
pub mod clock;
pub mod graph;
pub mod params;
pub mod runtime;
pub mod transforms;
pub mod yaml;

pub use meshbus_core as core;
pub use runtime::{init_runtime, Runtime, RuntimeError, RuntimeOptions};
