//! The application-facing runtime: one graph, one bridge, codecs,
//! parameters, time and transforms.
//!
//! [`Runtime::to_any`] always delivers locally by reference and, when the
//! network config exports the channel, serializes once and hands the frame
//! to the bridge. [`Runtime::from_any`] registers a local node and binds
//! the channel to a codec so frames arriving from the network can be
//! decoded into the same type. Application code is the same whether a
//! channel stays in-process or crosses the network; only the config files
//! differ.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use meshbus_core::codec::{BytesCodec, Codec, CodecRegistry, RegistryError, SharedCodec, StringCodec, U64Codec};
use meshbus_core::ChannelId;

use crate::bridge::{Bridge, BridgeError, BridgeStats, ConfigError, InboundRouter, NetworkConfig, RouteOutcome};
use crate::clock::TimeSystem;
use crate::graph::{Delivery, Envelope, Graph, GraphConfig, GraphError, InvokeType, NodeId};
use crate::params::{ParamError, ParameterStore, Value};
use crate::transforms::{TransformLoadError, TransformTree};

pub const NETWORK_FILE: &str = "network_setting.yaml";
pub const PARAMS_FILE: &str = "params.yaml";
/// Parameter holding the worker count.
pub const WORKERS_KEY: &str = "data_graph.workers";

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Transforms(#[from] TransformLoadError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{WORKERS_KEY} must be a positive integer, got {0}")]
    BadWorkers(String),
    /// The value could not be sent over the network because no codec is
    /// registered for it. Local delivery still happened.
    #[error("no codec for {wanted} on channel {channel}")]
    MissingCodec { channel: String, wanted: String },
    #[error("channel {channel} is bound to codec {bound:?}, cannot bind {requested:?}")]
    ChannelCodecConflict {
        channel: String,
        bound: String,
        requested: String,
    },
    #[error("codec {tag:?} handles {codec_type}, not {requested}")]
    CodecTypeMismatch {
        tag: String,
        codec_type: &'static str,
        requested: &'static str,
    },
}

/// Everything needed to start a runtime without reading files.
#[derive(Debug, Default)]
pub struct RuntimeOptions {
    pub network: NetworkConfig,
    pub params: ParameterStore,
    pub graph: GraphConfig,
}

#[derive(Clone)]
struct Binding {
    tag: String,
    codec: SharedCodec,
}

/// Decodes inbound payloads with the channel's bound codec and publishes
/// them into the graph.
struct GraphRouter {
    graph: Arc<Graph>,
    bindings: RwLock<HashMap<ChannelId, Binding>>,
}

impl InboundRouter for GraphRouter {
    fn route(&self, channel: &ChannelId, data_string: &[u8]) -> RouteOutcome {
        let Some(codec) = self
            .bindings
            .read()
            .unwrap()
            .get(channel)
            .map(|b| Arc::clone(&b.codec))
        else {
            return RouteOutcome::Unrouted;
        };
        let payload = match codec.decode_any(data_string) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("{channel}: {e}");
                return RouteOutcome::Rejected;
            }
        };
        match self.graph.publish(channel.as_str(), payload) {
            Ok(()) => RouteOutcome::Delivered,
            Err(_) => RouteOutcome::Unrouted,
        }
    }
}

pub struct Runtime {
    graph: Arc<Graph>,
    router: Arc<GraphRouter>,
    bridge: Bridge,
    codecs: RwLock<CodecRegistry>,
    params: ParameterStore,
    clock: TimeSystem,
    transforms: TransformTree,
    config_dir: Option<PathBuf>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("bridge", &self.bridge)
            .field("workers", &self.graph.workers())
            .field("config_dir", &self.config_dir)
            .finish_non_exhaustive()
    }
}

/// Starts a runtime from a config directory holding an optional
/// `network_setting.yaml` and an optional `params.yaml`.
pub fn init_runtime(config_dir: &Path) -> Result<Runtime, RuntimeError> {
    Runtime::from_dir(config_dir, |_| Ok(()))
}

impl Runtime {
    /// Like [`init_runtime`]; `adjust` can modify parameters (for example
    /// command-line overrides) before they are used.
    pub fn from_dir(
        config_dir: &Path,
        adjust: impl FnOnce(&ParameterStore) -> Result<(), ParamError>,
    ) -> Result<Runtime, RuntimeError> {
        let network_file = config_dir.join(NETWORK_FILE);
        let network = if network_file.is_file() {
            NetworkConfig::load(&network_file)?
        } else {
            NetworkConfig::default()
        };
        let params_file = config_dir.join(PARAMS_FILE);
        let params = if params_file.is_file() {
            ParameterStore::load(&params_file)?
        } else {
            ParameterStore::new()
        };
        adjust(&params)?;
        let mut rt = Runtime::start(RuntimeOptions {
            network,
            params,
            graph: GraphConfig::default(),
        })?;
        rt.config_dir = Some(config_dir.to_path_buf());
        Ok(rt)
    }

    /// Starts the graph, loads transforms from the parameters and starts
    /// the bridge if the network config is not empty. The clock epoch is
    /// the moment of this call.
    pub fn start(options: RuntimeOptions) -> Result<Runtime, RuntimeError> {
        let RuntimeOptions {
            network,
            params,
            mut graph,
        } = options;
        match params.get(WORKERS_KEY) {
            Ok(Value::Int(n)) if n > 0 => graph.workers = Some(n as usize),
            Ok(other) => return Err(RuntimeError::BadWorkers(other.to_string())),
            Err(ParamError::NotFound(_)) => {}
            Err(e) => return Err(e.into()),
        }
        let transforms = TransformTree::new();
        transforms.load_params(&params)?;

        let mut codecs = CodecRegistry::new();
        codecs.register_codec("bytes", BytesCodec)?;
        codecs.register_codec("u64", U64Codec)?;
        codecs.register_codec("string", StringCodec)?;

        let graph = Arc::new(Graph::new(graph)?);
        let router = Arc::new(GraphRouter {
            graph: Arc::clone(&graph),
            bindings: RwLock::new(HashMap::new()),
        });
        let bridge = Bridge::start(&network, Arc::clone(&router) as Arc<dyn InboundRouter>)?;
        Ok(Runtime {
            graph,
            router,
            bridge,
            codecs: RwLock::new(codecs),
            params,
            clock: TimeSystem::new(),
            transforms,
            config_dir: None,
        })
    }

    /// Registers a codec under `tag`. Re-registering the same codec is a
    /// no-op.
    pub fn register_codec<C: Codec>(&self, tag: &str, codec: C) -> Result<(), RuntimeError> {
        Ok(self.codecs.write().unwrap().register_codec(tag, codec)?)
    }

    pub fn register_shared_codec(&self, tag: &str, codec: SharedCodec) -> Result<(), RuntimeError> {
        Ok(self.codecs.write().unwrap().register(tag, codec)?)
    }

    /// Publishes `value` on `channel`: by reference to local nodes, and
    /// serialized to the network if the channel is exported.
    pub fn to_any<T: Any + Send + Sync>(&self, channel: &str, value: T) -> Result<(), RuntimeError> {
        self.to_any_shared(channel, Arc::new(value))
    }

    /// Like [`to_any`](Self::to_any) for a value that is already shared.
    /// Local nodes receive clones of this `Arc`.
    pub fn to_any_shared<T: Any + Send + Sync>(
        &self,
        channel: &str,
        value: Arc<T>,
    ) -> Result<(), RuntimeError> {
        self.graph.publish(channel, Arc::clone(&value) as Arc<dyn Any + Send + Sync>)?;
        if !self.bridge.exports(channel) {
            return Ok(());
        }
        let (tag, codec) = self.codec_for::<T>(channel)?;
        self.bridge
            .publish_outbound_with(channel, |out| codec.encode_any(&*value, out))
            .map_err(|e| RuntimeError::CodecTypeMismatch {
                tag,
                codec_type: e.expected,
                requested: std::any::type_name::<T>(),
            })?;
        Ok(())
    }

    /// The channel's bound codec if it has one, else the first codec
    /// registered for `T`.
    fn codec_for<T: Any>(&self, channel: &str) -> Result<(String, SharedCodec), RuntimeError> {
        if let Some(b) = self.router.bindings.read().unwrap().get(channel) {
            if b.codec.value_type() == TypeId::of::<T>() {
                return Ok((b.tag.clone(), Arc::clone(&b.codec)));
            }
            return Err(RuntimeError::CodecTypeMismatch {
                tag: b.tag.clone(),
                codec_type: b.codec.value_type_name(),
                requested: std::any::type_name::<T>(),
            });
        }
        let codecs = self.codecs.read().unwrap();
        codecs
            .for_type(TypeId::of::<T>())
            .map(|(tag, c)| (tag.to_string(), Arc::clone(c)))
            .ok_or_else(|| RuntimeError::MissingCodec {
                channel: channel.to_string(),
                wanted: std::any::type_name::<T>().to_string(),
            })
    }

    /// Registers `callback` for `channel` and binds the channel to the
    /// codec `type_tag`, so values published on it by other processes are
    /// decoded and delivered too.
    pub fn from_any<T, F>(
        &self,
        channel: &str,
        invoke: InvokeType,
        type_tag: &str,
        callback: F,
    ) -> Result<NodeId, RuntimeError>
    where
        T: Any + Send + Sync,
        F: Fn(Delivery<T>) + Send + Sync + 'static,
    {
        let channel_id = ChannelId::new(channel).map_err(GraphError::from)?;
        let codec = self
            .codecs
            .read()
            .unwrap()
            .get(type_tag)
            .cloned()
            .ok_or_else(|| RuntimeError::MissingCodec {
                channel: channel.to_string(),
                wanted: format!("tag {type_tag:?}"),
            })?;
        if codec.value_type() != TypeId::of::<T>() {
            return Err(RuntimeError::CodecTypeMismatch {
                tag: type_tag.to_string(),
                codec_type: codec.value_type_name(),
                requested: std::any::type_name::<T>(),
            });
        }
        {
            let mut bindings = self.router.bindings.write().unwrap();
            match bindings.get(&channel_id) {
                Some(b) if b.tag != type_tag => {
                    return Err(RuntimeError::ChannelCodecConflict {
                        channel: channel.to_string(),
                        bound: b.tag.clone(),
                        requested: type_tag.to_string(),
                    })
                }
                Some(_) => {}
                None => {
                    bindings.insert(
                        channel_id,
                        Binding {
                            tag: type_tag.to_string(),
                            codec,
                        },
                    );
                }
            }
        }
        Ok(self.graph.from_graph(channel, invoke, callback)?)
    }

    /// Local-only publish.
    pub fn to_graph<T: Any + Send + Sync>(&self, channel: &str, value: T) -> Result<(), RuntimeError> {
        Ok(self.graph.to_graph(channel, value)?)
    }

    /// Local-only subscription; no codec binding.
    pub fn from_graph<T, F>(&self, channel: &str, invoke: InvokeType, callback: F) -> Result<NodeId, RuntimeError>
    where
        T: Any + Send + Sync,
        F: Fn(Delivery<T>) + Send + Sync + 'static,
    {
        Ok(self.graph.from_graph(channel, invoke, callback)?)
    }

    pub fn from_graph_raw<F>(&self, channel: &str, invoke: InvokeType, callback: F) -> Result<NodeId, RuntimeError>
    where
        F: Fn(&Envelope) + Send + Sync + 'static,
    {
        Ok(self.graph.from_graph_raw(channel, invoke, callback)?)
    }

    pub fn deregister(&self, id: NodeId) -> Result<(), RuntimeError> {
        Ok(self.graph.deregister(id)?)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn bridge(&self) -> &Bridge {
        &self.bridge
    }

    pub fn bridge_stats(&self) -> BridgeStats {
        self.bridge.stats()
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn clock(&self) -> &TimeSystem {
        &self.clock
    }

    pub fn transforms(&self) -> &TransformTree {
        &self.transforms
    }

    pub fn config_dir(&self) -> Option<&Path> {
        self.config_dir.as_deref()
    }

    /// Stops the network first so nothing new arrives, then the graph.
    pub fn shutdown(&self) {
        self.bridge.shutdown();
        self.graph.shutdown();
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    #[test]
    fn local_round_trip() {
        let rt = Runtime::start(RuntimeOptions::default()).unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let h = Arc::clone(&hits);
        rt.from_any::<u64, _>("n", InvokeType::Serial, "u64", move |d| {
            assert_eq!(*d, 7);
            h.fetch_add(1, Ordering::SeqCst);
        })
        .unwrap();
        rt.to_any("n", 7u64).unwrap();
        assert!(rt.graph().wait_idle(Duration::from_secs(5)));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        assert_eq!(rt.bridge_stats(), BridgeStats::default());
    }

    #[test]
    fn binding_rules() {
        let rt = Runtime::start(RuntimeOptions::default()).unwrap();
        rt.from_any::<u64, _>("c", InvokeType::Serial, "u64", |_| {}).unwrap();
        rt.from_any::<u64, _>("c", InvokeType::Concurrent, "u64", |_| {}).unwrap();
        assert!(matches!(
            rt.from_any::<String, _>("c", InvokeType::Serial, "string", |_| {}),
            Err(RuntimeError::ChannelCodecConflict { .. })
        ));
        assert!(matches!(
            rt.from_any::<String, _>("d", InvokeType::Serial, "u64", |_| {}),
            Err(RuntimeError::CodecTypeMismatch { .. })
        ));
        assert!(matches!(
            rt.from_any::<u64, _>("d", InvokeType::Serial, "nope", |_| {}),
            Err(RuntimeError::MissingCodec { .. })
        ));
    }

    #[test]
    fn workers_from_params() {
        let params = ParameterStore::from_yaml_str("data_graph:\n  workers: 3\n").unwrap();
        let rt = Runtime::start(RuntimeOptions {
            params,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(rt.graph().workers(), 3);
        let params = ParameterStore::from_yaml_str("data_graph:\n  workers: many\n").unwrap();
        assert!(matches!(
            Runtime::start(RuntimeOptions {
                params,
                ..Default::default()
            }),
            Err(RuntimeError::BadWorkers(_))
        ));
    }
}
