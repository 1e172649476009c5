//! In-process dataflow graph.
//!
//! Nodes subscribe to a channel with a callback and an [`InvokeType`].
//! Publishing wraps the value in an `Arc` once and hands every node on the
//! channel a clone of that `Arc`, so subscribers observe the same allocation
//! and no payload bytes are copied. Callbacks run on a work-stealing pool:
//!
//! - `Serial` nodes own a FIFO queue. At most one pool task drains it, so the
//!   callback never overlaps itself and sees messages in arrival order.
//! - `Concurrent` nodes get one pool task per message and may run in
//!   parallel with themselves.
//!
//! Publishing never waits for a callback.

use std::any::Any;
use std::cell::Cell;
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::ops::Deref;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use meshbus_core::name::{self, ChannelId, NameError};

/// Type-erased payload shared by every subscriber of one publication.
pub type Payload = Arc<dyn Any + Send + Sync>;

pub const DEFAULT_HIGH_WATERMARK: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvokeType {
    /// One invocation at a time, in arrival order.
    Serial,
    /// Invocations may overlap; no ordering.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node#{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("graph has been shut down")]
    ShutDown,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid channel: {0}")]
    InvalidChannel(#[from] NameError),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
pub struct GraphConfig {
    /// Worker threads; `None` uses the detected hardware parallelism.
    pub workers: Option<usize>,
    /// Serial queue length above which a warning is logged. Nothing is
    /// dropped.
    pub high_watermark: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            workers: None,
            high_watermark: DEFAULT_HIGH_WATERMARK,
        }
    }
}

/// One publication as seen by a node.
#[derive(Clone)]
pub struct Envelope {
    pub channel: ChannelId,
    /// Per-channel publication counter, starting at 1.
    pub sequence: u64,
    pub payload: Payload,
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Envelope")
            .field("channel", &self.channel)
            .field("sequence", &self.sequence)
            .finish_non_exhaustive()
    }
}

/// A typed view of an [`Envelope`] handed to `from_graph` callbacks.
#[derive(Debug)]
pub struct Delivery<T> {
    pub channel: ChannelId,
    pub sequence: u64,
    pub payload: Arc<T>,
}

impl<T> Deref for Delivery<T> {
    type Target = T;

    fn deref(&self) -> &T {
        &self.payload
    }
}

type Callback = Box<dyn Fn(&Envelope) + Send + Sync>;

#[derive(Default)]
struct SerialQueue {
    queue: VecDeque<Envelope>,
    draining: bool,
    warned: bool,
}

struct Activity {
    active: bool,
    running: usize,
}

struct Node {
    id: NodeId,
    channel: ChannelId,
    invoke: InvokeType,
    callback: Callback,
    serial: Mutex<SerialQueue>,
    activity: Mutex<Activity>,
    quiescent: Condvar,
}

struct ChannelEntry {
    channel: ChannelId,
    nodes: Vec<Arc<Node>>,
    next_sequence: AtomicU64,
}

struct Shared {
    registry: RwLock<HashMap<ChannelId, ChannelEntry>>,
    pending: Mutex<usize>,
    idle: Condvar,
    closed: AtomicBool,
    high_watermark: usize,
}

thread_local! {
    static CURRENT_NODE: Cell<Option<NodeId>> = const { Cell::new(None) };
}

impl Shared {
    fn begin(&self, n: usize) {
        *self.pending.lock().unwrap() += n;
    }

    fn finish(&self) {
        let mut pending = self.pending.lock().unwrap();
        *pending -= 1;
        if *pending == 0 {
            self.idle.notify_all();
        }
    }

    /// Runs the node's callback for one envelope unless the node has been
    /// deregistered.
    fn invoke(&self, node: &Node, env: &Envelope) {
        {
            let mut activity = node.activity.lock().unwrap();
            if !activity.active {
                return;
            }
            activity.running += 1;
        }
        let previous = CURRENT_NODE.with(|c| c.replace(Some(node.id)));
        let outcome = catch_unwind(AssertUnwindSafe(|| (node.callback)(env)));
        CURRENT_NODE.with(|c| c.set(previous));
        if outcome.is_err() {
            log::error!(
                "callback of {} on {} panicked at sequence {}",
                node.id,
                node.channel,
                env.sequence
            );
        }
        let mut activity = node.activity.lock().unwrap();
        activity.running -= 1;
        if activity.running == 0 {
            node.quiescent.notify_all();
        }
    }

    fn drain_serial(&self, node: &Node) {
        loop {
            let next = {
                let mut q = node.serial.lock().unwrap();
                match q.queue.pop_front() {
                    Some(env) => {
                        if q.warned && q.queue.len() < self.high_watermark / 2 {
                            q.warned = false;
                        }
                        env
                    }
                    None => {
                        q.draining = false;
                        return;
                    }
                }
            };
            self.invoke(node, &next);
            self.finish();
        }
    }
}

/// The per-process computational graph.
pub struct Graph {
    shared: Arc<Shared>,
    pool: Mutex<Option<Arc<rayon::ThreadPool>>>,
    next_node: AtomicU64,
    workers: usize,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("workers", &self.workers)
            .field("closed", &self.is_shut_down())
            .finish_non_exhaustive()
    }
}

impl Graph {
    pub fn new(config: GraphConfig) -> Result<Self, GraphError> {
        let workers = config
            .workers
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("meshbus-worker-{i}"))
            .build()
            .map_err(|e| GraphError::Pool(e.to_string()))?;
        Ok(Self {
            shared: Arc::new(Shared {
                registry: RwLock::new(HashMap::new()),
                pending: Mutex::new(0),
                idle: Condvar::new(),
                closed: AtomicBool::new(false),
                high_watermark: config.high_watermark.max(1),
            }),
            pool: Mutex::new(Some(Arc::new(pool))),
            next_node: AtomicU64::new(1),
            workers,
        })
    }

    pub fn with_defaults() -> Result<Self, GraphError> {
        Self::new(GraphConfig::default())
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_shut_down(&self) -> bool {
        self.shared.closed.load(Ordering::Acquire)
    }

    /// Publishes `value` on `channel`.
    pub fn to_graph<T: Any + Send + Sync>(&self, channel: &str, value: T) -> Result<(), GraphError> {
        self.publish(channel, Arc::new(value))
    }

    /// Publishes an already shared value; subscribers receive clones of
    /// this exact `Arc`.
    pub fn to_graph_shared<T: Any + Send + Sync>(
        &self,
        channel: &str,
        value: Arc<T>,
    ) -> Result<(), GraphError> {
        self.publish(channel, value)
    }

    /// Publishes a type-erased payload.
    pub fn publish(&self, channel: &str, payload: Payload) -> Result<(), GraphError> {
        if self.is_shut_down() {
            return Err(GraphError::ShutDown);
        }
        let registry = self.shared.registry.read().unwrap();
        let Some(entry) = registry.get(channel).filter(|e| !e.nodes.is_empty()) else {
            name::validate(channel)?;
            return Ok(());
        };
        let pool = match self.pool.lock().unwrap().as_ref() {
            Some(pool) => Arc::clone(pool),
            None => return Err(GraphError::ShutDown),
        };
        let env = Envelope {
            channel: entry.channel.clone(),
            sequence: entry.next_sequence.fetch_add(1, Ordering::Relaxed) + 1,
            payload,
        };
        self.shared.begin(entry.nodes.len());
        for node in &entry.nodes {
            match node.invoke {
                InvokeType::Serial => self.enqueue_serial(&pool, node, env.clone()),
                InvokeType::Concurrent => {
                    let shared = Arc::clone(&self.shared);
                    let node = Arc::clone(node);
                    let env = env.clone();
                    pool.spawn(move || {
                        // Not-yet-started concurrent work is cancelled by shutdown.
                        if !shared.closed.load(Ordering::Acquire) {
                            shared.invoke(&node, &env);
                        }
                        shared.finish();
                    });
                }
            }
        }
        Ok(())
    }

    fn enqueue_serial(&self, pool: &rayon::ThreadPool, node: &Arc<Node>, env: Envelope) {
        let start = {
            let mut q = node.serial.lock().unwrap();
            q.queue.push_back(env);
            if q.queue.len() > self.shared.high_watermark && !q.warned {
                q.warned = true;
                log::warn!(
                    "{} on {} has {} queued messages",
                    node.id,
                    node.channel,
                    q.queue.len()
                );
            }
            !std::mem::replace(&mut q.draining, true)
        };
        if start {
            let shared = Arc::clone(&self.shared);
            let node = Arc::clone(node);
            pool.spawn(move || shared.drain_serial(&node));
        }
    }

    /// Registers a typed node. Payloads of another type published on the
    /// same channel are skipped with a warning.
    pub fn from_graph<T, F>(
        &self,
        channel: &str,
        invoke: InvokeType,
        callback: F,
    ) -> Result<NodeId, GraphError>
    where
        T: Any + Send + Sync,
        F: Fn(Delivery<T>) + Send + Sync + 'static,
    {
        self.from_graph_raw(channel, invoke, move |env: &Envelope| {
            match Arc::clone(&env.payload).downcast::<T>() {
                Ok(payload) => callback(Delivery {
                    channel: env.channel.clone(),
                    sequence: env.sequence,
                    payload,
                }),
                Err(_) => log::warn!(
                    "dropping message on {}: expected {}",
                    env.channel,
                    std::any::type_name::<T>()
                ),
            }
        })
    }

    /// Registers a node that receives the raw envelope.
    pub fn from_graph_raw<F>(
        &self,
        channel: &str,
        invoke: InvokeType,
        callback: F,
    ) -> Result<NodeId, GraphError>
    where
        F: Fn(&Envelope) + Send + Sync + 'static,
    {
        if self.is_shut_down() {
            return Err(GraphError::ShutDown);
        }
        let channel = ChannelId::new(channel)?;
        let id = NodeId(self.next_node.fetch_add(1, Ordering::Relaxed));
        let node = Arc::new(Node {
            id,
            channel: channel.clone(),
            invoke,
            callback: Box::new(callback),
            serial: Mutex::new(SerialQueue::default()),
            activity: Mutex::new(Activity {
                active: true,
                running: 0,
            }),
            quiescent: Condvar::new(),
        });
        let mut registry = self.shared.registry.write().unwrap();
        registry
            .entry(channel.clone())
            .or_insert_with(|| ChannelEntry {
                channel,
                nodes: Vec::new(),
                next_sequence: AtomicU64::new(0),
            })
            .nodes
            .push(node);
        Ok(id)
    }

    /// Removes a node. No delivery starts after this returns; a callback
    /// that is already running is waited for, unless the caller is that
    /// callback.
    pub fn deregister(&self, id: NodeId) -> Result<(), GraphError> {
        let node = {
            let mut registry = self.shared.registry.write().unwrap();
            let found = registry.values_mut().find_map(|entry| {
                let pos = entry.nodes.iter().position(|n| n.id == id)?;
                Some(entry.nodes.remove(pos))
            });
            found.ok_or(GraphError::UnknownNode(id))?
        };
        let mut activity = node.activity.lock().unwrap();
        activity.active = false;
        if CURRENT_NODE.with(Cell::get) == Some(id) {
            return Ok(());
        }
        while activity.running > 0 {
            activity = node.quiescent.wait(activity).unwrap();
        }
        Ok(())
    }

    /// Number of nodes currently registered on `channel`.
    pub fn subscriber_count(&self, channel: &str) -> usize {
        self.shared
            .registry
            .read()
            .unwrap()
            .get(channel)
            .map_or(0, |e| e.nodes.len())
    }

    /// Deliveries queued or running.
    pub fn pending(&self) -> usize {
        *self.shared.pending.lock().unwrap()
    }

    /// Waits until every queued delivery has completed. Returns `false` on
    /// timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut pending = self.shared.pending.lock().unwrap();
        while *pending > 0 {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            pending = self.shared.idle.wait_timeout(pending, deadline - now).unwrap().0;
        }
        true
    }

    /// Stops accepting publications, runs queued serial work to completion,
    /// cancels concurrent work that has not started, then stops the
    /// workers. Idempotent.
    pub fn shutdown(&self) {
        if self.shared.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        let on_worker = CURRENT_NODE.with(Cell::get).is_some();
        if !on_worker {
            let mut pending = self.shared.pending.lock().unwrap();
            while *pending > 0 {
                pending = self.shared.idle.wait(pending).unwrap();
            }
        }
        self.pool.lock().unwrap().take();
    }
}

impl Drop for Graph {
    fn drop(&mut self) {
        self.shutdown();
    }
}
