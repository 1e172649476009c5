//! Network bridge: moves frames for configured channels between processes
//! and devices.
//!
//! A bridge binds at most one publisher endpoint and connects to any number
//! of subscriber endpoints. Every connection is a byte stream of
//! length-prefixed frames. A subscriber opens the conversation with one
//! frame on [`SUBSCRIBE_CHANNEL`] listing the channels it wants, and the
//! publisher only forwards those. The same handshake carries the
//! subscriber's instance id so a bridge never feeds its own frames back to
//! itself.
//!
//! Each accepted peer has a writer thread draining a bounded queue, so
//! [`Bridge::publish_outbound`] never waits on the network. Each subscriber
//! link has a reader thread that reconnects with exponential backoff and
//! hands inbound frames to an [`InboundRouter`].

pub mod config;
pub mod transport;

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use meshbus_core::wire::{self, MAX_PAYLOAD_LEN, STREAM_PREFIX_LEN};
use meshbus_core::ChannelId;

pub use config::{
    ConfigError, Endpoint, InvalidUri, NetworkConfig, PublisherConfig, Scheme, SubscriberConfig,
};
use transport::{Listener, ReadOutcome, Stream};

/// Channel of the first frame a subscriber sends.
pub const SUBSCRIBE_CHANNEL: &str = "__subscribe";
/// Frames buffered per peer before the oldest is dropped.
pub const PEER_QUEUE_CAPACITY: usize = 1024;
pub const BACKOFF_INITIAL: Duration = Duration::from_millis(100);
pub const BACKOFF_MAX: Duration = Duration::from_secs(5);

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// Result of handing an inbound payload to the local side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteOutcome {
    Delivered,
    /// Nothing local is bound to the channel.
    Unrouted,
    /// The payload did not decode.
    Rejected,
}

/// Receives the `(channel, data_string)` of every well-formed inbound frame.
pub trait InboundRouter: Send + Sync {
    fn route(&self, channel: &ChannelId, data_string: &[u8]) -> RouteOutcome;
}

impl<F> InboundRouter for F
where
    F: Fn(&ChannelId, &[u8]) -> RouteOutcome + Send + Sync,
{
    fn route(&self, channel: &ChannelId, data_string: &[u8]) -> RouteOutcome {
        self(channel, data_string)
    }
}

/// Monotonic counters. Byte counts include the 4-byte stream prefix when
/// the frame crossed a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BridgeStats {
    /// Frames written to a peer (one per peer per frame).
    pub frames_sent: u64,
    /// Frames handed to dispatch, including the discarded and unrouted.
    pub frames_received: u64,
    pub frames_discarded: u64,
    pub frames_unrouted: u64,
    /// Frames lost to a full peer queue.
    pub frames_dropped: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Default)]
struct Counters {
    frames_sent: AtomicU64,
    frames_received: AtomicU64,
    frames_discarded: AtomicU64,
    frames_unrouted: AtomicU64,
    frames_dropped: AtomicU64,
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> BridgeStats {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        BridgeStats {
            frames_sent: get(&self.frames_sent),
            frames_received: get(&self.frames_received),
            frames_discarded: get(&self.frames_discarded),
            frames_unrouted: get(&self.frames_unrouted),
            frames_dropped: get(&self.frames_dropped),
            bytes_sent: get(&self.bytes_sent),
            bytes_received: get(&self.bytes_received),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("cannot bind {endpoint}: {source}")]
    BindFailure {
        endpoint: Endpoint,
        #[source]
        source: io::Error,
    },
    #[error("cannot start bridge thread: {0}")]
    Spawn(#[source] io::Error),
}

/// Subscription request sent as the first frame of a connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub instance: Option<u64>,
    pub channels: Vec<ChannelId>,
}

impl Handshake {
    /// `instance <hex>` on the first line (it contains a space, so it can
    /// never be a channel), then one channel per line.
    pub fn encode(&self) -> Vec<u8> {
        let mut lines = Vec::with_capacity(self.channels.len() + 1);
        if let Some(id) = self.instance {
            lines.push(format!("instance {id:016x}"));
        }
        lines.extend(self.channels.iter().map(|c| c.to_string()));
        lines.join("\n").into_bytes()
    }

    pub fn decode(data: &[u8]) -> Handshake {
        let text = String::from_utf8_lossy(data);
        let mut hs = Handshake {
            instance: None,
            channels: Vec::new(),
        };
        for line in text.split('\n').filter(|l| !l.is_empty()) {
            if let Some(hex) = line.strip_prefix("instance ") {
                hs.instance = u64::from_str_radix(hex.trim(), 16).ok();
            } else {
                match ChannelId::new(line) {
                    Ok(c) => hs.channels.push(c),
                    Err(e) => log::warn!("ignoring subscription to {line:?}: {e}"),
                }
            }
        }
        hs
    }
}

/// Interruptible sleeps for background threads.
#[derive(Default)]
struct Stop {
    stopped: Mutex<bool>,
    cv: Condvar,
}

impl Stop {
    fn is_set(&self) -> bool {
        *self.stopped.lock().unwrap()
    }

    fn set(&self) -> bool {
        let was = std::mem::replace(&mut *self.stopped.lock().unwrap(), true);
        self.cv.notify_all();
        was
    }

    /// Sleeps up to `dur`; returns true if stopped.
    fn sleep(&self, dur: Duration) -> bool {
        let guard = self.stopped.lock().unwrap();
        let (guard, _) = self.cv.wait_timeout_while(guard, dur, |s| !*s).unwrap();
        *guard
    }
}

struct PeerState {
    frames: VecDeque<Arc<[u8]>>,
    closed: bool,
}

struct Peer {
    conn: u64,
    channels: HashSet<ChannelId>,
    state: Mutex<PeerState>,
    ready: Condvar,
}

impl Peer {
    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

struct Inner {
    instance: u64,
    exports: HashSet<ChannelId>,
    router: Arc<dyn InboundRouter>,
    counters: Counters,
    peers: Mutex<Vec<Arc<Peer>>>,
    connected: AtomicUsize,
    stop: Stop,
    /// Every live stream, so shutdown can unblock its threads.
    open: Mutex<HashMap<u64, Stream>>,
    next_conn: AtomicU64,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Inner {
    fn spawn(self: &Arc<Self>, name: String, f: impl FnOnce() + Send + 'static) -> io::Result<()> {
        let handle = thread::Builder::new().name(name).spawn(f)?;
        self.threads.lock().unwrap().push(handle);
        Ok(())
    }

    /// Tracks `stream` for shutdown. Returns `None` (and closes the
    /// stream) if shutdown already started.
    fn track(&self, stream: &Stream) -> Option<u64> {
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let clone = stream.try_clone().ok()?;
        self.open.lock().unwrap().insert(conn, clone);
        if self.stop.is_set() {
            self.untrack(conn);
            stream.close();
            return None;
        }
        Some(conn)
    }

    fn untrack(&self, conn: u64) {
        if let Some(s) = self.open.lock().unwrap().remove(&conn) {
            s.close();
        }
    }

    fn dispatch(&self, frame: &[u8]) {
        self.counters.frames_received.fetch_add(1, Ordering::Relaxed);
        let (channel, data) = match wire::unpack(frame) {
            Ok(parts) => parts,
            Err(reason) => {
                log::debug!("discarding inbound frame: {reason}");
                self.counters.frames_discarded.fetch_add(1, Ordering::Relaxed);
                return;
            }
        };
        match self.router.route(&channel, data) {
            RouteOutcome::Delivered => {}
            RouteOutcome::Unrouted => {
                log::trace!("no local binding for {channel}");
                self.counters.frames_unrouted.fetch_add(1, Ordering::Relaxed);
            }
            RouteOutcome::Rejected => {
                log::debug!("discarding inbound frame on {channel}: payload did not decode");
                self.counters.frames_discarded.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    fn accept_loop(self: Arc<Self>, listener: Listener) {
        while !self.stop.is_set() {
            match listener.accept() {
                Ok(stream) => {
                    let inner = Arc::clone(&self);
                    let name = "meshbus-peer".to_string();
                    if let Err(e) = self.spawn(name, move || inner.serve_peer(stream)) {
                        log::error!("cannot serve new peer: {e}");
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    self.stop.sleep(ACCEPT_POLL);
                }
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    self.stop.sleep(ACCEPT_POLL * 20);
                }
            }
        }
    }

    fn serve_peer(self: Arc<Self>, mut stream: Stream) {
        let Some(conn) = self.track(&stream) else { return };
        let mut buf = Vec::new();
        let _ = stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT));
        let handshake = match transport::read_frame(&mut stream, &mut buf) {
            Ok(ReadOutcome::Frame) => match wire::unpack(&buf) {
                Ok((channel, data)) if channel == SUBSCRIBE_CHANNEL => Handshake::decode(data),
                _ => {
                    log::warn!("peer did not open with a subscription frame, closing");
                    self.untrack(conn);
                    return;
                }
            },
            _ => {
                self.untrack(conn);
                return;
            }
        };
        let _ = stream.set_read_timeout(None);

        let own = handshake.instance == Some(self.instance);
        let peer = if own {
            log::debug!("suppressing frames to own subscription");
            None
        } else {
            let peer = Arc::new(Peer {
                conn,
                channels: handshake.channels.into_iter().collect(),
                state: Mutex::new(PeerState {
                    frames: VecDeque::new(),
                    closed: false,
                }),
                ready: Condvar::new(),
            });
            let writer = match stream.try_clone() {
                Ok(w) => w,
                Err(_) => {
                    self.untrack(conn);
                    return;
                }
            };
            let inner = Arc::clone(&self);
            let p = Arc::clone(&peer);
            if self
                .spawn("meshbus-writer".into(), move || inner.write_peer(p, writer))
                .is_err()
            {
                self.untrack(conn);
                return;
            }
            self.peers.lock().unwrap().push(Arc::clone(&peer));
            Some(peer)
        };

        // Subscribers send nothing after the handshake; reading only
        // detects the close.
        let mut sink = [0u8; 512];
        loop {
            match stream.read(&mut sink) {
                Ok(0) => break,
                Ok(_) => {}
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(_) => break,
            }
        }
        if let Some(peer) = peer {
            self.peers.lock().unwrap().retain(|p| p.conn != peer.conn);
            peer.close();
        }
        self.untrack(conn);
    }

    fn write_peer(self: Arc<Self>, peer: Arc<Peer>, mut stream: Stream) {
        loop {
            let frame = {
                let mut state = peer.state.lock().unwrap();
                loop {
                    if state.closed {
                        break None;
                    }
                    if let Some(f) = state.frames.pop_front() {
                        break Some(f);
                    }
                    state = peer.ready.wait(state).unwrap();
                }
            };
            let Some(frame) = frame else { break };
            if let Err(e) = stream.write_all(&frame) {
                log::debug!("peer write failed: {e}");
                break;
            }
            self.counters.frames_sent.fetch_add(1, Ordering::Relaxed);
            self.counters
                .bytes_sent
                .fetch_add(frame.len() as u64, Ordering::Relaxed);
        }
        self.peers.lock().unwrap().retain(|p| p.conn != peer.conn);
        peer.close();
        self.untrack(peer.conn);
    }

    fn subscribe_loop(self: Arc<Self>, cfg: SubscriberConfig) {
        let handshake = Handshake {
            instance: Some(self.instance),
            channels: cfg.channels.clone(),
        };
        let channel = ChannelId::new(SUBSCRIBE_CHANNEL).expect("valid channel");
        let mut hello = Vec::new();
        wire::pack_into(&channel, &handshake.encode(), &mut hello).expect("handshake fits");

        let mut backoff = BACKOFF_INITIAL;
        let mut buf = Vec::new();
        while !self.stop.is_set() {
            let mut stream = match Stream::connect(&cfg.endpoint) {
                Ok(s) => s,
                Err(e) => {
                    log::debug!("connect {} failed: {e}, retry in {backoff:?}", cfg.endpoint);
                    if self.stop.sleep(backoff) {
                        return;
                    }
                    backoff = (backoff * 2).min(BACKOFF_MAX);
                    continue;
                }
            };
            let Some(conn) = self.track(&stream) else { return };
            if transport::write_frame(&mut stream, &hello).is_err() {
                self.untrack(conn);
                if self.stop.sleep(backoff) {
                    return;
                }
                backoff = (backoff * 2).min(BACKOFF_MAX);
                continue;
            }
            backoff = BACKOFF_INITIAL;
            log::info!("subscribed to {}", cfg.endpoint);
            self.connected.fetch_add(1, Ordering::AcqRel);
            loop {
                match transport::read_frame(&mut stream, &mut buf) {
                    Ok(ReadOutcome::Frame) => {
                        self.counters
                            .bytes_received
                            .fetch_add((STREAM_PREFIX_LEN + buf.len()) as u64, Ordering::Relaxed);
                        self.dispatch(&buf);
                    }
                    Ok(ReadOutcome::Oversized(len)) => {
                        log::warn!("{} announced a {len} byte frame, reconnecting", cfg.endpoint);
                        self.counters.frames_received.fetch_add(1, Ordering::Relaxed);
                        self.counters.frames_discarded.fetch_add(1, Ordering::Relaxed);
                        break;
                    }
                    Ok(ReadOutcome::Closed) | Err(_) => break,
                }
            }
            self.connected.fetch_sub(1, Ordering::AcqRel);
            self.untrack(conn);
            if self.stop.is_set() {
                return;
            }
            log::info!("lost {}, reconnecting", cfg.endpoint);
            if self.stop.sleep(backoff) {
                return;
            }
        }
    }
}

/// Handle to a running bridge. Dropping it shuts the bridge down.
pub struct Bridge {
    inner: Arc<Inner>,
    local: Option<Endpoint>,
    subscriptions: usize,
}

impl std::fmt::Debug for Bridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bridge")
            .field("instance", &format_args!("{:016x}", self.inner.instance))
            .field("local", &self.local)
            .field("subscriptions", &self.subscriptions)
            .finish_non_exhaustive()
    }
}

impl Bridge {
    /// Binds the publisher endpoint and starts connecting to every
    /// subscriber endpoint in the background. Unreachable subscriber
    /// endpoints are retried, never reported.
    pub fn start(config: &NetworkConfig, router: Arc<dyn InboundRouter>) -> Result<Bridge, BridgeError> {
        let listener = match &config.publisher {
            Some(p) => Some(Listener::bind(&p.endpoint).map_err(|source| BridgeError::BindFailure {
                endpoint: p.endpoint.clone(),
                source,
            })?),
            None => None,
        };
        let local = listener
            .as_ref()
            .zip(config.publisher.as_ref())
            .map(|(l, p)| l.local_endpoint(&p.endpoint));
        let inner = Arc::new(Inner {
            instance: rand::random(),
            exports: config
                .publisher
                .iter()
                .flat_map(|p| p.channels.iter().cloned())
                .collect(),
            router,
            counters: Counters::default(),
            peers: Mutex::new(Vec::new()),
            connected: AtomicUsize::new(0),
            stop: Stop::default(),
            open: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(0),
            threads: Mutex::new(Vec::new()),
        });
        let bridge = Bridge {
            inner: Arc::clone(&inner),
            local,
            subscriptions: config.subscribers.len(),
        };
        if let Some(listener) = listener {
            let i = Arc::clone(&inner);
            inner
                .spawn("meshbus-accept".into(), move || i.accept_loop(listener))
                .map_err(BridgeError::Spawn)?;
        }
        for sub in &config.subscribers {
            let i = Arc::clone(&inner);
            let sub = sub.clone();
            inner
                .spawn(format!("meshbus-sub-{}", sub.endpoint.port), move || {
                    i.subscribe_loop(sub)
                })
                .map_err(BridgeError::Spawn)?;
        }
        Ok(bridge)
    }

    /// Random id identifying this bridge in handshakes.
    pub fn instance_id(&self) -> u64 {
        self.inner.instance
    }

    /// The bound publisher endpoint, with the real port if 0 was requested.
    pub fn local_endpoint(&self) -> Option<&Endpoint> {
        self.local.as_ref()
    }

    /// Whether `channel` is listed under the publisher.
    pub fn exports(&self, channel: &str) -> bool {
        self.inner.exports.contains(channel)
    }

    /// Sends `data_string` on `channel` to every subscribed peer. Channels
    /// that are not exported are ignored. Never blocks on the network;
    /// with no interested peer the frame is dropped.
    pub fn publish_outbound(&self, channel: &str, data_string: &[u8]) {
        let _ = self.publish_outbound_with(channel, |out| {
            out.extend_from_slice(data_string);
            Ok::<(), std::convert::Infallible>(())
        });
    }

    /// Like [`publish_outbound`](Self::publish_outbound), but `encode`
    /// writes the `data_string` straight into the frame buffer. `encode`
    /// runs exactly once if the channel is exported, whether or not a peer
    /// is connected. Returns whether the channel is exported.
    pub fn publish_outbound_with<E>(
        &self,
        channel: &str,
        encode: impl FnOnce(&mut Vec<u8>) -> Result<(), E>,
    ) -> Result<bool, E> {
        let Some(channel) = self.inner.exports.get(channel) else {
            return Ok(false);
        };
        let mut buf = Vec::new();
        buf.extend_from_slice(&[0; STREAM_PREFIX_LEN]);
        wire::write_header(channel, &mut buf);
        let data_start = buf.len();
        encode(&mut buf)?;
        let data_len = buf.len() - data_start;
        if data_len > MAX_PAYLOAD_LEN {
            log::warn!("dropping {data_len} byte payload on {channel}: limit is {MAX_PAYLOAD_LEN}");
            self.inner.counters.frames_dropped.fetch_add(1, Ordering::Relaxed);
            return Ok(true);
        }
        let frame_len = buf.len() - STREAM_PREFIX_LEN;
        buf[..STREAM_PREFIX_LEN].copy_from_slice(&wire::stream_prefix(frame_len));

        let peers = self.inner.peers.lock().unwrap();
        let mut frame: Option<Arc<[u8]>> = None;
        for peer in peers.iter().filter(|p| p.channels.contains(channel)) {
            let frame = frame.get_or_insert_with(|| Arc::from(std::mem::take(&mut buf)));
            let mut state = peer.state.lock().unwrap();
            if state.closed {
                continue;
            }
            if state.frames.len() >= PEER_QUEUE_CAPACITY {
                state.frames.pop_front();
                self.inner.counters.frames_dropped.fetch_add(1, Ordering::Relaxed);
            }
            state.frames.push_back(Arc::clone(frame));
            drop(state);
            peer.ready.notify_one();
        }
        Ok(true)
    }

    /// Unpacks one frame and routes it. Every failure is counted, none is
    /// returned.
    pub fn dispatch_inbound(&self, frame: &[u8]) {
        self.inner
            .counters
            .bytes_received
            .fetch_add(frame.len() as u64, Ordering::Relaxed);
        self.inner.dispatch(frame);
    }

    pub fn stats(&self) -> BridgeStats {
        self.inner.counters.snapshot()
    }

    /// Peers that completed the handshake on the publisher endpoint.
    pub fn peer_count(&self) -> usize {
        self.inner.peers.lock().unwrap().len()
    }

    /// Subscriber links currently connected.
    pub fn connected_subscriptions(&self) -> usize {
        self.inner.connected.load(Ordering::Acquire)
    }

    pub fn wait_for_peers(&self, n: usize, timeout: Duration) -> bool {
        poll_until(timeout, || self.peer_count() >= n)
    }

    pub fn wait_for_subscriptions(&self, n: usize, timeout: Duration) -> bool {
        poll_until(timeout, || self.connected_subscriptions() >= n)
    }

    /// Closes every socket and joins the bridge threads. Idempotent.
    pub fn shutdown(&self) {
        if self.inner.stop.set() {
            return;
        }
        for peer in self.inner.peers.lock().unwrap().drain(..) {
            peer.close();
        }
        for (_, stream) in self.inner.open.lock().unwrap().drain() {
            stream.close();
        }
        let me = thread::current().id();
        loop {
            let handles = std::mem::take(&mut *self.inner.threads.lock().unwrap());
            if handles.is_empty() {
                break;
            }
            for h in handles {
                if h.thread().id() != me {
                    let _ = h.join();
                }
            }
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub(crate) fn poll_until(timeout: Duration, mut done: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if done() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        thread::sleep(Duration::from_millis(2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn null_router() -> Arc<dyn InboundRouter> {
        Arc::new(|_: &ChannelId, _: &[u8]| RouteOutcome::Unrouted)
    }

    #[test]
    fn handshake_round_trip() {
        let hs = Handshake {
            instance: Some(0xdead_beef),
            channels: vec![ChannelId::new("a").unwrap(), ChannelId::new("b/c").unwrap()],
        };
        assert_eq!(Handshake::decode(&hs.encode()), hs);
        let bare = Handshake::decode(b"x\ny\n\nbad name");
        assert_eq!(bare.instance, None);
        assert_eq!(bare.channels, ["x", "y"]);
    }

    #[test]
    fn empty_config_has_no_sockets() {
        let bridge = Bridge::start(&NetworkConfig::default(), null_router()).unwrap();
        assert!(bridge.local_endpoint().is_none());
        assert!(!bridge.exports("a"));
        bridge.publish_outbound("a", b"x");
        assert_eq!(bridge.stats(), BridgeStats::default());
    }

    #[test]
    fn second_bind_fails() {
        let cfg = NetworkConfig {
            publisher: Some(PublisherConfig {
                endpoint: Endpoint::tcp("127.0.0.1", 0),
                channels: vec![],
            }),
            subscribers: vec![],
        };
        let first = Bridge::start(&cfg, null_router()).unwrap();
        let mut taken = cfg.clone();
        taken.publisher.as_mut().unwrap().endpoint = first.local_endpoint().unwrap().clone();
        match Bridge::start(&taken, null_router()) {
            Err(BridgeError::BindFailure { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dispatch_counts() {
        let bridge = Bridge::start(&NetworkConfig::default(), null_router()).unwrap();
        bridge.dispatch_inbound(&[1, 2, 3]);
        bridge.dispatch_inbound(&wire::pack("a", b"x").unwrap());
        let s = bridge.stats();
        assert_eq!((s.frames_received, s.frames_discarded, s.frames_unrouted), (2, 1, 1));
        assert_eq!(s.bytes_received, 3 + 8);
    }
}
