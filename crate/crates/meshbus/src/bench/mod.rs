//! Latency and throughput harness.
//!
//! Every mode runs the same loop against a [`Session`]: publish a
//! timestamped [`BenchPacket`] on [`PING`], wait for its receipt, record
//! the latency. What differs is the fixture behind the channel:
//!
//! - `intra`: a node in the same runtime records the arrival time, giving
//!   one-way latency.
//! - `ipc`: a child `bench receiver` process echoes every ping on [`PONG`]
//!   over a local socket; latency is half the round trip.
//! - `tcp`: as `ipc` but over TCP. Solo runs host the receiver on a second
//!   runtime in this process; sender runs target a remote receiver.
//!
//! With [`Baseline::Copy`] the intra path serializes the packet through
//! the codec and decodes it on receipt, instead of passing a reference.

pub mod packet;
pub mod report;
pub mod sizes;

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use meshbus_core::codec::{Codec, DecodeError};
use meshbus_core::stats;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bridge::{Endpoint, NetworkConfig, PublisherConfig, SubscriberConfig};
use crate::graph::InvokeType;
use crate::params::{ParamError, ParameterStore};
use crate::runtime::{Runtime, RuntimeError, RuntimeOptions};
pub use packet::{BenchPacket, BenchPacketCodec, PACKET_TAG};
pub use report::{emit_report, parse_csv, ReportError, ReportFormat};

pub const PING: &str = "bench_ping";
pub const PONG: &str = "bench_pong";
/// Serialized pings for the copy baseline.
pub const PING_RAW: &str = "bench_ping_raw";

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_SEED: u64 = 0x6d65_7368_6275_73;
/// Probe sequence numbers live above this, away from real packets.
const PROBE_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Intra,
    InterProcess,
    CrossDevice,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Intra => "intra",
            Mode::InterProcess => "ipc",
            Mode::CrossDevice => "tcp",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intra" => Ok(Mode::Intra),
            "ipc" => Ok(Mode::InterProcess),
            "tcp" => Ok(Mode::CrossDevice),
            other => Err(format!("unknown mode {other:?}; use intra, ipc or tcp")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    /// Both ends are started by the harness.
    Solo,
    /// Pings a receiver at `peer`; echoes come back to `listen`.
    Sender { peer: Endpoint, listen: Endpoint },
    /// Echoes pings; see [`run_receiver`].
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    #[default]
    ZeroCopy,
    /// Serialize and deserialize every packet through the codec.
    Copy,
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub mode: Mode,
    pub sizes: Vec<usize>,
    pub count: usize,
    /// Publish rate in Hz; `None` sends each packet as soon as the previous
    /// one arrived.
    pub rate: Option<f64>,
    pub warmup: usize,
    pub baseline: Baseline,
    pub role: Role,
    pub timeout: Duration,
    pub seed: u64,
    /// `key=value` parameter overrides for the harness runtimes.
    pub params: Vec<String>,
    /// Executable providing the `receiver` subcommand, for `ipc` solo runs.
    pub receiver_exe: Option<PathBuf>,
}

impl BenchSpec {
    pub fn new(mode: Mode, sizes: Vec<usize>, count: usize) -> Self {
        Self {
            mode,
            sizes,
            count,
            rate: None,
            warmup: DEFAULT_WARMUP,
            baseline: Baseline::ZeroCopy,
            role: Role::Solo,
            timeout: DEFAULT_TIMEOUT,
            seed: DEFAULT_SEED,
            params: Vec::new(),
            receiver_exe: None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: &str| Err(BenchError::Spec(m.to_string()));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return fail("sizes must be non-empty and at least 1 byte each");
        }
        if self.count == 0 {
            return fail("count must be at least 1");
        }
        if let Some(rate) = self.rate {
            if !(rate > 0.0 && rate.is_finite()) {
                return fail("rate must be a positive number of Hz");
            }
        }
        if self.baseline == Baseline::Copy && self.mode != Mode::Intra {
            return fail("the copy baseline only applies to intra mode");
        }
        match (&self.role, self.mode) {
            (Role::Receiver, _) => fail("receivers are started with run_receiver"),
            (Role::Sender { .. }, Mode::Intra) => fail("intra mode has no remote peer"),
            (Role::Solo, Mode::InterProcess) if self.receiver_exe.is_none() => {
                fail("ipc solo runs need the receiver executable")
            }
            _ => Ok(()),
        }
    }

    fn label(&self) -> String {
        match self.baseline {
            Baseline::ZeroCopy => self.mode.name().to_string(),
            Baseline::Copy => format!("{}-copy", self.mode.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mode: String,
    pub size_bytes: usize,
    pub n: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub throughput_mbps: f64,
}

impl BenchRecord {
    /// Summarizes `count` packets of `size` bytes with these latencies.
    pub fn from_samples(mode: &str, size: usize, latencies_ns: &[u64]) -> Option<BenchRecord> {
        let s = stats::summarize(latencies_ns)?;
        let total_ns: u64 = latencies_ns.iter().sum();
        let total_bytes = size as u64 * latencies_ns.len() as u64;
        Some(BenchRecord {
            mode: mode.to_string(),
            size_bytes: size,
            n: s.n,
            mean_us: s.mean_us,
            median_us: s.median_us,
            p99_us: s.p99_us,
            throughput_mbps: stats::throughput_mbps(total_bytes, total_ns),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchResult {
    pub records: Vec<BenchRecord>,
    /// How latency was measured, printed in report headers.
    pub convention: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark: {0}")]
    Spec(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("peer unreachable: {0}")]
    PeerUnreachable(String),
    #[error("packet {seq} of {size} bytes not received within {timeout:?}")]
    Timeout {
        size: usize,
        seq: u64,
        timeout: Duration,
    },
    #[error("cannot start receiver process: {0}")]
    Spawn(#[source] std::io::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 3 for peer
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::PeerUnreachable(_) | BenchError::Timeout { .. } | BenchError::Spawn(_) => 3,
            _ => 2,
        }
    }
}

/// Arrival times keyed by sequence number.
#[derive(Default)]
struct Receipts {
    arrived: Mutex<HashMap<u64, u64>>,
    cv: Condvar,
}

impl Receipts {
    fn record(&self, seq: u64, at_ns: u64) {
        self.arrived.lock().unwrap().insert(seq, at_ns);
        self.cv.notify_all();
    }

    fn wait(&self, seq: u64, timeout: Duration) -> Option<u64> {
        let deadline = Instant::now() + timeout;
        let mut arrived = self.arrived.lock().unwrap();
        loop {
            if let Some(at) = arrived.remove(&seq) {
                return Some(at);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            arrived = self.cv.wait_timeout(arrived, deadline - now).unwrap().0;
        }
    }

    fn clear(&self) {
        self.arrived.lock().unwrap().clear();
    }
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// One benchmark fixture: a sender runtime plus whatever answers it.
struct Session {
    sender: Arc<Runtime>,
    receipts: Arc<Receipts>,
    copy: bool,
    round_trip: bool,
    _receiver: Option<Arc<Runtime>>,
    _child: Option<ChildGuard>,
}

fn params_with(overrides: &[String]) -> Result<ParameterStore, ParamError> {
    let params = ParameterStore::new();
    for o in overrides {
        params.apply_override(o)?;
    }
    Ok(params)
}

/// Network config for the pinging side.
pub fn sender_network(listen: &Endpoint, peer: &Endpoint) -> NetworkConfig {
    NetworkConfig {
        publisher: Some(PublisherConfig {
            endpoint: listen.clone(),
            channels: vec![PING.parse().expect("valid channel")],
        }),
        subscribers: vec![SubscriberConfig {
            endpoint: peer.clone(),
            channels: vec![PONG.parse().expect("valid channel")],
        }],
    }
}

/// Network config for the echoing side.
pub fn receiver_network(listen: &Endpoint, peer: &Endpoint) -> NetworkConfig {
    NetworkConfig {
        publisher: Some(PublisherConfig {
            endpoint: listen.clone(),
            channels: vec![PONG.parse().expect("valid channel")],
        }),
        subscribers: vec![SubscriberConfig {
            endpoint: peer.clone(),
            channels: vec![PING.parse().expect("valid channel")],
        }],
    }
}

/// Registers the packet codec and makes `rt` answer every ping with the
/// same packet on [`PONG`].
pub fn install_echo(rt: &Arc<Runtime>) -> Result<(), RuntimeError> {
    rt.register_codec(PACKET_TAG, BenchPacketCodec)?;
    let weak: Weak<Runtime> = Arc::downgrade(rt);
    rt.from_any::<BenchPacket, _>(PING, InvokeType::Serial, PACKET_TAG, move |d| {
        if let Some(rt) = weak.upgrade() {
            if let Err(e) = rt.to_any_shared(PONG, d.payload) {
                log::warn!("echo failed: {e}");
            }
        }
    })?;
    Ok(())
}

/// Starts a receiver runtime that publishes on `listen` and pings from
/// `peer`.
pub fn start_receiver(listen: &Endpoint, peer: &Endpoint, overrides: &[String]) -> Result<Arc<Runtime>, BenchError> {
    let rt = Arc::new(Runtime::start(RuntimeOptions {
        network: receiver_network(listen, peer),
        params: params_with(overrides)?,
        graph: Default::default(),
    })?);
    install_echo(&rt)?;
    Ok(rt)
}

/// Runs a receiver until `stop` returns true, polling every 50 ms.
pub fn run_receiver(
    listen: &Endpoint,
    peer: &Endpoint,
    overrides: &[String],
    mut stop: impl FnMut() -> bool,
) -> Result<(), BenchError> {
    let rt = start_receiver(listen, peer, overrides)?;
    log::info!("receiver listening on {}", rt.bridge().local_endpoint().expect("publisher bound"));
    while !stop() {
        std::thread::sleep(Duration::from_millis(50));
    }
    rt.shutdown();
    Ok(())
}

/// A TCP port that was free a moment ago.
pub fn free_tcp_port() -> std::io::Result<u16> {
    Ok(std::net::TcpListener::bind(("127.0.0.1", 0))?.local_addr()?.port())
}

fn unique_ipc_name(tag: &str) -> String {
    format!("bench-{}-{:08x}-{tag}", std::process::id(), rand::random::<u32>())
}

impl Session {
    fn open(spec: &BenchSpec) -> Result<Session, BenchError> {
        let params = || params_with(&spec.params);
        let receipts = Arc::new(Receipts::default());
        match (&spec.role, spec.mode) {
            (_, Mode::Intra) => {
                let rt = Arc::new(Runtime::start(RuntimeOptions {
                    params: params()?,
                    ..Default::default()
                })?);
                rt.register_codec(PACKET_TAG, BenchPacketCodec)?;
                let clock_rt = Arc::downgrade(&rt);
                let r = Arc::clone(&receipts);
                match spec.baseline {
                    Baseline::ZeroCopy => {
                        rt.from_any::<BenchPacket, _>(PING, InvokeType::Serial, PACKET_TAG, move |d| {
                            if let Some(rt) = clock_rt.upgrade() {
                                r.record(d.seq, rt.clock().now_ns());
                            }
                        })?;
                    }
                    Baseline::Copy => {
                        rt.from_graph::<Vec<u8>, _>(PING_RAW, InvokeType::Serial, move |d| {
                            let decoded: Result<BenchPacket, DecodeError> = BenchPacketCodec.decode(&d);
                            if let (Ok(p), Some(rt)) = (decoded, clock_rt.upgrade()) {
                                r.record(p.seq, rt.clock().now_ns());
                            }
                        })?;
                    }
                }
                Ok(Session {
                    sender: rt,
                    receipts,
                    copy: spec.baseline == Baseline::Copy,
                    round_trip: false,
                    _receiver: None,
                    _child: None,
                })
            }
            (Role::Sender { peer, listen }, _) => {
                Self::remote(spec, listen.clone(), peer.clone(), receipts, None, None)
            }
            (_, Mode::InterProcess) => {
                let listen = Endpoint::ipc(&unique_ipc_name("s"), 1);
                let peer = Endpoint::ipc(&unique_ipc_name("r"), 1);
                let exe = spec.receiver_exe.as_ref().expect("validated");
                let mut cmd = Command::new(exe);
                cmd.arg("receiver")
                    .arg("--listen")
                    .arg(peer.to_string())
                    .arg("--connect")
                    .arg(listen.to_string());
                for p in &spec.params {
                    cmd.arg("--param").arg(p);
                }
                let child = cmd
                    .stdin(Stdio::null())
                    .stdout(Stdio::null())
                    .spawn()
                    .map_err(BenchError::Spawn)?;
                Self::remote(spec, listen, peer, receipts, None, Some(ChildGuard(child)))
            }
            (_, Mode::CrossDevice) => {
                let sport = free_tcp_port().map_err(|e| BenchError::PeerUnreachable(e.to_string()))?;
                let rport = free_tcp_port().map_err(|e| BenchError::PeerUnreachable(e.to_string()))?;
                let listen = Endpoint::tcp("127.0.0.1", sport);
                let peer = Endpoint::tcp("127.0.0.1", rport);
                let receiver = start_receiver(&peer, &listen, &spec.params)?;
                Self::remote(spec, listen, peer, receipts, Some(receiver), None)
            }
        }
    }

    fn remote(
        spec: &BenchSpec,
        listen: Endpoint,
        peer: Endpoint,
        receipts: Arc<Receipts>,
        receiver: Option<Arc<Runtime>>,
        child: Option<ChildGuard>,
    ) -> Result<Session, BenchError> {
        let rt = Arc::new(Runtime::start(RuntimeOptions {
            network: sender_network(&listen, &peer),
            params: params_with(&spec.params)?,
            graph: Default::default(),
        })?);
        rt.register_codec(PACKET_TAG, BenchPacketCodec)?;
        let clock_rt = Arc::downgrade(&rt);
        let r = Arc::clone(&receipts);
        rt.from_any::<BenchPacket, _>(PONG, InvokeType::Serial, PACKET_TAG, move |d| {
            if let Some(rt) = clock_rt.upgrade() {
                r.record(d.seq, rt.clock().now_ns());
            }
        })?;
        let session = Session {
            sender: rt,
            receipts,
            copy: false,
            round_trip: true,
            _receiver: receiver,
            _child: child,
        };
        session.probe(&peer, spec.timeout)?;
        Ok(session)
    }

    /// Pings with empty packets until one comes back, so measurement
    /// starts with both links up.
    fn probe(&self, peer: &Endpoint, timeout: Duration) -> Result<(), BenchError> {
        let deadline = Instant::now() + timeout;
        let empty: Arc<[u8]> = Arc::from(&[][..]);
        let mut seq = PROBE_BASE;
        while Instant::now() < deadline {
            self.send(seq, &empty)?;
            if self.receipts.wait(seq, Duration::from_millis(50)).is_some() {
                self.receipts.clear();
                return Ok(());
            }
            seq += 1;
        }
        Err(BenchError::PeerUnreachable(format!("no echo from {peer} within {timeout:?}")))
    }

    /// Publishes one packet and returns its send timestamp.
    fn send(&self, seq: u64, data: &Arc<[u8]>) -> Result<u64, BenchError> {
        let clock = self.sender.clock();
        if self.copy {
            let sent_ns = clock.now_ns();
            let packet = BenchPacket {
                seq,
                sent_ns,
                data: Arc::clone(data),
            };
            let mut buf = Vec::new();
            BenchPacketCodec.encode(&packet, &mut buf);
            self.sender.to_any(PING_RAW, buf)?;
            Ok(sent_ns)
        } else {
            let sent_ns = clock.now_ns();
            self.sender.to_any(
                PING,
                BenchPacket {
                    seq,
                    sent_ns,
                    data: Arc::clone(data),
                },
            )?;
            Ok(sent_ns)
        }
    }

    /// Sends `count` packets of `size` bytes and returns their latencies.
    fn measure(&self, spec: &BenchSpec, size: usize, first_seq: u64, count: usize) -> Result<Vec<u64>, BenchError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ size as u64);
        let mut bytes = vec![0u8; size];
        rng.fill_bytes(&mut bytes);
        let data: Arc<[u8]> = Arc::from(bytes);
        let period = spec.rate.map(|hz| Duration::from_secs_f64(1.0 / hz));
        let start = Instant::now();
        let mut latencies = Vec::with_capacity(count);
        for i in 0..count {
            if let Some(period) = period {
                let due = start + period * i as u32;
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
            let seq = first_seq + i as u64;
            let sent = self.send(seq, &data)?;
            let arrived = self.receipts.wait(seq, spec.timeout).ok_or(BenchError::Timeout {
                size,
                seq,
                timeout: spec.timeout,
            })?;
            let elapsed = arrived.saturating_sub(sent);
            latencies.push(if self.round_trip { elapsed / 2 } else { elapsed });
        }
        Ok(latencies)
    }
}

fn convention(spec: &BenchSpec) -> String {
    let how = match spec.mode {
        Mode::Intra => "one-way latency, publish to callback on one clock",
        _ => "latency is half the echo round trip",
    };
    let rate = match spec.rate {
        Some(hz) => format!("{hz} Hz"),
        None => "back-to-back".to_string(),
    };
    format!(
        "{}: {how}; {} packets per size after {} warmup, {rate}; throughput = total bytes / summed latency, MB = 1e6 bytes",
        spec.label(),
        spec.count,
        spec.warmup
    )
}

fn run(spec: &BenchSpec) -> Result<BenchResult, BenchError> {
    spec.validate()?;
    let session = Session::open(spec)?;
    let label = spec.label();
    let mut result = BenchResult {
        records: Vec::new(),
        convention: convention(spec),
    };
    let mut seq = 1u64;
    for &size in &spec.sizes {
        if spec.warmup > 0 {
            session.measure(spec, size, seq, spec.warmup)?;
            seq += spec.warmup as u64;
        }
        let latencies = session.measure(spec, size, seq, spec.count)?;
        seq += spec.count as u64;
        log::info!("{label} {size} B: {} samples", latencies.len());
        result
            .records
            .extend(BenchRecord::from_samples(&label, size, &latencies));
    }
    Ok(result)
}

/// Per-size latency statistics.
pub fn run_latency(spec: &BenchSpec) -> Result<BenchResult, BenchError> {
    run(spec)
}

/// Per-size throughput at `spec.rate` (10 Hz if unset).
pub fn run_throughput(spec: &BenchSpec) -> Result<BenchResult, BenchError> {
    let mut spec = spec.clone();
    spec.rate.get_or_insert(10.0);
    run(&spec)
}
