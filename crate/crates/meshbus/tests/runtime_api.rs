mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{publisher, wait_until, Sink};
use meshbus::bench::free_tcp_port;
use meshbus::bridge::{ConfigError, Endpoint, NetworkConfig, SubscriberConfig};
use meshbus::core::codec::{Codec, DecodeError, U64Codec};
use meshbus::graph::InvokeType;
use meshbus::runtime::{init_runtime, Runtime, RuntimeError, RuntimeOptions};

const T: Duration = Duration::from_secs(10);

const LISTING_NETWORK: &str = r#"network:
    publisher:
        ip: "tcp://*:5553"
        channels:
            - pre_channel
    subscribers:
        - ip: "x"
        channels:
            - next_channel
"#;

const LISTING_DATA_GRAPH: &str = r#"    network:
      publisher:
        ip: "tcp://*:5553"
        channels:
          - pre_channel
          - next_channel
"#;

const LISTING_VISUALIZATION: &str = r#"    network:
      publisher:
        ip: "tcp://*:5553"
        channels:
          - lidar_visual_channel
          - re_optimized_poses
"#;

fn dir_with(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in files {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

#[test]
fn empty_dir_is_intra_only() {
    let dir = tempfile::tempdir().unwrap();
    let rt = init_runtime(dir.path()).unwrap();
    assert!(rt.bridge().local_endpoint().is_none());
    assert!(rt.params().is_empty());
    assert!(rt.clock().now() < Duration::from_secs(1));
}

#[test]
fn network_listing_as_printed_is_rejected_with_position() {
    let dir = dir_with(&[("network_setting.yaml", LISTING_NETWORK)]);
    match init_runtime(dir.path()) {
        Err(RuntimeError::Config(ConfigError::Parse(e))) => {
            assert_eq!(e.line, 8);
            assert!(e.to_string().contains("network_setting.yaml"), "{e}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn network_listing_placeholder_is_an_invalid_uri() {
    let text = LISTING_NETWORK.replace("        channels:\n            - next", "          channels:\n            - next");
    match NetworkConfig::from_yaml_str(&text) {
        Err(ConfigError::InvalidUri { line, source, .. }) => {
            assert_eq!(line, 7);
            assert_eq!(source.uri, "x");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn network_listing_with_filled_placeholder_binds_5553() {
    let text = LISTING_NETWORK
        .replace("\"x\"", "\"tcp://127.0.0.1:5554\"")
        .replace("        channels:\n            - next", "          channels:\n            - next");
    let cfg = NetworkConfig::from_yaml_str(&text).unwrap();
    let p = cfg.publisher.as_ref().unwrap();
    assert_eq!(p.endpoint.to_string(), "tcp://*:5553");
    assert_eq!(p.channels, ["pre_channel"]);
    assert_eq!(cfg.subscribers[0].channels, ["next_channel"]);

    let dir = dir_with(&[("network_setting.yaml", &text)]);
    let rt = init_runtime(dir.path()).unwrap();
    assert_eq!(rt.bridge().local_endpoint().unwrap().port, 5553);
    assert!(rt.bridge().exports("pre_channel"));
    assert!(!rt.bridge().exports("next_channel"));
}

#[test]
fn other_listings_parse_verbatim() {
    let cfg = NetworkConfig::from_yaml_str(LISTING_DATA_GRAPH).unwrap();
    assert_eq!(cfg.publisher.unwrap().channels, ["pre_channel", "next_channel"]);
    let cfg = NetworkConfig::from_yaml_str(LISTING_VISUALIZATION).unwrap();
    let p = cfg.publisher.unwrap();
    assert_eq!(p.endpoint, Endpoint::tcp("*", 5553));
    assert_eq!(p.channels, ["lidar_visual_channel", "re_optimized_poses"]);
    assert!(cfg.subscribers.is_empty());
}

#[test]
fn malformed_params_name_the_file() {
    let dir = dir_with(&[("params.yaml", "a: [1,\n")]);
    let err = init_runtime(dir.path()).unwrap_err().to_string();
    assert!(err.contains("params.yaml"), "{err}");
}

#[test]
fn params_and_transforms_load_from_dir() {
    let dir = dir_with(&[(
        "params.yaml",
        "data_graph:\n  workers: 2\nrobot:\n  name: r1\ntransforms:\n  - {parent: /map, child: /base, translation: [1, 0, 0]}\n",
    )]);
    let rt = Runtime::from_dir(dir.path(), |p| p.apply_override("robot.name=r2")).unwrap();
    assert_eq!(rt.graph().workers(), 2);
    assert_eq!(rt.params().get_string("robot.name").unwrap(), "r2");
    let t = rt.transforms().lookup("/base", "/map").unwrap();
    assert_eq!(t.translation(), [1.0, 0.0, 0.0]);
}

/// `U64Codec` that counts encodes.
struct Counting(Arc<AtomicUsize>);

impl Codec for Counting {
    type Value = u64;

    fn encode(&self, value: &u64, out: &mut Vec<u8>) {
        self.0.fetch_add(1, Ordering::SeqCst);
        U64Codec.encode(value, out)
    }

    fn decode(&self, bytes: &[u8]) -> Result<u64, DecodeError> {
        U64Codec.decode(bytes)
    }
}

fn pair(chans: &[&str]) -> (Runtime, Runtime) {
    let a = Runtime::start(RuntimeOptions {
        network: publisher(Endpoint::tcp("127.0.0.1", 0), chans),
        ..Default::default()
    })
    .unwrap();
    let ep = a.bridge().local_endpoint().unwrap().clone();
    let b = Runtime::start(RuntimeOptions {
        network: common::subscriber(ep, chans),
        ..Default::default()
    })
    .unwrap();
    (a, b)
}

#[test]
fn one_serialization_for_local_and_remote_subscribers() {
    let (a, b) = pair(&["count"]);
    let encodes = Arc::new(AtomicUsize::new(0));
    a.register_codec("counted", Counting(Arc::clone(&encodes))).unwrap();
    b.register_codec("counted", Counting(Arc::new(AtomicUsize::new(0)))).unwrap();
    let deliveries = Arc::new(AtomicUsize::new(0));
    for _ in 0..2 {
        let d = Arc::clone(&deliveries);
        a.from_any::<u64, _>("count", InvokeType::Serial, "counted", move |_| {
            d.fetch_add(1, Ordering::SeqCst);
        })
        .unwrap();
    }
    let remote: Arc<Sink<u64>> = Sink::new();
    let r = Arc::clone(&remote);
    b.from_any::<u64, _>("count", InvokeType::Serial, "counted", move |v| r.push(*v))
        .unwrap();
    assert!(a.bridge().wait_for_peers(1, T));

    a.to_any("count", 41u64).unwrap();
    assert!(remote.wait_len(1, T));
    assert!(a.graph().wait_idle(T));
    assert_eq!(deliveries.load(Ordering::SeqCst) + remote.len(), 3);
    assert_eq!(encodes.load(Ordering::SeqCst), 1);
    assert_eq!(remote.snapshot(), [41]);

    a.to_any("local_only", 1u64).unwrap();
    assert_eq!(encodes.load(Ordering::SeqCst), 1);
}

#[test]
fn missing_codec_still_delivers_locally() {
    #[derive(Debug)]
    struct NoCodec;
    let (a, _b) = pair(&["raw"]);
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    a.from_graph::<NoCodec, _>("raw", InvokeType::Serial, move |_| {
        h.fetch_add(1, Ordering::SeqCst);
    })
    .unwrap();
    assert!(a.bridge().wait_for_peers(1, T));
    match a.to_any("raw", NoCodec) {
        Err(RuntimeError::MissingCodec { channel, .. }) => assert_eq!(channel, "raw"),
        other => panic!("{other:?}"),
    }
    assert!(a.graph().wait_idle(T));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(a.bridge_stats().bytes_sent, 0);
}

#[test]
fn remote_frames_need_a_from_any_binding() {
    let (a, b) = pair(&["n"]);
    let local: Arc<Sink<u64>> = Sink::new();
    let l = Arc::clone(&local);
    b.from_graph::<u64, _>("n", InvokeType::Serial, move |v| l.push(*v)).unwrap();
    assert!(a.bridge().wait_for_peers(1, T));
    a.to_any("n", 5u64).unwrap();
    assert!(wait_until(T, || b.bridge_stats().frames_unrouted == 1));
    assert_eq!(local.len(), 0);
}

#[test]
fn to_any_from_inside_a_callback() {
    let (a, b) = pair(&["out"]);
    let a = Arc::new(a);
    let weak = Arc::downgrade(&a);
    a.from_any::<u64, _>("in", InvokeType::Concurrent, "u64", move |v| {
        weak.upgrade().unwrap().to_any("out", *v * 2).unwrap();
    })
    .unwrap();
    let got: Arc<Sink<u64>> = Sink::new();
    let g = Arc::clone(&got);
    b.from_any::<u64, _>("out", InvokeType::Serial, "u64", move |v| g.push(*v)).unwrap();
    assert!(a.bridge().wait_for_peers(1, T));
    for i in 0..10 {
        a.to_any("in", i as u64).unwrap();
    }
    assert!(got.wait_len(10, T));
    let mut v = got.snapshot();
    v.sort();
    assert_eq!(v, (0..10).map(|i| i * 2).collect::<Vec<u64>>());
}

#[test]
fn self_subscription_does_not_double_deliver() {
    let port = free_tcp_port().unwrap();
    let mut network = publisher(Endpoint::tcp("*", port), &["loop"]);
    network.subscribers.push(SubscriberConfig {
        endpoint: Endpoint::tcp("127.0.0.1", port),
        channels: common::channels(&["loop"]),
    });
    let rt = Runtime::start(RuntimeOptions {
        network,
        ..Default::default()
    })
    .unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    rt.from_any::<u64, _>("loop", InvokeType::Serial, "u64", move |_| {
        h.fetch_add(1, Ordering::SeqCst);
    })
    .unwrap();
    assert!(rt.bridge().wait_for_subscriptions(1, T));
    std::thread::sleep(Duration::from_millis(100));
    rt.to_any("loop", 1u64).unwrap();
    std::thread::sleep(Duration::from_millis(300));
    assert!(rt.graph().wait_idle(T));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    assert_eq!(rt.bridge_stats().frames_received, 0);
}

#[test]
fn to_any_returns_while_callbacks_sleep() {
    let rt = Runtime::start(RuntimeOptions::default()).unwrap();
    for _ in 0..4 {
        rt.from_any::<u64, _>("sleepy", InvokeType::Serial, "u64", |_| {
            std::thread::sleep(Duration::from_millis(100))
        })
        .unwrap();
    }
    let t = Instant::now();
    rt.to_any("sleepy", 1u64).unwrap();
    assert!(t.elapsed() < Duration::from_millis(1));
}
