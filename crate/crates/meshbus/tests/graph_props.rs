use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use meshbus::graph::{Graph, GraphConfig, InvokeType};
use proptest::prelude::*;

fn graph(workers: usize) -> Graph {
    Graph::new(GraphConfig {
        workers: Some(workers),
        ..Default::default()
    })
    .unwrap()
}

/// Tracks how many callbacks are inside a section at once.
#[derive(Default)]
struct Overlap {
    now: AtomicUsize,
    max: AtomicUsize,
}

impl Overlap {
    fn enter(&self) {
        let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
        self.max.fetch_max(n, Ordering::SeqCst);
    }

    fn exit(&self) {
        self.now.fetch_sub(1, Ordering::SeqCst);
    }
}

#[test]
fn serial_node_is_fifo_and_never_overlaps() {
    let g = graph(4);
    let seen = Arc::new(Mutex::new(Vec::with_capacity(10_000)));
    let overlap = Arc::new(Overlap::default());
    let (s, o) = (Arc::clone(&seen), Arc::clone(&overlap));
    g.from_graph::<u64, _>("fifo", InvokeType::Serial, move |d| {
        o.enter();
        s.lock().unwrap().push(*d);
        o.exit();
    })
    .unwrap();
    for i in 0..10_000u64 {
        g.to_graph("fifo", i).unwrap();
    }
    assert!(g.wait_idle(Duration::from_secs(30)));
    let seen = seen.lock().unwrap();
    assert!(seen.iter().copied().eq(0..10_000));
    assert_eq!(overlap.max.load(Ordering::SeqCst), 1);
}

#[test]
fn serial_sequence_numbers_follow_arrival() {
    let g = graph(2);
    let seqs = Arc::new(Mutex::new(Vec::new()));
    let s = Arc::clone(&seqs);
    g.from_graph::<u8, _>("seq", InvokeType::Serial, move |d| s.lock().unwrap().push(d.sequence))
        .unwrap();
    for _ in 0..100 {
        g.to_graph("seq", 0u8).unwrap();
    }
    assert!(g.wait_idle(Duration::from_secs(5)));
    assert!(seqs.lock().unwrap().iter().copied().eq(1..=100));
}

#[test]
fn concurrent_node_runs_in_parallel() {
    let g = graph(4);
    let overlap = Arc::new(Overlap::default());
    let o = Arc::clone(&overlap);
    g.from_graph::<u32, _>("par", InvokeType::Concurrent, move |_| {
        o.enter();
        std::thread::sleep(Duration::from_millis(50));
        o.exit();
    })
    .unwrap();
    for i in 0..8u32 {
        g.to_graph("par", i).unwrap();
    }
    assert!(g.wait_idle(Duration::from_secs(10)));
    assert!(overlap.max.load(Ordering::SeqCst) >= 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fan_out_is_exactly_once(p in 1usize..=100, s in 1usize..=16, serial in any::<bool>()) {
        let g = graph(3);
        let invoke = if serial { InvokeType::Serial } else { InvokeType::Concurrent };
        let counts: Arc<Vec<Mutex<Vec<u32>>>> = Arc::new((0..s).map(|_| Mutex::new(vec![0; p])).collect());
        for sub in 0..s {
            let c = Arc::clone(&counts);
            g.from_graph::<usize, _>("fan", invoke, move |d| c[sub].lock().unwrap()[*d] += 1).unwrap();
        }
        for i in 0..p {
            g.to_graph("fan", i).unwrap();
        }
        prop_assert!(g.wait_idle(Duration::from_secs(10)));
        let total: u32 = counts.iter().map(|c| c.lock().unwrap().iter().sum::<u32>()).sum();
        prop_assert_eq!(total as usize, p * s);
        for c in counts.iter() {
            prop_assert!(c.lock().unwrap().iter().all(|&n| n == 1));
        }
    }
}

#[test]
fn subscribers_share_one_allocation() {
    let g = graph(2);
    let original = Arc::new(vec![7u8; 1 << 20]);
    let seen = Arc::new(Mutex::new(Vec::new()));
    for _ in 0..3 {
        let s = Arc::clone(&seen);
        g.from_graph::<Vec<u8>, _>("big", InvokeType::Concurrent, move |d| {
            s.lock().unwrap().push(Arc::clone(&d.payload))
        })
        .unwrap();
    }
    g.to_graph_shared("big", Arc::clone(&original)).unwrap();
    assert!(g.wait_idle(Duration::from_secs(5)));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|p| Arc::ptr_eq(p, &original)));
}

#[test]
fn publish_does_not_wait_for_callbacks() {
    let g = graph(4);
    for _ in 0..4 {
        g.from_graph::<u8, _>("slow", InvokeType::Serial, |_| std::thread::sleep(Duration::from_millis(100)))
            .unwrap();
    }
    let mut worst = Duration::ZERO;
    for _ in 0..5 {
        let t = Instant::now();
        g.to_graph("slow", 1u8).unwrap();
        worst = worst.max(t.elapsed());
    }
    assert!(worst < Duration::from_millis(1), "{worst:?}");
    assert!(g.wait_idle(Duration::from_secs(10)));
}

#[test]
fn reentrant_publish_from_callbacks() {
    let g = Arc::new(graph(2));
    let done = Arc::new(AtomicUsize::new(0));
    let weak = Arc::downgrade(&g);
    g.from_graph::<u32, _>("countdown", InvokeType::Serial, move |d| {
        if *d > 0 {
            weak.upgrade().unwrap().to_graph("countdown", *d - 1).unwrap();
        }
    })
    .unwrap();
    let weak = Arc::downgrade(&g);
    g.from_graph::<u32, _>("countdown", InvokeType::Concurrent, move |d| {
        weak.upgrade().unwrap().to_graph("sink", *d).unwrap();
    })
    .unwrap();
    let d = Arc::clone(&done);
    g.from_graph::<u32, _>("sink", InvokeType::Serial, move |_| {
        d.fetch_add(1, Ordering::SeqCst);
    })
    .unwrap();
    g.to_graph("countdown", 500u32).unwrap();
    assert!(g.wait_idle(Duration::from_secs(10)));
    assert_eq!(done.load(Ordering::SeqCst), 501);
}

#[test]
fn deregister_waits_for_running_callback() {
    let g = graph(2);
    let started = Arc::new(AtomicBool::new(false));
    let finished = Arc::new(AtomicBool::new(false));
    let (s, f) = (Arc::clone(&started), Arc::clone(&finished));
    let id = g
        .from_graph::<u8, _>("dereg", InvokeType::Concurrent, move |_| {
            s.store(true, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(200));
            f.store(true, Ordering::SeqCst);
        })
        .unwrap();
    g.to_graph("dereg", 0u8).unwrap();
    while !started.load(Ordering::SeqCst) {
        std::thread::yield_now();
    }
    g.deregister(id).unwrap();
    assert!(finished.load(Ordering::SeqCst));
    assert_eq!(g.subscriber_count("dereg"), 0);
}

#[test]
fn panics_are_contained() {
    let g = graph(2);
    let ok = Arc::new(AtomicUsize::new(0));
    g.from_graph::<u8, _>("boom", InvokeType::Serial, |d| {
        if *d == 0 {
            panic!("callback failure");
        }
    })
    .unwrap();
    let o = Arc::clone(&ok);
    g.from_graph::<u8, _>("boom", InvokeType::Serial, move |_| {
        o.fetch_add(1, Ordering::SeqCst);
    })
    .unwrap();
    g.to_graph("boom", 0u8).unwrap();
    g.to_graph("boom", 1u8).unwrap();
    assert!(g.wait_idle(Duration::from_secs(5)));
    assert_eq!(ok.load(Ordering::SeqCst), 2);
}
