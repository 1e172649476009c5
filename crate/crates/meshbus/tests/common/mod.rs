#![allow(dead_code)]

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use meshbus::bridge::{Endpoint, NetworkConfig, PublisherConfig, SubscriberConfig};
use meshbus::core::ChannelId;

pub fn wait_until(timeout: Duration, mut done: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if done() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    done()
}

pub fn channels(names: &[&str]) -> Vec<ChannelId> {
    names.iter().map(|n| ChannelId::new(n).unwrap()).collect()
}

pub fn publisher(endpoint: Endpoint, chans: &[&str]) -> NetworkConfig {
    NetworkConfig {
        publisher: Some(PublisherConfig {
            endpoint,
            channels: channels(chans),
        }),
        subscribers: vec![],
    }
}

pub fn subscriber(endpoint: Endpoint, chans: &[&str]) -> NetworkConfig {
    NetworkConfig {
        publisher: None,
        subscribers: vec![SubscriberConfig {
            endpoint,
            channels: channels(chans),
        }],
    }
}

/// Items pushed from callbacks, with a blocking wait for a count.
pub struct Sink<T> {
    items: Mutex<Vec<T>>,
    cv: Condvar,
}

impl<T: Clone> Sink<T> {
    pub fn new() -> Arc<Self> {
        Arc::new(Self {
            items: Mutex::new(Vec::new()),
            cv: Condvar::new(),
        })
    }

    pub fn push(&self, item: T) {
        self.items.lock().unwrap().push(item);
        self.cv.notify_all();
    }

    pub fn wait_len(&self, n: usize, timeout: Duration) -> bool {
        let guard = self.items.lock().unwrap();
        let (guard, _) = self.cv.wait_timeout_while(guard, timeout, |v| v.len() < n).unwrap();
        guard.len() >= n
    }

    pub fn len(&self) -> usize {
        self.items.lock().unwrap().len()
    }

    pub fn snapshot(&self) -> Vec<T> {
        self.items.lock().unwrap().clone()
    }
}

/// Deterministic payload bytes.
pub fn payload(seed: u64, len: usize) -> Vec<u8> {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

/// A copy of `frame` damaged so that unpacking must reject it. `kind`
/// picks the damage: separator, oversized header length, invalid UTF-8,
/// whitespace in the channel, or a cut fixed header.
pub fn corrupt(frame: &[u8], kind: usize) -> Vec<u8> {
    let mut bad = frame.to_vec();
    match kind % 5 {
        0 => bad[4] ^= 0xFF,
        1 => {
            let hl = (frame.len() as u32).wrapping_add(1);
            bad[..4].copy_from_slice(&hl.to_le_bytes());
        }
        2 => bad[6] = 0xFF,
        3 => bad[6] = b' ',
        _ => bad.truncate(3),
    }
    assert!(meshbus::core::wire::unpack(&bad).is_err());
    bad
}
