//! Latency summaries and the throughput rule.
//!
//! Throughput over a batch of packets is the total payload size divided by
//! the summed per-packet latency, not by wall-clock duration of the run.
//! Megabytes are decimal (10⁶ bytes).

use alloc::vec::Vec;

/// Summary of one batch of latency samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub n: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
}

/// Mean, median and nearest-rank p99 of `samples_ns`, reported in
/// microseconds. `None` for an empty batch.
pub fn summarize(samples_ns: &[u64]) -> Option<LatencySummary> {
    if samples_ns.is_empty() {
        return None;
    }
    let mut sorted: Vec<u64> = samples_ns.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let total: u128 = sorted.iter().map(|&v| v as u128).sum();
    let mean_ns = total as f64 / n as f64;
    let median_ns = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    Some(LatencySummary {
        n,
        mean_us: mean_ns / 1e3,
        median_us: median_ns / 1e3,
        p99_us: sorted[nearest_rank(n, 99)] as f64 / 1e3,
    })
}

/// Zero-based index of the nearest-rank `pct` percentile in a sorted
/// batch of `n` samples.
pub fn nearest_rank(n: usize, pct: usize) -> usize {
    debug_assert!(n > 0 && pct <= 100);
    let rank = (pct * n).div_ceil(100).max(1);
    rank - 1
}

/// MB/s for `total_bytes` moved in `total_latency_ns` of summed latency.
///
/// Computed as `(bytes · 1000) / ns`: both operands are exact in `f64`
/// below 2⁵³, so the result is the correctly rounded quotient.
pub fn throughput_mbps(total_bytes: u64, total_latency_ns: u64) -> f64 {
    (total_bytes as f64 * 1e3) / total_latency_ns as f64
}

/// Applies the throughput rule to `(payload_bytes, latency_ns)` records.
pub fn batch_throughput_mbps(records: &[(u64, u64)]) -> f64 {
    let bytes: u64 = records.iter().map(|r| r.0).sum();
    let ns: u64 = records.iter().map(|r| r.1).sum();
    throughput_mbps(bytes, ns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_packet_is_size_over_latency() {
        // 4096 bytes in 2 ms = 2.048 MB/s
        assert_eq!(throughput_mbps(4096, 2_000_000), 2.048);
        assert_eq!(batch_throughput_mbps(&[(1_000_000, 1_000_000_000)]), 1.0);
    }

    #[test]
    fn summary_of_known_batch() {
        let s = summarize(&[4000, 1000, 3000, 2000]).unwrap();
        assert_eq!(s.n, 4);
        assert_eq!(s.mean_us, 2.5);
        assert_eq!(s.median_us, 2.5);
        assert_eq!(s.p99_us, 4.0);
        assert_eq!(summarize(&[]), None);
    }

    #[test]
    fn nearest_rank_edges() {
        assert_eq!(nearest_rank(1, 99), 0);
        assert_eq!(nearest_rank(100, 99), 98);
        assert_eq!(nearest_rank(101, 99), 99);
        assert_eq!(nearest_rank(10, 50), 4);
    }
}
