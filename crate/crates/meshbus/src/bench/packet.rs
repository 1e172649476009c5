use std::sync::Arc;

use meshbus_core::codec::{put_bytes, put_u64, ByteReader, Codec, DecodeError};

/// Benchmark message. `data` is shared so building a packet never copies
/// the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchPacket {
    pub seq: u64,
    /// Sender clock reading taken just before publishing.
    pub sent_ns: u64,
    pub data: Arc<[u8]>,
}

/// `seq: u64 | sent_ns: u64 | len: u32 | data`, little-endian.
#[derive(Debug, Clone, Copy, Default)]
pub struct BenchPacketCodec;

pub const PACKET_TAG: &str = "bench_packet";

impl Codec for BenchPacketCodec {
    type Value = BenchPacket;

    fn encode(&self, value: &BenchPacket, out: &mut Vec<u8>) {
        out.reserve(20 + value.data.len());
        put_u64(out, value.seq);
        put_u64(out, value.sent_ns);
        put_bytes(out, &value.data);
    }

    fn decode(&self, bytes: &[u8]) -> Result<BenchPacket, DecodeError> {
        let mut r = ByteReader::new(bytes);
        let seq = r.u64()?;
        let sent_ns = r.u64()?;
        let data = Arc::from(r.bytes()?);
        r.finish()?;
        Ok(BenchPacket { seq, sent_ns, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let p = BenchPacket {
            seq: 1,
            sent_ns: 2,
            data: Arc::from(&b"xy"[..]),
        };
        let mut out = Vec::new();
        BenchPacketCodec.encode(&p, &mut out);
        assert_eq!(out.len(), 8 + 8 + 4 + 2);
        assert_eq!(&out[16..20], &2u32.to_le_bytes());
        assert_eq!(BenchPacketCodec.decode(&out).unwrap(), p);
        assert!(BenchPacketCodec.decode(&out[..21]).is_err());
    }
}
