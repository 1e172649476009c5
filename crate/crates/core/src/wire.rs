//! Frame layout for messages crossing a process or device boundary.
//!
//! ```text
//! offset  size            field
//! 0       4   u32 LE      header_length  (= len(head_str))
//! 4       2   u16 LE      header_separator (= 0x4852, "HR")
//! 6       header_length   head_str       (UTF-8 channel name)
//! 6+hl    rest            data_string    (serialized payload, may be empty)
//! ```
//!
//! The payload runs to the end of the frame, so a frame needs an outer
//! boundary. Message-oriented transports supply it themselves; byte streams
//! prefix each frame with a `u32` LE `frame_length` (see [`stream_prefix`]).

use alloc::vec::Vec;
use core::fmt;

use crate::name::{self, ChannelId, NameError, MAX_NAME_LEN};

pub const HEADER_SEPARATOR: u16 = 0x4852;

/// Bytes taken by `header_length` and `header_separator`.
pub const FIXED_HEADER_LEN: usize = 6;

/// Largest `data_string` accepted by [`pack`].
pub const MAX_PAYLOAD_LEN: usize = 64 << 20;

/// Largest frame [`pack`] can produce.
pub const MAX_FRAME_LEN: usize = FIXED_HEADER_LEN + MAX_NAME_LEN + MAX_PAYLOAD_LEN;

/// Size of the outer length prefix on byte-stream transports.
pub const STREAM_PREFIX_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackError {
    InvalidChannel(NameError),
    /// Encoded channel name length in bytes.
    ChannelTooLong(usize),
    /// Payload length in bytes.
    PayloadTooLarge(usize),
}

impl fmt::Display for PackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PackError::InvalidChannel(e) => write!(f, "invalid channel: {e}"),
            PackError::ChannelTooLong(len) => {
                write!(f, "channel name is {len} bytes, limit is {MAX_NAME_LEN}")
            }
            PackError::PayloadTooLarge(len) => {
                write!(f, "payload is {len} bytes, limit is {MAX_PAYLOAD_LEN}")
            }
        }
    }
}

impl core::error::Error for PackError {}

impl From<NameError> for PackError {
    fn from(e: NameError) -> Self {
        match e {
            NameError::TooLong(len) => PackError::ChannelTooLong(len),
            other => PackError::InvalidChannel(other),
        }
    }
}

/// Why an inbound frame was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscardReason {
    /// Fewer than six bytes, or `header_length` points past the end.
    TruncatedHeader,
    BadSeparator,
    BadUtf8,
    /// `head_str` is UTF-8 but not a legal channel name.
    InvalidChannel,
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscardReason::TruncatedHeader => "truncated header",
            DiscardReason::BadSeparator => "bad header separator",
            DiscardReason::BadUtf8 => "head_str is not UTF-8",
            DiscardReason::InvalidChannel => "head_str is not a valid channel name",
        })
    }
}

impl core::error::Error for DiscardReason {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireHeader<'a> {
    pub header_length: u32,
    pub header_separator: u16,
    pub head_str: &'a str,
}

/// A decoded frame borrowing from the receive buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireFrame<'a> {
    pub header: WireHeader<'a>,
    pub data_string: &'a [u8],
}

impl<'a> WireFrame<'a> {
    /// Parses `bytes` without allocating.
    pub fn parse(bytes: &'a [u8]) -> Result<Self, DiscardReason> {
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(DiscardReason::TruncatedHeader);
        }
        let header_length = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let header_separator = u16::from_le_bytes([bytes[4], bytes[5]]);
        if header_separator != HEADER_SEPARATOR {
            return Err(DiscardReason::BadSeparator);
        }
        let rest = &bytes[FIXED_HEADER_LEN..];
        let head_len = header_length as usize;
        if head_len > rest.len() {
            return Err(DiscardReason::TruncatedHeader);
        }
        let (head, data_string) = rest.split_at(head_len);
        let head_str = core::str::from_utf8(head).map_err(|_| DiscardReason::BadUtf8)?;
        name::validate(head_str).map_err(|_| DiscardReason::InvalidChannel)?;
        Ok(WireFrame {
            header: WireHeader {
                header_length,
                header_separator,
                head_str,
            },
            data_string,
        })
    }

    pub fn channel_name(&self) -> &'a str {
        self.header.head_str
    }

    /// Total encoded size of this frame.
    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + self.header.head_str.len() + self.data_string.len()
    }
}

/// Size of the frame [`pack`] produces for these inputs.
pub fn frame_len(channel: &str, data_string: &[u8]) -> usize {
    FIXED_HEADER_LEN + channel.len() + data_string.len()
}

/// Builds a frame for `channel` carrying `data_string`.
pub fn pack(channel: &str, data_string: &[u8]) -> Result<Vec<u8>, PackError> {
    name::validate(channel)?;
    let mut out = Vec::new();
    write_frame(channel, data_string, &mut out)?;
    Ok(out)
}

/// Appends a frame for an already validated channel to `out`.
pub fn pack_into(
    channel: &ChannelId,
    data_string: &[u8],
    out: &mut Vec<u8>,
) -> Result<(), PackError> {
    write_frame(channel.as_str(), data_string, out)
}

fn write_frame(channel: &str, data_string: &[u8], out: &mut Vec<u8>) -> Result<(), PackError> {
    if data_string.len() > MAX_PAYLOAD_LEN {
        return Err(PackError::PayloadTooLarge(data_string.len()));
    }
    out.reserve(frame_len(channel, data_string));
    put_header(channel, out);
    out.extend_from_slice(data_string);
    Ok(())
}

fn put_header(channel: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(&(channel.len() as u32).to_le_bytes());
    out.extend_from_slice(&HEADER_SEPARATOR.to_le_bytes());
    out.extend_from_slice(channel.as_bytes());
}

/// Appends only the header for `channel`. The caller appends the
/// `data_string` directly after it, which lets a codec serialize straight
/// into the outgoing buffer.
pub fn write_header(channel: &ChannelId, out: &mut Vec<u8>) {
    put_header(channel.as_str(), out);
}

/// Splits a frame into its channel and payload. Any structural problem is
/// reported as a [`DiscardReason`]; the caller is expected to drop the frame.
pub fn unpack(frame: &[u8]) -> Result<(ChannelId, &[u8]), DiscardReason> {
    let parsed = WireFrame::parse(frame)?;
    let channel = ChannelId::new(parsed.channel_name()).map_err(|_| DiscardReason::InvalidChannel)?;
    Ok((channel, parsed.data_string))
}

/// Outer `frame_length` prefix written before each frame on a byte stream.
pub fn stream_prefix(frame_len: usize) -> [u8; STREAM_PREFIX_LEN] {
    (frame_len as u32).to_le_bytes()
}

/// The stream announced a frame larger than any valid frame. A stream in
/// this state cannot be resynchronized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OversizedFrame(pub usize);

impl fmt::Display for OversizedFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stream announced a {} byte frame, limit is {MAX_FRAME_LEN}", self.0)
    }
}

impl core::error::Error for OversizedFrame {}

/// Reads an outer prefix, rejecting lengths no valid frame can have.
pub fn decode_stream_prefix(prefix: [u8; STREAM_PREFIX_LEN]) -> Result<usize, OversizedFrame> {
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        Err(OversizedFrame(len))
    } else {
        Ok(len)
    }
}
