//! Byte-stream sockets behind the bridge: TCP, and Unix domain sockets for
//! `ipc://` endpoints.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
#[cfg(unix)]
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;

use meshbus_core::wire::{self, STREAM_PREFIX_LEN};

use super::config::{Endpoint, Scheme};

/// Filesystem path an `ipc://name:port` endpoint maps to. `*` and
/// `localhost` name the same socket.
pub fn ipc_path(endpoint: &Endpoint) -> PathBuf {
    let host = match endpoint.host.as_str() {
        "*" | "localhost" | "127.0.0.1" => "localhost",
        other => other,
    };
    let host: String = host
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    std::env::temp_dir().join(format!("meshbus-{host}-{}.sock", endpoint.port))
}

#[derive(Debug)]
pub enum Stream {
    Tcp(TcpStream),
    #[cfg(unix)]
    Unix(UnixStream),
}

impl Stream {
    pub fn connect(endpoint: &Endpoint) -> io::Result<Stream> {
        match endpoint.scheme {
            Scheme::Tcp => {
                let addrs = (endpoint.host.as_str(), endpoint.port).to_socket_addrs()?;
                let mut last = io::Error::new(io::ErrorKind::NotFound, "host resolved to no address");
                for addr in addrs {
                    match TcpStream::connect(addr) {
                        Ok(s) => {
                            s.set_nodelay(true)?;
                            return Ok(Stream::Tcp(s));
                        }
                        Err(e) => last = e,
                    }
                }
                Err(last)
            }
            #[cfg(unix)]
            Scheme::Ipc => UnixStream::connect(ipc_path(endpoint)).map(Stream::Unix),
            #[cfg(not(unix))]
            Scheme::Ipc => Err(io::Error::new(
                io::ErrorKind::Unsupported,
                "ipc endpoints need Unix domain sockets",
            )),
        }
    }

    pub fn try_clone(&self) -> io::Result<Stream> {
        match self {
            Stream::Tcp(s) => s.try_clone().map(Stream::Tcp),
            #[cfg(unix)]
            Stream::Unix(s) => s.try_clone().map(Stream::Unix),
        }
    }

    pub fn set_read_timeout(&self, dur: Option<std::time::Duration>) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.set_read_timeout(dur),
            #[cfg(unix)]
            Stream::Unix(s) => s.set_read_timeout(dur),
        }
    }

    /// Closes both directions; blocked readers and writers return.
    pub fn close(&self) {
        let _ = match self {
            Stream::Tcp(s) => s.shutdown(Shutdown::Both),
            #[cfg(unix)]
            Stream::Unix(s) => s.shutdown(Shutdown::Both),
        };
    }
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            #[cfg(unix)]
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            #[cfg(unix)]
            Stream::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            #[cfg(unix)]
            Stream::Unix(s) => s.flush(),
        }
    }
}

#[derive(Debug)]
pub enum Listener {
    Tcp(TcpListener),
    #[cfg(unix)]
    Unix(UnixListener, PathBuf),
}

impl Listener {
    /// Binds nonblocking. An IPC socket file left behind by a dead process
    /// is replaced; one with a live owner is reported as in use.
    pub fn bind(endpoint: &Endpoint) -> io::Result<Listener> {
        let listener = match endpoint.scheme {
            Scheme::Tcp => {
                let host = if endpoint.is_wildcard() { "0.0.0.0" } else { endpoint.host.as_str() };
                Listener::Tcp(TcpListener::bind((host, endpoint.port))?)
            }
            #[cfg(unix)]
            Scheme::Ipc => {
                let path = ipc_path(endpoint);
                if path.exists() {
                    if UnixStream::connect(&path).is_ok() {
                        return Err(io::Error::new(
                            io::ErrorKind::AddrInUse,
                            format!("{} is in use", path.display()),
                        ));
                    }
                    let _ = std::fs::remove_file(&path);
                }
                Listener::Unix(UnixListener::bind(&path)?, path)
            }
            #[cfg(not(unix))]
            Scheme::Ipc => {
                return Err(io::Error::new(
                    io::ErrorKind::Unsupported,
                    "ipc endpoints need Unix domain sockets",
                ))
            }
        };
        match &listener {
            Listener::Tcp(l) => l.set_nonblocking(true)?,
            #[cfg(unix)]
            Listener::Unix(l, _) => l.set_nonblocking(true)?,
        }
        Ok(listener)
    }

    /// Accepts one connection, returned in blocking mode. `WouldBlock`
    /// when none is waiting.
    pub fn accept(&self) -> io::Result<Stream> {
        match self {
            Listener::Tcp(l) => {
                let (s, _) = l.accept()?;
                s.set_nonblocking(false)?;
                s.set_nodelay(true)?;
                Ok(Stream::Tcp(s))
            }
            #[cfg(unix)]
            Listener::Unix(l, _) => {
                let (s, _) = l.accept()?;
                s.set_nonblocking(false)?;
                Ok(Stream::Unix(s))
            }
        }
    }

    /// The bound endpoint with an OS-assigned TCP port filled in.
    pub fn local_endpoint(&self, requested: &Endpoint) -> Endpoint {
        let mut ep = requested.clone();
        if let Listener::Tcp(l) = self {
            if let Ok(addr) = l.local_addr() {
                ep.port = addr.port();
            }
        }
        ep
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        #[cfg(unix)]
        if let Listener::Unix(_, path) = self {
            let _ = std::fs::remove_file(path);
        }
    }
}

/// What [`read_frame`] found on the stream.
#[derive(Debug)]
pub enum ReadOutcome {
    /// A complete frame is in the buffer.
    Frame,
    /// The peer closed the stream between frames.
    Closed,
    /// The prefix announced a frame no valid frame can have. The stream
    /// cannot be resynchronized after this.
    Oversized(usize),
}

/// Reads one length-prefixed frame into `buf`, replacing its contents.
pub fn read_frame(stream: &mut impl Read, buf: &mut Vec<u8>) -> io::Result<ReadOutcome> {
    let mut prefix = [0u8; STREAM_PREFIX_LEN];
    let mut filled = 0;
    while filled < STREAM_PREFIX_LEN {
        match stream.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Ok(ReadOutcome::Closed),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = match wire::decode_stream_prefix(prefix) {
        Ok(len) => len,
        Err(wire::OversizedFrame(len)) => return Ok(ReadOutcome::Oversized(len)),
    };
    buf.clear();
    buf.resize(len, 0);
    stream.read_exact(buf)?;
    Ok(ReadOutcome::Frame)
}

/// Writes `frame` with its length prefix.
pub fn write_frame(stream: &mut impl Write, frame: &[u8]) -> io::Result<()> {
    stream.write_all(&wire::stream_prefix(frame.len()))?;
    stream.write_all(frame)
}
