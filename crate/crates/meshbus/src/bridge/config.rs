//! `network_setting.yaml` schema.
//!
//! ```yaml
//! network:
//!   publisher:
//!     ip: "tcp://*:5553"
//!     channels:
//!       - pre_channel
//!   subscribers:
//!     - ip: "tcp://192.168.1.20:5553"
//!       channels:
//!         - next_channel
//! ```
//!
//! A file without a `network` section describes a purely in-process setup.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use meshbus_core::ChannelId;

use crate::yaml::{self, ConfigParseError, Node, NodeKind, Pos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Tcp,
    /// Local socket, addressed by `host:port` as a name.
    Ipc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub scheme: Scheme,
    /// `*` binds every interface (publishers only).
    pub host: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid endpoint {uri:?}: {reason}")]
pub struct InvalidUri {
    pub uri: String,
    pub reason: String,
}

impl Endpoint {
    pub fn tcp(host: &str, port: u16) -> Self {
        Self {
            scheme: Scheme::Tcp,
            host: host.to_string(),
            port,
        }
    }

    pub fn ipc(name: &str, port: u16) -> Self {
        Self {
            scheme: Scheme::Ipc,
            host: name.to_string(),
            port,
        }
    }

    pub fn is_wildcard(&self) -> bool {
        self.host == "*"
    }
}

impl FromStr for Endpoint {
    type Err = InvalidUri;

    fn from_str(uri: &str) -> Result<Self, InvalidUri> {
        let fail = |reason: &str| InvalidUri {
            uri: uri.to_string(),
            reason: reason.to_string(),
        };
        let (scheme, rest) = uri
            .split_once("://")
            .ok_or_else(|| fail("expected scheme://host:port (placeholder not filled in?)"))?;
        let scheme = match scheme {
            "tcp" => Scheme::Tcp,
            "ipc" => Scheme::Ipc,
            other => return Err(fail(&format!("unsupported scheme {other:?}, use tcp or ipc"))),
        };
        let (host, port) = rest.rsplit_once(':').ok_or_else(|| fail("missing :port"))?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        if host.is_empty() {
            return Err(fail("missing host"));
        }
        if host.contains('/') || host.chars().any(char::is_whitespace) {
            return Err(fail("host contains illegal characters"));
        }
        let port = port.parse::<u16>().map_err(|_| fail("port is not a number in 0..=65535"))?;
        Ok(Endpoint {
            scheme,
            host: host.to_string(),
            port,
        })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scheme = match self.scheme {
            Scheme::Tcp => "tcp",
            Scheme::Ipc => "ipc",
        };
        if self.host.contains(':') {
            write!(f, "{scheme}://[{}]:{}", self.host, self.port)
        } else {
            write!(f, "{scheme}://{}:{}", self.host, self.port)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublisherConfig {
    pub endpoint: Endpoint,
    pub channels: Vec<ChannelId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriberConfig {
    pub endpoint: Endpoint,
    pub channels: Vec<ChannelId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkConfig {
    pub publisher: Option<PublisherConfig>,
    pub subscribers: Vec<SubscriberConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Parse(#[from] ConfigParseError),
    #[error("{file}line {line}: {source}", file = file_prefix(.file))]
    InvalidUri {
        file: Option<std::path::PathBuf>,
        line: usize,
        source: InvalidUri,
    },
}

fn file_prefix(file: &Option<std::path::PathBuf>) -> String {
    file.as_ref()
        .map(|f| format!("{}: ", f.display()))
        .unwrap_or_default()
}

impl NetworkConfig {
    pub fn is_empty(&self) -> bool {
        self.publisher.is_none() && self.subscribers.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let doc = yaml::parse_file(path)?;
        Self::from_document(doc.root).map_err(|e| match e {
            ConfigError::Parse(p) => ConfigError::Parse(p.in_file(path)),
            ConfigError::InvalidUri { line, source, .. } => ConfigError::InvalidUri {
                file: Some(path.to_path_buf()),
                line,
                source,
            },
        })
    }

    pub fn from_yaml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_document(yaml::parse(text)?.root)
    }

    fn from_document(root: Option<Node>) -> Result<Self, ConfigError> {
        let Some(root) = root else {
            return Ok(Self::default());
        };
        let NodeKind::Map(_) = root.kind else {
            return Err(field_err(&root, "top level", "a mapping"));
        };
        let Some(network) = root.get("network").filter(|n| !n.is_null()) else {
            return Ok(Self::default());
        };
        if !matches!(network.kind, NodeKind::Map(_)) {
            return Err(field_err(network, "network", "a mapping"));
        }
        let publisher = match network.get("publisher").filter(|n| !n.is_null()) {
            None => None,
            Some(p) => {
                let (endpoint, channels) = endpoint_block(p, "network.publisher")?;
                for (i, c) in channels.iter().enumerate() {
                    if channels[..i].contains(c) {
                        return Err(ConfigParseError::at(
                            p.pos,
                            format!("network.publisher.channels lists {c} twice"),
                        )
                        .into());
                    }
                }
                Some(PublisherConfig { endpoint, channels })
            }
        };
        let mut subscribers = Vec::new();
        match network.get("subscribers") {
            None => {}
            Some(n) if n.is_null() => {}
            Some(Node {
                kind: NodeKind::Seq(items),
                ..
            }) => {
                for (i, item) in items.iter().enumerate() {
                    let field = format!("network.subscribers[{i}]");
                    let (endpoint, channels) = endpoint_block(item, &field)?;
                    if endpoint.is_wildcard() {
                        return Err(ConfigError::InvalidUri {
                            file: None,
                            line: item.pos.line,
                            source: InvalidUri {
                                uri: endpoint.to_string(),
                                reason: "subscribers must name a concrete host".into(),
                            },
                        });
                    }
                    subscribers.push(SubscriberConfig { endpoint, channels });
                }
            }
            Some(other) => return Err(field_err(other, "network.subscribers", "a sequence")),
        }
        Ok(Self {
            publisher,
            subscribers,
        })
    }
}

fn field_err(node: &Node, field: &str, expected: &str) -> ConfigError {
    ConfigParseError::at(
        node.pos,
        format!("{field} must be {expected}, found {}", node.kind_name()),
    )
    .into()
}

fn endpoint_block(node: &Node, field: &str) -> Result<(Endpoint, Vec<ChannelId>), ConfigError> {
    if !matches!(node.kind, NodeKind::Map(_)) {
        return Err(field_err(node, field, "a mapping"));
    }
    let ip = node
        .get("ip")
        .ok_or_else(|| ConfigParseError::at(node.pos, format!("{field}.ip is missing")))?;
    let uri = ip
        .as_str()
        .ok_or_else(|| field_err(ip, &format!("{field}.ip"), "a string"))?;
    let endpoint = uri.parse::<Endpoint>().map_err(|source| ConfigError::InvalidUri {
        file: None,
        line: ip.pos.line,
        source,
    })?;
    let channels = match node.get("channels") {
        None => Vec::new(),
        Some(n) if n.is_null() => Vec::new(),
        Some(Node {
            kind: NodeKind::Seq(items),
            ..
        }) => items
            .iter()
            .map(|c| channel(c, field))
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(field_err(other, &format!("{field}.channels"), "a sequence")),
    };
    Ok((endpoint, channels))
}

fn channel(node: &Node, field: &str) -> Result<ChannelId, ConfigError> {
    let pos: Pos = node.pos;
    let name = node
        .as_str()
        .ok_or_else(|| field_err(node, &format!("{field}.channels[]"), "a string"))?;
    ChannelId::new(name).map_err(|e| {
        ConfigParseError::at(pos, format!("{field}.channels: {name:?} is not a valid channel: {e}"))
            .into()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const VISUALIZATION: &str = "    network:
      publisher:
        ip: \"tcp://*:5553\"
        channels:
          - lidar_visual_channel
          - re_optimized_poses
";

    #[test]
    fn publisher_only_file() {
        let cfg = NetworkConfig::from_yaml_str(VISUALIZATION).unwrap();
        let p = cfg.publisher.unwrap();
        assert_eq!(p.endpoint, Endpoint::tcp("*", 5553));
        assert_eq!(p.channels, ["lidar_visual_channel", "re_optimized_poses"]);
        assert!(cfg.subscribers.is_empty());
    }

    #[test]
    fn missing_network_section_is_empty() {
        assert!(NetworkConfig::from_yaml_str("other: 1\n").unwrap().is_empty());
        assert!(NetworkConfig::from_yaml_str("").unwrap().is_empty());
        assert!(NetworkConfig::from_yaml_str("network:\n").unwrap().is_empty());
    }

    #[test]
    fn scheme_whitelist() {
        let err = "udp://x:1".parse::<Endpoint>().unwrap_err();
        assert!(err.reason.contains("udp"));
        let text = "network:\n  publisher:\n    ip: \"udp://x:1\"\n";
        match NetworkConfig::from_yaml_str(text) {
            Err(ConfigError::InvalidUri { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn endpoint_forms() {
        assert_eq!("ipc://bench:7".parse::<Endpoint>().unwrap(), Endpoint::ipc("bench", 7));
        assert_eq!(
            "tcp://[::1]:9".parse::<Endpoint>().unwrap().to_string(),
            "tcp://[::1]:9"
        );
        assert!("tcp://host".parse::<Endpoint>().is_err());
        assert!("tcp://:80".parse::<Endpoint>().is_err());
        assert!("tcp://h:99999".parse::<Endpoint>().is_err());
        assert!("x".parse::<Endpoint>().is_err());
    }

    #[test]
    fn duplicate_publisher_channels() {
        let text = "network:\n  publisher:\n    ip: tcp://*:1\n    channels: [a, a]\n";
        assert!(matches!(
            NetworkConfig::from_yaml_str(text),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn wildcard_subscriber_is_rejected() {
        let text = "network:\n  subscribers:\n    - ip: tcp://*:1\n      channels: [a]\n";
        assert!(matches!(
            NetworkConfig::from_yaml_str(text),
            Err(ConfigError::InvalidUri { .. })
        ));
    }

    #[test]
    fn wrong_shapes_name_the_field() {
        let text = "network:\n  subscribers: 5\n";
        let err = NetworkConfig::from_yaml_str(text).unwrap_err().to_string();
        assert!(err.contains("network.subscribers"), "{err}");
        let text = "network:\n  publisher:\n    channels: [a]\n";
        let err = NetworkConfig::from_yaml_str(text).unwrap_err().to_string();
        assert!(err.contains("network.publisher.ip"), "{err}");
    }
}
