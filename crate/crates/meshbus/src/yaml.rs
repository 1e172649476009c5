//! YAML loading with source positions and last-wins duplicate keys.
//!
//! Built on the event parser rather than the document loader so that
//! repeated mapping keys resolve to the last occurrence (with a warning)
//! instead of failing the whole file.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use yaml_rust2::parser::{Event, MarkedEventReceiver, Parser, Tag};
use yaml_rust2::scanner::{Marker, TScalarStyle};
use yaml_rust2::Yaml;

/// A parse failure with the position it was detected at. Lines and columns
/// are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigParseError {
    pub file: Option<PathBuf>,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}:", file.display())?;
        }
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl ConfigParseError {
    pub fn at(pos: Pos, message: impl Into<String>) -> Self {
        Self {
            file: None,
            line: pos.line,
            column: pos.column,
            message: message.into(),
        }
    }

    pub fn in_file(mut self, file: &Path) -> Self {
        self.file = Some(file.to_path_buf());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl From<Marker> for Pos {
    fn from(m: Marker) -> Self {
        Pos {
            line: m.line(),
            column: m.col() + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Scalar(Scalar),
    Seq(Vec<Node>),
    /// Entries in file order; keys are unique.
    Map(Vec<(String, Node)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub pos: Pos,
}

impl Node {
    pub fn get(&self, key: &str) -> Option<&Node> {
        match &self.kind {
            NodeKind::Map(entries) => entries.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self.kind, NodeKind::Scalar(Scalar::Null))
    }

    pub fn as_str(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Scalar(Scalar::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            NodeKind::Scalar(Scalar::Null) => "null",
            NodeKind::Scalar(Scalar::Bool(_)) => "bool",
            NodeKind::Scalar(Scalar::Int(_)) => "integer",
            NodeKind::Scalar(Scalar::Float(_)) => "float",
            NodeKind::Scalar(Scalar::Str(_)) => "string",
            NodeKind::Seq(_) => "sequence",
            NodeKind::Map(_) => "mapping",
        }
    }
}

/// A repeated key that was overwritten.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateKey {
    pub key: String,
    pub pos: Pos,
}

#[derive(Debug, Default)]
pub struct Document {
    /// `None` for an empty document.
    pub root: Option<Node>,
    pub duplicates: Vec<DuplicateKey>,
}

enum Frame {
    Seq(Pos, usize, Vec<Node>),
    Map {
        pos: Pos,
        anchor: usize,
        entries: Vec<(String, Node)>,
        pending_key: Option<(String, Pos)>,
    },
}

#[derive(Default)]
struct Builder {
    stack: Vec<Frame>,
    anchors: HashMap<usize, Node>,
    root: Option<Node>,
    duplicates: Vec<DuplicateKey>,
    error: Option<ConfigParseError>,
}

fn resolve_scalar(value: String, style: TScalarStyle, tag: Option<&Tag>) -> Scalar {
    if let Some(tag) = tag {
        if tag.suffix == "str" {
            return Scalar::Str(value);
        }
    }
    if style != TScalarStyle::Plain {
        return Scalar::Str(value);
    }
    match Yaml::from_str(&value) {
        Yaml::Null => Scalar::Null,
        Yaml::Boolean(b) => Scalar::Bool(b),
        Yaml::Integer(i) => Scalar::Int(i),
        Yaml::Real(r) => match parse_float(&r) {
            Some(f) => Scalar::Float(f),
            None => Scalar::Str(value),
        },
        _ => Scalar::Str(value),
    }
}

fn parse_float(s: &str) -> Option<f64> {
    match s {
        ".inf" | ".Inf" | ".INF" | "+.inf" | "+.Inf" | "+.INF" => Some(f64::INFINITY),
        "-.inf" | "-.Inf" | "-.INF" => Some(f64::NEG_INFINITY),
        ".nan" | ".NaN" | ".NAN" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

impl Builder {
    fn push_value(&mut self, node: Node, anchor: usize) {
        if anchor > 0 {
            self.anchors.insert(anchor, node.clone());
        }
        match self.stack.last_mut() {
            None => self.root = Some(node),
            Some(Frame::Seq(_, _, items)) => items.push(node),
            Some(Frame::Map {
                entries,
                pending_key,
                ..
            }) => match pending_key.take() {
                None => {
                    let key = match &node.kind {
                        NodeKind::Scalar(Scalar::Str(s)) => s.clone(),
                        NodeKind::Scalar(Scalar::Int(i)) => i.to_string(),
                        NodeKind::Scalar(Scalar::Bool(b)) => b.to_string(),
                        NodeKind::Scalar(Scalar::Float(f)) => f.to_string(),
                        NodeKind::Scalar(Scalar::Null) => "~".to_string(),
                        _ => {
                            self.error.get_or_insert(ConfigParseError::at(
                                node.pos,
                                "mapping keys must be scalars",
                            ));
                            String::new()
                        }
                    };
                    *pending_key = Some((key, node.pos));
                }
                Some((key, key_pos)) => {
                    if let Some(slot) = entries.iter_mut().find(|(k, _)| *k == key) {
                        self.duplicates.push(DuplicateKey {
                            key: key.clone(),
                            pos: key_pos,
                        });
                        slot.1 = node;
                    } else {
                        entries.push((key, node));
                    }
                }
            },
        }
    }
}

impl MarkedEventReceiver for Builder {
    fn on_event(&mut self, ev: Event, mark: Marker) {
        if self.error.is_some() {
            return;
        }
        let pos = Pos::from(mark);
        match ev {
            Event::Scalar(value, style, anchor, tag) => {
                let scalar = resolve_scalar(value, style, tag.as_ref());
                self.push_value(
                    Node {
                        kind: NodeKind::Scalar(scalar),
                        pos,
                    },
                    anchor,
                );
            }
            Event::SequenceStart(anchor, _) => self.stack.push(Frame::Seq(pos, anchor, Vec::new())),
            Event::MappingStart(anchor, _) => self.stack.push(Frame::Map {
                pos,
                anchor,
                entries: Vec::new(),
                pending_key: None,
            }),
            Event::SequenceEnd | Event::MappingEnd => {
                let (node, anchor) = match self.stack.pop() {
                    Some(Frame::Seq(pos, anchor, items)) => (
                        Node {
                            kind: NodeKind::Seq(items),
                            pos,
                        },
                        anchor,
                    ),
                    Some(Frame::Map {
                        pos,
                        anchor,
                        entries,
                        ..
                    }) => (
                        Node {
                            kind: NodeKind::Map(entries),
                            pos,
                        },
                        anchor,
                    ),
                    None => return,
                };
                self.push_value(node, anchor);
            }
            Event::Alias(id) => match self.anchors.get(&id) {
                Some(node) => {
                    let node = node.clone();
                    self.push_value(node, 0);
                }
                None => {
                    self.error = Some(ConfigParseError::at(pos, "alias to unknown anchor"));
                }
            },
            _ => {}
        }
    }
}

/// Parses the first document of `text`.
pub fn parse(text: &str) -> Result<Document, ConfigParseError> {
    let mut builder = Builder::default();
    let mut parser = Parser::new_from_str(text);
    parser.load(&mut builder, false).map_err(|e| {
        let m = e.marker();
        ConfigParseError {
            file: None,
            line: m.line(),
            column: m.col() + 1,
            message: e.info().to_string(),
        }
    })?;
    if let Some(err) = builder.error {
        return Err(err);
    }
    Ok(Document {
        root: builder.root,
        duplicates: builder.duplicates,
    })
}

/// Reads and parses `path`, logging a warning for each duplicate key.
pub fn parse_file(path: &Path) -> Result<Document, ConfigParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigParseError {
        file: Some(path.to_path_buf()),
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    let doc = parse(&text).map_err(|e| e.in_file(path))?;
    for dup in &doc.duplicates {
        log::warn!(
            "{}:{}: duplicate key {:?}, last value wins",
            path.display(),
            dup.pos.line,
            dup.key
        );
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_resolve_by_style() {
        let doc = parse("a: 3\nb: 3.5\nc: true\nd: hi\ne: '3'\nf:\ng: !!str 4\n").unwrap();
        let root = doc.root.unwrap();
        let kind = |k: &str| root.get(k).unwrap().kind.clone();
        assert_eq!(kind("a"), NodeKind::Scalar(Scalar::Int(3)));
        assert_eq!(kind("b"), NodeKind::Scalar(Scalar::Float(3.5)));
        assert_eq!(kind("c"), NodeKind::Scalar(Scalar::Bool(true)));
        assert_eq!(kind("d"), NodeKind::Scalar(Scalar::Str("hi".into())));
        assert_eq!(kind("e"), NodeKind::Scalar(Scalar::Str("3".into())));
        assert_eq!(kind("f"), NodeKind::Scalar(Scalar::Null));
        assert_eq!(kind("g"), NodeKind::Scalar(Scalar::Str("4".into())));
    }

    #[test]
    fn duplicate_keys_last_wins() {
        let doc = parse("a: 1\nb: 2\na: 3\n").unwrap();
        let root = doc.root.unwrap();
        assert_eq!(root.get("a").unwrap().kind, NodeKind::Scalar(Scalar::Int(3)));
        assert_eq!(doc.duplicates.len(), 1);
        assert_eq!(doc.duplicates[0].key, "a");
        assert_eq!(doc.duplicates[0].pos.line, 3);
    }

    #[test]
    fn positions_are_one_based() {
        let doc = parse("top:\n  inner: x\n").unwrap();
        let inner = doc.root.unwrap().get("top").unwrap().get("inner").unwrap().clone();
        assert_eq!(inner.pos, Pos { line: 2, column: 10 });
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse("a: [1,\n b: 2\n").unwrap_err();
        assert!(err.line >= 2, "{err}");
        assert!(!err.message.is_empty());
    }

    #[test]
    fn empty_document() {
        assert!(parse("").unwrap().root.is_none());
        assert!(parse("# only a comment\n").unwrap().root.is_none());
    }

    #[test]
    fn aliases_are_expanded() {
        let doc = parse("base: &b {x: 1}\ncopy: *b\n").unwrap();
        let root = doc.root.unwrap();
        assert_eq!(root.get("copy").unwrap().kind, root.get("base").unwrap().kind);
    }
}
