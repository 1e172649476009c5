//! Parameter server: a file-backed key/value store that can be read and
//! updated at runtime.
//!
//! Nested mappings are flattened into dotted keys on load (`a: {b: 3}`
//! becomes `a.b = 3`). Asking for an interior key such as `a` reassembles
//! the subtree as a [`Value::Map`]. Values are never coerced: an integer is
//! not a float.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use yaml_rust2::yaml::Hash as YamlHash;
use yaml_rust2::{Yaml, YamlEmitter};

use crate::yaml::{self, ConfigParseError, Node, NodeKind, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Map(_) => "map",
        }
    }

    /// Parses a scalar written on a command line (`true`, `4`, `0.5`, text).
    pub fn parse_scalar(text: &str) -> Value {
        match yaml::parse(text).ok().and_then(|d| d.root).map(from_node) {
            Some(Some(v @ (Value::Bool(_) | Value::Int(_) | Value::Float(_) | Value::Str(_)))) => v,
            _ => Value::Str(text.to_string()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Str(s) => f.write_str(s),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Value::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

macro_rules! value_from {
    ($($ty:ty => $variant:ident),*) => {
        $(impl From<$ty> for Value {
            fn from(v: $ty) -> Self {
                Value::$variant(v.into())
            }
        })*
    };
}

value_from!(bool => Bool, i64 => Int, i32 => Int, f64 => Float, String => Str, &str => Str);

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("parameter {0:?} not found")]
    NotFound(String),
    #[error("parameter {key:?} is a {found}, not a {expected}")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid parameter key {0:?}")]
    InvalidKey(String),
    #[error("expected key=value, got {0:?}")]
    BadOverride(String),
    #[error(transparent)]
    Parse(#[from] ConfigParseError),
    #[error("writing parameters: {0}")]
    Io(#[from] std::io::Error),
}

fn check_key(key: &str) -> Result<(), ParamError> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        Err(ParamError::InvalidKey(key.to_string()))
    } else {
        Ok(())
    }
}

fn from_node(node: Node) -> Option<Value> {
    Some(match node.kind {
        NodeKind::Scalar(Scalar::Null) => return None,
        NodeKind::Scalar(Scalar::Bool(b)) => Value::Bool(b),
        NodeKind::Scalar(Scalar::Int(i)) => Value::Int(i),
        NodeKind::Scalar(Scalar::Float(f)) => Value::Float(f),
        NodeKind::Scalar(Scalar::Str(s)) => Value::Str(s),
        NodeKind::Seq(items) => Value::List(items.into_iter().filter_map(from_node).collect()),
        NodeKind::Map(entries) => Value::Map(
            entries
                .into_iter()
                .filter_map(|(k, v)| Some((k, from_node(v)?)))
                .collect(),
        ),
    })
}

/// Flattens non-empty maps into dotted leaves under `prefix`.
fn flatten_into(prefix: &str, value: Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Map(map) if !map.is_empty() => {
            for (k, v) in map {
                flatten_into(&format!("{prefix}.{k}"), v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf);
        }
    }
}

fn to_yaml(value: &Value) -> Yaml {
    match value {
        Value::Bool(b) => Yaml::Boolean(*b),
        Value::Int(i) => Yaml::Integer(*i),
        Value::Float(f) => Yaml::Real(if f.is_nan() {
            ".nan".into()
        } else if f.is_infinite() {
            if *f > 0.0 { ".inf" } else { "-.inf" }.into()
        } else {
            format!("{f:?}")
        }),
        Value::Str(s) => Yaml::String(s.clone()),
        Value::List(items) => Yaml::Array(items.iter().map(to_yaml).collect()),
        Value::Map(m) => Yaml::Hash(
            m.iter()
                .map(|(k, v)| (Yaml::String(k.clone()), to_yaml(v)))
                .collect(),
        ),
    }
}

/// Thread-safe parameter store. Reads share a lock; writes are serialized.
#[derive(Debug, Default)]
pub struct ParameterStore {
    entries: RwLock<BTreeMap<String, Value>>,
    generation: AtomicU64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a YAML file. Duplicate keys resolve last-wins with a warning.
    pub fn load(path: &Path) -> Result<Self, ParamError> {
        let doc = yaml::parse_file(path)?;
        Self::from_document(doc).map_err(|e| match e {
            ParamError::Parse(p) => ParamError::Parse(p.in_file(path)),
            other => other,
        })
    }

    pub fn from_yaml_str(text: &str) -> Result<Self, ParamError> {
        Self::from_document(yaml::parse(text)?)
    }

    fn from_document(doc: yaml::Document) -> Result<Self, ParamError> {
        let mut entries = BTreeMap::new();
        if let Some(root) = doc.root {
            let pos = root.pos;
            match from_node(root) {
                None => {}
                Some(Value::Map(map)) => {
                    for (k, v) in map {
                        check_key(&k).map_err(|_| {
                            ConfigParseError::at(pos, format!("invalid parameter key {k:?}"))
                        })?;
                        flatten_into(&k, v, &mut entries);
                    }
                }
                Some(other) => {
                    return Err(ConfigParseError::at(
                        pos,
                        format!("parameter file must be a mapping, found {}", other.type_name()),
                    )
                    .into())
                }
            }
        }
        Ok(Self {
            entries: RwLock::new(entries),
            generation: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().unwrap().is_empty()
    }

    /// Leaf keys in sorted order.
    pub fn keys(&self) -> Vec<String> {
        self.entries.read().unwrap().keys().cloned().collect()
    }

    /// Number of successful `set` calls since load.
    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::Acquire)
    }

    pub fn get(&self, key: &str) -> Result<Value, ParamError> {
        check_key(key)?;
        let entries = self.entries.read().unwrap();
        if let Some(v) = entries.get(key) {
            return Ok(v.clone());
        }
        let prefix = format!("{key}.");
        let mut subtree = BTreeMap::new();
        for (k, v) in entries.range(prefix.clone()..) {
            let Some(rest) = k.strip_prefix(&prefix) else {
                break;
            };
            insert_path(&mut subtree, rest, v.clone());
        }
        if subtree.is_empty() {
            Err(ParamError::NotFound(key.to_string()))
        } else {
            Ok(Value::Map(subtree))
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, ParamError> {
        match self.get(key)? {
            Value::Bool(b) => Ok(b),
            other => Err(mismatch(key, "bool", &other)),
        }
    }

    pub fn get_i64(&self, key: &str) -> Result<i64, ParamError> {
        match self.get(key)? {
            Value::Int(i) => Ok(i),
            other => Err(mismatch(key, "int", &other)),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ParamError> {
        match self.get(key)? {
            Value::Float(f) => Ok(f),
            other => Err(mismatch(key, "float", &other)),
        }
    }

    pub fn get_string(&self, key: &str) -> Result<String, ParamError> {
        match self.get(key)? {
            Value::Str(s) => Ok(s),
            other => Err(mismatch(key, "string", &other)),
        }
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<Value>, ParamError> {
        match self.get(key)? {
            Value::List(l) => Ok(l),
            other => Err(mismatch(key, "list", &other)),
        }
    }

    /// Stores `value` under `key`, replacing whatever subtree or leaf was
    /// there, and bumps the generation.
    pub fn set(&self, key: &str, value: impl Into<Value>) -> Result<(), ParamError> {
        check_key(key)?;
        let value = value.into();
        let mut entries = self.entries.write().unwrap();
        let prefix = format!("{key}.");
        entries.retain(|k, _| k != key && !k.starts_with(&prefix) && !key.starts_with(&format!("{k}.")));
        flatten_into(key, value, &mut entries);
        self.generation.fetch_add(1, Ordering::AcqRel);
        Ok(())
    }

    /// Applies a `key=value` override; the value is parsed as a YAML scalar.
    pub fn apply_override(&self, assignment: &str) -> Result<(), ParamError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ParamError::BadOverride(assignment.to_string()))?;
        self.set(key.trim(), Value::parse_scalar(value.trim()))
    }

    /// Serializes every entry as a flat mapping of dotted keys. Loading the
    /// output reproduces the store.
    pub fn to_yaml_string(&self) -> String {
        let entries = self.entries.read().unwrap();
        let hash: YamlHash = entries
            .iter()
            .map(|(k, v)| (Yaml::String(k.clone()), to_yaml(v)))
            .collect();
        let mut out = String::new();
        if hash.is_empty() {
            return "{}\n".to_string();
        }
        YamlEmitter::new(&mut out)
            .dump(&Yaml::Hash(hash))
            .expect("writing to a String cannot fail");
        out.push('\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamError> {
        std::fs::write(path, self.to_yaml_string())?;
        Ok(())
    }
}

fn mismatch(key: &str, expected: &'static str, found: &Value) -> ParamError {
    ParamError::TypeMismatch {
        key: key.to_string(),
        expected,
        found: found.type_name(),
    }
}

fn insert_path(map: &mut BTreeMap<String, Value>, path: &str, value: Value) {
    match path.split_once('.') {
        None => {
            map.insert(path.to_string(), value);
        }
        Some((head, rest)) => {
            let child = map
                .entry(head.to_string())
                .or_insert_with(|| Value::Map(BTreeMap::new()));
            if let Value::Map(inner) = child {
                insert_path(inner, rest, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_maps_flatten() {
        let store = ParameterStore::from_yaml_str("a: {b: 3}\n").unwrap();
        assert_eq!(store.get("a.b").unwrap(), Value::Int(3));
        let mut expected = BTreeMap::new();
        expected.insert("b".to_string(), Value::Int(3));
        assert_eq!(store.get("a").unwrap(), Value::Map(expected));
    }

    #[test]
    fn empty_file_is_empty_store() {
        assert!(ParameterStore::from_yaml_str("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_keys_last_wins() {
        let store = ParameterStore::from_yaml_str("x: 1\nx: 2\n").unwrap();
        assert_eq!(store.get_i64("x").unwrap(), 2);
    }

    #[test]
    fn missing_and_mismatched() {
        let store = ParameterStore::from_yaml_str("n: 4\nf: 4.0\n").unwrap();
        assert!(matches!(store.get("nope"), Err(ParamError::NotFound(_))));
        assert!(matches!(
            store.get_f64("n"),
            Err(ParamError::TypeMismatch { expected: "float", found: "int", .. })
        ));
        assert!(matches!(store.get_i64("f"), Err(ParamError::TypeMismatch { .. })));
        assert_eq!(store.get_f64("f").unwrap(), 4.0);
    }

    #[test]
    fn set_creates_and_overwrites() {
        let store = ParameterStore::new();
        store.set("robot.name", "r1").unwrap();
        assert_eq!(store.get_string("robot.name").unwrap(), "r1");
        store.set("robot.name", "r2").unwrap();
        assert_eq!(store.get_string("robot.name").unwrap(), "r2");
        assert_eq!(store.generation(), 2);
    }

    #[test]
    fn set_replaces_conflicting_shapes() {
        let store = ParameterStore::from_yaml_str("a: {b: 1, c: 2}\n").unwrap();
        store.set("a", 5i64).unwrap();
        assert_eq!(store.keys(), vec!["a".to_string()]);
        store.set("a.d", true).unwrap();
        assert_eq!(store.keys(), vec!["a.d".to_string()]);
    }

    #[test]
    fn invalid_keys() {
        let store = ParameterStore::new();
        assert!(matches!(store.set("", 1i64), Err(ParamError::InvalidKey(_))));
        assert!(matches!(store.get("a..b"), Err(ParamError::InvalidKey(_))));
    }

    #[test]
    fn overrides_parse_scalars() {
        let store = ParameterStore::new();
        store.apply_override("data_graph.workers=4").unwrap();
        store.apply_override("name = lidar").unwrap();
        store.apply_override("rate=0.5").unwrap();
        assert_eq!(store.get_i64("data_graph.workers").unwrap(), 4);
        assert_eq!(store.get_string("name").unwrap(), "lidar");
        assert_eq!(store.get_f64("rate").unwrap(), 0.5);
        assert!(matches!(store.apply_override("novalue"), Err(ParamError::BadOverride(_))));
    }

    #[test]
    fn non_mapping_root_is_an_error() {
        assert!(matches!(
            ParameterStore::from_yaml_str("- 1\n- 2\n"),
            Err(ParamError::Parse(_))
        ));
    }

    #[test]
    fn serialized_form_reloads() {
        let text = "a: {b: 3, c: [1, two, 3.5]}\nflag: true\nname: '42'\nempty: {}\nf: 1e-7\n";
        let store = ParameterStore::from_yaml_str(text).unwrap();
        let again = ParameterStore::from_yaml_str(&store.to_yaml_string()).unwrap();
        for key in store.keys() {
            assert_eq!(store.get(&key).unwrap(), again.get(&key).unwrap(), "{key}");
        }
        assert_eq!(store.keys(), again.keys());
    }
}
