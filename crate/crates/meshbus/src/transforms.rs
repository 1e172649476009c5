//! Shared coordinate frame tree.
//!
//! Wraps [`FrameTree`] for use from many threads and loads static edges
//! from the parameter store:
//!
//! ```yaml
//! transforms:
//!   - parent: /map
//!     child: /base
//!     translation: [1.0, 0.0, 0.0]
//!     rotation: [1.0, 0.0, 0.0, 0.0]   # quaternion w, x, y, z
//!   - parent: /base
//!     child: /lidar
//!     matrix: [1, 0, 0, 0.2,  0, 1, 0, 0,  0, 0, 1, 0.5,  0, 0, 0, 1]
//! ```

use std::sync::RwLock;

use meshbus_core::transform::{FrameTree, RigidError, RigidTransform, TreeError};

use crate::params::{ParamError, ParameterStore, Value};

pub const TRANSFORMS_KEY: &str = "transforms";

#[derive(Debug, thiserror::Error)]
pub enum TransformLoadError {
    #[error("transforms[{index}]: {message}")]
    Entry { index: usize, message: String },
    #[error("transforms[{index}]: {source}")]
    Rigid {
        index: usize,
        #[source]
        source: RigidError,
    },
    #[error("transforms[{index}]: {source}")]
    Tree {
        index: usize,
        #[source]
        source: TreeError,
    },
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Default)]
pub struct TransformTree {
    tree: RwLock<FrameTree>,
}

impl TransformTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_transform(
        &self,
        parent: &str,
        child: &str,
        parent_from_child: RigidTransform,
    ) -> Result<(), TreeError> {
        self.tree
            .write()
            .unwrap()
            .set_transform(parent, child, parent_from_child)
    }

    /// Transform taking coordinates in `src` to coordinates in `dst`.
    pub fn lookup(&self, src: &str, dst: &str) -> Result<RigidTransform, TreeError> {
        self.tree.read().unwrap().lookup(src, dst)
    }

    pub fn detach(&self, frame: &str) -> Result<(), TreeError> {
        self.tree.write().unwrap().detach(frame)
    }

    pub fn contains(&self, frame: &str) -> bool {
        self.tree.read().unwrap().contains(frame)
    }

    pub fn len(&self) -> usize {
        self.tree.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs `f` with the tree read-locked.
    pub fn with_tree<R>(&self, f: impl FnOnce(&FrameTree) -> R) -> R {
        f(&self.tree.read().unwrap())
    }

    /// Adds every edge listed under `transforms`. A missing key adds
    /// nothing. Returns the number of edges added.
    pub fn load_params(&self, params: &ParameterStore) -> Result<usize, TransformLoadError> {
        let entries = match params.get_list(TRANSFORMS_KEY) {
            Ok(list) => list,
            Err(ParamError::NotFound(_)) => return Ok(0),
            Err(e) => return Err(e.into()),
        };
        let mut tree = self.tree.write().unwrap();
        for (index, entry) in entries.iter().enumerate() {
            let entry_err = |message: String| TransformLoadError::Entry { index, message };
            let Value::Map(map) = entry else {
                return Err(entry_err(format!("expected a mapping, found {}", entry.type_name())));
            };
            let name = |key: &str| match map.get(key) {
                Some(Value::Str(s)) => Ok(s.as_str()),
                Some(other) => Err(entry_err(format!("{key} must be a string, found {}", other.type_name()))),
                None => Err(entry_err(format!("{key} is missing"))),
            };
            let (parent, child) = (name("parent")?, name("child")?);
            let transform = if let Some(m) = map.get("matrix") {
                let values: [f64; 16] = numbers(m, 16)
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(|| entry_err("matrix must be a list of 16 numbers".into()))?;
                RigidTransform::from_row_major(&values)
                    .map_err(|source| TransformLoadError::Rigid { index, source })?
            } else {
                let translation: [f64; 3] = match map.get("translation") {
                    None => [0.0; 3],
                    Some(t) => numbers(t, 3)
                        .and_then(|v| v.try_into().ok())
                        .ok_or_else(|| entry_err("translation must be a list of 3 numbers".into()))?,
                };
                let rotation: [f64; 4] = match map.get("rotation") {
                    None => [1.0, 0.0, 0.0, 0.0],
                    Some(q) => numbers(q, 4)
                        .and_then(|v| v.try_into().ok())
                        .ok_or_else(|| entry_err("rotation must be a quaternion [w, x, y, z]".into()))?,
                };
                RigidTransform::from_quaternion(rotation, translation)
                    .map_err(|source| TransformLoadError::Rigid { index, source })?
            };
            tree.set_transform(parent, child, transform)
                .map_err(|source| TransformLoadError::Tree { index, source })?;
        }
        Ok(entries.len())
    }
}

/// Numbers in a list; integers are accepted where floats are expected
/// because matrices are routinely written with `0` and `1`.
fn numbers(value: &Value, len: usize) -> Option<Vec<f64>> {
    let Value::List(items) = value else { return None };
    if items.len() != len {
        return None;
    }
    items
        .iter()
        .map(|v| match v {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_both_forms() {
        let params = ParameterStore::from_yaml_str(
            "transforms:
  - parent: /map
    child: /base
    translation: [1.0, 2.0, 0]
  - parent: /base
    child: /lidar
    matrix: [0, -1, 0, 0.5,  1, 0, 0, 0,  0, 0, 1, 0,  0, 0, 0, 1]
",
        )
        .unwrap();
        let tree = TransformTree::new();
        assert_eq!(tree.load_params(&params).unwrap(), 2);
        let t = tree.lookup("/lidar", "/map").unwrap();
        let p = t.transform_point([1.0, 0.0, 0.0]);
        let want = [1.5, 3.0, 0.0];
        for i in 0..3 {
            assert!((p[i] - want[i]).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn missing_key_adds_nothing() {
        let tree = TransformTree::new();
        assert_eq!(tree.load_params(&ParameterStore::new()).unwrap(), 0);
        assert!(tree.is_empty());
    }

    #[test]
    fn bad_entries_are_reported_by_index() {
        let params = ParameterStore::from_yaml_str(
            "transforms:\n  - {parent: a, child: b}\n  - {parent: a, child: c, matrix: [1, 2]}\n",
        )
        .unwrap();
        let err = TransformTree::new().load_params(&params).unwrap_err();
        assert!(err.to_string().starts_with("transforms[1]"), "{err}");
        let params = ParameterStore::from_yaml_str(
            "transforms:\n  - {parent: a, child: b, matrix: [2,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}\n",
        )
        .unwrap();
        assert!(matches!(
            TransformTree::new().load_params(&params),
            Err(TransformLoadError::Rigid { index: 0, .. })
        ));
    }
}
