//! Rigid transforms and the coordinate frame tree.
//!
//! Every edge stores `T_parent_child`, the matrix mapping point coordinates
//! in the child frame to coordinates in the parent frame
//! (`p_parent = T * p_child`). A query between two frames walks both parent
//! chains up to their lowest common ancestor and combines the two chain
//! products:
//!
//! ```text
//! T_dst_src = inverse(chain(dst -> anc)) * chain(src -> anc)
//! ```

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Mul;

use crate::name::{FrameId, NameError};

pub type Matrix4 = [[f64; 4]; 4];

/// Tolerance for the orthonormality and determinant checks.
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// Chains longer than this are re-orthonormalized to bound rounding drift.
pub const RENORMALIZE_EVERY: usize = 32;

/// Homogeneous 4×4 matrix with an orthonormal, right-handed rotation block
/// and bottom row `[0, 0, 0, 1]`.
#[derive(Clone, Copy, PartialEq)]
pub struct RigidTransform {
    m: Matrix4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigidError {
    NotOrthonormal,
    NotRightHanded,
    BadBottomRow,
    NonFinite,
}

impl fmt::Display for RigidError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RigidError::NotOrthonormal => "rotation block is not orthonormal",
            RigidError::NotRightHanded => "rotation block has determinant -1",
            RigidError::BadBottomRow => "bottom row is not [0, 0, 0, 1]",
            RigidError::NonFinite => "matrix has a non-finite entry",
        })
    }
}

impl core::error::Error for RigidError {}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Validates `m` against the rigid-transform invariants.
    pub fn from_matrix(m: Matrix4) -> Result<Self, RigidError> {
        let t = Self { m };
        t.check(RIGID_TOLERANCE)?;
        Ok(t)
    }

    /// Sixteen entries in row-major order.
    pub fn from_row_major(values: &[f64; 16]) -> Result<Self, RigidError> {
        let mut m = [[0.0; 4]; 4];
        for (i, v) in values.iter().enumerate() {
            m[i / 4][i % 4] = *v;
        }
        Self::from_matrix(m)
    }

    pub fn from_rotation_translation(
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    ) -> Result<Self, RigidError> {
        Self::from_matrix(assemble(rotation, translation))
    }

    /// Builds a transform from a quaternion `(w, x, y, z)`, which is
    /// normalized first, and a translation.
    pub fn from_quaternion(q: [f64; 4], translation: [f64; 3]) -> Result<Self, RigidError> {
        let n = libm::sqrt(q.iter().map(|c| c * c).sum::<f64>());
        if !n.is_finite() || n == 0.0 {
            return Err(RigidError::NonFinite);
        }
        let [w, x, y, z] = q.map(|c| c / n);
        let rotation = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        Self::from_rotation_translation(rotation, translation)
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Self {
            m: assemble(rotation_of(&Self::IDENTITY.m), translation),
        }
    }

    pub fn matrix(&self) -> &Matrix4 {
        &self.m
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        rotation_of(&self.m)
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// Row-major copy of the 16 entries.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.m[i / 4][i % 4];
        }
        out
    }

    /// Closed-form inverse: `[Rᵀ, -Rᵀ t]`.
    pub fn inverse(&self) -> Self {
        let r = self.rotation();
        let t = self.translation();
        let mut rt = [[0.0; 3]; 3];
        for (i, row) in rt.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[j][i];
            }
        }
        let mut ti = [0.0; 3];
        for (i, v) in ti.iter_mut().enumerate() {
            *v = -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]);
        }
        Self { m: assemble(rt, ti) }
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        let mut out = [0.0; 3];
        for (i, v) in out.iter_mut().enumerate() {
            *v = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
        }
        out
    }

    /// Re-projects the rotation block onto SO(3) by Gram-Schmidt over its
    /// columns. The third column is rebuilt as a cross product so the result
    /// is right-handed.
    pub fn orthonormalized(&self) -> Self {
        let r = self.rotation();
        let col = |j: usize| [r[0][j], r[1][j], r[2][j]];
        let c0 = normalize(col(0));
        let c1 = col(1);
        let d = dot(c0, c1);
        let c1 = normalize([c1[0] - d * c0[0], c1[1] - d * c0[1], c1[2] - d * c0[2]]);
        let c2 = cross(c0, c1);
        let mut rot = [[0.0; 3]; 3];
        for i in 0..3 {
            rot[i] = [c0[i], c1[i], c2[i]];
        }
        Self {
            m: assemble(rot, self.translation()),
        }
    }

    /// Checks the invariants with tolerance `tol`.
    pub fn check(&self, tol: f64) -> Result<(), RigidError> {
        let m = &self.m;
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RigidError::NonFinite);
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(RigidError::BadBottomRow);
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if libm::fabs(rtr - expected) > tol {
                    return Err(RigidError::NotOrthonormal);
                }
            }
        }
        if libm::fabs(det3(&r) - 1.0) > tol {
            return Err(RigidError::NotRightHanded);
        }
        Ok(())
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        let sum: f64 = self
            .m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        libm::sqrt(sum)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: Self) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate().take(3) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
            }
        }
        m[3] = [0.0, 0.0, 0.0, 1.0];
        RigidTransform { m }
    }
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.m.iter()).finish()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

fn rotation_of(m: &Matrix4) -> [[f64; 3]; 3] {
    [
        [m[0][0], m[0][1], m[0][2]],
        [m[1][0], m[1][1], m[1][2]],
        [m[2][0], m[2][1], m[2][2]],
    ]
}

fn assemble(r: [[f64; 3]; 3], t: [f64; 3]) -> Matrix4 {
    [
        [r[0][0], r[0][1], r[0][2], t[0]],
        [r[1][0], r[1][1], r[1][2], t[1]],
        [r[2][0], r[2][1], r[2][2], t[2]],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = libm::sqrt(dot(v, v));
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeError {
    InvalidName(NameError),
    UnknownFrame(String),
    /// The two frames have no common ancestor.
    DisconnectedFrames(String, String),
    /// Adding `parent -> child` would close a cycle.
    Cycle { parent: String, child: String },
    /// `child` already hangs under `existing`; detach it first.
    Reparent { child: String, existing: String },
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::InvalidName(e) => write!(f, "invalid frame name: {e}"),
            TreeError::UnknownFrame(name) => write!(f, "unknown frame {name}"),
            TreeError::DisconnectedFrames(a, b) => {
                write!(f, "frames {a} and {b} have no common ancestor")
            }
            TreeError::Cycle { parent, child } => {
                write!(f, "{child} is an ancestor of {parent}; edge would form a cycle")
            }
            TreeError::Reparent { child, existing } => {
                write!(f, "{child} already has parent {existing}; detach it first")
            }
        }
    }
}

impl core::error::Error for TreeError {}

impl From<NameError> for TreeError {
    fn from(e: NameError) -> Self {
        TreeError::InvalidName(e)
    }
}

#[derive(Debug, Clone)]
struct FrameNode {
    parent: Option<FrameId>,
    to_parent: RigidTransform,
}

/// Forest of named frames. Queries between frames in different trees fail
/// with [`TreeError::DisconnectedFrames`].
#[derive(Debug, Clone, Default)]
pub struct FrameTree {
    nodes: BTreeMap<FrameId, FrameNode>,
}

impl FrameTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, frame: &str) -> bool {
        self.nodes.contains_key(frame)
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameId> {
        self.nodes.keys()
    }

    pub fn parent(&self, frame: &str) -> Result<Option<&FrameId>, TreeError> {
        Ok(self.node(frame)?.parent.as_ref())
    }

    /// Stored `T_parent_child` for `frame`, identity for roots.
    pub fn edge(&self, frame: &str) -> Result<RigidTransform, TreeError> {
        Ok(self.node(frame)?.to_parent)
    }

    fn node(&self, frame: &str) -> Result<&FrameNode, TreeError> {
        self.nodes
            .get(frame)
            .ok_or_else(|| TreeError::UnknownFrame(frame.to_string()))
    }

    /// Stores or updates the edge `parent -> child`. Missing frames are
    /// created as roots.
    pub fn set_transform(
        &mut self,
        parent: &str,
        child: &str,
        parent_from_child: RigidTransform,
    ) -> Result<(), TreeError> {
        let parent_id = FrameId::new(parent)?;
        let child_id = FrameId::new(child)?;
        if parent == child || self.is_ancestor(child, parent) {
            return Err(TreeError::Cycle {
                parent: parent.to_string(),
                child: child.to_string(),
            });
        }
        if let Some(node) = self.nodes.get(child) {
            if let Some(existing) = &node.parent {
                if existing.as_str() != parent {
                    return Err(TreeError::Reparent {
                        child: child.to_string(),
                        existing: existing.to_string(),
                    });
                }
            }
        }
        self.nodes.entry(parent_id.clone()).or_insert(FrameNode {
            parent: None,
            to_parent: RigidTransform::IDENTITY,
        });
        self.nodes.insert(
            child_id,
            FrameNode {
                parent: Some(parent_id),
                to_parent: parent_from_child,
            },
        );
        Ok(())
    }

    /// Makes `frame` a root, keeping its subtree.
    pub fn detach(&mut self, frame: &str) -> Result<(), TreeError> {
        let node = self
            .nodes
            .get_mut(frame)
            .ok_or_else(|| TreeError::UnknownFrame(frame.to_string()))?;
        node.parent = None;
        node.to_parent = RigidTransform::IDENTITY;
        Ok(())
    }

    /// True when `ancestor` lies on the parent chain of `frame` (a frame is
    /// its own ancestor).
    fn is_ancestor(&self, ancestor: &str, frame: &str) -> bool {
        let mut cur = match self.nodes.get_key_value(frame) {
            Some((id, _)) => id,
            None => return false,
        };
        loop {
            if cur.as_str() == ancestor {
                return true;
            }
            match &self.nodes[cur].parent {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    /// Frames from `frame` up to and including its root.
    fn root_path(&self, frame: &str) -> Result<Vec<&FrameId>, TreeError> {
        let (mut cur, _) = self
            .nodes
            .get_key_value(frame)
            .ok_or_else(|| TreeError::UnknownFrame(frame.to_string()))?;
        let mut path = Vec::new();
        loop {
            path.push(cur);
            match &self.nodes[cur].parent {
                Some(p) => cur = p,
                None => return Ok(path),
            }
        }
    }

    /// Deepest frame that lies on both root paths.
    pub fn lowest_common_ancestor(&self, a: &str, b: &str) -> Result<FrameId, TreeError> {
        let pa = self.root_path(a)?;
        let pb = self.root_path(b)?;
        // Align from the root end; the last shared entry is the LCA.
        let mut lca = None;
        for (x, y) in pa.iter().rev().zip(pb.iter().rev()) {
            if x == y {
                lca = Some(*x);
            } else {
                break;
            }
        }
        lca.cloned()
            .ok_or_else(|| TreeError::DisconnectedFrames(a.to_string(), b.to_string()))
    }

    /// `T_anc_frame`: product of edge matrices from `frame` up to `anc`.
    fn chain_to(&self, frame: &str, anc: &FrameId) -> RigidTransform {
        let mut acc = RigidTransform::IDENTITY;
        let mut cur = frame;
        let mut steps = 0;
        while cur != anc.as_str() {
            let node = &self.nodes[cur];
            acc = node.to_parent * acc;
            steps += 1;
            if steps % RENORMALIZE_EVERY == 0 {
                acc = acc.orthonormalized();
            }
            cur = node
                .parent
                .as_ref()
                .expect("ancestor lies on the parent chain")
                .as_str();
        }
        acc
    }

    /// `T_dst_src`, mapping coordinates in `src` to coordinates in `dst`.
    pub fn lookup(&self, src: &str, dst: &str) -> Result<RigidTransform, TreeError> {
        let anc = self.lowest_common_ancestor(src, dst)?;
        let anc_from_src = self.chain_to(src, &anc);
        let anc_from_dst = self.chain_to(dst, &anc);
        Ok(anc_from_dst.inverse() * anc_from_src)
    }
}
