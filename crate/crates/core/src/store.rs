//! Compact binary model format (`.tiws`).
//!
//! All multi-byte fields are little-endian.
//!
//! ```text
//! header   magic "TIWS" | version u8 | psi u32 | tree_count u32      13 bytes
//! tree     node_count u32, then node_count records
//! split    kind=1 u8 | feature u16 | threshold f32 | left u32 | right u32   15 bytes
//! leaf     kind=0 u8 | size u32                                             5 bytes
//! ```
//!
//! Thresholds are narrowed to `f32`; nothing else is lossy.

use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::forest::{IForest, ITree, Node};

pub const MAGIC: [u8; 4] = *b"TIWS";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 13;
pub const TREE_HEADER_BYTES: usize = 4;
pub const SPLIT_BYTES: usize = 15;
pub const LEAF_BYTES: usize = 5;

const KIND_LEAF: u8 = 0;
const KIND_SPLIT: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated stream at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("subsample size {0} is below 2")]
    BadSubsampleSize(u32),
    #[error("model has no trees")]
    NoTrees,
    #[error("tree has no nodes")]
    EmptyTree,
    #[error("unknown node kind {kind} at byte {offset}")]
    UnknownNodeKind { kind: u8, offset: usize },
    #[error("node {node} points to child {child}, tree has {len} nodes")]
    ChildOutOfRange { node: usize, child: u32, len: usize },
    #[error("node {node} has a non-finite threshold")]
    NonFiniteThreshold { node: usize },
    #[error("malformed tree: {0}")]
    MalformedTree(String),
}

fn node_bytes(node: &Node) -> usize {
    match node {
        Node::Split { .. } => SPLIT_BYTES,
        Node::Leaf { .. } => LEAF_BYTES,
    }
}

pub fn tree_bytes(tree: &ITree) -> usize {
    TREE_HEADER_BYTES + tree.nodes().iter().map(node_bytes).sum::<usize>()
}

/// Exact blob size, without serializing.
pub fn serialized_size(forest: &IForest) -> usize {
    HEADER_BYTES + forest.trees().iter().map(tree_bytes).sum::<usize>()
}

pub fn serialize(forest: &IForest) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(serialized_size(forest));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(forest.subsample_size() as u32).to_le_bytes());
    out.extend_from_slice(&(forest.n_trees() as u32).to_le_bytes());
    for tree in forest.trees() {
        out.extend_from_slice(&(tree.node_count() as u32).to_le_bytes());
        for node in tree.nodes() {
            match *node {
                Node::Leaf { size } => {
                    out.push(KIND_LEAF);
                    out.extend_from_slice(&size.to_le_bytes());
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let feature =
                        u16::try_from(feature).map_err(|_| Error::FeatureIndexOverflow(feature))?;
                    out.push(KIND_SPLIT);
                    out.extend_from_slice(&feature.to_le_bytes());
                    let threshold =
                        threshold.clamp(f64::from(f32::MIN), f64::from(f32::MAX)) as f32;
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&left.to_le_bytes());
                    out.extend_from_slice(&right.to_le_bytes());
                }
            }
        }
    }
    debug_assert_eq!(out.len(), serialized_size(forest));
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> std::result::Result<[u8; N], FormatError> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(FormatError::Truncated(self.bytes.len()))?;
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(buf)
    }

    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> std::result::Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn deserialize(bytes: &[u8]) -> std::result::Result<IForest, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take::<4>().map_err(|_| FormatError::BadMagic)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let psi = r.u32()?;
    if psi < 2 {
        return Err(FormatError::BadSubsampleSize(psi));
    }
    let tree_count = r.u32()? as usize;
    if tree_count == 0 {
        return Err(FormatError::NoTrees);
    }
    // Every tree needs at least a node count and one leaf.
    if tree_count > r.remaining() / (TREE_HEADER_BYTES + LEAF_BYTES) {
        return Err(FormatError::Truncated(bytes.len()));
    }

    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        let node_count = r.u32()? as usize;
        if node_count > r.remaining() / LEAF_BYTES {
            return Err(FormatError::Truncated(bytes.len()));
        }
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let offset = r.pos;
            let node = match r.u8()? {
                KIND_LEAF => Node::Leaf { size: r.u32()? },
                KIND_SPLIT => Node::Split {
                    feature: r.u16()? as usize,
                    threshold: f64::from(r.f32()?),
                    left: r.u32()?,
                    right: r.u32()?,
                },
                kind => return Err(FormatError::UnknownNodeKind { kind, offset }),
            };
            nodes.push(node);
        }
        trees.push(ITree::from_nodes(nodes)?);
    }
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    Ok(IForest::from_trees(trees, psi as usize, None).expect("checked tree count and psi"))
}

pub fn write_model(forest: &IForest, path: impl AsRef<std::path::Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = serialize(forest)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len())
}

pub fn read_model(path: impl AsRef<std::path::Path>) -> Result<IForest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(deserialize(&bytes)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    pub trees: usize,
    pub subsample_size: usize,
    pub nodes_per_tree: Vec<usize>,
    pub total_nodes: usize,
    pub serialized_bytes: usize,
    /// `t * (2 * psi - 1)`.
    pub node_bound: usize,
}

pub fn memory_report(forest: &IForest) -> MemoryReport {
    let nodes_per_tree: Vec<usize> = forest.trees().iter().map(ITree::node_count).collect();
    MemoryReport {
        trees: forest.n_trees(),
        subsample_size: forest.subsample_size(),
        total_nodes: nodes_per_tree.iter().sum(),
        nodes_per_tree,
        serialized_bytes: serialized_size(forest),
        node_bound: forest.n_trees() * (2 * forest.subsample_size() - 1),
    }
}
