//! Dynamic program structure tree.
//!
//! A DPST records the series-parallel structure of one fork-join execution.
//! Leaves are *step* nodes holding measured work. Internal nodes are either
//! *async* nodes (a spawned task) or *finish* nodes (a group of spawns joined
//! by one sync). Siblings are ordered left to right in the order their parent
//! task executed them.
//!
//! The [`DpstBuilder`] constructs the tree incrementally and streams each node
//! to a [`NodeSink`] the moment it is complete, so only the open scopes of live
//! tasks are ever resident. [`Tree`] is the immutable, fully reconstructed form
//! used for offline queries.

mod tree;

pub use tree::{Tree, TreeError, TreeNode};

use std::borrow::Cow;
use std::fmt;

use thiserror::Error;

/// Unique identifier of a DPST node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Index into the spawn-site table of a profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteId(pub u32);

/// Index into the causal-region table of a profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Step,
    Async,
    Finish,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Step => "step",
            NodeKind::Async => "async",
            NodeKind::Finish => "finish",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A measured slice of a step node's work.
///
/// `region` is `None` for work outside every causal region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WorkSegment {
    pub region: Option<RegionId>,
    pub ticks: u64,
}

impl WorkSegment {
    pub fn untagged(ticks: u64) -> Self {
        WorkSegment {
            region: None,
            ticks,
        }
    }

    pub fn tagged(region: RegionId, ticks: u64) -> Self {
        WorkSegment {
            region: Some(region),
            ticks,
        }
    }
}

/// Source location of a spawn call.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpawnSite {
    pub file: Cow<'static, str>,
    pub line: u32,
    pub label: Option<Cow<'static, str>>,
}

impl SpawnSite {
    pub const fn new(file: &'static str, line: u32) -> Self {
        SpawnSite {
            file: Cow::Borrowed(file),
            line,
            label: None,
        }
    }

    pub const fn labeled(file: &'static str, line: u32, label: &'static str) -> Self {
        SpawnSite {
            file: Cow::Borrowed(file),
            line,
            label: Some(Cow::Borrowed(label)),
        }
    }

    /// The caller's source location.
    #[track_caller]
    pub fn here() -> Self {
        let loc = std::panic::Location::caller();
        SpawnSite::new(loc.file(), loc.line())
    }
}

impl fmt::Display for SpawnSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)?;
        if let Some(label) = &self.label {
            write!(f, " ({label})")?;
        }
        Ok(())
    }
}

/// A user-annotated code region for causal what-if analysis.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CausalRegion {
    pub label: Cow<'static, str>,
    pub file: Cow<'static, str>,
    pub line: u32,
}

impl CausalRegion {
    pub const fn new(label: &'static str, file: &'static str, line: u32) -> Self {
        CausalRegion {
            label: Cow::Borrowed(label),
            file: Cow::Borrowed(file),
            line,
        }
    }
}

impl fmt::Display for CausalRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}:{})", self.label, self.file, self.line)
    }
}

/// Kind-specific payload. Only steps carry work and only asyncs carry a site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeData {
    Step(Vec<WorkSegment>),
    Async(SiteId),
    Finish,
}

/// One node of the tree, complete with its position among its siblings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DpstNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub child_index: u32,
    pub data: NodeData,
}

impl DpstNode {
    pub fn kind(&self) -> NodeKind {
        match self.data {
            NodeData::Step(_) => NodeKind::Step,
            NodeData::Async(_) => NodeKind::Async,
            NodeData::Finish => NodeKind::Finish,
        }
    }

    pub fn spawn_site(&self) -> Option<SiteId> {
        match self.data {
            NodeData::Async(site) => Some(site),
            _ => None,
        }
    }

    pub fn segments(&self) -> &[WorkSegment] {
        match &self.data {
            NodeData::Step(segments) => segments,
            _ => &[],
        }
    }

    /// Sum of the node's own segment ticks (zero for non-step nodes).
    pub fn work(&self) -> u64 {
        self.segments().iter().map(|s| s.ticks).sum()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DpstError {
    #[error("a root node already exists in this builder")]
    RootAlreadyExists,
    #[error("sync without an open finish scope")]
    NoOpenFinish,
    #[error("step node must have at least one work segment")]
    EmptySegments,
    #[error("task ended with finish scope {0} still open")]
    FinishStillOpen(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a step node")]
    NotAStep(NodeId),
}

/// Destination for completed nodes.
pub trait NodeSink {
    fn emit(&mut self, node: DpstNode);
}

impl NodeSink for Vec<DpstNode> {
    fn emit(&mut self, node: DpstNode) {
        self.push(node);
    }
}

impl<S: NodeSink + ?Sized> NodeSink for &mut S {
    fn emit(&mut self, node: DpstNode) {
        (**self).emit(node)
    }
}

/// Strided id allocator. Allocator `k` of `n` hands out `k, k + n, k + 2n, ...`
/// so several threads can allocate without coordination.
#[derive(Clone, Debug)]
pub struct IdBlock {
    next: u64,
    stride: u64,
}

impl IdBlock {
    pub fn new(offset: u64, stride: u64) -> Self {
        assert!(stride > 0 && offset < stride, "offset must be below stride");
        IdBlock {
            next: offset,
            stride,
        }
    }

    pub fn sequential() -> Self {
        IdBlock::new(0, 1)
    }

    pub fn alloc(&mut self) -> NodeId {
        let id = self.next;
        self.next += self.stride;
        NodeId(id)
    }
}

#[derive(Clone, Debug)]
struct OpenNode {
    id: NodeId,
    next_child: u32,
}

impl OpenNode {
    fn new(id: NodeId) -> Self {
        OpenNode { id, next_child: 0 }
    }

    fn next_index(&mut self) -> u32 {
        let i = self.next_child;
        self.next_child += 1;
        i
    }
}

/// A task's attachment point in the tree.
///
/// `base` is the root (for the program entry task) or the task's own async
/// node. `finish` is the finish node opened by the task's first spawn since
/// its start or last sync.
#[derive(Debug)]
pub struct TaskScope {
    base: OpenNode,
    finish: Option<(OpenNode, DpstNode)>,
    /// Record for the task's own node, emitted when the task ends.
    own: DpstNode,
}

impl TaskScope {
    /// Node that new children of this task attach to.
    pub fn current(&self) -> NodeId {
        match &self.finish {
            Some((f, _)) => f.id,
            None => self.base.id,
        }
    }

    pub fn base(&self) -> NodeId {
        self.base.id
    }

    pub fn open_finish(&self) -> Option<NodeId> {
        self.finish.as_ref().map(|(f, _)| f.id)
    }

    fn current_mut(&mut self) -> &mut OpenNode {
        match &mut self.finish {
            Some((f, _)) => f,
            None => &mut self.base,
        }
    }
}

/// Result of registering a spawn.
#[derive(Debug)]
pub struct SpawnNodes {
    /// New finish node, if this was the first spawn since start or last sync.
    pub finish: Option<NodeId>,
    pub async_id: NodeId,
    /// Scope for the spawned task, rooted at the new async node.
    pub child: TaskScope,
}

/// Incremental tree construction over a node sink.
///
/// Each thread owns one builder; a [`TaskScope`] may move between builders
/// (the spawning thread creates it, the executing thread finishes it).
pub struct DpstBuilder<S> {
    ids: IdBlock,
    sink: S,
    root: Option<NodeId>,
}

impl<S: NodeSink> DpstBuilder<S> {
    pub fn new(ids: IdBlock, sink: S) -> Self {
        DpstBuilder {
            ids,
            sink,
            root: None,
        }
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn sink_mut(&mut self) -> &mut S {
        &mut self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    /// Creates the root finish node and returns the program entry scope.
    pub fn open_root(&mut self) -> Result<TaskScope, DpstError> {
        if self.root.is_some() {
            return Err(DpstError::RootAlreadyExists);
        }
        let id = self.ids.alloc();
        self.root = Some(id);
        Ok(TaskScope {
            base: OpenNode::new(id),
            finish: None,
            own: DpstNode {
                id,
                parent: None,
                child_index: 0,
                data: NodeData::Finish,
            },
        })
    }

    pub fn on_spawn(&mut self, scope: &mut TaskScope, site: SiteId) -> SpawnNodes {
        let mut new_finish = None;
        if scope.finish.is_none() {
            let id = self.ids.alloc();
            let index = scope.base.next_index();
            let node = DpstNode {
                id,
                parent: Some(scope.base.id),
                child_index: index,
                data: NodeData::Finish,
            };
            scope.finish = Some((OpenNode::new(id), node));
            new_finish = Some(id);
        }
        let parent = scope.current();
        let index = scope.current_mut().next_index();
        let async_id = self.ids.alloc();
        let own = DpstNode {
            id: async_id,
            parent: Some(parent),
            child_index: index,
            data: NodeData::Async(site),
        };
        SpawnNodes {
            finish: new_finish,
            async_id,
            child: TaskScope {
                base: OpenNode::new(async_id),
                finish: None,
                own,
            },
        }
    }

    /// Closes the open finish scope and emits it. Returns the finish id.
    pub fn on_sync(&mut self, scope: &mut TaskScope) -> Result<NodeId, DpstError> {
        let (open, node) = scope.finish.take().ok_or(DpstError::NoOpenFinish)?;
        self.sink.emit(node);
        Ok(open.id)
    }

    pub fn on_step(
        &mut self,
        scope: &mut TaskScope,
        segments: Vec<WorkSegment>,
    ) -> Result<NodeId, DpstError> {
        if segments.is_empty() {
            return Err(DpstError::EmptySegments);
        }
        let id = self.ids.alloc();
        let parent = scope.current();
        let child_index = scope.current_mut().next_index();
        self.sink.emit(DpstNode {
            id,
            parent: Some(parent),
            child_index,
            data: NodeData::Step(segments),
        });
        Ok(id)
    }

    /// Emits the task's own node (async, or the root finish for the entry
    /// task). The task must have synced all of its spawns.
    pub fn on_task_end(&mut self, scope: TaskScope) -> Result<NodeId, DpstError> {
        if let Some((open, _)) = &scope.finish {
            return Err(DpstError::FinishStillOpen(open.id));
        }
        let id = scope.own.id;
        self.sink.emit(scope.own);
        Ok(id)
    }
}
