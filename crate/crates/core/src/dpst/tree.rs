use std::collections::HashMap;

use thiserror::Error;

use super::{DpstError, DpstNode, NodeData, NodeId, NodeKind, SiteId, WorkSegment};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("no root node")]
    NoRoot,
    #[error("multiple root nodes: {0} and {1}")]
    MultipleRoots(NodeId, NodeId),
    #[error("root {0} is a {1} node, expected finish")]
    RootNotFinish(NodeId, NodeKind),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {node} refers to missing parent {parent}")]
    Orphan { node: NodeId, parent: NodeId },
    #[error("step node {0} has children")]
    StepWithChildren(NodeId),
    #[error("children of {parent} have child_index {index} repeated or out of range")]
    ChildIndexGap { parent: NodeId, index: u32 },
    #[error("{0} node(s) unreachable from the root")]
    Unreachable(usize),
}

/// A node of a reconstructed tree. `children` holds arena indices ordered
/// left to right.
#[derive(Clone, Debug)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<usize>,
    pub child_index: u32,
    pub data: NodeData,
    pub children: Vec<usize>,
    pub depth: u32,
}

impl TreeNode {
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
            NodeData::Step(s) => s,
            _ => &[],
        }
    }
}

/// Immutable DPST with nodes stored in an arena.
#[derive(Clone, Debug)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    index: HashMap<NodeId, usize>,
    root: usize,
    /// Arena indices in post-order (children before parents).
    postorder: Vec<usize>,
}

impl Tree {
    /// Builds a tree from completed nodes in any order.
    pub fn from_nodes<I>(records: I) -> Result<Tree, TreeError>
    where
        I: IntoIterator<Item = DpstNode>,
    {
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut index: HashMap<NodeId, usize> = HashMap::new();
        let mut parents: Vec<Option<NodeId>> = Vec::new();
        for rec in records {
            if index.insert(rec.id, nodes.len()).is_some() {
                return Err(TreeError::DuplicateNode(rec.id));
            }
            parents.push(rec.parent);
            nodes.push(TreeNode {
                id: rec.id,
                parent: None,
                child_index: rec.child_index,
                data: rec.data,
                children: Vec::new(),
                depth: 0,
            });
        }

        let mut root: Option<usize> = None;
        for (i, parent) in parents.iter().enumerate() {
            match parent {
                None => {
                    if let Some(r) = root {
                        let (a, b) = order(nodes[r].id, nodes[i].id);
                        return Err(TreeError::MultipleRoots(a, b));
                    }
                    root = Some(i);
                }
                Some(p) => {
                    let &pi = index.get(p).ok_or(TreeError::Orphan {
                        node: nodes[i].id,
                        parent: *p,
                    })?;
                    nodes[i].parent = Some(pi);
                    nodes[pi].children.push(i);
                }
            }
        }
        let root = root.ok_or(TreeError::NoRoot)?;
        if nodes[root].kind() != NodeKind::Finish {
            return Err(TreeError::RootNotFinish(nodes[root].id, nodes[root].kind()));
        }

        for i in 0..nodes.len() {
            if nodes[i].children.is_empty() {
                continue;
            }
            if nodes[i].kind() == NodeKind::Step {
                return Err(TreeError::StepWithChildren(nodes[i].id));
            }
            let mut children = std::mem::take(&mut nodes[i].children);
            children.sort_by_key(|&c| nodes[c].child_index);
            for (expected, &c) in children.iter().enumerate() {
                if nodes[c].child_index as usize != expected {
                    return Err(TreeError::ChildIndexGap {
                        parent: nodes[i].id,
                        index: nodes[c].child_index,
                    });
                }
            }
            nodes[i].children = children;
        }

        // Iterative DFS: assigns depths, detects cycles detached from the root
        // and records post-order.
        let mut postorder = Vec::with_capacity(nodes.len());
        let mut stack = vec![(root, 0usize)];
        while let Some(&mut (n, ref mut next)) = stack.last_mut() {
            if *next < nodes[n].children.len() {
                let c = nodes[n].children[*next];
                *next += 1;
                nodes[c].depth = nodes[n].depth + 1;
                stack.push((c, 0));
            } else {
                postorder.push(n);
                stack.pop();
            }
        }
        if postorder.len() != nodes.len() {
            return Err(TreeError::Unreachable(nodes.len() - postorder.len()));
        }

        Ok(Tree {
            nodes,
            index,
            root,
            postorder,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, idx: usize) -> &TreeNode {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Arena indices with every child before its parent.
    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    /// Arena indices in pre-order, children visited left to right.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind() == kind).count()
    }

    /// True iff the two step nodes can execute concurrently: the child of
    /// their lowest common ancestor that leads to the left node is an async.
    pub fn may_happen_in_parallel(&self, s1: NodeId, s2: NodeId) -> Result<bool, DpstError> {
        let a = self.index_of(s1).ok_or(DpstError::UnknownNode(s1))?;
        let b = self.index_of(s2).ok_or(DpstError::UnknownNode(s2))?;
        for (i, id) in [(a, s1), (b, s2)] {
            if self.nodes[i].kind() != NodeKind::Step {
                return Err(DpstError::NotAStep(id));
            }
        }
        if a == b {
            return Ok(false);
        }

        // Walk both nodes up to equal depth, then in lockstep until the
        // parents coincide. `x` and `y` end as the LCA's children on each path.
        let (mut x, mut y) = (a, b);
        while self.nodes[x].depth > self.nodes[y].depth {
            x = self.nodes[x].parent.expect("non-root has parent");
        }
        while self.nodes[y].depth > self.nodes[x].depth {
            y = self.nodes[y].parent.expect("non-root has parent");
        }
        // Steps are leaves, so neither can be an ancestor of the other.
        debug_assert_ne!(x, y);
        while self.nodes[x].parent != self.nodes[y].parent {
            x = self.nodes[x].parent.expect("non-root has parent");
            y = self.nodes[y].parent.expect("non-root has parent");
        }
        let left = if self.nodes[x].child_index < self.nodes[y].child_index {
            x
        } else {
            y
        };
        Ok(self.nodes[left].kind() == NodeKind::Async)
    }

    /// Checks the structural invariants every constructed tree must satisfy.
    pub fn check_invariants(&self) -> Result<(), String> {
        for n in &self.nodes {
            match (&n.data, n.children.is_empty()) {
                (NodeData::Step(segs), _) if segs.is_empty() => {
                    return Err(format!("step {} has no segments", n.id));
                }
                (NodeData::Step(_), false) => {
                    return Err(format!("step {} is internal", n.id));
                }
                _ => {}
            }
        }
        // Subtrees of async siblings are disjoint: every node has exactly one
        // path to the root, so each node is visited once by a pre-order walk.
        let pre = self.preorder();
        let mut seen = vec![false; self.nodes.len()];
        for i in pre {
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("node {} reachable twice", self.nodes[i].id));
            }
        }
        Ok(())
    }
}

fn order(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
