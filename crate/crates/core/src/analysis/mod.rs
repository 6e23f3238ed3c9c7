//! Offline analysis of a profile: tree reconstruction, the bottom-up
//! work/critical-work pass, per-spawn-site aggregation and the parallelism
//! report.

mod render;

pub use render::{render_profile, ParallelismProfile, ProfileRow, RowSite};

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::dpst::{NodeKind, SiteId, Tree, TreeError};
use crate::profile_io::{ProfileError, ProfileHeader, ProfileRecord};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("corrupt profile file: {0}")]
    Tree(#[from] TreeError),
    #[error("program has zero critical work; nothing to report")]
    ZeroSpan,
}

/// Per-node results of [`compute_work_span`].
///
/// `ss_list` maps each spawn site on the node's critical path to the part of
/// the critical work performed exclusively by that site.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeMetrics {
    pub work: u64,
    pub c_work: u64,
    pub e_work: u64,
    pub ss_list: BTreeMap<SiteId, u64>,
}

impl NodeMetrics {
    pub fn ss_total(&self) -> u64 {
        self.ss_list.values().sum()
    }
}

/// Aggregated totals for one spawn site.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SiteAggregate {
    pub work: u64,
    pub c_work: u64,
}

/// Rebuilds the tree from validated records. Record order is irrelevant.
pub fn reconstruct(
    _header: &ProfileHeader,
    records: impl IntoIterator<Item = ProfileRecord>,
) -> Result<Tree, AnalysisError> {
    Ok(Tree::from_nodes(records)?)
}

fn union_into(dst: &mut BTreeMap<SiteId, u64>, src: &BTreeMap<SiteId, u64>) {
    for (&site, &ticks) in src {
        *dst.entry(site).or_insert(0) += ticks;
    }
}

/// Bottom-up work / critical work / exclusive work / critical spawn sites for
/// every node, indexed by arena index.
///
/// For an intermediate node N the critical work starts as the serial sum of
/// its step children and the critical work of its finish children. Each async
/// child A then competes with `llw(A) + c_work(A)`, where `llw(A)` is the
/// serial work of the step and finish siblings to A's left; a strictly larger
/// value replaces N's critical work, exclusive work and site list.
pub fn compute_work_span(tree: &Tree) -> Vec<NodeMetrics> {
    let mut m: Vec<NodeMetrics> = vec![NodeMetrics::default(); tree.len()];
    for &n in tree.postorder() {
        let node = tree.node(n);
        if node.kind() == NodeKind::Step {
            let w: u64 = node.segments().iter().map(|s| s.ticks).sum();
            m[n] = NodeMetrics {
                work: w,
                c_work: w,
                e_work: w,
                ss_list: BTreeMap::new(),
            };
            continue;
        }

        let mut out = NodeMetrics::default();
        for &c in &node.children {
            out.work += m[c].work;
            match tree.node(c).kind() {
                NodeKind::Step => {
                    out.c_work += m[c].work;
                    out.e_work += m[c].work;
                }
                NodeKind::Finish => {
                    out.c_work += m[c].c_work;
                    out.e_work += m[c].e_work;
                    union_into(&mut out.ss_list, &m[c].ss_list);
                }
                NodeKind::Async => {}
            }
        }

        // Running sums over the step and finish siblings left of the cursor.
        let mut left_serial = 0u64;
        let mut left_exclusive = 0u64;
        let mut left_sites: BTreeMap<SiteId, u64> = BTreeMap::new();
        for &c in &node.children {
            match tree.node(c).kind() {
                NodeKind::Step => {
                    left_serial += m[c].work;
                    left_exclusive += m[c].work;
                }
                NodeKind::Finish => {
                    left_serial += m[c].c_work;
                    left_exclusive += m[c].e_work;
                    union_into(&mut left_sites, &m[c].ss_list);
                }
                NodeKind::Async => {
                    let candidate = left_serial + m[c].c_work;
                    if candidate > out.c_work {
                        out.c_work = candidate;
                        out.e_work = left_exclusive;
                        let mut sites = left_sites.clone();
                        union_into(&mut sites, &m[c].ss_list);
                        out.ss_list = sites;
                    }
                }
            }
        }

        if let Some(site) = node.spawn_site() {
            *out.ss_list.entry(site).or_insert(0) += out.e_work;
        }
        m[n] = out;
    }
    m
}

/// For every async node, the nearest proper ancestor async with the same site.
fn nearest_same_site_ancestor(tree: &Tree) -> Vec<Option<usize>> {
    let mut nearest = vec![None; tree.len()];
    let mut open: HashMap<SiteId, Vec<usize>> = HashMap::new();
    // (node, entered) pairs; a node is pushed twice, once to enter, once to leave.
    let mut stack = vec![(tree.root(), false)];
    while let Some((n, leaving)) = stack.pop() {
        let site = tree.node(n).spawn_site();
        if leaving {
            if let Some(s) = site {
                open.get_mut(&s).and_then(|v| v.pop());
            }
            continue;
        }
        if let Some(s) = site {
            let chain = open.entry(s).or_default();
            nearest[n] = chain.last().copied();
            chain.push(n);
        }
        stack.push((n, true));
        for &c in tree.node(n).children.iter().rev() {
            stack.push((c, false));
        }
    }
    nearest
}

/// Sums `(work, c_work)` of the async nodes of each spawn site without double
/// counting recursion: when an async node is reached bottom-up, the totals of
/// its nearest same-site descendants are subtracted before its own totals are
/// added, so each site ends up with the sum over its outermost instances.
pub fn aggregate_sites(tree: &Tree, metrics: &[NodeMetrics]) -> BTreeMap<SiteId, SiteAggregate> {
    let nearest = nearest_same_site_ancestor(tree);
    let mut nested: Vec<Vec<usize>> = vec![Vec::new(); tree.len()];
    for (n, anc) in nearest.iter().enumerate() {
        if let Some(a) = anc {
            nested[*a].push(n);
        }
    }

    let mut out: BTreeMap<SiteId, SiteAggregate> = BTreeMap::new();
    for &n in tree.postorder() {
        let Some(site) = tree.node(n).spawn_site() else {
            continue;
        };
        let entry = out.entry(site).or_default();
        for &d in &nested[n] {
            entry.work -= metrics[d].work;
            entry.c_work -= metrics[d].c_work;
        }
        entry.work += metrics[n].work;
        entry.c_work += metrics[n].c_work;
    }
    out
}

/// Reconstruct, compute and render in one go.
pub fn analyze(
    header: &ProfileHeader,
    records: Vec<ProfileRecord>,
) -> Result<ParallelismProfile, AnalysisError> {
    let tree = reconstruct(header, records)?;
    let metrics = compute_work_span(&tree);
    let sites = aggregate_sites(&tree, &metrics);
    render_profile(header, &metrics[tree.root()], &sites)
}
