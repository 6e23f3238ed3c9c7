//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the analyzer: trees are rebuilt from raw records,
//! and critical work comes from simulating execution on infinitely many
//! processors.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use num_rational::Ratio;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spanprof::dpst::{CausalRegion, SpawnSite};
use spanprof::dpst::{DpstNode, NodeData, NodeId, RegionId, SiteId, WorkSegment};
use spanprof::profile_io::{ProfileHeader, RegionEntry, SiteEntry};

pub type Q = Ratio<u128>;

/// Children lists keyed by id, ordered by child index.
pub struct Oracle {
    pub root: NodeId,
    pub nodes: HashMap<NodeId, DpstNode>,
    pub children: HashMap<NodeId, Vec<NodeId>>,
}

impl Oracle {
    pub fn new(records: &[DpstNode]) -> Oracle {
        let mut nodes = HashMap::new();
        let mut children: HashMap<NodeId, Vec<(u32, NodeId)>> = HashMap::new();
        let mut root = None;
        for r in records {
            nodes.insert(r.id, r.clone());
            match r.parent {
                Some(p) => children.entry(p).or_default().push((r.child_index, r.id)),
                None => root = Some(r.id),
            }
        }
        let children = children
            .into_iter()
            .map(|(k, mut v)| {
                v.sort();
                (k, v.into_iter().map(|(_, id)| id).collect())
            })
            .collect();
        Oracle {
            root: root.expect("records have a root"),
            nodes,
            children,
        }
    }

    pub fn kids(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map_or(&[], |v| v.as_slice())
    }

    /// Completion time of `id` started at `start`, with per-segment weights.
    /// Steps advance the clock, finishes advance it by their duration, asyncs
    /// start at the current clock without advancing it.
    pub fn complete<W: Fn(&WorkSegment) -> Q + Copy>(&self, id: NodeId, start: Q, weight: W) -> Q {
        let node = &self.nodes[&id];
        match &node.data {
            NodeData::Step(segs) => {
                start
                    + segs
                        .iter()
                        .map(weight)
                        .fold(Q::from_integer(0), |a, b| a + b)
            }
            _ => {
                let mut t = start;
                let mut end = start;
                for &c in self.kids(id) {
                    let done = self.complete(c, t, weight);
                    if !matches!(self.nodes[&c].data, NodeData::Async(_)) {
                        t = done;
                    }
                    end = end.max(done);
                }
                end.max(t)
            }
        }
    }

    /// Simulated duration of `id` with raw tick weights.
    pub fn span(&self, id: NodeId) -> u128 {
        let d = self.complete(id, Q::from_integer(0), |s| Q::from_integer(s.ticks as u128));
        assert!(d.is_integer());
        d.to_integer()
    }

    /// Simulated duration of every node, from one simulation of the root.
    /// Durations do not depend on start times, so one pass suffices.
    pub fn durations(&self) -> HashMap<NodeId, u128> {
        let mut out = HashMap::new();
        self.timed(self.root, 0, &mut out);
        out
    }

    fn timed(&self, id: NodeId, start: u128, out: &mut HashMap<NodeId, u128>) -> u128 {
        let end = match &self.nodes[&id].data {
            NodeData::Step(segs) => start + segs.iter().map(|s| s.ticks as u128).sum::<u128>(),
            _ => {
                let (mut t, mut end) = (start, start);
                for &c in self.kids(id) {
                    let done = self.timed(c, t, out);
                    if !matches!(self.nodes[&c].data, NodeData::Async(_)) {
                        t = done;
                    }
                    end = end.max(done);
                }
                end.max(t)
            }
        };
        out.insert(id, end - start);
        end
    }

    pub fn weighted_span<W: Fn(&WorkSegment) -> Q + Copy>(&self, weight: W) -> Q {
        self.complete(self.root, Q::from_integer(0), weight)
    }

    pub fn work(&self, id: NodeId) -> u64 {
        let own: u64 = match &self.nodes[&id].data {
            NodeData::Step(segs) => segs.iter().map(|s| s.ticks).sum(),
            _ => 0,
        };
        own + self.kids(id).iter().map(|&c| self.work(c)).sum::<u64>()
    }

    /// Start and end of every step when only `weighted` steps cost one tick.
    pub fn step_intervals(&self, weighted: &[NodeId]) -> HashMap<NodeId, (u32, u32)> {
        let mut out = HashMap::new();
        self.intervals(self.root, 0, weighted, &mut out);
        out
    }

    fn intervals(
        &self,
        id: NodeId,
        start: u32,
        weighted: &[NodeId],
        out: &mut HashMap<NodeId, (u32, u32)>,
    ) -> u32 {
        if let NodeData::Step(_) = self.nodes[&id].data {
            let end = start + weighted.contains(&id) as u32;
            out.insert(id, (start, end));
            return end;
        }
        let (mut t, mut end) = (start, start);
        for &c in self.kids(id) {
            let done = self.intervals(c, t, weighted, out);
            if !matches!(self.nodes[&c].data, NodeData::Async(_)) {
                t = done;
            }
            end = end.max(done);
        }
        end.max(t)
    }

    /// Per-site (work, critical work) summed over outermost instances: asyncs
    /// of a site with no ancestor async of the same site.
    pub fn outermost_sites(&self) -> BTreeMap<SiteId, (u64, u64)> {
        let mut out = BTreeMap::new();
        let mut stack = vec![(self.root, Vec::<SiteId>::new())];
        while let Some((id, open)) = stack.pop() {
            let mut open = open;
            if let NodeData::Async(site) = self.nodes[&id].data {
                if !open.contains(&site) {
                    let e = out.entry(site).or_insert((0, 0));
                    e.0 += self.work(id);
                    e.1 += self.span(id) as u64;
                }
                open.push(site);
            }
            for &c in self.kids(id) {
                stack.push((c, open.clone()));
            }
        }
        out
    }

    pub fn has_async(&self) -> bool {
        self.nodes
            .values()
            .any(|n| matches!(n.data, NodeData::Async(_)))
    }
}

pub const SITES: u32 = 5;
pub const REGIONS: u32 = 3;

/// Header naming every site and region the generator may use.
pub fn header() -> ProfileHeader {
    let mut h = ProfileHeader::new("logical");
    h.sites = (0..SITES)
        .map(|i| SiteEntry {
            id: SiteId(i),
            site: SpawnSite::new("gen.rs", 10 + i),
        })
        .collect();
    let labels = ["alpha", "beta", "gamma"];
    h.regions = (0..REGIONS)
        .map(|i| RegionEntry {
            id: RegionId(i),
            region: CausalRegion::new(labels[i as usize], "gen.rs", 100 + i),
        })
        .collect();
    h
}

/// Random valid tree with at most `max_nodes` nodes.
pub fn random_tree(seed: u64, max_nodes: usize) -> Vec<DpstNode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![DpstNode {
        id: NodeId(0),
        parent: None,
        child_index: 0,
        data: NodeData::Finish,
    }];
    let budget = rng.gen_range(1..=max_nodes);
    // (node, depth) whose children are still to be generated
    let mut open = vec![(NodeId(0), 0u32)];
    while let Some((parent, depth)) = open.pop() {
        let n_children = if rng.gen_bool(0.9) {
            rng.gen_range(1..=4)
        } else {
            0
        };
        for index in 0..n_children {
            if out.len() >= budget {
                break;
            }
            let id = NodeId(out.len() as u64);
            let roll = rng.gen_range(0..10);
            let data = if depth > 40 || roll < 5 {
                let n = rng.gen_range(1..=3);
                NodeData::Step(
                    (0..n)
                        .map(|_| WorkSegment {
                            region: rng
                                .gen_bool(0.4)
                                .then(|| RegionId(rng.gen_range(0..REGIONS))),
                            ticks: rng.gen_range(0..100),
                        })
                        .collect(),
                )
            } else if roll < 8 {
                NodeData::Async(SiteId(rng.gen_range(0..SITES)))
            } else {
                NodeData::Finish
            };
            if !matches!(data, NodeData::Step(_)) {
                open.push((id, depth + 1));
            }
            out.push(DpstNode {
                id,
                parent: Some(parent),
                child_index: index,
                data,
            });
        }
    }
    out
}

/// A chain where every async of `site` is nested inside the previous one,
/// with a step of `ticks` beside each nested async.
pub fn recursive_chain(depth: u32, site: SiteId, ticks: u64) -> Vec<DpstNode> {
    let mut out = vec![DpstNode {
        id: NodeId(0),
        parent: None,
        child_index: 0,
        data: NodeData::Finish,
    }];
    let mut parent = NodeId(0);
    for level in 0..depth {
        let finish = NodeId(out.len() as u64);
        out.push(DpstNode {
            id: finish,
            parent: Some(parent),
            child_index: if level == 0 { 0 } else { 1 },
            data: NodeData::Finish,
        });
        let a = NodeId(out.len() as u64);
        out.push(DpstNode {
            id: a,
            parent: Some(finish),
            child_index: 0,
            data: NodeData::Async(site),
        });
        out.push(DpstNode {
            id: NodeId(out.len() as u64),
            parent: Some(finish),
            child_index: 1,
            data: NodeData::Step(vec![WorkSegment::untagged(ticks * (level as u64 + 1))]),
        });
        out.push(DpstNode {
            id: NodeId(out.len() as u64),
            parent: Some(a),
            child_index: 0,
            data: NodeData::Step(vec![WorkSegment::untagged(ticks)]),
        });
        parent = a;
    }
    out
}

pub fn step_ids(records: &[DpstNode]) -> Vec<NodeId> {
    records
        .iter()
        .filter(|r| matches!(r.data, NodeData::Step(_)))
        .map(|r| r.id)
        .collect()
}
