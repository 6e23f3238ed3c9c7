//! Built-in demo programs.
//!
//! Every cost is charged through [`TaskContext::work`], so under the logical
//! backend each workload's tree and analysis are machine independent.

use std::sync::Arc;

use crate::dpst::{CausalRegion, SpawnSite};
use crate::runtime::TaskContext;
use crate::{region, site};

pub const CREATE_TREE: CausalRegion = region!("create_tree");
pub const SERIAL_SUM: CausalRegion = region!("serial_sum");
pub const SERIAL_STAGE: CausalRegion = region!("serial_stage");

const MAIN_SITE: SpawnSite = site!("compute_tree_sum");
const LEFT_SITE: SpawnSite = site!("left");
const RIGHT_SITE: SpawnSite = site!("right");
const LOOP_SITE: SpawnSite = site!("loop");
const STAGE_SITE: SpawnSite = site!("stage");
const LIGHT_SITE: SpawnSite = site!("light");
const HEAVY_SITE: SpawnSite = site!("heavy");

pub type Body = Box<dyn FnOnce(&mut TaskContext) -> u64 + Send + 'static>;

/// Sum of the values in a complete binary tree, split recursively down to
/// subtrees of at most `base` nodes, which are summed serially.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeSum {
    /// Levels below the root; the tree has `2^(depth+1) - 1` nodes.
    pub depth: u32,
    /// Largest subtree summed serially. `None` means half the tree.
    pub base: Option<u64>,
    /// Cost per node visited by a serial sum.
    pub leaf_cost: u64,
    /// Cost per node created.
    pub build_cost: u64,
    /// Cost of each bookkeeping statement around spawns and syncs.
    pub stmt_cost: u64,
}

impl Default for TreeSum {
    fn default() -> Self {
        TreeSum {
            depth: 12,
            base: Some(64),
            leaf_cost: 100,
            build_cost: 10,
            stmt_cost: 1,
        }
    }
}

pub struct TreeNode {
    pub value: u64,
    pub size: u64,
    pub left: Option<Arc<TreeNode>>,
    pub right: Option<Arc<TreeNode>>,
}

impl TreeSum {
    pub fn nodes(&self) -> u64 {
        (1u64 << (self.depth + 1)) - 1
    }

    fn base(&self) -> u64 {
        self.base.unwrap_or(self.nodes() / 2)
    }

    pub fn body(self) -> Body {
        Box::new(move |ctx| {
            ctx.work(self.stmt_cost);
            let tree = ctx
                .causal(&CREATE_TREE, |c| {
                    build(c, self.depth, &mut 0, self.build_cost)
                })
                .expect("region contains no spawn");
            let total = ctx.spawn(MAIN_SITE, move |c| tree_sum(c, tree, &self));
            ctx.work(self.stmt_cost);
            ctx.sync().expect("spawned above");
            ctx.work(self.stmt_cost);
            total.take()
        })
    }

    /// Value the body returns: the sum of `0..nodes`.
    pub fn expected(&self) -> u64 {
        let n = self.nodes();
        n * (n - 1) / 2
    }
}

fn build(ctx: &mut TaskContext, depth: u32, next: &mut u64, cost: u64) -> Arc<TreeNode> {
    ctx.work(cost);
    let value = *next;
    *next += 1;
    let (left, right) = if depth == 0 {
        (None, None)
    } else {
        (
            Some(build(ctx, depth - 1, next, cost)),
            Some(build(ctx, depth - 1, next, cost)),
        )
    };
    let size = 1 + [&left, &right]
        .iter()
        .map(|c| c.as_ref().map_or(0, |c| c.size))
        .sum::<u64>();
    Arc::new(TreeNode {
        value,
        size,
        left,
        right,
    })
}

fn serial_sum(ctx: &mut TaskContext, node: &TreeNode, cost: u64) -> u64 {
    ctx.work(cost);
    let mut sum = node.value;
    for child in [&node.left, &node.right].into_iter().flatten() {
        sum += serial_sum(ctx, child, cost);
    }
    sum
}

fn tree_sum(ctx: &mut TaskContext, node: Arc<TreeNode>, p: &TreeSum) -> u64 {
    ctx.work(p.stmt_cost);
    let (Some(left), Some(right)) = (node.left.clone(), node.right.clone()) else {
        return leaf_sum(ctx, &node, p);
    };
    if node.size <= p.base() {
        return leaf_sum(ctx, &node, p);
    }
    let q = *p;
    let l = ctx.spawn(LEFT_SITE, move |c| tree_sum(c, left, &q));
    ctx.work(p.stmt_cost);
    let r = ctx.spawn(RIGHT_SITE, move |c| tree_sum(c, right, &q));
    ctx.work(p.stmt_cost);
    ctx.sync().expect("spawned above");
    ctx.work(p.stmt_cost);
    l.take() + r.take() + node.value
}

fn leaf_sum(ctx: &mut TaskContext, node: &TreeNode, p: &TreeSum) -> u64 {
    ctx.causal(&SERIAL_SUM, |c| serial_sum(c, node, p.leaf_cost))
        .expect("region contains no spawn")
}

/// Parallel loops separated by serial stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub n_stages: u32,
    /// Total cost of one serial stage.
    pub stage_cost: u64,
    /// Number of pieces a stage is cut into; pieces run in sequence inside
    /// the serial region, or as one `parallel_for` when `parallel_stages`.
    pub stage_units: u64,
    pub loop_size: u64,
    pub iter_cost: u64,
    pub grain: u64,
    pub parallel_stages: bool,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            n_stages: 4,
            stage_cost: 100_000,
            stage_units: 100,
            loop_size: 1000,
            iter_cost: 10,
            grain: 10,
            parallel_stages: false,
        }
    }
}

impl Pipeline {
    fn unit_cost(&self, i: u64) -> u64 {
        let units = self.stage_units.max(1);
        self.stage_cost / units + u64::from(i < self.stage_cost % units)
    }

    pub fn body(self) -> Body {
        Box::new(move |ctx| {
            let iter_cost = self.iter_cost;
            let mut checksum = 0;
            for _ in 0..self.n_stages {
                ctx.parallel_for(
                    LOOP_SITE,
                    0..self.loop_size as usize,
                    self.grain.max(1) as usize,
                    move |c, r| {
                        for _ in r {
                            c.work(iter_cost);
                        }
                    },
                )
                .expect("valid loop range");
                let units = self.stage_units.max(1);
                if self.parallel_stages {
                    ctx.parallel_for(STAGE_SITE, 0..units as usize, 1, move |c, r| {
                        for i in r {
                            c.work(self.unit_cost(i as u64));
                        }
                    })
                    .expect("valid stage range");
                } else {
                    ctx.causal(&SERIAL_STAGE, |c| {
                        for i in 0..units {
                            c.work(self.unit_cost(i));
                        }
                    })
                    .expect("region contains no spawn");
                }
                checksum += self.loop_size + units;
            }
            checksum
        })
    }
}

/// Binary spawn tree whose right ("heavy") child costs `skew` times its
/// left ("light") sibling, with serial work between the two spawns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unbalanced {
    pub depth: u32,
    pub skew: u64,
    pub leaf_cost: u64,
    pub gap_cost: u64,
}

impl Default for Unbalanced {
    fn default() -> Self {
        Unbalanced {
            depth: 8,
            skew: 2,
            leaf_cost: 100,
            gap_cost: 10,
        }
    }
}

impl Unbalanced {
    pub fn body(self) -> Body {
        Box::new(move |ctx| unbalanced(ctx, self, self.depth, self.leaf_cost))
    }
}

fn unbalanced(ctx: &mut TaskContext, p: Unbalanced, depth: u32, cost: u64) -> u64 {
    if depth == 0 {
        ctx.work(cost);
        return 1;
    }
    let light = ctx.spawn(LIGHT_SITE, move |c| unbalanced(c, p, depth - 1, cost));
    ctx.work(p.gap_cost);
    let heavy_cost = cost.saturating_mul(p.skew.max(1));
    let heavy = ctx.spawn(HEAVY_SITE, move |c| unbalanced(c, p, depth - 1, heavy_cost));
    ctx.sync().expect("spawned above");
    light.take() + heavy.take()
}

/// A named demo workload with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Workload {
    TreeSum(TreeSum),
    Pipeline(Pipeline),
    Unbalanced(Unbalanced),
}

impl Workload {
    pub const NAMES: [&'static str; 3] = ["treesum", "pipeline", "unbalanced"];

    pub fn name(&self) -> &'static str {
        match self {
            Workload::TreeSum(_) => "treesum",
            Workload::Pipeline(_) => "pipeline",
            Workload::Unbalanced(_) => "unbalanced",
        }
    }

    /// Whether the workload annotates causal regions.
    pub fn has_regions(&self) -> bool {
        match self {
            Workload::TreeSum(_) => true,
            Workload::Pipeline(p) => !p.parallel_stages,
            Workload::Unbalanced(_) => false,
        }
    }

    /// Default parameters for `name`.
    pub fn by_name(name: &str) -> Option<Workload> {
        match name {
            "treesum" => Some(Workload::TreeSum(TreeSum::default())),
            "pipeline" => Some(Workload::Pipeline(Pipeline::default())),
            "unbalanced" => Some(Workload::Unbalanced(Unbalanced::default())),
            _ => None,
        }
    }

    pub fn body(self) -> Body {
        match self {
            Workload::TreeSum(p) => p.body(),
            Workload::Pipeline(p) => p.body(),
            Workload::Unbalanced(p) => p.body(),
        }
    }
}
