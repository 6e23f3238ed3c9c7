//! Causal what-if profiles.
//!
//! Given the regions a user annotated and a set of anticipated speedup
//! factors, recompute the whole program's critical work with each tagged
//! segment's contribution divided by the factor. Total work is left unchanged,
//! so the reported parallelism estimates what optimizing those regions would
//! buy.
//!
//! Spans are computed exactly: for a factor `p/q` every untagged tick weighs
//! `p` and every tagged tick weighs `q`, and the resulting integer span is
//! divided by `p` at the end.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio as GenericRatio;
use thiserror::Error;

use crate::dpst::{NodeKind, RegionId, Tree, WorkSegment};
use crate::profile_io::ProfileHeader;
use crate::report::{fixed, Ratio, Table};

pub const DEFAULT_FACTORS: [u64; 7] = [2, 4, 8, 16, 32, 64, 100];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CausalError {
    #[error("unknown causal region `{0}`")]
    UnknownRegion(String),
    #[error("invalid speedup factor `{0}`: expected a positive number such as 2, 1.5 or 3/2")]
    BadFactor(String),
    #[error("program has zero critical work")]
    ZeroSpan,
}

/// Anticipated speedup of a region, a positive rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Factor(GenericRatio<u64>);

impl Factor {
    pub fn new(numer: u64, denom: u64) -> Result<Factor, CausalError> {
        if numer == 0 || denom == 0 {
            return Err(CausalError::BadFactor(format!("{numer}/{denom}")));
        }
        Ok(Factor(GenericRatio::new(numer, denom)))
    }

    pub fn whole(n: u64) -> Factor {
        Factor::new(n, 1).expect("factor must be positive")
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}x", self.numer())
        } else {
            let r = Ratio::new(self.numer() as u128, self.denom() as u128);
            let s = fixed(&r, 3);
            write!(f, "{}x", s.trim_end_matches('0').trim_end_matches('.'))
        }
    }
}

impl FromStr for Factor {
    type Err = CausalError;

    fn from_str(s: &str) -> Result<Factor, CausalError> {
        let bad = || CausalError::BadFactor(s.to_string());
        let t = s.trim().trim_end_matches(['x', 'X']);
        if let Some((n, d)) = t.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Factor::new(n, d).map_err(|_| bad());
        }
        match t.split_once('.') {
            None => Factor::new(t.parse().map_err(|_| bad())?, 1).map_err(|_| bad()),
            Some((int, frac)) => {
                if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                let scale = 10u64.pow(frac.len() as u32);
                let int: u64 = if int.is_empty() {
                    0
                } else {
                    int.parse().map_err(|_| bad())?
                };
                let frac: u64 = if frac.is_empty() {
                    0
                } else {
                    frac.parse().map_err(|_| bad())?
                };
                let n = int.checked_mul(scale).and_then(|v| v.checked_add(frac));
                Factor::new(n.ok_or_else(bad)?, scale).map_err(|_| bad())
            }
        }
    }
}

/// Parses a comma separated factor list.
pub fn parse_factors(list: &str) -> Result<Vec<Factor>, CausalError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CausalMode {
    /// All queried regions optimized together.
    Combined,
    /// Combined, plus every region on its own.
    Isolated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalQuery {
    pub regions: Vec<RegionId>,
    pub factors: Vec<Factor>,
    pub mode: CausalMode,
}

impl CausalQuery {
    /// Every region in the header, default factors, combined mode.
    pub fn all_regions(header: &ProfileHeader) -> CausalQuery {
        CausalQuery {
            regions: header.regions.iter().map(|e| e.id).collect(),
            factors: DEFAULT_FACTORS.iter().map(|&f| Factor::whole(f)).collect(),
            mode: CausalMode::Combined,
        }
    }

    /// Resolves region labels (or numeric ids) against the header.
    pub fn resolve_regions(
        header: &ProfileHeader,
        keys: &[String],
    ) -> Result<Vec<RegionId>, CausalError> {
        keys.iter()
            .map(|k| {
                header
                    .find_region(k.trim())
                    .ok_or_else(|| CausalError::UnknownRegion(k.clone()))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalRow {
    pub factor: Factor,
    pub work: u64,
    pub span: Ratio,
    pub parallelism: Ratio,
}

/// Estimates for one set of optimized regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalTable {
    pub regions: Vec<RegionId>,
    pub description: String,
    pub rows: Vec<CausalRow>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalProfile {
    pub work: u64,
    pub baseline_span: u64,
    pub tables: Vec<CausalTable>,
}

impl CausalProfile {
    pub fn baseline_parallelism(&self) -> Ratio {
        Ratio::new(self.work as u128, self.baseline_span as u128)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "baseline: work {}, critical work {}, parallelism {}\n",
            self.work,
            self.baseline_span,
            fixed(&self.baseline_parallelism(), 2)
        );
        for table in &self.tables {
            out.push('\n');
            out.push_str(&format!("optimized regions: {}\n", table.description));
            let mut t = Table::new(["factor", "parallelism"]);
            for row in &table.rows {
                t.row(vec![row.factor.to_string(), fixed(&row.parallelism, 2)]);
            }
            out.push_str(&t.render());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["regions", "factor", "work", "critical_work", "parallelism"])
            .expect("in-memory csv");
        for table in &self.tables {
            for row in &table.rows {
                w.write_record([
                    table.description.clone(),
                    row.factor.to_string(),
                    row.work.to_string(),
                    fixed(&row.span, 6),
                    fixed(&row.parallelism, 6),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Critical work of the whole tree under an arbitrary per-segment weight.
///
/// Same recurrence as the work/span pass, without exclusive work or sites.
pub fn weighted_span(tree: &Tree, weight: impl Fn(&WorkSegment) -> u128) -> u128 {
    let mut span = vec![0u128; tree.len()];
    for &n in tree.postorder() {
        let node = tree.node(n);
        if node.kind() == NodeKind::Step {
            span[n] = node.segments().iter().map(&weight).sum();
            continue;
        }
        let serial = |c: usize| match tree.node(c).kind() {
            NodeKind::Async => 0,
            _ => span[c],
        };
        let mut best: u128 = node.children.iter().map(|&c| serial(c)).sum();
        let mut left = 0u128;
        for &c in &node.children {
            if tree.node(c).kind() == NodeKind::Async {
                best = best.max(left + span[c]);
            } else {
                left += span[c];
            }
        }
        span[n] = best;
    }
    span[tree.root()]
}

fn total_work(tree: &Tree) -> u64 {
    tree.nodes()
        .iter()
        .flat_map(|n| n.segments())
        .map(|s| s.ticks)
        .sum()
}

/// Adjusted program span when the segments of `regions` run `factor` times faster.
pub fn adjusted_span(tree: &Tree, regions: &HashSet<RegionId>, factor: Factor) -> Ratio {
    let (p, q) = (factor.numer() as u128, factor.denom() as u128);
    let scaled = weighted_span(tree, |s| {
        let w = if s.region.is_some_and(|r| regions.contains(&r)) {
            q
        } else {
            p
        };
        s.ticks as u128 * w
    });
    Ratio::new(scaled, p)
}

fn describe(header: &ProfileHeader, regions: &[RegionId]) -> String {
    if regions.is_empty() {
        return "(none)".to_string();
    }
    regions
        .iter()
        .map(|&r| {
            header
                .region(r)
                .map_or_else(|| format!("r{}", r.0), |reg| reg.label.to_string())
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

pub fn compute_causal(
    tree: &Tree,
    header: &ProfileHeader,
    query: &CausalQuery,
) -> Result<CausalProfile, CausalError> {
    for &r in &query.regions {
        if header.region(r).is_none() {
            return Err(CausalError::UnknownRegion(format!("r{}", r.0)));
        }
    }
    let work = total_work(tree);
    let baseline_span = weighted_span(tree, |s| s.ticks as u128) as u64;
    if baseline_span == 0 {
        return Err(CausalError::ZeroSpan);
    }

    let mut sets = vec![query.regions.clone()];
    if query.mode == CausalMode::Isolated {
        sets.extend(query.regions.iter().map(|&r| vec![r]));
    }

    let tables = sets
        .into_iter()
        .map(|regions| {
            let set: HashSet<RegionId> = regions.iter().copied().collect();
            let rows = query
                .factors
                .iter()
                .map(|&factor| {
                    let span = adjusted_span(tree, &set, factor);
                    CausalRow {
                        factor,
                        work,
                        span,
                        parallelism: Ratio::from_integer(work as u128) / span,
                    }
                })
                .collect();
            CausalTable {
                description: describe(header, &regions),
                regions,
                rows,
            }
        })
        .collect();

    Ok(CausalProfile {
        work,
        baseline_span,
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpst::{CausalRegion, DpstNode, NodeData, NodeId, SiteId};
    use crate::profile_io::RegionEntry;

    fn header() -> ProfileHeader {
        let mut h = ProfileHeader::new("logical");
        for (i, label) in ["a", "b"].into_iter().enumerate() {
            h.regions.push(RegionEntry {
                id: RegionId(i as u32),
                region: CausalRegion::new(label, "x.rs", 1),
            });
        }
        h
    }

    /// F0 -> [S(a:10, -:2), F -> [A -> S(b:6), S(4)]]
    fn tree() -> Tree {
        let n = |id, parent: Option<u64>, idx, data| DpstNode {
            id: NodeId(id),
            parent: parent.map(NodeId),
            child_index: idx,
            data,
        };
        Tree::from_nodes(vec![
            n(0, None, 0, NodeData::Finish),
            n(
                1,
                Some(0),
                0,
                NodeData::Step(vec![
                    WorkSegment::tagged(RegionId(0), 10),
                    WorkSegment::untagged(2),
                ]),
            ),
            n(2, Some(0), 1, NodeData::Finish),
            n(3, Some(2), 0, NodeData::Async(SiteId(0))),
            n(
                4,
                Some(3),
                0,
                NodeData::Step(vec![WorkSegment::tagged(RegionId(1), 6)]),
            ),
            n(
                5,
                Some(2),
                1,
                NodeData::Step(vec![WorkSegment::untagged(4)]),
            ),
        ])
        .unwrap()
    }

    #[test]
    fn factor_parsing() {
        assert_eq!("2".parse::<Factor>().unwrap(), Factor::whole(2));
        assert_eq!("1.5".parse::<Factor>().unwrap(), Factor::new(3, 2).unwrap());
        assert_eq!("3/2".parse::<Factor>().unwrap(), Factor::new(3, 2).unwrap());
        assert_eq!("8x".parse::<Factor>().unwrap(), Factor::whole(8));
        assert!("0".parse::<Factor>().is_err());
        assert!("-2".parse::<Factor>().is_err());
        assert!("two".parse::<Factor>().is_err());
        assert_eq!(Factor::new(3, 2).unwrap().to_string(), "1.5x");
        assert_eq!(parse_factors("2,4, 8").unwrap().len(), 3);
    }

    #[test]
    fn identity_factor_reproduces_baseline() {
        let t = tree();
        let q = CausalQuery {
            regions: vec![RegionId(0), RegionId(1)],
            factors: vec![Factor::whole(1)],
            mode: CausalMode::Combined,
        };
        let p = compute_causal(&t, &header(), &q).unwrap();
        // Baseline: 12 + max(4, 6) = 18, work 22.
        assert_eq!(p.baseline_span, 18);
        assert_eq!(p.work, 22);
        assert_eq!(p.tables[0].rows[0].span, Ratio::from_integer(18));
    }

    #[test]
    fn hand_computed_spans() {
        let t = tree();
        let set = |ids: &[u32]| ids.iter().map(|&i| RegionId(i)).collect::<HashSet<_>>();
        // a at 2x: 5 + 2 + max(4, 6) = 13
        assert_eq!(
            adjusted_span(&t, &set(&[0]), Factor::whole(2)),
            Ratio::from_integer(13)
        );
        // both at 2x: 5 + 2 + max(4, 3) = 11
        assert_eq!(
            adjusted_span(&t, &set(&[0, 1]), Factor::whole(2)),
            Ratio::from_integer(11)
        );
        // a at 3x: 10/3 + 2 + 6
        assert_eq!(
            adjusted_span(&t, &set(&[0]), Factor::whole(3)),
            Ratio::new(34, 3)
        );
    }

    #[test]
    fn isolated_mode_adds_one_table_per_region() {
        let t = tree();
        let q = CausalQuery {
            regions: vec![RegionId(0), RegionId(1)],
            factors: [2, 4, 8].map(Factor::whole).to_vec(),
            mode: CausalMode::Isolated,
        };
        let p = compute_causal(&t, &header(), &q).unwrap();
        assert_eq!(p.tables.len(), 3);
        assert!(p.tables.iter().all(|t| t.rows.len() == 3));
        assert_eq!(p.tables[0].description, "a + b");
        assert_eq!(p.tables[2].description, "b");
    }

    #[test]
    fn unknown_region_is_rejected() {
        let q = CausalQuery {
            regions: vec![RegionId(9)],
            factors: vec![Factor::whole(2)],
            mode: CausalMode::Combined,
        };
        assert!(matches!(
            compute_causal(&tree(), &header(), &q),
            Err(CausalError::UnknownRegion(_))
        ));
        assert!(CausalQuery::resolve_regions(&header(), &["zzz".into()]).is_err());
        assert_eq!(
            CausalQuery::resolve_regions(&header(), &["b".into(), "0".into()]).unwrap(),
            vec![RegionId(1), RegionId(0)]
        );
    }
}
