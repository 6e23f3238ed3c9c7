use std::cmp::Reverse;
use std::collections::BTreeMap;

use super::{AnalysisError, NodeMetrics, SiteAggregate};
use crate::dpst::{SiteId, SpawnSite};
use crate::profile_io::ProfileHeader;
use crate::report::{fixed, round_half_up, Ratio, Table};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RowSite {
    /// The whole program.
    Main,
    Site(SiteId, SpawnSite),
}

/// One row of the parallelism profile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileRow {
    pub site: RowSite,
    pub work: u64,
    pub c_work: u64,
    /// Critical work performed exclusively by this site (by `main` for the
    /// whole-program row).
    pub exclusive: u64,
}

impl ProfileRow {
    /// `work / c_work`; `None` for a site with no critical work.
    pub fn parallelism(&self) -> Option<Ratio> {
        (self.c_work > 0).then(|| Ratio::new(self.work as u128, self.c_work as u128))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelismProfile {
    pub backend: String,
    /// Whole-program row first, then sites by exclusive critical work, descending.
    pub rows: Vec<ProfileRow>,
    pub program_c_work: u64,
}

impl ParallelismProfile {
    pub fn main(&self) -> &ProfileRow {
        &self.rows[0]
    }

    pub fn site_rows(&self) -> &[ProfileRow] {
        &self.rows[1..]
    }

    pub fn row_for(&self, file: &str, line: u32) -> Option<&ProfileRow> {
        self.site_rows().iter().find(|r| match &r.site {
            RowSite::Site(_, s) => s.file == file && s.line == line,
            RowSite::Main => false,
        })
    }

    /// Share of the program's critical work done exclusively by `row`, in percent.
    pub fn pct_critical(&self, row: &ProfileRow) -> Ratio {
        Ratio::new(100 * row.exclusive as u128, self.program_c_work as u128)
    }

    pub fn to_table(&self) -> String {
        let mut t = Table::new([
            "spawn site",
            "work",
            "critical work",
            "parallelism",
            "% critical work",
        ]);
        for row in &self.rows {
            let name = match &row.site {
                RowSite::Main => "★ main".to_string(),
                RowSite::Site(_, s) => s.to_string(),
            };
            t.row(vec![
                name,
                row.work.to_string(),
                row.c_work.to_string(),
                row.parallelism().map_or("-".into(), |p| fixed(&p, 2)),
                round_half_up(&self.pct_critical(row)).to_string(),
            ]);
        }
        format!("counter backend: {}\n{}", self.backend, t.render())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "site_file",
            "site_line",
            "label",
            "work",
            "critical_work",
            "parallelism",
            "pct_critical",
        ])
        .expect("in-memory csv");
        for row in &self.rows {
            let (file, line, label) = match &row.site {
                RowSite::Main => ("*".to_string(), String::new(), "main".to_string()),
                RowSite::Site(_, s) => (
                    s.file.to_string(),
                    s.line.to_string(),
                    s.label.as_deref().unwrap_or("").to_string(),
                ),
            };
            w.write_record([
                file,
                line,
                label,
                row.work.to_string(),
                row.c_work.to_string(),
                row.parallelism().map_or(String::new(), |p| fixed(&p, 6)),
                fixed(&self.pct_critical(row), 6),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Builds the report from the root's metrics and the per-site aggregates.
pub fn render_profile(
    header: &ProfileHeader,
    root: &NodeMetrics,
    sites: &BTreeMap<SiteId, SiteAggregate>,
) -> Result<ParallelismProfile, AnalysisError> {
    if root.c_work == 0 {
        return Err(AnalysisError::ZeroSpan);
    }
    let mut rows: Vec<ProfileRow> = sites
        .iter()
        .map(|(&id, agg)| ProfileRow {
            site: RowSite::Site(
                id,
                header
                    .site(id)
                    .cloned()
                    .unwrap_or_else(|| SpawnSite::new("<unknown>", 0)),
            ),
            work: agg.work,
            c_work: agg.c_work,
            exclusive: root.ss_list.get(&id).copied().unwrap_or(0),
        })
        .collect();
    rows.sort_by_key(|r| {
        let site = match &r.site {
            RowSite::Site(_, s) => Some(s.clone()),
            RowSite::Main => None,
        };
        (Reverse(r.exclusive), site)
    });
    rows.insert(
        0,
        ProfileRow {
            site: RowSite::Main,
            work: root.work,
            c_work: root.c_work,
            exclusive: root.e_work,
        },
    );
    Ok(ParallelismProfile {
        backend: header.backend.clone(),
        rows,
        program_c_work: root.c_work,
    })
}
