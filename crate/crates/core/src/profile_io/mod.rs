//! Profile data files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "SPPF" (53 50 50 46)
//! version      u32      1
//! backend      str
//! site count   u32      then per site:   id u32, file str, line u32, has_label u8, [label str]
//! region count u32      then per region: id u32, label str, file str, line u32
//! record count u64
//! records      per record: payload length u32, payload
//!
//! payload      node_id u64, parent u64 (u64::MAX = none), child_index u32, kind u8
//!              kind 0 (step):   segment count u32, then per segment: region u32 (u32::MAX = untagged), ticks u64
//!              kind 1 (async):  site u32
//!              kind 2 (finish): nothing
//! str          length u32, UTF-8 bytes
//! ```

mod writer;

pub use writer::{canonicalize, ChunkWriter, ProfileSink};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::dpst::{
    CausalRegion, DpstNode, NodeData, NodeId, RegionId, SiteId, SpawnSite, WorkSegment,
};

/// A completed node as stored in a profile file.
pub type ProfileRecord = DpstNode;

pub const MAGIC: [u8; 4] = *b"SPPF";
pub const VERSION: u32 = 1;

const NONE_ID: u64 = u64::MAX;
const UNTAGGED: u32 = u32::MAX;
const KIND_STEP: u8 = 0;
const KIND_ASYNC: u8 = 1;
const KIND_FINISH: u8 = 2;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("I/O error on profile file: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt profile file: {0}")]
    Corrupt(String),
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T, ProfileError> {
    Err(ProfileError::Corrupt(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteEntry {
    pub id: SiteId,
    pub site: SpawnSite,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionEntry {
    pub id: RegionId,
    pub region: CausalRegion,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileHeader {
    pub version: u32,
    pub backend: String,
    pub sites: Vec<SiteEntry>,
    pub regions: Vec<RegionEntry>,
}

impl ProfileHeader {
    pub fn new(backend: impl Into<String>) -> Self {
        ProfileHeader {
            version: VERSION,
            backend: backend.into(),
            sites: Vec::new(),
            regions: Vec::new(),
        }
    }

    pub fn site(&self, id: SiteId) -> Option<&SpawnSite> {
        self.sites.iter().find(|e| e.id == id).map(|e| &e.site)
    }

    pub fn region(&self, id: RegionId) -> Option<&CausalRegion> {
        self.regions.iter().find(|e| e.id == id).map(|e| &e.region)
    }

    /// Looks a region up by label, or by numeric id.
    pub fn find_region(&self, key: &str) -> Option<RegionId> {
        self.regions
            .iter()
            .find(|e| e.region.label == key)
            .map(|e| e.id)
            .or_else(|| {
                let id = RegionId(key.parse().ok()?);
                self.region(id).map(|_| id)
            })
    }
}

// ---- encoding ----

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Appends one length-prefixed record.
pub fn encode_record(out: &mut Vec<u8>, rec: &ProfileRecord) {
    let len_at = out.len();
    put_u32(out, 0);
    put_u64(out, rec.id.0);
    put_u64(out, rec.parent.map_or(NONE_ID, |p| p.0));
    put_u32(out, rec.child_index);
    match &rec.data {
        NodeData::Step(segments) => {
            out.push(KIND_STEP);
            put_u32(out, segments.len() as u32);
            for seg in segments {
                put_u32(out, seg.region.map_or(UNTAGGED, |r| r.0));
                put_u64(out, seg.ticks);
            }
        }
        NodeData::Async(site) => {
            out.push(KIND_ASYNC);
            put_u32(out, site.0);
        }
        NodeData::Finish => out.push(KIND_FINISH),
    }
    let len = (out.len() - len_at - 4) as u32;
    out[len_at..len_at + 4].copy_from_slice(&len.to_le_bytes());
}

fn encode_header(out: &mut Vec<u8>, header: &ProfileHeader, record_count: u64) {
    out.extend_from_slice(&MAGIC);
    put_u32(out, header.version);
    put_str(out, &header.backend);
    put_u32(out, header.sites.len() as u32);
    for e in &header.sites {
        put_u32(out, e.id.0);
        put_str(out, &e.site.file);
        put_u32(out, e.site.line);
        match &e.site.label {
            Some(label) => {
                out.push(1);
                put_str(out, label);
            }
            None => out.push(0),
        }
    }
    put_u32(out, header.regions.len() as u32);
    for e in &header.regions {
        put_u32(out, e.id.0);
        put_str(out, &e.region.label);
        put_str(out, &e.region.file);
        put_u32(out, e.region.line);
    }
    put_u64(out, record_count);
}

pub fn encode(header: &ProfileHeader, records: &[ProfileRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + records.len() * 40);
    encode_header(&mut out, header, records.len() as u64);
    for rec in records {
        encode_record(&mut out, rec);
    }
    out
}

pub fn write_profile(
    path: impl AsRef<Path>,
    header: &ProfileHeader,
    records: &[ProfileRecord],
) -> Result<(), ProfileError> {
    fs::write(path, encode(header, records))?;
    Ok(())
}

// ---- decoding ----

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ProfileError> {
        if self.buf.len() - self.pos < n {
            return corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ProfileError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, ProfileError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ProfileError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, ProfileError> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).or_else(|_| corrupt(format!("{what} is not valid UTF-8")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_record(payload: &[u8]) -> Result<ProfileRecord, ProfileError> {
    let mut c = Cursor {
        buf: payload,
        pos: 0,
    };
    let id = NodeId(c.u64("node id")?);
    let parent = match c.u64("parent id")? {
        NONE_ID => None,
        p => Some(NodeId(p)),
    };
    let child_index = c.u32("child index")?;
    let data = match c.u8("node kind")? {
        KIND_STEP => {
            let n = c.u32("segment count")? as usize;
            if n.saturating_mul(12) > payload.len() {
                return corrupt(format!("node {id}: segment count {n} exceeds record"));
            }
            let mut segments = Vec::with_capacity(n);
            for _ in 0..n {
                let region = match c.u32("segment region")? {
                    UNTAGGED => None,
                    r => Some(RegionId(r)),
                };
                let ticks = c.u64("segment ticks")?;
                segments.push(WorkSegment { region, ticks });
            }
            NodeData::Step(segments)
        }
        KIND_ASYNC => NodeData::Async(SiteId(c.u32("spawn site")?)),
        KIND_FINISH => NodeData::Finish,
        k => return corrupt(format!("node {id}: unknown kind {k}")),
    };
    if !c.done() {
        return corrupt(format!("node {id}: trailing bytes in record"));
    }
    Ok(DpstNode {
        id,
        parent,
        child_index,
        data,
    })
}

/// Decodes a concatenation of length-prefixed records.
pub fn decode_records(buf: &[u8]) -> Result<Vec<ProfileRecord>, ProfileError> {
    let mut c = Cursor { buf, pos: 0 };
    let mut out = Vec::new();
    while !c.done() {
        let len = c.u32("record length")? as usize;
        out.push(decode_record(c.take(len, "record")?)?);
    }
    Ok(out)
}

/// Decodes and validates a complete profile image.
pub fn decode(buf: &[u8]) -> Result<(ProfileHeader, Vec<ProfileRecord>), ProfileError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return corrupt("bad magic, not a spanprof profile");
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return corrupt(format!("unsupported version {version}"));
    }
    let backend = c.string("backend")?;
    let mut header = ProfileHeader {
        version,
        backend,
        sites: Vec::new(),
        regions: Vec::new(),
    };
    for _ in 0..c.u32("site count")? {
        let id = SiteId(c.u32("site id")?);
        let file = c.string("site file")?;
        let line = c.u32("site line")?;
        let label = match c.u8("site label flag")? {
            0 => None,
            1 => Some(c.string("site label")?.into()),
            f => return corrupt(format!("bad site label flag {f}")),
        };
        header.sites.push(SiteEntry {
            id,
            site: SpawnSite {
                file: file.into(),
                line,
                label,
            },
        });
    }
    for _ in 0..c.u32("region count")? {
        let id = RegionId(c.u32("region id")?);
        let label = c.string("region label")?;
        let file = c.string("region file")?;
        let line = c.u32("region line")?;
        header.regions.push(RegionEntry {
            id,
            region: CausalRegion {
                label: label.into(),
                file: file.into(),
                line,
            },
        });
    }
    let count = c.u64("record count")?;
    let records = decode_records(&buf[c.pos..])?;
    if records.len() as u64 != count {
        return corrupt(format!(
            "header announces {count} records, file holds {}",
            records.len()
        ));
    }
    validate(&header, &records)?;
    Ok((header, records))
}

/// Referential integrity: unique table and node ids, no dangling references.
pub fn validate(header: &ProfileHeader, records: &[ProfileRecord]) -> Result<(), ProfileError> {
    let mut sites = HashSet::new();
    for e in &header.sites {
        if !sites.insert(e.id) {
            return corrupt(format!("duplicate site id {}", e.id.0));
        }
    }
    let mut regions = HashSet::new();
    for e in &header.regions {
        if !regions.insert(e.id) {
            return corrupt(format!("duplicate region id {}", e.id.0));
        }
    }
    let mut ids = HashSet::with_capacity(records.len());
    for rec in records {
        if !ids.insert(rec.id) {
            return corrupt(format!("duplicate node id {}", rec.id));
        }
        match &rec.data {
            NodeData::Async(site) if !sites.contains(site) => {
                return corrupt(format!(
                    "node {} references unknown site {}",
                    rec.id, site.0
                ));
            }
            NodeData::Step(segments) => {
                for seg in segments {
                    if let Some(r) = seg.region {
                        if !regions.contains(&r) {
                            return corrupt(format!(
                                "node {} references unknown region {}",
                                rec.id, r.0
                            ));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn read_all(
    path: impl AsRef<Path>,
) -> Result<(ProfileHeader, Vec<ProfileRecord>), ProfileError> {
    decode(&fs::read(path)?)
}

/// One line per table entry and record, for debugging.
pub fn dump_text(header: &ProfileHeader, records: &[ProfileRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# spanprof profile v{} backend={} records={}",
        header.version,
        header.backend,
        records.len()
    );
    for e in &header.sites {
        let _ = writeln!(out, "site {} {}", e.id.0, e.site);
    }
    for e in &header.regions {
        let _ = writeln!(out, "region {} {}", e.id.0, e.region);
    }
    for rec in records {
        let parent = rec.parent.map_or("-".to_string(), |p| p.0.to_string());
        let _ = write!(
            out,
            "node {} parent={} index={} {}",
            rec.id.0,
            parent,
            rec.child_index,
            rec.kind()
        );
        match &rec.data {
            NodeData::Step(segments) => {
                let segs: Vec<String> = segments
                    .iter()
                    .map(|s| match s.region {
                        Some(r) => format!("r{}:{}", r.0, s.ticks),
                        None => format!("-:{}", s.ticks),
                    })
                    .collect();
                let _ = write!(out, " [{}]", segs.join(", "));
            }
            NodeData::Async(site) => {
                let _ = write!(out, " site={}", site.0);
            }
            NodeData::Finish => {}
        }
        out.push('\n');
    }
    out
}
