use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    decode_records, encode_record, write_profile, ProfileError, ProfileHeader, ProfileRecord,
    RegionEntry, SiteEntry,
};
use crate::dpst::{DpstNode, NodeData, NodeId, NodeSink, RegionId, SiteId, Tree};

const CHUNK_BYTES: usize = 1 << 20;

/// Append-only record sink shared by all worker threads.
///
/// Each thread appends through its own [`ChunkWriter`]; full chunks are handed
/// to the sink under a lock once per megabyte. Chunks are concatenated when
/// the sink is finished.
#[derive(Default)]
pub struct ProfileSink {
    chunks: Mutex<Vec<Vec<u8>>>,
    records: AtomicU64,
}

impl ProfileSink {
    pub fn new() -> Arc<ProfileSink> {
        Arc::new(ProfileSink::default())
    }

    pub fn writer(self: &Arc<Self>) -> ChunkWriter {
        ChunkWriter {
            sink: Arc::clone(self),
            buf: Vec::new(),
            count: 0,
        }
    }

    /// Single-record append that takes the chunk lock. Prefer [`ChunkWriter`].
    pub fn append(&self, record: &ProfileRecord) {
        let mut buf = Vec::with_capacity(64);
        encode_record(&mut buf, record);
        self.push_chunk(buf, 1);
    }

    /// Records appended and flushed so far.
    pub fn len(&self) -> u64 {
        self.records.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_chunk(&self, chunk: Vec<u8>, count: u64) {
        if chunk.is_empty() {
            return;
        }
        self.chunks.lock().unwrap().push(chunk);
        self.records.fetch_add(count, Ordering::AcqRel);
    }

    /// Decodes everything flushed so far, in chunk order.
    pub fn records(&self) -> Result<Vec<ProfileRecord>, ProfileError> {
        let chunks = self.chunks.lock().unwrap();
        let mut out = Vec::with_capacity(self.len() as usize);
        for chunk in chunks.iter() {
            out.extend(decode_records(chunk)?);
        }
        Ok(out)
    }

    /// Writes the file. Records are canonicalized when they form a valid
    /// tree; otherwise (e.g. after a task panic) they are written sorted by id.
    pub fn finish(
        &self,
        path: impl AsRef<Path>,
        header: ProfileHeader,
    ) -> Result<(ProfileHeader, Vec<ProfileRecord>), ProfileError> {
        let records = self.records()?;
        let (header, records) = match canonicalize(&header, &records) {
            Some(canon) => canon,
            None => {
                let mut records = records;
                records.sort_by_key(|r| r.id);
                (header, records)
            }
        };
        write_profile(path, &header, &records)?;
        Ok((header, records))
    }
}

/// Per-thread buffered writer. Flushes to the sink when full and on drop.
pub struct ChunkWriter {
    sink: Arc<ProfileSink>,
    buf: Vec<u8>,
    count: u64,
}

impl ChunkWriter {
    pub fn append(&mut self, record: &ProfileRecord) {
        encode_record(&mut self.buf, record);
        self.count += 1;
        if self.buf.len() >= CHUNK_BYTES {
            self.flush();
        }
    }

    pub fn flush(&mut self) {
        let chunk = std::mem::take(&mut self.buf);
        self.sink.push_chunk(chunk, std::mem::take(&mut self.count));
    }
}

impl NodeSink for ChunkWriter {
    fn emit(&mut self, node: DpstNode) {
        self.append(&node);
    }
}

impl Drop for ChunkWriter {
    fn drop(&mut self) {
        self.flush();
    }
}

/// Rewrites a profile into a schedule-independent form: sites sorted by
/// location, regions by label, node ids assigned in tree pre-order, records
/// sorted by id. Returns `None` if the records do not form a valid tree.
pub fn canonicalize(
    header: &ProfileHeader,
    records: &[ProfileRecord],
) -> Option<(ProfileHeader, Vec<ProfileRecord>)> {
    let mut sites: Vec<&SiteEntry> = header.sites.iter().collect();
    sites.sort_by(|a, b| a.site.cmp(&b.site));
    let site_map: HashMap<SiteId, SiteId> = sites
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id, SiteId(i as u32)))
        .collect();

    let mut regions: Vec<&RegionEntry> = header.regions.iter().collect();
    regions.sort_by(|a, b| a.region.cmp(&b.region));
    let region_map: HashMap<RegionId, RegionId> = regions
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id, RegionId(i as u32)))
        .collect();

    let tree = Tree::from_nodes(records.iter().cloned()).ok()?;
    let order = tree.preorder();
    let mut new_id = vec![0u64; tree.len()];
    for (rank, &idx) in order.iter().enumerate() {
        new_id[idx] = rank as u64;
    }

    let mut out = Vec::with_capacity(order.len());
    for &idx in &order {
        let n = tree.node(idx);
        let data = match &n.data {
            NodeData::Step(segs) => NodeData::Step(
                segs.iter()
                    .map(|s| {
                        let mut s = *s;
                        s.region = s.region.map(|r| *region_map.get(&r).unwrap_or(&r));
                        s
                    })
                    .collect(),
            ),
            NodeData::Async(site) => NodeData::Async(*site_map.get(site).unwrap_or(site)),
            NodeData::Finish => NodeData::Finish,
        };
        out.push(DpstNode {
            id: NodeId(new_id[idx]),
            parent: n.parent.map(|p| NodeId(new_id[p])),
            child_index: n.child_index,
            data,
        });
    }

    let header = ProfileHeader {
        version: header.version,
        backend: header.backend.clone(),
        sites: sites
            .into_iter()
            .map(|e| SiteEntry {
                id: site_map[&e.id],
                site: e.site.clone(),
            })
            .collect(),
        regions: regions
            .into_iter()
            .map(|e| RegionEntry {
                id: region_map[&e.id],
                region: e.region.clone(),
            })
            .collect(),
    };
    Some((header, out))
}
