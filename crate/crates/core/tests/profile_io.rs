use std::collections::HashSet;

use spanprof::dpst::{DpstNode, NodeData, NodeId, WorkSegment};
use spanprof::profile_io::{decode, encode, read_all, write_profile, ProfileHeader, ProfileSink};

fn step(id: u64) -> DpstNode {
    DpstNode {
        id: NodeId(id),
        parent: Some(NodeId(0)),
        child_index: id as u32,
        data: NodeData::Step(vec![WorkSegment::untagged(id % 97)]),
    }
}

#[test]
fn million_records_from_eight_threads_are_all_kept() {
    const THREADS: u64 = 8;
    const PER_THREAD: u64 = 125_000;
    let sink = ProfileSink::new();
    std::thread::scope(|s| {
        for t in 0..THREADS {
            let mut w = sink.writer();
            s.spawn(move || {
                for i in 0..PER_THREAD {
                    w.append(&step(1 + t + i * THREADS));
                }
            });
        }
    });
    assert_eq!(sink.len(), THREADS * PER_THREAD);
    let records = sink.records().unwrap();
    let ids: HashSet<u64> = records.iter().map(|r| r.id.0).collect();
    assert_eq!(ids.len() as u64, THREADS * PER_THREAD);
    assert!(records.iter().all(|r| *r == step(r.id.0)));
}

#[test]
fn finished_sink_is_readable_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.sppf");
    let sink = ProfileSink::new();
    let root = DpstNode {
        id: NodeId(0),
        parent: None,
        child_index: 0,
        data: NodeData::Finish,
    };
    std::thread::scope(|s| {
        for t in 0..4u64 {
            let mut w = sink.writer();
            s.spawn(move || {
                for i in 0..1000 {
                    w.append(&step(1 + t + 4 * i));
                }
            });
        }
    });
    sink.append(&root);
    let (h, written) = sink.finish(&path, ProfileHeader::new("logical")).unwrap();
    let (h2, back) = read_all(&path).unwrap();
    assert_eq!((h, written), (h2, back.clone()));
    assert_eq!(back.len(), 4001);
    assert!(back.windows(2).all(|p| p[0].id < p[1].id));
}

#[test]
fn files_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let header = ProfileHeader::new("logical");
    let records: Vec<DpstNode> = std::iter::once(DpstNode {
        id: NodeId(0),
        parent: None,
        child_index: 0,
        data: NodeData::Finish,
    })
    .chain((1..50).map(step))
    .collect();
    let a = dir.path().join("a.sppf");
    let b = dir.path().join("b.sppf");
    write_profile(&a, &header, &records).unwrap();
    write_profile(&b, &header, &records).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes, encode(&header, &records));
    assert_eq!(&bytes[..4], b"SPPF");
    assert_eq!(decode(&bytes).unwrap().1, records);
}
