mod common;

use common::Oracle;
use spanprof::analysis::{analyze, compute_work_span, reconstruct};
use spanprof::dpst::{NodeData, NodeKind};
use spanprof::measure::{CounterBackend, MeasureError};
use spanprof::profile_io::{read_all, validate};
use spanprof::runtime::{run_plain, run_profiled, run_serial, Config, RuntimeError};
use spanprof::workloads::{Pipeline, TreeSum, Unbalanced, Workload};
use spanprof::{region, site};

fn config(dir: &tempfile::TempDir, name: &str, workers: usize) -> Config {
    Config::new(dir.path().join(name), CounterBackend::Logical).workers(workers)
}

fn workloads() -> Vec<Workload> {
    vec![
        Workload::TreeSum(TreeSum {
            depth: 6,
            base: Some(4),
            ..TreeSum::default()
        }),
        Workload::Pipeline(Pipeline {
            n_stages: 2,
            stage_cost: 500,
            stage_units: 10,
            loop_size: 64,
            iter_cost: 3,
            grain: 4,
            parallel_stages: false,
        }),
        Workload::Unbalanced(Unbalanced {
            depth: 5,
            skew: 3,
            leaf_cost: 10,
            gap_cost: 4,
        }),
    ]
}

#[test]
fn empty_root_task_writes_a_lone_root() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_profiled(&config(&dir, "e.sppf", 2), |_| ()).unwrap();
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.records[0].kind(), NodeKind::Finish);
    assert!(report.records[0].parent.is_none());
    let (h, recs) = read_all(&report.path).unwrap();
    assert_eq!(recs, report.records);
    validate(&h, &recs).unwrap();
}

#[test]
fn treesum_fixture_has_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let p = TreeSum {
        depth: 4,
        base: None,
        ..TreeSum::default()
    };
    let report = run_profiled(&config(&dir, "f.sppf", 4), p.body()).unwrap();
    assert_eq!(report.value, p.expected());
    let tree = reconstruct(&report.header, report.records.clone()).unwrap();
    assert_eq!(tree.count(NodeKind::Finish), 3);
    assert_eq!(tree.count(NodeKind::Async), 3);
    assert_eq!(tree.count(NodeKind::Step), 9);
    // main: step, finish, step after sync
    let root = tree.node(tree.root());
    let kinds: Vec<NodeKind> = root.children.iter().map(|&c| tree.node(c).kind()).collect();
    assert_eq!(kinds, [NodeKind::Step, NodeKind::Finish, NodeKind::Step]);
    assert_eq!(report.header.sites.len(), 3);
    assert_eq!(report.header.regions.len(), 2);
}

#[test]
fn analysis_of_every_workload_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    for w in workloads() {
        let report = run_profiled(&config(&dir, "w.sppf", 3), w.body()).unwrap();
        let tree = reconstruct(&report.header, report.records.clone()).unwrap();
        tree.check_invariants().unwrap();
        let m = compute_work_span(&tree);
        let oracle = Oracle::new(&report.records);
        for (i, node) in tree.nodes().iter().enumerate() {
            assert_eq!(m[i].c_work as u128, oracle.span(node.id), "{}", w.name());
        }
        let root = &m[tree.root()];
        assert_eq!(root.c_work, root.e_work + root.ss_total());
    }
}

#[test]
fn serial_elision_preserves_total_work() {
    let dir = tempfile::tempdir().unwrap();
    for w in workloads() {
        let (serial_value, ticks) = run_serial(w.body()).unwrap();
        let report = run_profiled(&config(&dir, "s.sppf", 4), w.body()).unwrap();
        let work: u64 = report.records.iter().map(|r| r.work()).sum();
        assert_eq!(work, ticks, "{}", w.name());
        assert_eq!(report.value, serial_value);
        assert_eq!(run_plain(2, w.body()).unwrap(), serial_value);
    }
}

#[test]
fn profiles_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    for w in workloads() {
        let mut files = Vec::new();
        for workers in [1, 2, 8] {
            let report = run_profiled(
                &config(&dir, &format!("d{workers}.sppf"), workers),
                w.body(),
            )
            .unwrap();
            files.push(std::fs::read(&report.path).unwrap());
        }
        assert!(files.windows(2).all(|p| p[0] == p[1]), "{}", w.name());
    }
}

#[test]
fn spawn_and_finish_counts_follow_the_program() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_profiled(&config(&dir, "c.sppf", 2), |ctx| {
        for round in 0..3u64 {
            for _ in 0..=round {
                ctx.spawn(site!(), |c| c.charge(1).unwrap());
            }
            ctx.sync().unwrap();
        }
        // a sync-epoch with no spawn opens no finish
        ctx.charge(1).unwrap();
    })
    .unwrap();
    let tree = reconstruct(&report.header, report.records).unwrap();
    assert_eq!(tree.count(NodeKind::Async), 6);
    assert_eq!(tree.count(NodeKind::Finish), 1 + 3);
}

#[test]
fn parallel_for_over_eight_unit_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_profiled(&config(&dir, "p.sppf", 4), |ctx| {
        ctx.parallel_for(site!(), 0..8, 1, |c, r| {
            for _ in r {
                c.charge(1).unwrap();
            }
        })
        .unwrap();
    })
    .unwrap();
    let p = analyze(&report.header, report.records).unwrap();
    assert_eq!((p.main().work, p.main().c_work), (8, 1));
}

#[test]
fn parallel_for_rejects_bad_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_profiled(&config(&dir, "r.sppf", 1), |ctx| {
        #[allow(clippy::reversed_empty_ranges)]
        let reversed = ctx.parallel_for(site!(), 5..2, 1, |_, _| {});
        let zero_grain = ctx.parallel_for(site!(), 0..4, 0, |_, _| {});
        let empty = ctx.parallel_for(site!(), 3..3, 1, |_, _| panic!("no iterations"));
        (reversed, zero_grain, empty)
    })
    .unwrap();
    assert!(matches!(
        report.value.0,
        Err(RuntimeError::InvalidRange { .. })
    ));
    assert!(matches!(
        report.value.1,
        Err(RuntimeError::InvalidRange { .. })
    ));
    assert!(report.value.2.is_ok());
}

#[test]
fn sync_without_spawn_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_profiled(&config(&dir, "n.sppf", 1), |ctx| {
        let first = ctx.sync();
        ctx.spawn(site!(), |_| ());
        let second = ctx.sync();
        let third = ctx.sync();
        (first, second, third)
    })
    .unwrap();
    assert!(matches!(report.value.0, Err(RuntimeError::NoOpenFinish)));
    assert!(report.value.1.is_ok());
    assert!(matches!(report.value.2, Err(RuntimeError::NoOpenFinish)));
    assert!(matches!(
        run_serial(|ctx| ctx.sync()).unwrap().0,
        Err(RuntimeError::NoOpenFinish)
    ));
}

#[test]
fn causal_regions_tag_segments() {
    let dir = tempfile::tempdir().unwrap();
    let outer = region!("outer");
    let inner = region!("inner");
    let report = run_profiled(&config(&dir, "g.sppf", 1), move |ctx| {
        ctx.charge(2).unwrap();
        ctx.causal_begin(&outer);
        ctx.charge(3).unwrap();
        ctx.causal_begin(&inner);
        ctx.charge(4).unwrap();
        ctx.causal_end(&inner).unwrap();
        ctx.causal_end(&outer).unwrap();
        ctx.charge(5).unwrap();
    })
    .unwrap();
    let step = report
        .records
        .iter()
        .find(|r| r.kind() == NodeKind::Step)
        .unwrap();
    let outer_id = report.header.find_region("outer").unwrap();
    let segs: Vec<(Option<_>, u64)> = step
        .segments()
        .iter()
        .map(|s| (s.region, s.ticks))
        .collect();
    assert_eq!(segs, [(None, 2), (Some(outer_id), 7), (None, 5)]);
}

#[test]
fn region_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let a = region!("a");
    let b = region!("b");
    let report = run_profiled(&config(&dir, "x.sppf", 2), move |ctx| {
        let unopened = ctx.causal_end(&a);
        ctx.causal_begin(&a);
        let mismatched = ctx.causal_end(&b);
        ctx.causal_end(&a).unwrap();
        ctx.causal_begin(&a);
        ctx.spawn(site!(), |_| ());
        let crossing = ctx.causal_end(&a);
        ctx.sync().unwrap();
        (unopened, mismatched, crossing)
    })
    .unwrap();
    assert!(matches!(
        report.value.0,
        Err(RuntimeError::MismatchedRegion { .. })
    ));
    assert!(matches!(
        report.value.1,
        Err(RuntimeError::MismatchedRegion { .. })
    ));
    assert!(matches!(
        report.value.2,
        Err(RuntimeError::CrossTaskRegion(_))
    ));

    let unclosed = run_profiled(&config(&dir, "u.sppf", 2), move |ctx| {
        ctx.spawn(site!(), |c| c.causal_begin(&region!("b")));
        ctx.sync().unwrap();
    });
    assert!(matches!(unclosed, Err(RuntimeError::UnclosedRegion(_))));
}

#[test]
fn task_panics_surface_after_the_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, "panic.sppf", 2);
    let out = run_profiled(&cfg, |ctx| {
        ctx.charge(3).unwrap();
        ctx.spawn(site!(), |_| panic!("boom"));
        ctx.spawn(site!(), |c| c.charge(5).unwrap());
        ctx.sync().unwrap();
    });
    match out {
        Err(RuntimeError::TaskPanicked(msg)) => assert!(msg.contains("boom")),
        other => panic!("expected a panic error, got {other:?}"),
    }
    let (h, recs) = read_all(&cfg.out).unwrap();
    validate(&h, &recs).unwrap();
    assert_eq!(recs.iter().map(|r| r.work()).sum::<u64>(), 8);

    let root_panic = run_profiled(&config(&dir, "root.sppf", 1), |_| -> () { panic!("root") });
    assert!(matches!(root_panic, Err(RuntimeError::TaskPanicked(_))));
}

#[test]
fn resident_nodes_stay_bounded_by_open_scopes() {
    let dir = tempfile::tempdir().unwrap();
    let p = TreeSum {
        depth: 10,
        base: Some(1),
        ..TreeSum::default()
    };
    let report = run_profiled(&config(&dir, "m.sppf", 1), p.body()).unwrap();
    let internal = report
        .records
        .iter()
        .filter(|r| !matches!(r.data, NodeData::Step(_)))
        .count() as u64;
    // one worker: at most a finish and two asyncs per level, plus main's scopes
    assert!(
        report.peak_resident <= 3 * (p.depth as u64 + 1) + 3,
        "{}",
        report.peak_resident
    );
    assert!(report.peak_resident < internal / 10);
}

#[test]
fn charge_is_logical_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::new(dir.path().join("clock.sppf"), CounterBackend::Clock).workers(2);
    let report = run_profiled(&cfg, |ctx| {
        let r = ctx.charge(1);
        ctx.spawn(site!(), |c| c.work(10_000));
        ctx.sync().unwrap();
        r
    })
    .unwrap();
    assert!(matches!(
        report.value,
        Err(MeasureError::WrongBackend(CounterBackend::Clock))
    ));
    assert_eq!(report.header.backend, "clock");
    let p = analyze(&report.header, report.records).unwrap();
    assert!(p.main().work > 0);
}

#[test]
fn hardware_backend_runs_or_reports_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::new(dir.path().join("hw.sppf"), CounterBackend::HwCycles).workers(2);
    match run_profiled(&cfg, |ctx| ctx.work(100_000)) {
        Ok(report) => assert_eq!(report.header.backend, "cycles"),
        Err(RuntimeError::Measure(MeasureError::BackendUnavailable { .. })) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn zero_workers_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        run_profiled(&config(&dir, "z.sppf", 0), |_| ()),
        Err(RuntimeError::Config(_))
    ));
}
