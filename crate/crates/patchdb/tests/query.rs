use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use patchdb::collection::{materialize, IndexSpec};
use patchdb::query::{
    run, validate_plan, BacktraceMode, BuildSide, Catalog, CmpOp, KeyRef, PlanNode, Predicate, ProbeMode,
};
use patchdb::storage::{Layout, StoreDescriptor, VideoStore};
use patchdb::Error;
use patchdb_core::index::IndexKind;
use patchdb_core::metric::euclidean;
use patchdb_core::{
    derive_patch, make_patch, BoundingBox, DataShape, Frame, MetaValue, Metadata, Patch, PatchId, PatchSchema, Tag,
};

fn frame(t: u64) -> Frame {
    Frame::new("cam", t, 32, 8, vec![(t % 200) as u8; 32 * 8 * 3]).unwrap()
}

fn labeled(t: u64, x: u32, label: &str) -> Patch {
    let mut md = Metadata::new();
    md.insert("label".into(), MetaValue::Str(label.into()));
    make_patch(&frame(t), BoundingBox::new(x, 0, x + 2, 2).unwrap(), md).unwrap()
}

fn feature(i: u64, v: Vec<f64>) -> Patch {
    let base = labeled(i % 50, (i % 30) as u32, if i % 3 == 0 { "vehicle" } else { "pedestrian" });
    let mut md = Metadata::new();
    md.insert("i".into(), MetaValue::Int(i as i64));
    derive_patch(&base, "feat", vec![v.len()], v, md, 0).unwrap()
}

fn label_schema() -> PatchSchema {
    PatchSchema::new(DataShape::pixels())
        .with_labels(["vehicle", "pedestrian"])
        .with_key("frameno", Tag::Int)
        .with_key("bbox", Tag::BBox)
}

fn feature_schema(d: usize) -> PatchSchema {
    PatchSchema::new(DataShape::features(d)).with_labels(["vehicle", "pedestrian"]).with_key("frameno", Tag::Int)
}

struct Fixture {
    dir: TempDir,
    cat: Catalog,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap(), cat: Catalog::new() }
    }

    fn add(&mut self, name: &str, ps: &[Patch], schema: PatchSchema) -> &mut Self {
        self.add_indexed(name, ps, schema, &[])
    }

    fn add_indexed(&mut self, name: &str, ps: &[Patch], schema: PatchSchema, idx: &[IndexSpec]) -> &mut Self {
        let mut c = materialize(ps.iter().cloned().map(Ok::<_, Error>), self.dir.path().join(name), name, schema).unwrap();
        for s in idx {
            c.build_index(s).unwrap();
        }
        self.cat.add_collection(name, Arc::new(c));
        self
    }
}

fn ids(tuples: &[patchdb::query::Tuple]) -> Vec<Vec<PatchId>> {
    tuples.iter().map(|t| t.patches.iter().map(|p| p.id()).collect()).collect()
}

fn clustered(rng: &mut ChaCha8Rng, n: usize, centers: &[Vec<f64>], offset: u64) -> Vec<Patch> {
    (0..n)
        .map(|i| {
            let c = &centers[rng.random_range(0..centers.len())];
            let v = c.iter().map(|x| x + rng.random_range(-0.03..0.03)).collect();
            feature(offset + i as u64, v)
        })
        .collect()
}

#[test]
fn select_by_label() {
    let mut fx = Fixture::new();
    let ps = [labeled(0, 0, "vehicle"), labeled(0, 4, "pedestrian"), labeled(1, 0, "vehicle")];
    fx.add("c", &ps, label_schema());
    let (out, stats) = run(&PlanNode::scan("c").select(Predicate::label_is("vehicle")), &fx.cat).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(stats.root_tuples(), 2);
    assert_eq!(stats.op("scan").unwrap().tuples, 3);
}

#[test]
fn nested_loop_with_empty_side() {
    let mut fx = Fixture::new();
    fx.add("empty", &[], label_schema()).add("c", &[labeled(0, 0, "vehicle")], label_schema());
    for (l, r) in [("empty", "c"), ("c", "empty")] {
        let plan = PlanNode::scan(l).nested_loop(PlanNode::scan(r), Predicate::True);
        assert!(run(&plan, &fx.cat).unwrap().0.is_empty());
    }
}

#[test]
fn count_by_frame() {
    let mut fx = Fixture::new();
    let ps: Vec<Patch> = [0, 0, 1, 2, 2].iter().enumerate().map(|(i, &t)| labeled(t, i as u32 * 3, "vehicle")).collect();
    fx.add("c", &ps, label_schema());
    let (out, _) = run(&PlanNode::scan("c").count_by("frameno"), &fx.cat).unwrap();
    let got: Vec<(i64, i64)> = out
        .iter()
        .map(|t| (t.patches[0].frameno().unwrap(), t.patches[0].get("count").unwrap().as_int().unwrap()))
        .collect();
    assert_eq!(got, vec![(0, 2), (1, 1), (2, 2)]);
}

#[test]
fn sim_join_single_identical_vector() {
    let mut fx = Fixture::new();
    fx.add("l", &[feature(0, vec![0.5; 4])], feature_schema(4)).add("r", &[feature(1, vec![0.5; 4])], feature_schema(4));
    let (out, _) = run(&PlanNode::scan("l").sim_join(PlanNode::scan("r"), 0.0, BuildSide::Auto), &fx.cat).unwrap();
    assert_eq!(out.len(), 1);
}

#[test]
fn sim_join_equals_nested_loop_and_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let centers: Vec<Vec<f64>> = (0..40).map(|_| (0..24).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let l = clustered(&mut rng, 1000, &centers, 0);
    let r = clustered(&mut rng, 1000, &centers, 10_000);
    let mut fx = Fixture::new();
    fx.add("l", &l, feature_schema(24)).add("r", &r, feature_schema(24));
    let tau = 0.1;
    let mut brute = BTreeSet::new();
    for a in &l {
        for b in &r {
            if euclidean(a.data(), b.data()) <= tau {
                brute.insert(vec![a.id(), b.id()]);
            }
        }
    }
    assert!(brute.len() > 100, "fixture too sparse: {}", brute.len());
    let nlj = PlanNode::scan("l").nested_loop(PlanNode::scan("r"), Predicate::EuclideanWithin { a: 0, b: 1, tau });
    let nlj: BTreeSet<_> = ids(&run(&nlj, &fx.cat).unwrap().0).into_iter().collect();
    assert_eq!(nlj, brute);
    for side in [BuildSide::Left, BuildSide::Right, BuildSide::Auto] {
        let (out, _) = run(&PlanNode::scan("l").sim_join(PlanNode::scan("r"), tau, side), &fx.cat).unwrap();
        let got = ids(&out);
        assert_eq!(got.iter().cloned().collect::<BTreeSet<_>>(), brute, "{side:?}");
        assert_eq!(got.len(), brute.len());
    }
}

#[test]
fn sim_join_output_order_and_auto_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l: Vec<Patch> = (0..10).map(|i| feature(i, vec![rng.random_range(0.0..1.0), 0.0])).collect();
    let r: Vec<Patch> = (0..10_000).map(|i| feature(100 + i, vec![rng.random_range(0.0..1.0), 0.0])).collect();
    let mut fx = Fixture::new();
    fx.add("l", &l, feature_schema(2)).add("r", &r, feature_schema(2));
    let (out, stats) = run(&PlanNode::scan("l").sim_join(PlanNode::scan("r"), 0.001, BuildSide::Auto), &fx.cat).unwrap();
    assert_eq!(stats.op("sim_join").unwrap().index_probes, 10_000);
    // probe order is r's scan order; within a probe, ascending left id
    let rpos: BTreeMap<PatchId, usize> = r.iter().enumerate().map(|(i, p)| (p.id(), i)).collect();
    let keys: Vec<(usize, PatchId)> = out.iter().map(|t| (rpos[&t.patches[1].id()], t.patches[0].id())).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    assert!(!keys.is_empty());
}

#[test]
fn dedup_examples() {
    let mut fx = Fixture::new();
    let tau = 1.0;
    let same: Vec<Patch> = (0..3).map(|i| feature(i, vec![1.0, 1.0])).collect();
    let far: Vec<Patch> = (0..4).map(|i| feature(10 + i, vec![i as f64 * 5.0, 0.0])).collect();
    let chain = vec![feature(20, vec![0.0, 0.0]), feature(21, vec![0.8, 0.0]), feature(22, vec![1.6, 0.0])];
    fx.add("same", &same, feature_schema(2)).add("far", &far, feature_schema(2)).add("chain", &chain, feature_schema(2));
    let dd = |c: &str| ids(&run(&PlanNode::scan(c).dedup(tau, false), &fx.cat).unwrap().0);
    assert_eq!(dd("same").len(), 1);
    assert_eq!(dd("far").len(), 4);
    assert_eq!(dd("chain"), vec![vec![chain[0].id()], vec![chain[2].id()]]);
}

#[test]
fn group_dedup_annotates_labels() {
    let mut fx = Fixture::new();
    // ids 0 and 3 are vehicles, the rest pedestrians
    let ps: Vec<Patch> = (0..6).map(|i| feature(i, vec![if i < 3 { 0.0 } else { 10.0 }])).collect();
    fx.add("c", &ps, feature_schema(1));
    let plan = PlanNode::scan("c").dedup(0.5, true).select(Predicate::ListContains {
        slot: 0,
        key: "group_labels".into(),
        value: "vehicle".into(),
    });
    let (out, _) = run(&plan, &fx.cat).unwrap();
    assert_eq!(out.len(), 2);
    for t in &out {
        assert_eq!(t.patches[0].get("group_size"), Some(&MetaValue::Int(3)));
        let labels = t.patches[0].get("group_labels").unwrap().as_str_list().unwrap();
        assert_eq!(labels, ["pedestrian".to_string(), "vehicle".to_string()]);
    }
}

fn store_with(dir: &TempDir, frames: u64) -> VideoStore {
    let desc = StoreDescriptor::new(Layout::FrameFile, dir.path().join("base"));
    VideoStore::ingest((0..frames).map(frame), &desc).unwrap()
}

#[test]
fn backtrace_counts_and_equivalence() {
    let mut fx = Fixture::new();
    let store = store_with(&fx.dir, 1000);
    fx.cat.add_store("base", store);
    let picks = [7u64, 100, 250, 999];
    let ps: Vec<Patch> = picks.iter().map(|&t| labeled(t, 0, "vehicle")).collect();
    fx.add("one", &ps[..1], label_schema()).add("many", &ps, label_schema());
    let mut results = Vec::new();
    for (coll, k) in [("one", 1u64), ("many", 4)] {
        for (mode, want) in [(BacktraceMode::LineageIndex, k), (BacktraceMode::Rescan, 1000)] {
            let (out, stats) = run(&PlanNode::scan(coll).backtrace("base", mode, 0), &fx.cat).unwrap();
            assert_eq!(stats.base_io.records_read, want, "{coll} {mode:?}");
            for t in &out {
                assert_eq!(t.frames[0].frame_no() as i64, t.patches[0].frameno().unwrap());
                assert_eq!(*t.frames[0], frame(t.frames[0].frame_no()));
            }
            results.push(out);
        }
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[2], results[3]);
}

#[test]
fn backtrace_missing_base_frame() {
    let mut fx = Fixture::new();
    let store = store_with(&fx.dir, 5);
    fx.cat.add_store("base", store);
    fx.add("c", &[labeled(9, 0, "vehicle")], label_schema());
    for mode in [BacktraceMode::LineageIndex, BacktraceMode::Rescan] {
        let r = run(&PlanNode::scan("c").backtrace("base", mode, 0), &fx.cat);
        assert!(matches!(r, Err(Error::MissingBaseFrame { frame_no: 9, .. })), "{mode:?}");
    }
}

#[test]
fn bicycle_fails_validation_at_select() {
    let mut fx = Fixture::new();
    fx.add("c", &[labeled(0, 0, "vehicle")], label_schema());
    let plan = PlanNode::scan("c").select(Predicate::label_is("bicycle"));
    let Err(Error::Validation(vs)) = run(&plan, &fx.cat) else { panic!("expected validation error") };
    assert_eq!(vs.len(), 1);
    assert_eq!(vs[0].stage_name, "select");
    assert!(vs[0].to_string().contains("select"));
    assert!(vs[0].message.contains("bicycle"));
}

#[test]
fn validation_collects_every_problem() {
    let mut fx = Fixture::new();
    fx.add("f24", &[feature(0, vec![0.0; 24])], feature_schema(24))
        .add("f32", &[feature(1, vec![0.0; 32])], feature_schema(32))
        .add("px", &[labeled(0, 0, "vehicle")], label_schema());
    let plan = PlanNode::scan("f24")
        .sim_join(PlanNode::scan("f32"), 0.1, BuildSide::Auto)
        .nested_loop(PlanNode::scan("nope"), Predicate::True);
    let vs = validate_plan(&plan, &fx.cat).unwrap_err();
    let msgs: Vec<String> = vs.iter().map(ToString::to_string).collect();
    assert_eq!(vs.len(), 2, "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("sim_join") && m.contains("24") && m.contains("32")));
    assert!(msgs.iter().any(|m| m.contains("scan") && m.contains("nope")));
    assert!(validate_plan(&PlanNode::scan("px").dedup(0.1, false), &fx.cat).is_err());
    assert!(validate_plan(&PlanNode::scan("px").count_by("missing"), &fx.cat).is_err());
    assert!(validate_plan(&PlanNode::scan("px").backtrace("none", BacktraceMode::Rescan, 0), &fx.cat).is_err());
}

#[test]
fn runtime_tag_mismatch_aborts() {
    let mut fx = Fixture::new();
    // the schema promises nothing about `mixed`, so validation passes
    let mk = |i: u32, v: MetaValue| {
        let mut md = Metadata::new();
        md.insert("mixed".into(), v);
        make_patch(&frame(0), BoundingBox::new(i, 0, i + 1, 1).unwrap(), md).unwrap()
    };
    fx.add("c", &[mk(0, MetaValue::Int(1)), mk(1, MetaValue::Str("x".into()))], PatchSchema::any().with_key("mixed", Tag::Int));
    let plan = PlanNode::scan("c").select(Predicate::key_lit(0, "mixed", CmpOp::Ge, 0i64));
    let mut e = patchdb::query::execute(&plan, &fx.cat).unwrap();
    assert!(e.next().unwrap().is_ok());
    assert!(matches!(e.next(), Some(Err(Error::Core(patchdb_core::Error::TagMismatch { .. })))));
    assert!(e.next().is_none());
}

#[test]
fn index_lookup_probes_once() {
    let mut fx = Fixture::new();
    let ps: Vec<Patch> = (0..20).map(|t| labeled(t, 0, if t == 13 { "pedestrian" } else { "vehicle" })).collect();
    fx.add_indexed("c", &ps, label_schema(), &[IndexSpec::new("lab", IndexKind::Hash, Some("label"))]);
    let plan = PlanNode::IndexLookup { collection: "c".into(), index: "lab".into(), key: "pedestrian".into() };
    let (out, stats) = run(&plan, &fx.cat).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].patches[0].frameno(), Some(13));
    assert_eq!(stats.index_probes(), 1);
}

#[test]
fn plan_parses_from_toml() {
    let text = r#"
op = "count_by"
key = "frameno"
[input]
op = "select"
input = { op = "scan", collection = "blobs" }
predicate = { op = "cmp", left = { key = "label" }, cmp = "=", right = "vehicle" }
"#;
    let plan: PlanNode = toml::from_str(text).unwrap();
    assert_eq!(plan, PlanNode::scan("blobs").select(Predicate::label_is("vehicle")).count_by("frameno"));
    assert!(toml::from_str::<PlanNode>("op = \"scan\"\ncollection = \"a\"\nextra = 1").is_err());
}

fn index_join_fixture(keys: &[(u64, u32)], right: &[(u64, u32)]) -> (Fixture, Vec<Patch>, Vec<Patch>) {
    let mut fx = Fixture::new();
    let l: Vec<Patch> = keys.iter().map(|&(t, x)| labeled(t, x, "vehicle")).collect();
    let r: Vec<Patch> = right.iter().map(|&(t, x)| labeled(t, x, "pedestrian")).collect();
    fx.add("l", &l, label_schema()).add_indexed(
        "r",
        &r,
        label_schema(),
        &[IndexSpec::new("fno", IndexKind::Ordered, Some("frameno")), IndexSpec::new("boxes", IndexKind::RTree, None)],
    );
    (fx, l, r)
}

fn pair_set(fx: &Fixture, plan: &PlanNode) -> BTreeSet<Vec<PatchId>> {
    ids(&run(plan, &fx.cat).unwrap().0).into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn index_join_matches_nested_loop(
        l in prop::collection::btree_set((0u64..12, 0u32..14), 0..25),
        r in prop::collection::btree_set((0u64..12, 0u32..14), 1..25),
        lo in -3i32..2, span in 0i32..4,
    ) {
        let (l, r): (Vec<_>, Vec<_>) = (l.into_iter().collect(), r.into_iter().collect());
        let (fx, _, _) = index_join_fixture(&l, &r);
        let join = |mode: ProbeMode| PlanNode::IndexJoin {
            left: Box::new(PlanNode::scan("l")),
            collection: "r".into(),
            index: "fno".into(),
            probe_slot: 0,
            probe_key: Some("frameno".into()),
            mode,
            residual: None,
        };
        let eq = Predicate::keys(KeyRef::new(1, "frameno"), CmpOp::Eq, KeyRef::new(0, "frameno"));
        prop_assert_eq!(pair_set(&fx, &join(ProbeMode::Eq)), pair_set(&fx, &PlanNode::scan("l").nested_loop(PlanNode::scan("r"), eq)));

        let (lo, hi) = (f64::from(lo), f64::from(lo + span));
        let range = Predicate::and(vec![
            Predicate::keys(KeyRef::new(1, "frameno"), CmpOp::Ge, KeyRef::new(0, "frameno").plus(lo)),
            Predicate::keys(KeyRef::new(1, "frameno"), CmpOp::Lt, KeyRef::new(0, "frameno").plus(hi)),
        ]);
        prop_assert_eq!(
            pair_set(&fx, &join(ProbeMode::Range { lo, hi })),
            pair_set(&fx, &PlanNode::scan("l").nested_loop(PlanNode::scan("r"), range))
        );
    }

    #[test]
    fn dedup_is_idempotent(seed in any::<u64>(), n in 1usize..120, tau in 0.05f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps: Vec<Patch> = (0..n as u64).map(|i| feature(i, vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])).collect();
        let mut fx = Fixture::new();
        fx.add("c", &ps, feature_schema(2));
        let once = run(&PlanNode::scan("c").dedup(tau, false), &fx.cat).unwrap().0;
        let kept: Vec<Patch> = once.iter().map(|t| (*t.patches[0]).clone()).collect();
        fx.add("once", &kept, feature_schema(2));
        let twice = run(&PlanNode::scan("once").dedup(tau, false), &fx.cat).unwrap().0;
        prop_assert_eq!(ids(&once), ids(&twice));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[..i] {
                prop_assert!(euclidean(a.data(), b.data()) > tau);
            }
        }
    }

    #[test]
    fn stats_match_drained_length(n in 0usize..40, cut in 0u64..12) {
        let ps: Vec<Patch> = (0..n as u64).map(|i| labeled(i % 12, (i / 12) as u32 * 3, "vehicle")).collect();
        let mut fx = Fixture::new();
        fx.add("c", &ps, label_schema());
        let plan = PlanNode::scan("c").select(Predicate::key_lit(0, "frameno", CmpOp::Lt, cut as i64));
        let (out, stats) = run(&plan, &fx.cat).unwrap();
        prop_assert_eq!(stats.root_tuples(), out.len() as u64);
        prop_assert_eq!(stats.collection_io.records_read, n as u64);
    }
}

#[test]
fn rtree_join_matches_nested_loop() {
    let l: Vec<(u64, u32)> = (0..10).map(|i| (i % 3, i as u32)).collect();
    let r: Vec<(u64, u32)> = (0..10).map(|i| (i % 4, (i * 3 % 7) as u32)).collect();
    let (fx, _, _) = index_join_fixture(&l, &r);
    let join = PlanNode::IndexJoin {
        left: Box::new(PlanNode::scan("l")),
        collection: "r".into(),
        index: "boxes".into(),
        probe_slot: 0,
        probe_key: None,
        mode: ProbeMode::Intersects,
        residual: None,
    };
    let nlj = PlanNode::scan("l").nested_loop(PlanNode::scan("r"), Predicate::BoxIntersects { a: 0, b: 1 });
    let a = pair_set(&fx, &join);
    assert_eq!(a, pair_set(&fx, &nlj));
    assert!(!a.is_empty());
}
