//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass a criterion number to run only that one.

use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchdb::bench::{
    behind_pairs, clustered_features, feature_patch, run_benchmark, BenchConfig, BenchRow, CodecChoice, QueryId,
    PEDESTRIAN, VEHICLE,
};
use patchdb::collection::materialize;
use patchdb::query::{run, BuildSide, Catalog, PlanNode, Predicate};
use patchdb::storage::{IoCounters, Layout, StoreDescriptor, VideoStore};
use patchdb::Error;
use patchdb_core::etl::PaletteEntry;
use patchdb_core::index::{BallTree, OrderedIndex, RTree, RectQuery};
use patchdb_core::metric::euclidean;
use patchdb_core::patch::KEY_BBOX;
use patchdb_core::scene::{gen_scene, SceneSpec};
use patchdb_core::{make_patch, BoundingBox, DataShape, Frame, MetaValue, Metadata, Patch, PatchSchema};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "index oracle equivalence", index_oracles),
    (2, "similarity-join speedup", sim_join_speedup),
    (3, "lineage speedup", lineage_speedup),
    (4, "storage compression", storage_compression),
    (5, "pushdown accounting", pushdown_accounting),
    (6, "lossy-quality accuracy monotonicity", lossy_monotonicity),
    (7, "plan-order accuracy direction", plan_order_direction),
    (8, "nonlinear join cost curve", join_cost_curve),
    (9, "index build-cost ordering", index_build_cost),
    (10, "end-to-end determinism", end_to_end_determinism),
];

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in CRITERIA {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {n:>2}. {name} ({:.1}s): {}", t.elapsed().as_secs_f64(), v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn within_budget(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s budget", e.as_secs_f64(), limit.as_secs()))
}

fn out_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).unwrap();
    d
}

// 1 --------------------------------------------------------------------

fn index_oracles() -> Verdict {
    let t = Instant::now();
    let mut mismatches = Vec::new();
    let mut queries = 0;
    for (trials, n) in [(50u64, 1_000usize), (5, 10_000)] {
        for d in [2usize, 8, 32] {
            for trial in 0..trials {
                let mut rng = ChaCha8Rng::seed_from_u64(trial * 1000 + d as u64 + n as u64);
                let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
                let tree = BallTree::build(pts.iter().enumerate().map(|(i, p)| (i as u64, p.as_slice())), 32).unwrap();
                for _ in 0..10 {
                    let q: Vec<f64> = (0..d).map(|_| rng.random_range(-0.1..1.1)).collect();
                    let mut dist: Vec<(u64, f64)> = pts.iter().enumerate().map(|(i, p)| (i as u64, euclidean(p, &q))).collect();
                    // a radius that captures a few percent of the points
                    let mut sorted: Vec<f64> = dist.iter().map(|x| x.1).collect();
                    sorted.sort_by(f64::total_cmp);
                    let r = sorted[n / 30];
                    let want: Vec<u64> = dist.iter().filter(|x| x.1 <= r).map(|x| x.0).collect();
                    if tree.within(&q, r).unwrap() != want {
                        mismatches.push(format!("within n={n} d={d} trial={trial}"));
                    }
                    let k = rng.random_range(1..=50);
                    dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                    dist.truncate(k);
                    if tree.knn(&q, k).unwrap() != dist {
                        mismatches.push(format!("knn n={n} d={d} trial={trial}"));
                    }
                    queries += 2;
                }
            }
        }
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(trial + 77 * n as u64);
            let boxes: Vec<BoundingBox> = (0..n).map(|_| random_box(&mut rng, 1000, 60)).collect();
            let tree = RTree::build(boxes.iter().enumerate().map(|(i, b)| (*b, i as u64))).unwrap();
            for _ in 0..10 {
                let q = random_box(&mut rng, 1000, 300);
                for mode in [RectQuery::Intersects, RectQuery::Contains] {
                    let want: BTreeSet<u64> = boxes
                        .iter()
                        .enumerate()
                        .filter(|(_, b)| match mode {
                            RectQuery::Intersects => b.intersects(&q),
                            RectQuery::Contains => q.contains(b),
                        })
                        .map(|(i, _)| i as u64)
                        .collect();
                    let got: BTreeSet<u64> = tree.query(&q, mode).into_iter().collect();
                    if got != want {
                        mismatches.push(format!("rtree {mode:?} n={n} trial={trial}"));
                    }
                    queries += 1;
                }
            }
        }
    }
    let (fast, budget) = within_budget(t, Duration::from_secs(60));
    let detail = format!("{queries} queries, {} mismatches {:?}; {budget}", mismatches.len(), mismatches.iter().take(3).collect::<Vec<_>>());
    verdict(mismatches.is_empty() && fast, detail)
}

fn random_box(rng: &mut ChaCha8Rng, extent: u32, max_side: u32) -> BoundingBox {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let x = rng.random_range(0..extent - w);
    let y = rng.random_range(0..extent - h);
    BoundingBox::new(x, y, x + w, y + h).unwrap()
}

// 2 --------------------------------------------------------------------

fn feature_catalog(dir: &std::path::Path, sides: &[(&str, &[Patch])]) -> Catalog {
    let mut cat = Catalog::new();
    for (name, ps) in sides {
        let d = ps.first().map_or(1, |p| p.data().len());
        let c = materialize(ps.iter().cloned().map(Ok::<_, Error>), dir.join(name), name, PatchSchema::new(DataShape::features(d)))
            .unwrap();
        cat.add_collection(name, Arc::new(c));
    }
    cat
}

fn pairs(out: &[patchdb::query::Tuple]) -> BTreeSet<(u64, u64)> {
    out.iter().map(|t| (t.patches[0].id(), t.patches[1].id())).collect()
}

fn sim_join_speedup() -> Verdict {
    let t0 = Instant::now();
    let n = 20_000;
    // 1000 tight clusters shared by both sides: same-cluster pairs sit
    // inside tau and cross-cluster pairs far outside, so about 1/1000 of
    // all pairs match
    let mut l = clustered_features("v", 1, 2 * n, 24, 1000, 0.05);
    let r = l.split_off(n);
    let dir = tempfile::tempdir().unwrap();
    let cat = feature_catalog(dir.path(), &[("l", &l), ("r", &r)]);
    let tau = 0.5;
    let t = Instant::now();
    let (sj, _) = run(&PlanNode::scan("l").sim_join(PlanNode::scan("r"), tau, BuildSide::Auto), &cat).unwrap();
    let sj_t = t.elapsed();
    let t = Instant::now();
    let (nl, _) = run(&PlanNode::scan("l").nested_loop(PlanNode::scan("r"), Predicate::EuclideanWithin { a: 0, b: 1, tau }), &cat).unwrap();
    let nl_t = t.elapsed();
    let selectivity = sj.len() as f64 / (n * n) as f64;
    let same = pairs(&sj) == pairs(&nl) && sj.len() == nl.len();
    let speedup = nl_t.as_secs_f64() / sj_t.as_secs_f64();
    let (fast, budget) = within_budget(t0, Duration::from_secs(120));
    verdict(
        same && speedup >= 5.0 && fast,
        format!(
            "sim_join {:.2}s, nested_loop {:.2}s, speedup {speedup:.1}x, {} pairs (selectivity {:.3}%), outputs identical: {same}; {budget}",
            sj_t.as_secs_f64(),
            nl_t.as_secs_f64(),
            sj.len(),
            selectivity * 100.0
        ),
    )
}

// 3 --------------------------------------------------------------------

fn lineage_speedup() -> Verdict {
    let mut scene = SceneSpec { lifetime: 10, width: 160, height: 120, ..SceneSpec::traffic(3, 5000, 400) };
    scene.entity_w = [24, 40];
    let truth = gen_scene(&scene).unwrap().1;
    let target = *truth.entity_labels.keys().find(|&&id| truth.frames_of(id).len() == 10).expect("an entity visible for 10 frames");
    let cfg = BenchConfig {
        seeds: vec![3],
        queries: vec![QueryId::Q3],
        target: Some(target),
        scene,
        ..BenchConfig::default()
    };
    let rows = run_benchmark(&cfg, None).unwrap().rows;
    let row = |v: &str| rows.iter().find(|r| r.variant == v).unwrap().clone();
    let (li, rs) = (row("lineage_index"), row("rescan"));
    let ok = li.records_read == 10 && rs.records_read == 5000 && li.result_count == 10 && rs.result_count == 10
        && (li.precision, li.recall) == (1.0, 1.0)
        && (rs.precision, rs.recall) == (1.0, 1.0);
    verdict(
        ok,
        format!(
            "records_read lineage_index={} rescan={}, results {} / {}, query time {:.1}ms vs {:.1}ms",
            li.records_read, rs.records_read, li.result_count, rs.result_count, li.query_ms, rs.query_ms
        ),
    )
}

// 4 and 5 --------------------------------------------------------------

fn ingest_scene(dir: &std::path::Path, frames: u32) -> Vec<VideoStore> {
    Layout::ALL
        .iter()
        .map(|&l| {
            let (fs, _) = gen_scene(&SceneSpec::traffic(11, frames, 8)).unwrap();
            VideoStore::ingest(fs, &StoreDescriptor::new(l, dir.join(l.name()))).unwrap()
        })
        .collect()
}

fn storage_compression() -> Verdict {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let stores = ingest_scene(dir.path(), 1000);
    let [ff, enc, seg] = [0, 1, 2].map(|i| stores[i].store_size());
    let ratio = enc as f64 / ff as f64;
    let seg_ratio = seg as f64 / enc as f64;
    let (fast, budget) = within_budget(t, Duration::from_secs(120));
    verdict(
        ratio <= 0.10 && seg_ratio <= 2.0 && fast,
        format!(
            "frame_file {ff} B, encoded_file {enc} B ({:.2}% of frame_file), segmented_file {seg} B ({seg_ratio:.2}x encoded); {budget}",
            ratio * 100.0
        ),
    )
}

fn pushdown_accounting() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let stores = ingest_scene(dir.path(), 1000);
    let io: Vec<_> = stores
        .iter()
        .map(|s| {
            let c = IoCounters::new();
            let n = s.scan(Some((100, 200)), c.clone()).unwrap().filter(|f| f.is_ok()).count();
            assert_eq!(n, 100);
            c.snapshot()
        })
        .collect();
    let ok = io[0].records_read == 100 && io[2].clips_decoded == 3 && io[1].frames_decoded == 200;
    verdict(
        ok,
        format!(
            "frame_file records_read={}, segmented_file clips_decoded={} (frames_decoded={}), encoded_file frames_decoded={}",
            io[0].records_read, io[2].clips_decoded, io[2].frames_decoded, io[1].frames_decoded
        ),
    )
}

// 6 --------------------------------------------------------------------

fn lossy_monotonicity() -> Verdict {
    // vehicle and pedestrian 40 units apart on the red channel
    let palette = vec![PaletteEntry::new([240, 60, 60], VEHICLE), PaletteEntry::new([200, 60, 60], PEDESTRIAN)];
    let scene = SceneSpec { palette, ..SceneSpec::traffic(0, 60, 8) };
    let seeds: Vec<u64> = (1..=20).collect();
    let cfg = BenchConfig {
        seeds: seeds.clone(),
        queries: vec![QueryId::Q2],
        layouts: vec![Layout::EncodedFile],
        codecs: vec![CodecChoice::High, CodecChoice::Medium, CodecChoice::Low],
        scene,
        ..BenchConfig::default()
    };
    let rows = run_benchmark(&cfg, None).unwrap().rows;
    let mut good = 0;
    let mut high_perfect = true;
    let mut sample = String::new();
    for s in &seeds {
        let rec = |q: &str| rows.iter().find(|r| r.seed == *s && r.quality == q).unwrap().recall;
        let (h, m, l) = (rec("high"), rec("medium"), rec("low"));
        high_perfect &= h == 1.0;
        good += usize::from(h == 1.0 && h >= m && m >= l && l < 1.0);
        if *s == 1 {
            sample = format!("seed 1 recall high={h:.3} medium={m:.3} low={l:.3}");
        }
    }
    verdict(good >= 18 && high_perfect, format!("{good}/20 seeds monotone with low < 1; {sample}"))
}

// 7 --------------------------------------------------------------------

fn plan_order_direction() -> Verdict {
    let mut scene = SceneSpec { lifetime: 2, label_weights: vec![0.1, 0.8, 0.1], ..SceneSpec::traffic(0, 400, 300) };
    scene.appearance_separation = 0.2;
    let seeds: Vec<u64> = (1..=20).collect();
    let cfg = BenchConfig {
        seeds: seeds.clone(),
        queries: vec![QueryId::Q4],
        label_noise_p: 0.2,
        scene,
        ..BenchConfig::default()
    };
    let rows = run_benchmark(&cfg, None).unwrap().rows;
    let (mut recall_ok, mut time_ok, mut min_p) = (0, 0, f64::INFINITY);
    let mut sums = [0.0f64; 4];
    for s in &seeds {
        let get = |v: &str| -> &BenchRow { rows.iter().find(|r| r.seed == *s && r.variant == v).unwrap() };
        let (sd, df) = (get("select_dedup"), get("dedup_filter"));
        recall_ok += usize::from(df.recall >= sd.recall);
        time_ok += usize::from(df.query_ms >= sd.query_ms);
        min_p = min_p.min(sd.precision).min(df.precision);
        for (i, x) in [sd.precision, sd.recall, df.precision, df.recall].into_iter().enumerate() {
            sums[i] += x / seeds.len() as f64;
        }
    }
    verdict(
        recall_ok >= 18 && min_p >= 0.9 && time_ok >= 15,
        format!(
            "recall(dedup_filter) >= recall(select_dedup) on {recall_ok}/20, slower on {time_ok}/20, min precision {min_p:.3}; mean p/r select_dedup {:.3}/{:.3}, dedup_filter {:.3}/{:.3}",
            sums[0], sums[1], sums[2], sums[3]
        ),
    )
}

// 8 --------------------------------------------------------------------

fn join_cost_curve() -> Verdict {
    let ns = [1000usize, 2000, 4000, 8000, 16000];
    let dims = [2usize, 64];
    let dir = tempfile::tempdir().unwrap();
    let mut ms = vec![vec![0.0; ns.len()]; dims.len()];
    let mut csv = String::from("n,d,sim_join_ms,pairs\n");
    for (di, &d) in dims.iter().enumerate() {
        for (ni, &n) in ns.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64((d * 100_000 + n) as u64);
            let mut side = |v: &str| -> Vec<Patch> {
                (0..n).map(|i| feature_patch(v, i as u64, (0..d).map(|_| rng.random_range(0.0..1.0)).collect())).collect()
            };
            let (l, r) = (side("l"), side("r"));
            let sub = dir.path().join(format!("{d}-{n}"));
            std::fs::create_dir_all(&sub).unwrap();
            let cat = feature_catalog(&sub, &[("l", &l), ("r", &r)]);
            let plan = PlanNode::scan("l").sim_join(PlanNode::scan("r"), 0.01, BuildSide::Auto);
            let mut best = f64::INFINITY;
            let mut count = 0;
            for _ in 0..3 {
                let (out, stats) = run(&plan, &cat).unwrap();
                let id = stats.op("sim_join").unwrap().id;
                best = best.min(stats.self_ns(id) as f64 / 1e6);
                count = out.len();
            }
            ms[di][ni] = best;
            csv.push_str(&format!("{n},{d},{best:.3},{count}\n"));
        }
    }
    let path = out_dir().join("sim_join_curve.csv");
    std::fs::write(&path, &csv).unwrap();
    let increasing = ms.iter().all(|row| row.windows(2).all(|w| w[1] > w[0]));
    let high_dim_slower = (0..ns.len()).all(|i| ms[1][i] > ms[0][i]);
    let fmt = |row: &[f64]| row.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/");
    verdict(
        increasing && high_dim_slower,
        format!("ms at n=1k..16k: d=2 {} ; d=64 {} ; csv {}", fmt(&ms[0]), fmt(&ms[1]), path.display()),
    )
}

// 9 --------------------------------------------------------------------

fn index_build_cost() -> Verdict {
    let n = 100_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frame = Frame::new("v", 0, 1, 1, vec![0; 3]).unwrap();
    let base = make_patch(&frame, BoundingBox::new(0, 0, 1, 1).unwrap(), Metadata::new()).unwrap();
    let patches: Vec<Patch> = (0..n)
        .map(|i| {
            let mut md = Metadata::new();
            md.insert("k".into(), MetaValue::Int(rng.random_range(0..1_000_000)));
            md.insert(KEY_BBOX.into(), MetaValue::BBox(random_box(&mut rng, 10_000, 50)));
            md.insert("i".into(), MetaValue::Int(i as i64));
            patchdb_core::derive_patch(&base, "entry", vec![0], vec![], md, 0).unwrap()
        })
        .collect();
    let time = |f: &mut dyn FnMut()| {
        (0..3)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let ordered = time(&mut || {
        std::hint::black_box(OrderedIndex::build(&patches, "k").unwrap());
    });
    let rtree = time(&mut || {
        let entries = patches.iter().map(|p| (p.get(KEY_BBOX).and_then(MetaValue::as_bbox).unwrap(), p.id()));
        std::hint::black_box(RTree::build(entries).unwrap());
    });
    verdict(
        rtree > ordered,
        format!("100k entries: r-tree {:.1}ms, ordered {:.1}ms, ratio {:.1}x", rtree * 1e3, ordered * 1e3, rtree / ordered),
    )
}

// 10 -------------------------------------------------------------------

fn end_to_end_determinism() -> Verdict {
    let t = Instant::now();
    let scene = SceneSpec { lifetime: 30, ..SceneSpec::traffic(0, 300, 120) };
    let cfg = BenchConfig { seeds: vec![42], scene, ..BenchConfig::default() };
    let a = run_benchmark(&cfg, None).unwrap();
    let b = run_benchmark(&cfg, None).unwrap();
    let truth = gen_scene(&SceneSpec { seed: 42, ..cfg.scene.clone() }).unwrap().1;
    let photos = gen_scene(&SceneSpec { seed: 42, ..cfg.photos.clone() }).unwrap().1;
    let target = *truth.entity_labels.keys().next().unwrap();
    let mut wrong = Vec::new();
    for r in &a.rows {
        let want = match r.query.as_str() {
            "q1" => photos.duplicate_pairs.len() as u64,
            "q2" => truth.frames_with_label(VEHICLE),
            "q3" | "q5" => truth.frames_of(target).len() as u64,
            "q4" => truth.distinct(PEDESTRIAN),
            _ => behind_pairs(&truth, cfg.depth_margin).len() as u64,
        };
        if r.result_count != want {
            wrong.push(format!("{}/{} got {} want {want}", r.query, r.variant, r.result_count));
        }
    }
    let untimed = |rows: &[BenchRow]| -> Vec<BenchRow> {
        rows.iter().cloned().map(|r| BenchRow { etl_ms: 0.0, query_ms: 0.0, ..r }).collect()
    };
    let same = untimed(&a.rows) == untimed(&b.rows);
    let (fast, budget) = within_budget(t, Duration::from_secs(300));
    let counts: Vec<String> = a.rows.iter().map(|r| format!("{}/{}={}", r.query, r.variant, r.result_count)).collect();
    verdict(
        wrong.is_empty() && same && fast,
        format!("{} rows, mismatches {wrong:?}, runs identical: {same}; {}; {budget}", a.rows.len(), counts.join(" ")),
    )
}
