use std::collections::BTreeSet;

use patchdb::bench::{behind_pairs, run_benchmark, BenchConfig, BenchRow, QueryId, DEFAULT_DEPTH_MARGIN, PEDESTRIAN, VEHICLE};
use patchdb::storage::Layout;
use patchdb_core::scene::{gen_scene, GroundTruth, SceneSpec};

fn expected(q: &str, cfg: &BenchConfig, truth: &GroundTruth, photos: &GroundTruth) -> u64 {
    let target = *truth.entity_labels.keys().next().unwrap();
    match q {
        "q1" => photos.duplicate_pairs.len() as u64,
        "q2" => truth.frames_with_label(VEHICLE),
        "q3" | "q5" => truth.frames_of(target).len() as u64,
        "q4" => truth.distinct(PEDESTRIAN),
        "q6" => behind_pairs(truth, cfg.depth_margin).len() as u64,
        _ => unreachable!(),
    }
}

fn strip_times(rows: &[BenchRow]) -> Vec<BenchRow> {
    rows.iter().cloned().map(|r| BenchRow { etl_ms: 0.0, query_ms: 0.0, ..r }).collect()
}

#[test]
fn noise_free_counts_match_ground_truth() {
    let cfg = BenchConfig { seeds: vec![5], ..BenchConfig::default() };
    let a = run_benchmark(&cfg, None).unwrap();
    let truth = gen_scene(&SceneSpec { seed: 5, ..cfg.scene.clone() }).unwrap().1;
    let photos = gen_scene(&SceneSpec { seed: 5, ..cfg.photos.clone() }).unwrap().1;
    let variants: usize = QueryId::ALL.iter().map(|q| q.variants().len()).sum();
    assert_eq!(a.rows.len(), variants);
    for r in &a.rows {
        assert_eq!(r.result_count, expected(&r.query, &cfg, &truth, &photos), "{r:?}");
        assert_eq!((r.precision, r.recall), (1.0, 1.0), "{r:?}");
    }
    // the fixture exercises every query
    assert!(a.rows.iter().all(|r| r.result_count > 0), "{}", a.summary());
    assert!(behind_pairs(&truth, DEFAULT_DEPTH_MARGIN).len() > 1);
    let b = run_benchmark(&cfg, None).unwrap();
    assert_eq!(strip_times(&a.rows), strip_times(&b.rows));
}

#[test]
fn single_frame_target_is_one_probe() {
    // a one-frame lifetime leaves every entity in exactly one frame
    let mut cfg = BenchConfig { queries: vec![QueryId::Q5], variants: vec!["hash_index".into()], ..BenchConfig::default() };
    cfg.scene = SceneSpec { lifetime: 1, ..SceneSpec::traffic(0, 40, 30) };
    let truth = gen_scene(&SceneSpec { seed: 1, ..cfg.scene.clone() }).unwrap().1;
    let target = *truth.entity_labels.keys().next().unwrap();
    assert_eq!(truth.frames_of(target).len(), 1);
    let r = &run_benchmark(&cfg, None).unwrap().rows[0];
    assert_eq!((r.result_count, r.index_probes, r.recall), (1, 1, 1.0));
}

#[test]
fn layouts_agree_on_results() {
    let cfg = BenchConfig {
        queries: vec![QueryId::Q2, QueryId::Q3],
        layouts: Layout::ALL.to_vec(),
        scene: SceneSpec::traffic(0, 80, 6),
        ..BenchConfig::default()
    };
    let rows = run_benchmark(&cfg, None).unwrap().rows;
    assert_eq!(rows.len(), 3 * 3);
    let counts: BTreeSet<(String, String, u64)> = rows.iter().map(|r| (r.query.clone(), r.variant.clone(), r.result_count)).collect();
    assert_eq!(counts.len(), 3);
    let rescan: Vec<&BenchRow> = rows.iter().filter(|r| r.variant == "rescan").collect();
    assert_eq!(rescan[0].records_read, 80);
    assert_eq!(rescan[1].frames_decoded, 80);
}
