//! Benchmark harness: seeded scenes, the six query analogs, and CSV reports
//! scored against the generator's ground truth.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use patchdb_core::codec::{CodecConfig, Quality};
use patchdb_core::etl::{BlobParams, GeneratorSpec, TransformerSpec, DEFAULT_BINS};
use patchdb_core::index::{IndexKind, DEFAULT_LEAF_SIZE};
use patchdb_core::patch::{KEY_BBOX, KEY_DEPTH, KEY_FRAMENO, KEY_GROUP_LABELS, KEY_TEXT};
use patchdb_core::scene::{gen_scene, GroundTruth, SceneKind, SceneSpec};
use patchdb_core::{derive_patch, make_patch, BoundingBox, Frame, MetaValue, Metadata, Patch};

use crate::collection::{Collection, IndexSpec};
use crate::error::{Error, Result};
use crate::pipeline::{run_etl, EtlSpec};
use crate::query::{
    run, BacktraceMode, BuildSide, Catalog, CmpOp, ExecStats, KeyRef, PlanNode, Predicate, ProbeMode, Tuple,
};
use crate::storage::{IoCounters, Layout, StoreDescriptor, VideoStore};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_DEPTH_MARGIN: f64 = 0.05;
pub const DEFAULT_MIN_AREA: u32 = 50;
pub const VEHICLE: &str = "vehicle";
pub const PEDESTRIAN: &str = "pedestrian";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryId {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    Q6,
}

impl QueryId {
    pub const ALL: [QueryId; 6] = [QueryId::Q1, QueryId::Q2, QueryId::Q3, QueryId::Q4, QueryId::Q5, QueryId::Q6];

    pub fn name(self) -> &'static str {
        match self {
            QueryId::Q1 => "q1",
            QueryId::Q2 => "q2",
            QueryId::Q3 => "q3",
            QueryId::Q4 => "q4",
            QueryId::Q5 => "q5",
            QueryId::Q6 => "q6",
        }
    }

    /// Plan variants, default first.
    pub fn variants(self) -> &'static [&'static str] {
        match self {
            QueryId::Q1 => &["sim_join", "nested_loop"],
            QueryId::Q2 => &["scan"],
            QueryId::Q3 => &["lineage_index", "rescan"],
            QueryId::Q4 => &["select_dedup", "dedup_filter"],
            QueryId::Q5 => &["hash_index", "scan"],
            QueryId::Q6 => &["nested_loop"],
        }
    }
}

impl std::str::FromStr for QueryId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryId::ALL.into_iter().find(|q| q.name() == s).ok_or_else(|| Error::Config(format!("unknown query `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecChoice {
    Lossless,
    High,
    Medium,
    Low,
}

impl CodecChoice {
    fn quality(self) -> Option<Quality> {
        match self {
            CodecChoice::Lossless => None,
            CodecChoice::High => Some(Quality::High),
            CodecChoice::Medium => Some(Quality::Medium),
            CodecChoice::Low => Some(Quality::Low),
        }
    }

    fn codec(self, steps: [u8; 3]) -> Result<CodecConfig> {
        let step = match self {
            CodecChoice::Lossless => return Ok(CodecConfig::lossless()),
            CodecChoice::High => steps[0],
            CodecChoice::Medium => steps[1],
            CodecChoice::Low => steps[2],
        };
        CodecConfig::lossy_step(step).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Everything a benchmark run depends on. Serialized back into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    pub queries: Vec<QueryId>,
    /// Variant names to run; every variant when empty.
    pub variants: Vec<String>,
    pub layouts: Vec<Layout>,
    pub codecs: Vec<CodecChoice>,
    /// Quantization steps for high, medium and low.
    pub quant_steps: [u8; 3],
    pub clip_len: u32,
    pub tau: f64,
    pub bins: u32,
    pub leaf_size: usize,
    pub min_area: u32,
    pub label_noise_p: f64,
    pub depth_margin: f64,
    /// Entity tracked by q3 and looked up by q5; the lowest visible id
    /// when absent.
    pub target: Option<u16>,
    /// Traffic scene for q2 to q6; its seed is replaced by each run seed.
    pub scene: SceneSpec,
    /// Photo collection for q1.
    pub photos: SceneSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            queries: QueryId::ALL.to_vec(),
            variants: Vec::new(),
            layouts: vec![Layout::FrameFile],
            codecs: vec![CodecChoice::Lossless],
            quant_steps: Quality::ALL.map(Quality::quant_step),
            clip_len: crate::storage::DEFAULT_CLIP_LEN,
            tau: DEFAULT_TAU,
            bins: DEFAULT_BINS,
            leaf_size: DEFAULT_LEAF_SIZE,
            min_area: DEFAULT_MIN_AREA,
            label_noise_p: 0.0,
            depth_margin: DEFAULT_DEPTH_MARGIN,
            target: None,
            scene: SceneSpec::traffic(0, 300, 8),
            photos: SceneSpec::photos(0, 200, 40),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (what, empty) in [
            ("seeds", self.seeds.is_empty()),
            ("queries", self.queries.is_empty()),
            ("layouts", self.layouts.is_empty()),
            ("codecs", self.codecs.is_empty()),
        ] {
            if empty {
                return bad(format!("`{what}` must not be empty"));
            }
        }
        for v in &self.variants {
            if !self.queries.iter().any(|q| q.variants().contains(&v.as_str())) {
                return bad(format!("variant `{v}` belongs to none of the selected queries"));
            }
        }
        if !(self.tau >= 0.0) {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if self.bins < 2 {
            return bad("bins must be at least 2".into());
        }
        if self.clip_len == 0 || self.leaf_size == 0 || self.min_area == 0 {
            return bad("clip_len, leaf_size and min_area must be positive".into());
        }
        if self.quant_steps.contains(&0) {
            return bad("quant_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise_p) {
            return bad("label_noise_p must be in [0, 1]".into());
        }
        if !(self.depth_margin >= 0.0) {
            return bad("depth_margin must be non-negative".into());
        }
        if self.scene.kind != SceneKind::Traffic {
            return bad("`scene` must be a traffic scene".into());
        }
        if self.photos.kind != SceneKind::Photos {
            return bad("`photos` must be a photos scene".into());
        }
        self.scene.validate().map_err(|e| Error::Config(format!("scene: {e}")))?;
        self.photos.validate().map_err(|e| Error::Config(format!("photos: {e}")))?;
        BlobParams::new(self.scene.palette.clone(), self.min_area)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn selected(&self, q: QueryId) -> Vec<&'static str> {
        q.variants().iter().copied().filter(|v| self.variants.is_empty() || self.variants.iter().any(|s| s == v)).collect()
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub query: String,
    pub variant: String,
    pub layout: String,
    pub codec: String,
    pub quality: String,
    pub seed: u64,
    pub etl_ms: f64,
    pub query_ms: f64,
    pub storage_bytes: u64,
    pub records_read: u64,
    pub frames_decoded: u64,
    pub index_probes: u64,
    pub result_count: u64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// Human-readable summary: the effective configuration, then one line
    /// per row.
    pub fn summary(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for line in self.config.to_toml().lines() {
            let _ = writeln!(s, "#   {line}");
        }
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{} {:<13} {:<14} {:<8} {:<6} seed={} etl={:.1}ms query={:.1}ms results={} p={:.3} r={:.3}",
                r.query,
                r.variant,
                r.layout,
                r.codec,
                r.quality,
                r.seed,
                r.etl_ms,
                r.query_ms,
                r.result_count,
                r.precision,
                r.recall
            );
        }
        s
    }
}

/// Precision and recall of `got` against `truth`; an empty side scores 1.
pub fn precision_recall<T: Ord>(got: &BTreeSet<T>, truth: &BTreeSet<T>) -> (f64, f64) {
    let hit = got.intersection(truth).count() as f64;
    let p = if got.is_empty() { 1.0 } else { hit / got.len() as f64 };
    let r = if truth.is_empty() { 1.0 } else { hit / truth.len() as f64 };
    (p, r)
}

/// Runs every (seed, layout, codec, query, variant) combination in `cfg`.
/// Stores and collections go under `workdir`, or a temporary directory.
pub fn run_benchmark(cfg: &BenchConfig, workdir: Option<&Path>) -> Result<BenchReport> {
    cfg.validate()?;
    let tmp;
    let root = match workdir {
        Some(p) => p.to_path_buf(),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let scene = SceneSpec { seed, ..cfg.scene.clone() };
        let photos = SceneSpec { seed, ..cfg.photos.clone() };
        let (_, truth) = gen_scene(&scene)?;
        let photo_truth = if cfg.queries.contains(&QueryId::Q1) { Some(gen_scene(&photos)?.1) } else { None };
        for &layout in &cfg.layouts {
            for &choice in &cfg.codecs {
                let dir = root.join(format!("s{seed}-{}-{}", layout.name(), codec_name(choice)));
                std::fs::create_dir_all(&dir)?;
                let codec = choice.codec(cfg.quant_steps)?;
                let desc = |name: &str| {
                    StoreDescriptor::new(layout, dir.join(name)).with_codec(codec).with_clip_len(cfg.clip_len)
                };
                let base = VideoStore::ingest(gen_scene(&scene)?.0, &desc("base"))?;
                let photo_store = match photo_truth {
                    Some(_) => Some(VideoStore::ingest(gen_scene(&photos)?.0, &desc("photos"))?),
                    None => None,
                };
                for &q in &cfg.queries {
                    for variant in cfg.selected(q) {
                        let ctx = RunCtx { cfg, seed, dir: &dir, base: &base, truth: &truth };
                        let (store, out) = match q {
                            QueryId::Q1 => {
                                let s = photo_store.as_ref().expect("photos ingested");
                                (s, ctx.q1(variant, s, photo_truth.as_ref().expect("photos planned"))?)
                            }
                            QueryId::Q2 => (&base, ctx.q2()?),
                            QueryId::Q3 => (&base, ctx.q3(variant)?),
                            QueryId::Q4 => (&base, ctx.q4(variant)?),
                            QueryId::Q5 => (&base, ctx.q5(variant)?),
                            QueryId::Q6 => (&base, ctx.q6()?),
                        };
                        rows.push(BenchRow {
                            query: q.name().into(),
                            variant: variant.into(),
                            layout: layout.name().into(),
                            codec: if codec.quant_step.is_some() { "lossy" } else { "lossless" }.into(),
                            quality: choice.quality().map_or("", Quality::name).into(),
                            seed,
                            etl_ms: out.etl_ms,
                            query_ms: out.query_ms,
                            storage_bytes: store.store_size(),
                            records_read: out.stats.base_io.records_read,
                            frames_decoded: out.stats.base_io.frames_decoded,
                            index_probes: out.stats.index_probes(),
                            result_count: out.result_count,
                            precision: out.precision,
                            recall: out.recall,
                        });
                    }
                }
            }
        }
    }
    Ok(BenchReport { config: cfg.clone(), rows })
}

fn codec_name(c: CodecChoice) -> &'static str {
    c.quality().map_or("lossless", Quality::name)
}

/// Measurements of one query run.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub etl_ms: f64,
    pub query_ms: f64,
    pub stats: ExecStats,
    pub result_count: u64,
    pub precision: f64,
    pub recall: f64,
    pub tuples: Vec<Tuple>,
}

struct RunCtx<'a> {
    cfg: &'a BenchConfig,
    seed: u64,
    dir: &'a Path,
    base: &'a VideoStore,
    truth: &'a GroundTruth,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn int_of(p: &Patch, key: &str) -> i64 {
    p.get(key).and_then(MetaValue::as_int).unwrap_or(-1)
}

fn bbox_of(p: &Patch) -> BoundingBox {
    p.get(KEY_BBOX).and_then(MetaValue::as_bbox).unwrap_or(BoundingBox { x1: 0, y1: 0, x2: 0, y2: 0 })
}

impl RunCtx<'_> {
    fn blob_spec(&self) -> GeneratorSpec {
        GeneratorSpec::BlobDetector(
            BlobParams::new(self.cfg.scene.palette.clone(), self.cfg.min_area)
                .with_noise(self.cfg.label_noise_p, self.seed),
        )
    }

    fn etl(&self, store: &VideoStore, spec: &EtlSpec, name: &str) -> Result<Collection> {
        let path = self.dir.join(name);
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        run_etl(store, None, spec, path, name, IoCounters::new())
    }

    fn target(&self) -> u16 {
        self.cfg.target.or_else(|| self.truth.entity_labels.keys().next().copied()).unwrap_or(0)
    }

    fn execute(
        &self,
        etl_ms: f64,
        plan: &PlanNode,
        cat: &Catalog,
        score: impl FnOnce(&[Tuple]) -> (u64, f64, f64),
    ) -> Result<QueryOutcome> {
        let t = Instant::now();
        let (tuples, stats) = run(plan, cat)?;
        let query_ms = ms(t);
        let (result_count, precision, recall) = score(&tuples);
        Ok(QueryOutcome { etl_ms, query_ms, stats, result_count, precision, recall, tuples })
    }

    fn q1(&self, variant: &str, store: &VideoStore, truth: &GroundTruth) -> Result<QueryOutcome> {
        let t = Instant::now();
        let spec = EtlSpec::new(GeneratorSpec::WholeImage).then(TransformerSpec::ColorHistogram { bins: self.cfg.bins });
        let c = self.etl(store, &spec, "q1_hist")?;
        let etl_ms = ms(t);
        let mut cat = Catalog::new();
        cat.add_collection("hist", Arc::new(c));
        let ordered = Predicate::keys(KeyRef::new(0, KEY_FRAMENO), CmpOp::Lt, KeyRef::new(1, KEY_FRAMENO));
        let tau = self.cfg.tau;
        let plan = if variant == "nested_loop" {
            PlanNode::scan("hist").nested_loop(
                PlanNode::scan("hist"),
                Predicate::and(vec![Predicate::EuclideanWithin { a: 0, b: 1, tau }, ordered]),
            )
        } else {
            PlanNode::SimJoin {
                left: Box::new(PlanNode::scan("hist")),
                right: Box::new(PlanNode::scan("hist")),
                tau,
                build_side: BuildSide::Auto,
                leaf_size: Some(self.cfg.leaf_size),
            }
            .select(ordered)
        };
        let want: BTreeSet<(u64, u64)> = truth.duplicate_pairs.iter().copied().collect();
        self.execute(etl_ms, &plan, &cat, |ts| {
            let got: BTreeSet<(u64, u64)> = ts
                .iter()
                .map(|t| (int_of(&t.patches[0], KEY_FRAMENO) as u64, int_of(&t.patches[1], KEY_FRAMENO) as u64))
                .collect();
            let (p, r) = precision_recall(&got, &want);
            (ts.len() as u64, p, r)
        })
    }

    fn q2(&self) -> Result<QueryOutcome> {
        let t = Instant::now();
        let c = self.etl(self.base, &EtlSpec::new(self.blob_spec()), "q2_blobs")?;
        let etl_ms = ms(t);
        let mut cat = Catalog::new();
        cat.add_collection("blobs", Arc::new(c));
        let plan = PlanNode::scan("blobs").select(Predicate::label_is(VEHICLE)).count_by(KEY_FRAMENO);
        let want = labeled_frames(self.truth, VEHICLE);
        self.execute(etl_ms, &plan, &cat, |ts| {
            let got: BTreeSet<u64> = ts.iter().map(|t| int_of(&t.patches[0], KEY_FRAMENO) as u64).collect();
            let (p, r) = precision_recall(&got, &want);
            (ts.len() as u64, p, r)
        })
    }

    fn glyphs(&self, name: &str) -> Result<Collection> {
        self.etl(self.base, &EtlSpec::new(GeneratorSpec::GlyphReader), name)
    }

    fn q3(&self, variant: &str) -> Result<QueryOutcome> {
        let t = Instant::now();
        let glyphs = self.glyphs("q3_glyphs")?;
        let mut blobs = self.etl(self.base, &EtlSpec::new(self.blob_spec()), "q3_blobs")?;
        blobs.build_index(&IndexSpec::new(KEY_FRAMENO, IndexKind::Ordered, Some(KEY_FRAMENO)))?;
        let etl_ms = ms(t);
        let mut cat = Catalog::new();
        cat.add_collection("glyphs", Arc::new(glyphs)).add_collection("blobs", Arc::new(blobs)).add_store("base", self.base.clone());
        let target = self.target();
        let mode = if variant == "rescan" { BacktraceMode::Rescan } else { BacktraceMode::LineageIndex };
        let plan = PlanNode::IndexJoin {
            left: Box::new(PlanNode::scan("glyphs").select(Predicate::key_lit(0, KEY_TEXT, CmpOp::Eq, target.to_string()))),
            collection: "blobs".into(),
            index: KEY_FRAMENO.into(),
            probe_slot: 0,
            probe_key: Some(KEY_FRAMENO.into()),
            mode: ProbeMode::Eq,
            residual: Some(Predicate::BoxContains { outer: 1, inner: 0 }),
        }
        .backtrace("base", mode, 1);
        let want: BTreeSet<(u64, BoundingBox)> = objects(self.truth).filter(|(_, o)| o.entity == target).map(|(t, o)| (t, o.bbox)).collect();
        self.execute(etl_ms, &plan, &cat, |ts| {
            let got: BTreeSet<(u64, BoundingBox)> = ts.iter().map(|t| (t.frames[0].frame_no(), bbox_of(&t.patches[1]))).collect();
            let (p, r) = precision_recall(&got, &want);
            (ts.len() as u64, p, r)
        })
    }

    fn q4(&self, variant: &str) -> Result<QueryOutcome> {
        let t = Instant::now();
        let spec = EtlSpec::new(self.blob_spec()).then(TransformerSpec::ColorHistogram { bins: self.cfg.bins });
        let c = self.etl(self.base, &spec, "q4_hist")?;
        let etl_ms = ms(t);
        let mut cat = Catalog::new();
        cat.add_collection("hist", Arc::new(c));
        let tau = self.cfg.tau;
        let plan = if variant == "dedup_filter" {
            PlanNode::scan("hist").dedup(tau, true).select(Predicate::ListContains {
                slot: 0,
                key: KEY_GROUP_LABELS.into(),
                value: PEDESTRIAN.into(),
            })
        } else {
            PlanNode::scan("hist").select(Predicate::label_is(PEDESTRIAN)).dedup(tau, false)
        };
        let truth = self.truth;
        let want = truth.distinct(PEDESTRIAN);
        self.execute(etl_ms, &plan, &cat, |ts| {
            let found: BTreeSet<u16> = ts
                .iter()
                .filter_map(|t| truth.entity_at(int_of(&t.patches[0], KEY_FRAMENO) as u64, &bbox_of(&t.patches[0])))
                .filter(|o| o.label == PEDESTRIAN)
                .map(|o| o.entity)
                .collect();
            let n = ts.len() as u64;
            let hit = found.len() as f64;
            let p = if n == 0 { 1.0 } else { hit / n as f64 };
            let r = if want == 0 { 1.0 } else { hit / want as f64 };
            (n, p, r)
        })
    }

    fn q5(&self, variant: &str) -> Result<QueryOutcome> {
        let t = Instant::now();
        let mut glyphs = self.glyphs("q5_glyphs")?;
        if variant == "hash_index" {
            glyphs.build_index(&IndexSpec::new(KEY_TEXT, IndexKind::Hash, Some(KEY_TEXT)))?;
        }
        let etl_ms = ms(t);
        let mut cat = Catalog::new();
        cat.add_collection("glyphs", Arc::new(glyphs));
        let target = self.target().to_string();
        let plan = if variant == "hash_index" {
            PlanNode::IndexLookup { collection: "glyphs".into(), index: KEY_TEXT.into(), key: target.as_str().into() }
        } else {
            PlanNode::scan("glyphs").select(Predicate::key_lit(0, KEY_TEXT, CmpOp::Eq, target.clone()))
        };
        let want: BTreeSet<u64> = self.truth.frames_of(self.target()).into_iter().collect();
        self.execute(etl_ms, &plan, &cat, |ts| {
            let got: BTreeSet<u64> = ts.iter().map(|t| int_of(&t.patches[0], KEY_FRAMENO) as u64).collect();
            let (p, r) = precision_recall(&got, &want);
            (got.len() as u64, p, r)
        })
    }

    fn q6(&self) -> Result<QueryOutcome> {
        let t = Instant::now();
        let spec = EtlSpec::new(self.blob_spec()).then(TransformerSpec::DepthProxy);
        let c = self.etl(self.base, &spec, "q6_depth")?;
        let etl_ms = ms(t);
        let mut cat = Catalog::new();
        cat.add_collection("depth", Arc::new(c));
        let margin = self.cfg.depth_margin;
        let peds = || PlanNode::scan("depth").select(Predicate::label_is(PEDESTRIAN));
        let plan = peds().nested_loop(peds(), behind(margin));
        let want = behind_pairs(self.truth, margin);
        self.execute(etl_ms, &plan, &cat, |ts| {
            let got: BTreeSet<(u64, BoundingBox, BoundingBox)> = ts
                .iter()
                .map(|t| (int_of(&t.patches[0], KEY_FRAMENO) as u64, bbox_of(&t.patches[0]), bbox_of(&t.patches[1])))
                .collect();
            let (p, r) = precision_recall(&got, &want);
            (ts.len() as u64, p, r)
        })
    }
}

/// `slot 0` is behind `slot 1` in the same frame.
pub fn behind(margin: f64) -> Predicate {
    Predicate::and(vec![
        Predicate::keys(KeyRef::new(0, KEY_FRAMENO), CmpOp::Eq, KeyRef::new(1, KEY_FRAMENO)),
        Predicate::XOverlap { a: 0, b: 1 },
        Predicate::keys(KeyRef::new(0, KEY_DEPTH), CmpOp::Gt, KeyRef::new(1, KEY_DEPTH).plus(margin)),
    ])
}

fn objects(gt: &GroundTruth) -> impl Iterator<Item = (u64, &patchdb_core::scene::GtObject)> {
    gt.frames.iter().enumerate().flat_map(|(t, os)| os.iter().map(move |o| (t as u64, o)))
}

fn labeled_frames(gt: &GroundTruth, label: &str) -> BTreeSet<u64> {
    objects(gt).filter(|(_, o)| o.label == label).map(|(t, _)| t).collect()
}

/// Ground-truth pedestrian pairs `(frame, behind, front)`.
pub fn behind_pairs(gt: &GroundTruth, margin: f64) -> BTreeSet<(u64, BoundingBox, BoundingBox)> {
    let mut out = BTreeSet::new();
    for (t, os) in gt.frames.iter().enumerate() {
        for a in os.iter().filter(|o| o.label == PEDESTRIAN) {
            for b in os.iter().filter(|o| o.label == PEDESTRIAN) {
                if a.bbox.overlaps_x(&b.bbox) && a.depth > b.depth + margin {
                    out.insert((t as u64, a.bbox, b.bbox));
                }
            }
        }
    }
    out
}

/// `n` feature patches of dimension `d` scattered around `clusters` random
/// centres in the unit cube, each coordinate within `spread` of its centre.
pub fn clustered_features(video: &str, seed: u64, n: usize, d: usize, clusters: usize, spread: f64) -> Vec<Patch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters.max(1)).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            let c = &centers[rng.random_range(0..centers.len())];
            let v: Vec<f64> = c.iter().map(|x| x + rng.random_range(-spread..=spread)).collect();
            feature_patch(video, i as u64, v)
        })
        .collect()
}

/// A bare feature vector anchored to a 1x1 frame `i` of `video`.
pub fn feature_patch(video: &str, i: u64, v: Vec<f64>) -> Patch {
    let f = Frame::new(video, i, 1, 1, vec![0; 3]).expect("1x1 frame");
    let mut md = Metadata::new();
    md.insert(KEY_FRAMENO.into(), MetaValue::Int(i as i64));
    let base = make_patch(&f, BoundingBox { x1: 0, y1: 0, x2: 1, y2: 1 }, Metadata::new()).expect("unit patch");
    derive_patch(&base, "feature", vec![v.len()], v, md, 0).expect("feature patch")
}
