use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use patchdb::bench::{run_benchmark, BenchConfig};
use patchdb::collection::{Collection, IndexSpec};
use patchdb::planfile::PlanFile;
use patchdb::query::{execute, Tuple};
use patchdb::storage::{IoCounters, Layout, StoreDescriptor, VideoStore, DEFAULT_CLIP_LEN};
use patchdb::{ppm, Error, Result};
use patchdb_core::codec::{CodecConfig, Quality};
use patchdb_core::index::IndexKind;
use patchdb_core::scene::{gen_scene, SceneKind, SceneSpec};
use patchdb_core::{MetaValue, Patch};

#[derive(Parser)]
#[command(name = "patchdb", version, about = "Patch-based video analytics engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic scene into a store, with its ground truth.
    GenScene(GenScene),
    /// Store frames from a PPM directory or another store.
    Ingest(Ingest),
    /// Materialize the ETL stages and indexes of a plan file.
    Etl(Etl),
    /// Build and persist an index over a collection.
    Index(IndexCmd),
    /// Run the plan of a plan file.
    Query(QueryCmd),
    /// Run the benchmark harness.
    Bench(BenchCmd),
    /// Print sizes and counts of stores or collections.
    Stats(StatsCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    FrameFile,
    EncodedFile,
    SegmentedFile,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::FrameFile => Layout::FrameFile,
            LayoutArg::EncodedFile => Layout::EncodedFile,
            LayoutArg::SegmentedFile => Layout::SegmentedFile,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecArg {
    Lossless,
    High,
    Medium,
    Low,
}

#[derive(Args)]
struct StoreArgs {
    /// Output store path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "frame-file")]
    layout: LayoutArg,
    #[arg(long, value_enum, default_value = "lossless")]
    codec: CodecArg,
    /// Overrides the quantization step of the lossy quality.
    #[arg(long)]
    quant_step: Option<u8>,
    #[arg(long, default_value_t = DEFAULT_CLIP_LEN)]
    clip_len: u32,
}

impl StoreArgs {
    fn descriptor(&self) -> Result<StoreDescriptor> {
        let q = match self.codec {
            CodecArg::Lossless => None,
            CodecArg::High => Some(Quality::High),
            CodecArg::Medium => Some(Quality::Medium),
            CodecArg::Low => Some(Quality::Low),
        };
        let codec = match (q, self.quant_step) {
            (None, None) => CodecConfig::lossless(),
            (None, Some(_)) => return Err(Error::Config("--quant-step needs a lossy --codec".into())),
            (Some(q), step) => {
                CodecConfig::lossy_step(step.unwrap_or(q.quant_step())).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        let d = StoreDescriptor::new(self.layout.into(), &self.out).with_codec(codec).with_clip_len(self.clip_len);
        d.validate()?;
        Ok(d)
    }
}

#[derive(Args)]
struct GenScene {
    /// Full scene description (TOML); flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    entities: Option<u32>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    lifetime: Option<u32>,
    #[arg(long)]
    noise_amplitude: Option<u8>,
    /// Near-duplicate photo collection instead of a traffic scene.
    #[arg(long)]
    photos: bool,
    #[arg(long)]
    duplicates: Option<u32>,
    /// Ground-truth JSON; `<out>.truth.json` by default.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    store: StoreArgs,
}

#[derive(Args)]
struct Ingest {
    /// Directory of binary PPM frames, read in file-name order.
    #[arg(long, conflicts_with = "from_store", required_unless_present = "from_store")]
    frames_dir: Option<PathBuf>,
    /// Existing store to copy into a new layout.
    #[arg(long)]
    from_store: Option<PathBuf>,
    /// Video id for PPM input; the directory name by default.
    #[arg(long)]
    video_id: Option<String>,
    #[command(flatten)]
    store: StoreArgs,
}

#[derive(Args)]
struct Etl {
    #[arg(long)]
    plan: PathBuf,
    /// Reuse outputs that already exist instead of rebuilding them.
    #[arg(long)]
    keep: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Hash,
    Ordered,
    RTree,
    BallTree,
}

#[derive(Args)]
struct IndexCmd {
    /// Collection path.
    collection: PathBuf,
    #[arg(long)]
    name: String,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    key: Option<String>,
    /// Ball-tree leaf size (default 32).
    #[arg(long)]
    leaf_size: Option<usize>,
    /// R-tree node capacity (default 16).
    #[arg(long)]
    node_capacity: Option<usize>,
}

#[derive(Args)]
struct QueryCmd {
    #[arg(long)]
    plan: PathBuf,
    /// Results file (JSON lines); overrides the plan file.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Statistics file; overrides the plan file.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct BenchCmd {
    /// Benchmark configuration (TOML); defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV report; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep stores and collections here instead of a temporary directory.
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    bins: Option<u32>,
    #[arg(long)]
    clip_len: Option<u32>,
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Steps for high, medium and low quality.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    quant_steps: Option<Vec<u8>>,
    #[arg(long)]
    label_noise: Option<f64>,
}

#[derive(Args)]
struct StatsCmd {
    /// Stores or collections.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::GenScene(a) => gen_scene_cmd(a),
        Cmd::Ingest(a) => ingest(a),
        Cmd::Etl(a) => etl(a),
        Cmd::Index(a) => index(a),
        Cmd::Query(a) => query(a),
        Cmd::Bench(a) => bench(a),
        Cmd::Stats(a) => stats(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Validation(_) | Error::Config(_)) { 1 } else { 2 })
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gen_scene_cmd(a: GenScene) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => read_toml(p)?,
        None if a.photos => SceneSpec::photos(0, 200, 40),
        None => SceneSpec::traffic(0, 300, 8),
    };
    if a.photos {
        spec.kind = SceneKind::Photos;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    set!(seed, frames, entities, width, height, lifetime, noise_amplitude, duplicates);
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let desc = a.store.descriptor()?;
    let (frames, truth) = gen_scene(&spec)?;
    let store = VideoStore::ingest(frames, &desc)?;
    let truth_path = a.truth.unwrap_or_else(|| suffixed(&desc.path, ".truth.json"));
    std::fs::write(&truth_path, serde_json::to_vec_pretty(&truth).expect("truth serializes"))?;
    println!("store={}", desc.path.display());
    println!("truth={}", truth_path.display());
    println!("frames={}", store.len());
    println!("bytes={}", store.store_size());
    Ok(())
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn ingest(a: Ingest) -> Result<()> {
    let desc = a.store.descriptor()?;
    let store = if let Some(src) = &a.from_store {
        let src = VideoStore::open(src)?;
        let frames: Vec<_> = src.scan(None, IoCounters::new())?.collect::<Result<_>>()?;
        VideoStore::ingest(frames, &desc)?
    } else {
        let dir = a.frames_dir.as_deref().expect("clap requires one source");
        let video = a
            .video_id
            .clone()
            .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "video".into());
        let frames: Vec<_> = ppm::read_dir(dir, &video)?.collect::<Result<_>>()?;
        VideoStore::ingest(frames, &desc)?
    };
    println!("store={}", desc.path.display());
    println!("frames={}", store.len());
    println!("bytes={}", store.store_size());
    Ok(())
}

fn etl(a: Etl) -> Result<()> {
    let pf = PlanFile::load(&a.plan)?;
    let cat = pf.materialize(!a.keep)?;
    for e in &pf.etl {
        let c = cat.collection(&e.name).expect("materialized");
        println!("{}.patches={}", e.name, c.len());
        println!("{}.bytes={}", e.name, c.store_size());
    }
    Ok(())
}

fn index(a: IndexCmd) -> Result<()> {
    let kind = match a.kind {
        KindArg::Hash => IndexKind::Hash,
        KindArg::Ordered => IndexKind::Ordered,
        KindArg::RTree => IndexKind::RTree,
        KindArg::BallTree => IndexKind::BallTree,
    };
    let mut spec = IndexSpec::new(&a.name, kind, a.key.as_deref());
    spec.leaf_size = a.leaf_size;
    spec.node_capacity = a.node_capacity;
    spec.validate()?;
    let mut c = Collection::open_rw(&a.collection)?;
    let t = std::time::Instant::now();
    c.build_index(&spec)?;
    println!("index={}", a.name);
    println!("build_ms={:.3}", t.elapsed().as_secs_f64() * 1e3);
    println!("bytes={}", c.store_size());
    Ok(())
}

fn patch_json(p: &Patch) -> Value {
    let md: serde_json::Map<String, Value> = p
        .metadata()
        .iter()
        .map(|(k, v)| {
            let v = match v {
                MetaValue::Int(i) => json!(i),
                MetaValue::Float(f) => json!(f),
                MetaValue::Str(s) => json!(s),
                MetaValue::BBox(b) => json!([b.x1, b.y1, b.x2, b.y2]),
                MetaValue::StrList(l) => json!(l),
            };
            (k.clone(), v)
        })
        .collect();
    let base = p.lineage().base_frame().ok();
    json!({
        "id": format!("{:016x}", p.id()),
        "video": base.map(|b| b.0),
        "frame": base.map(|b| b.1),
        "shape": p.shape(),
        "metadata": md,
    })
}

fn tuple_json(t: &Tuple) -> Value {
    json!({
        "patches": t.patches.iter().map(|p| patch_json(p)).collect::<Vec<_>>(),
        "frames": t.frames.iter().map(|f| json!({"video": f.video_id(), "frame": f.frame_no()})).collect::<Vec<_>>(),
    })
}

fn sink(path: Option<&Path>, fallback: Box<dyn Write>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => fallback,
    })
}

fn query(a: QueryCmd) -> Result<()> {
    let pf = PlanFile::load(&a.plan)?;
    let plan = pf.plan.clone().ok_or_else(|| Error::Config("plan file has no [plan]".into()))?;
    // reading never rebuilds; only missing outputs are produced
    let cat = if pf.is_materialized() { pf.open()? } else { pf.materialize(false)? };
    let mut exec = execute(&plan, &cat)?;
    let results = a.results.or_else(|| pf.output.results.as_ref().map(|p| pf.resolve(p)));
    let stats = a.stats.or_else(|| pf.output.stats.as_ref().map(|p| pf.resolve(p)));
    let mut out = sink(results.as_deref(), Box::new(std::io::stdout().lock()))?;
    let mut n = 0u64;
    for t in exec.by_ref() {
        writeln!(out, "{}", tuple_json(&t?))?;
        n += 1;
    }
    out.flush()?;
    let mut s = sink(stats.as_deref(), Box::new(std::io::stderr().lock()))?;
    writeln!(s, "results={n}")?;
    write!(s, "{}", exec.stats().to_kv())?;
    s.flush()?;
    Ok(())
}

fn bench(a: BenchCmd) -> Result<()> {
    let mut cfg: BenchConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => BenchConfig::default(),
    };
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    macro_rules! set {
        ($($f:ident => $g:ident),*) => { $(if let Some(v) = a.$f { cfg.$g = v; })* };
    }
    set!(tau => tau, bins => bins, clip_len => clip_len, leaf_size => leaf_size, label_noise => label_noise_p);
    if let Some(q) = a.quant_steps {
        cfg.quant_steps = [q[0], q[1], q[2]];
    }
    if let Some(w) = &a.workdir {
        std::fs::create_dir_all(w)?;
    }
    let report = run_benchmark(&cfg, a.workdir.as_deref())?;
    match &a.out {
        Some(p) => {
            std::fs::write(p, report.to_csv())?;
            print!("{}", report.summary());
        }
        None => {
            print!("{}", report.to_csv());
            eprint!("{}", report.summary());
        }
    }
    Ok(())
}

fn stats(a: StatsCmd) -> Result<()> {
    for p in &a.paths {
        let name = p.display();
        if let Ok(s) = VideoStore::open(p) {
            let m = s.meta();
            println!("{name}.kind=store");
            println!("{name}.layout={}", s.layout().name());
            println!("{name}.video={}", s.video_id());
            println!("{name}.frames={}", s.len());
            println!("{name}.size={}x{}", m.width, m.height);
            println!("{name}.codec={}", serde_json::to_string(&m.descriptor.codec).expect("codec serializes"));
            println!("{name}.clip_len={}", m.descriptor.clip_len);
            println!("{name}.bytes={}", s.store_size());
        } else {
            let c = Collection::open(p)?;
            println!("{name}.kind=collection");
            println!("{name}.name={}", c.name());
            println!("{name}.patches={}", c.len());
            println!("{name}.base_frames={}", c.lineage_keys().len());
            for (ix, spec) in &c.meta().indexes {
                println!("{name}.index.{ix}={}", serde_json::to_string(spec).expect("spec serializes"));
            }
            println!("{name}.bytes={}", c.store_size());
        }
    }
    Ok(())
}
