//! `partsketch`: batch entry point over the sketch toolkit.
//!
//! Exit codes: 0 success, 1 data error, 2 usage or configuration error.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use partsketch::annopipe::{
    annotate_batch, ClientError, HttpVlmClient, PipelineConfig, ReplayClient, ScriptedClient, StageTrace, Templates,
    VlmClient, VlmRequest,
};
use partsketch::grpo::{synthetic_task, train_loop, Checkpoint, GrpoConfig, Task, ToyStrokePolicy, Variant};
use partsketch::partdata::{deserialize_record, permute_augment, read_records, serialize_record, AnnotatedSketch};
use partsketch::raster::{diagnostic_panel, rasterize, recolor_render, Palette};
use partsketch::rewards::{self, PathCountPlacement};
use partsketch::session::SessionStore;
use partsketch::stroke::{export_svg, import_svg, random_sketch, Sketch};

#[derive(Parser)]
#[command(name = "partsketch", version, about = "Part-aware vector sketch tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate every SVG in a directory with parts, a path assignment and a caption.
    Annotate(AnnotateArgs),
    /// Expand records into per-turn training examples over sampled part orders.
    Augment(AugmentArgs),
    /// Train the toy stroke policy with multi-turn GRPO.
    GrpoToy(GrpoArgs),
    /// Render a record or SVG to PNG or SVG.
    Render(RenderArgs),
    /// Write the legend-plus-recolored diagnostic image of a record.
    Diagviz(DiagvizArgs),
    /// Write a seeded random sketch.
    Random(RandomArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(clap::Args)]
struct AnnotateArgs {
    /// Directory of input `.svg` files.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for `<name>.record.json`, `<name>.trace.json` and `records.jsonl`.
    #[arg(long)]
    output: PathBuf,
    /// `mock:<script.json>`, `replay:<trace-dir>` or `http` (reads VLM_ENDPOINT / VLM_API_KEY).
    #[arg(long, default_value = "http")]
    client: String,
    /// Upper bound on sketches annotated in parallel [default: number of CPUs].
    #[arg(long)]
    concurrency: Option<usize>,
    /// Re-requests per stage after a rejected response.
    #[arg(long, default_value_t = 2)]
    max_retries: usize,
    /// Directory of `stepN.txt` prompt templates overriding the built-in ones.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AugmentArgs {
    /// Records as JSON Lines.
    #[arg(long)]
    input: PathBuf,
    /// Output JSON Lines of turn examples.
    #[arg(long)]
    output: PathBuf,
    /// Part orders sampled per record.
    #[arg(long, default_value_t = 20)]
    max_perms: usize,
    /// Seed for the part-order sampler; record `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write canvas renders as PNG files here instead of embedding them.
    #[arg(long)]
    png_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Process,
    Outcome,
    TailSum,
    SingleTurn,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Process => Variant::Process,
            VariantArg::Outcome => Variant::Outcome,
            VariantArg::TailSum => Variant::TailSum,
            VariantArg::SingleTurn => Variant::SingleTurn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    FinalStep,
    EveryStep,
}

#[derive(clap::Args)]
struct GrpoArgs {
    /// Advantage variant.
    #[arg(long, value_enum, default_value = "process")]
    variant: VariantArg,
    /// Optimizer steps per iteration.
    #[arg(long)]
    steps: Option<usize>,
    /// Reference-policy refreshes.
    #[arg(long)]
    iterations: Option<usize>,
    /// Rollouts per group.
    #[arg(long)]
    group_size: Option<usize>,
    /// Seed for rollouts and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the path-count reward.
    #[arg(long)]
    lambda: Option<f64>,
    /// KL penalty weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Ratio clip range.
    #[arg(long)]
    clip_eps: Option<f64>,
    /// Adam step size.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Ascent steps per sampled batch.
    #[arg(long)]
    inner_updates: Option<usize>,
    /// Tasks sampled per step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Groups rolled out per evaluation.
    #[arg(long)]
    eval_groups: Option<usize>,
    /// Where the path-count term enters the per-step reward.
    #[arg(long, value_enum)]
    path_count: Option<PlacementArg>,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Records (JSON Lines) to train on instead of the built-in synthetic task.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// `baseline` or `external:<url>`.
    #[arg(long, default_value = "baseline")]
    embedder: String,
    /// Training log (JSON Lines).
    #[arg(long, default_value = "grpo_log.jsonl")]
    log: PathBuf,
    /// Final policy parameters (JSON).
    #[arg(long, default_value = "checkpoint.json")]
    checkpoint: PathBuf,
}

#[derive(clap::Args)]
struct RenderArgs {
    /// A record (`.json`) or a sketch (`.svg`).
    #[arg(long)]
    input: PathBuf,
    /// `.png` or `.svg`.
    #[arg(long)]
    output: PathBuf,
    /// Color each path by its part (records only, PNG only).
    #[arg(long)]
    colored: bool,
}

#[derive(clap::Args)]
struct DiagvizArgs {
    /// A record (`.json`).
    #[arg(long)]
    input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    output: PathBuf,
}

#[derive(clap::Args)]
struct RandomArgs {
    /// Sketch seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `.svg` or `.png`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(clap::Args)]
struct ServeArgs {
    /// Listening port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Listening address.
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Session storage directory.
    #[arg(long, default_value = "sessions")]
    data: PathBuf,
    /// Records (JSON Lines) available to the `replay:<id>` backend.
    #[arg(long)]
    records: Option<PathBuf>,
}

enum Failure {
    Data(String),
    Usage(String),
}

type CmdResult = Result<(), Failure>;

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(io_at(path))
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    fs::write(path, bytes).map_err(io_at(path))
}

fn load_record(path: &Path) -> Result<AnnotatedSketch, Failure> {
    deserialize_record(&read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_records(path: &Path) -> Result<Vec<AnnotatedSketch>, Failure> {
    let text = String::from_utf8(read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    read_records(&text).map_err(|(line, e)| Failure::Data(format!("{}:{line}: {e}", path.display())))
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase()
}

enum AnyClient {
    Scripted(ScriptedClient),
    Replay(ReplayClient),
    Http(HttpVlmClient),
}

impl VlmClient for AnyClient {
    fn request(&self, req: &VlmRequest) -> Result<String, ClientError> {
        match self {
            AnyClient::Scripted(c) => c.request(req),
            AnyClient::Replay(c) => c.request(req),
            AnyClient::Http(c) => c.request(req),
        }
    }

    fn identity(&self) -> &str {
        match self {
            AnyClient::Scripted(c) => c.identity(),
            AnyClient::Replay(c) => c.identity(),
            AnyClient::Http(c) => c.identity(),
        }
    }
}

enum ClientSpec {
    Mock(serde_json::Value),
    Replay(PathBuf),
    Http,
}

impl ClientSpec {
    fn parse(s: &str) -> Result<Self, Failure> {
        if s == "http" {
            HttpVlmClient::from_env().map_err(|e| Failure::Usage(e.to_string()))?;
            return Ok(Self::Http);
        }
        if let Some(p) = s.strip_prefix("mock:") {
            let path = Path::new(p);
            let v: serde_json::Value =
                serde_json::from_slice(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            ScriptedClient::from_json(&v).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            return Ok(Self::Mock(v));
        }
        if let Some(dir) = s.strip_prefix("replay:") {
            return Ok(Self::Replay(PathBuf::from(dir)));
        }
        Err(Failure::Usage(format!("unknown client {s:?}; use mock:<script.json>, replay:<trace-dir> or http")))
    }

    fn make(&self, id: &str) -> AnyClient {
        match self {
            Self::Mock(v) => AnyClient::Scripted(ScriptedClient::from_json(v).expect("script checked at parse")),
            Self::Replay(dir) => {
                let trace = fs::read(dir.join(format!("{id}.trace.json")))
                    .ok()
                    .and_then(|b| serde_json::from_slice::<StageTrace>(&b).ok())
                    .unwrap_or_default();
                AnyClient::Replay(ReplayClient::from_trace(&trace))
            }
            Self::Http => AnyClient::Http(HttpVlmClient::from_env().expect("environment checked at parse")),
        }
    }
}

fn annotate(a: AnnotateArgs) -> CmdResult {
    let client = ClientSpec::parse(&a.client)?;
    let mut cfg = PipelineConfig { max_retries: a.max_retries, ..PipelineConfig::default() };
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg.concurrency = a.concurrency.map_or(cpus, |c| c.min(cpus)).max(1);
    if let Some(dir) = &a.templates {
        cfg.templates = Templates::from_dir(dir).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let mut inputs: Vec<PathBuf> = fs::read_dir(&a.input)
        .map_err(io_at(&a.input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| extension(p) == "svg")
        .collect();
    inputs.sort();
    fs::create_dir_all(&a.output).map_err(io_at(&a.output))?;

    let mut failed = 0usize;
    let mut items = Vec::new();
    for path in &inputs {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sketch").to_string();
        let parsed =
            fs::read_to_string(path).map_err(|e| e.to_string()).and_then(|t| import_svg(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(sketch) => items.push((id, sketch)),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failed += 1;
            }
        }
    }

    let results = annotate_batch(&items, &cfg, |id| client.make(id));
    let mut jsonl = Vec::new();
    for ((id, _), result) in items.iter().zip(results) {
        let trace = match result {
            Ok(ann) => {
                let line = serialize_record(&ann.record);
                write(&a.output.join(format!("{id}.record.json")), &line)?;
                jsonl.extend_from_slice(&line);
                jsonl.push(b'\n');
                ann.trace
            }
            Err(f) => {
                eprintln!("error: {}: {}", a.input.join(format!("{id}.svg")).display(), f.error);
                failed += 1;
                f.trace
            }
        };
        let trace = serde_json::to_vec_pretty(&trace).map_err(data)?;
        write(&a.output.join(format!("{id}.trace.json")), &trace)?;
    }
    write(&a.output.join("records.jsonl"), &jsonl)?;
    let ok = inputs.len() - failed;
    println!("annotated {ok} of {} sketches", inputs.len());
    if failed > 0 {
        Err(Failure::Data(format!("{failed} sketch(es) failed")))
    } else {
        Ok(())
    }
}

fn augment(a: AugmentArgs) -> CmdResult {
    let records = load_records(&a.input)?;
    let out = fs::File::create(&a.output).map_err(io_at(&a.output))?;
    let mut out = BufWriter::new(out);
    if let Some(dir) = &a.png_dir {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let mut total = 0usize;
    for (i, r) in records.iter().enumerate() {
        let examples = permute_augment(r, a.max_perms, a.seed.wrapping_add(i as u64))
            .map_err(|e| Failure::Data(format!("record {}: {e}", r.id)))?;
        for (j, ex) in examples.iter().enumerate() {
            let image_ref = match &a.png_dir {
                Some(dir) => {
                    let name = format!("{}-{j:04}.png", r.id);
                    write(&dir.join(&name), &ex.canvas_render.to_png().map_err(data)?)?;
                    Some(name)
                }
                None => None,
            };
            let sft = ex.to_sft(&r.id, image_ref).map_err(data)?;
            serde_json::to_writer(&mut out, &sft).map_err(data)?;
            out.write_all(b"\n").map_err(io_at(&a.output))?;
        }
        total += examples.len();
    }
    out.flush().map_err(io_at(&a.output))?;
    println!("{} records, {total} examples", records.len());
    Ok(())
}

fn grpo_config(a: &GrpoArgs) -> Result<GrpoConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_slice(&read(p)?).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => GrpoConfig::default(),
    };
    cfg.variant = a.variant.into();
    macro_rules! set {
        ($($f:ident => $g:ident),*) => {$(if let Some(v) = a.$f { cfg.$g = v; })*};
    }
    set!(steps => steps_per_iteration, iterations => iterations, group_size => group_size, seed => seed,
         lambda => lambda, beta => beta, clip_eps => clip_eps, learning_rate => learning_rate,
         inner_updates => inner_updates, batch_size => batch_size, eval_groups => eval_groups);
    if let Some(p) = a.path_count {
        cfg.path_count = match p {
            PlacementArg::FinalStep => PathCountPlacement::FinalStep,
            PlacementArg::EveryStep => PathCountPlacement::EveryStep,
        };
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn grpo_toy(a: GrpoArgs) -> CmdResult {
    let cfg = grpo_config(&a)?;
    let embedder = rewards::embedder_from_name(&a.embedder).map_err(|e| Failure::Usage(e.to_string()))?;
    let corpus: Vec<Task> = match &a.corpus {
        Some(p) => load_records(p)?.into_iter().map(Task::in_label_order).collect(),
        None => vec![synthetic_task()],
    };
    let log = fs::File::create(&a.log).map_err(io_at(&a.log))?;
    let mut log = BufWriter::new(log);
    let mut io_err = None;
    let outcome = train_loop(ToyStrokePolicy::new(Default::default()), &corpus, &cfg, embedder.as_ref(), |r| {
        let line = serde_json::to_string(r).expect("log record serializes");
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
    })
    .map_err(data)?;
    if let Some(e) = io_err {
        return Err(io_at(&a.log)(e));
    }
    log.flush().map_err(io_at(&a.log))?;
    let ckpt = Checkpoint::from_policy(&outcome.policy, cfg.seed);
    write(&a.checkpoint, &serde_json::to_vec(&ckpt).map_err(data)?)?;
    println!(
        "variant {} steps {}: mean reward {:.4} -> {:.4}, final score {:.4} -> {:.4}",
        cfg.variant.as_str(),
        cfg.total_steps(),
        outcome.initial.mean_reward,
        outcome.last.mean_reward,
        outcome.initial.final_score,
        outcome.last.final_score
    );
    Ok(())
}

enum Loaded {
    Record(AnnotatedSketch),
    Sketch(Sketch),
}

fn load_any(path: &Path) -> Result<Loaded, Failure> {
    if extension(path) == "svg" {
        let text = String::from_utf8(read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        import_svg(&text).map(Loaded::Sketch).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    } else {
        load_record(path).map(Loaded::Record)
    }
}

fn render(a: RenderArgs) -> CmdResult {
    let loaded = load_any(&a.input)?;
    let sketch = match &loaded {
        Loaded::Record(r) => &r.sketch,
        Loaded::Sketch(s) => s,
    };
    match extension(&a.output).as_str() {
        "svg" => write(&a.output, export_svg(sketch).as_bytes()),
        "png" => {
            let bmp = match (&loaded, a.colored) {
                (Loaded::Record(r), true) => {
                    recolor_render(&r.sketch, &r.assignment, &Palette::default()).map_err(data)?
                }
                (Loaded::Sketch(_), true) => return Err(Failure::Usage("--colored needs a record input".into())),
                _ => rasterize(sketch),
            };
            write(&a.output, &bmp.to_png().map_err(data)?)
        }
        _ => Err(Failure::Usage("output must end in .png or .svg".into())),
    }
}

fn diagviz(a: DiagvizArgs) -> CmdResult {
    let r = load_record(&a.input)?;
    let bmp = diagnostic_panel(&r.parts, &r.assignment, &r.sketch, &Palette::default()).map_err(data)?;
    write(&a.output, &bmp.to_png().map_err(data)?)
}

fn random(a: RandomArgs) -> CmdResult {
    let sketch = random_sketch(a.seed);
    match extension(&a.output).as_str() {
        "svg" => write(&a.output, export_svg(&sketch).as_bytes()),
        "png" => write(&a.output, &rasterize(&sketch).to_png().map_err(data)?),
        _ => Err(Failure::Usage("output must end in .png or .svg".into())),
    }
}

fn serve(a: ServeArgs) -> CmdResult {
    let records = match &a.records {
        Some(p) => load_records(p)?,
        None => Vec::new(),
    };
    let store = SessionStore::open(&a.data).map_err(data)?;
    let addr: SocketAddr =
        format!("{}:{}", a.host, a.port).parse().map_err(|e| Failure::Usage(format!("bad address: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(data)?;
    eprintln!("listening on http://{addr}");
    rt.block_on(partsketch_server::serve(addr, partsketch_server::AppState::new(store, records))).map_err(data)
}

/// Parses arguments; usage errors also print the usage of the subcommand.
fn parse() -> Result<Cli, ExitCode> {
    Cli::try_parse().map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = std::env::args().nth(1).unwrap_or_default();
            let usage = match cmd.find_subcommand_mut(&sub) {
                Some(c) => c.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("\n{usage}");
        }
        ExitCode::from(e.exit_code() as u8)
    })
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(c) => c,
        Err(code) => return code,
    };
    let result = match cli.command {
        Command::Annotate(a) => annotate(a),
        Command::Augment(a) => augment(a),
        Command::GrpoToy(a) => grpo_toy(a),
        Command::Render(a) => render(a),
        Command::Diagviz(a) => diagviz(a),
        Command::Random(a) => random(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
