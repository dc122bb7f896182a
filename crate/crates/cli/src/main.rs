//! `katlas`: simulate programs into encoded traces, find kernels in them,
//! extract producer/consumer pipelines and sweep the detector parameters.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use katlas_core::analysis::{analyze, sweep, sweep_csv, AnalysisConfig, KernelReport, SweepAxis};
use katlas_core::codec::{self, CodecConfig, Compression};
use katlas_core::detect::{Growth, DEFAULT_HOT_COUNT, DEFAULT_THRESHOLD};
use katlas_core::legalize::Kernel;
use katlas_core::memdep::{build_pipeline, extract_dependencies, segment_instances, PipelineOptions};
use katlas_core::sim::canonical::{canonical_program, canonical_programs, CANONICAL_NAMES, DEFAULT_SEED};
use katlas_core::sim::{random_program, run_with, CfgProgram, RunOptions, SimError, DEFAULT_MAX_EVENTS};
use katlas_core::{AffinityMatrix, Trace};

const EXIT_INPUT: u8 = 2;
const EXIT_CAP: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "katlas", version, about = "Dynamic trace kernel detection and pipeline extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a program and write its encoded trace.
    Simulate(SimulateArgs),
    /// Detect kernels in a trace and write the kernels document.
    Analyze(AnalyzeArgs),
    /// Build the producer/consumer graph between kernels.
    Pipeline(PipelineArgs),
    /// Average kernel count and coverage over a parameter grid.
    Sweep(SweepArgs),
    /// List the built-in programs, or print one as program JSON.
    Programs {
        name: Option<String>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Program JSON file, built-in program name, or `random:<n>`.
    program: String,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Record loads and stores (`--addresses false` keeps block entries only).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    addresses: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_EVENTS)]
    max_events: u64,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long, default_value_t = codec::DEFAULT_BURST_BYTES)]
    burst_bytes: usize,
    #[arg(long, value_enum, default_value_t = CompressionArg::Deflate)]
    compression: CompressionArg,
    #[arg(long, default_value_t = codec::DEFAULT_DEFLATE_LEVEL)]
    level: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompressionArg {
    None,
    Deflate,
}

#[derive(Args, Clone, Copy)]
struct DetectArgs {
    #[arg(long, default_value_t = katlas_core::analysis::DEFAULT_RADIUS)]
    radius: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_HOT_COUNT)]
    hot: u64,
    #[arg(long, value_enum, default_value_t = GrowthArg::SeedRow)]
    growth: GrowthArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum GrowthArg {
    SeedRow,
    MinMass,
}

impl DetectArgs {
    fn config(&self) -> AnalysisConfig<f64> {
        let mut cfg = AnalysisConfig::new(self.radius, self.threshold, self.hot);
        cfg.detect.growth = match self.growth {
            GrowthArg::SeedRow => Growth::SeedRow,
            GrowthArg::MinMass => Growth::MinMass,
        };
        cfg
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    #[command(flatten)]
    detect: DetectArgs,
    /// Kernels document path (stdout when absent).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also dump the affinity matrix as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    trace: PathBuf,
    kernels: PathBuf,
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Attribute nested kernels to their top-level ancestor.
    #[arg(long)]
    roll_up: bool,
    /// Color kernels by first execution in the DOT output.
    #[arg(long)]
    temporal: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Threshold,
    Radius,
    Hot,
}

#[derive(Args)]
struct SweepArgs {
    /// Encoded traces; all share the base parameters below.
    traces: Vec<PathBuf>,
    /// Sweep the built-in corpus, each program at its own base parameters.
    #[arg(long)]
    canonical: bool,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated grid values.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    #[command(flatten)]
    detect: DetectArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Programs { name } => programs(name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("katlas: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_program(source: &str) -> Result<CfgProgram, Failure> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{source}: {e}")))?;
        return CfgProgram::from_json(&text).map_err(|e| Failure::input(format!("{source}: {e}")));
    }
    if let Some(n) = source.strip_prefix("random:") {
        let seed = n
            .parse()
            .map_err(|_| Failure::input(format!("bad random program seed '{n}'")))?;
        return Ok(random_program(seed));
    }
    canonical_program(source).map(|c| c.program).ok_or_else(|| {
        Failure::input(format!(
            "'{source}' is neither a file nor a built-in program ({})",
            CANONICAL_NAMES.join(", ")
        ))
    })
}

fn simulate(a: SimulateArgs) -> Outcome {
    let program = load_program(&a.program)?;
    let config = CodecConfig::new(
        a.codec.burst_bytes,
        match a.codec.compression {
            CompressionArg::None => Compression::None,
            CompressionArg::Deflate => Compression::Deflate,
        },
        a.codec.level,
    )
    .map_err(|e| Failure::input(e.to_string()))?;
    let opts = RunOptions {
        seed: a.seed,
        log_addresses: a.addresses,
        max_events: a.max_events,
    };
    let trace = run_with(&program, &opts).map_err(|e| match e {
        SimError::EventCap { .. } => Failure {
            code: EXIT_CAP,
            message: e.to_string(),
        },
        other => Failure::input(other.to_string()),
    })?;
    let file = File::create(&a.out).map_err(|e| Failure::input(format!("{}: {e}", a.out.display())))?;
    let stats = codec::write_trace(
        trace.events(),
        trace.block_count(),
        a.addresses,
        config,
        BufWriter::new(file),
    )
    .map_err(|e| Failure::input(format!("{}: {e}", a.out.display())))?;
    eprintln!(
        "{}: {} events, {} text bytes, {} bytes written",
        program.name, stats.events, stats.text_bytes, stats.bytes_written
    );
    Ok(())
}

fn load_trace(path: &Path) -> Result<Trace, Failure> {
    let file = File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    codec::read_trace(BufReader::new(file))
        .and_then(|r| r.into_trace())
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::input(format!("stdout: {e}"))),
    }
}

fn analyze_cmd(a: AnalyzeArgs) -> Outcome {
    let trace = load_trace(&a.trace)?;
    let config = a.detect.config();
    let analysis = analyze(&trace, &config).map_err(|e| Failure::input(e.to_string()))?;
    if let Some(csv) = &a.csv {
        let matrix = AffinityMatrix::<f64>::from_trace(&trace, config.radius)
            .map_err(|e| Failure::input(e.to_string()))?;
        emit(Some(csv), &matrix.to_csv())?;
    }
    let report = KernelReport::new(&trace, &analysis);
    let mut json = report.to_json();
    json.push('\n');
    emit(a.json.as_deref(), &json)?;
    eprintln!(
        "{} kernels, coverage {:.4} ({}/{} block entries)",
        report.kernels.len(),
        report.coverage.ratio,
        report.coverage.covered,
        report.coverage.total
    );
    for r in &report.rejected {
        eprintln!("rejected: {r}");
    }
    Ok(())
}

/// Accepts the `analyze` document or a bare kernel list.
fn load_kernels(path: &Path) -> Result<Vec<Kernel>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if let Ok(report) = serde_json::from_str::<KernelReport>(&text) {
        return Ok(report.kernels());
    }
    serde_json::from_str::<Vec<Kernel>>(&text)
        .map_err(|e| Failure::input(format!("{}: not a kernels document: {e}", path.display())))
}

fn pipeline(a: PipelineArgs) -> Outcome {
    let kernels = load_kernels(&a.kernels)?;
    let trace = load_trace(&a.trace)?;
    let instances = segment_instances(&trace, &kernels);
    let deps = extract_dependencies(&trace, &instances).map_err(|e| Failure::input(e.to_string()))?;
    let graph = build_pipeline(&deps, &instances, &kernels, PipelineOptions { roll_up: a.roll_up })
        .map_err(|e| Failure::input(e.to_string()))?;
    if let Some(p) = &a.json {
        emit(Some(p), &(graph.to_json() + "\n"))?;
    }
    if a.dot.is_some() || a.json.is_none() {
        emit(a.dot.as_deref(), &graph.to_dot(a.temporal))?;
    }
    eprintln!(
        "{} nodes, {} edges, {} loads from outside any store",
        graph.nodes.len(),
        graph.edges.len(),
        graph.external_loads
    );
    Ok(())
}

fn parse_grid<T: std::str::FromStr>(grid: &str) -> Result<Vec<T>, Failure> {
    grid.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Failure::input(format!("bad grid value '{s}'"))))
        .collect()
}

fn sweep_cmd(a: SweepArgs) -> Outcome {
    let axis = match a.axis {
        AxisArg::Threshold => SweepAxis::Threshold(parse_grid(&a.grid)?),
        AxisArg::Radius => SweepAxis::Radius(parse_grid(&a.grid)?),
        AxisArg::Hot => SweepAxis::Hot(parse_grid(&a.grid)?),
    };
    if axis.is_empty() {
        return Err(Failure::input("parameter grid is empty"));
    }
    let mut owned: Vec<(Trace, AnalysisConfig<f64>)> = Vec::new();
    for path in &a.traces {
        owned.push((load_trace(path)?, a.detect.config()));
    }
    if a.canonical {
        for c in canonical_programs() {
            let trace = run_with(&c.program, &RunOptions::seeded(c.seed))
                .map_err(|e| Failure::input(e.to_string()))?;
            let mut cfg = AnalysisConfig::from(c.recommended);
            cfg.detect.growth = a.detect.config().detect.growth;
            owned.push((trace, cfg));
        }
    }
    let corpus: Vec<(&Trace, AnalysisConfig<f64>)> = owned.iter().map(|(t, c)| (t, *c)).collect();
    let rows = sweep(&corpus, &axis).map_err(|e| Failure::input(e.to_string()))?;
    emit(a.csv.as_deref(), &sweep_csv(&rows))
}

fn programs(name: Option<String>) -> Outcome {
    match name {
        None => {
            let mut out = String::new();
            for c in canonical_programs() {
                let r = c.recommended;
                out += &format!(
                    "{}\tblocks={}\tseed={}\tradius={}\tthreshold={}\thot={}\n",
                    c.program.name,
                    c.program.block_count(),
                    c.seed,
                    r.radius,
                    r.threshold,
                    r.hot_count
                );
            }
            emit(None, &out)
        }
        Some(n) => {
            let program = load_program(&n)?;
            emit(None, &(program.to_json() + "\n"))
        }
    }
}
