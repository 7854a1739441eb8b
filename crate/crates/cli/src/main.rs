use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use semsplat_core::checks::{run_suite, Suite, SuiteReport};
use semsplat_core::guidance::{GuidanceOracle, RecordedOracle, RecordingOracle, RemoteOracle};
use semsplat_core::layout::{CannedPlanner, LayoutError, LayoutPlan, Planner, RemotePlanner, RemotePlannerConfig, ValidationOptions};
use semsplat_core::optim::config::EmbedderKind;
use semsplat_core::optim::views::turntable;
use semsplat_core::optim::{analytic_oracle, OptimError, Session, TrainConfig, TURNTABLE_ELEVATION};
use semsplat_core::raster::{render_composed, RenderOptions};
use semsplat_core::scene::io::load_scene;
use semsplat_core::semantic::{EmbeddingProvider, FileEmbedder, PseudoEmbedder, RemoteEmbedder};
use semsplat_core::service::ServiceClient;

/// Bad input: unparseable or invalid plans and configs.
const EXIT_INVALID: u8 = 2;
/// Missing environment: API keys, service URLs.
const EXIT_ENVIRONMENT: u8 = 3;

#[derive(Parser)]
#[command(name = "semsplat", version, about = "Compositional text-to-3D scenes with semantic Gaussian splats")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a scene prompt into a layout plan.
    Plan {
        prompt: String,
        #[arg(long, value_enum, default_value_t = PlannerKind::Canned)]
        planner: PlannerKind,
        /// Extra directory of canned plans, searched before the built-in ones.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, env = "PLANNER_ENDPOINT", default_value = "https://api.openai.com/v1/chat/completions")]
        endpoint: String,
        #[arg(long, env = "PLANNER_MODEL", default_value = "gpt-4")]
        model: String,
        /// Directory with replacement prompt templates.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Where to write the plan; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolve a plan and report overlaps and gaps between objects.
    Validate {
        plan: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        max_overlap: f64,
        #[arg(long, default_value_t = 2.0)]
        max_gap: f64,
    },
    /// Optimize a scene for a plan.
    Train {
        /// Plan file; not needed with --resume.
        plan: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` config overrides, dotted keys for nested tables.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum, default_value_t = OracleKind::Analytic)]
        oracle: OracleKind,
        #[arg(long, env = "GUIDANCE_URL")]
        guidance_url: Option<String>,
        /// Recorded oracle calls to replay (`--oracle recorded`).
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Also record every remote oracle call to this file.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render a turntable of a checkpoint.
    Render {
        checkpoint: PathBuf,
        #[arg(long, default_value = "renders")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = TURNTABLE_ELEVATION)]
        elevation: f64,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Run a verification suite and print a JSON report.
    Check {
        #[arg(value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerKind {
    Canned,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    Analytic,
    Remote,
    Recorded,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Gradients,
    Compositing,
    Masks,
    Layout,
    All,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = if let Some(e) = error.downcast_ref::<LayoutError>() {
            layout_code(e)
        } else if let Some(e) = error.downcast_ref::<OptimError>() {
            match e {
                OptimError::Config(_) => EXIT_INVALID,
                OptimError::Layout(l) => layout_code(l),
                _ => 1,
            }
        } else {
            1
        };
        Self { code, error }
    }
}

fn layout_code(e: &LayoutError) -> u8 {
    match e {
        LayoutError::Config(_) => EXIT_ENVIRONMENT,
        LayoutError::Program { .. } | LayoutError::RegionTree { .. } | LayoutError::Plan(_) | LayoutError::Json(_) => EXIT_INVALID,
        _ => 1,
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                anyhow::Error::from(e).into()
            }
        }
    )*};
}
from_core!(LayoutError, OptimError);

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan { prompt, planner, fixtures, endpoint, model, templates, out } => {
            cmd_plan(&prompt, planner, fixtures, &endpoint, &model, templates.as_deref(), out.as_deref())
        }
        Command::Validate { plan, max_overlap, max_gap } => {
            cmd_validate(&plan, &ValidationOptions { max_overlap_fraction: max_overlap, max_gap })
        }
        Command::Train { plan, config, overrides, out, seed, iterations, oracle, guidance_url, recording, record, resume } => {
            let args = TrainArgs { plan, config, overrides, out, seed, iterations, oracle, guidance_url, recording, record, resume };
            cmd_train(args)
        }
        Command::Render { checkpoint, out, views, elevation, size } => cmd_render(&checkpoint, &out, views, elevation, size),
        Command::Check { suite, seed, report } => cmd_check(suite, seed, report.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_plan(
    prompt: &str,
    kind: PlannerKind,
    fixtures: Option<PathBuf>,
    endpoint: &str,
    model: &str,
    templates: Option<&Path>,
    out: Option<&Path>,
) -> Outcome {
    let plan = match kind {
        PlannerKind::Canned => CannedPlanner::new(fixtures).plan(prompt)?,
        PlannerKind::Remote => {
            let mut cfg = RemotePlannerConfig::from_env(endpoint, model)?;
            if let Some(dir) = templates {
                cfg = cfg.with_templates(dir)?;
            }
            RemotePlanner::new(cfg).plan(prompt)?
        }
    };
    let layout = plan.resolve()?;
    let report = layout.validate(&ValidationOptions::default());
    match out {
        Some(path) => {
            plan.save(path)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{}", plan.to_json()),
    }
    eprint!("{report}");
    if !report.is_clean() {
        eprintln!("warning: the layout has flagged object pairs");
    }
    Ok(())
}

fn cmd_validate(path: &Path, opts: &ValidationOptions) -> Outcome {
    let plan = LayoutPlan::load(path)?;
    let layout = plan.resolve()?;
    let report = layout.validate(opts);
    print!("{report}");
    let regions: usize = layout.objects.iter().map(|o| o.regions.len()).sum();
    println!("{} objects, {regions} regions", layout.objects.len());
    if report.is_clean() {
        Ok(())
    } else {
        let flagged: Vec<String> = report.flagged().map(|p| format!("{}/{}", p.a, p.b)).collect();
        Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("flagged pairs: {}", flagged.join(", "))))
    }
}

struct TrainArgs {
    plan: Option<PathBuf>,
    config: Option<PathBuf>,
    overrides: Vec<String>,
    out: PathBuf,
    seed: Option<u64>,
    iterations: Option<usize>,
    oracle: OracleKind,
    guidance_url: Option<String>,
    recording: Option<PathBuf>,
    record: Option<PathBuf>,
    resume: Option<PathBuf>,
}

impl TrainArgs {
    fn all_overrides(&self) -> Vec<String> {
        let mut all = self.overrides.clone();
        if let Some(s) = self.seed {
            all.push(format!("seed={s}"));
        }
        if let Some(n) = self.iterations {
            all.push(format!("iterations={n}"));
        }
        all
    }
}

fn service_url(flag: &Option<String>, config: &TrainConfig) -> Result<String, Failure> {
    flag.clone().or_else(|| config.guidance.url.clone()).filter(|u| !u.trim().is_empty()).ok_or_else(|| {
        Failure::new(EXIT_ENVIRONMENT, anyhow::anyhow!("no guidance service: set GUIDANCE_URL or pass --guidance-url"))
    })
}

fn client(url: &str, config: &TrainConfig) -> ServiceClient {
    ServiceClient::new(url, Duration::from_secs_f64(config.guidance.timeout_secs), config.guidance.retries)
}

fn embedder(config: &TrainConfig, url: &Option<String>) -> Result<Box<dyn EmbeddingProvider>, Failure> {
    let s = &config.semantic;
    Ok(match s.embedder {
        EmbedderKind::Pseudo => Box::new(PseudoEmbedder::new(s.embedder_seed, s.d_h)),
        EmbedderKind::File => {
            let table = s.table.as_ref().ok_or_else(|| {
                Failure::new(EXIT_INVALID, anyhow::anyhow!("semantic.embedder = \"file\" needs semantic.table"))
            })?;
            Box::new(FileEmbedder::load(Path::new(table)).context("loading the embedding table")?)
        }
        EmbedderKind::Remote => {
            let url = service_url(url, config)?;
            Box::new(RemoteEmbedder::connect(client(&url, config)).context("connecting the text encoder")?)
        }
    })
}

fn oracle(args: &TrainArgs, config: &TrainConfig) -> Result<Box<dyn GuidanceOracle>, Failure> {
    Ok(match args.oracle {
        OracleKind::Analytic => {
            if config.analytic.targets.is_empty() {
                log::warn!("analytic oracle has no targets; every region is pulled toward the background color");
            }
            Box::new(analytic_oracle(config)?)
        }
        OracleKind::Remote => {
            let url = service_url(&args.guidance_url, config)?;
            let remote = RemoteOracle::connect(client(&url, config), config.guidance.cfg_scale)
                .context("guidance service handshake")?;
            match &args.record {
                Some(path) => Box::new(RecordingOracle::create(remote, path).context("opening the recording")?),
                None => Box::new(remote),
            }
        }
        OracleKind::Recorded => {
            let path = args
                .recording
                .clone()
                .or_else(|| config.guidance.recording.as_ref().map(PathBuf::from))
                .ok_or_else(|| Failure::new(EXIT_INVALID, anyhow::anyhow!("--oracle recorded needs --recording")))?;
            Box::new(RecordedOracle::load(&path).with_context(|| format!("loading {}", path.display()))?)
        }
    })
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let overrides = args.all_overrides();
    let (mut session, resumed) = match &args.resume {
        Some(dir) => {
            let config = TrainConfig::load(&dir.join("config.toml"))?.with_overrides(&overrides)?;
            let provider = embedder(&config, &args.guidance_url)?;
            (Session::load_checkpoint(dir, provider.as_ref(), &overrides)?, true)
        }
        None => {
            let plan_path = args.plan.as_ref().ok_or_else(|| {
                Failure::new(EXIT_INVALID, anyhow::anyhow!("train needs a plan file or --resume"))
            })?;
            let plan = LayoutPlan::load(plan_path)?;
            let base = match &args.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            let config = base.with_overrides(&overrides)?;
            let provider = embedder(&config, &args.guidance_url)?;
            std::fs::create_dir_all(&args.out).context("creating the output directory")?;
            plan.save(&args.out.join("plan.json"))?;
            (Session::initialize(&plan, &config, provider.as_ref())?, false)
        }
    };
    std::fs::create_dir_all(&args.out).context("creating the output directory")?;
    std::fs::write(args.out.join("config.toml"), session.config.to_toml()).context("writing config.toml")?;
    let oracle = oracle(&args, &session.config)?;
    let metrics_path = args.out.join("metrics.jsonl");
    let file = if resumed {
        OpenOptions::new().create(true).append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .with_context(|| format!("opening {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(file);
    log::info!(
        "training from step {} to {} with {} Gaussians",
        session.step,
        session.config.iterations,
        session.scene.gaussian_count()
    );
    let summary = session.train(oracle.as_ref(), &mut metrics, Some(&args.out))?;
    metrics.flush().context("flushing metrics")?;
    for r in &summary.eval.regions {
        let err = r.error.map(|e| format!("{e:.4}")).unwrap_or_else(|| "-".into());
        println!("{}/{}: {} px, error {err}", r.object, r.subprompt, r.pixels);
    }
    match summary.eval.max_error {
        Some(e) => println!("steps {}..{}, max region error {e:.4}", summary.start_step, summary.final_step),
        None => println!("steps {}..{}", summary.start_step, summary.final_step),
    }
    Ok(())
}

fn cmd_render(checkpoint: &Path, out: &Path, views: usize, elevation: f64, size: Option<usize>) -> Outcome {
    let config = TrainConfig::load(&checkpoint.join("config.toml"))?;
    let scene = load_scene(&checkpoint.join("scene.json")).map_err(OptimError::from)?;
    let (w, h) = size.map_or((config.width, config.height), |s| (s, s));
    std::fs::create_dir_all(out).context("creating the output directory")?;
    let all: Vec<usize> = (0..scene.objects.len()).collect();
    let opts = RenderOptions { retain: false, feature_dim: Some(0) };
    for (i, cam) in turntable(&scene, &config.camera, views, elevation, w, h)?.iter().enumerate() {
        let img = render_composed(&scene, &all, cam, &opts);
        let path = out.join(format!("view_{i:02}.png"));
        img.color.save_png(&path).map_err(OptimError::from)?;
    }
    println!("wrote {views} views to {}", out.display());
    Ok(())
}

fn cmd_check(suite: SuiteArg, seed: u64, report_path: Option<&Path>) -> Outcome {
    let suites: Vec<Suite> = match suite {
        SuiteArg::Gradients => vec![Suite::Gradients],
        SuiteArg::Compositing => vec![Suite::Compositing],
        SuiteArg::Masks => vec![Suite::Masks],
        SuiteArg::Layout => vec![Suite::Layout],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    let reports: Vec<SuiteReport> = suites.into_iter().map(|s| run_suite(s, seed)).collect();
    let passed = reports.iter().all(|r| r.passed);
    let json = serde_json::json!({ "passed": passed, "suites": reports });
    let text = serde_json::to_string_pretty(&json).context("serializing the report")?;
    match report_path {
        Some(p) => std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    for r in &reports {
        let failed = r.cases.iter().filter(|c| !c.passed).count();
        eprintln!("{}: {} ({} cases, {failed} failed)", r.suite, if r.passed { "pass" } else { "FAIL" }, r.cases.len());
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::new(1, anyhow::anyhow!("verification failed")))
    }
}
