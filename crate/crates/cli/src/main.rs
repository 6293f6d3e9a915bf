use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use styleco::config::RunConfig;
use styleco::io::ConstraintFile;
use styleco::pipeline::Mode;
use styleco::synth::{benchmark, planted_labels, planted_triplets, truth_map, write_benchmark, BenchmarkSpec};
use styleco::workflow;
use styleco::Error;

/// Style co-analysis of 3D shape collections.
#[derive(Parser)]
#[command(name = "styleco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render every shape in the manifest into the output directory.
    Render(Common),
    /// Run style co-analysis and write a run directory.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "unsupervised")]
        mode: Mode,
    },
    /// Style-preserving simplification of the analyzed shapes.
    Simplify {
        #[command(flatten)]
        common: Common,
        /// Run directory produced by `analyze`; defaults to the output directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Overrides `simplify.reduction`.
        #[arg(long)]
        reduction: Option<f64>,
        /// Defaults to `<run-dir>/simplified`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the view showing the most style patches for every shape.
    Bestview {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Defaults to `<run-dir>/bestview.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the planted-style benchmark collection.
    Synth {
        /// Optional configuration; its `output_dir` is used when `--out` is absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        shapes: usize,
        /// Body panel subdivision.
        #[arg(long, default_value_t = 1)]
        resolution: usize,
        /// Fraction of shapes per style written to `labels.txt`.
        #[arg(long, default_value_t = 0.3)]
        label_fraction: f64,
        /// Number of triplets written to `triplets.txt`.
        #[arg(long, default_value_t = 100)]
        triplets: usize,
    },
}

enum Failure {
    Config(String),
    Partial(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            Error::Parse { .. } | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            other => Failure::Partial(other.to_string()),
        }
    }
}

type Outcome = Result<usize, Failure>;

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(Failure::Config("--jobs must be positive".into()));
        }
        // a pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    Ok(cfg)
}

fn run_dir(cfg: &RunConfig, given: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    match given {
        Some(p) => Ok(p.clone()),
        None => Ok(workflow::output_dir(cfg)?.to_path_buf()),
    }
}

fn report(failures: &[(String, String)]) -> usize {
    for (id, e) in failures {
        eprintln!("failed {id}: {e}");
    }
    failures.len()
}

fn render(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let out = workflow::output_dir(&cfg)?.to_path_buf();
    let coll = workflow::render_collection(&cfg)?;
    workflow::write_renders(&coll, &out)?;
    println!("rendered {} cached {} failed {}", coll.rendered, coll.cache_hits, coll.failures.len());
    Ok(report(&coll.failures))
}

fn analyze(common: &Common, mode: Mode) -> Outcome {
    let cfg = load(common)?;
    let out = workflow::output_dir(&cfg)?.to_path_buf();
    let key = workflow::run_key(&cfg, mode)?;
    if workflow::run_is_current(&out, &key) {
        println!("up to date: {}", out.display());
        return Ok(0);
    }
    let a = workflow::analyze(&cfg, mode)?;
    let r = &a.result;
    println!("shapes {} clusters {} style patches {} iterations {}", r.shape_ids.len(), r.clusters, r.style_patches.len(), r.iterations.len());
    if let Some(p) = r.purity {
        println!("purity {p:.4}");
    }
    if let Some(c) = r.constraint_satisfaction {
        println!("constraint satisfaction {c:.4}");
    }
    if mode == Mode::Labels {
        println!("labeled shapes {}", r.n_labeled);
    }
    let failed = report(&a.collection.failures);
    if failed == 0 {
        workflow::write_run_key(&out, &key)?;
    }
    Ok(failed)
}

fn simplify(common: &Common, given: &Option<PathBuf>, reduction: Option<f64>, out: &Option<PathBuf>) -> Outcome {
    let cfg = load(common)?;
    let dir = run_dir(&cfg, given)?;
    let mut scfg = cfg.simplify.clone();
    if let Some(r) = reduction {
        if !(0.0..1.0).contains(&r) {
            return Err(Failure::Config("--reduction must lie in [0, 1)".into()));
        }
        scfg.reduction = r;
    }
    let out = out.clone().unwrap_or_else(|| dir.join("simplified"));
    let (rows, failures) = workflow::simplify_collection(&cfg, &dir, &scfg, &out)?;
    let (before, after) = rows.iter().fold((0, 0), |(b, a), r| (b + r.stats.faces_before, a + r.stats.faces_after));
    println!("simplified {} shapes, faces {before} -> {after}", rows.len());
    Ok(report(&failures))
}

fn bestview(common: &Common, given: &Option<PathBuf>, out: &Option<PathBuf>) -> Outcome {
    let cfg = load(common)?;
    let dir = run_dir(&cfg, given)?;
    let out = out.clone().unwrap_or_else(|| dir.join("bestview.csv"));
    let (rows, failures) = workflow::bestview_collection(&cfg, &dir, &out)?;
    println!("best views for {} shapes written to {}", rows.len(), out.display());
    Ok(report(&failures))
}

fn write_text(path: &Path, text: String) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn synth(config: &Option<PathBuf>, out: &Option<PathBuf>, spec: BenchmarkSpec, label_fraction: f64, triplets: usize) -> Outcome {
    let out = match (out, config) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => workflow::output_dir(&RunConfig::load(c)?)?.to_path_buf(),
        (None, None) => return Err(Failure::Config("synth needs --out or a config with output_dir".into())),
    };
    if !(0.0..=1.0).contains(&label_fraction) {
        return Err(Failure::Config("--label-fraction must lie in [0, 1]".into()));
    }
    let shapes = benchmark(&spec)?;
    write_benchmark(&shapes, &out)?;
    let truth = truth_map(&shapes);
    let labels = ConstraintFile { labels: planted_labels(&truth, label_fraction, spec.seed), triplets: Vec::new() };
    write_text(&out.join("labels.txt"), labels.to_text())?;
    if triplets > 0 {
        let t = ConstraintFile { labels: Default::default(), triplets: planted_triplets(&truth, triplets, spec.seed)? };
        write_text(&out.join("triplets.txt"), t.to_text())?;
    }
    println!("wrote {} shapes to {}", shapes.len(), out.display());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Render(c) => render(c),
        Command::Analyze { common, mode } => analyze(common, *mode),
        Command::Simplify { common, run_dir, reduction, out } => simplify(common, run_dir, *reduction, out),
        Command::Bestview { common, run_dir, out } => bestview(common, run_dir, out),
        Command::Synth { config, out, seed, shapes, resolution, label_fraction, triplets } => {
            let spec = BenchmarkSpec { shapes: *shapes, seed: *seed, resolution: *resolution };
            synth(config, out, spec, *label_fraction, *triplets)
        }
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} shape(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Partial(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
    }
}
