//! Command-line interface: dataset synthesis, training, refinement,
//! evaluation, and gradient checking.
//!
//! Exit codes are a stable contract: 0 success, 1 verification or runtime
//! failure, 2 input/parse error. Every report (loss CSV, trace CSV, metrics
//! CSV, refined PDB, gradient-check output) embeds the resolved run
//! configuration, as `#`-prefixed comment lines in CSVs and REMARK records
//! in PDBs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::energy::total_guidance_energy;
use crate::error::{Error, Result};
use crate::manifest::{resolve_path, Manifest, ManifestPair};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::pdb::{parse_pdb_backbone, write_pdb_backbone};
use crate::sampler::{refine, refine_sde, TraceRow};
use crate::structure::{
    resolve_selections, rmsd_backbone, synth_prior, NoiseSpec, RefinementProblem, Selection,
};
use crate::train::{
    build_samples, grad_check, train, GradCheckCorrupt, TrainSample, ENERGY_GRAD_TOL,
    LOSS_CSV_HEADER, MODEL_GRAD_TOL,
};

#[derive(Parser)]
#[command(
    name = "loopflow",
    version,
    about = "Energy-guided flow refinement of backbone loops"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize noisy prior structures for a directory of targets.
    Synth(SynthArgs),
    /// Train the vector-field model on a manifest of target/prior pairs.
    Train(TrainArgs),
    /// Refine a prior structure with a trained checkpoint.
    Refine(RefineArgs),
    /// Score refined structures against the manifest's targets.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of target PDB files.
    #[arg(long)]
    targets: PathBuf,
    /// Refined span as chain:start-end (repeatable).
    #[arg(long = "cdr", required = true)]
    cdr: Vec<String>,
    /// Positional noise sigma (Angstrom).
    #[arg(long = "sigma-x", default_value_t = 1.0)]
    sigma_x: f64,
    /// Rotational noise sigma (radians).
    #[arg(long = "sigma-r", default_value_t = 0.2)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for priors and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// key=value config file; CLI --set overrides win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override as key=value (repeatable).
    #[arg(long = "set")]
    set: Vec<String>,
    /// Checkpoint output path; the loss CSV lands next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    /// Prior structure (PDB).
    #[arg(long)]
    prior: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Refined span as chain:start-end (repeatable).
    #[arg(long = "cdr", required = true)]
    cdr: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set")]
    set: Vec<String>,
    /// Refined structure output (PDB).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-step trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of refined structures named like the priors.
    #[arg(long)]
    refined: PathBuf,
    #[arg(long = "set")]
    set: Vec<String>,
    /// Metrics CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate up to this many structures concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test hook: corrupt one analytic gradient and expect failure.
    #[arg(long, value_parser = ["energy", "model"])]
    corrupt: Option<String>,
}

/// Failure with the exit-code phase attached: input/parse errors exit 2,
/// computation errors exit 1.
enum Failure {
    Input(Error),
    Run(Error),
}

type CmdResult = std::result::Result<i32, Failure>;

trait Phase<T> {
    fn input(self) -> std::result::Result<T, Failure>;
    fn run(self) -> std::result::Result<T, Failure>;
}

impl<T> Phase<T> for Result<T> {
    fn input(self) -> std::result::Result<T, Failure> {
        self.map_err(Failure::Input)
    }
    fn run(self) -> std::result::Result<T, Failure> {
        self.map_err(Failure::Run)
    }
}

/// Parses arguments from the process environment and runs the command.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Refine(args) => cmd_refine(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::File {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::File {
        path: path.display().to_string(),
        source: e,
    })
}

fn parse_cdrs(specs: &[String]) -> Result<Vec<Selection>> {
    specs.iter().map(|s| s.parse()).collect()
}

fn parse_set_flags(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{s}'")))
        })
        .collect()
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => Some(read_text(p)?),
        None => None,
    };
    let overrides = parse_set_flags(sets)?;
    RunConfig::resolve(text.as_deref(), &overrides)
}

/// Resolved config as `# key=value` comment lines for CSV reports.
fn config_comments(cfg: &RunConfig) -> String {
    cfg.echo().lines().map(|l| format!("# {l}\n")).collect()
}

/// Resolved config as REMARK records for PDB reports.
fn config_remarks(cfg: &RunConfig) -> String {
    cfg.echo()
        .lines()
        .map(|l| format!("REMARK 100 LOOPFLOW {l}\n"))
        .collect()
}

/// Sorted `.pdb` entries of a directory.
fn pdb_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::File {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "pdb"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .pdb files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    parse_cdrs(&args.cdr).input()?;
    let noise = NoiseSpec {
        sigma_x: args.sigma_x,
        sigma_r: args.sigma_r,
        seed: args.seed,
    };
    noise.validate().input()?;
    let targets = pdb_files(&args.targets).input()?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Error::File {
            path: args.out.display().to_string(),
            source: e,
        })
        .run()?;

    let selections = parse_cdrs(&args.cdr).input()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut pairs = Vec::with_capacity(targets.len());
    for path in &targets {
        let chains = parse_pdb_backbone(&read_text(path).input()?).input()?;
        let prior = synth_prior(&chains, &selections, &noise, &mut rng).input()?;
        let name = path.file_name().expect("pdb_files yields files");
        write_text(&args.out.join(name), &write_pdb_backbone(&prior)).run()?;
        let target_path = fs::canonicalize(path).unwrap_or_else(|_| path.clone());
        pairs.push(ManifestPair {
            target: target_path.display().to_string(),
            prior: name.to_string_lossy().into_owned(),
            selections: args.cdr.clone(),
        });
    }
    let count = pairs.len();
    let manifest = Manifest { pairs, noise };
    manifest.save(&args.out.join("manifest.json")).run()?;
    println!("{} priors -> {}", count, args.out.display());
    Ok(0)
}

/// Loads every manifest pair into training samples.
fn load_samples(manifest_path: &Path, manifest: &Manifest) -> Result<Vec<TrainSample>> {
    let mut samples = Vec::new();
    for pair in &manifest.pairs {
        let sels = pair.parsed_selections()?;
        let target =
            parse_pdb_backbone(&read_text(&resolve_path(manifest_path, &pair.target))?)?;
        let prior = parse_pdb_backbone(&read_text(&resolve_path(manifest_path, &pair.prior))?)?;
        let problem = RefinementProblem::new(prior, Some(target), sels)?;
        samples.extend(build_samples(&problem)?);
    }
    Ok(samples)
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let cfg = load_config(args.config.as_deref(), &args.set).input()?;
    let manifest = Manifest::load(&args.manifest).input()?;
    let samples = load_samples(&args.manifest, &manifest).input()?;

    let t0 = Instant::now();
    let (params, rows) = train(&samples, &cfg).run()?;
    save_checkpoint(&args.out, &params).run()?;

    let mut csv = config_comments(&cfg);
    csv.push_str(LOSS_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    let csv_path = args.out.with_extension("loss.csv");
    write_text(&csv_path, &csv).run()?;
    println!(
        "trained {} samples for {} epochs in {:.1}s -> {}",
        samples.len(),
        cfg.epochs,
        t0.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_refine(args: RefineArgs) -> CmdResult {
    let cfg = load_config(args.config.as_deref(), &args.set).input()?;
    let selections = parse_cdrs(&args.cdr).input()?;
    let chains = parse_pdb_backbone(&read_text(&args.prior).input()?).input()?;
    let params = load_checkpoint(&args.checkpoint).input()?;
    let problem = RefinementProblem::new(chains, None, selections).input()?;

    let energy = cfg.energy_params();
    let sampler_cfg = cfg.sampler_config();
    let t0 = Instant::now();
    let (refined, trace) = if cfg.zeta > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        refine_sde(&problem, &params, &energy, &sampler_cfg, &mut rng).run()?
    } else {
        refine(&problem, &params, &energy, &sampler_cfg).run()?
    };

    let mut out = config_remarks(&cfg);
    out.push_str(&write_pdb_backbone(&refined));
    write_text(&args.out, &out).run()?;
    if let Some(trace_path) = &args.trace {
        let mut csv = config_comments(&cfg);
        csv.push_str(TraceRow::CSV_HEADER);
        csv.push('\n');
        for row in &trace {
            csv.push_str(&row.csv_line());
            csv.push('\n');
        }
        write_text(trace_path, &csv).run()?;
    }
    println!(
        "refined {} in {:.2}s -> {}",
        args.prior.display(),
        t0.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(0)
}

/// One metrics table row; improvement is a percentage of the prior RMSD.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub id: String,
    pub cdr: String,
    pub prior_rmsd: f64,
    pub refined_rmsd: f64,
    pub improvement: f64,
    pub final_energy: f64,
    pub wall_time: f64,
    pub failed: bool,
}

pub const METRICS_CSV_HEADER: &str =
    "id,cdr,prior_rmsd,refined_rmsd,improvement,final_energy,wall_time,status";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        if self.failed {
            return format!("{},{},,,,,{:.3},failed", self.id, self.cdr, self.wall_time);
        }
        format!(
            "{},{},{:.4},{:.4},{:.2},{:.6},{:.3},ok",
            self.id,
            self.cdr,
            self.prior_rmsd,
            self.refined_rmsd,
            self.improvement,
            self.final_energy,
            self.wall_time
        )
    }
}

/// Guidance energy of the selected span, summed over the chains it touches.
fn selection_energy(
    chains: &[crate::frames::BackboneChain],
    sel: Selection,
    cfg: &RunConfig,
) -> Result<f64> {
    let resolved = resolve_selections(chains, &[sel])?;
    let params = cfg.energy_params();
    let mut total = 0.0;
    for (chain, indices) in chains.iter().zip(&resolved) {
        if !indices.is_empty() {
            total += total_guidance_energy(chain, indices, &params)?.0;
        }
    }
    Ok(total)
}

fn eval_pair_rows(
    manifest_path: &Path,
    pair: &ManifestPair,
    refined_dir: &Path,
    cfg: &RunConfig,
) -> Result<Vec<MetricsRow>> {
    let t0 = Instant::now();
    let id = file_stem(Path::new(&pair.prior));
    let sels = pair.parsed_selections()?;
    let target = parse_pdb_backbone(&read_text(&resolve_path(manifest_path, &pair.target))?)?;
    let prior = parse_pdb_backbone(&read_text(&resolve_path(manifest_path, &pair.prior))?)?;
    let refined_name = Path::new(&pair.prior)
        .file_name()
        .ok_or_else(|| Error::Manifest(format!("bad prior path '{}'", pair.prior)))?;
    let refined = parse_pdb_backbone(&read_text(&refined_dir.join(refined_name))?)?;

    let mut rows = Vec::with_capacity(sels.len());
    for sel in sels {
        let prior_rmsd = rmsd_backbone(&prior, &target, &[sel])?;
        let refined_rmsd = rmsd_backbone(&refined, &target, &[sel])?;
        let improvement = if prior_rmsd > 0.0 {
            100.0 * (prior_rmsd - refined_rmsd) / prior_rmsd
        } else {
            0.0
        };
        rows.push(MetricsRow {
            id: id.clone(),
            cdr: sel.to_string(),
            prior_rmsd,
            refined_rmsd,
            improvement,
            final_energy: selection_energy(&refined, sel, cfg)?,
            wall_time: t0.elapsed().as_secs_f64(),
            failed: false,
        });
    }
    Ok(rows)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let cfg = load_config(None, &args.set).input()?;
    let manifest = Manifest::load(&args.manifest).input()?;
    let jobs = args.jobs.clamp(1, manifest.pairs.len().max(1));

    // Pairs are independent; workers claim indices and store results by
    // slot, so the output table keeps manifest order.
    let results: Mutex<Vec<Option<Vec<MetricsRow>>>> =
        Mutex::new(vec![None; manifest.pairs.len()]);
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= manifest.pairs.len() {
                    break;
                }
                let pair = &manifest.pairs[i];
                let t0 = Instant::now();
                let rows = eval_pair_rows(&args.manifest, pair, &args.refined, &cfg)
                    .unwrap_or_else(|e| {
                        let id = file_stem(Path::new(&pair.prior));
                        eprintln!("warn: {id}: {e}");
                        vec![MetricsRow {
                            id,
                            cdr: "-".into(),
                            prior_rmsd: 0.0,
                            refined_rmsd: 0.0,
                            improvement: 0.0,
                            final_energy: 0.0,
                            wall_time: t0.elapsed().as_secs_f64(),
                            failed: true,
                        }]
                    });
                results.lock().expect("poisoned eval results")[i] = Some(rows);
            });
        }
    });

    let all: Vec<MetricsRow> = results
        .into_inner()
        .expect("poisoned eval results")
        .into_iter()
        .flat_map(|slot| slot.expect("worker filled every slot"))
        .collect();
    let ok: Vec<&MetricsRow> = all.iter().filter(|r| !r.failed).collect();
    let failed = all.len() - ok.len();
    let mean = |f: fn(&MetricsRow) -> f64| -> f64 {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let summary = format!(
        "# summary rows={} failed={} mean_prior_rmsd={:.4} mean_refined_rmsd={:.4} mean_improvement={:.2}",
        ok.len(),
        failed,
        mean(|r| r.prior_rmsd),
        mean(|r| r.refined_rmsd),
        mean(|r| r.improvement),
    );

    let mut csv = config_comments(&cfg);
    csv.push_str(METRICS_CSV_HEADER);
    csv.push('\n');
    for row in &all {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    csv.push_str(&summary);
    csv.push('\n');
    write_text(&args.out, &csv).run()?;
    println!("{}", summary.trim_start_matches("# "));
    Ok(if failed > 0 { 1 } else { 0 })
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    let corrupt = match args.corrupt.as_deref() {
        None => GradCheckCorrupt::None,
        Some("energy") => GradCheckCorrupt::Energy,
        Some("model") => GradCheckCorrupt::Model,
        Some(other) => {
            return Err(Failure::Input(Error::Config(format!(
                "unknown corrupt target '{other}'"
            ))))
        }
    };
    let report = grad_check(args.seed, corrupt).run()?;
    println!("# seed={}", args.seed);
    println!(
        "energy max rel err: {:.3e} (tol {:.0e})",
        report.energy_err, ENERGY_GRAD_TOL
    );
    println!(
        "model max rel err: {:.3e} (tol {:.0e})",
        report.model_err, MODEL_GRAD_TOL
    );
    println!("worst: {}", report.worst);
    if report.pass {
        println!("PASS");
        Ok(0)
    } else {
        println!("FAIL");
        Ok(1)
    }
}
