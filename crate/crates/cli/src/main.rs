use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use gpe_core::accelerator::{accelerated_solve_with, AccelDecision, Trigger};
use gpe_core::bench::{bench_case, records_to_jsonl, sample_cases, summarize, summary_csv, BenchCase, BenchMode, BenchModel};
use gpe_core::config::RunConfig;
use gpe_core::dataset::{generate_run, plan_runs, write_dataset, GenerationConfig, Manifest, ManifestEntry, ParamGroup, RunOutcome};
use gpe_core::earcg::{earcg_solve, RunTrace};
use gpe_core::nn::{NetworkSpec, UNet, WeightArchive};
use gpe_core::plot::plot_density;
use gpe_core::statefile::{read_state, write_state};
use gpe_core::{EarcgConfig, State};

#[derive(Parser)]
#[command(name = "gpe", version, about = "Rotating Gross-Pitaevskii ground states by energy-adaptive Riemannian CG")]
struct Cli {
    /// Worker threads for gen-data and bench (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classical EARCG solve.
    Solve(SolveArgs),
    /// EARCG with one learned correction.
    AccelSolve {
        #[command(flatten)]
        solve: SolveArgs,
        /// Weight archive (GPUW).
        #[arg(long)]
        model: PathBuf,
        /// JSON network description; defaults to the archive path with a .json extension.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Generate a training dataset (GPDS) and its manifest.
    GenData {
        #[arg(long, default_value = "broad")]
        group: ParamGroup,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to OUT.manifest.json.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compare classical and accelerated runs.
    Bench {
        /// JSON-lines file of cases, or GROUP:COUNT[:SEED].
        #[arg(long)]
        cases: String,
        /// Weight archive path, `oracle` or `identity`.
        #[arg(long)]
        model: String,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// strategy, random-apply or both.
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Per-case records as JSON lines; the summary CSV goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a PPM density image of a saved state.
    Plot {
        #[arg(long)]
        state_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long)]
    params_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Overrides the configured tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Per-iteration records as JSON lines.
    #[arg(long)]
    out_trace: Option<PathBuf>,
    /// Density image (PPM).
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    out_state: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    match cli.cmd {
        Cmd::Solve(args) => solve(&args, None),
        Cmd::AccelSolve { solve: args, model, spec } => {
            let net = load_net(&model, spec.as_deref())?;
            solve(&args, Some(&net))
        }
        Cmd::GenData { group, runs, seed, n, out, manifest } => gen_data(group, runs, seed, n, &out, manifest),
        Cmd::Bench { cases, model, spec, mode, n, out } => bench(&cases, &model, spec.as_deref(), &mode, n, &out),
        Cmd::Plot { state_file, out, scale } => {
            let phi = read_state(&state_file).with_context(|| format!("reading {}", state_file.display()))?;
            plot_density(&phi, &out, scale)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn load_net(model: &Path, spec: Option<&Path>) -> Result<UNet> {
    let sidecar = spec.map(Path::to_path_buf).unwrap_or_else(|| model.with_extension("json"));
    let spec = NetworkSpec::read(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let archive = WeightArchive::read(model).with_context(|| format!("reading {}", model.display()))?;
    Ok(UNet::from_archive(spec, &archive)?)
}

fn solve(args: &SolveArgs, net: Option<&UNet>) -> Result<()> {
    let mut cfg = match &args.params_file {
        Some(p) => RunConfig::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(tol) = args.tol {
        cfg.tol = tol;
        cfg.accel.eps2 = tol;
    }
    let params = cfg.params()?;
    let phi0 = State::random(params.grid()?, args.seed);
    let earcg = EarcgConfig::with_tol(cfg.tol);
    let (state, trace) = match net {
        None => earcg_solve(phi0, &params, earcg)?,
        Some(net) => {
            let run = accelerated_solve_with(phi0, &params, &cfg.accel, earcg, net, Trigger::Strategy)?;
            (run.state, run.trace)
        }
    };
    report(&trace);
    if let Some(p) = &args.out_trace {
        std::fs::write(p, trace.records_jsonl())?;
    }
    if let Some(p) = &args.out_state {
        write_state(&state, p)?;
    }
    if let Some(p) = &args.plot {
        plot_density(&state, p, 4)?;
    }
    Ok(())
}

fn report(t: &RunTrace) {
    println!("termination  {:?}", t.termination);
    println!("iterations   {}", t.iterations);
    println!("energy       {:.12}", t.final_energy);
    println!("lambda       {:.12}", t.final_lambda);
    println!("gnorm        {:.3e}", t.final_gnorm);
    println!("wall         {:.3} s", t.wall_seconds);
    for ev in &t.accel_events {
        let tag = match ev.decision {
            AccelDecision::Accepted => "accepted",
            AccelDecision::Rejected => "rejected",
            AccelDecision::Forced => "forced",
            AccelDecision::Unconditional => "applied",
        };
        println!("accel k={} gnorm={:.2e} indicator={:.2e} {tag}", ev.k, ev.gnorm, ev.indicator);
    }
    for w in &t.warnings {
        eprintln!("warning: {w}");
    }
}

fn gen_data(group: ParamGroup, runs: usize, seed: u64, n: usize, out: &Path, manifest: Option<PathBuf>) -> Result<()> {
    let cfg = GenerationConfig::default();
    let plans = plan_runs(group, runs, seed, n)?;
    let outcomes: Vec<RunOutcome> = plans.par_iter().map(|p| generate_run(p, &cfg)).collect();
    let mut samples = Vec::new();
    let mut entries = Vec::new();
    for (plan, outcome) in plans.iter().zip(outcomes) {
        let entry = ManifestEntry::new(plan, &outcome);
        if let Some(reason) = &entry.skip_reason {
            eprintln!("run {} skipped: {reason}", plan.run_id);
        }
        entries.push(entry);
        if let RunOutcome::Samples { samples: s, .. } = outcome {
            samples.extend(s);
        }
    }
    let used = entries.iter().filter(|e| e.skip_reason.is_none()).count();
    write_dataset(&samples, out)?;
    let manifest = manifest.unwrap_or_else(|| PathBuf::from(format!("{}.manifest.json", out.display())));
    let m = Manifest { group, seed, n, config: cfg, runs: entries };
    std::fs::write(&manifest, serde_json::to_string_pretty(&m)?)?;
    println!("{} samples from {used} of {runs} runs -> {}", samples.len(), out.display());
    Ok(())
}

fn parse_cases(spec: &str, n: usize) -> Result<Vec<BenchCase>> {
    if Path::new(spec).is_file() {
        let text = std::fs::read_to_string(spec)?;
        return text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).with_context(|| format!("bad case line {l:?}")))
            .collect();
    }
    let parts: Vec<&str> = spec.split(':').collect();
    let (group, count, seed) = match parts.as_slice() {
        [g, c] => (g.parse::<ParamGroup>()?, c.parse()?, 0),
        [g, c, s] => (g.parse::<ParamGroup>()?, c.parse()?, s.parse()?),
        _ => bail!("--cases must be a file or GROUP:COUNT[:SEED], got {spec:?}"),
    };
    Ok(sample_cases(group, count, seed, n)?)
}

fn bench(cases: &str, model: &str, spec: Option<&Path>, mode: &str, n: usize, out: &Path) -> Result<()> {
    let cases = parse_cases(cases, n)?;
    let model = match model {
        "oracle" => BenchModel::Oracle,
        "identity" => BenchModel::Identity,
        path => BenchModel::Network(Arc::new(load_net(Path::new(path), spec)?)),
    };
    let modes = match mode {
        "both" => vec![BenchMode::Strategy, BenchMode::RandomApply],
        m => vec![m.parse::<BenchMode>()?],
    };
    let accel = Default::default();
    let mut records = Vec::new();
    for &m in &modes {
        let batch: Vec<_> = cases
            .par_iter()
            .map(|c| bench_case(c, &model, m, &accel, EarcgConfig::default()))
            .collect::<gpe_core::Result<_>>()?;
        records.extend(batch);
    }
    std::fs::write(out, records_to_jsonl(&records))?;
    let summaries: Vec<_> = modes.iter().map(|&m| summarize(m, &records)).collect();
    let csv = out.with_extension("csv");
    std::fs::write(&csv, summary_csv(&summaries))?;

    println!("{:<13} {:>5} {:>11} {:>11} {:>10} {:>9} {:>9}", "mode", "cases", "iter saved", "wall saved", "impr_rho", "improved", "same min");
    for s in &summaries {
        println!(
            "{:<13} {:>5} {:>10.1}% {:>10.1}% {:>10.3} {:>8.0}% {:>8.0}%",
            format!("{:?}", s.mode),
            s.cases,
            s.iterations_saved_pct.mean,
            s.wall_saved_pct.mean,
            s.impr_rho.mean,
            s.improvement_rate_pct,
            s.same_minimum_pct
        );
    }
    println!("records -> {}, summary -> {}", out.display(), csv.display());
    Ok(())
}
