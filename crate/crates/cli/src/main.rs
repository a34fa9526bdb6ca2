use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dpfl::accountant::{AlphaGrid, PrivacyProfile, SgmParams};
use dpfl::data::{impute_zeros, load_matrix, save_matrix, select_features, synthesize_dataset, GeneSignature, SynthSpec};
use dpfl::dp_sgd::DpSgdConfig;
use dpfl::federated::{run_cyclic_fl, FlConfig};
use dpfl::harness::{
    emit_plot_data, grid_search, parse_grid_config, read_frontier_file, run_from_records, select_params,
    write_frontier, write_plot_data, BudgetTarget, ExperimentData, RunSettings, DEFAULT_DELTAS,
    DEFAULT_N_SEEDS, DEFAULT_PLOT_EPSILONS,
};
use dpfl::models::{accuracy, evaluate, write_params, ArchKind, ArchitectureSpec};

#[derive(Parser)]
#[command(name = "dpfl", version, about = "Differentially private two-client federated training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Privacy budget of a sampled Gaussian mechanism run for a number of steps.
    Accountant(AccountantArgs),
    /// Train with cyclic two-client DP-SGD and report accuracy and budget.
    Train(TrainArgs),
    /// Write a synthetic expression dataset.
    Synth(SynthArgs),
    /// Evaluate a hyperparameter grid and write the frontier CSV.
    Grid(GridArgs),
    /// Pick the frontier configuration for a target budget.
    Select(SelectArgs),
    /// Best accuracy per (delta, epsilon) cell, for plotting.
    PlotData(PlotArgs),
}

#[derive(Args)]
struct AccountantArgs {
    #[arg(long)]
    q: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    delta: f64,
    /// Comma-separated Rényi orders; defaults to the built-in grid.
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Two matrix files, one per client.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    clients: Vec<PathBuf>,
    /// Gene signature file.
    #[arg(long)]
    signature: PathBuf,
    #[arg(long, default_value = "logistic_regression")]
    arch: ArchKind,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long)]
    rounds: u32,
    #[arg(long)]
    local_steps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Held-out matrix file for accuracy.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Write the trained parameters here.
    #[arg(long)]
    save_params: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 61)]
    n_normal: usize,
    #[arg(long, default_value_t = 529)]
    n_tumor: usize,
    #[arg(long, default_value_t = 1000)]
    n_genes: usize,
    #[arg(long, default_value_t = 0.55)]
    effect_size: f64,
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Signal genes; if absent, `--n-signal` genes named SIG000, SIG001, ...
    #[arg(long)]
    signature: Option<PathBuf>,
    #[arg(long, default_value_t = 69)]
    n_signal: usize,
    /// Also write the signal genes as a signature file.
    #[arg(long)]
    write_signature: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    grid_file: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Extra signatures as `name=path`, in addition to the grid file's.
    #[arg(long = "signature-file", value_parser = parse_named_path)]
    signature_files: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = DEFAULT_N_SEEDS)]
    seeds: u32,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    frontier: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    /// Retrain the selected configuration on this dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long = "signature-file", value_parser = parse_named_path)]
    signature_files: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = DEFAULT_N_SEEDS)]
    seeds: u32,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    frontier: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DELTAS)]
    deltas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PLOT_EPSILONS)]
    epsilons: Vec<f64>,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got `{s}`"))?;
    Ok((name.trim().to_string(), PathBuf::from(path.trim())))
}

fn load_signatures(entries: &[(String, PathBuf)]) -> Result<Vec<GeneSignature>> {
    entries
        .iter()
        .map(|(name, path)| {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(GeneSignature::parse(name.clone(), &text)?)
        })
        .collect()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn accountant(args: AccountantArgs) -> Result<()> {
    let grid = match args.alpha_grid {
        Some(orders) => AlphaGrid::new(orders)?,
        None => AlphaGrid::default(),
    };
    let profile = PrivacyProfile::new(SgmParams::new(args.q, args.sigma)?, &grid);
    let best = profile.best(args.steps, args.delta)?;
    let mut out = io::stdout().lock();
    writeln!(out, "epsilon,delta,alpha")?;
    writeln!(out, "{},{},{}", best.dp.epsilon, best.dp.delta, best.alpha)?;
    writeln!(out)?;
    writeln!(out, "alpha,rdp_epsilon,dp_epsilon")?;
    for (alpha, row) in profile.table(args.steps, args.delta)? {
        match row {
            Ok(r) => writeln!(out, "{},{},{}", r.alpha, r.rdp_epsilon, r.dp_epsilon)?,
            Err(_) => writeln!(out, "{alpha},NA,NA")?,
        }
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    if args.clients.len() != 2 {
        bail!("--clients takes exactly two files, got {}", args.clients.len());
    }
    let sig = GeneSignature::load(&args.signature)?;
    let prepare = |path: &Path| -> Result<_> {
        let m = load_matrix(path).with_context(|| format!("loading {}", path.display()))?;
        Ok(impute_zeros(&select_features(&m, &sig)?))
    };
    let c1 = prepare(&args.clients[0])?;
    let c2 = prepare(&args.clients[1])?;
    let cfg = FlConfig {
        n_rounds: args.rounds,
        local_steps: args.local_steps,
        dp: DpSgdConfig::new(args.q, args.eta, args.sigma, args.clip)?,
        arch: ArchitectureSpec::new(args.arch, c1.n_genes())?,
        master_seed: args.seed,
    };
    let run = run_cyclic_fl(&cfg, &c1.to_samples()?, &c2.to_samples()?, args.delta, &AlphaGrid::default())?;

    let mut out = io::stdout().lock();
    if let Some(test) = &args.test {
        let acc = accuracy(&evaluate(&run.params, &prepare(test)?.to_samples()?)?)?;
        writeln!(out, "accuracy,{acc}")?;
    }
    writeln!(out, "epsilon,delta,alpha")?;
    writeln!(out, "{},{},{}", run.budget.epsilon, run.budget.delta, fmt_opt(run.alpha))?;
    if let Some(path) = &args.save_params {
        write_params(&run.params, BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let sig = match &args.signature {
        Some(p) => GeneSignature::load(p)?,
        None => GeneSignature::new("signal", (0..args.n_signal).map(|i| format!("SIG{i:03}")).collect())?,
    };
    let spec = SynthSpec {
        n_normal: args.n_normal,
        n_tumor: args.n_tumor,
        n_genes: args.n_genes,
        effect_size: args.effect_size,
        missing_rate: args.missing_rate,
        seed: args.seed,
    };
    save_matrix(&synthesize_dataset(&spec, &sig)?, &args.out)?;
    if let Some(p) = &args.write_signature {
        std::fs::write(p, sig.to_text())?;
    }
    Ok(())
}

fn grid(args: GridArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.grid_file).with_context(|| format!("reading {}", args.grid_file.display()))?;
    let mut cfg = parse_grid_config(&text)?;
    cfg.resolve_paths(args.grid_file.parent().unwrap_or(Path::new(".")));
    let mut entries = cfg.signature_files.clone();
    entries.extend(args.signature_files);
    let data = ExperimentData {
        matrix: load_matrix(&args.dataset)?,
        signatures: load_signatures(&entries)?,
    };
    let settings = RunSettings {
        n_seeds: args.seeds,
        base_seed: args.base_seed,
        deltas: cfg.deltas.clone().unwrap_or_else(|| DEFAULT_DELTAS.to_vec()),
        ..RunSettings::default()
    };
    let report = grid_search(&cfg.points, &data, &settings, Some(&args.out))?;
    eprintln!(
        "{} points, {} records written to {}",
        cfg.points.len(),
        report.records.len(),
        args.out.display()
    );
    for f in &report.failures {
        eprintln!("point {} failed: {}", f.index, f.message);
    }
    Ok(())
}

fn select(args: SelectArgs) -> Result<()> {
    let target = BudgetTarget::new(args.eps, args.delta)?;
    let records = read_frontier_file(&args.frontier)?;
    let mut out = io::stdout().lock();
    match &args.dataset {
        None => write_frontier(std::slice::from_ref(select_params(&records, &target)?), &mut out)?,
        Some(dataset) => {
            let data = ExperimentData {
                matrix: load_matrix(dataset)?,
                signatures: load_signatures(&args.signature_files)?,
            };
            let settings = RunSettings {
                n_seeds: args.seeds,
                base_seed: args.base_seed,
                ..RunSettings::default()
            };
            let run = run_from_records(&target, &records, &data, &settings)?;
            // First row: the frontier entry; second row: the fresh runs.
            write_frontier(&[run.selected, run.rerun], &mut out)?;
        }
    }
    Ok(())
}

fn plot_data(args: PlotArgs) -> Result<()> {
    let records = read_frontier_file(&args.frontier)?;
    let rows = emit_plot_data(&records, &args.deltas, &args.epsilons);
    write_plot_data(&rows, output(args.out.as_deref())?)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Accountant(a) => accountant(a),
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::Grid(a) => grid(a),
        Command::Select(a) => select(a),
        Command::PlotData(a) => plot_data(a),
    }
}
