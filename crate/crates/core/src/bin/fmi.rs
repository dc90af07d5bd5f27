//! `fmi`: command-line front end for federated Markov imputation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedmarkov::datagen::{generate_client_data, GeneratorSpec};
use fedmarkov::evaluation::{run_experiment, score, ExperimentSettings, Scenario};
use fedmarkov::federation::{run_federation, run_lmi, FederationConfig, LmiOutcome, RoundParams};
use fedmarkov::imputer::impute_local_mean;
use fedmarkov::secure_agg::{RingConfig, SeedBook};
use fedmarkov::transitions::count_dataset;
use fedmarkov::{BinningScheme, ClientId, Dataset, Error, ErrorCategory, LagPolicy, Result};

#[derive(Parser)]
#[command(name = "fmi", version, about = "Federated Markov imputation of binned time series")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads for data-parallel loops (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one client's synthetic dataset and its ground truth.
    Generate(GenerateArgs),
    /// Count local bin transitions of a dataset.
    Count(CountArgs),
    /// Run a federated round described by a config file.
    Federate(FederateArgs),
    /// Impute with the client's own transition matrix.
    Lmi(LmiArgs),
    /// Impute with per-feature local means.
    MeanImpute(MeanImputeArgs),
    /// Score an imputed dataset against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare local mean, LMI and FMI on synthetic clients.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator spec JSON; without it a synthetic spec is built from the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Native sampling interval in hours on the 1h grid.
    #[arg(long, default_value_t = 1)]
    interval: usize,
    /// Client index; each index draws an independent cohort.
    #[arg(long, default_value_t = 0)]
    client: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 4)]
    features: usize,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 150)]
    subjects: usize,
    #[arg(long, default_value_t = 0.2)]
    mcar: f64,
    #[arg(long)]
    out: PathBuf,
    /// Fully observed ground truth CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Binning scheme JSON matching the generated features.
    #[arg(long)]
    binning_out: Option<PathBuf>,
    /// Resolved generator spec JSON (including ground-truth matrices).
    #[arg(long)]
    spec_out: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    binning: PathBuf,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FederateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for t_fed.json, transcript.jsonl and per-client imputed data.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    ring_bits: Option<u32>,
}

#[derive(Args)]
struct LmiArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    binning: PathBuf,
    #[arg(long, default_value_t = 1)]
    interval: u32,
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct MeanImputeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    binning: PathBuf,
    /// Records the means are computed from (defaults to --data).
    #[arg(long)]
    training: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset before imputation; its missing cells are the ones scored.
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    imputed: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    binning: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment settings JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    mcar: Option<f64>,
    #[arg(long)]
    ring_bits: Option<u32>,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("fmi: error[{}]: {}", category.as_str(), e.to_string().replace('\n', " "));
            ExitCode::from(match category {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Protocol => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        configure_threads(threads)?;
    }
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Count(a) => count(a),
        Command::Federate(a) => federate(a),
        Command::Lmi(a) => lmi(a),
        Command::MeanImpute(a) => mean_impute(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_threads: usize) -> Result<()> {
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => GeneratorSpec::load(path)?,
        None => GeneratorSpec::synthetic(a.features, a.bins, a.subjects, a.mcar, a.seed.unwrap_or(0))?,
    };
    if let (Some(seed), Some(_)) = (a.seed, &a.spec) {
        spec.seed = seed;
    }
    let g = generate_client_data(&spec, a.interval, a.client)?;
    g.observed.save(&a.out)?;
    if let Some(p) = &a.truth {
        g.truth.save(p)?;
    }
    if let Some(p) = &a.binning_out {
        spec.scheme()?.save(p)?;
    }
    if let Some(p) = &a.spec_out {
        write(p, &spec.to_json()?)?;
    }
    Ok(())
}

fn count(a: CountArgs) -> Result<()> {
    let scheme = BinningScheme::load(&a.binning)?;
    let data = Dataset::load(&a.data)?;
    let counts = count_dataset(&data, &scheme, LagPolicy::new(a.lag)?)?;
    counts.save(&a.out)
}

fn federate(a: FederateArgs) -> Result<()> {
    let cfg = FederationConfig::load(&a.config)?;
    let scheme = BinningScheme::load(&cfg.binning_path)?;
    let ring = match a.ring_bits {
        Some(bits) => RingConfig::new(bits)?,
        None => cfg.ring()?,
    };
    let clients = cfg.load_clients()?;
    let roster: Vec<ClientId> = clients.iter().map(|c| c.id.clone()).collect();
    let seeds = SeedBook::provision(a.seed.unwrap_or(cfg.seed), &roster)?;
    let params = RoundParams {
        ring,
        smoothing: a.smoothing.unwrap_or(cfg.smoothing),
        ..RoundParams::default()
    };
    let outcome = run_federation(clients, &scheme, &seeds, params)?;

    std::fs::create_dir_all(&a.out)?;
    outcome.matrix.save(a.out.join("t_fed.json"))?;
    write(&a.out.join("transcript.jsonl"), &outcome.transcript.to_json_lines()?)?;
    for c in &outcome.clients {
        c.imputed.save(a.out.join(format!("{}.imputed.csv", c.id)))?;
        write(
            &a.out.join(format!("{}.imputed.json", c.id)),
            &c.sidecar.to_json()?,
        )?;
    }
    Ok(())
}

fn lmi(a: LmiArgs) -> Result<()> {
    let scheme = BinningScheme::load(&a.binning)?;
    let client = fedmarkov::federation::ClientConfig {
        id: ClientId::new("local"),
        dataset: Dataset::load(&a.data)?,
        interval_hours: a.interval,
    };
    match run_lmi(&client, &scheme, a.smoothing)? {
        LmiOutcome::Infeasible { reason } => {
            println!("INFEASIBLE: {reason}");
            Ok(())
        }
        LmiOutcome::Imputed {
            dataset, sidecar, ..
        } => {
            dataset.save(&a.out)?;
            if let Some(p) = &a.sidecar {
                write(p, &sidecar.to_json()?)?;
            }
            Ok(())
        }
    }
}

fn mean_impute(a: MeanImputeArgs) -> Result<()> {
    let scheme = BinningScheme::load(&a.binning)?;
    let data = Dataset::load(&a.data)?;
    data.check_scheme(&scheme)?;
    let training = match &a.training {
        Some(p) => {
            let t = Dataset::load(p)?;
            t.check_scheme(&scheme)?;
            t
        }
        None => data.clone(),
    };
    let records = impute_local_mean(&data.records, &training.records, &scheme)?;
    Dataset::new(data.features.clone(), data.window_count, records)?.save(&a.out)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let scheme = BinningScheme::load(&a.binning)?;
    let original = Dataset::load(&a.original)?;
    let imputed = Dataset::load(&a.imputed)?;
    let truth = Dataset::load(&a.truth)?;
    let s = score(&original, &imputed, &truth, &scheme)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
    let text = format!(
        "imputed_cells,bin_accuracy,value_rmse\n{},{},{}\n",
        s.imputed_cells,
        fmt(s.bin_accuracy()),
        fmt(s.value_rmse())
    );
    match &a.out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut settings = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => ExperimentSettings::default(),
    };
    macro_rules! apply {
        ($($field:ident <- $flag:ident),*) => {
            $(if let Some(v) = a.$flag { settings.$field = v; })*
        };
    }
    apply!(
        scenario <- scenario,
        clients <- clients,
        seed <- seed,
        bins <- bins,
        features <- features,
        windows <- windows,
        subjects_per_client <- subjects,
        smoothing <- smoothing,
        mcar <- mcar,
        ring_bits <- ring_bits
    );
    let report = run_experiment(&settings.build()?)?;
    write(&a.out, &report.to_csv()?)?;
    print!("{}", report.to_text());
    Ok(())
}

