use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use debm::dataset::{self, csv_biomarker_columns, load_csv_for_staging, CsvSchema, Direction};
use debm::evaluate::{self, ExperimentGrid, DEFAULT_BOOTSTRAPS, DEFAULT_REPS};
use debm::mixture::{MixtureSet, OptimizerOptions, Strategy};
use debm::model::{fit_model, FittedModel, TimelineFile};
use debm::simulate::{simulate_dataset, SimulationConfig};

const DEFAULT_SEED: u64 = 20190;

/// Disease-progression timelines from cross-sectional biomarker data.
#[derive(Parser, Debug)]
#[command(name = "debm", version)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads; 0 uses all available cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a two-group cohort with known ground truth.
    Simulate(SimulateArgs),
    /// Fit mixtures and a timeline per group.
    Fit(FitArgs),
    /// Stage subjects on a fitted timeline.
    Stage(StageArgs),
    /// Run a simulation benchmark.
    Experiment(ExperimentArgs),
    /// Bootstrap positional variance of the central ordering.
    Bootstrap(BootstrapArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    n1: usize,
    #[arg(long, default_value_t = 900)]
    n2: usize,
    /// Normalized Kendall distance between the groups' orderings.
    #[arg(long, default_value_t = 0.0)]
    eps_o: f64,
    /// Group-2 abnormal-mean shift as a multiple of the normal-abnormal distance.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    eps_g: f64,
    #[arg(long, default_value_t = 7)]
    n_biomarkers: usize,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    population_std: Option<f64>,
    #[arg(long)]
    steepness: Option<f64>,
}

#[derive(Args, Debug)]
struct SchemaArgs {
    #[arg(long, default_value = dataset::SUBJECT_COLUMN)]
    subject_column: String,
    #[arg(long, default_value = dataset::DIAGNOSIS_COLUMN)]
    diagnosis_column: String,
    /// Group column, used when present in the file.
    #[arg(long, default_value = dataset::GROUP_COLUMN)]
    group_column: String,
    /// Comma-separated biomarker columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    biomarkers: Option<Vec<String>>,
    /// Direction override, e.g. `--direction HippoVol=DECREASING`.
    #[arg(long = "direction", value_name = "NAME=DIR")]
    directions: Vec<String>,
}

impl SchemaArgs {
    fn schema(&self) -> Result<CsvSchema> {
        let mut overrides = HashMap::new();
        for spec in &self.directions {
            let (name, dir) = spec.split_once('=').with_context(|| format!("direction `{spec}` is not NAME=DIR"))?;
            let dir: Direction = dir.parse().map_err(anyhow::Error::msg)?;
            overrides.insert(name.to_string(), dir);
        }
        Ok(CsvSchema {
            subject_column: self.subject_column.clone(),
            diagnosis_column: self.diagnosis_column.clone(),
            group_column: Some(self.group_column.clone()),
            biomarkers: self.biomarkers.clone(),
            direction_overrides: overrides,
        })
    }
}

#[derive(Args, Debug)]
struct OptimizerArgs {
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
}

impl OptimizerArgs {
    fn options(&self) -> OptimizerOptions {
        OptimizerOptions { tolerance: self.tolerance, max_iterations: self.max_iterations, ..Default::default() }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Cohort CSV.
    input: PathBuf,
    #[arg(long, default_value = "independent")]
    strategy: Strategy,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

#[derive(Args, Debug)]
struct StageArgs {
    /// CSV of subjects to stage.
    input: PathBuf,
    #[arg(long, default_value = "mixtures.json")]
    mixtures: PathBuf,
    #[arg(long, default_value = "timeline.json")]
    timeline: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// 1: ordering distance against group-1 size; 2: abnormal-mean shift.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    id: u8,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    /// Comma-separated group-1 sizes overriding the protocol grid.
    #[arg(long, value_delimiter = ',')]
    n1: Option<Vec<usize>>,
    /// Comma-separated ordering distances overriding the protocol grid.
    #[arg(long, value_delimiter = ',')]
    eps_o: Option<Vec<f64>>,
    #[arg(long, default_value_t = 900)]
    n2: usize,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    /// Cohort CSV.
    input: PathBuf,
    #[arg(long, default_value = "independent")]
    strategy: Strategy,
    /// Number of bootstrap repetitions.
    #[arg(short = 'B', long, default_value_t = DEFAULT_BOOTSTRAPS)]
    repetitions: usize,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("cannot create {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Simulate(args) => simulate(cli, args),
        Command::Fit(args) => fit(cli, args),
        Command::Stage(args) => stage(cli, args),
        Command::Experiment(args) => experiment(cli, args),
        Command::Bootstrap(args) => bootstrap(cli, args),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let defaults = SimulationConfig::default();
    let config = SimulationConfig {
        n_biomarkers: args.n_biomarkers,
        group_sizes: vec![args.n1, args.n2],
        epsilon_o: args.eps_o,
        epsilon_g: args.eps_g,
        noise_std: args.noise_std.unwrap_or(defaults.noise_std),
        population_std: args.population_std.unwrap_or(defaults.population_std),
        steepness: args.steepness.unwrap_or(defaults.steepness),
        seed: cli.seed,
        ..defaults
    };
    let (data, truth) = simulate_dataset(&config)?;
    data.write_csv_path(cli.out_dir.join("dataset.csv"))?;
    write_json(&cli.out_dir.join("ground_truth.json"), &truth)
}

fn load(input: &Path, schema: &SchemaArgs) -> Result<dataset::BiomarkerDataset> {
    dataset::load_csv(input, &schema.schema()?).with_context(|| format!("cannot load {}", input.display()))
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let data = load(&args.input, &args.schema)?;
    let model = fit_model(&data, args.strategy, &args.optimizer.options())?;
    write_json(&cli.out_dir.join("mixtures.json"), &model.mixtures)?;
    write_json(&cli.out_dir.join("timeline.json"), &model.timeline_file())
}

fn stage(cli: &Cli, args: &StageArgs) -> Result<()> {
    let mixtures: MixtureSet = read_json(&args.mixtures)?;
    let timelines: TimelineFile = read_json(&args.timeline)?;
    let model = FittedModel::from_parts(mixtures, &timelines)?;
    model.check_biomarkers(&csv_biomarker_columns(&args.input)?)?;
    let data = load_csv_for_staging(&args.input, model.biomarkers(), &model.mixtures.directions)?;
    let staged = model.stage_dataset(&data)?;

    let n = model.biomarkers().len();
    let mut w = csv::Writer::from_writer(create(&cli.out_dir.join("stages.csv"))?);
    let mut header = vec!["subject_id".to_string(), "group".into(), "status".into(), "upsilon".into()];
    header.extend((0..=n).map(|i| format!("p_stage_{i}")));
    w.write_record(&header)?;
    for s in &staged {
        let group = s.group.map(|g| g.to_string()).unwrap_or_default();
        let mut row = vec![s.subject.clone(), group];
        match &s.result {
            Ok(stage) => {
                row.push("ok".into());
                row.push(format!("{:?}", stage.upsilon));
                row.extend(stage.stage_posterior.iter().map(|p| format!("{p:?}")));
            }
            Err(reason) => {
                row.push(format!("unstageable: {reason}"));
                row.extend(std::iter::repeat_n(String::new(), n + 2));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn experiment(cli: &Cli, args: &ExperimentArgs) -> Result<()> {
    let mut grid = match args.id {
        1 => ExperimentGrid::experiment1(args.reps, cli.seed),
        2 => ExperimentGrid::experiment2(args.reps, cli.seed),
        other => bail!("unknown experiment {other}"),
    };
    if let Some(n1) = &args.n1 {
        grid.n1 = n1.clone();
    }
    if let Some(eps_o) = &args.eps_o {
        grid.epsilon_o = eps_o.clone();
    }
    grid.n2 = args.n2;
    let rows = evaluate::run_grid(&grid);
    let path = cli.out_dir.join(format!("experiment{}.csv", args.id));
    evaluate::write_results(&rows, create(&path)?)?;
    let failed: usize = rows.iter().filter(|r| r.group == 1).map(|r| r.failures).sum();
    if failed > 0 {
        eprintln!("warning: {failed} fits failed; see the failures column");
    }
    Ok(())
}

fn bootstrap(cli: &Cli, args: &BootstrapArgs) -> Result<()> {
    let data = load(&args.input, &args.schema)?;
    let results =
        evaluate::bootstrap_positional_variance(&data, args.strategy, args.repetitions, cli.seed, &args.optimizer.options())?;
    let names = data.biomarker_names();
    for pv in &results {
        let stem = match pv.group {
            Some(g) => format!("positional_variance_group{g}"),
            None => "positional_variance".to_string(),
        };
        pv.write_csv(names, create(&cli.out_dir.join(format!("{stem}.csv")))?)?;
        write_json(&cli.out_dir.join(format!("{stem}.json")), &pv.sidecar(names))?;
        if pv.skipped > 0 {
            eprintln!("warning: {} of {} replicates skipped after repeated failures", pv.skipped, args.repetitions);
        }
    }
    Ok(())
}
