//! `silobench`: generate universes, train and move models between silos,
//! and run the benchmark experiment families.
//!
//! Every subcommand reads the same experiment configuration (`--config`,
//! defaults otherwise). Models travel between subcommands only as transfer
//! artifact JSON files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use silo_transfer::adaptation::{adapt_in_silo, AdaptConfig, AdaptMethod};
use silo_transfer::data::generate_universe;
use silo_transfer::experiment::{
    config_digest, emit_report, Experiment, ExperimentConfig, Family, ReportFormat, ResultsStore,
    TransferArtifact, UniverseSource,
};
use silo_transfer::silo::Universe;
use silo_transfer::thresholds::PolicyKind;
use silo_transfer::training::{
    compute_fisher_diagonal, train_local, train_sequential_ewc, write_log,
};
use silo_transfer::{Error, Result};

const STORE_FILE: &str = "results.jsonl";

#[derive(Parser)]
#[command(
    name = "silobench",
    version,
    about = "Cross-silo transfer learning benchmark"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration JSON; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed the subcommand consumes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic universe and save it to the output directory.
    Generate,
    /// Train a model inside one silo and export it with its Fisher diagonal.
    Train {
        #[arg(long)]
        silo: String,
    },
    /// Continue training an artifact inside another silo with the EWC penalty.
    Transfer {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        silo: String,
    },
    /// Adapt an artifact to a silo's unlabeled test-cohort features.
    Adapt {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        silo: String,
        /// shot, tent or pseudo_label.
        #[arg(long, default_value = "shot")]
        method: String,
    },
    /// Evaluate an artifact on a silo's test cohort under every threshold policy.
    Evaluate {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        silo: String,
    },
    /// Write the pairwise per-category similarity table.
    Similarity,
    /// Experiment families.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Build a family's report from the results store in the output directory.
    Report {
        family: String,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run a family (or `all`) and append its rows to the results store.
    Run { family: String },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("silobench: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let config = load_config(c.config.as_deref())?;
    match cli.command {
        Command::Generate => generate(config, c),
        Command::Train { silo } => train(config, c, &silo),
        Command::Transfer { artifact, silo } => transfer(config, c, &artifact, &silo),
        Command::Adapt {
            artifact,
            silo,
            method,
        } => adapt(config, c, &artifact, &silo, &method),
        Command::Evaluate { artifact, silo } => evaluate(config, c, &artifact, &silo),
        Command::Similarity => similarity(config, c),
        Command::Experiment {
            action: ExperimentAction::Run { family },
        } => run_experiment(config, c, &family),
        Command::Report { family, format } => report(c, &family, &format),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_universe(config: &ExperimentConfig) -> Result<Universe> {
    match &config.universe {
        UniverseSource::Generated { generator, seed } => generate_universe(generator, *seed),
        UniverseSource::Directory { path } => Universe::load(path),
    }
}

fn load_artifact(path: &Path) -> Result<TransferArtifact> {
    TransferArtifact::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, entries: &[T]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_log(std::io::BufWriter::new(f), entries)?;
    println!("{}", path.display());
    Ok(())
}

fn generate(mut config: ExperimentConfig, c: &Common) -> Result<()> {
    if let (UniverseSource::Generated { seed, .. }, Some(s)) = (&mut config.universe, c.seed) {
        *seed = s;
    }
    let universe = load_universe(&config)?;
    universe.save(&c.out_dir)?;
    println!(
        "{} silos written to {}",
        universe.silos().len(),
        c.out_dir.display()
    );
    Ok(())
}

fn train(mut config: ExperimentConfig, c: &Common, silo: &str) -> Result<()> {
    if let Some(s) = c.seed {
        config.train.seed = s;
    }
    let universe = load_universe(&config)?;
    let home = universe.get(silo)?;
    let split = &config.split;
    let out = train_local(home, split, &config.train)?;
    let fisher = compute_fisher_diagonal(
        &out.params,
        home,
        split,
        config.train.fisher_sample_cap,
        config.train.seed,
    )?;
    let artifact = TransferArtifact::new(
        &out.params,
        Some(&fisher),
        vec![silo.to_string()],
        config_digest(&config.train)?,
    )?;
    write_text(
        &out_file(&c.out_dir, &format!("{silo}.artifact.json"))?,
        &artifact.to_json()?,
    )?;
    write_jsonl(
        &out_file(&c.out_dir, &format!("{silo}.train.jsonl"))?,
        &out.log,
    )
}

fn transfer(mut config: ExperimentConfig, c: &Common, artifact: &Path, silo: &str) -> Result<()> {
    if let Some(s) = c.seed {
        config.train.seed = s;
    }
    let universe = load_universe(&config)?;
    let start = load_artifact(artifact)?;
    let out = train_sequential_ewc(&start, universe.get(silo)?, &config.split, &config.train)?;
    let mut provenance = start.provenance.clone();
    provenance.push(silo.to_string());
    let name = provenance.join("-");
    let next = TransferArtifact::new(&out.params, None, provenance, config_digest(&config.train)?)?;
    write_text(
        &out_file(&c.out_dir, &format!("{name}.artifact.json"))?,
        &next.to_json()?,
    )?;
    write_jsonl(
        &out_file(&c.out_dir, &format!("{name}.train.jsonl"))?,
        &out.log,
    )
}

fn parse_method(name: &str) -> Result<AdaptMethod> {
    AdaptMethod::ALL
        .into_iter()
        .find(|m| m.as_str() == name)
        .ok_or_else(|| Error::Config(format!("unknown adaptation method `{name}`")))
}

fn adapt(
    config: ExperimentConfig,
    c: &Common,
    artifact: &Path,
    silo: &str,
    method: &str,
) -> Result<()> {
    let cfg = AdaptConfig {
        method: parse_method(method)?,
        seed: c.seed.unwrap_or(config.adapt.seed),
        ..config.adapt.clone()
    };
    let universe = load_universe(&config)?;
    let start = load_artifact(artifact)?;
    let out = adapt_in_silo(&start.model()?, universe.get(silo)?, &config.split, &cfg)?;
    if let Some(w) = &out.warning {
        eprintln!("warning: {w}");
    }
    let mut provenance = start.provenance.clone();
    provenance.push(format!("{silo}:{method}"));
    let name = format!("{}-{silo}.{method}", start.provenance.join("-"));
    let next = TransferArtifact::new(&out.params, None, provenance, config_digest(&cfg)?)?;
    write_text(
        &out_file(&c.out_dir, &format!("{name}.artifact.json"))?,
        &next.to_json()?,
    )?;
    write_jsonl(
        &out_file(&c.out_dir, &format!("{name}.adapt.jsonl"))?,
        &out.log,
    )
}

fn evaluate(config: ExperimentConfig, c: &Common, artifact: &Path, silo: &str) -> Result<()> {
    let universe = load_universe(&config)?;
    let model = load_artifact(artifact)?;
    let reports = universe
        .get(silo)?
        .evaluate(&config.split, &model.model()?, &PolicyKind::ALL)?;
    let by_policy: BTreeMap<PolicyKind, _> = PolicyKind::ALL.into_iter().zip(reports).collect();
    let name = format!("{}-{silo}.evaluation.json", model.provenance.join("-"));
    write_text(
        &out_file(&c.out_dir, &name)?,
        &serde_json::to_string_pretty(&by_policy)?,
    )
}

#[derive(Serialize)]
struct SimilarityEntry<'a> {
    a: &'a str,
    b: &'a str,
    categories: &'a silo_transfer::similarity::SimilarityVector,
}

fn similarity(config: ExperimentConfig, c: &Common) -> Result<()> {
    let universe = load_universe(&config)?;
    let matrix = universe.context_population()?.matrix()?;
    let entries: Vec<SimilarityEntry> = matrix
        .pairs()
        .map(|((a, b), v)| SimilarityEntry {
            a,
            b,
            categories: v,
        })
        .collect();
    write_text(
        &out_file(&c.out_dir, "similarity.json")?,
        &serde_json::to_string_pretty(&entries)?,
    )
}

fn run_experiment(mut config: ExperimentConfig, c: &Common, family: &str) -> Result<()> {
    let families: Vec<Family> = if family == "all" {
        Family::ALL.to_vec()
    } else {
        vec![family.parse()?]
    };
    if let Some(s) = c.seed {
        config.seeds = vec![s];
    }
    let exp = Experiment::new(config)?;
    let mut store = ResultsStore::open(&out_file(&c.out_dir, STORE_FILE)?)?;
    // Each family is appended as soon as it finishes, so a later failure
    // leaves the earlier rows on disk.
    for f in families {
        let n = exp.run_into(f, &mut store)?;
        println!("{f}: {n} rows");
    }
    Ok(())
}

fn report(c: &Common, family: &str, format: &str) -> Result<()> {
    let format: ReportFormat = format.parse()?;
    let store = ResultsStore::open(&c.out_dir.join(STORE_FILE))?;
    for p in emit_report(&store, family, format, &c.out_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}
