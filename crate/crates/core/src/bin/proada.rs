use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use proada::bench::{
    label_gold, read_jsonl, run_benchmark, select_records, write_jsonl, AgentKind, CoveragePool,
    DatasetRecord, RunOptions, UserMode,
};
use proada::corpus::{Corpus, RequirementDoc};
use proada::features::FeatureSchema;
use proada::llm::{Gateway, HttpProvider, MockProvider, MockScript};
use proada::rules::RuleProgram;
use proada::service::{serve, AppState};
use proada::synthesis::{write_artifacts, Synthesizer};
use proada::usersim::{
    sample_diverse, sample_representative, ConsistencyRules, FeatureDistribution,
};

#[derive(Parser)]
#[command(
    name = "proada",
    version,
    about = "Eligibility dialogs driven by synthesized rule programs"
)]
struct Cli {
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProviderArgs {
    /// Where completions come from.
    #[arg(long, value_enum, default_value_t = ProviderKind::Mock, global = true)]
    provider: ProviderKind,
    /// Model name sent to the provider.
    #[arg(long, global = true)]
    model: Option<String>,
    /// JSON file of scripted mock replies.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// Seed for the built-in mock responder.
    #[arg(long, default_value_t = 0, global = true)]
    mock_seed: u64,
    /// Append every provider call to this JSONL file.
    #[arg(long, global = true)]
    audit: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a checker and schema for every requirements document.
    Synth {
        #[arg(long)]
        requirements: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_attempts: u32,
    },
    /// Generate households over the corpus schema.
    Sample {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw from these feature distributions instead of fuzzing around
        /// checker thresholds.
        #[arg(long)]
        distributions: Option<PathBuf>,
        /// Consistency rules; the built-in set when absent.
        #[arg(long)]
        consistency: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill in gold labels by running the checkers on full profiles.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        /// Defaults to rewriting the dataset in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep the fewest households that still cover every executed node.
    Minimize {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark commands.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Serve the session API.
    Serve {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Write session transcripts here; concluded sessions are reloaded
        /// from it after a restart.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run one agent over a labeled dataset and write a report.
    Run {
        #[arg(long, default_value = "proada")]
        agent: AgentKind,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, default_value = "oracle")]
        user: UserMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
}

fn gateway(args: &ProviderArgs) -> Result<Arc<Gateway>> {
    let mut gw = match args.provider {
        ProviderKind::Mock => {
            let provider = match &args.mock_script {
                Some(path) => MockScript::from_path(path)
                    .and_then(MockScript::into_provider)
                    .map_err(anyhow::Error::msg)?,
                None => MockProvider::builtin(args.mock_seed),
            };
            Gateway::mock(provider)
        }
        ProviderKind::Http => {
            if args.mock_script.is_some() {
                bail!("--mock-script only applies to --provider mock");
            }
            Gateway::new(Arc::new(HttpProvider::from_env()?))
        }
    };
    if let Some(model) = &args.model {
        gw = gw.with_model(model);
    }
    if let Some(path) = &args.audit {
        gw = gw
            .with_audit_file(path)
            .with_context(|| format!("cannot open audit file {}", path.display()))?;
    }
    Ok(Arc::new(gw))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load_dir(dir).with_context(|| format!("cannot load rules from {}", dir.display()))
}

fn synth(gw: Arc<Gateway>, requirements: &Path, out: &Path, max_attempts: u32) -> Result<()> {
    let docs = RequirementDoc::load_dir(requirements)?;
    if docs.is_empty() {
        bail!(
            "no requirement documents (*.txt) in {}",
            requirements.display()
        );
    }
    let synth = Synthesizer::new(gw).with_max_attempts(max_attempts);
    let results = synth.synthesize_all(&docs, &FeatureSchema::new())?;
    for (doc, result) in docs.iter().zip(&results) {
        write_artifacts(out, doc, result)?;
        eprintln!(
            "{}: {} nodes, {} slots, {} attempt(s)",
            doc.opportunity_id,
            result.program.len(),
            result.schema.len(),
            result.attempts
        );
    }
    Ok(())
}

fn sample(
    rules: &Path,
    n: usize,
    seed: u64,
    distributions: Option<&Path>,
    consistency: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(rules)?;
    let schema = corpus.merged_schema()?;
    let consistency = match consistency {
        Some(p) => ConsistencyRules::from_path(p)?,
        None => ConsistencyRules::default(),
    };
    let households = match distributions {
        Some(p) => sample_representative(
            &schema,
            &FeatureDistribution::from_path(p)?,
            &consistency,
            seed,
            n,
        )?,
        None => {
            let programs: Vec<RuleProgram> =
                corpus.checkers().map(|c| (*c.program).clone()).collect();
            sample_diverse(&schema, &programs, &consistency, seed, n)?
        }
    };
    let records: Vec<DatasetRecord> = households
        .into_iter()
        .map(|household| DatasetRecord {
            household,
            opportunities: Vec::new(),
            gold: Default::default(),
        })
        .collect();
    write_jsonl(out, &records)?;
    eprintln!("wrote {} households to {}", records.len(), out.display());
    Ok(())
}

fn minimize(pool: &Path, rules: &Path, out: &Path) -> Result<()> {
    let corpus = load_corpus(rules)?;
    let records = read_jsonl(pool)?;
    let coverage = CoveragePool::build(&records, &corpus)?;
    let selection = coverage.minimize();
    let mut kept = select_records(&records, &selection);
    label_gold(&mut kept, &corpus)?;
    write_jsonl(out, &kept)?;
    eprintln!(
        "kept {} of {} households ({} pairs, {} nodes covered)",
        kept.len(),
        records.len(),
        selection.pairs.len(),
        selection.covered.len()
    );
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            requirements,
            out,
            max_attempts,
        } => synth(gateway(&cli.provider)?, &requirements, &out, max_attempts),
        Command::Sample {
            rules,
            n,
            seed,
            distributions,
            consistency,
            out,
        } => sample(
            &rules,
            n,
            seed,
            distributions.as_deref(),
            consistency.as_deref(),
            &out,
        ),
        Command::Label {
            dataset,
            rules,
            out,
        } => {
            let corpus = load_corpus(&rules)?;
            let mut records = read_jsonl(&dataset)?;
            label_gold(&mut records, &corpus)?;
            write_jsonl(out.as_deref().unwrap_or(&dataset), &records)?;
            Ok(())
        }
        Command::Minimize { pool, rules, out } => minimize(&pool, &rules, &out),
        Command::Bench {
            command:
                BenchCommand::Run {
                    agent,
                    dataset,
                    rules,
                    user,
                    seed,
                    out,
                    transcripts,
                    parallelism,
                },
        } => {
            let gw = gateway(&cli.provider)?;
            let corpus = load_corpus(&rules)?;
            let records = read_jsonl(&dataset)?;
            let mut opts = RunOptions::new(agent, user, seed);
            opts.parallelism = parallelism;
            opts.transcripts = transcripts;
            let report = run_benchmark(&records, &corpus, gw, &opts)?;
            report.write(&out)?;
            eprintln!(
                "F1 {:.1}  turns {:.1}  turn-weighted F1 {:.1}  ({} pairs, {} failed sessions)",
                report.f1,
                report.turns_mean,
                report.turn_weighted_f1,
                report.pairs.len(),
                report.failed_sessions.len()
            );
            Ok(())
        }
        Command::Serve {
            rules,
            port,
            host,
            log_dir,
        } => {
            let corpus = load_corpus(&rules)?;
            let mut state = AppState::new(corpus, gateway(&cli.provider)?);
            if let Some(dir) = log_dir {
                state = state.with_log_dir(dir);
            }
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("bad listen address {host}:{port}"))?;
            tokio::runtime::Runtime::new()?.block_on(serve(Arc::new(state), addr))?;
            Ok(())
        }
    }
}
