mod setup;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agentrank_core::grouping::{export_batch, group_batch, GroupRecord, GroupingOutput};
use agentrank_core::io::{read_jsonl, write_jsonl};
use agentrank_core::report::{gap_csv, gap_table, ranking_csv, report_eval, report_ranking, report_turns};
use agentrank_core::retrieval::{read_corpus, Index};
use agentrank_core::rewards::assign_rewards;
use agentrank_core::rollout::{Mode, Trajectory};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use setup::{Failure, Loaded, ResultExt};

#[derive(Parser)]
#[command(name = "agentrank", version, about = "Rollouts, rewards, GRPO grouping and reports for a search agent with a generative ranker")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus (and optionally a questions file) and print index statistics.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run G rollouts per question and write trajectories.
    Rollout {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill in agent and ranker rewards.
    Reward {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Form GRPO groups and compute advantages.
    Group {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write training samples for the external trainer.
    Export {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distribution of searches per trajectory.
    ReportTurns {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-dataset F1 and exact match.
    ReportEval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hit@k of the shown documents per batch and search step; one input file per batch.
    ReportRanking {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run standard and oracle retrieval over the same questions and compare F1.
    Gap {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| format!("unknown mode {s:?}; expected standard, retrieval-only, oracle, ranker or fixed-ranker"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut loaded = Loaded::from_path(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { corpus, questions, out } => {
            loaded.override_paths(corpus, questions);
            let path = loaded.corpus_path()?;
            let file = File::open(&path).with_context(|| format!("cannot open corpus {}", path.display())).data()?;
            let index = Index::try_build(read_corpus(BufReader::new(file)))
                .with_context(|| format!("corpus {}", path.display()))
                .data()?;
            let mut stats = json!({
                "documents": index.len(),
                "vocabulary": index.vocabulary_size(),
                "average_length": index.average_length(),
                "config_hash": loaded.hash(),
            });
            if loaded.config.questions.is_some() {
                stats["questions"] = json!(loaded.questions()?.len());
            }
            let mut w = output(out.as_deref())?;
            writeln!(w, "{}", serde_json::to_string_pretty(&stats).unwrap()).data()?;
        }
        Command::Rollout { mode, corpus, questions, workers, out } => {
            loaded.override_paths(corpus, questions);
            if let Some(m) = mode {
                loaded.config.mode = m;
            }
            if let Some(w) = workers {
                loaded.config.workers = w;
            }
            loaded.validate()?;
            let trajs = loaded.rollouts(loaded.config.mode)?;
            write_records(&out, &trajs)?;
        }
        Command::Reward { input, out } => {
            let mut trajs = read_trajectories(&input)?;
            let stats = assign_rewards(&mut trajs, &loaded.config.reward_params()).data()?;
            stamp(&mut trajs, &loaded.hash());
            log::info!("reward: {} kept, {} filtered", stats.kept, stats.filtered);
            write_records(&out, &trajs)?;
        }
        Command::Group { input, out } => {
            let trajs = read_trajectories(&input)?;
            let groups = group_batch(&trajs, loaded.config.grouping_params()).data()?;
            if !groups.audit.balanced() {
                return Err(anyhow!("grouping audit does not balance: {:?}", groups.audit)).data();
            }
            write_records(&out, &groups.records(&loaded.hash()))?;
            eprintln!("{}", serde_json::to_string(&groups.audit).unwrap());
        }
        Command::Export { trajectories, groups, out } => {
            let trajs = read_trajectories(&trajectories)?;
            let records: Vec<GroupRecord> = read_file(&groups)?;
            let groups = GroupingOutput::from_records(records);
            let samples = export_batch(&groups, &trajs, &loaded.hash()).data()?;
            write_records(&out, &samples)?;
        }
        Command::ReportTurns { input, out } => {
            let trajs = read_trajectories(&input)?;
            let h = report_turns(&trajs, loaded.config.budget).data()?;
            write_csv(out.as_deref(), &h.to_csv(), &loaded.hash())?;
        }
        Command::ReportEval { input, out } => {
            let trajs = read_trajectories(&input)?;
            write_csv(out.as_deref(), &report_eval(&trajs).to_csv(), &loaded.hash())?;
        }
        Command::ReportRanking { input, out } => {
            let batches = input.iter().map(|p| read_trajectories(p)).collect::<Result<Vec<_>, _>>()?;
            let cutoffs = loaded.config.cutoffs.clone();
            let csv = ranking_csv(&report_ranking(&batches, &cutoffs), &cutoffs);
            write_csv(out.as_deref(), &csv, &loaded.hash())?;
        }
        Command::Gap { corpus, questions, out } => {
            loaded.override_paths(corpus, questions);
            loaded.validate()?;
            let standard = loaded.rollouts(Mode::Standard)?;
            let oracle = loaded.rollouts(Mode::Oracle)?;
            let rows = gap_table(&report_eval(&standard), &report_eval(&oracle));
            write_csv(out.as_deref(), &gap_csv(&rows), &loaded.hash())?;
        }
    }
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        None => Box::new(io::stdout().lock()),
        Some(p) if p == Path::new("-") => Box::new(io::stdout().lock()),
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display())).data()?,
        )),
    })
}

fn read_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display())).data()?;
    read_jsonl(BufReader::new(file)).with_context(|| format!("{}", path.display())).data()
}

fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, Failure> {
    read_file(path)
}

fn write_records<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<(), Failure> {
    let w = output(Some(path))?;
    write_jsonl(w, records).with_context(|| format!("cannot write {}", path.display())).data()
}

fn stamp(trajs: &mut [Trajectory], hash: &str) {
    for t in trajs {
        t.config_hash = hash.to_owned();
    }
}

/// Appends a `config_hash` column to every row.
fn with_hash_column(csv: &str, hash: &str) -> String {
    let mut lines = csv.lines();
    let mut out = String::new();
    if let Some(header) = lines.next() {
        out.push_str(header);
        out.push_str(",config_hash\n");
    }
    for l in lines {
        out.push_str(l);
        out.push(',');
        out.push_str(hash);
        out.push('\n');
    }
    out
}

fn write_csv(path: Option<&Path>, csv: &str, hash: &str) -> Result<(), Failure> {
    let mut w = output(path)?;
    w.write_all(with_hash_column(csv, hash).as_bytes()).data()?;
    w.flush().data()
}
