//! Config loading, input validation, and construction of retrievers and
//! policies from the run configuration.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use agentrank_core::config::{PolicyConfig, RetrieverConfig, RunConfig};
use agentrank_core::io::read_jsonl;
use agentrank_core::policy::{Policy, ScriptedPolicy};
use agentrank_core::retrieval::{read_corpus, Index, Retriever};
use agentrank_core::rollout::{run_batch, BatchOptions, Engine, Mode, Question, RolloutError, Trajectory};
use agentrank_remote::{ChatPolicy, RemoteRetriever, RetryPolicy};
use anyhow::{anyhow, Context};

#[derive(Debug, Clone, Copy)]
pub enum Code {
    Usage = 1,
    Data = 2,
    Transport = 3,
}

pub struct Failure {
    pub code: Code,
    pub error: anyhow::Error,
}

pub trait ResultExt<T> {
    fn data(self) -> Result<T, Failure>;
    fn transport(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: Code::Data, error: e.into() })
    }

    fn transport(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: Code::Transport, error: e.into() })
    }
}

pub struct Loaded {
    pub config: RunConfig,
    /// Directory relative config paths resolve against.
    base: PathBuf,
}

impl Loaded {
    pub fn from_path(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self { config: RunConfig::default(), base: PathBuf::from(".") });
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .data()?;
        let config = RunConfig::from_toml(&text)
            .with_context(|| format!("config {}", path.display()))
            .data()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.config.validate().context("invalid config").data()
    }

    pub fn hash(&self) -> String {
        self.config.hash()
    }

    /// Command-line paths are taken as given; they are made absolute so that
    /// config-relative resolution leaves them alone.
    pub fn override_paths(&mut self, corpus: Option<PathBuf>, questions: Option<PathBuf>) {
        let abs = |p: PathBuf| std::path::absolute(&p).unwrap_or(p);
        if let Some(c) = corpus {
            self.config.corpus = Some(abs(c));
        }
        if let Some(q) = questions {
            self.config.questions = Some(abs(q));
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn corpus_path(&self) -> Result<PathBuf, Failure> {
        self.config
            .corpus
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Failure { code: Code::Usage, error: anyhow!("no corpus given (--corpus or `corpus` in the config)") })
    }

    pub fn questions(&self) -> Result<Vec<Question>, Failure> {
        let path = self
            .config
            .questions
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Failure { code: Code::Usage, error: anyhow!("no questions given (--questions or `questions` in the config)") })?;
        let file = File::open(&path).with_context(|| format!("cannot open questions {}", path.display())).data()?;
        let qs: Vec<Question> = read_jsonl(BufReader::new(file))
            .with_context(|| format!("questions {}", path.display()))
            .data()?;
        let mut ids = HashSet::new();
        for q in &qs {
            let problem = if !ids.insert(q.id.as_str()) {
                Some("duplicate id")
            } else if q.question.trim().is_empty() {
                Some("empty question")
            } else if q.golden_answers.is_empty() {
                Some("no golden answers")
            } else {
                None
            };
            if let Some(p) = problem {
                return Err(anyhow!("questions {}: {p} for {:?}", path.display(), q.id)).data();
            }
        }
        Ok(qs)
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy { max_attempts: self.config.max_attempts, ..RetryPolicy::default() }
    }

    fn retriever(&self) -> Result<Box<dyn Retriever>, Failure> {
        Ok(match &self.config.retriever {
            RetrieverConfig::Builtin => {
                let path = self.corpus_path()?;
                let file = File::open(&path).with_context(|| format!("cannot open corpus {}", path.display())).data()?;
                let index = Index::try_build(read_corpus(BufReader::new(file)))
                    .with_context(|| format!("corpus {}", path.display()))
                    .data()?;
                Box::new(index)
            }
            RetrieverConfig::Remote { url } => Box::new(RemoteRetriever::new(url.clone(), self.retry())),
        })
    }

    fn policy(&self, cfg: &PolicyConfig, role: &str) -> Result<Box<dyn Policy>, Failure> {
        Ok(match cfg {
            PolicyConfig::Scripted { turns, script } => {
                let mut turns = turns.clone();
                if let Some(p) = script {
                    let p = self.resolve(p);
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("cannot read {role} script {}", p.display()))
                        .data()?;
                    let more: Vec<String> = serde_json::from_str(&text)
                        .with_context(|| format!("{role} script {} must be a JSON array of strings", p.display()))
                        .data()?;
                    turns.extend(more);
                }
                Box::new(ScriptedPolicy::new(turns))
            }
            PolicyConfig::RemoteChat { endpoint, model, temperature, api_key_env } => {
                let mut p = ChatPolicy::new(endpoint, model.clone(), self.retry())
                    .temperature(*temperature)
                    .seed(self.config.seed);
                if let Some(var) = api_key_env {
                    p = p.api_key_env(var).transport()?;
                }
                Box::new(p)
            }
        })
    }

    /// Runs the configured rollouts in `mode`, stamping each trajectory with
    /// the config hash.
    pub fn rollouts(&self, mode: Mode) -> Result<Vec<Trajectory>, Failure> {
        let questions = self.questions()?;
        let retriever = self.retriever()?;
        let main_cfg = self.config.main_policy.as_ref().ok_or_else(|| Failure {
            code: Code::Usage,
            error: anyhow!("rollouts need a main_policy in the config"),
        })?;
        let main = self.policy(main_cfg, "main")?;
        let ranker = match (&self.config.ranker_policy, mode.uses_ranker()) {
            (Some(cfg), true) => Some(self.policy(cfg, "ranker")?),
            (None, true) => {
                return Err(Failure { code: Code::Data, error: anyhow!("invalid config: mode {mode:?} needs a ranker_policy") })
            }
            _ => None,
        };
        let engine = Engine {
            retriever: retriever.as_ref(),
            main: main.as_ref(),
            ranker: ranker.as_deref(),
            mode,
            limits: self.config.limits(),
        };
        // requests are retried inside the HTTP clients
        let opts = BatchOptions { group_size: self.config.group_size, workers: self.config.workers, max_attempts: 1 };
        let started = std::time::Instant::now();
        let mut trajs = run_batch(&engine, &questions, opts).map_err(|f| {
            let code = match f.source {
                RolloutError::Transport(_) => Code::Transport,
                _ => Code::Data,
            };
            Failure { code, error: f.into() }
        })?;
        log::info!("{} rollouts in {:?}", trajs.len(), started.elapsed());
        let hash = self.hash();
        for t in &mut trajs {
            t.config_hash = hash.clone();
        }
        Ok(trajs)
    }
}
