//! Command-line entry point. Settings resolve as flags > JSON config file >
//! defaults; every artifact lands under `--out-dir` with a fixed name.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 endpoint
//! failure, 3 training divergence (last good parameters are still written).

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{ChatClient, HttpChatClient};
use crate::dataset::{load_dataset, load_grbench_records, write_dataset, QaRecord};
use crate::env::{EnvConfig, Environment};
use crate::eval::{run_benchmark, Agent, AgentKind, EvalConfig};
use crate::graph::Graph;
use crate::grpo::{
    advantages, collect_group, collect_rollouts, train, CollectMode, GrpoConfig, GrpoError,
};
use crate::index::RetrievalIndex;
use crate::mcts::{
    Evaluator, HeuristicEvaluator, LlmEvaluator, Mcts, MctsConfig, MctsError, TraceRecord,
};
use crate::policy::{
    load_script, LlmPolicy, Policy, PolicyError, PolicyParams, ScriptedPolicy, SearchRng,
    SoftmaxPolicy,
};
use crate::prompt::render_steps;
use crate::synth::{generate_synthetic_suite, SuiteParams};
use crate::trajectory::write_group;

pub const INDEX_FILE: &str = "graph.idx";
pub const TRACE_FILE: &str = "trace.json";
pub const REPORT_FILE: &str = "eval_report.json";
pub const GROUPS_DIR: &str = "groups";
pub const PARAMS_FILE: &str = "params.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SYNTH_GRAPH_FILE: &str = "graph.jsonl";
pub const SYNTH_DATASET_FILE: &str = "dataset.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("endpoint: {0}")]
    Endpoint(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Endpoint(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn from_policy(e: PolicyError) -> CliError {
    match e {
        PolicyError::Chat(c) => CliError::Endpoint(c.to_string()),
        other => input(other),
    }
}

fn from_mcts(e: MctsError) -> CliError {
    match e {
        MctsError::Evaluator(c) => CliError::Endpoint(c.to_string()),
        MctsError::Policy(p) => from_policy(p),
        MctsError::InvalidConfig(m) => CliError::Config(m),
        other => input(other),
    }
}

fn from_grpo(e: GrpoError) -> CliError {
    match e {
        GrpoError::Policy(p) => from_policy(p),
        GrpoError::Search(m) => from_mcts(m),
        GrpoError::InvalidConfig(m) => CliError::Config(m),
        other => input(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    #[default]
    Softmax,
    Scripted,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorChoice {
    #[default]
    Heuristic,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    #[default]
    Internal,
    Grbench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CollectChoice {
    #[default]
    Rollout,
    Mcts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentChoice {
    Mcts,
    Greedy,
    Scripted,
}

impl From<AgentChoice> for AgentKind {
    fn from(a: AgentChoice) -> Self {
        match a {
            AgentChoice::Mcts => AgentKind::Mcts,
            AgentChoice::Greedy => AgentKind::Greedy,
            AgentChoice::Scripted => AgentKind::Scripted,
        }
    }
}

/// Every setting a command may read. The top-level `seed` overrides the
/// nested search and training seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub dataset_format: DatasetFormat,
    pub endpoint: Option<String>,
    pub model: String,
    pub policy: PolicyChoice,
    pub script: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub evaluator: EvaluatorChoice,
    pub agent: AgentKind,
    pub collect_mode: CollectChoice,
    /// Completions requested per LLM policy call.
    pub llm_samples: usize,
    pub llm_temperature: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub env: EnvConfig,
    pub mcts: MctsConfig,
    pub grpo: GrpoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: None,
            index: None,
            dataset: None,
            dataset_format: DatasetFormat::Internal,
            endpoint: None,
            model: "default".into(),
            policy: PolicyChoice::Softmax,
            script: None,
            params: None,
            evaluator: EvaluatorChoice::Heuristic,
            agent: AgentKind::Mcts,
            collect_mode: CollectChoice::Rollout,
            llm_samples: 3,
            llm_temperature: 0.7,
            out_dir: PathBuf::from("out"),
            seed: 0,
            jobs: None,
            env: EnvConfig::default(),
            mcts: MctsConfig::default(),
            grpo: GrpoConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tagqa",
    version,
    about = "Question answering over text-attributed graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a graph file, build its retrieval index and save it.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// Index output path (default: <out-dir>/graph.idx).
        #[arg(long)]
        out_index: Option<PathBuf>,
    },
    /// Answer one question with tree search and print the transcript.
    Ask {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        question: String,
        /// Also write the per-move search trace to <out-dir>/trace.json.
        #[arg(long)]
        trace: bool,
    },
    /// Run an agent over a dataset and write an evaluation report.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        agent: Option<AgentChoice>,
    },
    /// Sample one trajectory group per dataset question and export it.
    Collect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        collect_mode: Option<CollectChoice>,
    },
    /// Train the parametric policy with group-relative policy optimization.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        collect_mode: Option<CollectChoice>,
    },
    /// Print a search trace written by `ask --trace`.
    InspectTrace {
        /// Trace file path.
        path: PathBuf,
    },
    /// Write a seeded synthetic graph and dataset.
    Synth {
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Counting questions only.
        #[arg(long)]
        counting: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset_format: Option<DatasetFormat>,
    /// Chat-completions URL; the key is read from GO1_API_KEY.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyChoice>,
    /// JSON-lines `{thought, action}` script for the scripted policy.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Softmax policy parameters (JSON).
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorChoice>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub retrieve_always: bool,
    #[arg(long)]
    pub simulations: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub c_explore: Option<f64>,
    #[arg(long)]
    pub rollout_temperature: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub clip_epsilon: Option<f64>,
    #[arg(long)]
    pub kl_beta: Option<f64>,
}

impl CommonArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_at(path))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $slot:expr) => {
                if let Some(v) = $flag.clone() {
                    $slot = v;
                }
            };
        }
        macro_rules! set_opt {
            ($flag:expr, $slot:expr) => {
                if $flag.is_some() {
                    $slot = $flag.clone();
                }
            };
        }
        set_opt!(self.graph, cfg.graph);
        set_opt!(self.index, cfg.index);
        set_opt!(self.dataset, cfg.dataset);
        set!(self.dataset_format, cfg.dataset_format);
        set_opt!(self.endpoint, cfg.endpoint);
        set!(self.model, cfg.model);
        set!(self.policy, cfg.policy);
        set_opt!(self.script, cfg.script);
        set_opt!(self.params, cfg.params);
        set!(self.evaluator, cfg.evaluator);
        set!(self.out_dir, cfg.out_dir);
        set!(self.seed, cfg.seed);
        set_opt!(self.jobs, cfg.jobs);
        set!(self.max_depth, cfg.env.max_depth);
        set!(self.max_depth, cfg.mcts.max_depth);
        if self.retrieve_always {
            cfg.env.retrieve_always = true;
        }
        set!(self.simulations, cfg.mcts.simulations_per_move);
        set!(self.width, cfg.mcts.width);
        set!(self.c_explore, cfg.mcts.c_explore);
        set!(self.rollout_temperature, cfg.mcts.rollout_temperature);
        set!(self.group_size, cfg.grpo.group_size);
        set!(self.iterations, cfg.grpo.iterations);
        set!(self.learning_rate, cfg.grpo.learning_rate);
        set!(self.clip_epsilon, cfg.grpo.clip_epsilon);
        set!(self.kl_beta, cfg.grpo.kl_beta);
        cfg.mcts.seed = cfg.seed;
        cfg.grpo.seed = cfg.seed;
        cfg.env
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        cfg.mcts.validate().map_err(from_mcts)?;
        cfg.grpo.validate().map_err(from_grpo)?;
        if cfg.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        for path in [
            &cfg.graph,
            &cfg.index,
            &cfg.dataset,
            &cfg.script,
            &cfg.params,
        ]
        .into_iter()
        .flatten()
        {
            if !path.is_file() {
                return Err(CliError::Input(format!("{}: no such file", path.display())));
            }
        }
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Ingest { common, out_index } => {
            let cfg = common.resolve()?;
            cmd_ingest(&cfg, out_index.as_deref(), out)
        }
        Command::Ask {
            common,
            question,
            trace,
        } => {
            let cfg = common.resolve()?;
            with_jobs(&cfg, out, |buf| cmd_ask(&cfg, &question, trace, buf))
        }
        Command::Eval { common, agent } => {
            let mut cfg = common.resolve()?;
            if let Some(a) = agent {
                cfg.agent = a.into();
            }
            with_jobs(&cfg, out, |buf| cmd_eval(&cfg, buf))
        }
        Command::Collect {
            common,
            collect_mode,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(m) = collect_mode {
                cfg.collect_mode = m;
            }
            with_jobs(&cfg, out, |buf| cmd_collect(&cfg, buf))
        }
        Command::Train {
            common,
            collect_mode,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(m) = collect_mode {
                cfg.collect_mode = m;
            }
            with_jobs(&cfg, out, |buf| cmd_train(&cfg, buf))
        }
        Command::InspectTrace { path } => cmd_inspect_trace(&path, out),
        Command::Synth {
            out_dir,
            seed,
            counting,
        } => {
            let dir = out_dir.unwrap_or_else(|| RunConfig::default().out_dir);
            let params = if counting {
                SuiteParams::counting()
            } else {
                SuiteParams::default()
            };
            cmd_synth(&dir, &params, seed, out)
        }
    }
}

/// Runs `f` on a pool bounded by `--jobs`; its output is buffered and
/// copied to `out` afterwards, even on failure.
fn with_jobs(
    cfg: &RunConfig,
    out: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> Result<(), CliError> + Send,
) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| f(&mut buf));
    emit(out, &String::from_utf8_lossy(&buf))?;
    result
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Input(format!("writing output: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_at(parent))?;
        }
    }
    fs::write(path, bytes).map_err(io_at(path))
}

fn load_graph(cfg: &RunConfig) -> Result<Graph, CliError> {
    let path = cfg
        .graph
        .as_ref()
        .ok_or_else(|| CliError::Config("--graph is required".into()))?;
    Graph::load(path).map_err(input)
}

fn load_index(cfg: &RunConfig, graph: &Graph) -> Result<RetrievalIndex, CliError> {
    match &cfg.index {
        Some(path) => RetrievalIndex::load(path, graph).map_err(input),
        None => Ok(RetrievalIndex::build(graph)),
    }
}

fn load_records(cfg: &RunConfig) -> Result<Vec<QaRecord>, CliError> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("--dataset is required".into()))?;
    match cfg.dataset_format {
        DatasetFormat::Internal => load_dataset(path),
        DatasetFormat::Grbench => load_grbench_records(path),
    }
    .map_err(input)
}

fn load_params(cfg: &RunConfig) -> Result<PolicyParams, CliError> {
    match &cfg.params {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_at(path))?;
            let p: PolicyParams = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            p.validate().map_err(from_policy)?;
            Ok(p)
        }
        None => Ok(PolicyParams::zeros()),
    }
}

fn chat_client(cfg: &RunConfig) -> Result<Arc<dyn ChatClient>, CliError> {
    let url = cfg
        .endpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("an LLM policy or evaluator needs --endpoint".into()))?;
    Ok(Arc::new(HttpChatClient::new(url)))
}

/// Expansion policy and rollout policy.
type PolicyPair = (Box<dyn Policy>, Box<dyn Policy>);

/// The expansion policy and the rollout policy built from `cfg`.
fn build_policies(cfg: &RunConfig) -> Result<PolicyPair, CliError> {
    match cfg.policy {
        PolicyChoice::Softmax => {
            let params = load_params(cfg)?;
            let rollout = PolicyParams {
                temperature: params.temperature * cfg.mcts.rollout_temperature,
                ..params.clone()
            };
            Ok((
                Box::new(SoftmaxPolicy::new(params).map_err(from_policy)?),
                Box::new(SoftmaxPolicy::new(rollout).map_err(from_policy)?),
            ))
        }
        PolicyChoice::Scripted => {
            let path = cfg
                .script
                .as_ref()
                .ok_or_else(|| CliError::Config("the scripted policy needs --script".into()))?;
            let file = fs::File::open(path).map_err(io_at(path))?;
            let script = load_script(BufReader::new(file)).map_err(from_policy)?;
            Ok((
                Box::new(ScriptedPolicy::new(script.clone())),
                Box::new(ScriptedPolicy::new(script)),
            ))
        }
        PolicyChoice::Llm => {
            let client = chat_client(cfg)?;
            let make = |temperature| LlmPolicy {
                client: client.clone(),
                model: cfg.model.clone(),
                n: cfg.llm_samples.max(1),
                temperature,
            };
            Ok((
                Box::new(make(cfg.llm_temperature)),
                Box::new(make(cfg.llm_temperature * cfg.mcts.rollout_temperature)),
            ))
        }
    }
}

fn build_evaluator(cfg: &RunConfig) -> Result<Box<dyn Evaluator>, CliError> {
    Ok(match cfg.evaluator {
        EvaluatorChoice::Heuristic => Box::new(HeuristicEvaluator),
        EvaluatorChoice::Llm => Box::new(LlmEvaluator {
            client: chat_client(cfg)?,
            model: cfg.model.clone(),
        }),
    })
}

pub fn cmd_ingest(
    cfg: &RunConfig,
    out_index: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let graph = load_graph(cfg)?;
    let index = RetrievalIndex::build(&graph);
    let path = out_index
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(INDEX_FILE));
    write_file(&path, &index.to_bytes())?;
    let schema = graph.schema();
    emit(
        out,
        &format!(
            "nodes={} edges={}\nnode_types={} edge_types={}\nindex={}\n",
            graph.node_count(),
            graph.edge_count(),
            schema.node_types.len(),
            schema.edge_types.len(),
            path.display()
        ),
    )
}

pub fn cmd_ask(
    cfg: &RunConfig,
    question: &str,
    trace: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if question.trim().is_empty() {
        return Err(CliError::Config("--question is empty".into()));
    }
    let graph = load_graph(cfg)?;
    let index = load_index(cfg, &graph)?;
    let env = Environment::new(&graph, &index, &cfg.env).map_err(input)?;
    let (policy, rollout) = build_policies(cfg)?;
    let evaluator = build_evaluator(cfg)?;
    let search = Mcts {
        env: &env,
        policy: policy.as_ref(),
        rollout_policy: rollout.as_ref(),
        evaluator: evaluator.as_ref(),
        cfg: &cfg.mcts,
    };
    let outcome = search.search(question).map_err(from_mcts)?;
    if trace {
        let json = serde_json::to_string_pretty(&outcome.trace).map_err(input)? + "\n";
        write_file(&cfg.out_dir.join(TRACE_FILE), json.as_bytes())?;
    }
    emit(
        out,
        &format!(
            "Question: {question}\n{}Answer: {}\n",
            render_steps(&outcome.state),
            outcome.answer
        ),
    )
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = load_graph(cfg)?;
    let index = load_index(cfg, &graph)?;
    let records = load_records(cfg)?;
    let env = Environment::new(&graph, &index, &cfg.env).map_err(input)?;
    let eval_cfg = EvalConfig {
        env: cfg.env.clone(),
        mcts: cfg.mcts.clone(),
        seed: cfg.seed,
    };
    let report = match cfg.agent {
        AgentKind::Scripted => {
            let script = match &cfg.script {
                Some(path) => {
                    let file = fs::File::open(path).map_err(io_at(path))?;
                    Some(load_script(BufReader::new(file)).map_err(from_policy)?)
                }
                None => None,
            };
            run_benchmark(&records, &env, &Agent::Scripted { script }, &eval_cfg)
        }
        AgentKind::Greedy => {
            let (policy, _) = build_policies(cfg)?;
            run_benchmark(
                &records,
                &env,
                &Agent::Greedy {
                    policy: policy.as_ref(),
                },
                &eval_cfg,
            )
        }
        AgentKind::Mcts => {
            let (policy, rollout) = build_policies(cfg)?;
            let evaluator = build_evaluator(cfg)?;
            run_benchmark(
                &records,
                &env,
                &Agent::Mcts {
                    policy: policy.as_ref(),
                    rollout_policy: rollout.as_ref(),
                    evaluator: evaluator.as_ref(),
                },
                &eval_cfg,
            )
        }
    };
    let json = report.to_json().map_err(input)?;
    write_file(&cfg.out_dir.join(REPORT_FILE), json.as_bytes())?;
    emit(out, &report.summary_table())
}

/// File name for the group of the question at `position` in dataset order.
pub fn group_file_name(position: usize) -> String {
    format!("group_{position:04}.jsonl")
}

pub fn cmd_collect(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = load_graph(cfg)?;
    let index = load_index(cfg, &graph)?;
    let records = load_records(cfg)?;
    let env = Environment::new(&graph, &index, &cfg.env).map_err(input)?;
    let n = cfg.grpo.group_size;
    let mut rng = SearchRng::seed_from_u64(cfg.seed);
    let softmax = match cfg.policy {
        PolicyChoice::Softmax => Some(load_params(cfg)?),
        _ => None,
    };
    let generic = match cfg.policy {
        PolicyChoice::Softmax => None,
        _ => Some(build_policies(cfg)?.0),
    };
    let dir = cfg.out_dir.join(GROUPS_DIR);
    for (pos, record) in records.iter().enumerate() {
        let group = match (&softmax, &generic) {
            (Some(params), _) => {
                let mode = match cfg.collect_mode {
                    CollectChoice::Rollout => CollectMode::Rollout,
                    CollectChoice::Mcts => CollectMode::Mcts(cfg.mcts.clone()),
                };
                collect_group(&env, record, params, n, &mode, &mut rng)
            }
            (None, Some(policy)) => {
                if cfg.collect_mode == CollectChoice::Mcts {
                    return Err(CliError::Config(
                        "search-based collection needs the softmax policy".into(),
                    ));
                }
                collect_rollouts(&env, record, policy.as_ref(), n, &mut rng)
            }
            (None, None) => unreachable!("one policy is always built"),
        }
        .map_err(from_grpo)?;
        let adv = advantages(&group.rewards, cfg.grpo.norm_eps).map_err(from_grpo)?;
        let mut buf = Vec::new();
        write_group(&group, &adv, &mut buf).map_err(input)?;
        write_file(&dir.join(group_file_name(pos)), &buf)?;
        let mean = group.rewards.iter().sum::<f64>() / group.rewards.len() as f64;
        emit(
            out,
            &format!(
                "{} {} trajectories mean_reward={mean:.4}\n",
                record.id,
                group.trajectories.len()
            ),
        )?;
    }
    emit(
        out,
        &format!("groups={} dir={}\n", records.len(), dir.display()),
    )
}

fn window_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn write_training_outputs(
    cfg: &RunConfig,
    params: &PolicyParams,
    metrics: &[crate::grpo::IterationMetrics],
) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(params).map_err(input)? + "\n";
    write_file(&cfg.out_dir.join(PARAMS_FILE), json.as_bytes())?;
    let mut lines = String::new();
    for m in metrics {
        lines.push_str(&serde_json::to_string(m).map_err(input)?);
        lines.push('\n');
    }
    write_file(&cfg.out_dir.join(METRICS_FILE), lines.as_bytes())
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.policy != PolicyChoice::Softmax {
        return Err(CliError::Config(
            "in-process training needs the softmax policy; use `collect` to export groups".into(),
        ));
    }
    let graph = load_graph(cfg)?;
    let index = load_index(cfg, &graph)?;
    let records = load_records(cfg)?;
    let env = Environment::new(&graph, &index, &cfg.env).map_err(input)?;
    let init = load_params(cfg)?;
    let mode = match cfg.collect_mode {
        CollectChoice::Rollout => CollectMode::Rollout,
        CollectChoice::Mcts => CollectMode::Mcts(cfg.mcts.clone()),
    };
    match train(&records, &env, &cfg.grpo, &init, &mode) {
        Ok(outcome) => {
            write_training_outputs(cfg, &outcome.params, &outcome.metrics)?;
            let rewards: Vec<f64> = outcome.metrics.iter().map(|m| m.mean_reward).collect();
            let w = rewards.len().min(20);
            emit(
                out,
                &format!(
                    "iterations={} first_mean_reward={:.4} last_mean_reward={:.4}\n",
                    rewards.len(),
                    window_mean(&rewards[..w]),
                    window_mean(&rewards[rewards.len() - w..])
                ),
            )
        }
        Err(GrpoError::Divergence {
            iteration,
            last_good,
            metrics,
        }) => {
            write_training_outputs(cfg, &last_good, &metrics)?;
            Err(CliError::Divergence(format!(
                "weights diverged at iteration {iteration}; last good parameters written to {}",
                cfg.out_dir.join(PARAMS_FILE).display()
            )))
        }
        Err(e) => Err(from_grpo(e)),
    }
}

pub fn cmd_inspect_trace(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let trace: Vec<TraceRecord> = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut s = String::new();
    for rec in &trace {
        s.push_str(&format!(
            "move {}: committed {}\n",
            rec.move_index, rec.committed_action
        ));
        for stat in &rec.root_action_stats {
            let mark = if stat.action == rec.committed_action {
                '*'
            } else {
                ' '
            };
            s.push_str(&format!(
                "  {mark} N={:<5} Q={:.4}  {}\n",
                stat.n, stat.q, stat.action
            ));
        }
    }
    emit(out, &s)
}

pub fn cmd_synth(
    dir: &Path,
    params: &SuiteParams,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let suite = generate_synthetic_suite(params, seed);
    let mut graph_buf = Vec::new();
    suite.graph.write_jsonl(&mut graph_buf).map_err(input)?;
    write_file(&dir.join(SYNTH_GRAPH_FILE), &graph_buf)?;
    let mut data_buf = Vec::new();
    write_dataset(&suite.records, &mut data_buf).map_err(input)?;
    write_file(&dir.join(SYNTH_DATASET_FILE), &data_buf)?;
    emit(
        out,
        &format!(
            "nodes={} edges={} questions={}\n",
            suite.graph.node_count(),
            suite.graph.edge_count(),
            suite.records.len()
        ),
    )
}
