//! Command-line front end.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use qsearch_core::fixtures::e1_gallery;
use qsearch_core::gallery::{load_gallery, save_gallery};
use qsearch_core::online::{
    online_search, synthesize_stream, DescriptionFile, FrameStream, PoiDescription,
};
use qsearch_core::ordering::{
    baseline_order, check_submodularity, BaselineMode, Objective, SequenceFile,
};
use qsearch_core::query::{truthful_queries, QueryFile};
use qsearch_core::session::{simulate_session, sweep_budgets, sweep_to_csv};
use qsearch_core::synth::{heterogeneous_gallery_config, random_instance, InstanceParams};
use qsearch_core::{
    generate_gallery, ConstraintSet, FacetSchema, Gallery, GalleryConfig, Identity, QuestionId,
    ScorerSpec, Session, SessionConfig, TiePolicy, VERSION,
};

use crate::api::{self, AppState};

pub const ENTROPY_UNITS: &str = "entropy in nats (log base e)";

#[derive(Debug, Parser)]
#[command(
    name = "qsearch",
    version,
    about = "Interactive attribute-question person retrieval"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = ScorerArg::Ideal)]
    pub scorer: ScorerArg,
    /// Noise level of the noisy scorer, in (0, 0.5). Defaults to 0.1.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = TieArg::Expected)]
    pub tie: TieArg,
    #[arg(long = "log-base", global = true, value_enum, default_value_t = LogBase::E)]
    pub log_base: LogBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerArg {
    Ideal,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TieArg {
    Expected,
    Optimistic,
    Pessimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Fixture {
    E1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleArg {
    Greedy,
    Brute,
    Random,
    Fixed,
}

impl CommonArgs {
    pub fn scorer_spec(&self) -> anyhow::Result<ScorerSpec> {
        let spec = match (self.scorer, self.epsilon) {
            (ScorerArg::Ideal, None) => ScorerSpec::ideal(),
            (ScorerArg::Ideal, Some(_)) => bail!("--epsilon only applies to --scorer noisy"),
            (ScorerArg::Noisy, eps) => ScorerSpec::noisy(eps.unwrap_or(0.1)),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tie_policy(&self) -> TiePolicy {
        match self.tie {
            TieArg::Expected => TiePolicy::Expected,
            TieArg::Optimistic => TiePolicy::Optimistic,
            TieArg::Pessimistic => TiePolicy::Pessimistic,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic gallery plus optional queries, stream and descriptions.
    Gen(GenArgs),
    /// Order questions greedily, exhaustively, randomly or in id order.
    Order(OrderArgs),
    /// Simulate sessions over a list of entropy budgets.
    Sweep(SweepArgs),
    /// Run one session, simulated or answered on stdin.
    Session(SessionArgs),
    /// Match descriptions against a stream of detections.
    Online(OnlineArgs),
    /// Check submodularity and monotonicity of the mean-rank objective.
    Check(CheckArgs),
    /// Serve the JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["n", "fixture"])))]
pub struct GenArgs {
    /// Number of images.
    #[arg(long, requires = "identities")]
    pub n: Option<usize>,
    #[arg(long)]
    pub identities: Option<usize>,
    /// Skew of facet value distributions; 0 means uniform.
    #[arg(long, default_value_t = 0.0)]
    pub skew: f64,
    #[arg(long, value_enum, conflicts_with_all = ["n", "identities"])]
    pub fixture: Option<Fixture>,
    #[arg(long)]
    pub out: PathBuf,
    /// Truthful queries for every identity.
    #[arg(long)]
    pub queries_out: Option<PathBuf>,
    /// Detection stream spreading the gallery over `--frames` frames.
    #[arg(long, requires = "frames")]
    pub stream_out: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<u64>,
    /// Full truthful description of every identity.
    #[arg(long)]
    pub descriptions_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct OrderArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    /// Queries used to fit the order.
    #[arg(long)]
    pub queries: PathBuf,
    /// Held-out queries on which the chosen order is re-evaluated.
    #[arg(long)]
    pub eval_queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OracleArg::Greedy)]
    pub oracle: OracleArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("question_order").args(["sequence", "order"])))]
pub struct OrderSource {
    /// Sequence file written by `order`.
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// Comma-separated question ids. Defaults to id order.
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<QuestionId>>,
}

impl OrderSource {
    fn resolve(&self, schema: &FacetSchema) -> anyhow::Result<Vec<QuestionId>> {
        if let Some(path) = &self.sequence {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(SequenceFile::from_json(&text)?.order);
        }
        Ok(self.order.clone().unwrap_or_else(|| schema.question_ids()))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    #[command(flatten)]
    pub order: OrderSource,
    /// Comma-separated target identities. Defaults to every identity.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<Identity>>,
    /// Comma-separated entropy budgets in nats.
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<f64>,
    /// Probability that a simulated answer names a wrong value.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["interactive", "simulate"])))]
pub struct SessionArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub interactive: bool,
    #[arg(long, requires = "target")]
    pub simulate: bool,
    #[command(flatten)]
    pub order: OrderSource,
    /// Entropy budget in nats.
    #[arg(long, default_value_t = 0.0)]
    pub budget: f64,
    /// Candidates shown after each answer.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Identity the simulated user describes.
    #[arg(long)]
    pub target: Option<Identity>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Transcript destination (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct OnlineArgs {
    /// Gallery file supplying the facet schema.
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub descriptions: PathBuf,
    #[arg(long, default_value_t = qsearch_core::online::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_delimiter = ',', default_values_t = qsearch_core::online::DEFAULT_K_LIST)]
    pub k_list: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("input").required(true).args(["gallery", "instances"])))]
pub struct CheckArgs {
    #[arg(long, required = true)]
    pub submodularity: bool,
    #[arg(long, requires = "queries")]
    pub gallery: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Number of random instances to check instead of one gallery.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Chains sampled per instance.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Where transcripts are written on shutdown.
    #[arg(long)]
    pub transcript_dir: Option<PathBuf>,
    /// Gallery registered as `g1` at startup.
    #[arg(long)]
    pub gallery: Option<PathBuf>,
}

/// Writes `text` to `out` and the run's resolved config to `<out>.meta.json`.
fn write_output(out: &Path, text: &str, cli: &Cli) -> anyhow::Result<()> {
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    let meta = json!({
        "version": VERSION,
        "seed": cli.common.seed,
        "units": ENTROPY_UNITS,
        "common": cli.common,
        "command": cli.command,
    });
    let mut meta_text = serde_json::to_string_pretty(&meta)?;
    meta_text.push('\n');
    let meta_path = PathBuf::from(format!("{}.meta.json", out.display()));
    fs::write(&meta_path, meta_text).with_context(|| format!("writing {}", meta_path.display()))?;
    Ok(())
}

fn read_gallery(path: &Path) -> anyhow::Result<Gallery> {
    load_gallery(path).with_context(|| format!("loading gallery {}", path.display()))
}

fn read_queries(path: &Path, gallery: &Gallery) -> anyhow::Result<Vec<qsearch_core::Query>> {
    let file =
        QueryFile::load(path).with_context(|| format!("loading queries {}", path.display()))?;
    for q in &file.queries {
        q.validate(gallery)?;
    }
    Ok(file.queries)
}

fn all_identities(gallery: &Gallery) -> Vec<Identity> {
    (1..=gallery.num_identities()).collect()
}

/// Runs a parsed command. `input` feeds interactive sessions.
pub fn run(cli: &Cli, input: &mut dyn BufRead, output: &mut dyn Write) -> anyhow::Result<()> {
    let seed = cli.common.seed;
    cli.common.scorer_spec()?;
    match &cli.command {
        Command::Gen(args) => {
            let gallery = match args.fixture {
                Some(Fixture::E1) => e1_gallery(),
                None => {
                    let n = args.n.expect("clap enforces the source group");
                    let k = args.identities.expect("clap enforces --identities");
                    let config = if args.skew > 0.0 {
                        heterogeneous_gallery_config(n, k, args.skew, seed)
                    } else {
                        GalleryConfig::uniform(n, k, FacetSchema::default_schema())
                    };
                    generate_gallery(&config, seed)?
                }
            };
            save_gallery(&gallery, &args.out)?;
            write_output(&args.out, &fs::read_to_string(&args.out)?, cli)?;
            if let Some(path) = &args.queries_out {
                let queries = truthful_queries(&gallery, &all_identities(&gallery))?;
                let mut text = serde_json::to_string_pretty(&QueryFile::new(seed, queries))?;
                text.push('\n');
                write_output(path, &text, cli)?;
            }
            if let Some(path) = &args.stream_out {
                let frames = args.frames.expect("clap enforces --frames");
                let stream = synthesize_stream(&gallery, frames, seed)?;
                write_output(path, &stream.to_jsonl(), cli)?;
            }
            if let Some(path) = &args.descriptions_out {
                let questions = gallery.schema.question_ids();
                let descriptions = truthful_queries(&gallery, &all_identities(&gallery))?
                    .into_iter()
                    .map(|q| {
                        Ok(PoiDescription {
                            poi_id: q.target,
                            target: q.target,
                            constraints: q.description(&questions)?,
                        })
                    })
                    .collect::<qsearch_core::Result<Vec<_>>>()?;
                let mut text =
                    serde_json::to_string_pretty(&DescriptionFile::new(seed, descriptions))?;
                text.push('\n');
                write_output(path, &text, cli)?;
            }
            writeln!(
                output,
                "gallery: {} images, {} identities -> {}",
                gallery.n(),
                gallery.num_identities(),
                args.out.display()
            )?;
        }
        Command::Order(args) => {
            let gallery = read_gallery(&args.gallery)?;
            let queries = read_queries(&args.queries, &gallery)?;
            let scorer = cli.common.scorer_spec()?;
            let tie = cli.common.tie_policy();
            let objective = Objective::new(&gallery, &queries, scorer, tie)?;
            let n_q = gallery.schema.num_questions();
            let seq = match args.oracle {
                OracleArg::Greedy => objective.greedy()?,
                OracleArg::Brute => objective.best_sequence()?,
                OracleArg::Random | OracleArg::Fixed => {
                    let mode = if args.oracle == OracleArg::Random {
                        BaselineMode::Random
                    } else {
                        BaselineMode::Fixed
                    };
                    let order = baseline_order(n_q, mode, seed)?;
                    qsearch_core::QuestionSequence {
                        mean_rank_curve: objective.curve(&order)?,
                        order,
                    }
                }
            };
            let mut file = SequenceFile::new(&seq, gallery.n(), tie, scorer, seed);
            if let Some(path) = &args.eval_queries {
                let eval = read_queries(path, &gallery)?;
                file.eval_mean_rank_curve =
                    Some(Objective::new(&gallery, &eval, scorer, tie)?.curve(&seq.order)?);
            }
            write_output(&args.out, &file.to_json(), cli)?;
            writeln!(output, "order: {:?}", file.order)?;
            writeln!(output, "mean rank curve: {:?}", file.mean_rank_curve)?;
            writeln!(output, "final R: {}", file.final_r)?;
        }
        Command::Sweep(args) => {
            let gallery = Arc::new(read_gallery(&args.gallery)?);
            let order = args.order.resolve(&gallery.schema)?;
            let mut config = SessionConfig::new(cli.common.scorer_spec()?, order, 0.0);
            config.tie_policy = cli.common.tie_policy();
            let targets = args
                .targets
                .clone()
                .unwrap_or_else(|| all_identities(&gallery));
            let rows = sweep_budgets(&gallery, &config, &targets, &args.budgets, args.noise, seed)?;
            write_output(&args.out, &sweep_to_csv(&rows), cli)?;
            writeln!(output, "# budgets: {ENTROPY_UNITS}")?;
            writeln!(output, "{}", sweep_to_csv(&rows).trim_end())?;
        }
        Command::Session(args) => {
            let gallery = Arc::new(read_gallery(&args.gallery)?);
            let config = SessionConfig {
                scorer: cli.common.scorer_spec()?,
                order: args.order.resolve(&gallery.schema)?,
                budget: args.budget,
                k_display: args.k,
                tie_policy: cli.common.tie_policy(),
            };
            writeln!(output, "# {ENTROPY_UNITS}")?;
            let transcript = if args.simulate {
                let target = args.target.expect("clap enforces --target");
                let sim = simulate_session(&gallery, &config, target, args.noise, seed)?;
                writeln!(output, "entropy trace: {:?}", sim.entropy_trace)?;
                writeln!(
                    output,
                    "questions asked: {}, stop: {}, final rank: {}",
                    sim.transcript.questions_asked(),
                    sim.transcript.stop_reason().map_or("none", |r| r.as_str()),
                    sim.final_rank.rank
                )?;
                sim.transcript
            } else {
                interactive_session(Arc::clone(&gallery), config, args.target, input, output)?
            };
            if let Some(out) = &args.out {
                write_output(out, &transcript.to_jsonl(), cli)?;
            }
        }
        Command::Online(args) => {
            let gallery = read_gallery(&args.gallery)?;
            let stream = FrameStream::load(&args.stream)?;
            let descriptions = DescriptionFile::load(&args.descriptions)?.descriptions;
            let report = online_search(
                &stream,
                &gallery.schema,
                &descriptions,
                &cli.common.scorer_spec()?,
                args.threshold,
                &args.k_list,
            )?;
            write_output(&args.out, &report.to_csv(), cli)?;
            writeln!(output, "frame,{}", k_header(&args.k_list))?;
            for (frame, counts) in report.counts_per_frame() {
                let counts: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
                writeln!(output, "{frame},{}", counts.join(","))?;
            }
        }
        Command::Check(args) => {
            let scorer = cli.common.scorer_spec()?;
            let tie = cli.common.tie_policy();
            let mut violations = Vec::new();
            let mut instances = 0usize;
            if let Some(count) = args.instances {
                let mut seeder = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..count {
                    let inst = random_instance(&InstanceParams::default(), seeder.gen())?;
                    violations.extend(check_submodularity(
                        &inst.gallery,
                        &inst.queries,
                        &scorer,
                        tie,
                        args.trials,
                        seeder.gen(),
                    )?);
                }
                instances = count;
            } else if let (Some(g), Some(q)) = (&args.gallery, &args.queries) {
                let gallery = read_gallery(g)?;
                let queries = read_queries(q, &gallery)?;
                violations =
                    check_submodularity(&gallery, &queries, &scorer, tie, args.trials, seed)?;
                instances = 1;
            }
            let report = json!({
                "version": VERSION,
                "seed": seed,
                "scorer": scorer,
                "tie_policy": tie,
                "instances": instances,
                "trials_per_instance": args.trials,
                "violation_count": violations.len(),
                "violations": violations,
            });
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            write_output(&args.out, &text, cli)?;
            writeln!(
                output,
                "{} chains over {instances} instances, {} violations",
                instances * args.trials,
                violations.len()
            )?;
        }
        Command::Serve(args) => {
            let state = AppState::new();
            if let Some(path) = &args.gallery {
                let id = state.add_gallery(read_gallery(path)?);
                writeln!(output, "registered {} as {id}", path.display())?;
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(api::serve(args.port, state, args.transcript_dir.as_deref()))?;
        }
    }
    Ok(())
}

fn k_header(k_list: &[usize]) -> String {
    k_list
        .iter()
        .map(|k| format!("top{k}_count"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses one answer line: whitespace-separated `facet=value[,value...]`
/// pairs, facets named by id or name. A blank line constrains nothing.
pub fn parse_answer_line(
    line: &str,
    schema: &FacetSchema,
    question: QuestionId,
) -> anyhow::Result<ConstraintSet> {
    let allowed = &schema.question(question)?.facets;
    let mut constraints = ConstraintSet::new();
    for pair in line.split_whitespace() {
        let (facet, values) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected facet=value, got {pair:?}"))?;
        let facet = schema
            .facets
            .iter()
            .find(|f| f.name == facet || f.id.to_string() == facet)
            .ok_or_else(|| anyhow!("unknown facet {facet:?}"))?;
        if !allowed.contains(&facet.id) {
            bail!(
                "facet {:?} does not belong to question {question}",
                facet.name
            );
        }
        let values: Vec<String> = values.split(',').map(str::to_string).collect();
        constraints.insert(facet.id, values);
    }
    constraints.validate(schema)?;
    Ok(constraints)
}

fn interactive_session(
    gallery: Arc<Gallery>,
    config: SessionConfig,
    target: Option<Identity>,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> anyhow::Result<qsearch_core::Transcript> {
    let mut session = Session::start(Arc::clone(&gallery), config, target)?;
    writeln!(
        output,
        "answer with facet=value pairs; blank for unknown; 'quit' to stop"
    )?;
    while let Some(question) = session.pending_question() {
        let q = gallery.schema.question(question)?;
        writeln!(output, "Q{}: {}", q.id, q.prompt)?;
        for facet in q.facets.iter().filter_map(|f| gallery.schema.facet(*f)) {
            writeln!(output, "  {}: {}", facet.name, facet.domain.join(" | "))?;
        }
        output.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 || line.trim() == "quit" {
            session.abort()?;
            break;
        }
        let answer = match parse_answer_line(line.trim(), &gallery.schema, question) {
            Ok(answer) => answer,
            Err(e) => {
                writeln!(output, "  invalid answer: {e}")?;
                continue;
            }
        };
        let step = session.submit_answer(answer)?;
        writeln!(output, "entropy: {:.6}", step.entropy)?;
        for (rank, (image, score)) in step.topk.iter().enumerate() {
            writeln!(output, "  {:>3}. image {image} score {score:.4}", rank + 1)?;
        }
    }
    writeln!(
        output,
        "stopped: {}",
        session.stop_reason().map_or("none", |r| r.as_str())
    )?;
    Ok(session.transcript())
}
