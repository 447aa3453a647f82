//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{describe_keys, Config};
use crate::corpus::{
    instance_stats, load_corpus, read_instances, reference_stats, write_instances, Instance, Ontology, Split,
};
use crate::evaluator::{score_with, ScoreOptions};
use crate::extractor::extract_all;
use crate::llm::{ChatProvider, ClientConfig, FixtureProvider, OpenAiCompatible, TemplateClient};
use crate::model::{build_vocab, GenBeeModel};
use crate::prompt::TemplateStore;
use crate::tokenizer::Vocab;
use crate::train::train;

#[derive(Debug, Parser)]
#[command(name = "genbee", version, about = "Structure-aware generative biomedical event extraction")]
pub struct Cli {
    /// Seed for every random choice (overrides train.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (overrides train.workers; also used for prediction).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print event, argument and structure counts for a corpus.
    Stats(StatsArgs),
    /// Elicit event templates from a chat model (or fixtures) into a template store.
    GenTemplates(GenTemplatesArgs),
    /// Build a vocabulary from corpora and prompt assets.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Extract events with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold (Trg-C / Arg-C micro-F1).
    Eval(EvalArgs),
    /// Check analytic gradients of a small model against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus file (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Ontology JSON; inferred from the corpus when absent.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Compare against published statistics for this dataset (mlee, ge11, phee).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Split for the comparison; inferred from the file name when absent.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenTemplatesArgs {
    /// Ontology JSON naming the event types and roles.
    #[arg(long)]
    pub ontology: PathBuf,
    /// Template store to write. Existing entries are kept unless --overwrite.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object of canned replies keyed by event type (no network).
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible chat-completions API.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Chat model name sent to the API.
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "GENBEE_API_KEY")]
    pub api_key_env: String,
    /// Response cache directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Serve only from the cache and fixtures.
    #[arg(long)]
    pub offline: bool,
    /// File with a custom instruction (`<T>` marks the event type).
    #[arg(long)]
    pub instruction: Option<PathBuf>,
    /// Replace templates already in the store.
    #[arg(long)]
    pub overwrite: bool,
    /// Requests per event type before giving up.
    #[arg(long, default_value_t = 3)]
    pub max_attempts: usize,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Corpus files whose contexts enter the vocabulary.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Ontology JSON.
    #[arg(long)]
    pub ontology: PathBuf,
    /// Template store JSON.
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config; the mlee-ge11 preset when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset used when no config file is given.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override a config key, e.g. --set train.epochs=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Training corpus (JSONL).
    #[arg(long)]
    pub train: PathBuf,
    /// Ontology JSON; inferred from the training corpus when absent.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Template store JSON.
    #[arg(long)]
    pub templates: PathBuf,
    /// Vocabulary JSON; built from the training corpus when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV to write.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input corpus (JSONL); gold events, if any, are ignored.
    #[arg(long)]
    pub input: PathBuf,
    /// Predictions in the corpus format.
    #[arg(long)]
    pub out: PathBuf,
    /// Beam size; 1 is greedy. Defaults to greedy.
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold corpus (JSONL).
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted corpus (JSONL).
    #[arg(long)]
    pub pred: PathBuf,
    /// Reject events whose type or roles are not in this ontology.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Match spans by head word instead of exact offsets.
    #[arg(long)]
    pub head_match: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Maximum acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn read_ontology(path: &Path) -> Result<Ontology> {
    Ontology::load(path).with_context(|| format!("loading ontology {}", path.display()))
}

fn read_raw(path: &Path) -> Result<Vec<Instance>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = read_instances(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    Ok(rows.into_iter().map(|(_, i)| i).collect())
}

fn read_corpus(path: &Path, ontology: Option<&Path>) -> Result<(Vec<Instance>, Ontology)> {
    match ontology {
        Some(o) => {
            let onto = read_ontology(o)?;
            let c = load_corpus(path, &onto).with_context(|| format!("loading {}", path.display()))?;
            Ok((c.instances, onto))
        }
        None => {
            let inst = read_raw(path)?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let onto = Ontology::infer(&id, &inst)?;
            Ok((inst, onto))
        }
    }
}

fn provider_for(args: &GenTemplatesArgs) -> Result<Option<Box<dyn ChatProvider>>> {
    if let Some(f) = &args.fixture {
        return Ok(Some(Box::new(FixtureProvider::load(f)?)));
    }
    if let Some(url) = &args.base_url {
        let mut p = OpenAiCompatible::new(url.clone(), args.model.clone(), args.api_key_env.clone());
        p.timeout = Duration::from_secs(180);
        return Ok(Some(Box::new(p)));
    }
    Ok(None)
}

fn stats(args: StatsArgs, out: &mut dyn Write) -> Result<()> {
    let (inst, _) = read_corpus(&args.data, args.ontology.as_deref())?;
    let s = instance_stats(&inst);
    writeln!(out, "{:<26} {:>8}", "instances", s.n_instances)?;
    writeln!(out, "{:<26} {:>8}", "events", s.n_events)?;
    writeln!(out, "{:<26} {:>8}", "arguments", s.n_arguments)?;
    writeln!(out, "{:<26} {:>8}", "nested events", s.n_nested)?;
    writeln!(out, "{:<26} {:>8}", "overlapping events", s.n_overlapping)?;
    writeln!(out, "{:<26} {:>8}", "nested or overlapping", s.n_nested_or_overlapping)?;
    if let Some(ds) = &args.dataset {
        let split = match &args.split {
            Some(s) => match s.to_lowercase().as_str() {
                "train" => Split::Train,
                "dev" => Split::Dev,
                "test" => Split::Test,
                other => bail!("unknown split `{other}`"),
            },
            None => Split::from_path(&args.data).unwrap_or(Split::Train),
        };
        let Some(r) = reference_stats(ds, split) else {
            bail!("no published statistics for {ds} {split}");
        };
        writeln!(out)?;
        writeln!(out, "published {ds} {split}:        ours  published  status")?;
        let mut line = |name: &str, ours: usize, theirs: usize, asserted: bool| -> std::io::Result<()> {
            let status = match (ours == theirs, asserted) {
                (true, _) => "match".to_string(),
                (false, true) => "MISMATCH".to_string(),
                (false, false) => format!("differs by {} (detection rule is undocumented)", ours as i64 - theirs as i64),
            };
            writeln!(out, "  {name:<24} {ours:>6} {theirs:>10}  {status}")
        };
        line("sentences", s.n_instances, r.sentences, false)?;
        line("events", s.n_events, r.events, true)?;
        line("arguments", s.n_arguments, r.arguments, true)?;
        line("nested or overlapping", s.n_nested_or_overlapping, r.nested_or_overlapping, false)?;
    }
    Ok(())
}

fn gen_templates(args: GenTemplatesArgs, out: &mut dyn Write) -> Result<()> {
    let onto = read_ontology(&args.ontology)?;
    let mut store = if args.out.exists() {
        TemplateStore::load(&args.out)?
    } else {
        TemplateStore::new(onto.id.clone())
    };
    let instruction = match &args.instruction {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let client = TemplateClient::new(
        provider_for(&args)?,
        ClientConfig {
            cache_dir: args.cache_dir.clone(),
            offline: args.offline,
            max_attempts: args.max_attempts,
            ..ClientConfig::default()
        },
    );
    let responses = client.populate_store(&onto, &mut store, instruction.as_deref().map(str::trim), args.overwrite)?;
    store.save(&args.out)?;
    for r in &responses {
        writeln!(out, "{:<24} {}{}", r.event_type, r.provider_id, if r.cached { " (cached)" } else { "" })?;
    }
    writeln!(out, "wrote {} templates to {}", store.templates.len(), args.out.display())?;
    Ok(())
}

fn build_vocab_cmd(args: BuildVocabArgs, out: &mut dyn Write) -> Result<()> {
    let onto = read_ontology(&args.ontology)?;
    let templates = TemplateStore::load(&args.templates)?;
    let mut contexts = Vec::new();
    for d in &args.data {
        contexts.extend(read_raw(d)?.into_iter().map(|i| i.context));
    }
    let min = args.min_count.unwrap_or(1);
    let vocab = build_vocab(contexts.iter().map(String::as_str), &onto, &templates, min);
    vocab.save(&args.out)?;
    writeln!(out, "wrote {} tokens to {}", vocab.len(), args.out.display())?;
    Ok(())
}

fn train_cmd(cli_seed: Option<u64>, threads: Option<usize>, args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(p), _) => Config::load(p)?,
        (None, Some(name)) => Config::preset(name)?,
        (None, None) => Config::preset("mlee-ge11")?,
    };
    cfg = cfg.with_overrides(args.overrides.iter().map(String::as_str))?;
    if let Some(s) = cli_seed {
        cfg.train.seed = s;
    }
    if let Some(t) = threads {
        cfg.train.workers = t.max(1);
    }
    let (instances, onto) = read_corpus(&args.train, args.ontology.as_deref())?;
    let templates = TemplateStore::load(&args.templates)?;
    let vocab = match &args.vocab {
        Some(p) => Vocab::load(p)?,
        None => build_vocab(instances.iter().map(|i| i.context.as_str()), &onto, &templates, cfg.vocab.min_count),
    };
    let mut model = GenBeeModel::new(cfg.model.clone(), vocab, onto, templates, cfg.train.seed)?;
    let quiet = args.quiet;
    let report = train(&mut model, &instances, &cfg.train, |e, l| {
        if !quiet {
            let _ = writeln!(out, "epoch {:>4}  loss {l:.6}", e + 1);
        }
    })?;
    let meta = serde_json::json!({
        "config": cfg,
        "steps": report.steps,
        "epoch_losses": report.epoch_losses.iter().map(|v| if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null }).collect::<Vec<_>>(),
    });
    model.save(&args.out, meta)?;
    if let Some(p) = &args.loss_curve {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    writeln!(out, "trained {} steps; checkpoint {}", report.steps, args.out.display())?;
    Ok(())
}

fn predict_cmd(threads: Option<usize>, args: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let (model, _) = GenBeeModel::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let inputs = read_raw(&args.input)?;
    let mode = crate::config::DecodeConfig { beam_size: args.beam }.mode();
    let preds = extract_all(&model, &inputs, mode, threads.unwrap_or(1))?;
    write_instances(&args.out, &preds)?;
    let n: usize = preds.iter().map(|p| p.events.len()).sum();
    writeln!(out, "wrote {n} events for {} instances to {}", preds.len(), args.out.display())?;
    Ok(())
}

fn eval_cmd(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (gold, pred) = match &args.ontology {
        Some(o) => {
            let onto = read_ontology(o)?;
            (load_corpus(&args.gold, &onto)?.instances, load_corpus(&args.pred, &onto)?.instances)
        }
        None => (read_raw(&args.gold)?, read_raw(&args.pred)?),
    };
    let report = score_with(&gold, &pred, ScoreOptions { head_match: args.head_match })?;
    write!(out, "{}", report.to_table())?;
    if let Some(p) = &args.json {
        std::fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn gradcheck_cmd(seed: u64, args: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let report = crate::diagnostics::model_grad_check(seed)?;
    writeln!(
        out,
        "checked {} coordinates; worst relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.coords_checked, report.max_rel_error, report.worst_param, report.worst_index, report.analytic, report.numeric
    )?;
    if report.max_rel_error >= args.tolerance {
        bail!("relative error {:.3e} exceeds tolerance {:.1e}", report.max_rel_error, args.tolerance);
    }
    Ok(())
}

/// The clap command, with the configuration keys appended to every help page.
pub fn command() -> clap::Command {
    let keys = describe_keys();
    let mut cmd = Cli::command().after_help(keys.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        let k = keys.clone();
        cmd = cmd.mut_subcommand(n, move |s| s.after_help(k));
    }
    cmd
}

/// Run the CLI on `argv` (including the program name), writing normal output to `out`.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::from_arg_matches(&command().try_get_matches_from(argv)?)?;
    match cli.command {
        Command::Stats(a) => stats(a, out),
        Command::GenTemplates(a) => gen_templates(a, out),
        Command::BuildVocab(a) => build_vocab_cmd(a, out),
        Command::Train(a) => train_cmd(cli.seed, cli.threads, a, out),
        Command::Predict(a) => predict_cmd(cli.threads, a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(cli.seed.unwrap_or(0), a, out),
    }
}
