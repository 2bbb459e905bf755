//! Black-box model provenance testing from the command line.
//!
//! Every command is reproducible: one master seed drives named random
//! substreams, and reports embed the effective configuration. Exit code 0
//! means the command ran to a verdict (a negative verdict is data, not a
//! failure); 2 is a configuration error; 3 is a backend error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use provtest::bench::{
    ablate_controls, evaluate, generate_zoo, AblationRow, BenchmarkSpec, EvalReport, TesterConfig,
    Zoo,
};
use provtest::modelio::{ModelHandle, QueryEngine};
use provtest::prompts::{rejection_sample, sample_uniform, PromptCorpus, RejectionConfig};
use provtest::seed::substream;
use provtest::tester::{
    identify_parent, identify_parent_bai, test_pair, CorpusSampler, SamplingMode, Verdict,
};

#[derive(Parser)]
#[command(
    name = "provtest",
    version,
    about = "Decide whether a model was derived from a candidate parent using only \
             first-output-token agreement statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a designated (parent, target) pair against control models.
    Pair(PairArgs),
    /// Identify the target's parent among a set of candidate models.
    Identify(IdentifyArgs),
    /// Synthetic benchmark harness.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Emit a sampled prompt list for audit.
    SamplePrompts(SamplePromptsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Master seed; fixes every random substream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Family-wise significance level, in (0, 1).
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Prompts per test (T; or T' under rejection sampling).
    #[arg(short = 'T', long = "prompts", default_value_t = 1000)]
    prompts: usize,
    /// Prompt corpus file, newline-delimited UTF-8.
    #[arg(long)]
    corpus: PathBuf,
    /// Persistent query cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Worker threads (default: available cores). Output does not depend
    /// on this value.
    #[arg(long)]
    workers: Option<usize>,
    /// Rejection sampling: candidates per selected prompt (1 = uniform).
    #[arg(long = "rejection-k", default_value_t = 1)]
    rejection_k: u32,
    /// Rejection sampling score temperature.
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
}

impl CommonArgs {
    fn rejection(&self) -> Option<RejectionConfig> {
        (self.rejection_k > 1).then_some(RejectionConfig { k: self.rejection_k, tau: self.tau })
    }

    fn engine(&self) -> anyhow::Result<QueryEngine> {
        Ok(match &self.cache {
            Some(dir) => QueryEngine::with_cache(dir.clone())?,
            None => QueryEngine::new(),
        })
    }

    fn load_corpus(&self) -> anyhow::Result<PromptCorpus> {
        PromptCorpus::from_path(&self.corpus)
            .with_context(|| format!("reading corpus {}", self.corpus.display()))
    }
}

#[derive(Args)]
struct PairArgs {
    /// Tested model id.
    #[arg(long)]
    g: String,
    /// Suspected parent model id.
    #[arg(long)]
    f: String,
    /// Control model ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    controls: Vec<String>,
    /// Model definitions file (models JSON or a generated zoo).
    #[arg(long)]
    models: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Tested model id.
    #[arg(long)]
    g: String,
    /// Candidate parent ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    candidates: Vec<String>,
    /// Control model ids, comma separated (may overlap candidates).
    #[arg(long, value_delimiter = ',', default_value = "")]
    controls: Vec<String>,
    /// Model definitions file (models JSON or a generated zoo).
    #[arg(long)]
    models: PathBuf,
    /// Use the best-arm-identification elimination tester.
    #[arg(long)]
    bai: bool,
    /// BAI budget: maximum average prompts per model (requires --bai).
    #[arg(long)]
    budget: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate a synthetic zoo, its ground truth, and a prompt corpus.
    Generate(BenchGenerateArgs),
    /// Evaluate the tester on every child of a generated zoo.
    Eval(BenchEvalArgs),
    /// Rerun the evaluation on random control subsets of varying size.
    Ablate(BenchAblateArgs),
}

#[derive(Args)]
struct BenchGenerateArgs {
    /// Benchmark spec file (JSON); defaults to the shipped benchmark.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for zoo.json, ground_truth.json, and corpus.txt.
    #[arg(long)]
    out_dir: PathBuf,
    /// Prompts to generate for the corpus.
    #[arg(long, default_value_t = 20_000)]
    corpus_size: usize,
    /// Master seed (used by the default spec; a spec file carries its own).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchEvalArgs {
    /// Generated zoo file (zoo.json).
    #[arg(long)]
    zoo: PathBuf,
    /// Use the best-arm-identification elimination tester.
    #[arg(long)]
    bai: bool,
    /// BAI budget: maximum average prompts per model (requires --bai).
    #[arg(long)]
    budget: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BenchAblateArgs {
    /// Generated zoo file (zoo.json).
    #[arg(long)]
    zoo: PathBuf,
    /// Control subset sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Random subsets evaluated per size.
    #[arg(long, default_value_t = 20)]
    trials: u32,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SamplePromptsArgs {
    /// Models file; required when --rejection-k > 1 (the sampler scores
    /// candidates by these models' outputs).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Write prompts here instead of stdout, one per line.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

/// Report wrapper for pair/identify runs, with the fixed field names
/// machine consumers rely on.
#[derive(Serialize)]
struct VerdictReport<'a> {
    command: &'a str,
    verdict: &'a str,
    positive: bool,
    parent_id: &'a Option<String>,
    family_alpha: f64,
    pvalues: &'a [provtest::stats::PValueRecord],
    similarities: &'a [provtest::tester::SimilarityStat],
    queries: &'a provtest::tester::QueryUsage,
    sampling: &'a SamplingMode,
    tester: &'a provtest::tester::TesterKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    bai: &'a Option<provtest::tester::BaiTrace>,
    config: ConfigEcho<'a>,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    seed: u64,
    alpha: f64,
    prompts: usize,
    corpus: String,
    cache: Option<String>,
    rejection: Option<RejectionConfig>,
    budget: Option<u64>,
    models: Option<String>,
    g: Option<&'a str>,
    f: Option<&'a str>,
    candidates: Option<&'a [String]>,
    controls: Option<&'a [String]>,
}

impl<'a> ConfigEcho<'a> {
    fn from_common(common: &CommonArgs) -> Self {
        ConfigEcho {
            seed: common.seed,
            alpha: common.alpha,
            prompts: common.prompts,
            corpus: common.corpus.display().to_string(),
            cache: common.cache.as_ref().map(|p| p.display().to_string()),
            rejection: common.rejection(),
            budget: None,
            models: None,
            g: None,
            f: None,
            candidates: None,
            controls: None,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for configuration problems, 3 for backend problems.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<provtest::Error>() {
            return match e {
                provtest::Error::BackendUnreachable { .. }
                | provtest::Error::MalformedResponse { .. }
                | provtest::Error::CacheMiss { .. }
                | provtest::Error::CacheCorrupt { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Pair(args) => in_pool(args.common.workers, || cmd_pair(&args)),
        Command::Identify(args) => in_pool(args.common.workers, || cmd_identify(&args)),
        Command::Bench(BenchCommand::Generate(args)) => cmd_bench_generate(&args),
        Command::Bench(BenchCommand::Eval(args)) => {
            in_pool(args.common.workers, || cmd_bench_eval(&args))
        }
        Command::Bench(BenchCommand::Ablate(args)) => {
            in_pool(args.common.workers, || cmd_bench_ablate(&args))
        }
        Command::SamplePrompts(args) => cmd_sample_prompts(&args),
    }
}

/// Runs a command inside a rayon pool of the requested size. The pool size
/// affects throughput only; outputs are identical for any worker count.
fn in_pool<T>(workers: Option<usize>, body: impl FnOnce() -> anyhow::Result<T> + Send) -> anyhow::Result<T>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    pool.install(body)
}

/// Loads model definitions from either a `{"models": [...]}` file or a
/// generated zoo file (bases and children both become addressable).
fn load_models(path: &Path) -> anyhow::Result<Vec<ModelHandle>> {
    #[derive(serde::Deserialize)]
    struct ModelsFile {
        models: Vec<ModelHandle>,
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading models file {}", path.display()))?;
    if let Ok(file) = serde_json::from_str::<ModelsFile>(&text) {
        return Ok(file.models);
    }
    if let Ok(zoo) = serde_json::from_str::<Zoo>(&text) {
        let mut models = zoo.bases;
        models.extend(zoo.children);
        return Ok(models);
    }
    bail!("{} is neither a models file nor a generated zoo", path.display());
}

fn resolve<'a>(models: &'a [ModelHandle], id: &str) -> anyhow::Result<&'a ModelHandle> {
    models
        .iter()
        .find(|m| m.id == id)
        .ok_or_else(|| anyhow!("unknown model id `{id}`"))
}

fn resolve_many(models: &[ModelHandle], ids: &[String]) -> anyhow::Result<Vec<ModelHandle>> {
    ids.iter()
        .filter(|id| !id.is_empty())
        .map(|id| resolve(models, id).cloned())
        .collect()
}

fn sample_prompts_for_test(
    engine: &QueryEngine,
    corpus: &PromptCorpus,
    common: &CommonArgs,
    reference_models: &[ModelHandle],
) -> anyhow::Result<Vec<String>> {
    let mut rng = substream(common.seed, "prompt-sampling");
    let prompts = match common.rejection() {
        Some(cfg) => rejection_sample(engine, corpus, common.prompts, cfg, reference_models, &mut rng)?,
        None => sample_uniform(corpus, common.prompts, &mut rng)?,
    };
    Ok(prompts)
}

fn apply_sampling_mode(verdict: &mut Verdict, common: &CommonArgs) {
    if let Some(cfg) = common.rejection() {
        verdict.sampling_mode = SamplingMode::Rejection { k: cfg.k, tau: cfg.tau };
    }
}

fn cmd_pair(args: &PairArgs) -> anyhow::Result<()> {
    let models = load_models(&args.models)?;
    let f = resolve(&models, &args.f)?;
    let g = resolve(&models, &args.g)?;
    let controls = resolve_many(&models, &args.controls)?;
    let engine = args.common.engine()?;
    let corpus = args.common.load_corpus()?;

    // The rejection sampler scores candidates over the comparison models
    // (the tested model is never consulted).
    let mut reference: Vec<ModelHandle> = vec![f.clone()];
    reference.extend(controls.iter().cloned());
    let prompts = sample_prompts_for_test(&engine, &corpus, &args.common, &reference)?;

    let mut verdict = test_pair(&engine, f, g, &controls, &prompts, args.common.alpha)?;
    apply_sampling_mode(&mut verdict, &args.common);

    let mut config = ConfigEcho::from_common(&args.common);
    config.models = Some(args.models.display().to_string());
    config.g = Some(&args.g);
    config.f = Some(&args.f);
    config.controls = Some(&args.controls);
    emit_verdict_report("pair", &verdict, config, args.common.report.as_deref())
}

fn cmd_identify(args: &IdentifyArgs) -> anyhow::Result<()> {
    if args.bai != args.budget.is_some() {
        bail!("--bai and --budget must be used together");
    }
    let models = load_models(&args.models)?;
    let g = resolve(&models, &args.g)?;
    let candidates = resolve_many(&models, &args.candidates)?;
    let controls = resolve_many(&models, &args.controls)?;
    let engine = args.common.engine()?;
    let corpus = args.common.load_corpus()?;

    let mut verdict = if let Some(budget) = args.budget {
        let rng = substream(args.common.seed, "bai-rounds");
        let mut source = CorpusSampler::new(&corpus, rng);
        identify_parent_bai(&engine, g, &candidates, &controls, &mut source, args.common.alpha, budget)?
    } else {
        let mut reference = candidates.clone();
        for c in &controls {
            if !reference.iter().any(|m| m.id == c.id) {
                reference.push(c.clone());
            }
        }
        let prompts = sample_prompts_for_test(&engine, &corpus, &args.common, &reference)?;
        identify_parent(&engine, g, &candidates, &controls, &prompts, args.common.alpha)?
    };
    apply_sampling_mode(&mut verdict, &args.common);

    let mut config = ConfigEcho::from_common(&args.common);
    config.models = Some(args.models.display().to_string());
    config.budget = args.budget;
    config.g = Some(&args.g);
    config.candidates = Some(&args.candidates);
    config.controls = Some(&args.controls);
    emit_verdict_report("identify", &verdict, config, args.common.report.as_deref())
}

fn emit_verdict_report(
    command: &str,
    verdict: &Verdict,
    config: ConfigEcho,
    report_path: Option<&Path>,
) -> anyhow::Result<()> {
    let report = VerdictReport {
        command,
        verdict: if verdict.positive { "positive" } else { "negative" },
        positive: verdict.positive,
        parent_id: &verdict.parent_id,
        family_alpha: verdict.family_alpha,
        pvalues: &verdict.pvalues,
        similarities: &verdict.stats,
        queries: &verdict.queries,
        sampling: &verdict.sampling_mode,
        tester: &verdict.tester_kind,
        bai: &verdict.bai,
        config,
    };
    write_report(&report, report_path)
}

fn cmd_bench_generate(args: &BenchGenerateArgs) -> anyhow::Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            serde_json::from_str::<BenchmarkSpec>(&text)
                .with_context(|| format!("parsing spec {}", path.display()))?
        }
        None => BenchmarkSpec::shipped(args.seed),
    };
    let zoo = generate_zoo(&spec)?;
    let corpus = zoo.default_corpus(args.corpus_size);

    std::fs::create_dir_all(&args.out_dir)?;
    let zoo_path = args.out_dir.join("zoo.json");
    let truth_path = args.out_dir.join("ground_truth.json");
    let corpus_path = args.out_dir.join("corpus.txt");
    write_json_file(&zoo_path, &zoo)?;
    write_json_file(&truth_path, &zoo.truth)?;
    corpus.write_to(&corpus_path)?;

    #[derive(Serialize)]
    struct GenerateReport {
        command: &'static str,
        zoo: String,
        ground_truth: String,
        corpus: String,
        bases: usize,
        children: usize,
        derived: usize,
        independent: usize,
        corpus_size: usize,
        master_seed: u64,
    }
    let report = GenerateReport {
        command: "bench-generate",
        zoo: zoo_path.display().to_string(),
        ground_truth: truth_path.display().to_string(),
        corpus: corpus_path.display().to_string(),
        bases: zoo.bases.len(),
        children: zoo.children.len(),
        derived: zoo.truth.iter().filter(|t| t.parent_id.is_some()).count(),
        independent: zoo.truth.iter().filter(|t| t.parent_id.is_none()).count(),
        corpus_size: corpus.len(),
        master_seed: zoo.spec.master_seed,
    };
    write_report(&report, args.report.as_deref())
}

fn load_zoo(path: &Path) -> anyhow::Result<Zoo> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading zoo {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing zoo {}", path.display()))
}

fn tester_config(common: &CommonArgs, bai: bool, budget: Option<u64>) -> anyhow::Result<TesterConfig> {
    if bai != budget.is_some() {
        bail!("--bai and --budget must be used together");
    }
    Ok(TesterConfig {
        prompt_count: common.prompts,
        alpha: common.alpha,
        rejection: common.rejection(),
        bai_budget: budget,
        seed: common.seed,
    })
}

fn cmd_bench_eval(args: &BenchEvalArgs) -> anyhow::Result<()> {
    let zoo = load_zoo(&args.zoo)?;
    let corpus = args.common.load_corpus()?;
    let engine = args.common.engine()?;
    let config = tester_config(&args.common, args.bai, args.budget)?;
    let report = evaluate(&engine, &zoo, &corpus, &config)?;

    #[derive(Serialize)]
    struct EvalReportDoc<'a> {
        command: &'static str,
        zoo: String,
        #[serde(flatten)]
        report: &'a EvalReport,
    }
    let doc = EvalReportDoc {
        command: "bench-eval",
        zoo: args.zoo.display().to_string(),
        report: &report,
    };
    write_report(&doc, args.common.report.as_deref())
}

fn cmd_bench_ablate(args: &BenchAblateArgs) -> anyhow::Result<()> {
    if args.sizes.is_empty() {
        bail!("--sizes must list at least one subset size");
    }
    let zoo = load_zoo(&args.zoo)?;
    let corpus = args.common.load_corpus()?;
    let engine = args.common.engine()?;
    let config = tester_config(&args.common, false, None)?;
    let rows = ablate_controls(&engine, &zoo, &corpus, &args.sizes, args.trials, &config)?;

    #[derive(Serialize)]
    struct AblateReport<'a> {
        command: &'static str,
        zoo: String,
        prompts: usize,
        alpha: f64,
        seed: u64,
        trials: u32,
        rows: &'a [AblationRow],
    }
    let doc = AblateReport {
        command: "bench-ablate",
        zoo: args.zoo.display().to_string(),
        prompts: args.common.prompts,
        alpha: args.common.alpha,
        seed: args.common.seed,
        trials: args.trials,
        rows: &rows,
    };
    write_report(&doc, args.common.report.as_deref())
}

fn cmd_sample_prompts(args: &SamplePromptsArgs) -> anyhow::Result<()> {
    let corpus = args.common.load_corpus()?;
    let prompts = match args.common.rejection() {
        Some(cfg) => {
            let models_path = args
                .models
                .as_ref()
                .ok_or_else(|| anyhow!("--rejection-k > 1 requires --models"))?;
            let models = load_models(models_path)?;
            let engine = args.common.engine()?;
            let mut rng = substream(args.common.seed, "prompt-sampling");
            rejection_sample(&engine, &corpus, args.common.prompts, cfg, &models, &mut rng)?
        }
        None => {
            let mut rng = substream(args.common.seed, "prompt-sampling");
            sample_uniform(&corpus, args.common.prompts, &mut rng)?
        }
    };
    let mut out = String::new();
    for p in &prompts {
        out.push_str(p);
        out.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_report<T: Serialize>(report: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match path {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing report {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}
