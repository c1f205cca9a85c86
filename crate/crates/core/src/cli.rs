//! Command-line front end. The `stance` binary only forwards to [`main_with_args`].
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aliasdata::{build_dataset, load_graph, read_eval, read_triples, DatasetConfig};
use crate::checkpoint;
use crate::classic::ClassicMetric;
use crate::coref::{b_cubed, default_grid, format_clustering, hac_average, read_gold, read_mentions, tune_threshold, ScoreMatrix};
use crate::diffmath::{grad_check, DiffError, Tape, Tensor};
use crate::encoder::build_vocab;
use crate::evalrank::{evaluate, rank_query, PairScorer};
use crate::otalign::{cost_from_similarity, sinkhorn, uniform_marginals};
use crate::scorer::{forward, trace, ModelConfig, ModelParams, ScoreVariant};
use crate::training::{bpr_loss_on_tape, train, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "stance", version, about = "Learned string similarity for alias detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an alias TSV by entity and write training triples and eval sets
    BuildDataset(BuildDatasetArgs),
    /// Train a model on a triples file
    Train(TrainArgs),
    /// Rank every eval query's candidates and report MAP and Hits@K
    Eval(EvalArgs),
    /// Score mention pairs, one value per line
    Score(ScoreArgs),
    /// Rank candidates for one query
    Rank(RankArgs),
    /// Cluster mentions by average-linkage HAC
    Cluster(ClusterArgs),
    /// Compare analytic and finite-difference gradients of the full pipeline
    Gradcheck(GradcheckArgs),
    /// Write the similarity, transport and reweighted matrices of a pair as CSV
    DumpMatrices(DumpArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// `entity_id \t mention [\t weight]` file
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// train,dev,test entity fractions
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub splits: String,
    /// per-type cap on evaluation negatives
    #[arg(long, default_value_t = 1000)]
    pub neg_budget: usize,
    #[arg(long, default_value_t = 100)]
    pub train_neg_budget: usize,
    #[arg(long, default_value_t = 300)]
    pub dev_queries: usize,
    #[arg(long, default_value_t = 4000)]
    pub test_queries: usize,
    #[arg(long, default_value_t = 20_000)]
    pub triples: usize,
}

/// Selects a learned variant or a classic baseline.
#[derive(Debug, Args, Clone)]
pub struct ScorerArgs {
    /// stance, without-ot, cnn-linear, lstm-binary, lstm-dot, lev, jw, lcs or sdx
    #[arg(long, default_value = "stance")]
    pub scorer: String,
    /// required for learned scorers
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `q \t p \t n` file
    #[arg(long)]
    pub train: PathBuf,
    /// eval file used to pick the best epoch
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// epoch log; defaults to the checkpoint path with `.log` appended
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = "stance")]
    pub scorer: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    /// wall-clock budget in seconds
    #[arg(long)]
    pub time_limit: Option<u64>,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value = "16,16,16")]
    pub channels: String,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// `query \t candidate \t label \t neg_type` file
    #[arg(long)]
    pub data: PathBuf,
    /// metric TSV; stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// per-query JSON lines
    #[arg(long)]
    pub per_query: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// file of `a \t b` lines
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// a single pair
    #[arg(num_args = 0..=2)]
    pub pair: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub query: String,
    /// one candidate per line
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// `id \t mention` lines, or one mention per line
    #[arg(long)]
    pub mentions: PathBuf,
    /// `mention_id \t entity_id`; adds B³ to the report
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// tune the threshold on these mentions and gold instead
    #[arg(long, requires = "dev_gold")]
    pub dev_mentions: Option<PathBuf>,
    #[arg(long, requires = "dev_mentions")]
    pub dev_gold: Option<PathBuf>,
    /// predicted `mention_id \t cluster_id`; stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// check this model instead of a fresh tiny one
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "stance")]
    pub scorer: String,
    #[arg(long, default_value_t = 16)]
    pub max_len: usize,
    /// encoding width d (twice the LSTM hidden size)
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "Paul Lieberstein")]
    pub query: String,
    #[arg(long, default_value = "Lieberstein, Paul")]
    pub positive: String,
    #[arg(long, default_value = "Paula Steiner")]
    pub negative: String,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::Diff(DiffError::NonFinite { .. }) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::BuildDataset(a) => cmd_build_dataset(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Rank(a) => cmd_rank(&a),
        Command::Cluster(a) => cmd_cluster(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::DumpMatrices(a) => cmd_dump_matrices(&a),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',').map(|x| x.trim().parse().map_err(|_| usage(format!("bad {what} {s:?}")))).collect()
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e).into()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e).into())
        }
    }
}

/// A learned model or a classic metric behind one interface.
pub enum Scorer {
    Model(Box<ModelParams>),
    Classic(ClassicMetric),
}

impl PairScorer for Scorer {
    fn pair_score(&self, a: &str, b: &str) -> Result<f64> {
        match self {
            Scorer::Model(p) => p.pair_score(a, b),
            Scorer::Classic(m) => m.pair_score(a, b),
        }
    }
}

fn load_scorer(args: &ScorerArgs) -> CliResult<Scorer> {
    if let Ok(m) = args.scorer.parse::<ClassicMetric>() {
        return Ok(Scorer::Classic(m));
    }
    let variant: ScoreVariant = args.scorer.parse().map_err(|_| usage(format!("unknown scorer {:?}", args.scorer)))?;
    let path = args.checkpoint.as_ref().ok_or_else(|| usage(format!("--scorer {variant} needs --checkpoint")))?;
    let params = checkpoint::load(path)?;
    if params.variant != variant {
        return Err(Error::Checkpoint {
            version: "STNC1",
            msg: format!("checkpoint holds a {} model, not {variant}", params.variant),
        }
        .into());
    }
    Ok(Scorer::Model(Box::new(params)))
}

fn cmd_build_dataset(a: &BuildDatasetArgs) -> CliResult<()> {
    let ratios: Vec<f64> = parse_list(&a.splits, "--splits")?;
    let ratios: [f64; 3] = ratios.try_into().map_err(|_| usage("--splits needs three fractions"))?;
    let graph = load_graph(&a.input)?;
    let cfg = DatasetConfig {
        ratios,
        neg_budget: a.neg_budget,
        train_neg_budget: a.train_neg_budget,
        dev_queries: a.dev_queries,
        test_queries: a.test_queries,
        train_triples: a.triples,
        seed: a.seed,
    };
    let data = build_dataset(&graph, &cfg)?;
    data.write(&a.out_dir)?;
    print!("{}", data.stats_report());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let variant: ScoreVariant = a.scorer.parse().map_err(|_| usage(format!("--scorer {:?} is not trainable", a.scorer)))?;
    let channels: Vec<usize> = parse_list(&a.channels, "--channels")?;
    let channels: [usize; 3] = channels.try_into().map_err(|_| usage("--channels needs three counts"))?;
    let triples = read_triples(&a.train)?;
    let dev = a.dev.as_deref().map(read_eval).transpose()?;
    let vocab = build_vocab(triples.iter().flat_map(|t| [t.q.as_str(), t.p.as_str(), t.n.as_str()]), 1)?;
    let cfg = ModelConfig {
        max_len: a.max_len,
        embed_dim: a.embed_dim,
        hidden: a.hidden,
        channels,
        lambda: a.lambda,
        sinkhorn_iters: a.iters,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(cfg, variant, vocab, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let tc = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        clip_norm: a.clip,
        seed: a.seed,
        time_limit: a.time_limit.map(Duration::from_secs),
        ..TrainConfig::default()
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        p.into()
    });
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let header = "epoch\tmean_loss\tdev_map\twall_seconds";
    println!("{header}");
    writeln!(log, "{header}").map_err(|e| Error::io(&log_path, e))?;
    let mut io_err = None;
    let out = train(&triples, dev.as_deref(), &tc, params, &mut |e| {
        println!("{}", e.tsv_line());
        if let Err(err) = writeln!(log, "{}", e.tsv_line()) {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e).into());
    }
    checkpoint::save(&out.params, &a.out)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let scorer = load_scorer(&a.scorer)?;
    let queries = read_eval(&a.data)?;
    let report = evaluate(&scorer, &queries)?;
    write_out(a.out.as_deref(), &report.to_tsv())?;
    if let Some(p) = &a.per_query {
        std::fs::write(p, report.to_jsonl()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> CliResult<()> {
    let scorer = load_scorer(&a.scorer)?;
    let pairs: Vec<(String, String)> = match (&a.pairs, a.pair.as_slice()) {
        (Some(p), []) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.is_empty())
                .map(|(i, l)| {
                    l.split_once('\t').map(|(x, y)| (x.to_string(), y.to_string())).ok_or_else(|| {
                        CliError::Run(Error::Parse { path: p.display().to_string(), line: i + 1, msg: "expected a \\t b".into() })
                    })
                })
                .collect::<CliResult<_>>()?
        }
        (None, [x, y]) => vec![(x.clone(), y.clone())],
        _ => return Err(usage("give either --pairs FILE or exactly two mentions")),
    };
    let mut out = String::new();
    for (x, y) in pairs {
        writeln!(out, "{}", scorer.pair_score(&x, &y)?).unwrap();
    }
    write_out(None, &out)
}

fn cmd_rank(a: &RankArgs) -> CliResult<()> {
    let scorer = load_scorer(&a.scorer)?;
    let text = std::fs::read_to_string(&a.candidates).map_err(|e| Error::io(&a.candidates, e))?;
    let cands: Vec<String> = text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
    let q = crate::aliasdata::EvalQuery {
        query: a.query.clone(),
        positives: Vec::new(),
        negatives: cands.into_iter().map(|c| (c, crate::aliasdata::NegType::Random)).collect(),
    };
    let ranked = rank_query(&scorer, &q)?;
    let mut out = String::new();
    for c in ranked.items.iter().take(a.top.unwrap_or(usize::MAX)) {
        writeln!(out, "{}\t{}", c.candidate, c.score).unwrap();
    }
    write_out(None, &out)
}

fn cmd_cluster(a: &ClusterArgs) -> CliResult<()> {
    let scorer = load_scorer(&a.scorer)?;
    let (ids, texts): (Vec<String>, Vec<String>) = read_mentions(&a.mentions)?.into_iter().unzip();
    let scores = ScoreMatrix::from_scorer(&texts, &scorer)?;
    let tau = match (a.threshold, &a.dev_mentions, &a.dev_gold) {
        (Some(t), _, _) => t,
        (None, Some(dm), Some(dg)) => {
            let (dev_ids, dev_texts): (Vec<String>, Vec<String>) = read_mentions(dm)?.into_iter().unzip();
            let dev_scores = ScoreMatrix::from_scorer(&dev_texts, &scorer)?;
            let gold = read_gold(dg, &dev_ids)?;
            let (t, b) = tune_threshold(&dev_scores, &gold, &default_grid(&dev_scores))?;
            eprintln!("tuned threshold {t} (dev B3 F1 {:.4})", b.f1);
            t
        }
        _ => return Err(usage("give --threshold or --dev-mentions with --dev-gold")),
    };
    let pred = hac_average(&scores, tau);
    write_out(a.out.as_deref(), &format_clustering(&ids, &pred))?;
    if let Some(g) = &a.gold {
        let gold = read_gold(g, &ids)?;
        let b = b_cubed(&pred, &gold)?;
        eprintln!("B3\tprecision {:.4}\trecall {:.4}\tF1 {:.4}", b.precision, b.recall, b.f1);
    }
    Ok(())
}

/// Largest relative gradient error of the BPR loss on one triple.
pub fn gradcheck_model(params: &ModelParams, q: &str, p: &str, n: &str, eps: f64) -> Result<crate::diffmath::GradCheckReport> {
    let l = params.config.max_len;
    let (q, p, n) = (params.vocab.mention(q, l)?, params.vocab.mention(p, l)?, params.vocab.mention(n, l)?);
    let tensors: Vec<Tensor<f64>> = params.tensors().iter().map(|(_, t)| t.cast()).collect();
    let report = grad_check(
        |tape: &mut Tape<f64>, vars| {
            let run = |tape: &mut Tape<f64>| -> Result<_> {
                let sp = forward(tape, params, vars, &q, &p)?.score;
                let sn = forward(tape, params, vars, &q, &n)?.score;
                bpr_loss_on_tape(tape, sp, sn)
            };
            run(tape).map_err(|e| match e {
                Error::Diff(d) => d,
                other => DiffError::Domain { op: "forward", detail: other.to_string() },
            })
        },
        &tensors,
        eps,
    )?;
    Ok(report)
}

/// Zero conv biases leave every padded cell exactly on a ReLU kink, where
/// central differences see half the slope. Small positive biases move them off it.
pub fn offset_conv_biases(params: &mut ModelParams, rng: &mut ChaCha8Rng) -> Result<()> {
    use rand::Rng;
    let names: Vec<String> =
        params.tensors().iter().map(|(n, _)| n.clone()).filter(|n| n.starts_with("cnn.") && n.ends_with(".b")).collect();
    for n in names {
        let t = params.get(&n).expect("listed above");
        let vals = (0..t.len()).map(|_| rng.gen_range(0.05..0.25f32)).collect();
        let t = Tensor::new(t.shape().to_vec(), vals)?;
        params.set(&n, t)?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let params = match &a.checkpoint {
        Some(p) => checkpoint::load(p)?,
        None => {
            let variant: ScoreVariant = a.scorer.parse().map_err(|_| usage(format!("unknown model variant {:?}", a.scorer)))?;
            if a.dim % 2 != 0 || a.dim == 0 {
                return Err(usage("--dim must be a positive even number"));
            }
            let vocab = build_vocab([a.query.as_str(), a.positive.as_str(), a.negative.as_str()], 1)?;
            let cfg = ModelConfig {
                max_len: a.max_len,
                embed_dim: a.dim / 2,
                hidden: a.dim / 2,
                channels: [2, 2, 2],
                lambda: a.lambda,
                sinkhorn_iters: a.iters,
                ..ModelConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut params = ModelParams::init(cfg, variant, vocab, &mut rng)?;
            offset_conv_biases(&mut params, &mut rng)?;
            params
        }
    };
    let start = std::time::Instant::now();
    let report = gradcheck_model(&params, &a.query, &a.positive, &a.negative, a.eps)?;
    println!("max_rel_error\t{:.3e}", report.max_rel_error);
    println!("entries\t{}", report.entries_checked);
    println!("seconds\t{:.2}", start.elapsed().as_secs_f64());
    if report.max_rel_error >= a.tol {
        return Err(Error::Numerical(format!(
            "gradient check failed: {:.3e} >= {} at parameter {:?}",
            report.max_rel_error,
            a.tol,
            report.worst.map(|(t, _)| params.tensors()[t].0.clone())
        ))
        .into());
    }
    Ok(())
}

fn csv(t: &Tensor<f32>) -> String {
    let mut out = String::new();
    for i in 0..t.rows() {
        let row: Vec<String> = t.row_vec(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// `S`, `P` and `S∘P` for one pair, each `|a|×|b|`. For variants without
/// transport the plan is computed from `S` with the model's settings.
pub fn pair_matrices(params: &ModelParams, a: &str, b: &str) -> Result<[Tensor<f32>; 3]> {
    let l = params.config.max_len;
    let (ma, mb) = (params.vocab.mention(a, l)?, params.vocab.mention(b, l)?);
    let t = trace(&ma, &mb, params)?;
    let plan = match t.plan {
        Some(p) => p,
        None => {
            let c = cost_from_similarity(&t.similarity(l)?)?;
            let marg = uniform_marginals(c.values.rows(), c.values.cols())?;
            sinkhorn(&c, &marg, &params.config.sinkhorn())?.0.values
        }
    };
    let reweighted: Vec<f32> = t.sim.data().iter().zip(plan.data()).map(|(s, p)| s * p).collect();
    let reweighted = Tensor::new(t.sim.shape().to_vec(), reweighted)?;
    Ok([t.sim, plan, reweighted])
}

fn cmd_dump_matrices(a: &DumpArgs) -> CliResult<()> {
    let params = checkpoint::load(&a.checkpoint)?;
    let mats = pair_matrices(&params, &a.a, &a.b)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for (name, m) in ["similarity.csv", "transport.csv", "reweighted.csv"].iter().zip(&mats) {
        let p = a.out_dir.join(name);
        std::fs::write(&p, csv(m)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
