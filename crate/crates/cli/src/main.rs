use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pstree::data::{parse_dataset, read_header, write_dataset, DatasetHeader, LabelSet};
use pstree::inference::{Inference, Predictor};
use pstree::metrics::{evaluate, predict_all};
use pstree::propensity::{
    compute_propensities, load_propensities, save_propensities, simulate_missing,
};
use pstree::tree::{build_label_representations, build_tree};
use pstree::{Dataset, HyperParams, LabelTree, PltModel, PropensityTable};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const LABEL_NOTE: &str =
    "Datasets use the XMLC repository text format: a `N d m` header, then one \
line per example `l1,l2,... i:v i:v ...`. Label and feature indices are 0-based.";

#[derive(Parser)]
#[command(name = "pstree", version, about = "Probabilistic label trees with propensity-scored top-k inference", after_help = LABEL_NOTE)]
struct Cli {
    /// Worker threads (0 = one per core). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute empirical label propensities from a training set.
    Propensities(PropensitiesArgs),
    /// Cluster labels into a tree by hierarchical balanced 2-means.
    BuildTree(BuildTreeArgs),
    /// Train one logistic classifier per tree node.
    Train(TrainArgs),
    /// Write the top-k labels of every test example.
    Predict(PredictArgs),
    /// Report p@k and psp@k on a test set.
    Evaluate(EvaluateArgs),
    /// Drop true labels at random according to their propensities.
    SimulateMissing(SimulateArgs),
}

#[derive(Args)]
#[command(after_help = LABEL_NOTE)]
struct PropensitiesArgs {
    /// Training dataset.
    #[arg(long)]
    train: PathBuf,
    #[arg(short = 'A', default_value_t = 0.55, allow_negative_numbers = true)]
    a: f64,
    #[arg(short = 'B', default_value_t = 1.5, allow_negative_numbers = true)]
    b: f64,
    /// Output file: header `m A B C N`, then `label p` per line.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
#[command(after_help = LABEL_NOTE)]
struct BuildTreeArgs {
    #[arg(long)]
    train: PathBuf,
    /// Largest label cluster that is not split further.
    #[arg(long, default_value_t = 100)]
    max_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
#[command(after_help = LABEL_NOTE)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Prebuilt tree files, one model per tree. Without them trees are built
    /// from the training set.
    #[arg(long, num_args = 1..)]
    tree: Vec<PathBuf>,
    /// Number of trees to build when no `--tree` is given. With more than one,
    /// models go to `<output>.0`, `<output>.1`, ... with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    ensemble: usize,
    #[arg(long, default_value_t = 100)]
    max_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight of the logistic loss against the L2 penalty.
    #[arg(long, default_value_t = 1.0)]
    reg_c: f64,
    /// Gradient max-norm at which a node's optimizer stops.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Model directory (or prefix for several).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Brute,
    Ucs,
    Astar,
    Beam,
}

#[derive(Args)]
struct SearchArgs {
    /// Model directories; several form an ensemble.
    #[arg(long, alias = "ensemble", num_args = 1.., required = true)]
    model: Vec<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = Strategy::Astar)]
    inference: Strategy,
    #[arg(long, default_value_t = 10)]
    beam_width: usize,
}

impl SearchArgs {
    fn inference(&self) -> Result<Inference> {
        Ok(match self.inference {
            Strategy::Brute => Inference::Brute,
            Strategy::Ucs => Inference::Ucs,
            Strategy::Astar => Inference::AStar,
            Strategy::Beam => {
                ensure!(self.beam_width >= 1, "--beam-width must be at least 1");
                Inference::Beam {
                    width: self.beam_width,
                }
            }
        })
    }
}

#[derive(Args)]
#[command(after_help = LABEL_NOTE)]
struct PredictArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Propensity file; without it scores are plain label probabilities.
    #[arg(long)]
    propensities: Option<PathBuf>,
    /// Output file (default: stdout). One line per example, `label:score` pairs.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(after_help = LABEL_NOTE)]
struct EvaluateArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Propensity file used to weigh hits and, unless `--plain`, to score labels.
    #[arg(long, required_unless_present = "train")]
    propensities: Option<PathBuf>,
    /// Compute propensities from this training set instead of `--propensities`.
    #[arg(long, conflicts_with = "propensities")]
    train: Option<PathBuf>,
    #[arg(short = 'A', default_value_t = 0.55, allow_negative_numbers = true)]
    a: f64,
    #[arg(short = 'B', default_value_t = 1.5, allow_negative_numbers = true)]
    b: f64,
    /// Cut-offs to report.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    ks: Vec<usize>,
    /// Report every cut-off from 1 to K instead of `--ks`.
    #[arg(long, conflicts_with = "ks")]
    topk: Option<usize>,
    /// Rank by plain label probability while still reporting psp@k.
    #[arg(long)]
    plain: bool,
    /// Also print `key=value` lines.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
#[command(after_help = LABEL_NOTE)]
struct SimulateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    propensities: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn header(path: &Path) -> Result<DatasetHeader> {
    read_header(open(path)?).with_context(|| format!("{}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(open(path)?).with_context(|| format!("{}", path.display()))
}

fn load_table(path: &Path) -> Result<PropensityTable> {
    load_propensities(open(path)?).with_context(|| format!("{}", path.display()))
}

fn load_models(dirs: &[PathBuf]) -> Result<Vec<PltModel>> {
    dirs.iter()
        .map(|d| PltModel::load(d).with_context(|| format!("model {}", d.display())))
        .collect()
}

fn check_dims(what: &Path, h: &DatasetHeader, models: &[PltModel]) -> Result<()> {
    let model = &models[0];
    if h.num_labels != model.num_labels() || h.num_features != model.num_features {
        bail!(
            "{} has d={} m={} but the model expects d={} m={}",
            what.display(),
            h.num_features,
            h.num_labels,
            model.num_features,
            model.num_labels()
        );
    }
    Ok(())
}

fn check_table(table: &PropensityTable, m: usize) -> Result<()> {
    ensure!(
        table.num_labels() == m,
        "propensity file has {} labels, expected {m}",
        table.num_labels()
    );
    Ok(())
}

/// `%g` with six significant digits.
fn format_g(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_propensities(args: &PropensitiesArgs) -> Result<()> {
    header(&args.train)?;
    let data = load_dataset(&args.train)?;
    let table = compute_propensities(&data.label_counts(), data.num_examples(), args.a, args.b)?;
    save_propensities(&table, create(&args.output)?)?;
    Ok(())
}

fn run_build_tree(args: &BuildTreeArgs) -> Result<()> {
    ensure!(args.max_leaf >= 1, "--max-leaf must be at least 1");
    let h = header(&args.train)?;
    ensure!(h.num_labels > 0, "{} has no labels", args.train.display());
    let data = load_dataset(&args.train)?;
    let reps = build_label_representations(&data);
    let tree = build_tree(&reps, args.max_leaf, args.seed)?;
    let mut out = create(&args.output)?;
    tree.write(&mut out)?;
    out.flush()?;
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let hp = HyperParams {
        reg_c: args.reg_c,
        tol: args.tol,
        max_iter: args.max_iter,
        ..HyperParams::default()
    };
    hp.validate()?;
    let h = header(&args.train)?;
    let trees: Vec<LabelTree> = args
        .tree
        .iter()
        .map(|p| LabelTree::read(open(p)?).with_context(|| format!("{}", p.display())))
        .collect::<Result<_>>()?;
    for (tree, path) in trees.iter().zip(&args.tree) {
        ensure!(
            tree.num_labels() == h.num_labels,
            "{} covers {} labels but {} has m={}",
            path.display(),
            tree.num_labels(),
            args.train.display(),
            h.num_labels
        );
    }
    ensure!(args.ensemble >= 1, "--ensemble must be at least 1");
    ensure!(args.max_leaf >= 1, "--max-leaf must be at least 1");

    let data = load_dataset(&args.train)?;
    let trees = if trees.is_empty() {
        let reps = build_label_representations(&data);
        (0..args.ensemble as u64)
            .map(|i| build_tree(&reps, args.max_leaf, args.seed + i))
            .collect::<pstree::Result<_>>()?
    } else {
        trees
    };
    let several = trees.len() > 1;
    for (i, tree) in trees.into_iter().enumerate() {
        let model = pstree::train::train_plt(tree, &data, &hp)?;
        let dir = if several {
            let mut name = args.output.clone().into_os_string();
            name.push(format!(".{i}"));
            PathBuf::from(name)
        } else {
            args.output.clone()
        };
        model
            .save(&dir)
            .with_context(|| format!("cannot save model to {}", dir.display()))?;
    }
    Ok(())
}

fn run_predict(args: &PredictArgs) -> Result<()> {
    ensure!(args.topk >= 1, "--topk must be at least 1");
    let inference = args.search.inference()?;
    let models = load_models(&args.search.model)?;
    let h = header(&args.search.test)?;
    check_dims(&args.search.test, &h, &models)?;
    let table = args.propensities.as_deref().map(load_table).transpose()?;
    if let Some(t) = &table {
        check_table(t, h.num_labels)?;
    }

    let test = load_dataset(&args.search.test)?;
    let predictor = Predictor::new(&models, table.as_ref(), inference)?;
    let preds = predict_all(&predictor, &test, args.topk)?;

    let mut out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for row in preds {
        let line: Vec<String> = row
            .iter()
            .map(|s| format!("{}:{}", s.label, format_g(s.score)))
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let inference = args.search.inference()?;
    let ks: Vec<usize> = match args.topk {
        Some(k) => (1..=k).collect(),
        None => args.ks.clone(),
    };
    ensure!(
        !ks.is_empty() && ks.iter().all(|&k| k >= 1),
        "cut-offs must be positive"
    );
    let models = load_models(&args.search.model)?;
    let h = header(&args.search.test)?;
    check_dims(&args.search.test, &h, &models)?;
    let table = match (&args.propensities, &args.train) {
        (Some(p), _) => load_table(p)?,
        (None, Some(train)) => {
            let th = header(train)?;
            ensure!(
                th.num_labels == h.num_labels,
                "{} has m={} but {} has m={}",
                train.display(),
                th.num_labels,
                args.search.test.display(),
                h.num_labels
            );
            let data = load_dataset(train)?;
            compute_propensities(&data.label_counts(), data.num_examples(), args.a, args.b)?
        }
        (None, None) => bail!("either --propensities or --train is required"),
    };
    check_table(&table, h.num_labels)?;

    let test = load_dataset(&args.search.test)?;
    let report = evaluate(&models, &test, &table, &ks, inference, args.plain)?;
    let mut out = io::stdout().lock();
    write!(out, "{report}")?;
    if args.kv {
        write!(out, "{}", report.to_key_values())?;
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let h = header(&args.data)?;
    let table = load_table(&args.propensities)?;
    check_table(&table, h.num_labels)?;
    let data = load_dataset(&args.data)?;
    let base = splitmix64(args.seed);
    let labels: Vec<LabelSet> = data
        .examples()
        .iter()
        .enumerate()
        .map(|(i, ex)| simulate_missing(&ex.labels, &table, splitmix64(base ^ i as u64)))
        .collect();
    let censored = data.with_labels(labels)?;
    let mut out = create(&args.output)?;
    write_dataset(&censored, &mut out)?;
    out.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("cannot start worker threads")?;
    match &cli.command {
        Command::Propensities(a) => run_propensities(a),
        Command::BuildTree(a) => run_build_tree(a),
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::SimulateMissing(a) => run_simulate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("pstree: {msg}");
            ExitCode::FAILURE
        }
    }
}
