//! `regmapr` command-line entry point.

mod config;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use regmapr::analysis::reports_tsv;
use regmapr::features::{featurize_record, load_glove_with_dim};
use regmapr::training::{DEFAULT_D_E_GRID, DEFAULT_D_F_GRID, DEFAULT_D_W_GRID};
use regmapr::{
    analyze, build_index, evaluate, grid_search, load_dataset, run_gradcheck, train, DataFormat, Dataset,
    EmbeddingTable, FeatureMode, GradcheckConfig, LoadOptions, Model, ParaphraseIndex, PpdbStats, Resources,
    ScoreRange, Split, TaskKind,
};
use serde::Serialize;

use config::{DataFlags, RunConfig, RunFiles, TrainFlags};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { code: 1, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { code: 2, message: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError { code: 3, message: msg.into() }
    }
}

impl From<regmapr::Error> for CliError {
    fn from(e: regmapr::Error) -> Self {
        if e.is_numerical() {
            CliError::numerical(e.to_string())
        } else {
            CliError::data(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "regmapr", version, about = "Sentence-pair matching with exact-match and paraphrase features")]
struct Cli {
    /// Machine-readable JSON on stdout instead of tables
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fixed-order gradient reduction
    #[arg(long, global = true)]
    deterministic: bool,
    /// Root seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log warnings and errors
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pair and word counts plus the paraphrase-count histogram of a PPDB file
    PpdbStats {
        ppdb: PathBuf,
        #[arg(long, default_value_t = 100)]
        bin_width: usize,
        #[arg(long)]
        symmetrize: bool,
    },
    /// Per-token MA/PR bits as JSON lines
    Featurize {
        data: PathBuf,
        #[arg(long, default_value = "MAPR")]
        mode: FeatureMode,
        #[arg(long, default_value = "paraphrase")]
        task: TaskKind,
        /// Marks out-of-vocabulary tokens when given
        #[arg(long)]
        glove: Option<PathBuf>,
        #[arg(long)]
        embedding_dim: Option<usize>,
        #[arg(long)]
        ppdb: Option<PathBuf>,
        #[arg(long)]
        symmetrize: bool,
        #[arg(long)]
        format: Option<DataFormat>,
        #[arg(long)]
        score_range: Option<ScoreRange>,
        #[arg(long)]
        skip_bad: bool,
        /// Output file (default stdout)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train one model from a JSON config
    Train {
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        flags: TrainFlags,
        /// Also write the JSON report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep dropout rates and keep the best model by dev metric
    Grid {
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        flags: TrainFlags,
        /// Comma-separated d_e values
        #[arg(long, value_delimiter = ',')]
        grid_d_e: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        grid_d_f: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        grid_d_w: Option<Vec<f64>>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Metrics of a saved checkpoint on one split
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long)]
        glove: PathBuf,
        #[arg(long)]
        ppdb: Option<PathBuf>,
        #[arg(long)]
        symmetrize: bool,
        #[arg(long)]
        format: Option<DataFormat>,
        #[arg(long)]
        score_range: Option<ScoreRange>,
        #[arg(long)]
        skip_bad: bool,
        /// Write one prediction per line here
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Relative difference of MA/PR/MAPR token proportions between label groups
    Analyze {
        data: PathBuf,
        #[arg(long)]
        ppdb: PathBuf,
        #[arg(long, default_value = "paraphrase")]
        task: TaskKind,
        #[arg(long)]
        symmetrize: bool,
        #[arg(long)]
        format: Option<DataFormat>,
        #[arg(long)]
        score_range: Option<ScoreRange>,
        #[arg(long)]
        skip_bad: bool,
        /// Also write the JSON report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of all gradients on a tiny model
    Gradcheck {
        /// Accepted probes per task and regime
        #[arg(long)]
        probes: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) -> CliResult {
    let text = if json {
        serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))? + "\n"
    } else {
        human()
    };
    print!("{text}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let file = File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| CliError::data(e.to_string()))
}

fn require(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{}: no such file", path.display())))
    }
}

fn load(path: &Path, format: Option<DataFormat>, task: TaskKind, split: Split, range: Option<ScoreRange>, skip_bad: bool) -> CliResult<Dataset> {
    let opts = LoadOptions {
        split,
        score_range: range.unwrap_or(ScoreRange::SICK),
        skip_bad,
    };
    let format = format.unwrap_or_else(|| DataFormat::from_path(path));
    let data = load_dataset(path, format, task, &opts)?;
    info!("{}: {} pairs", path.display(), data.len());
    Ok(data)
}

fn vocabulary<'a>(sets: impl IntoIterator<Item = &'a Dataset>) -> HashSet<String> {
    sets.into_iter()
        .flat_map(|d| d.pairs.iter())
        .flat_map(|p| p.s1.tokens.iter().chain(&p.s2.tokens))
        .map(|t| t.to_string())
        .collect()
}

fn load_glove(path: &Path, dim: usize, vocab: &HashSet<String>) -> CliResult<EmbeddingTable> {
    let table = load_glove_with_dim(path, dim, Some(vocab))?;
    info!("{}: {} of {} words have vectors", path.display(), table.len(), vocab.len());
    Ok(table)
}

fn load_ppdb(path: Option<&Path>, symmetrize: bool) -> CliResult<Option<ParaphraseIndex>> {
    path.map(|p| {
        let (index, stats) = build_index(p, symmetrize)?;
        info!("{}: {} pairs over {} words ({} lines)", p.display(), index.pair_count(), index.word_count(), stats.lines);
        Ok(index)
    })
    .transpose()
}

/// Splits, embeddings and paraphrase index for a train or grid run.
struct Inputs {
    train: Dataset,
    dev: Dataset,
    test: Option<Dataset>,
    table: EmbeddingTable,
    index: Option<ParaphraseIndex>,
}

fn prepare(cfg: &RunConfig) -> CliResult<Inputs> {
    let f: &RunFiles = &cfg.files;
    let task = cfg.train.task;
    let train_path = f.train_data.as_deref().ok_or_else(|| CliError::usage("no training data (--train or 'train_data')"))?;
    let dev_path = f.dev_data.as_deref().ok_or_else(|| CliError::usage("no dev data (--dev or 'dev_data')"))?;
    let glove = f.glove.as_deref().ok_or_else(|| CliError::usage("no embeddings (--glove or 'glove')"))?;
    if cfg.train.mode.uses_pr() && f.ppdb.is_none() {
        return Err(CliError::usage(format!("mode {} needs --ppdb", cfg.train.mode)));
    }
    for p in [Some(train_path), Some(dev_path), f.test_data.as_deref(), Some(glove), f.ppdb.as_deref()].into_iter().flatten() {
        require(p)?;
    }
    let train = load(train_path, f.data_format, task, Split::Train, f.score_range, f.skip_bad)?;
    let dev = load(dev_path, f.data_format, task, Split::Dev, f.score_range, f.skip_bad)?;
    let test = f
        .test_data
        .as_deref()
        .map(|p| load(p, f.data_format, task, Split::Test, f.score_range, f.skip_bad))
        .transpose()?;
    let vocab = vocabulary([&train, &dev].into_iter().chain(test.as_ref()));
    let table = load_glove(glove, cfg.train.embedding_dim, &vocab)?;
    let index = if cfg.train.mode.uses_pr() { load_ppdb(f.ppdb.as_deref(), f.symmetrize)? } else { None };
    Ok(Inputs { train, dev, test, table, index })
}

fn cmd_ppdb_stats(cli: &Cli, ppdb: &Path, bin_width: usize, symmetrize: bool) -> CliResult {
    if bin_width == 0 {
        return Err(CliError::usage("--bin-width must be at least 1"));
    }
    require(ppdb)?;
    let (index, build) = build_index(ppdb, symmetrize)?;
    let stats = PpdbStats::compute(&index, build, bin_width)?;
    emit(cli.json, &stats, || {
        let median = stats.median_paraphrases.map_or("NA".to_string(), |m| m.to_string());
        format!(
            "pairs\t{}\nwords\t{}\nmedian_paraphrases\t{median}\nmax_paraphrases\t{}\nlines\t{}\nself_pairs\t{}\nmultiword\t{}\nduplicates\t{}\n\n{}",
            stats.pair_count,
            stats.word_count,
            stats.max_paraphrases,
            stats.build.lines,
            stats.build.self_pairs,
            stats.build.multiword,
            stats.build.duplicates,
            stats.histogram_tsv()
        )
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_featurize(
    data: &Path,
    mode: FeatureMode,
    task: TaskKind,
    glove: Option<&Path>,
    embedding_dim: Option<usize>,
    ppdb: Option<&Path>,
    symmetrize: bool,
    format: Option<DataFormat>,
    score_range: Option<ScoreRange>,
    skip_bad: bool,
    out: Option<&Path>,
) -> CliResult {
    if mode.uses_pr() && ppdb.is_none() {
        return Err(CliError::usage(format!("mode {mode} needs --ppdb")));
    }
    for p in [Some(data), glove, ppdb].into_iter().flatten() {
        require(p)?;
    }
    let dataset = load(data, format, task, Split::Train, score_range, skip_bad)?;
    let table = glove
        .map(|g| load_glove(g, embedding_dim.unwrap_or(regmapr::GLOVE_DIM), &vocabulary([&dataset])))
        .transpose()?;
    let index = if mode.uses_pr() { load_ppdb(ppdb, symmetrize)? } else { None };
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for pair in &dataset.pairs {
        let record = featurize_record(pair, table.as_ref(), index.as_ref(), mode)?;
        let line = serde_json::to_string(&record).map_err(|e| CliError::data(e.to_string()))?;
        writeln!(sink, "{line}").map_err(|e| CliError::data(e.to_string()))?;
    }
    sink.flush().map_err(|e| CliError::data(e.to_string()))
}

fn cmd_train(cli: &Cli, config: Option<&Path>, data: &DataFlags, flags: &TrainFlags, report_path: Option<&Path>) -> CliResult {
    let cfg = RunConfig::load(config, data, flags, cli.seed, cli.deterministic)?;
    let inputs = prepare(&cfg)?;
    let res = Resources { table: &inputs.table, index: inputs.index.as_ref() };
    let (_, report) = train(&cfg.train, &inputs.train, &inputs.dev, inputs.test.as_ref(), res, cfg.files.checkpoint.as_deref())?;
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    emit(cli.json, &report, || report.table())
}

#[allow(clippy::too_many_arguments)]
fn cmd_grid(
    cli: &Cli,
    config: Option<&Path>,
    data: &DataFlags,
    flags: &TrainFlags,
    d_e: Option<&[f64]>,
    d_f: Option<&[f64]>,
    d_w: Option<&[f64]>,
    report_path: Option<&Path>,
) -> CliResult {
    let cfg = RunConfig::load(config, data, flags, cli.seed, cli.deterministic)?;
    let axis = |flag: Option<&[f64]>, file: &Option<Vec<f64>>, default: &[f64]| -> Vec<f64> {
        flag.map(<[f64]>::to_vec).or_else(|| file.clone()).unwrap_or_else(|| default.to_vec())
    };
    let (d_e, d_f, d_w) = (
        axis(d_e, &cfg.grid.d_e, &DEFAULT_D_E_GRID),
        axis(d_f, &cfg.grid.d_f, &DEFAULT_D_F_GRID),
        axis(d_w, &cfg.grid.d_w, &DEFAULT_D_W_GRID),
    );
    regmapr::training::grid_points(&d_e, &d_f, &d_w).map_err(|e| CliError::usage(e.to_string()))?;
    let inputs = prepare(&cfg)?;
    let res = Resources { table: &inputs.table, index: inputs.index.as_ref() };
    let (model, report) = grid_search(&cfg.train, &d_e, &d_f, &d_w, &inputs.train, &inputs.dev, inputs.test.as_ref(), res)?;
    if let Some(p) = &cfg.files.checkpoint {
        model.save(p)?;
    }
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    emit(cli.json, &report, || report.table())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    pairs: usize,
    metrics: regmapr::MetricReport,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cli: &Cli,
    checkpoint: &Path,
    data: &Path,
    glove: &Path,
    ppdb: Option<&Path>,
    symmetrize: bool,
    format: Option<DataFormat>,
    score_range: Option<ScoreRange>,
    skip_bad: bool,
    predictions: Option<&Path>,
) -> CliResult {
    for p in [Some(checkpoint), Some(data), Some(glove), ppdb].into_iter().flatten() {
        require(p)?;
    }
    let model = Model::load(checkpoint)?;
    let mode = model.config.mode;
    if mode.uses_pr() && ppdb.is_none() {
        return Err(CliError::usage(format!("checkpoint uses mode {mode}; pass --ppdb")));
    }
    let range = score_range.or(model.config.score_range);
    let dataset = load(data, format, model.config.task, Split::Test, range, skip_bad)?;
    let table = load_glove(glove, model.config.embedding_dim, &vocabulary([&dataset]))?;
    let index = if mode.uses_pr() { load_ppdb(ppdb, symmetrize)? } else { None };
    let eval = evaluate(&model, &dataset, Resources { table: &table, index: index.as_ref() })?;
    if let Some(p) = predictions {
        let mut w = BufWriter::new(File::create(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?);
        for o in &eval.outputs {
            let line = serde_json::to_string(o).map_err(|e| CliError::data(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| CliError::data(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::data(e.to_string()))?;
    }
    let out = EvalOutput { checkpoint, data, pairs: dataset.len(), metrics: eval.report };
    emit(cli.json, &out, || format!("{} pairs: {}\n", out.pairs, out.metrics.summary()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    cli: &Cli,
    data: &Path,
    ppdb: &Path,
    task: TaskKind,
    symmetrize: bool,
    format: Option<DataFormat>,
    score_range: Option<ScoreRange>,
    skip_bad: bool,
    report_path: Option<&Path>,
) -> CliResult {
    require(data)?;
    require(ppdb)?;
    let dataset = load(data, format, task, Split::Train, score_range, skip_bad)?;
    let (index, _) = build_index(ppdb, symmetrize)?;
    let reports = analyze(&dataset, &index)?;
    if let Some(p) = report_path {
        write_json(p, &reports)?;
    }
    emit(cli.json, &reports, || reports_tsv(&reports))
}

fn cmd_gradcheck(cli: &Cli, probes: Option<usize>, tolerance: Option<f64>) -> CliResult {
    let mut cfg = GradcheckConfig::default();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = probes {
        if p == 0 {
            return Err(CliError::usage("--probes must be at least 1"));
        }
        cfg.probes = p;
    }
    if let Some(t) = tolerance {
        cfg.tolerance = t;
    }
    let report = run_gradcheck(&cfg)?;
    emit(cli.json, &report, || report.table())?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::numerical(format!(
            "gradient check failed: max relative error {:.3e} >= {:.0e}",
            report.max_rel_error, report.config.tolerance
        )))
    }
}

fn run(cli: &Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::PpdbStats { ppdb, bin_width, symmetrize } => cmd_ppdb_stats(cli, ppdb, *bin_width, *symmetrize),
        Command::Featurize { data, mode, task, glove, embedding_dim, ppdb, symmetrize, format, score_range, skip_bad, out } => {
            cmd_featurize(
                data,
                *mode,
                *task,
                glove.as_deref(),
                *embedding_dim,
                ppdb.as_deref(),
                *symmetrize,
                *format,
                *score_range,
                *skip_bad,
                out.as_deref(),
            )
        }
        Command::Train { config, data, flags, report } => cmd_train(cli, config.as_deref(), data, flags, report.as_deref()),
        Command::Grid { config, data, flags, grid_d_e, grid_d_f, grid_d_w, report } => cmd_grid(
            cli,
            config.as_deref(),
            data,
            flags,
            grid_d_e.as_deref(),
            grid_d_f.as_deref(),
            grid_d_w.as_deref(),
            report.as_deref(),
        ),
        Command::Eval { checkpoint, data, glove, ppdb, symmetrize, format, score_range, skip_bad, predictions } => cmd_eval(
            cli,
            checkpoint,
            data,
            glove,
            ppdb.as_deref(),
            *symmetrize,
            *format,
            *score_range,
            *skip_bad,
            predictions.as_deref(),
        ),
        Command::Analyze { data, ppdb, task, symmetrize, format, score_range, skip_bad, report } => cmd_analyze(
            cli,
            data,
            ppdb,
            *task,
            *symmetrize,
            *format,
            *score_range,
            *skip_bad,
            report.as_deref(),
        ),
        Command::Gradcheck { probes, tolerance } => cmd_gradcheck(cli, *probes, *tolerance),
    }
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
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
