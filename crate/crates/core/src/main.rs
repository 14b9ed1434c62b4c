use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tiws::data::{load_csv, load_csv_unlabeled};
use tiws::experiment::{
    evaluate, median, run_curves, run_sweep, write_curve_csv, write_pr_csv, write_sweep_csv,
    write_timings_csv, DataSource, StrategyKind, SweepConfig, DEFAULT_FRACTIONS,
    DEFAULT_PERMUTATIONS, DEFAULT_REPETITIONS,
};
use tiws::forest::{fit_forest, ForestParams, MaxDepth};
use tiws::selection::select_trees;
use tiws::store::{memory_report, read_model, serialized_size, write_model};
use tiws::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_LABELS: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

/// Isolation Forest with weakly supervised tree selection.
#[derive(Parser)]
#[command(name = "tiws", version)]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ForestArgs {
    /// Number of trees.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Rows drawn per tree (clipped to the dataset size).
    #[arg(long, default_value_t = 256)]
    subsample: usize,
    /// Depth limit, or `auto` for ceil(log2(subsample)).
    #[arg(long, default_value = "auto", value_parser = parse_depth)]
    max_depth: MaxDepth,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ForestArgs {
    fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.trees,
            subsample_size: self.subsample,
            max_depth: self.max_depth,
            seed: self.seed,
        }
    }
}

fn parse_depth(s: &str) -> Result<MaxDepth, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(MaxDepth::Auto);
    }
    s.parse()
        .map(MaxDepth::Limit)
        .map_err(|_| format!("expected `auto` or a positive integer, got `{s}`"))
}

fn parse_source(s: &str) -> Result<DataSource, String> {
    DataSource::parse(s)
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|_| format!("bad fraction `{s}`"))?;
    if f > 0.0 && f <= 1.0 {
        Ok(f)
    } else {
        Err(format!("fraction {f} outside (0, 1]"))
    }
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    StrategyKind::parse(s).ok_or_else(|| format!("unknown strategy `{s}` (best, worst, random)"))
}

#[derive(Subcommand)]
enum Command {
    /// Grow a standard forest and write it as a `.tiws` model.
    Train {
        /// CSV file or `toy:<kind>[:inliers:anomalies[:seed]]`.
        #[arg(value_parser = parse_source)]
        data: DataSource,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Rank the trees of a model on labeled data and keep the best prefix.
    Select {
        model: PathBuf,
        labeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the selection JSON here instead of standard output.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Average precision of a model on a labeled test set.
    Eval {
        model: PathBuf,
        test: PathBuf,
        /// Write (threshold, precision, recall) rows here.
        #[arg(long)]
        pr_out: Option<PathBuf>,
    },
    /// Prefix-forest AP curves under best/worst/random tree orderings.
    Curves {
        #[arg(value_parser = parse_source)]
        data: DataSource,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "best,worst,random", value_parser = parse_strategy)]
        strategies: Vec<StrategyKind>,
        /// Labeled fraction of the data used to rank trees.
        #[arg(long, default_value_t = 1.0, value_parser = parse_fraction)]
        fraction: f64,
        /// Random orderings aggregated into the random curve.
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        permutations: usize,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Repeated split/select/evaluate protocol over datasets and labeled fractions.
    Sweep {
        /// Dataset (repeatable): CSV file or `toy:<kind>[:inliers:anomalies[:seed]]`.
        #[arg(long = "data", required = true, value_parser = parse_source)]
        data: Vec<DataSource>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_fraction)]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
        repetitions: usize,
        #[arg(long, default_value_t = 0.5, value_parser = parse_fraction)]
        test_fraction: f64,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Node counts and serialized size of a model.
    Report { model: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || match cli.command {
        Command::Train { data, out, forest } => train(&data, &out, &forest.params()),
        Command::Select {
            model,
            labeled,
            out,
            json,
        } => select(&model, &labeled, &out, json.as_deref()),
        Command::Eval {
            model,
            test,
            pr_out,
        } => eval(&model, &test, pr_out.as_deref()),
        Command::Curves {
            data,
            out,
            strategies,
            fraction,
            permutations,
            forest,
        } => curves(
            &data,
            &out,
            &strategies,
            fraction,
            permutations,
            &forest.params(),
        ),
        Command::Sweep {
            data,
            out,
            fractions,
            repetitions,
            test_fraction,
            forest,
        } => {
            let mut config = SweepConfig::new(data);
            config.fractions = fractions.unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
            config.repetitions = repetitions;
            config.test_fraction = test_fraction;
            config.params = forest.params();
            sweep(&config, &out)
        }
        Command::Report { model } => report(&model),
    };

    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INPUT);
            }
        },
        None => run(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_label_contract() {
                EXIT_LABELS
            } else {
                EXIT_INPUT
            })
        }
    }
}

type CmdResult = Result<ExitCode, Error>;

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn train(data: &DataSource, out: &Path, params: &ForestParams) -> CmdResult {
    let ds = match data {
        DataSource::Csv(p) => load_csv_unlabeled(p)?,
        toy => toy.load()?,
    };
    let forest = fit_forest(ds.features(), params)?;
    let bytes = write_model(&forest, out)?;
    let summary = json!({
        "n": ds.n_rows(),
        "d": ds.n_features(),
        "t": forest.n_trees(),
        "psi": forest.subsample_size(),
        "bytes": bytes,
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn select(model: &Path, labeled: &Path, out: &Path, json_out: Option<&Path>) -> CmdResult {
    let forest = read_model(model)?;
    let labeled = load_csv(labeled)?;
    if labeled.n_anomalies() == Some(1) {
        eprintln!("warning: labeled set has a single anomaly; the tree ranking rests on it alone");
    }
    let (reduced, selection) = select_trees(&forest, &labeled)?;
    let bytes = write_model(&reduced, out)?;
    let body = serde_json::to_string_pretty(&selection)?;
    match json_out {
        Some(path) => {
            std::fs::write(path, body + "\n").map_err(|e| Error::Io {
                path: path.into(),
                source: e,
            })?;
            let summary = json!({
                "trees": forest.n_trees(),
                "selected_size": selection.selected_size,
                "selected_ap": selection.selected_ap(),
                "full_forest_ap": selection.full_forest_ap(),
                "parent_bytes": serialized_size(&forest),
                "reduced_bytes": bytes,
            });
            println!("{summary}");
        }
        None => println!("{body}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(model: &Path, test: &Path, pr_out: Option<&Path>) -> CmdResult {
    let forest = read_model(model)?;
    let test = load_csv_unlabeled(test)?;
    let (ap, curve) = evaluate(&forest, &test)?;
    if let Some(path) = pr_out {
        write_pr_csv(&curve, path)?;
    }
    let summary = json!({
        "average_precision": ap,
        "n": test.n_rows(),
        "anomalies": test.n_anomalies(),
        "trees": forest.n_trees(),
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn curves(
    data: &DataSource,
    out: &Path,
    strategies: &[StrategyKind],
    fraction: f64,
    permutations: usize,
    params: &ForestParams,
) -> CmdResult {
    let ds = data.load()?;
    let result = run_curves(&ds, params, fraction, strategies, permutations)?;
    create_dir(out)?;
    for (kind, rows) in &result.curves {
        write_curve_csv(rows, &out.join(format!("curve_{}.csv", kind.name())))?;
    }
    let mut w = csv::Writer::from_path(out.join("tree_ap.csv")).map_err(Error::from)?;
    w.write_record(["tree", "ap"]).map_err(Error::from)?;
    for (i, ap) in result.per_tree_ap.iter().enumerate() {
        w.write_record([i.to_string(), ap.0.to_string()])
            .map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: out.join("tree_ap.csv"),
        source: e,
    })?;
    let best_tree = result
        .per_tree_ap
        .iter()
        .map(|a| a.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let summary = json!({
        "dataset": ds.name,
        "trees": result.per_tree_ap.len(),
        "full_forest_ap": result.full_forest_ap,
        "best_tree_ap": best_tree,
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn sweep(config: &SweepConfig, out: &Path) -> CmdResult {
    let outcome = run_sweep(config)?;
    create_dir(out)?;
    write_sweep_csv(&outcome.records, &out.join("sweep.csv"))?;
    write_timings_csv(&outcome.records, &out.join("timings.csv"))?;
    for f in &outcome.failures {
        match f.cell {
            Some((fraction, rep)) => eprintln!(
                "failed: {} fraction={} repetition={}: {}",
                f.dataset, fraction, rep, f.message
            ),
            None => eprintln!("failed: {}: {}", f.dataset, f.message),
        }
    }
    let mut selected: Vec<f64> = outcome
        .records
        .iter()
        .map(|r| r.selected_trees as f64)
        .collect();
    let summary = json!({
        "rows": outcome.records.len(),
        "failures": outcome.failures.len(),
        "median_selected_trees": median(&mut selected),
    });
    println!("{summary}");
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PARTIAL)
    })
}

fn report(model: &Path) -> CmdResult {
    let forest = read_model(model)?;
    println!("{}", serde_json::to_string_pretty(&memory_report(&forest))?);
    Ok(ExitCode::SUCCESS)
}
