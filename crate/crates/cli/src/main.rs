use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catclust::dataset::{load_csv, Dataset, Schema};
use catclust::forest::ForestParams;
use catclust::metrics::Metric;
use catclust::runner::{
    cluster_dataset, default_schema_path, embed_dataset, evaluate_partition, run_and_export, summarize_run_dir,
    ExperimentConfig, Representation,
};
use catclust::Error;

#[derive(Parser, Debug)]
#[command(name = "catclust", version, about = "Clustering benchmarks over Euclidean, learned-metric and forest-embedding representations")]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log verbosity: repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a full experiment config and export every artifact.
    Run {
        config: PathBuf,
        /// Restrict to these representations (comma separated).
        #[arg(long, value_delimiter = ',')]
        rep: Vec<Representation>,
    },
    /// Cluster one dataset at a single K and write its assignments.
    Cluster {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        rep: Representation,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Embed one dataset from forest proximities.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        forest: ForestArgs,
        /// Smallest and largest embedding dimension tried.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        dims: Option<Vec<usize>>,
        /// Also write the fitted forest as JSON.
        #[arg(long)]
        save_forest: Option<PathBuf>,
    },
    /// Score a given partition of a dataset with every metric.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// CSV with `id,cluster` columns (a `k` column needs `--k`).
        assignments: PathBuf,
        /// Pick this K from a multi-K assignments file.
        #[arg(long)]
        k: Option<usize>,
        /// Compute internal metrics on unscaled features.
        #[arg(long)]
        unscaled: bool,
    },
    /// Print the summary tables of an exported run.
    Report { run_dir: PathBuf },
}

#[derive(Args, Debug)]
struct DataArgs {
    data: PathBuf,
    /// Column schema; defaults to `<data>.schema.toml`.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ForestArgs {
    /// Skip forest tuning and use this many trees.
    #[arg(long)]
    n_estimators: Option<usize>,
    /// Tree depth limit when `--n-estimators` is given.
    #[arg(long, requires = "n_estimators")]
    max_depth: Option<usize>,
}

impl ForestArgs {
    fn params(&self) -> Option<ForestParams> {
        self.n_estimators.map(|n| ForestParams::new(n, self.max_depth))
    }
}

impl DataArgs {
    fn load(&self) -> catclust::Result<Dataset> {
        if !self.data.exists() {
            return Err(Error::InvalidInput(format!("{} not found", self.data.display())));
        }
        let schema_path = self.schema.clone().unwrap_or_else(|| default_schema_path(&self.data));
        if !schema_path.exists() {
            return Err(Error::InvalidInput(format!("schema {} not found", schema_path.display())));
        }
        load_csv(&self.data, &Schema::load(schema_path)?)
    }

    fn stem(&self) -> String {
        self.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn base_config(cli: &Cli) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg
}

fn out_dir(cli: &Cli, fallback: &Path) -> catclust::Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| fallback.to_path_buf());
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> catclust::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn execute(cli: &Cli) -> catclust::Result<()> {
    match &cli.command {
        Command::Run { config, rep } => {
            if !config.exists() {
                return Err(Error::InvalidInput(format!("{} not found", config.display())));
            }
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if !rep.is_empty() {
                cfg.set_representations(rep);
            }
            let fallback = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
            let dir = out_dir(cli, &fallback)?;
            let report = run_and_export(&cfg, &dir)?;
            let failed: usize = report.datasets.iter().flat_map(|d| &d.cells).filter(|c| !c.is_ok()).count();
            print!("{}", summarize_run_dir(&dir)?);
            println!("artifacts written to {}", dir.display());
            if failed > 0 {
                println!("{failed} cell(s) failed; see cells.csv");
            }
            Ok(())
        }
        Command::Cluster { data, rep, k, forest } => {
            let ds = data.load()?;
            let cfg = base_config(cli);
            let result = cluster_dataset(&cfg, &ds, *rep, *k, forest.params())?;
            let dir = out_dir(cli, Path::new("."))?;
            let path = dir.join(format!("{}_{}_k{}.csv", data.stem(), rep, k));
            let mut text = String::from("id,cluster\n");
            for (i, a) in result.assignments.iter().enumerate() {
                text.push_str(&format!("{i},{a}\n"));
            }
            write_file(&path, &text)?;
            println!("assignments: {}", path.display());
            println!("inertia: {}", result.inertia);
            for (m, v) in &result.external {
                println!("{m}: {v:.4}");
            }
            Ok(())
        }
        Command::Embed {
            data,
            forest,
            dims,
            save_forest,
        } => {
            let ds = data.load()?;
            let mut cfg = base_config(cli);
            if let Some(d) = dims {
                cfg.embed_dim_min = d[0];
                cfg.embed_dim_max = d[1];
                cfg.validate_settings()?;
            }
            let (rows, emb, fitted) = embed_dataset(&cfg, &ds, forest.params())?;
            let dir = out_dir(cli, Path::new("."))?;
            let mut text = String::from("id");
            for j in 1..=emb.m {
                text.push_str(&format!(",dim_{j}"));
            }
            text.push_str(",label\n");
            for (i, &r) in rows.iter().enumerate() {
                text.push_str(&r.to_string());
                for v in emb.coords.row(i) {
                    text.push_str(&format!(",{v}"));
                }
                text.push_str(&format!(",{}\n", ds.class_names()[ds.y()[r]]));
            }
            let path = dir.join(format!("{}_embedding.csv", data.stem()));
            write_file(&path, &text)?;
            let mut stress = String::from("dim,stress\n");
            for (m, s) in &emb.stress_by_dim {
                stress.push_str(&format!("{m},{s}\n"));
            }
            write_file(&dir.join(format!("{}_stress.csv", data.stem())), &stress)?;
            if let Some(p) = save_forest {
                fitted.save(p)?;
            }
            println!("embedding: {} ({} points, {} dims, t = {}, stress = {:.4})", path.display(), rows.len(), emb.m, emb.t, emb.stress);
            Ok(())
        }
        Command::Evaluate {
            data,
            assignments,
            k,
            unscaled,
        } => {
            let ds = data.load()?;
            let assign = read_assignments(assignments, *k, ds.n())?;
            let scores = evaluate_partition(&ds, &assign, !unscaled)?;
            for m in Metric::ALL {
                if let Some(v) = scores.get(&m) {
                    println!("{m}: {v}");
                }
            }
            Ok(())
        }
        Command::Report { run_dir } => {
            print!("{}", summarize_run_dir(run_dir)?);
            Ok(())
        }
    }
}

/// Cluster ids ordered by row id. Rows with a `k` column are filtered to
/// the requested K.
fn read_assignments(path: &Path, k: Option<usize>, n: usize) -> catclust::Result<Vec<usize>> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!("{} not found", path.display())));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let cluster_col = col("cluster").ok_or_else(|| Error::InvalidInput("assignments need a `cluster` column".into()))?;
    let id_col = col("id");
    let k_col = col("k");
    if k_col.is_some() && k.is_none() {
        return Err(Error::InvalidInput("assignments have a `k` column; pass --k".into()));
    }
    let mut out = vec![None; n];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |c: usize, what: &str| -> catclust::Result<usize> {
            rec[c].trim().parse().map_err(|_| Error::Parse {
                column: what.into(),
                row,
                message: format!("`{}` is not a non-negative integer", &rec[c]),
            })
        };
        if let (Some(c), Some(want)) = (k_col, k) {
            if field(c, "k")? != want {
                continue;
            }
        }
        let id = match id_col {
            Some(c) => field(c, "id")?,
            None => row,
        };
        if id >= n {
            return Err(Error::InvalidInput(format!("row id {id} out of range for {n} rows")));
        }
        out[id] = Some(field(cluster_col, "cluster")?);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, a)| a.ok_or_else(|| Error::InvalidInput(format!("no assignment for row {i}"))))
        .collect()
}
