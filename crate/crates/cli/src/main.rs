use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use difac::auxiliary::{fetch_descriptions, ProviderConfig};
use difac::graph::synth::{generate, write_dataset, SynthConfig};
use difac::harness::{report, run, run_method, sweep, AuxSource, ExperimentConfig, Method, RunManifest, SweepKind};
use difac::pseudo::RankStrategy;
use difac::theory::{grid_csv, probability_grid, risk_delta_demo, theory_grid, RiskDemoConfig};

#[derive(Parser)]
#[command(name = "difac", version, about = "Pseudo-labeling with differentiated factors on citation graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured methods over all seeds.
    Train(Overrides),
    /// Repeat a run once per value of one setting and write a tidy CSV.
    Sweep {
        #[arg(long)]
        kind: SweepKind,
        /// Comma-separated values, e.g. `5,10,15,20`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Posterior grid for the exclusion model and the risk-delta demo.
    Theory {
        /// Grid points per axis strictly inside (0,1).
        #[arg(long, default_value_t = 19)]
        steps: usize,
        /// Monte-Carlo trials per grid point; 0 skips simulation.
        #[arg(long, default_value_t = 10_000)]
        mc_trials: u64,
        #[arg(long, default_value_t = 30)]
        risk_seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "theory")]
        out: PathBuf,
    },
    /// Conceit of each configured method, per seed.
    Conceit(Overrides),
    /// Fetch description vectors from a remote provider into a JSONL table.
    FetchAux {
        #[command(flatten)]
        overrides: Overrides,
        /// JSON provider settings; defaults apply when omitted.
        #[arg(long)]
        provider: Option<PathBuf>,
        /// JSON object mapping node id to description text.
        #[arg(long)]
        texts: PathBuf,
        #[arg(long, default_value = "aux.jsonl")]
        output: PathBuf,
    },
    /// Summarize a finished or partial run directory.
    Report {
        #[arg(long, default_value = "runs")]
        dir: PathBuf,
    },
    /// Write a synthetic citation dataset in content/cites format.
    Synth {
        #[arg(long, default_value = "cora")]
        like: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value = "synth")]
        name: String,
    },
}

/// Flags that override keys of the JSON config.
#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    diff_method: Option<String>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    aux: Option<AuxSource>,
    #[arg(long)]
    lambda_acc: Option<f64>,
    #[arg(long)]
    rank_strategy: Option<RankStrategy>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "DIFAC_JOBS")]
    jobs: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if !self.method.is_empty() {
            cfg.methods = self.method.clone();
        }
        if let Some(v) = self.k {
            cfg.factor.k = v;
        }
        if let Some(v) = &self.diff_method {
            cfg.factor.method.kind = v.parse()?;
        }
        if let Some(v) = self.tau0 {
            cfg.loop_config.tau0 = v;
        }
        if let Some(v) = self.iters {
            cfg.loop_config.iterations = v;
        }
        if let Some(v) = &self.aux {
            // keep provider settings from the config file when only `remote` is given
            let keep = matches!((v, &cfg.aux), (AuxSource::Remote { .. }, AuxSource::Remote { .. }));
            if !keep {
                cfg.aux = v.clone();
            }
        }
        if let Some(v) = self.lambda_acc {
            cfg.loop_config.lambda_acc = v;
        }
        if let Some(v) = self.rank_strategy {
            cfg.loop_config.rank_strategy = v;
        }
        if let Some(v) = self.per_class {
            cfg.split.per_class = v;
        }
        if let Some(v) = self.n_val {
            cfg.split.n_val = v;
        }
        if let Some(v) = self.n_test {
            cfg.split.n_test = v;
        }
        if let Some(v) = self.mask_ratio {
            cfg.mask_ratio = v;
        }
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(o) => {
            let cfg = o.resolve()?;
            let manifest = run(&cfg)?;
            print!("{}", report(&manifest, &cfg.out_dir)?);
            let failed = manifest.failures().count();
            if failed > 0 {
                bail!("{failed} run(s) failed; see {}", cfg.out_dir.join(RunManifest::FILE).display());
            }
        }
        Command::Sweep { kind, values, overrides } => {
            let cfg = overrides.resolve()?;
            let path = sweep(kind, &cfg, &values)?;
            println!("{}", path.display());
        }
        Command::Theory { steps, mc_trials, risk_seeds, seed, out } => {
            std::fs::create_dir_all(&out)?;
            let rows = theory_grid(&probability_grid(steps + 1), mc_trials, seed)?;
            let wrong_sign = rows.iter().filter(|r| (r.gain > 0.0) != (r.params.p_e > 0.5) && r.params.p_e != 0.5).count();
            std::fs::write(out.join("posterior_grid.csv"), grid_csv(&rows))?;
            println!("posterior grid: {} points, {wrong_sign} sign exceptions", rows.len());
            let summary = risk_delta_demo(&RiskDemoConfig { seeds: risk_seeds, ..RiskDemoConfig::default() })?;
            std::fs::write(out.join("risk_delta.json"), serde_json::to_string_pretty(&summary)?)?;
            println!(
                "risk delta over {} seeds: wrong {:+.3e}, correct {:+.3e} (mean |correct| {:.3e})",
                summary.runs.len(),
                summary.mean_wrong,
                summary.mean_correct,
                summary.mean_abs_correct
            );
        }
        Command::Conceit(o) => {
            let cfg = o.resolve()?;
            cfg.validate()?;
            let graph = cfg.load_graph()?;
            println!("method,seed,conceit,conceit_sum,misclassified");
            for &method in &cfg.methods {
                for &seed in &cfg.seeds {
                    let out = run_method(&cfg, &graph, method, seed)?;
                    match out.conceit {
                        Some(c) => println!("{},{seed},{:.6},{:.6},{}", method.name(), c.mean, c.sum, c.count),
                        None => println!("{},{seed},,,", method.name()),
                    }
                }
            }
        }
        Command::FetchAux { overrides, provider, texts, output } => {
            let cfg = overrides.resolve()?;
            let provider: ProviderConfig = match provider {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing provider settings {}", p.display()))?,
                None => ProviderConfig::default(),
            };
            let graph = cfg.load_graph()?;
            let texts: HashMap<String, String> = serde_json::from_str(&std::fs::read_to_string(&texts)?)?;
            let table = fetch_descriptions(&provider, &graph, &texts)?;
            table.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&output)?))?;
            println!("{} vectors of dim {} -> {}", table.n(), table.dim(), output.display());
        }
        Command::Report { dir } => {
            let manifest = RunManifest::load(&dir.join(RunManifest::FILE))?;
            print!("{}", report(&manifest, &dir)?);
        }
        Command::Synth { like, seed, out, name } => {
            let cfg = match like.as_str() {
                "cora" => SynthConfig::cora_like(seed),
                "small" => SynthConfig::small(seed),
                other => bail!("unknown synthetic preset {other:?} (cora|small)"),
            };
            let graph = generate(&cfg)?;
            let (content, cites) = write_dataset(&graph, &out, &name)?;
            println!("{} nodes -> {} {}", graph.n(), content.display(), cites.display());
        }
    }
    Ok(())
}
