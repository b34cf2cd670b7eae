use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use super::{baseline_factor, AuxSource, ExperimentConfig, ManifestEntry, Method, RunManifest, RunStatus};
use crate::auxiliary::{build_aux_output, fetch_descriptions, stub_descriptions, AuxVectorTable};
use crate::error::{Error, Result};
use crate::factor::{build_factor_inputs, factor_predict, factor_representations, train_factors, FactorModel, FactorizedInput};
use crate::graph::{mask_features_with, normalize_adjacency, standard_split, CitationGraph};
use crate::metrics::{accuracy, conceit, Conceit, ConceitOptions, MetricsRecord};
use crate::pseudo::{difac_loop, intersection_baseline, self_training_baseline, LoopReport, RankStrategy};

/// Everything one (method, seed) run produced.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub model: FactorModel,
    pub factorized: FactorizedInput,
    pub report: Option<LoopReport>,
    /// Output-factor class for every node.
    pub predicted: Vec<usize>,
    /// Output-factor max-probability for every node.
    pub confidence: Vec<f64>,
    pub test_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Accuracy of the last adopted pseudo-label set.
    pub pseudo_accuracy: Option<f64>,
    pub conceit: Option<Conceit>,
}

fn aux_table(cfg: &ExperimentConfig, graph: &CitationGraph, seed: u64) -> Result<Option<AuxVectorTable>> {
    Ok(match &cfg.aux {
        AuxSource::None => None,
        AuxSource::Stub { accuracy, dim } => Some(stub_descriptions(&graph.labels, graph.c(), *accuracy, *dim, seed)?),
        AuxSource::File { path } => Some(AuxVectorTable::read_jsonl(path, "file")?.aligned_to(graph)?),
        AuxSource::Remote { provider, texts } => {
            let texts: HashMap<String, String> = serde_json::from_str(&std::fs::read_to_string(texts)?)?;
            Some(fetch_descriptions(provider, graph, &texts)?)
        }
    })
}

/// Trains and scores one method on one seed's split.
pub fn run_method(cfg: &ExperimentConfig, graph: &CitationGraph, method: Method, seed: u64) -> Result<MethodOutcome> {
    let graph: Cow<'_, CitationGraph> = if cfg.mask_ratio > 0.0 {
        Cow::Owned(mask_features_with(graph, cfg.mask_ratio, seed, cfg.mask_mode))
    } else {
        Cow::Borrowed(graph)
    };
    let graph = graph.as_ref();
    let masks = standard_split(graph, cfg.split.per_class, cfg.split.n_val, cfg.split.n_test, seed)?;
    let adj = normalize_adjacency(graph);
    let (train_cfg, difac_factor) = cfg.for_seed(seed);
    let factor_cfg = if method == Method::Difac { difac_factor } else { baseline_factor() };
    let factorized = build_factor_inputs(&graph.features, graph.c(), &factor_cfg)?;

    let (model, report) = match method {
        Method::Gcn => (train_factors(graph, &adj, &factorized, &masks, &train_cfg)?.0, None),
        Method::SelfTrain => {
            let (m, r) = self_training_baseline(graph, &masks, &factor_cfg, &cfg.loop_config, &train_cfg)?;
            (m, Some(r))
        }
        Method::Intersection => {
            let (m, r) = intersection_baseline(graph, &masks, &factor_cfg, &cfg.loop_config, &train_cfg)?;
            (m, Some(r))
        }
        Method::Difac => {
            let aux = match aux_table(cfg, graph, seed)? {
                Some(table) => Some(build_aux_output(graph, &adj, &table, &masks, &train_cfg)?),
                None => None,
            };
            let (m, r) = difac_loop(graph, &masks, &factor_cfg, &cfg.loop_config, &train_cfg, aux.as_ref())?;
            (m, Some(r))
        }
    };

    let all: Vec<usize> = (0..graph.n()).collect();
    let preds = factor_predict(&model, &adj, &factorized, &all)?;
    let output = preds.most_consistent_factor();
    let predicted = preds.predicted_classes(output);
    let confidence: Vec<f64> = (0..graph.n()).map(|r| preds.max_prob(r, output) as f64).collect();
    let score = |mask: &[usize]| (!mask.is_empty()).then(|| accuracy(&predicted, &graph.labels, mask)).transpose();
    let test_accuracy = score(&masks.test)?;
    let val_accuracy = score(&masks.val)?;

    let z = factor_representations(&model, &adj.to_f32(), &factorized, 0)?;
    let opts = ConceitOptions { min_confidence: cfg.conceit_threshold };
    let conceit = match conceit(&z, &predicted, &graph.labels, &masks.test, Some(&confidence), &opts) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("{} seed {seed}: conceit unavailable: {e}", method.name());
            None
        }
    };
    let pseudo_accuracy = report
        .as_ref()
        .and_then(|r| r.rounds.iter().rev().find_map(|round| round.pseudo_accuracy));
    Ok(MethodOutcome {
        model,
        factorized,
        report,
        predicted,
        confidence,
        test_accuracy,
        val_accuracy,
        pseudo_accuracy,
        conceit,
    })
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs every (method, seed) pair not already completed under this config
/// digest, then writes records, the CSV index and the manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let records_dir = cfg.out_dir.join("records");
    std::fs::create_dir_all(&records_dir)?;
    let index = cfg.out_dir.join("index.csv");
    let previous = RunManifest::load(&cfg.out_dir.join(RunManifest::FILE))
        .ok()
        .filter(|m| m.config_digest == digest);

    let tasks: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pending: Vec<usize> = (0..tasks.len())
        .filter(|&i| {
            let (m, s) = tasks[i];
            let path = records_dir.join(format!("{}.json", run_id(&digest, m, s)));
            !MetricsRecord::read_json(&path).is_ok_and(|r| r.error.is_none())
        })
        .collect();

    let graph = if pending.is_empty() { None } else { Some(cfg.load_graph()?) };
    let queue = Mutex::new(pending.into_iter());
    let jobs = cfg.jobs.max(1);
    let failed: Mutex<BTreeMap<usize, String>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| -> Result<()> {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                s.spawn(|| -> Result<()> {
                    loop {
                        let Some(i) = queue.lock().expect("queue poisoned").next() else {
                            return Ok(());
                        };
                        let (method, seed) = tasks[i];
                        let graph = graph.as_ref().expect("graph loaded when work is pending");
                        let id = run_id(&digest, method, seed);
                        log::info!("running {id}");
                        let record = match run_method(cfg, graph, method, seed) {
                            Ok(out) => MetricsRecord {
                                run_id: id.clone(),
                                dataset: cfg.dataset.clone(),
                                method: method.name().into(),
                                seed,
                                config_digest: digest.clone(),
                                test_accuracy: out.test_accuracy,
                                val_accuracy: out.val_accuracy,
                                pseudo_accuracy: out.pseudo_accuracy,
                                conceit: out.conceit.map(|c| c.mean),
                                conceit_sum: out.conceit.map(|c| c.sum),
                                traces: out.report.map(|r| r.rounds).unwrap_or_default(),
                                error: None,
                            },
                            Err(e) => {
                                log::error!("{id} failed: {e}");
                                failed.lock().expect("poisoned").insert(i, e.to_string());
                                MetricsRecord {
                                    run_id: id.clone(),
                                    dataset: cfg.dataset.clone(),
                                    method: method.name().into(),
                                    seed,
                                    config_digest: digest.clone(),
                                    error: Some(e.to_string()),
                                    ..Default::default()
                                }
                            }
                        };
                        record.write_json(&records_dir.join(format!("{id}.json")))?;
                        record.append_to_index(&index)?;
                    }
                })
            })
            .collect();
        for w in workers {
            w.join().expect("worker panicked")?;
        }
        Ok(())
    })?;

    let failed = failed.into_inner().expect("poisoned");
    let entries = tasks
        .iter()
        .enumerate()
        .map(|(i, &(method, seed))| {
            let id = run_id(&digest, method, seed);
            let record = PathBuf::from("records").join(format!("{id}.json"));
            let error = failed.get(&i).cloned().or_else(|| {
                MetricsRecord::read_json(&cfg.out_dir.join(&record))
                    .ok()
                    .and_then(|r| r.error)
            });
            ManifestEntry {
                method,
                seed,
                run_id: id,
                record,
                status: if error.is_some() { RunStatus::Failed } else { RunStatus::Ok },
                error,
            }
        })
        .collect();
    let manifest = RunManifest {
        config_digest: digest,
        code_version: env!("CARGO_PKG_VERSION").into(),
        created: previous.map_or_else(now, |p| p.created),
        config: cfg.clone(),
        entries,
    };
    manifest.write(&cfg.out_dir)?;
    Ok(manifest)
}

fn run_id(digest: &str, method: Method, seed: u64) -> String {
    format!("{}-{}-s{seed}", &digest[..12], method.name())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    LabelRate,
    FactorCount,
    Mask,
    Tau,
    RankStrategy,
    DiffMethod,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::LabelRate => "label_rate",
            SweepKind::FactorCount => "factor_count",
            SweepKind::Mask => "mask",
            SweepKind::Tau => "tau",
            SweepKind::RankStrategy => "rank_strategy",
            SweepKind::DiffMethod => "diff_method",
        }
    }

    /// `base` with the swept setting replaced by `value`.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let bad = || Error::Config(format!("invalid {} value {value:?}", self.name()));
        match self {
            SweepKind::LabelRate => cfg.split.per_class = value.parse().map_err(|_| bad())?,
            SweepKind::FactorCount => cfg.factor.k = value.parse().map_err(|_| bad())?,
            SweepKind::Mask => cfg.mask_ratio = value.parse().map_err(|_| bad())?,
            SweepKind::Tau => cfg.loop_config.tau0 = value.parse().map_err(|_| bad())?,
            SweepKind::RankStrategy => cfg.loop_config.rank_strategy = RankStrategy::from_str(value)?,
            SweepKind::DiffMethod => cfg.factor.method.kind = value.parse()?,
        }
        cfg.out_dir = base.out_dir.join(format!("{}-{value}", self.name()));
        Ok(cfg)
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "label_rate" => SweepKind::LabelRate,
            "factor_count" => SweepKind::FactorCount,
            "mask" => SweepKind::Mask,
            "tau" => SweepKind::Tau,
            "rank_strategy" => SweepKind::RankStrategy,
            "diff_method" => SweepKind::DiffMethod,
            other => return Err(Error::Config(format!("unknown sweep kind {other:?}"))),
        })
    }
}

/// Runs `base` once per value and writes a tidy CSV sorted by value, method
/// and seed. Returns the CSV path.
pub fn sweep(kind: SweepKind, base: &ExperimentConfig, values: &[String]) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<ExperimentConfig> = values.iter().map(|v| kind.apply(base, v)).collect::<Result<_>>()?;
    for c in &configs {
        c.validate()?;
    }
    let mut rows: Vec<(String, MetricsRecord)> = Vec::new();
    for (value, cfg) in values.iter().zip(&configs) {
        let manifest = run(cfg)?;
        for e in &manifest.entries {
            let record = MetricsRecord::read_json(&cfg.out_dir.join(&e.record))?;
            rows.push((value.clone(), record));
        }
    }
    rows.sort_by(|(va, a), (vb, b)| {
        let num = |v: &str| v.parse::<f64>().unwrap_or(f64::NAN);
        num(va)
            .total_cmp(&num(vb))
            .then_with(|| va.cmp(vb))
            .then_with(|| a.method.cmp(&b.method))
            .then(a.seed.cmp(&b.seed))
    });
    std::fs::create_dir_all(&base.out_dir)?;
    let path = base.out_dir.join(format!("sweep-{}.csv", kind.name()));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io(e.into()))?;
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record([
        "kind",
        "value",
        "method",
        "seed",
        "test_accuracy",
        "val_accuracy",
        "pseudo_accuracy",
        "conceit",
        "error",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for (value, r) in &rows {
        w.write_record([
            kind.name().to_string(),
            value.clone(),
            r.method.clone(),
            r.seed.to_string(),
            opt(r.test_accuracy),
            opt(r.val_accuracy),
            opt(r.pseudo_accuracy),
            opt(r.conceit),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Per-method mean ± std over seeds (percent), deltas against `gcn`, and a
/// list of failed seeds. `dir` is where the manifest lives.
pub fn report(manifest: &RunManifest, dir: &Path) -> Result<String> {
    let mut by_method: BTreeMap<Method, Vec<MetricsRecord>> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| e.status == RunStatus::Ok) {
        match MetricsRecord::read_json(&dir.join(&e.record)) {
            Ok(r) => by_method.entry(e.method).or_default().push(r),
            Err(err) => log::warn!("record {} unreadable: {err}", e.record.display()),
        }
    }
    let test_of = |rs: &[MetricsRecord]| -> Vec<f64> { rs.iter().filter_map(|r| r.test_accuracy).map(|a| a * 100.0).collect() };
    let baseline = by_method.get(&Method::Gcn).map(|rs| mean_std(&test_of(rs)).0);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "dataset {}  config {}  seeds {:?}",
        manifest.config.dataset,
        &manifest.config_digest[..12],
        manifest.config.seeds
    );
    let _ = writeln!(out, "{:<14}{:>18}{:>12}{:>16}{:>12}{:>6}", "method", "test acc (%)", "vs gcn", "pseudo acc (%)", "conceit", "n");
    for (method, rs) in &by_method {
        let acc = test_of(rs);
        if acc.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&acc);
        let delta = match baseline {
            Some(b) if *method != Method::Gcn => {
                let d = m - b;
                format!("{}{:.2}", if d >= 0.0 { "↑" } else { "↓" }, d.abs())
            }
            _ => "-".into(),
        };
        let pseudo: Vec<f64> = rs.iter().filter_map(|r| r.pseudo_accuracy).map(|a| a * 100.0).collect();
        let pseudo = if pseudo.is_empty() { "-".into() } else { format!("{:.2}", mean_std(&pseudo).0) };
        let conceit: Vec<f64> = rs.iter().filter_map(|r| r.conceit).collect();
        let conceit = if conceit.is_empty() { "-".into() } else { format!("{:.4}", mean_std(&conceit).0) };
        let _ = writeln!(
            out,
            "{:<14}{:>18}{:>12}{:>16}{:>12}{:>6}",
            method.name(),
            format!("{m:.2} ± {s:.2}"),
            delta,
            pseudo,
            conceit,
            acc.len()
        );
    }
    let failures: Vec<&ManifestEntry> = manifest.failures().collect();
    if !failures.is_empty() {
        let _ = writeln!(out, "failed runs:");
        for f in failures {
            let _ = writeln!(
                out,
                "  {} seed {}: {}",
                f.method.name(),
                f.seed,
                f.error.as_deref().unwrap_or("unknown error")
            );
        }
    }
    Ok(out)
}
