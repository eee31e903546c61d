//! Run configuration and the command implementations behind the binary.
//!
//! A configuration file holds one `key=value` pair per line; `#` starts a
//! comment. [`RunConfig::to_text`] writes every key, so its output fully
//! reproduces a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::{self, ExperimentConfig, RunReport};
use crate::checkpoint;
use crate::classifier;
use crate::data::{self, Dataset, DelimitedSchema, SyntheticSpec};
use crate::error::{Error, Result};
use crate::exemplar::HerdingMode;
use crate::net::TrainConfig;
use crate::strategy::{strategy_for, ClassifierKind};
use crate::svg;
use crate::trainer::{self, BatchClass, ClassBatch, LearnerState};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "INCRLEARN_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// A delimited file with a split column, or a train file plus a test file.
    File { path: PathBuf, test: Option<PathBuf> },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        let ds = match self {
            DatasetSource::Synthetic(spec) => data::gen_synthetic(spec)?,
            DatasetSource::File { path, test: None } => data::load_delimited(path, &DelimitedSchema::default())?,
            DatasetSource::File { path, test: Some(t) } => data::load_delimited_pair(path, t, b',')?,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategies: Vec<String>,
    pub dataset: DatasetSource,
    pub batch_size: usize,
    pub seed: u64,
    pub repeats: usize,
    pub experiment: ExperimentConfig,
    /// Budgets for `sweep`.
    pub k_values: Vec<usize>,
    pub out_dir: PathBuf,
    pub plot: bool,
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategies: vec!["icarl".into()],
            dataset: DatasetSource::Synthetic(SyntheticSpec::toy_ibench(0)),
            batch_size: 2,
            seed: 1,
            repeats: 10,
            experiment: ExperimentConfig::desk_default(),
            k_values: vec![20, 50, 100, 200, 2000],
            out_dir: PathBuf::from("results"),
            plot: false,
            timing: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: '{value}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad value for {key}: '{value}'"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    fn synthetic_mut(&mut self, key: &str) -> Result<&mut SyntheticSpec> {
        match &mut self.dataset {
            DatasetSource::Synthetic(s) => Ok(s),
            DatasetSource::File { .. } => Err(Error::InvalidConfig(format!(
                "{key} needs a synthetic dataset"
            ))),
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "strategy" => {
                let names: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                for n in &names {
                    strategy_for(n)?;
                }
                self.strategies = names;
            }
            "dataset" => {
                self.dataset = match value {
                    "toy-ibench" => DatasetSource::Synthetic(SyntheticSpec::toy_ibench(0)),
                    "synthetic" => match &self.dataset {
                        DatasetSource::Synthetic(_) => self.dataset.clone(),
                        DatasetSource::File { .. } => DatasetSource::Synthetic(SyntheticSpec::toy_ibench(0)),
                    },
                    path => DatasetSource::File {
                        path: PathBuf::from(path),
                        test: None,
                    },
                }
            }
            "test_file" => match &mut self.dataset {
                DatasetSource::File { test, .. } => {
                    *test = (!value.is_empty()).then(|| PathBuf::from(value));
                }
                DatasetSource::Synthetic(_) => {
                    if !value.is_empty() {
                        return Err(Error::InvalidConfig("test_file needs a dataset file".into()));
                    }
                }
            },
            "synthetic.classes" => self.synthetic_mut(key)?.classes = parse_num(key, value)?,
            "synthetic.dim" => self.synthetic_mut(key)?.dim = parse_num(key, value)?,
            "synthetic.modes" => self.synthetic_mut(key)?.modes_per_class = parse_num(key, value)?,
            "synthetic.separation" => self.synthetic_mut(key)?.separation = parse_num(key, value)?,
            "synthetic.noise" => self.synthetic_mut(key)?.noise = parse_num(key, value)?,
            "synthetic.train" => self.synthetic_mut(key)?.train_per_class = parse_num(key, value)?,
            "synthetic.test" => self.synthetic_mut(key)?.test_per_class = parse_num(key, value)?,
            "synthetic.seed" => self.synthetic_mut(key)?.seed = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "repeats" => self.repeats = parse_num(key, value)?,
            "memory_k" => self.experiment.memory_k = parse_num(key, value)?,
            "k_values" => self.k_values = parse_list(key, value)?,
            "hidden" => self.experiment.hidden = parse_list(key, value)?,
            "feature_dim" => self.experiment.feature_dim = parse_num(key, value)?,
            "herding" => {
                self.experiment.herding = match value {
                    "without-replacement" => HerdingMode::WithoutReplacement,
                    "with-replacement" => HerdingMode::WithReplacement,
                    _ => return Err(Error::InvalidConfig(format!("bad value for herding: '{value}'"))),
                }
            }
            "epochs" => {
                // Drop epochs follow the epoch count unless set afterwards.
                let epochs = parse_num(key, value)?;
                let train = &mut self.experiment.train;
                train.epochs = epochs;
                train.lr_drop_epochs = TrainConfig::with_epochs(epochs).lr_drop_epochs;
            }
            "minibatch_size" => self.experiment.train.minibatch_size = parse_num(key, value)?,
            "learning_rate" => self.experiment.train.base_learning_rate = parse_num(key, value)?,
            "lr_drop_epochs" => self.experiment.train.lr_drop_epochs = parse_list(key, value)?,
            "lr_drop_factor" => self.experiment.train.lr_drop_factor = parse_num(key, value)?,
            "weight_decay" => self.experiment.train.weight_decay = parse_num(key, value)?,
            "shuffle_seed" => self.experiment.train.shuffle_seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "plot" => self.plot = parse_bool(key, value)?,
            "timing" => self.timing = parse_bool(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                message: format!("expected key=value, found '{line}'"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        RunConfig::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Every setting, in a form [`from_text`](Self::from_text) reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("strategy", self.strategies.join(","));
        match &self.dataset {
            DatasetSource::Synthetic(d) => {
                kv("dataset", "synthetic".into());
                kv("synthetic.classes", d.classes.to_string());
                kv("synthetic.dim", d.dim.to_string());
                kv("synthetic.modes", d.modes_per_class.to_string());
                kv("synthetic.separation", d.separation.to_string());
                kv("synthetic.noise", d.noise.to_string());
                kv("synthetic.train", d.train_per_class.to_string());
                kv("synthetic.test", d.test_per_class.to_string());
                kv("synthetic.seed", d.seed.to_string());
            }
            DatasetSource::File { path, test } => {
                kv("dataset", path.display().to_string());
                kv(
                    "test_file",
                    test.as_ref().map(|t| t.display().to_string()).unwrap_or_default(),
                );
            }
        }
        let e = &self.experiment;
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("repeats", self.repeats.to_string());
        kv("memory_k", e.memory_k.to_string());
        kv("k_values", join(&self.k_values));
        kv("hidden", join(&e.hidden));
        kv("feature_dim", e.feature_dim.to_string());
        kv(
            "herding",
            match e.herding {
                HerdingMode::WithoutReplacement => "without-replacement",
                HerdingMode::WithReplacement => "with-replacement",
            }
            .into(),
        );
        kv("epochs", e.train.epochs.to_string());
        kv("minibatch_size", e.train.minibatch_size.to_string());
        kv("learning_rate", e.train.base_learning_rate.to_string());
        kv("lr_drop_epochs", join(&e.train.lr_drop_epochs));
        kv("lr_drop_factor", e.train.lr_drop_factor.to_string());
        kv("weight_decay", e.train.weight_decay.to_string());
        kv("shuffle_seed", e.train.shuffle_seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("plot", self.plot.to_string());
        kv("timing", self.timing.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategy given".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        self.experiment.train.validate()?;
        self.experiment.net_spec(2)?;
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn confusion_csv(m: &bench::ConfusionMatrix) -> String {
    let mut s = String::new();
    for row in &m.counts {
        let _ = writeln!(s, "{}", join(row));
    }
    s
}

/// Confusion counts summed over repeats, indexed by arrival position.
fn pooled_confusion(reports: &[RunReport]) -> Option<bench::ConfusionMatrix> {
    let ok: Vec<&RunReport> = reports.iter().filter(|r| r.failure.is_none()).collect();
    let n = ok.first()?.confusion.size();
    let mut total = bench::ConfusionMatrix::zeros(n);
    for r in ok.iter().filter(|r| r.confusion.size() == n) {
        for (i, row) in r.confusion.counts.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                total.counts[i][j] += c;
            }
        }
    }
    Some(total)
}

/// What a command wants printed, and whether it succeeded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub stdout: String,
    pub stderr: String,
    pub success: bool,
}

impl CommandOutput {
    fn ok(stdout: String) -> Self {
        CommandOutput {
            stdout,
            stderr: String::new(),
            success: true,
        }
    }
}

/// Benchmark run: writes `accuracy.csv`, `summary.csv`, `average.csv`,
/// `confusion_<strategy>.csv` and `config.txt` into the output directory.
/// Fails when any repeat failed, after writing what completed.
pub fn cmd_run(cfg: &RunConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ds = cfg.dataset.load()?;
    let names: Vec<&str> = cfg.strategies.iter().map(String::as_str).collect();
    let strategies = bench::resolve_strategies(&names)?;
    let reports = bench::evaluate_strategies(&strategies, &ds, cfg.batch_size, cfg.seed, &cfg.experiment, cfg.repeats)?;

    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;

    let mut acc = String::from("strategy,seed,step,t,accuracy\n");
    let mut timing = String::from("strategy,seed,step,t,wall_ms\n");
    let mut summary = String::from("strategy,step,t,mean_accuracy,std_accuracy\n");
    let mut average = String::from("strategy,mean_average_incremental_accuracy,std,mean_final_accuracy,failures\n");
    let mut stdout = String::new();
    let mut stderr = String::new();
    let mut series_data = Vec::new();

    for reps in &reports {
        for r in reps {
            for (step, (&a, &t)) in r.accuracies.iter().zip(&r.classes_seen).enumerate() {
                let _ = writeln!(acc, "{},{},{},{},{}", r.strategy, r.seed, step + 1, t, a);
                let _ = writeln!(timing, "{},{},{},{},{:.3}", r.strategy, r.seed, step + 1, t, r.wall_ms[step]);
            }
            if let Some(f) = &r.failure {
                let _ = writeln!(stderr, "{} (seed {}): {f}", r.strategy, r.seed);
            }
        }
        let s = bench::summarize(reps);
        for (step, ((m, sd), t)) in s.mean_curve.iter().zip(&s.std_curve).zip(&s.classes_seen).enumerate() {
            let _ = writeln!(summary, "{},{},{},{},{}", s.strategy, step + 1, t, m, sd);
        }
        let finals: Vec<f64> = reps
            .iter()
            .filter(|r| r.failure.is_none())
            .map(RunReport::final_accuracy)
            .collect();
        let (final_mean, _) = bench::mean_std(&finals);
        let _ = writeln!(
            average,
            "{},{},{},{},{}",
            s.strategy, s.mean_average, s.std_average, final_mean, s.failures
        );
        let _ = writeln!(
            stdout,
            "{:<12} average incremental accuracy {:.4} +- {:.4}, final {:.4}",
            s.strategy, s.mean_average, s.std_average, final_mean
        );
        if let Some(m) = pooled_confusion(reps) {
            write_file(&out.join(format!("confusion_{}.csv", s.strategy)), &confusion_csv(&m))?;
            if cfg.plot {
                write_file(
                    &out.join(format!("confusion_{}.svg", s.strategy)),
                    &svg::heatmap(&format!("{} confusion, log(1+x)", s.strategy), &m.log_scaled()),
                )?;
            }
        }
        series_data.push(s);
    }
    write_file(&out.join("accuracy.csv"), &acc)?;
    write_file(&out.join("summary.csv"), &summary)?;
    write_file(&out.join("average.csv"), &average)?;
    if cfg.timing {
        write_file(&out.join("timing.csv"), &timing)?;
    }
    if cfg.plot {
        let xs: Vec<Vec<f64>> = series_data
            .iter()
            .map(|s| s.classes_seen.iter().map(|&t| t as f64).collect())
            .collect();
        let series: Vec<svg::Series<'_>> = series_data
            .iter()
            .zip(&xs)
            .map(|(s, x)| svg::Series {
                name: &s.strategy,
                x,
                y: &s.mean_curve,
            })
            .collect();
        write_file(
            &out.join("accuracy.svg"),
            &svg::line_plot("Multi-class accuracy", "Number of classes", &series),
        )?;
    }
    Ok(CommandOutput {
        stdout,
        success: stderr.is_empty(),
        stderr,
    })
}

/// Memory sweep: one `sweep_<strategy>.csv` per strategy with a row per K.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ds = cfg.dataset.load()?;
    let names: Vec<&str> = cfg.strategies.iter().map(String::as_str).collect();
    let strategies = bench::resolve_strategies(&names)?;
    let points = bench::memory_sweep(
        &strategies,
        &ds,
        cfg.batch_size,
        cfg.seed,
        &cfg.experiment,
        &cfg.k_values,
        cfg.repeats,
    )?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;
    let mut stdout = String::new();
    let mut series_data = Vec::new();
    for (name, _) in &strategies {
        let mine: Vec<&bench::SweepPoint> = points.iter().filter(|p| &p.strategy == name).collect();
        let mut csv = String::from("memory_k,mean_average_incremental_accuracy,std,repeats\n");
        for p in &mine {
            let _ = writeln!(csv, "{},{},{},{}", p.memory_k, p.mean, p.std, p.per_repeat.len());
            let _ = writeln!(stdout, "{name:<12} K={:<6} {:.4} +- {:.4}", p.memory_k, p.mean, p.std);
        }
        write_file(&out.join(format!("sweep_{name}.csv")), &csv)?;
        series_data.push((
            name.as_str(),
            mine.iter().map(|p| p.memory_k as f64).collect::<Vec<_>>(),
            mine.iter().map(|p| p.mean).collect::<Vec<_>>(),
        ));
    }
    if cfg.plot {
        let series: Vec<svg::Series<'_>> = series_data
            .iter()
            .map(|(n, x, y)| svg::Series { name: n, x, y })
            .collect();
        write_file(
            &out.join("sweep.svg"),
            &svg::line_plot("Average incremental accuracy", "Memory budget K", &series),
        )?;
    }
    Ok(CommandOutput::ok(stdout))
}

/// Loads a checkpoint, validating every invariant, and describes it.
pub fn cmd_inspect(path: impl AsRef<Path>) -> Result<CommandOutput> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let state = checkpoint::from_bytes(&bytes)?;
    let p = &state.params;
    let mut s = String::new();
    let _ = writeln!(s, "format version: {}", checkpoint::FORMAT_VERSION);
    let _ = writeln!(s, "bytes: {}", bytes.len());
    let _ = writeln!(s, "classes (t): {}", state.num_classes());
    let _ = writeln!(s, "steps completed: {}", state.step_index);
    let _ = writeln!(s, "seed: {}", state.seed);
    let _ = writeln!(
        s,
        "network: input {} hidden {:?} feature {}",
        p.spec.input_dim, p.spec.hidden, p.spec.feature_dim
    );
    let _ = writeln!(s, "parameters: feature {} total {}", p.feature_param_count(), p.param_count());
    match &state.memory {
        None => {
            let _ = writeln!(s, "memory: none");
        }
        Some(mem) => {
            let _ = writeln!(s, "memory budget (K): {}", mem.budget());
            let _ = writeln!(s, "exemplars stored: {}", mem.total());
            for l in mem.lists() {
                let label = state.registry.label(l.class_id).unwrap_or("?");
                let _ = writeln!(s, "  class {} ({label}): {}", l.class_id, l.len());
            }
        }
    }
    Ok(CommandOutput::ok(s))
}

/// Writes a synthetic dataset as a delimited file with a split column.
pub fn cmd_gen_data(spec: &SyntheticSpec, path: impl AsRef<Path>) -> Result<CommandOutput> {
    let ds = data::gen_synthetic(spec)?;
    data::write_delimited(&ds, path.as_ref())?;
    Ok(CommandOutput::ok(format!(
        "wrote {} classes, {} train / {} test samples to {}\n",
        ds.num_classes(),
        ds.train_count(),
        ds.test_count(),
        path.as_ref().display()
    )))
}

/// One incremental step across invocations: loads the checkpoint (or starts
/// fresh when it does not exist), trains on the named classes, saves, and
/// reports test accuracy over every class seen so far.
pub fn cmd_learn(cfg: &RunConfig, checkpoint_path: &Path, labels: &[String]) -> Result<CommandOutput> {
    cfg.validate()?;
    let [strategy_name] = cfg.strategies.as_slice() else {
        return Err(Error::InvalidConfig("learn takes exactly one strategy".into()));
    };
    let strategy = strategy_for(strategy_name)?;
    if strategy.classifier == ClassifierKind::Ncm {
        return Err(Error::InvalidConfig(
            "ncm needs all past training data and cannot resume from a checkpoint".into(),
        ));
    }
    let ds = cfg.dataset.load()?;
    let state = if checkpoint_path.exists() {
        checkpoint::load_checkpoint(checkpoint_path)?
    } else {
        let mut s = LearnerState::for_strategy(
            &cfg.experiment.net_spec(ds.input_dim)?,
            &strategy,
            cfg.experiment.memory_k,
            cfg.seed,
        )?;
        s.herding = cfg.experiment.herding;
        s
    };
    if state.params.spec.input_dim != ds.input_dim {
        return Err(Error::Shape {
            context: "dataset input dimension",
            expected: state.params.spec.input_dim,
            got: ds.input_dim,
        });
    }
    let mut classes = Vec::new();
    for l in labels {
        let c = ds
            .class_index(l)
            .ok_or_else(|| Error::InvalidConfig(format!("class '{l}' is not in the dataset")))?;
        classes.push(BatchClass {
            label: &ds.classes[c].label,
            samples: &ds.classes[c].train,
        });
    }
    let state = trainer::advance(state, &strategy, &ClassBatch::new(classes), &cfg.experiment.train)?;
    checkpoint::save_checkpoint(&state, checkpoint_path)?;

    let protos = match strategy.classifier {
        ClassifierKind::MeanOfExemplars => Some(state.prototypes()?),
        _ => None,
    };
    let (mut hits, mut total) = (0usize, 0usize);
    for (id, label) in state.registry.labels().iter().enumerate() {
        let Some(c) = ds.class_index(label) else { continue };
        for x in &ds.classes[c].test {
            let y = match &protos {
                Some(p) => classifier::classify(x, p, &state.params)?,
                None => classifier::classify_by_network(x, &state.params)?,
            };
            hits += usize::from(y == id);
            total += 1;
        }
    }
    let mut s = format!(
        "step {} done, {} classes, saved {}\n",
        state.step_index,
        state.num_classes(),
        checkpoint_path.display()
    );
    if total > 0 {
        let _ = writeln!(s, "test accuracy on seen classes: {:.4} ({hits}/{total})", hits as f64 / total as f64);
    }
    Ok(CommandOutput::ok(s))
}

/// Worker thread cap from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}
