//! Class-incremental evaluation protocol.
//!
//! Classes are put in a seeded random order and fed to a learner in
//! consecutive batches. After every batch the learner is tested on the test
//! samples of all classes seen so far. Repeats use different orders.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;

use crate::classifier::{self, PrototypeSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exemplar::HerdingMode;
use crate::math::{derive_seed, RngStream};
use crate::net::{ModelParams, NetSpec, TrainConfig};
use crate::strategy::{strategy_for, ClassifierKind, StrategySpec};
use crate::trainer::{self, BatchClass, ClassBatch, LearnerState};

const LEARNER_TAG: u64 = 0x4c45_4152;

/// Seeded class order cut into consecutive batches; the last batch may be
/// smaller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSchedule {
    pub order: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl ClassSchedule {
    pub fn batches(&self) -> std::slice::Chunks<'_, usize> {
        self.order.chunks(self.batch_size)
    }

    pub fn num_steps(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Internal-id range of every batch.
    pub fn batch_bounds(&self) -> Vec<Range<usize>> {
        (0..self.num_steps())
            .map(|s| s * self.batch_size..((s + 1) * self.batch_size).min(self.order.len()))
            .collect()
    }
}

pub fn make_schedule(num_classes: usize, batch_size: usize, seed: u64) -> Result<ClassSchedule> {
    if num_classes == 0 || batch_size == 0 || batch_size > num_classes {
        return Err(Error::InvalidConfig(format!(
            "batch size {batch_size} must be in 1..={num_classes}"
        )));
    }
    Ok(ClassSchedule {
        order: RngStream::new(seed).permutation(num_classes),
        batch_size,
        seed,
    })
}

pub trait Predict {
    /// Predicted internal class id.
    fn predict(&self, x: &[f64]) -> Result<usize>;

    /// Class ids from most to least likely.
    fn rank(&self, x: &[f64]) -> Result<Vec<usize>> {
        Ok(vec![self.predict(x)?])
    }
}

/// A learner driven by the protocol. Internal class ids must follow arrival
/// order. A learner may expose several readouts (classification rules) over
/// one training trajectory.
pub trait IncrementalLearner {
    fn observe(&mut self, batch: &ClassBatch<'_>) -> Result<()>;
    fn readouts(&self) -> Vec<String>;
    fn predictors(&self) -> Result<Vec<Box<dyn Predict + '_>>>;
}

pub struct PrototypePredictor<'a> {
    pub prototypes: PrototypeSet,
    pub params: &'a ModelParams,
}

impl Predict for PrototypePredictor<'_> {
    fn predict(&self, x: &[f64]) -> Result<usize> {
        classifier::classify(x, &self.prototypes, self.params)
    }

    fn rank(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.prototypes.ranking(&self.params.extract_features(x)?)
    }
}

pub struct NetworkPredictor<'a> {
    pub params: &'a ModelParams,
}

impl Predict for NetworkPredictor<'_> {
    fn predict(&self, x: &[f64]) -> Result<usize> {
        classifier::classify_by_network(x, self.params)
    }

    fn rank(&self, x: &[f64]) -> Result<Vec<usize>> {
        classifier::rank_by_network(x, self.params)
    }
}

/// Everything needed to build a learner besides its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub train: TrainConfig,
    pub memory_k: usize,
    pub herding: HerdingMode,
}

impl ExperimentConfig {
    /// Settings used for the toy benchmark.
    pub fn desk_default() -> Self {
        let mut train = TrainConfig::with_epochs(30);
        train.minibatch_size = 32;
        train.base_learning_rate = 0.5;
        ExperimentConfig {
            hidden: vec![64],
            feature_dim: 32,
            train,
            memory_k: 100,
            herding: HerdingMode::WithoutReplacement,
        }
    }

    pub fn net_spec(&self, input_dim: usize) -> Result<NetSpec> {
        NetSpec::new(input_dim, self.hidden.clone(), self.feature_dim)
    }
}

/// Strategies sharing one training trajectory, each read out with its own
/// classifier.
pub struct StrategyLearner {
    names: Vec<String>,
    specs: Vec<StrategySpec>,
    state: Option<LearnerState>,
    train: TrainConfig,
    /// All training data seen so far, kept only for nearest-class-mean readouts.
    retained: Option<Vec<Vec<Vec<f64>>>>,
}

impl StrategyLearner {
    pub fn new(
        strategies: &[(String, StrategySpec)],
        input_dim: usize,
        cfg: &ExperimentConfig,
        seed: u64,
    ) -> Result<Self> {
        let (_, lead) = strategies.first().ok_or(Error::EmptyInput("strategies"))?;
        if let Some((name, _)) = strategies.iter().find(|(_, s)| !s.same_training(lead)) {
            return Err(Error::InvalidConfig(format!(
                "strategy '{name}' does not share the training of '{}'",
                strategies[0].0
            )));
        }
        let mut state = LearnerState::for_strategy(&cfg.net_spec(input_dim)?, lead, cfg.memory_k, seed)?;
        state.herding = cfg.herding;
        Ok(StrategyLearner {
            names: strategies.iter().map(|(n, _)| n.clone()).collect(),
            specs: strategies.iter().map(|(_, s)| *s).collect(),
            state: Some(state),
            train: cfg.train.clone(),
            retained: strategies
                .iter()
                .any(|(_, s)| s.retains_training_data())
                .then(Vec::new),
        })
    }

    pub fn state(&self) -> &LearnerState {
        self.state.as_ref().expect("state present between steps")
    }
}

impl IncrementalLearner for StrategyLearner {
    fn observe(&mut self, batch: &ClassBatch<'_>) -> Result<()> {
        let state = self
            .state
            .take()
            .ok_or_else(|| Error::InvalidConfig("learner failed in an earlier step".into()))?;
        self.state = Some(trainer::advance(state, &self.specs[0], batch, &self.train)?);
        if let Some(retained) = &mut self.retained {
            retained.extend(batch.classes.iter().map(|c| c.samples.to_vec()));
        }
        Ok(())
    }

    fn readouts(&self) -> Vec<String> {
        self.names.clone()
    }

    fn predictors(&self) -> Result<Vec<Box<dyn Predict + '_>>> {
        let state = self.state();
        let params = &state.params;
        self.specs
            .iter()
            .map(|spec| -> Result<Box<dyn Predict + '_>> {
                Ok(match spec.classifier {
                    ClassifierKind::NetworkOutput => Box::new(NetworkPredictor { params }),
                    ClassifierKind::MeanOfExemplars => Box::new(PrototypePredictor {
                        prototypes: state.prototypes()?,
                        params,
                    }),
                    ClassifierKind::Ncm => Box::new(PrototypePredictor {
                        prototypes: classifier::ncm_prototypes(
                            self.retained.as_deref().unwrap_or_default(),
                            params,
                        )?,
                        params,
                    }),
                })
            })
            .collect()
    }
}

/// `counts[true][predicted]` over internal class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn correct(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// Fraction of all predictions landing in the given predicted-class columns.
    pub fn prediction_mass(&self, columns: Range<usize>) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hit: u64 = self.counts.iter().map(|r| r[columns.clone()].iter().sum::<u64>()).sum();
        hit as f64 / total as f64
    }

    pub fn batch_masses(&self, bounds: &[Range<usize>]) -> Vec<f64> {
        bounds.iter().map(|b| self.prediction_mass(b.clone())).collect()
    }

    /// `log(1 + count)` per cell, for display.
    pub fn log_scaled(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| r.iter().map(|&c| (c as f64).ln_1p()).collect())
            .collect()
    }
}

/// Standard deviation over mean, with the population standard deviation.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Labeled test samples: `(true internal id, input)`.
pub type TestSet<'a> = [(usize, &'a [f64])];

pub fn confusion_matrix<P: Predict + ?Sized>(
    predictor: &P,
    test: &TestSet<'_>,
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zeros(num_classes);
    for &(y, x) in test {
        let p = predictor.predict(x)?;
        if y >= num_classes || p >= num_classes {
            return Err(Error::Shape {
                context: "confusion matrix class",
                expected: num_classes,
                got: y.max(p),
            });
        }
        m.counts[y][p] += 1;
    }
    Ok(m)
}

pub fn top_k_accuracy<P: Predict + ?Sized>(predictor: &P, test: &TestSet<'_>, k: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let mut hits = 0usize;
    for &(y, x) in test {
        if predictor.rank(x)?.iter().take(k).any(|&c| c == y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

pub fn average_incremental_accuracy(curve: &[f64]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::EmptyInput("accuracy curve"));
    }
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Results of one protocol run for every readout of the learner.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub readouts: Vec<String>,
    /// `accuracies[readout][step]`.
    pub accuracies: Vec<Vec<f64>>,
    pub classes_seen: Vec<usize>,
    pub wall_ms: Vec<f64>,
    /// Confusion matrices after the last completed step, one per readout.
    pub confusion: Vec<ConfusionMatrix>,
    pub failure: Option<String>,
}

/// Runs the protocol. Training errors end the run early and are recorded in
/// `failure`; the steps completed so far are kept.
pub fn run_protocol<L: IncrementalLearner>(
    learner: &mut L,
    dataset: &Dataset,
    schedule: &ClassSchedule,
) -> Result<ProtocolOutcome> {
    if schedule.order.len() != dataset.num_classes()
        || schedule.order.iter().any(|&c| c >= dataset.num_classes())
    {
        return Err(Error::Schedule("schedule does not match the dataset".into()));
    }
    let readouts = learner.readouts();
    let mut out = ProtocolOutcome {
        accuracies: vec![Vec::new(); readouts.len()],
        confusion: vec![ConfusionMatrix::zeros(0); readouts.len()],
        readouts,
        classes_seen: Vec::new(),
        wall_ms: Vec::new(),
        failure: None,
    };
    let mut seen = 0usize;
    for batch_ids in schedule.batches() {
        let batch = ClassBatch::new(
            batch_ids
                .iter()
                .map(|&c| BatchClass {
                    label: &dataset.classes[c].label,
                    samples: &dataset.classes[c].train,
                })
                .collect(),
        );
        let start = Instant::now();
        if let Err(e) = learner.observe(&batch) {
            out.failure = Some(e.to_string());
            break;
        }
        out.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        seen += batch_ids.len();

        let mut test: Vec<(usize, &[f64])> = Vec::new();
        for (internal, &c) in schedule.order[..seen].iter().enumerate() {
            let class = &dataset.classes[c];
            if class.test.is_empty() {
                return Err(Error::MissingData { class: c });
            }
            test.extend(class.test.iter().map(|x| (internal, x.as_slice())));
        }
        let predictors = match learner.predictors() {
            Ok(p) => p,
            Err(e) => {
                out.failure = Some(e.to_string());
                break;
            }
        };
        for (r, p) in predictors.iter().enumerate() {
            let m = confusion_matrix(p.as_ref(), &test, seen)?;
            out.accuracies[r].push(m.accuracy());
            out.confusion[r] = m;
        }
        out.classes_seen.push(seen);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub classes_seen: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub average_incremental_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub batch_bounds: Vec<Range<usize>>,
    pub wall_ms: Vec<f64>,
    pub config_echo: String,
    pub failure: Option<String>,
}

impl RunReport {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracies.last().copied().unwrap_or(0.0)
    }
}

/// Learner seed used for a repeat with schedule seed `seed`.
pub fn learner_seed(seed: u64) -> u64 {
    derive_seed(seed, LEARNER_TAG)
}

/// Schedule seed of repeat `r`.
pub fn repeat_seed(base_seed: u64, repeat: usize) -> u64 {
    derive_seed(base_seed, repeat as u64)
}

/// Groups strategies that share a training trajectory, keeping first-seen order.
fn training_groups(strategies: &[(String, StrategySpec)]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, (_, s)) in strategies.iter().enumerate() {
        match groups.iter_mut().find(|g| strategies[g[0]].1.same_training(s)) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

pub fn resolve_strategies(names: &[&str]) -> Result<Vec<(String, StrategySpec)>> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), strategy_for(n)?)))
        .collect()
}

fn config_echo(cfg: &ExperimentConfig, batch_size: usize, seed: u64) -> String {
    format!(
        "hidden={:?} feature_dim={} memory_k={} herding={:?} batch_size={} seed={} train={:?}",
        cfg.hidden, cfg.feature_dim, cfg.memory_k, cfg.herding, batch_size, seed, cfg.train
    )
}

/// Evaluates several strategies over `repeats` class orders. Strategies
/// with identical training share one trajectory per repeat. Returns reports
/// indexed `[strategy][repeat]`.
pub fn evaluate_strategies(
    strategies: &[(String, StrategySpec)],
    dataset: &Dataset,
    batch_size: usize,
    base_seed: u64,
    cfg: &ExperimentConfig,
    repeats: usize,
) -> Result<Vec<Vec<RunReport>>> {
    dataset.validate()?;
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    make_schedule(dataset.num_classes(), batch_size, base_seed)?;
    let groups = training_groups(strategies);
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..repeats).map(move |r| (g, r)))
        .collect();

    let results: Vec<Result<Vec<(usize, RunReport)>>> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let seed = repeat_seed(base_seed, r);
            let schedule = make_schedule(dataset.num_classes(), batch_size, seed)?;
            let members: Vec<(String, StrategySpec)> =
                groups[g].iter().map(|&i| strategies[i].clone()).collect();
            let outcome = StrategyLearner::new(&members, dataset.input_dim, cfg, learner_seed(seed))
                .and_then(|mut l| run_protocol(&mut l, dataset, &schedule));
            let echo = config_echo(cfg, batch_size, seed);
            Ok(groups[g]
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let report = match &outcome {
                        Ok(o) => RunReport {
                            strategy: strategies[i].0.clone(),
                            seed,
                            classes_seen: o.classes_seen.clone(),
                            average_incremental_accuracy: average_incremental_accuracy(&o.accuracies[k])
                                .unwrap_or(0.0),
                            accuracies: o.accuracies[k].clone(),
                            confusion: o.confusion[k].clone(),
                            batch_bounds: schedule.batch_bounds(),
                            wall_ms: o.wall_ms.clone(),
                            config_echo: echo.clone(),
                            failure: o.failure.clone(),
                        },
                        Err(e) => RunReport {
                            strategy: strategies[i].0.clone(),
                            seed,
                            classes_seen: Vec::new(),
                            accuracies: Vec::new(),
                            average_incremental_accuracy: 0.0,
                            confusion: ConfusionMatrix::zeros(0),
                            batch_bounds: schedule.batch_bounds(),
                            wall_ms: Vec::new(),
                            config_echo: echo.clone(),
                            failure: Some(e.to_string()),
                        },
                    };
                    (i, report)
                })
                .collect())
        })
        .collect();

    let mut out: Vec<Vec<Option<RunReport>>> = vec![vec![None; repeats]; strategies.len()];
    for ((_, r), res) in jobs.iter().zip(results) {
        for (i, report) in res? {
            out[i][*r] = Some(report);
        }
    }
    Ok(out
        .into_iter()
        .map(|v| v.into_iter().map(|r| r.expect("every job reported")).collect())
        .collect())
}

pub fn evaluate_incremental(
    strategy: &str,
    dataset: &Dataset,
    batch_size: usize,
    base_seed: u64,
    cfg: &ExperimentConfig,
    repeats: usize,
) -> Result<Vec<RunReport>> {
    let strategies = resolve_strategies(&[strategy])?;
    Ok(evaluate_strategies(&strategies, dataset, batch_size, base_seed, cfg, repeats)?
        .pop()
        .expect("one strategy"))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-step mean and standard deviation over repeats, plus the spread of the
/// average incremental accuracy. Failed repeats are skipped.
#[derive(Debug, Clone)]
pub struct Summary {
    pub strategy: String,
    pub classes_seen: Vec<usize>,
    pub mean_curve: Vec<f64>,
    pub std_curve: Vec<f64>,
    pub mean_average: f64,
    pub std_average: f64,
    pub failures: usize,
}

pub fn summarize(reports: &[RunReport]) -> Summary {
    let ok: Vec<&RunReport> = reports.iter().filter(|r| r.failure.is_none()).collect();
    let steps = ok.first().map_or(0, |r| r.accuracies.len());
    let (mean_curve, std_curve) = (0..steps)
        .map(|s| mean_std(&ok.iter().map(|r| r.accuracies[s]).collect::<Vec<_>>()))
        .unzip();
    let (mean_average, std_average) =
        mean_std(&ok.iter().map(|r| r.average_incremental_accuracy).collect::<Vec<_>>());
    Summary {
        strategy: reports.first().map(|r| r.strategy.clone()).unwrap_or_default(),
        classes_seen: ok.first().map(|r| r.classes_seen.clone()).unwrap_or_default(),
        mean_curve,
        std_curve,
        mean_average,
        std_average,
        failures: reports.len() - ok.len(),
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub strategy: String,
    pub memory_k: usize,
    /// Average incremental accuracy of every repeat.
    pub per_repeat: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub std: f64,
}

/// Average incremental accuracy per `(strategy, K)`.
pub fn memory_sweep(
    strategies: &[(String, StrategySpec)],
    dataset: &Dataset,
    batch_size: usize,
    base_seed: u64,
    cfg: &ExperimentConfig,
    k_values: &[usize],
    repeats: usize,
) -> Result<Vec<SweepPoint>> {
    if k_values.is_empty() || k_values.windows(2).any(|w| w[0] >= w[1]) || k_values[0] == 0 {
        return Err(Error::InvalidConfig("K values must be positive and strictly ascending".into()));
    }
    if k_values[0] < dataset.num_classes() {
        return Err(Error::BudgetExhausted {
            budget: k_values[0],
            classes: dataset.num_classes(),
        });
    }
    let mut points = Vec::new();
    for &k in k_values {
        let mut c = cfg.clone();
        c.memory_k = k;
        let reports = evaluate_strategies(strategies, dataset, batch_size, base_seed, &c, repeats)?;
        for (reps, (name, _)) in reports.iter().zip(strategies) {
            let ok: Vec<&RunReport> = reps.iter().filter(|r| r.failure.is_none()).collect();
            let per_repeat: Vec<f64> = ok.iter().map(|r| r.average_incremental_accuracy).collect();
            let (mean, std) = mean_std(&per_repeat);
            points.push(SweepPoint {
                strategy: name.clone(),
                memory_k: k,
                seeds: ok.iter().map(|r| r.seed).collect(),
                per_repeat,
                mean,
                std,
            });
        }
    }
    Ok(points)
}

/// Runs `f` on a pool capped at `threads` workers (`None` uses rayon's default).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn tiny_dataset() -> Dataset {
        gen_synthetic(&SyntheticSpec {
            classes: 4,
            dim: 6,
            modes_per_class: 1,
            separation: 5.0,
            noise: 0.5,
            train_per_class: 10,
            test_per_class: 5,
            seed: 8,
        })
        .unwrap()
    }

    /// Remembers labels and answers from a lookup of exact test inputs.
    struct Oracle {
        seen: Vec<String>,
        lookup: Vec<(Vec<f64>, String)>,
        constant: Option<usize>,
    }

    impl IncrementalLearner for Oracle {
        fn observe(&mut self, batch: &ClassBatch<'_>) -> Result<()> {
            self.seen.extend(batch.classes.iter().map(|c| c.label.to_string()));
            Ok(())
        }
        fn readouts(&self) -> Vec<String> {
            vec!["oracle".into()]
        }
        fn predictors(&self) -> Result<Vec<Box<dyn Predict + '_>>> {
            Ok(vec![Box::new(self)])
        }
    }

    impl Predict for &Oracle {
        fn predict(&self, x: &[f64]) -> Result<usize> {
            if let Some(c) = self.constant {
                return Ok(c);
            }
            let label = &self.lookup.iter().find(|(v, _)| v == x).unwrap().1;
            Ok(self.seen.iter().position(|l| l == label).unwrap())
        }
    }

    fn oracle(ds: &Dataset, constant: Option<usize>) -> Oracle {
        Oracle {
            seen: Vec::new(),
            lookup: ds
                .classes
                .iter()
                .flat_map(|c| c.test.iter().map(|x| (x.clone(), c.label.clone())))
                .collect(),
            constant,
        }
    }

    #[test]
    fn schedule_cases() {
        let s = make_schedule(100, 10, 1).unwrap();
        assert_eq!(s.num_steps(), 10);
        assert_eq!(make_schedule(7, 7, 1).unwrap().num_steps(), 1);
        assert_eq!(make_schedule(100, 10, 5).unwrap(), make_schedule(100, 10, 5).unwrap());
        let partial = make_schedule(7, 3, 2).unwrap();
        assert_eq!(partial.batch_bounds(), vec![0..3, 3..6, 6..7]);
        assert!(make_schedule(5, 0, 1).is_err());
        assert!(make_schedule(5, 6, 1).is_err());
    }

    #[test]
    fn perfect_learner_scores_one() {
        let ds = tiny_dataset();
        let sched = make_schedule(4, 2, 3).unwrap();
        let mut l = oracle(&ds, None);
        let out = run_protocol(&mut l, &ds, &sched).unwrap();
        assert_eq!(out.accuracies[0], vec![1.0, 1.0]);
        assert_eq!(average_incremental_accuracy(&out.accuracies[0]).unwrap(), 1.0);
        let m = &out.confusion[0];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.counts[i][j] > 0, i == j);
            }
        }
        assert_eq!(m.row_sums(), vec![5; 4]);
    }

    #[test]
    fn constant_learner_counts() {
        let ds = tiny_dataset();
        let sched = make_schedule(4, 2, 3).unwrap();
        let mut l = oracle(&ds, Some(0));
        let out = run_protocol(&mut l, &ds, &sched).unwrap();
        // First step: class 0 is half the test data. Second: a quarter.
        assert_eq!(out.accuracies[0], vec![0.5, 0.25]);
        assert_eq!(out.classes_seen, vec![2, 4]);
    }

    #[test]
    fn average_accuracy() {
        assert_eq!(average_incremental_accuracy(&[1.0, 0.5]).unwrap(), 0.75);
        assert_eq!(average_incremental_accuracy(&[0.3; 4]).unwrap(), 0.3);
        assert!(average_incremental_accuracy(&[]).is_err());
    }

    #[test]
    fn confusion_masses() {
        let m = ConfusionMatrix {
            counts: vec![vec![0, 0, 3, 1], vec![0, 0, 2, 2], vec![0, 0, 4, 0], vec![0, 0, 0, 4]],
        };
        assert_eq!(m.prediction_mass(2..4), 1.0);
        assert_eq!(m.batch_masses(&[0..2, 2..4]), vec![0.0, 1.0]);
        assert!((m.log_scaled()[0][2] - 4f64.ln()).abs() < 1e-15);
        assert_eq!(m.accuracy(), 0.5);
        assert!((coefficient_of_variation(&[0.2; 5])).abs() < 1e-15);
        assert!((coefficient_of_variation(&[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn top_k() {
        let ds = tiny_dataset();
        let mut l = oracle(&ds, None);
        let batch = ClassBatch::new(
            ds.classes.iter().map(|c| BatchClass { label: &c.label, samples: &c.train }).collect(),
        );
        l.observe(&batch).unwrap();
        let test: Vec<(usize, &[f64])> = ds
            .classes
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.test.iter().map(move |x| (i, x.as_slice())))
            .collect();
        assert_eq!(top_k_accuracy(&&l, &test, 1).unwrap(), 1.0);
        let wrong: Vec<(usize, &[f64])> = test.iter().map(|&(y, x)| ((y + 1) % 4, x)).collect();
        assert_eq!(top_k_accuracy(&&l, &wrong, 1).unwrap(), 0.0);
    }

    #[test]
    fn shared_trajectory_and_determinism() {
        let ds = tiny_dataset();
        let mut cfg = ExperimentConfig::desk_default();
        cfg.hidden = vec![8];
        cfg.feature_dim = 4;
        cfg.train = TrainConfig::with_epochs(3);
        cfg.train.minibatch_size = 8;
        cfg.train.base_learning_rate = 0.3;
        cfg.memory_k = 8;
        let strategies = resolve_strategies(&["icarl", "ncm", "finetuning"]).unwrap();
        let a = evaluate_strategies(&strategies, &ds, 2, 1, &cfg, 2).unwrap();
        let b = evaluate_strategies(&strategies, &ds, 2, 1, &cfg, 2).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(x.accuracies, y.accuracies);
            assert_eq!(x.confusion, y.confusion);
            assert!(x.failure.is_none());
            assert_eq!(x.accuracies.len(), 2);
        }
        assert_ne!(a[0][0].seed, a[0][1].seed);
        let s = summarize(&a[0]);
        assert_eq!(s.mean_curve.len(), 2);
    }

    #[test]
    fn failures_are_recorded_per_repeat() {
        let ds = tiny_dataset();
        let mut cfg = ExperimentConfig::desk_default();
        cfg.hidden = vec![8];
        cfg.feature_dim = 4;
        cfg.train = TrainConfig::with_epochs(1);
        cfg.memory_k = 3; // too small for four classes
        let reports = evaluate_incremental("icarl", &ds, 2, 1, &cfg, 2).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert!(r.failure.as_deref().unwrap().contains("budget"));
        }
    }

    #[test]
    fn sweep_validates_k() {
        let ds = tiny_dataset();
        let cfg = ExperimentConfig::desk_default();
        let s = resolve_strategies(&["icarl"]).unwrap();
        assert!(memory_sweep(&s, &ds, 2, 1, &cfg, &[10, 5], 1).is_err());
        assert!(matches!(
            memory_sweep(&s, &ds, 2, 1, &cfg, &[2, 10], 1),
            Err(Error::BudgetExhausted { .. })
        ));
    }
}
