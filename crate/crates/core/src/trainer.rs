//! The incremental training loop: representation update, exemplar budget
//! rebalancing, and herding for the new classes.

use crate::classifier::{self, PrototypeSet};
use crate::error::{Error, Result};
use crate::exemplar::{
    construct_exemplar_set, per_class_budget, rebalance_memory, ExemplarMemory, HerdingMode,
};
use crate::math::{derive_seed, RngStream};
use crate::net::{Freeze, ModelParams, NetSpec, TrainConfig};
use crate::repr::{update_representation, OldClassTerm, UpdateOptions};
use crate::strategy::{strategy_for, StrategySpec};

const INIT_TAG: u64 = 0x494e_4954;
const HEAD_TAG: u64 = 0x4845_4144;
const SHUFFLE_TAG: u64 = 0x5348_5546;

/// Maps internal class ids (arrival order) to external dataset labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassRegistry {
    labels: Vec<String>,
}

impl ClassRegistry {
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut reg = ClassRegistry::default();
        for l in labels {
            reg.register(&l)?;
        }
        Ok(reg)
    }

    pub fn register(&mut self, label: &str) -> Result<usize> {
        if self.id_of(label).is_some() {
            return Err(Error::Schedule(format!("class '{label}' was already observed")));
        }
        self.labels.push(label.to_string());
        Ok(self.labels.len() - 1)
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Training data of one class in an incoming batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchClass<'a> {
    pub label: &'a str,
    pub samples: &'a [Vec<f64>],
}

/// The data of one incremental step: samples of classes never seen before.
#[derive(Debug, Clone, Default)]
pub struct ClassBatch<'a> {
    pub classes: Vec<BatchClass<'a>>,
}

impl<'a> ClassBatch<'a> {
    pub fn new(classes: Vec<BatchClass<'a>>) -> Self {
        ClassBatch { classes }
    }
}

/// Everything the learner keeps between steps. Past training data is only
/// reachable through `memory`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub params: ModelParams,
    pub memory: Option<ExemplarMemory>,
    pub registry: ClassRegistry,
    pub step_index: u64,
    /// Root seed; per-step streams derive from it and `step_index`.
    pub seed: u64,
    pub herding: HerdingMode,
}

impl LearnerState {
    /// A fresh learner. `budget` is `Some(K)` when exemplars are kept.
    pub fn new(spec: &NetSpec, budget: Option<usize>, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(derive_seed(seed, INIT_TAG));
        Ok(LearnerState {
            params: ModelParams::init(spec, &mut rng)?,
            memory: budget.map(ExemplarMemory::new),
            registry: ClassRegistry::default(),
            step_index: 0,
            seed,
            herding: HerdingMode::default(),
        })
    }

    /// Like [`new`](Self::new) with the memory decided by the strategy.
    pub fn for_strategy(spec: &NetSpec, strategy: &StrategySpec, budget: usize, seed: u64) -> Result<Self> {
        let budget = strategy.maintains_memory().then_some(budget);
        LearnerState::new(spec, budget, seed)
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes()
    }

    /// Mean-of-exemplars prototypes under the current feature map.
    pub fn prototypes(&self) -> Result<PrototypeSet> {
        if self.num_classes() == 0 {
            return Err(Error::NoClasses);
        }
        let memory = self
            .memory
            .as_ref()
            .ok_or(Error::MissingExemplars { class: 0 })?;
        classifier::compute_prototypes(memory, &self.params)
    }
}

/// Full iCaRL step: distillation and rehearsal, then exemplar management.
pub fn incremental_train(
    state: LearnerState,
    batch: &ClassBatch<'_>,
    cfg: &TrainConfig,
) -> Result<LearnerState> {
    let icarl = strategy_for("icarl")?;
    advance(state, &icarl, batch, cfg)
}

/// Nearest-mean-of-exemplars prediction; returns the internal class id.
pub fn predict(state: &LearnerState, x: &[f64]) -> Result<usize> {
    classifier::classify(x, &state.prototypes()?, &state.params)
}

fn validate_batch(state: &LearnerState, batch: &ClassBatch<'_>) -> Result<()> {
    if batch.classes.is_empty() {
        return Err(Error::EmptyInput("class batch"));
    }
    let dim = state.params.spec.input_dim;
    for (i, c) in batch.classes.iter().enumerate() {
        if state.registry.id_of(c.label).is_some()
            || batch.classes[..i].iter().any(|o| o.label == c.label)
        {
            return Err(Error::Schedule(format!("class '{}' is not new", c.label)));
        }
        if c.samples.is_empty() {
            return Err(Error::EmptyInput("class samples"));
        }
        if let Some(x) = c.samples.iter().find(|x| x.len() != dim) {
            return Err(Error::Shape {
                context: "batch sample",
                expected: dim,
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// One step of class-incremental training under `strategy`.
pub fn advance(
    state: LearnerState,
    strategy: &StrategySpec,
    batch: &ClassBatch<'_>,
    cfg: &TrainConfig,
) -> Result<LearnerState> {
    validate_batch(&state, batch)?;
    let LearnerState {
        params,
        mut memory,
        mut registry,
        step_index,
        seed,
        herding,
    } = state;

    let old = params.num_classes();
    let total = old + batch.classes.len();
    let per_class = match &memory {
        Some(mem) => Some(per_class_budget(mem.budget(), total)?),
        None => None,
    };

    let first_step = step_index == 0;
    let frozen = Freeze {
        features: strategy.freeze_features_after_first_batch && !first_step,
        heads_below: if strategy.freeze_old_heads && !first_step { old } else { 0 },
    };
    let old_classes = if strategy.use_distillation {
        OldClassTerm::Distill
    } else if frozen.features && frozen.heads_below == old {
        // Nothing trainable depends on old-class outputs.
        OldClassTerm::Ignore
    } else {
        OldClassTerm::HardLabels
    };
    let options = UpdateOptions {
        old_classes,
        use_exemplars: strategy.use_exemplars_in_training,
        freeze: frozen,
        head_seed: derive_seed(derive_seed(seed, HEAD_TAG), step_index),
    };
    let mut step_cfg = cfg.clone();
    step_cfg.shuffle_seed = derive_seed(derive_seed(seed ^ cfg.shuffle_seed, SHUFFLE_TAG), step_index);

    let new_data: Vec<(usize, &[Vec<f64>])> = batch
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (old + i, c.samples))
        .collect();
    let params = update_representation(params, &new_data, memory.as_ref(), &step_cfg, options)?.params;

    for c in &batch.classes {
        registry.register(c.label)?;
    }

    if let (Some(mem), Some(m)) = (memory.as_mut(), per_class) {
        rebalance_memory(mem, total)?;
        for (class, samples) in &new_data {
            // A class with fewer samples than its share keeps all of them.
            let take = m.min(samples.len());
            mem.push(construct_exemplar_set(*class, samples, take, &params, herding)?)?;
        }
    }

    Ok(LearnerState {
        params,
        memory,
        registry,
        step_index: step_index + 1,
        seed,
        herding,
    })
}
