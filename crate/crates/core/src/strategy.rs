//! Named methods as flag combinations over the shared training machinery.

use crate::error::{Error, Result};
use crate::net::TrainConfig;
use crate::trainer::{self, ClassBatch, LearnerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassifierKind {
    MeanOfExemplars,
    NetworkOutput,
    /// Nearest class mean over all training data. Not class-incremental:
    /// it needs every past training sample.
    Ncm,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::MeanOfExemplars => "mean-of-exemplars",
            ClassifierKind::NetworkOutput => "network-output",
            ClassifierKind::Ncm => "ncm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StrategySpec {
    pub use_distillation: bool,
    pub use_exemplars_in_training: bool,
    pub classifier: ClassifierKind,
    pub freeze_features_after_first_batch: bool,
    pub freeze_old_heads: bool,
}

pub const STRATEGY_NAMES: [&str; 8] = [
    "icarl",
    "finetuning",
    "fixed-repr",
    "lwf-mc",
    "hybrid1",
    "hybrid2",
    "hybrid3",
    "ncm",
];

const fn spec(
    use_distillation: bool,
    use_exemplars_in_training: bool,
    classifier: ClassifierKind,
    frozen: bool,
) -> StrategySpec {
    StrategySpec {
        use_distillation,
        use_exemplars_in_training,
        classifier,
        freeze_features_after_first_batch: frozen,
        freeze_old_heads: frozen,
    }
}

pub fn strategy_for(name: &str) -> Result<StrategySpec> {
    use ClassifierKind::*;
    Ok(match name {
        "icarl" => spec(true, true, MeanOfExemplars, false),
        "finetuning" => spec(false, false, NetworkOutput, false),
        "fixed-repr" => spec(false, false, NetworkOutput, true),
        "lwf-mc" => spec(true, false, NetworkOutput, false),
        "hybrid1" => spec(true, true, NetworkOutput, false),
        "hybrid2" => spec(false, true, MeanOfExemplars, false),
        "hybrid3" => spec(false, true, NetworkOutput, false),
        "ncm" => spec(true, true, Ncm, false),
        _ => {
            return Err(Error::UnknownStrategy {
                name: name.to_string(),
                valid: STRATEGY_NAMES.join(", "),
            })
        }
    })
}

impl StrategySpec {
    /// Whether an exemplar memory is kept at all.
    pub fn maintains_memory(&self) -> bool {
        self.use_exemplars_in_training || self.classifier == ClassifierKind::MeanOfExemplars
    }

    /// Whether the full training data of past classes must be retained.
    pub fn retains_training_data(&self) -> bool {
        self.classifier == ClassifierKind::Ncm
    }

    /// Two strategies with the same training flags follow the same parameter
    /// trajectory and differ only in how they classify.
    pub fn same_training(&self, other: &StrategySpec) -> bool {
        self.use_distillation == other.use_distillation
            && self.use_exemplars_in_training == other.use_exemplars_in_training
            && self.freeze_features_after_first_batch == other.freeze_features_after_first_batch
            && self.freeze_old_heads == other.freeze_old_heads
            && self.maintains_memory() == other.maintains_memory()
    }
}

/// One incremental step under the given strategy.
pub fn run_strategy(
    spec: &StrategySpec,
    state: LearnerState,
    batch: &ClassBatch<'_>,
    cfg: &TrainConfig,
) -> Result<LearnerState> {
    trainer::advance(state, spec, batch, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_table() {
        let h1 = strategy_for("hybrid1").unwrap();
        assert!(h1.use_distillation && h1.use_exemplars_in_training);
        assert_eq!(h1.classifier, ClassifierKind::NetworkOutput);

        let h3 = strategy_for("hybrid3").unwrap();
        assert!(!h3.use_distillation && h3.use_exemplars_in_training);
        assert_eq!(h3.classifier, ClassifierKind::NetworkOutput);

        let h2 = strategy_for("hybrid2").unwrap();
        assert!(!h2.use_distillation && h2.use_exemplars_in_training);
        assert_eq!(h2.classifier, ClassifierKind::MeanOfExemplars);

        let icarl = strategy_for("icarl").unwrap();
        assert!(icarl.use_distillation && icarl.use_exemplars_in_training);
        assert_eq!(icarl.classifier, ClassifierKind::MeanOfExemplars);
        assert!(!icarl.freeze_features_after_first_batch && !icarl.freeze_old_heads);

        let ft = strategy_for("finetuning").unwrap();
        assert!(!ft.use_distillation && !ft.use_exemplars_in_training && !ft.maintains_memory());

        let fixed = strategy_for("fixed-repr").unwrap();
        assert!(fixed.freeze_features_after_first_batch && fixed.freeze_old_heads);

        let lwf = strategy_for("lwf-mc").unwrap();
        assert!(lwf.use_distillation && !lwf.use_exemplars_in_training && !lwf.maintains_memory());

        let ncm = strategy_for("ncm").unwrap();
        assert!(ncm.same_training(&icarl) && ncm.retains_training_data());
        assert!(icarl.same_training(&h1));
        assert!(!icarl.same_training(&h2));
    }

    #[test]
    fn unknown_name_lists_valid_ones() {
        let err = strategy_for("ewc").unwrap_err();
        let msg = err.to_string();
        for n in STRATEGY_NAMES {
            assert!(msg.contains(n));
        }
    }
}
