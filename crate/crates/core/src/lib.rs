//! Class-incremental learning with exemplar rehearsal, distillation and a
//! nearest-mean-of-exemplars classifier, plus the baselines and the
//! evaluation protocol used to compare them.
//!
//! A learner receives classes in batches and never revisits past training
//! data except through a fixed-size exemplar memory:
//!
//! ```
//! use incrlearn::data::{gen_synthetic, SyntheticSpec};
//! use incrlearn::net::{NetSpec, TrainConfig};
//! use incrlearn::trainer::{incremental_train, predict, BatchClass, ClassBatch, LearnerState};
//!
//! let mut spec = SyntheticSpec::toy_ibench(7);
//! spec.classes = 4;
//! spec.train_per_class = 20;
//! let ds = gen_synthetic(&spec).unwrap();
//! let net = NetSpec::new(ds.input_dim, vec![16], 8).unwrap();
//! let mut state = LearnerState::new(&net, Some(20), 1).unwrap();
//! let cfg = TrainConfig::with_epochs(2);
//! for pair in ds.classes.chunks(2) {
//!     let batch = ClassBatch::new(
//!         pair.iter().map(|c| BatchClass { label: &c.label, samples: &c.train }).collect(),
//!     );
//!     state = incremental_train(state, &batch, &cfg).unwrap();
//! }
//! let id = predict(&state, &ds.classes[3].test[0]).unwrap();
//! assert!(id < 4);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod exemplar;
pub mod math;
pub mod net;
pub mod repr;
pub mod strategy;
pub mod svg;
pub mod trainer;

pub use error::{Error, Result};
pub use math::FeatureVector;
pub use net::{ModelParams, NetSpec, TrainConfig};
pub use strategy::{strategy_for, StrategySpec};
pub use trainer::{ClassBatch, LearnerState};
