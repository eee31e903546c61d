//! Representation update: combined training set, frozen distillation
//! targets, and the classification + distillation loss.

use crate::error::{Error, Result};
use crate::exemplar::ExemplarMemory;
use crate::math::RngStream;
use crate::net::{self, Freeze, ModelParams, Sample, TrainConfig, TrainOutcome};

/// How outputs of classes observed before the current step enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OldClassTerm {
    /// Binary cross-entropy against the recorded pre-update outputs.
    Distill,
    /// Binary cross-entropy against the true class indicator.
    HardLabels,
    /// No term at all.
    Ignore,
}

/// Class ranges of one step: old classes `0..new_start`, new classes
/// `new_start..num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub new_start: usize,
    pub num_classes: usize,
    pub old_classes: OldClassTerm,
}

impl LossSpec {
    pub fn new(new_start: usize, num_classes: usize, old_classes: OldClassTerm) -> Self {
        LossSpec {
            new_start,
            num_classes,
            old_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    NewData,
    Exemplar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEntry {
    pub input: Vec<f64>,
    pub label: usize,
    pub source: Provenance,
}

/// New-class samples followed by the stored exemplars of old classes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CombinedTrainingSet {
    pub entries: Vec<CombinedEntry>,
}

impl CombinedTrainingSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, source: Provenance) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }
}

/// `q[i][y]`: output of old class `y` on entry `i` under the pre-update
/// parameters. Immutable once recorded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistillationTargets {
    q: Vec<Vec<f64>>,
}

impl DistillationTargets {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn old_classes(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }
}

/// Forms the training set of one step. `new_data` holds `(class_id, samples)`
/// with ids continuing right after the classes already in `memory`.
pub fn build_combined_set(
    new_data: &[(usize, &[Vec<f64>])],
    first_new_class: usize,
    memory: Option<&ExemplarMemory>,
) -> Result<CombinedTrainingSet> {
    for (offset, (class, _)) in new_data.iter().enumerate() {
        if *class != first_new_class + offset {
            return Err(Error::Schedule(format!(
                "new class ids must be contiguous from {first_new_class}, found {class}"
            )));
        }
    }
    if let Some(mem) = memory {
        if mem.num_classes() > first_new_class {
            return Err(Error::Schedule(format!(
                "class {first_new_class} already has stored exemplars"
            )));
        }
    }
    let mut entries = Vec::new();
    for (class, samples) in new_data {
        entries.extend(samples.iter().map(|x| CombinedEntry {
            input: x.clone(),
            label: *class,
            source: Provenance::NewData,
        }));
    }
    if let Some(mem) = memory {
        for list in mem.lists() {
            entries.extend(list.items.iter().map(|x| CombinedEntry {
                input: x.clone(),
                label: list.class_id,
                source: Provenance::Exemplar,
            }));
        }
    }
    Ok(CombinedTrainingSet { entries })
}

/// Records `g_y(x_i)` for every entry and every old class `y < old_classes`.
pub fn record_targets(
    params_pre: &ModelParams,
    set: &CombinedTrainingSet,
    old_classes: usize,
) -> Result<DistillationTargets> {
    if old_classes == 0 {
        return Ok(DistillationTargets {
            q: vec![Vec::new(); set.len()],
        });
    }
    if params_pre.num_classes() < old_classes {
        return Err(Error::Shape {
            context: "distillation heads",
            expected: old_classes,
            got: params_pre.num_classes(),
        });
    }
    let q = set
        .entries
        .iter()
        .map(|e| {
            let mut g = params_pre.network_outputs(&e.input)?;
            g.truncate(old_classes);
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistillationTargets { q })
}

fn samples<'a>(set: &'a CombinedTrainingSet, targets: &'a DistillationTargets) -> Vec<Sample<'a>> {
    set.entries
        .iter()
        .zip(&targets.q)
        .map(|(e, q)| Sample {
            input: &e.input,
            label: e.label,
            targets: q,
        })
        .collect()
}

/// Classification terms for classes `new_start..t` plus distillation terms
/// for `0..new_start`, summed over the whole set.
pub fn icarl_loss(
    params: &ModelParams,
    set: &CombinedTrainingSet,
    targets: &DistillationTargets,
    new_start: usize,
    num_classes: usize,
) -> Result<f64> {
    let spec = LossSpec::new(new_start, num_classes, OldClassTerm::Distill);
    net::loss_value(params, &samples(set, targets), &spec)
}

/// Step options that differ between strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOptions {
    pub old_classes: OldClassTerm,
    pub use_exemplars: bool,
    pub freeze: Freeze,
    /// Seed for the new heads' initialization.
    pub head_seed: u64,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions {
            old_classes: OldClassTerm::Distill,
            use_exemplars: true,
            freeze: Freeze::default(),
            head_seed: 0,
        }
    }
}

/// Builds the combined set, records targets with the incoming parameters,
/// appends heads for the new classes, then trains.
pub fn update_representation(
    params: ModelParams,
    new_data: &[(usize, &[Vec<f64>])],
    memory: Option<&ExemplarMemory>,
    cfg: &TrainConfig,
    options: UpdateOptions,
) -> Result<TrainOutcome> {
    let old = params.num_classes();
    let memory = if options.use_exemplars { memory } else { None };
    let set = build_combined_set(new_data, old, memory)?;
    if set.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let targets = match options.old_classes {
        OldClassTerm::Distill => record_targets(&params, &set, old)?,
        _ => DistillationTargets {
            q: vec![Vec::new(); set.len()],
        },
    };
    let mut params = params;
    params.add_class_heads(new_data.len(), &mut RngStream::new(options.head_seed));
    let spec = LossSpec::new(old, params.num_classes(), options.old_classes);
    net::sgd_train(params, &samples(&set, &targets), cfg, &spec, options.freeze)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exemplar::{construct_exemplar_set, HerdingMode};
    use crate::net::NetSpec;

    fn data(seed: u64, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|_| (0..d).map(|j| if j == 0 { shift } else { 0.0 } + rng.normal()).collect())
            .collect()
    }

    fn params(seed: u64, t: usize) -> ModelParams {
        let spec = NetSpec::new(4, vec![8], 4).unwrap();
        let mut rng = RngStream::new(seed);
        let mut p = ModelParams::init(&spec, &mut rng).unwrap();
        p.add_class_heads(t, &mut rng);
        p
    }

    fn memory_with(classes: usize, per: usize, p: &ModelParams) -> ExemplarMemory {
        let mut mem = ExemplarMemory::new(classes * per);
        for c in 0..classes {
            let xs = data(50 + c as u64, per + 2, 4, c as f64);
            mem.push(construct_exemplar_set(c, &xs, per, p, HerdingMode::WithoutReplacement).unwrap())
                .unwrap();
        }
        mem
    }

    #[test]
    fn first_batch_has_only_new_data() {
        let x = data(1, 5, 4, 0.0);
        let set = build_combined_set(&[(0, &x)], 0, None).unwrap();
        assert_eq!(set.len(), 5);
        let empty = ExemplarMemory::new(10);
        let set = build_combined_set(&[(0, &x)], 0, Some(&empty)).unwrap();
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn combined_counts_and_provenance() {
        let p = params(2, 2);
        let mem = memory_with(2, 3, &p);
        let x = data(3, 10, 4, 2.0);
        let set = build_combined_set(&[(2, &x)], 2, Some(&mem)).unwrap();
        assert_eq!(set.len(), 16);
        assert_eq!(set.count(Provenance::NewData), 10);
        assert_eq!(set.count(Provenance::Exemplar), 6);
        assert!(set
            .entries
            .iter()
            .all(|e| (e.source == Provenance::NewData) == (e.label == 2)));
    }

    #[test]
    fn overlapping_ids_rejected() {
        let p = params(2, 2);
        let mem = memory_with(2, 3, &p);
        let x = data(3, 10, 4, 2.0);
        assert!(matches!(build_combined_set(&[(1, &x)], 1, Some(&mem)), Err(Error::Schedule(_))));
        assert!(matches!(
            build_combined_set(&[(2, &x), (4, &x)], 2, Some(&mem)),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn targets_cases() {
        let x = data(4, 6, 4, 0.0);
        let set = build_combined_set(&[(0, &x)], 0, None).unwrap();
        let t = record_targets(&params(5, 0), &set, 0).unwrap();
        assert_eq!(t.old_classes(), 0);

        // Zero head weights are orthogonal to every feature.
        let mut p = params(5, 2);
        p.class_weights.iter_mut().for_each(|w| w.iter_mut().for_each(|v| *v = 0.0));
        let t = record_targets(&p, &set, 2).unwrap();
        assert!(t.rows().iter().flatten().all(|&q| q == 0.5));

        let p = params(6, 3);
        let t = record_targets(&p, &set, 2).unwrap();
        for (e, row) in set.entries.iter().zip(t.rows()) {
            let phi = p.extract_features(&e.input).unwrap();
            for y in 0..2 {
                let a: f64 = p.class_weights[y].iter().zip(phi.as_slice()).map(|(w, f)| w * f).sum();
                assert!((row[y] - 1.0 / (1.0 + (-a).exp())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn targets_stay_frozen() {
        let x = data(4, 6, 4, 0.0);
        let set = build_combined_set(&[(0, &x)], 0, None).unwrap();
        let mut p = params(7, 2);
        let t = record_targets(&p, &set, 2).unwrap();
        let snapshot = t.clone();
        p.class_weights[0][0] += 10.0;
        assert_eq!(t, snapshot);
    }

    #[test]
    fn loss_without_old_classes_is_plain_bce() {
        let x = data(8, 5, 4, 0.0);
        let y = data(9, 5, 4, 3.0);
        let set = build_combined_set(&[(0, &x), (1, &y)], 0, None).unwrap();
        let p = params(10, 2);
        let t = record_targets(&p, &set, 0).unwrap();
        let loss = icarl_loss(&p, &set, &t, 0, 2).unwrap();
        let mut expected = 0.0;
        for e in &set.entries {
            let g = p.network_outputs(&e.input).unwrap();
            for (c, gc) in g.iter().enumerate() {
                expected -= if c == e.label { gc.ln() } else { (1.0 - gc).ln() };
            }
        }
        assert!((loss - expected).abs() < 1e-10);
    }

    #[test]
    fn half_output_single_class_loss_is_ln2() {
        let x = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let set = build_combined_set(&[(0, &x)], 0, None).unwrap();
        let mut p = params(11, 1);
        p.class_weights[0].iter_mut().for_each(|v| *v = 0.0);
        let t = record_targets(&p, &set, 0).unwrap();
        assert!((icarl_loss(&p, &set, &t, 0, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn distillation_term_minimized_at_target() {
        // Grid-scan the per-term loss -(q ln g + (1-q) ln(1-g)) for q = 0.3.
        let q = 0.3f64;
        let mut best = (0.0, f64::INFINITY);
        for i in 1..100_000 {
            let g = i as f64 / 100_000.0;
            let l = -(q * g.ln() + (1.0 - q) * (1.0 - g).ln());
            if l < best.1 {
                best = (g, l);
            }
        }
        assert!((best.0 - 0.3).abs() < 1e-3);
    }

    #[test]
    fn loss_is_finite_at_saturated_outputs() {
        let x = vec![vec![1.0, 0.5, -0.5, 2.0]];
        let set = build_combined_set(&[(1, &x)], 1, None).unwrap();
        let mut p = params(12, 2);
        let phi = p.extract_features(&x[0]).unwrap();
        p.class_weights[0] = phi.as_slice().iter().map(|v| v * 1e4).collect();
        p.class_weights[1] = phi.as_slice().iter().map(|v| -v * 1e4).collect();
        let targets = DistillationTargets { q: vec![vec![0.0]] };
        let l = icarl_loss(&p, &set, &targets, 1, 2).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn zero_epochs_only_grows_heads() {
        let p = params(13, 1);
        let mem = memory_with(1, 3, &p);
        let x = data(14, 6, 4, 1.0);
        let cfg = TrainConfig::with_epochs(0);
        let out = update_representation(p.clone(), &[(1, &x)], Some(&mem), &cfg, UpdateOptions::default())
            .unwrap();
        assert_eq!(out.params.num_classes(), 2);
        assert_eq!(out.params.layers, p.layers);
        assert_eq!(out.params.class_weights[0], p.class_weights[0]);
    }
}
