//! Exemplar sets: herding construction, prefix reduction and the global budget.

use crate::error::{Error, Result};
use crate::math::{euclidean_distance, l2_normalize, renormalized_mean, FeatureVector};
use crate::net::FeatureMap;

/// Prioritized exemplars of one class. Items are raw input vectors; any
/// prefix is itself a valid exemplar list.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarList {
    pub class_id: usize,
    /// Position of each exemplar in the class's training sample list.
    pub indices: Vec<usize>,
    pub items: Vec<Vec<f64>>,
}

impl ExemplarList {
    pub fn new(class_id: usize) -> Self {
        ExemplarList {
            class_id,
            indices: Vec::new(),
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Herding selection mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HerdingMode {
    /// A chosen sample is excluded from later steps.
    #[default]
    WithoutReplacement,
    /// Every step minimizes over the whole class, so samples may repeat.
    WithReplacement,
}

/// Exemplar lists for classes `0..t` under a total budget `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarMemory {
    budget: usize,
    lists: Vec<ExemplarList>,
}

impl ExemplarMemory {
    pub fn new(budget: usize) -> Self {
        ExemplarMemory {
            budget,
            lists: Vec::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn lists(&self) -> &[ExemplarList] {
        &self.lists
    }

    pub fn num_classes(&self) -> usize {
        self.lists.len()
    }

    pub fn total(&self) -> usize {
        self.lists.iter().map(ExemplarList::len).sum()
    }

    /// Appends the list for the next class id.
    pub fn push(&mut self, list: ExemplarList) -> Result<()> {
        if list.class_id != self.lists.len() {
            return Err(Error::Schedule(format!(
                "exemplar list for class {} added after {} classes",
                list.class_id,
                self.lists.len()
            )));
        }
        if self.total() + list.len() > self.budget {
            return Err(Error::BudgetExhausted {
                budget: self.budget,
                classes: self.lists.len() + 1,
            });
        }
        self.lists.push(list);
        Ok(())
    }
}

/// `floor(K / t)`, which must leave at least one exemplar per class.
pub fn per_class_budget(budget: usize, classes: usize) -> Result<usize> {
    if classes == 0 {
        return Err(Error::NoClasses);
    }
    match budget / classes {
        0 => Err(Error::BudgetExhausted { budget, classes }),
        m => Ok(m),
    }
}

/// Distance between `mean` and the renormalized candidate sum; a zero sum
/// counts as the origin.
fn herding_distance(mean: &FeatureVector, candidate_sum: &[f64]) -> f64 {
    match l2_normalize(candidate_sum) {
        Ok(v) => euclidean_distance(mean.as_slice(), v.as_slice()).expect("equal dims"),
        Err(_) => 1.0,
    }
}

/// Greedy herding over precomputed unit features. Returns sample indices in
/// priority order.
pub fn herding_order(features: &[FeatureVector], m: usize, mode: HerdingMode) -> Result<Vec<usize>> {
    if mode == HerdingMode::WithoutReplacement && m > features.len() {
        return Err(Error::InsufficientSamples {
            requested: m,
            available: features.len(),
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mean = renormalized_mean(features)?;
    let dim = mean.dim();
    let mut running = vec![0.0; dim];
    let mut taken = vec![false; features.len()];
    let mut order = Vec::with_capacity(m);
    let mut candidate = vec![0.0; dim];

    for _ in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in features.iter().enumerate() {
            if taken[i] {
                continue;
            }
            candidate
                .iter_mut()
                .zip(&running)
                .zip(f.as_slice())
                .for_each(|((c, r), x)| *c = r + x);
            let d = herding_distance(&mean, &candidate);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        let (pick, _) = best.expect("at least one candidate");
        running
            .iter_mut()
            .zip(features[pick].as_slice())
            .for_each(|(r, x)| *r += x);
        if mode == HerdingMode::WithoutReplacement {
            taken[pick] = true;
        }
        order.push(pick);
    }
    Ok(order)
}

/// Selects `m` exemplars of one class whose running feature mean best tracks
/// the class mean under the current feature map.
pub fn construct_exemplar_set<F: FeatureMap + ?Sized>(
    class_id: usize,
    samples: &[Vec<f64>],
    m: usize,
    feature_map: &F,
    mode: HerdingMode,
) -> Result<ExemplarList> {
    if m > samples.len() && mode == HerdingMode::WithoutReplacement {
        return Err(Error::InsufficientSamples {
            requested: m,
            available: samples.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("class samples"));
    }
    let features = samples
        .iter()
        .map(|x| feature_map.features(x))
        .collect::<Result<Vec<_>>>()?;
    let order = herding_order(&features, m, mode)?;
    Ok(ExemplarList {
        class_id,
        items: order.iter().map(|&i| samples[i].clone()).collect(),
        indices: order,
    })
}

/// Keeps only the first `m` exemplars.
pub fn reduce_exemplar_set(list: &ExemplarList, m: usize) -> Result<ExemplarList> {
    if m > list.len() {
        return Err(Error::InvalidReduction {
            len: list.len(),
            requested: m,
        });
    }
    Ok(ExemplarList {
        class_id: list.class_id,
        indices: list.indices[..m].to_vec(),
        items: list.items[..m].to_vec(),
    })
}

/// Cuts every list to `floor(K / t)`. Lists that are already shorter (a class
/// with fewer samples than its share) are left as they are.
pub fn rebalance_memory(memory: &mut ExemplarMemory, classes: usize) -> Result<usize> {
    let m = per_class_budget(memory.budget, classes)?;
    for list in &mut memory.lists {
        let keep = m.min(list.len());
        *list = reduce_exemplar_set(list, keep)?;
    }
    Ok(m)
}
