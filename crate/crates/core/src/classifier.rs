//! Prediction rules: nearest mean of exemplars, nearest class mean over all
//! training data, and argmax of the network outputs.
//!
//! All rules break ties towards the lowest class id.

use crate::error::{Error, Result};
use crate::exemplar::ExemplarMemory;
use crate::math::{argmax, argmin, euclidean_distance, renormalized_mean, FeatureVector};
use crate::net::{FeatureMap, ModelParams};

/// One unit-norm prototype per class, for class ids `0..t` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    class_ids: Vec<usize>,
    prototypes: Vec<FeatureVector>,
}

impl PrototypeSet {
    /// Builds a set from `(class_id, prototype)` pairs in any order. The ids
    /// must cover `0..n` exactly.
    pub fn new(mut entries: Vec<(usize, FeatureVector)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoClasses);
        }
        entries.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::Schedule(format!(
                    "prototype ids must be 0..{} without gaps, found {id}",
                    entries.len()
                )));
            }
        }
        let dim = entries[0].1.dim();
        if let Some((_, p)) = entries.iter().find(|(_, p)| p.dim() != dim) {
            return Err(Error::Shape {
                context: "prototype",
                expected: dim,
                got: p.dim(),
            });
        }
        let (class_ids, prototypes) = entries.into_iter().unzip();
        Ok(PrototypeSet {
            class_ids,
            prototypes,
        })
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn prototypes(&self) -> &[FeatureVector] {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Distances from `phi` to every prototype, in class-id order.
    pub fn distances(&self, phi: &FeatureVector) -> Result<Vec<f64>> {
        self.prototypes
            .iter()
            .map(|p| euclidean_distance(phi.as_slice(), p.as_slice()))
            .collect()
    }

    /// Nearest prototype to an already extracted feature vector.
    pub fn nearest(&self, phi: &FeatureVector) -> Result<usize> {
        let d = self.distances(phi)?;
        Ok(self.class_ids[argmin(&d).ok_or(Error::NoClasses)?])
    }

    /// Class ids sorted from nearest to farthest (stable, so ties keep id order).
    pub fn ranking(&self, phi: &FeatureVector) -> Result<Vec<usize>> {
        let d = self.distances(phi)?;
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        Ok(order.into_iter().map(|i| self.class_ids[i]).collect())
    }
}

fn class_mean<F: FeatureMap + ?Sized>(samples: &[Vec<f64>], feature_map: &F) -> Result<FeatureVector> {
    let feats = samples
        .iter()
        .map(|x| feature_map.features(x))
        .collect::<Result<Vec<_>>>()?;
    renormalized_mean(&feats)
}

/// Mean-of-exemplars prototypes, always recomputed with the given feature map.
pub fn compute_prototypes<F: FeatureMap + ?Sized>(
    memory: &ExemplarMemory,
    feature_map: &F,
) -> Result<PrototypeSet> {
    let entries = memory
        .lists()
        .iter()
        .map(|list| {
            if list.is_empty() {
                return Err(Error::MissingExemplars {
                    class: list.class_id,
                });
            }
            // Sum in sample order so a list holding every sample gives the
            // class mean bit for bit.
            let mut order: Vec<usize> = (0..list.len()).collect();
            order.sort_by_key(|&i| list.indices.get(i).copied().unwrap_or(i));
            let items: Vec<Vec<f64>> = order.iter().map(|&i| list.items[i].clone()).collect();
            Ok((list.class_id, class_mean(&items, feature_map)?))
        })
        .collect::<Result<Vec<_>>>()?;
    PrototypeSet::new(entries)
}

/// Nearest-class-mean prototypes over complete per-class training data
/// (indexed by class id).
pub fn ncm_prototypes<F: FeatureMap + ?Sized>(
    full_data: &[Vec<Vec<f64>>],
    feature_map: &F,
) -> Result<PrototypeSet> {
    let entries = full_data
        .iter()
        .enumerate()
        .map(|(class, samples)| {
            if samples.is_empty() {
                return Err(Error::MissingData { class });
            }
            Ok((class, class_mean(samples, feature_map)?))
        })
        .collect::<Result<Vec<_>>>()?;
    PrototypeSet::new(entries)
}

/// `argmin_y ||phi(x) - mu_y||`.
pub fn classify<F: FeatureMap + ?Sized>(
    x: &[f64],
    prototypes: &PrototypeSet,
    feature_map: &F,
) -> Result<usize> {
    prototypes.nearest(&feature_map.features(x)?)
}

/// `argmax_y g_y(x)`.
pub fn classify_by_network(x: &[f64], params: &ModelParams) -> Result<usize> {
    let g = params.network_outputs(x)?;
    argmax(&g).ok_or(Error::NoClasses)
}

pub fn rank_by_network(x: &[f64], params: &ModelParams) -> Result<Vec<usize>> {
    let g = params.network_outputs(x)?;
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[b].total_cmp(&g[a]));
    Ok(order)
}

/// Nearest class mean with means over all retained training samples.
/// Computes the means on every call; use [`ncm_prototypes`] to amortize.
pub fn ncm_classify<F: FeatureMap + ?Sized>(
    x: &[f64],
    full_data: &[Vec<Vec<f64>>],
    feature_map: &F,
) -> Result<usize> {
    classify(x, &ncm_prototypes(full_data, feature_map)?, feature_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exemplar::{construct_exemplar_set, ExemplarList, HerdingMode};
    use crate::math::{dot, l2_normalize, RngStream};

    fn identity(x: &[f64]) -> Result<FeatureVector> {
        l2_normalize(x)
    }

    fn memory_from(lists: Vec<Vec<Vec<f64>>>) -> ExemplarMemory {
        let total: usize = lists.iter().map(Vec::len).sum();
        let mut mem = ExemplarMemory::new(total.max(1));
        for (c, items) in lists.into_iter().enumerate() {
            mem.push(ExemplarList {
                class_id: c,
                indices: (0..items.len()).collect(),
                items,
            })
            .unwrap();
        }
        mem
    }

    fn clusters(seed: u64, classes: usize, per: usize, d: usize) -> Vec<Vec<Vec<f64>>> {
        let mut rng = RngStream::new(seed);
        (0..classes)
            .map(|_| {
                let c: Vec<f64> = (0..d).map(|_| 5.0 * rng.normal()).collect();
                (0..per)
                    .map(|_| c.iter().map(|v| v + 0.1 * rng.normal()).collect())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_exemplar_prototype_is_its_feature() {
        let mem = memory_from(vec![vec![vec![3.0, 4.0]], vec![vec![0.0, 2.0]]]);
        let protos = compute_prototypes(&mem, &identity).unwrap();
        assert_eq!(protos.prototypes()[0].as_slice(), &[0.6, 0.8]);
        assert_eq!(protos.prototypes()[1].as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn symmetric_pair_prototype() {
        let mem = memory_from(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
        let protos = compute_prototypes(&mem, &identity).unwrap();
        let h = 1.0 / 2f64.sqrt();
        for v in protos.prototypes()[0].as_slice() {
            assert!((v - h).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_list_is_missing_exemplars() {
        let mut mem = ExemplarMemory::new(3);
        mem.push(ExemplarList::new(0)).unwrap();
        assert!(matches!(
            compute_prototypes(&mem, &identity),
            Err(Error::MissingExemplars { class: 0 })
        ));
    }

    #[test]
    fn prototypes_match_two_pass_recomputation() {
        let data = clusters(5, 4, 7, 6);
        let mem = memory_from(data.clone());
        let protos = compute_prototypes(&mem, &identity).unwrap();
        for (c, samples) in data.iter().enumerate() {
            // Normalize each sample, sum, then normalize the sum.
            let mut acc = vec![0.0; 6];
            for s in samples {
                let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                for j in 0..6 {
                    acc[j] += s[j] / n;
                }
            }
            let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..6 {
                assert!((protos.prototypes()[c].as_slice()[j] - acc[j] / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_memory_equals_class_means_bitwise() {
        let data = clusters(3, 9, 11, 5);
        let mut mem = ExemplarMemory::new(99);
        for (c, samples) in data.iter().enumerate() {
            let order = RngStream::new(c as u64).permutation(samples.len());
            mem.push(ExemplarList {
                class_id: c,
                indices: order.clone(),
                items: order.iter().map(|&i| samples[i].clone()).collect(),
            })
            .unwrap();
        }
        let a = compute_prototypes(&mem, &identity).unwrap();
        let b = ncm_prototypes(&data, &identity).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_class_always_wins() {
        let mem = memory_from(vec![vec![vec![1.0, 2.0]]]);
        let protos = compute_prototypes(&mem, &identity).unwrap();
        let mut rng = RngStream::new(1);
        for _ in 0..20 {
            let x = [rng.normal(), rng.normal()];
            assert_eq!(classify(&x, &protos, &identity).unwrap(), 0);
        }
    }

    #[test]
    fn exemplar_of_separated_class_is_classified_correctly() {
        let data = clusters(9, 5, 10, 8);
        let mem = memory_from(data.clone());
        let protos = compute_prototypes(&mem, &identity).unwrap();
        for (c, samples) in data.iter().enumerate() {
            for s in samples {
                assert_eq!(classify(s, &protos, &identity).unwrap(), c);
            }
        }
    }

    #[test]
    fn equidistant_goes_to_lowest_id() {
        let protos = PrototypeSet::new(vec![
            (1, l2_normalize(&[0.0, 1.0]).unwrap()),
            (0, l2_normalize(&[1.0, 0.0]).unwrap()),
        ])
        .unwrap();
        assert_eq!(classify(&[1.0, 1.0], &protos, &identity).unwrap(), 0);
    }

    #[test]
    fn storage_order_does_not_matter() {
        let a = l2_normalize(&[1.0, 0.2]).unwrap();
        let b = l2_normalize(&[0.1, 1.0]).unwrap();
        let c = l2_normalize(&[-1.0, 0.3]).unwrap();
        let p1 = PrototypeSet::new(vec![(0, a.clone()), (1, b.clone()), (2, c.clone())]).unwrap();
        let p2 = PrototypeSet::new(vec![(2, c), (0, a), (1, b)]).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn prototype_ids_must_be_contiguous() {
        let a = l2_normalize(&[1.0, 0.0]).unwrap();
        assert!(PrototypeSet::new(vec![(0, a.clone()), (2, a)]).is_err());
        assert!(matches!(PrototypeSet::new(vec![]), Err(Error::NoClasses)));
    }

    fn params_with_heads(t: usize) -> ModelParams {
        let spec = crate::net::NetSpec::new(4, vec![6], 3).unwrap();
        let mut rng = RngStream::new(17);
        let mut p = ModelParams::init(&spec, &mut rng).unwrap();
        p.add_class_heads(t, &mut rng);
        p
    }

    #[test]
    fn network_rule() {
        let p = params_with_heads(1);
        assert_eq!(classify_by_network(&[1.0, 0.5, 0.1, 0.2], &p).unwrap(), 0);
        assert_eq!(argmax(&[0.2, 0.9, 0.4]), Some(1));
        assert!(matches!(
            classify_by_network(&[1.0; 4], &params_with_heads(0)),
            Err(Error::NoClasses)
        ));
        let p = params_with_heads(4);
        let mut rng = RngStream::new(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let phi = p.extract_features(&x).unwrap();
            let scores: Vec<f64> = p.class_weights.iter().map(|w| 1.0 / (1.0 + (-dot(w, phi.as_slice())).exp())).collect();
            assert_eq!(classify_by_network(&x, &p).unwrap(), argmax(&scores).unwrap());
            assert_eq!(rank_by_network(&x, &p).unwrap()[0], argmax(&scores).unwrap());
        }
    }

    #[test]
    fn ncm_coincides_with_full_memory() {
        let data = clusters(21, 3, 8, 5);
        let mem = memory_from(data.clone());
        let protos = compute_prototypes(&mem, &identity).unwrap();
        let mut rng = RngStream::new(4);
        for _ in 0..30 {
            let x: Vec<f64> = (0..5).map(|_| 5.0 * rng.normal()).collect();
            assert_eq!(
                ncm_classify(&x, &data, &identity).unwrap(),
                classify(&x, &protos, &identity).unwrap()
            );
        }
        let singles: Vec<Vec<Vec<f64>>> = data.iter().map(|c| vec![c[0].clone()]).collect();
        let single_mem = memory_from(singles.clone());
        let sp = compute_prototypes(&single_mem, &identity).unwrap();
        let x = data[1][3].clone();
        assert_eq!(ncm_classify(&x, &singles, &identity).unwrap(), classify(&x, &sp, &identity).unwrap());
    }

    #[test]
    fn ncm_matches_brute_force() {
        let data = clusters(31, 4, 6, 5);
        let mut rng = RngStream::new(8);
        for _ in 0..30 {
            let x: Vec<f64> = (0..5).map(|_| 5.0 * rng.normal()).collect();
            let xn = identity(&x).unwrap();
            let mut best = (0, f64::INFINITY);
            for (c, samples) in data.iter().enumerate() {
                let mut acc = vec![0.0; 5];
                for s in samples {
                    let f = identity(s).unwrap();
                    for j in 0..5 {
                        acc[j] += f.as_slice()[j];
                    }
                }
                let mu = identity(&acc).unwrap();
                let d: f64 = mu.as_slice().iter().zip(xn.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            assert_eq!(ncm_classify(&x, &data, &identity).unwrap(), best.0);
        }
        let mut missing = data.clone();
        missing[2].clear();
        assert!(matches!(
            ncm_classify(&[1.0; 5], &missing, &identity),
            Err(Error::MissingData { class: 2 })
        ));
    }

    #[test]
    fn prototypes_follow_the_current_feature_map() {
        let spec = crate::net::NetSpec::new(3, vec![32], 3).unwrap();
        let mut rng = RngStream::new(40);
        let p1 = ModelParams::init(&spec, &mut rng).unwrap();
        let p2 = ModelParams::init(&spec, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let mut mem = ExemplarMemory::new(6);
        mem.push(construct_exemplar_set(0, &xs, 6, &p1, HerdingMode::WithoutReplacement).unwrap())
            .unwrap();
        let a = compute_prototypes(&mem, &p1).unwrap();
        let b = compute_prototypes(&mem, &p2).unwrap();
        let fresh = renormalized_mean(
            &mem.lists()[0]
                .items
                .iter()
                .map(|x| p2.extract_features(x).unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert_ne!(a, b);
        for (u, v) in b.prototypes()[0].as_slice().iter().zip(fresh.as_slice()) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
