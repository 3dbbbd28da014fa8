//! Patient-level, label-stratified k-fold splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_for;

use super::{Label, ManifestEntry};

/// Indices (into the entry slice given to [`split_folds`]) of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Splits entries into `k` folds so that no patient spans two folds and each
/// label's patients are spread over the folds as evenly as possible.
/// Unlabeled patients form their own stratum.
pub fn split_folds(entries: &[ManifestEntry], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold split needs k >= 2, got {k}")));
    }
    // patient -> (stratum label, entry indices); BTreeMap keeps the order seed-stable.
    let mut patients: BTreeMap<&str, (Option<Label>, Vec<usize>)> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        let p = patients.entry(e.patient_id.as_str()).or_insert((None, Vec::new()));
        if p.0.is_none() {
            p.0 = e.label;
        }
        p.1.push(i);
    }
    let mut strata: BTreeMap<Option<Label>, Vec<&str>> = BTreeMap::new();
    for (pid, (label, _)) in &patients {
        strata.entry(*label).or_default().push(pid);
    }
    for (label, members) in &strata {
        if let Some(l) = label {
            if members.len() < k {
                return Err(Error::Data(format!(
                    "class {l:?} has {} patients, fewer than the {k} folds requested",
                    members.len()
                )));
            }
        }
    }

    let mut rng = rng_for(seed, &[0x5E11]);
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut counter = 0;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for pid in members.iter() {
            fold_of.insert(pid, counter % k);
            counter += 1;
        }
    }

    let mut folds = vec![Vec::new(); k];
    for (pid, (_, idx)) in &patients {
        folds[fold_of[pid]].extend_from_slice(idx);
    }
    Ok((0..k)
        .map(|f| Fold {
            validation: folds[f].clone(),
            train: (0..k).filter(|g| *g != f).flat_map(|g| folds[g].iter().copied()).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Partition;
    use std::collections::{BTreeSet, HashSet};

    fn entries(labels: &[Option<Label>]) -> Vec<ManifestEntry> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| ManifestEntry {
                study_id: format!("S{i}"),
                patient_id: format!("P{i}"),
                label: *l,
                partition: Partition::Dev,
                clips: Default::default(),
                flattening: None,
                view_flattening: Default::default(),
            })
            .collect()
    }

    #[test]
    fn fifty_patients_give_folds_of_ten() {
        let labels: Vec<_> = (0..50).map(|i| Some(Label::ALL[i % 3])).collect();
        let folds = split_folds(&entries(&labels), 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.validation.len() == 10 && f.train.len() == 40));
    }

    #[test]
    fn stratified_within_one_of_ideal_by_enumeration() {
        // 20-patient toy: 11 / 5 / 4 per class.
        let mut labels = vec![Some(Label::None); 11];
        labels.extend(vec![Some(Label::Mild); 5]);
        labels.extend(vec![Some(Label::ModerateSevere); 4]);
        let es = entries(&labels);
        for seed in 0..20 {
            let folds = split_folds(&es, 4, seed).unwrap();
            for f in &folds {
                for class in Label::ALL {
                    let total = labels.iter().filter(|l| **l == Some(class)).count();
                    let ideal = total as f64 / 4.0;
                    let got = f.validation.iter().filter(|&&i| labels[i] == Some(class)).count();
                    assert!((got as f64 - ideal).abs() < 1.0 + 1e-12, "class {class:?}: {got} vs {ideal}");
                }
            }
        }
    }

    #[test]
    fn patients_with_several_studies_stay_together() {
        let mut es = entries(&(0..30).map(|i| Some(Label::ALL[i % 3])).collect::<Vec<_>>());
        for (i, e) in es.iter_mut().enumerate() {
            e.patient_id = format!("P{}", i / 2);
        }
        let folds = split_folds(&es, 3, 9).unwrap();
        let sets: Vec<HashSet<&str>> = folds
            .iter()
            .map(|f| f.validation.iter().map(|&i| es[i].patient_id.as_str()).collect())
            .collect();
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(sets[a].is_disjoint(&sets[b]));
            }
        }
        let all: BTreeSet<usize> = folds.iter().flat_map(|f| f.validation.iter().copied()).collect();
        assert_eq!(all.len(), 30);
    }

    #[test]
    fn too_few_patients_per_class_is_an_error() {
        let labels = vec![Some(Label::None), Some(Label::None), Some(Label::Mild)];
        assert!(split_folds(&entries(&labels), 2, 0).is_err());
        assert!(split_folds(&entries(&labels), 1, 0).is_err());
    }
}
