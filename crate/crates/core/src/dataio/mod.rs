// SPDX-License-Identifier: Apache-2.0

//! Patch feature datasets, the synthetic ordinal generator, and checkpoints.

mod checkpoint;
mod csv;
mod synth;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use self::checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use self::csv::{load_csv, load_csv_unlabeled, save_csv, write_csv};
pub use self::synth::{curve_point, synth_generate, SynthParams};

/// One patch: its bag, its id within the bag, an optional grade label, and
/// the precomputed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub bag_id: String,
    pub patch_id: String,
    pub label: Option<usize>,
    pub features: Vec<f64>,
}

/// Patches grouped by bag id, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub id: String,
    /// Record indices.
    pub patches: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    input_dim: usize,
    num_grades: usize,
    records: Vec<PatchRecord>,
}

impl FeatureDataset {
    /// Checks shared feature length, label range, id grammar, and
    /// `(bag_id, patch_id)` uniqueness.
    pub fn new(input_dim: usize, num_grades: usize, records: Vec<PatchRecord>) -> Result<Self> {
        if input_dim == 0 || num_grades == 0 {
            return Err(Error::invalid("input_dim and num_grades must be positive"));
        }
        let mut seen = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != input_dim {
                return Err(Error::invalid(format!(
                    "record {i}: {} features, expected {input_dim}",
                    r.features.len()
                )));
            }
            if let Some(y) = r.label {
                if y >= num_grades {
                    return Err(Error::invalid(format!(
                        "record {i}: label {y} out of range for {num_grades} grades"
                    )));
                }
            }
            for id in [&r.bag_id, &r.patch_id] {
                if !valid_id(id) {
                    return Err(Error::invalid(format!("record {i}: invalid id {id:?}")));
                }
            }
            if let Some(j) = seen.insert((r.bag_id.as_str(), r.patch_id.as_str()), i) {
                return Err(Error::invalid(format!(
                    "records {j} and {i} share (bag_id, patch_id)"
                )));
            }
        }
        Ok(Self {
            input_dim,
            num_grades,
            records,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_grades(&self) -> usize {
        self.num_grades
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    /// All labels; errors if any record is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.label.ok_or_else(|| {
                    Error::invalid(format!(
                        "record {i} ({}/{}) has no label",
                        r.bag_id, r.patch_id
                    ))
                })
            })
            .collect()
    }

    pub fn feature_rows(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.features.as_slice()).collect()
    }

    pub fn bags(&self) -> Vec<Bag> {
        let mut order: Vec<Bag> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let slot = *index.entry(r.bag_id.as_str()).or_insert_with(|| {
                order.push(Bag {
                    id: r.bag_id.clone(),
                    patches: Vec::new(),
                });
                order.len() - 1
            });
            order[slot].patches.push(i);
        }
        order
    }

    /// Bag label: the label shared by its patches, or the most frequent one
    /// (ties toward the higher grade) if they disagree.
    pub fn bag_label(&self, bag: &Bag) -> Result<usize> {
        let mut counts = vec![0usize; self.num_grades];
        for &i in &bag.patches {
            let y = self.records[i].label.ok_or_else(|| {
                Error::invalid(format!("bag {} has unlabeled patches", bag.id))
            })?;
            counts[y] += 1;
        }
        let mut best = 0;
        for (g, c) in counts.iter().enumerate() {
            if *c >= counts[best] {
                best = g;
            }
        }
        Ok(best)
    }
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(bag: &str, patch: &str, label: usize) -> PatchRecord {
        PatchRecord {
            bag_id: bag.into(),
            patch_id: patch.into(),
            label: Some(label),
            features: vec![0.0, 1.0],
        }
    }

    #[test]
    fn groups_bags_in_first_seen_order() {
        let ds = FeatureDataset::new(
            2,
            5,
            vec![rec("b", "0", 1), rec("a", "0", 2), rec("b", "1", 1)],
        )
        .unwrap();
        let bags = ds.bags();
        assert_eq!(bags.len(), 2);
        assert_eq!(bags[0].id, "b");
        assert_eq!(bags[0].patches, vec![0, 2]);
        assert_eq!(ds.bag_label(&bags[1]).unwrap(), 2);
    }

    #[test]
    fn rejects_invalid_records() {
        assert!(FeatureDataset::new(2, 5, vec![rec("a", "0", 5)]).is_err());
        assert!(FeatureDataset::new(2, 5, vec![rec("a", "0", 1), rec("a", "0", 2)]).is_err());
        assert!(FeatureDataset::new(2, 5, vec![rec("a b", "0", 1)]).is_err());
        let mut short = rec("a", "0", 1);
        short.features.pop();
        assert!(FeatureDataset::new(2, 5, vec![short]).is_err());
    }
}
