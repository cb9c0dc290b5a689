//! Patient-disjoint dataset splitting.

use rand::seq::SliceRandom;
use std::collections::{HashMap, HashSet};

use super::types::{DatasetSplit, ImageRecord};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// RNG stream id for the split shuffle, fixed so other consumers of the same
/// base seed stay decoupled.
const SPLIT_STREAM: u64 = 0x53_50_4c_49; // "SPLI"

/// Partition records into train/val/test so that every image of a patient
/// lands in exactly one split.
///
/// Unique patient ids are collected in first-appearance order, shuffled with
/// an RNG derived from `seed`, and cut at the cumulative ratios (rounded to
/// the nearest patient count). Deterministic for fixed input order and seed.
pub fn split_by_patient(
    records: &[ImageRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r1, r2, r3) = ratios;
    let sum = r1 + r2 + r3;
    if (sum - 1.0).abs() > 1e-9 || r1 < 0.0 || r2 < 0.0 || r3 < 0.0 {
        return Err(Error::InvalidRatios(format!(
            "ratios ({r1}, {r2}, {r3}) must be nonnegative and sum to 1"
        )));
    }

    // First-appearance order makes the pre-shuffle sequence independent of
    // hash-map iteration order.
    let mut patients: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for rec in records {
        if seen.insert(rec.patient_id.as_str()) {
            patients.push(rec.patient_id.as_str());
        }
    }

    let mut rng = stream_rng(seed, SPLIT_STREAM);
    patients.shuffle(&mut rng);

    let p = patients.len();
    let cut1 = (p as f64 * r1).round() as usize;
    let cut2 = (p as f64 * (r1 + r2)).round() as usize;
    let cut1 = cut1.min(p);
    let cut2 = cut2.clamp(cut1, p);

    let mut assignment: HashMap<&str, u8> = HashMap::with_capacity(p);
    for (i, &pid) in patients.iter().enumerate() {
        let bucket = if i < cut1 {
            0
        } else if i < cut2 {
            1
        } else {
            2
        };
        assignment.insert(pid, bucket);
    }

    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for rec in records {
        match assignment[rec.patient_id.as_str()] {
            0 => split.train.push(rec.clone()),
            1 => split.val.push(rec.clone()),
            _ => split.test.push(rec.clone()),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::HashSet;

    fn rec(image_id: &str, patient_id: &str) -> ImageRecord {
        ImageRecord {
            image_id: image_id.to_string(),
            patient_id: patient_id.to_string(),
            pixels: Array2::zeros((4, 4)),
            sex: 0,
            age_bin: 0,
            findings: [0; 15],
        }
    }

    fn patient_sets(split: &DatasetSplit) -> [HashSet<String>; 3] {
        let collect = |v: &[ImageRecord]| v.iter().map(|r| r.patient_id.clone()).collect();
        [
            collect(&split.train),
            collect(&split.val),
            collect(&split.test),
        ]
    }

    #[test]
    fn ten_patients_split_eight_one_one() {
        let records: Vec<_> = (0..10)
            .map(|i| rec(&format!("img{i}"), &format!("P{i}")))
            .collect();
        let split = split_by_patient(&records, (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn images_of_one_patient_stay_together() {
        let mut records = vec![rec("a", "P0"), rec("b", "P0"), rec("c", "P0")];
        for i in 1..10 {
            records.push(rec(&format!("img{i}"), &format!("P{i}")));
        }
        let split = split_by_patient(&records, (0.8, 0.1, 0.1), 7).unwrap();
        let sets = patient_sets(&split);
        let holders: Vec<_> = sets.iter().filter(|s| s.contains("P0")).collect();
        assert_eq!(holders.len(), 1);
        // All three P0 images are in that one split.
        let total = split.train.len() + split.val.len() + split.test.len();
        assert_eq!(total, records.len());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let records: Vec<_> = (0..1000)
            .map(|i| rec(&format!("img{i}"), &format!("P{i}")))
            .collect();
        let a = split_by_patient(&records, (0.8, 0.1, 0.1), 0).unwrap();
        let b = split_by_patient(&records, (0.8, 0.1, 0.1), 0).unwrap();
        let ids = |v: &[ImageRecord]| v.iter().map(|r| r.image_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.val), ids(&b.val));
        assert_eq!(ids(&a.test), ids(&b.test));
    }

    #[test]
    fn disjoint_across_many_seeds() {
        // Multi-image patients plus singletons, checked over 100 seeds.
        let mut records = Vec::new();
        for i in 0..50 {
            let n_images = 1 + i % 4;
            for j in 0..n_images {
                records.push(rec(&format!("img{i}-{j}"), &format!("P{i}")));
            }
        }
        for seed in 0..100 {
            let split = split_by_patient(&records, (0.8, 0.1, 0.1), seed).unwrap();
            let [tr, va, te] = patient_sets(&split);
            assert!(tr.is_disjoint(&va), "seed {seed}");
            assert!(tr.is_disjoint(&te), "seed {seed}");
            assert!(va.is_disjoint(&te), "seed {seed}");
            let total = split.train.len() + split.val.len() + split.test.len();
            assert_eq!(total, records.len(), "seed {seed}");
        }
    }

    #[test]
    fn proportions_track_ratios_on_patient_counts() {
        let records: Vec<_> = (0..500)
            .map(|i| rec(&format!("img{i}"), &format!("P{i}")))
            .collect();
        let split = split_by_patient(&records, (0.8, 0.1, 0.1), 3).unwrap();
        let frac = |v: &[ImageRecord]| v.len() as f64 / records.len() as f64;
        assert!((frac(&split.train) - 0.8).abs() <= 0.02);
        assert!((frac(&split.val) - 0.1).abs() <= 0.02);
        assert!((frac(&split.test) - 0.1).abs() <= 0.02);
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let records = vec![rec("a", "P0")];
        assert!(matches!(
            split_by_patient(&records, (0.8, 0.1, 0.2), 0),
            Err(Error::InvalidRatios(_))
        ));
        assert!(matches!(
            split_by_patient(&records, (1.2, -0.1, -0.1), 0),
            Err(Error::InvalidRatios(_))
        ));
    }
}
