use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, FrameRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitProtocol {
    FixedSubjects,
    LeaveOneOut,
    KFoldSubjects(usize),
}

/// Subject-wise split request; mirrors the JSON split file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub protocol: SplitProtocol,
    #[serde(default)]
    pub test_subjects: Vec<String>,
    #[serde(default)]
    pub fold_index: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn fixed(test_subjects: &[&str]) -> Self {
        Self {
            protocol: SplitProtocol::FixedSubjects,
            test_subjects: test_subjects.iter().map(|s| s.to_string()).collect(),
            fold_index: None,
            seed: 0,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::format(path, e.to_string()))
    }
}

/// Indices into the record list, plus the subject partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

fn numeric(id: &str) -> Option<u64> {
    id.parse().ok()
}

fn compare_ids(a: &str, b: &str) -> Ordering {
    match (numeric(a), numeric(b)) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

fn same_subject(a: &str, b: &str) -> bool {
    a == b || matches!((numeric(a), numeric(b)), (Some(x), Some(y)) if x == y)
}

/// Numeric order when ids are integers, lexicographic otherwise.
pub fn sort_subject_ids(ids: &mut [String]) {
    ids.sort_by(|a, b| compare_ids(a, b));
}

/// Fold of each subject (in sorted order) for k-fold: round-robin over the
/// sorted ids, rotated by `seed`.
pub fn fold_of_subjects(sorted: &[String], k: usize, seed: u64) -> Vec<usize> {
    (0..sorted.len()).map(|j| ((j as u64 + seed) % k as u64) as usize).collect()
}

pub fn make_splits(records: &[FrameRecord], spec: &SplitSpec) -> Result<Split, DataError> {
    let set: BTreeSet<&str> = records.iter().map(|r| r.subject_id.as_str()).collect();
    let mut subjects: Vec<String> = set.into_iter().map(String::from).collect();
    sort_subject_ids(&mut subjects);

    let test_subjects: Vec<String> = match spec.protocol {
        SplitProtocol::FixedSubjects => {
            if spec.test_subjects.is_empty() {
                return Err(DataError::InvalidSpec("FixedSubjects needs at least one test subject".into()));
            }
            let mut picked = Vec::new();
            for want in &spec.test_subjects {
                let found = subjects
                    .iter()
                    .find(|s| same_subject(s, want))
                    .ok_or_else(|| DataError::InvalidSpec(format!("test subject {want:?} not in dataset")))?;
                picked.push(found.clone());
            }
            picked
        }
        SplitProtocol::LeaveOneOut => {
            if subjects.len() < 2 {
                return Err(DataError::InvalidSpec("leave-one-out needs at least 2 subjects".into()));
            }
            let fold = spec.fold_index.unwrap_or(0);
            let s = subjects.get(fold).ok_or_else(|| {
                DataError::InvalidSpec(format!("fold {fold} out of range for {} subjects", subjects.len()))
            })?;
            vec![s.clone()]
        }
        SplitProtocol::KFoldSubjects(k) => {
            if subjects.len() < 2 || k < 2 {
                return Err(DataError::InvalidSpec("k-fold needs k >= 2 and at least 2 subjects".into()));
            }
            if k > subjects.len() {
                return Err(DataError::InvalidSpec(format!("k = {k} exceeds {} subjects", subjects.len())));
            }
            let fold = spec.fold_index.unwrap_or(0);
            if fold >= k {
                return Err(DataError::InvalidSpec(format!("fold {fold} out of range for k = {k}")));
            }
            let folds = fold_of_subjects(&subjects, k, spec.seed);
            subjects.iter().zip(folds).filter(|(_, f)| *f == fold).map(|(s, _)| s.clone()).collect()
        }
    };

    let is_test = |id: &str| test_subjects.iter().any(|t| t == id);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        if is_test(&r.subject_id) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    let train_subjects = subjects.iter().filter(|s| !is_test(s)).cloned().collect();
    let mut test_subjects = test_subjects;
    sort_subject_ids(&mut test_subjects);
    Ok(Split { train, test, train_subjects, test_subjects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::image::{DepthFrame, Image};
    use proptest::prelude::*;

    fn records(n_subjects: usize, per: u32) -> Vec<FrameRecord> {
        let mut out = Vec::new();
        for s in 1..=n_subjects {
            for f in 0..per {
                out.push(FrameRecord {
                    subject_id: format!("{s:02}"),
                    sequence_id: "00".into(),
                    frame_index: f,
                    depth: DepthFrame(Image::filled(2, 2, 1.0)),
                    gray: None,
                    head_center_2d: None,
                    head_center_3d: None,
                    joints: None,
                    head_pose: None,
                    shoulder_pose: None,
                    intrinsics: CameraIntrinsics::new(1.0, 1.0).unwrap(),
                });
            }
        }
        out
    }

    fn kfold(k: usize, fold: usize, seed: u64) -> SplitSpec {
        SplitSpec { protocol: SplitProtocol::KFoldSubjects(k), test_subjects: vec![], fold_index: Some(fold), seed }
    }

    #[test]
    fn leave_one_out_fold_zero() {
        let recs = records(20, 3);
        let spec = SplitSpec { protocol: SplitProtocol::LeaveOneOut, test_subjects: vec![], fold_index: Some(0), seed: 0 };
        let s = make_splits(&recs, &spec).unwrap();
        assert_eq!(s.test_subjects, vec!["01".to_string()]);
        assert_eq!(s.train_subjects.len(), 19);
        assert_eq!(s.test.len(), 3);
    }

    #[test]
    fn fixed_pandora_test_subjects() {
        let recs = records(22, 2);
        let s = make_splits(&recs, &SplitSpec::fixed(&["10", "14", "16", "20"])).unwrap();
        assert_eq!(s.test_subjects, vec!["10", "14", "16", "20"]);
        assert_eq!(s.train_subjects.len(), 18);
    }

    #[test]
    fn five_fold_over_twenty() {
        let recs = records(20, 1);
        // oracle: enumerate the round-robin assignment by hand
        for seed in [0u64, 3] {
            let mut seen = BTreeSet::new();
            for fold in 0..5 {
                let s = make_splits(&recs, &kfold(5, fold, seed)).unwrap();
                assert_eq!(s.test_subjects.len(), 4);
                let want: Vec<String> =
                    (1..=20).filter(|j| ((j - 1 + seed as usize) % 5) == fold).map(|j| format!("{j:02}")).collect();
                assert_eq!(s.test_subjects, want);
                for t in s.test_subjects {
                    assert!(seen.insert(t));
                }
            }
            assert_eq!(seen.len(), 20);
        }
    }

    #[test]
    fn k_larger_than_subjects_is_invalid() {
        let recs = records(3, 1);
        assert!(matches!(make_splits(&recs, &kfold(4, 0, 0)), Err(DataError::InvalidSpec(_))));
    }

    #[test]
    fn split_json_shape() {
        let spec: SplitSpec = serde_json::from_str(r#"{"protocol":{"KFoldSubjects":5},"fold_index":2,"seed":7}"#).unwrap();
        assert_eq!(spec, kfold(5, 2, 7));
        let spec: SplitSpec = serde_json::from_str(r#"{"protocol":"FixedSubjects","test_subjects":["10"]}"#).unwrap();
        assert_eq!(spec.protocol, SplitProtocol::FixedSubjects);
    }

    proptest! {
        #[test]
        fn every_protocol_is_subject_disjoint(n in 2usize..12, k in 2usize..6, fold in 0usize..6, seed in 0u64..50) {
            let recs = records(n, 2);
            let mut specs = vec![SplitSpec {
                protocol: SplitProtocol::LeaveOneOut, test_subjects: vec![], fold_index: Some(fold % n), seed,
            }];
            if k <= n {
                specs.push(kfold(k, fold % k, seed));
            }
            for spec in specs {
                let s = make_splits(&recs, &spec).unwrap();
                for &i in &s.train {
                    prop_assert!(!s.test_subjects.contains(&recs[i].subject_id));
                }
                prop_assert_eq!(s.train.len() + s.test.len(), recs.len());
                prop_assert_eq!(s.train_subjects.len() + s.test_subjects.len(), n);
            }
        }
    }
}
