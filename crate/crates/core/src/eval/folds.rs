//! Leave-one-patient-out fold construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_id: usize,
    pub test_patient: String,
    pub train_patients: Vec<String>,
}

/// One fold per patient, ordered by patient id; `k` must equal the number
/// of distinct patients.
pub fn make_folds(patients: &[String], k: usize) -> Result<Vec<FoldSpec>> {
    let mut ids = patients.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != patients.len() {
        return Err(Error::Config("duplicate patient ids".into()));
    }
    if k != ids.len() || k < 2 {
        return Err(Error::Config(format!(
            "leave-one-patient-out needs K equal to the patient count ({}), got K = {k}",
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, test)| FoldSpec {
            fold_id: i,
            test_patient: test.clone(),
            train_patients: ids.iter().filter(|p| *p != test).cloned().collect(),
        })
        .collect())
}
