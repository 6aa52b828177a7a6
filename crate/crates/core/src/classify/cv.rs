use serde::{Deserialize, Serialize};

use super::records::{build_features, DiagnosisTask, SubjectRecord};
use super::svm::{svm_train, SvmParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{Matrix, Rng};

/// Out-of-fold score of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledPrediction {
    /// Row in the input record list.
    pub index: usize,
    pub id: String,
    pub fold: usize,
    pub score: f64,
    pub label: f64,
}

/// Fold of every row: each class is shuffled with the seed and dealt out
/// round-robin, so every fold holds `⌊n_c/k⌋` or `⌈n_c/k⌉` of class `c`.
pub fn stratified_folds(labels: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
    }
    let mut rng = Rng::new(seed);
    let mut fold = vec![0; labels.len()];
    for class in [1.0, -1.0] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Insufficient(format!(
                "class {class:+} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

fn select_rows(x: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * x.cols());
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Matrix::new(rows.len(), x.cols(), data).expect("finite rows")
}

/// Stratified k-fold cross-validation. Standardization and the SVM are fit
/// on the training folds only; every subject is scored exactly once.
pub fn cross_validate(
    records: &[SubjectRecord],
    task: DiagnosisTask,
    k: usize,
    seed: u64,
    params: &SvmParams,
    exec: Exec,
) -> Result<Vec<PooledPrediction>> {
    let (x, y) = build_features(records, task)?;
    let fold = stratified_folds(&y, k, seed)?;
    let per_fold = exec.map_range(k, |f| -> Result<Vec<PooledPrediction>> {
        let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = svm_train(&select_rows(&x, &train), &ty, params)?;
        Ok(test
            .into_iter()
            .map(|i| PooledPrediction {
                index: i,
                id: records[i].id.clone(),
                fold: f,
                score: model.decision(x.row(i)),
                label: y[i],
            })
            .collect())
    });
    let mut pooled = Vec::with_capacity(y.len());
    for p in per_fold {
        pooled.extend(p?);
    }
    pooled.sort_by_key(|p| p.index);
    Ok(pooled)
}
