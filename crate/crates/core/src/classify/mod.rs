//! Volume-based diagnosis: feature assembly, an RBF-kernel SVM trained by
//! SMO, stratified cross-validation and the six-metric report.

mod cohort;
mod cv;
mod records;
mod report;
mod svm;

pub use cohort::{synthetic_cohort, CohortSpec};
pub use cv::{cross_validate, stratified_folds, PooledPrediction};
pub use records::{
    build_features, read_subjects, write_subjects, Diagnosis, DiagnosisTask, Sex, SubjectRecord, FEATURE_NAMES,
    SUBJECT_COLUMNS,
};
pub use report::{classification_report, roc_auc, ClassReport};
pub use svm::{svm_decision, svm_train, Standardizer, SvmModel, SvmParams};
