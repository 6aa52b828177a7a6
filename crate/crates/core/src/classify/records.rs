use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    CN,
    AD,
    EMCI,
    LMCI,
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Ok(Sex::M),
            "F" | "FEMALE" => Ok(Sex::F),
            _ => Err(Error::Data(format!("sex must be M or F, got {s:?}"))),
        }
    }
}

impl FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CN" => Ok(Diagnosis::CN),
            "AD" => Ok(Diagnosis::AD),
            "EMCI" => Ok(Diagnosis::EMCI),
            "LMCI" => Ok(Diagnosis::LMCI),
            _ => Err(Error::Data(format!("diagnosis must be CN, AD, EMCI or LMCI, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// cm³
    pub left_volume: f64,
    /// cm³
    pub right_volume: f64,
    /// years
    pub age: f64,
    pub sex: Sex,
    pub diagnosis: Diagnosis,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.left_volume) || !ok(self.right_volume) {
            return Err(Error::Data(format!("subject {}: volumes must be positive", self.id)));
        }
        if !ok(self.age) {
            return Err(Error::Data(format!("subject {}: age must be positive", self.id)));
        }
        Ok(())
    }
}

/// Binary diagnosis task; the first class listed is the positive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosisTask {
    AdVsCn,
    EmciVsLmci,
}

impl DiagnosisTask {
    pub fn positive(self) -> Diagnosis {
        match self {
            DiagnosisTask::AdVsCn => Diagnosis::AD,
            DiagnosisTask::EmciVsLmci => Diagnosis::LMCI,
        }
    }

    pub fn negative(self) -> Diagnosis {
        match self {
            DiagnosisTask::AdVsCn => Diagnosis::CN,
            DiagnosisTask::EmciVsLmci => Diagnosis::EMCI,
        }
    }

    /// `+1` for the positive class, `-1` for the negative one.
    pub fn label(self, d: Diagnosis) -> Option<f64> {
        if d == self.positive() {
            Some(1.0)
        } else if d == self.negative() {
            Some(-1.0)
        } else {
            None
        }
    }
}

impl FromStr for DiagnosisTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ad-cn" | "ad-vs-cn" => Ok(DiagnosisTask::AdVsCn),
            "emci-lmci" | "emci-vs-lmci" => Ok(DiagnosisTask::EmciVsLmci),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected ad-cn or emci-lmci"))),
        }
    }
}

pub const FEATURE_NAMES: [&str; 4] = ["left_volume", "right_volume", "age", "sex"];

/// Feature rows `[left, right, age, sex (M=1, F=0)]` and `±1` labels.
pub fn build_features(records: &[SubjectRecord], task: DiagnosisTask) -> Result<(Matrix, Vec<f64>)> {
    if records.is_empty() {
        return Err(Error::Data("no subjects".into()));
    }
    let mut data = Vec::with_capacity(records.len() * 4);
    let mut y = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        let label = task.label(r.diagnosis).ok_or_else(|| {
            Error::Data(format!("subject {} has diagnosis {:?}, outside task {task:?}", r.id, r.diagnosis))
        })?;
        let sex = if r.sex == Sex::M { 1.0 } else { 0.0 };
        data.extend_from_slice(&[r.left_volume, r.right_volume, r.age, sex]);
        y.push(label);
    }
    Ok((Matrix::new(records.len(), 4, data)?, y))
}

pub const SUBJECT_COLUMNS: [&str; 6] = ["id", "left_volume_cm3", "right_volume_cm3", "age", "sex", "diagnosis"];

/// Parses a comma-separated subject table with a header naming
/// [`SUBJECT_COLUMNS`] (any order, extra columns ignored).
pub fn read_subjects<R: Read>(reader: R) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Data(format!("subject table header: {e}")))?.clone();
    let mut col = [0usize; 6];
    for (slot, name) in col.iter_mut().zip(SUBJECT_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data(format!("subject table lacks column {name:?}")))?;
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("subject table row {}: {e}", line + 2)))?;
        let field = |i: usize| rec.get(col[i]).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| {
                Error::Data(format!("row {}: column {:?} is not a number: {:?}", line + 2, SUBJECT_COLUMNS[i], field(i)))
            })
        };
        let r = SubjectRecord {
            id: field(0).to_string(),
            left_volume: num(1)?,
            right_volume: num(2)?,
            age: num(3)?,
            sex: field(4).parse().map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?,
            diagnosis: field(5).parse().map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?,
        };
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_subjects(records: &[SubjectRecord]) -> String {
    let mut s = SUBJECT_COLUMNS.join(",");
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{:?},{:?}\n",
            r.id, r.left_volume, r.right_volume, r.age, r.sex, r.diagnosis
        ));
    }
    s
}
