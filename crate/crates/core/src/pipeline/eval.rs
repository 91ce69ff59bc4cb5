//! Per-case metrics and mean ± std summaries.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::train::match_files;
use crate::metrics::{balanced_ahd, dice, jaccard};
use crate::nifti::read_mask;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case: String,
    pub dice: f64,
    pub jaccard: f64,
    /// `+inf` when the prediction is empty.
    pub balanced_ahd: f64,
}

/// JSON form of a case; infinite distances are written as the string "inf".
#[derive(Serialize)]
struct CaseRecord<'a> {
    case: &'a str,
    dice: f64,
    jaccard: f64,
    balanced_ahd: serde_json::Value,
    empty_prediction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if !mean.is_finite() {
            return Self { mean, std: f64::NAN, n };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self { mean, std: var.sqrt(), n }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub cases: Vec<CaseMetrics>,
    pub dice: Summary,
    pub jaccard: Summary,
    pub balanced_ahd: Summary,
    /// Cases whose prediction was empty (infinite distance).
    pub flagged: Vec<String>,
}

impl EvalReport {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Self {
        let col = |f: fn(&CaseMetrics) -> f64| cases.iter().map(f).collect::<Vec<_>>();
        let flagged = cases
            .iter()
            .filter(|c| c.balanced_ahd.is_infinite())
            .map(|c| c.case.clone())
            .collect();
        Self {
            dice: Summary::of(&col(|c| c.dice)),
            jaccard: Summary::of(&col(|c| c.jaccard)),
            balanced_ahd: Summary::of(&col(|c| c.balanced_ahd)),
            flagged,
            cases,
        }
    }

    /// One JSON object per line.
    pub fn cases_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.cases {
            let rec = CaseRecord {
                case: &c.case,
                dice: c.dice,
                jaccard: c.jaccard,
                balanced_ahd: if c.balanced_ahd.is_finite() {
                    serde_json::json!(c.balanced_ahd)
                } else {
                    serde_json::json!("inf")
                },
                empty_prediction: c.balanced_ahd.is_infinite(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// `metric,mean,std,n,formatted` rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,mean,std,n,formatted\n");
        for (name, s) in [("dice", self.dice), ("jaccard", self.jaccard), ("balanced_ahd", self.balanced_ahd)] {
            out.push_str(&format!(
                "{name},{},{},{},{} ± {}\n",
                fmt(s.mean),
                fmt(s.std),
                s.n,
                fmt4(s.mean),
                fmt4(s.std)
            ));
        }
        out
    }
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn fmt4(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Metrics for every file name present in both directories; any unmatched
/// name is a data error.
pub fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path) -> Result<EvalReport> {
    let pairs = match_files(pred_dir, truth_dir)?;
    if pairs.is_empty() {
        return Err(Error::Data(format!("no masks found in {}", pred_dir.display())));
    }
    let cases: Result<Vec<CaseMetrics>> = pairs
        .par_iter()
        .map(|(name, pp, tp)| {
            let pred = read_mask(pp)?;
            let truth = read_mask(tp)?;
            if pred.shape() != truth.shape() {
                return Err(Error::Data(format!(
                    "{name}: prediction {:?} and truth {:?} differ in shape",
                    pred.shape(),
                    truth.shape()
                )));
            }
            let spacing = crate::volume::axis_spacing(truth.affine());
            Ok(CaseMetrics {
                case: name.clone(),
                dice: dice(&truth, &pred)?,
                jaccard: jaccard(&truth, &pred)?,
                balanced_ahd: balanced_ahd(&truth, &pred, Some(spacing))?,
            })
        })
        .collect();
    Ok(EvalReport::from_cases(cases?))
}

/// Files written by [`eval`].
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub cases_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Evaluate and write `cases.jsonl` and `summary.csv` into `out_dir`.
pub fn eval(pred_dir: &Path, truth_dir: &Path, out_dir: &Path) -> Result<EvalOutput> {
    let report = evaluate_dirs(pred_dir, truth_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cases_path = out_dir.join("cases.jsonl");
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&cases_path, report.cases_jsonl()?).map_err(|e| Error::io(&cases_path, e))?;
    let mut f = std::fs::File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    f.write_all(report.summary_csv().as_bytes()).map_err(|e| Error::io(&summary_path, e))?;
    for c in &report.flagged {
        log::warn!("{c}: empty prediction, balanced AHD is infinite");
    }
    Ok(EvalOutput {
        report,
        cases_path,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(d: f64, h: f64) -> CaseMetrics {
        CaseMetrics {
            case: "c".into(),
            dice: d,
            jaccard: d / (2.0 - d),
            balanced_ahd: h,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
        let s = Summary::of(&[1.0]);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn infinite_distance_is_flagged() {
        let r = EvalReport::from_cases(vec![case(0.0, f64::INFINITY), case(1.0, 0.0)]);
        assert_eq!(r.flagged.len(), 1);
        let j = r.cases_jsonl().unwrap();
        let first: serde_json::Value = serde_json::from_str(j.lines().next().unwrap()).unwrap();
        assert_eq!(first["balanced_ahd"], "inf");
        assert_eq!(first["empty_prediction"], true);
        assert!(r.summary_csv().contains("balanced_ahd,inf,NaN,2"));
    }
}
