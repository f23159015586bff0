//! Metrics on the original currency scale, improvement accounting, and
//! report emission. Predictions are made in log space and exponentiated
//! before any metric is computed.

use serde::{Deserialize, Serialize};

use crate::tabular::inv_log_target;
use crate::{Error, Result};

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok((pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
        .sqrt())
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("metric".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// MAE/RMSE on the currency scale plus run metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub strategy: String,
    pub split: String,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
    pub config_digest: String,
}

impl EvalReport {
    pub fn new(
        strategy: &str,
        split: &str,
        seed: u64,
        mae: f64,
        rmse: f64,
        n: usize,
        config_digest: &str,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("report".into()));
        }
        if mae > rmse + 1e-9 {
            return Err(Error::InvalidValue(format!(
                "MAE {mae} exceeds RMSE {rmse}"
            )));
        }
        Ok(EvalReport {
            strategy: strategy.into(),
            split: split.into(),
            seed,
            mae,
            rmse,
            n,
            config_digest: config_digest.into(),
        })
    }
}

/// Build a report from log-space predictions and currency-scale truths;
/// the log transform is inverted before metric computation.
///
/// ```
/// use mvre::evalreport::evaluate;
///
/// let log_preds = vec![100.0f64.ln(), 200.0f64.ln()];
/// let truths = vec![110.0, 190.0];
/// let report = evaluate("baseline", "random", 0, &log_preds, &truths, "digest")?;
/// assert!((report.mae - 10.0).abs() < 1e-9);
/// assert!(report.mae <= report.rmse);
/// # Ok::<(), mvre::Error>(())
/// ```
pub fn evaluate(
    strategy: &str,
    split: &str,
    seed: u64,
    log_preds: &[f64],
    truth_currency: &[f64],
    config_digest: &str,
) -> Result<EvalReport> {
    let preds: Vec<f64> = log_preds.iter().map(|&p| inv_log_target(p)).collect();
    let m = mae(&preds, truth_currency)?;
    let r = rmse(&preds, truth_currency)?;
    EvalReport::new(strategy, split, seed, m, r, preds.len(), config_digest)
}

/// Percent MAE improvement of `b` over `a`, on the same split.
pub fn improvement(a: &EvalReport, b: &EvalReport) -> Result<f64> {
    if a.split != b.split {
        return Err(Error::InvalidValue(format!(
            "split mismatch: '{}' vs '{}'",
            a.split, b.split
        )));
    }
    Ok((a.mae - b.mae) / a.mae * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidValue(format!("unknown format '{other}'"))),
        }
    }
}

/// Strategy order used for deterministic report emission.
pub const STRATEGY_ORDER: [&str; 6] = ["baseline", "m1", "m2", "m3", "m4", "m5"];

fn strategy_rank(name: &str) -> usize {
    STRATEGY_ORDER
        .iter()
        .position(|&s| s == name)
        .unwrap_or(STRATEGY_ORDER.len())
}

/// Emit a deterministic document: rows sorted by strategy order, then seed.
pub fn emit(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("emit".into()));
    }
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    rows.sort_by_key(|r| (strategy_rank(&r.strategy), r.seed, r.split.clone()));
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("strategy,split,seed,mae,rmse,n,config_digest\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{:.4},{:.4},{},{}\n",
                    r.strategy, r.split, r.seed, r.mae, r.rmse, r.n, r.config_digest
                ));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| Model | Split | Seed | MAE | RMSE | n |\n|---|---|---|---|---|---|\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {:.2} | {:.2} | {} |\n",
                    r.strategy, r.split, r.seed, r.mae, r.rmse, r.n
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => {
            let owned: Vec<EvalReport> = rows.into_iter().cloned().collect();
            Ok(serde_json::to_string_pretty(&owned)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let v = vec![1.0, 2.0];
        assert_eq!(mae(&v, &v).unwrap(), 0.0);
        assert_eq!(rmse(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_errors() {
        let p = vec![0.0, 0.0];
        let t = vec![3.0, -3.0];
        assert_eq!(mae(&p, &t).unwrap(), 3.0);
        assert_eq!(rmse(&p, &t).unwrap(), 3.0);
    }

    #[test]
    fn mae_below_rmse() {
        let p = vec![0.0, 0.0];
        let t = vec![0.0, 4.0];
        let m = mae(&p, &t).unwrap();
        let r = rmse(&p, &t).unwrap();
        assert_eq!(m, 2.0);
        assert!((r - 2.828427).abs() < 1e-5);
        assert!(m <= r);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn evaluate_inverts_log() {
        let truth = vec![(12.3f64).exp()];
        let rep = evaluate("baseline", "random", 0, &[12.0], &truth, "d").unwrap();
        let expect = (12.3f64).exp() - (12.0f64).exp();
        assert!((rep.mae - expect).abs() < 1e-6);
    }

    #[test]
    fn evaluate_zero_error_in_log_space() {
        let truth = vec![1000.0, 2000.0];
        let logs: Vec<f64> = truth.iter().map(|t: &f64| t.ln()).collect();
        let rep = evaluate("m5", "random", 1, &logs, &truth, "d").unwrap();
        assert!(rep.mae < 1e-9);
    }

    #[test]
    fn report_rejects_mae_above_rmse() {
        assert!(EvalReport::new("baseline", "s", 0, 3.0, 2.0, 5, "d").is_err());
    }

    #[test]
    fn improvement_paper_anchor() {
        // 40,303 -> 34,890 USD equals a 13.4% improvement
        let a = EvalReport::new("baseline", "geo", 0, 40_303.0, 71_518.0, 1916, "d").unwrap();
        let b = EvalReport::new("m5", "geo", 0, 34_890.0, 56_099.0, 1916, "d").unwrap();
        let imp = improvement(&a, &b).unwrap();
        assert!((imp - 13.43).abs() < 0.01, "{imp}");
        assert_eq!(improvement(&a, &a).unwrap(), 0.0);
        let x = EvalReport::new("m2", "geo", 0, 100.0, 100.0, 10, "d").unwrap();
        let y = EvalReport::new("m4", "geo", 0, 50.0, 60.0, 10, "d").unwrap();
        assert_eq!(improvement(&x, &y).unwrap(), 50.0);
    }

    #[test]
    fn improvement_requires_same_split() {
        let a = EvalReport::new("baseline", "geo", 0, 10.0, 10.0, 5, "d").unwrap();
        let b = EvalReport::new("m5", "random", 0, 10.0, 10.0, 5, "d").unwrap();
        assert!(improvement(&a, &b).is_err());
    }

    #[test]
    fn emit_sorted_and_deterministic() {
        let mut reports = Vec::new();
        for seed in [1u64, 0] {
            for s in ["m5", "baseline", "m2"] {
                reports.push(EvalReport::new(s, "random", seed, 10.0, 12.0, 5, "d").unwrap());
            }
        }
        let a = emit(&reports, ReportFormat::Csv).unwrap();
        let b = emit(&reports, ReportFormat::Csv).unwrap();
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 7); // header + 6 rows
        assert!(lines[1].starts_with("baseline,random,0"));
        assert!(lines[2].starts_with("baseline,random,1"));
        assert!(lines[6].starts_with("m5,random,1"));
        assert!(emit(&reports, "json".parse().unwrap()).is_ok());
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
