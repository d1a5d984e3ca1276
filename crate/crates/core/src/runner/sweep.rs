//! One-axis hyperparameter sweeps.

use std::str::FromStr;

use crate::error::{PogmError, Result};

use super::config::ExperimentConfig;
use super::output::format_real;
use super::run::{run, RunRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Alpha,
    /// Local epochs per round.
    Epochs,
    Kappa,
}

impl FromStr for Axis {
    type Err = PogmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Axis::Alpha),
            "E" | "e" | "epochs" => Ok(Axis::Epochs),
            "kappa" => Ok(Axis::Kappa),
            _ => Err(PogmError::Config(format!(
                "unknown sweep axis {s:?} (expected alpha, E or kappa)"
            ))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::Epochs => "E",
            Axis::Kappa => "kappa",
        }
    }

    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            Axis::Alpha => cfg.meta.alpha = value,
            Axis::Kappa => cfg.meta.kappa = value,
            Axis::Epochs => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(PogmError::Config(format!("E must be a positive integer, got {value}")));
                }
                cfg.inner.epochs = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub n_seeds: usize,
    pub mean: f64,
    pub stderr: f64,
    pub records: Vec<RunRecord>,
}

/// Mean and standard error (`sd / sqrt(n)`, 0 for a single value).
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(PogmError::Empty("values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Final held-out score of a seed: accuracy, or loss for regression tasks.
pub fn final_score(r: &RunRecord) -> Option<f64> {
    r.final_test.map(|e| e.acc.unwrap_or(e.loss))
}

pub fn sweep(base: &ExperimentConfig, axis: Axis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(PogmError::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = axis.apply(base, value)?;
        let records = run(&cfg)?;
        let finals: Vec<f64> = records.iter().filter_map(final_score).collect();
        if finals.is_empty() {
            return Err(PogmError::NumericRound {
                round: 0,
                message: format!("every seed failed at {} = {value}", axis.name()),
            });
        }
        let (mean, stderr) = mean_stderr(&finals)?;
        rows.push(SweepRow {
            axis,
            value,
            n_seeds: finals.len(),
            mean,
            stderr,
            records,
        });
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,n_seeds,mean,stderr,formatted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.4} ± {:.4}\n",
            r.axis.name(),
            r.value,
            r.n_seeds,
            format_real(r.mean),
            format_real(r.stderr),
            r.mean,
            r.stderr
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_stderr_by_hand() {
        let (m, s) = mean_stderr(&[0.5, 0.7, 0.9]).unwrap();
        assert!((m - 0.7).abs() < 1e-15);
        // sd = 0.2, stderr = 0.2 / sqrt(3)
        assert!((s - 0.2 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[0.4]).unwrap(), (0.4, 0.0));
        assert!(mean_stderr(&[]).is_err());
    }

    #[test]
    fn axis_names() {
        assert_eq!("kappa".parse::<Axis>().unwrap(), Axis::Kappa);
        assert_eq!("E".parse::<Axis>().unwrap(), Axis::Epochs);
        assert!("beta".parse::<Axis>().is_err());
    }
}
