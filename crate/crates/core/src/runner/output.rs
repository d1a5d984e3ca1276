//! File formats written by runs.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Metric, MetricsRow};
use crate::error::{PogmError, Result};

pub const METRICS_HEADER: &str = "round,algo,seed,metric,domain_id,value";

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| PogmError::InvalidArgument(format!("{} has no parent", path.display())))?;
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| PogmError::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reals are written with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let domain = r.domain_id.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round,
            r.algo,
            r.seed,
            r.metric.name(),
            domain,
            format_real(r.value)
        ));
    }
    out
}

pub fn read_metrics_csv<R: BufRead>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != METRICS_HEADER {
        return Err(PogmError::Parse(format!("unexpected metrics header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| PogmError::Parse(format!("metrics line {}: bad {what}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        rows.push(MetricsRow {
            round: f[0].parse().map_err(|_| bad("round"))?,
            algo: f[1].to_string(),
            seed: f[2].parse().map_err(|_| bad("seed"))?,
            metric: Metric::from_name(f[3]).ok_or_else(|| bad("metric"))?,
            domain_id: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|_| bad("domain_id"))?)
            },
            value: f[5].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(rows)
}

/// One line of `run.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub pi: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub solver_iters: Option<usize>,
    pub deviation_norm: Option<f64>,
    pub test_acc: Option<f64>,
    pub test_loss: f64,
}

pub fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![
            MetricsRow::new(0, "pogm", 3, Metric::GradAngle, Some(1), 0.1 + 0.2).unwrap(),
            MetricsRow::new(1, "pogm", 3, Metric::GradNorm, None, -1.0 / 3.0).unwrap(),
            MetricsRow::new(2, "pogm", 3, Metric::KlB1, None, 1e-300).unwrap(),
        ];
        let text = metrics_csv(&rows);
        assert!(text.starts_with("round,algo,seed,metric,domain_id,value\n"));
        assert!(text.contains("1,pogm,3,grad_norm,,-3.3333333333333331e-1\n"));
        assert!(!text.contains('\r'));
        let back = read_metrics_csv(text.as_bytes()).unwrap();
        assert_eq!(back, rows);
        assert!(read_metrics_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
