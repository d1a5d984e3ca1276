//! Side-by-side comparison of runs that share a task and seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::diagnostics::{pearson, Metric, MetricsRow};
use crate::error::{PogmError, Result};

use super::config::ExperimentConfig;
use super::output::{format_real, read_metrics_csv, write_atomic};
use super::run::{load_record, run, seed_dir};

/// Metrics of one labelled config, keyed by seed.
#[derive(Clone, Debug)]
pub struct LabelledRuns {
    pub label: String,
    pub by_seed: BTreeMap<u64, Vec<MetricsRow>>,
}

/// Labels are made unique by appending `#i` (the config's position) to
/// repeats.
pub fn unique_labels(configs: &[ExperimentConfig]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let base = c.label();
            if seen.insert(base.clone()) {
                base
            } else {
                format!("{base}#{i}")
            }
        })
        .collect()
}

fn check_compatible(configs: &[ExperimentConfig]) -> Result<()> {
    let first = configs.first().ok_or(PogmError::Empty("config list"))?;
    for c in &configs[1..] {
        if c.task != first.task || c.task_params()? != first.task_params()? {
            return Err(PogmError::Alignment("configs use different tasks".into()));
        }
        if c.seeds != first.seeds {
            return Err(PogmError::Alignment("configs use different seeds".into()));
        }
        if c.holdout_domain != first.holdout_domain {
            return Err(PogmError::Alignment("configs hold out different domains".into()));
        }
    }
    Ok(())
}

/// Loads each config's per-seed metrics, running seeds that have no
/// successful record on disk yet.
pub fn collect(configs: &[ExperimentConfig]) -> Result<Vec<LabelledRuns>> {
    check_compatible(configs)?;
    let labels = unique_labels(configs);
    let mut out = Vec::with_capacity(configs.len());
    for (cfg, label) in configs.iter().zip(labels) {
        let complete = cfg
            .seeds
            .iter()
            .all(|&s| load_record(&seed_dir(cfg, s)).is_ok_and(|r| r.ok()));
        if !complete {
            run(cfg)?;
        }
        let mut by_seed = BTreeMap::new();
        for &seed in &cfg.seeds {
            let path = seed_dir(cfg, seed).join("metrics.csv");
            let file = std::fs::File::open(&path)?;
            by_seed.insert(seed, read_metrics_csv(std::io::BufReader::new(file))?);
        }
        out.push(LabelledRuns { label, by_seed });
    }
    Ok(out)
}

/// Per-round mean of `metric` over seeds and domains.
pub fn round_series(runs: &LabelledRuns, metric: Metric) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for rows in runs.by_seed.values() {
        for r in rows.iter().filter(|r| r.metric == metric) {
            let e = acc.entry(r.round).or_default();
            e.0 += r.value;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Mean Pearson correlation over all domain pairs of the per-round
/// `grad_angle` series of one seed. Pairs with a constant series are skipped.
pub fn angle_correlation(rows: &[MetricsRow]) -> Result<f64> {
    let mut series: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == Metric::GradAngle) {
        let d = r
            .domain_id
            .ok_or_else(|| PogmError::Parse("grad_angle row without domain".into()))?;
        series.entry(d).or_default().push((r.round, r.value));
    }
    let series: Vec<Vec<(usize, f64)>> = series.into_values().collect();
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            let rounds_i: Vec<usize> = series[i].iter().map(|p| p.0).collect();
            let rounds_j: Vec<usize> = series[j].iter().map(|p| p.0).collect();
            if rounds_i != rounds_j {
                return Err(PogmError::Alignment("grad_angle series cover different rounds".into()));
            }
            let a: Vec<f64> = series[i].iter().map(|p| p.1).collect();
            let b: Vec<f64> = series[j].iter().map(|p| p.1).collect();
            match pearson(&a, &b) {
                Ok(c) => {
                    total += c;
                    pairs += 1;
                }
                Err(e) => log::warn!("skipping domain pair ({i}, {j}): {e}"),
            }
        }
    }
    if pairs == 0 {
        return Err(PogmError::InvalidArgument(
            "no domain pair with a defined correlation".into(),
        ));
    }
    Ok(total / pairs as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationRow {
    pub label: String,
    pub seed: u64,
    pub correlation: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    /// One table per metric: `(round, label, value)`.
    pub series: BTreeMap<Metric, Vec<(usize, String, f64)>>,
    pub correlations: Vec<CorrelationRow>,
}

pub fn compare_runs(runs: &[LabelledRuns]) -> Result<Comparison> {
    let mut series = BTreeMap::new();
    for metric in Metric::ALL {
        let per_label: Vec<(String, BTreeMap<usize, f64>)> = runs
            .iter()
            .map(|r| (r.label.clone(), round_series(r, metric)))
            .collect();
        let rounds: Vec<BTreeSet<usize>> =
            per_label.iter().map(|(_, s)| s.keys().copied().collect()).collect();
        if rounds.windows(2).any(|w| w[0] != w[1]) {
            return Err(PogmError::Alignment(format!(
                "{metric} is recorded on different rounds across configs"
            )));
        }
        let mut table = Vec::new();
        for (label, s) in &per_label {
            for (&round, &v) in s {
                table.push((round, label.clone(), v));
            }
        }
        table.sort_by(|a, b| a.0.cmp(&b.0));
        if !table.is_empty() {
            series.insert(metric, table);
        }
    }
    let mut correlations = Vec::new();
    for r in runs {
        for (&seed, rows) in &r.by_seed {
            correlations.push(CorrelationRow {
                label: r.label.clone(),
                seed,
                correlation: angle_correlation(rows)?,
            });
        }
    }
    Ok(Comparison {
        series,
        correlations,
    })
}

/// Writes `{metric}.csv` (columns `round,algo,value`) per metric and
/// `angle_correlation.csv` into `dir`.
pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<()> {
    for (metric, table) in &cmp.series {
        let mut text = String::from("round,algo,value\n");
        for (round, label, v) in table {
            text.push_str(&format!("{round},{label},{}\n", format_real(*v)));
        }
        write_atomic(&dir.join(format!("{}.csv", metric.name())), text.as_bytes())?;
    }
    let mut text = String::from("algo,seed,angle_correlation\n");
    for c in &cmp.correlations {
        text.push_str(&format!("{},{},{}\n", c.label, c.seed, format_real(c.correlation)));
    }
    write_atomic(&dir.join("angle_correlation.csv"), text.as_bytes())
}

pub fn compare(configs: &[ExperimentConfig], dir: &Path) -> Result<Comparison> {
    let runs = collect(configs)?;
    let cmp = compare_runs(&runs)?;
    write_comparison(&cmp, dir)?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angle_rows(values: &[[f64; 2]]) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for (r, v) in values.iter().enumerate() {
            for (d, x) in v.iter().enumerate() {
                rows.push(MetricsRow::new(r, "x", 0, Metric::GradAngle, Some(d), *x).unwrap());
            }
        }
        rows
    }

    #[test]
    fn correlation_of_identical_domains_is_one() {
        let rows = angle_rows(&[[0.1, 0.1], [0.5, 0.5], [0.3, 0.3]]);
        assert_eq!(angle_correlation(&rows).unwrap(), 1.0);
        let anti = angle_rows(&[[0.1, -0.1], [0.5, -0.5], [0.3, -0.3]]);
        assert!((angle_correlation(&anti).unwrap() + 1.0).abs() < 1e-15);
        let flat = angle_rows(&[[0.1, 0.2], [0.1, 0.5]]);
        assert!(angle_correlation(&flat).is_err());
    }

    #[test]
    fn misaligned_rounds_are_rejected() {
        let mut a = BTreeMap::new();
        a.insert(0, angle_rows(&[[0.1, 0.2], [0.3, 0.1]]));
        let mut b = BTreeMap::new();
        b.insert(0, angle_rows(&[[0.1, 0.2]]));
        let runs = [
            LabelledRuns { label: "a".into(), by_seed: a },
            LabelledRuns { label: "b".into(), by_seed: b },
        ];
        assert!(matches!(compare_runs(&runs), Err(PogmError::Alignment(_))));
    }
}
