//! Gradient-geometry measurements taken once per round.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domains::{DomainDataset, SamplerState};
use crate::error::{PogmError, Result};
use crate::matrix::Matrix;
use crate::model::{ModelSpec, ModelState};
use crate::paramvec::{self, ParamVector};
use crate::simplex::{self, SolverConfig};
use crate::trainer::{inner_train, InnerConfig, InnerOutcome};

/// Floor applied to the second argument of every KL term.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ModelNormDiff,
    GradAngle,
    InvariantAngle,
    GradNorm,
    GipVar,
    MinGipCos,
    KlB1,
    HullTest,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::ModelNormDiff,
        Metric::GradAngle,
        Metric::InvariantAngle,
        Metric::GradNorm,
        Metric::GipVar,
        Metric::MinGipCos,
        Metric::KlB1,
        Metric::HullTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ModelNormDiff => "model_norm_diff",
            Metric::GradAngle => "grad_angle",
            Metric::InvariantAngle => "invariant_angle",
            Metric::GradNorm => "grad_norm",
            Metric::GipVar => "gip_var",
            Metric::MinGipCos => "min_gip_cos",
            Metric::KlB1 => "kl_b1",
            Metric::HullTest => "hull_test",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Whether rows of this metric carry a domain id.
    pub fn per_domain(self) -> bool {
        matches!(self, Metric::ModelNormDiff | Metric::GradAngle)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub algo: String,
    pub seed: u64,
    pub metric: Metric,
    pub domain_id: Option<usize>,
    pub value: f64,
}

impl MetricsRow {
    pub fn new(
        round: usize,
        algo: &str,
        seed: u64,
        metric: Metric,
        domain_id: Option<usize>,
        value: f64,
    ) -> Result<Self> {
        if !value.is_finite() {
            return Err(PogmError::NonFinite {
                op: "metrics row",
                index: round,
            });
        }
        Ok(Self {
            round,
            algo: algo.to_string(),
            seed,
            metric,
            domain_id,
            value,
        })
    }
}

/// Bounded history of `(round, theta)` snapshots; the oldest is evicted first.
#[derive(Clone, Debug)]
pub struct ThetaHistory {
    capacity: usize,
    entries: VecDeque<(usize, ParamVector)>,
}

impl ThetaHistory {
    pub const DEFAULT_CAPACITY: usize = 21;

    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(PogmError::History(format!("capacity {capacity} < 2")));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, round: usize, theta: ParamVector) -> Result<()> {
        if let Some((last, _)) = self.entries.back() {
            if round <= *last {
                return Err(PogmError::History(format!(
                    "round {round} not after latest round {last}"
                )));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((round, theta));
        Ok(())
    }

    pub fn get(&self, round: usize) -> Option<&ParamVector> {
        self.entries
            .binary_search_by_key(&round, |(r, _)| *r)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    fn require(&self, round: usize) -> Result<&ParamVector> {
        self.get(round)
            .ok_or_else(|| PogmError::History(format!("no snapshot for round {round}")))
    }
}

/// `|theta_i - theta_alg|^2`.
pub fn domain_model_norm_diff(theta_domain: &ParamVector, theta_alg: &ParamVector) -> Result<f64> {
    Ok(theta_domain.sub(theta_alg)?.norm_sq())
}

/// Cosine between a domain trajectory and the algorithm's round displacement;
/// 0 when either is degenerate.
pub fn domain_gradient_angle(h_i: &ParamVector, h_alg: &ParamVector) -> Result<f64> {
    Ok(paramvec::cosine(h_i, h_alg)?.value)
}

/// Cosine between `theta_r - theta_{r-1}` and `theta_r - theta_{r-tau}`.
pub fn invariant_angle(history: &ThetaHistory, r: usize, tau: usize) -> Result<f64> {
    if tau == 0 {
        return Err(PogmError::InvalidArgument("tau must be >= 1".into()));
    }
    if tau > r {
        return Err(PogmError::History(format!("round {r} has no lag {tau}")));
    }
    let now = history.require(r)?;
    let last = now.sub(history.require(r - 1)?)?;
    if tau == 1 {
        return Ok(paramvec::cosine(&last, &last)?.value);
    }
    let span = now.sub(history.require(r - tau)?)?;
    Ok(paramvec::cosine(&last, &span)?.value)
}

/// `|theta_r - theta_prev|^2`.
pub fn grad_magnitude_norm(theta_r: &ParamVector, theta_prev: &ParamVector) -> Result<f64> {
    Ok(theta_r.sub(theta_prev)?.norm_sq())
}

/// Unbiased sample variance (Welford's update).
pub fn gip_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(PogmError::InvalidArgument(format!(
            "variance needs at least 2 values, got {}",
            values.len()
        )));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok(m2 / (values.len() - 1) as f64)
}

/// Pearson correlation with a single pass over co-moments.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PogmError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(PogmError::InvalidArgument("pearson needs at least 2 points".into()));
    }
    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let n = (i + 1) as f64;
        let dx = x - ma;
        let dy = y - mb;
        ma += dx / n;
        mb += dy / n;
        saa += dx * (x - ma);
        sbb += dy * (y - mb);
        sab += dx * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(PogmError::InvalidArgument(
            "correlation undefined for a constant series".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HullVerdict {
    CertifiedOutside,
    Inconclusive,
}

/// Sufficient test that `g_target` lies outside the convex hull of
/// `sources`: every `g_target . g_i` is below every `g_i . g_j` with `i != j`.
pub fn hull_exclusion_test(sources: &[ParamVector], g_target: &ParamVector) -> Result<HullVerdict> {
    if sources.len() < 2 {
        return Err(PogmError::InvalidArgument(
            "hull test needs at least 2 source vectors".into(),
        ));
    }
    let mut max_target = f64::NEG_INFINITY;
    for g in sources {
        max_target = max_target.max(g_target.dot(g)?);
    }
    let mut min_pair = f64::INFINITY;
    for i in 0..sources.len() {
        for j in i + 1..sources.len() {
            min_pair = min_pair.min(sources[i].dot(&sources[j])?);
        }
    }
    Ok(if max_target < min_pair {
        HullVerdict::CertifiedOutside
    } else {
        HullVerdict::Inconclusive
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HullMembership {
    pub inside: bool,
    /// Smallest distance from `g_target` to the hull found.
    pub residual: f64,
    pub weights: Vec<f64>,
}

/// Projects `g_target` onto the convex hull of `sources` by minimising
/// `|Σ l_i g_i - g_target|^2` over the simplex.
pub fn hull_membership_oracle(
    sources: &[ParamVector],
    g_target: &ParamVector,
    tol: f64,
) -> Result<HullMembership> {
    if sources.is_empty() {
        return Err(PogmError::Empty("source vectors"));
    }
    if sources.len() > 16 {
        return Err(PogmError::InvalidArgument(format!(
            "hull oracle limited to 16 sources, got {}",
            sources.len()
        )));
    }
    for g in sources {
        if g.len() != g_target.len() {
            return Err(PogmError::Dimension {
                expected: g_target.len(),
                got: g.len(),
            });
        }
    }
    let residual_vec = |l: &[f64]| -> ParamVector {
        let mut r = paramvec::combine(l, sources).expect("checked lengths");
        r = r.sub(g_target).expect("checked lengths");
        r
    };
    let f = |l: &[f64]| residual_vec(l).norm_sq();
    let grad = |l: &[f64]| {
        let r = residual_vec(l);
        sources
            .iter()
            .map(|g| 2.0 * g.dot(&r).expect("checked lengths"))
            .collect()
    };
    let trace: f64 = sources.iter().map(|g| g.norm_sq()).sum();
    let sol = simplex::minimize(
        sources.len(),
        f,
        grad,
        &SolverConfig {
            max_iters: 20_000,
            tol: 0.0,
            step0: 1.0 / (2.0 * trace).max(f64::MIN_POSITIVE),
        },
    )?;
    let residual = residual_vec(&sol.point).norm();
    Ok(HullMembership {
        inside: residual <= tol,
        residual,
        weights: sol.point,
    })
}

/// `D_KL(p || q)` in nats with `0 log 0 = 0` and `q` floored at [`KL_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(KL_FLOOR)).ln())
        .sum()
}

fn mean_rows(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn average_pairwise_kl(dists: &[Vec<f64>]) -> f64 {
    let k = dists.len() as f64;
    let mut total = 0.0;
    for p in dists {
        for q in dists {
            total += kl_divergence(p, q);
        }
    }
    total / (k * k)
}

/// `(1/K^2) Σ_ij KL(p_i || p_j)` between the mean predictive distributions
/// of one model on each domain.
pub fn pairwise_kl_b1(model: &ModelState, domains: &[DomainDataset]) -> Result<f64> {
    if domains.is_empty() {
        return Err(PogmError::Empty("domain list"));
    }
    let dists = domains
        .iter()
        .map(|d| {
            if d.is_empty() {
                return Err(PogmError::Empty("domain"));
            }
            Ok(mean_rows(&model.predict_proba(&d.features)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_pairwise_kl(&dists))
}

/// Pairwise KL on a shared probe set: each domain contributes its own model,
/// KL is taken pointwise in `x` and averaged over the probe rows.
pub fn pairwise_kl_matched(models: &[ModelState], probe: &Matrix) -> Result<f64> {
    if models.is_empty() {
        return Err(PogmError::Empty("model list"));
    }
    if probe.rows() == 0 {
        return Err(PogmError::Empty("probe set"));
    }
    let probs = models
        .iter()
        .map(|m| m.predict_proba(probe))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for r in 0..probe.rows() {
        let rows: Vec<Vec<f64>> = probs.iter().map(|p| p.row(r).to_vec()).collect();
        total += average_pairwise_kl(&rows);
    }
    Ok(total / probe.rows() as f64)
}

/// Domain-specific inner runs from one shared snapshot, used only for
/// measurement. The snapshot's checksum is re-verified around every branch.
#[derive(Clone, Debug)]
pub struct DomainBranches {
    pub snapshot_checksum: [u8; 32],
    pub outcomes: Vec<InnerOutcome>,
}

pub fn domain_branches(
    snapshot: &ParamVector,
    spec: &ModelSpec,
    domains: &[DomainDataset],
    inner: &InnerConfig,
    samplers: &[SamplerState],
    round: usize,
) -> Result<DomainBranches> {
    if domains.len() != samplers.len() {
        return Err(PogmError::Dimension {
            expected: domains.len(),
            got: samplers.len(),
        });
    }
    let checksum = snapshot.checksum();
    let mut outcomes = Vec::with_capacity(domains.len());
    for (ds, s) in domains.iter().zip(samplers) {
        let out = inner_train(snapshot, spec, ds, inner, s, round)?;
        if snapshot.checksum() != checksum {
            return Err(PogmError::Consistency(format!(
                "snapshot changed while branching domain {}",
                ds.domain_id
            )));
        }
        outcomes.push(out);
    }
    Ok(DomainBranches {
        snapshot_checksum: checksum,
        outcomes,
    })
}

/// Inputs for one round of measurements.
pub struct RoundContext<'a> {
    pub round: usize,
    pub algo: &'a str,
    pub seed: u64,
    pub theta_prev: &'a ParamVector,
    pub theta_new: &'a ParamVector,
    /// Source-domain branches from `theta_prev`.
    pub sources: &'a DomainBranches,
    /// Held-out-domain branch from `theta_prev`, used by the hull test.
    pub target: Option<&'a InnerOutcome>,
    pub history: &'a ThetaHistory,
    pub tau: usize,
    /// Value of `kl_b1` computed by the caller in whichever mode it uses.
    pub kl_b1: Option<f64>,
}

/// Every registered metric for one round. Metrics whose inputs are missing
/// (early rounds for the invariant angle, K < 2 for variance and hull) are
/// skipped.
pub fn round_metrics(ctx: &RoundContext<'_>) -> Result<Vec<MetricsRow>> {
    if ctx.sources.snapshot_checksum != ctx.theta_prev.checksum() {
        return Err(PogmError::Consistency(
            "branches were not trained from the previous round's parameters".into(),
        ));
    }
    let row = |metric, domain, value| {
        MetricsRow::new(ctx.round, ctx.algo, ctx.seed, metric, domain, value)
    };
    let h_alg = ctx.theta_new.sub(ctx.theta_prev)?;
    let mut rows = Vec::new();
    let mut gips = Vec::new();
    let mut min_cos = f64::INFINITY;
    for out in &ctx.sources.outcomes {
        let d = Some(out.traj.domain_id);
        rows.push(row(
            Metric::ModelNormDiff,
            d,
            domain_model_norm_diff(&out.theta, ctx.theta_new)?,
        )?);
        let cos = domain_gradient_angle(&out.traj.h, &h_alg)?;
        rows.push(row(Metric::GradAngle, d, cos)?);
        min_cos = min_cos.min(cos);
        gips.push(out.traj.h.dot(&h_alg)?);
    }
    // the history is keyed by completed rounds, so theta_new sits at round + 1
    let r = ctx.round + 1;
    if r >= ctx.tau && ctx.history.get(r - ctx.tau).is_some() {
        rows.push(row(Metric::InvariantAngle, None, invariant_angle(ctx.history, r, ctx.tau)?)?);
    }
    rows.push(row(Metric::GradNorm, None, grad_magnitude_norm(ctx.theta_new, ctx.theta_prev)?)?);
    if gips.len() >= 2 {
        rows.push(row(Metric::GipVar, None, gip_variance(&gips)?)?);
    }
    if min_cos.is_finite() {
        rows.push(row(Metric::MinGipCos, None, min_cos)?);
    }
    if let Some(kl) = ctx.kl_b1 {
        rows.push(row(Metric::KlB1, None, kl)?);
    }
    if let (Some(target), true) = (ctx.target, ctx.sources.outcomes.len() >= 2) {
        let hs: Vec<ParamVector> = ctx.sources.outcomes.iter().map(|o| o.traj.h.clone()).collect();
        let verdict = hull_exclusion_test(&hs, &target.traj.h)?;
        let flag = if verdict == HullVerdict::CertifiedOutside { 1.0 } else { 0.0 };
        rows.push(row(Metric::HullTest, None, flag)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn two_pass_var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    }

    fn two_pass_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(Metric::from_name(m.name()), Some(m));
        }
        assert_eq!(Metric::from_name("nope"), None);
        assert!(MetricsRow::new(0, "pogm", 0, Metric::GradNorm, None, f64::NAN).is_err());
    }

    #[test]
    fn norm_diff_examples() {
        let a = pv(&[1.0, 2.0, 3.0]);
        assert_eq!(domain_model_norm_diff(&a, &a).unwrap(), 0.0);
        let b = pv(&[2.0, 2.0, 3.0]);
        assert_eq!(domain_model_norm_diff(&b, &a).unwrap(), 1.0);
        assert_eq!(
            domain_model_norm_diff(&a, &b).unwrap(),
            domain_model_norm_diff(&b, &a).unwrap()
        );
        assert!(domain_model_norm_diff(&a, &pv(&[1.0])).is_err());
    }

    #[test]
    fn angle_examples() {
        let a = pv(&[1.0, 0.0]);
        assert_eq!(domain_gradient_angle(&a, &a).unwrap(), 1.0);
        assert_eq!(domain_gradient_angle(&a, &pv(&[0.0, 3.0])).unwrap(), 0.0);
        assert_eq!(domain_gradient_angle(&a, &pv(&[-2.0, 0.0])).unwrap(), -1.0);
        assert_eq!(domain_gradient_angle(&a, &pv(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn grad_norm_examples() {
        let a = pv(&[0.5, -1.0]);
        assert_eq!(grad_magnitude_norm(&a, &a).unwrap(), 0.0);
        assert_eq!(grad_magnitude_norm(&pv(&[1.5, -1.0]), &a).unwrap(), 1.0);
        let b = pv(&[0.1, 0.7]);
        let d = b.sub(&a).unwrap().norm();
        assert!((grad_magnitude_norm(&b, &a).unwrap() - d * d).abs() < 1e-12);
    }

    fn history(thetas: &[Vec<f64>]) -> ThetaHistory {
        let mut h = ThetaHistory::new(ThetaHistory::DEFAULT_CAPACITY).unwrap();
        for (r, t) in thetas.iter().enumerate() {
            h.push(r, pv(t)).unwrap();
        }
        h
    }

    #[test]
    fn invariant_angle_examples() {
        let line: Vec<Vec<f64>> = (0..8).map(|r| vec![1.0 - 0.3 * r as f64, 2.0 + 0.1 * r as f64]).collect();
        let h = history(&line);
        for tau in 1..=7 {
            assert!((invariant_angle(&h, 7, tau).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(invariant_angle(&h, 5, 1).unwrap(), 1.0);
        // steps +v then -2v: last = -2v, span over two rounds = -v
        let alt = history(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, -1.0]]);
        assert!((invariant_angle(&alt, 2, 2).unwrap() - 1.0).abs() < 1e-15);
        // steps (1,0) then (0,1): last = (0,1), span = (1,1), cosine 1/sqrt(2)
        let turn = history(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let c = invariant_angle(&turn, 2, 2).unwrap();
        assert!((c - 0.5f64.sqrt()).abs() < 1e-15);
        // steps +v, -2v, +v: last = v, span over three rounds = 0 → degenerate 0
        let back = history(&[vec![0.0], vec![1.0], vec![-1.0], vec![0.0]]);
        assert_eq!(invariant_angle(&back, 3, 3).unwrap(), 0.0);
        assert!(invariant_angle(&h, 3, 0).is_err());
        assert!(matches!(invariant_angle(&h, 3, 4), Err(PogmError::History(_))));
        assert!(matches!(invariant_angle(&h, 9, 1), Err(PogmError::History(_))));
    }

    #[test]
    fn history_eviction_and_order() {
        let mut h = ThetaHistory::new(3).unwrap();
        for r in 0..5 {
            h.push(r, pv(&[r as f64])).unwrap();
        }
        assert_eq!(h.len(), 3);
        assert!(h.get(1).is_none());
        assert_eq!(h.get(4).unwrap().as_slice(), &[4.0]);
        assert!(h.push(4, pv(&[0.0])).is_err());
        assert!(ThetaHistory::new(1).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(gip_variance(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert_eq!(gip_variance(&[0.0, 2.0]).unwrap(), 2.0);
        assert!(gip_variance(&[1.0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.5, -0.3, 4.0];
        assert_eq!(pearson(&a, &a).unwrap(), 1.0);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&a, &[1.0; 4]).is_err());
        assert!(pearson(&a, &[1.0; 3]).is_err());
    }

    #[test]
    fn hull_exclusion_examples() {
        let e = |i: usize| ParamVector::basis(3, i);
        let s = -(0.5f64.sqrt());
        let target = pv(&[s, s, 0.0]);
        assert_eq!(hull_exclusion_test(&[e(0), e(1)], &target).unwrap(), HullVerdict::CertifiedOutside);
        // a third orthonormal source puts target . e_2 = 0 on the boundary
        let sources = [e(0), e(1), e(2)];
        assert_eq!(hull_exclusion_test(&sources, &target).unwrap(), HullVerdict::Inconclusive);
        assert_eq!(hull_exclusion_test(&sources, &e(1)).unwrap(), HullVerdict::Inconclusive);
        assert!(hull_exclusion_test(&sources[..1], &target).is_err());
        assert!(hull_exclusion_test(&sources, &pv(&[1.0])).is_err());
    }

    #[test]
    fn hull_oracle_examples() {
        let sources = [pv(&[1.0, 0.0, 0.0]), pv(&[0.0, 2.0, 0.0]), pv(&[0.0, 0.0, -1.0])];
        let m = paramvec::mean(&sources).unwrap();
        let inside = hull_membership_oracle(&sources, &m, 1e-8).unwrap();
        assert!(inside.inside && inside.residual < 1e-8, "{}", inside.residual);

        let g1 = pv(&[1.0, 0.0]);
        let one = hull_membership_oracle(std::slice::from_ref(&g1), &pv(&[2.0, 0.0]), 1e-8).unwrap();
        assert!(!one.inside);
        assert!((one.residual - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hull_oracle_matches_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let sources: Vec<ParamVector> = (0..3)
                .map(|_| pv(&(0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
                .collect();
            let target = pv(&(0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let got = hull_membership_oracle(&sources, &target, 1e-8).unwrap();
            let mut best = f64::INFINITY;
            for a in 0..=100 {
                for b in 0..=(100 - a) {
                    let l = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
                    let d = paramvec::combine(&l, &sources).unwrap().sub(&target).unwrap().norm();
                    best = best.min(d);
                }
            }
            // the optimum is at most one grid cell away from some grid point
            assert!(got.residual <= best + 1e-9);
            assert!(best - got.residual <= 0.02);
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let p1 = [1.0, 0.0];
        let p2 = [0.5, 0.5];
        let expected = 0.25 * (2f64.ln() + 0.5 * (0.5 / 1.0f64).ln() + 0.5 * (0.5 / 1e-12f64).ln());
        let got = average_pairwise_kl(&[p1.to_vec(), p2.to_vec()]);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    proptest! {
        #[test]
        fn variance_matches_two_pass(v in prop::collection::vec(-10.0f64..10.0, 2..40)) {
            let got = gip_variance(&v).unwrap();
            prop_assert!((got - two_pass_var(&v)).abs() <= 1e-12 * (1.0 + got.abs()));
        }

        #[test]
        fn pearson_matches_two_pass(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(two_pass_var(&a) > 1e-6 && two_pass_var(&b) > 1e-6);
            let got = pearson(&a, &b).unwrap();
            prop_assert!((got - two_pass_pearson(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn kl_is_non_negative(p in prop::collection::vec(0.01f64..1.0, 3), q in prop::collection::vec(0.01f64..1.0, 3)) {
            let sp: f64 = p.iter().sum();
            let sq: f64 = q.iter().sum();
            let p: Vec<f64> = p.iter().map(|x| x / sp).collect();
            let q: Vec<f64> = q.iter().map(|x| x / sq).collect();
            prop_assert!(kl_divergence(&p, &q) >= -1e-12);
        }
    }
}
