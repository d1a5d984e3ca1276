//! Meta-update of a training round.
//!
//! Given per-domain trajectories `h_i` and their mean `h_erm`, POGM picks
//! simplex weights
//!
//! ```text
//! pi* = argmin_pi  h_pi . h_erm + sqrt(kappa) |h_erm| |h_pi|,   h_pi = Σ pi_i h_i
//! ```
//!
//! and moves along `h_gipc = h_erm + sqrt(kappa) |h_erm| / |h_pi*| * h_pi*`,
//! which sits exactly on the sphere of radius `sqrt(kappa) |h_erm|` around
//! `h_erm`.
//!
//! Trajectories are displacements (`theta_final - theta_snapshot`), so every
//! round update here is `theta + step * direction`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domains::{DomainDataset, SamplerState};
use crate::error::{PogmError, Result};
use crate::model::ModelSpec;
use crate::paramvec::{self, ParamVector, EPS_NORM};
use crate::rng::{self, Stream};
use crate::simplex::{self, SolverConfig};
use crate::trainer::{erm_trajectory, inner_train, train_domains, InnerConfig, Trajectory};

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiWeights(Vec<f64>);

impl PiWeights {
    /// Clamps tiny negatives (down to -1e-12) to zero and renormalises.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(PogmError::Empty("pi weights"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < -1e-12) {
            return Err(PogmError::InvalidArgument(format!(
                "pi weights off the simplex: {weights:?}"
            )));
        }
        let clamped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if sum <= 0.0 {
            return Err(PogmError::InvalidArgument("pi weights sum to zero".into()));
        }
        if (sum - 1.0).abs() <= 1e-15 {
            return Ok(Self(clamped));
        }
        Ok(Self(clamped.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    /// Coefficient `sqrt(kappa)`; the update lands on the constraint sphere.
    #[default]
    SqrtKappa,
    /// Coefficient `kappa`, as the theorem statement is literally printed.
    KappaLiteral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Hypersphere radius ratio.
    pub kappa: f64,
    /// Meta learning rate.
    pub alpha: f64,
    pub composition_mode: CompositionMode,
    pub solver_max_iters: usize,
    pub solver_tol: f64,
    /// Initial solver step; `None` uses `1 / (|G|_F^2 + 1)`.
    pub solver_step0: Option<f64>,
    pub eps_norm: f64,
    /// Reptile interpolation factor for the Fish baseline.
    pub fish_epsilon: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            alpha: 1.0,
            composition_mode: CompositionMode::SqrtKappa,
            solver_max_iters: 500,
            solver_tol: 1e-10,
            solver_step0: None,
            eps_norm: EPS_NORM,
            fish_epsilon: 0.5,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(PogmError::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(PogmError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.solver_max_iters == 0 || !(self.solver_tol >= 0.0) || !(self.eps_norm > 0.0) {
            return Err(PogmError::Config("invalid solver settings".into()));
        }
        if let Some(s) = self.solver_step0 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(PogmError::Config(format!("solver_step0 must be > 0, got {s}")));
            }
        }
        if !(0.0..=1.0).contains(&self.fish_epsilon) {
            return Err(PogmError::Config(format!(
                "fish_epsilon must lie in [0, 1], got {}",
                self.fish_epsilon
            )));
        }
        Ok(())
    }
}

fn check_trajectories(hs: &[ParamVector], h_erm: &ParamVector) -> Result<()> {
    if hs.is_empty() {
        return Err(PogmError::Empty("trajectory list"));
    }
    for h in hs {
        if h.len() != h_erm.len() {
            return Err(PogmError::Dimension {
                expected: h_erm.len(),
                got: h.len(),
            });
        }
    }
    Ok(())
}

/// `f(pi) = h_pi . h_erm + sqrt(kappa) |h_erm| |h_pi|`, evaluated directly
/// on the vectors.
pub fn surrogate_objective(
    pi: &PiWeights,
    hs: &[ParamVector],
    h_erm: &ParamVector,
    kappa: f64,
) -> Result<f64> {
    check_trajectories(hs, h_erm)?;
    let h_pi = paramvec::combine(pi.as_slice(), hs)?;
    Ok(h_pi.dot(h_erm)? + kappa.sqrt() * h_erm.norm() * h_pi.norm())
}

/// Projection of `v` onto the simplex.
pub fn project_simplex(v: &[f64]) -> Result<PiWeights> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(PogmError::InvalidArgument("non-finite input to projection".into()));
    }
    PiWeights::new(simplex::project(v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiSolution {
    pub pi: PiWeights,
    pub objective: f64,
    pub iters: usize,
    pub history: Vec<f64>,
}

/// Surrogate objective in Gram form: with `M_ij = h_i . h_j` and
/// `b_i = h_i . h_erm`, `f(pi) = pi . b + c sqrt(pi' M pi)`.
struct GramObjective {
    gram: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: f64,
    eps_norm: f64,
}

impl GramObjective {
    fn new(hs: &[ParamVector], h_erm: &ParamVector, kappa: f64, eps_norm: f64) -> Result<Self> {
        let k = hs.len();
        let mut gram = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let v = hs[i].dot(&hs[j])?;
                gram[i][j] = v;
                gram[j][i] = v;
            }
        }
        let b = hs.iter().map(|h| h.dot(h_erm)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            gram,
            b,
            c: kappa.sqrt() * h_erm.norm(),
            eps_norm,
        })
    }

    fn frobenius_sq(&self) -> f64 {
        self.gram.iter().enumerate().map(|(i, row)| row[i]).sum()
    }

    fn m_times(&self, pi: &[f64]) -> Vec<f64> {
        self.gram
            .iter()
            .map(|row| paramvec::dot_slices(row, pi))
            .collect()
    }

    fn value(&self, pi: &[f64]) -> f64 {
        let mp = self.m_times(pi);
        let quad = paramvec::dot_slices(pi, &mp).max(0.0);
        paramvec::dot_slices(pi, &self.b) + self.c * quad.sqrt()
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        let mp = self.m_times(pi);
        let norm = paramvec::dot_slices(pi, &mp).max(0.0).sqrt();
        // subgradient 0 for the norm term where |h_pi| vanishes
        let scale = if norm < self.eps_norm { 0.0 } else { self.c / norm };
        self.b
            .iter()
            .zip(&mp)
            .map(|(bi, mi)| bi + scale * mi)
            .collect()
    }
}

/// Minimises the surrogate objective over the simplex by projected gradient
/// descent from the uniform point.
pub fn solve_pi(hs: &[ParamVector], h_erm: &ParamVector, cfg: &MetaConfig) -> Result<PiSolution> {
    check_trajectories(hs, h_erm)?;
    let obj = GramObjective::new(hs, h_erm, cfg.kappa, cfg.eps_norm)?;
    // |G|_F^2 for the stacked trajectories is the trace of the Gram matrix.
    let step0 = cfg
        .solver_step0
        .unwrap_or_else(|| 1.0 / (obj.frobenius_sq() + 1.0));
    let sol = simplex::minimize(
        hs.len(),
        |p| obj.value(p),
        |p| obj.gradient(p),
        &SolverConfig {
            max_iters: cfg.solver_max_iters,
            tol: cfg.solver_tol,
            step0,
        },
    )?;
    Ok(PiSolution {
        pi: PiWeights::new(sol.point)?,
        objective: sol.objective,
        iters: sol.iters,
        history: sol.history,
    })
}

/// Exhaustive search over the simplex grid with spacing `resolution`
/// (K <= 4). Grid points are visited in ascending lexicographic order and a
/// later point replaces the incumbent only if it is lower by more than
/// `1e-12 (1 + |best|)`, so ties resolve to the lexicographically first point.
pub fn brute_force_pi(
    hs: &[ParamVector],
    h_erm: &ParamVector,
    kappa: f64,
    resolution: f64,
) -> Result<(PiWeights, f64)> {
    check_trajectories(hs, h_erm)?;
    let k = hs.len();
    if k > 4 {
        return Err(PogmError::InvalidArgument(format!(
            "brute force limited to K <= 4, got {k}"
        )));
    }
    let steps = (1.0 / resolution).round();
    if !(resolution > 0.0) || steps < 1.0 || (steps * resolution - 1.0).abs() > 1e-9 {
        return Err(PogmError::InvalidArgument(format!(
            "resolution {resolution} does not divide 1"
        )));
    }
    let m = steps as usize;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut counts = vec![0usize; k];
    let mut visit = |counts: &[usize]| -> Result<()> {
        let pi = PiWeights(counts.iter().map(|&c| c as f64 / m as f64).collect());
        let f = surrogate_objective(&pi, hs, h_erm, kappa)?;
        match &best {
            Some((_, b)) if f >= b - 1e-12 * (1.0 + b.abs()) => {}
            _ => best = Some((counts.to_vec(), f)),
        }
        Ok(())
    };
    enumerate_compositions(m, 0, &mut counts, &mut visit)?;
    let (counts, f) = best.expect("grid is non-empty");
    Ok((
        PiWeights::new(counts.iter().map(|&c| c as f64 / m as f64).collect())?,
        f,
    ))
}

fn enumerate_compositions(
    remaining: usize,
    pos: usize,
    counts: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        return visit(counts);
    }
    for c in 0..=remaining {
        counts[pos] = c;
        enumerate_compositions(remaining - c, pos + 1, counts, visit)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composition {
    pub h: ParamVector,
    /// `|h_pi|` fell below `eps_norm` and `h` is plain `h_erm`.
    pub degenerate: bool,
}

/// `h_erm + coef * |h_erm| / |h_pi| * h_pi` with `coef = sqrt(kappa)` or
/// `kappa` depending on `mode`.
pub fn compose_gipc(
    h_erm: &ParamVector,
    h_pi: &ParamVector,
    kappa: f64,
    mode: CompositionMode,
    eps_norm: f64,
) -> Result<Composition> {
    if h_erm.len() != h_pi.len() {
        return Err(PogmError::Dimension {
            expected: h_erm.len(),
            got: h_pi.len(),
        });
    }
    let pi_norm = h_pi.norm();
    if pi_norm < eps_norm {
        log::debug!("|h_pi| = {pi_norm:e} below eps_norm; falling back to h_erm");
        return Ok(Composition {
            h: h_erm.clone(),
            degenerate: true,
        });
    }
    let radius = match mode {
        CompositionMode::SqrtKappa => kappa.sqrt(),
        CompositionMode::KappaLiteral => kappa,
    };
    let coef = radius * h_erm.norm() / pi_norm;
    Ok(Composition {
        h: paramvec::axpy(coef, h_pi, h_erm)?,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaRoundReport {
    pub round: usize,
    pub pi: PiWeights,
    pub objective: f64,
    pub solver_iters: usize,
    pub h_gipc_norm: f64,
    /// `|h_gipc - h_erm|`.
    pub deviation_norm: f64,
    /// `h_i . h_gipc` per domain.
    pub per_domain_gip: Vec<f64>,
    pub degenerate: bool,
}

/// Meta step shared by [`pogm_round`] and direct callers holding
/// trajectories already: solve for pi, compose, report.
pub fn pogm_direction(
    trajs: &[Trajectory],
    cfg: &MetaConfig,
) -> Result<(ParamVector, ParamVector, MetaRoundReport)> {
    let h_erm = erm_trajectory(trajs)?;
    let hs: Vec<ParamVector> = trajs.iter().map(|t| t.h.clone()).collect();
    let sol = solve_pi(&hs, &h_erm, cfg)?;
    let h_pi = paramvec::combine(sol.pi.as_slice(), &hs)?;
    let comp = compose_gipc(&h_erm, &h_pi, cfg.kappa, cfg.composition_mode, cfg.eps_norm)?;
    let per_domain_gip = hs.iter().map(|h| h.dot(&comp.h)).collect::<Result<Vec<_>>>()?;
    let report = MetaRoundReport {
        round: trajs[0].round,
        pi: sol.pi,
        objective: sol.objective,
        solver_iters: sol.iters,
        h_gipc_norm: comp.h.norm(),
        deviation_norm: comp.h.sub(&h_erm)?.norm(),
        per_domain_gip,
        degenerate: comp.degenerate,
    };
    Ok((comp.h, h_erm, report))
}

#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub theta: ParamVector,
    pub samplers: Vec<SamplerState>,
    pub trajectories: Vec<Trajectory>,
    pub report: Option<MetaRoundReport>,
}

fn inner_trajectories(
    theta: &ParamVector,
    spec: &ModelSpec,
    domains: &[DomainDataset],
    inner: &InnerConfig,
    samplers: &[SamplerState],
    round: usize,
) -> Result<(Vec<Trajectory>, Vec<SamplerState>)> {
    if domains.is_empty() {
        return Err(PogmError::Empty("domain list"));
    }
    let outcomes = train_domains(theta, spec, domains, inner, samplers, round, true)?;
    Ok(outcomes.into_iter().map(|o| (o.traj, o.sampler)).unzip())
}

/// One POGM round: inner training per domain from the shared snapshot,
/// then `theta + alpha * h_gipc`.
pub fn pogm_round(
    theta: &ParamVector,
    spec: &ModelSpec,
    domains: &[DomainDataset],
    inner: &InnerConfig,
    meta: &MetaConfig,
    samplers: &[SamplerState],
    round: usize,
) -> Result<RoundOutput> {
    meta.validate()?;
    let (trajectories, samplers) = inner_trajectories(theta, spec, domains, inner, samplers, round)?;
    let (h_gipc, _, report) = pogm_direction(&trajectories, meta)?;
    let theta = paramvec::axpy(meta.alpha, &h_gipc, theta).map_err(|e| PogmError::NumericRound {
        round,
        message: e.to_string(),
    })?;
    Ok(RoundOutput {
        theta,
        samplers,
        trajectories,
        report: Some(report),
    })
}

/// `theta + alpha * h_erm`: the `kappa = 0` limit of [`pogm_round`].
pub fn erm_trajectory_round(
    theta: &ParamVector,
    spec: &ModelSpec,
    domains: &[DomainDataset],
    inner: &InnerConfig,
    alpha: f64,
    samplers: &[SamplerState],
    round: usize,
) -> Result<RoundOutput> {
    let (trajectories, samplers) = inner_trajectories(theta, spec, domains, inner, samplers, round)?;
    let h_erm = erm_trajectory(&trajectories)?;
    let theta = paramvec::axpy(alpha, &h_erm, theta).map_err(|e| PogmError::NumericRound {
        round,
        message: e.to_string(),
    })?;
    Ok(RoundOutput {
        theta,
        samplers,
        trajectories,
        report: None,
    })
}

/// Reptile-style Fish round: a clone is trained on every domain in turn (in
/// an order shuffled from `order_seed`), then `theta + epsilon (clone - theta)`.
#[allow(clippy::too_many_arguments)]
pub fn fish_round(
    theta: &ParamVector,
    spec: &ModelSpec,
    domains: &[DomainDataset],
    inner: &InnerConfig,
    epsilon: f64,
    order_seed: u64,
    samplers: &[SamplerState],
    round: usize,
) -> Result<RoundOutput> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(PogmError::InvalidArgument(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    if domains.is_empty() {
        return Err(PogmError::Empty("domain list"));
    }
    if domains.len() != samplers.len() {
        return Err(PogmError::Dimension {
            expected: domains.len(),
            got: samplers.len(),
        });
    }
    let mut order: Vec<usize> = (0..domains.len()).collect();
    order.shuffle(&mut rng::stream(order_seed, Stream::Order, 0));
    let mut samplers = samplers.to_vec();
    let mut clone = theta.clone();
    let mut trajectories = Vec::with_capacity(domains.len());
    for &i in &order {
        let out = inner_train(&clone, spec, &domains[i], inner, &samplers[i], round)?;
        samplers[i] = out.sampler;
        clone = out.theta;
        trajectories.push(out.traj);
    }
    let delta = clone.sub(theta)?;
    let theta = paramvec::axpy(epsilon, &delta, theta).map_err(|e| PogmError::NumericRound {
        round,
        message: e.to_string(),
    })?;
    Ok(RoundOutput {
        theta,
        samplers,
        trajectories,
        report: None,
    })
}
