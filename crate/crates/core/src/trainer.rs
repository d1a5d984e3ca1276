//! Inner-loop domain training and the trajectory it leaves behind.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{next_batch, DomainDataset, SamplerState};
use crate::error::{PogmError, Result};
use crate::model::{loss_and_grad, ModelSpec};
use crate::paramvec::{self, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    /// Inner SGD learning rate.
    pub eta: f64,
    /// Local epochs per round.
    pub epochs: usize,
    pub batch_size: usize,
    /// SGD steps per local epoch; 1 makes `epochs` a plain step count.
    pub steps_per_epoch: usize,
    /// Restart each domain's sampler from its seed every round instead of
    /// continuing one persistent stream.
    pub reshuffle_per_round: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            epochs: 5,
            batch_size: 32,
            steps_per_epoch: 1,
            reshuffle_per_round: false,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(PogmError::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(PogmError::Config(
                "epochs, batch_size and steps_per_epoch must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

/// Displacement of one domain's inner run: `h = theta_final - theta_snapshot`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub domain_id: usize,
    pub round: usize,
    pub h: ParamVector,
    pub inner_epochs: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct InnerOutcome {
    pub theta: ParamVector,
    pub traj: Trajectory,
    pub sampler: SamplerState,
}

fn numeric(round: usize, e: PogmError) -> PogmError {
    if e.is_numeric() {
        PogmError::NumericRound {
            round,
            message: e.to_string(),
        }
    } else {
        e
    }
}

fn sgd_step(params: &mut [f64], grad: &ParamVector, eta: f64, round: usize) -> Result<()> {
    for (p, g) in params.iter_mut().zip(grad.iter()) {
        *p -= eta * g;
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(PogmError::NumericRound {
            round,
            message: "parameters diverged".into(),
        });
    }
    Ok(())
}

/// Runs `epochs * steps_per_epoch` plain SGD steps on `ds` starting from
/// `theta_snapshot`. The snapshot itself is never modified.
pub fn inner_train(
    theta_snapshot: &ParamVector,
    spec: &ModelSpec,
    ds: &DomainDataset,
    cfg: &InnerConfig,
    sampler: &SamplerState,
    round: usize,
) -> Result<InnerOutcome> {
    if theta_snapshot.len() != spec.param_count() {
        return Err(PogmError::Dimension {
            expected: spec.param_count(),
            got: theta_snapshot.len(),
        });
    }
    cfg.validate()?;
    let mut params = theta_snapshot.as_slice().to_vec();
    let mut sampler = sampler.clone();
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.total_steps() {
        let (batch, next) = next_batch(ds, &sampler, cfg.batch_size)?;
        sampler = next;
        let (loss, grad) = loss_and_grad(spec, &params, &batch).map_err(|e| numeric(round, e))?;
        sgd_step(&mut params, &grad, cfg.eta, round)?;
        final_loss = loss;
    }
    let theta = ParamVector::new(params).map_err(|e| numeric(round, e))?;
    let h = theta.sub(theta_snapshot).map_err(|e| numeric(round, e))?;
    Ok(InnerOutcome {
        theta,
        traj: Trajectory {
            domain_id: ds.domain_id,
            round,
            h,
            inner_epochs: cfg.epochs,
            final_loss,
        },
        sampler,
    })
}

/// Independent inner runs for every domain from the same snapshot. Results
/// come back in domain order whether or not they ran in parallel.
pub fn train_domains(
    theta_snapshot: &ParamVector,
    spec: &ModelSpec,
    domains: &[DomainDataset],
    cfg: &InnerConfig,
    samplers: &[SamplerState],
    round: usize,
    parallel: bool,
) -> Result<Vec<InnerOutcome>> {
    if domains.len() != samplers.len() {
        return Err(PogmError::Dimension {
            expected: domains.len(),
            got: samplers.len(),
        });
    }
    let run = |(ds, s): (&DomainDataset, &SamplerState)| {
        inner_train(theta_snapshot, spec, ds, cfg, s, round)
    };
    if parallel {
        domains.par_iter().zip(samplers.par_iter()).map(run).collect()
    } else {
        domains.iter().zip(samplers.iter()).map(run).collect()
    }
}

/// Mean of the trajectories of one round.
pub fn erm_trajectory(trajs: &[Trajectory]) -> Result<ParamVector> {
    let first = trajs.first().ok_or(PogmError::Empty("trajectory list"))?;
    if let Some(t) = trajs.iter().find(|t| t.round != first.round) {
        return Err(PogmError::Consistency(format!(
            "domain {} is from round {}, expected round {}",
            t.domain_id, t.round, first.round
        )));
    }
    let hs: Vec<ParamVector> = trajs.iter().map(|t| t.h.clone()).collect();
    paramvec::mean(&hs)
}

/// One round of SGD on the union of domains. Each step averages per-domain
/// mini-batch gradients with equal weight (`ceil(batch_size / K)` samples
/// per domain), matching `L_ERM = (1/K) Σ L_i`.
pub fn pooled_erm_step(
    theta: &ParamVector,
    spec: &ModelSpec,
    domains: &[DomainDataset],
    cfg: &InnerConfig,
    samplers: &[SamplerState],
    round: usize,
) -> Result<(ParamVector, Vec<SamplerState>)> {
    if domains.is_empty() {
        return Err(PogmError::Empty("domain list"));
    }
    if domains.len() != samplers.len() {
        return Err(PogmError::Dimension {
            expected: domains.len(),
            got: samplers.len(),
        });
    }
    cfg.validate()?;
    let share = cfg.batch_size.div_ceil(domains.len());
    let mut params = theta.as_slice().to_vec();
    let mut samplers = samplers.to_vec();
    for _ in 0..cfg.total_steps() {
        let mut grads = Vec::with_capacity(domains.len());
        for (ds, s) in domains.iter().zip(samplers.iter_mut()) {
            let (batch, next) = next_batch(ds, s, share)?;
            *s = next;
            let (_, g) = loss_and_grad(spec, &params, &batch).map_err(|e| numeric(round, e))?;
            grads.push(g);
        }
        let g = paramvec::mean(&grads).map_err(|e| numeric(round, e))?;
        sgd_step(&mut params, &g, cfg.eta, round)?;
    }
    Ok((ParamVector::new(params)?, samplers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::gen_rotated_two_moons;
    use crate::model::{init_model, Activation, InitKind, LossKind};

    fn spec() -> ModelSpec {
        ModelSpec {
            layer_sizes: vec![2, 8, 2],
            activation: Activation::Tanh,
            loss_kind: LossKind::CrossEntropy,
            init: InitKind::UniformGlorot,
            init_seed: 1,
        }
    }

    fn traj(round: usize, h: &[f64]) -> Trajectory {
        Trajectory {
            domain_id: 0,
            round,
            h: ParamVector::new(h.to_vec()).unwrap(),
            inner_epochs: 1,
            final_loss: 0.0,
        }
    }

    #[test]
    fn single_full_batch_step() {
        let s = spec();
        let ds = &gen_rotated_two_moons(&[0.0], 20, 0.1, 3).unwrap()[0];
        let theta = init_model(&s).unwrap().params;
        let cfg = InnerConfig {
            eta: 0.1,
            epochs: 1,
            batch_size: 20,
            ..Default::default()
        };
        let out = inner_train(&theta, &s, ds, &cfg, &SamplerState::new(0, 20), 0).unwrap();
        let (_, g) = loss_and_grad(&s, theta.as_slice(), &ds.as_batch()).unwrap();
        // full batch is a permutation of the data; the gradient sum order differs
        let expected = g.scale(-0.1).unwrap();
        assert!(out.traj.h.sub(&expected).unwrap().norm() <= 1e-14);
    }

    #[test]
    fn zero_gradient_region_gives_zero_trajectory() {
        // Zero-weight regression model on zero data with zero targets.
        let s = ModelSpec {
            layer_sizes: vec![2, 1],
            activation: Activation::Tanh,
            loss_kind: LossKind::Mse,
            init: InitKind::UniformGlorot,
            init_seed: 0,
        };
        let ds = DomainDataset::new(
            0,
            crate::Matrix::zeros(6, 2),
            crate::model::Targets::Reals(vec![0.0; 6]),
            Default::default(),
        )
        .unwrap();
        let theta = ParamVector::zeros(3);
        let out = inner_train(&theta, &s, &ds, &InnerConfig::default(), &SamplerState::new(0, 6), 0)
            .unwrap();
        assert_eq!(out.traj.h, ParamVector::zeros(3));
    }

    #[test]
    fn snapshot_is_untouched_and_schedule_independent() {
        let s = spec();
        let ds = gen_rotated_two_moons(&[0.0, 30.0, 60.0], 40, 0.1, 3).unwrap();
        let theta = init_model(&s).unwrap().params;
        let copy = theta.clone();
        let samplers: Vec<_> = (0..3).map(|i| SamplerState::new(i, 40)).collect();
        let cfg = InnerConfig::default();
        let seq = train_domains(&theta, &s, &ds, &cfg, &samplers, 2, false).unwrap();
        let par = train_domains(&theta, &s, &ds, &cfg, &samplers, 2, true).unwrap();
        assert_eq!(theta, copy);
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.traj.h, b.traj.h);
            assert_eq!(a.sampler, b.sampler);
        }
        // reversed order yields the same per-domain results
        let rev_ds: Vec<_> = ds.iter().rev().cloned().collect();
        let rev_s: Vec<_> = samplers.iter().rev().cloned().collect();
        let rev = train_domains(&theta, &s, &rev_ds, &cfg, &rev_s, 2, false).unwrap();
        for (a, b) in seq.iter().zip(rev.iter().rev()) {
            assert_eq!(a.traj.h, b.traj.h);
        }
        // h is exactly the explicit subtraction
        for o in &seq {
            assert_eq!(o.traj.h, o.theta.sub(&theta).unwrap());
        }
    }

    #[test]
    fn erm_trajectory_examples() {
        let m = erm_trajectory(&[traj(0, &[1.0, 0.0]), traj(0, &[0.0, 1.0])]).unwrap();
        assert_eq!(m.as_slice(), &[0.5, 0.5]);
        let same = traj(3, &[0.25, -2.0]);
        assert_eq!(erm_trajectory(&[same.clone(), same.clone(), same.clone()]).unwrap(), same.h);
        assert_eq!(erm_trajectory(std::slice::from_ref(&same)).unwrap(), same.h);
        assert!(matches!(
            erm_trajectory(&[traj(0, &[1.0]), traj(1, &[1.0])]),
            Err(PogmError::Consistency(_))
        ));
        assert!(erm_trajectory(&[]).is_err());
    }

    #[test]
    fn pooled_full_batch_step_averages_domain_gradients() {
        let s = spec();
        let ds = gen_rotated_two_moons(&[0.0, 45.0], 16, 0.1, 8).unwrap();
        let theta = init_model(&s).unwrap().params;
        let cfg = InnerConfig {
            eta: 0.2,
            epochs: 1,
            batch_size: 32,
            ..Default::default()
        };
        let samplers: Vec<_> = (0..2).map(|i| SamplerState::new(i, 16)).collect();
        let (next, _) = pooled_erm_step(&theta, &s, &ds, &cfg, &samplers, 0).unwrap();
        let grads: Vec<_> = ds
            .iter()
            .map(|d| loss_and_grad(&s, theta.as_slice(), &d.as_batch()).unwrap().1)
            .collect();
        let expected = paramvec::axpy(-0.2, &paramvec::mean(&grads).unwrap(), &theta).unwrap();
        assert!(next.sub(&expected).unwrap().norm() <= 1e-12 * expected.norm());
    }

    #[test]
    fn invalid_inner_config() {
        let bad = InnerConfig {
            eta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = InnerConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn divergence_reports_round() {
        let s = spec();
        let ds = &gen_rotated_two_moons(&[0.0], 20, 0.1, 3).unwrap()[0];
        let theta = init_model(&s).unwrap().params;
        let cfg = InnerConfig {
            eta: 1e308,
            ..Default::default()
        };
        let err = inner_train(&theta, &s, ds, &cfg, &SamplerState::new(0, 20), 7).unwrap_err();
        assert!(matches!(err, PogmError::NumericRound { round: 7, .. }), "{err}");
    }
}
