//! Seeded end-to-end runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    domain_branches, pairwise_kl_b1, pairwise_kl_matched, round_metrics, MetricsRow, RoundContext,
    ThetaHistory,
};
use crate::domains::{split, DomainDataset, SamplerState};
use crate::error::{PogmError, Result};
use crate::matrix::Matrix;
use crate::meta::{erm_trajectory_round, fish_round, pogm_round, MetaRoundReport};
use crate::model::{init_model, Batch, LossKind, ModelSpec, ModelState};
use crate::paramvec::ParamVector;
use crate::rng::{derive_seed, Stream};
use crate::trainer::{inner_train, pooled_erm_step};

use super::config::{Algo, ExperimentConfig, KlMode, Selection, TAU_MAX};
use super::output::{jsonl, metrics_csv, write_atomic, RoundLog};

/// Train/holdout splits of every domain for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: ModelSpec,
    pub source_train: Vec<DomainDataset>,
    pub source_val: Vec<DomainDataset>,
    pub target_train: DomainDataset,
    pub target_test: DomainDataset,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let spec = cfg.model_spec(seed)?;
    let mut source_train = Vec::new();
    let mut source_val = Vec::new();
    let mut target = None;
    for ds in cfg.datasets(seed)? {
        let (train, holdout) = split(&ds, cfg.train_frac, seed)?;
        if ds.domain_id == cfg.holdout_domain {
            target = Some((train, holdout));
        } else {
            source_train.push(train);
            source_val.push(holdout);
        }
    }
    let (target_train, target_test) =
        target.ok_or_else(|| PogmError::Config("holdout domain not generated".into()))?;
    Ok(Prepared {
        spec,
        source_train,
        source_val,
        target_train,
        target_test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `None` for regression tasks.
    pub acc: Option<f64>,
    pub loss: f64,
}

pub fn evaluate(model: &ModelState, data: &[&DomainDataset]) -> Result<Evaluation> {
    let mut batch: Option<Batch> = None;
    for ds in data {
        let b = ds.as_batch();
        batch = Some(match batch {
            None => b,
            Some(acc) => acc.concat(&b)?,
        });
    }
    let batch = batch.ok_or(PogmError::Empty("evaluation data"))?;
    let loss = model.loss(&batch)?;
    let acc = match model.spec.loss_kind {
        LossKind::CrossEntropy => Some(model.accuracy(&batch)?),
        LossKind::Mse => None,
    };
    Ok(Evaluation { acc, loss })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub round: Option<usize>,
    pub message: String,
}

/// Summary of one seed. Wall time lives only here, never in the metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub label: String,
    pub algo: String,
    pub seed: u64,
    pub rounds_completed: usize,
    pub failure: Option<Failure>,
    pub final_train: Option<Evaluation>,
    pub final_test: Option<Evaluation>,
    /// Round (1-based count of completed rounds) with the best validation
    /// score under the configured selection rule.
    pub selected_round: Option<usize>,
    pub selected_test: Option<Evaluation>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.final_test.and_then(|e| e.acc)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub round: usize,
    pub params: ParamVector,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub metrics: Vec<MetricsRow>,
    pub rounds: Vec<RoundLog>,
    pub initial: ParamVector,
    pub theta: ParamVector,
}

fn samplers_for(data: &[DomainDataset], seed: u64, stream: Stream) -> Vec<SamplerState> {
    data.iter()
        .map(|d| SamplerState::new(derive_seed(seed, stream, d.domain_id as u64), d.len()))
        .collect()
}

/// Higher is better: accuracy, or negated loss for regression.
fn score(e: &Evaluation) -> f64 {
    e.acc.unwrap_or(-e.loss)
}

struct Loop<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    data: &'a Prepared,
    theta: ParamVector,
    samplers: Vec<SamplerState>,
    probes: Vec<SamplerState>,
    target_probe: SamplerState,
    history: ThetaHistory,
    metrics: Vec<MetricsRow>,
    rounds: Vec<RoundLog>,
    best: Option<(f64, usize, Evaluation)>,
}

impl Loop<'_> {
    fn step(&mut self, r: usize) -> Result<()> {
        let cfg = self.cfg;
        let spec = &self.data.spec;
        let sources = &self.data.source_train;
        if cfg.inner.reshuffle_per_round {
            self.samplers = samplers_for(sources, self.seed, Stream::Sampler);
            self.probes = samplers_for(sources, self.seed, Stream::Probe);
            self.target_probe = samplers_for(
                std::slice::from_ref(&self.data.target_train),
                self.seed,
                Stream::Probe,
            )
            .remove(0);
        }
        let prev = self.theta.clone();
        let (theta, samplers, report): (ParamVector, Vec<SamplerState>, Option<MetaRoundReport>) =
            match cfg.algo {
                Algo::Pogm => {
                    let o = pogm_round(&prev, spec, sources, &cfg.inner, &cfg.meta, &self.samplers, r)?;
                    (o.theta, o.samplers, o.report)
                }
                Algo::ErmTrajectory => {
                    let o = erm_trajectory_round(
                        &prev,
                        spec,
                        sources,
                        &cfg.inner,
                        cfg.meta.alpha,
                        &self.samplers,
                        r,
                    )?;
                    (o.theta, o.samplers, None)
                }
                Algo::Fish => {
                    let order_seed = derive_seed(self.seed, Stream::Order, r as u64);
                    let o = fish_round(
                        &prev,
                        spec,
                        sources,
                        &cfg.inner,
                        cfg.meta.fish_epsilon,
                        order_seed,
                        &self.samplers,
                        r,
                    )?;
                    (o.theta, o.samplers, None)
                }
                Algo::ErmPooled => {
                    let (t, s) = pooled_erm_step(&prev, spec, sources, &cfg.inner, &self.samplers, r)?;
                    (t, s, None)
                }
            };
        self.samplers = samplers;
        self.history.push(r + 1, theta.clone())?;

        let model = ModelState::from_params(spec.clone(), theta.clone())?;
        if cfg.diagnostics {
            let branches = domain_branches(&prev, spec, sources, &cfg.inner, &self.probes, r)?;
            self.probes = branches.outcomes.iter().map(|o| o.sampler.clone()).collect();
            let target = inner_train(
                &prev,
                spec,
                &self.data.target_train,
                &cfg.inner,
                &self.target_probe,
                r,
            )?;
            self.target_probe = target.sampler.clone();
            let kl_b1 = match (spec.loss_kind, cfg.kl_mode) {
                (LossKind::Mse, _) => None,
                (_, KlMode::MeanPredictive) => Some(pairwise_kl_b1(&model, sources)?),
                (_, KlMode::MatchedProbe) => {
                    let models = branches
                        .outcomes
                        .iter()
                        .map(|o| ModelState::from_params(spec.clone(), o.theta.clone()))
                        .collect::<Result<Vec<_>>>()?;
                    let mut probe: Option<Matrix> = None;
                    for v in &self.data.source_val {
                        probe = Some(match probe {
                            None => v.features.clone(),
                            Some(m) => m.vstack(&v.features)?,
                        });
                    }
                    Some(pairwise_kl_matched(&models, &probe.expect("sources exist"))?)
                }
            };
            let ctx = RoundContext {
                round: r,
                algo: cfg.algo.name(),
                seed: self.seed,
                theta_prev: &prev,
                theta_new: &theta,
                sources: &branches,
                target: Some(&target),
                history: &self.history,
                tau: cfg.tau,
                kl_b1,
            };
            self.metrics.extend(round_metrics(&ctx)?);
        }

        let test = evaluate(&model, &[&self.data.target_test])?;
        let val = match cfg.selection {
            Selection::TestDomain => evaluate(&model, &[&self.data.target_train])?,
            Selection::TrainingDomain => {
                let v: Vec<&DomainDataset> = self.data.source_val.iter().collect();
                evaluate(&model, &v)?
            }
        };
        if self.best.as_ref().is_none_or(|(s, _, _)| score(&val) > *s) {
            self.best = Some((score(&val), r + 1, test));
        }
        self.rounds.push(RoundLog {
            round: r,
            pi: report.as_ref().map(|p| p.pi.as_slice().to_vec()),
            objective: report.as_ref().map(|p| p.objective),
            solver_iters: report.as_ref().map(|p| p.solver_iters),
            deviation_norm: report.as_ref().map(|p| p.deviation_norm),
            test_acc: test.acc,
            test_loss: test.loss,
        });
        self.theta = theta;
        Ok(())
    }
}

/// Runs one seed in memory. A numeric failure stops the seed and is reported
/// in the record; any other error is returned.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let data = prepare(cfg, seed)?;
    let initial = init_model(&data.spec)?.params;
    let mut history = ThetaHistory::new(TAU_MAX + 1)?;
    history.push(0, initial.clone())?;
    let mut lp = Loop {
        cfg,
        seed,
        data: &data,
        theta: initial.clone(),
        samplers: samplers_for(&data.source_train, seed, Stream::Sampler),
        probes: samplers_for(&data.source_train, seed, Stream::Probe),
        target_probe: samplers_for(std::slice::from_ref(&data.target_train), seed, Stream::Probe)
            .remove(0),
        history,
        metrics: Vec::new(),
        rounds: Vec::new(),
        best: None,
    };
    let mut failure = None;
    for r in 0..cfg.rounds {
        if let Err(e) = lp.step(r) {
            if !e.is_numeric() {
                return Err(e);
            }
            log::warn!("seed {seed}: {e}");
            let round = match &e {
                PogmError::NumericRound { round, .. } => Some(*round),
                _ => Some(r),
            };
            failure = Some(Failure {
                round,
                message: e.to_string(),
            });
            break;
        }
    }
    let completed = lp.rounds.len();
    let (final_train, final_test) = if failure.is_none() {
        let model = ModelState::from_params(data.spec.clone(), lp.theta.clone())?;
        let train: Vec<&DomainDataset> = data.source_train.iter().collect();
        (
            Some(evaluate(&model, &train)?),
            Some(evaluate(&model, &[&data.target_test])?),
        )
    } else {
        (None, None)
    };
    let record = RunRecord {
        config_hash: cfg.hash(),
        label: cfg.label(),
        algo: cfg.algo.name().to_string(),
        seed,
        rounds_completed: completed,
        failure,
        final_train,
        final_test,
        selected_round: lp.best.as_ref().map(|b| b.1),
        selected_test: lp.best.as_ref().map(|b| b.2),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        record,
        metrics: lp.metrics,
        rounds: lp.rounds,
        initial,
        theta: lp.theta,
    })
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(cfg.hash()).join(seed.to_string())
}

/// Writes `metrics.csv`, `run.jsonl`, `checkpoint.json` and finally
/// `record.json` into `dir`.
pub fn write_outputs(out: &RunOutput, spec: &ModelSpec, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("metrics.csv"), metrics_csv(&out.metrics).as_bytes())?;
    write_atomic(&dir.join("run.jsonl"), jsonl(&out.rounds)?.as_bytes())?;
    let ckpt = Checkpoint {
        spec: spec.clone(),
        round: out.record.rounds_completed,
        params: out.theta.clone(),
    };
    write_atomic(&dir.join("checkpoint.json"), serde_json::to_string(&ckpt)?.as_bytes())?;
    write_atomic(
        &dir.join("record.json"),
        serde_json::to_string_pretty(&out.record)?.as_bytes(),
    )?;
    Ok(())
}

/// Runs every seed (in parallel) and writes each seed's files under
/// `output_dir/{hash}/{seed}`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let out = run_seed(cfg, seed)?;
            write_outputs(&out, &cfg.model_spec(seed)?, &seed_dir(cfg, seed))?;
            Ok(out.record)
        })
        .collect()
}

pub fn load_record(dir: &Path) -> Result<RunRecord> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("record.json"))?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
