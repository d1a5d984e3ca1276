//! Acceptance checks shared by the `selftest` command and the test suite.
//!
//! Each check returns an [`Outcome`] instead of panicking so that a single
//! failure still lets the remaining checks report.

use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::diagnostics::{
    gip_variance, hull_exclusion_test, hull_membership_oracle, invariant_angle, pairwise_kl_b1,
    HullVerdict, ThetaHistory,
};
use crate::domains::{next_batch, SamplerState};
use crate::error::Result;
use crate::meta::{
    brute_force_pi, compose_gipc, erm_trajectory_round, pogm_round, solve_pi, CompositionMode,
    MetaConfig,
};
use crate::model::{
    finite_diff_coords, gradient_check_error, init_model, loss_and_grad, Activation, Batch,
    InitKind, LossKind, ModelSpec, ModelState,
};
use crate::paramvec::{self, ParamVector, EPS_NORM};
use crate::rng::{self, derive_seed, Stream};
use crate::runner::compare::angle_correlation;
use crate::runner::config::{Algo, ExperimentConfig};
use crate::runner::run::{prepare, run, seed_dir};
use crate::runner::sweep::{summary_csv, sweep, Axis};
use crate::runner::output::read_metrics_csv;
use crate::trainer::{inner_train, InnerConfig};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(id: usize, name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name,
            passed,
            detail,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

fn gaussian(rng: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn gaussian_pv(rng: &mut rng::Rng, n: usize) -> ParamVector {
    ParamVector::new(gaussian(rng, n)).expect("finite")
}

fn random_simplex(rng: &mut rng::Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn task_config(task: &str) -> ExperimentConfig {
    let params = match task {
        "rotated_moons" => r#"{"angles": [0, 30, 60], "n_per_domain": 60}"#,
        "spurious_color" => r#"{"correlations": [0.9, 0.8, 0.1], "n_per_domain": 60}"#,
        _ => r#"{"k": 3, "n_per_domain": 60}"#,
    };
    ExperimentConfig::from_json(&format!(
        r#"{{"task": "{task}", "task_params": {params}, "algo": "pogm",
            "model": {{"hidden": [8]}}, "holdout_domain": 2}}"#
    ))
    .expect("valid built-in config")
}

/// Zero-radius POGM rounds reproduce trajectory-ERM rounds bit for bit.
pub fn zero_kappa_reduction() -> Result<Outcome> {
    let mut mismatches = Vec::new();
    for task in ["rotated_moons", "spurious_color", "linear"] {
        let cfg = task_config(task);
        for seed in 0..5u64 {
            let data = prepare(&cfg, seed)?;
            let samplers: Vec<SamplerState> = data
                .source_train
                .iter()
                .map(|d| SamplerState::new(derive_seed(seed, Stream::Sampler, d.domain_id as u64), d.len()))
                .collect();
            let meta = MetaConfig {
                kappa: 0.0,
                alpha: 0.8,
                ..Default::default()
            };
            let theta0 = init_model(&data.spec)?.params;
            let (mut a, mut sa) = (theta0.clone(), samplers.clone());
            let (mut b, mut sb) = (theta0, samplers);
            for r in 0..3 {
                let x = pogm_round(&a, &data.spec, &data.source_train, &cfg.inner, &meta, &sa, r)?;
                let y = erm_trajectory_round(&b, &data.spec, &data.source_train, &cfg.inner, 0.8, &sb, r)?;
                (a, sa, b, sb) = (x.theta, x.samplers, y.theta, y.samplers);
            }
            let same = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                mismatches.push(format!("{task}/seed {seed}"));
            }
        }
    }
    Ok(Outcome::new(
        1,
        "zero-radius reduction",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "15/15 task-seed pairs bitwise identical after 3 rounds".into()
        } else {
            format!("differs on {}", mismatches.join(", "))
        },
    ))
}

/// The composed direction sits exactly on the radius-`sqrt(kappa) |h_erm|`
/// sphere.
pub fn hypersphere_equality() -> Result<Outcome> {
    let mut rng = rng::stream(2, Stream::Data, 0);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for i in 0..100 {
        let k = [2, 3, 5][i % 3];
        let dim = [10, 1000][(i / 3) % 2];
        let kappa = rng.random_range(0.01..2.0);
        let hs: Vec<ParamVector> = (0..k).map(|_| gaussian_pv(&mut rng, dim)).collect();
        let h_erm = paramvec::mean(&hs)?;
        let cfg = MetaConfig {
            kappa,
            ..Default::default()
        };
        let sol = solve_pi(&hs, &h_erm, &cfg)?;
        let h_pi = paramvec::combine(sol.pi.as_slice(), &hs)?;
        if h_pi.norm() < EPS_NORM {
            continue;
        }
        let c = compose_gipc(&h_erm, &h_pi, kappa, CompositionMode::SqrtKappa, EPS_NORM)?;
        let ratio = c.h.sub(&h_erm)?.norm() / (kappa.sqrt() * h_erm.norm());
        worst = worst.max((ratio - 1.0).abs());
        n += 1;
    }
    Ok(Outcome::new(
        2,
        "hypersphere equality",
        n == 100 && worst <= 1e-10,
        format!("{n} instances, max |ratio - 1| = {worst:.2e} (tol 1e-10)"),
    ))
}

/// The projected-gradient solver agrees with an exhaustive simplex grid.
pub fn solver_vs_grid() -> Result<Outcome> {
    let mut rng = rng::stream(3, Stream::Data, 0);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let k = 2 + i % 3;
        let dim = rng.random_range(3..9);
        let kappa = rng.random_range(0.0..2.0);
        let hs: Vec<ParamVector> = (0..k).map(|_| gaussian_pv(&mut rng, dim)).collect();
        let h_erm = paramvec::mean(&hs)?;
        let cfg = MetaConfig {
            kappa,
            ..Default::default()
        };
        let sol = solve_pi(&hs, &h_erm, &cfg)?;
        let (_, grid) = brute_force_pi(&hs, &h_erm, kappa, 0.01)?;
        worst = worst.max((sol.objective - grid).abs() / (1.0 + sol.objective.abs()));
    }
    let pv = |v: &[f64]| ParamVector::new(v.to_vec()).expect("finite");
    let sym = solve_pi(
        &[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])],
        &pv(&[0.5, 0.5]),
        &MetaConfig {
            kappa: 0.25,
            ..Default::default()
        },
    )?;
    let sym_err = (sym.pi.as_slice()[0] - 0.5).abs().max((sym.objective - 0.75).abs());
    let hs = [pv(&[1.0, 0.0]), pv(&[1.0, 1.0])];
    let vertex = solve_pi(
        &hs,
        &paramvec::mean(&hs)?,
        &MetaConfig {
            kappa: 1.0,
            ..Default::default()
        },
    )?;
    let vertex_err = (vertex.pi.as_slice()[0] - 1.0)
        .abs()
        .max((vertex.objective - (1.0 + 1.25f64.sqrt())).abs());
    Ok(Outcome::new(
        3,
        "solver vs grid oracle",
        worst <= 1e-4 && sym_err <= 1e-6 && vertex_err <= 1e-6,
        format!(
            "50 instances max rel gap {worst:.2e} (tol 1e-4); hand examples err {sym_err:.1e}, {vertex_err:.1e} (tol 1e-6)"
        ),
    ))
}

/// The average alignment with any vector is at least the worst alignment.
pub fn worst_case_bound() -> Result<Outcome> {
    let mut rng = rng::stream(4, Stream::Data, 0);
    let mut violations = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..8);
        let dim = rng.random_range(1..20);
        let g = gaussian_pv(&mut rng, dim);
        let dots = (0..k)
            .map(|_| gaussian_pv(&mut rng, dim).dot(&g))
            .collect::<Result<Vec<f64>>>()?;
        let avg = dots.iter().sum::<f64>() / k as f64;
        let min = dots.iter().copied().fold(f64::INFINITY, f64::min);
        if avg < min - 1e-12 {
            violations += 1;
        }
    }
    Ok(Outcome::new(
        4,
        "average dominates worst case",
        violations == 0,
        format!("{violations} violations in 1000 instances"),
    ))
}

fn random_batch(rng: &mut rng::Rng, spec: &ModelSpec, n: usize) -> Result<Batch> {
    let x = crate::Matrix::new(n, spec.input_dim(), gaussian(rng, n * spec.input_dim()))?;
    let targets = match spec.loss_kind {
        LossKind::CrossEntropy => {
            crate::model::Targets::Classes((0..n).map(|_| rng.random_range(0..spec.n_classes())).collect())
        }
        LossKind::Mse => crate::model::Targets::Reals(gaussian(rng, n * spec.output_dim())),
    };
    Batch::new(x, targets)
}

/// Model specs exercised by the gradient check.
pub fn gradient_test_matrix() -> Vec<ModelSpec> {
    let mk = |layers: &[usize], act, loss, init| ModelSpec {
        layer_sizes: layers.to_vec(),
        activation: act,
        loss_kind: loss,
        init,
        init_seed: 0,
    };
    vec![
        mk(&[2, 16, 16, 2], Activation::Relu, LossKind::CrossEntropy, InitKind::UniformGlorot),
        mk(&[2, 16, 16, 2], Activation::Tanh, LossKind::CrossEntropy, InitKind::NormalScaled),
        mk(&[3, 8, 3], Activation::Tanh, LossKind::CrossEntropy, InitKind::UniformGlorot),
        mk(&[2, 8, 1], Activation::Relu, LossKind::CrossEntropy, InitKind::NormalScaled),
        mk(&[4, 8, 1], Activation::Tanh, LossKind::Mse, InitKind::UniformGlorot),
        mk(&[4, 6, 6, 2], Activation::Relu, LossKind::Mse, InitKind::NormalScaled),
        mk(&[3, 1], Activation::Tanh, LossKind::Mse, InitKind::UniformGlorot),
    ]
}

/// Backpropagation agrees with central finite differences.
pub fn gradient_correctness() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, base) in gradient_test_matrix().into_iter().enumerate() {
        for seed in 0..5u64 {
            let spec = ModelSpec {
                init_seed: seed,
                ..base.clone()
            };
            let mut rng = rng::stream(seed, Stream::Data, i as u64);
            let mut model = init_model(&spec)?;
            // nonzero biases so every parameter block is exercised
            let jitter: Vec<f64> = model.params.iter().map(|p| p + 0.05 * rng.random_range(-1.0..1.0)).collect();
            model = ModelState::from_params(spec.clone(), ParamVector::new(jitter)?)?;
            let batch = random_batch(&mut rng, &spec, 16)?;
            let (_, grad) = model.loss_and_grad(&batch)?;
            let n = spec.param_count();
            let coords: Vec<usize> = if n <= 64 {
                (0..n).collect()
            } else {
                sample(&mut rng, n, 64).into_vec()
            };
            let fd = finite_diff_coords(&model, &batch, 1e-6, &coords)?;
            for (&c, f) in coords.iter().zip(fd) {
                worst = worst.max(gradient_check_error(grad.as_slice()[c], f));
                checked += 1;
            }
        }
    }
    Ok(Outcome::new(
        5,
        "backprop vs finite differences",
        worst < 1e-5,
        format!("{checked} coordinates over 7 specs x 5 seeds, max rel err {worst:.2e} (tol 1e-5)"),
    ))
}

/// A trajectory is exactly `-eta` times the summed step gradients.
pub fn trajectory_identity() -> Result<Outcome> {
    let mut rng = rng::stream(6, Stream::Data, 0);
    // datasets carry one regression target per row
    let specs: Vec<ModelSpec> = gradient_test_matrix()
        .into_iter()
        .filter(|s| s.loss_kind == LossKind::CrossEntropy || s.output_dim() == 1)
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let spec = ModelSpec {
            init_seed: i,
            ..specs[i as usize % specs.len()].clone()
        };
        let n = rng.random_range(10..40);
        let batch = random_batch(&mut rng, &spec, n)?;
        let ds = crate::domains::DomainDataset::new(0, batch.features, batch.targets, Default::default())?;
        let cfg = InnerConfig {
            eta: rng.random_range(0.01..0.2),
            epochs: rng.random_range(1..6),
            batch_size: rng.random_range(1..16),
            steps_per_epoch: rng.random_range(1..3),
            reshuffle_per_round: false,
        };
        let theta = init_model(&spec)?.params;
        let sampler = SamplerState::new(i, ds.len());
        let out = inner_train(&theta, &spec, &ds, &cfg, &sampler, 0)?;

        let mut params = theta.as_slice().to_vec();
        let mut s = sampler;
        let mut sum = vec![0.0; params.len()];
        for _ in 0..cfg.total_steps() {
            let (b, next) = next_batch(&ds, &s, cfg.batch_size)?;
            s = next;
            let (_, g) = loss_and_grad(&spec, &params, &b)?;
            for ((p, acc), gi) in params.iter_mut().zip(sum.iter_mut()).zip(g.iter()) {
                *p -= cfg.eta * gi;
                *acc += gi;
            }
        }
        let expected = ParamVector::new(sum.iter().map(|g| -cfg.eta * g).collect())?;
        let rel = out.traj.h.sub(&expected)?.norm() / expected.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    Ok(Outcome::new(
        6,
        "trajectory identity",
        worst <= 1e-12,
        format!("10 configs, max rel err {worst:.2e} (tol 1e-12)"),
    ))
}

/// Certified exclusions are confirmed by the membership oracle, and explicit
/// convex combinations are found inside.
pub fn hull_soundness() -> Result<Outcome> {
    let mut rng = rng::stream(7, Stream::Data, 0);
    let mut certified = 0;
    let mut tried = 0;
    let mut min_residual = f64::INFINITY;
    while certified < 100 && tried < 100_000 {
        tried += 1;
        let k = rng.random_range(2..6);
        let dim = rng.random_range(2..12);
        let shared = gaussian(&mut rng, dim);
        let sources: Vec<ParamVector> = (0..k)
            .map(|_| {
                let noise = gaussian(&mut rng, dim);
                ParamVector::new(shared.iter().zip(&noise).map(|(s, n)| s + 0.7 * n).collect())
                    .expect("finite")
            })
            .collect();
        let target = gaussian_pv(&mut rng, dim);
        if hull_exclusion_test(&sources, &target)? == HullVerdict::CertifiedOutside {
            certified += 1;
            let m = hull_membership_oracle(&sources, &target, 1e-6)?;
            min_residual = min_residual.min(m.residual);
        }
    }
    let mut max_inside: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let dim = rng.random_range(k + 2..16);
        let sources: Vec<ParamVector> = (0..k).map(|_| gaussian_pv(&mut rng, dim)).collect();
        let w = random_simplex(&mut rng, k);
        let target = paramvec::combine(&w, &sources)?;
        let m = hull_membership_oracle(&sources, &target, 1e-8)?;
        max_inside = max_inside.max(m.residual);
    }
    Ok(Outcome::new(
        7,
        "hull test soundness",
        certified == 100 && min_residual > 1e-6 && max_inside < 1e-8,
        format!(
            "{certified} certified (of {tried} drawn), min oracle residual {min_residual:.2e} (> 1e-6); \
             convex combinations max residual {max_inside:.2e} (< 1e-8)"
        ),
    ))
}

/// Rotated two-moons setup shared by the qualitative checks.
pub fn moons_config(algo: Algo, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(
        r#"{
            "task": "rotated_moons",
            "task_params": {"angles": [0, 30, 60, 90], "n_per_domain": 500, "noise_sd": 0.1},
            "model": {"hidden": [16, 16], "activation": "relu"},
            "algo": "pogm",
            "inner": {"eta": 0.02, "epochs": 5, "batch_size": 32},
            "meta": {"kappa": 0.5, "alpha": 1.0, "fish_epsilon": 0.5},
            "rounds": 200,
            "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
            "holdout_domain": 3
        }"#,
    )
    .expect("valid built-in config");
    cfg.algo = algo;
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn load_metrics(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<crate::diagnostics::MetricsRow>> {
    let file = std::fs::File::open(seed_dir(cfg, seed).join("metrics.csv"))?;
    read_metrics_csv(std::io::BufReader::new(file))
}

/// Criteria 8 and 9 from one set of runs.
pub fn moons_comparison(out: &Path) -> Result<(Outcome, Outcome)> {
    let pogm_cfg = moons_config(Algo::Pogm, out);
    let fish_cfg = moons_config(Algo::Fish, out);
    let pooled_cfg = moons_config(Algo::ErmPooled, out);
    let pogm = run(&pogm_cfg)?;
    let fish = run(&fish_cfg)?;
    let pooled = run(&pooled_cfg)?;

    let mut wins = 0;
    let mut pairs = Vec::new();
    for &seed in &pogm_cfg.seeds {
        let a = angle_correlation(&load_metrics(&pogm_cfg, seed)?)?;
        let b = angle_correlation(&load_metrics(&fish_cfg, seed)?)?;
        if a > b {
            wins += 1;
        }
        pairs.push(format!("{a:.2}/{b:.2}"));
    }
    let c8 = Outcome::new(
        8,
        "angle correlation above Fish",
        wins >= 7,
        format!("higher in {wins}/10 seeds (need 7); pogm/fish {}", pairs.join(" ")),
    );

    let mean_acc = |records: &[crate::runner::RunRecord]| -> (f64, usize) {
        let accs: Vec<f64> = records.iter().filter_map(|r| r.final_test_acc()).collect();
        (accs.iter().sum::<f64>() / accs.len().max(1) as f64, accs.len())
    };
    let (p, np) = mean_acc(&pogm);
    let (e, ne) = mean_acc(&pooled);
    let (f, _) = mean_acc(&fish);
    let c9 = Outcome::new(
        9,
        "held-out accuracy vs pooled ERM",
        np == 10 && ne == 10 && p >= e - 0.01,
        format!("pogm {p:.4} vs pooled {e:.4} - 0.01 (fish {f:.4}), {np}/{ne} seeds finished"),
    );
    Ok((c8, c9))
}

/// A kappa sweep completes, summarises three values and is not degenerate.
pub fn kappa_sweep(out: &Path) -> Result<Outcome> {
    let mut base = moons_config(Algo::Pogm, out);
    base.rounds = 30;
    base.seeds = vec![0, 1, 2];
    base.diagnostics = false;
    let values = [0.05, 0.1, 0.5];
    let rows = sweep(&base, Axis::Kappa, &values)?;
    let text = summary_csv(&rows);
    let formatted = text.lines().skip(1).filter(|l| l.contains(" ± ")).count();
    let mut finals = Vec::new();
    for &v in &values {
        let cfg = Axis::Kappa.apply(&base, v)?;
        let ckpt = crate::runner::run::load_checkpoint(&seed_dir(&cfg, 0).join("checkpoint.json"))?;
        finals.push(ckpt.params);
    }
    let distinct = finals[0] != finals[1] && finals[1] != finals[2] && finals[0] != finals[2];
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("{}: {:.3} ± {:.3}", r.value, r.mean, r.stderr))
        .collect();
    Ok(Outcome::new(
        10,
        "kappa sweep",
        rows.len() == 3 && formatted == 3 && distinct,
        format!(
            "{} rows ({}), final parameters distinct across kappa: {distinct}",
            formatted,
            summary.join("; ")
        ),
    ))
}

/// Small seeded experiment whose outputs must be reproducible byte for byte.
pub fn determinism_config(out: &Path) -> ExperimentConfig {
    let mut cfg = moons_config(Algo::Pogm, out);
    cfg.task_params.insert("n_per_domain".into(), 100.into());
    cfg.rounds = 25;
    cfg.seeds = vec![0, 1];
    cfg
}

pub fn determinism(out: &Path) -> Result<Outcome> {
    let a = determinism_config(&out.join("repeat-a"));
    let b = determinism_config(&out.join("repeat-b"));
    run(&a)?;
    run(&b)?;
    let mut identical = true;
    let mut bytes = 0;
    for &seed in &a.seeds {
        let x = std::fs::read(seed_dir(&a, seed).join("metrics.csv"))?;
        let y = std::fs::read(seed_dir(&b, seed).join("metrics.csv"))?;
        identical &= x == y;
        bytes += x.len();
    }
    Ok(Outcome::new(
        11,
        "determinism",
        identical,
        format!("metrics.csv of 2 seeds ({bytes} bytes) identical across executions: {identical}"),
    ))
}

/// Invariant angle at lag 1, variance of equal values, KL on duplicated
/// domains.
pub fn diagnostics_sanity() -> Result<Outcome> {
    let cfg = task_config("rotated_moons");
    let data = prepare(&cfg, 0)?;
    let samplers: Vec<SamplerState> = data
        .source_train
        .iter()
        .map(|d| SamplerState::new(d.domain_id as u64, d.len()))
        .collect();
    let mut history = ThetaHistory::new(64)?;
    let mut theta = init_model(&data.spec)?.params;
    history.push(0, theta.clone())?;
    let mut s = samplers;
    let mut angles_ok = 0;
    let mut moving = 0;
    for r in 0..30 {
        let out = pogm_round(&theta, &data.spec, &data.source_train, &cfg.inner, &cfg.meta, &s, r)?;
        let moved = out.theta != theta;
        theta = out.theta;
        s = out.samplers;
        history.push(r + 1, theta.clone())?;
        if moved {
            moving += 1;
            if invariant_angle(&history, r + 1, 1)? == 1.0 {
                angles_ok += 1;
            }
        }
    }
    let var = gip_variance(&[0.37; 6])?;
    let model = ModelState::from_params(data.spec.clone(), theta)?;
    let d = &data.source_train[0];
    let kl = pairwise_kl_b1(&model, &[d.clone(), d.clone(), d.clone()])?;
    Ok(Outcome::new(
        12,
        "diagnostics sanity",
        moving > 0 && angles_ok == moving && var == 0.0 && kl.abs() <= 1e-12,
        format!(
            "lag-1 angle exactly 1 on {angles_ok}/{moving} moving rounds; variance {var}; duplicated-domain KL {kl:.1e}"
        ),
    ))
}

fn guard(id: usize, name: &'static str, r: Result<Outcome>) -> Outcome {
    r.unwrap_or_else(|e| Outcome::new(id, name, false, format!("error: {e}")))
}

/// Runs every criterion, writing experiment outputs under `dir`.
pub fn run_all(dir: &Path) -> Result<Vec<Outcome>> {
    std::fs::create_dir_all(dir)?;
    let mut out = vec![
        guard(1, "zero-radius reduction", zero_kappa_reduction()),
        guard(2, "hypersphere equality", hypersphere_equality()),
        guard(3, "solver vs grid oracle", solver_vs_grid()),
        guard(4, "average dominates worst case", worst_case_bound()),
        guard(5, "backprop vs finite differences", gradient_correctness()),
        guard(6, "trajectory identity", trajectory_identity()),
        guard(7, "hull test soundness", hull_soundness()),
    ];
    match moons_comparison(&dir.join("moons")) {
        Ok((c8, c9)) => out.extend([c8, c9]),
        Err(e) => {
            out.push(Outcome::new(8, "angle correlation above Fish", false, format!("error: {e}")));
            out.push(Outcome::new(9, "held-out accuracy vs pooled ERM", false, format!("error: {e}")));
        }
    }
    out.push(guard(10, "kappa sweep", kappa_sweep(&dir.join("sweep"))));
    out.push(guard(11, "determinism", determinism(dir)));
    out.push(guard(12, "diagnostics sanity", diagnostics_sanity()));
    Ok(out)
}
