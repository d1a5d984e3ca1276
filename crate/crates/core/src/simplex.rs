//! Probability-simplex projection and a projected-gradient minimiser.

use crate::error::{PogmError, Result};

/// Euclidean projection onto `{x : x_i >= 0, Σ x_i = 1}` by sorting and
/// thresholding.
pub fn project(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once an accepted step improves the objective by less than this.
    pub tol: f64,
    pub step0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub point: Vec<f64>,
    pub objective: f64,
    pub iters: usize,
    /// Objective after every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

/// Projected gradient descent over the simplex from the uniform point.
///
/// A trial step is halved until the objective strictly decreases; an accepted
/// step is doubled again (never past `step0`) for the next iteration. The
/// objective sequence is therefore non-increasing. Runs until the improvement
/// drops below `tol`, no decreasing step exists, or `max_iters` is hit.
pub fn minimize<F, G>(k: usize, f: F, grad: G, cfg: &SolverConfig) -> Result<Solution>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if k == 0 {
        return Err(PogmError::Empty("simplex of dimension 0"));
    }
    if !(cfg.step0 > 0.0 && cfg.step0.is_finite()) {
        return Err(PogmError::InvalidArgument(format!("step0 = {}", cfg.step0)));
    }
    let mut x = vec![1.0 / k as f64; k];
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(PogmError::NonFinite {
            op: "simplex objective",
            index: 0,
        });
    }
    let mut history = vec![fx];
    let mut iters = 0;
    let mut step = cfg.step0;
    let min_step = cfg.step0 * 1e-30;
    if k == 1 {
        return Ok(Solution {
            point: x,
            objective: fx,
            iters,
            history,
        });
    }
    'outer: while iters < cfg.max_iters {
        let g = grad(&x);
        let (y, fy) = loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let y = project(&trial);
            let fy = f(&y);
            if !fy.is_finite() {
                return Err(PogmError::NonFinite {
                    op: "simplex objective",
                    index: iters,
                });
            }
            if fy < fx {
                break (y, fy);
            }
            step *= 0.5;
            if step < min_step || y == x {
                break 'outer;
            }
        };
        iters += 1;
        let improvement = fx - fy;
        x = y;
        fx = fy;
        history.push(fx);
        if improvement < cfg.tol {
            break;
        }
        step = (step * 2.0).min(cfg.step0);
    }
    Ok(Solution {
        point: x,
        objective: fx,
        iters,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project(&[0.8, 0.8]), vec![0.5, 0.5]);
        assert_eq!(project(&[1.0, 0.0, -0.5]), vec![1.0, 0.0, 0.0]);
        let on = [0.2, 0.3, 0.5];
        for (a, b) in project(&on).iter().zip(on) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(project(&[5.0]), vec![1.0]);
    }

    #[test]
    fn minimises_a_quadratic() {
        // distance to (0.7, 0.3, 0) which lies on the simplex
        let target = [0.7, 0.3, 0.0];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let g = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        let cfg = SolverConfig {
            max_iters: 1000,
            tol: 0.0,
            step0: 0.25,
        };
        let s = minimize(3, f, g, &cfg).unwrap();
        assert!(s.objective < 1e-20, "{}", s.objective);
        assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_optimal(v in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            let p = project(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // optimality: (v - p) . (q - p) <= 0 for every vertex q
            for j in 0..v.len() {
                let mut s = 0.0;
                for i in 0..v.len() {
                    let q = if i == j { 1.0 } else { 0.0 };
                    s += (v[i] - p[i]) * (q - p[i]);
                }
                prop_assert!(s <= 1e-9);
            }
        }
    }
}
