use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use super::kernel::trinomial;
use super::{ControlledDiffusionSpec, Grid};
use crate::error::{invalid, Result};
use crate::metric::MetricKind;
use crate::rng::stream;

/// X_{k+1} = X_k + b(X_k, a_k)δ + σ(X_k, a_k)ΔW_{k+1}; one step per action.
pub fn euler_maruyama_path<R: Rng>(
    spec: &ControlledDiffusionSpec,
    x0: &[f64],
    actions: &[usize],
    delta: f64,
    noise: &mut R,
) -> Vec<Vec<f64>> {
    let sd = delta.sqrt();
    let mut path = Vec::with_capacity(actions.len() + 1);
    let mut x = x0.to_vec();
    path.push(x.clone());
    for &a in actions {
        let b = spec.drift(&x, a);
        let sg = spec.sigma(&x, a);
        for i in 0..x.len() {
            let z: f64 = noise.sample(StandardNormal);
            x[i] += b[i] * delta + sg * sd * z;
        }
        path.push(x.clone());
    }
    path
}

#[derive(Debug, Clone)]
pub struct CouplingReport {
    pub steps: usize,
    pub delta: f64,
    /// max_k ‖X_k − S̃_k‖ per trial.
    pub deviations: Vec<f64>,
    pub k_hat: f64,
    pub r_grid: Vec<f64>,
    pub empirical_tail: Vec<f64>,
    pub bound: Vec<f64>,
    pub violations: usize,
}

/// Variance-proxy fit K̂ = 2·E[D²]/(δN).
pub fn fit_tail_constant(deviations: &[f64], delta: f64, steps: usize) -> f64 {
    let m2 = deviations.iter().map(|d| d * d).sum::<f64>() / deviations.len() as f64;
    (2.0 * m2 / (delta * steps as f64)).max(f64::MIN_POSITIVE)
}

/// Runs the chain and the Euler path on shared Gaussian increments: each
/// chain coordinate jumps by the inverse CDF of its lattice law evaluated
/// at Φ(Z), Z being the standardized increment of that coordinate.
pub fn coupling_experiment(
    spec: &ControlledDiffusionSpec,
    grid: &Grid,
    x0: &[f64],
    action: usize,
    delta: f64,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<CouplingReport> {
    if trials < 100 {
        return Err(invalid(format!("need at least 100 trials for tail estimation, got {trials}")));
    }
    spec.validate()?;
    if action >= spec.n_actions() || x0.len() != spec.dim {
        return Err(invalid("bad action or starting point"));
    }
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let sd = delta.sqrt();
    let d = spec.dim;
    let start = grid.coords(grid.nearest(x0));
    let mut deviations = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = stream(seed, "coupling", t as u64);
        let mut k = start.clone();
        let mut chain: Vec<f64> = grid.point(grid.index(&k));
        let mut euler = chain.clone();
        let mut worst = 0.0_f64;
        for _ in 0..steps {
            let bc = spec.drift(&chain, action);
            let sc = spec.sigma(&chain, action);
            let be = spec.drift(&euler, action);
            let se = spec.sigma(&euler, action);
            for i in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                euler[i] += be[i] * delta + se * sd * z;
                let inc = trinomial(bc[i] * delta, sc * sc * delta, grid.h)?;
                let u = phi.cdf(z);
                let mut acc = 0.0;
                let mut off = *inc.offsets.last().expect("nonempty law");
                for (o, p) in inc.offsets.iter().zip(&inc.probs) {
                    acc += p;
                    if u < acc {
                        off = *o;
                        break;
                    }
                }
                k[i] = (k[i] as i64 + off).clamp(0, grid.cells[i] as i64) as usize;
            }
            chain = grid.point(grid.index(&k));
            worst = worst.max(MetricKind::Euclidean.eval(&chain, &euler));
        }
        deviations.push(worst);
    }
    let k_hat = fit_tail_constant(&deviations, delta, steps);
    let dmax = deviations.iter().copied().fold(0.0, f64::max);
    let r_grid: Vec<f64> = (1..=64).map(|j| dmax * j as f64 / 64.0).collect();
    let scale = k_hat * delta * steps as f64;
    let mut empirical_tail = Vec::with_capacity(r_grid.len());
    let mut bound = Vec::with_capacity(r_grid.len());
    let mut violations = 0;
    for &r in &r_grid {
        let p = deviations.iter().filter(|&&x| x >= r).count() as f64 / trials as f64;
        let b = 2.0 * (-r * r / scale).exp();
        if p > b {
            violations += 1;
        }
        empirical_tail.push(p);
        bound.push(b);
    }
    Ok(CouplingReport { steps, delta, deviations, k_hat, r_grid, empirical_tail, bound, violations })
}

#[cfg(test)]
mod tests {
    use super::super::{DiffusionForm, DriftForm, RewardForm};
    use super::*;

    fn ou(sigma: f64) -> ControlledDiffusionSpec {
        ControlledDiffusionSpec {
            dim: 1,
            drift: DriftForm::Affine { kappa: 0.5, theta: vec![0.0] },
            diffusion: DiffusionForm::Constant { sigma },
            actions: vec![vec![0.0]],
            reward: RewardForm::Zero,
            discount_rate: 1.0,
            lipschitz: 0.5,
        }
    }

    #[test]
    fn deterministic_path_is_a_line() {
        let spec = ControlledDiffusionSpec {
            drift: DriftForm::Constant,
            diffusion: DiffusionForm::Constant { sigma: 0.0 },
            actions: vec![vec![2.0, -1.0]],
            dim: 2,
            ..ou(0.0)
        };
        let mut rng = stream(0, "em-test", 0);
        let path = euler_maruyama_path(&spec, &[1.0, 1.0], &[0; 5], 0.1, &mut rng);
        for (k, x) in path.iter().enumerate() {
            assert!((x[0] - (1.0 + 0.2 * k as f64)).abs() < 1e-12);
            assert!((x[1] - (1.0 - 0.1 * k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let spec = ou(1.0);
        let a = euler_maruyama_path(&spec, &[0.3], &[0; 50], 0.01, &mut stream(9, "em", 1));
        let b = euler_maruyama_path(&spec, &[0.3], &[0; 50], 0.01, &mut stream(9, "em", 1));
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_trials_rejected() {
        let g = Grid::interval(-2.0, 2.0, 0.1).unwrap();
        assert!(coupling_experiment(&ou(1.0), &g, &[0.0], 0, 0.01, 10, 99, 1).is_err());
    }

    #[test]
    fn deterministic_coupling_stays_within_a_cell() {
        // σ = 0: the chain rounds the drifted point each step, so it trails
        // the Euler path by at most the Gronwall-amplified half cell.
        let g = Grid::interval(-2.0, 2.0, 0.05).unwrap();
        let r = coupling_experiment(&ou(0.0), &g, &[1.0], 0, 0.01, 100, 100, 3).unwrap();
        let gronwall = 0.5 * g.h * 100.0 * (0.5f64 * 1.0).exp();
        assert!(r.deviations.iter().all(|&d| d <= gronwall));
        assert_eq!(r.violations, 0);
    }
}
