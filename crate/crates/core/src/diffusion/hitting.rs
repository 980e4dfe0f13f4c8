use super::kernel::discretize_kernel;
use super::{ControlledDiffusionSpec, Grid};
use crate::error::{invalid, Result};
use crate::mdp::{bellman_optimality_op, policy_iteration, sup_norm_diff, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshChoice {
    pub delta: f64,
    /// ε ≤ (2Lγ₂)²/(10·C): the small-ε regime the rule assumes.
    pub in_regime: bool,
}

/// δ* = ε²/(4L²γ₂²).
pub fn mesh_for_tolerance(epsilon: f64, lipschitz: f64, gamma2: f64, c: f64) -> Result<MeshChoice> {
    if !(epsilon > 0.0 && lipschitz > 0.0 && gamma2 > 0.0 && c > 0.0) {
        return Err(invalid("mesh rule needs positive epsilon, L, gamma2 and C"));
    }
    let delta = epsilon * epsilon / (4.0 * lipschitz * lipschitz * gamma2 * gamma2);
    let scale = 2.0 * lipschitz * gamma2;
    Ok(MeshChoice { delta, in_regime: epsilon <= scale * scale / (10.0 * c) })
}

/// Smooth test functions with analytic gradient and Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    /// ½·curvature·‖x − center‖²
    Quadratic { center: Vec<f64>, curvature: f64 },
    /// exp(−‖x − center‖²/(2 width²))
    Bump { center: Vec<f64>, width: f64 },
}

impl TestFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Quadratic { center, curvature } => 0.5 * curvature * dist2(x, center),
            TestFunction::Bump { center, width } => (-dist2(x, center) / (2.0 * width * width)).exp(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::Constant(_) => vec![0.0; x.len()],
            TestFunction::Quadratic { center, curvature } => {
                x.iter().zip(center).map(|(a, c)| curvature * (a - c)).collect()
            }
            TestFunction::Bump { center, width } => {
                let v = self.value(x);
                x.iter().zip(center).map(|(a, c)| -v * (a - c) / (width * width)).collect()
            }
        }
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        match self {
            TestFunction::Constant(_) => 0.0,
            TestFunction::Quadratic { curvature, .. } => curvature * d,
            TestFunction::Bump { center, width } => {
                let w2 = width * width;
                self.value(x) * (dist2(x, center) / (w2 * w2) - d / w2)
            }
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// sup over interior grid points of |T^δ[u](s) − T̄u(s)|, where
/// T^δ[u] = max_a [rδ + γ Σ P u] and T̄ replaces Σ P u by
/// u + δ(b·∇u + ½σ²Δu). Points within two cells of the boundary are
/// skipped, since clamped mass there changes the moments at first order.
pub fn operator_consistency_error(
    spec: &ControlledDiffusionSpec,
    grid: &Grid,
    delta: f64,
    u: &TestFunction,
) -> Result<f64> {
    let mdp = discretize_kernel(spec, grid, delta)?;
    let values: Vec<f64> = (0..grid.len()).map(|i| u.value(&grid.point(i))).collect();
    let gamma = mdp.discount();
    let mut worst = 0.0_f64;
    for s in (0..grid.len()).filter(|&s| grid.is_interior(s, 2)) {
        let x = grid.point(s);
        let grad = u.gradient(&x);
        let lap = u.laplacian(&x);
        let mut discrete = f64::NEG_INFINITY;
        let mut analytic = f64::NEG_INFINITY;
        for a in 0..spec.n_actions() {
            discrete = discrete.max(mdp.q_value(s, a, &values));
            let b = spec.drift(&x, a);
            let sg = spec.sigma(&x, a);
            let gen: f64 = b.iter().zip(&grad).map(|(bi, gi)| bi * gi).sum::<f64>() + 0.5 * sg * sg * lap;
            analytic = analytic.max(mdp.reward(s, a) + gamma * (values[s] + delta * gen));
        }
        worst = worst.max((discrete - analytic).abs());
    }
    Ok(worst)
}

/// Fixed point of the chain on a fine grid, standing in for the
/// continuous-limit value function.
#[derive(Debug, Clone)]
pub struct Reference {
    pub grid: Grid,
    pub delta: f64,
    pub values: Vec<f64>,
    /// ‖T[V] − V‖ of the returned values.
    pub residual: f64,
}

impl Reference {
    /// For each reference point, the nearest point of `coarse`.
    pub fn nearest_map(&self, coarse: &Grid) -> Vec<usize> {
        (0..self.grid.len()).map(|i| coarse.nearest(&self.grid.point(i))).collect()
    }

    /// sup over reference points x of |v(nearest_coarse(x)) − V̄(x)|.
    pub fn error(&self, map: &[usize], v: &[f64]) -> f64 {
        map.iter().zip(&self.values).map(|(&c, r)| (v[c] - r).abs()).fold(0.0, f64::max)
    }

    /// Reference values at the points of another grid (nearest reference point).
    pub fn sample_on(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.len()).map(|i| self.values[self.grid.nearest(&grid.point(i))]).collect()
    }
}

/// Exact fixed point (policy iteration) of the fine-grid chain.
pub fn continuous_reference(spec: &ControlledDiffusionSpec, fine: &Grid, delta: f64) -> Result<Reference> {
    let mdp = discretize_kernel(spec, fine, delta)?;
    let pi = policy_iteration(&mdp)?;
    let residual = sup_norm_diff(&bellman_optimality_op(&mdp, &pi.values)?, &pi.values);
    Ok(Reference { grid: fine.clone(), delta, values: pi.values, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitOutcome {
    /// First iteration whose error is ≤ ε; None when the budget ran out.
    pub tau: Option<usize>,
    pub iterations_run: usize,
    pub final_error: f64,
}

/// τ⁺ = min{k : ‖V_k − V̄‖ ≤ ε} for value iteration on the coarse chain.
pub fn forward_hitting_time(
    spec: &ControlledDiffusionSpec,
    coarse: &Grid,
    delta: f64,
    reference: &Reference,
    epsilon: f64,
    v0: Option<&[f64]>,
    max_sweeps: usize,
) -> Result<HitOutcome> {
    let mdp = discretize_kernel(spec, coarse, delta)?;
    forward_hitting_time_on(&mdp, coarse, reference, epsilon, v0, max_sweeps)
}

pub(crate) fn forward_hitting_time_on(
    mdp: &TabularMdp,
    coarse: &Grid,
    reference: &Reference,
    epsilon: f64,
    v0: Option<&[f64]>,
    max_sweeps: usize,
) -> Result<HitOutcome> {
    let map = reference.nearest_map(coarse);
    let mut v = match v0 {
        Some(v) => v.to_vec(),
        None => vec![0.0; coarse.len()],
    };
    let mut err = reference.error(&map, &v);
    let mut k = 0;
    while err > epsilon {
        if k == max_sweeps {
            return Ok(HitOutcome { tau: None, iterations_run: k, final_error: err });
        }
        v = bellman_optimality_op(mdp, &v)?;
        k += 1;
        err = reference.error(&map, &v);
    }
    Ok(HitOutcome { tau: Some(k), iterations_run: k, final_error: err })
}
