//! Backward-Euler BSDE iteration for the discounted HJB equation on a grid.
//!
//! One step maps a grid function Y_{k+1} to Y_k by sampling an Euler step
//! from every grid point under every action (shared Gaussian increments
//! across actions), evaluating Y_{k+1} at the nearest grid point, and taking
//! the sup over actions of the driver-corrected conditional mean.

use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{ControlledDiffusionSpec, Grid, HitOutcome, Reference};
use crate::error::{invalid, Error, Result};
use crate::rng::stream2;

pub const MIN_SAMPLES: usize = 64;

/// Arguments of the driver f(x, y, z, Γ). `gamma: None` drops the trace term.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverInputs {
    pub x: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    pub gamma: Option<Vec<Vec<f64>>>,
}

impl DriverInputs {
    pub fn new(x: Vec<f64>, y: f64, z: Vec<f64>, gamma: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if z.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: z.len(), index: 0 });
        }
        if let Some(g) = &gamma {
            if g.len() != x.len() || g.iter().any(|r| r.len() != x.len()) {
                return Err(invalid("gamma must be a square matrix matching the state dimension"));
            }
            for i in 0..g.len() {
                for j in 0..i {
                    if (g[i][j] - g[j][i]).abs() > 1e-12 * (1.0 + g[i][j].abs()) {
                        return Err(invalid(format!("gamma is not symmetric at ({i}, {j})")));
                    }
                }
            }
        }
        Ok(Self { x, y, z, gamma })
    }
}

/// f(x,y,z,Γ) = sup_a {r(x,a) + b(x,a)·z + ½ Tr[σσᵀΓ]} − γy, lowest-index
/// action on ties. Returns the value and the maximizing action.
pub fn driver(spec: &ControlledDiffusionSpec, inputs: &DriverInputs, gamma: f64) -> (f64, usize) {
    let x = &inputs.x;
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for a in 0..spec.n_actions() {
        let b = spec.drift(x, a);
        let mut v = spec.reward(x, a) + b.iter().zip(&inputs.z).map(|(b, z)| b * z).sum::<f64>();
        if let Some(g) = &inputs.gamma {
            let s = spec.sigma(x, a);
            v += 0.5 * s * s * (0..x.len()).map(|i| g[i][i]).sum::<f64>();
        }
        if v > best {
            best = v;
            arg = a;
        }
    }
    (best - gamma * inputs.y, arg)
}

/// How the second-order term enters a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaMode {
    /// No Γ term; the sampled Euler step carries the diffusion.
    #[default]
    Omitted,
    /// Y_{k+1} at the noise-free drifted point plus ½σ²Tr[Γ]δ, Γ from
    /// central differences of Y_{k+1} on the grid.
    FiniteDifference,
}

/// What the driver's y-argument sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YArgument {
    /// f evaluated once at the empirical mean of Y_{k+1}(X).
    #[default]
    Mean,
    /// f averaged over the samples.
    SampleAverage,
}

/// Running reward used inside the step.
#[derive(Debug, Clone, Copy)]
pub enum RunningReward<'a> {
    Spec,
    /// Indexed `[grid point][action]`.
    Table(&'a [Vec<f64>]),
}

impl RunningReward<'_> {
    fn at(&self, spec: &ControlledDiffusionSpec, x: &[f64], s: usize, a: usize) -> f64 {
        match self {
            RunningReward::Spec => spec.reward(x, a),
            RunningReward::Table(t) => t[s][a],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeConfig {
    pub samples: usize,
    pub gamma_mode: GammaMode,
    pub y_argument: YArgument,
    pub seed: u64,
}

impl BsdeConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, gamma_mode: GammaMode::Omitted, y_argument: YArgument::Mean, seed }
    }

    pub fn with_gamma_mode(mut self, m: GammaMode) -> Self {
        self.gamma_mode = m;
        self
    }

    pub fn with_y_argument(mut self, m: YArgument) -> Self {
        self.y_argument = m;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub y: Vec<f64>,
    /// Z of the maximizing action, per grid point.
    pub z: Vec<Vec<f64>>,
}

/// Y_k = sup_a { Ê[Y_{k+1}(X^a)] + δ(r(s,a) [+ ½σ²TrΓ] − γ·Ê[Y_{k+1}(X^a)]) }
/// with X^a = s + b(s,a)δ + σΔW, and Z = Ê[Y_{k+1}(X^a)ΔW]/δ.
///
/// The drift enters through the sampled point, so the driver's b·z term is
/// not added a second time. `k` only keys the random streams.
pub fn backward_euler_step(
    spec: &ControlledDiffusionSpec,
    grid: &Grid,
    delta: f64,
    y_next: &[f64],
    config: &BsdeConfig,
    k: usize,
    reward: RunningReward<'_>,
) -> Result<StepOutput> {
    if config.samples < MIN_SAMPLES {
        return Err(invalid(format!("need at least {MIN_SAMPLES} Monte Carlo samples, got {}", config.samples)));
    }
    if y_next.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: y_next.len(), index: k });
    }
    if !(delta > 0.0) {
        return Err(invalid(format!("time step must be positive, got {delta}")));
    }
    if let RunningReward::Table(t) = reward {
        if t.len() != grid.len() || t.iter().any(|r| r.len() != spec.n_actions()) {
            return Err(invalid("reward table must be grid points x actions"));
        }
    }
    let d = spec.dim;
    let m = config.samples;
    let rate = spec.discount_rate;
    let sd = delta.sqrt();
    let mut y = Vec::with_capacity(grid.len());
    let mut z = Vec::with_capacity(grid.len());
    let mut dw = vec![0.0; m * d];
    let mut xa = vec![0.0; d];
    for s in 0..grid.len() {
        let x = grid.point(s);
        let mut rng = stream2(config.seed, "bsde-step", k as u64, s as u64);
        for w in dw.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *w = sd * g;
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_z = vec![0.0; d];
        for a in 0..spec.n_actions() {
            let b = spec.drift(&x, a);
            let sg = spec.sigma(&x, a);
            let r = reward.at(spec, &x, s, a);
            let mut ybar = 0.0;
            let mut zs = vec![0.0; d];
            let mut favg = 0.0;
            for j in 0..m {
                let w = &dw[j * d..(j + 1) * d];
                for i in 0..d {
                    xa[i] = x[i] + b[i] * delta + sg * w[i];
                }
                let v = y_next[grid.nearest(&xa)];
                ybar += v;
                for i in 0..d {
                    zs[i] += v * w[i];
                }
                if config.y_argument == YArgument::SampleAverage {
                    favg += v + delta * (r - rate * v);
                }
            }
            ybar /= m as f64;
            for zi in zs.iter_mut() {
                *zi /= m as f64 * delta;
            }
            let cand = match config.gamma_mode {
                GammaMode::Omitted => match config.y_argument {
                    YArgument::Mean => ybar + delta * (r - rate * ybar),
                    YArgument::SampleAverage => favg / m as f64,
                },
                GammaMode::FiniteDifference => {
                    for i in 0..d {
                        xa[i] = x[i] + b[i] * delta;
                    }
                    let c = grid.nearest(&xa);
                    let y0 = y_next[c];
                    let tr = laplacian_fd(grid, y_next, c);
                    y0 + delta * (r + 0.5 * sg * sg * tr - rate * y0)
                }
            };
            if !cand.is_finite() {
                return Err(invalid(format!("non-finite backward value at grid point {s} ({x:?}), action {a}")));
            }
            if cand > best {
                best = cand;
                best_z = zs;
            }
        }
        y.push(best);
        z.push(best_z);
    }
    Ok(StepOutput { y, z })
}

/// Σ_i ∂²Y/∂x_i² by central differences; one-sided rows at the boundary are
/// mirrored, which gives zero curvature across the edge.
fn laplacian_fd(grid: &Grid, v: &[f64], c: usize) -> f64 {
    let coords = grid.coords(c);
    let h2 = grid.h * grid.h;
    let mut tr = 0.0;
    for i in 0..grid.dim() {
        let mut lo = coords.clone();
        let mut hi = coords.clone();
        if coords[i] == 0 || coords[i] == grid.cells[i] {
            continue;
        }
        lo[i] -= 1;
        hi[i] += 1;
        tr += (v[grid.index(&hi)] - 2.0 * v[c] + v[grid.index(&lo)]) / h2;
    }
    tr
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolveState {
    pub k: usize,
    pub y: Vec<f64>,
    /// Empty at the terminal index.
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolveTrace {
    pub grid: Grid,
    pub delta: f64,
    pub samples: usize,
    pub terminal: Vec<f64>,
    /// Y_N first, Y_0 last.
    pub states: Vec<BsdeSolveState>,
}

impl BsdeSolveTrace {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    /// Y at time index k.
    pub fn at(&self, k: usize) -> &[f64] {
        &self.states[self.horizon() - k].y
    }

    /// Y_{N−j}: j backward steps from the terminal index.
    pub fn steps_back(&self, j: usize) -> &[f64] {
        &self.states[j].y
    }
}

/// Y_N = g, Y_k = step(Y_{k+1}) for k = N−1..0.
pub fn backward_solve(
    spec: &ControlledDiffusionSpec,
    grid: &Grid,
    delta: f64,
    n: usize,
    terminal: &[f64],
    config: &BsdeConfig,
    reward: RunningReward<'_>,
) -> Result<BsdeSolveTrace> {
    if terminal.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: terminal.len(), index: n });
    }
    let mut states = Vec::with_capacity(n + 1);
    states.push(BsdeSolveState { k: n, y: terminal.to_vec(), z: Vec::new() });
    for k in (0..n).rev() {
        let out = backward_euler_step(spec, grid, delta, &states.last().expect("nonempty").y, config, k, reward)?;
        states.push(BsdeSolveState { k, y: out.y, z: out.z });
    }
    Ok(BsdeSolveTrace { grid: grid.clone(), delta, samples: config.samples, terminal: terminal.to_vec(), states })
}

/// What Y_k is compared against.
#[derive(Debug, Clone, Copy)]
pub enum BackwardReference<'a> {
    /// A fixed function (the infinite-horizon limit).
    Stationary(&'a Reference),
    /// Another backward solve over the same horizon, matched in time.
    TimeMatched(&'a BsdeSolveTrace),
}

/// τ⁻ = min{j : ‖Y_{N−j} − reference‖_∞ ≤ ε}, the sup taken over reference
/// points with the nearest trace point.
pub fn backward_hitting_time(trace: &BsdeSolveTrace, reference: BackwardReference<'_>, epsilon: f64) -> Result<HitOutcome> {
    let n = trace.horizon();
    let mut err = f64::INFINITY;
    match reference {
        BackwardReference::Stationary(r) => {
            let map = r.nearest_map(&trace.grid);
            for j in 0..=n {
                err = r.error(&map, trace.steps_back(j));
                if err <= epsilon {
                    return Ok(HitOutcome { tau: Some(j), iterations_run: j, final_error: err });
                }
            }
        }
        BackwardReference::TimeMatched(r) => {
            let t = n as f64 * trace.delta;
            let tr = r.horizon() as f64 * r.delta;
            if (t - tr).abs() > 1e-9 * t.max(tr).max(1.0) {
                return Err(invalid(format!("horizons differ: {t} vs reference {tr}")));
            }
            let map: Vec<usize> = (0..r.grid.len()).map(|i| trace.grid.nearest(&r.grid.point(i))).collect();
            for j in 0..=n {
                let kr = ((n - j) as f64 * trace.delta / r.delta).round() as usize;
                let rv = r.at(kr.min(r.horizon()));
                let yv = trace.steps_back(j);
                err = map.iter().zip(rv).map(|(&c, v)| (yv[c] - v).abs()).fold(0.0, f64::max);
                if err <= epsilon {
                    return Ok(HitOutcome { tau: Some(j), iterations_run: j, final_error: err });
                }
            }
        }
    }
    Ok(HitOutcome { tau: None, iterations_run: n, final_error: err })
}

/// Iterates backward from g until ‖Y − reference‖ ≤ ε or the budget runs out,
/// without storing the trace. Returns the outcome and the last iterate.
pub fn backward_until_hit(
    spec: &ControlledDiffusionSpec,
    grid: &Grid,
    delta: f64,
    terminal: &[f64],
    config: &BsdeConfig,
    reward: RunningReward<'_>,
    reference: &Reference,
    epsilon: f64,
    max_steps: usize,
) -> Result<(HitOutcome, Vec<f64>)> {
    let map = reference.nearest_map(grid);
    let mut y = terminal.to_vec();
    let mut err = reference.error(&map, &y);
    let mut j = 0;
    while err > epsilon {
        if j == max_steps {
            return Ok((HitOutcome { tau: None, iterations_run: j, final_error: err }, y));
        }
        y = backward_euler_step(spec, grid, delta, &y, config, max_steps - j, reward)?.y;
        j += 1;
        err = reference.error(&map, &y);
    }
    Ok((HitOutcome { tau: Some(j), iterations_run: j, final_error: err }, y))
}

/// δ* = ε²/(16L²γ₂(supp)²).
pub fn backward_mesh_for_tolerance(epsilon: f64, lipschitz: f64, gamma2_supp: f64) -> Result<f64> {
    if !(epsilon > 0.0 && lipschitz > 0.0 && gamma2_supp > 0.0) {
        return Err(invalid("backward mesh rule needs positive epsilon, L and gamma2"));
    }
    Ok(epsilon * epsilon / (16.0 * lipschitz * lipschitz * gamma2_supp * gamma2_supp))
}

/// N = ⌈T/δ⌉.
pub fn horizon_steps(delta: f64, time: f64) -> usize {
    (time / delta - 1e-9).ceil().max(1.0) as usize
}

/// sup over `fine` points of |g_coarse(nearest) − g_fine|.
pub fn terminal_error(coarse: &Grid, g_coarse: &[f64], fine: &Grid, g_fine: &[f64]) -> f64 {
    (0..fine.len()).map(|i| (g_coarse[coarse.nearest(&fine.point(i))] - g_fine[i]).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{discretize_kernel, DiffusionForm, DriftForm, RewardForm};
    use crate::mdp::bellman_optimality_op;
    use crate::stats::{mean, variance};

    fn spec(sigma: f64, actions: Vec<f64>, reward: RewardForm, rate: f64) -> ControlledDiffusionSpec {
        ControlledDiffusionSpec {
            dim: 1,
            drift: DriftForm::Constant,
            diffusion: DiffusionForm::Constant { sigma },
            actions: actions.into_iter().map(|u| vec![u]).collect(),
            reward,
            discount_rate: rate,
            lipschitz: 1.0,
        }
    }

    #[test]
    fn driver_trivial_cases() {
        let zero = spec(1.0, vec![0.0], RewardForm::Zero, 1.0);
        let inp = DriverInputs::new(vec![0.3], 2.0, vec![5.0], None).unwrap();
        assert_eq!(driver(&zero, &inp, 0.7).0, -1.4);
        let tent = RewardForm::Tent { center: vec![0.0], width: 1.0, height: 2.0 };
        let sp = spec(1.0, vec![-1.0, 1.0], tent.clone(), 1.0);
        let inp = DriverInputs::new(vec![0.5], 1.0, vec![0.0], Some(vec![vec![0.0]])).unwrap();
        assert!((driver(&sp, &inp, 0.5).0 - (tent.eval(&[0.5]) - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn driver_switches_where_affine_terms_cross() {
        // b·z with u0 = (2, −1), u1 = (−1, 1) and z = (z1, 0.3): the forms
        // cross where 3·z1 = 2·0.75.
        let sp = ControlledDiffusionSpec {
            dim: 2,
            actions: vec![vec![2.0, -1.0], vec![-1.0, 1.0]],
            ..spec(0.5, vec![0.0], RewardForm::Zero, 1.0)
        };
        let (u0, u1) = (&sp.actions[0], &sp.actions[1]);
        let z2 = 0.75;
        let cross = (u1[1] - u0[1]) * z2 / (u0[0] - u1[0]);
        let arg = |z1: f64| driver(&sp, &DriverInputs::new(vec![0.0, 0.0], 0.0, vec![z1, z2], None).unwrap(), 0.0);
        assert_eq!(arg(cross - 1e-9).1, 1);
        assert_eq!(arg(cross + 1e-9).1, 0);
        // exact tie goes to the lower index
        assert_eq!(arg(cross).1, 0);
        assert!((arg(cross + 0.1).0 - (2.0 * (cross + 0.1) - z2)).abs() < 1e-12);
    }

    #[test]
    fn driver_inputs_validation() {
        assert!(DriverInputs::new(vec![0.0, 0.0], 0.0, vec![0.0], None).is_err());
        let asym = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        assert!(DriverInputs::new(vec![0.0, 0.0], 0.0, vec![0.0, 0.0], Some(asym)).is_err());
    }

    #[test]
    fn zero_reward_zero_terminal_stays_zero() {
        let sp = spec(0.7, vec![-0.5, 0.5], RewardForm::Zero, 1.0);
        let g = Grid::interval(-1.0, 1.0, 0.1).unwrap();
        let tr = backward_solve(&sp, &g, 0.01, 20, &vec![0.0; g.len()], &BsdeConfig::new(64, 3), RunningReward::Spec)
            .unwrap();
        for st in &tr.states {
            assert!(st.y.iter().all(|&v| v == 0.0));
            assert!(st.z.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let sp = spec(0.7, vec![0.0], RewardForm::Zero, 1.0);
        let g = Grid::interval(-1.0, 1.0, 0.1).unwrap();
        let e = backward_euler_step(&sp, &g, 0.01, &vec![0.0; g.len()], &BsdeConfig::new(63, 0), 0, RunningReward::Spec);
        assert!(e.is_err());
    }

    #[test]
    fn non_finite_value_names_the_point() {
        let sp = spec(0.0, vec![0.0], RewardForm::Zero, 1.0);
        let g = Grid::interval(0.0, 1.0, 0.5).unwrap();
        let mut y = vec![0.0; g.len()];
        y[1] = f64::NAN;
        let e = backward_euler_step(&sp, &g, 0.01, &y, &BsdeConfig::new(64, 0), 0, RunningReward::Spec).unwrap_err();
        assert!(e.to_string().contains("grid point 1"), "{e}");
    }

    #[test]
    fn deterministic_step_matches_hand_values() {
        // Grid {0, 1, 2}, δ = 0.5, rate 0.4, σ = 0, drifts {0, +2}: the drifted
        // points are s and s + 1 (clamped at 2).
        let r = RewardForm::Tent { center: vec![2.0], width: 2.0, height: 1.0 }; // r = 0, 0.5, 1
        let sp = spec(0.0, vec![0.0, 2.0], r, 0.4);
        let g = Grid::interval(0.0, 2.0, 1.0).unwrap();
        let y_next = [1.0, 3.0, 2.0];
        let out = backward_euler_step(&sp, &g, 0.5, &y_next, &BsdeConfig::new(64, 0), 0, RunningReward::Spec).unwrap();
        // s=0: stay 1 + .5(0 − .4) = 0.8; move 3 + .5(0 − 1.2) = 2.4
        // s=1: stay 3 + .5(.5 − 1.2) = 2.65; move 2 + .5(.5 − .8) = 1.85
        // s=2: both 2 + .5(1 − .8) = 2.1
        let want = [2.4, 2.65, 2.1];
        for (a, b) in out.y.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{:?}", out.y);
        }
    }

    #[test]
    fn z_estimates_the_slope_of_a_linear_function() {
        let sp = spec(1.0, vec![0.0], RewardForm::Zero, 0.0);
        let g = Grid::interval(-1.0, 1.0, 0.002).unwrap();
        let c = 0.8;
        let y: Vec<f64> = (0..g.len()).map(|i| c * g.point(i)[0]).collect();
        let delta = 0.04;
        let m = 1 << 14;
        let out = backward_euler_step(&sp, &g, delta, &y, &BsdeConfig::new(m, 11), 0, RunningReward::Spec).unwrap();
        let s = g.nearest(&[0.0]);
        // Per-sample estimator Y·ΔW/δ has variance ≈ c²·(E[W⁴]/δ²) = 3c².
        let se = (3.0 * c * c / m as f64).sqrt();
        assert!((out.z[s][0] - c).abs() < 4.0 * se, "z = {}, se = {se}", out.z[s][0]);
    }

    #[test]
    fn y_argument_modes_agree() {
        let sp = spec(0.6, vec![-0.5, 0.5], RewardForm::Tent { center: vec![0.3], width: 0.5, height: 1.0 }, 2.0);
        let g = Grid::interval(-1.0, 1.0, 0.05).unwrap();
        let y: Vec<f64> = (0..g.len()).map(|i| (3.0 * g.point(i)[0]).sin()).collect();
        let a = backward_euler_step(&sp, &g, 0.01, &y, &BsdeConfig::new(128, 5), 0, RunningReward::Spec).unwrap();
        let cfg = BsdeConfig::new(128, 5).with_y_argument(YArgument::SampleAverage);
        let b = backward_euler_step(&sp, &g, 0.01, &y, &cfg, 0, RunningReward::Spec).unwrap();
        for (u, v) in a.y.iter().zip(&b.y) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_modes_agree_on_smooth_input() {
        let sp = spec(0.5, vec![0.0], RewardForm::Zero, 0.0);
        let g = Grid::interval(-2.0, 2.0, 0.02).unwrap();
        let y: Vec<f64> = (0..g.len()).map(|i| g.point(i)[0].powi(2)).collect();
        let delta = 0.01;
        let a = backward_euler_step(&sp, &g, delta, &y, &BsdeConfig::new(4096, 2), 0, RunningReward::Spec).unwrap();
        let cfg = BsdeConfig::new(4096, 2).with_gamma_mode(GammaMode::FiniteDifference);
        let b = backward_euler_step(&sp, &g, delta, &y, &cfg, 0, RunningReward::Spec).unwrap();
        let s = g.nearest(&[0.5]);
        // Both approximate x² + σ²δ.
        let want = 0.25 + 0.25 * delta;
        assert!((b.y[s] - want).abs() < 1e-9);
        assert!((a.y[s] - want).abs() < 0.01, "{} vs {want}", a.y[s]);
    }

    #[test]
    fn terminal_is_anchored_and_monotone_in_g() {
        let sp = spec(0.5, vec![-0.5, 0.5], RewardForm::Tent { center: vec![0.0], width: 0.5, height: 1.0 }, 1.0);
        let g = Grid::interval(-1.0, 1.0, 0.05).unwrap();
        let g1: Vec<f64> = (0..g.len()).map(|i| (g.point(i)[0] * 2.0).cos()).collect();
        let g2: Vec<f64> = g1.iter().enumerate().map(|(i, v)| v + 0.1 * (i % 3) as f64).collect();
        let cfg = BsdeConfig::new(64, 9);
        let t1 = backward_solve(&sp, &g, 0.01, 15, &g1, &cfg, RunningReward::Spec).unwrap();
        let t2 = backward_solve(&sp, &g, 0.01, 15, &g2, &cfg, RunningReward::Spec).unwrap();
        assert_eq!(t1.at(15), &g1[..]);
        assert_eq!(t1.steps_back(0).as_ptr(), t1.at(15).as_ptr());
        for (a, b) in t1.at(0).iter().zip(t2.at(0)) {
            assert!(*a <= b + 1e-9);
        }
    }

    #[test]
    fn deterministic_solve_matches_value_iteration() {
        // σ = 0 and grid-aligned drifts: the chain and the backward operator
        // coincide, with per-step discount 1 − rate·δ and reward r·δ.
        let r = RewardForm::Tent { center: vec![1.0], width: 0.05, height: 1.0 };
        let sp = spec(0.0, vec![-10.0, 0.0, 10.0], r, 0.5);
        let g = Grid::interval(0.0, 1.0, 0.1).unwrap();
        let delta = 0.01;
        let mdp = discretize_kernel(&sp, &g, delta).unwrap();
        let mut terminal = vec![0.0; g.len()];
        *terminal.last_mut().unwrap() = 1.0;
        let tr = backward_solve(&sp, &g, delta, 12, &terminal, &BsdeConfig::new(64, 1), RunningReward::Spec).unwrap();
        let mut v = terminal.clone();
        for j in 1..=12 {
            v = bellman_optimality_op(&mdp, &v).unwrap();
            for (a, b) in v.iter().zip(tr.steps_back(j)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // the value reaches the far end after 10 steps, not before
        assert_eq!(tr.steps_back(9)[0], 0.0);
        assert!(tr.steps_back(10)[0] > 0.0);
    }

    #[test]
    fn hitting_time_zero_when_starting_at_reference() {
        let sp = spec(0.5, vec![-0.5, 0.5], RewardForm::Tent { center: vec![0.0], width: 0.5, height: 1.0 }, 1.0);
        let g = Grid::interval(-1.0, 1.0, 0.05).unwrap();
        let reference = crate::diffusion::continuous_reference(&sp, &g.refine(4), 0.0005).unwrap();
        let terminal = reference.sample_on(&g);
        let tr = backward_solve(&sp, &g, 0.01, 3, &terminal, &BsdeConfig::new(64, 1), RunningReward::Spec).unwrap();
        let eps = 2.0 * sp.lipschitz * g.h;
        let out = backward_hitting_time(&tr, BackwardReference::Stationary(&reference), eps).unwrap();
        assert_eq!(out.tau, Some(0));
        let (hit, last) = backward_until_hit(
            &sp, &g, 0.01, &terminal, &BsdeConfig::new(64, 1), RunningReward::Spec, &reference, eps, 3,
        )
        .unwrap();
        assert_eq!(hit.tau, Some(0));
        assert_eq!(last, terminal);
    }

    #[test]
    fn time_matched_reference_checks_horizons() {
        let sp = spec(0.5, vec![0.0], RewardForm::Zero, 1.0);
        let g = Grid::interval(-1.0, 1.0, 0.1).unwrap();
        let cfg = BsdeConfig::new(64, 1);
        let a = backward_solve(&sp, &g, 0.02, 10, &vec![1.0; g.len()], &cfg, RunningReward::Spec).unwrap();
        let b = backward_solve(&sp, &g.refine(2), 0.01, 20, &vec![1.0; g.refine(2).len()], &cfg, RunningReward::Spec)
            .unwrap();
        let c = backward_solve(&sp, &g.refine(2), 0.01, 15, &vec![1.0; g.refine(2).len()], &cfg, RunningReward::Spec)
            .unwrap();
        // Constant terminal, zero reward: Y decays identically on both meshes
        // up to the time-step mismatch.
        let out = backward_hitting_time(&a, BackwardReference::TimeMatched(&b), 0.01).unwrap();
        assert_eq!(out.tau, Some(0));
        assert!(backward_hitting_time(&a, BackwardReference::TimeMatched(&c), 0.01).is_err());
    }

    #[test]
    fn mesh_rule_and_horizon() {
        assert!((backward_mesh_for_tolerance(0.4, 1.0, 1.0).unwrap() - 0.01).abs() < 1e-15);
        let a = backward_mesh_for_tolerance(0.4, 1.0, 1.0).unwrap();
        let b = backward_mesh_for_tolerance(0.4, 1.0, 2.0).unwrap();
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!(backward_mesh_for_tolerance(0.0, 1.0, 1.0).is_err());
        assert_eq!(horizon_steps(0.01, 1.0), 100);
        assert_eq!(horizon_steps(0.3, 1.0), 4);
    }

    #[test]
    fn sample_noise_is_shared_across_actions() {
        // With σ > 0 and zero drift on every action, all actions see the same
        // samples, so Y is exactly the single-action result.
        let one = spec(0.8, vec![0.0], RewardForm::Zero, 1.0);
        let three = spec(0.8, vec![0.0, 0.0, 0.0], RewardForm::Zero, 1.0);
        let g = Grid::interval(-1.0, 1.0, 0.05).unwrap();
        let y: Vec<f64> = (0..g.len()).map(|i| g.point(i)[0].powi(3)).collect();
        let cfg = BsdeConfig::new(64, 4);
        let a = backward_euler_step(&one, &g, 0.01, &y, &cfg, 2, RunningReward::Spec).unwrap();
        let b = backward_euler_step(&three, &g, 0.01, &y, &cfg, 2, RunningReward::Spec).unwrap();
        assert_eq!(a, b);
        let spread: Vec<f64> = a.y.clone();
        assert!(variance(&spread) > 0.0 && mean(&spread).is_finite());
    }
}
