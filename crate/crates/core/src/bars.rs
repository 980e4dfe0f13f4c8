//! The BARS online loop: sample a correct terminal state, grow the reward
//! support, estimate its γ₂, clip the reward scale, solve backward to the
//! round's tolerance, act greedily and account dynamic regret.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::mdp::{bellman_optimality_op, greedy_policy, policy_evaluation, policy_iteration, sup_norm_diff, Policy, TabularMdp};
use crate::metric::{build_cover_tree, gamma2_upper, CoverTree, FiniteMetricSpace, MetricKind};
use crate::rng::stream;
use crate::stats::fit_line;

/// Finite categorical prior over correct terminal states.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPrior {
    pub states: Vec<usize>,
    pub weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CategoricalPrior {
    pub fn new(states: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() || states.len() != weights.len() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("prior needs one nonnegative weight per state"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("prior weights sum to zero"));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self { states, weights, cumulative })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.states.len() - 1);
        self.states[i]
    }
}

#[derive(Debug, Clone)]
pub struct BarsConfig {
    /// Transitions, discount and the unscaled (goal) rewards; needs state points.
    pub mdp: TabularMdp,
    /// r̃ per state; only entries on prior states are used.
    pub base_reward: Vec<f64>,
    /// a*(s) for every prior state.
    pub optimal_action: Vec<Option<usize>>,
    pub prior: CategoricalPrior,
    /// μ₀ for J_t(π) = Σ μ₀(s)V^π(s); a point mass conditions on s₀.
    pub initial_distribution: Vec<f64>,
    pub gap: f64,
    pub confidence: f64,
    pub lipschitz: f64,
    pub alpha: f64,
    pub subgaussian: f64,
    /// Mesh; also the floor for γ̂.
    pub mesh: f64,
    pub rounds: usize,
    /// J* estimate for the first round's λ_max.
    pub j_star_prior: f64,
    pub max_backward_steps: usize,
}

impl BarsConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.mdp.n_states();
        if self.mdp.state_points().is_none() {
            return Err(invalid("BARS needs an MDP with state points"));
        }
        if self.base_reward.len() != n || self.optimal_action.len() != n {
            return Err(invalid("base reward and optimal-action table must cover every state"));
        }
        let mass: f64 = self.initial_distribution.iter().sum();
        if self.initial_distribution.len() != n
            || self.initial_distribution.iter().any(|w| !(*w >= 0.0))
            || (mass - 1.0).abs() > 1e-9
        {
            return Err(invalid("initial distribution must be a probability vector over the states"));
        }
        for &s in &self.prior.states {
            if s >= n {
                return Err(invalid(format!("prior state {s} out of range")));
            }
            match self.optimal_action[s] {
                Some(a) if a < self.mdp.n_actions() => {}
                _ => return Err(invalid(format!("no optimal action for prior state {s}"))),
            }
            if !(self.base_reward[s] > 0.0) {
                return Err(invalid(format!("base reward must be positive on prior state {s}")));
            }
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid("confidence p must lie in (0,1)"));
        }
        if !(self.alpha > 0.0 && self.subgaussian > 0.0 && self.mesh > 0.0 && self.gap > 0.0) {
            return Err(invalid("alpha, c, mesh and gap must be positive"));
        }
        if self.rounds == 0 {
            return Err(invalid("need at least one round"));
        }
        Ok(())
    }

    /// (r̃_min, r̃_max) over the prior's states.
    pub fn base_range(&self) -> (f64, f64) {
        self.prior.states.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &s| {
            (lo.min(self.base_reward[s]), hi.max(self.base_reward[s]))
        })
    }
}

/// λ_min = sqrt(2c ln(2/p))/r̃_min, λ_max = (1−γ)J*/r̃_max.
pub fn lambda_bounds(config: &BarsConfig, j_star_estimate: f64) -> Result<(f64, f64)> {
    if !(j_star_estimate > 0.0) {
        return Err(invalid(format!("J* estimate must be positive, got {j_star_estimate}")));
    }
    let p = config.confidence;
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("confidence p must lie in (0,1)"));
    }
    let (rmin, rmax) = config.base_range();
    let lo = (2.0 * config.subgaussian * (2.0 / p).ln()).sqrt() / rmin;
    let hi = (1.0 - config.mdp.discount()) * j_star_estimate / rmax;
    if lo >= hi {
        return Err(Error::Infeasible(format!("lambda_min = {lo} is not below lambda_max = {hi}")));
    }
    Ok((lo, hi))
}

/// clip(x, [lo, hi)): values at or above hi map to the largest double below it.
pub fn clip_half_open(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x >= hi {
        hi.next_down()
    } else {
        x
    }
}

/// Running γ₂ estimate over a growing support.
#[derive(Debug, Clone)]
pub struct OnlineGamma2 {
    /// Support in arrival order (grid state indices).
    pub support: Vec<usize>,
    pub tree: Option<CoverTree>,
    pub value: f64,
}

/// Rebuilds the cover tree over the support in arrival order and keeps the
/// running maximum, since γ₂ cannot shrink when points are added. A
/// singleton support (γ₂ = 0) reports `floor`.
pub fn estimate_gamma2_online(
    points: &FiniteMetricSpace,
    support: &[usize],
    previous: Option<&OnlineGamma2>,
    floor: f64,
) -> Result<OnlineGamma2> {
    if support.is_empty() {
        return Err(invalid("support is empty"));
    }
    if let Some(prev) = previous {
        if prev.support.len() == support.len() {
            return Ok(prev.clone());
        }
    }
    let sub = points.subspace(support);
    let tree = build_cover_tree(&sub)?;
    let raw = gamma2_upper(&tree);
    let prev = previous.map_or(0.0, |p| p.value);
    let value = raw.max(prev).max(floor);
    Ok(OnlineGamma2 { support: support.to_vec(), tree: Some(tree), value })
}

#[derive(Debug, Clone)]
pub struct BarsState {
    pub support: Vec<usize>,
    pub gamma2: Option<OnlineGamma2>,
    pub j_star: Option<f64>,
    pub cumulative_regret: f64,
}

impl BarsState {
    pub fn new() -> Self {
        Self { support: Vec::new(), gamma2: None, j_star: None, cumulative_regret: 0.0 }
    }
}

impl Default for BarsState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarsRoundRecord {
    pub t: usize,
    pub sampled_state: usize,
    pub support_size: usize,
    pub gamma2_hat: f64,
    pub lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// None when the backward budget ran out (the last iterate is used).
    pub tau: Option<usize>,
    pub epsilon: f64,
    pub backward_error: f64,
    pub greedy_action: usize,
    pub j_star: f64,
    pub j_policy: f64,
    pub regret_raw: f64,
    /// max(raw, 0)
    pub regret: f64,
    pub cumulative_regret: f64,
    /// Gap certificate at Δ = λ_t·Δ₀ on the support.
    pub gap_holds: bool,
}

/// r_t = base rewards + λ·r̃(s) on (s, a*(s)) for s in the support.
pub fn round_rewards(config: &BarsConfig, support: &[usize], lambda: f64) -> Vec<Vec<f64>> {
    let mdp = &config.mdp;
    let mut r: Vec<Vec<f64>> =
        (0..mdp.n_states()).map(|s| (0..mdp.n_actions()).map(|a| mdp.reward(s, a)).collect()).collect();
    for &s in support {
        let a = config.optimal_action[s].expect("validated");
        r[s][a] += lambda * config.base_reward[s];
    }
    r
}

/// r(s,a*) − r(s,a) > Δ for every support state and every action whose
/// embedding lies farther than ε from a*.
fn gap_on_support(config: &BarsConfig, rewards: &[Vec<f64>], support: &[usize], delta: f64, epsilon: f64) -> bool {
    let n_act = config.mdp.n_actions();
    support.iter().all(|&s| {
        let star = config.optimal_action[s].expect("validated");
        (0..n_act).all(|a| {
            let d = match config.mdp.action_points() {
                Some(pts) => MetricKind::Euclidean.eval(&pts[a], &pts[star]),
                None => (a as f64 - star as f64).abs(),
            };
            d <= epsilon || rewards[s][star] - rewards[s][a] > delta
        })
    })
}

/// One round at time t ≥ 1, drawing x_t from `rng`.
pub fn bars_round<R: Rng>(state: &mut BarsState, config: &BarsConfig, t: usize, rng: &mut R) -> Result<BarsRoundRecord> {
    if t == 0 {
        return Err(invalid("rounds are numbered from 1"));
    }
    let x = config.prior.sample(rng);
    if !state.support.contains(&x) {
        state.support.push(x);
    }
    let points = config.mdp.state_points().expect("validated");
    let g2 = estimate_gamma2_online(points, &state.support, state.gamma2.as_ref(), config.mesh)?;
    let gamma2_hat = g2.value;
    state.gamma2 = Some(g2);

    let j_est = state.j_star.unwrap_or(config.j_star_prior);
    let (lambda_min, lambda_max) = lambda_bounds(config, j_est)?;
    let lambda = clip_half_open(config.alpha / gamma2_hat, lambda_min, lambda_max);

    let rewards = round_rewards(config, &state.support, lambda);
    let mdp = config.mdp.with_reward(rewards.clone())?;
    let opt = policy_iteration(&mdp)?;
    let epsilon = 1.0 / t as f64;

    let mut y = vec![0.0; mdp.n_states()];
    for &s in &state.support {
        y[s] = lambda * config.base_reward[s];
    }
    let mut err = sup_norm_diff(&y, &opt.values);
    let mut k = 0;
    while err > epsilon && k < config.max_backward_steps {
        y = bellman_optimality_op(&mdp, &y)?;
        k += 1;
        err = sup_norm_diff(&y, &opt.values);
    }
    let tau = (err <= epsilon).then_some(k);

    let policy = greedy_policy(&mdp, &y)?;
    let v_pi = policy_evaluation(&mdp, &Policy::Deterministic(policy.clone()))?;
    let mu = &config.initial_distribution;
    let j_star: f64 = mu.iter().zip(&opt.values).map(|(m, v)| m * v).sum();
    let j_policy: f64 = mu.iter().zip(&v_pi).map(|(m, v)| m * v).sum();
    let regret_raw = j_star - j_policy;
    let regret = regret_raw.max(0.0);
    state.cumulative_regret += regret;
    state.j_star = Some(j_star);

    let gap_holds = gap_on_support(config, &rewards, &state.support, lambda * config.gap, epsilon);
    Ok(BarsRoundRecord {
        t,
        sampled_state: x,
        support_size: state.support.len(),
        gamma2_hat,
        lambda,
        lambda_min,
        lambda_max,
        tau,
        epsilon,
        backward_error: err,
        greedy_action: policy[x],
        j_star,
        j_policy,
        regret_raw,
        regret,
        cumulative_regret: state.cumulative_regret,
        gap_holds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarsSummary {
    pub total_regret: f64,
    /// Fit of R_t against ln t over the back half of the rounds, non-hit
    /// rounds left out.
    pub log_slope: f64,
    pub log_intercept: f64,
    pub log_r_squared: f64,
    /// Envelope constant: max of τ_t/(γ̂_t² t²) over the first quarter.
    pub envelope_c: f64,
    /// Later rounds whose τ_t exceeds the envelope.
    pub envelope_exceptions: usize,
    pub envelope_checked: usize,
    pub non_hits: usize,
    pub gap_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarsRun {
    pub rounds: Vec<BarsRoundRecord>,
    pub summary: BarsSummary,
}

pub fn bars_run(config: &BarsConfig, seed: u64) -> Result<BarsRun> {
    config.validate()?;
    let mut rng = stream(seed, "bars-prior", 0);
    let mut state = BarsState::new();
    let mut rounds = Vec::with_capacity(config.rounds);
    for t in 1..=config.rounds {
        rounds.push(bars_round(&mut state, config, t, &mut rng)?);
    }
    let summary = summarize(&rounds);
    Ok(BarsRun { rounds, summary })
}

pub fn summarize(rounds: &[BarsRoundRecord]) -> BarsSummary {
    let n = rounds.len();
    let back: Vec<&BarsRoundRecord> = rounds[n / 2..].iter().filter(|r| r.tau.is_some()).collect();
    let xs: Vec<f64> = back.iter().map(|r| (r.t as f64).ln()).collect();
    let ys: Vec<f64> = back.iter().map(|r| r.cumulative_regret).collect();
    let fit = fit_line(&xs, &ys);
    let envelope = |r: &BarsRoundRecord| r.gamma2_hat * r.gamma2_hat * (r.t * r.t) as f64;
    let calib = (n / 4).max(1);
    let envelope_c = rounds[..calib]
        .iter()
        .filter_map(|r| r.tau.map(|k| k as f64 / envelope(r)))
        .fold(0.0, f64::max);
    let later: Vec<&BarsRoundRecord> = rounds[calib..].iter().filter(|r| r.tau.is_some()).collect();
    let envelope_exceptions =
        later.iter().filter(|r| r.tau.expect("filtered") as f64 > envelope_c * envelope(r)).count();
    BarsSummary {
        total_regret: rounds.last().map_or(0.0, |r| r.cumulative_regret),
        log_slope: fit.map_or(f64::NAN, |f| f.slope),
        log_intercept: fit.map_or(f64::NAN, |f| f.intercept),
        log_r_squared: fit.map_or(f64::NAN, |f| f.r_squared),
        envelope_c,
        envelope_exceptions,
        envelope_checked: later.len(),
        non_hits: rounds.iter().filter(|r| r.tau.is_none()).count(),
        gap_failures: rounds.iter().filter(|r| !r.gap_holds).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bars_ladder, ladder_mdp, TOWARD};
    use crate::metric::gamma2_bruteforce;

    fn small(prior: &[usize], base: f64) -> BarsConfig {
        let n = 8;
        let mut base_reward = vec![0.0; n];
        let mut optimal_action = vec![None; n];
        for &s in prior {
            base_reward[s] = base;
            optimal_action[s] = Some(TOWARD);
        }
        BarsConfig {
            mdp: ladder_mdp(n, 0.9, 1.0, 0.0).unwrap(),
            base_reward,
            optimal_action,
            prior: CategoricalPrior::new(prior.to_vec(), vec![1.0; prior.len()]).unwrap(),
            initial_distribution: vec![1.0 / n as f64; n],
            gap: 0.5,
            confidence: 0.1,
            lipschitz: 1.0,
            alpha: 0.1,
            subgaussian: 1e-4,
            mesh: 1.0 / 7.0,
            rounds: 4,
            j_star_prior: 1.0,
            max_backward_steps: 1000,
        }
    }

    #[test]
    fn lambda_bound_values() {
        let mut cfg = small(&[6], 1.0);
        cfg.subgaussian = 0.5;
        cfg.confidence = 2.0 / std::f64::consts::E;
        let (lo, hi) = lambda_bounds(&cfg, 20.0).unwrap();
        assert!((lo - 1.0).abs() < 1e-12);
        assert!((hi - 2.0).abs() < 1e-12);
        cfg.subgaussian = 1e-6;
        let (_, hi) = lambda_bounds(&cfg, 10.0).unwrap();
        assert!((hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_bounds_scale_inversely_with_base_reward() {
        let (lo1, hi1) = lambda_bounds(&small(&[5, 6], 1.0), 5.0).unwrap();
        let (lo2, hi2) = lambda_bounds(&small(&[5, 6], 2.0), 5.0).unwrap();
        assert!((lo1 / lo2 - 2.0).abs() < 1e-12);
        assert!((hi1 / hi2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_bounds_report_both_values() {
        let mut cfg = small(&[6], 1.0);
        cfg.subgaussian = 10.0;
        match lambda_bounds(&cfg, 1.0) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("lambda_min") && msg.contains("lambda_max"), "{msg}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert!(lambda_bounds(&cfg, 0.0).is_err());
    }

    #[test]
    fn clip_is_half_open() {
        assert_eq!(clip_half_open(0.5, 1.0, 2.0), 1.0);
        assert_eq!(clip_half_open(1.5, 1.0, 2.0), 1.5);
        let top = clip_half_open(2.0, 1.0, 2.0);
        assert!(top < 2.0 && top > 2.0 - 1e-15);
    }

    #[test]
    fn clip_saturates_at_both_ends() {
        let mut cfg = small(&[6], 1.0);
        cfg.alpha = 1e9;
        let mut rng = stream(0, "t", 0);
        let r = bars_round(&mut BarsState::new(), &cfg, 1, &mut rng).unwrap();
        assert_eq!(r.lambda, r.lambda_max.next_down());
        cfg.alpha = 1e-12;
        let r = bars_round(&mut BarsState::new(), &cfg, 1, &mut rng).unwrap();
        assert_eq!(r.lambda, r.lambda_min);
    }

    #[test]
    fn singleton_support_uses_the_floor() {
        let pts = FiniteMetricSpace::line(&[0.0, 0.5, 1.0]);
        let g = estimate_gamma2_online(&pts, &[1], None, 0.125).unwrap();
        assert_eq!(g.value, 0.125);
        assert!(estimate_gamma2_online(&pts, &[], None, 0.125).is_err());
    }

    #[test]
    fn two_point_estimate_sits_in_the_brute_bracket() {
        let pts = FiniteMetricSpace::line(&[0.0, 0.3, 1.7]);
        let g = estimate_gamma2_online(&pts, &[0, 2], None, 1e-3).unwrap();
        let brute = gamma2_bruteforce(&pts.subspace(&[0, 2])).unwrap();
        assert!(brute <= g.value + 1e-12 && g.value <= 2.0 * brute, "{} vs {brute}", g.value);
    }

    #[test]
    fn estimate_is_nondecreasing_over_insertions() {
        let xs: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let pts = FiniteMetricSpace::line(&xs);
        let mut rng = stream(4, "order", 0);
        let mut support = Vec::new();
        let mut prev: Option<OnlineGamma2> = None;
        while support.len() < 32 {
            let s = rng.gen_range(0..64);
            if support.contains(&s) {
                continue;
            }
            support.push(s);
            let g = estimate_gamma2_online(&pts, &support, prev.as_ref(), 1.0 / 63.0).unwrap();
            if let Some(p) = &prev {
                assert!(g.value >= p.value);
            }
            prev = Some(g);
        }
    }

    #[test]
    fn repeated_state_leaves_support_and_estimate_alone() {
        let cfg = small(&[6], 1.0);
        let mut state = BarsState::new();
        let mut rng = stream(0, "t", 0);
        let a = bars_round(&mut state, &cfg, 1, &mut rng).unwrap();
        let b = bars_round(&mut state, &cfg, 2, &mut rng).unwrap();
        assert_eq!((a.sampled_state, b.sampled_state), (6, 6));
        assert_eq!(a.support_size, b.support_size);
        assert_eq!(a.gamma2_hat, b.gamma2_hat);
    }

    #[test]
    fn first_round_at_the_goal_neighbour_acts_correctly() {
        let cfg = small(&[6], 1.0);
        let r = bars_round(&mut BarsState::new(), &cfg, 1, &mut stream(0, "t", 0)).unwrap();
        assert_eq!(r.greedy_action, TOWARD);
        assert!(r.gap_holds);
        assert!(r.regret_raw <= 2.0 * r.epsilon / (1.0 - 0.9));
    }

    #[test]
    fn single_round_run_totals_its_regret() {
        let mut cfg = small(&[4, 5, 6], 1.0);
        cfg.rounds = 1;
        let run = bars_run(&cfg, 3).unwrap();
        assert_eq!(run.rounds.len(), 1);
        assert_eq!(run.summary.total_regret, run.rounds[0].regret);
    }

    #[test]
    fn runs_are_deterministic_and_well_formed() {
        let cfg = bars_ladder(48).unwrap();
        let a = bars_run(&cfg, 11).unwrap();
        assert_eq!(a, bars_run(&cfg, 11).unwrap());
        let mut prev = 0;
        for r in &a.rounds {
            assert!(r.lambda_min <= r.lambda && r.lambda < r.lambda_max);
            assert!(r.support_size >= prev && r.support_size <= r.t);
            prev = r.support_size;
            assert!(r.regret >= 0.0);
        }
        assert!(a.rounds.windows(2).all(|w| w[1].cumulative_regret >= w[0].cumulative_regret));
    }
}
