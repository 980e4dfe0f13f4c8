//! Tabular MDPs and their Bellman machinery.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::metric::{FiniteMetricSpace, MetricKind};

pub const ROW_SUM_TOL: f64 = 1e-12;

/// Sparse transition row: (next state, probability).
pub type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// rows[s * n_actions + a]
    rows: Vec<Row>,
    /// reward[s * n_actions + a]
    reward: Vec<f64>,
    discount: f64,
    state_points: Option<FiniteMetricSpace>,
    action_points: Option<Vec<Vec<f64>>>,
}

impl TabularMdp {
    /// Build from sparse rows indexed `[s][a]` and rewards `[s][a]`.
    pub fn new(rows: Vec<Vec<Row>>, reward: Vec<Vec<f64>>, discount: f64) -> Result<Self> {
        let n_states = rows.len();
        if n_states == 0 {
            return Err(invalid("MDP needs at least one state"));
        }
        let n_actions = rows[0].len();
        if n_actions == 0 {
            return Err(invalid("MDP needs at least one action"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(invalid(format!("discount must lie in [0,1), got {discount}")));
        }
        if reward.len() != n_states {
            return Err(invalid("reward table has the wrong number of states"));
        }
        let mut flat_rows = Vec::with_capacity(n_states * n_actions);
        let mut flat_reward = Vec::with_capacity(n_states * n_actions);
        for (s, (acts, rs)) in rows.into_iter().zip(reward).enumerate() {
            if acts.len() != n_actions || rs.len() != n_actions {
                return Err(invalid(format!("state {s} has the wrong number of actions")));
            }
            for (a, (row, r)) in acts.into_iter().zip(rs).enumerate() {
                if !(r >= 0.0) || !r.is_finite() {
                    return Err(invalid(format!("reward r({s},{a}) = {r} must be finite and nonnegative")));
                }
                let mut sum = 0.0;
                for &(t, p) in &row {
                    if t >= n_states || !(p >= 0.0) {
                        return Err(invalid(format!("bad transition ({s},{a}) -> {t} with p = {p}")));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(invalid(format!("kernel row ({s},{a}) sums to {sum}")));
                }
                flat_rows.push(row);
                flat_reward.push(r);
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            rows: flat_rows,
            reward: flat_reward,
            discount,
            state_points: None,
            action_points: None,
        })
    }

    /// Build from a dense kernel `P[s][a][s']`.
    pub fn from_dense(kernel: &[Vec<Vec<f64>>], reward: Vec<Vec<f64>>, discount: f64) -> Result<Self> {
        let rows = kernel
            .iter()
            .map(|acts| {
                acts.iter()
                    .map(|p| p.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(t, &x)| (t, x)).collect())
                    .collect()
            })
            .collect();
        Self::new(rows, reward, discount)
    }

    pub fn with_state_points(mut self, points: FiniteMetricSpace) -> Result<Self> {
        if points.len() != self.n_states {
            return Err(invalid("state embedding has the wrong number of points"));
        }
        self.state_points = Some(points);
        Ok(self)
    }

    pub fn with_action_points(mut self, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != self.n_actions {
            return Err(invalid("action embedding has the wrong number of points"));
        }
        self.action_points = Some(points);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize, a: usize) -> &Row {
        &self.rows[s * self.n_actions + a]
    }

    pub fn state_points(&self) -> Option<&FiniteMetricSpace> {
        self.state_points.as_ref()
    }

    pub fn action_points(&self) -> Option<&[Vec<f64>]> {
        self.action_points.as_deref()
    }

    pub fn r_max(&self) -> f64 {
        self.reward.iter().copied().fold(0.0, f64::max)
    }

    /// Replace the reward table, keeping the kernel.
    pub fn with_reward(&self, reward: Vec<Vec<f64>>) -> Result<Self> {
        if reward.len() != self.n_states || reward.iter().any(|r| r.len() != self.n_actions) {
            return Err(invalid("reward table shape does not match the MDP"));
        }
        let flat: Vec<f64> = reward.into_iter().flatten().collect();
        if flat.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(invalid("rewards must be finite and nonnegative"));
        }
        Ok(Self { reward: flat, ..self.clone() })
    }

    /// Q(s,a) = r(s,a) + γ Σ P(s'|s,a) V(s').
    #[inline]
    pub fn q_value(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let cont: f64 = self.row(s, a).iter().map(|&(t, p)| p * v[t]).sum();
        self.reward(s, a) + self.discount * cont
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_states {
            return Err(invalid(format!("value vector has length {}, expected {}", v.len(), self.n_states)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Deterministic(Vec<usize>),
    Stochastic(Vec<Vec<f64>>),
}

impl Policy {
    fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        match self {
            Policy::Deterministic(acts) => {
                if acts.len() != mdp.n_states {
                    return Err(invalid("policy length does not match the state count"));
                }
                if let Some((s, a)) = acts.iter().enumerate().find(|(_, &a)| a >= mdp.n_actions) {
                    return Err(invalid(format!("policy picks action {a} at state {s}")));
                }
            }
            Policy::Stochastic(dists) => {
                if dists.len() != mdp.n_states {
                    return Err(invalid("policy length does not match the state count"));
                }
                for (s, d) in dists.iter().enumerate() {
                    let sum: f64 = d.iter().sum();
                    if d.len() != mdp.n_actions || d.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(invalid(format!("invalid action distribution at state {s}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn weights(&self, s: usize) -> Vec<(usize, f64)> {
        match self {
            Policy::Deterministic(acts) => vec![(acts[s], 1.0)],
            Policy::Stochastic(d) => d[s].iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect(),
        }
    }
}

/// T^π[V](s) = r(s,π(s)) + γ Σ P(s'|s,π(s)) V(s').
pub fn bellman_policy_op(mdp: &TabularMdp, policy: &Policy, v: &[f64]) -> Result<Vec<f64>> {
    mdp.check_len(v)?;
    policy.validate(mdp)?;
    Ok((0..mdp.n_states)
        .map(|s| policy.weights(s).into_iter().map(|(a, w)| w * mdp.q_value(s, a, v)).sum())
        .collect())
}

/// T[V](s) = max_a Q(s,a); the max scans actions in index order.
pub fn bellman_optimality_op(mdp: &TabularMdp, v: &[f64]) -> Result<Vec<f64>> {
    mdp.check_len(v)?;
    Ok((0..mdp.n_states).map(|s| best_action(mdp, s, v).1).collect())
}

/// Lowest-index argmax of Q(s,·) and its value.
fn best_action(mdp: &TabularMdp, s: usize, v: &[f64]) -> (usize, f64) {
    let mut best = (0, mdp.q_value(s, 0, v));
    for a in 1..mdp.n_actions {
        let q = mdp.q_value(s, a, v);
        if q > best.1 {
            best = (a, q);
        }
    }
    best
}

pub fn greedy_policy(mdp: &TabularMdp, v: &[f64]) -> Result<Vec<usize>> {
    mdp.check_len(v)?;
    Ok((0..mdp.n_states).map(|s| best_action(mdp, s, v).0).collect())
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct ValueIterationOutcome {
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Bellman residual ‖T[V_k] − V_k‖ for every sweep, starting at k = 0.
    pub residual_trace: Vec<f64>,
    /// V_0, V_1, ... when history recording is on.
    pub history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ValueIteration {
    tolerance: f64,
    max_sweeps: Option<usize>,
    record_history: bool,
}

impl ValueIteration {
    pub fn new(tolerance: f64) -> Self {
        Self { tolerance, max_sweeps: None, record_history: false }
    }

    pub fn with_max_sweeps(mut self, n: usize) -> Self {
        self.max_sweeps = Some(n);
        self
    }

    pub fn with_history(mut self, on: bool) -> Self {
        self.record_history = on;
        self
    }

    pub fn run(&self, mdp: &TabularMdp, v0: &[f64]) -> Result<ValueIterationOutcome> {
        if !(self.tolerance > 0.0) {
            return Err(invalid(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        mdp.check_len(v0)?;
        let mut v = v0.to_vec();
        let mut tv = bellman_optimality_op(mdp, &v)?;
        let first = sup_norm_diff(&tv, &v);
        let max_sweeps = self
            .max_sweeps
            .unwrap_or_else(|| default_max_sweeps(mdp.discount, self.tolerance, mdp.r_max().max(first * (1.0 - mdp.discount))));
        let mut trace = vec![first];
        let mut history = Vec::new();
        let mut k = 0;
        loop {
            if self.record_history {
                history.push(v.clone());
            }
            if trace[k] <= self.tolerance {
                return Ok(ValueIterationOutcome { values: v, iterations: k, residual_trace: trace, history });
            }
            if k >= max_sweeps {
                return Err(Error::NonConvergence { max_sweeps, last_residual: trace[k], trace });
            }
            v = tv;
            tv = bellman_optimality_op(mdp, &v)?;
            trace.push(sup_norm_diff(&tv, &v));
            k += 1;
        }
    }
}

pub fn value_iteration(mdp: &TabularMdp, v0: &[f64], tolerance: f64) -> Result<ValueIterationOutcome> {
    ValueIteration::new(tolerance).run(mdp, v0)
}

/// ceil(log(tol·(1−γ)/R_max)/log γ) + 8.
pub fn default_max_sweeps(gamma: f64, tolerance: f64, r_max: f64) -> usize {
    if gamma == 0.0 || r_max <= 0.0 {
        return 9;
    }
    let k = ((tolerance * (1.0 - gamma) / r_max).ln() / gamma.ln()).ceil();
    k.max(0.0) as usize + 8
}

/// Exact V^π from (I − γP^π)V = r^π. Deterministic transitions under a
/// deterministic policy are solved in O(n) along the successor graph.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &Policy) -> Result<Vec<f64>> {
    policy.validate(mdp)?;
    if let Policy::Deterministic(acts) = policy {
        if (0..mdp.n_states).all(|s| mdp.row(s, acts[s]).len() == 1) {
            return Ok(functional_graph_values(mdp, acts));
        }
    }
    dense_policy_evaluation(mdp, policy)
}

fn dense_policy_evaluation(mdp: &TabularMdp, policy: &Policy) -> Result<Vec<f64>> {
    let n = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (act, w) in policy.weights(s) {
            b[s] += w * mdp.reward(s, act);
            for &(t, p) in mdp.row(s, act) {
                a[(s, t)] -= mdp.discount * w * p;
            }
        }
    }
    let x = a.lu().solve(&b).ok_or(Error::Singular)?;
    Ok(x.iter().copied().collect())
}

/// V(s) = r(s) + γV(next(s)) on a graph where every state has one successor.
fn functional_graph_values(mdp: &TabularMdp, acts: &[usize]) -> Vec<f64> {
    let n = mdp.n_states;
    let g = mdp.discount;
    let next = |s: usize| mdp.row(s, acts[s])[0].0;
    let r = |s: usize| mdp.reward(s, acts[s]);
    // 0 = unseen, 1 = on the current walk, 2 = solved
    let mut mark = vec![0u8; n];
    let mut v = vec![0.0; n];
    let mut walk = Vec::new();
    for start in 0..n {
        if mark[start] != 0 {
            continue;
        }
        let mut s = start;
        while mark[s] == 0 {
            mark[s] = 1;
            walk.push(s);
            s = next(s);
        }
        if mark[s] == 1 {
            // s closes a cycle: solve it from s around
            let pos = walk.iter().position(|&x| x == s).expect("cycle start is on the walk");
            let cycle = &walk[pos..];
            let mut sum = 0.0;
            let mut disc = 1.0;
            for &c in cycle {
                sum += disc * r(c);
                disc *= g;
            }
            v[s] = sum / (1.0 - disc);
            mark[s] = 2;
            for &c in cycle[1..].iter().rev() {
                v[c] = r(c) + g * v[next(c)];
                mark[c] = 2;
            }
            walk.truncate(pos);
        }
        while let Some(c) = walk.pop() {
            v[c] = r(c) + g * v[next(c)];
            mark[c] = 2;
        }
    }
    v
}

#[derive(Debug, Clone)]
pub struct PolicyIterationOutcome {
    pub policy: Vec<usize>,
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Howard policy iteration from the all-zeros policy. Improvement only
/// switches action on a strict gain beyond 1e-12, so it terminates.
pub fn policy_iteration(mdp: &TabularMdp) -> Result<PolicyIterationOutcome> {
    let mut pi = vec![0usize; mdp.n_states];
    let mut iterations = 0;
    loop {
        let v = policy_evaluation(mdp, &Policy::Deterministic(pi.clone()))?;
        let mut changed = false;
        for s in 0..mdp.n_states {
            let (a, q) = best_action(mdp, s, &v);
            let cur = mdp.q_value(s, pi[s], &v);
            if a != pi[s] && q > cur + 1e-12 * (1.0 + cur.abs()) {
                pi[s] = a;
                changed = true;
            }
        }
        iterations += 1;
        if !changed {
            // report the lowest-index greedy policy of the optimal values
            let policy = greedy_policy(mdp, &v)?;
            return Ok(PolicyIterationOutcome { policy, values: v, iterations });
        }
        if iterations > 10 * mdp.n_states * mdp.n_actions + 100 {
            return Err(invalid("policy iteration failed to settle"));
        }
    }
}

fn check_distribution(mu: &[f64], n: usize) -> Result<()> {
    let sum: f64 = mu.iter().sum();
    if mu.len() != n || mu.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(invalid("initial distribution must be a probability vector over the states"));
    }
    Ok(())
}

/// J(π) = Σ_s μ₀(s) V^π(s).
pub fn policy_return(mdp: &TabularMdp, policy: &Policy, mu0: &[f64]) -> Result<f64> {
    check_distribution(mu0, mdp.n_states)?;
    let v = policy_evaluation(mdp, policy)?;
    Ok(mu0.iter().zip(&v).map(|(m, x)| m * x).sum())
}

#[derive(Debug, Clone)]
pub struct StaticRegret {
    pub total: f64,
    pub per_step: Vec<f64>,
    pub optimal_return: f64,
}

/// Σ_k (J(π*) − J(π_k)) with π* from policy iteration.
pub fn static_regret(mdp: &TabularMdp, policies: &[Policy], mu0: &[f64]) -> Result<StaticRegret> {
    check_distribution(mu0, mdp.n_states)?;
    let opt = policy_iteration(mdp)?;
    let j_star: f64 = mu0.iter().zip(&opt.values).map(|(m, x)| m * x).sum();
    let mut per_step = Vec::with_capacity(policies.len());
    for p in policies {
        per_step.push(j_star - policy_return(mdp, p, mu0)?);
    }
    Ok(StaticRegret { total: per_step.iter().sum(), per_step, optimal_return: j_star })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapCertificate {
    pub delta: f64,
    pub epsilon: f64,
    pub holds: bool,
    /// (s, a, a*) violating the gap.
    pub witness: Option<(usize, usize, usize)>,
}

fn action_distance(mdp: &TabularMdp, a: usize, b: usize) -> f64 {
    match &mdp.action_points {
        Some(pts) => MetricKind::Euclidean.eval(&pts[a], &pts[b]),
        None => (a as f64 - b as f64).abs(),
    }
}

/// Reward argmax per state, lowest index on ties.
pub fn reward_argmax(mdp: &TabularMdp, s: usize) -> usize {
    let mut best = 0;
    for a in 1..mdp.n_actions {
        if mdp.reward(s, a) > mdp.reward(s, best) {
            best = a;
        }
    }
    best
}

/// (Δ, ε)-gap: r(s,a*) − r(s,a) > Δ whenever d(a, a*) > ε.
pub fn check_gap(mdp: &TabularMdp, delta: f64, epsilon: f64) -> Result<GapCertificate> {
    if !(delta > 0.0) || !(epsilon > 0.0) {
        return Err(invalid("gap parameters must be positive"));
    }
    for s in 0..mdp.n_states {
        let star = reward_argmax(mdp, s);
        for a in 0..mdp.n_actions {
            if action_distance(mdp, a, star) > epsilon && !(mdp.reward(s, star) - mdp.reward(s, a) > delta) {
                return Ok(GapCertificate { delta, epsilon, holds: false, witness: Some((s, a, star)) });
            }
        }
    }
    Ok(GapCertificate { delta, epsilon, holds: true, witness: None })
}

/// States with some nonzero reward, and the metric restriction to them when
/// the MDP carries a state embedding.
pub fn reward_support(mdp: &TabularMdp) -> (Vec<usize>, Option<FiniteMetricSpace>) {
    let idx: Vec<usize> = (0..mdp.n_states)
        .filter(|&s| (0..mdp.n_actions).any(|a| mdp.reward(s, a) != 0.0))
        .collect();
    let sub = mdp.state_points.as_ref().map(|sp| sp.subspace(&idx));
    (idx, sub)
}

/// (1−γ)(V*(s₀) − ε): the largest constant loop reward that keeps looping
/// strictly worse than reaching the goal.
pub fn loop_exploit_max_reward(gamma: f64, v_star_s0: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    if !(epsilon >= 0.0) || v_star_s0 < epsilon {
        return Err(invalid(format!("need V*(s0) >= epsilon >= 0, got V*(s0) = {v_star_s0}, epsilon = {epsilon}")));
    }
    Ok((1.0 - gamma) * (v_star_s0 - epsilon))
}

/// sqrt(K ln(2/p)).
pub fn min_reward_for_accuracy(k: f64, p: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(invalid(format!("K must be positive, got {k}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("p must lie in (0,1), got {p}")));
    }
    Ok((k * (2.0 / p).ln()).sqrt())
}

/// I_r = Σ r(s) μ(s).
pub fn effective_reward_mass(rewards: &[f64], weights: &[f64]) -> Result<f64> {
    if rewards.len() != weights.len() {
        return Err(invalid("rewards and weights differ in length"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(invalid("weights must be nonnegative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("weights sum to {sum}, expected 1")));
    }
    Ok(rewards.iter().zip(weights).map(|(r, w)| r * w).sum())
}

/// I_r ≥ sqrt(K ln(2/p)) + C₀·L·γ₂.
pub fn reward_mass_sufficient(mass: f64, k: f64, p: f64, c0: f64, lipschitz: f64, gamma2: f64) -> Result<bool> {
    Ok(mass >= min_reward_for_accuracy(k, p)? + c0 * lipschitz * gamma2)
}

/// Dense random MDP: Dirichlet-like rows on a random subset of successors,
/// rewards uniform in [0, 1).
pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, discount: f64) -> TabularMdp {
    let mut rows = Vec::with_capacity(n_states);
    let mut reward = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut acts = Vec::with_capacity(n_actions);
        let mut rs = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            let w: Vec<f64> = (0..n_states)
                .map(|_| if rng.gen_bool(0.6) { -rng.gen::<f64>().max(1e-300).ln() } else { 0.0 })
                .collect();
            let total: f64 = w.iter().sum();
            let row: Row = if total > 0.0 {
                w.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(t, &x)| (t, x / total)).collect()
            } else {
                vec![(rng.gen_range(0..n_states), 1.0)]
            };
            acts.push(normalize_row(row));
            rs.push(rng.gen::<f64>());
        }
        rows.push(acts);
        reward.push(rs);
    }
    TabularMdp::new(rows, reward, discount).expect("generated MDP is valid")
}

/// Push rounding error onto the largest entry so the row sums to 1 closely.
pub fn normalize_row(mut row: Row) -> Row {
    let sum: f64 = row.iter().map(|e| e.1).sum();
    for e in row.iter_mut() {
        e.1 /= sum;
    }
    let sum: f64 = row.iter().map(|e| e.1).sum();
    if let Some(big) = row.iter_mut().max_by(|a, b| a.1.total_cmp(&b.1)) {
        big.1 += 1.0 - sum;
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn self_loop() -> TabularMdp {
        TabularMdp::new(vec![vec![vec![(0, 1.0)]]], vec![vec![1.0]], 0.5).unwrap()
    }

    #[test]
    fn successor_graph_evaluation_matches_the_linear_solve() {
        let mut rng = stream(21, "det-mdp", 0);
        for _ in 0..50 {
            let n = rng.gen_range(1..15);
            let rows: Vec<Vec<Row>> = (0..n).map(|_| (0..2).map(|_| vec![(rng.gen_range(0..n), 1.0)]).collect()).collect();
            let reward: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.gen::<f64>()).collect()).collect();
            let m = TabularMdp::new(rows, reward, 0.9).unwrap();
            let pi = Policy::Deterministic((0..n).map(|_| rng.gen_range(0..2)).collect());
            let fast = policy_evaluation(&m, &pi).unwrap();
            let dense = dense_policy_evaluation(&m, &pi).unwrap();
            assert!(sup_norm_diff(&fast, &dense) < 1e-10);
        }
    }

    #[test]
    fn self_loop_fixed_point_is_two() {
        let m = self_loop();
        let pi = Policy::Deterministic(vec![0]);
        assert_eq!(bellman_policy_op(&m, &pi, &[0.0]).unwrap(), vec![1.0]);
        assert_eq!(bellman_policy_op(&m, &pi, &[2.0]).unwrap(), vec![2.0]);
        assert_eq!(policy_evaluation(&m, &pi).unwrap(), vec![2.0]);
        assert_eq!(policy_return(&m, &pi, &[1.0]).unwrap(), 2.0);
    }

    #[test]
    fn self_loop_value_iteration_halves_residual() {
        let out = ValueIteration::new(1e-10).run(&self_loop(), &[0.0]).unwrap();
        assert!((out.values[0] - 2.0).abs() < 1e-9);
        for w in out.residual_trace.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_discount_returns_immediate_reward() {
        let mut rng = stream(1, "mdp-test", 0);
        let m = random_mdp(&mut rng, 5, 3, 0.0);
        let v: Vec<f64> = (0..5).map(|i| i as f64 * 10.0).collect();
        let pi = vec![2, 0, 1, 1, 0];
        let out = bellman_policy_op(&m, &Policy::Deterministic(pi.clone()), &v).unwrap();
        let opt = bellman_optimality_op(&m, &v).unwrap();
        for s in 0..5 {
            assert_eq!(out[s], m.reward(s, pi[s]));
            let best = (0..3).map(|a| m.reward(s, a)).fold(f64::MIN, f64::max);
            assert_eq!(opt[s], best);
        }
        let mu = vec![0.2; 5];
        let j = policy_return(&m, &Policy::Deterministic(pi.clone()), &mu).unwrap();
        let direct: f64 = (0..5).map(|s| 0.2 * m.reward(s, pi[s])).sum();
        assert!((j - direct).abs() < 1e-12);
    }

    #[test]
    fn single_action_optimality_equals_policy_op() {
        let mut rng = stream(2, "mdp-test", 0);
        let m = random_mdp(&mut rng, 4, 1, 0.8);
        let v = vec![1.0, -2.0, 0.5, 3.0];
        assert_eq!(
            bellman_optimality_op(&m, &v).unwrap(),
            bellman_policy_op(&m, &Policy::Deterministic(vec![0; 4]), &v).unwrap()
        );
    }

    #[test]
    fn invalid_policy_index_rejected() {
        assert!(bellman_policy_op(&self_loop(), &Policy::Deterministic(vec![1]), &[0.0]).is_err());
    }

    #[test]
    fn ties_pick_action_zero() {
        let rows = vec![vec![vec![(0, 0.5), (1, 0.5)]; 3]; 2];
        let m = TabularMdp::new(rows, vec![vec![1.0; 3]; 2], 0.9).unwrap();
        assert_eq!(greedy_policy(&m, &[4.0, 4.0]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn value_iteration_from_fixed_point_stops_at_zero() {
        let mut rng = stream(3, "mdp-test", 0);
        let m = random_mdp(&mut rng, 6, 3, 0.9);
        let pi = policy_iteration(&m).unwrap();
        let out = value_iteration(&m, &pi.values, 1e-9).unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn nonconvergence_carries_trace() {
        let err = ValueIteration::new(1e-12).with_max_sweeps(3).run(&self_loop(), &[0.0]).unwrap_err();
        match err {
            Error::NonConvergence { max_sweeps, trace, .. } => {
                assert_eq!(max_sweeps, 3);
                assert_eq!(trace.len(), 4);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn default_sweep_budget() {
        // log(1e-6 · 0.5 / 1) / log 0.5 = 20.93 → 21 + 8
        assert_eq!(default_max_sweeps(0.5, 1e-6, 1.0), 29);
    }

    #[test]
    fn gap_certificates() {
        let rows = vec![vec![vec![(0, 1.0)]; 3]];
        let flat = TabularMdp::new(rows.clone(), vec![vec![1.0; 3]], 0.5).unwrap();
        let c = check_gap(&flat, 0.1, 0.5).unwrap();
        assert!(!c.holds);
        assert_eq!(c.witness, Some((0, 1, 0)));
        let peaked = TabularMdp::new(rows, vec![vec![0.0, 1.0, 0.0]], 0.5).unwrap();
        assert!(check_gap(&peaked, 0.5, 0.5).unwrap().holds);
    }

    #[test]
    fn reward_support_cases() {
        let rows = vec![vec![vec![(0, 1.0)]]; 3];
        let zero = TabularMdp::new(rows.clone(), vec![vec![0.0]; 3], 0.5).unwrap();
        assert!(reward_support(&zero).0.is_empty());
        let one = TabularMdp::new(rows, vec![vec![0.0], vec![0.0], vec![2.0]], 0.5)
            .unwrap()
            .with_state_points(FiniteMetricSpace::line(&[0.0, 1.0, 2.0]))
            .unwrap();
        let (idx, sub) = reward_support(&one);
        assert_eq!(idx, vec![2]);
        let tree = crate::metric::build_cover_tree(&sub.unwrap()).unwrap();
        assert_eq!(crate::metric::gamma2_upper(&tree), 0.0);
    }

    #[test]
    fn closed_form_bounds() {
        assert!((loop_exploit_max_reward(0.9, 10.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(loop_exploit_max_reward(0.0, 3.0, 1.0).unwrap(), 2.0);
        assert!(loop_exploit_max_reward(0.5, 1.0, 2.0).is_err());
        let e = std::f64::consts::E;
        assert!((min_reward_for_accuracy(1.0, 2.0 / e).unwrap() - 1.0).abs() < 1e-15);
        assert!((min_reward_for_accuracy(4.0, 2.0 / (e * e)).unwrap() - 8f64.sqrt()).abs() < 1e-14);
        assert!((min_reward_for_accuracy(1.0, 1.0 - 1e-12).unwrap() - 2f64.ln().sqrt()).abs() < 1e-9);
        assert!(min_reward_for_accuracy(1.0, 1.0).is_err());
        assert!(min_reward_for_accuracy(1.0, 0.0).is_err());
    }

    #[test]
    fn reward_mass_cases() {
        assert!((effective_reward_mass(&[3.0; 4], &[0.25; 4]).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(effective_reward_mass(&[1.0, 7.0, 2.0], &[0.0, 1.0, 0.0]).unwrap(), 7.0);
        assert!(effective_reward_mass(&[1.0, 1.0], &[0.5, 0.6]).is_err());
        let e = std::f64::consts::E;
        assert!(reward_mass_sufficient(1.5, 1.0, 2.0 / e, 1.0, 1.0, 0.5).unwrap());
        assert!(!reward_mass_sufficient(1.4, 1.0, 2.0 / e, 1.0, 1.0, 0.5).unwrap());
    }

    #[test]
    fn bad_rows_rejected() {
        assert!(TabularMdp::new(vec![vec![vec![(0, 0.9)]]], vec![vec![0.0]], 0.5).is_err());
        assert!(TabularMdp::new(vec![vec![vec![(0, 1.0)]]], vec![vec![-1.0]], 0.5).is_err());
        assert!(TabularMdp::new(vec![vec![vec![(0, 1.0)]]], vec![vec![0.0]], 1.0).is_err());
    }
}
