//! Model-based learning on factored-action MDPs: collect rollouts, estimate
//! the reward and transition tensors by masked CP completion, evaluate the
//! behaviour policy on the estimated dynamics, improve, repeat.
//!
//! Also houses the diagnostic formulas tied to the estimation analysis: the
//! minimum-policy-mass expression (with its problem constant supplied by the
//! caller), and the policy-evaluation error bound with its normalization
//! factor interval, plus a verifier that measures the achieved estimation
//! error on a known instance and checks the bound empirically.

use crate::bellman::{
    bellman_apply, improve_policy, policy_evaluate_exact, policy_evaluate_iterative,
    policy_state_value, ImproveMode, QFunction,
};
use crate::decomp::{complete_from_samples, AlsConfig, ObservedEntries};
use crate::env::{
    min_policy_mass, rollout, Mmdp, FactoredPolicy, Trajectory,
};
use crate::error::{Error, Result};
use crate::tensor::{frobenius_distance, DenseTensor, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// State/agent/action sizes of the environment being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvDims {
    pub num_states: usize,
    pub num_agents: usize,
    pub actions_per_agent: usize,
}

impl EnvDims {
    pub fn of(m: &Mmdp) -> Self {
        EnvDims {
            num_states: m.num_states(),
            num_agents: m.num_agents(),
            actions_per_agent: m.actions_per_agent(),
        }
    }

    pub fn joint_shape(&self) -> Result<Shape> {
        Shape::cubic(self.num_agents, self.actions_per_agent)
    }
}

/// Estimated dynamics. `transition_hat` is normalized into distributions;
/// `transition_raw` keeps the clipped pre-normalization completions, whose
/// Frobenius error is what the evaluation bound is stated in.
#[derive(Debug, Clone)]
pub struct DynamicsEstimate {
    pub reward_hat: Vec<DenseTensor>,
    pub transition_hat: Vec<Vec<DenseTensor>>,
    pub transition_raw: Vec<Vec<DenseTensor>>,
    /// Visits per (state, flat joint action).
    pub visit_counts: Vec<Vec<u64>>,
    /// States never visited; their estimates are zero reward and a uniform
    /// transition, substituted rather than fitted.
    pub unidentified_states: Vec<usize>,
    /// Per state, (mode, action index) pairs never observed there; those
    /// factor rows are damped to zero by the completion.
    pub degenerate_masks: Vec<Vec<(usize, usize)>>,
    /// Achieved normalization factor range over identified (s, u).
    pub f_observed: (f64, f64),
    /// Normalization factor interval 1/(1 + eps|S|) .. 1/(1 - eps|S|) at the
    /// requested eps (upper endpoint infinite when eps |S| >= 1).
    pub f_interval: (f64, f64),
    pub requested_eps: f64,
}

impl DynamicsEstimate {
    /// Exact dynamics wrapped as an estimate (errors zero, factors one).
    pub fn exact(m: &Mmdp, requested_eps: f64) -> Self {
        let ns = m.num_states();
        let reward_hat = (0..ns).map(|s| m.reward(s).clone()).collect();
        let transition: Vec<Vec<DenseTensor>> = (0..ns)
            .map(|s| (0..ns).map(|sp| m.transition(s, sp).clone()).collect())
            .collect();
        DynamicsEstimate {
            reward_hat,
            transition_hat: transition.clone(),
            transition_raw: transition,
            visit_counts: vec![vec![0; m.num_joint_actions()]; ns],
            unidentified_states: Vec::new(),
            degenerate_masks: vec![Vec::new(); ns],
            f_observed: (1.0, 1.0),
            f_interval: f_interval(requested_eps, ns),
            requested_eps,
        }
    }

    /// The estimate as a proper MDP (normalized transitions), for planning.
    pub fn as_mmdp(&self, dims: EnvDims, gamma: f64) -> Result<Mmdp> {
        Mmdp::new(
            dims.num_agents,
            dims.actions_per_agent,
            gamma,
            self.reward_hat.clone(),
            self.transition_hat.clone(),
        )
    }

    /// max_s ||reward_hat(s) - reward(s)||_F against a known instance.
    pub fn reward_error(&self, m: &Mmdp) -> Result<f64> {
        let mut err: f64 = 0.0;
        for s in 0..m.num_states() {
            err = err.max(frobenius_distance(&self.reward_hat[s], m.reward(s))?);
        }
        Ok(err)
    }

    /// max_{s,s'} ||transition_raw(s,s') - transition(s,s')||_F.
    pub fn transition_error(&self, m: &Mmdp) -> Result<f64> {
        let mut err: f64 = 0.0;
        for s in 0..m.num_states() {
            for sp in 0..m.num_states() {
                err = err.max(frobenius_distance(&self.transition_raw[s][sp], m.transition(s, sp))?);
            }
        }
        Ok(err)
    }
}

fn f_interval(eps: f64, num_states: usize) -> (f64, f64) {
    let es = eps * num_states as f64;
    let hi = if es < 1.0 { 1.0 / (1.0 - es) } else { f64::INFINITY };
    (1.0 / (1.0 + es), hi)
}

/// Maximum-likelihood moments of a dataset: per-(s,u) mean rewards and
/// empirical next-state frequencies, fed through masked CP completion.
pub fn estimate_dynamics(
    data: &[Trajectory],
    dims: EnvDims,
    als: &AlsConfig,
    requested_eps: f64,
) -> Result<DynamicsEstimate> {
    if data.iter().all(|t| t.is_empty()) {
        return Err(Error::invalid("no transitions in dataset"));
    }
    als.validate()?;
    let shape = dims.joint_shape()?;
    let ns = dims.num_states;
    let joint = shape.len();

    let mut visits = vec![vec![0u64; joint]; ns];
    let mut reward_sum = vec![vec![0.0f64; joint]; ns];
    let mut next_counts = vec![vec![vec![0u64; ns]; joint]; ns];
    for traj in data {
        for step in &traj.steps {
            let flat = shape.flat_index(&step.joint_action)?;
            if step.state >= ns || step.next_state >= ns {
                return Err(Error::invalid("trajectory state out of range"));
            }
            visits[step.state][flat] += 1;
            reward_sum[step.state][flat] += step.reward;
            next_counts[step.state][flat][step.next_state] += 1;
        }
    }

    let mut reward_hat = Vec::with_capacity(ns);
    let mut transition_hat = vec![Vec::with_capacity(ns); ns];
    let mut transition_raw = vec![Vec::with_capacity(ns); ns];
    let mut unidentified = Vec::new();
    let mut degenerate_masks = vec![Vec::new(); ns];
    let mut f_min = f64::MAX;
    let mut f_max = f64::MIN;

    for s in 0..ns {
        let visited: Vec<usize> = (0..joint).filter(|&u| visits[s][u] > 0).collect();
        if visited.is_empty() {
            unidentified.push(s);
            reward_hat.push(DenseTensor::zeros(shape.clone()));
            let uniform = DenseTensor::constant(shape.clone(), 1.0 / ns as f64)?;
            for _ in 0..ns {
                transition_hat[s].push(uniform.clone());
                transition_raw[s].push(uniform.clone());
            }
            continue;
        }

        let mut seed_tag = 0u64;
        let mut seeded = || {
            seed_tag += 1;
            let mut cfg = als.clone();
            cfg.seed = als
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((s as u64) << 24)
                .wrapping_add(seed_tag);
            cfg
        };

        // reward moments: running means weighted by visit counts
        let mut obs = ObservedEntries::new(shape.clone());
        for &u in &visited {
            let mean = reward_sum[s][u] / visits[s][u] as f64;
            obs.add(&shape.multi_index(u), mean, visits[s][u])?;
        }
        degenerate_masks[s] = obs.uncovered();
        let completion = complete_from_samples(&obs, &seeded())?;
        reward_hat.push(crate::tensor::cp_reconstruct(&completion.cp)?);

        // transition moments: conditional frequencies, one completion per s'
        let mut raw_slices = Vec::with_capacity(ns);
        for sp in 0..ns {
            let mut obs = ObservedEntries::new(shape.clone());
            for &u in &visited {
                let freq = next_counts[s][u][sp] as f64 / visits[s][u] as f64;
                obs.add(&shape.multi_index(u), freq, visits[s][u])?;
            }
            let completion = complete_from_samples(&obs, &seeded())?;
            let mut t = crate::tensor::cp_reconstruct(&completion.cp)?;
            // completion is unconstrained; clip into [0, 1] before normalizing
            for v in t.data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            raw_slices.push(t);
        }

        let mut norm_slices: Vec<DenseTensor> = raw_slices.clone();
        for u in 0..joint {
            let mass: f64 = raw_slices.iter().map(|t| t.data()[u]).sum();
            if mass > 1e-12 {
                let f = 1.0 / mass;
                f_min = f_min.min(f);
                f_max = f_max.max(f);
                for slice in &mut norm_slices {
                    slice.data_mut()[u] *= f;
                }
            } else {
                // nothing survived clipping; fall back to uniform
                for slice in &mut norm_slices {
                    slice.data_mut()[u] = 1.0 / ns as f64;
                }
            }
        }
        transition_raw[s] = raw_slices;
        transition_hat[s] = norm_slices;
    }

    if f_min > f_max {
        f_min = 1.0;
        f_max = 1.0;
    }
    Ok(DynamicsEstimate {
        reward_hat,
        transition_hat,
        transition_raw,
        visit_counts: visits,
        unidentified_states: unidentified,
        degenerate_masks,
        f_observed: (f_min, f_max),
        f_interval: f_interval(requested_eps, ns),
        requested_eps,
    })
}

/// Linear-then-flat schedule for the improvement parameter.
#[derive(Debug, Clone, Copy)]
pub struct ParamSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_iters: usize,
}

impl ParamSchedule {
    pub fn constant(v: f64) -> Self {
        ParamSchedule { start: v, end: v, anneal_iters: 1 }
    }

    pub fn value(&self, iter: usize) -> f64 {
        if self.anneal_iters == 0 {
            return self.end;
        }
        let frac = (iter as f64 / self.anneal_iters as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Policy improvement flavour for the outer loop.
#[derive(Debug, Clone, Copy)]
pub enum MbImprovement {
    /// Factored epsilon-greedy with an epsilon schedule.
    Greedy(ParamSchedule),
    /// Per-agent softmax marginals with a temperature schedule.
    Softmax(ParamSchedule),
}

/// Settings for the model-based loop.
#[derive(Debug, Clone)]
pub struct MbConfig {
    pub rank: usize,
    pub episodes_per_iter: usize,
    pub rollout_len: usize,
    /// Inner Bellman applications per outer iteration; stops early once the
    /// sup-norm change falls below `inner_tol`.
    pub inner_iters: usize,
    pub inner_tol: f64,
    pub improvement: MbImprovement,
    pub outer_iters: usize,
    pub seed: u64,
    /// eps used for the reported normalization-factor interval.
    pub requested_eps: f64,
    /// Plan against the true dynamics instead of estimating them; reduces
    /// the loop to approximate policy iteration (used as a reduction check).
    pub use_true_dynamics: bool,
    pub als_restarts: usize,
    pub als_max_sweeps: usize,
}

impl MbConfig {
    pub fn new(rank: usize, seed: u64) -> Self {
        MbConfig {
            rank,
            episodes_per_iter: 20,
            rollout_len: 40,
            inner_iters: 200,
            inner_tol: 1e-6,
            improvement: MbImprovement::Greedy(ParamSchedule {
                start: 0.4,
                end: 0.05,
                anneal_iters: 10,
            }),
            outer_iters: 20,
            seed,
            requested_eps: 0.1,
            use_true_dynamics: false,
            als_restarts: 3,
            als_max_sweeps: 150,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0
            || self.episodes_per_iter == 0
            || self.rollout_len == 0
            || self.inner_iters == 0
            || self.outer_iters == 0
        {
            return Err(Error::invalid("model-based config sizes must be >= 1"));
        }
        let sched = match self.improvement {
            MbImprovement::Greedy(s) => s,
            MbImprovement::Softmax(s) => s,
        };
        if let MbImprovement::Greedy(_) = self.improvement {
            for v in [sched.start, sched.end] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid("eps schedule must stay in [0,1]"));
                }
            }
        }
        Ok(())
    }
}

/// One outer iteration's record. Serialized as a CSV row.
#[derive(Debug, Clone, Copy)]
pub struct MbIterationMetrics {
    pub iteration: usize,
    /// Mean state value of the current policy on the true dynamics.
    pub true_return: f64,
    /// max_s ||reward_hat - reward||_F at this iteration.
    pub reward_err: f64,
    /// max_{s,s'} ||transition_raw - transition||_F.
    pub transition_err: f64,
    pub min_policy_mass: f64,
    pub wall_ms: f64,
}

pub const MB_CSV_HEADER: &str =
    "schema_version,iteration,true_return,reward_err,transition_err,min_policy_mass,wall_ms";

pub fn mb_metrics_csv(metrics: &[MbIterationMetrics]) -> String {
    let mut out = String::from(MB_CSV_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&format!(
            "1,{},{},{},{},{},{}\n",
            m.iteration, m.true_return, m.reward_err, m.transition_err, m.min_policy_mass, m.wall_ms
        ));
    }
    out
}

/// Outcome of the model-based loop.
#[derive(Debug, Clone)]
pub struct MbRun {
    pub policy: FactoredPolicy,
    pub q: QFunction,
    pub metrics: Vec<MbIterationMetrics>,
    /// Policy after each outer iteration, in order.
    pub policy_trace: Vec<FactoredPolicy>,
    /// Mean state value (true dynamics) of the final policy's greedy
    /// determinization.
    pub greedy_return: f64,
}

/// Mean state value of `pi` on `m` (uniform start weighting), evaluated
/// exactly.
pub fn mean_true_return(m: &Mmdp, pi: &FactoredPolicy) -> Result<f64> {
    let q = policy_evaluate_exact(m, pi)?;
    let mut acc = 0.0;
    for s in 0..m.num_states() {
        acc += policy_state_value(pi, &q, s)?;
    }
    Ok(acc / m.num_states() as f64)
}

/// The full loop: rollout, append to the dataset, re-estimate dynamics,
/// evaluate on the estimate, improve. Deterministic for a given seed.
pub fn run_model_based(m: &Mmdp, cfg: &MbConfig) -> Result<MbRun> {
    cfg.validate()?;
    let dims = EnvDims::of(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pi = FactoredPolicy::uniform(dims.num_states, dims.num_agents, dims.actions_per_agent);
    let mut data: Vec<Trajectory> = Vec::new();
    let mut metrics = Vec::with_capacity(cfg.outer_iters);
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut q = QFunction::zeros(dims.num_states, dims.joint_shape()?)?;

    for iter in 0..cfg.outer_iters {
        let clock = Instant::now();
        for _ in 0..cfg.episodes_per_iter {
            data.push(rollout(m, &pi, cfg.rollout_len, &mut rng)?);
        }

        let estimate = if cfg.use_true_dynamics {
            DynamicsEstimate::exact(m, cfg.requested_eps)
        } else {
            let mut als = AlsConfig::new(cfg.rank, cfg.seed.wrapping_add(iter as u64 + 1));
            als.restarts = cfg.als_restarts;
            als.max_sweeps = cfg.als_max_sweeps;
            estimate_dynamics(&data, dims, &als, cfg.requested_eps)?
        };
        let m_hat = estimate.as_mmdp(dims, m.gamma())?;

        let (q_hat, _) = policy_evaluate_iterative(&m_hat, &pi, cfg.inner_iters, cfg.inner_tol)?;
        q = q_hat;
        pi = match cfg.improvement {
            MbImprovement::Greedy(sched) => {
                improve_policy(&q, ImproveMode::Greedy { eps: sched.value(iter) })?
            }
            MbImprovement::Softmax(sched) => {
                improve_policy(&q, ImproveMode::Softmax { temperature: sched.value(iter) })?
            }
        };
        trace.push(pi.clone());

        metrics.push(MbIterationMetrics {
            iteration: iter,
            true_return: mean_true_return(m, &pi)?,
            reward_err: estimate.reward_error(m)?,
            transition_err: estimate.transition_error(m)?,
            min_policy_mass: min_policy_mass(&pi),
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
    }

    let greedy_joint: Vec<Vec<usize>> = (0..dims.num_states).map(|s| pi.greedy_joint(s)).collect();
    let greedy = FactoredPolicy::deterministic(dims.actions_per_agent, &greedy_joint)?;
    let greedy_return = mean_true_return(m, &greedy)?;

    Ok(MbRun { policy: pi, q, metrics, policy_trace: trace, greedy_return })
}

/// Minimum joint policy mass required by the estimation analysis, evaluated
/// exactly as stated for one state's coherence numbers. The problem constant
/// `c1` is not derivable from the instance and must be supplied; natural
/// logarithms are used. Diagnostic only.
#[allow(clippy::too_many_arguments)]
pub fn thm2_delta(
    mu: f64,
    rank: usize,
    w_max: f64,
    w_min: f64,
    actions: usize,
    agents: usize,
    r_frob: f64,
    eps: f64,
    c1: f64,
) -> f64 {
    let k = rank as f64;
    let u = actions as f64;
    let n = agents as f64;
    c1 * mu.powi(6) * k.powi(5) * w_max.powi(4) * u.ln().powi(4)
        * (3.0 * k * r_frob / eps).ln()
        / (u.powf(n / 2.0) * w_min.powi(4))
}

/// Policy-evaluation error bound at both normalization-factor endpoints:
/// (|1-f| + f |S| eps) * gamma / (2 (1-gamma)^2) + eps / (1-gamma), with
/// 1/(1 + eps|S|) <= f <= 1/(1 - eps|S|). Returns (lo, hi).
pub fn thm3_bound(eps: f64, gamma: f64, num_states: usize) -> Result<(f64, f64)> {
    if eps < 0.0 {
        return Err(Error::invalid("eps must be >= 0"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} not in [0,1)")));
    }
    let es = eps * num_states as f64;
    if es >= 1.0 {
        return Err(Error::BoundUndefined(es));
    }
    let at = |f: f64| {
        ((1.0 - f).abs() + f * num_states as f64 * eps) * gamma / (2.0 * (1.0 - gamma).powi(2))
            + eps / (1.0 - gamma)
    };
    let (f_lo, f_hi) = f_interval(eps, num_states);
    Ok((at(f_lo), at(f_hi)))
}

/// Settings for the empirical bound check.
#[derive(Debug, Clone)]
pub struct Thm3Config {
    /// Total behaviour-policy steps to collect before estimating.
    pub steps: usize,
    pub rollout_len: usize,
    pub rank: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Thm3Report {
    /// Per-state reward estimation error (Frobenius).
    pub reward_eps: Vec<f64>,
    /// Per-(s,s') transition estimation error on the pre-normalization
    /// tensors.
    pub transition_eps: Vec<Vec<f64>>,
    /// max of all per-tensor errors; the eps the bound is evaluated at.
    pub achieved_eps: f64,
    /// max |Q - Q_hat| over states and joint actions for the target policy.
    pub empirical_error: f64,
    pub bound: (f64, f64),
    pub within_bound: bool,
    pub f_observed: (f64, f64),
    pub unidentified_states: Vec<usize>,
}

/// Estimates dynamics under `pi_b`, evaluates `pi_eval` exactly on both true
/// and estimated dynamics, and compares the worst-case value gap with the
/// bound at the achieved estimation error.
pub fn verify_thm3(
    m: &Mmdp,
    pi_b: &FactoredPolicy,
    pi_eval: &FactoredPolicy,
    cfg: &Thm3Config,
) -> Result<Thm3Report> {
    if min_policy_mass(pi_b) <= 0.0 {
        return Err(Error::invalid("behaviour policy must have positive joint mass"));
    }
    let dims = EnvDims::of(m);
    let estimate = if cfg.steps == 0 {
        DynamicsEstimate::exact(m, 0.0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut data = Vec::new();
        let mut collected = 0usize;
        while collected < cfg.steps {
            let traj = rollout(m, pi_b, cfg.rollout_len, &mut rng)?;
            collected += traj.len();
            data.push(traj);
        }
        let als = AlsConfig::new(cfg.rank, cfg.seed.wrapping_mul(31).wrapping_add(7));
        estimate_dynamics(&data, dims, &als, 0.0)?
    };
    report_thm3(m, pi_eval, &estimate)
}

/// Bound check against a caller-supplied estimate (e.g. the exact one).
pub fn report_thm3(
    m: &Mmdp,
    pi_eval: &FactoredPolicy,
    estimate: &DynamicsEstimate,
) -> Result<Thm3Report> {
    let ns = m.num_states();
    let mut reward_eps = Vec::with_capacity(ns);
    let mut transition_eps = vec![Vec::with_capacity(ns); ns];
    let mut achieved: f64 = 0.0;
    for s in 0..ns {
        let re = frobenius_distance(&estimate.reward_hat[s], m.reward(s))?;
        achieved = achieved.max(re);
        reward_eps.push(re);
        for sp in 0..ns {
            let te = frobenius_distance(&estimate.transition_raw[s][sp], m.transition(s, sp))?;
            achieved = achieved.max(te);
            transition_eps[s].push(te);
        }
    }

    let q_true = policy_evaluate_exact(m, pi_eval)?;
    let m_hat = estimate.as_mmdp(EnvDims::of(m), m.gamma())?;
    let q_hat = policy_evaluate_exact(&m_hat, pi_eval)?;
    let empirical_error = QFunction::sup_distance(&q_true, &q_hat)?;

    let bound = thm3_bound(achieved, m.gamma(), ns)?;
    Ok(Thm3Report {
        reward_eps,
        transition_eps,
        achieved_eps: achieved,
        empirical_error,
        bound,
        within_bound: empirical_error <= bound.1,
        f_observed: estimate.f_observed,
        unidentified_states: estimate.unidentified_states.clone(),
    })
}

/// Fixed point check used in tests and the verify CLI: one more Bellman
/// application must not move the exact evaluation.
pub fn fixed_point_gap(m: &Mmdp, pi: &FactoredPolicy, q: &QFunction) -> Result<f64> {
    let applied = bellman_apply(m, pi, q)?;
    QFunction::sup_distance(&applied, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::policy_iteration;
    use crate::env::{generate_low_rank_mmdp, rollout_from};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn collect_steps(
        m: &Mmdp,
        pi: &FactoredPolicy,
        steps: usize,
        len: usize,
        seed: u64,
    ) -> Vec<Trajectory> {
        let mut rng = rng(seed);
        let mut data = Vec::new();
        let mut n = 0;
        while n < steps {
            let t = rollout(m, pi, len, &mut rng).unwrap();
            n += t.len();
            data.push(t);
        }
        data
    }

    #[test]
    fn deterministic_single_state_estimates_reward_exactly() {
        // gamma 0, one state: every joint action visited many times
        let m = generate_low_rank_mmdp(1, 2, 3, 2, 1, 0.0, 5).unwrap();
        let pi = FactoredPolicy::uniform(1, 2, 3);
        let data = collect_steps(&m, &pi, 20_000, 50, 11);
        let als = AlsConfig::new(2, 3);
        let est = estimate_dynamics(&data, EnvDims::of(&m), &als, 0.05).unwrap();
        assert!(est.unidentified_states.is_empty());
        let err = est.reward_error(&m).unwrap();
        assert!(err < 1e-6, "reward error {err}");
    }

    #[test]
    fn unvisited_state_is_flagged_and_substituted() {
        // start every rollout in state 0 of a chain that cannot reach state 2
        let shape = Shape::cubic(1, 2).unwrap();
        let zeros = DenseTensor::zeros(shape.clone());
        let stay = DenseTensor::constant(shape.clone(), 1.0).unwrap();
        // state 0 loops to itself; states 1, 2 loop to themselves
        let m = Mmdp::new(
            1,
            2,
            0.5,
            vec![stay.clone(), zeros.clone(), zeros.clone()],
            vec![
                vec![stay.clone(), zeros.clone(), zeros.clone()],
                vec![zeros.clone(), stay.clone(), zeros.clone()],
                vec![zeros.clone(), zeros.clone(), stay.clone()],
            ],
        )
        .unwrap();
        let pi = FactoredPolicy::uniform(3, 1, 2);
        let mut r = rng(3);
        let data = vec![rollout_from(&m, &pi, 0, 50, &mut r).unwrap()];
        let als = AlsConfig::new(1, 1);
        let est = estimate_dynamics(&data, EnvDims::of(&m), &als, 0.1).unwrap();
        assert_eq!(est.unidentified_states, vec![1, 2]);
        // substitution: zero reward, uniform transition
        assert!(est.reward_hat[1].data().iter().all(|&v| v == 0.0));
        assert!(est.transition_hat[1][0].data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        // substituted states still form a valid MDP
        est.as_mmdp(EnvDims::of(&m), 0.5).unwrap();
    }

    #[test]
    fn estimation_error_shrinks_with_data_seeded() {
        let m = generate_low_rank_mmdp(2, 2, 2, 1, 1, 0.9, 31).unwrap();
        let pi = FactoredPolicy::uniform(2, 2, 2);
        let mut errs = Vec::new();
        for steps in [1000usize, 4000, 16000] {
            let data = collect_steps(&m, &pi, steps, 50, 17);
            let als = AlsConfig::new(1, 23);
            let est = estimate_dynamics(&data, EnvDims::of(&m), &als, 0.05).unwrap();
            errs.push(est.reward_error(&m).unwrap().max(est.transition_error(&m).unwrap()));
        }
        // non-increasing within 10% noise
        assert!(errs[1] <= errs[0] * 1.1, "errors {errs:?}");
        assert!(errs[2] <= errs[1] * 1.1, "errors {errs:?}");
    }

    #[test]
    fn low_rank_two_state_estimation_accuracy() {
        let m = generate_low_rank_mmdp(2, 2, 2, 1, 1, 0.9, 47).unwrap();
        let pi = FactoredPolicy::uniform(2, 2, 2);
        let data = collect_steps(&m, &pi, 50_000, 50, 29);
        let als = AlsConfig::new(1, 41);
        let est = estimate_dynamics(&data, EnvDims::of(&m), &als, 0.05).unwrap();
        for s in 0..2 {
            let err = frobenius_distance(&est.reward_hat[s], m.reward(s)).unwrap();
            let norm = crate::tensor::frobenius_norm(m.reward(s));
            assert!(err < 0.05 * norm, "state {s}: {err} vs 5% of {norm}");
        }
    }

    #[test]
    fn f_factors_lie_in_lemma_interval_for_achieved_eps() {
        let m = generate_low_rank_mmdp(3, 2, 2, 1, 1, 0.9, 53).unwrap();
        let pi = FactoredPolicy::uniform(3, 2, 2);
        let data = collect_steps(&m, &pi, 30_000, 60, 59);
        let als = AlsConfig::new(1, 61);
        let est = estimate_dynamics(&data, EnvDims::of(&m), &als, 0.0).unwrap();
        let eps = est.transition_error(&m).unwrap();
        let (lo, hi) = f_interval(eps, 3);
        assert!(est.f_observed.0 >= lo - 1e-9, "{} < {lo}", est.f_observed.0);
        assert!(est.f_observed.1 <= hi + 1e-9, "{} > {hi}", est.f_observed.1);
    }

    #[test]
    fn bandit_reduction_finds_argmax() {
        // gamma 0, single state: the loop is a pure bandit
        let m = generate_low_rank_mmdp(1, 2, 4, 2, 1, 0.0, 67).unwrap();
        let mut cfg = MbConfig::new(2, 71);
        cfg.outer_iters = 10;
        cfg.episodes_per_iter = 30;
        cfg.rollout_len = 20;
        cfg.improvement = MbImprovement::Greedy(ParamSchedule {
            start: 0.4,
            end: 0.05,
            anneal_iters: 5,
        });
        let run = run_model_based(&m, &cfg).unwrap();
        let max = m.reward(0).data().iter().cloned().fold(f64::MIN, f64::max);
        assert!((run.greedy_return - max).abs() < 1e-9, "greedy {} vs max {max}", run.greedy_return);
    }

    #[test]
    fn eps_floor_bounds_min_policy_mass() {
        let m = generate_low_rank_mmdp(2, 2, 3, 1, 1, 0.8, 73).unwrap();
        let mut cfg = MbConfig::new(1, 79);
        cfg.outer_iters = 6;
        cfg.episodes_per_iter = 5;
        cfg.rollout_len = 10;
        cfg.improvement = MbImprovement::Greedy(ParamSchedule {
            start: 0.5,
            end: 0.05,
            anneal_iters: 3,
        });
        let run = run_model_based(&m, &cfg).unwrap();
        let floor = (0.05f64 / 3.0).powi(2);
        for rec in &run.metrics {
            assert!(rec.min_policy_mass >= floor - 1e-15, "iter {}", rec.iteration);
        }
    }

    #[test]
    fn true_dynamics_mode_reduces_to_policy_iteration() {
        let m = generate_low_rank_mmdp(3, 2, 3, 2, 2, 0.9, 83).unwrap();
        let mut cfg = MbConfig::new(2, 89);
        cfg.outer_iters = 8;
        cfg.episodes_per_iter = 1;
        cfg.rollout_len = 1;
        cfg.use_true_dynamics = true;
        cfg.inner_iters = 500;
        cfg.inner_tol = 1e-10;
        cfg.improvement = MbImprovement::Greedy(ParamSchedule::constant(0.0));
        let run = run_model_based(&m, &cfg).unwrap();

        // reference: plain approximate policy iteration with the same inner loop
        let mut pi = FactoredPolicy::uniform(3, 2, 3);
        let mut reference = Vec::new();
        for _ in 0..8 {
            let (q, _) = policy_evaluate_iterative(&m, &pi, 500, 1e-10).unwrap();
            pi = improve_policy(&q, ImproveMode::Greedy { eps: 0.0 }).unwrap();
            reference.push(pi.clone());
        }
        assert_eq!(run.policy_trace.len(), reference.len());
        for (a, b) in run.policy_trace.iter().zip(&reference) {
            assert_eq!(a, b);
        }

        // and the argmax policy agrees with exact policy iteration's value
        let (pi_star, _, _) = policy_iteration(&m, 50).unwrap();
        let star = mean_true_return(&m, &pi_star).unwrap();
        assert!((run.greedy_return - star).abs() < 1e-8);
    }

    #[test]
    fn delta_formula_scalings() {
        let base = thm2_delta(1.2, 3, 2.0, 0.5, 8, 4, 5.0, 0.01, 1.0);
        let doubled = thm2_delta(1.2, 3, 2.0, 0.5, 8, 4, 5.0, 0.01, 2.0);
        assert!((doubled - 2.0 * base).abs() < 1e-12 * base.abs());

        // |U|^{-n/2} scaling: quadrupling |U|^n at fixed per-factor log term
        let d1 = thm2_delta(1.0, 1, 1.0, 1.0, 4, 2, 1.0, 0.1, 1.0);
        let d2 = thm2_delta(1.0, 1, 1.0, 1.0, 4, 4, 1.0, 0.1, 1.0);
        assert!((d2 / d1 - (1.0f64 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn delta_matches_independent_evaluation() {
        // independent re-implementation, written term by term
        let (mu, k, wmax, wmin, u, n, rf, eps, c1) = (1.3f64, 4usize, 2.5f64, 0.7f64, 9usize, 3usize, 4.2f64, 0.02f64, 0.5f64);
        let logu = (9.0f64).ln();
        let num = c1 * mu * mu * mu * mu * mu * mu
            * (k as f64).powi(5)
            * wmax * wmax * wmax * wmax
            * logu * logu * logu * logu
            * ((3.0 * k as f64 * rf / eps).ln());
        let den = (u as f64).powf(n as f64 / 2.0) * wmin * wmin * wmin * wmin;
        let expected = num / den;
        let got = thm2_delta(mu, k, wmax, wmin, u, n, rf, eps, c1);
        assert!((got - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn thm3_bound_edge_cases() {
        let (lo, hi) = thm3_bound(0.0, 0.9, 4).unwrap();
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 0.0);

        let (lo, hi) = thm3_bound(0.03, 0.0, 4).unwrap();
        assert!((lo - 0.03).abs() < 1e-15);
        assert!((hi - 0.03).abs() < 1e-15);

        assert!(matches!(
            thm3_bound(0.3, 0.9, 4),
            Err(Error::BoundUndefined(_))
        ));
    }

    #[test]
    fn thm3_bound_matches_independent_evaluation() {
        let (eps, gamma, ns) = (0.01f64, 0.9f64, 4usize);
        let f_lo = 1.0 / (1.0 + eps * ns as f64);
        let f_hi = 1.0 / (1.0 - eps * ns as f64);
        let eval = |f: f64| {
            ((1.0f64 - f).abs() + f * ns as f64 * eps) * gamma / (2.0 * (1.0 - gamma) * (1.0 - gamma))
                + eps / (1.0 - gamma)
        };
        let (lo, hi) = thm3_bound(eps, gamma, ns).unwrap();
        assert!((lo - eval(f_lo)).abs() < 1e-15);
        assert!((hi - eval(f_hi)).abs() < 1e-15);
        assert!(hi >= lo);
    }

    #[test]
    fn exact_estimate_has_zero_error_and_zero_bound() {
        let m = generate_low_rank_mmdp(2, 2, 2, 1, 1, 0.9, 97).unwrap();
        let pi = FactoredPolicy::uniform(2, 2, 2);
        let est = DynamicsEstimate::exact(&m, 0.0);
        let report = report_thm3(&m, &pi, &est).unwrap();
        assert_eq!(report.achieved_eps, 0.0);
        assert!(report.empirical_error <= report.bound.1 + 1e-8);
        assert!(report.empirical_error < 1e-8);
    }

    #[test]
    fn empirical_error_within_bound_on_sampled_instance() {
        let m = generate_low_rank_mmdp(2, 2, 2, 1, 1, 0.8, 101).unwrap();
        let pi_b = FactoredPolicy::uniform(2, 2, 2);
        let mut r = rng(5);
        let probs = (0..2)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let a: f64 = r.gen_range(0.2..0.8);
                        vec![a, 1.0 - a]
                    })
                    .collect()
            })
            .collect();
        let pi_eval = FactoredPolicy::new(probs).unwrap();
        let cfg = Thm3Config { steps: 30_000, rollout_len: 50, rank: 1, seed: 11 };
        let report = verify_thm3(&m, &pi_b, &pi_eval, &cfg).unwrap();
        assert!(report.unidentified_states.is_empty());
        assert!(
            report.within_bound,
            "empirical {} vs bound {:?} at eps {}",
            report.empirical_error, report.bound, report.achieved_eps
        );
        // report carries per-tensor errors
        assert_eq!(report.reward_eps.len(), 2);
        assert_eq!(report.transition_eps.len(), 2);
    }

    #[test]
    fn off_policy_estimates_evaluate_other_policies_within_bound() {
        let mut r = rng(13);
        for i in 0..10 {
            let m = generate_low_rank_mmdp(2, 2, 2, 1, 1, 0.7, 300 + i).unwrap();
            let pi_b = FactoredPolicy::uniform(2, 2, 2);
            let probs = (0..2)
                .map(|_| {
                    (0..2)
                        .map(|_| {
                            let a: f64 = r.gen_range(0.1..0.9);
                            vec![a, 1.0 - a]
                        })
                        .collect()
                })
                .collect();
            let pi_eval = FactoredPolicy::new(probs).unwrap();
            let cfg = Thm3Config { steps: 20_000, rollout_len: 40, rank: 1, seed: 400 + i };
            let report = verify_thm3(&m, &pi_b, &pi_eval, &cfg).unwrap();
            assert!(report.within_bound, "pair {i}: {report:?}");
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let m = generate_low_rank_mmdp(1, 1, 2, 1, 1, 0.5, 1).unwrap();
        let als = AlsConfig::new(1, 1);
        assert!(estimate_dynamics(&[], EnvDims::of(&m), &als, 0.1).is_err());
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = vec![MbIterationMetrics {
            iteration: 0,
            true_return: 1.5,
            reward_err: 0.1,
            transition_err: 0.2,
            min_policy_mass: 0.01,
            wall_ms: 3.5,
        }];
        let csv = mb_metrics_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), MB_CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "1,0,1.5,0.1,0.2,0.01,3.5");
    }
}
