//! Tabular factored-action MDPs, low-rank instance generators, the
//! tensor-games benchmark, and trajectory sampling.
//!
//! An `Mmdp` is the tuple (S, U, P, r, n, gamma) with a shared reward. Rewards
//! and transitions are stored curried: one order-n joint-action tensor per
//! state (reward) and per state pair (transition). Generators produce
//! instances whose tensors have known CP rank, which the rank-bound and
//! estimation suites rely on.

use crate::error::{Error, Result};
use crate::tensor::{CpMode, CpTensor, DenseTensor, Shape};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// How a generated instance's transition tensors relate to the rank bound k2.
#[derive(Debug, Clone)]
pub struct MmdpMeta {
    /// Reward rank bound used at generation time, if generated.
    pub k1: Option<usize>,
    /// Transition rank bound used at generation time, if generated.
    pub k2: Option<usize>,
    /// True when the generator guarantees every normalized transition tensor
    /// has exact rank <= k2.
    pub rank_preserved: bool,
    /// Per state: joint-action normalization divided by an action-dependent
    /// factor, which can inflate the exact rank of that state's slices.
    pub transition_rank_inflated: Vec<bool>,
}

impl MmdpMeta {
    fn unknown(num_states: usize) -> Self {
        MmdpMeta {
            k1: None,
            k2: None,
            rank_preserved: false,
            transition_rank_inflated: vec![false; num_states],
        }
    }
}

/// Multi-agent MDP with a factored joint action space U^n.
#[derive(Debug, Clone)]
pub struct Mmdp {
    num_states: usize,
    num_agents: usize,
    actions_per_agent: usize,
    gamma: f64,
    reward: Vec<DenseTensor>,
    transition: Vec<Vec<DenseTensor>>, // [s][s']
    r_bound: f64,
    meta: MmdpMeta,
}

/// Row-sum tolerance for transition stochasticity.
pub const STOCHASTIC_TOL: f64 = 1e-9;

impl Mmdp {
    pub fn new(
        num_agents: usize,
        actions_per_agent: usize,
        gamma: f64,
        reward: Vec<DenseTensor>,
        transition: Vec<Vec<DenseTensor>>,
    ) -> Result<Self> {
        let num_states = reward.len();
        if num_states == 0 {
            return Err(Error::invalid("need at least one state"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma {gamma} not in [0,1)")));
        }
        let shape = Shape::cubic(num_agents, actions_per_agent)?;
        for r in &reward {
            if r.shape() != &shape {
                return Err(Error::shape("reward tensor shape mismatch"));
            }
        }
        if transition.len() != num_states {
            return Err(Error::shape("transition rows != num_states"));
        }
        for row in &transition {
            if row.len() != num_states {
                return Err(Error::shape("transition columns != num_states"));
            }
            for t in row {
                if t.shape() != &shape {
                    return Err(Error::shape("transition tensor shape mismatch"));
                }
            }
        }
        let r_bound = reward.iter().map(DenseTensor::max_abs).fold(0.0, f64::max);
        let m = Mmdp {
            num_states,
            num_agents,
            actions_per_agent,
            gamma,
            reward,
            transition,
            r_bound,
            meta: MmdpMeta::unknown(num_states),
        };
        m.check_stochastic()?;
        Ok(m)
    }

    /// Every (s, u) next-state distribution must be a distribution.
    fn check_stochastic(&self) -> Result<()> {
        for s in 0..self.num_states {
            for flat in 0..self.num_joint_actions() {
                let mut sum = 0.0;
                for sp in 0..self.num_states {
                    let p = self.transition[s][sp].data()[flat];
                    if !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&p) {
                        return Err(Error::invalid(format!(
                            "transition entry {p} out of [0,1] at s={s}, s'={sp}"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::invalid(format!(
                        "next-state mass {sum} != 1 at s={s}, joint action {flat}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn actions_per_agent(&self) -> usize {
        self.actions_per_agent
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_bound(&self) -> f64 {
        self.r_bound
    }

    pub fn meta(&self) -> &MmdpMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: MmdpMeta) {
        self.meta = meta;
    }

    pub fn joint_shape(&self) -> Shape {
        Shape::cubic(self.num_agents, self.actions_per_agent).expect("validated at construction")
    }

    pub fn num_joint_actions(&self) -> usize {
        self.actions_per_agent.pow(self.num_agents as u32)
    }

    pub fn reward(&self, s: usize) -> &DenseTensor {
        &self.reward[s]
    }

    pub fn transition(&self, s: usize, sp: usize) -> &DenseTensor {
        &self.transition[s][sp]
    }

    /// Gamma replaced, dynamics unchanged.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma {gamma} not in [0,1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// A stateless game is the |S| = 1, gamma = 0 special case.
    pub fn from_game(game: &TensorGame) -> Self {
        let shape = game.payoff().shape().clone();
        let ones = DenseTensor::constant(shape, 1.0).expect("finite");
        let mut m = Mmdp::new(
            game.num_agents(),
            game.actions_per_agent(),
            0.0,
            vec![game.payoff().clone()],
            vec![vec![ones]],
        )
        .expect("valid single-state dynamics");
        m.meta = MmdpMeta {
            k1: Some(game.true_rank()),
            k2: Some(1),
            rank_preserved: true,
            transition_rank_inflated: vec![false],
        };
        m
    }
}

/// Per-state, per-agent categorical action distributions. The induced joint
/// tensor is the rank-1 product of the per-agent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredPolicy {
    probs: Vec<Vec<Vec<f64>>>, // [state][agent][action]
}

impl FactoredPolicy {
    pub fn new(probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("policy needs at least one state"));
        }
        let agents = probs[0].len();
        if agents == 0 {
            return Err(Error::invalid("policy needs at least one agent"));
        }
        let actions = probs[0][0].len();
        for state in &probs {
            if state.len() != agents {
                return Err(Error::shape("policy agent count varies by state"));
            }
            for dist in state {
                if dist.len() != actions {
                    return Err(Error::shape("policy action count varies"));
                }
                if dist.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::invalid("policy probabilities must be >= 0"));
                }
                let sum: f64 = dist.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::invalid(format!("policy mass {sum} != 1")));
                }
            }
        }
        Ok(FactoredPolicy { probs })
    }

    pub fn uniform(num_states: usize, num_agents: usize, actions: usize) -> Self {
        let dist = vec![1.0 / actions as f64; actions];
        FactoredPolicy {
            probs: vec![vec![dist; num_agents]; num_states],
        }
    }

    /// Deterministic product policy selecting `joint[s]` in state s.
    pub fn deterministic(actions: usize, joint: &[Vec<usize>]) -> Result<Self> {
        let probs = joint
            .iter()
            .map(|per_agent| {
                per_agent
                    .iter()
                    .map(|&a| {
                        if a >= actions {
                            return Err(Error::invalid(format!("action {a} out of range")));
                        }
                        let mut v = vec![0.0; actions];
                        v[a] = 1.0;
                        Ok(v)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        FactoredPolicy::new(probs)
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_agents(&self) -> usize {
        self.probs[0].len()
    }

    pub fn num_actions(&self) -> usize {
        self.probs[0][0].len()
    }

    pub fn agent_dist(&self, s: usize, agent: usize) -> &[f64] {
        &self.probs[s][agent]
    }

    /// prod_i pi^i(u_i | s)
    pub fn joint_prob(&self, s: usize, joint: &[usize]) -> f64 {
        joint
            .iter()
            .enumerate()
            .map(|(i, &a)| self.probs[s][i][a])
            .product()
    }

    pub fn sample_joint(&self, s: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..self.num_agents())
            .map(|i| sample_categorical(&self.probs[s][i], rng))
            .collect()
    }

    /// Per-agent argmax in each state (ties to the lowest action).
    pub fn greedy_joint(&self, s: usize) -> Vec<usize> {
        self.probs[s]
            .iter()
            .map(|dist| {
                dist.iter()
                    .enumerate()
                    .fold((0usize, f64::MIN), |(bi, bv), (i, &v)| {
                        if v > bv {
                            (i, v)
                        } else {
                            (bi, bv)
                        }
                    })
                    .0
            })
            .collect()
    }
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// The rank-1 joint action tensor of a policy at state s: weight 1, mode-i
/// factor pi^i(.|s). Raw mode: probability vectors are not unit-norm.
pub fn policy_joint_tensor(pi: &FactoredPolicy, s: usize) -> CpTensor {
    let columns: Vec<Vec<Vec<f64>>> = (0..pi.num_agents())
        .map(|i| vec![pi.agent_dist(s, i).to_vec()])
        .collect();
    CpTensor::from_columns(vec![1.0], &columns, CpMode::Raw).expect("valid rank-1 tensor")
}

/// min over states and joint actions of the joint policy mass; the joint
/// tensor factors, so this is a product of per-agent minima.
pub fn min_policy_mass(pi: &FactoredPolicy) -> f64 {
    (0..pi.num_states())
        .map(|s| {
            (0..pi.num_agents())
                .map(|i| {
                    pi.agent_dist(s, i)
                        .iter()
                        .cloned()
                        .fold(f64::MAX, f64::min)
                })
                .product::<f64>()
        })
        .fold(f64::MAX, f64::min)
}

/// Stateless cooperative game whose payoff is a rank-r tensor normalized so
/// the maximum entry is 1. Agents must jointly pick the argmax entry.
#[derive(Debug, Clone)]
pub struct TensorGame {
    num_agents: usize,
    actions_per_agent: usize,
    true_rank: usize,
    payoff: DenseTensor,
    factors: Vec<DMatrix<f64>>,
}

impl TensorGame {
    pub fn new(true_rank: usize, payoff: DenseTensor, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let num_agents = payoff.shape().order();
        let actions_per_agent = payoff.shape().dims()[0];
        if payoff.shape().dims().iter().any(|&d| d != actions_per_agent) {
            return Err(Error::shape("payoff must be cubic"));
        }
        if payoff.data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("payoff entries must be >= 0"));
        }
        let max = payoff.data().iter().cloned().fold(f64::MIN, f64::max);
        if (max - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("maximum payoff entry {max} != 1")));
        }
        Ok(TensorGame { num_agents, actions_per_agent, true_rank, payoff, factors })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn actions_per_agent(&self) -> usize {
        self.actions_per_agent
    }

    pub fn true_rank(&self) -> usize {
        self.true_rank
    }

    pub fn payoff(&self) -> &DenseTensor {
        &self.payoff
    }

    /// Pre-normalization factor matrices (one |U| x r matrix per agent).
    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn payoff_at(&self, joint: &[usize]) -> Result<f64> {
        self.payoff.get(joint)
    }

    /// Joint action with the maximum payoff (ties to the lowest flat index).
    pub fn argmax_entry(&self) -> Vec<usize> {
        let mut best = 0usize;
        let mut best_v = f64::MIN;
        for (i, &v) in self.payoff.data().iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        self.payoff.shape().multi_index(best)
    }
}

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub joint_action: Vec<usize>,
    pub reward: f64,
    pub next_state: usize,
}

/// Fixed-horizon episode: the dataset unit for dynamics estimation.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn abs_gaussian_factors(dims: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let normal = Normal::new(0.0f64, 1.0).expect("valid normal");
    dims.iter()
        .map(|&d| DMatrix::from_fn(d, rank, |_, _| f64::abs(normal.sample(rng))))
        .collect()
}

fn reconstruct_unit_weights(factors: Vec<DMatrix<f64>>) -> DenseTensor {
    let k = factors[0].ncols();
    let cp = CpTensor::new(vec![1.0; k], factors, CpMode::Raw).expect("valid CP tensor");
    crate::tensor::cp_reconstruct(&cp).expect("consistent factors")
}

/// Random MMDP whose reward tensors have exact rank <= k1 and whose
/// transition tensors are built from rank-<= k2 nonnegative CP tensors,
/// jointly normalized per joint action afterwards. The normalization divides
/// by an action-dependent factor, so the normalized slices can exceed rank
/// k2; `meta().transition_rank_inflated` records where. Rewards are scaled
/// into [0, 1] per state.
pub fn generate_low_rank_mmdp(
    num_states: usize,
    num_agents: usize,
    actions: usize,
    k1: usize,
    k2: usize,
    gamma: f64,
    seed: u64,
) -> Result<Mmdp> {
    validate_gen_args(num_states, num_agents, actions, k1, k2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![actions; num_agents];

    let reward = generate_rewards(num_states, &dims, k1, &mut rng);

    let raw: Vec<Vec<DenseTensor>> = (0..num_states)
        .map(|_| {
            (0..num_states)
                .map(|_| reconstruct_unit_weights(abs_gaussian_factors(&dims, k2, &mut rng)))
                .collect()
        })
        .collect();

    let joint: usize = dims.iter().product();
    let mut transition = vec![Vec::with_capacity(num_states); num_states];
    let mut inflated = vec![false; num_states];
    for s in 0..num_states {
        let mut denom = vec![0.0f64; joint];
        for sp in 0..num_states {
            for (d, v) in denom.iter_mut().zip(raw[s][sp].data()) {
                *d += v;
            }
        }
        let dmin = denom.iter().cloned().fold(f64::MAX, f64::min);
        let dmax = denom.iter().cloned().fold(f64::MIN, f64::max);
        // a constant normalizer (or a single state) rescales every slice and
        // keeps rank; anything else may inflate it
        inflated[s] = num_states > 1 && (dmax - dmin) > 1e-12 * dmax.abs();
        for sp in 0..num_states {
            let data = raw[s][sp]
                .data()
                .iter()
                .zip(&denom)
                .map(|(&v, &d)| v / d)
                .collect();
            transition[s].push(DenseTensor::new(Shape::new(dims.clone())?, data)?);
        }
    }

    let mut m = Mmdp::new(num_agents, actions, gamma, reward, transition)?;
    m.meta = MmdpMeta {
        k1: Some(k1),
        k2: Some(k2),
        rank_preserved: false,
        transition_rank_inflated: inflated,
    };
    Ok(m)
}

/// Entry-wise division by the max entry, so the new max is exactly 1.
fn div_by_max(t: &DenseTensor) -> DenseTensor {
    let max = t.data().iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    DenseTensor::new(
        t.shape().clone(),
        t.data().iter().map(|v| v / max).collect(),
    )
    .expect("finite after division")
}

fn generate_rewards(
    num_states: usize,
    dims: &[usize],
    k1: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DenseTensor> {
    (0..num_states)
        .map(|_| div_by_max(&reconstruct_unit_weights(abs_gaussian_factors(dims, k1, rng))))
        .collect()
}

/// Random MMDP whose normalized transition tensors have exact rank <= k2 by
/// construction: P(s,s') = B(s,s') * ones + sum_c A_c(s,s') * G_c(s), where
/// each A_c(s,.) sums to zero over next states. Row sums are exactly one and
/// every slice is a sum of at most k2 rank-1 terms.
pub fn generate_rank_preserved_mmdp(
    num_states: usize,
    num_agents: usize,
    actions: usize,
    k1: usize,
    k2: usize,
    gamma: f64,
    seed: u64,
) -> Result<Mmdp> {
    validate_gen_args(num_states, num_agents, actions, k1, k2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![actions; num_agents];

    let reward = generate_rewards(num_states, &dims, k1, &mut rng);

    let shape = Shape::new(dims.clone())?;
    let mut transition = vec![Vec::new(); num_states];
    for s in 0..num_states {
        // base distribution over next states, bounded away from 0 and 1
        let weights: Vec<f64> = (0..num_states).map(|_| rng.gen_range(0.5..1.5)).collect();
        let wsum: f64 = weights.iter().sum();
        let base: Vec<f64> = weights.iter().map(|w| w / wsum).collect();

        let extra = k2 - 1;
        let mut slices: Vec<DenseTensor> = base
            .iter()
            .map(|&b| DenseTensor::constant(shape.clone(), b).expect("finite"))
            .collect();

        if extra > 0 && num_states > 1 {
            let margin = base
                .iter()
                .map(|&b| b.min(1.0 - b))
                .fold(f64::MAX, f64::min)
                * 0.9;
            for _ in 0..extra {
                // action-dependent rank-1 bump; signed entries keep it well
                // separated from the constant base term, |bump| <= 1
                let factors: Vec<DMatrix<f64>> = dims
                    .iter()
                    .map(|&d| DMatrix::from_fn(d, 1, |_, _| rng.gen_range(-1.0..1.0)))
                    .collect();
                let bump = reconstruct_unit_weights(factors);

                // zero-sum coefficients over next states, forced exact
                let mut coeff: Vec<f64> =
                    (0..num_states).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let partial: f64 = coeff[..num_states - 1].iter().sum();
                coeff[num_states - 1] = -partial;
                let cmax = coeff.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1e-12);
                let scale = margin / (extra as f64) / cmax;
                for (sp, slice) in slices.iter_mut().enumerate() {
                    slice
                        .add_scaled(coeff[sp] * scale, &bump)
                        .expect("same shape");
                }
            }
        }
        transition[s] = slices;
    }

    let mut m = Mmdp::new(num_agents, actions, gamma, reward, transition)?;
    m.meta = MmdpMeta {
        k1: Some(k1),
        k2: Some(k2),
        rank_preserved: true,
        transition_rank_inflated: vec![false; num_states],
    };
    Ok(m)
}

fn validate_gen_args(
    num_states: usize,
    num_agents: usize,
    actions: usize,
    k1: usize,
    k2: usize,
) -> Result<()> {
    if num_states == 0 || num_agents == 0 || actions == 0 {
        return Err(Error::invalid("sizes must be >= 1"));
    }
    if k1 == 0 || k2 == 0 {
        return Err(Error::invalid("rank bounds must be >= 1"));
    }
    Ok(())
}

/// Payoff tensor sampled as a sum of `rank` outer products of per-agent
/// |N(0,1)| vectors (unit weights), then scaled so the max entry is 1.
///
/// For `rank <= actions` the per-mode factor vectors are resampled until
/// linearly independent. Larger ranks are allowed (the exact CP rank of the
/// payoff is then only upper-bounded by `rank`); they are needed to probe
/// model/environment rank mismatch.
pub fn generate_tensor_game(
    num_agents: usize,
    actions: usize,
    rank: usize,
    seed: u64,
) -> Result<TensorGame> {
    if num_agents == 0 || actions == 0 || rank == 0 {
        return Err(Error::invalid("sizes must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![actions; num_agents];

    let factors = loop {
        let candidate = abs_gaussian_factors(&dims, rank, &mut rng);
        if rank > actions || candidate.iter().all(|f| min_singular_value(f) > 1e-9) {
            break candidate;
        }
    };

    let payoff = reconstruct_unit_weights(factors.clone());
    if payoff.data().iter().cloned().fold(f64::MIN, f64::max) <= 0.0 {
        return Err(Error::Internal("degenerate payoff".into()));
    }
    TensorGame::new(rank, div_by_max(&payoff), factors)
}

fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::MAX, f64::min)
}

/// One environment step: next state sampled from P(s,.)[u], reward is the
/// mean-reward entry R(s)[u].
pub fn sample_transition(
    m: &Mmdp,
    s: usize,
    joint: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(usize, f64)> {
    let flat = m.joint_shape().flat_index(joint)?;
    let reward = m.reward(s).data()[flat];
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    let mut next = m.num_states() - 1;
    for sp in 0..m.num_states() {
        acc += m.transition(s, sp).data()[flat];
        if x < acc {
            next = sp;
            break;
        }
    }
    Ok((next, reward))
}

/// Fixed-horizon episode from a given start state; per-agent actions sampled
/// independently from the factored policy.
pub fn rollout_from(
    m: &Mmdp,
    pi: &FactoredPolicy,
    start: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(Error::invalid("rollout length must be >= 1"));
    }
    if start >= m.num_states() {
        return Err(Error::invalid(format!("start state {start} out of range")));
    }
    let mut steps = Vec::with_capacity(len);
    let mut s = start;
    for _ in 0..len {
        let joint = pi.sample_joint(s, rng);
        let (next, reward) = sample_transition(m, s, &joint, rng)?;
        steps.push(Transition { state: s, joint_action: joint, reward, next_state: next });
        s = next;
    }
    Ok(Trajectory { steps })
}

/// Episode rollout with a uniformly random start state.
pub fn rollout(m: &Mmdp, pi: &FactoredPolicy, len: usize, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let start = rng.gen_range(0..m.num_states());
    rollout_from(m, pi, start, len, rng)
}
