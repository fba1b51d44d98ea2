//! Rank-k CP-factored joint critic.
//!
//! The effective factor entry for (agent i, component r, action a) is
//! `c * sigmoid(raw)`, so it stays in (0, c) for all finite raw parameters;
//! the squash replaces the unit-norm convention during training. Action
//! values are evaluated in factored form, never through a dense
//! reconstruction, and are clipped from above at `r_max`.

use crate::error::{Error, Result};
use crate::tensor::{CpMode, CpTensor};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct CriticParams {
    /// Component weights, learnable, initialised to 1.
    pub weights: Vec<f64>,
    /// Pre-squash factor tables, one |U| x k matrix per agent.
    pub raw_factors: Vec<DMatrix<f64>>,
    /// Squash scale c.
    pub squash_scale: f64,
    /// Upper clip for action-value estimates.
    pub r_max: f64,
}

impl CriticParams {
    /// Raw factors drawn from N(0, init_std^2), weights 1.
    pub fn init(
        agents: usize,
        actions: usize,
        rank: usize,
        squash_scale: f64,
        r_max: f64,
        init_std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if agents == 0 || actions == 0 || rank == 0 {
            return Err(Error::invalid("critic sizes must be >= 1"));
        }
        let normal = Normal::new(0.0, init_std).map_err(|_| Error::invalid("bad init std"))?;
        let raw_factors = (0..agents)
            .map(|_| DMatrix::from_fn(actions, rank, |_, _| normal.sample(rng)))
            .collect();
        Ok(CriticParams {
            weights: vec![1.0; rank],
            raw_factors,
            squash_scale,
            r_max,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.raw_factors.len()
    }

    pub fn num_actions(&self) -> usize {
        self.raw_factors[0].nrows()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn effective(&self, agent: usize, action: usize, r: usize) -> f64 {
        self.squash_scale * sigmoid(self.raw_factors[agent][(action, r)])
    }

    /// sum_r w_r prod_i effective(i, u_i, r), no clip.
    pub fn q_preclip(&self, joint: &[usize]) -> Result<f64> {
        if joint.len() != self.num_agents() {
            return Err(Error::shape("joint action arity mismatch"));
        }
        let mut acc = 0.0;
        for r in 0..self.rank() {
            let mut prod = self.weights[r];
            for (i, &a) in joint.iter().enumerate() {
                if a >= self.num_actions() {
                    return Err(Error::invalid(format!("action {a} out of range")));
                }
                prod *= self.effective(i, a, r);
            }
            acc += prod;
        }
        Ok(acc)
    }

    /// min(q_preclip, r_max).
    pub fn q(&self, joint: &[usize]) -> Result<f64> {
        Ok(self.q_preclip(joint)?.min(self.r_max))
    }

    /// The effective factors as a raw-mode CP tensor (oracle hook: indexing
    /// its reconstruction must match `q_preclip`).
    pub fn effective_cp(&self) -> Result<CpTensor> {
        let factors = self
            .raw_factors
            .iter()
            .map(|f| f.map(|x| self.squash_scale * sigmoid(x)))
            .collect();
        CpTensor::new(self.weights.clone(), factors, CpMode::Raw)
    }

    pub(crate) fn param_count(&self) -> usize {
        self.rank() + self.num_agents() * self.num_actions() * self.rank()
    }

    pub(crate) fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.weights);
        for f in &self.raw_factors {
            out.extend(f.iter());
        }
        out
    }

    pub(crate) fn unflatten_into(&mut self, flat: &[f64]) {
        let k = self.rank();
        self.weights.copy_from_slice(&flat[..k]);
        let mut off = k;
        for f in &mut self.raw_factors {
            for v in f.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
    }
}

/// Gradient of the mean squared TD loss over a batch.
#[derive(Debug, Clone)]
pub struct CriticGrad {
    pub d_weights: Vec<f64>,
    pub d_raw_factors: Vec<DMatrix<f64>>,
}

impl CriticGrad {
    pub(crate) fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.d_weights.len());
        out.extend_from_slice(&self.d_weights);
        for f in &self.d_raw_factors {
            out.extend(f.iter());
        }
        out
    }
}

/// d/d params of (1/B) sum_b (clip(Q(u_b)) - y_b)^2. Samples whose value is
/// clipped contribute zero gradient.
pub fn critic_grad(p: &CriticParams, batch: &[(Vec<usize>, f64)]) -> Result<CriticGrad> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let k = p.rank();
    let n = p.num_agents();
    let mut d_weights = vec![0.0; k];
    let mut d_raw: Vec<DMatrix<f64>> =
        (0..n).map(|_| DMatrix::zeros(p.num_actions(), k)).collect();
    let scale = 1.0 / batch.len() as f64;

    let mut eff = vec![0.0; n];
    for (joint, target) in batch {
        let q = p.q_preclip(joint)?;
        if q >= p.r_max {
            continue; // clip active
        }
        let dl_dq = 2.0 * (q - target) * scale;
        for r in 0..k {
            for (i, &a) in joint.iter().enumerate() {
                eff[i] = p.effective(i, a, r);
            }
            let full: f64 = eff.iter().product();
            d_weights[r] += dl_dq * full;
            for (i, &a) in joint.iter().enumerate() {
                let others: f64 = full / eff[i];
                // d eff / d raw = eff * (1 - eff / c)
                let d_eff = eff[i] * (1.0 - eff[i] / p.squash_scale);
                d_raw[i][(a, r)] += dl_dq * p.weights[r] * others * d_eff;
            }
        }
    }
    Ok(CriticGrad { d_weights, d_raw_factors: d_raw })
}
