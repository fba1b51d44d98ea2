//! CP decomposition by alternating least squares, for fully and partially
//! observed tensors.
//!
//! One masked, count-weighted ALS engine backs both entry points:
//! `als_decompose` runs it with the full grid observed, `complete_from_samples`
//! with whatever entries a dataset provides. Sub-solves are k x k ridge
//! systems, so degenerate masks damp to zero instead of crashing. Also here:
//! a heuristic rank probe and the cluster-based confidence booster used when
//! combining repeated noisy estimates.

use crate::error::{Error, Result};
use crate::tensor::{frobenius_distance, CpMode, CpTensor, DenseTensor, Shape};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Ridge damping added to every least-squares sub-solve.
const RIDGE: f64 = 1e-9;

/// Settings for the ALS solver. `tol` is the relative residual at which
/// sweeps stop early.
#[derive(Debug, Clone)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_sweeps: usize,
    pub restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

impl AlsConfig {
    pub fn new(rank: usize, seed: u64) -> Self {
        AlsConfig { rank, max_sweeps: 300, restarts: 5, tol: 1e-9, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank < 1 {
            return Err(Error::invalid("rank must be >= 1"));
        }
        if self.max_sweeps < 1 || self.restarts < 1 {
            return Err(Error::invalid("max_sweeps and restarts must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        Ok(())
    }
}

/// Sampled tensor entries: multi-index, value, and how often it was observed.
/// Repeated observations enter the fit as least-squares weights.
#[derive(Debug, Clone)]
pub struct ObservedEntries {
    shape: Shape,
    indices: Vec<Vec<usize>>,
    values: Vec<f64>,
    counts: Vec<u64>,
    seen: HashMap<usize, usize>, // flat index -> position
}

impl ObservedEntries {
    pub fn new(shape: Shape) -> Self {
        ObservedEntries {
            shape,
            indices: Vec::new(),
            values: Vec::new(),
            counts: Vec::new(),
            seen: HashMap::new(),
        }
    }

    pub fn add(&mut self, idx: &[usize], value: f64, count: u64) -> Result<()> {
        let flat = self.shape.flat_index(idx)?;
        if !value.is_finite() {
            return Err(Error::invalid("observed value must be finite"));
        }
        if count == 0 {
            return Err(Error::invalid("observation count must be >= 1"));
        }
        if self.seen.contains_key(&flat) {
            return Err(Error::invalid(format!("duplicate observation at {idx:?}")));
        }
        self.seen.insert(flat, self.indices.len());
        self.indices.push(idx.to_vec());
        self.values.push(value);
        self.counts.push(count);
        Ok(())
    }

    /// Every entry of a dense tensor, observed once.
    pub fn from_dense(t: &DenseTensor) -> Self {
        let mut obs = ObservedEntries::new(t.shape().clone());
        crate::tensor::for_each_index(t.shape().dims(), |idx| {
            let v = t.get(idx).expect("in-range index");
            obs.add(idx, v, 1).expect("no duplicates in grid walk");
        });
        obs
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64, u64)> {
        self.indices
            .iter()
            .zip(&self.values)
            .zip(&self.counts)
            .map(|((i, &v), &c)| (i.as_slice(), v, c))
    }

    /// (mode, index) pairs that no observation touches. Those factor rows are
    /// unidentified and the fit damps them to zero.
    pub fn uncovered(&self) -> Vec<(usize, usize)> {
        let dims = self.shape.dims();
        let mut hit: Vec<Vec<bool>> = dims.iter().map(|&d| vec![false; d]).collect();
        for idx in &self.indices {
            for (j, &i) in idx.iter().enumerate() {
                hit[j][i] = true;
            }
        }
        let mut out = Vec::new();
        for (j, modes) in hit.iter().enumerate() {
            for (i, &h) in modes.iter().enumerate() {
                if !h {
                    out.push((j, i));
                }
            }
        }
        out
    }
}

/// Result of a masked fit.
#[derive(Debug, Clone)]
pub struct Completion {
    pub cp: CpTensor,
    /// Weighted relative residual on the observed entries.
    pub residual: f64,
    /// (mode, index) pairs with zero observations; their slices are
    /// unidentified and reconstruct as zero.
    pub degenerate: Vec<(usize, usize)>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Independent stream for restart `r` of a run keyed by `seed`.
fn restart_rng(seed: u64, restart: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(restart.wrapping_add(1))))
}

fn init_factors(dims: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    dims.iter()
        .map(|&d| {
            let mut f = DMatrix::from_fn(d, rank, |_, _| rng.gen_range(-1.0..1.0));
            for r in 0..rank {
                let norm = f.column(r).norm();
                if norm > 0.0 {
                    let mut col = f.column_mut(r);
                    col /= norm;
                }
            }
            f
        })
        .collect()
}

/// One ALS pass over the observations with the current factors, solving each
/// factor row as an independent weighted ridge system.
fn sweep(obs: &ObservedEntries, factors: &mut [DMatrix<f64>], rank: usize) {
    let order = factors.len();
    let mut kr = vec![0.0; rank];
    for j in 0..order {
        let rows = factors[j].nrows();
        let mut grams = vec![DMatrix::<f64>::zeros(rank, rank); rows];
        let mut rhs = vec![DVector::<f64>::zeros(rank); rows];
        for (idx, v, c) in obs.iter() {
            let w = c as f64;
            for item in kr.iter_mut() {
                *item = 1.0;
            }
            for (m, &i) in idx.iter().enumerate() {
                if m == j {
                    continue;
                }
                for r in 0..rank {
                    kr[r] *= factors[m][(i, r)];
                }
            }
            let row = idx[j];
            let g = &mut grams[row];
            let b = &mut rhs[row];
            for a in 0..rank {
                let wka = w * kr[a];
                b[a] += wka * v;
                for bcol in a..rank {
                    g[(a, bcol)] += wka * kr[bcol];
                }
            }
        }
        for row in 0..rows {
            let g = &mut grams[row];
            for a in 0..rank {
                for b in 0..a {
                    g[(a, b)] = g[(b, a)];
                }
                g[(a, a)] += RIDGE;
            }
            let solved = Cholesky::new(g.clone())
                .map(|ch| ch.solve(&rhs[row]))
                .unwrap_or_else(|| {
                    g.clone().lu().solve(&rhs[row]).unwrap_or_else(|| DVector::zeros(rank))
                });
            for r in 0..rank {
                factors[j][(row, r)] = solved[r];
            }
        }
    }
}

fn observed_residual(obs: &ObservedEntries, factors: &[DMatrix<f64>]) -> f64 {
    let rank = factors[0].ncols();
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, v, c) in obs.iter() {
        let w = c as f64;
        let mut rec = 0.0;
        for r in 0..rank {
            let mut prod = 1.0;
            for (m, &i) in idx.iter().enumerate() {
                prod *= factors[m][(i, r)];
            }
            rec += prod;
        }
        num += w * (v - rec) * (v - rec);
        den += w * v * v;
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn fit_once(obs: &ObservedEntries, cfg: &AlsConfig, rng: &mut ChaCha8Rng) -> (Vec<DMatrix<f64>>, f64) {
    let mut factors = init_factors(obs.shape().dims(), cfg.rank, rng);
    let mut res = observed_residual(obs, &factors);
    for _ in 0..cfg.max_sweeps {
        sweep(obs, &mut factors, cfg.rank);
        let next = observed_residual(obs, &factors);
        let stalled = (res - next).abs() < 1e-12 * res.max(1.0);
        res = next;
        if res <= cfg.tol || stalled {
            break;
        }
    }
    (factors, res)
}

/// Masked, count-weighted CP fit of sampled entries. Deterministic for a
/// given seed; the best of `cfg.restarts` independent starts is returned
/// (ties to the lower restart index).
pub fn complete_from_samples(obs: &ObservedEntries, cfg: &AlsConfig) -> Result<Completion> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(Error::invalid("no observed entries"));
    }
    let mut best: Option<(Vec<DMatrix<f64>>, f64)> = None;
    for restart in 0..cfg.restarts {
        let mut rng = restart_rng(cfg.seed, restart as u64);
        let (factors, res) = fit_once(obs, cfg, &mut rng);
        if best.as_ref().map_or(true, |(_, b)| res < *b) {
            best = Some((factors, res));
        }
    }
    let (factors, residual) = best.expect("restarts >= 1");
    let cp = CpTensor::new(vec![1.0; cfg.rank], factors, CpMode::Raw)?.into_normalized()?;
    Ok(Completion { cp, residual, degenerate: obs.uncovered() })
}

/// Rank-k ALS fit of a fully observed tensor. Returns the decomposition and
/// the relative residual `||t - rec||_F / max(||t||_F, 1e-12)`.
pub fn als_decompose(t: &DenseTensor, cfg: &AlsConfig) -> Result<(CpTensor, f64)> {
    cfg.validate()?;
    if t.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("tensor entries must be finite"));
    }
    let obs = ObservedEntries::from_dense(t);
    let completion = complete_from_samples(&obs, cfg)?;
    // With the full grid observed and unit counts, the observed residual is
    // exactly the relative Frobenius residual.
    Ok((completion.cp, completion.residual))
}

/// Smallest k <= max_rank whose ALS fit reaches `tol`, else `max_rank + 1`.
///
/// Determining exact CP rank is NP-hard; this is a heuristic upper-bound
/// probe and inherits ALS's local-minimum caveats.
pub fn approx_rank(t: &DenseTensor, tol: f64, max_rank: usize, cfg: &AlsConfig) -> Result<usize> {
    if max_rank < 1 {
        return Err(Error::invalid("max_rank must be >= 1"));
    }
    for k in 1..=max_rank {
        let mut probe = cfg.clone();
        probe.rank = k;
        let (_, res) = als_decompose(t, &probe)?;
        if res <= tol {
            return Ok(k);
        }
    }
    Ok(max_rank + 1)
}

/// Picks a representative from the biggest cluster of repeated estimates.
///
/// The cluster is the largest subset whose members are pairwise within
/// `2*eps/3` in Frobenius distance; ties go to the lexicographically first
/// such subset and the returned member is its lowest index. When a majority
/// of estimates lies within `eps/3` of the truth, the winner is within `eps`.
pub fn boosted_estimate(estimates: &[DenseTensor], eps: f64) -> Result<DenseTensor> {
    if estimates.is_empty() {
        return Err(Error::invalid("no estimates to boost"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    let m = estimates.len();
    for e in &estimates[1..] {
        if e.shape() != estimates[0].shape() {
            return Err(Error::shape("estimates must share one shape"));
        }
    }
    let threshold = 2.0 * eps / 3.0;
    let mut adj = vec![vec![false; m]; m];
    for i in 0..m {
        adj[i][i] = true;
        for j in i + 1..m {
            let close = frobenius_distance(&estimates[i], &estimates[j])? <= threshold;
            adj[i][j] = close;
            adj[j][i] = close;
        }
    }

    // Exact maximum clique; vertices are tried in increasing order so the
    // first clique found at the record size is the lexicographically first.
    fn extend(
        adj: &[Vec<bool>],
        current: &mut Vec<usize>,
        candidates: &[usize],
        best: &mut Vec<usize>,
    ) {
        if current.len() > best.len() {
            *best = current.clone();
        }
        if current.len() + candidates.len() <= best.len() {
            return;
        }
        for (pos, &v) in candidates.iter().enumerate() {
            if current.len() + (candidates.len() - pos) <= best.len() {
                break;
            }
            let next: Vec<usize> = candidates[pos + 1..]
                .iter()
                .copied()
                .filter(|&u| adj[v][u])
                .collect();
            current.push(v);
            extend(adj, current, &next, best);
            current.pop();
        }
    }

    let all: Vec<usize> = (0..m).collect();
    let mut best = Vec::new();
    extend(&adj, &mut Vec::new(), &all, &mut best);
    Ok(estimates[best[0]].clone())
}

/// Coherence and weight spread of a normalized CP decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceStats {
    /// sqrt(order) times the largest absolute factor entry. Low coherence
    /// means the tensor's mass is spread evenly.
    pub mu: f64,
    pub w_max: f64,
    pub w_min: f64,
}

pub fn coherence(t: &CpTensor) -> Result<CoherenceStats> {
    if t.mode() != CpMode::Normalized {
        return Err(Error::invalid("coherence is defined for normalized CP tensors"));
    }
    let max_entry = t
        .factors()
        .iter()
        .flat_map(|f| f.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mu = (t.order() as f64).sqrt() * max_entry;
    let w_max = t.weights().iter().cloned().fold(f64::MIN, f64::max);
    let w_min = t.weights().iter().cloned().fold(f64::MAX, f64::min);
    Ok(CoherenceStats { mu, w_max, w_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{cp_reconstruct, frobenius_norm, outer_product};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Exact rank-k tensor with unit weights and random factors.
    fn synthetic(dims: &[usize], k: usize, r: &mut ChaCha8Rng) -> DenseTensor {
        let factors: Vec<DMatrix<f64>> = dims
            .iter()
            .map(|&d| DMatrix::from_fn(d, k, |_, _| r.gen_range(-1.0..1.0)))
            .collect();
        let cp = CpTensor::new(vec![1.0; k], factors, CpMode::Raw).unwrap();
        cp_reconstruct(&cp).unwrap()
    }

    #[test]
    fn recovers_exact_rank2() {
        let mut r = rng(4);
        let t = synthetic(&[4, 4, 4], 2, &mut r);
        let (_, res) = als_decompose(&t, &AlsConfig::new(2, 99)).unwrap();
        assert!(res < 1e-6, "residual {res}");
    }

    #[test]
    fn zero_tensor_fits_exactly_with_zero_weights() {
        let t = DenseTensor::zeros(Shape::new(vec![3, 3]).unwrap());
        let (cp, res) = als_decompose(&t, &AlsConfig::new(2, 1)).unwrap();
        assert_eq!(res, 0.0);
        assert!(cp.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn underranked_fit_is_worse() {
        let mut r = rng(8);
        let t = synthetic(&[5, 5, 5], 3, &mut r);
        let (_, res1) = als_decompose(&t, &AlsConfig::new(1, 42)).unwrap();
        let (_, res3) = als_decompose(&t, &AlsConfig::new(3, 42)).unwrap();
        assert!(res1 > res3);
        assert!(res3 < 1e-5);
    }

    #[test]
    fn decompose_is_deterministic() {
        let mut r = rng(12);
        let t = synthetic(&[4, 3, 4], 2, &mut r);
        let cfg = AlsConfig::new(2, 7);
        let (a, ra) = als_decompose(&t, &cfg).unwrap();
        let (b, rb) = als_decompose(&t, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.factors(), b.factors());
    }

    #[test]
    fn full_observation_reduces_to_decompose() {
        let mut r = rng(16);
        let t = synthetic(&[4, 4], 1, &mut r);
        let obs = ObservedEntries::from_dense(&t);
        let cfg = AlsConfig::new(1, 5);
        let completion = complete_from_samples(&obs, &cfg).unwrap();
        let (cp, res) = als_decompose(&t, &cfg).unwrap();
        assert!(res < 1e-6);
        assert!(completion.degenerate.is_empty());
        let a = cp_reconstruct(&completion.cp).unwrap();
        let b = cp_reconstruct(&cp).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10);
        }
        let grid = frobenius_distance(&a, &t).unwrap() / frobenius_norm(&t);
        assert!(grid < 1e-6);
    }

    #[test]
    fn single_entry_rank1_fits_it() {
        let shape = Shape::new(vec![3, 3, 3]).unwrap();
        let mut obs = ObservedEntries::new(shape);
        obs.add(&[1, 2, 0], 0.7, 1).unwrap();
        let completion = complete_from_samples(&obs, &AlsConfig::new(1, 3)).unwrap();
        let rec = cp_reconstruct(&completion.cp).unwrap();
        assert!((rec.get(&[1, 2, 0]).unwrap() - 0.7).abs() < 1e-6);
        // every other mode index is uncovered
        assert_eq!(completion.degenerate.len(), 6);
    }

    #[test]
    fn partial_observation_recovers_held_out_entries() {
        let mut r = rng(21);
        let t = synthetic(&[6, 6, 6], 2, &mut r);
        let shape = t.shape().clone();
        let mut obs = ObservedEntries::new(shape.clone());
        let mut held_out = Vec::new();
        crate::tensor::for_each_index(shape.dims(), |idx| {
            if r.gen_bool(0.6) {
                obs.add(idx, t.get(idx).unwrap(), 1).unwrap();
            } else {
                held_out.push(idx.to_vec());
            }
        });
        let completion = complete_from_samples(&obs, &AlsConfig::new(2, 77)).unwrap();
        let rec = cp_reconstruct(&completion.cp).unwrap();
        let mse: f64 = held_out
            .iter()
            .map(|idx| (rec.get(idx).unwrap() - t.get(idx).unwrap()).powi(2))
            .sum::<f64>()
            / held_out.len() as f64;
        assert!(mse.sqrt() < 1e-3, "held-out rmse {}", mse.sqrt());
    }

    #[test]
    fn counts_weight_the_fit() {
        // one over-determined row: two conflicting values for the same slice
        let shape = Shape::new(vec![2, 1]).unwrap();
        let mut obs = ObservedEntries::new(shape);
        obs.add(&[0, 0], 1.0, 9).unwrap();
        obs.add(&[1, 0], 0.0, 1).unwrap();
        let completion = complete_from_samples(&obs, &AlsConfig::new(1, 1)).unwrap();
        let rec = cp_reconstruct(&completion.cp).unwrap();
        // exact interpolation is possible here, weights or not
        assert!((rec.get(&[0, 0]).unwrap() - 1.0).abs() < 1e-6);
        assert!(rec.get(&[1, 0]).unwrap().abs() < 1e-6);
    }

    #[test]
    fn duplicate_observations_rejected() {
        let shape = Shape::new(vec![2, 2]).unwrap();
        let mut obs = ObservedEntries::new(shape);
        obs.add(&[0, 1], 1.0, 1).unwrap();
        assert!(obs.add(&[0, 1], 2.0, 1).is_err());
    }

    #[test]
    fn boosted_single_estimate_is_identity() {
        let t = outer_product(&[&[1.0, 2.0], &[0.5, 1.0]]).unwrap();
        let out = boosted_estimate(std::slice::from_ref(&t), 0.1).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn boosted_picks_majority_cluster() {
        let eps = 0.3;
        let truth = outer_product(&[&[1.0, 0.0], &[1.0, 1.0]]).unwrap();
        let mut estimates = Vec::new();
        // outliers first so index order alone cannot win
        for _ in 0..2 {
            let mut far = truth.clone();
            far.data_mut()[0] += 10.0 * eps;
            estimates.push(far);
        }
        for i in 0..5 {
            let mut near = truth.clone();
            near.data_mut()[1] += eps / 10.0 * (i as f64 / 5.0);
            estimates.push(near);
        }
        let out = boosted_estimate(&estimates, eps).unwrap();
        assert!(frobenius_distance(&out, &truth).unwrap() <= eps);
    }

    #[test]
    fn boosted_degenerate_all_far_returns_first() {
        let eps = 0.01;
        let mut estimates = Vec::new();
        for i in 0..4 {
            let v = [1.0 + i as f64, 0.0];
            estimates.push(outer_product(&[&v, &[1.0, 1.0]]).unwrap());
        }
        let out = boosted_estimate(&estimates, eps).unwrap();
        assert_eq!(out, estimates[0]);
    }

    #[test]
    fn boosted_majority_within_third_eps_lands_within_eps() {
        let mut r = rng(33);
        for trial in 0..10 {
            let eps = 0.5;
            let truth = synthetic(&[3, 3], 2, &mut r);
            let m = 7;
            let good = 4; // > m/2
            let mut estimates = Vec::new();
            for i in 0..m {
                let mut e = truth.clone();
                if i < good {
                    let bump = eps / 3.0 * r.gen_range(0.0..0.9);
                    e.data_mut()[0] += bump;
                } else {
                    e.data_mut()[0] += 5.0 * eps + r.gen_range(0.0..1.0);
                }
                estimates.push(e);
            }
            // rotate so the good ones are not always first
            estimates.rotate_left(trial % m);
            let out = boosted_estimate(&estimates, eps).unwrap();
            assert!(frobenius_distance(&out, &truth).unwrap() <= eps);
        }
    }

    #[test]
    fn approx_rank_on_synthetic_tensors() {
        let mut r = rng(55);
        let rank1 = synthetic(&[4, 4, 4], 1, &mut r);
        let cfg = AlsConfig::new(1, 13);
        assert_eq!(approx_rank(&rank1, 1e-6, 4, &cfg).unwrap(), 1);

        let zero = DenseTensor::zeros(Shape::new(vec![3, 3]).unwrap());
        assert_eq!(approx_rank(&zero, 1e-6, 3, &cfg).unwrap(), 1);

        let rank3 = synthetic(&[5, 5, 5], 3, &mut r);
        assert_eq!(approx_rank(&rank3, 1e-6, 2, &cfg).unwrap(), 3); // sentinel
    }

    #[test]
    fn approx_rank_monotone_in_tol() {
        let mut r = rng(60);
        let t = synthetic(&[4, 4], 2, &mut r);
        let cfg = AlsConfig::new(1, 21);
        let loose = approx_rank(&t, 1e-2, 4, &cfg).unwrap();
        let tight = approx_rank(&t, 1e-8, 4, &cfg).unwrap();
        assert!(loose <= tight);
    }

    #[test]
    fn coherence_closed_forms() {
        let u = 4usize;
        let col = vec![1.0 / (u as f64).sqrt(); u];
        let t = CpTensor::from_columns(vec![1.0], &[vec![col.clone()], vec![col]], CpMode::Normalized)
            .unwrap();
        let stats = coherence(&t).unwrap();
        assert!((stats.mu - (2.0f64).sqrt() / 2.0).abs() < 1e-12);

        let one_hot = vec![1.0, 0.0, 0.0];
        let spread = vec![1.0 / (3.0f64).sqrt(); 3];
        let t = CpTensor::from_columns(
            vec![3.0, 1.0],
            &[
                vec![one_hot.clone(), spread.clone()],
                vec![spread.clone(), spread.clone()],
                vec![spread.clone(), spread],
            ],
            CpMode::Normalized,
        )
        .unwrap();
        let stats = coherence(&t).unwrap();
        assert!((stats.mu - (3.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(stats.w_max, 3.0);
        assert_eq!(stats.w_min, 1.0);
    }

    #[test]
    fn coherence_rejects_raw_mode() {
        let t = CpTensor::from_columns(vec![1.0], &[vec![vec![2.0, 0.0]]], CpMode::Raw).unwrap();
        assert!(coherence(&t).is_err());
    }

    #[test]
    fn recovery_rate_smoke() {
        // small version of the acceptance-scale recovery sweep
        let mut r = rng(71);
        let mut ok = 0;
        let trials = 20;
        for i in 0..trials {
            let n = r.gen_range(2..=4);
            let k = r.gen_range(1..=3);
            let dims: Vec<usize> = (0..n).map(|_| r.gen_range(2..=8).max(k)).collect();
            let t = synthetic(&dims, k, &mut r);
            let (_, res) = als_decompose(&t, &AlsConfig::new(k, 1000 + i)).unwrap();
            if res < 1e-5 {
                ok += 1;
            }
        }
        assert!(ok * 100 >= trials * 90, "recovered {ok}/{trials}");
    }
}
