//! Dense and CP-factored tensors over factored action spaces.
//!
//! A joint action space with `n` agents and `|U|` actions per agent is the
//! index set of an order-`n` tensor. `DenseTensor` stores all `|U|^n` entries
//! row-major; `CpTensor` stores a rank-`k` sum of vector outer products and
//! supports the `O(n k m)` factored inner product that avoids materializing
//! the dense tensor.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Column-norm tolerance for CP tensors constructed in normalized mode.
pub const NORMALIZED_COLUMN_TOL: f64 = 1e-9;

/// Dimensions of a tensor, one per mode. Every dim is >= 1 and there is at
/// least one mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("shape must have at least one mode"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("every shape dim must be >= 1"));
        }
        Ok(Shape { dims })
    }

    /// Cubic shape `[actions; agents]` used by joint-action tensors.
    pub fn cubic(agents: usize, actions: usize) -> Result<Self> {
        if agents == 0 {
            return Err(Error::invalid("need at least one agent"));
        }
        Shape::new(vec![actions; agents])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Total number of entries (product of dims).
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // dims are all >= 1
    }

    /// Row-major flat offset of a multi-index.
    pub fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.dims.len() {
            return Err(Error::shape(format!(
                "index order {} != tensor order {}",
                idx.len(),
                self.dims.len()
            )));
        }
        let mut flat = 0usize;
        for (m, (&i, &d)) in idx.iter().zip(&self.dims).enumerate() {
            if i >= d {
                return Err(Error::shape(format!("index {i} out of range for mode {m} (dim {d})")));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    /// Inverse of `flat_index`.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dims.len()];
        for m in (0..self.dims.len()).rev() {
            idx[m] = flat % self.dims[m];
            flat /= self.dims[m];
        }
        idx
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.dims.len();
        let mut s = vec![1usize; n];
        for m in (0..n.saturating_sub(1)).rev() {
            s[m] = s[m + 1] * self.dims[m + 1];
        }
        s
    }
}

/// Visits every multi-index of `dims` in row-major order (last mode fastest).
pub fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    loop {
        f(&idx);
        let mut m = dims.len();
        loop {
            if m == 0 {
                return;
            }
            m -= 1;
            idx[m] += 1;
            if idx[m] < dims[m] {
                break;
            }
            idx[m] = 0;
        }
    }
}

/// Dense order-n tensor with row-major flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} != shape volume {}",
                data.len(),
                shape.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor entries must be finite"));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        DenseTensor { shape, data: vec![0.0; n] }
    }

    pub fn constant(shape: Shape, value: f64) -> Result<Self> {
        let n = shape.len();
        Self::new(shape, vec![value; n])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for_each_index(shape.dims(), |idx| data.push(f(idx)));
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.shape.flat_index(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let flat = self.shape.flat_index(idx)?;
        self.data[flat] = value;
        Ok(())
    }

    /// For single-entry tensors (e.g. a full contraction) the scalar value.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "tensor with {} entries is not a scalar",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    /// self += c * other
    pub fn add_scaled(&mut self, c: f64, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_scaled on mismatched shapes"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    pub fn sub(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
        if a.shape != b.shape {
            return Err(Error::shape("sub on mismatched shapes"));
        }
        Ok(DenseTensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// sqrt of the sum of squared entries.
pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Frobenius distance between two same-shape tensors.
pub fn frobenius_distance(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    Ok(frobenius_norm(&DenseTensor::sub(a, b)?))
}

/// Rank-1 tensor from one vector per mode: entry (i_1..i_n) = prod_j v_j[i_j].
pub fn outer_product(vectors: &[&[f64]]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(Error::invalid("outer product of zero vectors"));
    }
    if vectors.iter().any(|v| v.is_empty()) {
        return Err(Error::invalid("outer product with an empty vector"));
    }
    let shape = Shape::new(vectors.iter().map(|v| v.len()).collect())?;
    Ok(DenseTensor::from_fn(shape, |idx| {
        idx.iter().zip(vectors).map(|(&i, v)| v[i]).product()
    }))
}

/// Contraction of `a` and `b` over the paired modes in `shared`.
///
/// The result's modes are the free modes of `a` in order, then the free modes
/// of `b`. A full contraction (no free modes) comes back as a single-entry
/// tensor, see [`DenseTensor::scalar_value`].
pub fn contract(a: &DenseTensor, b: &DenseTensor, shared: &[(usize, usize)]) -> Result<DenseTensor> {
    let mut used_a = vec![false; a.shape.order()];
    let mut used_b = vec![false; b.shape.order()];
    for &(ma, mb) in shared {
        if ma >= a.shape.order() || mb >= b.shape.order() {
            return Err(Error::shape(format!("shared pair ({ma},{mb}) out of range")));
        }
        if used_a[ma] || used_b[mb] {
            return Err(Error::shape(format!("mode repeated in shared pairs: ({ma},{mb})")));
        }
        if a.shape.dims()[ma] != b.shape.dims()[mb] {
            return Err(Error::shape(format!(
                "shared modes ({ma},{mb}) have dims {} != {}",
                a.shape.dims()[ma],
                b.shape.dims()[mb]
            )));
        }
        used_a[ma] = true;
        used_b[mb] = true;
    }

    let free_a: Vec<usize> = (0..a.shape.order()).filter(|&m| !used_a[m]).collect();
    let free_b: Vec<usize> = (0..b.shape.order()).filter(|&m| !used_b[m]).collect();
    let stride_a = a.shape.strides();
    let stride_b = b.shape.strides();

    // Flat offsets contributed by each block of modes, enumerated row-major.
    let offsets = |modes: &[usize], dims: &Shape, strides: &[usize]| -> Vec<usize> {
        let block: Vec<usize> = modes.iter().map(|&m| dims.dims()[m]).collect();
        let mut out = Vec::with_capacity(block.iter().product::<usize>().max(1));
        if modes.is_empty() {
            out.push(0);
            return out;
        }
        for_each_index(&block, |idx| {
            out.push(idx.iter().zip(modes).map(|(&i, &m)| i * strides[m]).sum());
        });
        out
    };

    let off_free_a = offsets(&free_a, &a.shape, &stride_a);
    let off_free_b = offsets(&free_b, &b.shape, &stride_b);
    let shared_a_modes: Vec<usize> = shared.iter().map(|&(m, _)| m).collect();
    let shared_b_modes: Vec<usize> = shared.iter().map(|&(_, m)| m).collect();
    let off_shared_a = offsets(&shared_a_modes, &a.shape, &stride_a);
    let off_shared_b = offsets(&shared_b_modes, &b.shape, &stride_b);

    let mut out_dims: Vec<usize> = free_a.iter().map(|&m| a.shape.dims()[m]).collect();
    out_dims.extend(free_b.iter().map(|&m| b.shape.dims()[m]));
    let scalar_result = out_dims.is_empty();
    if scalar_result {
        out_dims.push(1);
    }
    let out_shape = Shape::new(out_dims)?;

    let mut data = Vec::with_capacity(off_free_a.len() * off_free_b.len());
    for &ba in &off_free_a {
        for &bb in &off_free_b {
            let mut acc = 0.0;
            for (&sa, &sb) in off_shared_a.iter().zip(&off_shared_b) {
                acc += a.data[ba + sa] * b.data[bb + sb];
            }
            data.push(acc);
        }
    }
    DenseTensor::new(out_shape, data)
}

/// Whether factor columns are unit-norm (the decomposition convention) or
/// unconstrained (the training convention, where a sigmoid squash replaces
/// normalization).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpMode {
    Normalized,
    Raw,
}

/// Rank-k CP tensor: weights w_r and per-mode factor matrices whose column r
/// holds the mode's vector for component r.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTensor {
    weights: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
    mode: CpMode,
}

impl CpTensor {
    pub fn new(weights: Vec<f64>, factors: Vec<DMatrix<f64>>, mode: CpMode) -> Result<Self> {
        let t = CpTensor { weights, factors, mode };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::invalid("CP tensor must have rank >= 1"));
        }
        if self.factors.is_empty() {
            return Err(Error::invalid("CP tensor must have order >= 1"));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("CP weights must be finite"));
        }
        for (j, f) in self.factors.iter().enumerate() {
            if f.ncols() != k {
                return Err(Error::shape(format!(
                    "factor {} has {} columns, expected rank {k}",
                    j,
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::shape(format!("factor {j} has zero rows")));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("CP factors must be finite"));
            }
            if self.mode == CpMode::Normalized {
                for r in 0..k {
                    let norm = f.column(r).norm();
                    if (norm - 1.0).abs() > NORMALIZED_COLUMN_TOL {
                        return Err(Error::invalid(format!(
                            "normalized CP tensor has column norm {norm} in mode {j}, rank {r}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Build from one column vector per (mode, component), weights all given.
    pub fn from_columns(weights: Vec<f64>, columns: &[Vec<Vec<f64>>], mode: CpMode) -> Result<Self> {
        // columns[j][r] is the mode-j vector of component r
        let k = weights.len();
        let mut factors = Vec::with_capacity(columns.len());
        for cols in columns {
            if cols.len() != k {
                return Err(Error::shape("component count != weight count"));
            }
            let rows = cols[0].len();
            let mut m = DMatrix::zeros(rows, k);
            for (r, col) in cols.iter().enumerate() {
                if col.len() != rows {
                    return Err(Error::shape("ragged factor columns"));
                }
                for (i, &v) in col.iter().enumerate() {
                    m[(i, r)] = v;
                }
            }
            factors.push(m);
        }
        CpTensor::new(weights, factors, mode)
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn mode(&self) -> CpMode {
        self.mode
    }

    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.factors.iter().map(|f| f.nrows()).collect())
    }

    /// Fold column norms into the weights so every column has unit norm.
    /// Zero columns keep weight zero and get an arbitrary unit column.
    pub fn into_normalized(mut self) -> Result<Self> {
        let k = self.rank();
        for f in &mut self.factors {
            for r in 0..k {
                let norm = f.column(r).norm();
                if norm > 0.0 {
                    let mut col = f.column_mut(r);
                    col /= norm;
                    self.weights[r] *= norm;
                } else {
                    self.weights[r] = 0.0;
                    f[(0, r)] = 1.0;
                }
            }
        }
        self.mode = CpMode::Normalized;
        self.validate()?;
        Ok(self)
    }
}

/// Materializes the CP sum of outer products as a dense tensor.
pub fn cp_reconstruct(t: &CpTensor) -> Result<DenseTensor> {
    let shape = t.shape()?;
    let k = t.rank();
    Ok(DenseTensor::from_fn(shape, |idx| {
        let mut acc = 0.0;
        for r in 0..k {
            let mut prod = t.weights[r];
            for (j, &i) in idx.iter().enumerate() {
                prod *= t.factors[j][(i, r)];
            }
            acc += prod;
        }
        acc
    }))
}

/// Factored inner product `<T, v_1 (x) ... (x) v_n>` in O(n k m):
/// sum_r w_r prod_j <v_j, factor column r of mode j>.
pub fn cp_inner_product(t: &CpTensor, action_vectors: &[&[f64]]) -> Result<f64> {
    if action_vectors.len() != t.order() {
        return Err(Error::shape(format!(
            "{} action vectors for an order-{} tensor",
            action_vectors.len(),
            t.order()
        )));
    }
    for (j, v) in action_vectors.iter().enumerate() {
        if v.len() != t.factors[j].nrows() {
            return Err(Error::shape(format!(
                "action vector {} has length {}, mode dim is {}",
                j,
                v.len(),
                t.factors[j].nrows()
            )));
        }
    }
    let mut acc = 0.0;
    for r in 0..t.rank() {
        let mut prod = t.weights[r];
        for (j, v) in action_vectors.iter().enumerate() {
            let col = t.factors[j].column(r);
            prod *= v.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        acc += prod;
    }
    Ok(acc)
}
