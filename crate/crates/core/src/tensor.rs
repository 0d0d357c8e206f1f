//! Dense tensors and the contraction conventions shared by every estimator.
//!
//! Quadratic coefficients `B_ijk` are stored flattened as an `n x n(n+1)/2`
//! matrix ([`QuadTensor`]). Column `p` of row `i` holds `B_{i,j,k}` for the
//! `p`-th pair `(j, k)` with `j <= k`, enumerated row-major:
//! `(0,0), (0,1), .., (0,n-1), (1,1), .., (n-1,n-1)`. Entries with `j > k`
//! are identically zero and never stored.
//!
//! Products follow these index semantics:
//!
//! * `[B x2 T]_{i..} = sum_{j<=k} B_ijk T_{jk..}` ([`QuadTensor::contract`])
//! * `[A x1 X]_{i..} = sum_j A_ij X_{j..}` ([`Tensor::mode1`])
//! * `[C x0 X]_{i..} = C_i X_{..}` ([`Tensor::outer_vector`])
//! * `Sym(X)_{i1 i2 ..} = X_{i1 i2 ..} + X_{i2 i1 ..}` ([`Tensor::sym`], [`sym`])
//! * `[H x2 B]_{mj} = sum_{k<=l} H_mkl B_jkl` ([`contract_tail_pair`]), i.e.
//!   the trailing pair of `H` meets the quadratic pair of `B` and the output
//!   index of `B` becomes the second index of the result.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of unordered pairs `(j, k)` with `j <= k`.
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Column of pair `(j, k)`, `j <= k`, in the canonical flattened layout.
pub fn pair_index(n: usize, j: usize, k: usize) -> usize {
    debug_assert!(j <= k && k < n);
    j * n - j * (j + 1) / 2 + k
}

/// Pairs `(j, k)` with `j <= k` in canonical column order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |j| (j..n).map(move |k| (j, k)))
}

/// Monomials `x_j x_k` for `j <= k`, in canonical column order.
pub fn quad_features(x: &[f64]) -> DVector<f64> {
    let n = x.len();
    DVector::from_iterator(pair_count(n), pairs(n).map(|(j, k)| x[j] * x[k]))
}

/// `X + X^T`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    m + m.transpose()
}

/// Dense row-major tensor of arbitrary order over `R^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    n: usize,
    order: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, order: usize) -> Self {
        Self {
            n,
            order,
            data: vec![0.0; n.pow(order as u32)],
        }
    }

    pub fn from_vec(n: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n.pow(order as u32) {
            return Err(Error::DimensionMismatch(format!(
                "tensor payload has {} entries, expected {}^{}",
                data.len(),
                n,
                order
            )));
        }
        Ok(Self { n, order, data })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "square matrix required");
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        Self { n, order: 2, data }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            n: v.len(),
            order: 1,
            data: v.iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.order, 2, "to_matrix on order-{} tensor", self.order);
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        assert_eq!(self.order, 1, "to_vector on order-{} tensor", self.order);
        DVector::from_column_slice(&self.data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            n: self.n,
            order: self.order,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(
            (self.n, self.order),
            (other.n, other.order),
            "tensor shape mismatch"
        );
        Tensor {
            n: self.n,
            order: self.order,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, |a, b| a - b)
    }

    /// Swap the first two indices.
    pub fn transpose_first_two(&self) -> Tensor {
        assert!(self.order >= 2);
        let n = self.n;
        let rest = n.pow(self.order as u32 - 2);
        let mut out = vec![0.0; self.data.len()];
        for i in 0..n {
            for j in 0..n {
                let src = (i * n + j) * rest;
                let dst = (j * n + i) * rest;
                out[dst..dst + rest].copy_from_slice(&self.data[src..src + rest]);
            }
        }
        Tensor {
            n,
            order: self.order,
            data: out,
        }
    }

    /// `X_{i1 i2 ..} + X_{i2 i1 ..}`.
    pub fn sym(&self) -> Tensor {
        self.add(&self.transpose_first_two())
    }

    /// `[A x1 X]_{i..} = sum_j A_ij X_{j..}`.
    pub fn mode1(&self, a: &DMatrix<f64>) -> Tensor {
        let n = self.n;
        assert_eq!((a.nrows(), a.ncols()), (n, n), "mode-1 dimension mismatch");
        let rest = n.pow(self.order as u32 - 1);
        let mut out = vec![0.0; self.data.len()];
        for i in 0..n {
            let dst = &mut out[i * rest..(i + 1) * rest];
            for j in 0..n {
                let aij = a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                let src = &self.data[j * rest..(j + 1) * rest];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += aij * s;
                }
            }
        }
        Tensor {
            n,
            order: self.order,
            data: out,
        }
    }

    /// `[c x0 X]_{i..} = c_i X_{..}`; raises the order by one.
    pub fn outer_vector(c: &DVector<f64>, x: &Tensor) -> Tensor {
        let n = c.len();
        assert_eq!(n, x.n, "outer product dimension mismatch");
        let mut data = Vec::with_capacity(n * x.data.len());
        for ci in c.iter() {
            data.extend(x.data.iter().map(|v| ci * v));
        }
        Tensor {
            n,
            order: x.order + 1,
            data,
        }
    }

    /// Largest violation of symmetry under permutations of the indices from
    /// `first` onward (adjacent transpositions generate all permutations).
    pub fn asymmetry_from(&self, first: usize) -> f64 {
        let mut worst: f64 = 0.0;
        let mut idx = vec![0usize; self.order];
        for flat in 0..self.data.len() {
            let mut rem = flat;
            for slot in (0..self.order).rev() {
                idx[slot] = rem % self.n;
                rem /= self.n;
            }
            for a in first..self.order.saturating_sub(1) {
                let mut swapped = idx.clone();
                swapped.swap(a, a + 1);
                worst = worst.max((self.data[flat] - self.get(&swapped)).abs());
            }
        }
        worst
    }
}

/// Quadratic coefficient tensor in the flattened `n x n(n+1)/2` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadTensor {
    data: DMatrix<f64>,
}

impl QuadTensor {
    pub fn zeros(n: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, pair_count(n)),
        }
    }

    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let n = data.nrows();
        if data.ncols() != pair_count(n) {
            return Err(Error::DimensionMismatch(format!(
                "quadratic tensor needs {} columns for n = {}, got {}",
                pair_count(n),
                n,
                data.ncols()
            )));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = pair_count(n);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "every quadratic row needs {p} entries for n = {n}"
            )));
        }
        Ok(Self {
            data: DMatrix::from_fn(n, p, |i, c| rows[i][c]),
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| self.data.row(i).iter().copied().collect())
            .collect()
    }

    /// `B_ijk`, zero below the diagonal of the `(j, k)` block.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        if j > k {
            0.0
        } else {
            self.data[(i, pair_index(self.n(), j, k))]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        assert!(j <= k, "only j <= k entries are stored");
        let n = self.n();
        self.data[(i, pair_index(n, j, k))] = value;
    }

    /// Full `n x n x n` tensor with zeros where `j > k`.
    pub fn unflatten(&self) -> Tensor {
        let n = self.n();
        let mut t = Tensor::zeros(n, 3);
        for i in 0..n {
            for (p, (j, k)) in pairs(n).enumerate() {
                t.set(&[i, j, k], self.data[(i, p)]);
            }
        }
        t
    }

    /// Inverse of [`QuadTensor::unflatten`]; entries with `j > k` must vanish.
    pub fn flatten(full: &Tensor) -> Result<Self> {
        if full.order() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected an order-3 tensor, got order {}",
                full.order()
            )));
        }
        let n = full.n();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = full.get(&[i, j, k]);
                    if j <= k {
                        out.set(i, j, k, v);
                    } else if v != 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "lower-triangular entry B[{i},{j},{k}] = {v} must be zero"
                        )));
                    }
                }
            }
        }
        Ok(out)
    }

    /// `[B x2 T]_{i..} = sum_{j<=k} B_ijk T_{jk..}` for a tensor of order >= 2.
    pub fn contract(&self, t: &Tensor) -> Result<Tensor> {
        let n = self.n();
        if t.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "contraction of n = {} tensor with n = {} quadratic tensor",
                t.n(),
                n
            )));
        }
        if t.order() < 2 {
            return Err(Error::DimensionMismatch(
                "contraction needs a tensor of order >= 2".into(),
            ));
        }
        let rest = n.pow(t.order() as u32 - 2);
        let mut out = vec![0.0; n * rest];
        for i in 0..n {
            let dst = &mut out[i * rest..(i + 1) * rest];
            for (p, (j, k)) in pairs(n).enumerate() {
                let b = self.data[(i, p)];
                if b == 0.0 {
                    continue;
                }
                let off = (j * n + k) * rest;
                for (d, s) in dst.iter_mut().zip(&t.data()[off..off + rest]) {
                    *d += b * s;
                }
            }
        }
        Tensor::from_vec(n, t.order() - 1, out)
    }

    pub fn contract_matrix(&self, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.contract(&Tensor::from_matrix(m))?.to_vector())
    }

    pub fn contract3(&self, t: &Tensor) -> Result<DMatrix<f64>> {
        Ok(self.contract(t)?.to_matrix())
    }
}

/// `[H x2 B]_{mj} = sum_{k<=l} H_mkl B_jkl` for an order-3 `H`.
pub fn contract_tail_pair(h: &Tensor, b: &QuadTensor) -> Result<DMatrix<f64>> {
    let n = b.n();
    if h.order() != 3 || h.n() != n {
        return Err(Error::DimensionMismatch(
            "tail-pair contraction needs an order-3 tensor matching B".into(),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |m, j| {
        pairs(n)
            .enumerate()
            .map(|(p, (k, l))| h.get(&[m, k, l]) * b.as_matrix()[(j, p)])
            .sum()
    }))
}
