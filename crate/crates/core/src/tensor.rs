//! Dense real tensors in a fixed row-major layout, together with the handful
//! of operations every network routine is built from: permutation, pairwise
//! contraction, truncated SVD across a bipartition, thin QR, and the
//! exponential of a symmetric matrix.
//!
//! Contractions are lowered to a single GEMM after permuting both operands,
//! so the cost of a call is dominated by the two permutations plus one
//! matrix product. Call sites choose the contraction order by hand.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Dense real tensor. Element `(i_0, .., i_{n-1})` lives at
/// `sum_k i_k * stride_k` with row-major strides (last index fastest).
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("labels", &self.labels)
            .field("norm", &self.norm())
            .finish()
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(TensorError::Argument(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TensorError::Dimension(format!(
                "shape {shape:?} holds {len} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data, labels: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len], labels: None }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major
    /// order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { shape: shape.to_vec(), data, labels: None }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self { shape: vec![r, c], data, labels: None }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(&[n, n], |i| if i[0] == i[1] { values[i[0]] } else { 0.0 })
    }

    /// Attaches index names. Names must be unique and one per index.
    pub fn with_labels<S: Into<String>>(mut self, labels: Vec<S>) -> TensorResult<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != self.shape.len() {
            return Err(TensorError::Argument(format!(
                "{} labels for a rank-{} tensor",
                labels.len(),
                self.shape.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(TensorError::Argument(format!("duplicate label {l:?}")));
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Position of the index carrying `label`, if labels are attached.
    pub fn axis(&self, label: &str) -> Option<usize> {
        self.labels.as_ref()?.iter().position(|l| l == label)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&k, &n)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(k < n, "index {k} out of range {n} on axis {i}");
            off = off * n + k;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Reinterprets the data under a new shape with the same element count.
    /// Labels are dropped.
    pub fn reshape(mut self, shape: &[usize]) -> TensorResult<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.iter().any(|&n| n == 0) {
            return Err(TensorError::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        self.labels = None;
        Ok(self)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.data.iter_mut().for_each(|x| *x *= factor);
        self
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Frobenius distance; shapes must agree.
    pub fn distance(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in distance");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Views the tensor as a matrix, fusing the first `split` indices into
    /// rows and the rest into columns.
    pub fn to_matrix(&self, split: usize) -> DMatrix<f64> {
        let rows: usize = self.shape[..split].iter().product();
        let cols: usize = self.shape[split..].iter().product();
        DMatrix::from_row_slice(rows, cols, &self.data)
    }

    /// Scales slice `k` of index `axis` by `weights[k]`.
    pub fn scale_axis(mut self, axis: usize, weights: &[f64]) -> Self {
        assert_eq!(self.shape[axis], weights.len(), "weight length mismatch");
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        for (chunk_i, chunk) in self.data.chunks_mut(inner).enumerate() {
            let w = weights[chunk_i % n];
            chunk.iter_mut().for_each(|x| *x *= w);
        }
        self
    }

    /// Zero-pads (or truncates) each index to the requested extent.
    pub fn resized(&self, shape: &[usize]) -> Self {
        assert_eq!(shape.len(), self.shape.len());
        let mut out = Tensor::zeros(shape);
        let common: Vec<usize> = self.shape.iter().zip(shape).map(|(a, b)| *a.min(b)).collect();
        let src_strides = row_major_strides(&self.shape);
        let dst_strides = row_major_strides(shape);
        let total: usize = common.iter().product();
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..total {
            let s: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            let d: usize = idx.iter().zip(&dst_strides).map(|(i, s)| i * s).sum();
            out.data[d] = self.data[s];
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < common[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }
}

/// Reorders indices: result index `k` is input index `order[k]`.
pub fn permute(a: &Tensor, order: &[usize]) -> TensorResult<Tensor> {
    let n = a.rank();
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(TensorError::Argument(format!(
            "permutation {order:?} has wrong length for rank {n}"
        )));
    }
    for &o in order {
        if o >= n || seen[o] {
            return Err(TensorError::Argument(format!("{order:?} is not a permutation")));
        }
        seen[o] = true;
    }
    let labels = a
        .labels
        .as_ref()
        .map(|l| order.iter().map(|&o| l[o].clone()).collect());
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        let mut out = a.clone();
        out.labels = labels;
        return Ok(out);
    }
    let in_strides = row_major_strides(&a.shape);
    let shape: Vec<usize> = order.iter().map(|&o| a.shape[o]).collect();
    let strides: Vec<usize> = order.iter().map(|&o| in_strides[o]).collect();
    let mut data = vec![0.0; a.data.len()];

    let last = n - 1;
    let inner_n = shape[last];
    let inner_s = strides[last];
    let outer: usize = shape[..last].iter().product();
    let mut idx = vec![0usize; last];
    let mut base = 0usize;
    let mut pos = 0usize;
    for _ in 0..outer {
        let src = &a.data;
        let dst = &mut data[pos..pos + inner_n];
        if inner_s == 1 {
            dst.copy_from_slice(&src[base..base + inner_n]);
        } else {
            for (j, d) in dst.iter_mut().enumerate() {
                *d = src[base + j * inner_s];
            }
        }
        pos += inner_n;
        for k in (0..last).rev() {
            idx[k] += 1;
            base += strides[k];
            if idx[k] < shape[k] {
                break;
            }
            base -= strides[k] * shape[k];
            idx[k] = 0;
        }
    }
    Ok(Tensor { shape, data, labels })
}

/// Row-major `c = a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Sums over the paired indices. The result carries the unpaired indices of
/// `a` followed by the unpaired indices of `b`, each in original order.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> TensorResult<Tensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in pairs {
        if ia >= a.rank() || ib >= b.rank() {
            return Err(TensorError::Argument(format!(
                "pair ({ia}, {ib}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if used_a[ia] || used_b[ib] {
            return Err(TensorError::Argument(format!("index repeated in pairs {pairs:?}")));
        }
        if a.shape[ia] != b.shape[ib] {
            return Err(TensorError::Dimension(format!(
                "paired extents differ: a[{ia}]={} vs b[{ib}]={}",
                a.shape[ia], b.shape[ib]
            )));
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&i| !used_b[i]).collect();

    let mut order_a = free_a.clone();
    order_a.extend(pairs.iter().map(|p| p.0));
    let mut order_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    order_b.extend(&free_b);

    let pa = permute(a, &order_a)?;
    let pb = permute(b, &order_b)?;
    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&i| b.shape[i]).product();
    let data = matmul(&pa.data, &pb.data, m, k, n);

    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape[i]).collect();
    shape.extend(free_b.iter().map(|&i| b.shape[i]));
    let labels = match (&a.labels, &b.labels) {
        (Some(la), Some(lb)) => {
            let l: Vec<String> = free_a
                .iter()
                .map(|&i| la[i].clone())
                .chain(free_b.iter().map(|&i| lb[i].clone()))
                .collect();
            let unique = l.iter().enumerate().all(|(i, x)| !l[..i].contains(x));
            unique.then_some(l)
        }
        _ => None,
    };
    if shape.is_empty() {
        // full contraction yields a scalar, stored as a rank-1 tensor of extent 1
        shape.push(1);
    }
    Ok(Tensor { shape, data, labels })
}

/// Contracts indices by label name (all labels shared between the operands).
pub fn contract_labeled(a: &Tensor, b: &Tensor) -> TensorResult<Tensor> {
    let (la, lb) = match (a.labels(), b.labels()) {
        (Some(la), Some(lb)) => (la, lb),
        _ => return Err(TensorError::Argument("both tensors need labels".into())),
    };
    let pairs: Vec<(usize, usize)> = la
        .iter()
        .enumerate()
        .filter_map(|(i, l)| lb.iter().position(|m| m == l).map(|j| (i, j)))
        .collect();
    contract(a, b, &pairs)
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Left isometry: the row indices followed by the new bond of extent `k`.
    pub u: Tensor,
    /// Kept singular values, descending.
    pub s: Vec<f64>,
    /// Right isometry: the column indices followed by the new bond.
    pub v: Tensor,
    /// `sqrt(sum of squared discarded values) / ||a||`.
    pub truncation_error: f64,
}

impl SvdResult {
    /// `u · diag(s) · vᵀ` reshaped back to the row and column extents.
    pub fn reconstruct(&self) -> Tensor {
        let us = self.u.clone().scale_axis(self.u.rank() - 1, &self.s);
        contract(&us, &self.v, &[(self.u.rank() - 1, self.v.rank() - 1)])
            .expect("consistent svd factors")
    }
}

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Full thin SVD of a dense matrix with singular values sorted descending.
pub(crate) fn svd_matrix(m: DMatrix<f64>) -> TensorResult<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = m
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| TensorError::Decomposition("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| TensorError::Decomposition("missing U".into()))?;
    let vt = svd.v_t.ok_or_else(|| TensorError::Decomposition("missing Vᵀ".into()))?;
    let s = svd.singular_values;
    if s.iter().any(|x| !x.is_finite()) {
        return Err(TensorError::Decomposition("non-finite singular values".into()));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let s_sorted: Vec<f64> = order.iter().map(|&i| s[i].max(0.0)).collect();
    let u_sorted = u.select_columns(order.iter());
    let vt_sorted = vt.select_rows(order.iter());
    Ok((u_sorted, s_sorted, vt_sorted))
}

/// Leading `k` singular triplets of a row-major `rows × cols` matrix.
///
/// For wide problems with `k` much smaller than the matrix, the dominant
/// subspace is taken from the eigenvectors of the smaller Gram matrix and the
/// triplets are then recomputed by an exact SVD of the projected block, so
/// the singular values carry full precision. Returns `(u, s, v)` with `u` as
/// `rows × k'` and `v` as `cols × k'` (row-major), `k' = min(k, rows, cols)`.
pub(crate) fn svd_leading(
    data: &[f64],
    rows: usize,
    cols: usize,
    k: usize,
) -> TensorResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = rows.min(cols);
    let keep = k.min(n);
    let block = (2 * k).min(n);
    if 4 * k >= n {
        let (u, s, vt) = svd_matrix(DMatrix::from_row_slice(rows, cols, data))?;
        return Ok(take_triplets(&u, &s, &vt, keep));
    }
    let tall = rows > cols;
    let (small, large) = if tall { (cols, rows) } else { (rows, cols) };
    // work with the wide orientation: w is small × large
    let w: Vec<f64> = if tall {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = data[i * cols + j];
            }
        }
        t
    } else {
        data.to_vec()
    };
    let mut wt = vec![0.0; small * large];
    for i in 0..small {
        for j in 0..large {
            wt[j * small + i] = w[i * large + j];
        }
    }
    let mut gram = matmul(&w, &wt, small, large, small);
    // subnormal entries can derail the eigensolver; they carry no weight
    let gmax = gram.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    gram.iter_mut().for_each(|x| {
        if x.abs() < 1e-30 * gmax {
            *x = 0.0;
        }
    });
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(small, small, &gram));
    if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
        let (u, s, vt) = svd_matrix(DMatrix::from_row_slice(rows, cols, data))?;
        return Ok(take_triplets(&u, &s, &vt, keep));
    }
    let mut order: Vec<usize> = (0..small).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    // basis: small × block
    let mut basis = vec![0.0; small * block];
    for (c, &o) in order.iter().take(block).enumerate() {
        for i in 0..small {
            basis[i * block + c] = eig.eigenvectors[(i, o)];
        }
    }
    let mut basis_t = vec![0.0; block * small];
    for i in 0..small {
        for c in 0..block {
            basis_t[c * small + i] = basis[i * block + c];
        }
    }
    let projected = matmul(&basis_t, &w, block, small, large);
    let (ub, s, vt) = svd_matrix(DMatrix::from_row_slice(block, large, &projected))?;
    let (ub, s, v) = take_triplets(&ub, &s, &vt, keep);
    // left vectors back in the original space: small × keep
    let left = matmul(&basis, &ub, small, block, keep);
    Ok(if tall { (v, s, left) } else { (left, s, v) })
}

fn take_triplets(
    u: &DMatrix<f64>,
    s: &[f64],
    vt: &DMatrix<f64>,
    keep: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let keep = keep.min(s.len());
    let mut ud = vec![0.0; u.nrows() * keep];
    for i in 0..u.nrows() {
        for c in 0..keep {
            ud[i * keep + c] = u[(i, c)];
        }
    }
    let mut vd = vec![0.0; vt.ncols() * keep];
    for j in 0..vt.ncols() {
        for c in 0..keep {
            vd[j * keep + c] = vt[(c, j)];
        }
    }
    (ud, s[..keep].to_vec(), vd)
}

/// Number of values to keep: at most `max_rank`, and only those above
/// `cutoff * s[0]` (always at least one).
pub fn truncation_rank(s: &[f64], max_rank: usize, cutoff: f64) -> usize {
    let s0 = s.first().copied().unwrap_or(0.0);
    let above = s.iter().take_while(|&&x| x > cutoff * s0).count().max(1);
    above.min(max_rank).min(s.len()).max(1)
}

/// Truncated SVD across the bipartition `row_axes | remaining axes`.
/// `cutoff` is relative to the largest singular value.
pub fn svd_truncated(
    a: &Tensor,
    row_axes: &[usize],
    max_rank: usize,
    cutoff: f64,
) -> TensorResult<SvdResult> {
    if max_rank == 0 {
        return Err(TensorError::Argument("max_rank must be at least 1".into()));
    }
    if !(cutoff >= 0.0) {
        return Err(TensorError::Argument("cutoff must be nonnegative".into()));
    }
    let mut seen = vec![false; a.rank()];
    for &r in row_axes {
        if r >= a.rank() || seen[r] {
            return Err(TensorError::Argument(format!("invalid row axes {row_axes:?}")));
        }
        seen[r] = true;
    }
    let col_axes: Vec<usize> = (0..a.rank()).filter(|&i| !seen[i]).collect();
    let mut order = row_axes.to_vec();
    order.extend(&col_axes);
    let p = permute(a, &order)?;
    let row_shape: Vec<usize> = row_axes.iter().map(|&i| a.shape[i]).collect();
    let col_shape: Vec<usize> = col_axes.iter().map(|&i| a.shape[i]).collect();
    let rows: usize = row_shape.iter().product();
    let cols: usize = col_shape.iter().product();

    let (u, s, vt) = svd_matrix(DMatrix::from_row_slice(rows, cols, &p.data))?;
    let total: f64 = s.iter().map(|x| x * x).sum::<f64>();
    let k = truncation_rank(&s, max_rank, cutoff);
    let discarded: f64 = s[k..].iter().map(|x| x * x).sum::<f64>();
    let truncation_error = if total > 0.0 { (discarded / total).sqrt() } else { 0.0 };

    let mut u_shape = row_shape;
    u_shape.push(k);
    let u_t = Tensor::from_matrix(&u.columns(0, k).into_owned()).reshape(&u_shape)?;
    let mut v_shape = col_shape;
    v_shape.push(k);
    let v_t = Tensor::from_matrix(&vt.rows(0, k).transpose()).reshape(&v_shape)?;
    Ok(SvdResult { u: u_t, s: s[..k].to_vec(), v: v_t, truncation_error })
}

/// Thin QR of a row-major `rows × cols` matrix: returns `(Q, R)` with
/// `Q: rows×r`, `R: r×cols`, `r = min(rows, cols)`, both row-major.
pub(crate) fn qr_thin(data: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let m = DMatrix::from_row_slice(rows, cols, data);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    let k = rows.min(cols);
    let mut qd = Vec::with_capacity(rows * k);
    for i in 0..rows {
        for j in 0..k {
            qd.push(q[(i, j)]);
        }
    }
    let mut rd = Vec::with_capacity(k * cols);
    for i in 0..k {
        for j in 0..cols {
            rd.push(r[(i, j)]);
        }
    }
    (qd, rd, k)
}

fn check_square_symmetric(h: &Tensor) -> TensorResult<usize> {
    let n = match h.shape() {
        [r, c] if r == c => *r,
        s => {
            let total: usize = s.iter().product();
            let n = (total as f64).sqrt().round() as usize;
            let half = s.len() / 2;
            let rows: usize = s[..half].iter().product();
            if s.len() % 2 != 0 || n * n != total || rows != n {
                return Err(TensorError::Argument(format!(
                    "shape {s:?} is not a square operator"
                )));
            }
            n
        }
    };
    let d = &h.data;
    let scale = h.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (d[i * n + j] - d[j * n + i]).abs() > 1e-10 * scale {
                return Err(TensorError::Argument(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(n)
}

/// `exp(scale · h)` for symmetric `h` via eigendecomposition. Rank-4 inputs
/// (`out_1, out_2, in_1, in_2`) are treated as square matrices and the
/// result keeps the input shape.
pub fn expm_hermitian(h: &Tensor, scale: f64) -> TensorResult<Tensor> {
    let n = check_square_symmetric(h)?;
    let mut m = DMatrix::from_row_slice(n, n, &h.data);
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let q = &eig.eigenvectors;
    let w = eig.eigenvalues.map(|e| (scale * e).exp());
    let mut qw = q.clone();
    for (j, mut col) in qw.column_iter_mut().enumerate() {
        col *= w[j];
    }
    let mut out = &qw * q.transpose();
    out = (&out + out.transpose()) * 0.5;
    Tensor::from_matrix(&out).reshape(h.shape())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn eigh(h: &Tensor) -> TensorResult<(Vec<f64>, DMatrix<f64>)> {
    let n = check_square_symmetric(h)?;
    let m = DMatrix::from_row_slice(n, n, &h.data);
    let eig = SymmetricEigen::new((&m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = eig.eigenvectors.select_columns(order.iter());
    Ok((vals, vecs))
}

pub fn matrix_product(a: &Tensor, b: &Tensor) -> TensorResult<Tensor> {
    contract(a, b, &[(a.rank() - 1, 0)])
}

pub fn transpose(a: &Tensor) -> Tensor {
    permute(a, &[1, 0]).expect("rank-2 transpose")
}
