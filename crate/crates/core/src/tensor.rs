//! Dense order-D tensors and the multilinear algebra around them.
//!
//! Storage is first-mode-fastest: entry `(i_1, ..., i_D)` lives at
//! `i_1 + d_1 * (i_2 + d_2 * (i_3 + ...))`. With that layout `vectorize` is
//! a copy of the backing array, and the mode-`d` unfolding follows the
//! Kolda-Bader convention (remaining indices cycle lowest-mode-fastest), so
//! identities such as
//!
//! ```text
//! vec(T x_1 A_1 ... x_D A_D) = (A_D ⊗ ... ⊗ A_1) vec(T)
//! unfold(B, d)               = B_d (B_D ⊙ ... ⊙ B_{d+1} ⊙ B_{d-1} ⊙ ... ⊙ B_1)ᵀ
//! ```
//!
//! hold literally. Modes are 0-based throughout the API.

use nalgebra::DMatrix;

use crate::error::{CometError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(CometError::Shape("tensor order must be at least 1".into()));
    }
    if dims.contains(&0) {
        return Err(CometError::Shape(format!(
            "every dimension must be positive, got {dims:?}"
        )));
    }
    Ok(dims.iter().product())
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if data.len() != len {
            return Err(CometError::Shape(format!(
                "dims {dims:?} need {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = check_dims(&dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor from a function of the 0-based multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_dims(&dims)?;
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, d) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < *d {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Self { dims, data })
    }

    /// Wraps a matrix as an order-2 tensor (column-major storage is already
    /// first-mode-fastest).
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            dims: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
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

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.dims.len() {
            return Err(CometError::ModeOutOfRange {
                mode,
                order: self.dims.len(),
            });
        }
        Ok(())
    }

    /// `(left, size, right)`: products of the dims below `mode`, the mode's
    /// own dim, and the product of dims above it.
    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.dims[..mode].iter().product();
        let right = self.dims[mode + 1..].iter().product();
        (left, self.dims[mode], right)
    }

    /// Mode-`mode` matricization, `d_mode x prod_{j != mode} d_j`.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        self.check_mode(mode)?;
        let (left, size, right) = self.split(mode);
        let mut out = DMatrix::zeros(size, left * right);
        for r in 0..right {
            for i in 0..size {
                let base = left * (i + size * r);
                for l in 0..left {
                    out[(i, l + left * r)] = self.data[base + l];
                }
            }
        }
        Ok(out)
    }

    /// Mode-`mode` product `self x_mode m`; `m` must have `dims[mode]` columns.
    pub fn mode_multiply(&self, m: &DMatrix<f64>, mode: usize) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        let (left, size, right) = self.split(mode);
        if m.ncols() != size {
            return Err(CometError::DimensionMismatch(format!(
                "mode-{mode} product needs a matrix with {size} columns, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let rows = m.nrows();
        let mut dims = self.dims.clone();
        dims[mode] = rows;
        let mut data = vec![0.0; left * rows * right];
        for r in 0..right {
            for i in 0..size {
                let src = left * (i + size * r);
                for a in 0..rows {
                    let w = m[(a, i)];
                    if w == 0.0 {
                        continue;
                    }
                    let dst = left * (a + rows * r);
                    for l in 0..left {
                        data[dst + l] += w * self.data[src + l];
                    }
                }
            }
        }
        DenseTensor::new(dims, data)
    }
}

/// Inverse of [`DenseTensor::unfold`].
pub fn fold(m: &DMatrix<f64>, mode: usize, dims: &[usize]) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(dims.to_vec())?;
    t.check_mode(mode)?;
    let (left, size, right) = t.split(mode);
    if m.nrows() != size || m.ncols() != left * right {
        return Err(CometError::DimensionMismatch(format!(
            "cannot fold a {}x{} matrix along mode {mode} into dims {dims:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    for r in 0..right {
        for i in 0..size {
            let base = left * (i + size * r);
            for l in 0..left {
                t.data[base + l] = m[(i, l + left * r)];
            }
        }
    }
    Ok(t)
}

pub fn inner_product(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.dims != b.dims {
        return Err(CometError::DimensionMismatch(format!(
            "inner product of tensors with dims {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    Ok(dot(&a.data, &b.data))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra * rb, ca * cb);
    for j in 0..ca {
        for i in 0..ra {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for l in 0..cb {
                for k in 0..rb {
                    out[(i * rb + k, j * cb + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Column-wise Kronecker product.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(CometError::DimensionMismatch(format!(
            "Khatri-Rao product needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(ra * rb, a.ncols());
    for g in 0..a.ncols() {
        for i in 0..ra {
            let s = a[(i, g)];
            for k in 0..rb {
                out[(i * rb + k, g)] = s * b[(k, g)];
            }
        }
    }
    Ok(out)
}

/// `M_D ⊗ ... ⊗ M_1` over all matrices except `skip`. An empty product is
/// the 1x1 identity.
pub fn kronecker_desc(mats: &[DMatrix<f64>], skip: Option<usize>) -> DMatrix<f64> {
    mats.iter()
        .enumerate()
        .rev()
        .filter(|(d, _)| Some(*d) != skip)
        .fold(DMatrix::identity(1, 1), |acc, (_, m)| kronecker(&acc, m))
}

/// `F_D ⊙ ... ⊙ F_1` over all factors except `skip`. An empty product is a
/// single row of ones.
pub fn khatri_rao_desc(factors: &[DMatrix<f64>], skip: Option<usize>) -> Result<DMatrix<f64>> {
    let cols = factors.first().map_or(1, |f| f.ncols());
    factors
        .iter()
        .enumerate()
        .rev()
        .filter(|(d, _)| Some(*d) != skip)
        .try_fold(DMatrix::from_element(1, cols, 1.0), |acc, (_, f)| {
            khatri_rao(&acc, f)
        })
}

/// Rank-K CP representation: factor `d` is `p_d x K`, column `g` holding the
/// mode-`d` vector of the `g`-th rank-one component.
#[derive(Clone, Debug, PartialEq)]
pub struct CpDecomposition {
    factors: Vec<DMatrix<f64>>,
}

impl CpDecomposition {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(CometError::Shape("CP decomposition needs a factor".into()));
        };
        let rank = first.ncols();
        if rank == 0 {
            return Err(CometError::Shape("CP rank must be at least 1".into()));
        }
        for (d, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(CometError::DimensionMismatch(format!(
                    "factor {d} has {} columns, expected rank {rank}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(CometError::Shape(format!("factor {d} has no rows")));
            }
        }
        Ok(Self { factors })
    }

    pub fn zeros(dims: &[usize], rank: usize) -> Result<Self> {
        Self::new(dims.iter().map(|&p| DMatrix::zeros(p, rank)).collect())
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, d: usize) -> &DMatrix<f64> {
        &self.factors[d]
    }

    /// Replaces factor `d`; the shape must not change.
    pub fn set_factor(&mut self, d: usize, f: DMatrix<f64>) -> Result<()> {
        if f.shape() != self.factors[d].shape() {
            return Err(CometError::DimensionMismatch(format!(
                "factor {d} must stay {:?}, got {:?}",
                self.factors[d].shape(),
                f.shape()
            )));
        }
        self.factors[d] = f;
        Ok(())
    }

    /// `B = sum_g beta_1^(g) ∘ ... ∘ beta_D^(g)`.
    pub fn compose(&self) -> DenseTensor {
        let kr = khatri_rao_desc(&self.factors, None).expect("factors share rank");
        let data: Vec<f64> = kr.row_iter().map(|r| r.sum()).collect();
        DenseTensor::new(self.dims(), data).expect("composed dims match")
    }
}

pub fn cp_compose(cp: &CpDecomposition) -> DenseTensor {
    cp.compose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t222() -> DenseTensor {
        DenseTensor::from_fn(vec![2, 2, 2], |i| (1 + i[0] + 2 * i[1] + 4 * i[2]) as f64).unwrap()
    }

    #[test]
    fn vectorize_orders_first_mode_fastest() {
        let t = DenseTensor::from_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(t.vectorize(), vec![1.0, 2.0, 3.0, 4.0]);
        let c = DenseTensor::new(vec![1, 1, 1], vec![7.5]).unwrap();
        assert_eq!(c.vectorize(), vec![7.5]);
    }

    #[test]
    fn vectorize_matches_nested_loop_enumeration() {
        let t = t222();
        let mut expected = Vec::new();
        for k in 1..=2 {
            for j in 1..=2 {
                for i in 1..=2 {
                    expected.push((i + 2 * (j - 1) + 4 * (k - 1)) as f64);
                }
            }
        }
        assert_eq!(t.vectorize(), expected);
        assert_eq!(expected, (1..=8).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn unfold_follows_kolda_convention() {
        let t = t222();
        let m1 = DMatrix::from_row_slice(2, 4, &[1., 3., 5., 7., 2., 4., 6., 8.]);
        let m2 = DMatrix::from_row_slice(2, 4, &[1., 2., 5., 6., 3., 4., 7., 8.]);
        assert_eq!(t.unfold(0).unwrap(), m1);
        assert_eq!(t.unfold(1).unwrap(), m2);
        let m = DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(DenseTensor::from_matrix(&m).unfold(0).unwrap(), m);
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        assert!(matches!(
            t222().unfold(3),
            Err(CometError::ModeOutOfRange { mode: 3, order: 3 })
        ));
    }

    #[test]
    fn mode_multiply_examples() {
        let t = DenseTensor::from_matrix(&DMatrix::from_row_slice(2, 2, &[1., 3., 2., 4.]));
        let r = t.mode_multiply(&DMatrix::from_row_slice(1, 2, &[1., 1.]), 0).unwrap();
        assert_eq!(r.dims(), &[1, 2]);
        assert_eq!(r.data(), &[3.0, 7.0]);
        let same = t222().mode_multiply(&DMatrix::identity(2, 2), 2).unwrap();
        assert_eq!(same, t222());
        assert!(t.mode_multiply(&DMatrix::zeros(2, 3), 1).is_err());
    }

    #[test]
    fn kronecker_block_expansion() {
        let a = DMatrix::from_row_slice(2, 2, &[1., 2., 3., 4.]);
        let b = DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]);
        let k = kronecker(&a, &b);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0., 1., 0., 2., //
                1., 0., 2., 0., //
                0., 3., 0., 4., //
                3., 0., 4., 0.,
            ],
        );
        assert_eq!(k, expected);
        assert_eq!(
            kronecker(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)),
            DMatrix::identity(6, 6)
        );
    }

    #[test]
    fn khatri_rao_examples() {
        let a = DMatrix::from_column_slice(2, 1, &[1., 2.]);
        let b = DMatrix::from_column_slice(2, 1, &[3., 4.]);
        assert_eq!(khatri_rao(&a, &b).unwrap().as_slice(), &[3., 4., 6., 8.]);
        let ones = khatri_rao(&DMatrix::from_element(3, 1, 1.0), &DMatrix::from_element(4, 1, 1.0));
        assert_eq!(ones.unwrap(), DMatrix::from_element(12, 1, 1.0));
        assert!(khatri_rao(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn cp_compose_examples() {
        let cp = CpDecomposition::new(vec![
            DMatrix::from_column_slice(2, 1, &[1., 2.]),
            DMatrix::from_column_slice(2, 1, &[1., 1.]),
        ])
        .unwrap();
        let b = cp.compose();
        // [[1,1],[2,2]]
        assert_eq!(b.data(), &[1., 2., 1., 2.]);

        let zero = CpDecomposition::zeros(&[3, 2, 4], 2).unwrap().compose();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let rank2 = CpDecomposition::new(vec![
            DMatrix::from_column_slice(2, 2, &[1., 2., 0., 0.]),
            DMatrix::from_column_slice(2, 2, &[1., 1., 0., 0.]),
        ])
        .unwrap();
        assert_eq!(rank2.compose(), b);
    }

    #[test]
    fn cp_rejects_mismatched_rank() {
        assert!(CpDecomposition::new(vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)]).is_err());
        assert!(CpDecomposition::new(vec![]).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let a = DenseTensor::from_matrix(&DMatrix::from_row_slice(2, 2, &[1., 3., 2., 4.]));
        let i = DenseTensor::from_matrix(&DMatrix::identity(2, 2));
        assert_eq!(inner_product(&a, &i).unwrap(), 5.0);
        assert_eq!(inner_product(&a, &a).unwrap(), a.frobenius_norm().powi(2));
        let z = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert_eq!(inner_product(&a, &z).unwrap(), 0.0);
        assert!(inner_product(&a, &t222()).is_err());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }
}
