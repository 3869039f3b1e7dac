use crate::error::{Error, Result};
use crate::rng::{Purpose, SeededStream};
use crate::scalar::Real;

/// `N` particles with positions and velocities in `R^d`, stored row-major.
///
/// The empirical measure is carried implicitly as the sample arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    len: usize,
    dim: usize,
    x: Vec<T>,
    v: Vec<T>,
}

/// Means of the empirical measure and the velocity dispersion
/// `var_v = (1/N) sum_i |v_i - mean_v|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub mean_x: Vec<T>,
    pub mean_v: Vec<T>,
    pub var_v: T,
}

/// Column means of the `width` columns starting at `offset` in a row-major
/// `rows × stride` array. Summation is sequential over rows, so the result
/// is fixed regardless of how callers parallelize around it.
pub fn column_means<T: Real>(
    data: &[T],
    rows: usize,
    stride: usize,
    offset: usize,
    width: usize,
) -> Vec<T> {
    let mut acc = vec![T::zero(); width];
    for row in data.chunks_exact(stride).take(rows) {
        for (a, &val) in acc.iter_mut().zip(&row[offset..offset + width]) {
            *a = *a + val;
        }
    }
    let n = T::from_count(rows);
    acc.iter_mut().for_each(|a| *a = *a / n);
    acc
}

/// `(1/N) sum_i |row_i - mean|^2`, summed sequentially.
pub fn mean_sq_deviation<T: Real>(data: &[T], dim: usize, mean: &[T]) -> T {
    let rows = data.len() / dim;
    let mut acc = T::zero();
    for row in data.chunks_exact(dim) {
        for (&val, &m) in row.iter().zip(mean) {
            let dv = val - m;
            acc = acc + dv * dv;
        }
    }
    acc / T::from_count(rows)
}

impl<T: Real> Ensemble<T> {
    pub fn new(dim: usize, x: Vec<T>, v: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "dimension must be at least 1"));
        }
        if x.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if !x.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch {
                what: "positions",
                expected: (x.len() / dim + 1) * dim,
                got: x.len(),
            });
        }
        if v.len() != x.len() {
            return Err(Error::ShapeMismatch {
                what: "velocities",
                expected: x.len(),
                got: v.len(),
            });
        }
        if let Some(i) = x.iter().chain(&v).position(|z| !z.is_finite()) {
            return Err(Error::non_finite(format!("ensemble entry {i}")));
        }
        Ok(Self {
            len: x.len() / dim,
            dim,
            x,
            v,
        })
    }

    /// Constructor for internal callers that already guarantee the invariants.
    pub(crate) fn from_parts_unchecked(dim: usize, x: Vec<T>, v: Vec<T>) -> Self {
        Self {
            len: x.len() / dim,
            dim,
            x,
            v,
        }
    }

    /// i.i.d. uniform positions and velocities on `[0, 1)^d`.
    pub fn uniform(len: usize, dim: usize, stream: &SeededStream) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "dimension must be at least 1"));
        }
        let mut x = vec![T::zero(); len * dim];
        let mut v = vec![T::zero(); len * dim];
        for (i, (xr, vr)) in x
            .chunks_exact_mut(dim)
            .zip(v.chunks_exact_mut(dim))
            .enumerate()
        {
            stream.fill_uniform(Purpose::InitPosition, i as u64, 0, xr);
            stream.fill_uniform(Purpose::InitVelocity, i as u64, 0, vr);
        }
        Ok(Self { len, dim, x, v })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[T] {
        &self.x
    }

    pub fn velocities(&self) -> &[T] {
        &self.v
    }

    pub fn position(&self, i: usize) -> &[T] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[T] {
        &self.v[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean_velocity(&self) -> Vec<T> {
        column_means(&self.v, self.len, self.dim, 0, self.dim)
    }

    pub fn moments(&self) -> Moments<T> {
        let mean_x = column_means(&self.x, self.len, self.dim, 0, self.dim);
        let mean_v = self.mean_velocity();
        let var_v = mean_sq_deviation(&self.v, self.dim, &mean_v);
        Moments {
            mean_x,
            mean_v,
            var_v,
        }
    }

    /// Reorders particles so that particle `i` of the result is particle
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut x = Vec::with_capacity(self.x.len());
        let mut v = Vec::with_capacity(self.v.len());
        for &p in perm {
            x.extend_from_slice(&self.x[p * d..(p + 1) * d]);
            v.extend_from_slice(&self.v[p * d..(p + 1) * d]);
        }
        Self::from_parts_unchecked(d, x, v)
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<T>) {
        (self.x, self.v)
    }
}

/// Empirical means and velocity variance of an ensemble.
pub fn empirical_moments<T: Real>(e: &Ensemble<T>) -> Result<Moments<T>> {
    if e.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(e.moments())
}
