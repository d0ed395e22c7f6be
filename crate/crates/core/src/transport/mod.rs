//! Discrete optimal transport between the image views and text views of a
//! listing.
//!
//! Two couplings matter here. The product coupling `gamma[i][j] = w[i] * v[j]`
//! is what fused-embedding similarity evaluates implicitly: with the cost
//! `c = -<image_i, text_j>` its transport cost is exactly the negated dot
//! product of the two fused embeddings. [`exact_ot`] solves the full linear
//! program over the transport polytope and is used to check that the product
//! coupling is always an upper bound on the optimum.

mod flow;

use crate::error::{Error, Result};
use crate::fusion::{check_dim, ViewSet};
use crate::scalar::{self, Scalar};

use flow::MinCostFlow;

/// Absolute tolerance for simplex sums and coupling marginals.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexWeights<T> {
    values: Vec<T>,
}

impl<T: Scalar> SimplexWeights<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        if let Some((index, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
            return Err(Error::NegativeEntry { index, value: v.as_f64() });
        }
        let sum: T = values.iter().copied().sum();
        if (sum - T::one()).abs() > T::tolerance(FEASIBILITY_TOL, values.len()) {
            return Err(Error::NotNormalized { sum: sum.as_f64() });
        }
        Ok(Self { values })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        Self::new(vec![T::one() / T::from_usize(n).unwrap(); n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }
}

/// Checks that `values` lie on the probability simplex and wraps them.
pub fn validate_simplex<T: Scalar>(values: Vec<T>) -> Result<SimplexWeights<T>> {
    SimplexWeights::new(values)
}

/// Dense row-major cost matrix between `rows` image views and `cols` text views.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty);
        }
        check_dim(rows * cols, entries.len())?;
        if let Some(index) = entries.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        for row in &rows {
            check_dim(c, row.len())?;
        }
        Self::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Every entry plus `shift`.
    pub fn shifted(&self, shift: T) -> Self {
        Self { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|&c| c + shift).collect() }
    }
}

/// A nonnegative matrix with row sums `a` and column sums `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling<T> {
    gamma: Vec<T>,
    row_marginal: SimplexWeights<T>,
    col_marginal: SimplexWeights<T>,
}

impl<T: Scalar> Coupling<T> {
    /// Validates membership of the row-major `gamma` in the transport polytope
    /// of `(a, b)`.
    pub fn new(gamma: Vec<T>, a: SimplexWeights<T>, b: SimplexWeights<T>) -> Result<Self> {
        let (n, m) = (a.len(), b.len());
        check_dim(n * m, gamma.len())?;
        if let Some((index, g)) = gamma.iter().enumerate().find(|(_, g)| !(**g >= T::zero())) {
            return Err(Error::NegativeEntry { index, value: g.as_f64() });
        }
        let coupling = Self { gamma, row_marginal: a, col_marginal: b };
        let tol = T::tolerance(FEASIBILITY_TOL, n.max(m));
        let rows_ok = coupling.row_sums().iter().zip(coupling.row_marginal.as_slice()).all(|(&s, &t)| (s - t).abs() <= tol);
        let cols_ok = coupling.col_sums().iter().zip(coupling.col_marginal.as_slice()).all(|(&s, &t)| (s - t).abs() <= tol);
        if !(rows_ok && cols_ok) {
            return Err(Error::InfeasibleMarginals("coupling marginals do not match".into()));
        }
        Ok(coupling)
    }

    pub fn rows(&self) -> usize {
        self.row_marginal.len()
    }

    pub fn cols(&self) -> usize {
        self.col_marginal.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.gamma[i * self.cols() + j]
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn row_marginal(&self) -> &SimplexWeights<T> {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &SimplexWeights<T> {
        &self.col_marginal
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.gamma.chunks(self.cols()).map(|r| r.iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols()];
        for row in self.gamma.chunks(self.cols()) {
            for (s, &g) in sums.iter_mut().zip(row) {
                *s += g;
            }
        }
        sums
    }

    /// Cells carrying more than `threshold` mass.
    pub fn support(&self, threshold: T) -> Vec<(usize, usize)> {
        let m = self.cols();
        self.gamma.iter().enumerate().filter(|(_, &g)| g > threshold).map(|(k, _)| (k / m, k % m)).collect()
    }
}

/// `C[i][j] = -<image_i, text_j>`.
pub fn negative_dot_cost<T: Scalar>(image_views: &ViewSet<T>, text_views: &ViewSet<T>) -> Result<CostMatrix<T>> {
    check_dim(image_views.dim(), text_views.dim())?;
    let mut entries = Vec::with_capacity(image_views.len() * text_views.len());
    for img in image_views.views() {
        for txt in text_views.views() {
            entries.push(-scalar::dot(img.as_slice(), txt.as_slice()));
        }
    }
    CostMatrix::new(image_views.len(), text_views.len(), entries)
}

/// The rank-one coupling `gamma[i][j] = w[i] * v[j]`.
pub fn factorized_coupling<T: Scalar>(w: &SimplexWeights<T>, v: &SimplexWeights<T>) -> Result<Coupling<T>> {
    let mut gamma = Vec::with_capacity(w.len() * v.len());
    for &wi in w.as_slice() {
        for &vj in v.as_slice() {
            gamma.push(wi * vj);
        }
    }
    Coupling::new(gamma, w.clone(), v.clone())
}

/// `sum_ij gamma[i][j] * C[i][j]`.
pub fn coupling_cost<T: Scalar>(coupling: &Coupling<T>, cost: &CostMatrix<T>) -> Result<T> {
    check_dim(coupling.rows(), cost.rows())?;
    check_dim(coupling.cols(), cost.cols())?;
    let mut total = T::zero();
    for (&g, &c) in coupling.gamma().iter().zip(cost.entries()) {
        total += g * c;
    }
    Ok(total)
}

/// Minimum-cost coupling in the transport polytope of `(a, b)` and its cost.
///
/// Solved as a transportation problem by min-cost flow. Costs are shifted by
/// `-min(C)` so every arc is nonnegative; the shift times the moved mass is
/// added back to the reported cost. Zero-mass rows and columns get no arcs.
pub fn exact_ot<T: Scalar>(a: &SimplexWeights<T>, b: &SimplexWeights<T>, cost: &CostMatrix<T>) -> Result<(Coupling<T>, T)> {
    let (n, m) = (a.len(), b.len());
    if n != cost.rows() || m != cost.cols() {
        return Err(Error::InfeasibleMarginals(format!(
            "marginals are {n}x{m} but the cost matrix is {}x{}",
            cost.rows(),
            cost.cols()
        )));
    }
    let shift = cost.entries().iter().copied().fold(T::infinity(), T::min);

    let source = 0;
    let sink = n + m + 1;
    let mut graph = MinCostFlow::new(n + m + 2);
    let supply: T = a.as_slice().iter().copied().sum();
    let demand: T = b.as_slice().iter().copied().sum();
    let limit = supply.min(demand);
    let unbounded = limit + limit;

    for (i, &ai) in a.as_slice().iter().enumerate() {
        if ai > T::zero() {
            graph.add_edge(source, 1 + i, ai, T::zero());
        }
    }
    let mut arcs = Vec::with_capacity(n * m);
    for (i, &ai) in a.as_slice().iter().enumerate() {
        for (j, &bj) in b.as_slice().iter().enumerate() {
            if ai > T::zero() && bj > T::zero() {
                let e = graph.add_edge(1 + i, 1 + n + j, unbounded, cost.get(i, j) - shift);
                arcs.push((i, j, e));
            }
        }
    }
    for (j, &bj) in b.as_slice().iter().enumerate() {
        if bj > T::zero() {
            graph.add_edge(1 + n + j, sink, bj, T::zero());
        }
    }

    let cap_eps = T::epsilon() * T::lit(16.0);
    let (moved, shifted_cost) = graph.run(source, sink, limit, cap_eps);
    if limit - moved > T::tolerance(FEASIBILITY_TOL, n + m) {
        return Err(Error::NumericalFailure { moved: moved.as_f64(), total: limit.as_f64() });
    }

    let mut gamma = vec![T::zero(); n * m];
    for (i, j, e) in arcs {
        gamma[i * m + j] = graph.flow_on(e);
    }
    let coupling = Coupling::new(gamma, a.clone(), b.clone())
        .map_err(|_| Error::NumericalFailure { moved: moved.as_f64(), total: limit.as_f64() })?;
    Ok((coupling, shifted_cost + shift * moved))
}

/// `sum_ij w[i] v[j] <image_i, text_j>`, evaluated as the negated transport
/// cost of the factorized coupling under the negative-dot cost.
pub fn bilinear_fused_similarity<T: Scalar>(
    image_views: &ViewSet<T>,
    text_views: &ViewSet<T>,
    w: &SimplexWeights<T>,
    v: &SimplexWeights<T>,
) -> Result<T> {
    check_dim(image_views.len(), w.len())?;
    check_dim(text_views.len(), v.len())?;
    let cost = negative_dot_cost(image_views, text_views)?;
    let coupling = factorized_coupling(w, v)?;
    Ok(-coupling_cost(&coupling, &cost)?)
}
