//! Sparse symmetric linear algebra and fixed-step backward-Euler transient
//! integration.
//!
//! Matrices are compressed to CSC with duplicates summed and explicit zeros
//! dropped. Factorization is LDL^T with reverse Cuthill-McKee ordering; the
//! stamped systems are symmetric positive definite, so no pivoting is
//! needed. A completed [`Factorization`] is immutable and serves repeated
//! solves: the transient loop factors `(G + C/h)` once and reuses it for
//! every step (and, for stochastic-rhs grids, for every expansion term).

use std::sync::atomic::{AtomicU64, Ordering};

use sprs::{CsMat, FillInReduction};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};
use crate::mna::SparseTriplets;

static FACTOR_COUNT: AtomicU64 = AtomicU64::new(0);

/// Total number of factorizations performed by this process. Monotonic;
/// snapshot before/after a run to count its factorizations.
pub fn factor_count() -> u64 {
    FACTOR_COUNT.load(Ordering::Relaxed)
}

// ---------------------------------------------------------------------------
// Compressed matrices
// ---------------------------------------------------------------------------

/// Column-compressed sparse matrix (structurally symmetric by construction;
/// no explicit zeros).
#[derive(Debug, Clone)]
pub struct CompressedMatrix {
    inner: CsMat<f64>,
}

/// Compress triplets: sum duplicates, drop exact zeros, deterministic
/// column-major ordering.
pub fn compress(t: &SparseTriplets) -> Result<CompressedMatrix> {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(row, col, value) in &t.entries {
        if row >= t.dim || col >= t.dim {
            return Err(Error::Dimension(format!(
                "triplet ({row}, {col}) outside a {0} x {0} matrix",
                t.dim
            )));
        }
        *cells.entry((col, row)).or_insert(0.0) += value;
    }

    let mut indptr = Vec::with_capacity(t.dim + 1);
    let mut indices = Vec::with_capacity(cells.len());
    let mut values = Vec::with_capacity(cells.len());
    indptr.push(0);
    let mut current_col = 0;
    for ((col, row), value) in cells {
        if value == 0.0 {
            continue;
        }
        while current_col < col {
            indptr.push(indices.len());
            current_col += 1;
        }
        indices.push(row);
        values.push(value);
    }
    while current_col < t.dim {
        indptr.push(indices.len());
        current_col += 1;
    }

    Ok(CompressedMatrix {
        inner: CsMat::new_csc((t.dim, t.dim), indptr, indices, values),
    })
}

impl CompressedMatrix {
    pub fn dim(&self) -> usize {
        self.inner.cols()
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    /// Entry lookup (zero when absent).
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inner.get(row, col).copied().unwrap_or(0.0)
    }

    /// `out += A * x`.
    pub fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        sprs::prod::mul_acc_mat_vec_csc(self.inner.view(), x, out);
    }

    /// Entrywise scaling.
    pub fn scaled(&self, k: f64) -> CompressedMatrix {
        CompressedMatrix {
            inner: self.inner.map(|v| v * k),
        }
    }

    /// `self + k * other`, sharing no storage with the inputs.
    pub fn add_scaled(&self, other: &CompressedMatrix, k: f64) -> CompressedMatrix {
        let scaled = other.inner.map(|v| v * k);
        CompressedMatrix {
            inner: &self.inner + &scaled,
        }
    }

    /// Dense copy, for small-system tests and diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = vec![vec![0.0; n]; n];
        for (&value, (row, col)) in self.inner.iter() {
            out[row][col] = value;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

/// Reusable LDL^T factorization of a symmetric positive definite matrix.
pub struct Factorization {
    kernel: Kernel,
    dim: usize,
}

enum Kernel {
    /// Degenerate sizes the sparse kernel rejects (n <= 1).
    Pivot(f64),
    Ldl(Box<LdlNumeric<f64, usize>>),
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("dim", &self.dim)
            .finish()
    }
}

/// Factor a symmetric positive definite matrix with fill-reducing ordering.
/// Fails on numerically singular input (a floating node or a degenerate
/// time step).
pub fn factor(m: &CompressedMatrix) -> Result<Factorization> {
    FACTOR_COUNT.fetch_add(1, Ordering::Relaxed);
    let dim = m.dim();
    let kernel = if dim <= 1 {
        let pivot = if dim == 1 { m.get(0, 0) } else { 1.0 };
        if pivot <= 0.0 {
            return Err(Error::Singular(format!("non-positive pivot {pivot}")));
        }
        Kernel::Pivot(pivot)
    } else {
        let ldl = Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(sprs::DontCheckSymmetry)
            .numeric(m.inner.view())
            .map_err(|e| Error::Singular(format!("LDL^T factorization failed: {e}")))?;
        // LDL^T happily factors indefinite matrices; enforce the positive
        // definite contract through the pivots.
        if let Some(&pivot) = ldl.d().iter().find(|&&d| d <= 0.0) {
            return Err(Error::Singular(format!(
                "matrix is not positive definite (pivot {pivot})"
            )));
        }
        Kernel::Ldl(Box::new(ldl))
    };
    Ok(Factorization { kernel, dim })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solve `A x = rhs`. Immutable: concurrent solves with distinct
    /// right-hand sides are safe.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.dim);
        match &self.kernel {
            Kernel::Pivot(p) => rhs.iter().map(|&b| b / p).collect(),
            Kernel::Ldl(ldl) => ldl.solve(rhs),
        }
    }
}

/// One-shot DC solve (factor + solve).
pub fn dc_solve(g: &CompressedMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(factor(g)?.solve(rhs))
}

// ---------------------------------------------------------------------------
// Transient integration
// ---------------------------------------------------------------------------

/// Trajectory of a fixed-step run; `states[0]` is the initial condition at
/// `times[0] = 0`.
#[derive(Debug, Clone)]
pub struct TransientResult {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Number of backward-Euler steps covering `[0, t_end]` with step `h`.
pub fn step_count(h: f64, t_end: f64) -> Result<usize> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::Unsupported(format!("step h = {h} must be positive")));
    }
    if t_end < h {
        return Err(Error::Unsupported(format!(
            "t_end = {t_end} shorter than one step h = {h}"
        )));
    }
    Ok(((t_end / h).round() as usize).max(1))
}

/// Backward-Euler stepper holding one factorization of `(G + C/h)`.
///
/// Each trajectory solves `(G + C/h) x_{k+1} = u(t_{k+1}) + (C/h) x_k`; all
/// trajectories launched from the same stepper share the factorization.
pub struct TransientSolver {
    factorization: Factorization,
    c_over_h: CompressedMatrix,
    h: f64,
}

impl TransientSolver {
    pub fn new(g: &CompressedMatrix, c: &CompressedMatrix, h: f64) -> Result<Self> {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::Unsupported(format!("step h = {h} must be positive")));
        }
        if g.dim() != c.dim() {
            return Err(Error::Dimension(format!(
                "G is {} x {0} but C is {1} x {1}",
                g.dim(),
                c.dim()
            )));
        }
        let c_over_h = c.scaled(1.0 / h);
        let lhs = g.add_scaled(&c_over_h, 1.0);
        let factorization = factor(&lhs)?;
        Ok(TransientSolver {
            factorization,
            c_over_h,
            h,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.factorization.dim()
    }

    /// Run `steps` backward-Euler steps from `x0`, with `u(t, out)` filling
    /// the excitation at time `t`.
    pub fn run<F>(&self, mut u: F, x0: Vec<f64>, steps: usize) -> TransientResult
    where
        F: FnMut(f64, &mut [f64]),
    {
        let dim = self.dim();
        debug_assert_eq!(x0.len(), dim);
        let mut times = Vec::with_capacity(steps + 1);
        let mut states = Vec::with_capacity(steps + 1);
        times.push(0.0);
        states.push(x0);
        let mut rhs = vec![0.0; dim];
        for k in 1..=steps {
            let t = k as f64 * self.h;
            u(t, &mut rhs);
            self.c_over_h.mul_vec_add(states.last().unwrap(), &mut rhs);
            states.push(self.factorization.solve(&rhs));
            times.push(t);
        }
        TransientResult { times, states }
    }
}

/// Fixed-step backward-Euler transient: factors `(G + C/h)` once and reuses
/// it for every step.
pub fn transient<F>(
    g: &CompressedMatrix,
    c: &CompressedMatrix,
    mut u: F,
    h: f64,
    t_end: f64,
    x0: Vec<f64>,
) -> Result<TransientResult>
where
    F: FnMut(f64) -> Vec<f64>,
{
    let steps = step_count(h, t_end)?;
    let stepper = TransientSolver::new(g, c, h)?;
    Ok(stepper.run(
        |t, out| {
            let v = u(t);
            out.copy_from_slice(&v);
        },
        x0,
        steps,
    ))
}
