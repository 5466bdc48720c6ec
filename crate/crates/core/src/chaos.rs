//! Hermite polynomial-chaos algebra.
//!
//! Probabilists' (unnormalized) Hermite polynomials `He_k` are orthogonal
//! under the standard Gaussian weight with `<He_j, He_k> = delta_jk * k!`.
//! Products of univariate polynomials, indexed by multi-indices of total
//! degree <= p, form the basis for expanding random quantities of n
//! independent standard Gaussian variables. Norms are carried explicitly
//! rather than normalizing the basis, so variance weights come out as plain
//! factorials.
//!
//! The basis is ordered grade by grade with lexicographically descending
//! exponents inside each grade; for two variables and order two this yields
//! `1, x1, x2, x1^2-1, x1*x2, x2^2-1`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest basis size [`term_count`] accepts before reporting overflow.
pub const MAX_TERMS: usize = 1 << 20;

// ---------------------------------------------------------------------------
// Multi-indices
// ---------------------------------------------------------------------------

/// Exponent vector of one basis polynomial: `prod_i He_{alpha_i}(xi_i)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    /// Total degree `|alpha|`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Squared norm of the basis polynomial: `alpha! = prod_i alpha_i!`.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|&k| factorial(k)).product()
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k as u64).map(|i| i as f64).product()
}

/// Number of multi-indices with n variables and total degree <= p:
/// `(n+p)! / (n! p!)`.
pub fn term_count(n: usize, p: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Basis("need at least one variable".into()));
    }
    // C(n+p, p) via incremental products; each intermediate is itself a
    // binomial coefficient, so the division is exact.
    let mut acc: u128 = 1;
    for i in 1..=p as u128 {
        acc = acc
            .checked_mul(n as u128 + i)
            .ok_or_else(|| Error::Basis(format!("basis size for n={n}, p={p} overflows")))?
            / i;
        if acc > MAX_TERMS as u128 {
            return Err(Error::Basis(format!(
                "basis size for n={n}, p={p} exceeds the supported bound {MAX_TERMS}"
            )));
        }
    }
    Ok(acc as usize)
}

/// All multi-indices with `n` variables and degree <= `p`, graded, with
/// lexicographically descending exponents inside each grade (constant term
/// first).
pub fn multi_indices(n: usize, p: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut scratch = vec![0u32; n];
    for degree in 0..=p as u32 {
        emit_compositions(degree, 0, &mut scratch, &mut out);
    }
    out
}

fn emit_compositions(remaining: u32, pos: usize, scratch: &mut [u32], out: &mut Vec<MultiIndex>) {
    if pos == scratch.len() - 1 {
        scratch[pos] = remaining;
        out.push(MultiIndex(scratch.to_vec()));
        return;
    }
    for k in (0..=remaining).rev() {
        scratch[pos] = k;
        emit_compositions(remaining - k, pos + 1, scratch, out);
    }
}

// ---------------------------------------------------------------------------
// Univariate Hermite polynomials
// ---------------------------------------------------------------------------

/// Probabilists' Hermite polynomial `He_k(x)` via the three-term recurrence
/// `He_{k+1} = x He_k - k He_{k-1}`.
pub fn hermite_uni(k: u32, x: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for i in 1..k {
        let next = x * cur - (i as f64) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Evaluate a multivariate basis polynomial at `xi`.
pub fn eval_basis(alpha: &MultiIndex, xi: &[f64]) -> Result<f64> {
    if alpha.0.len() != xi.len() {
        return Err(Error::Dimension(format!(
            "multi-index has {} variables, point has {}",
            alpha.0.len(),
            xi.len()
        )));
    }
    Ok(alpha
        .0
        .iter()
        .zip(xi)
        .map(|(&k, &x)| hermite_uni(k, x))
        .product())
}

/// Free-function form of [`MultiIndex::norm_sq`].
pub fn norm_sq(alpha: &MultiIndex) -> f64 {
    alpha.norm_sq()
}

// ---------------------------------------------------------------------------
// Triple products
// ---------------------------------------------------------------------------

/// `<He_a, He_b> = a! [a = b]`.
fn pair_expectation(a: u32, b: u32) -> f64 {
    if a == b {
        factorial(a)
    } else {
        0.0
    }
}

/// `<x He_a He_b>`: from `x He_a = He_{a+1} + a He_{a-1}`, this is
/// `(a+1)! [b = a+1] + a! [b = a-1]`.
fn linear_pair_expectation(a: u32, b: u32) -> f64 {
    if b == a + 1 {
        factorial(b)
    } else if a == b + 1 {
        factorial(a)
    } else {
        0.0
    }
}

/// Exact `<xi_m psi_j psi_k>` from the univariate product identity,
/// multiplied across dimensions.
pub fn linear_triple(m: usize, j: &MultiIndex, k: &MultiIndex) -> f64 {
    debug_assert_eq!(j.0.len(), k.0.len());
    let mut prod = 1.0;
    for (i, (&a, &b)) in j.0.iter().zip(&k.0).enumerate() {
        let factor = if i == m {
            linear_pair_expectation(a, b)
        } else {
            pair_expectation(a, b)
        };
        if factor == 0.0 {
            return 0.0;
        }
        prod *= factor;
    }
    prod
}

// ---------------------------------------------------------------------------
// Basis
// ---------------------------------------------------------------------------

/// A truncated Hermite basis: the index set, per-index squared norms, and
/// per-variable triple-product tables `T_m[j][k] = <xi_m psi_j psi_k>`.
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct ChaosBasis {
    n: usize,
    p: usize,
    indices: Vec<MultiIndex>,
    norms: Vec<f64>,
    /// One dense size x size table per variable; symmetric in (j, k).
    triples: Vec<Vec<f64>>,
}

impl ChaosBasis {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        let size = term_count(n, p)?;
        let indices = multi_indices(n, p);
        debug_assert_eq!(indices.len(), size);
        let norms: Vec<f64> = indices.iter().map(MultiIndex::norm_sq).collect();
        let mut triples = vec![vec![0.0; size * size]; n];
        for (m, table) in triples.iter_mut().enumerate() {
            for j in 0..size {
                for k in j..size {
                    let v = linear_triple(m, &indices[j], &indices[k]);
                    table[j * size + k] = v;
                    table[k * size + j] = v;
                }
            }
        }
        Ok(ChaosBasis {
            n,
            p,
            indices,
            norms,
            triples,
        })
    }

    pub fn vars(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn multi_index(&self, i: usize) -> &MultiIndex {
        &self.indices[i]
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn norm_sq(&self, i: usize) -> f64 {
        self.norms[i]
    }

    /// `<xi_m psi_j psi_k>` from the precomputed table.
    pub fn triple(&self, m: usize, j: usize, k: usize) -> f64 {
        self.triples[m][j * self.len() + k]
    }

    /// `<psi_j psi_k> = delta_jk * norm_sq(j)`.
    pub fn pair(&self, j: usize, k: usize) -> f64 {
        if j == k {
            self.norms[j]
        } else {
            0.0
        }
    }

    /// Position of the degree-1 index for variable `m` (the polynomial
    /// `xi_m` itself).
    pub fn linear_index(&self, m: usize) -> Option<usize> {
        self.indices
            .iter()
            .position(|a| a.degree() == 1 && a.0[m] == 1)
    }

    /// Evaluate basis polynomial `i` at `xi`.
    pub fn eval(&self, i: usize, xi: &[f64]) -> f64 {
        self.indices[i]
            .0
            .iter()
            .zip(xi)
            .map(|(&k, &x)| hermite_uni(k, x))
            .product()
    }

    /// Evaluate every basis polynomial at `xi` into `out`.
    pub fn eval_all(&self, xi: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.eval(i, xi);
        }
    }
}

// ---------------------------------------------------------------------------
// Lognormal input expansion
// ---------------------------------------------------------------------------

/// Hermite coefficients of `exp(mu + sigma * xi)` on `He_0 .. He_p`:
/// `c_k = exp(mu + sigma^2/2) * sigma^k / k!`.
pub fn lognormal_coeffs(mu: f64, sigma: f64, p: usize) -> Vec<f64> {
    let scale = (mu + 0.5 * sigma * sigma).exp();
    let mut coeffs = Vec::with_capacity(p + 1);
    let mut term = scale;
    coeffs.push(term);
    for k in 1..=p as u32 {
        term *= sigma / k as f64;
        coeffs.push(term);
    }
    coeffs
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (standard-normal weight)
// ---------------------------------------------------------------------------

/// Nodes and weights such that `sum_i w_i f(x_i) ~ E[f(xi)]` for standard
/// Gaussian `xi`; exact for polynomials of degree `2 * points - 1`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence
/// (zero diagonal, off-diagonal `sqrt(k)`).
pub fn gauss_hermite(points: usize) -> GaussHermite {
    assert!(points >= 1, "need at least one quadrature point");
    let mut jacobi = DMatrix::<f64>::zeros(points, points);
    for k in 1..points {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let first = eig.eigenvectors[(0, i)];
            (node, first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussHermite {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Full tensor grid over `n` dimensions: every combination of 1-D nodes with
/// the product weight.
pub fn tensor_grid(gh: &GaussHermite, n: usize) -> Vec<(Vec<f64>, f64)> {
    let m = gh.nodes.len();
    let total = m.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let point: Vec<f64> = idx.iter().map(|&i| gh.nodes[i]).collect();
        let weight: f64 = idx.iter().map(|&i| gh.weights[i]).product();
        out.push((point, weight));
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}
