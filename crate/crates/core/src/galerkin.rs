//! Galerkin projection of the stochastic MNA system onto a Hermite basis.
//!
//! Requiring the truncation residual to be orthogonal to every basis
//! polynomial turns the random system `(G(xi) + s C(xi)) x = U(s, xi)` into
//! one deterministic block system `(G~ + s C~) a = U~` over all expansion
//! coefficients. Block `(j, k)` of `G~` is
//! `<psi_j psi_k> Ga + <xi_g psi_j psi_k> Gg`, and analogously for `C~` with
//! the length variable; the projections are exact because the matrix model
//! is linear in the variables.
//!
//! Blocks are stored as scaled references to the four base matrices and only
//! expanded to one flat sparse matrix when handed to the factorization.
//!
//! When only the excitation is stochastic, the projection decouples into
//! independent systems sharing the nominal matrices; [`assemble_rhs_only`]
//! exposes that path (one factorization, one solve per expansion term).

use crate::chaos::ChaosBasis;
use crate::error::{Error, Result};
use crate::mna::{rhs_expansion, PerturbedSystem, RhsSeries, SparseTriplets};
use crate::solver::compress;

/// Which base matrix a block points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSource {
    Ga,
    Gg,
    Ca,
    Cc,
}

impl BlockSource {
    fn label(self) -> &'static str {
        match self {
            BlockSource::Ga => "Ga",
            BlockSource::Gg => "Gg",
            BlockSource::Ca => "Ca",
            BlockSource::Cc => "Cc",
        }
    }
}

/// One block of the augmented matrix: `scale * source`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRef {
    pub scale: f64,
    pub source: BlockSource,
}

/// Selects the conductance or capacitance side of the augmented system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    G,
    C,
}

enum RhsForm {
    /// Standard mode: `U = U_a + U_g xi_g + U_c xi_l` projects onto the
    /// constant and the two linear basis polynomials.
    Linear {
        idx_g: Option<usize>,
        idx_l: Option<usize>,
    },
    /// rhs-only mode: projection of a general expansion is
    /// `norm_sq(j) * U_j`.
    Expanded(RhsSeries),
}

/// The coupled block system `(G~ + s C~) a(s) = U~(s)`.
pub struct AugmentedSystem<'a> {
    sys: &'a PerturbedSystem,
    basis: &'a ChaosBasis,
    /// `[j][k]`: each block has at most one contribution, because diagonal
    /// blocks only see the pair product and off-diagonal blocks only the
    /// triple product.
    blocks_g: Vec<Vec<Option<BlockRef>>>,
    blocks_c: Vec<Vec<Option<BlockRef>>>,
    rhs: RhsForm,
}

/// Build the augmented system over `basis`.
///
/// Standard mode expects the two-variable basis (conductance + length); a
/// one-variable basis is accepted when nothing in the system depends on the
/// length variable. rhs-only systems expect one variable per region.
pub fn assemble_augmented<'a>(
    sys: &'a PerturbedSystem,
    basis: &'a ChaosBasis,
) -> Result<AugmentedSystem<'a>> {
    let rhs = if sys.rhs_only {
        if basis.vars() != sys.regions {
            return Err(Error::Dimension(format!(
                "basis has {} variables, rhs-only system has {} regions",
                basis.vars(),
                sys.regions
            )));
        }
        RhsForm::Expanded(rhs_expansion(sys, basis)?)
    } else {
        let length_free =
            sys.cc.is_zero() && (sys.sigma_l == 0.0 || sys.current_sensitivity == 0.0);
        match basis.vars() {
            2 => {}
            1 if length_free => {}
            n => {
                return Err(Error::Dimension(format!(
                    "basis has {n} variables, system has sensitivities for 2"
                )))
            }
        }
        RhsForm::Linear {
            idx_g: basis.linear_index(0),
            idx_l: if basis.vars() > 1 {
                basis.linear_index(1)
            } else {
                None
            },
        }
    };

    let terms = basis.len();
    let gg_zero = sys.gg.is_zero();
    let cc_zero = sys.cc.is_zero();
    let mut blocks_g = vec![vec![None; terms]; terms];
    let mut blocks_c = vec![vec![None; terms]; terms];
    for j in 0..terms {
        for k in 0..terms {
            let pair = basis.pair(j, k);
            if pair != 0.0 {
                blocks_g[j][k] = Some(BlockRef {
                    scale: pair,
                    source: BlockSource::Ga,
                });
                if !sys.ca.is_zero() {
                    blocks_c[j][k] = Some(BlockRef {
                        scale: pair,
                        source: BlockSource::Ca,
                    });
                }
            }
            if !sys.rhs_only {
                let tg = basis.triple(0, j, k);
                if tg != 0.0 && !gg_zero {
                    debug_assert!(pair == 0.0);
                    blocks_g[j][k] = Some(BlockRef {
                        scale: tg,
                        source: BlockSource::Gg,
                    });
                }
                if basis.vars() > 1 {
                    let tl = basis.triple(1, j, k);
                    if tl != 0.0 && !cc_zero {
                        debug_assert!(pair == 0.0);
                        blocks_c[j][k] = Some(BlockRef {
                            scale: tl,
                            source: BlockSource::Cc,
                        });
                    }
                }
            }
        }
    }

    Ok(AugmentedSystem {
        sys,
        basis,
        blocks_g,
        blocks_c,
        rhs,
    })
}

impl<'a> AugmentedSystem<'a> {
    pub fn system(&self) -> &PerturbedSystem {
        self.sys
    }

    pub fn basis(&self) -> &ChaosBasis {
        self.basis
    }

    /// Number of expansion terms (block rows).
    pub fn terms(&self) -> usize {
        self.basis.len()
    }

    /// Flat dimension `terms * nodes`.
    pub fn dim(&self) -> usize {
        self.terms() * self.sys.dim
    }

    pub fn block(&self, side: Side, j: usize, k: usize) -> Option<BlockRef> {
        match side {
            Side::G => self.blocks_g[j][k],
            Side::C => self.blocks_c[j][k],
        }
    }

    fn source_triplets(&self, source: BlockSource) -> &SparseTriplets {
        match source {
            BlockSource::Ga => &self.sys.ga,
            BlockSource::Gg => &self.sys.gg,
            BlockSource::Ca => &self.sys.ca,
            BlockSource::Cc => &self.sys.cc,
        }
    }

    /// Expand one side into flat triplets of dimension [`Self::dim`].
    pub fn flatten(&self, side: Side) -> SparseTriplets {
        let m = self.sys.dim;
        let mut out = SparseTriplets::new(self.dim());
        let blocks = match side {
            Side::G => &self.blocks_g,
            Side::C => &self.blocks_c,
        };
        for (j, row) in blocks.iter().enumerate() {
            for (k, block) in row.iter().enumerate() {
                if let Some(b) = block {
                    let base = self.source_triplets(b.source);
                    for &(r, c, v) in &base.entries {
                        out.push(j * m + r, k * m + c, v * b.scale);
                    }
                }
            }
        }
        out
    }

    /// Projected excitation `U~(t)` into a flat vector of [`Self::dim`].
    pub fn rhs_into(&self, t: f64, out: &mut [f64]) {
        let m = self.sys.dim;
        debug_assert_eq!(out.len(), self.dim());
        out.fill(0.0);
        match &self.rhs {
            RhsForm::Linear { idx_g, idx_l } => {
                self.sys.rhs_mean_into(t, &mut out[0..m]);
                if let Some(j) = idx_g {
                    self.sys.rhs_g_into(&mut out[j * m..(j + 1) * m]);
                }
                if let Some(j) = idx_l {
                    self.sys.rhs_l_into(t, &mut out[j * m..(j + 1) * m]);
                }
            }
            RhsForm::Expanded(series) => {
                let mut buf = vec![0.0; m];
                for j in 0..series.len() {
                    if !series.term_is_nonzero(j) {
                        continue;
                    }
                    series.eval_term_into(self.sys, j, t, &mut buf);
                    let norm = self.basis.norm_sq(j);
                    for (slot, &v) in out[j * m..(j + 1) * m].iter_mut().zip(&buf) {
                        *slot = norm * v;
                    }
                }
            }
        }
    }

    /// Fraction of blocks that are structurally nonzero.
    pub fn nonzero_block_fraction(&self, side: Side) -> f64 {
        let blocks = match side {
            Side::G => &self.blocks_g,
            Side::C => &self.blocks_c,
        };
        let total = self.terms() * self.terms();
        let nonzero = blocks.iter().flatten().filter(|b| b.is_some()).count();
        nonzero as f64 / total as f64
    }

    /// Text dump of the block pattern, one row per block row, entries like
    /// `Ga`, `2Gg`, or `0`.
    pub fn block_pattern(&self, side: Side) -> String {
        let blocks = match side {
            Side::G => &self.blocks_g,
            Side::C => &self.blocks_c,
        };
        let mut out = String::new();
        for row in blocks {
            let labels: Vec<String> = row
                .iter()
                .map(|b| match b {
                    None => "0".to_string(),
                    Some(b) if b.scale == 1.0 => b.source.label().to_string(),
                    Some(b) if b.scale == b.scale.trunc() => {
                        format!("{}{}", b.scale as i64, b.source.label())
                    }
                    Some(b) => format!("{}{}", b.scale, b.source.label()),
                })
                .collect();
            out.push_str(&labels.join(" "));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Decoupled (rhs-only) path
// ---------------------------------------------------------------------------

/// Expansion-term systems sharing the deterministic matrices: solving all of
/// them against one factorization reproduces the coupled Galerkin solve.
#[derive(Debug)]
pub struct DecoupledSystem<'a> {
    sys: &'a PerturbedSystem,
    series: RhsSeries,
}

/// Build the decoupled form. Errors when the matrices carry any variation
/// (that configuration needs the coupled system).
pub fn assemble_rhs_only<'a>(
    sys: &'a PerturbedSystem,
    series: RhsSeries,
) -> Result<DecoupledSystem<'a>> {
    if !sys.gg.is_zero() || !sys.cc.is_zero() {
        return Err(Error::Unsupported(
            "decoupled path requires zero matrix sensitivities (Gg = Cc = 0)".into(),
        ));
    }
    Ok(DecoupledSystem { sys, series })
}

impl<'a> DecoupledSystem<'a> {
    pub fn system(&self) -> &PerturbedSystem {
        self.sys
    }

    pub fn terms(&self) -> usize {
        self.series.len()
    }

    /// Excitation of expansion term `j` at time `t` (an `M`-vector).
    pub fn rhs_term_into(&self, j: usize, t: f64, out: &mut [f64]) {
        self.series.eval_term_into(self.sys, j, t, out);
    }

    pub fn term_is_nonzero(&self, j: usize) -> bool {
        self.series.term_is_nonzero(j)
    }
}

// ---------------------------------------------------------------------------
// Truncation-residual diagnostic
// ---------------------------------------------------------------------------

/// Residual norm of the reconstructed response at one sample point:
/// `|| G(xi) x + C(xi) (x - x_prev)/h - U(t, xi) ||` with `x` rebuilt from
/// the stacked coefficients `a`. Pass `prev = None` for the static (DC)
/// residual.
pub fn residual_check(
    aug: &AugmentedSystem,
    a: &[f64],
    prev: Option<(&[f64], f64)>,
    xi: &[f64],
    t: f64,
) -> Result<f64> {
    let m = aug.sys.dim;
    if a.len() != aug.dim() {
        return Err(Error::Dimension(format!(
            "coefficient vector has {} entries, expected {}",
            a.len(),
            aug.dim()
        )));
    }

    let reconstruct = |stacked: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; m];
        for j in 0..aug.terms() {
            let w = aug.basis.eval(j, xi);
            if w == 0.0 {
                continue;
            }
            for (slot, &v) in x.iter_mut().zip(&stacked[j * m..(j + 1) * m]) {
                *slot += w * v;
            }
        }
        x
    };

    let x = reconstruct(a);
    let mut residual = vec![0.0; m];
    aug.sys.rhs_at(t, xi, &mut residual);
    for r in residual.iter_mut() {
        *r = -*r;
    }
    let g = compress(&aug.sys.g_triplets_at(xi))?;
    g.mul_vec_add(&x, &mut residual);
    if let Some((prev_a, h)) = prev {
        if prev_a.len() != a.len() {
            return Err(Error::Dimension(
                "previous coefficient vector has a different length".into(),
            ));
        }
        let x_prev = reconstruct(prev_a);
        let c = compress(&aug.sys.c_triplets_at(xi))?;
        let dxdt: Vec<f64> = x
            .iter()
            .zip(&x_prev)
            .map(|(now, before)| (now - before) / h)
            .collect();
        c.mul_vec_add(&dxdt, &mut residual);
    }
    Ok(residual.iter().map(|r| r * r).sum::<f64>().sqrt())
}
