//! Modified nodal analysis: nominal and first-order sensitivity matrices.
//!
//! Supply pins are Norton-transformed (pin conductance onto the diagonal,
//! `Vdd / Rpkg` as an injected current), which keeps the conductance matrix
//! symmetric positive definite. Pins with zero package resistance fix their
//! node voltage and are eliminated from the unknowns.
//!
//! The stochastic model: conductances scale with a single combined
//! width/thickness variable, the gate share of the capacitance and the drain
//! currents track the channel-length variable. In rhs-only mode the matrices
//! are deterministic and the loads carry per-region threshold variables with
//! a lognormal leakage share.

use crate::chaos::{lognormal_coeffs, ChaosBasis};
use crate::error::{Error, Result};
use crate::netlist::{ElementKind, Grid, Waveform};

// ---------------------------------------------------------------------------
// Triplets
// ---------------------------------------------------------------------------

/// Matrix in coordinate form. Duplicate entries are permitted and are summed
/// on conversion to compressed storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTriplets {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseTriplets {
    pub fn new(dim: usize) -> Self {
        SparseTriplets {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }

    /// Entrywise scaling.
    pub fn scaled(&self, k: f64) -> Self {
        SparseTriplets {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|&(r, c, v)| (r, c, v * k))
                .collect(),
        }
    }

    /// Append `k * other` to this matrix (dimensions must match).
    pub fn add_scaled(&mut self, other: &SparseTriplets, k: f64) {
        debug_assert_eq!(self.dim, other.dim);
        self.entries
            .extend(other.entries.iter().map(|&(r, c, v)| (r, c, v * k)));
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&(_, _, v)| v == 0.0)
    }
}

// ---------------------------------------------------------------------------
// Perturbed system
// ---------------------------------------------------------------------------

/// A transient current attached to one system row. The drain current flows
/// out of the node for `scale = -1` (the usual load orientation).
#[derive(Debug, Clone)]
pub struct LoadTerm {
    /// Row in the reduced (free-node) system.
    pub row: usize,
    /// Grid node index the term acts on.
    pub node: usize,
    /// Sign of the contribution (+1 into the node, -1 out of it).
    pub scale: f64,
    pub waveform: Waveform,
    /// Region index in rhs-only mode.
    pub region: Option<usize>,
}

/// Nominal and sensitivity MNA matrices plus the excitation model.
///
/// Invariants: `ga` is symmetric positive definite after the Norton
/// transform; `gg = sigma_g * ga` and `cc = gate_cap_fraction * sigma_l * ca`
/// entrywise; `ca`/`cc` are symmetric (diagonal when every capacitor is
/// node-to-ground).
#[derive(Debug, Clone)]
pub struct PerturbedSystem {
    pub ga: SparseTriplets,
    pub gg: SparseTriplets,
    pub ca: SparseTriplets,
    pub cc: SparseTriplets,
    /// Constant Norton injections per row (scales with the conductance
    /// variable).
    pub injections: Vec<f64>,
    pub loads: Vec<LoadTerm>,
    /// Effective 1-sigma fraction of the combined conductance variable.
    pub sigma_g: f64,
    /// 1-sigma fraction of the channel-length variable.
    pub sigma_l: f64,
    /// Linear drain-current coefficient w.r.t. the length variable.
    pub current_sensitivity: f64,
    /// Leakage share of each load in rhs-only mode.
    pub leak_fraction: f64,
    /// Number of free (non-eliminated) nodes: the system dimension.
    pub dim: usize,
    /// Grid node -> system row (`None` for ideally pinned nodes).
    pub node_rows: Vec<Option<usize>>,
    /// Grid node -> fixed voltage for ideally pinned nodes.
    pub fixed_voltage: Vec<Option<f64>>,
    pub node_names: Vec<String>,
    /// Reference supply voltage (drops are measured against it).
    pub vdd_ref: f64,
    /// Every supply pin (ideal or not) sits at `vdd_ref`.
    pub pins_uniform: bool,
    pub rhs_only: bool,
    /// Region count in rhs-only mode (0 otherwise).
    pub regions: usize,
}

/// Combine independent width and thickness fractions into one conductance
/// variable: with `G ~ W*T` to first order, `sigma_g = sqrt(sw^2 + st^2)`.
pub fn combine_width_thickness(sigma_w: f64, sigma_t: f64) -> f64 {
    (sigma_w * sigma_w + sigma_t * sigma_t).sqrt()
}

/// Stamp a grid into a [`PerturbedSystem`].
pub fn assemble(grid: &Grid) -> Result<PerturbedSystem> {
    grid.variation.validate()?;
    let var = &grid.variation;
    let m = grid.node_count();

    // Ideal pins (zero package resistance) fix their node voltage.
    let mut fixed_voltage: Vec<Option<f64>> = vec![None; m];
    for e in &grid.elements {
        if let ElementKind::VddPin {
            volts,
            package_ohms,
        } = e.kind
        {
            if package_ohms == 0.0 {
                let node = grid
                    .node_index(&e.node_a)
                    .ok_or_else(|| Error::Grid(format!("pin '{}' on ground", e.name)))?;
                match fixed_voltage[node] {
                    Some(v) if v != volts => {
                        return Err(Error::Grid(format!(
                            "node '{}' pinned to both {} V and {} V by ideal pins",
                            e.node_a, v, volts
                        )))
                    }
                    _ => fixed_voltage[node] = Some(volts),
                }
            }
        }
    }

    let mut node_rows: Vec<Option<usize>> = vec![None; m];
    let mut dim = 0;
    for (node, row) in node_rows.iter_mut().enumerate() {
        if fixed_voltage[node].is_none() {
            *row = Some(dim);
            dim += 1;
        }
    }

    let mut ga = SparseTriplets::new(dim);
    let mut ca = SparseTriplets::new(dim);
    let mut injections = vec![0.0; dim];
    let mut loads = Vec::new();

    // Row of a node, its fixed voltage, or None for ground.
    let classify = |name: &str| -> NodeSlot {
        match grid.node_index(name) {
            None => NodeSlot::Ground,
            Some(n) => match node_rows[n] {
                Some(row) => NodeSlot::Free { row, node: n },
                None => NodeSlot::Fixed(fixed_voltage[n].unwrap()),
            },
        }
    };

    for e in &grid.elements {
        match &e.kind {
            ElementKind::Resistor { ohms } => {
                let g = 1.0 / ohms;
                stamp_pair(
                    &mut ga,
                    Some(&mut injections),
                    classify(&e.node_a),
                    classify(&e.node_b),
                    g,
                );
            }
            ElementKind::Capacitor { farads } => {
                // A capacitor to a fixed node sees a constant voltage there,
                // so only the diagonal term survives elimination.
                stamp_pair(
                    &mut ca,
                    None,
                    classify(&e.node_a),
                    classify(&e.node_b),
                    *farads,
                );
            }
            ElementKind::VddPin {
                volts,
                package_ohms,
            } => {
                if *package_ohms == 0.0 {
                    continue; // handled by elimination
                }
                let g = 1.0 / package_ohms;
                match classify(&e.node_a) {
                    NodeSlot::Free { row, .. } => {
                        ga.push(row, row, g);
                        injections[row] += volts * g;
                    }
                    // Pin behind an ideal pin: the node voltage is already
                    // fixed; the extra source changes nothing downstream.
                    NodeSlot::Fixed(_) | NodeSlot::Ground => {}
                }
            }
            ElementKind::CurrentLoad { waveform } => {
                // Current flows node_a -> node_b: out of a, into b.
                for (slot, scale) in [(classify(&e.node_a), -1.0), (classify(&e.node_b), 1.0)] {
                    if let NodeSlot::Free { row, node } = slot {
                        loads.push(LoadTerm {
                            row,
                            node,
                            scale,
                            waveform: waveform.clone(),
                            region: None,
                        });
                    }
                }
            }
        }
    }

    let sigma_g = combine_width_thickness(var.sigma_w, var.sigma_t);
    // rhs-only mode keeps the matrices deterministic; sigma_l then drives
    // the load model instead of the gate capacitance.
    let gg = ga.scaled(sigma_g);
    let cc = ca.scaled(if var.rhs_only {
        0.0
    } else {
        var.gate_cap_fraction * var.sigma_l
    });

    let mut regions = 0;
    if var.rhs_only {
        for load in &mut loads {
            let name = grid.node_name(load.node);
            let region = *var.regions.get(name).ok_or_else(|| {
                Error::Grid(format!("load node '{name}' has no region assignment"))
            })?;
            load.region = Some(region);
            regions = regions.max(region + 1);
        }
        regions = regions.max(var.region_count());
    }

    let vdd_ref = grid.vdd();
    if vdd_ref <= 0.0 {
        return Err(Error::Grid("no Vdd pin".into()));
    }
    let pins_uniform = grid.elements.iter().all(|e| match e.kind {
        ElementKind::VddPin { volts, .. } => volts == vdd_ref,
        _ => true,
    });

    Ok(PerturbedSystem {
        ga,
        gg,
        ca,
        cc,
        injections,
        loads,
        sigma_g,
        sigma_l: var.sigma_l,
        current_sensitivity: var.current_sensitivity,
        leak_fraction: var.leak_fraction,
        dim,
        node_rows,
        fixed_voltage,
        node_names: grid.node_names().to_vec(),
        vdd_ref,
        pins_uniform,
        rhs_only: var.rhs_only,
        regions,
    })
}

enum NodeSlot {
    Free { row: usize, node: usize },
    Fixed(f64),
    Ground,
}

/// Two-terminal conductance/capacitance stamp with elimination of fixed
/// nodes. For conductances, the eliminated side feeds `g * V_fixed` into the
/// injection vector; capacitor feeds vanish because the fixed voltage is
/// constant.
fn stamp_pair(
    matrix: &mut SparseTriplets,
    injections: Option<&mut Vec<f64>>,
    a: NodeSlot,
    b: NodeSlot,
    value: f64,
) {
    match (&a, &b) {
        (NodeSlot::Free { row: i, .. }, NodeSlot::Free { row: j, .. }) => {
            matrix.push(*i, *i, value);
            matrix.push(*j, *j, value);
            matrix.push(*i, *j, -value);
            matrix.push(*j, *i, -value);
        }
        (NodeSlot::Free { row, .. }, NodeSlot::Ground)
        | (NodeSlot::Ground, NodeSlot::Free { row, .. }) => {
            matrix.push(*row, *row, value);
        }
        (NodeSlot::Free { row, .. }, NodeSlot::Fixed(v))
        | (NodeSlot::Fixed(v), NodeSlot::Free { row, .. }) => {
            matrix.push(*row, *row, value);
            if let Some(inj) = injections {
                inj[*row] += value * v;
            }
        }
        // Both terminals at known potentials: nothing to solve for.
        _ => {}
    }
}

impl PerturbedSystem {
    /// Number of stochastic variables the system depends on: the combined
    /// conductance variable plus the length variable, or one variable per
    /// region in rhs-only mode.
    pub fn n_vars(&self) -> usize {
        if self.rhs_only {
            self.regions
        } else {
            2
        }
    }

    /// Row of a grid node, if it was not eliminated.
    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.node_rows[node]
    }

    /// Conductance matrix at a sample point: `Ga * (1 + sigma_g * xi_g)`.
    pub fn g_triplets_at(&self, xi: &[f64]) -> SparseTriplets {
        if self.rhs_only {
            return self.ga.clone();
        }
        let xi_g = xi.first().copied().unwrap_or(0.0);
        self.ga.scaled(1.0 + self.sigma_g * xi_g)
    }

    /// Capacitance matrix at a sample point: `Ca + Cc * xi_l`.
    pub fn c_triplets_at(&self, xi: &[f64]) -> SparseTriplets {
        if self.rhs_only {
            return self.ca.clone();
        }
        let xi_l = xi.get(1).copied().unwrap_or(0.0);
        let mut c = self.ca.clone();
        c.add_scaled(&self.cc, xi_l);
        c
    }

    /// Per-load current multiplier at a sample point (exact model, not the
    /// truncated expansion).
    fn load_multiplier(&self, load: &LoadTerm, xi: &[f64]) -> f64 {
        if self.rhs_only {
            let r = load.region.expect("rhs-only load without region");
            let z = xi[r];
            let lam = self.leak_fraction;
            (1.0 - lam) * (1.0 + self.current_sensitivity * self.sigma_l * z)
                + lam * (self.sigma_l * z).exp()
        } else {
            let xi_l = xi.get(1).copied().unwrap_or(0.0);
            1.0 + self.current_sensitivity * self.sigma_l * xi_l
        }
    }

    /// Excitation vector at time `t` and sample point `xi` (exact model).
    pub fn rhs_at(&self, t: f64, xi: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let inj_scale = if self.rhs_only {
            1.0
        } else {
            1.0 + self.sigma_g * xi.first().copied().unwrap_or(0.0)
        };
        for (slot, &inj) in out.iter_mut().zip(&self.injections) {
            *slot = inj * inj_scale;
        }
        for load in &self.loads {
            out[load.row] += load.scale * load.waveform.eval(t) * self.load_multiplier(load, xi);
        }
    }

    /// Excitation at the nominal point (all variables zero).
    pub fn rhs_nominal(&self, t: f64, out: &mut [f64]) {
        let zeros = vec![0.0; self.n_vars().max(2)];
        self.rhs_at(t, &zeros, out);
    }

    /// Mean excitation component `U_a(t)`.
    pub fn rhs_mean_into(&self, t: f64, out: &mut [f64]) {
        self.rhs_nominal(t, out);
    }

    /// Conductance-variable excitation component `U_g` (constant in time).
    pub fn rhs_g_into(&self, out: &mut [f64]) {
        for (slot, &inj) in out.iter_mut().zip(&self.injections) {
            *slot = self.sigma_g * inj;
        }
    }

    /// Length-variable excitation component `U_c(t)`.
    pub fn rhs_l_into(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        let coeff = self.current_sensitivity * self.sigma_l;
        for load in &self.loads {
            out[load.row] += load.scale * load.waveform.eval(t) * coeff;
        }
    }

    /// True when every load is zero at `t = 0` and all pins share one
    /// voltage: the pre-switching steady state is then exactly `Vdd` at
    /// every node, for any sample point, and no DC factorization is needed.
    pub fn rest_state_is_vdd(&self) -> bool {
        let loads_quiet = self.loads.iter().all(|load| load.waveform.eval(0.0) == 0.0);
        loads_quiet && self.pins_uniform
    }
}

// ---------------------------------------------------------------------------
// Stochastic right-hand side (rhs-only mode)
// ---------------------------------------------------------------------------

/// Hermite expansion of the excitation: one term per basis index, each a
/// constant vector plus scaled references to the load waveforms.
#[derive(Debug, Clone)]
pub struct RhsSeries {
    terms: Vec<RhsTerm>,
}

#[derive(Debug, Clone)]
struct RhsTerm {
    constant: Option<Vec<f64>>,
    /// (load index, coefficient) pairs.
    load_coeffs: Vec<(usize, f64)>,
}

impl RhsSeries {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when the term has any contribution at all.
    pub fn term_is_nonzero(&self, j: usize) -> bool {
        let t = &self.terms[j];
        t.constant.is_some() || !t.load_coeffs.is_empty()
    }

    /// Evaluate expansion term `j` at time `t`.
    pub fn eval_term_into(&self, sys: &PerturbedSystem, j: usize, t: f64, out: &mut [f64]) {
        let term = &self.terms[j];
        match &term.constant {
            Some(c) => out.copy_from_slice(c),
            None => out.fill(0.0),
        }
        for &(load_idx, coeff) in &term.load_coeffs {
            let load = &sys.loads[load_idx];
            out[load.row] += load.scale * load.waveform.eval(t) * coeff;
        }
    }
}

/// Expand the stochastic excitation of an rhs-only system over `basis`.
///
/// Each load splits into a drain share with linear sensitivity and a leakage
/// share following the exact lognormal law `exp(sigma_l * xi_r)`; both ride
/// on the region variable of the load's node.
pub fn rhs_expansion(sys: &PerturbedSystem, basis: &ChaosBasis) -> Result<RhsSeries> {
    if !sys.rhs_only {
        return Err(Error::Unsupported(
            "rhs_expansion requires rhs-only mode".into(),
        ));
    }
    if basis.vars() != sys.regions {
        return Err(Error::Dimension(format!(
            "basis has {} variables, system has {} regions",
            basis.vars(),
            sys.regions
        )));
    }

    let p = basis.order();
    let log_coeffs = lognormal_coeffs(0.0, sys.sigma_l, p);
    let lam = sys.leak_fraction;

    // Basis position of the pure power k on region variable r.
    let mut power_index = vec![vec![None; p + 1]; sys.regions.max(1)];
    for (i, alpha) in basis.indices().iter().enumerate() {
        let exps = alpha.exponents();
        match exps
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .collect::<Vec<_>>()[..]
        {
            [] => {
                for slot in power_index.iter_mut() {
                    slot[0] = Some(i);
                }
            }
            [(var, &e)] => power_index[var][e as usize] = Some(i),
            _ => {}
        }
    }

    let mut terms: Vec<RhsTerm> = (0..basis.len())
        .map(|_| RhsTerm {
            constant: None,
            load_coeffs: Vec::new(),
        })
        .collect();
    terms[0].constant = Some(sys.injections.clone());

    for (load_idx, load) in sys.loads.iter().enumerate() {
        let r = load.region.ok_or_else(|| {
            Error::Grid(format!(
                "load at node '{}' has no region assignment",
                sys.node_names[load.node]
            ))
        })?;
        for k in 0..=p {
            let coeff = match k {
                0 => (1.0 - lam) + lam * log_coeffs[0],
                1 => (1.0 - lam) * sys.current_sensitivity * sys.sigma_l + lam * log_coeffs[1],
                _ => lam * log_coeffs[k],
            };
            if coeff == 0.0 {
                continue;
            }
            let idx = power_index[r][k].expect("power index present for k <= p");
            terms[idx].load_coeffs.push((load_idx, coeff));
        }
    }

    Ok(RhsSeries { terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;
    use approx::assert_relative_eq;

    fn dense(t: &SparseTriplets) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; t.dim]; t.dim];
        for &(r, c, v) in &t.entries {
            m[r][c] += v;
        }
        m
    }

    #[test]
    fn combine_examples() {
        assert_relative_eq!(
            combine_width_thickness(0.20, 0.15),
            0.25,
            max_relative = 1e-15
        );
        assert_eq!(combine_width_thickness(0.07, 0.0), 0.07);
        assert_relative_eq!(combine_width_thickness(0.3, 0.4), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn two_node_ladder_stamps() {
        // V1 -- 1 ohm package -- n1 -- 2 ohm -- n2, 0.1 A load at n2.
        let text = "\
V1 n1 0 1.2 RPKG=1
R12 n1 n2 2
IL n2 0 PWL(0 0.1)
";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        assert_eq!(sys.dim, 2);
        let ga = dense(&sys.ga);
        assert_relative_eq!(ga[0][0], 1.5, max_relative = 1e-15);
        assert_relative_eq!(ga[0][1], -0.5, max_relative = 1e-15);
        assert_relative_eq!(ga[1][0], -0.5, max_relative = 1e-15);
        assert_relative_eq!(ga[1][1], 0.5, max_relative = 1e-15);
        assert_eq!(sys.injections, vec![1.2, 0.0]);
        assert_eq!(sys.loads.len(), 1);
        assert_eq!(sys.loads[0].scale, -1.0);
    }

    #[test]
    fn zero_variation_gives_zero_sensitivities() {
        let text = "V1 n1 0 1.2 RPKG=1\nR12 n1 n2 2\nC2 n2 0 1p\n";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        assert!(sys.gg.is_zero());
        assert!(sys.cc.is_zero());
    }

    #[test]
    fn gate_cap_fraction_zero_gives_zero_cc() {
        let text = "\
.VARIATION SL3=30 GCF=0
V1 n1 0 1.2 RPKG=1
R12 n1 n2 2
C2 n2 0 1p
";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        assert!(sys.sigma_l > 0.0);
        assert!(sys.cc.is_zero());
    }

    #[test]
    fn entrywise_proportionality() {
        let text = "\
.VARIATION SW3=20 ST3=15 SL3=20
V1 n1 0 1.2 RPKG=0.5
R12 n1 n2 2
R23 n2 n3 3
C2 n2 0 1p
C3 n3 0 2p
";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        let sg = sys.sigma_g;
        assert_relative_eq!(sg, 0.25 / 3.0, max_relative = 1e-12);
        for (&(r, c, g), &(r2, c2, gg)) in sys.ga.entries.iter().zip(&sys.gg.entries) {
            assert_eq!((r, c), (r2, c2));
            assert_relative_eq!(gg, sg * g, max_relative = 1e-15);
        }
        let cl = 0.4 * sys.sigma_l;
        for (&(r, c, ca), &(r2, c2, cc)) in sys.ca.entries.iter().zip(&sys.cc.entries) {
            assert_eq!((r, c), (r2, c2));
            assert_relative_eq!(cc, cl * ca, max_relative = 1e-15);
        }
    }

    #[test]
    fn ideal_pin_eliminates_node() {
        let text = "V1 n1 0 1.0\nR12 n1 n2 2\nIL n2 0 PWL(0 0.1)\n";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        assert_eq!(sys.dim, 1);
        assert_eq!(sys.node_rows, vec![None, Some(0)]);
        assert_eq!(sys.fixed_voltage[0], Some(1.0));
        // Eliminated resistor side: g on the diagonal, g * Vdd injected.
        let ga = dense(&sys.ga);
        assert_relative_eq!(ga[0][0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(sys.injections[0], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn conflicting_ideal_pins_error() {
        let text = "V1 n1 0 1.0\nV2 n1 0 1.2\nR12 n1 n2 2\n";
        let err = assemble(&parse_netlist(text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("pinned to both"), "{err}");
    }

    #[test]
    fn sample_evaluators() {
        let text = "\
.VARIATION SW3=30 SL3=30 GCF=0.5 ISENS=-1
V1 n1 0 1.2 RPKG=1
R12 n1 n2 2
C2 n2 0 1p
IL n2 0 PWL(0 0.1)
";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        let sg = sys.sigma_g;
        let xi = [1.0, -2.0];
        let g = dense(&sys.g_triplets_at(&xi));
        let g0 = dense(&sys.ga);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(g[i][j], g0[i][j] * (1.0 + sg), max_relative = 1e-14);
            }
        }
        let c = dense(&sys.c_triplets_at(&xi));
        let expected_c = 1e-12 * (1.0 + 0.5 * 0.1 * -2.0);
        assert_relative_eq!(c[1][1], expected_c, max_relative = 1e-14);

        let mut rhs = vec![0.0; 2];
        sys.rhs_at(0.0, &xi, &mut rhs);
        assert_relative_eq!(rhs[0], 1.2 * (1.0 + sg), max_relative = 1e-14);
        // load: -0.1 * (1 + (-1) * 0.1 * (-2)) = -0.1 * 1.2
        assert_relative_eq!(rhs[1], -0.12, max_relative = 1e-14);
    }

    #[test]
    fn dc_with_no_loads_sits_at_vdd() {
        // With every pin at one Vdd and only pin injections, the DC
        // solution is Vdd at every node; this also backs the engines'
        // rest-state shortcut.
        let text = "\
V1 n1 0 1.2 RPKG=0.5
V2 n4 0 1.2 RPKG=0.25
R12 n1 n2 2
R23 n2 n3 1
R34 n3 n4 3
C2 n2 0 1p
";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        let g = crate::solver::compress(&sys.ga).unwrap();
        let v = crate::solver::dc_solve(&g, &sys.injections).unwrap();
        for &x in &v {
            assert_relative_eq!(x, 1.2, max_relative = 1e-12);
        }
    }

    #[test]
    fn sampled_conductance_definiteness_range() {
        let text = "\
.VARIATION SW3=60
V1 n1 0 1.2 RPKG=0.5
R12 n1 n2 2
R23 n2 n3 1
";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        let sg = sys.sigma_g;
        assert!(sg > 0.0);
        // Positive definite anywhere above the -1/sigma_g pole.
        for xi in [-0.999 / sg, -2.0, 0.0, 3.0, 50.0] {
            let g = crate::solver::compress(&sys.g_triplets_at(&[xi, 0.0])).unwrap();
            assert!(crate::solver::factor(&g).is_ok(), "xi = {xi}");
        }
        // Beyond the pole the scaled matrix turns negative definite.
        let g = crate::solver::compress(&sys.g_triplets_at(&[-1.5 / sg, 0.0])).unwrap();
        assert!(crate::solver::factor(&g).is_err());
    }

    #[test]
    fn rest_state_detection() {
        let quiet = "V1 n1 0 1.2 RPKG=1\nR12 n1 n2 2\nIL n2 0 PWL(0 0 1n 1m)\n";
        let sys = assemble(&parse_netlist(quiet).unwrap()).unwrap();
        assert!(sys.rest_state_is_vdd());

        let active = "V1 n1 0 1.2 RPKG=1\nR12 n1 n2 2\nIL n2 0 PWL(0 1m)\n";
        let sys = assemble(&parse_netlist(active).unwrap()).unwrap();
        assert!(!sys.rest_state_is_vdd());
    }

    fn rhs_only_grid(leak: f64, sl3: f64) -> Grid {
        let text = format!(
            "\
.VARIATION SL3={sl3} LEAK={leak}
V1 n1 0 1.2 RPKG=0.5
R12 n1 n2 1
R13 n1 n3 1
IL2 n2 0 PWL(0 0 1n 1m)
IL3 n3 0 PWL(0 0 1n 2m)
.REGION n2 0
.REGION n3 1
"
        );
        parse_netlist(&text).unwrap()
    }

    #[test]
    fn rhs_expansion_two_regions_p2() {
        let sys = assemble(&rhs_only_grid(1.0, 30.0)).unwrap();
        assert_eq!(sys.n_vars(), 2);
        let basis = ChaosBasis::new(2, 2).unwrap();
        let series = rhs_expansion(&sys, &basis).unwrap();
        assert_eq!(series.len(), 6);
        // Pure lognormal with sigma = 0.1: every per-region power up to 2
        // contributes; the cross term (1,1) stays empty.
        for j in 0..6 {
            let expect_nonzero = j != 4;
            assert_eq!(series.term_is_nonzero(j), expect_nonzero, "term {j}");
        }
    }

    #[test]
    fn rhs_expansion_zero_sigma_only_mean() {
        let sys = assemble(&rhs_only_grid(1.0, 0.0)).unwrap();
        let basis = ChaosBasis::new(2, 2).unwrap();
        let series = rhs_expansion(&sys, &basis).unwrap();
        let mut buf = vec![0.0; sys.dim];
        for j in 1..series.len() {
            series.eval_term_into(&sys, j, 1e-9, &mut buf);
            assert!(buf.iter().all(|&v| v == 0.0), "term {j} should vanish");
        }
        series.eval_term_into(&sys, 0, 1e-9, &mut buf);
        assert!(buf.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rhs_expansion_lognormal_coefficients() {
        // Single region, pure leakage, sigma_l = 0.5 (SL3 = 150... out of
        // range). Use SL3 = 90 -> sigma 0.3 and check the closed form.
        let text = "\
.VARIATION SL3=90 LEAK=1
V1 n1 0 1.2 RPKG=0.5
R12 n1 n2 1
IL n2 0 PWL(0 1m)
.REGION n2 0
";
        let sys = assemble(&parse_netlist(text).unwrap()).unwrap();
        let basis = ChaosBasis::new(1, 2).unwrap();
        let series = rhs_expansion(&sys, &basis).unwrap();
        let sigma: f64 = 0.3;
        let scale = (sigma * sigma / 2.0).exp();
        let expected = [scale, scale * sigma, scale * sigma * sigma / 2.0];
        let mut buf = vec![0.0; sys.dim];
        for (k, &c) in expected.iter().enumerate() {
            series.eval_term_into(&sys, k, 0.0, &mut buf);
            let load_row = sys.loads[0].row;
            let got = if k == 0 {
                buf[load_row] - sys.injections[load_row]
            } else {
                buf[load_row]
            };
            assert_relative_eq!(got, -1e-3 * c, max_relative = 1e-13);
        }
    }

    #[test]
    fn rhs_expansion_requires_regions() {
        let text = "\
.VARIATION SL3=30
V1 n1 0 1.2 RPKG=0.5
R12 n1 n2 1
IL n2 0 PWL(0 1m)
R13 n1 n3 1
IL3 n3 0 PWL(0 1m)
.REGION n2 0
";
        let err = assemble(&parse_netlist(text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("no region assignment"), "{err}");
    }
}
