//! End-to-end engines and statistics.
//!
//! Three routes to the same moments:
//!
//! * [`run_pc`] is the chaos engine: one coupled Galerkin transient (or the
//!   decoupled shared-factorization path for rhs-only grids) yielding
//!   explicit expansion coefficients per node and time step.
//! * [`run_mc`] is Monte Carlo over the exact sample model, with streaming
//!   (Welford) moment accumulation and deterministic block reduction.
//! * [`run_quadrature`] samples the exact model on a tensor Gauss-Hermite
//!   grid: a deterministic high-accuracy reference that replaces noisy
//!   Monte Carlo where tight tolerances are needed.
//!
//! All engines report the voltage *drop* `Vdd - v(t)` per node, so the mean
//! waveforms line up with nominal IR-drop numbers.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{gauss_hermite, tensor_grid, ChaosBasis};
use crate::error::{Error, Result};
use crate::galerkin::{assemble_augmented, assemble_rhs_only, Side};
use crate::mna::{assemble, rhs_expansion, PerturbedSystem};
use crate::netlist::Grid;
use crate::solver::{compress, dc_solve, step_count, TransientSolver};

/// Monte Carlo and sampling paths truncate the Gaussians here; beyond it a
/// large negative conductance variable could make a sampled matrix
/// indefinite.
pub const GAUSSIAN_TRUNCATION: f64 = 4.0;

/// Samples per Monte Carlo reduction block. Fixed so results are
/// bit-identical for any thread count.
const MC_BLOCK: usize = 16;

/// Hard cap on tensor-quadrature points (`level ^ n_vars`).
pub const QUADRATURE_POINT_CAP: usize = 4096;

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// Chaos-expansion result: drop coefficients `[step][term][node]`, plus the
/// nominal (zero-variation) drop waveforms.
#[derive(Debug, Clone)]
pub struct PcResult {
    pub times: Vec<f64>,
    pub node_names: Vec<String>,
    pub coeffs: Vec<Vec<Vec<f64>>>,
    pub nominal: Vec<Vec<f64>>,
    pub basis: ChaosBasis,
    pub vdd: f64,
    pub elapsed_s: f64,
}

/// Monte Carlo result: streaming accumulators per `[step][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub times: Vec<f64>,
    pub node_names: Vec<String>,
    pub vdd: f64,
    pub seed: u64,
    pub requested_samples: usize,
    /// Samples that actually contributed (requested minus failed).
    pub count: u64,
    pub failed_samples: usize,
    pub mean: Vec<Vec<f64>>,
    m2: Vec<Vec<f64>>,
    pub probe: Option<ProbeSamples>,
    pub elapsed_s: f64,
}

impl McResult {
    /// Unbiased sample variance.
    pub fn variance(&self, step: usize, node: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2[step][node] / (self.count as f64 - 1.0)
    }

    pub fn std(&self, step: usize, node: usize) -> f64 {
        self.variance(step, node).sqrt()
    }
}

/// Raw per-sample drops recorded at one probe node: `values[sample][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSamples {
    pub node: usize,
    pub values: Vec<Vec<f64>>,
}

/// Tensor-quadrature result.
#[derive(Debug, Clone)]
pub struct QuadResult {
    pub times: Vec<f64>,
    pub node_names: Vec<String>,
    pub vdd: f64,
    pub level: usize,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub elapsed_s: f64,
}

/// Moment waveforms any engine (or a stored result) can expose for
/// comparison.
pub trait MomentSource {
    fn times(&self) -> &[f64];
    fn node_names(&self) -> &[String];
    fn mean_at(&self, step: usize, node: usize) -> f64;
    fn std_at(&self, step: usize, node: usize) -> f64;
    fn elapsed_s(&self) -> f64;
}

impl MomentSource for PcResult {
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn node_names(&self) -> &[String] {
        &self.node_names
    }
    fn mean_at(&self, step: usize, node: usize) -> f64 {
        pc_mean(self, node, step)
    }
    fn std_at(&self, step: usize, node: usize) -> f64 {
        pc_variance(self, node, step).sqrt()
    }
    fn elapsed_s(&self) -> f64 {
        self.elapsed_s
    }
}

impl MomentSource for McResult {
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn node_names(&self) -> &[String] {
        &self.node_names
    }
    fn mean_at(&self, step: usize, node: usize) -> f64 {
        self.mean[step][node]
    }
    fn std_at(&self, step: usize, node: usize) -> f64 {
        self.std(step, node)
    }
    fn elapsed_s(&self) -> f64 {
        self.elapsed_s
    }
}

impl MomentSource for QuadResult {
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn node_names(&self) -> &[String] {
        &self.node_names
    }
    fn mean_at(&self, step: usize, node: usize) -> f64 {
        self.mean[step][node]
    }
    fn std_at(&self, step: usize, node: usize) -> f64 {
        self.std[step][node]
    }
    fn elapsed_s(&self) -> f64 {
        self.elapsed_s
    }
}

/// Moment waveforms loaded back from exported files.
#[derive(Debug, Clone)]
pub struct StoredMoments {
    pub times: Vec<f64>,
    pub node_names: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub elapsed_s: f64,
}

impl MomentSource for StoredMoments {
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn node_names(&self) -> &[String] {
        &self.node_names
    }
    fn mean_at(&self, step: usize, node: usize) -> f64 {
        self.mean[step][node]
    }
    fn std_at(&self, step: usize, node: usize) -> f64 {
        self.std[step][node]
    }
    fn elapsed_s(&self) -> f64 {
        self.elapsed_s
    }
}

// ---------------------------------------------------------------------------
// Chaos engine
// ---------------------------------------------------------------------------

/// Run the polynomial-chaos engine: assemble, project, integrate, and unpack
/// drop coefficients. rhs-only grids route through the decoupled path with a
/// single factorization shared by every expansion term.
pub fn run_pc(grid: &Grid, p: usize, h: f64, t_end: f64) -> Result<PcResult> {
    if p < 1 {
        return Err(Error::Unsupported("expansion order must be >= 1".into()));
    }
    let start = Instant::now();
    let sys = assemble(grid)?;
    let steps = step_count(h, t_end)?;
    let mut result = if sys.rhs_only {
        run_pc_decoupled(&sys, p, h, steps)?
    } else {
        run_pc_coupled(&sys, p, h, steps)?
    };
    result.elapsed_s = start.elapsed().as_secs_f64();
    Ok(result)
}

fn run_pc_coupled(sys: &PerturbedSystem, p: usize, h: f64, steps: usize) -> Result<PcResult> {
    let basis = ChaosBasis::new(2, p)?;
    let aug = assemble_augmented(sys, &basis)?;
    let terms = aug.terms();
    let m = sys.dim;

    let g_flat = compress(&aug.flatten(Side::G))?;
    let c_flat = compress(&aug.flatten(Side::C))?;
    let stepper = TransientSolver::new(&g_flat, &c_flat, h)?;

    let x0 = if sys.rest_state_is_vdd() {
        let mut x0 = vec![0.0; terms * m];
        x0[0..m].fill(sys.vdd_ref);
        x0
    } else {
        let mut rhs0 = vec![0.0; terms * m];
        aug.rhs_into(0.0, &mut rhs0);
        dc_solve(&g_flat, &rhs0)?
    };
    let trajectory = stepper.run(|t, out| aug.rhs_into(t, out), x0, steps);

    let nominal = nominal_drops(sys, h, steps)?;

    let node_count = sys.node_names.len();
    let coeffs = trajectory
        .states
        .iter()
        .map(|state| {
            (0..terms)
                .map(|j| {
                    (0..node_count)
                        .map(|node| match sys.node_rows[node] {
                            Some(row) => {
                                let a = state[j * m + row];
                                if j == 0 {
                                    sys.vdd_ref - a
                                } else {
                                    -a
                                }
                            }
                            None => {
                                if j == 0 {
                                    sys.vdd_ref - sys.fixed_voltage[node].unwrap()
                                } else {
                                    0.0
                                }
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    Ok(PcResult {
        times: trajectory.times,
        node_names: sys.node_names.clone(),
        coeffs,
        nominal,
        basis,
        vdd: sys.vdd_ref,
        elapsed_s: 0.0,
    })
}

fn run_pc_decoupled(sys: &PerturbedSystem, p: usize, h: f64, steps: usize) -> Result<PcResult> {
    if sys.regions == 0 {
        return Err(Error::Unsupported(
            "rhs-only grid has no regions (nothing stochastic)".into(),
        ));
    }
    let basis = ChaosBasis::new(sys.regions, p)?;
    let series = rhs_expansion(sys, &basis)?;
    let decoupled = assemble_rhs_only(sys, series)?;
    let terms = decoupled.terms();
    let m = sys.dim;

    let g = compress(&sys.ga)?;
    let c = compress(&sys.ca)?;
    // The single factorization shared by every term and the nominal run.
    let stepper = TransientSolver::new(&g, &c, h)?;

    let rest = sys.rest_state_is_vdd();
    let dc_factor = if rest {
        None
    } else {
        Some(crate::solver::factor(&g)?)
    };

    let mut term_states: Vec<Vec<Vec<f64>>> = Vec::with_capacity(terms);
    let mut times = Vec::new();
    let mut rhs0 = vec![0.0; m];
    for j in 0..terms {
        let x0 = match &dc_factor {
            None => {
                if j == 0 {
                    vec![sys.vdd_ref; m]
                } else {
                    vec![0.0; m]
                }
            }
            Some(f) => {
                decoupled.rhs_term_into(j, 0.0, &mut rhs0);
                f.solve(&rhs0)
            }
        };
        if !decoupled.term_is_nonzero(j) && x0.iter().all(|&v| v == 0.0) {
            // Identically zero trajectory; skip the stepping.
            term_states.push(vec![vec![0.0; m]; steps + 1]);
            if times.is_empty() {
                times = (0..=steps).map(|k| k as f64 * h).collect();
            }
            continue;
        }
        let trajectory = stepper.run(|t, out| decoupled.rhs_term_into(j, t, out), x0, steps);
        times = trajectory.times;
        term_states.push(trajectory.states);
    }

    // Nominal run on the same factorization (same matrices, exact model).
    let x0_nom = if rest {
        vec![sys.vdd_ref; m]
    } else {
        let mut rhs = vec![0.0; m];
        sys.rhs_nominal(0.0, &mut rhs);
        dc_factor.as_ref().unwrap().solve(&rhs)
    };
    let nominal_traj = stepper.run(|t, out| sys.rhs_nominal(t, out), x0_nom, steps);
    let nominal = nominal_traj
        .states
        .iter()
        .map(|state| drops_from_state(sys, state))
        .collect();

    let node_count = sys.node_names.len();
    let coeffs = (0..=steps)
        .map(|step| {
            (0..terms)
                .map(|j| {
                    (0..node_count)
                        .map(|node| match sys.node_rows[node] {
                            Some(row) => {
                                let a = term_states[j][step][row];
                                if j == 0 {
                                    sys.vdd_ref - a
                                } else {
                                    -a
                                }
                            }
                            None => {
                                if j == 0 {
                                    sys.vdd_ref - sys.fixed_voltage[node].unwrap()
                                } else {
                                    0.0
                                }
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    Ok(PcResult {
        times,
        node_names: sys.node_names.clone(),
        coeffs,
        nominal,
        basis,
        vdd: sys.vdd_ref,
        elapsed_s: 0.0,
    })
}

/// Deterministic zero-variation transient, as drop waveforms.
fn nominal_drops(sys: &PerturbedSystem, h: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let g = compress(&sys.ga)?;
    let c = compress(&sys.ca)?;
    let stepper = TransientSolver::new(&g, &c, h)?;
    let x0 = if sys.rest_state_is_vdd() {
        vec![sys.vdd_ref; sys.dim]
    } else {
        let mut rhs = vec![0.0; sys.dim];
        sys.rhs_nominal(0.0, &mut rhs);
        dc_solve(&g, &rhs)?
    };
    let trajectory = stepper.run(|t, out| sys.rhs_nominal(t, out), x0, steps);
    Ok(trajectory
        .states
        .iter()
        .map(|state| drops_from_state(sys, state))
        .collect())
}

/// Voltage drops per grid node from a free-row state vector.
fn drops_from_state(sys: &PerturbedSystem, state: &[f64]) -> Vec<f64> {
    (0..sys.node_names.len())
        .map(|node| match sys.node_rows[node] {
            Some(row) => sys.vdd_ref - state[row],
            None => sys.vdd_ref - sys.fixed_voltage[node].unwrap(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Moments from the expansion
// ---------------------------------------------------------------------------

/// Mean drop: the constant-term coefficient.
pub fn pc_mean(r: &PcResult, node: usize, step: usize) -> f64 {
    r.coeffs[step][0][node]
}

/// Variance: `sum_{j >= 1} a_j^2 norm_sq(j)`.
pub fn pc_variance(r: &PcResult, node: usize, step: usize) -> f64 {
    r.coeffs[step]
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, term)| {
            let a = term[node];
            a * a * r.basis.norm_sq(j)
        })
        .sum()
}

pub fn pc_std(r: &PcResult, node: usize, step: usize) -> f64 {
    pc_variance(r, node, step).sqrt()
}

/// Raw moment `E[x^k]` of the expanded drop, by Gauss-Hermite quadrature of
/// the explicit expansion (exact: the integrand is a degree `k*p`
/// polynomial).
pub fn pc_moment(r: &PcResult, node: usize, step: usize, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Unsupported("moment order must be >= 1".into()));
    }
    let degree = k * r.basis.order();
    let level = degree / 2 + 1;
    let gh = gauss_hermite(level.max(1));
    let grid = tensor_grid(&gh, r.basis.vars());
    let coeffs = &r.coeffs[step];
    let mut acc = 0.0;
    for (xi, w) in &grid {
        let mut x = 0.0;
        for (j, term) in coeffs.iter().enumerate() {
            if term[node] != 0.0 {
                x += term[node] * r.basis.eval(j, xi);
            }
        }
        acc += w * x.powi(k as i32);
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Fixed-width histogram: `edges` has `len(counts) + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, _)| 0.5 * (self.edges[i] + self.edges[i + 1]))
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin raw values into `bins` equal-width bins spanning their range. A
/// degenerate (constant) data set occupies a single bin of unit width.
pub fn histogram_from_values(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Unsupported(
            "histogram needs at least one value".into(),
        ));
    }
    if bins == 0 {
        return Err(Error::Unsupported(
            "histogram needs at least one bin".into(),
        ));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if min == max {
        (min - 0.5, max + 0.5)
    } else {
        (min, max)
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Ok(Histogram { edges, counts })
}

fn draw_truncated(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= GAUSSIAN_TRUNCATION {
                break z;
            }
        })
        .collect()
}

/// Sample the explicit drop expansion at one node and time step and bin the
/// values. Deterministic for a fixed seed.
pub fn sample_distribution(
    r: &PcResult,
    node: usize,
    step: usize,
    samples: usize,
    bins: usize,
    seed: u64,
) -> Result<Histogram> {
    if samples < 1 {
        return Err(Error::Unsupported("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = &r.coeffs[step];
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            let xi = draw_truncated(&mut rng, r.basis.vars());
            coeffs
                .iter()
                .enumerate()
                .map(|(j, term)| term[node] * r.basis.eval(j, &xi))
                .sum()
        })
        .collect();
    histogram_from_values(&values, bins)
}

// ---------------------------------------------------------------------------
// Monte Carlo engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct McOptions {
    pub samples: usize,
    pub h: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Worker threads; 1 runs fully sequentially. Results are identical for
    /// any thread count.
    pub threads: usize,
    /// Grid node whose raw per-sample drops should be recorded.
    pub probe_node: Option<usize>,
}

/// Monte Carlo with default options (single-threaded, no probe).
pub fn run_mc(grid: &Grid, samples: usize, h: f64, t_end: f64, seed: u64) -> Result<McResult> {
    run_mc_with(
        grid,
        &McOptions {
            samples,
            h,
            t_end,
            seed,
            threads: 1,
            probe_node: None,
        },
    )
}

struct BlockAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    failed: usize,
    probe: Vec<Vec<f64>>,
}

impl BlockAccumulator {
    fn new(len: usize) -> Self {
        BlockAccumulator {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
            failed: 0,
            probe: Vec::new(),
        }
    }

    /// Welford update with one flat sample vector.
    fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    /// Chan's pairwise merge, applied in fixed block order.
    fn merge(&mut self, other: BlockAccumulator) {
        self.failed += other.failed;
        self.probe.extend(other.probe);
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean = other.mean;
            self.m2 = other.m2;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let nab = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / nab;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / nab;
        }
        self.count += other.count;
    }
}

/// Monte Carlo over the exact sample model: per sample, draw truncated
/// Gaussians, scale the matrices and excitation, run a deterministic
/// transient, and stream the drops into mean/variance accumulators. Samples
/// whose matrix fails to factor are counted and skipped.
pub fn run_mc_with(grid: &Grid, opts: &McOptions) -> Result<McResult> {
    if opts.samples < 2 {
        return Err(Error::Unsupported("Monte Carlo needs samples >= 2".into()));
    }
    let start = Instant::now();
    let sys = assemble(grid)?;
    let steps = step_count(opts.h, opts.t_end)?;
    let n_nodes = sys.node_names.len();
    let flat_len = (steps + 1) * n_nodes;
    if let Some(node) = opts.probe_node {
        if node >= n_nodes {
            return Err(Error::Dimension(format!(
                "probe node {node} out of range ({n_nodes} nodes)"
            )));
        }
    }

    let n_vars = sys.n_vars().max(1);
    let rest = sys.rest_state_is_vdd();

    let run_sample = |s: usize| -> Option<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(s as u64 + 1);
        let xi = draw_truncated(&mut rng, n_vars);

        let g = compress(&sys.g_triplets_at(&xi)).ok()?;
        let c = compress(&sys.c_triplets_at(&xi)).ok()?;
        let stepper = TransientSolver::new(&g, &c, opts.h).ok()?;
        let x0 = if rest {
            vec![sys.vdd_ref; sys.dim]
        } else {
            let mut rhs = vec![0.0; sys.dim];
            sys.rhs_at(0.0, &xi, &mut rhs);
            dc_solve(&g, &rhs).ok()?
        };
        let trajectory = stepper.run(|t, out| sys.rhs_at(t, &xi, out), x0, steps);

        let mut flat = Vec::with_capacity(flat_len);
        for state in &trajectory.states {
            flat.extend(drops_from_state(&sys, state));
        }
        Some(flat)
    };

    let process_block = |block: usize| -> BlockAccumulator {
        let mut acc = BlockAccumulator::new(flat_len);
        let lo = block * MC_BLOCK;
        let hi = ((block + 1) * MC_BLOCK).min(opts.samples);
        for s in lo..hi {
            match run_sample(s) {
                Some(flat) => {
                    if let Some(node) = opts.probe_node {
                        let series = (0..=steps).map(|k| flat[k * n_nodes + node]).collect();
                        acc.probe.push(series);
                    }
                    acc.push(&flat);
                }
                None => acc.failed += 1,
            }
        }
        acc
    };

    let n_blocks = opts.samples.div_ceil(MC_BLOCK);
    let block_results: Vec<BlockAccumulator> = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
        pool.install(|| (0..n_blocks).into_par_iter().map(process_block).collect())
    } else {
        (0..n_blocks).map(process_block).collect()
    };

    let mut total = BlockAccumulator::new(flat_len);
    for block in block_results {
        total.merge(block);
    }
    if total.count < 2 {
        return Err(Error::Singular(format!(
            "only {} of {} Monte Carlo samples factored successfully",
            total.count, opts.samples
        )));
    }

    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * opts.h).collect();
    let unflatten = |flat: &[f64]| -> Vec<Vec<f64>> {
        (0..=steps)
            .map(|k| flat[k * n_nodes..(k + 1) * n_nodes].to_vec())
            .collect()
    };

    Ok(McResult {
        times,
        node_names: sys.node_names.clone(),
        vdd: sys.vdd_ref,
        seed: opts.seed,
        requested_samples: opts.samples,
        count: total.count,
        failed_samples: total.failed,
        mean: unflatten(&total.mean),
        m2: unflatten(&total.m2),
        probe: opts.probe_node.map(|node| ProbeSamples {
            node,
            values: total.probe,
        }),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Quadrature engine
// ---------------------------------------------------------------------------

/// Tensor Gauss-Hermite reference: one deterministic transient per node of
/// the tensor grid, weighted into exact-model moments.
pub fn run_quadrature(grid: &Grid, level: usize, h: f64, t_end: f64) -> Result<QuadResult> {
    let start = Instant::now();
    let sys = assemble(grid)?;
    let n = sys.n_vars();
    if n == 0 {
        return Err(Error::Unsupported("no stochastic variables".into()));
    }
    if n > 3 {
        return Err(Error::Unsupported(format!(
            "tensor quadrature supports at most 3 variables, grid has {n}"
        )));
    }
    if level < 2 {
        return Err(Error::Unsupported("quadrature level must be >= 2".into()));
    }
    let points = level
        .checked_pow(n as u32)
        .filter(|&p| p <= QUADRATURE_POINT_CAP)
        .ok_or_else(|| {
            Error::Unsupported(format!(
                "level^n = {level}^{n} exceeds the {QUADRATURE_POINT_CAP}-point cap"
            ))
        })?;
    let _ = points;

    let steps = step_count(h, t_end)?;
    let n_nodes = sys.node_names.len();
    let flat_len = (steps + 1) * n_nodes;
    let rest = sys.rest_state_is_vdd();

    // Weighted Welford accumulation: exact zeros when every sample point
    // produces the same trajectory, unlike the E[x^2] - mean^2 form.
    let gh = gauss_hermite(level);
    let mut wsum = 0.0;
    let mut mean = vec![0.0; flat_len];
    let mut m2 = vec![0.0; flat_len];
    for (xi, w) in tensor_grid(&gh, n) {
        let g = compress(&sys.g_triplets_at(&xi))?;
        let c = compress(&sys.c_triplets_at(&xi))?;
        let stepper = TransientSolver::new(&g, &c, h)?;
        let x0 = if rest {
            vec![sys.vdd_ref; sys.dim]
        } else {
            let mut rhs = vec![0.0; sys.dim];
            sys.rhs_at(0.0, &xi, &mut rhs);
            dc_solve(&g, &rhs)?
        };
        let trajectory = stepper.run(|t, out| sys.rhs_at(t, &xi, out), x0, steps);
        wsum += w;
        for (k, state) in trajectory.states.iter().enumerate() {
            let drops = drops_from_state(&sys, state);
            for (node, &d) in drops.iter().enumerate() {
                let idx = k * n_nodes + node;
                let delta = d - mean[idx];
                mean[idx] += (w / wsum) * delta;
                m2[idx] += w * delta * (d - mean[idx]);
            }
        }
    }

    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    let mut mean_rows = Vec::with_capacity(steps + 1);
    let mut std_rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let row_mean = mean[k * n_nodes..(k + 1) * n_nodes].to_vec();
        let row_std: Vec<f64> = (0..n_nodes)
            .map(|node| (m2[k * n_nodes + node] / wsum).max(0.0).sqrt())
            .collect();
        mean_rows.push(row_mean);
        std_rows.push(row_std);
    }

    Ok(QuadResult {
        times,
        node_names: sys.node_names.clone(),
        vdd: sys.vdd_ref,
        level,
        mean: mean_rows,
        std: std_rows,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

/// Accuracy and cost summary of a chaos run against a reference engine.
/// Mean errors are percentages of the supply voltage; sigma errors are
/// relative to the reference sigma (cells with zero reference sigma are
/// excluded and counted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub avg_pct_err_mu: f64,
    pub max_pct_err_mu: f64,
    pub avg_pct_err_sigma: f64,
    pub max_pct_err_sigma: f64,
    /// `+/- 3 sigma` spread as a percentage of the nominal drop, averaged
    /// over nodes at each node's peak-drop time.
    pub pm3sigma_pct_of_nominal: f64,
    pub time_ref_s: f64,
    pub time_pc_s: f64,
    pub speedup: f64,
    pub sigma_cells_excluded: usize,
}

/// Compare a chaos result against a reference moment source on the same grid
/// and time grid.
pub fn compare(pc: &PcResult, reference: &dyn MomentSource) -> Result<ComparisonReport> {
    compare_moments(pc, &pc.nominal, pc.vdd, reference)
}

/// [`compare`] with the chaos side supplied as plain moment waveforms (for
/// results loaded back from files). `nominal` is the zero-variation drop
/// `[step][node]`, which anchors the spread statistic.
pub fn compare_moments(
    pc: &dyn MomentSource,
    nominal: &[Vec<f64>],
    vdd: f64,
    reference: &dyn MomentSource,
) -> Result<ComparisonReport> {
    if pc.node_names() != reference.node_names() {
        return Err(Error::Dimension("node sets differ between results".into()));
    }
    let times = reference.times();
    if pc.times().len() != times.len()
        || pc
            .times()
            .iter()
            .zip(times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::Dimension("time grids differ between results".into()));
    }
    if nominal.len() != times.len() {
        return Err(Error::Dimension(
            "nominal waveforms do not match the time grid".into(),
        ));
    }

    let n_nodes = pc.node_names().len();
    let n_steps = times.len();
    let mut sum_mu = 0.0;
    let mut max_mu: f64 = 0.0;
    let mut sum_sigma = 0.0;
    let mut max_sigma: f64 = 0.0;
    let mut sigma_cells = 0usize;
    let mut excluded = 0usize;
    for step in 0..n_steps {
        for node in 0..n_nodes {
            let err_mu =
                (pc.mean_at(step, node) - reference.mean_at(step, node)).abs() / vdd * 100.0;
            sum_mu += err_mu;
            max_mu = max_mu.max(err_mu);

            let sigma_ref = reference.std_at(step, node);
            if sigma_ref == 0.0 {
                excluded += 1;
                continue;
            }
            let err_sigma = (pc.std_at(step, node) - sigma_ref).abs() / sigma_ref * 100.0;
            sum_sigma += err_sigma;
            max_sigma = max_sigma.max(err_sigma);
            sigma_cells += 1;
        }
    }

    // Spread statistic, anchored at each node's peak nominal drop.
    let mut spread_sum = 0.0;
    let mut spread_nodes = 0usize;
    for node in 0..n_nodes {
        let (peak_step, peak) = nominal
            .iter()
            .enumerate()
            .map(|(step, row)| (step, row[node]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if peak > 0.0 {
            spread_sum += 3.0 * pc.std_at(peak_step, node) / peak * 100.0;
            spread_nodes += 1;
        }
    }

    let cells = (n_steps * n_nodes) as f64;
    let time_ref_s = reference.elapsed_s();
    let time_pc_s = pc.elapsed_s();
    Ok(ComparisonReport {
        avg_pct_err_mu: sum_mu / cells,
        max_pct_err_mu: max_mu,
        avg_pct_err_sigma: if sigma_cells > 0 {
            sum_sigma / sigma_cells as f64
        } else {
            0.0
        },
        max_pct_err_sigma: max_sigma,
        pm3sigma_pct_of_nominal: if spread_nodes > 0 {
            spread_sum / spread_nodes as f64
        } else {
            0.0
        },
        time_ref_s,
        time_pc_s,
        speedup: if time_pc_s > 0.0 {
            time_ref_s / time_pc_s
        } else {
            f64::INFINITY
        },
        sigma_cells_excluded: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_netlist, LoadSpec, MeshSpec, VariationSpec, Waveform};
    use approx::assert_relative_eq;

    fn pulse() -> Waveform {
        Waveform::new(vec![(0.0, 0.0), (1e-9, 1e-3), (3e-9, 1e-3), (4e-9, 0.0)]).unwrap()
    }

    fn small_mesh(variation: VariationSpec) -> Grid {
        crate::netlist::generate_mesh(&MeshSpec {
            rows: 4,
            cols: 4,
            r_seg: 1.0,
            c_node: 1e-12,
            pin_spacing: 3,
            vdd: 1.2,
            pin_resistance: 0.5,
            load: Some(LoadSpec {
                template: pulse(),
                density: 0.4,
            }),
            variation,
            seed: 11,
        })
        .unwrap()
    }

    fn paper_variation() -> VariationSpec {
        VariationSpec {
            sigma_w: 0.20 / 3.0,
            sigma_t: 0.15 / 3.0,
            sigma_l: 0.20 / 3.0,
            ..VariationSpec::default()
        }
    }

    #[test]
    fn zero_variation_matches_deterministic() {
        let grid = small_mesh(VariationSpec::default());
        let r = run_pc(&grid, 2, 0.25e-9, 5e-9).unwrap();
        assert_eq!(r.basis.len(), 6);
        for step in 0..r.times.len() {
            for node in 0..r.node_names.len() {
                assert_relative_eq!(
                    pc_mean(&r, node, step),
                    r.nominal[step][node],
                    epsilon = 1e-12
                );
                for j in 1..r.basis.len() {
                    assert!(r.coeffs[step][j][node].abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn passivity_at_rest() {
        // No loads: every node should hold Vdd (zero drop) for all steps.
        let grid = crate::netlist::generate_mesh(&MeshSpec {
            rows: 3,
            cols: 3,
            r_seg: 1.0,
            c_node: 1e-12,
            pin_spacing: 2,
            vdd: 1.2,
            pin_resistance: 0.5,
            load: None,
            variation: paper_variation(),
            seed: 1,
        })
        .unwrap();
        let r = run_pc(&grid, 2, 0.5e-9, 5e-9).unwrap();
        for step in 0..r.times.len() {
            for node in 0..r.node_names.len() {
                assert!(pc_mean(&r, node, step).abs() < 1e-10);
                assert!(pc_std(&r, node, step) < 1e-10);
            }
        }
    }

    #[test]
    fn pc_variance_weights() {
        // Hand-built coefficient set over the 2-variable order-2 basis.
        let basis = ChaosBasis::new(2, 2).unwrap();
        let r = PcResult {
            times: vec![0.0],
            node_names: vec!["n".into()],
            coeffs: vec![vec![
                vec![1.0],
                vec![0.1],
                vec![0.2],
                vec![0.05],
                vec![0.01],
                vec![0.02],
            ]],
            nominal: vec![vec![1.0]],
            basis,
            vdd: 1.0,
            elapsed_s: 1.0,
        };
        assert_eq!(pc_mean(&r, 0, 0), 1.0);
        assert_relative_eq!(pc_variance(&r, 0, 0), 0.0559, max_relative = 1e-12);

        // Sign flip of odd-order coefficients leaves the variance unchanged.
        let mut flipped = r.clone();
        for (j, term) in flipped.coeffs[0].iter_mut().enumerate() {
            if flipped.basis.multi_index(j).degree() % 2 == 1 {
                term[0] = -term[0];
            }
        }
        assert_eq!(pc_variance(&r, 0, 0), pc_variance(&flipped, 0, 0));
    }

    #[test]
    fn pc_variance_matches_sampling() {
        let basis = ChaosBasis::new(2, 2).unwrap();
        let r = PcResult {
            times: vec![0.0],
            node_names: vec!["n".into()],
            coeffs: vec![vec![
                vec![1.0],
                vec![0.1],
                vec![0.2],
                vec![0.05],
                vec![0.01],
                vec![0.02],
            ]],
            nominal: vec![vec![1.0]],
            basis: basis.clone(),
            vdd: 1.0,
            elapsed_s: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let xi = draw_truncated(&mut rng, 2);
            let x: f64 = r.coeffs[0]
                .iter()
                .enumerate()
                .map(|(j, term)| term[0] * basis.eval(j, &xi))
                .sum();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(
            (var - pc_variance(&r, 0, 0)).abs() / pc_variance(&r, 0, 0) < 0.01,
            "sampled {var} vs exact {}",
            pc_variance(&r, 0, 0)
        );
    }

    #[test]
    fn pc_moment_gaussian() {
        // Expansion x = xi_g: odd moments vanish, fourth moment is 3.
        let basis = ChaosBasis::new(2, 2).unwrap();
        let r = PcResult {
            times: vec![0.0],
            node_names: vec!["n".into()],
            coeffs: vec![vec![
                vec![0.0],
                vec![1.0],
                vec![0.0],
                vec![0.0],
                vec![0.0],
                vec![0.0],
            ]],
            nominal: vec![vec![1.0]],
            basis,
            vdd: 1.0,
            elapsed_s: 1.0,
        };
        assert!(pc_moment(&r, 0, 0, 3).unwrap().abs() < 1e-12);
        assert_relative_eq!(pc_moment(&r, 0, 0, 4).unwrap(), 3.0, max_relative = 1e-12);
        assert_relative_eq!(
            pc_moment(&r, 0, 0, 1).unwrap(),
            pc_mean(&r, 0, 0),
            epsilon = 1e-14
        );
        assert!(pc_moment(&r, 0, 0, 0).is_err());
    }

    #[test]
    fn histogram_constant_occupies_one_bin() {
        let h = histogram_from_values(&[2.5; 40], 8).unwrap();
        assert_eq!(h.total(), 40);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn histogram_conserves_counts() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = histogram_from_values(&values, 25).unwrap();
        assert_eq!(h.total(), 1000);
        assert_eq!(h.counts.len(), 25);
        assert_eq!(h.edges.len(), 26);
        assert!(histogram_from_values(&values, 0).is_err());
    }

    #[test]
    fn sampled_mean_is_clt_consistent() {
        let basis = ChaosBasis::new(2, 2).unwrap();
        let r = PcResult {
            times: vec![0.0],
            node_names: vec!["n".into()],
            coeffs: vec![vec![
                vec![0.0],
                vec![1.0],
                vec![0.0],
                vec![0.0],
                vec![0.0],
                vec![0.0],
            ]],
            nominal: vec![vec![1.0]],
            basis,
            vdd: 1.0,
            elapsed_s: 1.0,
        };
        let samples = 40_000;
        let h = sample_distribution(&r, 0, 0, samples, 60, 5).unwrap();
        assert_eq!(h.total(), samples as u64);
        let centers = h.bin_centers();
        let mean: f64 = centers
            .iter()
            .zip(&h.counts)
            .map(|(c, &n)| c * n as f64)
            .sum::<f64>()
            / samples as f64;
        assert!(
            mean.abs() < 3.0 / (samples as f64).sqrt() + 0.02,
            "mean {mean}"
        );
    }

    #[test]
    fn mc_zero_variation_has_zero_variance() {
        let grid = small_mesh(VariationSpec::default());
        let mc = run_mc(&grid, 8, 0.5e-9, 4e-9, 7).unwrap();
        assert_eq!(mc.failed_samples, 0);
        for step in 0..mc.times.len() {
            for node in 0..mc.node_names.len() {
                assert!(mc.std(step, node) < 1e-14);
            }
        }
    }

    #[test]
    fn mc_deterministic_and_thread_invariant() {
        let grid = small_mesh(paper_variation());
        let a = run_mc(&grid, 40, 0.5e-9, 4e-9, 7).unwrap();
        let b = run_mc(&grid, 40, 0.5e-9, 4e-9, 7).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.m2, b.m2);
        assert_eq!(a.count, b.count);

        let threaded = run_mc_with(
            &grid,
            &McOptions {
                samples: 40,
                h: 0.5e-9,
                t_end: 4e-9,
                seed: a.seed,
                threads: 4,
                probe_node: None,
            },
        )
        .unwrap();
        assert_eq!(a.mean, threaded.mean);
        assert_eq!(a.m2, threaded.m2);
    }

    #[test]
    fn mc_streaming_matches_two_pass() {
        let grid = small_mesh(paper_variation());
        let probe = Some(2usize);
        let mc = run_mc_with(
            &grid,
            &McOptions {
                samples: 64,
                h: 0.5e-9,
                t_end: 4e-9,
                seed: 3,
                threads: 1,
                probe_node: probe,
            },
        )
        .unwrap();
        let samples = &mc.probe.as_ref().unwrap().values;
        assert_eq!(samples.len(), 64);
        // Two-pass variance at the probe node, last step.
        let last = mc.times.len() - 1;
        let xs: Vec<f64> = samples.iter().map(|row| row[last]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() as f64 - 1.0);
        let streaming = mc.variance(last, 2);
        assert!(
            (var - streaming).abs() <= 1e-12 * var.abs().max(1e-30),
            "two-pass {var} vs streaming {streaming}"
        );
    }

    #[test]
    fn quadrature_zero_variation_equals_deterministic() {
        let grid = small_mesh(VariationSpec::default());
        let q = run_quadrature(&grid, 4, 0.5e-9, 4e-9).unwrap();
        let pc = run_pc(&grid, 1, 0.5e-9, 4e-9).unwrap();
        for step in 0..q.times.len() {
            for node in 0..q.node_names.len() {
                assert_relative_eq!(q.mean[step][node], pc.nominal[step][node], epsilon = 1e-10);
                assert!(q.std[step][node] < 1e-10);
            }
        }
    }

    #[test]
    fn quadrature_rejects_oversize_tensor() {
        let grid = small_mesh(paper_variation());
        let err = run_quadrature(&grid, 100, 0.5e-9, 4e-9).unwrap_err();
        assert!(err.to_string().contains("cap"), "{err}");
    }

    #[test]
    fn quadrature_self_convergence() {
        let grid = small_mesh(paper_variation());
        let a = run_quadrature(&grid, 20, 0.5e-9, 4e-9).unwrap();
        let b = run_quadrature(&grid, 30, 0.5e-9, 4e-9).unwrap();
        let last = a.times.len() - 1;
        for node in 0..a.node_names.len() {
            let ma = a.mean[last][node];
            let mb = b.mean[last][node];
            assert!(
                (ma - mb).abs() <= 1e-8 * mb.abs().max(1e-12),
                "node {node}: {ma} vs {mb}"
            );
        }
    }

    #[test]
    fn pc_against_quadrature_small_mesh() {
        let grid = small_mesh(paper_variation());
        let pc = run_pc(&grid, 2, 0.25e-9, 5e-9).unwrap();
        let q = run_quadrature(&grid, 12, 0.25e-9, 5e-9).unwrap();
        let report = compare(&pc, &q).unwrap();
        assert!(report.avg_pct_err_mu < 0.05, "{report:?}");
        assert!(report.avg_pct_err_sigma < 2.0, "{report:?}");
        assert!(report.max_pct_err_mu >= report.avg_pct_err_mu);
        assert!(report.max_pct_err_sigma >= report.avg_pct_err_sigma);
    }

    #[test]
    fn compare_with_self_is_exact() {
        let grid = small_mesh(paper_variation());
        let pc = run_pc(&grid, 2, 0.5e-9, 4e-9).unwrap();
        let report = compare(&pc, &pc).unwrap();
        assert_eq!(report.avg_pct_err_mu, 0.0);
        assert_eq!(report.max_pct_err_mu, 0.0);
        assert_eq!(report.avg_pct_err_sigma, 0.0);
        assert_eq!(report.max_pct_err_sigma, 0.0);
        assert_eq!(report.speedup, 1.0);
    }

    #[test]
    fn compare_rejects_mismatched_grids() {
        let grid = small_mesh(paper_variation());
        let pc = run_pc(&grid, 2, 0.5e-9, 4e-9).unwrap();
        let other = run_pc(&grid, 2, 0.5e-9, 2e-9).unwrap();
        assert!(compare(&pc, &other).is_err());
    }

    #[test]
    fn mc_agrees_with_quadrature() {
        let grid = small_mesh(paper_variation());
        let mc = run_mc(&grid, 2000, 0.5e-9, 4e-9, 19).unwrap();
        let q = run_quadrature(&grid, 16, 0.5e-9, 4e-9).unwrap();
        let last = mc.times.len() - 1;
        for node in 0..mc.node_names.len() {
            let mu_mc = mc.mean[last][node];
            let mu_q = q.mean[last][node];
            assert!(
                (mu_mc - mu_q).abs() <= 0.005 * mu_q.abs().max(1e-6),
                "node {node}: mc mean {mu_mc} vs quadrature {mu_q}"
            );
            let s_mc = mc.std(last, node);
            let s_q = q.std[last][node];
            assert!(
                (s_mc - s_q).abs() <= 0.10 * s_q,
                "node {node}: mc sigma {s_mc} vs quadrature {s_q}"
            );
        }
    }

    #[test]
    fn decoupled_pc_agrees_with_quadrature() {
        // The full rhs-only stack (truncated lognormal loads) against the
        // exact-model quadrature reference.
        let text = "\
.VARIATION SL3=45 LEAK=0.7
V1 n1 0 1.2 RPKG=0.5
R12 n1 n2 1
R13 n1 n3 1
R23 n2 n3 2
C2 n2 0 50p
C3 n3 0 50p
IL2 n2 0 PWL(0 0 1n 5m 2n 0)
IL3 n3 0 PWL(0 0 1n 8m 2n 0)
.REGION n2 0
.REGION n3 1
";
        let grid = parse_netlist(text).unwrap();
        let pc = run_pc(&grid, 3, 0.25e-9, 3e-9).unwrap();
        let q = run_quadrature(&grid, 14, 0.25e-9, 3e-9).unwrap();
        let report = compare(&pc, &q).unwrap();
        assert!(report.avg_pct_err_mu < 0.01, "{report:?}");
        assert!(report.avg_pct_err_sigma < 1.0, "{report:?}");
    }

    #[test]
    fn decoupled_engine_runs() {
        let text = "\
.VARIATION SL3=45 LEAK=0.5
V1 n1 0 1.2 RPKG=0.5
R12 n1 n2 1
R13 n1 n3 1
C2 n2 0 1p
C3 n3 0 1p
IL2 n2 0 PWL(0 0 1n 1m 2n 0)
IL3 n3 0 PWL(0 0 1n 2m 2n 0)
.REGION n2 0
.REGION n3 1
";
        let grid = parse_netlist(text).unwrap();
        let r = run_pc(&grid, 2, 0.25e-9, 3e-9).unwrap();
        assert_eq!(r.basis.len(), 6);
        // The response is genuinely stochastic: some spread at peak.
        let mid = r.times.len() / 2;
        let node = 1;
        assert!(pc_std(&r, node, mid) > 0.0);
    }

    #[test]
    fn fully_pinned_grid_is_rigid() {
        // Every node held by an ideal pin: the reduced system is empty and
        // every drop stays at zero.
        let text = "\
V1 n1 0 1.2
V2 n2 0 1.2
R12 n1 n2 1
IL n2 0 PWL(0 0 1n 1m)
";
        let grid = parse_netlist(text).unwrap();
        let r = run_pc(&grid, 2, 0.25e-9, 2e-9).unwrap();
        for step in 0..r.times.len() {
            for node in 0..r.node_names.len() {
                assert_eq!(pc_mean(&r, node, step), 0.0);
                assert_eq!(pc_std(&r, node, step), 0.0);
            }
        }
        let mc = run_mc(&grid, 4, 0.25e-9, 2e-9, 3).unwrap();
        assert_eq!(mc.mean[1][0], 0.0);
    }
}
