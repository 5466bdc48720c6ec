//! Command-line front end: generate grids, run the engines, compare, and
//! export histograms.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gridpc_core::analysis::{
    compare_moments, histogram_from_values, run_mc_with, run_pc, run_quadrature,
    sample_distribution, ComparisonReport, Histogram, McOptions, MomentSource, PcResult,
    StoredMoments,
};
use gridpc_core::chaos::ChaosBasis;
use gridpc_core::netlist::{
    generate_mesh, parse_netlist, Grid, LoadSpec, MeshSpec, VariationSpec, Waveform,
};

#[derive(Parser)]
#[command(
    name = "gridpc",
    version,
    about = "Stochastic power-grid IR-drop analysis via polynomial chaos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic mesh netlist.
    Generate(GenerateArgs),
    /// Run an engine over a netlist and export drop statistics.
    Run(RunArgs),
    /// Compare a chaos run against a reference run (Monte Carlo or
    /// quadrature) from matching result directories.
    Compare(CompareArgs),
    /// Export a drop histogram at one node and time.
    Hist(HistArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Mesh segment resistance (ohms).
    #[arg(long, default_value_t = 1.0)]
    r_seg: f64,
    /// Node-to-ground capacitance (farads).
    #[arg(long, default_value_t = 50e-12)]
    c_node: f64,
    /// Supply pins on every Nth row/column crossing.
    #[arg(long, default_value_t = 8)]
    pin_spacing: usize,
    #[arg(long, default_value_t = 1.2)]
    vdd: f64,
    /// Package resistance per pin (ohms).
    #[arg(long, default_value_t = 0.5)]
    rpkg: f64,
    /// Fraction of nodes carrying a load.
    #[arg(long, default_value_t = 0.15)]
    load_density: f64,
    /// Peak load current (amperes).
    #[arg(long, default_value_t = 2e-3)]
    load_peak: f64,
    /// Load pulse rise time (seconds).
    #[arg(long, default_value_t = 1e-9)]
    load_rise: f64,
    /// Load pulse hold time (seconds).
    #[arg(long, default_value_t = 2e-9)]
    load_hold: f64,
    /// Load pulse fall time (seconds).
    #[arg(long, default_value_t = 1e-9)]
    load_fall: f64,
    /// 3-sigma width variation, percent.
    #[arg(long, default_value_t = 20.0)]
    sw3: f64,
    /// 3-sigma thickness variation, percent.
    #[arg(long, default_value_t = 15.0)]
    st3: f64,
    /// 3-sigma channel-length variation, percent.
    #[arg(long, default_value_t = 20.0)]
    sl3: f64,
    /// Gate share of the node capacitance.
    #[arg(long, default_value_t = 0.4)]
    gcf: f64,
    /// Linear drain-current sensitivity to the length variable.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    isens: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output netlist path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Engine {
    Pc,
    Mc,
    Quad,
}

impl Engine {
    fn name(self) -> &'static str {
        match self {
            Engine::Pc => "pc",
            Engine::Mc => "mc",
            Engine::Quad => "quad",
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Input netlist.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    engine: Engine,
    /// Expansion order (pc engine).
    #[arg(long)]
    p: Option<usize>,
    /// Time step in seconds; defaults to a quarter of the smallest PWL
    /// breakpoint spacing.
    #[arg(long)]
    h: Option<f64>,
    /// Transient horizon in seconds; defaults to 25% past the last PWL
    /// breakpoint.
    #[arg(long)]
    t_end: Option<f64>,
    /// Sample count (mc engine).
    #[arg(long)]
    samples: Option<usize>,
    /// Monte Carlo seed (mc engine).
    #[arg(long)]
    seed: Option<u64>,
    /// Points per dimension (quad engine).
    #[arg(long)]
    level: Option<usize>,
    /// Worker threads (mc engine).
    #[arg(long)]
    threads: Option<usize>,
    /// Record raw per-sample drops at this node (mc engine).
    #[arg(long)]
    node: Option<String>,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Bulk statistics format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct CompareArgs {
    /// Result directory of the chaos run.
    #[arg(long)]
    pc: PathBuf,
    /// Result directory of the reference run.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct HistArgs {
    /// Result directory (pc or mc run).
    #[arg(long)]
    input: PathBuf,
    /// Node name.
    #[arg(long)]
    node: String,
    /// Time point in seconds (snapped to the nearest stored step).
    #[arg(long)]
    time: f64,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Sampling count when the input is a chaos run.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path (bin_center, count).
    #[arg(long)]
    output: PathBuf,
}

/// Everything about a run that downstream commands need to reload it.
#[derive(Serialize, Deserialize)]
struct Meta {
    engine: String,
    input: String,
    nodes: usize,
    steps: usize,
    h: f64,
    t_end: f64,
    vdd: f64,
    wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_vars: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    basis_terms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    level: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probe_node: Option<String>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Hist(args) => cmd_hist(args),
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let template = Waveform::new(vec![
        (0.0, 0.0),
        (args.load_rise, args.load_peak),
        (args.load_rise + args.load_hold, args.load_peak),
        (args.load_rise + args.load_hold + args.load_fall, 0.0),
    ])?;
    let spec = MeshSpec {
        rows: args.rows,
        cols: args.cols,
        r_seg: args.r_seg,
        c_node: args.c_node,
        pin_spacing: args.pin_spacing,
        vdd: args.vdd,
        pin_resistance: args.rpkg,
        load: if args.load_density > 0.0 {
            Some(LoadSpec {
                template,
                density: args.load_density,
            })
        } else {
            None
        },
        variation: VariationSpec {
            sigma_w: args.sw3 / 300.0,
            sigma_t: args.st3 / 300.0,
            sigma_l: args.sl3 / 300.0,
            gate_cap_fraction: args.gcf,
            current_sensitivity: args.isens,
            ..VariationSpec::default()
        },
        seed: args.seed,
    };
    let grid = generate_mesh(&spec)?;
    fs::write(&args.output, grid.to_netlist())
        .with_context(|| format!("writing {}", args.output.display()))?;
    eprintln!(
        "wrote {} ({} nodes, {} elements)",
        args.output.display(),
        grid.node_count(),
        grid.elements.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn load_grid(path: &Path) -> Result<Grid> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_netlist(&text)?)
}

fn time_axis(grid: &Grid, args: &RunArgs) -> Result<(f64, f64)> {
    let h = match args.h {
        Some(h) => h,
        None => {
            let spacing = grid.min_pwl_spacing().ok_or_else(|| {
                anyhow::anyhow!("no PWL breakpoints to derive a step from; pass --h")
            })?;
            spacing / 4.0
        }
    };
    let t_end = match args.t_end {
        Some(t) => t,
        None => {
            let last = grid.max_pwl_time().ok_or_else(|| {
                anyhow::anyhow!("no PWL breakpoints to derive a horizon from; pass --t-end")
            })?;
            last * 1.25
        }
    };
    Ok((h, t_end))
}

fn reject_flag<T>(flag: &Option<T>, name: &str, engine: Engine) -> Result<()> {
    if flag.is_some() {
        bail!("--{name} does not apply to engine '{}'", engine.name());
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let grid = load_grid(&args.input)?;
    let (h, t_end) = time_axis(&grid, &args)?;
    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;

    let meta = match args.engine {
        Engine::Pc => {
            reject_flag(&args.samples, "samples", args.engine)?;
            reject_flag(&args.level, "level", args.engine)?;
            reject_flag(&args.threads, "threads", args.engine)?;
            reject_flag(&args.node, "node", args.engine)?;
            run_engine_pc(&grid, &args, h, t_end)?
        }
        Engine::Mc => {
            reject_flag(&args.p, "p", args.engine)?;
            reject_flag(&args.level, "level", args.engine)?;
            run_engine_mc(&grid, &args, h, t_end)?
        }
        Engine::Quad => {
            reject_flag(&args.p, "p", args.engine)?;
            reject_flag(&args.samples, "samples", args.engine)?;
            reject_flag(&args.threads, "threads", args.engine)?;
            reject_flag(&args.node, "node", args.engine)?;
            run_engine_quad(&grid, &args, h, t_end)?
        }
    };

    write_json(&args.output.join("meta.json"), &meta)?;
    if let Some(failed) = meta.failed_samples {
        if failed > 0 {
            bail!("{failed} Monte Carlo samples failed to factor; see meta.json");
        }
    }
    eprintln!(
        "engine {} finished in {:.3} s; results in {}",
        meta.engine,
        meta.wall_seconds,
        args.output.display()
    );
    Ok(())
}

fn run_engine_pc(grid: &Grid, args: &RunArgs, h: f64, t_end: f64) -> Result<Meta> {
    let p = args.p.unwrap_or(2);
    let result = run_pc(grid, p, h, t_end)?;
    write_stats(&args.output, args.format, &result)?;
    write_coeffs(&args.output.join("coeffs.csv"), &result)?;
    write_nominal(&args.output.join("nominal.csv"), &result)?;
    Ok(Meta {
        engine: "pc".into(),
        input: args.input.display().to_string(),
        nodes: result.node_names.len(),
        steps: result.times.len() - 1,
        h,
        t_end,
        vdd: result.vdd,
        wall_seconds: result.elapsed_s,
        p: Some(p),
        n_vars: Some(result.basis.vars()),
        basis_terms: Some(result.basis.len()),
        samples: None,
        failed_samples: None,
        seed: None,
        level: None,
        threads: None,
        probe_node: None,
    })
}

fn run_engine_mc(grid: &Grid, args: &RunArgs, h: f64, t_end: f64) -> Result<Meta> {
    let probe_node = match &args.node {
        Some(name) => Some(
            grid.node_index(name)
                .ok_or_else(|| anyhow::anyhow!("unknown node '{name}'"))?,
        ),
        None => None,
    };
    let opts = McOptions {
        samples: args.samples.unwrap_or(1000),
        h,
        t_end,
        seed: args.seed.unwrap_or(1),
        threads: args.threads.unwrap_or(1).max(1),
        probe_node,
    };
    let result = run_mc_with(grid, &opts)?;
    write_stats(&args.output, args.format, &result)?;
    if let Some(probe) = &result.probe {
        write_probe_samples(
            &args.output.join("samples.csv"),
            &result.times,
            &probe.values,
        )?;
    }
    Ok(Meta {
        engine: "mc".into(),
        input: args.input.display().to_string(),
        nodes: result.node_names.len(),
        steps: result.times.len() - 1,
        h,
        t_end,
        vdd: result.vdd,
        wall_seconds: result.elapsed_s,
        p: None,
        n_vars: None,
        basis_terms: None,
        samples: Some(result.requested_samples),
        failed_samples: Some(result.failed_samples),
        seed: Some(result.seed),
        level: None,
        threads: Some(opts.threads),
        probe_node: args.node.clone(),
    })
}

fn run_engine_quad(grid: &Grid, args: &RunArgs, h: f64, t_end: f64) -> Result<Meta> {
    let level = args.level.unwrap_or(12);
    let result = run_quadrature(grid, level, h, t_end)?;
    write_stats(&args.output, args.format, &result)?;
    Ok(Meta {
        engine: "quad".into(),
        input: args.input.display().to_string(),
        nodes: result.node_names.len(),
        steps: result.times.len() - 1,
        h,
        t_end,
        vdd: result.vdd,
        wall_seconds: result.elapsed_s,
        p: None,
        n_vars: None,
        basis_terms: None,
        samples: None,
        failed_samples: None,
        seed: None,
        level: Some(level),
        threads: None,
        probe_node: None,
    })
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let pc_meta = read_meta(&args.pc)?;
    if pc_meta.engine != "pc" {
        bail!(
            "--pc must point at a chaos (pc) run, found '{}'",
            pc_meta.engine
        );
    }
    let ref_meta = read_meta(&args.reference)?;
    let pc = read_stats(&args.pc, &pc_meta)?;
    let reference = read_stats(&args.reference, &ref_meta)?;
    let nominal = read_nominal(&args.pc.join("nominal.csv"), &pc)?;

    let report = compare_moments(&pc, &nominal, pc_meta.vdd, &reference)?;
    fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    write_json(&args.output.join("report.json"), &report)?;
    write_report_csv(&args.output.join("report.csv"), &report)?;
    eprintln!(
        "avg mu err {:.4}% of Vdd, avg sigma err {:.3}%, speedup {:.1}x",
        report.avg_pct_err_mu, report.avg_pct_err_sigma, report.speedup
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// hist
// ---------------------------------------------------------------------------

fn cmd_hist(args: HistArgs) -> Result<()> {
    if args.bins == 0 {
        bail!("--bins must be at least 1");
    }
    if args.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let meta = read_meta(&args.input)?;

    let histogram = match meta.engine.as_str() {
        "pc" => {
            let stats = read_stats(&args.input, &meta)?;
            let node = stats
                .node_names
                .iter()
                .position(|n| *n == args.node)
                .ok_or_else(|| anyhow::anyhow!("unknown node '{}'", args.node))?;
            let step = snap_step(&stats.times, args.time)?;
            let pc = rebuild_pc(&args.input, &meta, &stats)?;
            sample_distribution(&pc, node, step, args.samples, args.bins, args.seed)?
        }
        "mc" => {
            let probed = meta.probe_node.as_deref().ok_or_else(|| {
                anyhow::anyhow!("this mc run recorded no probe samples; rerun with --node")
            })?;
            if probed != args.node {
                bail!(
                    "unknown node '{}': the mc run probed '{}'",
                    args.node,
                    probed
                );
            }
            let (times, samples) = read_probe_samples(&args.input.join("samples.csv"))?;
            let step = snap_step(&times, args.time)?;
            let values: Vec<f64> = samples.iter().map(|row| row[step]).collect();
            histogram_from_values(&values, args.bins)?
        }
        other => bail!("histograms need a pc or mc run, found '{other}'"),
    };

    write_histogram(&args.output, &histogram)?;
    eprintln!(
        "wrote {} ({} bins, {} values)",
        args.output.display(),
        histogram.counts.len(),
        histogram.total()
    );
    Ok(())
}

/// Index of the stored step nearest to `t` (within half a step).
fn snap_step(times: &[f64], t: f64) -> Result<usize> {
    let h = if times.len() > 1 {
        times[1] - times[0]
    } else {
        1.0
    };
    let (step, nearest) = times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .unwrap();
    if (nearest - t).abs() > 0.5 * h + 1e-15 {
        bail!(
            "time {t} outside the stored grid [0, {}]",
            times[times.len() - 1]
        );
    }
    Ok(step)
}

/// Rebuild a sampling-capable chaos result from coeffs.csv.
fn rebuild_pc(dir: &Path, meta: &Meta, stats: &StoredMoments) -> Result<PcResult> {
    let p = meta.p.context("pc meta.json lacks the expansion order")?;
    let n_vars = meta.n_vars.context("pc meta.json lacks n_vars")?;
    let basis = ChaosBasis::new(n_vars, p)?;
    let steps = stats.times.len();
    let nodes = stats.node_names.len();
    let mut coeffs = vec![vec![vec![0.0; nodes]; basis.len()]; steps];

    let path = dir.join("coeffs.csv");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let node_index: std::collections::HashMap<&str, usize> = stats
        .node_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("{}:{}: expected 4 fields", path.display(), lineno + 1);
        }
        let node = *node_index
            .get(fields[0])
            .with_context(|| format!("{}:{}: unknown node", path.display(), lineno + 1))?;
        let t: f64 = fields[1].parse()?;
        let step = snap_step(&stats.times, t)?;
        let term: usize = fields[2].parse()?;
        let value: f64 = fields[3].parse()?;
        coeffs[step][term][node] = value;
    }

    let nominal = read_nominal(&dir.join("nominal.csv"), stats)?;
    Ok(PcResult {
        times: stats.times.clone(),
        node_names: stats.node_names.clone(),
        coeffs,
        nominal,
        basis,
        vdd: meta.vdd,
        elapsed_s: meta.wall_seconds,
    })
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// stats.csv / stats.json: one row per (node, time).
fn write_stats(dir: &Path, format: Format, source: &dyn MomentSource) -> Result<()> {
    match format {
        Format::Csv => {
            let mut out = String::from("node,time_s,mean_drop_v,std_drop_v\n");
            for (node, name) in source.node_names().iter().enumerate() {
                for (step, &t) in source.times().iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        name,
                        t,
                        source.mean_at(step, node),
                        source.std_at(step, node)
                    ));
                }
            }
            let path = dir.join("stats.csv");
            fs::write(&path, out).with_context(|| format!("writing {}", path.display()))
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                node: &'a str,
                time_s: f64,
                mean_drop_v: f64,
                std_drop_v: f64,
            }
            let rows: Vec<Row> = source
                .node_names()
                .iter()
                .enumerate()
                .flat_map(|(node, name)| {
                    source
                        .times()
                        .iter()
                        .enumerate()
                        .map(move |(step, &t)| Row {
                            node: name,
                            time_s: t,
                            mean_drop_v: source.mean_at(step, node),
                            std_drop_v: source.std_at(step, node),
                        })
                })
                .collect();
            write_json(&dir.join("stats.json"), &rows)
        }
    }
}

fn read_stats(dir: &Path, meta: &Meta) -> Result<StoredMoments> {
    let path = dir.join("stats.csv");
    let text = fs::read_to_string(&path).with_context(|| {
        format!(
            "reading {} (json-format runs cannot be compared; rerun with --format csv)",
            path.display()
        )
    })?;
    let mut node_names: Vec<String> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut mean_by_node: Vec<Vec<f64>> = Vec::new();
    let mut std_by_node: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("{}:{}: expected 4 fields", path.display(), lineno + 1);
        }
        let name = fields[0];
        let t: f64 = fields[1].parse()?;
        if node_names.last().map(String::as_str) != Some(name) {
            node_names.push(name.to_string());
            mean_by_node.push(Vec::new());
            std_by_node.push(Vec::new());
        }
        if node_names.len() == 1 {
            times.push(t);
        }
        mean_by_node.last_mut().unwrap().push(fields[2].parse()?);
        std_by_node.last_mut().unwrap().push(fields[3].parse()?);
    }
    let steps = times.len();
    if mean_by_node.iter().any(|m| m.len() != steps) {
        bail!("{}: ragged node blocks", path.display());
    }
    // Transpose to [step][node].
    let n = node_names.len();
    let mut mean = vec![vec![0.0; n]; steps];
    let mut std = vec![vec![0.0; n]; steps];
    for node in 0..n {
        for step in 0..steps {
            mean[step][node] = mean_by_node[node][step];
            std[step][node] = std_by_node[node][step];
        }
    }
    Ok(StoredMoments {
        times,
        node_names,
        mean,
        std,
        elapsed_s: meta.wall_seconds,
    })
}

fn write_coeffs(path: &Path, result: &PcResult) -> Result<()> {
    let mut out = String::from("node,time_s,term,value\n");
    for (node, name) in result.node_names.iter().enumerate() {
        for (step, &t) in result.times.iter().enumerate() {
            for term in 0..result.basis.len() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    name, t, term, result.coeffs[step][term][node]
                ));
            }
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_nominal(path: &Path, result: &PcResult) -> Result<()> {
    let mut out = String::from("node,time_s,nominal_drop_v\n");
    for (node, name) in result.node_names.iter().enumerate() {
        for (step, &t) in result.times.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", name, t, result.nominal[step][node]));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn read_nominal(path: &Path, stats: &StoredMoments) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let node_index: std::collections::HashMap<&str, usize> = stats
        .node_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut nominal = vec![vec![0.0; stats.node_names.len()]; stats.times.len()];
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            bail!("{}:{}: expected 3 fields", path.display(), lineno + 1);
        }
        let node = *node_index
            .get(fields[0])
            .with_context(|| format!("{}:{}: unknown node", path.display(), lineno + 1))?;
        let t: f64 = fields[1].parse()?;
        let step = snap_step(&stats.times, t)?;
        nominal[step][node] = fields[2].parse()?;
    }
    Ok(nominal)
}

/// samples.csv: header `sample` then one time column per step.
fn write_probe_samples(path: &Path, times: &[f64], values: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from("sample");
    for t in times {
        out.push_str(&format!(",{}", t));
    }
    out.push('\n');
    for (s, row) in values.iter().enumerate() {
        out.push_str(&format!("{}", s));
        for v in row {
            out.push_str(&format!(",{}", v));
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn read_probe_samples(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty samples.csv")?;
    let times: Vec<f64> = header
        .split(',')
        .skip(1)
        .map(|f| f.parse::<f64>())
        .collect::<std::result::Result<_, _>>()?;
    let mut values = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        if row.len() != times.len() {
            bail!("{}: ragged sample row", path.display());
        }
        values.push(row);
    }
    Ok((times, values))
}

fn write_report_csv(path: &Path, report: &ComparisonReport) -> Result<()> {
    let out = format!(
        "avg_pct_err_mu,max_pct_err_mu,avg_pct_err_sigma,max_pct_err_sigma,\
         pm3sigma_pct_of_nominal,time_ref_s,time_pc_s,speedup,sigma_cells_excluded\n\
         {},{},{},{},{},{},{},{},{}\n",
        report.avg_pct_err_mu,
        report.max_pct_err_mu,
        report.avg_pct_err_sigma,
        report.max_pct_err_sigma,
        report.pm3sigma_pct_of_nominal,
        report.time_ref_s,
        report.time_pc_s,
        report.speedup,
        report.sigma_cells_excluded
    );
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_histogram(path: &Path, histogram: &Histogram) -> Result<()> {
    let mut out = String::from("bin_center,count\n");
    for (center, &count) in histogram.bin_centers().iter().zip(&histogram.counts) {
        out.push_str(&format!("{},{}\n", center, count));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
