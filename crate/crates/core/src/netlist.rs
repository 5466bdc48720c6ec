//! Power-grid netlist: waveforms, elements, parsing, serialization, and the
//! synthetic mesh generator.
//!
//! The grammar is SPICE-inspired but strict: one element per line,
//! case-insensitive keywords, `#` comments.
//!
//! ```text
//! R<name> <nodeA> <nodeB> <ohms>
//! C<name> <nodeA> <nodeB> <farads>
//! I<name> <nodeA> <nodeB> PWL(<t1> <i1> <t2> <i2> ...)   # current flows A -> B
//! V<name> <node> 0 <volts> [RPKG=<ohms>]
//! .VARIATION SW3=<pct> ST3=<pct> SL3=<pct> [GCF=<frac>] [ISENS=<coef>] [LEAK=<frac>]
//! .REGION <node> <region-index>
//! ```
//!
//! Values accept the SI suffixes `f p n u m k` (case-insensitive). Ground is
//! always named `0` and never indexed. Any `.REGION` line switches the grid
//! into rhs-only mode (stochastic loads, deterministic matrices), which
//! requires `SW3 = ST3 = 0`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Name of the ground node.
pub const GROUND: &str = "0";

// ---------------------------------------------------------------------------
// Waveform
// ---------------------------------------------------------------------------

/// Piecewise-linear transient waveform: `(time, value)` breakpoints with
/// strictly increasing times. Evaluation holds the boundary values outside
/// the breakpoint range.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    points: Vec<(f64, f64)>,
}

impl Waveform {
    /// Build a waveform, enforcing the non-empty / strictly-increasing
    /// invariants.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Grid("waveform needs at least one point".into()));
        }
        for pair in points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Grid(format!(
                    "waveform times must be strictly increasing (got {} after {})",
                    pair[1].0, pair[0].0
                )));
            }
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::Grid("waveform contains a non-finite value".into()));
        }
        Ok(Waveform { points })
    }

    /// Single-point waveform (constant for all time).
    pub fn constant(value: f64) -> Self {
        Waveform {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Linear interpolation inside the range, constant hold outside.
    pub fn eval(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        // partition_point: first index with point time > t
        let hi = pts.partition_point(|&(pt, _)| pt <= t);
        let (t0, v0) = pts[hi - 1];
        let (t1, v1) = pts[hi];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Smallest spacing between consecutive breakpoints, if there are two or
    /// more points. Used for the default transient step.
    pub fn min_spacing(&self) -> Option<f64> {
        self.points
            .windows(2)
            .map(|w| w[1].0 - w[0].0)
            .fold(None, |acc, d| match acc {
                None => Some(d),
                Some(m) => Some(m.min(d)),
            })
    }

    /// Last breakpoint time.
    pub fn end_time(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Copy with all values scaled by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Waveform {
            points: self.points.iter().map(|&(t, v)| (t, v * k)).collect(),
        }
    }
}

/// Free-function form of [`Waveform::eval`].
pub fn eval_waveform(w: &Waveform, t: f64) -> f64 {
    w.eval(t)
}

// ---------------------------------------------------------------------------
// Elements and grid
// ---------------------------------------------------------------------------

/// What an [`Element`] is, with its per-kind payload.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    Resistor {
        ohms: f64,
    },
    Capacitor {
        farads: f64,
    },
    /// Transient drain current, flowing from `node_a` to `node_b`.
    CurrentLoad {
        waveform: Waveform,
    },
    /// Supply pin: ideal source of `volts` behind `package_ohms` of series
    /// resistance, tied between `node_a` and ground.
    VddPin {
        volts: f64,
        package_ohms: f64,
    },
}

/// One netlist element between two nodes (`node_b` is ground for pins).
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub node_a: String,
    pub node_b: String,
    pub kind: ElementKind,
}

/// Process-variation description attached to a grid.
///
/// Sigmas are 1-sigma *fractional* deviations of width, thickness, and
/// effective channel length (the CLI accepts 3-sigma percentages and divides
/// by three). In rhs-only mode `sigma_l` is reused as the per-region
/// threshold sigma driving the lognormal leakage model.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationSpec {
    pub sigma_w: f64,
    pub sigma_t: f64,
    pub sigma_l: f64,
    /// Fraction of node capacitance that tracks channel-length variation.
    pub gate_cap_fraction: f64,
    /// Linear coefficient of drain current w.r.t. the length variable.
    pub current_sensitivity: f64,
    /// Share of each load current that is leakage (rhs-only mode).
    pub leak_fraction: f64,
    /// Stochastic right-hand side with deterministic matrices.
    pub rhs_only: bool,
    /// Node name -> region index (rhs-only mode).
    pub regions: BTreeMap<String, usize>,
}

impl Default for VariationSpec {
    fn default() -> Self {
        VariationSpec {
            sigma_w: 0.0,
            sigma_t: 0.0,
            sigma_l: 0.0,
            gate_cap_fraction: 0.4,
            current_sensitivity: -1.0,
            leak_fraction: 1.0,
            rhs_only: false,
            regions: BTreeMap::new(),
        }
    }
}

impl VariationSpec {
    /// Check the numeric invariants. The `< 1/3` sigma bound keeps every
    /// 3-sigma perturbation below 100% of the nominal value.
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("SW", self.sigma_w),
            ("ST", self.sigma_t),
            ("SL", self.sigma_l),
        ] {
            if !(0.0..1.0 / 3.0).contains(&s) {
                return Err(Error::Grid(format!(
                    "sigma {name} = {s} out of range [0, 1/3)"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gate_cap_fraction) {
            return Err(Error::Grid(format!(
                "gate cap fraction {} out of range [0, 1]",
                self.gate_cap_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.leak_fraction) {
            return Err(Error::Grid(format!(
                "leak fraction {} out of range [0, 1]",
                self.leak_fraction
            )));
        }
        if self.rhs_only && (self.sigma_w != 0.0 || self.sigma_t != 0.0) {
            return Err(Error::Grid(
                "rhs-only mode requires SW3 = ST3 = 0 (deterministic matrices)".into(),
            ));
        }
        Ok(())
    }

    /// Number of regions in rhs-only mode (max index + 1).
    pub fn region_count(&self) -> usize {
        self.regions.values().map(|&r| r + 1).max().unwrap_or(0)
    }
}

/// Parsed circuit topology: elements plus a dense node index (ground
/// excluded, indices in first-appearance order).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub elements: Vec<Element>,
    node_names: Vec<String>,
    node_index: HashMap<String, usize>,
    pub variation: VariationSpec,
}

impl Grid {
    fn new(variation: VariationSpec) -> Self {
        Grid {
            elements: Vec::new(),
            node_names: Vec::new(),
            node_index: HashMap::new(),
            variation,
        }
    }

    fn intern_node(&mut self, name: &str) -> Option<usize> {
        if name == GROUND {
            return None;
        }
        if let Some(&i) = self.node_index.get(name) {
            return Some(i);
        }
        let i = self.node_names.len();
        self.node_names.push(name.to_string());
        self.node_index.insert(name.to_string(), i);
        Some(i)
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    pub fn node_name(&self, idx: usize) -> &str {
        &self.node_names[idx]
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    /// Reference supply voltage: the maximum pin voltage. Drops are reported
    /// relative to this value.
    pub fn vdd(&self) -> f64 {
        self.elements
            .iter()
            .filter_map(|e| match e.kind {
                ElementKind::VddPin { volts, .. } => Some(volts),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    /// Smallest PWL breakpoint spacing across all loads. Drives the default
    /// transient step (`spacing / 4`).
    pub fn min_pwl_spacing(&self) -> Option<f64> {
        self.elements
            .iter()
            .filter_map(|e| match &e.kind {
                ElementKind::CurrentLoad { waveform } => waveform.min_spacing(),
                _ => None,
            })
            .fold(None, |acc, d| match acc {
                None => Some(d),
                Some(m) => Some(m.min(d)),
            })
    }

    /// Latest PWL breakpoint across all loads.
    pub fn max_pwl_time(&self) -> Option<f64> {
        self.elements
            .iter()
            .filter_map(|e| match &e.kind {
                ElementKind::CurrentLoad { waveform } => Some(waveform.end_time()),
                _ => None,
            })
            .fold(None, |acc, t| Some(acc.map_or(t, |m: f64| m.max(t))))
    }

    /// Serialize back to netlist text. Parsing the output reproduces this
    /// grid exactly.
    pub fn to_netlist(&self) -> String {
        let mut out = String::new();
        let v = &self.variation;
        let _ = write!(
            out,
            ".VARIATION SW3={} ST3={} SL3={} GCF={} ISENS={}",
            v.sigma_w * 300.0,
            v.sigma_t * 300.0,
            v.sigma_l * 300.0,
            v.gate_cap_fraction,
            v.current_sensitivity
        );
        if v.rhs_only {
            let _ = write!(out, " LEAK={}", v.leak_fraction);
        }
        out.push('\n');
        for e in &self.elements {
            match &e.kind {
                ElementKind::Resistor { ohms } => {
                    let _ = writeln!(out, "{} {} {} {}", e.name, e.node_a, e.node_b, ohms);
                }
                ElementKind::Capacitor { farads } => {
                    let _ = writeln!(out, "{} {} {} {}", e.name, e.node_a, e.node_b, farads);
                }
                ElementKind::CurrentLoad { waveform } => {
                    let _ = write!(out, "{} {} {} PWL(", e.name, e.node_a, e.node_b);
                    for (i, (t, v)) in waveform.points().iter().enumerate() {
                        if i > 0 {
                            out.push(' ');
                        }
                        let _ = write!(out, "{} {}", t, v);
                    }
                    out.push_str(")\n");
                }
                ElementKind::VddPin {
                    volts,
                    package_ohms,
                } => {
                    let _ = writeln!(
                        out,
                        "{} {} 0 {} RPKG={}",
                        e.name, e.node_a, volts, package_ohms
                    );
                }
            }
        }
        for (node, region) in &v.regions {
            let _ = writeln!(out, ".REGION {} {}", node, region);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse a numeric value with an optional SI suffix (f p n u m k).
fn parse_value(token: &str) -> Option<f64> {
    if let Ok(v) = token.parse::<f64>() {
        return Some(v);
    }
    let (num, suffix) = token.split_at(token.len().checked_sub(1)?);
    let mult = match suffix.chars().next()?.to_ascii_lowercase() {
        'f' => 1e-15,
        'p' => 1e-12,
        'n' => 1e-9,
        'u' => 1e-6,
        'm' => 1e-3,
        'k' => 1e3,
        _ => return None,
    };
    num.parse::<f64>().ok().map(|v| v * mult)
}

fn valid_node_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

/// Parse netlist text into a [`Grid`].
///
/// Reports syntax errors with their 1-based line number; validates element
/// values, duplicate names, and grid connectivity (every node must reach a
/// supply pin through resistors).
pub fn parse_netlist(text: &str) -> Result<Grid> {
    let mut grid = Grid::new(VariationSpec::default());
    let mut seen_names: HashSet<String> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }

        let first = line.chars().next().unwrap();
        match first.to_ascii_uppercase() {
            '.' => parse_directive(&mut grid, line, line_no)?,
            'R' | 'C' | 'I' | 'V' => {
                let element = parse_element(line, line_no)?;
                if !seen_names.insert(element.name.to_ascii_uppercase()) {
                    return Err(Error::parse(
                        line_no,
                        format!("duplicate element name '{}'", element.name),
                    ));
                }
                grid.intern_node(&element.node_a);
                grid.intern_node(&element.node_b);
                grid.elements.push(element);
            }
            _ => {
                return Err(Error::parse(
                    line_no,
                    format!("unknown element kind '{}'", first),
                ))
            }
        }
    }

    grid.variation.validate()?;
    validate_grid(&grid)?;
    Ok(grid)
}

fn parse_node(token: &str, line: usize) -> Result<String> {
    if token == GROUND {
        return Ok(token.to_string());
    }
    if !valid_node_name(token) {
        return Err(Error::parse(line, format!("invalid node name '{token}'")));
    }
    Ok(token.to_string())
}

fn parse_element(line_text: &str, line: usize) -> Result<Element> {
    let kind_char = line_text.chars().next().unwrap().to_ascii_uppercase();
    if kind_char == 'I' {
        return parse_current_load(line_text, line);
    }

    let tokens: Vec<&str> = line_text.split_whitespace().collect();
    let name = tokens[0].to_string();
    match kind_char {
        'R' | 'C' => {
            if tokens.len() != 4 {
                return Err(Error::parse(
                    line,
                    format!("expected '<name> <nodeA> <nodeB> <value>', got {line_text:?}"),
                ));
            }
            let node_a = parse_node(tokens[1], line)?;
            let node_b = parse_node(tokens[2], line)?;
            let value = parse_value(tokens[3])
                .ok_or_else(|| Error::parse(line, format!("bad value '{}'", tokens[3])))?;
            if value <= 0.0 {
                return Err(Error::parse(
                    line,
                    format!("nonpositive value {} for '{}'", value, name),
                ));
            }
            let kind = if kind_char == 'R' {
                ElementKind::Resistor { ohms: value }
            } else {
                ElementKind::Capacitor { farads: value }
            };
            Ok(Element {
                name,
                node_a,
                node_b,
                kind,
            })
        }
        'V' => {
            if tokens.len() < 4 || tokens.len() > 5 {
                return Err(Error::parse(
                    line,
                    format!("expected '<name> <node> 0 <volts> [RPKG=<ohms>]', got {line_text:?}"),
                ));
            }
            let node_a = parse_node(tokens[1], line)?;
            if tokens[2] != GROUND {
                return Err(Error::parse(
                    line,
                    "supply pins must reference ground ('0') as the second node",
                ));
            }
            let volts = parse_value(tokens[3])
                .ok_or_else(|| Error::parse(line, format!("bad voltage '{}'", tokens[3])))?;
            if volts <= 0.0 {
                return Err(Error::parse(line, format!("nonpositive voltage {volts}")));
            }
            let mut package_ohms = 0.0;
            if tokens.len() == 5 {
                let t = tokens[4];
                let rest = t
                    .strip_prefix("RPKG=")
                    .or_else(|| t.strip_prefix("rpkg="))
                    .or_else(|| {
                        t.get(..5)
                            .and_then(|p| p.eq_ignore_ascii_case("RPKG=").then(|| &t[5..]))
                    })
                    .ok_or_else(|| {
                        Error::parse(line, format!("expected RPKG=<ohms>, got '{t}'"))
                    })?;
                package_ohms = parse_value(rest)
                    .ok_or_else(|| Error::parse(line, format!("bad RPKG value '{rest}'")))?;
                if package_ohms < 0.0 {
                    return Err(Error::parse(line, "negative package resistance"));
                }
            }
            Ok(Element {
                name,
                node_a,
                node_b: GROUND.to_string(),
                kind: ElementKind::VddPin {
                    volts,
                    package_ohms,
                },
            })
        }
        _ => unreachable!(),
    }
}

fn parse_current_load(line_text: &str, line: usize) -> Result<Element> {
    let open = line_text
        .find('(')
        .ok_or_else(|| Error::parse(line, "current load needs PWL(...)"))?;
    let close = line_text
        .rfind(')')
        .ok_or_else(|| Error::parse(line, "unterminated PWL("))?;
    if close < open {
        return Err(Error::parse(line, "malformed PWL(...)"));
    }
    let head: Vec<&str> = line_text[..open].split_whitespace().collect();
    // The PWL keyword may be glued to '(' or separated by space.
    let (head_tokens, keyword) = match head.last() {
        Some(last) if last.eq_ignore_ascii_case("PWL") => (&head[..head.len() - 1], "PWL"),
        Some(last) if last.to_ascii_uppercase().ends_with("PWL") && head.len() == 4 => {
            (&head[..3], "PWL")
        }
        _ => (&head[..], ""),
    };
    if keyword.is_empty() || head_tokens.len() != 3 {
        return Err(Error::parse(
            line,
            format!("expected '<name> <nodeA> <nodeB> PWL(...)', got {line_text:?}"),
        ));
    }
    let name = head_tokens[0].to_string();
    let node_a = parse_node(head_tokens[1], line)?;
    let node_b = parse_node(head_tokens[2], line)?;

    let mut values = Vec::new();
    for tok in line_text[open + 1..close].split_whitespace() {
        let v =
            parse_value(tok).ok_or_else(|| Error::parse(line, format!("bad PWL value '{tok}'")))?;
        values.push(v);
    }
    if values.is_empty() || values.len() % 2 != 0 {
        return Err(Error::parse(
            line,
            "PWL needs a non-empty, even list of time/value pairs",
        ));
    }
    let points: Vec<(f64, f64)> = values.chunks(2).map(|c| (c[0], c[1])).collect();
    let waveform = Waveform::new(points).map_err(|e| Error::parse(line, e.to_string()))?;
    Ok(Element {
        name,
        node_a,
        node_b,
        kind: ElementKind::CurrentLoad { waveform },
    })
}

fn parse_directive(grid: &mut Grid, line_text: &str, line: usize) -> Result<()> {
    let tokens: Vec<&str> = line_text.split_whitespace().collect();
    let keyword = tokens[0].to_ascii_uppercase();
    match keyword.as_str() {
        ".VARIATION" => {
            for tok in &tokens[1..] {
                let (key, value) = tok.split_once('=').ok_or_else(|| {
                    Error::parse(line, format!("expected KEY=value, got '{tok}'"))
                })?;
                let v = parse_value(value)
                    .ok_or_else(|| Error::parse(line, format!("bad value '{value}'")))?;
                let var = &mut grid.variation;
                match key.to_ascii_uppercase().as_str() {
                    // 3-sigma percentages on the wire; store 1-sigma fractions.
                    "SW3" => var.sigma_w = v / 300.0,
                    "ST3" => var.sigma_t = v / 300.0,
                    "SL3" => var.sigma_l = v / 300.0,
                    "GCF" => var.gate_cap_fraction = v,
                    "ISENS" => var.current_sensitivity = v,
                    "LEAK" => var.leak_fraction = v,
                    other => {
                        return Err(Error::parse(
                            line,
                            format!("unknown .VARIATION key '{other}'"),
                        ))
                    }
                }
            }
            Ok(())
        }
        ".REGION" => {
            if tokens.len() != 3 {
                return Err(Error::parse(line, "expected '.REGION <node> <index>'"));
            }
            let node = parse_node(tokens[1], line)?;
            let region: usize = tokens[2]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad region index '{}'", tokens[2])))?;
            grid.variation.rhs_only = true;
            grid.variation.regions.insert(node, region);
            Ok(())
        }
        other => Err(Error::parse(line, format!("unknown directive '{other}'"))),
    }
}

/// Structural checks: at least one pin, and every node resistively reachable
/// from a pin.
fn validate_grid(grid: &Grid) -> Result<()> {
    let pins: Vec<usize> = grid
        .elements
        .iter()
        .filter(|e| matches!(e.kind, ElementKind::VddPin { .. }))
        .filter_map(|e| grid.node_index(&e.node_a))
        .collect();
    if pins.is_empty() {
        return Err(Error::Grid("no Vdd pin".into()));
    }

    // Resistive adjacency (ground is not a supply path).
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); grid.node_count()];
    for e in &grid.elements {
        if let ElementKind::Resistor { .. } = e.kind {
            if let (Some(a), Some(b)) = (grid.node_index(&e.node_a), grid.node_index(&e.node_b)) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    let mut reached = vec![false; grid.node_count()];
    let mut queue: VecDeque<usize> = pins.into_iter().collect();
    for &p in &queue {
        reached[p] = true;
    }
    while let Some(n) = queue.pop_front() {
        for &m in &adj[n] {
            if !reached[m] {
                reached[m] = true;
                queue.push_back(m);
            }
        }
    }
    if let Some(n) = reached.iter().position(|&r| !r) {
        return Err(Error::Grid(format!(
            "dangling node '{}': no resistive path to any Vdd pin",
            grid.node_name(n)
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mesh generator
// ---------------------------------------------------------------------------

/// Load placement for [`generate_mesh`]: the template waveform is attached to
/// `density * nodes` randomly chosen nodes, with a per-load amplitude factor
/// drawn uniformly from [0.5, 1.5].
#[derive(Debug, Clone)]
pub struct LoadSpec {
    pub template: Waveform,
    pub density: f64,
}

/// Parameters for the synthetic rows x cols mesh.
#[derive(Debug, Clone)]
pub struct MeshSpec {
    pub rows: usize,
    pub cols: usize,
    /// Resistance of each mesh segment.
    pub r_seg: f64,
    /// Node-to-ground capacitance.
    pub c_node: f64,
    /// Supply pins on every `pin_spacing`-th row/column crossing.
    pub pin_spacing: usize,
    pub vdd: f64,
    pub pin_resistance: f64,
    pub load: Option<LoadSpec>,
    pub variation: VariationSpec,
    pub seed: u64,
}

/// Generate a rows x cols resistive mesh with supply pins on a regular
/// subgrid and seeded random PWL loads. Bit-reproducible for a fixed seed.
pub fn generate_mesh(spec: &MeshSpec) -> Result<Grid> {
    if spec.rows < 2 {
        return Err(Error::Mesh(format!("rows = {} < 2", spec.rows)));
    }
    if spec.cols < 2 {
        return Err(Error::Mesh(format!("cols = {} < 2", spec.cols)));
    }
    if spec.r_seg <= 0.0 || spec.c_node <= 0.0 {
        return Err(Error::Mesh("r_seg and c_node must be positive".into()));
    }
    if spec.pin_spacing == 0 || spec.pin_spacing >= spec.rows.max(spec.cols) {
        return Err(Error::Mesh(format!(
            "pin_spacing = {} does not fit a {}x{} grid",
            spec.pin_spacing, spec.rows, spec.cols
        )));
    }
    if let Some(load) = &spec.load {
        if !(0.0..=1.0).contains(&load.density) {
            return Err(Error::Mesh(format!(
                "load density {} out of range [0, 1]",
                load.density
            )));
        }
    }
    spec.variation
        .validate()
        .map_err(|e| Error::Mesh(e.to_string()))?;

    let mut grid = Grid::new(spec.variation.clone());
    let node = |r: usize, c: usize| format!("n{}_{}", r, c);

    // Mesh resistors: horizontal then vertical, row-major.
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if c + 1 < spec.cols {
                push_element(
                    &mut grid,
                    format!("Rh{}_{}", r, c),
                    node(r, c),
                    node(r, c + 1),
                    ElementKind::Resistor { ohms: spec.r_seg },
                );
            }
            if r + 1 < spec.rows {
                push_element(
                    &mut grid,
                    format!("Rv{}_{}", r, c),
                    node(r, c),
                    node(r + 1, c),
                    ElementKind::Resistor { ohms: spec.r_seg },
                );
            }
        }
    }

    // Node capacitances.
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            push_element(
                &mut grid,
                format!("Cn{}_{}", r, c),
                node(r, c),
                GROUND.to_string(),
                ElementKind::Capacitor {
                    farads: spec.c_node,
                },
            );
        }
    }

    // Supply pins on the subgrid.
    let mut pin_nodes = HashSet::new();
    for r in (0..spec.rows).step_by(spec.pin_spacing) {
        for c in (0..spec.cols).step_by(spec.pin_spacing) {
            pin_nodes.insert((r, c));
            push_element(
                &mut grid,
                format!("Vp{}_{}", r, c),
                node(r, c),
                GROUND.to_string(),
                ElementKind::VddPin {
                    volts: spec.vdd,
                    package_ohms: spec.pin_resistance,
                },
            );
        }
    }

    // Seeded random loads on non-pin nodes.
    if let Some(load) = &spec.load {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let candidates: Vec<(usize, usize)> = (0..spec.rows)
            .flat_map(|r| (0..spec.cols).map(move |c| (r, c)))
            .filter(|rc| !pin_nodes.contains(rc))
            .collect();
        let count = ((candidates.len() as f64) * load.density).round() as usize;
        let count = count.min(candidates.len());
        let mut chosen: Vec<(usize, usize)> = index_sample(&mut rng, candidates.len(), count)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        chosen.sort_unstable();
        for (r, c) in chosen {
            let amplitude: f64 = rng.random_range(0.5..1.5);
            push_element(
                &mut grid,
                format!("Il{}_{}", r, c),
                node(r, c),
                GROUND.to_string(),
                ElementKind::CurrentLoad {
                    waveform: load.template.scaled(amplitude),
                },
            );
        }
    }

    validate_grid(&grid)?;
    Ok(grid)
}

fn push_element(grid: &mut Grid, name: String, node_a: String, node_b: String, kind: ElementKind) {
    grid.intern_node(&node_a);
    grid.intern_node(&node_b);
    grid.elements.push(Element {
        name,
        node_a,
        node_b,
        kind,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simple_netlist() -> &'static str {
        "R1 n1 n2 1.0\nC1 n2 0 1e-12\nI1 n2 0 PWL(0 0 1n 1e-3)\nV1 n1 0 1.2 RPKG=0.5\n"
    }

    #[test]
    fn parses_basic_netlist() {
        let grid = parse_netlist(simple_netlist()).unwrap();
        assert_eq!(grid.node_count(), 2);
        assert_eq!(grid.elements.len(), 4);
        assert_eq!(grid.node_index("n1"), Some(0));
        assert_eq!(grid.node_index("n2"), Some(1));
        assert_eq!(grid.node_index("0"), None);
        assert_eq!(grid.vdd(), 1.2);
    }

    #[test]
    fn empty_netlist_has_no_pin() {
        let err = parse_netlist("").unwrap_err();
        assert!(err.to_string().contains("no Vdd pin"), "{err}");
    }

    #[test]
    fn rejects_nonpositive_resistance() {
        let err = parse_netlist("R1 n1 n2 -1.0\nV1 n1 0 1.2\n").unwrap_err();
        assert!(err.to_string().contains("nonpositive"), "{err}");
    }

    #[test]
    fn rejects_duplicate_names() {
        let text = "R1 n1 n2 1.0\nR1 n2 n3 1.0\nV1 n1 0 1.0\n";
        let err = parse_netlist(text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_dangling_node() {
        // n3 only connects through a capacitor: no resistive supply path.
        let text = "R1 n1 n2 1.0\nC1 n3 0 1e-12\nC2 n2 n3 1e-12\nV1 n1 0 1.0\n";
        let err = parse_netlist(text).unwrap_err();
        assert!(err.to_string().contains("dangling node 'n3'"), "{err}");
    }

    #[test]
    fn reports_line_numbers() {
        let text = "V1 n1 0 1.2\n# fine\nR1 n1\n";
        let err = parse_netlist(text).unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
    }

    #[test]
    fn si_suffixes() {
        for (tok, expected) in [
            ("1.5k", 1.5e3),
            ("10m", 1e-2),
            ("3u", 3e-6),
            ("2n", 2e-9),
            ("4p", 4e-12),
            ("5f", 5e-15),
            ("1e-3", 1e-3),
            ("2K", 2e3),
        ] {
            let got = parse_value(tok).unwrap();
            assert!(
                (got - expected).abs() <= 1e-18 * expected.abs().max(1.0),
                "{tok}"
            );
        }
        assert!(parse_value("abc").is_none());
        assert!(parse_value("1q").is_none());
    }

    #[test]
    fn variation_directive() {
        let text = ".VARIATION SW3=20 ST3=15 SL3=20 GCF=0.4 ISENS=-1\nV1 n1 0 1.2\nR1 n1 n2 1\n";
        let grid = parse_netlist(text).unwrap();
        let v = &grid.variation;
        assert!((v.sigma_w - 0.20 / 3.0).abs() < 1e-15);
        assert!((v.sigma_t - 0.15 / 3.0).abs() < 1e-15);
        assert!((v.sigma_l - 0.20 / 3.0).abs() < 1e-15);
        assert_eq!(v.gate_cap_fraction, 0.4);
        assert_eq!(v.current_sensitivity, -1.0);
        assert!(!v.rhs_only);
    }

    #[test]
    fn region_directive_switches_mode() {
        let text = "\
.VARIATION SL3=30
V1 n1 0 1.2 RPKG=0.5
R1 n1 n2 1
I1 n2 0 PWL(0 0 1n 1m)
.REGION n2 0
";
        let grid = parse_netlist(text).unwrap();
        assert!(grid.variation.rhs_only);
        assert_eq!(grid.variation.regions.get("n2"), Some(&0));
        assert_eq!(grid.variation.region_count(), 1);
    }

    #[test]
    fn rhs_only_rejects_matrix_sigmas() {
        let text = ".VARIATION SW3=10\nV1 n1 0 1.2\nR1 n1 n2 1\n.REGION n2 0\n";
        let err = parse_netlist(text).unwrap_err();
        assert!(err.to_string().contains("rhs-only"), "{err}");
    }

    #[test]
    fn sigma_bound_enforced() {
        let err = parse_netlist(".VARIATION SW3=100\nV1 n1 0 1.2\n").unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn waveform_interpolation_and_hold() {
        let w = Waveform::new(vec![(0.0, 0.0), (1.0, 2.0)]).unwrap();
        assert_eq!(w.eval(0.5), 1.0);
        assert_eq!(w.eval(5.0), 2.0);
        let single = Waveform::new(vec![(1.0, 3.0)]).unwrap();
        assert_eq!(single.eval(0.0), 3.0);
        assert_eq!(eval_waveform(&single, 10.0), 3.0);
    }

    #[test]
    fn waveform_exact_at_breakpoints() {
        let w = Waveform::new(vec![(0.0, 1.0), (1e-9, -2.0), (3e-9, 0.5)]).unwrap();
        for &(t, v) in w.points() {
            assert_eq!(w.eval(t), v);
        }
    }

    #[test]
    fn waveform_rejects_unsorted_times() {
        assert!(Waveform::new(vec![(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(Waveform::new(vec![(2.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(Waveform::new(vec![]).is_err());
    }

    #[test]
    fn roundtrip_simple() {
        let grid = parse_netlist(simple_netlist()).unwrap();
        let text = grid.to_netlist();
        let reparsed = parse_netlist(&text).unwrap();
        assert_eq!(grid, reparsed);
    }

    fn mesh_spec(rows: usize, cols: usize) -> MeshSpec {
        MeshSpec {
            rows,
            cols,
            r_seg: 1.0,
            c_node: 1e-12,
            pin_spacing: 1,
            vdd: 1.2,
            pin_resistance: 0.5,
            load: None,
            variation: VariationSpec::default(),
            seed: 7,
        }
    }

    #[test]
    fn mesh_2x2() {
        let grid = generate_mesh(&mesh_spec(2, 2)).unwrap();
        assert_eq!(grid.node_count(), 4);
        let resistors: Vec<_> = grid
            .elements
            .iter()
            .filter(|e| matches!(e.kind, ElementKind::Resistor { .. }))
            .collect();
        assert_eq!(resistors.len(), 4);
        for r in resistors {
            match r.kind {
                ElementKind::Resistor { ohms } => assert_eq!(ohms, 1.0),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn mesh_32x32_edge_count() {
        // Independently count the edges of a 32x32 grid graph.
        let mut expected = 0usize;
        for r in 0..32 {
            for c in 0..32 {
                if c + 1 < 32 {
                    expected += 1;
                }
                if r + 1 < 32 {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 2 * 32 * 31);

        let mut spec = mesh_spec(32, 32);
        spec.pin_spacing = 8;
        let grid = generate_mesh(&spec).unwrap();
        assert_eq!(grid.node_count(), 1024);
        let resistors = grid
            .elements
            .iter()
            .filter(|e| matches!(e.kind, ElementKind::Resistor { .. }))
            .count();
        assert_eq!(resistors, expected);
    }

    #[test]
    fn mesh_rejects_single_row() {
        assert!(generate_mesh(&mesh_spec(1, 5)).is_err());
    }

    #[test]
    fn mesh_rejects_oversized_pin_spacing() {
        let mut spec = mesh_spec(4, 4);
        spec.pin_spacing = 4;
        let err = generate_mesh(&spec).unwrap_err();
        assert!(err.to_string().contains("pin_spacing"), "{err}");
    }

    #[test]
    fn mesh_deterministic_for_fixed_seed() {
        let mut spec = mesh_spec(6, 6);
        spec.pin_spacing = 3;
        spec.load = Some(LoadSpec {
            template: Waveform::new(vec![(0.0, 0.0), (1e-9, 1e-3), (2e-9, 0.0)]).unwrap(),
            density: 0.3,
        });
        let a = generate_mesh(&spec).unwrap();
        let b = generate_mesh(&spec).unwrap();
        assert_eq!(a.to_netlist(), b.to_netlist());
        assert_eq!(a, b);

        spec.seed = 8;
        let c = generate_mesh(&spec).unwrap();
        assert_ne!(a.to_netlist(), c.to_netlist());
    }

    #[test]
    fn mesh_roundtrips_through_netlist() {
        let mut spec = mesh_spec(5, 4);
        spec.pin_spacing = 2;
        spec.load = Some(LoadSpec {
            template: Waveform::new(vec![(0.0, 0.0), (1e-9, 2e-3)]).unwrap(),
            density: 0.5,
        });
        let grid = generate_mesh(&spec).unwrap();
        let reparsed = parse_netlist(&grid.to_netlist()).unwrap();
        assert_eq!(grid, reparsed);
    }

    proptest! {
        // Round-trip: serialize + reparse is the identity on parsed grids.
        #[test]
        fn roundtrip_random_ladders(n in 2usize..12, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut text = String::from("V1 n0 0 1.2 RPKG=0.25\n");
            for i in 0..n - 1 {
                text.push_str(&format!("R{i} n{i} n{} {}\n", i + 1, rng.random_range(0.1..10.0)));
                if rng.random_bool(0.5) {
                    text.push_str(&format!("C{i} n{} 0 {}\n", i + 1, rng.random_range(1e-13..1e-11)));
                }
                if rng.random_bool(0.3) {
                    text.push_str(&format!("I{i} n{} 0 PWL(0 0 1e-9 {})\n", i + 1, rng.random_range(1e-4..1e-2)));
                }
            }
            let grid = parse_netlist(&text).unwrap();
            let reparsed = parse_netlist(&grid.to_netlist()).unwrap();
            prop_assert_eq!(grid, reparsed);
        }

        // eval_waveform is continuous: nearby times give nearby values.
        #[test]
        fn waveform_continuity(t in -1.0f64..4.0, dt in 1e-9f64..1e-6) {
            let w = Waveform::new(vec![(0.0, 0.0), (1.0, 2.0), (2.0, -1.0), (3.0, 0.0)]).unwrap();
            let slope_bound = 3.0; // max |dv/dt| across segments
            let a = w.eval(t);
            let b = w.eval(t + dt);
            prop_assert!((b - a).abs() <= slope_bound * dt + 1e-12);
        }
    }
}
