//! Scenario files: a strict, single-format description of one experiment
//! (domain, coefficients, grid, horizon, tolerances, seed), plus the run
//! manifest that makes every output reproducible.
//!
//! Parsing is schema-strict: unknown keys are errors, and validation returns
//! every problem found, not just the first. Serialization writes all resolved
//! defaults in a fixed order, so the manifest hash identifies a run exactly.

use crate::discretization::{assemble_laplacian, BandedCholesky, Grid, SparseOperator};
use crate::dynamics::{StateVector, SystemCoefficients};
use crate::geometry::{build_cutoff, Box2, CoefficientField, Domain, PmgcPartition, Region};
use crate::spectral::SpaceTag;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

/// One coefficient field: either a cutoff profile over boxes or a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSpec {
    pub boxes: Vec<Box2>,
    pub plateau: f64,
    pub transition: f64,
    /// Spatially uniform value covering all interior nodes; overrides the
    /// cutoff profile when set.
    pub constant: Option<f64>,
}

impl CoefficientSpec {
    pub fn cutoff(boxes: Vec<Box2>, plateau: f64, transition: f64) -> Self {
        CoefficientSpec {
            boxes,
            plateau,
            transition,
            constant: None,
        }
    }

    pub fn region(&self) -> Region {
        Region::from_boxes(self.boxes.clone())
    }

    pub fn build(&self, grid: &Grid) -> Result<CoefficientField, crate::geometry::GeometryError> {
        match self.constant {
            Some(v) => Ok(CoefficientField::constant(grid, v)),
            None => {
                if self.plateau == 0.0 {
                    Ok(CoefficientField::zero(grid))
                } else {
                    build_cutoff(&self.region(), self.plateau, self.transition, grid)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    /// Smooth deterministic default: u = Π sin(πx̂ₖ), y = ½ Π sin(2πx̂ₖ).
    Sine,
    /// Seeded uniform samples in [−1, 1] on all four components.
    Random,
    /// u = Π sin(kπx̂), all other components zero.
    Eigenmode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpec {
    pub kind: InitialKind,
    pub mode: usize,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            kind: InitialKind::Sine,
            mode: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmgcSpec {
    pub epsilon: f64,
    pub subdomains: Vec<Box2>,
    pub points: Vec<[f64; 2]>,
}

impl PmgcSpec {
    pub fn partition(&self) -> PmgcPartition {
        PmgcPartition::new(self.subdomains.clone(), self.points.clone(), self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub poisson: f64,
    pub hum: f64,
    pub hum_maxiter: usize,
    /// Diagnostic shift ε·I added to the Gramian before inversion; helps CG
    /// through near-failing geometries and is off by default.
    pub tikhonov: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            poisson: 1e-10,
            hum: 1e-10,
            hum_maxiter: 500,
            tikhonov: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSettings {
    pub beta_max: f64,
    pub n_points: usize,
}

impl Default for ResolventSettings {
    fn default() -> Self {
        ResolventSettings {
            beta_max: 200.0,
            n_points: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilitySettings {
    pub n_random: usize,
    pub n_power: usize,
    /// Modes per axis spanning the probe class. None resolves to
    /// min(40, grid n); keep it fixed across runs when comparing floors at
    /// different resolutions, since the class defines the constant.
    pub band_limit: Option<usize>,
}

impl ObservabilitySettings {
    pub fn resolved_band_limit(&self, grid_n: &[usize]) -> usize {
        let n_min = grid_n.iter().copied().min().unwrap_or(3);
        self.band_limit.unwrap_or_else(|| 40.min(n_min))
    }
}

impl Default for ObservabilitySettings {
    fn default() -> Self {
        ObservabilitySettings {
            n_random: 50,
            n_power: 20,
            band_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GccSettings {
    /// Ray budget; the dimension-appropriate default applies when None.
    pub n_rays: Option<usize>,
    /// Horizon for the ray check; the scenario horizon applies when None.
    pub time: Option<f64>,
}

/// Full problem description; every op takes one of these.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub domain: Domain,
    pub grid_n: Vec<usize>,
    pub a: f64,
    pub coupling: CoefficientSpec,
    pub damping: CoefficientSpec,
    pub horizon: f64,
    pub dt_factor: f64,
    pub sample_stride: usize,
    pub seed: Option<u64>,
    pub space: Option<SpaceTag>,
    pub pmgc: Option<PmgcSpec>,
    pub output_dir: String,
    pub tolerances: Tolerances,
    pub resolvent: ResolventSettings,
    pub observability: ObservabilitySettings,
    pub gcc: GccSettings,
    pub initial: InitialSpec,
}

/// Assembled operators and resolved stepping parameters for a scenario.
pub struct Setup {
    pub grid: Grid,
    pub lap: SparseOperator,
    pub poisson: BandedCholesky,
    pub coeffs: SystemCoefficients,
    pub dt: f64,
    pub n_steps: usize,
    pub sample_stride: usize,
    pub horizon: f64,
    pub space: SpaceTag,
}

impl Scenario {
    /// The stock 1D configuration: a = 1, coupling on (0.4, 0.7) inside
    /// damping on (0.3, 0.8), n = 200, horizon 10.
    pub fn default_1d() -> Self {
        Scenario {
            domain: Domain::interval(1.0),
            grid_n: vec![200],
            a: 1.0,
            coupling: CoefficientSpec::cutoff(vec![Box2::interval(0.4, 0.7)], 1.0, 0.05),
            damping: CoefficientSpec::cutoff(vec![Box2::interval(0.3, 0.8)], 1.0, 0.05),
            horizon: 10.0,
            dt_factor: 0.4,
            sample_stride: 1,
            seed: None,
            space: None,
            pmgc: None,
            output_dir: "out".to_string(),
            tolerances: Tolerances::default(),
            resolvent: ResolventSettings::default(),
            observability: ObservabilitySettings::default(),
            gcc: GccSettings::default(),
            initial: InitialSpec::default(),
        }
    }

    /// Heuristic observability horizon: 1.5 × the domain round-trip time at
    /// the slower wave speed. A transport argument, not a certified bound.
    pub fn default_control_time(domain: &Domain, a: f64) -> f64 {
        1.5 * 2.0 * domain.diameter() / a.min(1.0).sqrt()
    }

    /// Space tag resolution: strong for a = 1, weak otherwise, unless overridden.
    pub fn resolved_space(&self) -> SpaceTag {
        self.space.unwrap_or(if self.a == 1.0 {
            SpaceTag::Strong
        } else {
            SpaceTag::Weak
        })
    }

    pub fn dt(&self) -> f64 {
        let grid = Grid::new(self.domain.clone(), &self.grid_n);
        let h_min = grid.h.iter().cloned().fold(f64::INFINITY, f64::min);
        let dt_target = self.dt_factor * h_min / self.a.max(1.0).sqrt();
        let n_steps = (self.horizon / dt_target).ceil().max(1.0) as usize;
        self.horizon / n_steps as f64
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt()).round() as usize
    }

    /// Collects every validation problem; empty means the scenario is sound.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.a <= 0.0 {
            errors.push(format!("system.a must be positive (got {})", self.a));
        }
        for ext in self.domain.extents() {
            if ext <= 0.0 {
                errors.push(format!("domain extent must be positive (got {ext})"));
            }
        }
        if self.grid_n.len() != self.domain.dim() {
            errors.push(format!(
                "grid.n has {} axes but the domain has {}",
                self.grid_n.len(),
                self.domain.dim()
            ));
        }
        for &ni in &self.grid_n {
            if ni < 3 {
                errors.push(format!("grid.n must be at least 3 per axis (got {ni})"));
            }
        }
        if self.horizon <= 0.0 {
            errors.push(format!("time.horizon must be positive (got {})", self.horizon));
        }
        if !(self.dt_factor > 0.0 && self.dt_factor <= 1.0) {
            errors.push(format!(
                "time.dt_factor must lie in (0, 1] (got {})",
                self.dt_factor
            ));
        }
        if self.sample_stride == 0 {
            errors.push("time.sample_stride must be at least 1".to_string());
        }
        if !(self.tolerances.poisson > 0.0 && self.tolerances.poisson < 1.0) {
            errors.push("tolerances.poisson must lie in (0, 1)".to_string());
        }
        if !(self.tolerances.hum > 0.0 && self.tolerances.hum < 1.0) {
            errors.push("tolerances.hum must lie in (0, 1)".to_string());
        }
        if self.tolerances.tikhonov < 0.0 {
            errors.push("tolerances.tikhonov must be nonnegative".to_string());
        }
        if let Some(v) = self.damping.constant {
            if v < 0.0 {
                errors.push(format!("system.damping.constant must be nonnegative (got {v})"));
            }
        } else if self.damping.plateau < 0.0 {
            errors.push(format!(
                "system.damping.plateau must be nonnegative (got {})",
                self.damping.plateau
            ));
        }
        let dim = self.domain.dim();
        let ext = self.domain.extents();
        let mut check_boxes = |name: &str, boxes: &[Box2]| {
            for b in boxes {
                for k in 0..dim {
                    if b.lo[k] < 0.0 || b.hi[k] > ext[k] {
                        errors.push(format!(
                            "{name} box [{}, {}] leaves the domain closure on axis {k}",
                            b.lo[k], b.hi[k]
                        ));
                    }
                }
            }
        };
        check_boxes("system.coupling", &self.coupling.boxes);
        check_boxes("system.damping", &self.damping.boxes);

        if self.grid_n.len() == self.domain.dim() && self.grid_n.iter().all(|&n| n >= 3) {
            let grid = Grid::new(self.domain.clone(), &self.grid_n);
            if let Err(e) = self.coupling.build(&grid) {
                errors.push(format!("system.coupling: {e}"));
            }
            if let Err(e) = self.damping.build(&grid) {
                errors.push(format!("system.damping: {e}"));
            }
        }
        if let Some(p) = &self.pmgc {
            if p.epsilon <= 0.0 {
                errors.push(format!("pmgc.epsilon must be positive (got {})", p.epsilon));
            }
            if p.subdomains.len() != p.points.len() {
                errors.push(format!(
                    "pmgc needs one point per subdomain ({} subdomains, {} points)",
                    p.subdomains.len(),
                    p.points.len()
                ));
            }
        }
        if self.initial.kind == InitialKind::Random && self.seed.is_none() {
            errors.push("seed is mandatory with random initial data".to_string());
        }
        if let Some(k) = self.observability.band_limit {
            if k == 0 {
                errors.push("observability.band_limit must be at least 1".to_string());
            } else if self.grid_n.iter().any(|&ni| k > ni) {
                errors.push(format!(
                    "observability.band_limit {k} exceeds the grid resolution"
                ));
            }
        }
        errors
    }

    /// Assembles the grid, operators, and coefficient fields. Panics on an
    /// invalid scenario; run `validate` first for user-facing paths.
    pub fn build(&self) -> Setup {
        let errors = self.validate();
        assert!(errors.is_empty(), "invalid scenario: {errors:?}");
        let grid = Grid::new(self.domain.clone(), &self.grid_n);
        let lap = assemble_laplacian(&grid);
        let poisson = BandedCholesky::for_laplacian(&grid, &lap);
        let b = self.coupling.build(&grid).expect("validated");
        let c = self.damping.build(&grid).expect("validated");
        let coeffs = SystemCoefficients::new(self.a, b, c);
        let dt = self.dt();
        let n_steps = (self.horizon / dt).round() as usize;
        Setup {
            grid,
            lap,
            poisson,
            coeffs,
            dt,
            n_steps,
            sample_stride: self.sample_stride,
            horizon: self.horizon,
            space: self.resolved_space(),
        }
    }

    /// Initial state from the [initial] section.
    pub fn initial_state(&self, grid: &Grid) -> StateVector {
        let dim = grid.dim();
        let ext = grid.domain.extents();
        let mut state = StateVector::zeros(grid.len());
        match self.initial.kind {
            InitialKind::Sine => {
                state.u = grid.sample(|p| {
                    (0..dim)
                        .map(|k| (std::f64::consts::PI * p[k] / ext[k]).sin())
                        .product()
                });
                state.y = grid.sample(|p| {
                    0.5 * (0..dim)
                        .map(|k| (2.0 * std::f64::consts::PI * p[k] / ext[k]).sin())
                        .product::<f64>()
                });
            }
            InitialKind::Eigenmode => {
                let m = self.initial.mode as f64;
                state.u = grid.sample(|p| {
                    (0..dim)
                        .map(|k| (m * std::f64::consts::PI * p[k] / ext[k]).sin())
                        .product()
                });
            }
            InitialKind::Random => {
                use rand::prelude::*;
                let seed = self.seed.expect("validated: random initial data needs a seed");
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                for i in 0..grid.len() {
                    state.u[i] = rng.random_range(-1.0..1.0);
                }
                for i in 0..grid.len() {
                    state.v[i] = rng.random_range(-1.0..1.0);
                }
                for i in 0..grid.len() {
                    state.y[i] = rng.random_range(-1.0..1.0);
                }
                for i in 0..grid.len() {
                    state.z[i] = rng.random_range(-1.0..1.0);
                }
            }
        }
        state
    }

    /// Canonical TOML serialization with all defaults resolved; the byte
    /// content is what the manifest hash covers.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        let _ = writeln!(
            s,
            "space = \"{}\"",
            match self.space {
                None => "auto",
                Some(SpaceTag::Strong) => "strong",
                Some(SpaceTag::Weak) => "weak",
            }
        );
        let _ = writeln!(s, "\n[domain]");
        match &self.domain {
            Domain::Interval { length } => {
                let _ = writeln!(s, "kind = \"interval\"");
                let _ = writeln!(s, "length = {length}");
            }
            Domain::Rectangle { lengths } => {
                let _ = writeln!(s, "kind = \"rectangle\"");
                let _ = writeln!(s, "lengths = [{}, {}]", lengths[0], lengths[1]);
            }
        }
        let _ = writeln!(s, "\n[grid]");
        if self.grid_n.len() == 1 {
            let _ = writeln!(s, "n = {}", self.grid_n[0]);
        } else {
            let _ = writeln!(
                s,
                "n = [{}]",
                self.grid_n
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        let _ = writeln!(s, "\n[system]");
        let _ = writeln!(s, "a = {}", self.a);
        for (name, spec) in [("coupling", &self.coupling), ("damping", &self.damping)] {
            let _ = writeln!(s, "\n[system.{name}]");
            if let Some(v) = spec.constant {
                let _ = writeln!(s, "constant = {v}");
            } else {
                let _ = writeln!(s, "boxes = {}", boxes_toml(&spec.boxes, self.domain.dim()));
                let _ = writeln!(s, "plateau = {}", spec.plateau);
                let _ = writeln!(s, "transition = {}", spec.transition);
            }
        }
        let _ = writeln!(s, "\n[time]");
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "dt_factor = {}", self.dt_factor);
        let _ = writeln!(s, "sample_stride = {}", self.sample_stride);
        let _ = writeln!(s, "\n[initial]");
        let _ = writeln!(
            s,
            "kind = \"{}\"",
            match self.initial.kind {
                InitialKind::Sine => "sine",
                InitialKind::Random => "random",
                InitialKind::Eigenmode => "eigenmode",
            }
        );
        let _ = writeln!(s, "mode = {}", self.initial.mode);
        if let Some(p) = &self.pmgc {
            let _ = writeln!(s, "\n[pmgc]");
            let _ = writeln!(s, "epsilon = {}", p.epsilon);
            let _ = writeln!(s, "subdomains = {}", boxes_toml(&p.subdomains, self.domain.dim()));
            let pts = p
                .points
                .iter()
                .map(|q| {
                    if self.domain.dim() == 1 {
                        format!("[{}]", q[0])
                    } else {
                        format!("[{}, {}]", q[0], q[1])
                    }
                })
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(s, "points = [{pts}]");
        }
        let _ = writeln!(s, "\n[tolerances]");
        let _ = writeln!(s, "poisson = {}", self.tolerances.poisson);
        let _ = writeln!(s, "hum = {}", self.tolerances.hum);
        let _ = writeln!(s, "hum_maxiter = {}", self.tolerances.hum_maxiter);
        let _ = writeln!(s, "tikhonov = {}", self.tolerances.tikhonov);
        let _ = writeln!(s, "\n[resolvent]");
        let _ = writeln!(s, "beta_max = {}", self.resolvent.beta_max);
        let _ = writeln!(s, "n_points = {}", self.resolvent.n_points);
        let _ = writeln!(s, "\n[observability]");
        let _ = writeln!(s, "n_random = {}", self.observability.n_random);
        let _ = writeln!(s, "n_power = {}", self.observability.n_power);
        if let Some(k) = self.observability.band_limit {
            let _ = writeln!(s, "band_limit = {k}");
        }
        let _ = writeln!(s, "\n[gcc]");
        if let Some(r) = self.gcc.n_rays {
            let _ = writeln!(s, "n_rays = {r}");
        }
        if let Some(t) = self.gcc.time {
            let _ = writeln!(s, "time = {t}");
        }
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = \"{}\"", self.output_dir);
        s
    }

    /// FNV-1a over the canonical serialization.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_toml().as_bytes()))
    }
}

fn boxes_toml(boxes: &[Box2], dim: usize) -> String {
    let body = boxes
        .iter()
        .map(|b| {
            if dim == 1 {
                format!("[{}, {}]", b.lo[0], b.hi[0])
            } else {
                format!(
                    "[[{}, {}], [{}, {}]]",
                    b.lo[0], b.hi[0], b.lo[1], b.hi[1]
                )
            }
        })
        .collect::<Vec<_>>()
        .join(", ");
    format!("[{body}]")
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Reads and validates a scenario file (or the [scenario] table of a manifest).
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let document: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
    // a manifest embeds the scenario under [scenario]
    let (table, _is_manifest) = match document.get("scenario") {
        Some(toml::Value::Table(inner)) if document.contains_key("run") => (inner, true),
        _ => (&document, false),
    };
    let mut errors = Vec::new();
    let scenario = scenario_from_table(table, &mut errors);
    let mut all = errors;
    all.extend(scenario.validate());
    if all.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Validation(all))
    }
}

struct Reader<'a> {
    table: &'a toml::value::Table,
    prefix: String,
    seen: std::cell::RefCell<Vec<String>>,
}

impl<'a> Reader<'a> {
    fn new(table: &'a toml::value::Table, prefix: &str) -> Self {
        Reader {
            table,
            prefix: prefix.to_string(),
            seen: std::cell::RefCell::new(Vec::new()),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{}", self.prefix, key)
        }
    }

    fn get(&self, key: &str) -> Option<&'a toml::Value> {
        self.seen.borrow_mut().push(key.to_string());
        self.table.get(key)
    }

    fn f64(&self, key: &str, default: f64, errors: &mut Vec<String>) -> f64 {
        match self.get(key) {
            None => default,
            Some(toml::Value::Float(f)) => *f,
            Some(toml::Value::Integer(i)) => *i as f64,
            Some(other) => {
                errors.push(format!("{} must be a number, got {other}", self.path(key)));
                default
            }
        }
    }

    fn usize(&self, key: &str, default: usize, errors: &mut Vec<String>) -> usize {
        match self.get(key) {
            None => default,
            Some(toml::Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(other) => {
                errors.push(format!(
                    "{} must be a nonnegative integer, got {other}",
                    self.path(key)
                ));
                default
            }
        }
    }

    fn string(&self, key: &str, default: &str, errors: &mut Vec<String>) -> String {
        match self.get(key) {
            None => default.to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => {
                errors.push(format!("{} must be a string, got {other}", self.path(key)));
                default.to_string()
            }
        }
    }

    /// Flags unknown keys once all expected keys have been read.
    fn finish(&self, errors: &mut Vec<String>) {
        let seen = self.seen.borrow();
        for key in self.table.keys() {
            if !seen.iter().any(|s| s == key) {
                errors.push(format!("unknown key `{}`", self.path(key)));
            }
        }
    }
}

fn parse_boxes(
    value: &toml::Value,
    dim: usize,
    path: &str,
    errors: &mut Vec<String>,
) -> Vec<Box2> {
    let Some(list) = value.as_array() else {
        errors.push(format!("{path} must be an array of boxes"));
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, item) in list.iter().enumerate() {
        match parse_one_box(item, dim) {
            Some(b) => out.push(b),
            None => errors.push(format!(
                "{path}[{i}] must be {} (per-axis [lo, hi] pairs)",
                if dim == 1 { "[lo, hi]" } else { "[[lox, hix], [loy, hiy]]" }
            )),
        }
    }
    out
}

fn parse_one_box(item: &toml::Value, dim: usize) -> Option<Box2> {
    let arr = item.as_array()?;
    let num = |v: &toml::Value| -> Option<f64> {
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
    };
    if dim == 1 {
        if arr.len() != 2 {
            return None;
        }
        Some(Box2::interval(num(&arr[0])?, num(&arr[1])?))
    } else {
        if arr.len() != 2 {
            return None;
        }
        let ax = arr[0].as_array()?;
        let ay = arr[1].as_array()?;
        if ax.len() != 2 || ay.len() != 2 {
            return None;
        }
        Some(Box2::rect(
            [num(&ax[0])?, num(&ay[0])?],
            [num(&ax[1])?, num(&ay[1])?],
        ))
    }
}

fn coefficient_from_table(
    table: Option<&toml::Value>,
    name: &str,
    default: &CoefficientSpec,
    dim: usize,
    errors: &mut Vec<String>,
) -> CoefficientSpec {
    let Some(value) = table else {
        return default.clone();
    };
    let Some(tbl) = value.as_table() else {
        errors.push(format!("{name} must be a table"));
        return default.clone();
    };
    let r = Reader::new(tbl, name);
    let constant = match r.get("constant") {
        None => None,
        Some(toml::Value::Float(f)) => Some(*f),
        Some(toml::Value::Integer(i)) => Some(*i as f64),
        Some(other) => {
            errors.push(format!("{name}.constant must be a number, got {other}"));
            None
        }
    };
    let boxes = match r.get("boxes") {
        None => default.boxes.clone(),
        Some(v) => parse_boxes(v, dim, &format!("{name}.boxes"), errors),
    };
    let plateau = r.f64("plateau", default.plateau, errors);
    let transition = r.f64("transition", default.transition, errors);
    r.finish(errors);
    CoefficientSpec {
        boxes,
        plateau,
        transition,
        constant,
    }
}

fn scenario_from_table(table: &toml::value::Table, errors: &mut Vec<String>) -> Scenario {
    let defaults = Scenario::default_1d();
    let root = Reader::new(table, "");

    let seed = match root.get("seed") {
        None => None,
        Some(toml::Value::Integer(i)) if *i >= 0 => Some(*i as u64),
        Some(other) => {
            errors.push(format!("seed must be a nonnegative integer, got {other}"));
            None
        }
    };
    let space = match root.string("space", "auto", errors).as_str() {
        "auto" => None,
        "strong" => Some(SpaceTag::Strong),
        "weak" => Some(SpaceTag::Weak),
        other => {
            errors.push(format!("space must be auto|strong|weak, got `{other}`"));
            None
        }
    };

    // [domain]
    let domain = match root.get("domain") {
        None => defaults.domain.clone(),
        Some(v) => match v.as_table() {
            None => {
                errors.push("domain must be a table".to_string());
                defaults.domain.clone()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "domain");
                let kind = r.string("kind", "interval", errors);
                let d = match kind.as_str() {
                    "interval" => {
                        let len = r.f64("length", 1.0, errors);
                        Domain::Interval { length: len }
                    }
                    "rectangle" => {
                        let lengths = match r.get("lengths") {
                            Some(toml::Value::Array(a)) if a.len() == 2 => {
                                let f = |v: &toml::Value| {
                                    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
                                };
                                match (f(&a[0]), f(&a[1])) {
                                    (Some(x), Some(y)) => [x, y],
                                    _ => {
                                        errors.push(
                                            "domain.lengths entries must be numbers".to_string(),
                                        );
                                        [1.0, 1.0]
                                    }
                                }
                            }
                            _ => {
                                errors.push(
                                    "domain.lengths = [Lx, Ly] is required for rectangles"
                                        .to_string(),
                                );
                                [1.0, 1.0]
                            }
                        };
                        Domain::Rectangle { lengths }
                    }
                    other => {
                        errors.push(format!("domain.kind must be interval|rectangle, got `{other}`"));
                        defaults.domain.clone()
                    }
                };
                r.finish(errors);
                d
            }
        },
    };
    let dim = domain.dim();

    // [grid]
    let grid_n = match root.get("grid") {
        None => {
            if dim == 1 {
                defaults.grid_n.clone()
            } else {
                vec![64, 64]
            }
        }
        Some(v) => match v.as_table() {
            None => {
                errors.push("grid must be a table".to_string());
                defaults.grid_n.clone()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "grid");
                let n = match r.get("n") {
                    Some(toml::Value::Integer(i)) if *i > 0 => vec![*i as usize],
                    Some(toml::Value::Array(a)) => a
                        .iter()
                        .filter_map(|v| v.as_integer())
                        .filter(|i| *i > 0)
                        .map(|i| i as usize)
                        .collect(),
                    None => {
                        if dim == 1 {
                            defaults.grid_n.clone()
                        } else {
                            vec![64, 64]
                        }
                    }
                    Some(other) => {
                        errors.push(format!("grid.n must be an integer or array, got {other}"));
                        defaults.grid_n.clone()
                    }
                };
                r.finish(errors);
                n
            }
        },
    };

    // [system] with nested coupling/damping
    let (a, coupling, damping) = match root.get("system") {
        None => (
            defaults.a,
            defaults.coupling.clone(),
            defaults.damping.clone(),
        ),
        Some(v) => match v.as_table() {
            None => {
                errors.push("system must be a table".to_string());
                (defaults.a, defaults.coupling.clone(), defaults.damping.clone())
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "system");
                let a = r.f64("a", defaults.a, errors);
                let coupling = coefficient_from_table(
                    r.get("coupling"),
                    "system.coupling",
                    &defaults.coupling,
                    dim,
                    errors,
                );
                let damping = coefficient_from_table(
                    r.get("damping"),
                    "system.damping",
                    &defaults.damping,
                    dim,
                    errors,
                );
                r.finish(errors);
                (a, coupling, damping)
            }
        },
    };

    // [time]
    let (horizon, dt_factor, sample_stride) = match root.get("time") {
        None => (
            Scenario::default_control_time(&domain, a).max(defaults.horizon),
            defaults.dt_factor,
            defaults.sample_stride,
        ),
        Some(v) => match v.as_table() {
            None => {
                errors.push("time must be a table".to_string());
                (defaults.horizon, defaults.dt_factor, defaults.sample_stride)
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "time");
                let horizon = r.f64(
                    "horizon",
                    Scenario::default_control_time(&domain, a).max(defaults.horizon),
                    errors,
                );
                let dt_factor = r.f64("dt_factor", defaults.dt_factor, errors);
                let stride = r.usize("sample_stride", defaults.sample_stride, errors);
                r.finish(errors);
                (horizon, dt_factor, stride)
            }
        },
    };

    // [initial]
    let initial = match root.get("initial") {
        None => InitialSpec::default(),
        Some(v) => match v.as_table() {
            None => {
                errors.push("initial must be a table".to_string());
                InitialSpec::default()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "initial");
                let kind = match r.string("kind", "sine", errors).as_str() {
                    "sine" => InitialKind::Sine,
                    "random" => InitialKind::Random,
                    "eigenmode" => InitialKind::Eigenmode,
                    other => {
                        errors.push(format!(
                            "initial.kind must be sine|random|eigenmode, got `{other}`"
                        ));
                        InitialKind::Sine
                    }
                };
                let mode = r.usize("mode", 1, errors);
                r.finish(errors);
                InitialSpec { kind, mode }
            }
        },
    };

    // [pmgc]
    let pmgc = match root.get("pmgc") {
        None => None,
        Some(v) => match v.as_table() {
            None => {
                errors.push("pmgc must be a table".to_string());
                None
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "pmgc");
                let epsilon = r.f64("epsilon", 0.05, errors);
                let subdomains = match r.get("subdomains") {
                    Some(v) => parse_boxes(v, dim, "pmgc.subdomains", errors),
                    None => {
                        errors.push("pmgc.subdomains is required".to_string());
                        Vec::new()
                    }
                };
                let points = match r.get("points") {
                    Some(toml::Value::Array(list)) => {
                        let mut pts = Vec::new();
                        for (i, item) in list.iter().enumerate() {
                            let ok = item.as_array().and_then(|a| {
                                let f = |v: &toml::Value| {
                                    v.as_float().or_else(|| v.as_integer().map(|x| x as f64))
                                };
                                match (dim, a.len()) {
                                    (1, 1) => Some([f(&a[0])?, 0.0]),
                                    (2, 2) => Some([f(&a[0])?, f(&a[1])?]),
                                    _ => None,
                                }
                            });
                            match ok {
                                Some(p) => pts.push(p),
                                None => errors.push(format!(
                                    "pmgc.points[{i}] must be a {dim}-element array"
                                )),
                            }
                        }
                        pts
                    }
                    _ => {
                        errors.push("pmgc.points is required".to_string());
                        Vec::new()
                    }
                };
                r.finish(errors);
                Some(PmgcSpec {
                    epsilon,
                    subdomains,
                    points,
                })
            }
        },
    };

    // [tolerances], [resolvent], [observability], [gcc], [output]
    let tolerances = match root.get("tolerances") {
        None => Tolerances::default(),
        Some(v) => match v.as_table() {
            None => {
                errors.push("tolerances must be a table".to_string());
                Tolerances::default()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "tolerances");
                let d = Tolerances::default();
                let t = Tolerances {
                    poisson: r.f64("poisson", d.poisson, errors),
                    hum: r.f64("hum", d.hum, errors),
                    hum_maxiter: r.usize("hum_maxiter", d.hum_maxiter, errors),
                    tikhonov: r.f64("tikhonov", d.tikhonov, errors),
                };
                r.finish(errors);
                t
            }
        },
    };
    let resolvent = match root.get("resolvent") {
        None => ResolventSettings::default(),
        Some(v) => match v.as_table() {
            None => {
                errors.push("resolvent must be a table".to_string());
                ResolventSettings::default()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "resolvent");
                let d = ResolventSettings::default();
                let out = ResolventSettings {
                    beta_max: r.f64("beta_max", d.beta_max, errors),
                    n_points: r.usize("n_points", d.n_points, errors),
                };
                r.finish(errors);
                out
            }
        },
    };
    let observability = match root.get("observability") {
        None => ObservabilitySettings::default(),
        Some(v) => match v.as_table() {
            None => {
                errors.push("observability must be a table".to_string());
                ObservabilitySettings::default()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "observability");
                let d = ObservabilitySettings::default();
                let band_limit = match r.get("band_limit") {
                    None => None,
                    Some(toml::Value::Integer(i)) if *i > 0 => Some(*i as usize),
                    Some(other) => {
                        errors.push(format!(
                            "observability.band_limit must be a positive integer, got {other}"
                        ));
                        None
                    }
                };
                let out = ObservabilitySettings {
                    n_random: r.usize("n_random", d.n_random, errors),
                    n_power: r.usize("n_power", d.n_power, errors),
                    band_limit,
                };
                r.finish(errors);
                out
            }
        },
    };
    let gcc = match root.get("gcc") {
        None => GccSettings::default(),
        Some(v) => match v.as_table() {
            None => {
                errors.push("gcc must be a table".to_string());
                GccSettings::default()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "gcc");
                let n_rays = match r.get("n_rays") {
                    None => None,
                    Some(toml::Value::Integer(i)) if *i > 0 => Some(*i as usize),
                    Some(other) => {
                        errors.push(format!("gcc.n_rays must be a positive integer, got {other}"));
                        None
                    }
                };
                let time = match r.get("time") {
                    None => None,
                    Some(toml::Value::Float(f)) => Some(*f),
                    Some(toml::Value::Integer(i)) => Some(*i as f64),
                    Some(other) => {
                        errors.push(format!("gcc.time must be a number, got {other}"));
                        None
                    }
                };
                r.finish(errors);
                GccSettings { n_rays, time }
            }
        },
    };
    let output_dir = match root.get("output") {
        None => defaults.output_dir.clone(),
        Some(v) => match v.as_table() {
            None => {
                errors.push("output must be a table".to_string());
                defaults.output_dir.clone()
            }
            Some(tbl) => {
                let r = Reader::new(tbl, "output");
                let dir = r.string("dir", &defaults.output_dir, errors);
                r.finish(errors);
                dir
            }
        },
    };
    root.finish(errors);

    Scenario {
        domain,
        grid_n,
        a,
        coupling,
        damping,
        horizon,
        dt_factor,
        sample_stride,
        seed,
        space,
        pmgc,
        output_dir,
        tolerances,
        resolvent,
        observability,
        gcc,
        initial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let sc = parse_scenario_str("").unwrap();
        assert_eq!(sc.grid_n, vec![200]);
        assert_eq!(sc.a, 1.0);
        assert_eq!(sc.dt_factor, 0.4);
        assert_eq!(sc.output_dir, "out");
        assert!(sc.horizon > 0.0);
    }

    #[test]
    fn negative_wave_speed_names_the_field() {
        let err = parse_scenario_str("[system]\na = -2.0\n").unwrap_err();
        match err {
            ScenarioError::Validation(list) => {
                assert!(list.iter().any(|e| e.contains("system.a")), "{list:?}");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_scenario_str("[system]\na = 1.0\nwave_speed = 2.0\n").unwrap_err();
        match err {
            ScenarioError::Validation(list) => {
                assert!(
                    list.iter().any(|e| e.contains("unknown key `system.wave_speed`")),
                    "{list:?}"
                );
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn all_errors_are_collected() {
        let text = "[system]\na = -1.0\n[time]\nhorizon = -3.0\n[grid]\nn = 2\n";
        let err = parse_scenario_str(text).unwrap_err();
        match err {
            ScenarioError::Validation(list) => {
                assert!(list.len() >= 3, "expected every problem reported: {list:?}");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn canonical_round_trip() {
        let mut sc = Scenario::default_1d();
        sc.seed = Some(7);
        sc.a = 2.0;
        sc.pmgc = Some(PmgcSpec {
            epsilon: 0.03,
            subdomains: vec![Box2::interval(0.0, 0.45), Box2::interval(0.55, 1.0)],
            points: vec![[-1.0, 0.0], [-1.0, 0.0]],
        });
        let text = sc.to_toml();
        let parsed = parse_scenario_str(&text).unwrap();
        assert_eq!(parsed, sc);
        assert_eq!(parsed.hash(), sc.hash());
    }

    #[test]
    fn rectangle_boxes_parse() {
        let text = r#"
[domain]
kind = "rectangle"
lengths = [1.0, 1.0]
[grid]
n = [24, 24]
[system.coupling]
boxes = [[[0.35, 0.65], [0.0, 1.0]]]
plateau = 1.0
transition = 0.1
[system.damping]
boxes = [[[0.3, 0.7], [0.0, 1.0]]]
plateau = 1.0
transition = 0.1
"#;
        let sc = parse_scenario_str(text).unwrap();
        assert_eq!(sc.domain.dim(), 2);
        assert_eq!(sc.coupling.boxes.len(), 1);
        assert_eq!(sc.coupling.boxes[0].lo, [0.35, 0.0]);
        assert_eq!(sc.coupling.boxes[0].hi, [0.65, 1.0]);
    }

    #[test]
    fn random_initial_requires_seed() {
        let err = parse_scenario_str("[initial]\nkind = \"random\"\n").unwrap_err();
        match err {
            ScenarioError::Validation(list) => {
                assert!(list.iter().any(|e| e.contains("seed")), "{list:?}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn default_scenario_builds() {
        let sc = Scenario::default_1d();
        assert!(sc.validate().is_empty());
        let setup = sc.build();
        assert_eq!(setup.grid.len(), 200);
        assert!(setup.dt > 0.0 && setup.dt <= 0.4 * setup.grid.h[0] + 1e-12);
        assert_eq!(setup.space, SpaceTag::Strong);
    }
}
