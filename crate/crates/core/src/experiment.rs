//! Experiment driver: flat `key = value` configs, CSV telemetry, the
//! memory-footprint table and run comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::operators::{AssemblyMode, CoarsePolicy, OperatorConfig, Operators};
use crate::problem::{MaterialField, ProblemInstance, NOISE_GENERATOR};
use crate::scheduler::SchedulerConfig;
use crate::solver::{AmrConfig, CycleReport, Solver, SolverConfig, SolverVariant, Termination};
use crate::stream::{CodecConfig, PrecisionPolicy};
use crate::transfer::TransferKind;

/// Keys that identify the problem being solved; runs can only be compared
/// when these agree.
const PROBLEM_KEYS: [&str; 6] = ["setup", "theta", "eps_low", "rhs", "boundary", "depth"];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub material: MaterialField,
    pub rhs: f64,
    pub boundary: f64,
    pub depth: u8,
    pub seed: u64,
    pub solver: SolverConfig,
    pub operators: OperatorConfig,
    pub amr: AmrConfig,
    /// CSV destination; `None` writes to stdout from the CLI.
    pub output: Option<PathBuf>,
    pub stream_output: Option<PathBuf>,
    /// Record wall time. Off keeps single-worker CSVs byte-identical.
    pub wall_clock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            material: MaterialField::Theta { theta: 0.0 },
            rhs: 0.0,
            boundary: 0.0,
            depth: 3,
            seed: 0,
            solver: SolverConfig::default(),
            operators: OperatorConfig::default(),
            amr: AmrConfig::default(),
            output: None,
            stream_output: None,
            wall_clock: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{value}' for '{key}'"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "-").then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Parses a config file body. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ops = &mut self.operators;
        match key {
            "setup" => {
                self.material = match value {
                    "theta" => MaterialField::Theta { theta: self.theta_or(0.0) },
                    "quadrant" => MaterialField::Quadrant { eps_low: self.eps_low_or(1.0) },
                    _ => return Err(Error::Config(format!("unknown setup '{value}'"))),
                }
            }
            "theta" => {
                let theta = parse(key, value)?;
                self.material = MaterialField::Theta { theta };
            }
            "eps_low" => {
                let eps_low: f64 = parse(key, value)?;
                if eps_low.is_nan() || eps_low <= 0.0 {
                    return Err(Error::Config("eps_low must be positive".into()));
                }
                self.material = MaterialField::Quadrant { eps_low };
            }
            "rhs" => self.rhs = parse(key, value)?,
            "boundary" => self.boundary = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "solver" => self.solver.variant = value.parse()?,
            "omega" => self.solver.omega = parse(key, value)?,
            "target" => self.solver.target = parse(key, value)?,
            "divergence" => self.solver.divergence = parse(key, value)?,
            "max_cycles" => self.solver.max_cycles = parse(key, value)?,
            "assembly" => ops.mode = value.parse()?,
            "termination_c" => ops.termination_c = parse(key, value)?,
            "max_n" => ops.max_n = parse(key, value)?,
            "transfer" => ops.transfer = value.parse()?,
            "coarse_recompute" => ops.coarse = value.parse()?,
            "gating" => ops.gating = parse_bool(key, value)?,
            "compression_threshold" => ops.codec.threshold = parse(key, value)?,
            "precision_policy" => {
                ops.codec.policy = match value {
                    "fresh" => PrecisionPolicy::Fresh,
                    "ratchet" => PrecisionPolicy::Ratchet,
                    _ => return Err(Error::Config(format!("unknown precision policy '{value}'"))),
                }
            }
            "workers" => ops.scheduler.workers = parse(key, value)?,
            "throttle" => {
                ops.scheduler.throttle = if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "forced_task_fraction" => ops.forced_task_fraction = parse(key, value)?,
            "forced_n" => ops.forced_n = parse(key, value)?,
            "amr" => self.amr.enabled = parse_bool(key, value)?,
            "amr_fraction" => self.amr.fraction = parse(key, value)?,
            "amr_interval" => self.amr.interval = parse(key, value)?,
            "amr_max_depth" => self.amr.max_level = parse(key, value)?,
            "amr_max_steps" => self.amr.max_steps = parse(key, value)?,
            "output" => self.output = opt_path(value),
            "stream_output" => self.stream_output = opt_path(value),
            "wall_clock" => self.wall_clock = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn theta_or(&self, d: f64) -> f64 {
        match self.material {
            MaterialField::Theta { theta } => theta,
            _ => d,
        }
    }

    fn eps_low_or(&self, d: f64) -> f64 {
        match self.material {
            MaterialField::Quadrant { eps_low } => eps_low,
            _ => d,
        }
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let o = &self.operators;
        let mut v: Vec<(&'static str, String)> = Vec::new();
        match self.material {
            MaterialField::Theta { theta } => {
                v.push(("setup", "theta".into()));
                v.push(("theta", theta.to_string()));
            }
            MaterialField::Quadrant { eps_low } => {
                v.push(("setup", "quadrant".into()));
                v.push(("eps_low", eps_low.to_string()));
            }
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into());
        v.extend([
            ("rhs", self.rhs.to_string()),
            ("boundary", self.boundary.to_string()),
            ("depth", self.depth.to_string()),
            ("seed", self.seed.to_string()),
            ("solver", variant_name(self.solver.variant).into()),
            ("omega", self.solver.omega.to_string()),
            ("target", self.solver.target.to_string()),
            ("divergence", self.solver.divergence.to_string()),
            ("max_cycles", self.solver.max_cycles.to_string()),
            ("assembly", mode_name(o.mode).into()),
            ("termination_c", o.termination_c.to_string()),
            ("max_n", o.max_n.to_string()),
            ("transfer", if o.transfer == TransferKind::Geometric { "geometric" } else { "boxmg" }.into()),
            ("coarse_recompute", if o.coarse == CoarsePolicy::Always { "always" } else { "ripple" }.into()),
            ("gating", o.gating.to_string()),
            ("compression_threshold", o.codec.threshold.to_string()),
            (
                "precision_policy",
                if o.codec.policy == PrecisionPolicy::Fresh { "fresh" } else { "ratchet" }.into(),
            ),
            ("workers", o.scheduler.workers.to_string()),
            ("throttle", o.scheduler.throttle.map_or("none".into(), |t| t.to_string())),
            ("forced_task_fraction", o.forced_task_fraction.to_string()),
            ("forced_n", o.forced_n.to_string()),
            ("amr", self.amr.enabled.to_string()),
            ("amr_fraction", self.amr.fraction.to_string()),
            ("amr_interval", self.amr.interval.to_string()),
            ("amr_max_depth", self.amr.max_level.to_string()),
            ("amr_max_steps", self.amr.max_steps.to_string()),
            ("output", path(&self.output)),
            ("stream_output", path(&self.stream_output)),
            ("wall_clock", self.wall_clock.to_string()),
        ]);
        v
    }

    /// Config file text that parses back to `self`.
    pub fn to_config_string(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn problem(&self) -> ProblemInstance {
        ProblemInstance { material: self.material, rhs: self.rhs, boundary: self.boundary, seed: self.seed }
    }
}

fn variant_name(v: SolverVariant) -> &'static str {
    match v {
        SolverVariant::Additive => "additive",
        SolverVariant::AdafacJac => "adafac-jac",
        SolverVariant::AdafacPi => "adafac-pi",
    }
}

fn mode_name(m: AssemblyMode) -> &'static str {
    match m {
        AssemblyMode::Eager => "eager",
        AssemblyMode::Lazy => "lazy",
        AssemblyMode::AdaptiveSync => "adaptive-sync",
        AssemblyMode::Anarchic => "anarchic",
    }
}

/// One CSV row per cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryRow {
    pub cycle: usize,
    pub residual: f64,
    pub normalized: f64,
    pub dof_updates: u64,
    pub leaf_dofs: usize,
    pub mesh_points: usize,
    pub pending: usize,
    pub outstanding: usize,
    pub max_n: u32,
    pub avg_n: f64,
    pub factor_total: f64,
    pub factor_mean: f64,
    /// One character per level, coarsest first.
    pub enabled: String,
    pub refined_cells: usize,
    pub status: String,
    pub wall_ms: f64,
}

pub const TELEMETRY_HEADER: [&str; 16] = [
    "cycle",
    "residual",
    "normalized",
    "dof_updates",
    "leaf_dofs",
    "mesh_points",
    "pending",
    "outstanding",
    "max_n",
    "avg_n",
    "factor_total",
    "factor_mean",
    "enabled",
    "refined_cells",
    "status",
    "wall_ms",
];

impl TelemetryRow {
    pub fn from_report(rep: &CycleReport, wall_ms: f64) -> Self {
        Self {
            cycle: rep.cycle,
            residual: rep.residual,
            normalized: rep.normalized,
            dof_updates: rep.dof_updates,
            leaf_dofs: rep.leaf_dofs,
            mesh_points: rep.mesh_points,
            pending: rep.ops.pending,
            outstanding: rep.ops.outstanding,
            max_n: rep.ops.max_n,
            avg_n: rep.ops.avg_n,
            factor_total: rep.ops.compression.factor_total,
            factor_mean: rep.ops.compression.factor_mean,
            enabled: rep.enabled.iter().map(|&e| if e { '1' } else { '0' }).collect(),
            refined_cells: rep.refined_cells,
            status: rep.status.as_str().to_string(),
            wall_ms,
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.cycle.to_string(),
            format!("{:e}", self.residual),
            format!("{:e}", self.normalized),
            self.dof_updates.to_string(),
            self.leaf_dofs.to_string(),
            self.mesh_points.to_string(),
            self.pending.to_string(),
            self.outstanding.to_string(),
            self.max_n.to_string(),
            format!("{:.4}", self.avg_n),
            format!("{:.4}", self.factor_total),
            format!("{:.4}", self.factor_mean),
            self.enabled.clone(),
            self.refined_cells.to_string(),
            self.status.clone(),
            format!("{:.3}", self.wall_ms),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let f = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Config(format!("telemetry row has only {} columns", rec.len())))
        };
        let p = |i: usize| -> Result<f64> { parse(TELEMETRY_HEADER[i], f(i)?) };
        Ok(Self {
            cycle: parse("cycle", f(0)?)?,
            residual: p(1)?,
            normalized: p(2)?,
            dof_updates: parse("dof_updates", f(3)?)?,
            leaf_dofs: parse("leaf_dofs", f(4)?)?,
            mesh_points: parse("mesh_points", f(5)?)?,
            pending: parse("pending", f(6)?)?,
            outstanding: parse("outstanding", f(7)?)?,
            max_n: parse("max_n", f(8)?)?,
            avg_n: p(9)?,
            factor_total: p(10)?,
            factor_mean: p(11)?,
            enabled: f(12)?.to_string(),
            refined_cells: parse("refined_cells", f(13)?)?,
            status: f(14)?.to_string(),
            wall_ms: p(15)?,
        })
    }
}

/// A telemetry file: the config entries from its metadata line plus rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Telemetry {
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<TelemetryRow>,
}

impl Telemetry {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let meta: Vec<String> = self.meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "# {}", meta.join(";"))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TELEMETRY_HEADER)?;
        for r in &self.rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut reader = std::io::BufReader::new(input);
        let mut first = String::new();
        std::io::BufRead::read_line(&mut reader, &mut first)?;
        let meta_line = first
            .strip_prefix('#')
            .ok_or_else(|| Error::Config("telemetry is missing its metadata line".into()))?;
        let meta = meta_line
            .trim()
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut r = csv::Reader::from_reader(reader);
        if r.headers()?.iter().ne(TELEMETRY_HEADER) {
            return Err(Error::Config("unexpected telemetry columns".into()));
        }
        let rows = r.records().map(|rec| TelemetryRow::from_record(&rec?)).collect::<Result<_>>()?;
        Ok(Self { meta, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Status of the final row.
    pub fn status(&self) -> Option<&str> {
        self.rows.last().map(|r| r.status.as_str())
    }
}

pub struct ExperimentOutcome {
    pub status: Termination,
    pub telemetry: Telemetry,
    pub solver: Solver,
}

impl ExperimentOutcome {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.status)
    }
}

pub fn exit_code(status: Termination) -> i32 {
    match status {
        Termination::Converged => 0,
        Termination::Diverged => 2,
        Termination::Timeout => 3,
        Termination::Continue => 1,
    }
}

/// Builds the solver for `cfg` without running it.
pub fn build_solver(cfg: &ExperimentConfig) -> Result<Solver> {
    let mesh = Mesh::regular(cfg.depth)?;
    let ops = Operators::new(&mesh, cfg.material, cfg.operators);
    Solver::new(mesh, ops, cfg.problem(), cfg.solver, cfg.amr)
}

/// Runs `cfg` to a terminal status and writes the configured outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut solver = build_solver(cfg)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let status = solver.run(|rep| {
        let wall = if cfg.wall_clock { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        log::info!("cycle {} residual {:e} pending {}", rep.cycle, rep.normalized, rep.ops.pending);
        rows.push(TelemetryRow::from_report(rep, wall));
    })?;
    solver.ops.shutdown();
    let mut meta: BTreeMap<String, String> =
        cfg.entries()
            .into_iter()
            .filter(|(k, _)| !k.ends_with("output"))
            .map(|(k, v)| (k.to_string(), v))
            .collect();
    meta.insert("rng".into(), NOISE_GENERATOR.into());
    meta.insert("status".into(), status.as_str().into());
    let telemetry = Telemetry { meta, rows };
    if let Some(path) = &cfg.output {
        telemetry.write_csv(std::fs::File::create(path)?)?;
    }
    if let Some(path) = &cfg.stream_output {
        std::fs::write(path, solver.ops.store().write_stream(&solver.mesh))?;
    }
    Ok(ExperimentOutcome { status, telemetry, solver })
}

/// Formats one block per telemetry set: cycle, max n, avg n and both
/// compression conventions.
pub fn emit_table(runs: &[Telemetry]) -> String {
    let mut out = String::new();
    for t in runs {
        let label = match t.meta.get("setup").map(String::as_str) {
            Some("quadrant") => format!("eps_low = {}", t.meta.get("eps_low").map_or("?", String::as_str)),
            _ => format!("theta = {}", t.meta.get("theta").map_or("?", String::as_str)),
        };
        let _ = writeln!(out, "{label}");
        let _ = writeln!(out, "{:>5}  {:>5}  {:>6}  {:>11}  {:>11}", "cycle", "max n", "avg n", "compression", "(per cell)");
        for r in &t.rows {
            let _ = writeln!(
                out,
                "{:>5}  {:>5}  {:>6.2}  {:>11.2}  {:>11.2}",
                r.cycle, r.max_n, r.avg_n, r.factor_total, r.factor_mean
            );
        }
        out.push('\n');
    }
    out
}

/// Config for the memory-footprint replica at material parameter `theta`.
pub fn table_config(theta: f64, cycles: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { material: MaterialField::Theta { theta }, depth: 3, ..Default::default() };
    cfg.operators.mode = AssemblyMode::AdaptiveSync;
    cfg.operators.termination_c = 0.01;
    cfg.operators.codec = CodecConfig { threshold: 1e-8, policy: PrecisionPolicy::Fresh };
    cfg.operators.scheduler = SchedulerConfig { workers: 1, throttle: None };
    cfg.solver.max_cycles = cycles;
    cfg
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub cycles: usize,
    pub cycles_to_target: Option<usize>,
    pub dof_updates_to_target: Option<u64>,
    pub time_to_target_ms: Option<f64>,
    pub final_residual: f64,
    pub status: String,
}

impl RunSummary {
    pub fn of(t: &Telemetry) -> Self {
        let target: f64 = t.meta.get("target").and_then(|v| v.parse().ok()).unwrap_or(1e-10);
        let hit = t.rows.iter().find(|r| r.normalized <= target);
        Self {
            cycles: t.rows.len(),
            cycles_to_target: hit.map(|r| r.cycle),
            dof_updates_to_target: hit.map(|r| r.dof_updates),
            time_to_target_ms: hit.map(|r| r.wall_ms),
            final_residual: t.rows.last().map_or(f64::NAN, |r| r.normalized),
            status: t.status().unwrap_or("empty").to_string(),
        }
    }
}

/// Side-by-side summary of two runs of the same problem, as `metric,a,b`
/// CSV lines.
pub fn compare_runs(a: &Telemetry, b: &Telemetry) -> Result<String> {
    for key in PROBLEM_KEYS {
        if a.meta.get(key) != b.meta.get(key) {
            return Err(Error::Config(format!(
                "runs solve different problems: {key} is {:?} vs {:?}",
                a.meta.get(key),
                b.meta.get(key)
            )));
        }
    }
    let (sa, sb) = (RunSummary::of(a), RunSummary::of(b));
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    let lines = [
        ("cycles", sa.cycles.to_string(), sb.cycles.to_string()),
        (
            "cycles_to_target",
            opt(sa.cycles_to_target.map(|c| c.to_string())),
            opt(sb.cycles_to_target.map(|c| c.to_string())),
        ),
        (
            "dof_updates_to_target",
            opt(sa.dof_updates_to_target.map(|c| c.to_string())),
            opt(sb.dof_updates_to_target.map(|c| c.to_string())),
        ),
        (
            "time_to_target_ms",
            opt(sa.time_to_target_ms.map(|c| format!("{c:.3}"))),
            opt(sb.time_to_target_ms.map(|c| format!("{c:.3}"))),
        ),
        ("final_residual", format!("{:e}", sa.final_residual), format!("{:e}", sb.final_residual)),
        ("status", sa.status, sb.status),
        (
            "assembly",
            a.meta.get("assembly").cloned().unwrap_or_default(),
            b.meta.get("assembly").cloned().unwrap_or_default(),
        ),
    ];
    let mut out = String::from("metric,a,b\n");
    for (m, x, y) in lines {
        let _ = writeln!(out, "{m},{x},{y}");
    }
    Ok(out)
}
