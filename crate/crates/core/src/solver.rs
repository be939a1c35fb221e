//! Additive FAS multigrid in hierarchical (HTMG) form with the adaFAC
//! damping term.
//!
//! Every level ℓ holds a full iterate `u_ℓ`. Coincident vertices carry the
//! same value after each cycle (injection), hanging vertices interpolate from
//! the next coarser level. The right-hand side of level ℓ is its own leaf
//! load plus the restricted hierarchical residual of level ℓ+1.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{linear_weight, mesh_width, Mesh, VertexKind};
use crate::operators::{OperatorReport, Operators};
use crate::problem::{noise_value, ProblemInstance};
use crate::stream::CellRecord;
use crate::transfer::TransferBlock;
use crate::assembly::ElementMatrix;
use crate::mesh::position_key;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverVariant {
    /// Additive multigrid with exponential damping per level.
    Additive,
    /// adaFAC with a Jacobi-smoothed restriction in the damping term.
    AdafacJac,
    /// adaFAC with injection in the damping term.
    AdafacPi,
}

impl FromStr for SolverVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" | "plain-additive" => Ok(Self::Additive),
            "adafac-jac" => Ok(Self::AdafacJac),
            "adafac-pi" => Ok(Self::AdafacPi),
            _ => Err(Error::Config(format!("unknown solver '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub variant: SolverVariant,
    pub omega: f64,
    /// Normalised residual that counts as converged.
    pub target: f64,
    /// Normalised residual that counts as diverged.
    pub divergence: f64,
    pub max_cycles: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { variant: SolverVariant::Additive, omega: 0.7, target: 1e-10, divergence: 1e2, max_cycles: 500 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmrConfig {
    pub enabled: bool,
    pub fraction: f64,
    /// Cycles between refinement steps.
    pub interval: usize,
    pub max_level: u8,
    pub max_steps: usize,
}

impl Default for AmrConfig {
    fn default() -> Self {
        Self { enabled: false, fraction: 0.1, interval: 2, max_level: 5, max_steps: usize::MAX }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    Continue,
    Converged,
    Diverged,
    Timeout,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Continue => "continue",
            Termination::Converged => "converged",
            Termination::Diverged => "diverged",
            Termination::Timeout => "timeout",
        }
    }
}

/// Classifies a residual history of normalised residuals. `settled` tells
/// whether the operators reached their final state; convergence is only
/// declared on settled operators.
pub fn check_termination(history: &[f64], settled: bool, cfg: &SolverConfig) -> Termination {
    let Some(&last) = history.last() else { return Termination::Continue };
    if !last.is_finite() || last >= cfg.divergence {
        Termination::Diverged
    } else if last <= cfg.target && settled {
        Termination::Converged
    } else if history.len() >= cfg.max_cycles {
        Termination::Timeout
    } else {
        Termination::Continue
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleReport {
    pub cycle: usize,
    pub residual: f64,
    pub normalized: f64,
    pub dof_updates: u64,
    pub leaf_dofs: usize,
    pub mesh_points: usize,
    pub enabled: Vec<bool>,
    pub ops: OperatorReport,
    pub status: Termination,
    pub refined_cells: usize,
}

/// Operators of one level for one cycle.
struct LevelOps {
    cells: Vec<([usize; 4], ElementMatrix)>,
    /// Transfer blocks from the next coarser level: coarse corners, fine
    /// lattice, block.
    patches: Vec<([usize; 4], [usize; 16], TransferBlock)>,
    owners: Vec<f64>,
    diag: Vec<f64>,
    kinds: Vec<VertexKind>,
}

impl LevelOps {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (c, a) in &self.cells {
            for r in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a[(r, k)] * x[c[k]];
                }
                y[c[r]] += acc;
            }
        }
        y
    }

    fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.owners.len()];
        for (cc, lat, p) in &self.patches {
            for (a, &v) in lat.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += p[(a, k)] * coarse[cc[k]];
                }
                y[v] += acc / self.owners[v];
            }
        }
        y
    }

    fn restrict(&self, fine: &[f64], coarse_len: usize) -> Vec<f64> {
        let mut z = vec![0.0; coarse_len];
        for (cc, lat, p) in &self.patches {
            for (a, &v) in lat.iter().enumerate() {
                let w = fine[v] / self.owners[v];
                for k in 0..4 {
                    z[cc[k]] += p[(a, k)] * w;
                }
            }
        }
        z
    }

    fn smoothable(&self, v: usize) -> bool {
        self.kinds[v] == VertexKind::Interior && self.diag[v] > 0.0
    }

    fn zero_dirichlet(&self, x: &mut [f64]) {
        for (v, k) in self.kinds.iter().enumerate() {
            if *k == VertexKind::Dirichlet {
                x[v] = 0.0;
            }
        }
    }
}

fn build_level_ops(mesh: &Mesh, recs: &[Arc<CellRecord>]) -> Vec<LevelOps> {
    let mut out = Vec::with_capacity(mesh.num_levels());
    for (l, lv) in mesh.levels.iter().enumerate() {
        let cells: Vec<([usize; 4], ElementMatrix)> =
            lv.cells.iter().map(|&id| (mesh.cell(id).corners, recs[id].a)).collect();
        let mut diag = vec![0.0; lv.num_vertices()];
        for (c, a) in &cells {
            for r in 0..4 {
                diag[c[r]] += a[(r, r)];
            }
        }
        let mut patches = Vec::new();
        let mut owners = vec![0.0; lv.num_vertices()];
        if l > 0 {
            for &id in &mesh.levels[l - 1].cells {
                let c = mesh.cell(id);
                if c.is_refined() {
                    let lat = mesh.patch_vertices(id);
                    for &v in &lat {
                        owners[v] += 1.0;
                    }
                    patches.push((c.corners, lat, recs[id].transfer()));
                }
            }
        }
        let kinds = lv.vertices.iter().map(|v| v.kind).collect();
        out.push(LevelOps { cells, patches, owners, diag, kinds });
    }
    out
}

/// Solver state across cycles.
pub struct Solver {
    pub mesh: Mesh,
    pub ops: Operators,
    pub problem: ProblemInstance,
    pub cfg: SolverConfig,
    pub amr: AmrConfig,
    /// Iterate per level.
    pub u: Vec<Vec<f64>>,
    pub history: Vec<f64>,
    first_residual: Option<f64>,
    dof_updates: u64,
    amr_steps: usize,
    cycle: usize,
}

impl Solver {
    pub fn new(mesh: Mesh, ops: Operators, problem: ProblemInstance, cfg: SolverConfig, amr: AmrConfig) -> Result<Self> {
        if !(cfg.omega > 0.0 && cfg.omega < 1.0) {
            return Err(Error::Config(format!("omega {} not in (0,1)", cfg.omega)));
        }
        let mut s = Solver {
            u: Vec::new(),
            mesh,
            ops,
            problem,
            cfg,
            amr,
            history: Vec::new(),
            first_residual: None,
            dof_updates: 0,
            amr_steps: 0,
            cycle: 0,
        };
        s.init_noise();
        s.ops.prepare(&s.mesh);
        Ok(s)
    }

    /// Noise on leaf DoFs, boundary values on Dirichlet vertices, then the
    /// coarse copies and hanging vertices are made consistent.
    pub fn init_noise(&mut self) {
        let seed = self.problem.seed;
        self.u = self
            .mesh
            .levels
            .iter()
            .enumerate()
            .map(|(l, lv)| {
                lv.vertices
                    .iter()
                    .enumerate()
                    .map(|(v, vert)| {
                        if vert.kind == VertexKind::Dirichlet {
                            self.problem.boundary
                        } else if lv.leaf_dof[v] {
                            noise_value(seed, position_key(l as u8, vert.i, vert.j))
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        self.make_consistent();
    }

    /// Injection fine to coarse, hanging interpolation coarse to fine and
    /// boundary values.
    pub fn make_consistent(&mut self) {
        for l in (1..self.mesh.num_levels()).rev() {
            let (coarse, fine) = self.u.split_at_mut(l);
            let lv = &self.mesh.levels[l];
            for (v, c) in lv.coarse_copy.iter().enumerate() {
                if let Some(c) = c {
                    if lv.vertices[v].kind != VertexKind::Hanging {
                        coarse[l - 1][*c] = fine[0][v];
                    }
                }
            }
        }
        for l in 1..self.mesh.num_levels() {
            let (coarse, fine) = self.u.split_at_mut(l);
            for rule in &self.mesh.levels[l].hanging {
                fine[0][rule.vertex] = (0..4).map(|k| rule.weights[k] * coarse[l - 1][rule.coarse[k]]).sum();
            }
        }
        for (l, lv) in self.mesh.levels.iter().enumerate() {
            for (v, vert) in lv.vertices.iter().enumerate() {
                if vert.kind == VertexKind::Dirichlet {
                    self.u[l][v] = self.problem.boundary;
                }
            }
        }
    }

    fn loads(&self) -> Vec<Vec<f64>> {
        self.mesh
            .levels
            .iter()
            .enumerate()
            .map(|(l, lv)| {
                let mut b = vec![0.0; lv.num_vertices()];
                if self.problem.rhs != 0.0 {
                    let h = mesh_width(l as u8);
                    let share = self.problem.rhs * h * h / 4.0;
                    for &id in &lv.cells {
                        let c = self.mesh.cell(id);
                        if !c.is_refined() {
                            for &v in &c.corners {
                                b[v] += share;
                            }
                        }
                    }
                }
                b
            })
            .collect()
    }

    /// Composite residual of the current iterate with the given operators,
    /// as `(r, r_hat)` per level.
    fn residuals(&self, lops: &[LevelOps]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let levels = self.mesh.num_levels();
        let loads = self.loads();
        let mut r: Vec<Vec<f64>> = vec![Vec::new(); levels];
        let mut rhat: Vec<Vec<f64>> = vec![Vec::new(); levels];
        for l in (0..levels).rev() {
            let mut b = loads[l].clone();
            if l + 1 < levels {
                let restricted = lops[l + 1].restrict(&rhat[l + 1], b.len());
                for (bi, ri) in b.iter_mut().zip(restricted) {
                    *bi += ri;
                }
            }
            lops[l].zero_dirichlet(&mut b);
            let au = lops[l].apply(&self.u[l]);
            let mut rl: Vec<f64> = b.iter().zip(&au).map(|(b, a)| b - a).collect();
            lops[l].zero_dirichlet(&mut rl);
            let uhat: Vec<f64> = if l > 0 {
                let pu = lops[l].prolong(&self.u[l - 1]);
                self.u[l].iter().zip(pu).map(|(u, p)| u - p).collect()
            } else {
                self.u[l].clone()
            };
            let auh = lops[l].apply(&uhat);
            let mut rh: Vec<f64> = b.iter().zip(&auh).map(|(b, a)| b - a).collect();
            lops[l].zero_dirichlet(&mut rh);
            r[l] = rl;
            rhat[l] = rh;
        }
        (r, rhat)
    }

    fn residual_norm(&self, r: &[Vec<f64>]) -> f64 {
        let mut sum = 0.0;
        for (l, lv) in self.mesh.levels.iter().enumerate() {
            for (v, &leaf) in lv.leaf_dof.iter().enumerate() {
                if leaf {
                    sum += r[l][v] * r[l][v];
                }
            }
        }
        sum.sqrt()
    }

    /// Per-level corrections for the given residuals.
    fn corrections(&self, lops: &[LevelOps], r: &[Vec<f64>], enabled: &[bool]) -> Vec<Vec<f64>> {
        let levels = self.mesh.num_levels();
        let lmax = levels - 1;
        let omega = self.cfg.omega;
        let mut out = Vec::with_capacity(levels);
        for l in 0..levels {
            let lo = &lops[l];
            let lv = &self.mesh.levels[l];
            let mut s = vec![0.0; r[l].len()];
            for v in 0..s.len() {
                if lo.smoothable(v) {
                    s[v] = omega * r[l][v] / lo.diag[v];
                }
            }
            let mut delta = match self.cfg.variant {
                SolverVariant::Additive => {
                    let damp = omega.powi((lmax - l) as i32);
                    s.iter().map(|x| x * damp).collect()
                }
                SolverVariant::AdafacJac | SolverVariant::AdafacPi if l > 0 && enabled[l - 1] => {
                    let coarse = &lops[l - 1];
                    let clen = coarse.kinds.len();
                    let mut c = match self.cfg.variant {
                        SolverVariant::AdafacJac => {
                            // (Id - omega diag^-1 A) r
                            let ar = lo.apply(&r[l]);
                            let mut t: Vec<f64> = (0..ar.len())
                                .map(|v| if lo.smoothable(v) { r[l][v] - omega * ar[v] / lo.diag[v] } else { r[l][v] })
                                .collect();
                            lo.zero_dirichlet(&mut t);
                            lo.restrict(&t, clen)
                        }
                        _ => {
                            let mut inj = vec![0.0; clen];
                            // hanging rows are partial sums, not residuals
                            for (v, cc) in lv.coarse_copy.iter().enumerate() {
                                if let Some(cc) = cc {
                                    if lo.kinds[v] != VertexKind::Hanging {
                                        inj[*cc] = r[l][v];
                                    }
                                }
                            }
                            inj
                        }
                    };
                    for (j, cj) in c.iter_mut().enumerate() {
                        *cj = if coarse.smoothable(j) { omega * *cj / coarse.diag[j] } else { 0.0 };
                    }
                    let aux = lo.prolong(&c);
                    s.iter()
                        .enumerate()
                        .map(|(v, sv)| if lo.smoothable(v) { sv - aux[v] } else { 0.0 })
                        .collect()
                }
                _ => s,
            };
            if !enabled[l] {
                for (v, d) in delta.iter_mut().enumerate() {
                    if !lv.leaf_dof[v] {
                        *d = 0.0;
                    }
                }
            }
            out.push(delta);
        }
        out
    }

    /// Runs one cycle and returns its report.
    pub fn cycle(&mut self) -> Result<CycleReport> {
        self.cycle += 1;
        self.ops.begin_cycle();
        self.ops.request_fine(&self.mesh)?;
        self.ops.recompute_coarse(&self.mesh);
        let enabled = self.ops.level_enabled().to_vec();
        let settled = self.ops.settled(&self.mesh);
        let recs = self.ops.snapshot();
        let lops = build_level_ops(&self.mesh, &recs);
        let (r, _) = self.residuals(&lops);
        let norm = self.residual_norm(&r);
        let first = *self.first_residual.get_or_insert(norm);
        let normalized = if first > 0.0 { norm / first } else { 0.0 };
        self.history.push(normalized);
        let status = check_termination(&self.history, settled, &self.cfg);
        let leaf_dofs = self.mesh.num_leaf_dofs();
        if status == Termination::Continue {
            self.apply_corrections(&lops, &r, &enabled);
            self.dof_updates += leaf_dofs as u64;
        }
        self.ops.end_cycle();
        let ops_report = self.ops.report(&self.mesh);
        let mut refined_cells = 0;
        if status == Termination::Continue && self.amr.enabled {
            refined_cells = self.adapt()?;
        }
        Ok(CycleReport {
            cycle: self.cycle,
            residual: norm,
            normalized,
            dof_updates: self.dof_updates,
            leaf_dofs,
            mesh_points: self.mesh.num_mesh_points(),
            enabled,
            ops: ops_report,
            status,
            refined_cells,
        })
    }

    fn apply_corrections(&mut self, lops: &[LevelOps], r: &[Vec<f64>], enabled: &[bool]) {
        let deltas = self.corrections(lops, r, enabled);
        let mut total: Vec<Vec<f64>> = Vec::with_capacity(deltas.len());
        for (l, d) in deltas.into_iter().enumerate() {
            let t = if l == 0 {
                d
            } else {
                let p = lops[l].prolong(&total[l - 1]);
                d.iter().zip(p).map(|(a, b)| a + b).collect()
            };
            total.push(t);
        }
        for (l, lv) in self.mesh.levels.iter().enumerate() {
            for (v, &leaf) in lv.leaf_dof.iter().enumerate() {
                if leaf {
                    self.u[l][v] += total[l][v];
                }
            }
        }
        self.make_consistent();
    }

    fn adapt(&mut self) -> Result<usize> {
        let due = self.amr.interval > 0 && self.cycle.is_multiple_of(self.amr.interval);
        if !due || self.amr_steps >= self.amr.max_steps {
            return Ok(0);
        }
        let old_len: Vec<usize> = self.mesh.levels.iter().map(|lv| lv.num_vertices()).collect();
        let delta = self.mesh.refine_by_gradient(&self.u, self.amr.fraction, self.amr.max_level)?;
        if delta.is_empty() {
            return Ok(0);
        }
        self.amr_steps += 1;
        self.ops.on_refine(&self.mesh, &delta);
        // new vertices take the bilinear interpolant of their parent cell
        for l in 1..self.mesh.num_levels() {
            let lv = &self.mesh.levels[l];
            let start = old_len.get(l).copied().unwrap_or(0);
            let mut vals = Vec::with_capacity(lv.num_vertices() - start);
            for vert in &lv.vertices[start..] {
                let cell = self
                    .mesh
                    .adjacent_cells(l as u8, vert.i, vert.j)
                    .into_iter()
                    .flatten()
                    .next()
                    .expect("vertex has a cell");
                let p = self.mesh.cell(self.mesh.cell(cell).parent.expect("non-root"));
                let (li, lj) = ((vert.i - 3 * p.x) as usize, (vert.j - 3 * p.y) as usize);
                let val: f64 = (0..4)
                    .map(|k| linear_weight(li, k & 1) * linear_weight(lj, k >> 1) * self.u[l - 1][p.corners[k]])
                    .sum();
                vals.push(val);
            }
            if self.u.len() <= l {
                self.u.push(Vec::new());
            }
            self.u[l].truncate(start);
            self.u[l].extend(vals);
        }
        self.make_consistent();
        Ok(delta.refine.len())
    }

    /// Cycles until a terminal status, calling `on_cycle` after each one.
    pub fn run(&mut self, mut on_cycle: impl FnMut(&CycleReport)) -> Result<Termination> {
        loop {
            let rep = self.cycle()?;
            on_cycle(&rep);
            if rep.status != Termination::Continue {
                return Ok(rep.status);
            }
        }
    }

    /// Residual and hierarchical residual per level for the current iterate
    /// and the operators currently published.
    pub fn composite_residuals(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let recs = self.ops.snapshot();
        self.residuals(&build_level_ops(&self.mesh, &recs))
    }

    /// Largest absolute value of the iterate over leaf DoFs.
    pub fn max_abs_leaf(&self) -> f64 {
        let mut m = 0.0f64;
        for (l, lv) in self.mesh.levels.iter().enumerate() {
            for (v, &leaf) in lv.leaf_dof.iter().enumerate() {
                if leaf {
                    m = m.max(self.u[l][v].abs());
                }
            }
        }
        m
    }

    /// Leaf DoF values keyed by position, sorted.
    pub fn leaf_solution(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64)> = Vec::new();
        for (l, lv) in self.mesh.levels.iter().enumerate() {
            for (v, &leaf) in lv.leaf_dof.iter().enumerate() {
                if leaf {
                    let vert = lv.vertices[v];
                    out.push((position_key(l as u8, vert.i, vert.j), self.u[l][v]));
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{AssemblyMode, OperatorConfig};
    use crate::problem::MaterialField;

    fn solver(depth: u8, material: MaterialField, variant: SolverVariant, mode: AssemblyMode) -> Solver {
        let mesh = Mesh::regular(depth).unwrap();
        let ops = Operators::new(&mesh, material, OperatorConfig { mode, ..OperatorConfig::default() });
        let cfg = SolverConfig { variant, ..SolverConfig::default() };
        Solver::new(mesh, ops, ProblemInstance::new(material), cfg, AmrConfig::default()).unwrap()
    }

    #[test]
    fn termination_examples() {
        let cfg = SolverConfig::default();
        assert_eq!(check_termination(&[1.0, 1e-11], true, &cfg), Termination::Converged);
        assert_eq!(check_termination(&[1.0, 150.0], true, &cfg), Termination::Diverged);
        assert_eq!(check_termination(&[1.0, 0.5], true, &cfg), Termination::Continue);
        assert_eq!(check_termination(&[1.0, 1e-11], false, &cfg), Termination::Continue);
        let short = SolverConfig { max_cycles: 2, ..cfg };
        assert_eq!(check_termination(&[1.0, 0.5], true, &short), Termination::Timeout);
    }

    #[test]
    fn omega_is_validated() {
        let mesh = Mesh::regular(1).unwrap();
        let m = MaterialField::Theta { theta: 0.0 };
        let ops = Operators::new(&mesh, m, OperatorConfig::default());
        let cfg = SolverConfig { omega: 1.5, ..SolverConfig::default() };
        assert!(Solver::new(mesh, ops, ProblemInstance::new(m), cfg, AmrConfig::default()).is_err());
    }

    #[test]
    fn noise_is_bounded_and_deterministic() {
        let m = MaterialField::Theta { theta: 0.0 };
        let a = solver(2, m, SolverVariant::AdafacJac, AssemblyMode::Eager);
        let b = solver(2, m, SolverVariant::AdafacJac, AssemblyMode::Eager);
        assert_eq!(a.u, b.u);
        assert!(a.u.iter().flatten().all(|&x| (0.0..=4.0 / 3.0).contains(&x)));
    }

    #[test]
    fn zero_iterate_is_a_fixed_point() {
        let m = MaterialField::Quadrant { eps_low: 1e-3 };
        for variant in [SolverVariant::Additive, SolverVariant::AdafacJac, SolverVariant::AdafacPi] {
            let mut s = solver(3, m, variant, AssemblyMode::Eager);
            for lv in s.u.iter_mut() {
                lv.iter_mut().for_each(|x| *x = 0.0);
            }
            s.first_residual = Some(1.0);
            let rep = s.cycle().unwrap();
            assert_eq!(rep.residual, 0.0);
            assert_eq!(s.max_abs_leaf(), 0.0);
        }
    }

    #[test]
    fn converges_for_all_variants() {
        let m = MaterialField::Theta { theta: 0.0 };
        for variant in [SolverVariant::Additive, SolverVariant::AdafacJac, SolverVariant::AdafacPi] {
            let mut s = solver(3, m, variant, AssemblyMode::Eager);
            s.cfg.max_cycles = 2000;
            let status = s.run(|_| {}).unwrap();
            assert_eq!(status, Termination::Converged, "{variant:?}");
            assert!(s.max_abs_leaf() <= 1e-8);
        }
    }

    #[test]
    fn single_level_is_damped_jacobi() {
        // the 2x2 interior block of the 9-point stencil gives D^-1 A = (9 I - J) / 8,
        // with eigenvalues 5/8 and 9/8
        let rho = (1.0 - 0.7 * 5.0 / 8.0f64).abs().max((1.0 - 0.7 * 9.0 / 8.0f64).abs());
        let m = MaterialField::Theta { theta: 0.0 };
        for variant in [SolverVariant::Additive, SolverVariant::AdafacJac, SolverVariant::AdafacPi] {
            let mut s = solver(1, m, variant, AssemblyMode::Eager);
            for _ in 0..20 {
                s.cycle().unwrap();
            }
            let h = &s.history;
            let ratio = h[19] / h[18];
            assert!((ratio - rho).abs() < 1e-6, "{variant:?}: {ratio} vs {rho}");
        }
    }

    #[test]
    fn adafac_variants_converge_on_rough_material() {
        let m = MaterialField::Theta { theta: 16.0 };
        for variant in [SolverVariant::AdafacPi, SolverVariant::AdafacJac] {
            let mut s = solver(3, m, variant, AssemblyMode::Eager);
            s.cfg.max_cycles = 2000;
            assert_eq!(s.run(|_| {}).unwrap(), Termination::Converged, "{variant:?}");
        }
    }
}
