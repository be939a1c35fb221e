//! Operator life cycle during a solve: fine-grid assembly per mode, coarse
//! Galerkin recomputes that ripple upwards one level per cycle, and level
//! gating after refinement.

use std::hint::black_box;
use std::str::FromStr;
use std::sync::Arc;

use crate::assembly::{
    adaptive_step, assemble_vertex_stencil, integrate_element, integrate_to_top, CellGeom, ElementMatrix, Stencil9, P1,
};
use crate::error::{Error, Result};
use crate::mesh::{CellId, Mesh, RefinementDelta, VertexKind};
use crate::problem::MaterialField;
use crate::scheduler::{partition_owner, Scheduler, SchedulerConfig, SchedulerStats, Task, TaskKind};
use crate::stream::{CellRecord, CodecConfig, CompressionStats, OperatorStore, Slot};
use crate::transfer::{boxmg_prolongation, galerkin_coarse_element, geometric_prolongation, TransferKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AssemblyMode {
    Eager,
    Lazy,
    AdaptiveSync,
    Anarchic,
}

impl FromStr for AssemblyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eager" => Ok(Self::Eager),
            "lazy" => Ok(Self::Lazy),
            "adaptive" | "adaptive-sync" => Ok(Self::AdaptiveSync),
            "anarchic" => Ok(Self::Anarchic),
            _ => Err(Error::Config(format!("unknown assembly mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoarsePolicy {
    /// Recompute every coarse operator in every cycle.
    Always,
    /// Recompute only coarse operators whose inputs changed.
    Ripple,
}

impl FromStr for CoarsePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always" => Ok(Self::Always),
            "ripple" => Ok(Self::Ripple),
            _ => Err(Error::Config(format!("unknown coarse recompute policy '{s}'"))),
        }
    }
}

impl FromStr for TransferKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Self::Geometric),
            "boxmg" => Ok(Self::BoxMg),
            _ => Err(Error::Config(format!("unknown transfer operator '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorConfig {
    pub mode: AssemblyMode,
    pub transfer: TransferKind,
    pub coarse: CoarsePolicy,
    pub gating: bool,
    /// Relative change below which integration stops.
    pub termination_c: f64,
    pub max_n: u32,
    pub codec: CodecConfig,
    pub scheduler: SchedulerConfig,
    /// Fraction of leaf cells that receive one synthetic load task.
    pub forced_task_fraction: f64,
    pub forced_n: u32,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            mode: AssemblyMode::Anarchic,
            transfer: TransferKind::Geometric,
            coarse: CoarsePolicy::Always,
            gating: true,
            termination_c: 0.01,
            max_n: 64,
            codec: CodecConfig::default(),
            scheduler: SchedulerConfig::default(),
            forced_task_fraction: 0.0,
            forced_n: 32,
        }
    }
}

/// Everything a coarse recompute task needs from the mesh.
#[derive(Clone, Debug)]
struct CoarseJob {
    cell: CellId,
    geom: CellGeom,
    children: [CellId; 9],
    /// Cells around each interior lattice point, `None` for hanging or
    /// boundary points.
    lattice: [Option<[CellId; 4]>; 16],
    inputs: Vec<CellId>,
}

fn run_coarse_job(store: &OperatorStore, job: &CoarseJob, transfer: TransferKind) {
    let children: Vec<Arc<CellRecord>> = job.children.iter().map(|&c| store.load(c)).collect();
    if children.iter().any(|r| r.p1 == P1::Bottom) {
        return;
    }
    let inputs_seen = job.inputs.iter().map(|&c| store.load(c).version).max().unwrap_or(0);
    let p = match transfer {
        TransferKind::Geometric => geometric_prolongation(),
        TransferKind::BoxMg => {
            let mut stencils: [Option<Stencil9>; 16] = [None; 16];
            for (a, cells) in job.lattice.iter().enumerate() {
                if let Some(cells) = cells {
                    let recs: Vec<Arc<CellRecord>> = cells.iter().map(|&c| store.load(c)).collect();
                    stencils[a] = Some(assemble_vertex_stencil([
                        Some(&recs[0].a),
                        Some(&recs[1].a),
                        Some(&recs[2].a),
                        Some(&recs[3].a),
                    ]));
                }
            }
            let b = boxmg_prolongation(&stencils);
            if b.fallbacks > 0 && job.lattice.iter().all(Option::is_some) {
                log::debug!("cell {}: {} lattice points used bilinear weights", job.cell, b.fallbacks);
            }
            b.p
        }
    };
    let mats: [ElementMatrix; 9] = std::array::from_fn(|k| children[k].a);
    let a = galerkin_coarse_element(&mats, &p);
    let stale_below = children.iter().any(|r| r.refined && r.stale);
    let prev = store.load(job.cell);
    let encoded = CellRecord::encode(P1::Top, 0, &a, Some(&p), job.geom, &store.material, store.codec, prev.p3);
    match encoded {
        Ok(mut rec) => {
            rec.inputs_seen = inputs_seen;
            rec.stale = prev.stale && stale_below;
            let unchanged = prev.p1 == P1::Top && prev.p3 == rec.p3 && prev.payload == rec.payload;
            if unchanged {
                // keep the version so that coarser levels see no change
                store.update_meta(job.cell, |r| {
                    r.inputs_seen = inputs_seen;
                    r.stale = rec.stale;
                });
            } else {
                store.publish(job.cell, rec);
            }
        }
        Err(e) => log::warn!("coarse operator of cell {} not stored: {e}", job.cell),
    }
}

/// Outcome of one fine-grid integration task.
fn run_integrate(store: &OperatorStore, slot: &Slot, geom: CellGeom, c: f64, max_n: u32) {
    let cur = slot.load();
    if !cur.refined && cur.p1 != P1::Top {
        let old = (cur.p1 != P1::Bottom).then_some((cur.a, cur.n));
        let step = adaptive_step(cur.p1, old, geom, &store.material, c, max_n);
        match CellRecord::encode(step.p1, step.n, &step.matrix, None, geom, &store.material, store.codec, cur.p3) {
            Ok(rec) => {
                if !store.publish_if(slot, &cur, rec) {
                    log::trace!("integration result discarded, record changed meanwhile");
                }
            }
            Err(e) => log::warn!("integration result not stored: {e}"),
        }
    }
    slot.release();
}

/// Per-cycle operator telemetry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OperatorReport {
    pub pending: usize,
    pub outstanding: usize,
    pub max_n: u32,
    pub avg_n: f64,
    pub compression: CompressionStats,
    pub unconverged_cells: usize,
    pub coarse_recomputes: usize,
    pub spawned_this_cycle: usize,
}

pub struct Operators {
    pub cfg: OperatorConfig,
    store: Arc<OperatorStore>,
    sched: Scheduler,
    pub cycle: u64,
    enabled: Vec<bool>,
    forced_done: bool,
    spawned_this_cycle: usize,
    recomputed_this_cycle: usize,
}

impl Operators {
    pub fn new(mesh: &Mesh, material: MaterialField, cfg: OperatorConfig) -> Self {
        let store = Arc::new(OperatorStore::new(mesh, material, cfg.codec));
        Self {
            cfg,
            store,
            sched: Scheduler::new(cfg.scheduler),
            cycle: 0,
            enabled: vec![true; mesh.num_levels()],
            forced_done: false,
            spawned_this_cycle: 0,
            recomputed_this_cycle: 0,
        }
    }

    pub fn store(&self) -> &Arc<OperatorStore> {
        &self.store
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    pub fn material(&self) -> MaterialField {
        self.store.material
    }

    /// Work done before the first cycle: eager assembly integrates every
    /// cell to convergence and builds all coarse operators bottom-up.
    pub fn prepare(&mut self, mesh: &Mesh) {
        if self.cfg.mode == AssemblyMode::Eager {
            for id in mesh.leaves().collect::<Vec<_>>() {
                self.integrate_full(mesh, id);
            }
            for level in (0..mesh.max_level()).rev() {
                for job in self.coarse_jobs(mesh, level, true) {
                    run_coarse_job(&self.store, &job, self.cfg.transfer);
                }
            }
        }
    }

    fn integrate_full(&self, mesh: &Mesh, id: CellId) {
        let geom = CellGeom::of(mesh.cell(id));
        let out = integrate_to_top(geom, &self.store.material, self.cfg.termination_c, self.cfg.max_n);
        let prev = self.store.load(id);
        match CellRecord::encode(P1::Top, out.n, &out.matrix, None, geom, &self.store.material, self.store.codec, prev.p3) {
            Ok(rec) => {
                self.store.publish(id, rec);
            }
            Err(e) => log::warn!("cell {id} not stored: {e}"),
        }
    }

    /// Starts a cycle: refills the throttle budget.
    pub fn begin_cycle(&mut self) {
        self.cycle += 1;
        self.spawned_this_cycle = 0;
        self.recomputed_this_cycle = 0;
        self.sched.begin_cycle();
    }

    /// Step (1): fine-grid operator requests in traversal order.
    pub fn request_fine(&mut self, mesh: &Mesh) -> Result<()> {
        let leaves: Vec<CellId> = mesh.leaves().collect();
        let total = mesh.traverse().len();
        let workers = self.sched.workers();
        for &id in &leaves {
            let cell = mesh.cell(id);
            let geom = CellGeom::of(cell);
            let rec = self.store.load(id);
            match self.cfg.mode {
                AssemblyMode::Eager | AssemblyMode::Lazy => {
                    if rec.p1 != P1::Top {
                        self.integrate_full(mesh, id);
                    }
                }
                AssemblyMode::AdaptiveSync => {
                    if rec.p1 != P1::Top {
                        let slot = self.store.slot(id);
                        if slot.try_claim() {
                            run_integrate(&self.store, &slot, geom, self.cfg.termination_c, self.cfg.max_n);
                        }
                    }
                }
                AssemblyMode::Anarchic => {
                    let slot = self.store.slot(id);
                    if rec.p1 == P1::Bottom {
                        let a = integrate_element(geom, &self.store.material, 1);
                        let next = if self.cfg.max_n <= 1 { P1::Top } else { P1::N(1) };
                        let new = CellRecord::encode(next, 1, &a, None, geom, &self.store.material, self.store.codec, rec.p3)?;
                        self.store.publish_if(&slot, &rec, new);
                    }
                    if self.store.load(id).p1 != P1::Top && slot.try_claim() {
                        let store = Arc::clone(&self.store);
                        let task_slot = Arc::clone(&slot);
                        let (c, max_n) = (self.cfg.termination_c, self.cfg.max_n);
                        let owner = partition_owner(cell.slot, total, workers);
                        let task = Task::new(TaskKind::Integrate, id, owner, mesh.epoch, move |run| {
                            if run {
                                run_integrate(&store, &task_slot, geom, c, max_n);
                            } else {
                                task_slot.release();
                            }
                        });
                        self.sched.spawn(task)?;
                        self.spawned_this_cycle += 1;
                    }
                }
            }
        }
        if !self.forced_done && self.cfg.forced_task_fraction > 0.0 {
            self.forced_done = true;
            self.spawn_forced_load(mesh, &leaves)?;
        }
        Ok(())
    }

    /// Synthetic expensive integrations on the cells closest to the axes,
    /// clustering the extra work in few partitions.
    fn spawn_forced_load(&mut self, mesh: &Mesh, leaves: &[CellId]) -> Result<()> {
        let mut ranked: Vec<(f64, CellId)> = leaves
            .iter()
            .map(|&id| {
                let g = CellGeom::of(mesh.cell(id));
                (g.x0.min(g.y0), id)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let count = (self.cfg.forced_task_fraction * leaves.len() as f64).round() as usize;
        let total = mesh.traverse().len();
        for &(_, id) in ranked.iter().take(count) {
            let geom = CellGeom::of(mesh.cell(id));
            let material = self.store.material;
            let n = self.cfg.forced_n;
            let owner = partition_owner(mesh.cell(id).slot, total, self.sched.workers());
            self.sched.spawn(Task::new(TaskKind::Load, id, owner, mesh.epoch, move |run| {
                if run {
                    black_box(integrate_element(geom, &material, n));
                }
            }))?;
            self.spawned_this_cycle += 1;
        }
        Ok(())
    }

    fn coarse_jobs(&self, mesh: &Mesh, level: u8, all: bool) -> Vec<CoarseJob> {
        let lv = &mesh.levels[usize::from(level)];
        let fine_level = level + 1;
        let mut jobs = Vec::new();
        for &id in &lv.cells {
            let cell = mesh.cell(id);
            let Some(children) = cell.children else { continue };
            let patch = mesh.patch_vertices(id);
            let fine = &mesh.levels[usize::from(fine_level)];
            let mut lattice = [None; 16];
            let mut inputs: Vec<CellId> = children.to_vec();
            if self.cfg.transfer == TransferKind::BoxMg {
                for (a, &v) in patch.iter().enumerate() {
                    let vert = fine.vertices[v];
                    if vert.kind != VertexKind::Interior {
                        continue;
                    }
                    let around = mesh.adjacent_cells(fine_level, vert.i, vert.j);
                    let cells: [CellId; 4] = std::array::from_fn(|k| around[k].expect("interior vertex"));
                    for c in cells {
                        if !inputs.contains(&c) {
                            inputs.push(c);
                        }
                    }
                    lattice[a] = Some(cells);
                }
            }
            let job = CoarseJob { cell: id, geom: CellGeom::of(cell), children, lattice, inputs };
            if all || self.needs_recompute(&job) {
                jobs.push(job);
            }
        }
        jobs
    }

    fn needs_recompute(&self, job: &CoarseJob) -> bool {
        match self.cfg.coarse {
            CoarsePolicy::Always => true,
            CoarsePolicy::Ripple => {
                let rec = self.store.load(job.cell);
                rec.p1 == P1::Bottom
                    || rec.stale
                    || job.inputs.iter().any(|&c| self.store.load(c).version > rec.inputs_seen)
            }
        }
    }

    /// Step (2): coarse operator recomputes from the coarsest level down, so
    /// every level consumes the finer level's state of the previous cycle.
    /// Afterwards the level gates are evaluated.
    pub fn recompute_coarse(&mut self, mesh: &Mesh) {
        for level in 0..mesh.max_level() {
            let jobs = self.coarse_jobs(mesh, level, false);
            self.recomputed_this_cycle += jobs.len();
            let total = mesh.traverse().len();
            for job in jobs {
                let store = Arc::clone(&self.store);
                let transfer = self.cfg.transfer;
                let owner = partition_owner(mesh.cell(job.cell).slot, total, self.sched.workers());
                let task = Task::new(TaskKind::CoarseRecompute, job.cell, owner, mesh.epoch, move |run| {
                    if run {
                        run_coarse_job(&store, &job, transfer);
                    }
                });
                if let Err(e) = self.sched.spawn(task) {
                    log::warn!("coarse recompute not scheduled: {e}");
                }
            }
            self.sched.run_high_until_idle();
        }
        self.update_gates(mesh);
    }

    fn update_gates(&mut self, mesh: &Mesh) {
        self.enabled = mesh
            .levels
            .iter()
            .map(|lv| {
                !self.cfg.gating
                    || lv.cells.iter().all(|&c| {
                        let r = self.store.load(c);
                        !(r.refined && r.stale)
                    })
            })
            .collect();
    }

    /// Whether corrections on each level are enabled in this cycle.
    pub fn level_enabled(&self) -> &[bool] {
        &self.enabled
    }

    /// End-of-cycle task execution when there are no background workers.
    pub fn end_cycle(&mut self) {
        if !self.sched.is_threaded() {
            self.sched.run_on_driver();
        }
    }

    /// Registers a refinement: new cells start at bottom, the refined cells
    /// switch to coarse-operator records and every ancestor becomes stale.
    pub fn on_refine(&mut self, mesh: &Mesh, delta: &RefinementDelta) {
        self.store.sync_with(mesh);
        for &id in &delta.refine {
            let mut rec = CellRecord::bottom(CellGeom::of(mesh.cell(id)), &self.store.material, true);
            rec.stale = true;
            self.store.publish(id, rec);
        }
        for &id in &delta.stale_ancestors {
            self.store.update_meta(id, |r| r.stale = true);
        }
        self.enabled.resize(mesh.num_levels(), true);
    }

    /// Snapshot of all records for the solver.
    pub fn snapshot(&self) -> Vec<Arc<CellRecord>> {
        self.store.snapshot()
    }

    /// All markers converged, no task left and every coarse operator built
    /// from the current state of its inputs.
    pub fn settled(&self, mesh: &Mesh) -> bool {
        self.sched.outstanding() == 0
            && mesh.traverse().iter().all(|&id| {
                let r = self.store.load(id);
                r.p1 == P1::Top && !r.stale
            })
            && (0..mesh.max_level()).all(|level| {
                self.coarse_jobs(mesh, level, true).iter().all(|job| {
                    let seen = self.store.load(job.cell).inputs_seen;
                    job.inputs.iter().all(|&c| self.store.load(c).version <= seen)
                })
            })
    }

    pub fn report(&self, mesh: &Mesh) -> OperatorReport {
        let compression = self.store.compression_stats(mesh);
        let unconverged = mesh.leaves().filter(|&id| self.store.load(id).p1 != P1::Top).count();
        OperatorReport {
            pending: self.sched.pending_count(),
            outstanding: self.sched.outstanding(),
            max_n: compression.max_n,
            avg_n: compression.avg_n,
            compression,
            unconverged_cells: unconverged,
            coarse_recomputes: self.recomputed_this_cycle,
            spawned_this_cycle: self.spawned_this_cycle,
        }
    }

    pub fn scheduler_stats(&self) -> SchedulerStats {
        self.sched.stats()
    }

    /// Drains all background work, ignoring the throttle.
    pub fn wait_idle(&self) {
        self.sched.wait_idle();
    }

    pub fn shutdown(&mut self) {
        self.sched.shutdown();
    }
}
