//! Tripartitioned spacetree over the unit square.
//!
//! Every level keeps its own cells and vertices. A vertex position that is
//! covered by several levels exists once per level (the generating system);
//! the per-level copies are linked through [`Level::coarse_copy`] and
//! [`Level::fine_copy`].

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type CellId = usize;

/// Resolution used for level-independent vertex keys.
pub const KEY_LEVEL: u8 = 20;

/// Default ceiling on the total vertex count across all levels.
pub const DEFAULT_MAX_VERTICES: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VertexKind {
    Interior,
    Dirichlet,
    Hanging,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub level: u8,
    pub x: u32,
    pub y: u32,
    pub parent: Option<CellId>,
    /// Children in row order, `x` running fastest.
    pub children: Option<[CellId; 9]>,
    /// Level-local vertex indices in SW, SE, NW, NE order.
    pub corners: [usize; 4],
    /// Position in the traversal.
    pub slot: usize,
}

impl Cell {
    pub fn is_refined(&self) -> bool {
        self.children.is_some()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Vertex {
    pub i: u32,
    pub j: u32,
    pub kind: VertexKind,
}

/// Interpolation of a hanging vertex from the corners of a coarser cell.
#[derive(Clone, Copy, Debug)]
pub struct HangingRule {
    pub vertex: usize,
    pub coarse: [usize; 4],
    pub weights: [f64; 4],
}

#[derive(Clone, Debug, Default)]
pub struct Level {
    pub cells: Vec<CellId>,
    cell_index: HashMap<(u32, u32), CellId>,
    pub vertices: Vec<Vertex>,
    vertex_index: HashMap<(u32, u32), usize>,
    adjacent: Vec<u8>,
    /// Coincident vertex on the next coarser level.
    pub coarse_copy: Vec<Option<usize>>,
    /// Coincident vertex on the next finer level.
    pub fine_copy: Vec<Option<usize>>,
    pub hanging: Vec<HangingRule>,
    /// Vertices that carry a free unknown of the adaptive mesh.
    pub leaf_dof: Vec<bool>,
}

impl Level {
    pub fn cell_at(&self, x: u32, y: u32) -> Option<CellId> {
        self.cell_index.get(&(x, y)).copied()
    }

    pub fn vertex_at(&self, i: u32, j: u32) -> Option<usize> {
        self.vertex_index.get(&(i, j)).copied()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_leaf_dofs(&self) -> usize {
        self.leaf_dof.iter().filter(|&&b| b).count()
    }
}

/// Cells selected for refinement plus the ancestors whose coarse operators
/// become stale.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RefinementDelta {
    pub refine: Vec<CellId>,
    pub coarsen: Vec<CellId>,
    pub stale_ancestors: Vec<CellId>,
}

impl RefinementDelta {
    pub fn is_empty(&self) -> bool {
        self.refine.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub cells: Vec<Cell>,
    pub levels: Vec<Level>,
    order: Vec<CellId>,
    /// Bumped on every topology change.
    pub epoch: u64,
    max_vertices: usize,
}

/// Number of cells per axis on `level`.
pub fn cells_per_axis(level: u8) -> u32 {
    3u32.pow(u32::from(level))
}

/// Mesh width on `level`.
pub fn mesh_width(level: u8) -> f64 {
    1.0 / f64::from(cells_per_axis(level))
}

/// Level-independent key of the vertex position `(i, j)` on `level`.
pub fn position_key(level: u8, i: u32, j: u32) -> u64 {
    let scale = 3u64.pow(u32::from(KEY_LEVEL - level));
    let side = 3u64.pow(u32::from(KEY_LEVEL)) + 1;
    u64::from(i) * scale * side + u64::from(j) * scale
}

/// Weight of lattice point `i` of a 4-point patch axis with respect to the
/// coarse end point `end` (0 = left, 1 = right).
pub fn linear_weight(i: usize, end: usize) -> f64 {
    let i = i as f64;
    if end == 0 {
        (3.0 - i) / 3.0
    } else {
        i / 3.0
    }
}

impl Mesh {
    /// Regular mesh with `3^depth` cells per axis on its finest level.
    pub fn regular(depth: u8) -> Result<Self> {
        Self::regular_with_limit(depth, DEFAULT_MAX_VERTICES)
    }

    pub fn regular_with_limit(depth: u8, max_vertices: usize) -> Result<Self> {
        if depth < 1 {
            return Err(Error::Config("mesh depth must be at least 1".into()));
        }
        if depth >= KEY_LEVEL {
            return Err(Error::Resource(format!("depth {depth} exceeds the key resolution")));
        }
        let total: u128 = (0..=u32::from(depth))
            .map(|l| (3u128.pow(l) + 1).pow(2))
            .sum();
        if total > max_vertices as u128 {
            return Err(Error::Resource(format!(
                "depth {depth} needs {total} vertices, limit is {max_vertices}"
            )));
        }
        let mut mesh = Mesh {
            cells: Vec::new(),
            levels: Vec::new(),
            order: Vec::new(),
            epoch: 0,
            max_vertices,
        };
        mesh.add_cell(0, 0, 0, None);
        let mut frontier = vec![0];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(frontier.len() * 9);
            for id in frontier {
                next.extend(mesh.split(id));
            }
            frontier = next;
        }
        mesh.finalize();
        Ok(mesh)
    }

    pub fn max_level(&self) -> u8 {
        (self.levels.len() - 1) as u8
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    /// Cells in traversal order: depth-first pre-order, children in row order.
    pub fn traverse(&self) -> &[CellId] {
        &self.order
    }

    pub fn root(&self) -> CellId {
        0
    }

    pub fn leaves(&self) -> impl Iterator<Item = CellId> + '_ {
        self.order.iter().copied().filter(|&c| !self.cells[c].is_refined())
    }

    pub fn num_leaf_dofs(&self) -> usize {
        self.levels.iter().map(Level::num_leaf_dofs).sum()
    }

    pub fn num_vertices(&self) -> usize {
        self.levels.iter().map(Level::num_vertices).sum()
    }

    /// Vertices of the finest spatial resolution at every position, i.e. the
    /// adaptive mesh's vertex count including boundary and hanging points.
    pub fn num_mesh_points(&self) -> usize {
        self.levels
            .iter()
            .map(|lv| lv.fine_copy.iter().filter(|c| c.is_none()).count())
            .sum()
    }

    /// Ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: CellId) -> Vec<CellId> {
        let mut out = Vec::new();
        let mut cur = self.cells[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.cells[p].parent;
        }
        out
    }

    /// Level-`level+1` vertex indices of the 4x4 lattice of a refined cell,
    /// indexed `i + 4 j`.
    pub fn patch_vertices(&self, id: CellId) -> [usize; 16] {
        let c = &self.cells[id];
        let fine = &self.levels[usize::from(c.level) + 1];
        let mut out = [0; 16];
        for j in 0..4u32 {
            for i in 0..4u32 {
                out[(i + 4 * j) as usize] = fine
                    .vertex_at(3 * c.x + i, 3 * c.y + j)
                    .expect("refined cell lattice exists");
            }
        }
        out
    }

    fn add_cell(&mut self, level: u8, x: u32, y: u32, parent: Option<CellId>) -> CellId {
        let l = usize::from(level);
        if self.levels.len() <= l {
            self.levels.resize_with(l + 1, Level::default);
        }
        let id = self.cells.len();
        let lv = &mut self.levels[l];
        let mut corners = [0; 4];
        for (k, corner) in corners.iter_mut().enumerate() {
            let (i, j) = (x + (k as u32 & 1), y + (k as u32 >> 1));
            let v = *lv.vertex_index.entry((i, j)).or_insert_with(|| {
                lv.vertices.push(Vertex { i, j, kind: VertexKind::Hanging });
                lv.adjacent.push(0);
                lv.vertices.len() - 1
            });
            lv.adjacent[v] += 1;
            *corner = v;
        }
        lv.cells.push(id);
        lv.cell_index.insert((x, y), id);
        self.cells.push(Cell { level, x, y, parent, children: None, corners, slot: 0 });
        id
    }

    fn split(&mut self, id: CellId) -> [CellId; 9] {
        let (level, x, y) = {
            let c = &self.cells[id];
            (c.level, c.x, c.y)
        };
        let mut kids = [0; 9];
        for (k, kid) in kids.iter_mut().enumerate() {
            let (cx, cy) = ((k % 3) as u32, (k / 3) as u32);
            *kid = self.add_cell(level + 1, 3 * x + cx, 3 * y + cy, Some(id));
        }
        self.cells[id].children = Some(kids);
        kids
    }

    /// Refines the given leaf cells. Already refined cells and cells beyond
    /// `max_level` are skipped. Returns the delta actually applied.
    pub fn refine(&mut self, ids: &[CellId], max_level: u8) -> Result<RefinementDelta> {
        let mut delta = RefinementDelta::default();
        let mut added = 0usize;
        for &id in ids {
            let c = &self.cells[id];
            if c.is_refined() || c.level >= max_level || delta.refine.contains(&id) {
                continue;
            }
            added += 16;
            delta.refine.push(id);
        }
        if self.num_vertices() + added > self.max_vertices {
            return Err(Error::Resource(format!(
                "refinement would exceed {} vertices",
                self.max_vertices
            )));
        }
        if delta.refine.is_empty() {
            return Ok(delta);
        }
        for &id in &delta.refine {
            self.split(id);
            for a in self.ancestors(id) {
                if !delta.stale_ancestors.contains(&a) {
                    delta.stale_ancestors.push(a);
                }
            }
        }
        self.epoch += 1;
        self.finalize();
        Ok(delta)
    }

    /// Coarsening is not supported; the returned delta is always empty.
    pub fn coarsen(&mut self, _ids: &[CellId]) -> RefinementDelta {
        RefinementDelta::default()
    }

    fn finalize(&mut self) {
        // vertex kinds
        for (l, lv) in self.levels.iter_mut().enumerate() {
            let n = cells_per_axis(l as u8);
            for (v, vert) in lv.vertices.iter_mut().enumerate() {
                vert.kind = if vert.i == 0 || vert.j == 0 || vert.i == n || vert.j == n {
                    VertexKind::Dirichlet
                } else if lv.adjacent[v] < 4 {
                    VertexKind::Hanging
                } else {
                    VertexKind::Interior
                };
            }
        }
        // copies between levels
        for l in 0..self.levels.len() {
            let count = self.levels[l].vertices.len();
            let mut fine_copy = vec![None; count];
            if l + 1 < self.levels.len() {
                let fine = &self.levels[l + 1];
                for (v, vert) in self.levels[l].vertices.iter().enumerate() {
                    fine_copy[v] = fine.vertex_at(3 * vert.i, 3 * vert.j);
                }
            }
            let mut coarse_copy = vec![None; count];
            if l > 0 {
                let coarse = &self.levels[l - 1];
                for (v, vert) in self.levels[l].vertices.iter().enumerate() {
                    if vert.i % 3 == 0 && vert.j % 3 == 0 {
                        coarse_copy[v] = coarse.vertex_at(vert.i / 3, vert.j / 3);
                    }
                }
            }
            let lv = &mut self.levels[l];
            lv.fine_copy = fine_copy;
            lv.coarse_copy = coarse_copy;
        }
        // leaf DoFs
        for l in 0..self.levels.len() {
            let leaf: Vec<bool> = self.levels[l]
                .vertices
                .iter()
                .enumerate()
                .map(|(v, vert)| {
                    vert.kind == VertexKind::Interior
                        && match self.levels[l].fine_copy[v] {
                            None => true,
                            Some(f) => self.levels[l + 1].vertices[f].kind == VertexKind::Hanging,
                        }
                })
                .collect();
            self.levels[l].leaf_dof = leaf;
        }
        // hanging interpolation rules
        for l in 1..self.levels.len() {
            let mut rules = Vec::new();
            for (v, vert) in self.levels[l].vertices.iter().enumerate() {
                if vert.kind != VertexKind::Hanging {
                    continue;
                }
                let parent = self
                    .adjacent_cells(l as u8, vert.i, vert.j)
                    .into_iter()
                    .flatten()
                    .next()
                    .and_then(|c| self.cells[c].parent)
                    .expect("hanging vertex has a refined coarse cell");
                let p = &self.cells[parent];
                let (li, lj) = ((vert.i - 3 * p.x) as usize, (vert.j - 3 * p.y) as usize);
                let mut weights = [0.0; 4];
                for (k, w) in weights.iter_mut().enumerate() {
                    *w = linear_weight(li, k & 1) * linear_weight(lj, k >> 1);
                }
                rules.push(HangingRule { vertex: v, coarse: p.corners, weights });
            }
            self.levels[l].hanging = rules;
        }
        // traversal order
        let mut order = Vec::with_capacity(self.cells.len());
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            order.push(id);
            if let Some(kids) = self.cells[id].children {
                stack.extend(kids.iter().rev());
            }
        }
        for (slot, &id) in order.iter().enumerate() {
            self.cells[id].slot = slot;
        }
        self.order = order;
    }

    /// Cells of `level` around vertex `(i, j)` in SW, SE, NW, NE order.
    pub fn adjacent_cells(&self, level: u8, i: u32, j: u32) -> [Option<CellId>; 4] {
        let lv = &self.levels[usize::from(level)];
        let mut out = [None; 4];
        for (k, slot) in out.iter_mut().enumerate() {
            let dx = k as i64 & 1;
            let dy = k as i64 >> 1;
            let (x, y) = (i64::from(i) - 1 + dx, i64::from(j) - 1 + dy);
            if x >= 0 && y >= 0 {
                *slot = lv.cell_at(x as u32, y as u32);
            }
        }
        out
    }

    /// Leaf DoFs as `(level, vertex)` pairs, coarse levels first.
    pub fn leaf_dofs(&self) -> Vec<(u8, usize)> {
        let mut out = Vec::new();
        for (l, lv) in self.levels.iter().enumerate() {
            for (v, &leaf) in lv.leaf_dof.iter().enumerate() {
                if leaf {
                    out.push((l as u8, v));
                }
            }
        }
        out
    }

    /// Gradient estimate at a leaf DoF: the largest `|du|/h` along the four
    /// axis-aligned edges of its level.
    pub fn gradient_estimate(&self, u: &[Vec<f64>], level: u8, v: usize) -> f64 {
        let lv = &self.levels[usize::from(level)];
        let vert = lv.vertices[v];
        let h = mesh_width(level);
        let mut g = 0.0f64;
        for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (ni, nj) = (i64::from(vert.i) + di, i64::from(vert.j) + dj);
            if ni < 0 || nj < 0 {
                continue;
            }
            if let Some(w) = lv.vertex_at(ni as u32, nj as u32) {
                g = g.max((u[usize::from(level)][w] - u[usize::from(level)][v]).abs() / h);
            }
        }
        g
    }

    /// Picks the leaf DoFs with the largest positive gradient estimates (the
    /// top `fraction`) and refines the unrefined cells around them.
    pub fn refine_by_gradient(
        &mut self,
        u: &[Vec<f64>],
        fraction: f64,
        max_level: u8,
    ) -> Result<RefinementDelta> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("refinement fraction {fraction} not in (0,1]")));
        }
        let mut scored: Vec<(f64, u8, usize)> = self
            .leaf_dofs()
            .into_iter()
            .map(|(l, v)| (self.gradient_estimate(u, l, v), l, v))
            .filter(|(g, _, _)| *g > 0.0)
            .collect();
        if scored.is_empty() {
            return Ok(RefinementDelta::default());
        }
        let total = self.num_leaf_dofs();
        let take = ((fraction * total as f64).ceil() as usize).clamp(1, scored.len());
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut targets = Vec::new();
        for &(_, l, v) in &scored[..take] {
            let vert = self.levels[usize::from(l)].vertices[v];
            for c in self.adjacent_cells(l, vert.i, vert.j).into_iter().flatten() {
                if !self.cells[c].is_refined() && !targets.contains(&c) {
                    targets.push(c);
                }
            }
        }
        self.refine(&targets, max_level)
    }

    /// One line per cell in traversal order: `level x y refined`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for &id in &self.order {
            let c = &self.cells[id];
            let _ = writeln!(s, "{} {} {} {}", c.level, c.x, c.y, u8::from(c.is_refined()));
        }
        s
    }
}
