//! Element matrices of bilinear elements with subsampled material
//! parameters, the per-cell integration marker and the adaptive step.

use nalgebra::Matrix4;

use crate::mesh::{mesh_width, Cell};
use crate::problem::MaterialField;

/// 4x4 element matrix in SW, SE, NW, NE corner order.
pub type ElementMatrix = Matrix4<f64>;

/// Integration state of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum P1 {
    /// Nothing integrated yet.
    Bottom,
    /// Integrated with `n` samples per axis, accuracy not yet confirmed.
    N(u32),
    /// Converged.
    Top,
}

impl P1 {
    pub fn is_top(self) -> bool {
        self == P1::Top
    }
}

/// Snapshot of a cell marker `(p1, p2, p3)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellMarker {
    pub p1: P1,
    pub p2: bool,
    pub p3: u8,
}

impl Default for CellMarker {
    fn default() -> Self {
        Self { p1: P1::Bottom, p2: false, p3: 0 }
    }
}

/// Position and size of a cell in the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeom {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
}

impl CellGeom {
    pub fn of(cell: &Cell) -> Self {
        let h = mesh_width(cell.level);
        Self { x0: f64::from(cell.x) * h, y0: f64::from(cell.y) * h, h }
    }
}

// 1D shape functions on [0,1]: index 0 is 1 - t, index 1 is t.
fn slope(a: usize) -> f64 {
    if a == 0 {
        -1.0
    } else {
        1.0
    }
}

/// `int_c^d phi_a phi_b dt` for the 1D linear shape functions.
fn mass_1d(a: usize, b: usize, c: f64, d: f64) -> f64 {
    let cube = |t: f64| t * t * t;
    match (a, b) {
        (0, 0) => (cube(1.0 - c) - cube(1.0 - d)) / 3.0,
        (1, 1) => (cube(d) - cube(c)) / 3.0,
        _ => (d * d - c * c) / 2.0 - (cube(d) - cube(c)) / 3.0,
    }
}

/// Stiffness contribution of the sub-rectangle `[a,b] x [c,d]` of the
/// reference cell for unit material. The 2D form is scale invariant, so the
/// result holds for any cell size.
pub fn subsquare_stiffness(a: f64, b: f64, c: f64, d: f64) -> ElementMatrix {
    let mut k = ElementMatrix::zeros();
    for i in 0..4 {
        let (xi, yi) = (i & 1, i >> 1);
        for j in 0..4 {
            let (xj, yj) = (j & 1, j >> 1);
            let dx = slope(xi) * slope(xj) * (b - a) * mass_1d(yi, yj, c, d);
            let dy = slope(yi) * slope(yj) * (d - c) * mass_1d(xi, xj, a, b);
            k[(i, j)] = dx + dy;
        }
    }
    k
}

/// Element matrix for unit material.
pub fn reference_stiffness() -> ElementMatrix {
    subsquare_stiffness(0.0, 1.0, 0.0, 1.0)
}

/// Splits the cell into `n x n` subsquares, samples the material once at
/// each subsquare centre and sums the exact subsquare contributions.
pub fn integrate_element(geom: CellGeom, material: &MaterialField, n: u32) -> ElementMatrix {
    let n = n.max(1);
    let step = 1.0 / f64::from(n);
    let mut out = ElementMatrix::zeros();
    let parts: Vec<ElementMatrix> = (0..n)
        .flat_map(|q| (0..n).map(move |p| (p, q)))
        .map(|(p, q)| {
            let (a, c) = (f64::from(p) * step, f64::from(q) * step);
            subsquare_stiffness(a, a + step, c, c + step)
        })
        .collect();
    for q in 0..n {
        for p in 0..n {
            let x = geom.x0 + (f64::from(p) + 0.5) * step * geom.h;
            let y = geom.y0 + (f64::from(q) + 0.5) * step * geom.h;
            out += parts[(p + q * n) as usize] * material.eval(x, y);
        }
    }
    out
}

/// Largest absolute entry.
pub fn max_norm(a: &ElementMatrix) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Result of one adaptive step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub matrix: ElementMatrix,
    pub p1: P1,
    /// Samples per axis behind `matrix`.
    pub n: u32,
    /// Relative change that decided the step, if a comparison happened.
    pub ratio: Option<f64>,
}

/// One step of the adaptive integration protocol.
///
/// `old` is the stored matrix with its sample count. Once the refined
/// integration differs from the stored one by less than `c` (relative, in
/// the max norm) the marker becomes `Top` and the stored matrix is kept.
/// Reaching `max_n` samples per axis also terminates.
pub fn adaptive_step(
    p1: P1,
    old: Option<(ElementMatrix, u32)>,
    geom: CellGeom,
    material: &MaterialField,
    c: f64,
    max_n: u32,
) -> StepOutcome {
    match (p1, old) {
        (P1::Top, Some((m, n))) => StepOutcome { matrix: m, p1, n, ratio: None },
        (P1::N(k), Some((m_old, n_old))) => {
            let next = k + 1;
            let m_new = integrate_element(geom, material, next);
            let norm = max_norm(&m_old);
            let ratio = if norm == 0.0 {
                log::debug!("zero element matrix at {geom:?}, accepting");
                0.0
            } else {
                max_norm(&(m_new - m_old)) / norm
            };
            if ratio < c {
                StepOutcome { matrix: m_old, p1: P1::Top, n: n_old, ratio: Some(ratio) }
            } else if next >= max_n {
                StepOutcome { matrix: m_new, p1: P1::Top, n: next, ratio: Some(ratio) }
            } else {
                StepOutcome { matrix: m_new, p1: P1::N(next), n: next, ratio: Some(ratio) }
            }
        }
        _ => StepOutcome {
            matrix: integrate_element(geom, material, 1),
            p1: if max_n <= 1 { P1::Top } else { P1::N(1) },
            n: 1,
            ratio: None,
        },
    }
}

/// Runs [`adaptive_step`] until the marker is `Top`.
pub fn integrate_to_top(
    geom: CellGeom,
    material: &MaterialField,
    c: f64,
    max_n: u32,
) -> StepOutcome {
    let mut out = adaptive_step(P1::Bottom, None, geom, material, c, max_n);
    while !out.p1.is_top() {
        out = adaptive_step(out.p1, Some((out.matrix, out.n)), geom, material, c, max_n);
    }
    out
}

/// 3x3 vertex stencil, index `(dx + 1) + 3 (dy + 1)`.
pub type Stencil9 = [f64; 9];

/// Sums the rows belonging to a vertex from its four surrounding element
/// matrices (SW, SE, NW, NE of the vertex). Missing cells contribute zero.
pub fn assemble_vertex_stencil(cells: [Option<&ElementMatrix>; 4]) -> Stencil9 {
    let mut s = [0.0; 9];
    for (k, m) in cells.iter().enumerate() {
        let Some(m) = m else { continue };
        // the vertex is corner 3 - k of cell k
        let row = 3 - k;
        let (ox, oy) = ((k & 1) as i32 - 1, (k >> 1) as i32 - 1);
        for col in 0..4 {
            let dx = ox + (col & 1) as i32;
            let dy = oy + (col >> 1) as i32;
            s[((dx + 1) + 3 * (dy + 1)) as usize] += m[(row, col)];
        }
    }
    s
}
