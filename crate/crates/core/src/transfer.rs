//! Cell-local transfer blocks and Galerkin coarse element matrices.
//!
//! A refined cell owns a 16x4 prolongation block mapping its four corners
//! to the 4x4 lattice of its children (`a = i + 4 j`). Restriction is the
//! transpose.

use nalgebra::{Matrix2, Matrix4, SMatrix};

use crate::assembly::{ElementMatrix, Stencil9};
use crate::mesh::linear_weight;

pub type TransferBlock = SMatrix<f64, 16, 4>;
pub type PatchMatrix = SMatrix<f64, 16, 16>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransferKind {
    Geometric,
    BoxMg,
}

/// Lattice index of corner `k` (SW, SE, NW, NE) of the patch.
pub const CORNER_LATTICE: [usize; 4] = [0, 3, 12, 15];

/// Lattice index of corner `m` of child `k` (row order, `x` fastest).
pub fn child_corner_lattice(k: usize, m: usize) -> usize {
    let (cx, cy) = (k % 3, k / 3);
    (cx + (m & 1)) + 4 * (cy + (m >> 1))
}

/// Bilinear interpolation weights.
pub fn geometric_prolongation() -> TransferBlock {
    TransferBlock::from_fn(|a, k| linear_weight(a % 4, k & 1) * linear_weight(a / 4, k >> 1))
}

/// Assembles the nine child matrices into the 16x16 patch operator.
pub fn assemble_patch(children: &[ElementMatrix; 9]) -> PatchMatrix {
    let mut out = PatchMatrix::zeros();
    for (k, m) in children.iter().enumerate() {
        for r in 0..4 {
            for c in 0..4 {
                out[(child_corner_lattice(k, r), child_corner_lattice(k, c))] += m[(r, c)];
            }
        }
    }
    out
}

/// `P^T A_patch P`.
pub fn galerkin_coarse_element(children: &[ElementMatrix; 9], p: &TransferBlock) -> ElementMatrix {
    p.transpose() * assemble_patch(children) * p
}

fn stencil_at(s: &Stencil9, dx: i32, dy: i32) -> f64 {
    s[((dx + 1) + 3 * (dy + 1)) as usize]
}

/// Result of the operator-dependent construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxMgBlock {
    pub p: TransferBlock,
    /// Lattice points that fell back to bilinear weights.
    pub fallbacks: u32,
}

/// Operator-dependent prolongation from the assembled fine stencils of the
/// 16 lattice points. `None` marks points without a proper stencil
/// (hanging or boundary); they receive bilinear weights.
pub fn boxmg_prolongation(stencils: &[Option<Stencil9>; 16]) -> BoxMgBlock {
    let geo = geometric_prolongation();
    let mut p = TransferBlock::zeros();
    let mut fallbacks = 0;
    for (k, &a) in CORNER_LATTICE.iter().enumerate() {
        p[(a, k)] = 1.0;
    }
    // edges: (lattice of the two inner points, the two end corners, axis)
    let edges: [([usize; 2], [usize; 2], bool); 4] = [
        ([1, 2], [0, 1], true),
        ([13, 14], [2, 3], true),
        ([4, 8], [0, 2], false),
        ([7, 11], [1, 3], false),
    ];
    for (pts, ends, horizontal) in edges {
        let collapse = |s: &Stencil9| -> (f64, f64, f64) {
            let sum = |d: i32| -> f64 {
                (-1..=1)
                    .map(|t| if horizontal { stencil_at(s, d, t) } else { stencil_at(s, t, d) })
                    .sum()
            };
            (sum(-1), sum(0), sum(1))
        };
        let solved = match (stencils[pts[0]], stencils[pts[1]]) {
            (Some(s1), Some(s2)) => {
                let (w1, c1, e1) = collapse(&s1);
                let (w2, c2, e2) = collapse(&s2);
                if c1 <= 0.0 || c2 <= 0.0 {
                    None
                } else {
                    let m = Matrix2::new(c1, e1, w2, c2);
                    m.lu().solve(&Matrix2::new(-w1, 0.0, 0.0, -e2)).filter(|x| x.iter().all(|v| v.is_finite()))
                }
            }
            _ => None,
        };
        match solved {
            Some(x) => {
                for r in 0..2 {
                    p[(pts[r], ends[0])] = x[(r, 0)];
                    p[(pts[r], ends[1])] = x[(r, 1)];
                }
            }
            None => {
                if stencils[pts[0]].is_some() && stencils[pts[1]].is_some() {
                    log::debug!("edge collapse failed, using bilinear weights");
                }
                fallbacks += 2;
                for r in pts {
                    p.set_row(r, &geo.row(r));
                }
            }
        }
    }
    // interior 2x2 block
    let inner = [5usize, 6, 9, 10];
    let solved = if inner.iter().all(|&a| stencils[a].is_some()) {
        let mut a_ii = Matrix4::zeros();
        let mut rhs = SMatrix::<f64, 4, 4>::zeros();
        for (r, &a) in inner.iter().enumerate() {
            let s = stencils[a].expect("checked");
            let (i, j) = ((a % 4) as i32, (a / 4) as i32);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let b = ((i + dx) + 4 * (j + dy)) as usize;
                    let w = stencil_at(&s, dx, dy);
                    match inner.iter().position(|&q| q == b) {
                        Some(c) => a_ii[(r, c)] += w,
                        None => {
                            for k in 0..4 {
                                rhs[(r, k)] -= w * p[(b, k)];
                            }
                        }
                    }
                }
            }
        }
        if (0..4).any(|r| a_ii[(r, r)] <= 0.0) {
            None
        } else {
            a_ii.lu().solve(&rhs).filter(|x| x.iter().all(|v| v.is_finite()))
        }
    } else {
        None
    };
    match solved {
        Some(x) => {
            for (r, &a) in inner.iter().enumerate() {
                p.set_row(a, &x.row(r));
            }
        }
        None => {
            if inner.iter().all(|&a| stencils[a].is_some()) {
                log::debug!("interior solve failed, using bilinear weights");
            }
            fallbacks += 4;
            for a in inner {
                p.set_row(a, &geo.row(a));
            }
        }
    }
    BoxMgBlock { p, fallbacks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_vertex_stencil, reference_stiffness};
    use approx::assert_abs_diff_eq;

    fn uniform_stencils(scale: f64) -> [Option<Stencil9>; 16] {
        let a = reference_stiffness() * scale;
        [Some(assemble_vertex_stencil([Some(&a); 4])); 16]
    }

    #[test]
    fn geometric_block_examples() {
        let p = geometric_prolongation();
        for (k, &a) in CORNER_LATTICE.iter().enumerate() {
            for c in 0..4 {
                assert_eq!(p[(a, c)], if c == k { 1.0 } else { 0.0 });
            }
        }
        let row: Vec<f64> = p.row(5).iter().copied().collect();
        let expect = [4.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0];
        for k in 0..4 {
            assert!((row[k] - expect[k]).abs() < 1e-15);
        }
        for r in 0..16 {
            assert!((p.row(r).sum() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn galerkin_of_unit_material_is_rediscretisation() {
        let kids = [reference_stiffness(); 9];
        let coarse = galerkin_coarse_element(&kids, &geometric_prolongation());
        assert_abs_diff_eq!(coarse, reference_stiffness(), epsilon = 1e-13);
        let zero = [ElementMatrix::zeros(); 9];
        assert_eq!(galerkin_coarse_element(&zero, &geometric_prolongation()), ElementMatrix::zeros());
    }

    #[test]
    fn boxmg_constant_material_is_bilinear() {
        let b = boxmg_prolongation(&uniform_stencils(2.5));
        assert_eq!(b.fallbacks, 0);
        assert_abs_diff_eq!(b.p, geometric_prolongation(), epsilon = 1e-12);
    }

    #[test]
    fn boxmg_missing_stencils_fall_back() {
        let mut s = uniform_stencils(1.0);
        s[1] = None;
        s[6] = None;
        let b = boxmg_prolongation(&s);
        assert_eq!(b.fallbacks, 6);
        assert_abs_diff_eq!(b.p, geometric_prolongation(), epsilon = 1e-12);
    }

    #[test]
    fn boxmg_nonpositive_centre_falls_back() {
        let mut s = uniform_stencils(1.0);
        s[2] = Some([0.0; 9]);
        let b = boxmg_prolongation(&s);
        assert_eq!(b.fallbacks, 2);
    }

    #[test]
    fn layered_material_weights_follow_flux() {
        // columns of fine cells with material 1 | 1 | 100 across the south edge
        let eps = [1.0, 1.0, 100.0];
        let col = |x: i32| if x < 0 { 1.0 } else { eps[(x as usize).min(2)] };
        let mut stencils = [None; 16];
        for a in [1usize, 2] {
            let i = a as i32;
            let mats: Vec<ElementMatrix> = (0..4)
                .map(|k| reference_stiffness() * col(i - 1 + (k & 1)))
                .collect();
            stencils[a] = Some(assemble_vertex_stencil([
                Some(&mats[0]),
                Some(&mats[1]),
                Some(&mats[2]),
                Some(&mats[3]),
            ]));
        }
        let b = boxmg_prolongation(&stencils);
        // 1D oracle: conductances 1, 1, 100 between points 0..3
        // u1 = (1*u0 + 1*u2)/2, u2 = (1*u1 + 100*u3)/101
        let m = Matrix2::new(2.0, -1.0, -1.0, 101.0);
        let x = m.lu().solve(&Matrix2::new(1.0, 0.0, 0.0, 100.0)).unwrap();
        assert!((b.p[(1, 0)] - x[(0, 0)]).abs() < 1e-12);
        assert!((b.p[(2, 1)] - x[(1, 1)]).abs() < 1e-12);
        assert!((b.p.row(1).sum() - 1.0).abs() < 1e-12);
    }
}
