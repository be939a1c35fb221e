#![allow(dead_code)]

use lazymg::assembly::ElementMatrix;
use lazymg::mesh::{mesh_width, Mesh, VertexKind};
use nalgebra::{DMatrix, DVector};

/// Global matrix of `level` assembled from one element matrix per cell.
pub fn dense_operator(mesh: &Mesh, level: usize, element: impl Fn(usize) -> ElementMatrix) -> DMatrix<f64> {
    let lv = &mesh.levels[level];
    let n = lv.vertices.len();
    let mut a = DMatrix::zeros(n, n);
    for &id in &lv.cells {
        let c = mesh.cell(id).corners;
        let m = element(id);
        for r in 0..4 {
            for k in 0..4 {
                a[(c[r], c[k])] += m[(r, k)];
            }
        }
    }
    a
}

/// Bilinear interpolation from `level - 1` to `level` through hat functions.
pub fn dense_prolongation(mesh: &Mesh, level: usize) -> DMatrix<f64> {
    let fine = &mesh.levels[level];
    let coarse = &mesh.levels[level - 1];
    let (hf, hc) = (mesh_width(level as u8), mesh_width(level as u8 - 1));
    let mut p = DMatrix::zeros(fine.vertices.len(), coarse.vertices.len());
    for (v, fv) in fine.vertices.iter().enumerate() {
        let (x, y) = (f64::from(fv.i) * hf, f64::from(fv.j) * hf);
        for (w, cv) in coarse.vertices.iter().enumerate() {
            let (xc, yc) = (f64::from(cv.i) * hc, f64::from(cv.j) * hc);
            let hat = (1.0 - (x - xc).abs() / hc).max(0.0) * (1.0 - (y - yc).abs() / hc).max(0.0);
            if hat > 1e-14 {
                p[(v, w)] = hat;
            }
        }
    }
    p
}

pub fn zero_dirichlet(mesh: &Mesh, level: usize, x: &mut DVector<f64>) {
    for (v, vert) in mesh.levels[level].vertices.iter().enumerate() {
        if vert.kind == VertexKind::Dirichlet {
            x[v] = 0.0;
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct StressReport {
    pub claims: u64,
    pub overlaps: u64,
    pub reads: u64,
    pub torn: u64,
}

/// Contending writers claim, republish and release slots while readers
/// verify checksums. Overlaps count claims that found another writer active
/// on the same cell.
pub fn stress_store(cells: usize, contenders: usize, reps: usize) -> StressReport {
    use lazymg::assembly::{integrate_element, CellGeom, P1};
    use lazymg::problem::MaterialField;
    use lazymg::stream::{CellRecord, CodecConfig, OperatorStore};
    use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};

    let material = MaterialField::Theta { theta: 16.0 };
    let mesh = Mesh::regular(5).unwrap();
    assert!(mesh.cells.len() >= cells);
    let store = OperatorStore::new(&mesh, material, CodecConfig::default());
    let variants: Vec<[CellRecord; 2]> = (0..cells)
        .map(|id| {
            let g = CellGeom::of(mesh.cell(id));
            let refined = mesh.cell(id).is_refined();
            let p = refined.then(lazymg::transfer::geometric_prolongation);
            [1u32, 2].map(|n| {
                let a = integrate_element(g, &material, n);
                CellRecord::encode(P1::N(n), n, &a, p.as_ref(), g, &material, CodecConfig::default(), 0).unwrap()
            })
        })
        .collect();
    let active: Vec<AtomicU32> = (0..cells).map(|_| AtomicU32::new(0)).collect();
    let (claims, overlaps, reads, torn) = (AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0));
    for rep in 0..reps {
        let done = AtomicBool::new(false);
        std::thread::scope(|s| {
            let writers: Vec<_> = (0..contenders)
                .map(|t| {
                    let (store, variants, active, claims, overlaps) = (&store, &variants, &active, &claims, &overlaps);
                    s.spawn(move || {
                        for k in 0..cells {
                            let id = (k * 7919 + t * 104_729 + rep) % cells;
                            let slot = store.slot(id);
                            if !slot.try_claim() {
                                continue;
                            }
                            claims.fetch_add(1, Ordering::Relaxed);
                            if active[id].fetch_add(1, Ordering::AcqRel) != 0 {
                                overlaps.fetch_add(1, Ordering::Relaxed);
                            }
                            let rec = variants[id][(t + rep) % 2].clone();
                            if t % 2 == 0 {
                                store.publish(id, rec);
                            } else {
                                let cur = slot.load();
                                store.publish_if(&slot, &cur, rec);
                            }
                            active[id].fetch_sub(1, Ordering::AcqRel);
                            slot.release();
                        }
                    })
                })
                .collect();
            let (store, done, reads, torn) = (&store, &done, &reads, &torn);
            s.spawn(move || {
                let mut id = rep;
                while !done.load(Ordering::Acquire) {
                    id = (id * 31 + 17) % cells;
                    reads.fetch_add(1, Ordering::Relaxed);
                    if !store.load(id).checksum_ok() {
                        torn.fetch_add(1, Ordering::Relaxed);
                    }
                }
            });
            for w in writers {
                w.join().unwrap();
            }
            done.store(true, Ordering::Release);
        });
    }
    for id in 0..cells {
        if !store.load(id).checksum_ok() {
            torn.fetch_add(1, Ordering::Relaxed);
        }
    }
    StressReport {
        claims: claims.into_inner(),
        overlaps: overlaps.into_inner(),
        reads: reads.into_inner(),
        torn: torn.into_inner(),
    }
}
