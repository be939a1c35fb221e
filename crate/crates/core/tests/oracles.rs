mod common;

use common::*;
use lazymg::assembly::{reference_stiffness, ElementMatrix};
use lazymg::mesh::Mesh;
use lazymg::operators::{AssemblyMode, OperatorConfig, Operators};
use lazymg::problem::{MaterialField, ProblemInstance};
use lazymg::solver::{AmrConfig, Solver, SolverConfig};
use lazymg::transfer::{galerkin_coarse_element, geometric_prolongation};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hierarchical_residuals_match_dense_algebra() {
    let mesh = Mesh::regular(2).unwrap();
    let material = MaterialField::Quadrant { eps_low: 1.0 };
    let cfg = OperatorConfig { mode: AssemblyMode::Eager, ..OperatorConfig::default() };
    let ops = Operators::new(&mesh, material, cfg);
    let mut problem = ProblemInstance::new(material);
    problem.seed = 7;
    let s = Solver::new(mesh, ops, problem, SolverConfig::default(), AmrConfig::default()).unwrap();
    let (r, rhat) = s.composite_residuals();

    let mesh = &s.mesh;
    let top = mesh.num_levels() - 1;
    let mut b = DVector::zeros(mesh.levels[top].vertices.len());
    for l in (0..=top).rev() {
        let a = dense_operator(mesh, l, |_| reference_stiffness());
        let u = DVector::from_vec(s.u[l].clone());
        let uhat = if l > 0 { &u - dense_prolongation(mesh, l) * DVector::from_vec(s.u[l - 1].clone()) } else { u.clone() };
        zero_dirichlet(mesh, l, &mut b);
        let mut rl = &b - &a * &u;
        let mut rh = &b - &a * &uhat;
        zero_dirichlet(mesh, l, &mut rl);
        zero_dirichlet(mesh, l, &mut rh);
        assert!(max_abs_diff(rl.as_slice(), &r[l]) < 1e-12, "r on level {l}");
        assert!(max_abs_diff(rh.as_slice(), &rhat[l]) < 1e-12, "r_hat on level {l}");
        if l > 0 {
            b = dense_prolongation(mesh, l).transpose() * rh;
        }
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng) -> ElementMatrix {
    let m = ElementMatrix::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    m + m.transpose()
}

#[test]
fn galerkin_assembly_matches_dense_triple_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = Mesh::regular(2).unwrap();
    for _ in 0..10 {
        let fine: Vec<ElementMatrix> = (0..mesh.cells.len()).map(|_| random_symmetric(&mut rng)).collect();
        let a = dense_operator(&mesh, 2, |id| fine[id]);
        let p = dense_prolongation(&mesh, 2);
        let oracle: DMatrix<f64> = p.transpose() * a * &p;
        let assembled = dense_operator(&mesh, 1, |id| {
            let kids = mesh.cell(id).children.expect("regular mesh");
            galerkin_coarse_element(&kids.map(|k| fine[k]), &geometric_prolongation())
        });
        assert!((assembled - oracle).amax() < 1e-12);
    }
}
