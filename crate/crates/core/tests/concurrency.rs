mod common;

use lazymg::mesh::Mesh;
use lazymg::operators::{AssemblyMode, OperatorConfig, Operators};
use lazymg::problem::{MaterialField, ProblemInstance};
use lazymg::scheduler::SchedulerConfig;
use lazymg::solver::{AmrConfig, Solver, SolverConfig, Termination};

#[test]
fn claims_are_exclusive_and_reads_never_tear() {
    let r = common::stress_store(2_000, 8, 5);
    assert!(r.claims > 0 && r.reads > 0);
    assert_eq!(r.overlaps, 0);
    assert_eq!(r.torn, 0);
}

#[test]
fn threaded_anarchic_run_converges() {
    let material = MaterialField::Quadrant { eps_low: 1e-3 };
    let mesh = Mesh::regular(3).unwrap();
    let cfg = OperatorConfig {
        mode: AssemblyMode::Anarchic,
        scheduler: SchedulerConfig { workers: 4, throttle: None },
        ..Default::default()
    };
    let ops = Operators::new(&mesh, material, cfg);
    let solver_cfg = SolverConfig { max_cycles: 2000, ..Default::default() };
    let mut s = Solver::new(mesh, ops, ProblemInstance::new(material), solver_cfg, AmrConfig::default()).unwrap();
    assert_eq!(s.run(|_| {}).unwrap(), Termination::Converged);
    assert!(s.max_abs_leaf() < 1e-6);
    let stats = s.ops.scheduler_stats();
    assert_eq!(stats.pending, 0);
    assert_eq!(stats.spawned, stats.completed + stats.discarded);
}
