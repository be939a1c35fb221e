use lazymg::mesh::Mesh;
use lazymg::operators::{AssemblyMode, OperatorConfig, Operators};
use lazymg::problem::MaterialField;
use lazymg::stream::read_stream;

fn offsets(ops: &Operators, mesh: &Mesh) -> Vec<usize> {
    let mut pos = 4;
    let mut out = Vec::new();
    for &id in mesh.traverse() {
        out.push(pos);
        pos += ops.store().load(id).byte_len();
    }
    out.push(pos);
    out
}

#[test]
fn refinement_splices_the_stream() {
    let material = MaterialField::Theta { theta: 16.0 };
    let mut mesh = Mesh::regular(2).unwrap();
    let mut ops = Operators::new(&mesh, material, OperatorConfig { mode: AssemblyMode::Eager, ..Default::default() });
    ops.prepare(&mesh);
    let before = ops.store().write_stream(&mesh);
    let old_order = mesh.traverse().to_vec();
    let old_off = offsets(&ops, &mesh);

    let target = mesh.leaves().nth(40).unwrap();
    let pos = old_order.iter().position(|&c| c == target).unwrap();
    let delta = mesh.refine(&[target], 3).unwrap();
    ops.on_refine(&mesh, &delta);
    let after = ops.store().write_stream(&mesh);
    let new_off = offsets(&ops, &mesh);

    // unchanged prefix, then the refined cell and its nine children, then the old suffix
    assert_eq!(after[..old_off[pos]], before[..old_off[pos]]);
    assert_eq!(mesh.traverse()[pos], target);
    assert_eq!(after[new_off[pos + 10]..], before[old_off[pos + 1]..]);
    let kids = mesh.cell(target).children.unwrap();
    assert_eq!(mesh.traverse()[pos + 1..pos + 10], kids);

    let decoded = read_stream(&after, &mesh, &material).unwrap();
    let snap = ops.snapshot();
    for (rec, &id) in decoded.iter().zip(mesh.traverse()) {
        assert_eq!(rec.a, snap[id].a);
        assert_eq!(rec.p3, snap[id].p3);
    }
    assert!(read_stream(&before, &mesh, &material).is_err());
}

#[test]
fn truncated_stream_is_corrupt() {
    let material = MaterialField::Theta { theta: 1.0 };
    let mesh = Mesh::regular(2).unwrap();
    let mut ops = Operators::new(&mesh, material, OperatorConfig { mode: AssemblyMode::Eager, ..Default::default() });
    ops.prepare(&mesh);
    let bytes = ops.store().write_stream(&mesh);
    assert!(read_stream(&bytes, &mesh, &material).is_ok());
    assert!(read_stream(&bytes[..bytes.len() - 1], &mesh, &material).is_err());
    assert!(read_stream(&bytes[1..], &mesh, &material).is_err());
}
