//! Hand-counted mesh facts: face tallies, node counts, hanging-node weights,
//! and volume bookkeeping on small meshes where everything can be derived on
//! paper.

use stfem::mesh::{FaceKind, BoundaryTag, SpaceTimeDomain, SpaceTimeMesh};

fn face_tally(mesh: &SpaceTimeMesh) -> (usize, usize, usize, [usize; 3]) {
    let mut conforming = 0;
    let mut hanging = 0;
    let mut boundary = 0;
    let mut by_tag = [0usize; 3];
    for face in mesh.enumerate_faces().unwrap() {
        match face.kind {
            FaceKind::Conforming { .. } => conforming += 1,
            FaceKind::Hanging { ref fine, .. } => {
                assert_eq!(
                    fine.len(),
                    1 << (mesh.dim() - 1),
                    "hanging face must pair a coarse side with a full set of sub-faces"
                );
                hanging += 1;
            }
            FaceKind::Boundary { tag, .. } => {
                boundary += 1;
                by_tag[match tag {
                    BoundaryTag::GammaS => 0,
                    BoundaryTag::Gamma0 => 1,
                    BoundaryTag::GammaT => 2,
                }] += 1;
            }
        }
    }
    (conforming, hanging, boundary, by_tag)
}

fn total_volume(mesh: &SpaceTimeMesh) -> f64 {
    mesh.leaves()
        .iter()
        .map(|&e| {
            let (_, size) = mesh.element_box(e);
            (0..mesh.dim()).map(|a| size[a]).product::<f64>()
        })
        .sum()
}

/// Leaf whose lower corner sits at the domain origin.
fn origin_leaf(mesh: &SpaceTimeMesh) -> stfem::mesh::ElementId {
    *mesh
        .leaves()
        .iter()
        .find(|&&e| {
            let (lo, _) = mesh.element_box(e);
            (0..mesh.dim()).all(|a| lo[a] == 0.0)
        })
        .unwrap()
}

#[test]
fn uniform_2x2_quad_mesh_has_4_interior_and_8_boundary_faces() {
    let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 1).unwrap();
    let (conforming, hanging, boundary, by_tag) = face_tally(&mesh);
    assert_eq!(conforming, 4);
    assert_eq!(hanging, 0);
    assert_eq!(boundary, 8);
    // Two lateral sides of two edges each, then the initial and final slabs.
    assert_eq!(by_tag, [4, 2, 2]);
}

#[test]
fn uniform_2x2x2_hex_mesh_has_12_interior_and_24_boundary_faces() {
    let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(2).unwrap(), 1).unwrap();
    let (conforming, hanging, boundary, by_tag) = face_tally(&mesh);
    assert_eq!(conforming, 12);
    assert_eq!(hanging, 0);
    assert_eq!(boundary, 24);
    assert_eq!(by_tag, [16, 4, 4]);
}

#[test]
fn refining_one_corner_quad_produces_the_expected_face_census() {
    let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 1).unwrap();
    let mesh = mesh.refine(&[origin_leaf(&mesh)]).unwrap().balance_2to1().unwrap();
    assert_eq!(mesh.len(), 7, "3 coarse quads plus 4 children");
    let (conforming, hanging, boundary, by_tag) = face_tally(&mesh);
    // 4 faces among the children plus 2 between the untouched coarse quads.
    assert_eq!(conforming, 6);
    // The refined quad meets each coarse neighbor across one hanging face.
    assert_eq!(hanging, 2);
    assert_eq!(boundary, 10);
    assert_eq!(by_tag, [5, 3, 2]);
}

#[test]
fn hanging_nodes_sit_mid_edge_with_half_half_weights() {
    let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 1).unwrap();
    let mesh = mesh.refine(&[origin_leaf(&mesh)]).unwrap().balance_2to1().unwrap();
    let nodes = mesh.nodes(1).unwrap();
    let hanging = mesh.hanging_nodes(&nodes).unwrap();
    assert_eq!(hanging.len(), 2, "one mid-edge node per hanging face");
    for h in &hanging {
        assert_eq!(h.masters.len(), 2);
        let p = nodes.position(h.node);
        let mut mid = [0.0f64; 3];
        for &(m, w) in &h.masters {
            assert!((w - 0.5).abs() < 1e-15, "linear mid-edge weight must be 1/2");
            let q = nodes.position(m);
            for a in 0..3 {
                mid[a] += 0.5 * q[a];
            }
        }
        for a in 0..3 {
            assert!((p[a] - mid[a]).abs() < 1e-15, "hanging node must bisect its edge");
        }
    }
}

#[test]
fn node_counts_follow_the_tensor_product_formula() {
    let d1 = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 2).unwrap();
    assert_eq!(d1.nodes(1).unwrap().len(), 25); // (4+1)^2
    assert_eq!(d1.nodes(2).unwrap().len(), 81); // (2*4+1)^2
    assert_eq!(d1.nodes(3).unwrap().len(), 169); // (3*4+1)^2
    let d2 = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(2).unwrap(), 1).unwrap();
    assert_eq!(d2.nodes(1).unwrap().len(), 27); // 3^3
}

#[test]
fn leaf_volumes_tile_the_domain_exactly() {
    let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(2).unwrap(), 2).unwrap();
    assert!((total_volume(&mesh) - 1.0).abs() < 1e-14);
    let picks = [mesh.leaves()[0], mesh.leaves()[17], mesh.leaves()[40]];
    let refined = mesh.refine(&picks).unwrap().balance_2to1().unwrap();
    assert!(refined.len() > mesh.len());
    assert!((total_volume(&refined) - 1.0).abs() < 1e-14);
}

#[test]
fn element_size_halves_with_each_level() {
    let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 2).unwrap();
    for &e in mesh.leaves() {
        assert_eq!(mesh.element_size(e), 0.25);
    }
    let refined = mesh.refine(&[mesh.leaves()[5]]).unwrap();
    let sizes: Vec<f64> = refined.leaves().iter().map(|&e| refined.element_size(e)).collect();
    assert_eq!(sizes.iter().filter(|&&s| s == 0.125).count(), 4);
    assert_eq!(sizes.iter().filter(|&&s| s == 0.25).count(), 15);
}
