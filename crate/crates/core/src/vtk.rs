//! Legacy ASCII VTK output.
//!
//! Space-time meshes embed directly into VTK's three coordinates: a 1d+time
//! mesh becomes a planar quadrilateral grid (points `(x, t, 0)`, cell type 9),
//! a 2d+time mesh becomes hexahedra (points `(x, y, t)`, cell type 12). Only
//! element corners are emitted, so higher-degree fields are written as their
//! corner samples; cells carry their refinement `level`, points carry the
//! field value `u`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::assembly::FieldFunction;
use crate::mesh::{element_node_keys, SpaceTimeMesh};
use crate::Result;

/// Corner-node geometry shared by the mesh and field writers.
struct Topology {
    /// Point coordinates, already padded to three components.
    points: Vec<[f64; 3]>,
    /// Degree-1 node key of each point (used to look up field values).
    keys: Vec<[u64; 3]>,
    /// VTK-ordered point indices per leaf element.
    cells: Vec<Vec<usize>>,
    levels: Vec<u8>,
}

/// Map local lexicographic corner order to the VTK vertex order.
fn vtk_corner_order(dim: usize) -> &'static [usize] {
    match dim {
        2 => &[0, 1, 3, 2],
        3 => &[0, 1, 3, 2, 4, 5, 7, 6],
        _ => unreachable!("space-time meshes are 2- or 3-dimensional"),
    }
}

fn build_topology(mesh: &SpaceTimeMesh) -> Result<Topology> {
    let dim = mesh.dim();
    let corners = mesh.nodes(1)?;
    let order = vtk_corner_order(dim);

    let mut index_of: BTreeMap<[u64; 3], usize> = BTreeMap::new();
    let mut points = Vec::new();
    let mut keys = Vec::new();
    let mut cells = Vec::with_capacity(mesh.len());
    let mut levels = Vec::with_capacity(mesh.len());

    for &leaf in mesh.leaves() {
        let local = element_node_keys(leaf, 1, dim);
        let mut cell = Vec::with_capacity(local.len());
        for &slot in order {
            let key = local[slot];
            let idx = *index_of.entry(key).or_insert_with(|| {
                let id = corners
                    .id_of_key(&key)
                    .expect("leaf corner missing from corner node set");
                points.push(corners.position(id));
                keys.push(key);
                points.len() - 1
            });
            cell.push(idx);
        }
        cells.push(cell);
        levels.push(leaf.level());
    }

    Ok(Topology {
        points,
        keys,
        cells,
        levels,
    })
}

fn write_header<W: Write>(w: &mut W, title: &str, topo: &Topology, dim: usize) -> Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;

    writeln!(w, "POINTS {} double", topo.points.len())?;
    for p in &topo.points {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }

    let per_cell = 1 << (dim - 1) << 1; // 2^dim corners
    let total = topo.cells.len() * (per_cell + 1);
    writeln!(w, "CELLS {} {}", topo.cells.len(), total)?;
    for cell in &topo.cells {
        write!(w, "{}", cell.len())?;
        for idx in cell {
            write!(w, " {idx}")?;
        }
        writeln!(w)?;
    }

    let cell_type = if dim == 2 { 9 } else { 12 };
    writeln!(w, "CELL_TYPES {}", topo.cells.len())?;
    for _ in &topo.cells {
        writeln!(w, "{cell_type}")?;
    }

    writeln!(w, "CELL_DATA {}", topo.levels.len())?;
    writeln!(w, "SCALARS level int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for level in &topo.levels {
        writeln!(w, "{level}")?;
    }
    Ok(())
}

/// Write the mesh alone (corner geometry plus per-cell refinement level).
pub fn write_mesh_vtk<W: Write>(w: &mut W, mesh: &SpaceTimeMesh, title: &str) -> Result<()> {
    let topo = build_topology(mesh)?;
    write_header(w, title, &topo, mesh.dim())
}

/// Write a finite element field: mesh geometry plus the nodal values `u`
/// sampled at element corners.
pub fn write_field_vtk<W: Write>(w: &mut W, field: &FieldFunction, title: &str) -> Result<()> {
    let mesh = field.mesh();
    let topo = build_topology(mesh)?;
    write_header(w, title, &topo, mesh.dim())?;

    let nodes = field.node_set();
    let k = nodes.degree() as u64;
    writeln!(w, "POINT_DATA {}", topo.points.len())?;
    writeln!(w, "SCALARS u double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for key in &topo.keys {
        let scaled = [key[0] * k, key[1] * k, key[2] * k];
        let id = nodes
            .id_of_key(&scaled)
            .expect("corner node missing from field node set");
        writeln!(w, "{}", field.values()[id as usize])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::interpolate_nodal;
    use crate::mesh::{ElementId, SpaceTimeDomain};

    fn linear_values(mesh: &SpaceTimeMesh, nodes: &crate::mesh::NodeSet) -> Vec<f64> {
        let hanging = mesh.hanging_nodes(nodes).unwrap();
        interpolate_nodal(nodes, &hanging, mesh.dim_space(), |x: &[f64], t: f64| {
            let space: f64 = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
            space + (x.len() + 1) as f64 * t
        })
    }

    #[test]
    fn line_mesh_writes_quads() {
        let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 1).unwrap();
        let nodes = mesh.nodes(1).unwrap();
        let values = linear_values(&mesh, &nodes);
        let field = FieldFunction::new(&mesh, &nodes, values).unwrap();
        let mut buf = Vec::new();
        write_field_vtk(&mut buf, &field, "line").unwrap();
        let text = String::from_utf8(buf).unwrap();

        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELLS 4 20"));
        assert!(text.contains("\n9\n"), "quad cell type: {text}");
        assert!(text.contains("SCALARS level int 1"));
        assert!(text.contains("SCALARS u double 1"));
        // Corner (1, 1, 0) carries u = 1 + 2 = 3.
        assert!(text.contains("1 1 0"));
    }

    #[test]
    fn quadratic_field_samples_corners_only() {
        let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 0).unwrap();
        let nodes = mesh.nodes(2).unwrap();
        let values = linear_values(&mesh, &nodes);
        let field = FieldFunction::new(&mesh, &nodes, values).unwrap();
        let mut buf = Vec::new();
        write_field_vtk(&mut buf, &field, "k2").unwrap();
        let text = String::from_utf8(buf).unwrap();
        // One root element: 4 corner points even though the field has 9 nodes.
        assert!(text.contains("POINTS 4 double"));
        let data: Vec<&str> = text.lines().skip_while(|l| *l != "LOOKUP_TABLE default").collect();
        assert!(data.len() >= 2);
    }

    #[test]
    fn hex_mesh_uses_cell_type_12_and_shares_points() {
        let domain = SpaceTimeDomain::unit(2).unwrap();
        let mesh = SpaceTimeMesh::uniform(domain, 1).unwrap();
        let mut buf = Vec::new();
        write_mesh_vtk(&mut buf, &mesh, "box").unwrap();
        let text = String::from_utf8(buf).unwrap();
        // 8 hexahedra sharing corners: 3^3 = 27 distinct points.
        assert!(text.contains("POINTS 27 double"));
        assert!(text.contains("CELLS 8 72"));
        assert!(text.contains("\n12\n"));
    }

    #[test]
    fn refined_mesh_levels_follow_leaves() {
        let domain = SpaceTimeDomain::unit(1).unwrap();
        let base = SpaceTimeMesh::uniform(domain, 1).unwrap();
        let mesh = base.refine(&[base.leaves()[0]]).unwrap();
        let nodes = mesh.nodes(1).unwrap();
        let values = linear_values(&mesh, &nodes);
        let field = FieldFunction::new(&mesh, &nodes, values).unwrap();
        let mut buf = Vec::new();
        write_field_vtk(&mut buf, &field, "amr").unwrap();
        let text = String::from_utf8(buf).unwrap();

        let levels: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("SCALARS level"))
            .skip(2)
            .take(mesh.len())
            .collect();
        let ones = levels.iter().filter(|l| **l == "1").count();
        let twos = levels.iter().filter(|l| **l == "2").count();
        assert_eq!((ones, twos), (3, 4));
        // Writing again yields identical bytes.
        let mut again = Vec::new();
        write_field_vtk(&mut again, &field, "amr").unwrap();
        assert_eq!(text.as_bytes(), again);
        // Sanity: the refined corner keys really are leaf corners.
        assert!(mesh.leaf_index(ElementId::new(2, [0, 0, 0])).is_some());
    }
}
