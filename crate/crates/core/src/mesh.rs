//! Hierarchical hypercube meshes of the space-time cylinder.
//!
//! The mesh is a forest with a single root box (the whole space-time domain)
//! refined by isotropic bisection: every refinement of an element produces
//! 2^dim children, where `dim = d + 1` counts the spatial axes plus time
//! (time is always the last axis). Only leaves are stored; an element is
//! identified by its refinement level and its integer anchor on the level's
//! virtual grid, which makes identities stable across refinement and
//! balancing. Leaf order is the depth-first Morton (Z-curve) order, so all
//! traversals and downstream outputs are deterministic.

use std::collections::HashMap;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};

/// Deepest representable refinement level (anchor coordinates use u32 and
/// node keys use u64 with headroom for degree 3).
pub const MAX_LEVEL: u8 = 30;

/// Hard cap on stored leaves; uniform construction refuses beyond this.
const MAX_ELEMENTS: u64 = 1 << 26;

const REL_TOL: f64 = 1e-12;

/// Which part of the space-time boundary a face belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Lateral boundary: spatial boundary crossed with (0,T].
    GammaS,
    /// Initial slab t = t0 (Dirichlet, carries the initial condition).
    Gamma0,
    /// Final slab t = T (free; the discrete norm has a trace term here).
    GammaT,
}

/// Stable element identity: refinement level plus integer anchor (the
/// element's lower corner in units of 2^-level per axis). Unused axes are 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementId {
    level: u8,
    anchor: [u32; 3],
}

impl ElementId {
    pub fn root() -> Self {
        ElementId { level: 0, anchor: [0; 3] }
    }

    /// Name an element by level and anchor (in units of the level's grid).
    /// Whether it exists in a particular mesh is a separate question that
    /// the mesh operations answer.
    pub fn new(level: u8, anchor: [u32; 3]) -> Self {
        ElementId { level, anchor }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn anchor(&self) -> [u32; 3] {
        self.anchor
    }

    /// Depth-first Z-curve key: Morton interleave of the anchor scaled to
    /// MAX_LEVEL, with the level as tie-breaker (an element sorts before its
    /// descendants). Total order over all elements of all levels.
    pub fn canonical_key(&self) -> (u128, u8) {
        let shift = (MAX_LEVEL - self.level) as u32;
        let scaled = [
            (self.anchor[0] as u128) << shift,
            (self.anchor[1] as u128) << shift,
            (self.anchor[2] as u128) << shift,
        ];
        let mut key: u128 = 0;
        for bit in (0..MAX_LEVEL as u32).rev() {
            for s in scaled {
                key = (key << 1) | ((s >> bit) & 1);
            }
        }
        (key, self.level)
    }

    pub fn parent(&self) -> Option<ElementId> {
        if self.level == 0 {
            return None;
        }
        Some(ElementId {
            level: self.level - 1,
            anchor: [self.anchor[0] >> 1, self.anchor[1] >> 1, self.anchor[2] >> 1],
        })
    }

    /// The 2^dim children, in lexicographic octant order (axis 0 fastest).
    pub fn children(&self, dim: usize) -> Vec<ElementId> {
        let mut out = Vec::with_capacity(1 << dim);
        for octant in 0..(1u32 << dim) {
            let mut anchor = [0u32; 3];
            for (axis, slot) in anchor.iter_mut().enumerate().take(dim) {
                *slot = (self.anchor[axis] << 1) | ((octant >> axis) & 1);
            }
            out.push(ElementId { level: self.level + 1, anchor });
        }
        out
    }

    /// Same-level neighbor in the given direction, None past the domain edge.
    pub fn same_level_neighbor(&self, axis: usize, positive: bool) -> Option<ElementId> {
        let cells = 1u32 << self.level;
        let mut anchor = self.anchor;
        if positive {
            if anchor[axis] + 1 >= cells {
                return None;
            }
            anchor[axis] += 1;
        } else {
            if anchor[axis] == 0 {
                return None;
            }
            anchor[axis] -= 1;
        }
        Some(ElementId { level: self.level, anchor })
    }
}

impl PartialOrd for ElementId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ElementId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical_key().cmp(&other.canonical_key())
    }
}

/// The space-time box U x (t0, T], with U an axis-aligned box in d = 1 or 2
/// spatial dimensions. Axis `dim_space` is time.
#[derive(Debug, Clone)]
pub struct SpaceTimeDomain {
    dim_space: usize,
    extent: [[f64; 2]; 3],
}

impl SpaceTimeDomain {
    /// Unit cylinder [0,1]^d x (0,1].
    pub fn unit(dim_space: usize) -> Result<Self> {
        Self::new(dim_space, &[[0.0, 1.0]; 3])
    }

    /// General box; only the first `dim_space + 1` extents are read.
    pub fn new(dim_space: usize, extent: &[[f64; 2]; 3]) -> Result<Self> {
        if dim_space < 1 || dim_space > 2 {
            return Err(Error::domain(format!(
                "spatial dimension {dim_space} unsupported (need 1 or 2)"
            )));
        }
        let mut stored = [[0.0, 1.0]; 3];
        for axis in 0..=dim_space {
            let [lo, hi] = extent[axis];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::domain(format!(
                    "degenerate extent [{lo}, {hi}] on axis {axis}"
                )));
            }
            stored[axis] = [lo, hi];
        }
        Ok(SpaceTimeDomain { dim_space, extent: stored })
    }

    pub fn dim_space(&self) -> usize {
        self.dim_space
    }

    /// Number of mesh axes (space plus time).
    pub fn dim(&self) -> usize {
        self.dim_space + 1
    }

    pub fn extent(&self, axis: usize) -> [f64; 2] {
        self.extent[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.extent[axis][1] - self.extent[axis][0]
    }

    pub fn time_origin(&self) -> f64 {
        self.extent[self.dim_space][0]
    }

    pub fn final_time(&self) -> f64 {
        self.extent[self.dim_space][1]
    }

    /// Boundary classification of a point, by coordinate comparison with
    /// relative tolerance. The initial slab wins at t = t0 (the lateral
    /// boundary is open there), the lateral boundary wins elsewhere, so
    /// the edge of the final slab stays Dirichlet.
    pub fn classify_boundary(&self, p: &[f64; 3]) -> Option<BoundaryTag> {
        let taxis = self.dim_space;
        let ttol = REL_TOL * self.length(taxis);
        if (p[taxis] - self.extent[taxis][0]).abs() <= ttol {
            return Some(BoundaryTag::Gamma0);
        }
        for axis in 0..self.dim_space {
            let tol = REL_TOL * self.length(axis);
            if (p[axis] - self.extent[axis][0]).abs() <= tol
                || (p[axis] - self.extent[axis][1]).abs() <= tol
            {
                return Some(BoundaryTag::GammaS);
            }
        }
        if (p[taxis] - self.extent[taxis][1]).abs() <= ttol {
            return Some(BoundaryTag::GammaT);
        }
        None
    }
}

/// Conformity and neighborhood of one mesh face.
#[derive(Debug, Clone)]
pub enum FaceKind {
    /// On the domain boundary; `at_upper` tells which side of the element.
    Boundary {
        element: ElementId,
        at_upper: bool,
        tag: BoundaryTag,
    },
    /// Shared by two same-level leaves; `neg` is on the lower-coordinate side.
    Conforming { neg: ElementId, pos: ElementId },
    /// Coarse element against 2^(dim-1) fine sub-faces.
    Hanging {
        coarse: ElementId,
        /// True when the coarse element sits on the lower-coordinate side.
        coarse_on_neg: bool,
        /// Fine leaves, one per sub-face, in canonical order.
        fine: Vec<ElementId>,
    },
}

/// A face of the leaf tessellation; `axis` is the face normal direction.
#[derive(Debug, Clone)]
pub struct Face {
    pub axis: usize,
    pub kind: FaceKind,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        !matches!(self.kind, FaceKind::Boundary { .. })
    }

    pub fn boundary_tag(&self) -> Option<BoundaryTag> {
        match &self.kind {
            FaceKind::Boundary { tag, .. } => Some(*tag),
            _ => None,
        }
    }
}

/// Nodes of the degree-k nodal basis over all leaves. A node is identified
/// by integer coordinates on the virtual grid of k * 2^MAX_LEVEL cells per
/// axis, so nodes shared between elements of different levels coincide
/// exactly. `keys` is sorted; the index in it is the node id used everywhere.
#[derive(Debug)]
pub struct NodeSet {
    degree: usize,
    dim: usize,
    keys: Vec<[u64; 3]>,
    id_of: HashMap<[u64; 3], u32>,
    positions: Vec<[f64; 3]>,
}

impl NodeSet {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn position(&self, id: u32) -> [f64; 3] {
        self.positions[id as usize]
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn id_of_key(&self, key: &[u64; 3]) -> Option<u32> {
        self.id_of.get(key).copied()
    }

    /// Node ids of one element in local lexicographic order (axis 0 fastest),
    /// matching [`BasisSpec`] node order.
    pub fn element_nodes(&self, elem: ElementId) -> Vec<u32> {
        let keys = element_node_keys(elem, self.degree, self.dim);
        keys.iter()
            .map(|k| {
                *self
                    .id_of
                    .get(k)
                    .expect("element node missing from node set (mesh/degree mismatch)")
            })
            .collect()
    }
}

/// Integer node keys of one element, local lexicographic order.
pub fn element_node_keys(elem: ElementId, degree: usize, dim: usize) -> Vec<[u64; 3]> {
    let shift = (MAX_LEVEL - elem.level()) as u32;
    let k = degree as u64;
    let n1 = degree + 1;
    let base: Vec<u64> = (0..dim)
        .map(|axis| (elem.anchor()[axis] as u64) * k)
        .collect();
    let total = n1.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rest = flat;
        let mut key = [0u64; 3];
        for (axis, b) in base.iter().enumerate() {
            let j = (rest % n1) as u64;
            rest /= n1;
            key[axis] = (b + j) << shift;
        }
        out.push(key);
    }
    out
}

/// A constrained (hanging) node: its coefficient must equal the weighted
/// combination of master node coefficients. Masters are never hanging
/// themselves (chains through repeated size jumps are resolved), and the
/// weights always sum to 1.
#[derive(Debug, Clone)]
pub struct HangingNode {
    pub node: u32,
    pub masters: Vec<(u32, f64)>,
}

/// Leaf-only view of the refinement forest.
#[derive(Debug, Clone)]
pub struct SpaceTimeMesh {
    domain: SpaceTimeDomain,
    leaves: Vec<ElementId>,
    index: HashMap<ElementId, u32>,
    max_level_present: u8,
}

impl SpaceTimeMesh {
    /// Uniformly refined mesh with 2^(dim*level) elements.
    pub fn uniform(domain: SpaceTimeDomain, level: u8) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::capacity(format!(
                "level {level} exceeds the maximum {MAX_LEVEL}"
            )));
        }
        let dim = domain.dim();
        let bits = dim as u32 * level as u32;
        if bits >= 63 || 1u64 << bits > MAX_ELEMENTS {
            return Err(Error::capacity(format!(
                "uniform level {level} in {dim} axes exceeds the element cap {MAX_ELEMENTS}"
            )));
        }
        let count = 1u64 << bits;
        let cells = 1u32 << level;
        let mut leaves = Vec::with_capacity(count as usize);
        let mut anchor = [0u32; 3];
        loop {
            leaves.push(ElementId { level, anchor });
            // Odometer increment over the first `dim` axes.
            let mut axis = 0;
            loop {
                if axis == dim {
                    break;
                }
                anchor[axis] += 1;
                if anchor[axis] < cells {
                    break;
                }
                anchor[axis] = 0;
                axis += 1;
            }
            if axis == dim {
                break;
            }
        }
        Ok(Self::from_leaves(domain, leaves))
    }

    fn from_leaves(domain: SpaceTimeDomain, mut leaves: Vec<ElementId>) -> Self {
        leaves.sort_unstable();
        let mut index = HashMap::with_capacity(leaves.len());
        let mut max_level = 0;
        for (i, &e) in leaves.iter().enumerate() {
            index.insert(e, i as u32);
            max_level = max_level.max(e.level());
        }
        SpaceTimeMesh {
            domain,
            leaves,
            index,
            max_level_present: max_level,
        }
    }

    pub fn domain(&self) -> &SpaceTimeDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn dim_space(&self) -> usize {
        self.domain.dim_space()
    }

    pub fn leaves(&self) -> &[ElementId] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn is_leaf(&self, e: ElementId) -> bool {
        self.index.contains_key(&e)
    }

    /// Position of a leaf in the canonical `leaves()` order.
    pub fn leaf_index(&self, e: ElementId) -> Option<usize> {
        self.index.get(&e).map(|&i| i as usize)
    }

    pub fn max_level(&self) -> u8 {
        self.max_level_present
    }

    pub fn min_level(&self) -> u8 {
        self.leaves.iter().map(|e| e.level()).min().unwrap_or(0)
    }

    /// Physical lower corner and per-axis sizes of an element.
    pub fn element_box(&self, e: ElementId) -> ([f64; 3], [f64; 3]) {
        let scale = 1.0 / (1u64 << e.level()) as f64;
        let mut lower = [0.0; 3];
        let mut size = [0.0; 3];
        for axis in 0..self.dim() {
            let [lo, _] = self.domain.extent(axis);
            let len = self.domain.length(axis);
            lower[axis] = lo + e.anchor()[axis] as f64 * scale * len;
            size[axis] = scale * len;
        }
        (lower, size)
    }

    /// Mesh size h_K: the largest per-axis side (all sides are equal on a
    /// cube domain).
    pub fn element_size(&self, e: ElementId) -> f64 {
        let (_, size) = self.element_box(e);
        size[..self.dim()].iter().cloned().fold(0.0, f64::max)
    }

    pub fn element_volume(&self, e: ElementId) -> f64 {
        let (_, size) = self.element_box(e);
        size[..self.dim()].iter().product()
    }

    /// Diameter over inscribed-sphere diameter; sqrt(dim) for cubes.
    pub fn shape_ratio(&self, e: ElementId) -> f64 {
        let (_, size) = self.element_box(e);
        let diam = size[..self.dim()].iter().map(|s| s * s).sum::<f64>().sqrt();
        let rho = size[..self.dim()].iter().cloned().fold(f64::INFINITY, f64::min);
        diam / rho
    }

    /// Replace each marked leaf by its 2^dim children. Marks must name
    /// current leaves; duplicates are tolerated.
    pub fn refine(&self, marked: &[ElementId]) -> Result<Self> {
        let mut marks: Vec<ElementId> = marked.to_vec();
        marks.sort_unstable();
        marks.dedup();
        for &m in &marks {
            if !self.is_leaf(m) {
                return Err(Error::InvalidMark(m));
            }
            if m.level() >= MAX_LEVEL {
                return Err(Error::capacity(format!(
                    "refining element at level {} exceeds the maximum {MAX_LEVEL}",
                    m.level()
                )));
            }
        }
        let dim = self.dim();
        let grown = self.leaves.len() + marks.len() * ((1 << dim) - 1);
        if grown as u64 > MAX_ELEMENTS {
            return Err(Error::capacity(format!(
                "refinement would produce {grown} elements (cap {MAX_ELEMENTS})"
            )));
        }
        let mut leaves = Vec::with_capacity(grown);
        for &e in &self.leaves {
            if marks.binary_search(&e).is_ok() {
                leaves.extend(e.children(dim));
            } else {
                leaves.push(e);
            }
        }
        Ok(Self::from_leaves(self.domain.clone(), leaves))
    }

    /// Smallest refinement superset in which face-adjacent leaves differ by
    /// at most one level. Only forced elements are refined, so the closure
    /// is minimal; repeated application is the identity.
    pub fn balance_2to1(&self) -> Result<Self> {
        let mut mesh = self.clone();
        loop {
            let mut marks: Vec<ElementId> = Vec::new();
            for &e in &mesh.leaves {
                'dirs: for axis in 0..mesh.dim() {
                    for positive in [false, true] {
                        let region = match e.same_level_neighbor(axis, positive) {
                            Some(r) => r,
                            None => continue,
                        };
                        if mesh.is_leaf(region) || mesh.ancestor_leaf(region).is_some() {
                            continue;
                        }
                        // The neighbor region is refined; if any leaf on the
                        // shared face is more than one level deeper, e must
                        // split too.
                        let depth = mesh.max_face_depth(region, axis, !positive, e.level())?;
                        if depth > e.level() + 1 {
                            marks.push(e);
                            continue 'dirs;
                        }
                    }
                }
            }
            if marks.is_empty() {
                return Ok(mesh);
            }
            mesh = mesh.refine(&marks)?;
        }
    }

    /// Leaf equal to `e` or the leaf that is a strict ancestor of `e`.
    fn ancestor_leaf(&self, e: ElementId) -> Option<ElementId> {
        let mut cur = e;
        loop {
            if self.is_leaf(cur) {
                return Some(cur);
            }
            cur = cur.parent()?;
        }
    }

    /// Deepest leaf level within `region` restricted to its face
    /// (`at_upper` picks which face along `axis`). Stops early once the
    /// level passes `stop_above` + 1 since callers only need the 2:1 test.
    fn max_face_depth(
        &self,
        region: ElementId,
        axis: usize,
        at_upper: bool,
        stop_above: u8,
    ) -> Result<u8> {
        if self.is_leaf(region) {
            return Ok(region.level());
        }
        if region.level() >= self.max_level_present {
            return Err(Error::domain(format!(
                "incomplete refinement tree near {region:?}"
            )));
        }
        let mut deepest = 0u8;
        for child in self.children_on_face(region, axis, at_upper) {
            let d = self.max_face_depth(child, axis, at_upper, stop_above)?;
            deepest = deepest.max(d);
            if deepest > stop_above + 1 {
                return Ok(deepest);
            }
        }
        Ok(deepest)
    }

    /// Children of `region` touching its lower (at_upper = false) or upper
    /// face along `axis`.
    fn children_on_face(&self, region: ElementId, axis: usize, at_upper: bool) -> Vec<ElementId> {
        region
            .children(self.dim())
            .into_iter()
            .filter(|c| (c.anchor()[axis] & 1) == u32::from(at_upper))
            .collect()
    }

    /// All leaves of `region` whose boxes touch the given face of `region`.
    fn collect_face_leaves(
        &self,
        region: ElementId,
        axis: usize,
        at_upper: bool,
        out: &mut Vec<ElementId>,
    ) -> Result<()> {
        if self.is_leaf(region) {
            out.push(region);
            return Ok(());
        }
        if region.level() >= self.max_level_present {
            return Err(Error::domain(format!(
                "incomplete refinement tree near {region:?}"
            )));
        }
        for child in self.children_on_face(region, axis, at_upper) {
            self.collect_face_leaves(child, axis, at_upper, out)?;
        }
        Ok(())
    }

    /// Unique faces of the leaf tessellation. Boundary faces carry their
    /// tag, interior faces their conformity. Requires 2:1 balance.
    pub fn enumerate_faces(&self) -> Result<Vec<Face>> {
        let dim = self.dim();
        let mut faces = Vec::new();
        for &e in &self.leaves {
            for axis in 0..dim {
                for positive in [false, true] {
                    match e.same_level_neighbor(axis, positive) {
                        None => {
                            let tag = self.boundary_tag_of_face(e, axis, positive)?;
                            faces.push(Face {
                                axis,
                                kind: FaceKind::Boundary {
                                    element: e,
                                    at_upper: positive,
                                    tag,
                                },
                            });
                        }
                        Some(region) => {
                            if let Some(&_) = self.index.get(&region) {
                                // Conforming; emit once, from the lower side.
                                if positive {
                                    faces.push(Face {
                                        axis,
                                        kind: FaceKind::Conforming { neg: e, pos: region },
                                    });
                                }
                                continue;
                            }
                            if self.ancestor_leaf(region).is_some() {
                                // e is the fine side; the coarse side emits.
                                continue;
                            }
                            // e is coarse against a refined region.
                            let mut fine = Vec::with_capacity(1 << (dim - 1));
                            self.collect_face_leaves(region, axis, !positive, &mut fine)?;
                            for &f in &fine {
                                if f.level() != e.level() + 1 {
                                    return Err(Error::Unbalanced(e));
                                }
                            }
                            fine.sort_unstable();
                            faces.push(Face {
                                axis,
                                kind: FaceKind::Hanging {
                                    coarse: e,
                                    coarse_on_neg: positive,
                                    fine,
                                },
                            });
                        }
                    }
                }
            }
        }
        Ok(faces)
    }

    fn boundary_tag_of_face(&self, e: ElementId, axis: usize, at_upper: bool) -> Result<BoundaryTag> {
        let (lower, size) = self.element_box(e);
        let coord = if at_upper { lower[axis] + size[axis] } else { lower[axis] };
        let [lo, hi] = self.domain.extent(axis);
        let tol = REL_TOL * self.domain.length(axis);
        if axis == self.dim_space() {
            if (coord - lo).abs() <= tol {
                return Ok(BoundaryTag::Gamma0);
            }
            if (coord - hi).abs() <= tol {
                return Ok(BoundaryTag::GammaT);
            }
        } else if (coord - lo).abs() <= tol || (coord - hi).abs() <= tol {
            return Ok(BoundaryTag::GammaS);
        }
        Err(Error::domain(format!(
            "face of {e:?} on axis {axis} is not on the domain boundary"
        )))
    }

    /// All nodes of the degree-k nodal space over the leaves.
    pub fn nodes(&self, degree: usize) -> Result<NodeSet> {
        if degree < 1 || degree > crate::basis::MAX_DEGREE {
            return Err(Error::Degree(degree));
        }
        let dim = self.dim();
        let mut id_of: HashMap<[u64; 3], u32> = HashMap::new();
        let mut keys: Vec<[u64; 3]> = Vec::new();
        for &e in &self.leaves {
            for key in element_node_keys(e, degree, dim) {
                if !id_of.contains_key(&key) {
                    id_of.insert(key, 0);
                    keys.push(key);
                }
            }
        }
        keys.sort_unstable();
        if keys.len() > u32::MAX as usize {
            return Err(Error::capacity(format!("{} nodes overflow u32 ids", keys.len())));
        }
        for (i, k) in keys.iter().enumerate() {
            *id_of.get_mut(k).unwrap() = i as u32;
        }
        let denom = (degree as f64) * (1u64 << MAX_LEVEL) as f64;
        let positions = keys
            .iter()
            .map(|k| {
                let mut p = [0.0; 3];
                for axis in 0..dim {
                    let [lo, _] = self.domain.extent(axis);
                    p[axis] = lo + (k[axis] as f64 / denom) * self.domain.length(axis);
                }
                p
            })
            .collect();
        Ok(NodeSet {
            degree,
            dim,
            keys,
            id_of,
            positions,
        })
    }

    /// Constrained nodes on coarse/fine interfaces. A fine-side node on a
    /// coarse face that is not itself a node of the coarse element must
    /// carry the coarse trace: its masters are the coarse face nodes and the
    /// weights are the coarse shape functions evaluated at its position.
    /// Chains (masters that are hanging in turn) are substituted away.
    pub fn hanging_nodes(&self, nodes: &NodeSet) -> Result<Vec<HangingNode>> {
        let degree = nodes.degree();
        let dim = self.dim();
        let basis1d = BasisSpec::new(degree, 1)?;
        let faces = self.enumerate_faces()?;
        let mut raw: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();

        for face in &faces {
            let (coarse, fine) = match &face.kind {
                FaceKind::Hanging { coarse, fine, .. } => (*coarse, fine),
                _ => continue,
            };
            let shift = (MAX_LEVEL - coarse.level()) as u32;
            let span = (degree as u64) << shift; // coarse element extent in key units
            let coarse_lo: Vec<u64> = (0..dim)
                .map(|axis| ((coarse.anchor()[axis] as u64) * degree as u64) << shift)
                .collect();
            let coarse_node_keys = element_node_keys(coarse, degree, dim);

            for &felem in fine {
                for fkey in element_node_keys(felem, degree, dim) {
                    // Offset of the node inside the coarse element, in key units.
                    let mut offset = [0u64; 3];
                    let mut inside = true;
                    for axis in 0..dim {
                        let lo = coarse_lo[axis];
                        if fkey[axis] < lo || fkey[axis] > lo + span {
                            inside = false;
                            break;
                        }
                        offset[axis] = fkey[axis] - lo;
                    }
                    if !inside {
                        continue;
                    }
                    // Restrict to nodes exactly on the shared face plane.
                    let face_offset = offset[face.axis];
                    if face_offset != 0 && face_offset != span {
                        continue;
                    }
                    // Node of the coarse element itself: regular, not hanging.
                    let unit = 1u64 << shift;
                    if (0..dim).all(|axis| offset[axis] % unit == 0) {
                        continue;
                    }
                    let node_id = nodes
                        .id_of_key(&fkey)
                        .expect("fine node missing from node set");
                    if raw.contains_key(&node_id) {
                        continue;
                    }
                    // Coarse 1d shape values at the node's reference position.
                    let lambda: Vec<f64> =
                        (0..dim).map(|axis| offset[axis] as f64 / span as f64).collect();
                    let per_axis: Vec<Vec<f64>> = (0..dim)
                        .map(|axis| {
                            basis1d
                                .shape_values(&[lambda[axis], 0.0, 0.0])
                                .expect("lambda in [0,1]")
                        })
                        .collect();
                    let mut masters = Vec::new();
                    for (j, ckey) in coarse_node_keys.iter().enumerate() {
                        let mut w = 1.0;
                        let mut rest = j;
                        for axis_vals in per_axis.iter().take(dim) {
                            let m = rest % (degree + 1);
                            rest /= degree + 1;
                            w *= axis_vals[m];
                        }
                        if w.abs() > 1e-14 {
                            let cid = nodes
                                .id_of_key(ckey)
                                .expect("coarse node missing from node set");
                            masters.push((cid, w));
                        }
                    }
                    raw.insert(node_id, masters);
                }
            }
        }

        // Resolve chains: replace hanging masters by their own masters until
        // every master is a regular node. Bounded by the level spread.
        let mut out = Vec::with_capacity(raw.len());
        let mut ids: Vec<u32> = raw.keys().copied().collect();
        ids.sort_unstable();
        for node in ids {
            let mut terms = raw[&node].clone();
            for _round in 0..usize::from(MAX_LEVEL) + 1 {
                if !terms.iter().any(|(m, _)| raw.contains_key(m)) {
                    break;
                }
                let mut next: Vec<(u32, f64)> = Vec::with_capacity(terms.len());
                for (m, w) in terms {
                    match raw.get(&m) {
                        Some(sub) => next.extend(sub.iter().map(|&(mm, ww)| (mm, w * ww))),
                        None => next.push((m, w)),
                    }
                }
                terms = next;
            }
            debug_assert!(!terms.iter().any(|(m, _)| raw.contains_key(m)));
            terms.sort_by_key(|&(m, _)| m);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(terms.len());
            for (m, w) in terms {
                match merged.last_mut() {
                    Some((lm, lw)) if *lm == m => *lw += w,
                    _ => merged.push((m, w)),
                }
            }
            merged.retain(|&(_, w)| w.abs() > 1e-14);
            out.push(HangingNode { node, masters: merged });
        }
        Ok(out)
    }

    /// Leaf containing the point (ties at internal faces resolve to the
    /// upper side). The point must lie in the closed domain.
    pub fn find_leaf(&self, p: &[f64; 3]) -> Result<ElementId> {
        let dim = self.dim();
        let mut unit = [0.0; 3];
        for axis in 0..dim {
            let [lo, hi] = self.domain.extent(axis);
            let len = hi - lo;
            let u = (p[axis] - lo) / len;
            if !(-REL_TOL..=1.0 + REL_TOL).contains(&u) {
                return Err(Error::domain(format!(
                    "point {:?} outside the space-time domain",
                    &p[..dim]
                )));
            }
            unit[axis] = u.clamp(0.0, 1.0);
        }
        for level in 0..=self.max_level_present {
            let cells = 1u64 << level;
            let mut anchor = [0u32; 3];
            for axis in 0..dim {
                let idx = ((unit[axis] * cells as f64).floor() as u64).min(cells - 1);
                anchor[axis] = idx as u32;
            }
            let candidate = ElementId { level, anchor };
            if self.is_leaf(candidate) {
                return Ok(candidate);
            }
        }
        Err(Error::domain(format!(
            "no leaf found for point {:?} (corrupt mesh)",
            &p[..dim]
        )))
    }

    /// Reference coordinates of `p` inside leaf `e`.
    pub fn to_reference(&self, e: ElementId, p: &[f64; 3]) -> [f64; 3] {
        let (lower, size) = self.element_box(e);
        let mut r = [0.0; 3];
        for axis in 0..self.dim() {
            r[axis] = ((p[axis] - lower[axis]) / size[axis]).clamp(0.0, 1.0);
        }
        r
    }
}
