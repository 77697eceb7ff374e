//! Conforming triangular meshes on rectangles with newest-vertex bisection.
//!
//! Cells store their vertices so that the refinement edge is (v0, v1); the
//! newest vertex of a bisected cell is v2. Refinement produces a child mesh
//! whose P1/P2 spaces contain those of the parent exactly, which is what the
//! snapshot machinery relies on. `common_refinement` overlays two meshes from
//! the same root so that fields on sibling branches can be compared.

use crate::error::{ChnsError, Result};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

pub type MeshRef = Arc<Mesh>;

/// Axis-aligned rectangle domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn unit() -> Self {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex triples, counterclockwise, refinement edge (v0, v1).
    pub cells: Vec<[usize; 3]>,
    /// Edges (sorted vertex pairs) on the domain boundary.
    pub boundary_edges: Vec<(usize, usize)>,
    pub boundary_vertex: Vec<bool>,
    pub parent: Option<MeshRef>,
    /// For each cell, the index of the source-mesh cell it descends from.
    pub cell_parent: Vec<usize>,
    pub level: usize,
    pub id: u64,
    /// Ids of all meshes whose FE spaces are contained in this one.
    nests: Vec<u64>,
    areas: Vec<f64>,
    locator: OnceLock<CellLocator>,
    vertex_lookup: OnceLock<HashMap<(u64, u64), usize>>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        self.areas[c]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Diameter proxy: longest edge of the cell.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let [a, b, d] = self.cells[c];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pd = self.vertices[d];
        dist(pa, pb).max(dist(pb, pd)).max(dist(pd, pa))
    }

    pub fn root_id(&self) -> u64 {
        self.nests.first().copied().unwrap_or(self.id)
    }

    /// True if every function on `other` is exactly representable here.
    pub fn nests_mesh(&self, other: &Mesh) -> bool {
        self.id == other.id || self.nests.binary_search(&other.id).is_ok()
    }

    fn finalize(
        vertices: Vec<[f64; 2]>,
        cells: Vec<[usize; 3]>,
        parent: Option<MeshRef>,
        cell_parent: Vec<usize>,
        extra_nests: Vec<u64>,
    ) -> Result<Mesh> {
        let mut areas = Vec::with_capacity(cells.len());
        for (ci, cell) in cells.iter().enumerate() {
            let a = signed_area(&vertices, cell);
            if a <= 0.0 {
                return Err(ChnsError::Mesh(format!(
                    "cell {ci} has non-positive area {a}"
                )));
            }
            areas.push(a);
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for cell in &cells {
            for k in 0..3 {
                let e = sorted_edge(cell[k], cell[(k + 1) % 3]);
                *edge_count.entry(e).or_insert(0) += 1;
            }
        }
        let mut boundary_edges: Vec<(usize, usize)> = edge_count
            .iter()
            .filter_map(|(e, n)| match n {
                1 => Some(*e),
                2 => None,
                _ => Some((usize::MAX, usize::MAX)),
            })
            .collect();
        if boundary_edges.iter().any(|e| e.0 == usize::MAX) {
            return Err(ChnsError::Mesh("edge shared by more than two cells".into()));
        }
        boundary_edges.sort_unstable();
        let mut boundary_vertex = vec![false; vertices.len()];
        for &(a, b) in &boundary_edges {
            boundary_vertex[a] = true;
            boundary_vertex[b] = true;
        }
        let (level, mut nests) = match &parent {
            Some(p) => {
                let mut n = p.nests.clone();
                n.push(p.id);
                (p.level + 1, n)
            }
            None => (0, Vec::new()),
        };
        nests.extend_from_slice(&extra_nests);
        nests.sort_unstable();
        nests.dedup();
        Ok(Mesh {
            vertices,
            cells,
            boundary_edges,
            boundary_vertex,
            parent,
            cell_parent,
            level,
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
            nests,
            areas,
            locator: OnceLock::new(),
            vertex_lookup: OnceLock::new(),
        })
    }

    /// Checks conformity (every edge on 1 or 2 cells) and orientation.
    pub fn check_conforming(&self) -> Result<()> {
        // construction already guarantees both; re-verify explicitly
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for cell in &self.cells {
            for k in 0..3 {
                *edge_count
                    .entry(sorted_edge(cell[k], cell[(k + 1) % 3]))
                    .or_insert(0) += 1;
            }
        }
        for (e, n) in &edge_count {
            if *n > 2 {
                return Err(ChnsError::Mesh(format!("edge {e:?} on {n} cells")));
            }
        }
        // no hanging vertices: every vertex interior to an edge would show up
        // as a vertex strictly inside another cell's edge; NVB with closure
        // cannot produce one, but check cheaply that boundary edges close up.
        for (ci, cell) in self.cells.iter().enumerate() {
            if signed_area(&self.vertices, cell) <= 0.0 {
                return Err(ChnsError::Mesh(format!("cell {ci} not ccw")));
            }
        }
        Ok(())
    }

    fn vertex_lookup(&self) -> &HashMap<(u64, u64), usize> {
        self.vertex_lookup.get_or_init(|| {
            let mut m = HashMap::with_capacity(self.vertices.len());
            for (i, v) in self.vertices.iter().enumerate() {
                m.insert(coord_key(*v), i);
            }
            m
        })
    }

    /// Exact vertex lookup by coordinate bits.
    pub fn find_vertex(&self, p: [f64; 2]) -> Option<usize> {
        self.vertex_lookup().get(&coord_key(p)).copied()
    }

    fn locator(&self) -> &CellLocator {
        self.locator.get_or_init(|| CellLocator::build(self))
    }

    /// Locate the cell containing `p` and its barycentric coordinates.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let loc = self.locator();
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &c in loc.candidates(p) {
            let bary = self.barycentric(c, p);
            let min = bary[0].min(bary[1]).min(bary[2]);
            if min >= -1e-12 {
                return Some((c, clamp_bary(bary)));
            }
            if best.map_or(true, |(_, _, m)| min > m) {
                best = Some((c, bary, min));
            }
        }
        // tolerate slight roundoff outside the best candidate cell
        match best {
            Some((c, bary, min)) if min > -1e-9 => Some((c, clamp_bary(bary))),
            _ => None,
        }
    }

    /// Affine geometry of one cell: vertex coordinates, area, and the
    /// (constant) physical gradients of the barycentric coordinates.
    pub fn cell_geom(&self, cell: usize) -> CellGeom {
        let [a, b, c] = self.cells[cell];
        let verts = [self.vertices[a], self.vertices[b], self.vertices[c]];
        let area = self.areas[cell];
        let two_a = 2.0 * area;
        let mut grad_lambda = [[0.0; 2]; 3];
        for k in 0..3 {
            let p1 = verts[(k + 1) % 3];
            let p2 = verts[(k + 2) % 3];
            let e = [p2[0] - p1[0], p2[1] - p1[1]];
            grad_lambda[k] = [-e[1] / two_a, e[0] / two_a];
        }
        CellGeom { verts, area, grad_lambda }
    }

    pub fn barycentric(&self, cell: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.cells[cell];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pc = self.vertices[c];
        let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        let l1 = ((p[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (p[1] - pa[1])) / det;
        let l2 = ((pb[0] - pa[0]) * (p[1] - pa[1]) - (p[0] - pa[0]) * (pb[1] - pa[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Affine cell geometry data shared by assembly and field evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CellGeom {
    pub verts: [[f64; 2]; 3],
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

impl CellGeom {
    pub fn point(&self, bary: [f64; 3]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for k in 0..3 {
            p[0] += bary[k] * self.verts[k][0];
            p[1] += bary[k] * self.verts[k][1];
        }
        p
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn signed_area(vertices: &[[f64; 2]], cell: &[usize; 3]) -> f64 {
    let a = vertices[cell[0]];
    let b = vertices[cell[1]];
    let c = vertices[cell[2]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) fn sorted_edge(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn coord_key(p: [f64; 2]) -> (u64, u64) {
    (p[0].to_bits(), p[1].to_bits())
}

fn clamp_bary(b: [f64; 3]) -> [f64; 3] {
    let c = [b[0].max(0.0), b[1].max(0.0), b[2].max(0.0)];
    let s = c[0] + c[1] + c[2];
    [c[0] / s, c[1] / s, c[2] / s]
}

/// Uniform background grid for point location.
#[derive(Debug)]
struct CellLocator {
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<usize>>,
}

impl CellLocator {
    fn build(mesh: &Mesh) -> Self {
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &mesh.vertices {
            xmin = xmin.min(v[0]);
            xmax = xmax.max(v[0]);
            ymin = ymin.min(v[1]);
            ymax = ymax.max(v[1]);
        }
        let n = (mesh.n_cells() as f64).sqrt().ceil() as usize;
        let nx = n.max(1);
        let ny = n.max(1);
        let dx = ((xmax - xmin) / nx as f64).max(f64::MIN_POSITIVE);
        let dy = ((ymax - ymin) / ny as f64).max(f64::MIN_POSITIVE);
        let mut bins = vec![Vec::new(); nx * ny];
        for (ci, cell) in mesh.cells.iter().enumerate() {
            let xs = cell.map(|v| mesh.vertices[v][0]);
            let ys = cell.map(|v| mesh.vertices[v][1]);
            let bx0 = Self::bin_index(xs.iter().cloned().fold(f64::INFINITY, f64::min), xmin, dx, nx);
            let bx1 = Self::bin_index(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), xmin, dx, nx);
            let by0 = Self::bin_index(ys.iter().cloned().fold(f64::INFINITY, f64::min), ymin, dy, ny);
            let by1 = Self::bin_index(ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max), ymin, dy, ny);
            for bx in bx0..=bx1 {
                for by in by0..=by1 {
                    bins[by * nx + bx].push(ci);
                }
            }
        }
        CellLocator { x0: xmin, y0: ymin, dx, dy, nx, ny, bins }
    }

    fn bin_index(v: f64, v0: f64, dv: f64, n: usize) -> usize {
        (((v - v0) / dv).floor() as isize).clamp(0, n as isize - 1) as usize
    }

    fn candidates(&self, p: [f64; 2]) -> &[usize] {
        let bx = Self::bin_index(p[0], self.x0, self.dx, self.nx);
        let by = Self::bin_index(p[1], self.y0, self.dy, self.ny);
        &self.bins[by * self.nx + bx]
    }
}

/// Uniform triangulation of a rectangle: nx x ny squares, each split along
/// the diagonal, with the diagonal as the refinement edge of both halves.
pub fn build_rect_mesh(nx: usize, ny: usize, domain: Rect) -> Result<MeshRef> {
    if nx == 0 || ny == 0 {
        return Err(ChnsError::InvalidParameter("nx, ny must be >= 1".into()));
    }
    if domain.x1 <= domain.x0 || domain.y1 <= domain.y0 {
        return Err(ChnsError::InvalidParameter("zero-size domain".into()));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = domain.x0 + (domain.x1 - domain.x0) * i as f64 / nx as f64;
            let y = domain.y0 + (domain.y1 - domain.y0) * j as f64 / ny as f64;
            vertices.push([x, y]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let bl = vid(i, j);
            let br = vid(i + 1, j);
            let tl = vid(i, j + 1);
            let tr = vid(i + 1, j + 1);
            // refinement edge of both cells is the diagonal br-tl
            cells.push([br, tl, bl]);
            cells.push([tl, br, tr]);
        }
    }
    let n_cells = cells.len();
    Ok(Arc::new(Mesh::finalize(
        vertices,
        cells,
        None,
        (0..n_cells).collect(),
        Vec::new(),
    )?))
}

struct WorkCell {
    v: [usize; 3],
    src_parent: usize,
    alive: bool,
}

/// Working triangulation during a refinement pass.
struct Refiner {
    vertices: Vec<[f64; 2]>,
    cells: Vec<WorkCell>,
    edge_cells: HashMap<(usize, usize), Vec<usize>>,
    edge_mid: HashMap<(usize, usize), usize>,
}

impl Refiner {
    fn new(mesh: &Mesh) -> Self {
        let mut edge_cells: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let cells: Vec<WorkCell> = mesh
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| WorkCell { v: *c, src_parent: i, alive: true })
            .collect();
        for (i, c) in cells.iter().enumerate() {
            for k in 0..3 {
                edge_cells
                    .entry(sorted_edge(c.v[k], c.v[(k + 1) % 3]))
                    .or_default()
                    .push(i);
            }
        }
        Refiner {
            vertices: mesh.vertices.clone(),
            cells,
            edge_cells,
            edge_mid: HashMap::new(),
        }
    }

    fn neighbor_across(&self, cell: usize, edge: (usize, usize)) -> Option<usize> {
        self.edge_cells
            .get(&edge)?
            .iter()
            .copied()
            .find(|&c| c != cell && self.cells[c].alive)
    }

    fn midpoint(&mut self, edge: (usize, usize)) -> usize {
        if let Some(&m) = self.edge_mid.get(&edge) {
            return m;
        }
        let a = self.vertices[edge.0];
        let b = self.vertices[edge.1];
        let m = [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5];
        let id = self.vertices.len();
        self.vertices.push(m);
        self.edge_mid.insert(edge, id);
        id
    }

    fn refinement_edge(&self, cell: usize) -> (usize, usize) {
        let v = self.cells[cell].v;
        sorted_edge(v[0], v[1])
    }

    fn unlink(&mut self, cell: usize) {
        let v = self.cells[cell].v;
        for k in 0..3 {
            let e = sorted_edge(v[k], v[(k + 1) % 3]);
            if let Some(list) = self.edge_cells.get_mut(&e) {
                list.retain(|&c| c != cell);
            }
        }
        self.cells[cell].alive = false;
    }

    fn push_cell(&mut self, v: [usize; 3], src_parent: usize) -> usize {
        let id = self.cells.len();
        self.cells.push(WorkCell { v, src_parent, alive: true });
        for k in 0..3 {
            let e = sorted_edge(v[k], v[(k + 1) % 3]);
            self.edge_cells.entry(e).or_default().push(id);
        }
        id
    }

    /// Bisect one cell across its refinement edge.
    fn split(&mut self, cell: usize) -> (usize, usize) {
        let WorkCell { v: [v0, v1, v2], src_parent, .. } = self.cells[cell];
        let m = self.midpoint(sorted_edge(v0, v1));
        self.unlink(cell);
        let c1 = self.push_cell([v2, v0, m], src_parent);
        let c2 = self.push_cell([v1, v2, m], src_parent);
        (c1, c2)
    }

    /// Bisect `cell` after recursively making its refinement-edge neighbor
    /// compatible, so the result is conforming.
    fn bisect_conforming(&mut self, cell: usize) {
        if !self.cells[cell].alive {
            return;
        }
        let mut stack = vec![cell];
        while let Some(&c) = stack.last() {
            if !self.cells[c].alive {
                stack.pop();
                continue;
            }
            let edge = self.refinement_edge(c);
            match self.neighbor_across(c, edge) {
                Some(nb) if self.refinement_edge(nb) != edge => {
                    stack.push(nb);
                    if stack.len() > self.cells.len() + 4 {
                        unreachable!("newest-vertex bisection closure did not terminate");
                    }
                }
                Some(nb) => {
                    self.split(c);
                    self.split(nb);
                    stack.pop();
                }
                None => {
                    self.split(c);
                    stack.pop();
                }
            }
        }
    }
}

/// Refine `mesh` by newest-vertex bisection of all `marked` cells with
/// recursive conforming closure. An empty mark set yields an identical child.
pub fn refine(mesh: &MeshRef, marked: &[usize]) -> Result<MeshRef> {
    for &m in marked {
        if m >= mesh.n_cells() {
            return Err(ChnsError::Mesh(format!("marked cell {m} out of range")));
        }
    }
    if marked.is_empty() {
        let child = Mesh::finalize(
            mesh.vertices.clone(),
            mesh.cells.clone(),
            Some(mesh.clone()),
            (0..mesh.n_cells()).collect(),
            Vec::new(),
        )?;
        return Ok(Arc::new(child));
    }
    let mut work = Refiner::new(mesh);
    let mut marks: Vec<usize> = marked.to_vec();
    marks.sort_unstable();
    marks.dedup();
    for m in marks {
        work.bisect_conforming(m);
    }
    let vertices = work.vertices;
    let mut cells = Vec::new();
    let mut cell_parent = Vec::new();
    for wc in &work.cells {
        if wc.alive {
            cells.push(wc.v);
            cell_parent.push(wc.src_parent);
        }
    }
    Ok(Arc::new(Mesh::finalize(
        vertices,
        cells,
        Some(mesh.clone()),
        cell_parent,
        Vec::new(),
    )?))
}

/// Smallest constructed mesh whose FE spaces contain those of both inputs.
///
/// Both meshes must stem from the same root. If one already nests the other
/// it is returned as-is; otherwise `a` is refined until every vertex of `b`
/// is one of its vertices, which for newest-vertex bisection hierarchies
/// implies containment of the bisection tree.
pub fn common_refinement(a: &MeshRef, b: &MeshRef) -> Result<MeshRef> {
    if a.nests_mesh(b) {
        return Ok(a.clone());
    }
    if b.nests_mesh(a) {
        return Ok(b.clone());
    }
    if a.root_id() != b.root_id() {
        return Err(ChnsError::NoCommonMesh(format!(
            "meshes {} and {} have different roots",
            a.id, b.id
        )));
    }
    let mut current = a.clone();
    loop {
        let mut marks: Vec<usize> = Vec::new();
        let mut missing = 0usize;
        for v in &b.vertices {
            if current.find_vertex(*v).is_some() {
                continue;
            }
            missing += 1;
            match current.locate(*v) {
                Some((c, _)) => marks.push(c),
                None => {
                    return Err(ChnsError::NoCommonMesh(format!(
                        "vertex {v:?} of mesh {} not inside mesh {}",
                        b.id, current.id
                    )))
                }
            }
        }
        if missing == 0 {
            break;
        }
        marks.sort_unstable();
        marks.dedup();
        current = refine(&current, &marks)?;
    }
    // re-finalize with the extra nesting record for b and its ancestors
    let mut extra = b.nests.clone();
    extra.push(b.id);
    let mut merged = Mesh::finalize(
        current.vertices.clone(),
        current.cells.clone(),
        current.parent.clone(),
        current.cell_parent.clone(),
        extra,
    )?;
    merged.level = current.level;
    Ok(Arc::new(merged))
}
