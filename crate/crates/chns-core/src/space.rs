//! Lagrange finite element spaces of degree 1 and 2 on triangle meshes.
//!
//! Scalar dof numbering: P1 dofs are the mesh vertices; P2 dofs are the
//! vertices followed by the edge midpoints in sorted-edge order. Vector
//! spaces interleave components: dof(node, comp) = 2*node + comp.

use crate::error::{ChnsError, Result};
use crate::mesh::{sorted_edge, MeshRef};
use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

pub type FeSpaceRef = Arc<FeSpace>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degree {
    P1,
    P2,
}

#[derive(Debug)]
pub struct FeSpace {
    pub mesh: MeshRef,
    pub degree: Degree,
    pub components: usize,
    /// Per-dof homogeneous Dirichlet mask (only boundary dofs may be set).
    pub dirichlet: Vec<bool>,
    pub n_dof: usize,
    /// Scalar nodes per component.
    pub n_nodes: usize,
    /// Sorted unique edges, only populated for P2.
    pub edges: Vec<(usize, usize)>,
    edge_index: HashMap<(usize, usize), usize>,
    node_lookup: OnceLock<HashMap<(u64, u64), usize>>,
}

impl FeSpace {
    /// Scalar P1 space with natural (no-flux) boundary.
    pub fn p1(mesh: &MeshRef) -> FeSpaceRef {
        Self::build(mesh, Degree::P1, 1, false)
    }

    /// Scalar P2 space with natural boundary.
    pub fn p2(mesh: &MeshRef) -> FeSpaceRef {
        Self::build(mesh, Degree::P2, 1, false)
    }

    /// Vector-valued P2 space with zero Dirichlet trace (velocity space).
    pub fn vector_p2_dirichlet(mesh: &MeshRef) -> FeSpaceRef {
        Self::build(mesh, Degree::P2, 2, true)
    }

    /// Vector-valued P2 space with natural boundary.
    pub fn vector_p2(mesh: &MeshRef) -> FeSpaceRef {
        Self::build(mesh, Degree::P2, 2, false)
    }

    fn build(mesh: &MeshRef, degree: Degree, components: usize, dirichlet_boundary: bool) -> FeSpaceRef {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        if degree == Degree::P2 {
            for cell in &mesh.cells {
                for k in 0..3 {
                    edges.push(sorted_edge(cell[k], cell[(k + 1) % 3]));
                }
            }
            edges.sort_unstable();
            edges.dedup();
        }
        let edge_index: HashMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let n_nodes = match degree {
            Degree::P1 => mesh.n_vertices(),
            Degree::P2 => mesh.n_vertices() + edges.len(),
        };
        let n_dof = n_nodes * components;
        let mut dirichlet = vec![false; n_dof];
        if dirichlet_boundary {
            let boundary_edge_set: std::collections::HashSet<(usize, usize)> =
                mesh.boundary_edges.iter().copied().collect();
            for node in 0..n_nodes {
                let on_boundary = if node < mesh.n_vertices() {
                    mesh.boundary_vertex[node]
                } else {
                    boundary_edge_set.contains(&edges[node - mesh.n_vertices()])
                };
                if on_boundary {
                    for comp in 0..components {
                        dirichlet[node * components + comp] = true;
                    }
                }
            }
        }
        Arc::new(FeSpace {
            mesh: mesh.clone(),
            degree,
            components,
            dirichlet,
            n_dof,
            n_nodes,
            edges,
            edge_index,
            node_lookup: OnceLock::new(),
        })
    }

    /// Physical coordinates of a scalar node.
    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        if node < self.mesh.n_vertices() {
            self.mesh.vertices[node]
        } else {
            let (a, b) = self.edges[node - self.mesh.n_vertices()];
            let pa = self.mesh.vertices[a];
            let pb = self.mesh.vertices[b];
            [(pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5]
        }
    }

    /// Exact node lookup by coordinate bits.
    pub fn find_node(&self, p: [f64; 2]) -> Option<usize> {
        let lookup = self.node_lookup.get_or_init(|| {
            let mut m = HashMap::with_capacity(self.n_nodes);
            for node in 0..self.n_nodes {
                let c = self.node_coords(node);
                m.insert((c[0].to_bits(), c[1].to_bits()), node);
            }
            m
        });
        lookup.get(&(p[0].to_bits(), p[1].to_bits())).copied()
    }

    /// Scalar nodes of a cell in local order (3 for P1, 6 for P2; P2 local
    /// edge k is the edge opposite local vertex k).
    pub fn cell_nodes(&self, cell: usize) -> Vec<usize> {
        let v = self.mesh.cells[cell];
        match self.degree {
            Degree::P1 => v.to_vec(),
            Degree::P2 => {
                let nv = self.mesh.n_vertices();
                let mut nodes = v.to_vec();
                for k in 0..3 {
                    let e = sorted_edge(v[(k + 1) % 3], v[(k + 2) % 3]);
                    nodes.push(nv + self.edge_index[&e]);
                }
                nodes
            }
        }
    }

    pub fn local_size(&self) -> usize {
        match self.degree {
            Degree::P1 => 3,
            Degree::P2 => 6,
        }
    }

    pub fn same_space(&self, other: &FeSpace) -> bool {
        self.mesh.id == other.mesh.id
            && self.degree == other.degree
            && self.components == other.components
    }

    pub fn check_same_mesh(&self, other: &FeSpace) -> Result<()> {
        if self.mesh.id != other.mesh.id {
            return Err(ChnsError::SpaceMismatch(format!(
                "spaces live on meshes {} and {}",
                self.mesh.id, other.mesh.id
            )));
        }
        Ok(())
    }
}

/// P1 shape values at barycentric coordinates.
pub fn p1_shapes(bary: [f64; 3]) -> [f64; 3] {
    bary
}

/// P2 shape values at barycentric coordinates: vertex then edge functions.
pub fn p2_shapes(bary: [f64; 3]) -> [f64; 6] {
    let [l0, l1, l2] = bary;
    [
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l0,
        4.0 * l0 * l1,
    ]
}

/// Physical gradients of P2 shapes given the barycentric gradients.
pub fn p2_grads(bary: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let [l0, l1, l2] = bary;
    let mut g = [[0.0; 2]; 6];
    for d in 0..2 {
        g[0][d] = (4.0 * l0 - 1.0) * gl[0][d];
        g[1][d] = (4.0 * l1 - 1.0) * gl[1][d];
        g[2][d] = (4.0 * l2 - 1.0) * gl[2][d];
        g[3][d] = 4.0 * (l1 * gl[2][d] + l2 * gl[1][d]);
        g[4][d] = 4.0 * (l2 * gl[0][d] + l0 * gl[2][d]);
        g[5][d] = 4.0 * (l0 * gl[1][d] + l1 * gl[0][d]);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, Rect};

    #[test]
    fn dof_counts() {
        let m = build_rect_mesh(2, 2, Rect::unit()).unwrap();
        let p1 = FeSpace::p1(&m);
        assert_eq!(p1.n_dof, 9);
        let p2 = FeSpace::p2(&m);
        // 9 vertices + edges: 2x2 squares -> 12 axis edges + 4 diagonals = 16
        assert_eq!(p2.n_dof, 25);
        let v = FeSpace::vector_p2_dirichlet(&m);
        assert_eq!(v.n_dof, 50);
    }

    #[test]
    fn dirichlet_only_on_boundary() {
        let m = build_rect_mesh(4, 4, Rect::unit()).unwrap();
        let v = FeSpace::vector_p2_dirichlet(&m);
        let masked = v.dirichlet.iter().filter(|&&b| b).count();
        assert!(masked > 0);
        // interior vertex (center) must be free
        let center = m.find_vertex([0.5, 0.5]).unwrap();
        assert!(!v.dirichlet[2 * center]);
        assert!(!v.dirichlet[2 * center + 1]);
    }

    #[test]
    fn p2_partition_of_unity() {
        let bary = [0.3, 0.5, 0.2];
        let s: f64 = p2_shapes(bary).iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        let s1: f64 = p1_shapes(bary).iter().sum();
        assert!((s1 - 1.0).abs() < 1e-14);
    }
}
