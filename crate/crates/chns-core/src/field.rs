//! Discrete fields, exact transfer between nested meshes, and Hilbert-space
//! inner products across the mesh hierarchy.

use crate::assemble;
use crate::error::{ChnsError, Result};
use crate::mesh::{common_refinement, CellGeom, MeshRef};
use crate::space::{p1_shapes, p2_grads, p2_shapes, Degree, FeSpace, FeSpaceRef};

/// One of the Hilbert spaces snapshots may be compared in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XSpace {
    L2,
    H1,
    H01,
}

#[derive(Debug, Clone)]
pub struct Field {
    pub space: FeSpaceRef,
    pub coeffs: Vec<f64>,
}

impl Field {
    pub fn zero(space: &FeSpaceRef) -> Field {
        Field { space: space.clone(), coeffs: vec![0.0; space.n_dof] }
    }

    pub fn from_coeffs(space: &FeSpaceRef, coeffs: Vec<f64>) -> Field {
        assert_eq!(coeffs.len(), space.n_dof);
        Field { space: space.clone(), coeffs }
    }

    /// Nodal interpolation of a scalar function.
    pub fn from_fn(space: &FeSpaceRef, f: impl Fn([f64; 2]) -> f64) -> Field {
        assert_eq!(space.components, 1);
        let coeffs = (0..space.n_nodes).map(|n| f(space.node_coords(n))).collect();
        Field { space: space.clone(), coeffs }
    }

    /// Nodal interpolation of a vector function; Dirichlet dofs are zeroed.
    pub fn from_fn_vector(space: &FeSpaceRef, f: impl Fn([f64; 2]) -> [f64; 2]) -> Field {
        assert_eq!(space.components, 2);
        let mut coeffs = vec![0.0; space.n_dof];
        for n in 0..space.n_nodes {
            let v = f(space.node_coords(n));
            for c in 0..2 {
                let dof = 2 * n + c;
                coeffs[dof] = if space.dirichlet[dof] { 0.0 } else { v[c] };
            }
        }
        Field { space: space.clone(), coeffs }
    }

    pub fn mesh(&self) -> &MeshRef {
        &self.space.mesh
    }

    pub fn eval_scalar(&self, cell: usize, bary: [f64; 3]) -> f64 {
        debug_assert_eq!(self.space.components, 1);
        let nodes = self.space.cell_nodes(cell);
        match self.space.degree {
            Degree::P1 => {
                let s = p1_shapes(bary);
                (0..3).map(|k| s[k] * self.coeffs[nodes[k]]).sum()
            }
            Degree::P2 => {
                let s = p2_shapes(bary);
                (0..6).map(|k| s[k] * self.coeffs[nodes[k]]).sum()
            }
        }
    }

    pub fn eval_grad_scalar(&self, cell: usize, bary: [f64; 3], geom: &CellGeom) -> [f64; 2] {
        debug_assert_eq!(self.space.components, 1);
        let nodes = self.space.cell_nodes(cell);
        let mut g = [0.0; 2];
        match self.space.degree {
            Degree::P1 => {
                for k in 0..3 {
                    for d in 0..2 {
                        g[d] += geom.grad_lambda[k][d] * self.coeffs[nodes[k]];
                    }
                }
            }
            Degree::P2 => {
                let gs = p2_grads(bary, &geom.grad_lambda);
                for k in 0..6 {
                    for d in 0..2 {
                        g[d] += gs[k][d] * self.coeffs[nodes[k]];
                    }
                }
            }
        }
        g
    }

    pub fn eval_vector(&self, cell: usize, bary: [f64; 3]) -> [f64; 2] {
        debug_assert_eq!(self.space.components, 2);
        let nodes = self.space.cell_nodes(cell);
        let shapes: Vec<f64> = match self.space.degree {
            Degree::P1 => p1_shapes(bary).to_vec(),
            Degree::P2 => p2_shapes(bary).to_vec(),
        };
        let mut v = [0.0; 2];
        for (k, n) in nodes.iter().enumerate() {
            for c in 0..2 {
                v[c] += shapes[k] * self.coeffs[2 * n + c];
            }
        }
        v
    }

    /// Gradient of a vector field: grad[c][d] = d v_c / d x_d.
    pub fn eval_vector_grad(&self, cell: usize, bary: [f64; 3], geom: &CellGeom) -> [[f64; 2]; 2] {
        debug_assert_eq!(self.space.components, 2);
        let nodes = self.space.cell_nodes(cell);
        let grads: Vec<[f64; 2]> = match self.space.degree {
            Degree::P1 => geom.grad_lambda.to_vec(),
            Degree::P2 => p2_grads(bary, &geom.grad_lambda).to_vec(),
        };
        let mut g = [[0.0; 2]; 2];
        for (k, n) in nodes.iter().enumerate() {
            for c in 0..2 {
                for d in 0..2 {
                    g[c][d] += grads[k][d] * self.coeffs[2 * n + c];
                }
            }
        }
        g
    }

    /// Evaluate at a physical point (locating the containing cell).
    pub fn eval_at(&self, p: [f64; 2]) -> Result<Vec<f64>> {
        let (cell, bary) = self
            .mesh()
            .locate(p)
            .ok_or_else(|| ChnsError::Mesh(format!("point {p:?} outside mesh")))?;
        Ok(match self.space.components {
            1 => vec![self.eval_scalar(cell, bary)],
            _ => self.eval_vector(cell, bary).to_vec(),
        })
    }

    /// Interpolate onto another space of the same degree and components.
    /// Exact whenever the target mesh nests this field's mesh; node
    /// coordinates shared between meshes are copied bitwise.
    pub fn interpolate_onto(&self, target: &FeSpaceRef) -> Result<Field> {
        if target.degree != self.space.degree || target.components != self.space.components {
            return Err(ChnsError::SpaceMismatch(
                "interpolation requires equal degree and components".into(),
            ));
        }
        if target.same_space(&self.space) {
            return Ok(self.clone());
        }
        let comps = self.space.components;
        let mut coeffs = vec![0.0; target.n_dof];
        for node in 0..target.n_nodes {
            let p = target.node_coords(node);
            if let Some(src_node) = self.space.find_node(p) {
                for c in 0..comps {
                    coeffs[node * comps + c] = self.coeffs[src_node * comps + c];
                }
                continue;
            }
            let (cell, bary) = self
                .mesh()
                .locate(p)
                .ok_or_else(|| ChnsError::Mesh(format!("node {p:?} outside source mesh")))?;
            if comps == 1 {
                coeffs[node] = self.eval_scalar(cell, bary);
            } else {
                let v = self.eval_vector(cell, bary);
                coeffs[2 * node] = v[0];
                coeffs[2 * node + 1] = v[1];
            }
        }
        Ok(Field { space: target.clone(), coeffs })
    }

    /// Integral of a scalar field over the domain.
    pub fn integral(&self) -> f64 {
        assert_eq!(self.space.components, 1);
        let mesh = self.mesh();
        let rule = crate::quad::rule_degree6();
        let mut acc = 0.0;
        for cell in 0..mesh.n_cells() {
            let mut cell_acc = 0.0;
            for qp in rule {
                cell_acc += qp.weight * self.eval_scalar(cell, qp.bary);
            }
            acc += cell_acc * mesh.cell_area(cell);
        }
        acc
    }

    pub fn min_coeff(&self) -> f64 {
        self.coeffs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Same-degree space on `mesh` mirroring the layout of `like`.
pub fn space_like(like: &FeSpace, mesh: &MeshRef) -> FeSpaceRef {
    match (like.degree, like.components, like.dirichlet.iter().any(|&b| b)) {
        (Degree::P1, 1, _) => FeSpace::p1(mesh),
        (Degree::P2, 1, _) => FeSpace::p2(mesh),
        (Degree::P2, 2, true) => FeSpace::vector_p2_dirichlet(mesh),
        (Degree::P2, 2, false) => FeSpace::vector_p2(mesh),
        _ => unreachable!("unsupported space layout"),
    }
}

/// Exact transfer to a descendant (or identical) mesh.
pub fn prolongate(f: &Field, to: &MeshRef) -> Result<Field> {
    if !to.nests_mesh(f.mesh()) {
        return Err(ChnsError::NoCommonMesh(format!(
            "mesh {} is not a descendant of mesh {}",
            to.id,
            f.mesh().id
        )));
    }
    f.interpolate_onto(&space_like(&f.space, to))
}

/// Bring two fields onto the finest common mesh of the hierarchy.
pub fn to_common_mesh(f: &Field, g: &Field) -> Result<(Field, Field, MeshRef)> {
    let mf = f.mesh();
    let mg = g.mesh();
    let target = if mf.nests_mesh(mg) {
        mf.clone()
    } else if mg.nests_mesh(mf) {
        mg.clone()
    } else {
        common_refinement(mf, mg)?
    };
    let ff = prolongate(f, &target)?;
    let gg = prolongate(g, &target)?;
    Ok((ff, gg, target))
}

/// Gram matrix of the X inner product on one space.
pub fn gram_matrix(space: &FeSpaceRef, x: XSpace) -> crate::linalg::Csr {
    let mass = || match space.components {
        1 => assemble::mass_matrix(space, assemble::Weight::One),
        _ => assemble::vector_mass(space, assemble::Weight::One),
    };
    let stiff = || match space.components {
        1 => assemble::stiffness_matrix(space, assemble::Weight::One),
        _ => assemble::vector_grad_stiffness(space, assemble::Weight::One),
    };
    match x {
        XSpace::L2 => mass(),
        XSpace::H01 => stiff(),
        XSpace::H1 => mass().add_scaled(&stiff(), 1.0),
    }
}

/// X inner product of two fields, prolonging both to the finest common mesh.
pub fn inner_product(f: &Field, g: &Field, x: XSpace) -> Result<f64> {
    if f.space.degree != g.space.degree || f.space.components != g.space.components {
        return Err(ChnsError::SpaceMismatch(
            "inner product requires equal degree and components".into(),
        ));
    }
    let (ff, gg, _) = to_common_mesh(f, g)?;
    let gram = gram_matrix(&ff.space, x);
    Ok(gram.quad_form(&ff.coeffs, &gg.coeffs))
}

pub fn norm(f: &Field, x: XSpace) -> Result<f64> {
    Ok(inner_product(f, f, x)?.max(0.0).sqrt())
}

/// L2 norm on the field's own mesh (no transfer).
pub fn norm_l2_local(f: &Field) -> f64 {
    let gram = gram_matrix(&f.space, XSpace::L2);
    gram.quad_form(&f.coeffs, &f.coeffs).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, refine, Rect};
    use rand::prelude::*;

    #[test]
    fn constant_field_prolongates_to_constant() {
        let m = build_rect_mesh(2, 2, Rect::unit()).unwrap();
        let r = refine(&m, &[0, 3]).unwrap();
        let p1 = FeSpace::p1(&m);
        let f = Field::from_fn(&p1, |_| 3.5);
        let g = prolongate(&f, &r).unwrap();
        for c in &g.coeffs {
            assert!((c - 3.5).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_field_prolongates_exactly() {
        let m = build_rect_mesh(2, 2, Rect::unit()).unwrap();
        let r = refine(&m, &[0, 1, 2]).unwrap();
        let p1 = FeSpace::p1(&m);
        let f = Field::from_fn(&p1, |p| p[0]);
        let g = prolongate(&f, &r).unwrap();
        let rp1 = FeSpace::p1(&r);
        for node in 0..rp1.n_nodes {
            assert!((g.coeffs[node] - rp1.node_coords(node)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn prolong_then_restrict_is_identity() {
        let m = build_rect_mesh(3, 2, Rect::unit()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut child = m.clone();
        for _ in 0..3 {
            let marks: Vec<usize> =
                (0..child.n_cells()).filter(|_| rng.random::<f64>() < 0.4).collect();
            child = refine(&child, &marks).unwrap();
        }
        for space in [FeSpace::p1(&m), FeSpace::p2(&m)] {
            let f = Field {
                space: space.clone(),
                coeffs: (0..space.n_dof).map(|_| rng.random::<f64>() - 0.5).collect(),
            };
            let fine = prolongate(&f, &child).unwrap();
            let back = fine.interpolate_onto(&space).unwrap();
            assert_eq!(back.coeffs, f.coeffs, "prolong-restrict must be exact");
        }
    }

    #[test]
    fn l2_norm_preserved_under_prolongation() {
        let m = build_rect_mesh(4, 4, Rect::unit()).unwrap();
        let r = refine(&m, &(0..10).collect::<Vec<_>>()).unwrap();
        let p1 = FeSpace::p1(&m);
        let f = Field::from_fn(&p1, |p| (3.0 * p[0]).sin() + p[1]);
        let nf = norm_l2_local(&f);
        let g = prolongate(&f, &r).unwrap();
        let ng = norm_l2_local(&g);
        assert!((nf - ng).abs() < 1e-13 * nf.max(1.0));
    }

    #[test]
    fn inner_product_across_levels_matches_coarse_value() {
        let m = build_rect_mesh(3, 3, Rect::unit()).unwrap();
        let r1 = refine(&m, &[0, 1]).unwrap();
        let r2 = refine(&r1, &[2, 3, 4]).unwrap();
        let p1 = FeSpace::p1(&m);
        let f = Field::from_fn(&p1, |p| p[0] * p[1]);
        let g = Field::from_fn(&p1, |p| 1.0 - p[0]);
        let base = inner_product(&f, &g, XSpace::L2).unwrap();
        let f1 = prolongate(&f, &r1).unwrap();
        let g2 = prolongate(&g, &r2).unwrap();
        let cross = inner_product(&f1, &g2, XSpace::L2).unwrap();
        assert!((base - cross).abs() < 1e-13 * base.abs().max(1.0));
    }

    #[test]
    fn positive_definite_on_nonzero() {
        let m = build_rect_mesh(2, 2, Rect::unit()).unwrap();
        let p1 = FeSpace::p1(&m);
        let f = Field::from_fn(&p1, |p| p[0] - 0.3);
        assert!(inner_product(&f, &f, XSpace::L2).unwrap() > 0.0);
    }

    #[test]
    fn h1_inner_product_matches_direct_assembly_on_common_mesh() {
        let m = build_rect_mesh(4, 4, Rect::unit()).unwrap();
        let ra = refine(&m, &[0, 1, 2, 3]).unwrap();
        let rb = refine(&m, &[10, 11, 12]).unwrap();
        let fa = Field::from_fn(&FeSpace::p1(&ra), |p| (2.0 * p[0] + p[1]).sin());
        let fb = Field::from_fn(&FeSpace::p1(&rb), |p| p[0] * p[0]);
        let ip = inner_product(&fa, &fb, XSpace::H1).unwrap();
        // independent route: prolong both to an explicitly built overlay and
        // assemble mass+stiffness there
        let o = common_refinement(&ra, &rb).unwrap();
        let pa = prolongate(&fa, &o).unwrap();
        let pb = prolongate(&fb, &o).unwrap();
        let gram = gram_matrix(&pa.space, XSpace::H1);
        let direct = gram.quad_form(&pa.coeffs, &pb.coeffs);
        assert!((ip - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }
}
