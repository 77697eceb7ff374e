//! Single-phase time-discrete Navier-Stokes on Taylor-Hood elements:
//! implicit Euler with fully implicit antisymmetrized convection, zero-mean
//! pressure enforced by one scalar multiplier row.

use crate::assemble::{self, Weight};
use crate::error::{ChnsError, Result};
use crate::field::Field;
use crate::linalg::{dot, norm2, BlockSystem, Csr, SparseLu};
use crate::space::{FeSpace, FeSpaceRef};

/// Fluid data for both the single-phase and the two-phase settings.
#[derive(Debug, Clone, Copy)]
pub struct FluidParams {
    pub rho1: f64,
    pub rho2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gravity: f64,
    /// Reynolds number for the single-phase solver.
    pub re: f64,
    pub tau: f64,
}

impl FluidParams {
    pub fn validate(&self) -> Result<()> {
        if self.rho1 <= 0.0 || self.rho2 <= 0.0 || self.eta1 <= 0.0 || self.eta2 <= 0.0 {
            return Err(ChnsError::InvalidParameter(
                "densities and viscosities must be positive".into(),
            ));
        }
        if self.re <= 0.0 || self.tau <= 0.0 {
            return Err(ChnsError::InvalidParameter("Re and tau must be positive".into()));
        }
        Ok(())
    }

    /// rho(phi) = (rho1+rho2)/2 + (rho2-rho1)/2 phi.
    pub fn density(&self, phi: f64) -> f64 {
        0.5 * (self.rho1 + self.rho2) + 0.5 * (self.rho2 - self.rho1) * phi
    }

    pub fn density_deriv(&self) -> f64 {
        0.5 * (self.rho2 - self.rho1)
    }

    /// eta(phi) interpolated affinely like the density.
    pub fn viscosity(&self, phi: f64) -> f64 {
        0.5 * (self.eta1 + self.eta2) + 0.5 * (self.eta2 - self.eta1) * phi
    }

    pub fn viscosity_deriv(&self) -> f64 {
        0.5 * (self.eta2 - self.eta1)
    }
}

/// Velocity (vector P2, zero trace) and zero-mean pressure (P1).
#[derive(Debug, Clone)]
pub struct FlowState {
    pub v: Field,
    pub p: Field,
}

impl FlowState {
    pub fn zero(vspace: &FeSpaceRef, pspace: &FeSpaceRef) -> FlowState {
        FlowState { v: Field::zero(vspace), p: Field::zero(pspace) }
    }
}

/// Largest discrete divergence functional value: max_q |b(v, q)|.
pub fn divergence_residual(b: &Csr, v: &[f64]) -> f64 {
    b.matvec(v).iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Assembled single-phase operators on one mesh.
pub struct NsSolver {
    pub vspace: FeSpaceRef,
    pub pspace: FeSpaceRef,
    pub params: FluidParams,
    pub mass_v: Csr,
    pub grad_stiff: Csr,
    pub div: Csr,
    pub pressure_weights: Vec<f64>,
    /// Include the nonlinear convection term (drop for the Stokes limit).
    pub convection: bool,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl NsSolver {
    pub fn new(mesh: &crate::mesh::MeshRef, params: FluidParams) -> Result<NsSolver> {
        params.validate()?;
        let vspace = FeSpace::vector_p2_dirichlet(mesh);
        let pspace = FeSpace::p1(mesh);
        let mass_v = assemble::vector_mass(&vspace, Weight::One);
        let grad_stiff = assemble::vector_grad_stiffness(&vspace, Weight::One);
        let div = assemble::divergence_matrix(&vspace, &pspace);
        let pressure_weights = assemble::integral_vector(&pspace);
        Ok(NsSolver {
            vspace,
            pspace,
            params,
            mass_v,
            grad_stiff,
            div,
            pressure_weights,
            convection: true,
            newton_tol: 1e-10,
            max_newton: 25,
        })
    }

    fn unknowns(&self) -> (usize, usize, usize) {
        let nv = self.vspace.n_dof;
        let np = self.pspace.n_dof;
        (nv, np, nv + np + 1)
    }

    /// One implicit-Euler step with an assembled forcing vector (f, psi).
    pub fn step_with_load(&self, prev: &FlowState, load: &[f64]) -> Result<FlowState> {
        let (nv, np, n) = self.unknowns();
        let tau = self.params.tau;
        let inv_re = 1.0 / self.params.re;
        let mut rhs_mom = vec![0.0; nv];
        self.mass_v.matvec_add(&prev.v.coeffs, 1.0 / tau, &mut rhs_mom);
        for i in 0..nv {
            rhs_mom[i] += load[i];
        }

        let mut v = prev.v.coeffs.clone();
        let mut p = prev.p.coeffs.clone();
        let mut s = 0.0;

        let residual = |v: &[f64], p: &[f64], s: f64| -> Vec<f64> {
            let mut r = vec![0.0; n];
            self.mass_v.matvec_add(v, 1.0 / tau, &mut r[..nv]);
            self.grad_stiff.matvec_add(v, inv_re, &mut r[..nv]);
            if self.convection {
                let vf = Field::from_coeffs(&self.vspace, v.to_vec());
                let k = assemble::convection_skew(&self.vspace, &vf);
                k.matvec_add(v, 1.0, &mut r[..nv]);
            }
            self.div.matvec_transpose_add(p, 1.0, &mut r[..nv]);
            for i in 0..nv {
                r[i] -= rhs_mom[i];
            }
            self.div.matvec_add(v, 1.0, &mut r[nv..nv + np]);
            for i in 0..np {
                r[nv + i] += self.pressure_weights[i] * s;
            }
            r[nv + np] = dot(&self.pressure_weights, p);
            for (i, m) in self.vspace.dirichlet.iter().enumerate() {
                if *m {
                    r[i] = 0.0;
                }
            }
            r
        };

        let mut r = residual(&v, &p, s);
        let mut res = norm2(&r);
        let scale = norm2(&rhs_mom).max(1.0);
        let mut iter = 0;
        while res > self.newton_tol * scale {
            if iter >= self.max_newton {
                return Err(ChnsError::NonlinearSolve { iterations: iter, residual: res });
            }
            let mut sys = BlockSystem::new(n);
            sys.add_matrix(0, 0, &self.mass_v, 1.0 / tau);
            sys.add_matrix(0, 0, &self.grad_stiff, inv_re);
            if self.convection {
                let vf = Field::from_coeffs(&self.vspace, v.clone());
                let k = assemble::convection_skew(&self.vspace, &vf);
                let dk = assemble::conv_skew_dw_vel(&self.vspace, Weight::One, &vf);
                sys.add_matrix(0, 0, &k, 1.0);
                sys.add_matrix(0, 0, &dk, 1.0);
            }
            sys.add_matrix_transpose(0, nv, &self.div, 1.0);
            sys.add_matrix(nv, 0, &self.div, 1.0);
            for i in 0..np {
                sys.add_entry(nv + i, nv + np, self.pressure_weights[i]);
                sys.add_entry(nv + np, nv + i, self.pressure_weights[i]);
            }
            sys.add_rhs(0, &r, -1.0);
            sys.constrain(0, &self.vspace.dirichlet);
            let lu = SparseLu::factor(&sys.build())?;
            let delta = lu.solve(&sys.rhs_constrained());
            for i in 0..nv {
                v[i] += delta[i];
            }
            for i in 0..np {
                p[i] += delta[nv + i];
            }
            s += delta[nv + np];
            r = residual(&v, &p, s);
            res = norm2(&r);
            iter += 1;
        }
        Ok(FlowState {
            v: Field::from_coeffs(&self.vspace, v),
            p: Field::from_coeffs(&self.pspace, p),
        })
    }

    /// One step with the forcing given as a velocity-space field.
    pub fn step(&self, prev: &FlowState, forcing: &Field) -> Result<FlowState> {
        let load = self.mass_v.matvec(&forcing.coeffs);
        self.step_with_load(prev, &load)
    }
}

/// Spec-level operation: assemble on the state's mesh and step once.
pub fn ns_step(prev: &FlowState, forcing: &Field, params: FluidParams) -> Result<FlowState> {
    let solver = NsSolver::new(&prev.v.space.mesh.clone(), params)?;
    let f_local = forcing.interpolate_onto(&solver.vspace)?;
    let prev_local = FlowState {
        v: prev.v.interpolate_onto(&solver.vspace)?,
        p: prev.p.interpolate_onto(&solver.pspace)?,
    };
    solver.step(&prev_local, &f_local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, Rect};
    use crate::quad::rule_degree8;

    fn params(tau: f64) -> FluidParams {
        FluidParams {
            rho1: 1.0,
            rho2: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            gravity: 0.0,
            re: 10.0,
            tau,
        }
    }

    #[test]
    fn rest_state_stays_at_rest() {
        let mesh = build_rect_mesh(6, 6, Rect::unit()).unwrap();
        let solver = NsSolver::new(&mesh, params(0.1)).unwrap();
        let prev = FlowState::zero(&solver.vspace, &solver.pspace);
        let f = Field::zero(&solver.vspace);
        let next = solver.step(&prev, &f).unwrap();
        assert!(next.v.coeffs.iter().all(|&x| x.abs() < 1e-12));
        assert!(next.p.coeffs.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn step_enforces_weak_divergence_and_zero_mean() {
        let mesh = build_rect_mesh(8, 8, Rect::unit()).unwrap();
        let solver = NsSolver::new(&mesh, params(0.05)).unwrap();
        let prev = FlowState::zero(&solver.vspace, &solver.pspace);
        let f = Field::from_fn_vector(&solver.vspace, |p| {
            [4.0 * (p[1] - 0.5), -4.0 * (p[0] - 0.5)]
        });
        let next = solver.step(&prev, &f).unwrap();
        let vnorm = crate::linalg::norm2(&next.v.coeffs);
        assert!(vnorm > 1e-6, "forcing should move the fluid");
        let div_res = divergence_residual(&solver.div, &next.v.coeffs);
        assert!(div_res <= 1e-10 * vnorm.max(1.0), "divergence residual {div_res}");
        let mean = dot(&solver.pressure_weights, &next.p.coeffs);
        assert!(mean.abs() <= 1e-12 * crate::linalg::norm2(&next.p.coeffs).max(1.0));
    }

    /// Manufactured Stokes solution: v = curl((x(1-x)y(1-y))^2), p = x - 1/2.
    struct Manufactured {
        re: f64,
    }

    impl Manufactured {
        fn v(&self, x: f64, y: f64) -> [f64; 2] {
            let a = x * (1.0 - x);
            let b = y * (1.0 - y);
            let ap = 1.0 - 2.0 * x;
            let bp = 1.0 - 2.0 * y;
            [2.0 * a * a * b * bp, -2.0 * a * ap * b * b]
        }

        fn laplace_v(&self, x: f64, y: f64) -> [f64; 2] {
            let a = x * (1.0 - x);
            let b = y * (1.0 - y);
            let ap = 1.0 - 2.0 * x;
            let bp = 1.0 - 2.0 * y;
            let lap_v1 = 4.0 * b * bp * ap * ap - 8.0 * a * b * bp - 12.0 * a * a * bp;
            let lap_v2 = -(4.0 * a * ap * bp * bp - 8.0 * a * ap * b - 12.0 * b * b * ap);
            [lap_v1, lap_v2]
        }

        fn forcing(&self, x: f64, y: f64) -> [f64; 2] {
            let lap = self.laplace_v(x, y);
            [-lap[0] / self.re + 1.0, -lap[1] / self.re]
        }
    }

    #[test]
    fn manufactured_laplacian_matches_finite_differences() {
        let m = Manufactured { re: 1.0 };
        let h = 1e-5;
        for (x, y) in [(0.3, 0.4), (0.7, 0.2), (0.5, 0.8)] {
            for c in 0..2 {
                let fd = (m.v(x + h, y)[c] + m.v(x - h, y)[c] + m.v(x, y + h)[c]
                    + m.v(x, y - h)[c]
                    - 4.0 * m.v(x, y)[c])
                    / (h * h);
                let exact = m.laplace_v(x, y)[c];
                assert!(
                    (fd - exact).abs() < 1e-4 * exact.abs().max(1.0),
                    "component {c} at ({x},{y}): fd {fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn stokes_convergence_rate_at_least_2p5() {
        let re = 1.0;
        let man = Manufactured { re };
        let mut errors = Vec::new();
        for n in [4usize, 8, 16] {
            let mesh = build_rect_mesh(n, n, Rect::unit()).unwrap();
            let mut fp = params(1e6); // huge step: effectively stationary Stokes
            fp.re = re;
            let mut solver = NsSolver::new(&mesh, fp).unwrap();
            solver.convection = false;
            let load = assemble::load_vector(
                &solver.vspace,
                &|p: [f64; 2]| man.forcing(p[0], p[1]),
                rule_degree8(),
            );
            let prev = FlowState::zero(&solver.vspace, &solver.pspace);
            let next = solver.step_with_load(&prev, &load).unwrap();
            // L2 error of the velocity by degree-8 quadrature
            let mut err2 = 0.0;
            for cell in 0..mesh.n_cells() {
                let geom = mesh.cell_geom(cell);
                for qp in rule_degree8() {
                    let xh = geom.point(qp.bary);
                    let vh = next.v.eval_vector(cell, qp.bary);
                    let ve = man.v(xh[0], xh[1]);
                    err2 += qp.weight
                        * geom.area
                        * ((vh[0] - ve[0]).powi(2) + (vh[1] - ve[1]).powi(2));
                }
            }
            errors.push(err2.sqrt());
        }
        let rate1 = (errors[0] / errors[1]).log2();
        let rate2 = (errors[1] / errors[2]).log2();
        assert!(
            rate1 >= 2.5 && rate2 >= 2.5,
            "observed rates {rate1:.2}, {rate2:.2} with errors {errors:?}"
        );
    }
}
