//! The coupled semi-discrete Cahn-Hilliard Navier-Stokes step over three
//! time instants, with the per-step total-energy estimate.
//!
//! The momentum equation uses the discretely consistent form of the scheme:
//! the density time term is symmetrized,
//!   (1/2tau) ((rho(phi_i) + rho(phi_{i-1})) v_{i+1} - 2 rho(phi_{i-1}) v_i),
//! and the lagged convection plus capillary-flux terms are combined into one
//! antisymmetrized form with the mass flux
//!   w_i = rho(phi_{i-1}) v_i - (rho2-rho1)/2 m(phi_{i-1}) grad(mu_i).
//! Testing with v_{i+1} then telescopes the kinetic energy exactly, so the
//! energy estimate holds at the linear-algebra level instead of only up to a
//! spatial consistency error.

use crate::assemble::{self, Weight};
use crate::ch::{ChParams, ChSolver, PhaseState};
use crate::error::{ChnsError, Result};
use crate::field::Field;
use crate::linalg::{dot, norm2, BlockSystem, Csr, SparseLu};
use crate::mesh::MeshRef;
use crate::ns::{FlowState, FluidParams};
use crate::potential::Potential;
use crate::space::{FeSpace, FeSpaceRef};

/// Phase, flow and the previous-instant phase field (the scheme spans three
/// time instants).
#[derive(Debug, Clone)]
pub struct CoupledState {
    pub phase: PhaseState,
    pub flow: FlowState,
    pub phi_prev: Field,
}

/// Per-step assembled operators of the coupled system; they depend only on
/// the explicit data (phi_i, mu_i, v_i, phi_{i-1}).
pub struct StepOperators {
    /// m(phi_i)-weighted stiffness.
    pub a_m: Csr,
    /// Phase-velocity coupling C with grad(phi_i); C v is the CH transport,
    /// C^T mu the capillary force.
    pub cv: Csr,
    /// rho(phi_i)-weighted velocity mass.
    pub m_rho_i: Csr,
    /// rho(phi_{i-1})-weighted velocity mass.
    pub m_rho_prev: Csr,
    /// Skew convection with the lagged mass flux w_i.
    pub k_skew: Csr,
    /// 2 eta(phi_i)-weighted strain stiffness.
    pub a_eta: Csr,
    /// Gravity load: (rho(phi_{i-1}) g_dir, psi).
    pub f_grav: Vec<f64>,
}

/// Result of the per-step energy-law evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    pub e_before: f64,
    pub e_after: f64,
    /// 1/2 (v+ - v)^T M_rho_prev (v+ - v).
    pub kinetic_penalty: f64,
    /// gc/2 |grad(phi+ - phi)|^2.
    pub gradient_penalty: f64,
    /// pc kappa/2 |phi+ - phi|^2.
    pub kappa_penalty: f64,
    /// tau (2 eta(phi) eps(v+), eps(v+)).
    pub viscous_dissipation: f64,
    /// tau (m(phi) grad mu+, grad mu+).
    pub mobility_dissipation: f64,
    /// tau <u + gravity, v+>: all external forcing counts as work.
    pub forcing_work: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl EnergyReport {
    pub const REL_SLACK: f64 = 1e-8;
}

/// Coupled CHNS stepper on a single mesh.
pub struct ChnsSolver {
    pub p1: FeSpaceRef,
    pub vspace: FeSpaceRef,
    pub ch: ChSolver,
    pub fluid: FluidParams,
    pub mass_v: Csr,
    pub div: Csr,
    pub pressure_weights: Vec<f64>,
    pub gs_tol: f64,
    pub max_sweeps: usize,
}

impl ChnsSolver {
    pub fn new(
        mesh: &MeshRef,
        potential: Potential,
        ch_params: ChParams,
        fluid: FluidParams,
    ) -> Result<ChnsSolver> {
        fluid.validate()?;
        let p1 = FeSpace::p1(mesh);
        let vspace = FeSpace::vector_p2_dirichlet(mesh);
        let ch = ChSolver::new(&p1, None, potential, ch_params)?;
        let mass_v = assemble::vector_mass(&vspace, Weight::One);
        let div = assemble::divergence_matrix(&vspace, &p1);
        let pressure_weights = assemble::integral_vector(&p1);
        Ok(ChnsSolver {
            p1,
            vspace,
            ch,
            fluid,
            mass_v,
            div,
            pressure_weights,
            gs_tol: 1e-9,
            max_sweeps: 100,
        })
    }

    /// Interpolate the initial data and perform the decoupled CH
    /// initialization step that defines (phi_0, mu_0) from phi_{-1} = phi_a.
    pub fn initial_state(&self, phi_a: &Field, v_a: &Field) -> Result<CoupledState> {
        let phi_a = phi_a.interpolate_onto(&self.p1)?;
        let v_a = v_a.interpolate_onto(&self.vspace)?;
        let prev = PhaseState::new(phi_a.clone(), Field::zero(&self.p1));
        let cv = assemble::phase_velocity_coupling(&self.p1, &self.vspace, &phi_a);
        let mut rhs1 = vec![0.0; self.p1.n_dof];
        self.ch
            .mass
            .matvec_add(&phi_a.coeffs, 1.0 / self.ch.params.tau, &mut rhs1);
        cv.matvec_add(&v_a.coeffs, -1.0, &mut rhs1);
        let phase = self.ch.step_with_rhs(&prev, &rhs1)?;
        Ok(CoupledState {
            phase,
            flow: FlowState { v: v_a, p: Field::zero(&self.p1) },
            phi_prev: phi_a,
        })
    }

    fn rho_field(&self, phi: &Field) -> Field {
        Field::from_coeffs(
            &self.p1,
            phi.coeffs.iter().map(|&p| self.fluid.density(p)).collect(),
        )
    }

    /// Assemble the explicit-data-dependent operators of one step.
    pub fn step_operators(&self, state: &CoupledState) -> StepOperators {
        let phi_i = &state.phase.phi;
        let mu_i = &state.phase.mu;
        let v_i = &state.flow.v;
        let phi_prev = &state.phi_prev;
        let a_m = self.ch.mobility_stiffness(phi_i);
        let cv = assemble::phase_velocity_coupling(&self.p1, &self.vspace, phi_i);
        let rho_i = self.rho_field(phi_i);
        let rho_prev = self.rho_field(phi_prev);
        let m_rho_i = assemble::vector_mass(&self.vspace, Weight::P1Field(&rho_i));
        let m_rho_prev = assemble::vector_mass(&self.vspace, Weight::P1Field(&rho_prev));
        let eta2_field = Field::from_coeffs(
            &self.p1,
            phi_i.coeffs.iter().map(|&p| 2.0 * self.fluid.viscosity(p)).collect(),
        );
        let a_eta = assemble::strain_stiffness(&self.vspace, Weight::P1Field(&eta2_field));
        let c_rho = self.fluid.density_deriv();
        let mobility = self.ch.params.mobility;
        let k_skew = assemble::convection_skew_eval(&self.vspace, &|cell, bary, geom| {
            let rho = rho_prev.eval_scalar(cell, bary);
            let v = v_i.eval_vector(cell, bary);
            let gmu = mu_i.eval_grad_scalar(cell, bary, geom);
            let m = mobility.eval(phi_prev.eval_scalar(cell, bary));
            [
                rho * v[0] - c_rho * m * gmu[0],
                rho * v[1] - c_rho * m * gmu[1],
            ]
        });
        let f_grav = assemble::weighted_direction_load(
            &self.vspace,
            Weight::P1Field(&rho_prev),
            [0.0, -self.fluid.gravity],
        );
        StepOperators { a_m, cv, m_rho_i, m_rho_prev, k_skew, a_eta, f_grav }
    }

    /// Solve the linear momentum/continuity subsystem given (phi+, mu+).
    fn ns_subsolve(
        &self,
        ops: &StepOperators,
        lu: &SparseLu,
        v_i: &[f64],
        mu_plus: &[f64],
        u_load: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let nv = self.vspace.n_dof;
        let np = self.p1.n_dof;
        let tau = self.ch.params.tau;
        let mut rhs = vec![0.0; nv + np + 1];
        ops.m_rho_prev.matvec_add(v_i, 1.0 / tau, &mut rhs[..nv]);
        ops.cv.matvec_transpose_add(mu_plus, 1.0, &mut rhs[..nv]);
        for i in 0..nv {
            rhs[i] += u_load[i] + ops.f_grav[i];
            if self.vspace.dirichlet[i] {
                rhs[i] = 0.0;
            }
        }
        let sol = lu.solve(&rhs);
        Ok((
            sol[..nv].to_vec(),
            sol[nv..nv + np].to_vec(),
            sol[nv + np],
        ))
    }

    /// Build and factor the (constant-in-sweep) momentum/continuity matrix.
    fn ns_matrix(&self, ops: &StepOperators) -> Result<SparseLu> {
        let nv = self.vspace.n_dof;
        let np = self.p1.n_dof;
        let tau = self.ch.params.tau;
        let mut sys = BlockSystem::new(nv + np + 1);
        sys.add_matrix(0, 0, &ops.m_rho_i, 0.5 / tau);
        sys.add_matrix(0, 0, &ops.m_rho_prev, 0.5 / tau);
        sys.add_matrix(0, 0, &ops.k_skew, 1.0);
        sys.add_matrix(0, 0, &ops.a_eta, 1.0);
        sys.add_matrix_transpose(0, nv, &self.div, 1.0);
        sys.add_matrix(nv, 0, &self.div, 1.0);
        for i in 0..np {
            sys.add_entry(nv + i, nv + np, self.pressure_weights[i]);
            sys.add_entry(nv + np, nv + i, self.pressure_weights[i]);
        }
        sys.constrain(0, &self.vspace.dirichlet);
        SparseLu::factor(&sys.build())
    }

    /// Residual of the full coupled system at the given iterate.
    #[allow(clippy::too_many_arguments)]
    fn combined_residual(
        &self,
        ops: &StepOperators,
        state: &CoupledState,
        phase: &PhaseState,
        v: &[f64],
        p: &[f64],
        s: f64,
        u_load: &[f64],
    ) -> f64 {
        let n = self.p1.n_dof;
        let nv = self.vspace.n_dof;
        let tau = self.ch.params.tau;
        let gc = self.ch.params.grad_coeff();
        let pc = self.ch.params.pot_coeff();
        let kappa = self.ch.params.kappa;
        // CH1
        let mut r1 = vec![0.0; n];
        self.ch.mass.matvec_add(&phase.phi.coeffs, 1.0 / tau, &mut r1);
        self.ch
            .mass
            .matvec_add(&state.phase.phi.coeffs, -1.0 / tau, &mut r1);
        ops.cv.matvec_add(v, 1.0, &mut r1);
        ops.a_m.matvec_add(&phase.mu.coeffs, 1.0, &mut r1);
        // CH2
        let mut r2 = vec![0.0; n];
        self.ch.stiff.matvec_add(&phase.phi.coeffs, gc, &mut r2);
        self.ch.mass.matvec_add(&phase.mu.coeffs, -1.0, &mut r2);
        self.ch
            .mass
            .matvec_add(&state.phase.phi.coeffs, -pc * kappa, &mut r2);
        for i in 0..n {
            r2[i] += pc * self.ch.lumped[i] * phase.slack.coeffs[i];
        }
        // momentum
        let mut r3 = vec![0.0; nv];
        ops.m_rho_i.matvec_add(v, 0.5 / tau, &mut r3);
        ops.m_rho_prev.matvec_add(v, 0.5 / tau, &mut r3);
        ops.m_rho_prev
            .matvec_add(&state.flow.v.coeffs, -1.0 / tau, &mut r3);
        ops.k_skew.matvec_add(v, 1.0, &mut r3);
        ops.a_eta.matvec_add(v, 1.0, &mut r3);
        self.div.matvec_transpose_add(p, 1.0, &mut r3);
        ops.cv.matvec_transpose_add(&phase.mu.coeffs, -1.0, &mut r3);
        for i in 0..nv {
            r3[i] -= u_load[i] + ops.f_grav[i];
            if self.vspace.dirichlet[i] {
                r3[i] = 0.0;
            }
        }
        // continuity
        let mut r4 = self.div.matvec(v);
        for i in 0..n {
            r4[i] += self.pressure_weights[i] * s;
        }
        (dot(&r1, &r1) + dot(&r2, &r2) + dot(&r3, &r3) + dot(&r4, &r4)).sqrt()
    }

    /// One coupled step by block Gauss-Seidel (CH solve, then the linear
    /// momentum solve) with a trailing CH solve so that mass conservation
    /// holds to solver precision. `u_load` is the assembled control force
    /// (M_v u), if any.
    pub fn step(&self, state: &CoupledState, u_load: Option<&[f64]>) -> Result<CoupledState> {
        let nv = self.vspace.n_dof;
        let zero_load = vec![0.0; nv];
        let u_load = u_load.unwrap_or(&zero_load);
        let ops = self.step_operators(state);
        let ns_lu = self.ns_matrix(&ops)?;
        let tau = self.ch.params.tau;

        let mut phase = state.phase.clone();
        let mut v = state.flow.v.coeffs.clone();
        let mut p = state.flow.p.coeffs.clone();
        let mut s = 0.0;
        let mut res_prev = f64::INFINITY;
        let mut scale: Option<f64> = None;
        for _sweep in 0..self.max_sweeps {
            // CH subsolve with the current velocity iterate
            let mut rhs1 = vec![0.0; self.p1.n_dof];
            self.ch
                .mass
                .matvec_add(&state.phase.phi.coeffs, 1.0 / tau, &mut rhs1);
            ops.cv.matvec_add(&v, -1.0, &mut rhs1);
            let phase_new = self.ch.step_with_rhs(&state.phase, &rhs1)?;
            // damping on the phase update if the residual grew last sweep
            phase = phase_new;
            // momentum subsolve with the fresh (phi+, mu+)
            let (v_new, p_new, s_new) =
                self.ns_subsolve(&ops, &ns_lu, &state.flow.v.coeffs, &phase.mu.coeffs, u_load)?;
            let res = self.combined_residual(&ops, state, &phase, &v_new, &p_new, s_new, u_load);
            let sc = *scale.get_or_insert_with(|| res.max(1.0));
            if res <= self.gs_tol * sc {
                // trailing CH solve against the final velocity
                let mut rhs1 = vec![0.0; self.p1.n_dof];
                self.ch
                    .mass
                    .matvec_add(&state.phase.phi.coeffs, 1.0 / tau, &mut rhs1);
                ops.cv.matvec_add(&v_new, -1.0, &mut rhs1);
                let phase_final = self.ch.step_with_rhs(&phase, &rhs1)?;
                return Ok(CoupledState {
                    phase: phase_final,
                    flow: FlowState {
                        v: Field::from_coeffs(&self.vspace, v_new),
                        p: Field::from_coeffs(&self.p1, p_new),
                    },
                    phi_prev: state.phase.phi.clone(),
                });
            }
            if res > res_prev {
                // damped velocity update to stabilize the fixed point
                for i in 0..nv {
                    v[i] += 0.7 * (v_new[i] - v[i]);
                }
            } else {
                v = v_new;
            }
            p = p_new;
            s = s_new;
            res_prev = res;
        }
        let _ = (p, s);
        Err(ChnsError::NonlinearSolve { iterations: self.max_sweeps, residual: res_prev })
    }

    /// Assembled control load (M_v u) for a velocity-space control field.
    pub fn control_load(&self, u: &Field) -> Result<Vec<f64>> {
        let u_local = u.interpolate_onto(&self.vspace)?;
        Ok(self.mass_v.matvec(&u_local.coeffs))
    }

    /// Total energy E(v, phi, phi_prev) = kinetic + Ginzburg-Landau.
    pub fn total_energy(&self, state: &CoupledState) -> f64 {
        let rho_prev = self.rho_field(&state.phi_prev);
        let m_rho = assemble::vector_mass(&self.vspace, Weight::P1Field(&rho_prev));
        let kinetic = 0.5 * m_rho.quad_form(&state.flow.v.coeffs, &state.flow.v.coeffs);
        kinetic + self.ch.energy(&state.phase)
    }

    /// Evaluate every term of the per-step energy estimate.
    pub fn energy_step_check(
        &self,
        before: &CoupledState,
        after: &CoupledState,
        u_load: Option<&[f64]>,
    ) -> EnergyReport {
        let nv = self.vspace.n_dof;
        let zero_load = vec![0.0; nv];
        let u_load = u_load.unwrap_or(&zero_load);
        let ops = self.step_operators(before);
        let tau = self.ch.params.tau;
        let gc = self.ch.params.grad_coeff();
        let pc = self.ch.params.pot_coeff();
        let kappa = self.ch.params.kappa;

        let e_before = self.total_energy(before);
        let e_after = self.total_energy(after);

        let dv: Vec<f64> = after
            .flow
            .v
            .coeffs
            .iter()
            .zip(&before.flow.v.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        let kinetic_penalty = 0.5 * ops.m_rho_prev.quad_form(&dv, &dv);
        let dphi: Vec<f64> = after
            .phase
            .phi
            .coeffs
            .iter()
            .zip(&before.phase.phi.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        let gradient_penalty = 0.5 * gc * self.ch.stiff.quad_form(&dphi, &dphi);
        let kappa_penalty = 0.5 * pc * kappa * self.ch.mass.quad_form(&dphi, &dphi);
        let vp = &after.flow.v.coeffs;
        let viscous_dissipation = tau * ops.a_eta.quad_form(vp, vp);
        let mobility_dissipation =
            tau * ops.a_m.quad_form(&after.phase.mu.coeffs, &after.phase.mu.coeffs);
        let mut forcing_work = 0.0;
        for i in 0..nv {
            forcing_work += tau * (u_load[i] + ops.f_grav[i]) * vp[i];
        }
        let lhs = e_after
            + kinetic_penalty
            + gradient_penalty
            + kappa_penalty
            + viscous_dissipation
            + mobility_dissipation;
        let rhs = e_before + forcing_work;
        let satisfied = lhs <= rhs + EnergyReport::REL_SLACK * rhs.abs().max(1.0);
        EnergyReport {
            e_before,
            e_after,
            kinetic_penalty,
            gradient_penalty,
            kappa_penalty,
            viscous_dissipation,
            mobility_dissipation,
            forcing_work,
            lhs,
            rhs,
            satisfied,
        }
    }
}

/// One-shot coupled step on the state's own mesh.
pub fn chns_step(
    state: &CoupledState,
    u: Option<&Field>,
    potential: Potential,
    ch_params: ChParams,
    fluid: FluidParams,
) -> Result<CoupledState> {
    let solver = ChnsSolver::new(&state.phase.phi.space.mesh.clone(), potential, ch_params, fluid)?;
    let load = match u {
        Some(u) => Some(solver.control_load(u)?),
        None => None,
    };
    solver.step(state, load.as_deref())
}

/// One-shot total energy.
pub fn total_energy(
    state: &CoupledState,
    potential: Potential,
    ch_params: ChParams,
    fluid: FluidParams,
) -> Result<f64> {
    let solver = ChnsSolver::new(&state.phase.phi.space.mesh.clone(), potential, ch_params, fluid)?;
    Ok(solver.total_energy(state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ch::{ChScaling, Mobility};
    use crate::mesh::{build_rect_mesh, Rect};

    fn bubble_setup(n: usize, tau: f64) -> (ChnsSolver, CoupledState) {
        let mesh = build_rect_mesh(n, n, Rect::unit()).unwrap();
        let ch = ChParams {
            sigma: 24.5 * 2.0 / std::f64::consts::PI,
            eps: 0.04,
            kappa: 1.0,
            mobility: Mobility::Constant(1.0 / 25000.0),
            tau,
            scaling: ChScaling::Scaled,
        };
        let fluid = FluidParams {
            rho1: 1000.0,
            rho2: 100.0,
            eta1: 10.0,
            eta2: 1.0,
            gravity: 0.981,
            re: 1.0,
            tau,
        };
        let solver =
            ChnsSolver::new(&mesh, Potential::double_obstacle(), ch, fluid).unwrap();
        let phi_a = Field::from_fn(&solver.p1, |p| {
            let d = 0.2 - ((p[0] - 0.5).powi(2) + (p[1] - 0.35).powi(2)).sqrt();
            (d / (std::f64::consts::SQRT_2 * 0.04)).tanh()
        });
        let v_a = Field::zero(&solver.vspace);
        let state = solver.initial_state(&phi_a, &v_a).unwrap();
        (solver, state)
    }

    #[test]
    fn zero_state_is_equilibrium() {
        let mesh = build_rect_mesh(6, 6, Rect::unit()).unwrap();
        let ch = ChParams {
            sigma: 1.0,
            eps: 0.1,
            kappa: 1.0,
            mobility: Mobility::Constant(1.0),
            tau: 1e-3,
            scaling: ChScaling::Scaled,
        };
        let fluid = FluidParams {
            rho1: 2.0,
            rho2: 1.0,
            eta1: 1.0,
            eta2: 0.5,
            gravity: 0.0,
            re: 1.0,
            tau: 1e-3,
        };
        let solver = ChnsSolver::new(&mesh, Potential::double_obstacle(), ch, fluid).unwrap();
        let phi_a = Field::zero(&solver.p1);
        let v_a = Field::zero(&solver.vspace);
        let state = solver.initial_state(&phi_a, &v_a).unwrap();
        let next = solver.step(&state, None).unwrap();
        assert!(next.phase.phi.coeffs.iter().all(|&x| x.abs() < 1e-10));
        assert!(next.phase.mu.coeffs.iter().all(|&x| x.abs() < 1e-10));
        assert!(next.flow.v.coeffs.iter().all(|&x| x.abs() < 1e-10));
    }

    #[test]
    fn matched_densities_zero_out_the_flux_block() {
        // with rho1 == rho2 the capillary-flux part of the wind vanishes,
        // so the skew operator equals the pure rho v convection operator
        let mesh = build_rect_mesh(4, 4, Rect::unit()).unwrap();
        let ch = ChParams {
            sigma: 1.0,
            eps: 0.1,
            kappa: 1.0,
            mobility: Mobility::Constant(1.0),
            tau: 1e-3,
            scaling: ChScaling::Scaled,
        };
        let fluid = FluidParams {
            rho1: 3.0,
            rho2: 3.0,
            eta1: 1.0,
            eta2: 1.0,
            gravity: 0.0,
            re: 1.0,
            tau: 1e-3,
        };
        let solver = ChnsSolver::new(&mesh, Potential::double_obstacle(), ch, fluid).unwrap();
        let phi = Field::from_fn(&solver.p1, |p| (p[0] - 0.5).clamp(-1.0, 1.0));
        let mut state = solver
            .initial_state(&phi, &Field::zero(&solver.vspace))
            .unwrap();
        // give mu a strong gradient; it must not enter the wind
        state.phase.mu = Field::from_fn(&solver.p1, |p| 10.0 * p[0] + 3.0 * p[1]);
        state.flow.v = Field::from_fn_vector(&solver.vspace, |p| {
            [p[1] * (1.0 - p[1]), p[0] * (1.0 - p[0])]
        });
        let ops = solver.step_operators(&state);
        let rho_v_only = assemble::convection_skew_eval(&solver.vspace, &|cell, bary, _| {
            let v = state.flow.v.eval_vector(cell, bary);
            [3.0 * v[0], 3.0 * v[1]]
        });
        let diff = ops.k_skew.add_scaled(&rho_v_only, -1.0);
        let max = diff.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max < 1e-13, "flux block should vanish for matched densities: {max}");
    }

    #[test]
    fn energy_estimate_holds_per_step_without_control() {
        let (solver, mut state) = bubble_setup(12, 0.00125);
        for _ in 0..6 {
            let next = solver.step(&state, None).unwrap();
            let report = solver.energy_step_check(&state, &next, None);
            assert!(
                report.satisfied,
                "energy estimate violated: lhs {} rhs {}",
                report.lhs, report.rhs
            );
            assert!(report.viscous_dissipation >= 0.0);
            assert!(report.mobility_dissipation >= 0.0);
            assert!(report.kinetic_penalty >= 0.0);
            state = next;
        }
    }

    #[test]
    fn no_forcing_means_non_increasing_energy() {
        let (solver_g, _) = bubble_setup(10, 0.00125);
        // switch gravity off: with u == 0 the energy must decay
        let mut fluid = solver_g.fluid;
        fluid.gravity = 0.0;
        let mesh = solver_g.p1.mesh.clone();
        let solver = ChnsSolver::new(
            &mesh,
            Potential::double_obstacle(),
            solver_g.ch.params,
            fluid,
        )
        .unwrap();
        let phi_a = Field::from_fn(&solver.p1, |p| {
            let d = 0.2 - ((p[0] - 0.5).powi(2) + (p[1] - 0.35).powi(2)).sqrt();
            (d / (std::f64::consts::SQRT_2 * 0.04)).tanh()
        });
        let mut state = solver
            .initial_state(&phi_a, &Field::zero(&solver.vspace))
            .unwrap();
        let mut e = solver.total_energy(&state);
        for _ in 0..5 {
            state = solver.step(&state, None).unwrap();
            let e_next = solver.total_energy(&state);
            assert!(
                e_next <= e + 1e-8 * e.abs().max(1.0),
                "energy increased without forcing: {e} -> {e_next}"
            );
            e = e_next;
        }
    }

    #[test]
    fn mass_conserved_and_bounds_kept() {
        let (solver, mut state) = bubble_setup(12, 0.00125);
        let m0 = state.phase.phi.integral();
        let omega = state.phase.phi.space.mesh.total_area();
        for _ in 0..6 {
            state = solver.step(&state, None).unwrap();
            let drift = (state.phase.phi.integral() - m0).abs();
            assert!(drift <= 1e-11 * omega, "mass drift {drift}");
            assert!(state.phase.phi.min_coeff() >= -1.0 - 1e-10);
            assert!(state.phase.phi.max_coeff() <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn doubling_velocity_quadruples_kinetic_energy() {
        let (solver, mut state) = bubble_setup(8, 0.001);
        state.flow.v = Field::from_fn_vector(&solver.vspace, |p| {
            [p[1] * (1.0 - p[1]) * p[0], -p[0] * (1.0 - p[0])]
        });
        let phi_zero = Field::zero(&solver.p1);
        state.phase.phi = phi_zero.clone();
        state.phi_prev = phi_zero.clone();
        let gl = solver.ch.energy(&state.phase);
        let e1 = solver.total_energy(&state) - gl;
        for c in state.flow.v.coeffs.iter_mut() {
            *c *= 2.0;
        }
        let e2 = solver.total_energy(&state) - gl;
        assert!((e2 - 4.0 * e1).abs() < 1e-10 * e1.abs().max(1.0));
    }

    #[test]
    fn total_energy_two_quadrature_routes_agree() {
        let (solver, mut state) = bubble_setup(8, 0.001);
        state.flow.v = Field::from_fn_vector(&solver.vspace, |p| {
            [(p[0] * p[1]).sin(), p[0] - p[1]]
        });
        let e = solver.total_energy(&state);
        // independent route: direct degree-8 quadrature of the integrands
        let mesh = &solver.p1.mesh;
        let rho_prev = solver.rho_field(&state.phi_prev);
        let mut kin = 0.0;
        let mut grad = 0.0;
        let mut quad = 0.0;
        for cell in 0..mesh.n_cells() {
            let geom = mesh.cell_geom(cell);
            for qp in crate::quad::rule_degree8() {
                let v = state.flow.v.eval_vector(cell, qp.bary);
                let rho = rho_prev.eval_scalar(cell, qp.bary);
                let g = state.phase.phi.eval_grad_scalar(cell, qp.bary, &geom);
                let phi = state.phase.phi.eval_scalar(cell, qp.bary);
                let w = qp.weight * geom.area;
                kin += w * 0.5 * rho * (v[0] * v[0] + v[1] * v[1]);
                grad += w * 0.5 * (g[0] * g[0] + g[1] * g[1]);
                quad += w * 0.5 * phi * phi;
            }
        }
        let pr = solver.ch.params;
        // nodal potential part with lumped weights (definitionally nodal)
        let mut pot = 0.0;
        for (w, &p) in solver.ch.lumped.iter().zip(&state.phase.phi.coeffs) {
            let _ = p;
            pot += w * 0.0; // double obstacle: zero inside the bounds
        }
        let e_direct =
            kin + pr.grad_coeff() * grad + pr.pot_coeff() * (pot - pr.kappa * quad);
        assert!(
            (e - e_direct).abs() <= 1e-12 * e.abs().max(1.0),
            "{e} vs {e_direct}"
        );
    }
}
