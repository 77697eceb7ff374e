//! Semi-discrete Cahn-Hilliard stepping: convex-concave splitting with
//! Newton for smooth potentials, and a primal-dual active set method for the
//! double-obstacle potential.
//!
//! Discrete forms per step (phi_new, mu_new) from (phi, mu) with velocity v:
//!   M (phi_new - phi)/tau + T phi + A_m mu_new = 0
//!   gc A phi_new + pc W a_new - pc kappa M phi - M mu_new = 0
//! with T the transport matrix of v, A_m the m(phi)-weighted stiffness, W the
//! lumped nodal weights, a_new = Psi_0'(phi_new) nodally (smooth) or the
//! obstacle multiplier (PDAS). gc/pc carry the sigma-epsilon scaling.

use crate::assemble;
use crate::error::{ChnsError, Result};
use crate::field::Field;
use crate::linalg::{dot, BlockSystem, Csr, SparseLu};
use crate::potential::Potential;
use crate::space::{Degree, FeSpaceRef};

/// Mobility coefficient m(phi).
#[derive(Debug, Clone, Copy)]
pub enum Mobility {
    Constant(f64),
    /// Affine interpolation like the density: m(phi) = (m1+m2)/2 + (m2-m1)/2 phi.
    Affine { m1: f64, m2: f64 },
}

impl Mobility {
    pub fn eval(&self, phi: f64) -> f64 {
        match *self {
            Mobility::Constant(m) => m,
            Mobility::Affine { m1, m2 } => 0.5 * (m1 + m2) + 0.5 * (m2 - m1) * phi,
        }
    }

    pub fn deriv(&self) -> f64 {
        match *self {
            Mobility::Constant(_) => 0.0,
            Mobility::Affine { m1, m2 } => 0.5 * (m2 - m1),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Mobility::Constant(_))
    }
}

/// Scaling convention of the chemical-potential equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChScaling {
    /// sigma*eps on the gradient term, sigma/eps on the potential terms.
    #[default]
    Scaled,
    /// The semi-discrete form verbatim (no sigma, eps factors).
    Unscaled,
}

#[derive(Debug, Clone, Copy)]
pub struct ChParams {
    pub sigma: f64,
    pub eps: f64,
    pub kappa: f64,
    pub mobility: Mobility,
    pub tau: f64,
    pub scaling: ChScaling,
}

impl ChParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 || self.eps <= 0.0 || self.tau <= 0.0 || self.kappa < 0.0 {
            return Err(ChnsError::InvalidParameter(
                "sigma, eps, tau must be positive and kappa nonnegative".into(),
            ));
        }
        let lower = match self.mobility {
            Mobility::Constant(m) => m,
            Mobility::Affine { m1, m2 } => m1.min(m2),
        };
        if lower <= 0.0 {
            return Err(ChnsError::InvalidParameter(
                "mobility must be bounded below by a positive constant on [-1,1]".into(),
            ));
        }
        Ok(())
    }

    /// Coefficient of the gradient term in the mu-equation.
    pub fn grad_coeff(&self) -> f64 {
        match self.scaling {
            ChScaling::Scaled => self.sigma * self.eps,
            ChScaling::Unscaled => 1.0,
        }
    }

    /// Coefficient of the potential and kappa terms in the mu-equation.
    pub fn pot_coeff(&self) -> f64 {
        match self.scaling {
            ChScaling::Scaled => self.sigma / self.eps,
            ChScaling::Unscaled => 1.0,
        }
    }
}

/// Phase field, chemical potential and obstacle bookkeeping at one instant.
#[derive(Debug, Clone)]
pub struct PhaseState {
    pub phi: Field,
    pub mu: Field,
    /// Nodal slack: Psi_0'(phi) in smooth mode, the obstacle multiplier in
    /// double-obstacle mode.
    pub slack: Field,
    pub active_plus: Vec<usize>,
    pub active_minus: Vec<usize>,
}

impl PhaseState {
    pub fn new(phi: Field, mu: Field) -> PhaseState {
        let slack = Field::zero(&phi.space);
        PhaseState { phi, mu, slack, active_plus: Vec::new(), active_minus: Vec::new() }
    }

    pub fn from_initial(space: &FeSpaceRef, phi0: impl Fn([f64; 2]) -> f64) -> PhaseState {
        PhaseState::new(Field::from_fn(space, phi0), Field::zero(space))
    }

    /// Fill the slack with the nodal derivative of a smooth potential.
    pub fn refresh_smooth_slack(&mut self, potential: &Potential) {
        if potential.is_smooth() {
            for (s, &p) in self.slack.coeffs.iter_mut().zip(&self.phi.coeffs) {
                *s = potential.d1(p);
            }
            self.active_plus.clear();
            self.active_minus.clear();
        }
    }
}

/// Assembled operators for CH stepping on one mesh with one velocity field.
pub struct ChSolver {
    pub space: FeSpaceRef,
    pub params: ChParams,
    pub potential: Potential,
    pub mass: Csr,
    pub stiff: Csr,
    pub lumped: Vec<f64>,
    pub transport: Option<Csr>,
    mass_lu: SparseLu,
    /// Constant-mobility stiffness, when the mobility does not depend on phi.
    const_mob_stiff: Option<Csr>,
    pub max_newton: usize,
    pub newton_tol: f64,
    pub max_pdas: usize,
}

impl ChSolver {
    pub fn new(
        space: &FeSpaceRef,
        velocity: Option<&Field>,
        potential: Potential,
        params: ChParams,
    ) -> Result<ChSolver> {
        params.validate()?;
        assert_eq!(space.degree, Degree::P1);
        let mass = assemble::mass_matrix(space, assemble::Weight::One);
        let stiff = assemble::stiffness_matrix(space, assemble::Weight::One);
        let lumped = assemble::lumped_weights(space);
        let transport = match velocity {
            Some(v) => {
                let v_local = if v.space.mesh.id == space.mesh.id {
                    v.clone()
                } else {
                    v.interpolate_onto(&crate::field::space_like(&v.space, &space.mesh))?
                };
                Some(assemble::transport_matrix(space, &v_local))
            }
            None => None,
        };
        let mass_lu = SparseLu::factor(&mass)?;
        let const_mob_stiff = match params.mobility {
            Mobility::Constant(m) => {
                let mut a = stiff.clone();
                a.scale(m);
                Some(a)
            }
            Mobility::Affine { .. } => None,
        };
        Ok(ChSolver {
            space: space.clone(),
            params,
            potential,
            mass,
            stiff,
            lumped,
            transport,
            mass_lu,
            const_mob_stiff,
            max_newton: 30,
            newton_tol: 1e-10,
            max_pdas: 60,
        })
    }

    /// m(phi)-weighted stiffness for the given explicit phase field.
    pub fn mobility_stiffness(&self, phi: &Field) -> Csr {
        match &self.const_mob_stiff {
            Some(a) => a.clone(),
            None => {
                let mob = self.params.mobility;
                let w = Field::from_coeffs(
                    &self.space,
                    phi.coeffs.iter().map(|&p| mob.eval(p)).collect(),
                );
                assemble::stiffness_matrix(&self.space, assemble::Weight::P1Field(&w))
            }
        }
    }

    /// Explicit part of the CH1 equation moved to the right-hand side:
    /// M phi/tau - T phi.
    pub fn ch1_rhs(&self, phi: &Field) -> Vec<f64> {
        let n = self.space.n_dof;
        let mut rhs = vec![0.0; n];
        self.mass.matvec_add(&phi.coeffs, 1.0 / self.params.tau, &mut rhs);
        if let Some(t) = &self.transport {
            t.matvec_add(&phi.coeffs, -1.0, &mut rhs);
        }
        rhs
    }

    /// Dual norm induced by the mass matrix: sqrt(r^T M^-1 r) blockwise.
    fn dual_norm(&self, r1: &[f64], r2: &[f64]) -> f64 {
        let s1 = self.mass_lu.solve(r1);
        let s2 = self.mass_lu.solve(r2);
        (dot(r1, &s1) + dot(r2, &s2)).max(0.0).sqrt()
    }

    /// One convex-concave splitting step with a smooth potential.
    pub fn step_splitting(&self, state: &PhaseState) -> Result<PhaseState> {
        let rhs1 = self.ch1_rhs(&state.phi);
        self.step_splitting_with_rhs(state, &rhs1)
    }

    /// Splitting step with the CH1 right-hand side supplied by the caller
    /// (the coupled solver assembles the transport term from its velocity
    /// iterate).
    pub fn step_splitting_with_rhs(&self, state: &PhaseState, rhs1: &[f64]) -> Result<PhaseState> {
        if !self.potential.is_smooth() {
            return Err(ChnsError::InvalidParameter(
                "splitting step requires a smooth potential".into(),
            ));
        }
        let n = self.space.n_dof;
        let tau = self.params.tau;
        let gc = self.params.grad_coeff();
        let pc = self.params.pot_coeff();
        let kappa = self.params.kappa;
        let a_m = self.mobility_stiffness(&state.phi);
        // rhs of mu-equation: pc*kappa*M phi
        let mut rhs2 = vec![0.0; n];
        self.mass.matvec_add(&state.phi.coeffs, pc * kappa, &mut rhs2);

        let mut phi = state.phi.coeffs.clone();
        let mut mu = state.mu.coeffs.clone();
        let residual = |phi: &[f64], mu: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut r1 = vec![0.0; n];
            self.mass.matvec_add(phi, 1.0 / tau, &mut r1);
            a_m.matvec_add(mu, 1.0, &mut r1);
            for i in 0..n {
                r1[i] -= rhs1[i];
            }
            let mut r2 = vec![0.0; n];
            self.stiff.matvec_add(phi, gc, &mut r2);
            self.mass.matvec_add(mu, -1.0, &mut r2);
            for i in 0..n {
                r2[i] += pc * self.lumped[i] * self.potential.d1(phi[i]) - rhs2[i];
            }
            (r1, r2)
        };

        let (mut r1, mut r2) = residual(&phi, &mu);
        let mut res = self.dual_norm(&r1, &r2);
        let mut iter = 0;
        while res > self.newton_tol {
            if iter >= self.max_newton {
                return Err(ChnsError::NonlinearSolve { iterations: iter, residual: res });
            }
            let mut sys = BlockSystem::new(2 * n);
            sys.add_matrix(0, 0, &self.mass, 1.0 / tau);
            sys.add_matrix(0, n, &a_m, 1.0);
            sys.add_matrix(n, 0, &self.stiff, gc);
            for i in 0..n {
                sys.add_entry(n + i, i, pc * self.lumped[i] * self.potential.d2(phi[i]));
            }
            sys.add_matrix(n, n, &self.mass, -1.0);
            sys.add_rhs(0, &r1, -1.0);
            sys.add_rhs(n, &r2, -1.0);
            let lu = SparseLu::factor(&sys.build())?;
            let delta = lu.solve(&sys.rhs);
            // damped update: halve until the residual decreases
            let mut step = 1.0;
            loop {
                let phi_try: Vec<f64> =
                    phi.iter().zip(&delta[..n]).map(|(p, d)| p + step * d).collect();
                let mu_try: Vec<f64> =
                    mu.iter().zip(&delta[n..]).map(|(m, d)| m + step * d).collect();
                let (t1, t2) = residual(&phi_try, &mu_try);
                let res_try = self.dual_norm(&t1, &t2);
                if res_try < res || step < 1e-4 {
                    phi = phi_try;
                    mu = mu_try;
                    r1 = t1;
                    r2 = t2;
                    res = res_try;
                    break;
                }
                step *= 0.5;
            }
            iter += 1;
        }
        let mut next = PhaseState::new(
            Field::from_coeffs(&self.space, phi),
            Field::from_coeffs(&self.space, mu),
        );
        next.refresh_smooth_slack(&self.potential);
        Ok(next)
    }

    /// One primal-dual active set step with the double-obstacle potential.
    pub fn step_pdas(&self, state: &PhaseState) -> Result<PhaseState> {
        let rhs1 = self.ch1_rhs(&state.phi);
        self.step_pdas_with_rhs(state, &rhs1)
    }

    /// PDAS step with a caller-supplied CH1 right-hand side.
    pub fn step_pdas_with_rhs(&self, state: &PhaseState, rhs1: &[f64]) -> Result<PhaseState> {
        let (psi1, psi2) = match self.potential {
            Potential::DoubleObstacle { psi1, psi2 } => (psi1, psi2),
            _ => {
                return Err(ChnsError::InvalidParameter(
                    "PDAS step requires the double-obstacle potential".into(),
                ))
            }
        };
        let n = self.space.n_dof;
        let tau = self.params.tau;
        let gc = self.params.grad_coeff();
        let pc = self.params.pot_coeff();
        let kappa = self.params.kappa;
        let a_m = self.mobility_stiffness(&state.phi);
        let mut rhs2 = vec![0.0; n];
        self.mass.matvec_add(&state.phi.coeffs, pc * kappa, &mut rhs2);

        let mut active_plus: Vec<bool> = vec![false; n];
        let mut active_minus: Vec<bool> = vec![false; n];
        for &j in &state.active_plus {
            active_plus[j] = true;
        }
        for &j in &state.active_minus {
            active_minus[j] = true;
        }
        let shift = 1.0; // PDAS constant c > 0

        let mut last_res = f64::INFINITY;
        for _iter in 0..self.max_pdas {
            // unknowns (phi, mu, a)
            let mut sys = BlockSystem::new(3 * n);
            sys.add_matrix(0, 0, &self.mass, 1.0 / tau);
            sys.add_matrix(0, n, &a_m, 1.0);
            sys.add_rhs(0, &rhs1, 1.0);
            sys.add_matrix(n, 0, &self.stiff, gc);
            sys.add_matrix(n, n, &self.mass, -1.0);
            for i in 0..n {
                sys.add_entry(n + i, 2 * n + i, pc * self.lumped[i]);
            }
            sys.add_rhs(n, &rhs2, 1.0);
            for i in 0..n {
                if active_plus[i] {
                    sys.add_entry(2 * n + i, i, 1.0);
                    sys.rhs[2 * n + i] = psi2;
                } else if active_minus[i] {
                    sys.add_entry(2 * n + i, i, 1.0);
                    sys.rhs[2 * n + i] = psi1;
                } else {
                    sys.add_entry(2 * n + i, 2 * n + i, 1.0);
                }
            }
            let lu = SparseLu::factor(&sys.build())?;
            let sol = lu.solve(&sys.rhs);
            let phi = &sol[..n];
            let mu = &sol[n..2 * n];
            let a = &sol[2 * n..];

            let mut next_plus = vec![false; n];
            let mut next_minus = vec![false; n];
            for i in 0..n {
                next_plus[i] = a[i] + shift * (phi[i] - psi2) > 0.0;
                next_minus[i] = a[i] + shift * (phi[i] - psi1) < 0.0;
            }
            let mut viol: f64 = 0.0;
            for i in 0..n {
                viol = viol.max(phi[i] - psi2).max(psi1 - phi[i]);
            }
            last_res = viol.max(0.0);
            if next_plus == active_plus && next_minus == active_minus {
                let mut next = PhaseState::new(
                    Field::from_coeffs(&self.space, phi.to_vec()),
                    Field::from_coeffs(&self.space, mu.to_vec()),
                );
                next.slack = Field::from_coeffs(&self.space, a.to_vec());
                next.active_plus = (0..n).filter(|&i| active_plus[i]).collect();
                next.active_minus = (0..n).filter(|&i| active_minus[i]).collect();
                return Ok(next);
            }
            active_plus = next_plus;
            active_minus = next_minus;
        }
        Err(ChnsError::ActiveSetCycle { iterations: self.max_pdas, residual: last_res })
    }

    /// Dispatch on the potential variant.
    pub fn step(&self, state: &PhaseState) -> Result<PhaseState> {
        if self.potential.is_smooth() {
            self.step_splitting(state)
        } else {
            self.step_pdas(state)
        }
    }

    /// Dispatch with a caller-supplied CH1 right-hand side.
    pub fn step_with_rhs(&self, state: &PhaseState, rhs1: &[f64]) -> Result<PhaseState> {
        if self.potential.is_smooth() {
            self.step_splitting_with_rhs(state, rhs1)
        } else {
            self.step_pdas_with_rhs(state, rhs1)
        }
    }

    /// Ginzburg-Landau energy of a state.
    pub fn energy(&self, state: &PhaseState) -> f64 {
        ch_energy_with(
            &state.phi,
            &self.stiff,
            &self.mass,
            &self.lumped,
            &self.potential,
            &self.params,
        )
    }
}

/// Ginzburg-Landau part of the total energy from preassembled operators:
/// gc/2 (grad phi, grad phi) + pc (sum_j W_j Psi_0(phi_j) - kappa/2 (phi, phi)).
pub fn ch_energy_with(
    phi: &Field,
    stiff: &Csr,
    mass: &Csr,
    lumped: &[f64],
    potential: &Potential,
    params: &ChParams,
) -> f64 {
    let gc = params.grad_coeff();
    let pc = params.pot_coeff();
    let grad = 0.5 * gc * stiff.quad_form(&phi.coeffs, &phi.coeffs);
    let mut pot = 0.0;
    for (w, &p) in lumped.iter().zip(&phi.coeffs) {
        let v = match potential {
            // tolerate solver-level roundoff outside the bounds
            Potential::DoubleObstacle { psi1, psi2 } => {
                if p < psi1 - 1e-9 || p > psi2 + 1e-9 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            _ => potential.value(p),
        };
        pot += w * v;
    }
    let quad = -0.5 * params.kappa * mass.quad_form(&phi.coeffs, &phi.coeffs);
    grad + pc * (pot + quad)
}

/// One-shot splitting step (assembles operators for the state's mesh).
pub fn ch_step_splitting(
    state: &PhaseState,
    velocity: Option<&Field>,
    potential: Potential,
    params: ChParams,
) -> Result<PhaseState> {
    ChSolver::new(&state.phi.space, velocity, potential, params)?.step_splitting(state)
}

/// One-shot PDAS step.
pub fn ch_step_pdas(
    state: &PhaseState,
    velocity: Option<&Field>,
    potential: Potential,
    params: ChParams,
) -> Result<PhaseState> {
    ChSolver::new(&state.phi.space, velocity, potential, params)?.step_pdas(state)
}

/// Ginzburg-Landau energy of a state (one-shot assembly).
pub fn ch_energy(state: &PhaseState, potential: &Potential, params: &ChParams) -> f64 {
    let space = &state.phi.space;
    let stiff = assemble::stiffness_matrix(space, assemble::Weight::One);
    let mass = assemble::mass_matrix(space, assemble::Weight::One);
    let lumped = assemble::lumped_weights(space);
    ch_energy_with(&state.phi, &stiff, &mass, &lumped, potential, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::mesh::{build_rect_mesh, Rect};
    use crate::space::FeSpace;

    fn params(tau: f64) -> ChParams {
        ChParams {
            sigma: 1.0,
            eps: 0.1,
            kappa: 1.0,
            mobility: Mobility::Constant(1.0),
            tau,
            scaling: ChScaling::Scaled,
        }
    }

    fn circle_phi(eps: f64) -> impl Fn([f64; 2]) -> f64 {
        move |p| {
            let d = 0.25 - ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
            (d / (std::f64::consts::SQRT_2 * eps)).tanh()
        }
    }

    #[test]
    fn zero_state_is_stationary() {
        let m = build_rect_mesh(8, 8, Rect::unit()).unwrap();
        let space = FeSpace::p1(&m);
        let state = PhaseState::from_initial(&space, |_| 0.0);
        let next = ch_step_splitting(&state, None, Potential::DoubleWell, params(1e-3)).unwrap();
        assert!(next.phi.coeffs.iter().all(|&v| v.abs() < 1e-12));
        assert!(next.mu.coeffs.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn splitting_conserves_mass() {
        let m = build_rect_mesh(12, 12, Rect::unit()).unwrap();
        let space = FeSpace::p1(&m);
        let pr = params(1e-4);
        let solver = ChSolver::new(&space, None, Potential::DoubleWell, pr).unwrap();
        let mut state = PhaseState::from_initial(&space, circle_phi(0.1));
        let m0 = state.phi.integral();
        for _ in 0..5 {
            state = solver.step_splitting(&state).unwrap();
            let drift = (state.phi.integral() - m0).abs();
            assert!(drift <= 1e-11, "mass drift {drift}");
        }
    }

    #[test]
    fn splitting_energy_non_increasing_without_transport() {
        let m = build_rect_mesh(12, 12, Rect::unit()).unwrap();
        let space = FeSpace::p1(&m);
        for tau in [1e-4, 1e-3, 1e-2] {
            for potential in [Potential::DoubleWell, Potential::MoreauYosida { alpha: 1e-2 }] {
                let solver = ChSolver::new(&space, None, potential, params(tau)).unwrap();
                let mut state = PhaseState::from_initial(&space, circle_phi(0.1));
                let mut e = solver.energy(&state);
                for _ in 0..8 {
                    state = solver.step_splitting(&state).unwrap();
                    let e_next = solver.energy(&state);
                    assert!(
                        e_next <= e + 1e-10 * e.abs().max(1.0),
                        "energy increased: {e} -> {e_next} (tau {tau}, {potential:?})"
                    );
                    e = e_next;
                }
            }
        }
    }

    #[test]
    fn pdas_interior_matches_unconstrained() {
        let m = build_rect_mesh(8, 8, Rect::unit()).unwrap();
        let space = FeSpace::p1(&m);
        let pr = params(1e-5);
        let state = PhaseState::from_initial(&space, |p| {
            0.3 * (std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).cos()
        });
        let solver = ChSolver::new(&space, None, Potential::double_obstacle(), pr).unwrap();
        let next = solver.step_pdas(&state).unwrap();
        assert!(next.active_plus.is_empty());
        assert!(next.active_minus.is_empty());
        // unconstrained linear step: same system with a == 0
        let n = space.n_dof;
        let mut sys = BlockSystem::new(2 * n);
        sys.add_matrix(0, 0, &solver.mass, 1.0 / pr.tau);
        sys.add_matrix(0, n, &solver.stiff, 1.0); // constant mobility 1
        sys.add_rhs(0, &solver.ch1_rhs(&state.phi), 1.0);
        sys.add_matrix(n, 0, &solver.stiff, pr.grad_coeff());
        sys.add_matrix(n, n, &solver.mass, -1.0);
        let mut rhs2 = vec![0.0; n];
        solver
            .mass
            .matvec_add(&state.phi.coeffs, pr.pot_coeff() * pr.kappa, &mut rhs2);
        sys.add_rhs(n, &rhs2, 1.0);
        let lu = SparseLu::factor(&sys.build()).unwrap();
        let sol = lu.solve(&sys.rhs);
        for i in 0..n {
            assert!((next.phi.coeffs[i] - sol[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn pdas_keeps_bounds_and_signs() {
        let m = build_rect_mesh(12, 12, Rect::unit()).unwrap();
        let space = FeSpace::p1(&m);
        let pr = params(5e-4);
        let solver = ChSolver::new(&space, None, Potential::double_obstacle(), pr).unwrap();
        // plateau initial state touching the upper bound
        let mut state = PhaseState::from_initial(&space, |p| {
            let d = 0.3 - ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
            (8.0 * d).clamp(-1.0, 1.0)
        });
        for _ in 0..10 {
            state = solver.step_pdas(&state).unwrap();
            let lo = state.phi.min_coeff();
            let hi = state.phi.max_coeff();
            assert!(lo >= -1.0 - 1e-10, "lower bound violated: {lo}");
            assert!(hi <= 1.0 + 1e-10, "upper bound violated: {hi}");
            for &j in &state.active_plus {
                assert!(state.slack.coeffs[j] >= -1e-9);
            }
            for &j in &state.active_minus {
                assert!(state.slack.coeffs[j] <= 1e-9);
            }
        }
        assert!(
            !state.active_plus.is_empty(),
            "plateau state should saturate the upper bound"
        );
    }

    #[test]
    fn moreau_yosida_converges_to_pdas() {
        let m = build_rect_mesh(10, 10, Rect::unit()).unwrap();
        let space = FeSpace::p1(&m);
        let pr = params(5e-4);
        let init = PhaseState::from_initial(&space, |p| {
            let d = 0.3 - ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
            (8.0 * d).clamp(-1.0, 1.0)
        });
        let pdas = ChSolver::new(&space, None, Potential::double_obstacle(), pr)
            .unwrap()
            .step_pdas(&init)
            .unwrap();
        let mut last_err = f64::INFINITY;
        for alpha in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
            let reg = ChSolver::new(&space, None, Potential::MoreauYosida { alpha }, pr)
                .unwrap()
                .step_splitting(&init)
                .unwrap();
            let diff = Field::from_coeffs(
                &space,
                reg.phi
                    .coeffs
                    .iter()
                    .zip(&pdas.phi.coeffs)
                    .map(|(a, b)| a - b)
                    .collect(),
            );
            let err = crate::field::norm_l2_local(&diff);
            assert!(
                err <= last_err * (1.0 + 1e-9),
                "regularization error not decreasing: {last_err} -> {err} at alpha={alpha}"
            );
            last_err = err;
        }
        assert!(last_err < 1e-4, "alpha sweep should approach the PDAS solution");
    }

    #[test]
    fn energy_of_constant_states() {
        let m = build_rect_mesh(6, 6, Rect::unit()).unwrap();
        let space = FeSpace::p1(&m);
        let pr = params(1e-3);
        let zero = PhaseState::from_initial(&space, |_| 0.0);
        let e0 = ch_energy(&zero, &Potential::double_obstacle(), &pr);
        assert!(e0.abs() < 1e-14);
        let c = 0.4;
        let state = PhaseState::from_initial(&space, |_| c);
        let e = ch_energy(&state, &Potential::double_obstacle(), &pr);
        let expected = pr.pot_coeff() * (-0.5 * pr.kappa * c * c);
        assert!((e - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }
}
