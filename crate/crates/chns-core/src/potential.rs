//! Free-energy potentials: the convex part Psi_0 of Psi(phi) = Psi_0(phi) -
//! (kappa/2) phi^2, in smooth (double-well, penalized) and nonsmooth
//! (double-obstacle) variants.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    /// Psi_0(phi) = 1/4 phi^4.
    DoubleWell,
    /// Psi_0(phi) = 1/(2 alpha) (max(0, phi-1)^2 + min(0, phi+1)^2).
    MoreauYosida { alpha: f64 },
    /// Psi_0(phi) = (s/r) (|max(0, phi-1)|^r + |min(0, phi+1)|^r).
    RelaxedObstacle { r: f64, s: f64 },
    /// Psi_0 = indicator of [psi1, psi2].
    DoubleObstacle { psi1: f64, psi2: f64 },
}

/// Result of a pointwise potential evaluation.
#[derive(Debug, Clone, Copy)]
pub enum PotentialEval {
    Smooth { value: f64, d1: f64, d2: f64 },
    /// Indicator value (0 inside, +inf outside) and the subgradient interval.
    Obstacle { value: f64, subgradient: (f64, f64) },
}

impl Potential {
    pub fn double_obstacle() -> Potential {
        Potential::DoubleObstacle { psi1: -1.0, psi2: 1.0 }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, Potential::DoubleObstacle { .. })
    }

    pub fn obstacle_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Potential::DoubleObstacle { psi1, psi2 } => Some((*psi1, *psi2)),
            _ => None,
        }
    }

    pub fn eval(&self, phi: f64) -> PotentialEval {
        match *self {
            Potential::DoubleWell => PotentialEval::Smooth {
                value: 0.25 * phi.powi(4),
                d1: phi.powi(3),
                d2: 3.0 * phi * phi,
            },
            Potential::MoreauYosida { alpha } => {
                let up = (phi - 1.0).max(0.0);
                let lo = (phi + 1.0).min(0.0);
                PotentialEval::Smooth {
                    value: (up * up + lo * lo) / (2.0 * alpha),
                    d1: (up + lo) / alpha,
                    d2: if up > 0.0 || lo < 0.0 { 1.0 / alpha } else { 0.0 },
                }
            }
            Potential::RelaxedObstacle { r, s } => {
                let up = (phi - 1.0).max(0.0);
                let lo = -(phi + 1.0).min(0.0); // |min(0, phi+1)|
                let curv = |t: f64| if t > 0.0 { t.powf(r - 2.0) } else { 0.0 };
                PotentialEval::Smooth {
                    value: (s / r) * (up.powf(r) + lo.powf(r)),
                    d1: s * (up.powf(r - 1.0) - lo.powf(r - 1.0)),
                    d2: s * (r - 1.0) * (curv(up) + curv(lo)),
                }
            }
            Potential::DoubleObstacle { psi1, psi2 } => {
                if phi < psi1 || phi > psi2 {
                    PotentialEval::Obstacle {
                        value: f64::INFINITY,
                        subgradient: (f64::NAN, f64::NAN),
                    }
                } else {
                    let lower = if phi <= psi1 { f64::NEG_INFINITY } else { 0.0 };
                    let upper = if phi >= psi2 { f64::INFINITY } else { 0.0 };
                    PotentialEval::Obstacle { value: 0.0, subgradient: (lower, upper) }
                }
            }
        }
    }

    /// Psi_0 value; +inf outside the obstacle interval.
    pub fn value(&self, phi: f64) -> f64 {
        match self.eval(phi) {
            PotentialEval::Smooth { value, .. } => value,
            PotentialEval::Obstacle { value, .. } => value,
        }
    }

    /// Psi_0' for smooth variants; panics on the double obstacle.
    pub fn d1(&self, phi: f64) -> f64 {
        match self.eval(phi) {
            PotentialEval::Smooth { d1, .. } => d1,
            PotentialEval::Obstacle { .. } => {
                panic!("derivative of the double-obstacle potential is set-valued")
            }
        }
    }

    /// Psi_0'' for smooth variants.
    pub fn d2(&self, phi: f64) -> f64 {
        match self.eval(phi) {
            PotentialEval::Smooth { d2, .. } => d2,
            PotentialEval::Obstacle { .. } => {
                panic!("derivative of the double-obstacle potential is set-valued")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn moreau_yosida_inside_is_zero() {
        let p = Potential::MoreauYosida { alpha: 0.1 };
        match p.eval(0.5) {
            PotentialEval::Smooth { value, d1, d2 } => {
                assert_eq!(value, 0.0);
                assert_eq!(d1, 0.0);
                assert_eq!(d2, 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn moreau_yosida_penalizes_excess() {
        let p = Potential::MoreauYosida { alpha: 0.1 };
        match p.eval(1.5) {
            PotentialEval::Smooth { value, d1, .. } => {
                assert!((value - 1.25).abs() < 1e-14);
                assert!((d1 - 5.0).abs() < 1e-14);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn double_well_reference_values() {
        match Potential::DoubleWell.eval(1.0) {
            PotentialEval::Smooth { value, d1, d2 } => {
                assert!((value - 0.25).abs() < 1e-15);
                assert!((d1 - 1.0).abs() < 1e-15);
                assert!((d2 - 3.0).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn obstacle_outside_is_infinite() {
        let p = Potential::double_obstacle();
        assert!(p.value(1.5).is_infinite());
        assert!(p.value(-1.0 - 1e-12).is_infinite());
        assert_eq!(p.value(0.3), 0.0);
    }

    #[test]
    fn obstacle_subgradient_intervals() {
        let p = Potential::double_obstacle();
        match p.eval(1.0) {
            PotentialEval::Obstacle { subgradient, .. } => {
                assert_eq!(subgradient.0, 0.0);
                assert!(subgradient.1.is_infinite());
            }
            _ => unreachable!(),
        }
        match p.eval(0.0) {
            PotentialEval::Obstacle { subgradient, .. } => {
                assert_eq!(subgradient, (0.0, 0.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for p in [
            Potential::DoubleWell,
            Potential::MoreauYosida { alpha: 0.05 },
            Potential::RelaxedObstacle { r: 4.0, s: 1.0 },
        ] {
            let mut checked = 0;
            while checked < 20 {
                let phi = 4.0 * rng.random::<f64>() - 2.0;
                // skip kink neighborhoods of the penalized variants
                if (phi - 1.0).abs() < 1e-3 || (phi + 1.0).abs() < 1e-3 {
                    continue;
                }
                let fd = (p.d1(phi + h) - p.d1(phi - h)) / (2.0 * h);
                let d2 = p.d2(phi);
                let denom = d2.abs().max(1.0);
                assert!(
                    (fd - d2).abs() / denom < 1e-6,
                    "{p:?} at {phi}: fd {fd} vs d2 {d2}"
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn smooth_variants_are_convex() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for p in [
            Potential::DoubleWell,
            Potential::MoreauYosida { alpha: 0.2 },
            Potential::RelaxedObstacle { r: 2.0, s: 3.0 },
        ] {
            for _ in 0..200 {
                let phi = 6.0 * rng.random::<f64>() - 3.0;
                assert!(p.value(phi) >= 0.0);
                assert!(p.d2(phi) >= 0.0);
            }
        }
    }
}
