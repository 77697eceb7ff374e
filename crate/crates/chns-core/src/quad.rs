//! Quadrature rules on the reference triangle {(x,y): x,y >= 0, x+y <= 1}.
//!
//! Weights sum to one; a cell integral is |T| * sum(w_q f(x_q)).

/// A quadrature point in barycentric coordinates with its weight.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Degree-6 exact Dunavant rule, 12 points. Default rule for all consistent
/// bilinear and trilinear forms up to quadratic elements.
pub fn rule_degree6() -> &'static [QuadPoint] {
    static RULE: std::sync::OnceLock<Vec<QuadPoint>> = std::sync::OnceLock::new();
    RULE.get_or_init(|| {
        let mut pts = Vec::new();
        push_sym3(&mut pts, 0.063089014491502, 0.050844906370207);
        push_sym3(&mut pts, 0.249286745170910, 0.116786275726379);
        push_sym6(&mut pts, 0.310352451033785, 0.053145049844816, 0.082851075618374);
        pts
    })
}

/// Degree-8 exact Dunavant rule, 16 points. Independent oracle rule.
pub fn rule_degree8() -> &'static [QuadPoint] {
    static RULE: std::sync::OnceLock<Vec<QuadPoint>> = std::sync::OnceLock::new();
    RULE.get_or_init(|| {
        let mut pts = vec![QuadPoint {
            bary: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            weight: 0.144315607677787,
        }];
        push_sym3(&mut pts, 0.459292588292723, 0.095091634267285);
        push_sym3(&mut pts, 0.170569307751760, 0.103217370534718);
        push_sym3(&mut pts, 0.050547228317031, 0.032458497623198);
        push_sym6(&mut pts, 0.008394777409958, 0.263112829634638, 0.027230314174435);
        pts
    })
}

/// Vertex rule (mass lumping): exact for linears, nonnegative weights.
pub fn rule_lumped() -> &'static [QuadPoint] {
    static RULE: std::sync::OnceLock<Vec<QuadPoint>> = std::sync::OnceLock::new();
    RULE.get_or_init(|| {
        (0..3)
            .map(|k| {
                let mut bary = [0.0; 3];
                bary[k] = 1.0;
                QuadPoint { bary, weight: 1.0 / 3.0 }
            })
            .collect()
    })
}

/// Points (1-2a, a, a) and permutations, repeated coordinate `a`.
fn push_sym3(pts: &mut Vec<QuadPoint>, a: f64, w: f64) {
    let c = 1.0 - 2.0 * a;
    for bary in [[c, a, a], [a, c, a], [a, a, c]] {
        pts.push(QuadPoint { bary, weight: w });
    }
}

/// All six permutations of (a, b, 1-a-b).
fn push_sym6(pts: &mut Vec<QuadPoint>, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    for bary in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        pts.push(QuadPoint { bary, weight: w });
    }
}
