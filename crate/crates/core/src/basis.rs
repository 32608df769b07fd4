//! T-complete harmonic weighting functions `1, ρ^m cos mθ, ρ^m sin mθ` and
//! their normal derivatives, in factorized polar form `R(ρ)·T(θ, α)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrefftzKind {
    Constant,
    Cos,
    Sin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrefftzFunction {
    pub kind: TrefftzKind,
    pub order: u32,
}

impl TrefftzFunction {
    pub const CONSTANT: TrefftzFunction = TrefftzFunction {
        kind: TrefftzKind::Constant,
        order: 0,
    };

    pub fn new(kind: TrefftzKind, order: u32) -> Result<Self> {
        match (kind, order) {
            (TrefftzKind::Constant, 0) => Ok(Self::CONSTANT),
            (TrefftzKind::Constant, m) => Err(Error::InvalidArgument(format!(
                "constant function must have order 0, got {m}"
            ))),
            (_, 0) => Err(Error::InvalidArgument(
                "cos/sin functions need order >= 1".into(),
            )),
            (kind, order) => Ok(Self { kind, order }),
        }
    }

    pub fn cos(order: u32) -> Self {
        Self::new(TrefftzKind::Cos, order).expect("order >= 1")
    }

    pub fn sin(order: u32) -> Self {
        Self::new(TrefftzKind::Sin, order).expect("order >= 1")
    }

    /// `R^u(ρ) = ρ^m`.
    pub fn radial_u(&self, rho: f64) -> f64 {
        rho.powi(self.order as i32)
    }

    /// `T^u(θ)`: 1, `cos mθ` or `sin mθ`.
    pub fn angular_u(&self, theta: f64) -> f64 {
        let m = self.order as f64;
        match self.kind {
            TrefftzKind::Constant => 1.0,
            TrefftzKind::Cos => (m * theta).cos(),
            TrefftzKind::Sin => (m * theta).sin(),
        }
    }

    /// `R^q(ρ) = ρ^{m-1}`; zero for the constant function, whose normal derivative vanishes.
    pub fn radial_q(&self, rho: f64) -> f64 {
        match self.kind {
            TrefftzKind::Constant => 0.0,
            _ => rho.powi(self.order as i32 - 1),
        }
    }

    /// `T^q(θ, α) = m·cos((m−1)θ − α)` or `m·sin((m−1)θ − α)`.
    pub fn angular_q(&self, theta: f64, alpha: f64) -> f64 {
        let m = self.order as f64;
        let arg = (m - 1.0) * theta - alpha;
        match self.kind {
            TrefftzKind::Constant => 0.0,
            TrefftzKind::Cos => m * arg.cos(),
            TrefftzKind::Sin => m * arg.sin(),
        }
    }

    pub fn u_star(&self, rho: f64, theta: f64) -> f64 {
        self.radial_u(rho) * self.angular_u(theta)
    }

    pub fn q_star(&self, rho: f64, theta: f64, alpha: f64) -> f64 {
        match self.kind {
            TrefftzKind::Constant => 0.0,
            _ => self.radial_q(rho) * self.angular_q(theta, alpha),
        }
    }

    /// Cartesian harmonic polynomial `Re/Im (x + iy)^m`.
    pub fn u_star_cartesian(&self, x: f64, y: f64) -> f64 {
        let (mut re, mut im) = (1.0, 0.0);
        for _ in 0..self.order {
            (re, im) = (re * x - im * y, re * y + im * x);
        }
        match self.kind {
            TrefftzKind::Constant => 1.0,
            TrefftzKind::Cos => re,
            TrefftzKind::Sin => im,
        }
    }

    /// Gradient of the Cartesian form: `m·(x + iy)^{m−1}` gives `(∂x, ∂y)`.
    pub fn gradient_cartesian(&self, x: f64, y: f64) -> (f64, f64) {
        if self.kind == TrefftzKind::Constant {
            return (0.0, 0.0);
        }
        let (mut re, mut im) = (1.0, 0.0);
        for _ in 1..self.order {
            (re, im) = (re * x - im * y, re * y + im * x);
        }
        let m = self.order as f64;
        match self.kind {
            TrefftzKind::Cos => (m * re, -m * im),
            TrefftzKind::Sin => (m * im, m * re),
            TrefftzKind::Constant => unreachable!(),
        }
    }
}

/// Which functions open the sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisPolicy {
    /// `1, x, y, x²−y², 2xy, …`
    #[default]
    Canonical,
    /// Drops the constant: `x, y, x²−y², 2xy, …`
    SkipConstant,
}

impl BasisPolicy {
    pub fn id(self) -> u32 {
        match self {
            BasisPolicy::Canonical => 0,
            BasisPolicy::SkipConstant => 1,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(BasisPolicy::Canonical),
            1 => Ok(BasisPolicy::SkipConstant),
            other => Err(Error::InvalidArgument(format!("unknown basis policy id {other}"))),
        }
    }
}

/// How an incomplete top-order pair is truncated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopTruncation {
    #[default]
    CosFirst,
    SinFirst,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSet {
    functions: Vec<TrefftzFunction>,
    policy: BasisPolicy,
    top: TopTruncation,
}

impl BasisSet {
    pub fn new(policy: BasisPolicy, n: usize, top: TopTruncation) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("basis needs at least one function".into()));
        }
        let mut functions = Vec::with_capacity(n);
        if policy == BasisPolicy::Canonical {
            functions.push(TrefftzFunction::CONSTANT);
        }
        let mut m = 1;
        while functions.len() < n {
            functions.push(TrefftzFunction::cos(m));
            if functions.len() < n {
                functions.push(TrefftzFunction::sin(m));
            } else if top == TopTruncation::SinFirst {
                *functions.last_mut().unwrap() = TrefftzFunction::sin(m);
            }
            m += 1;
        }
        Ok(Self {
            functions,
            policy,
            top,
        })
    }

    pub fn functions(&self) -> &[TrefftzFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn policy(&self) -> BasisPolicy {
        self.policy
    }

    pub fn policy_id(&self) -> u32 {
        self.policy.id()
    }

    pub fn top_truncation(&self) -> TopTruncation {
        self.top
    }

    /// True when the highest order holds only one of its cos/sin pair.
    pub fn has_incomplete_top(&self) -> bool {
        let top = self.max_order();
        top > 0 && self.functions.iter().filter(|f| f.order == top).count() == 1
    }

    pub fn max_order(&self) -> u32 {
        self.functions.iter().map(|f| f.order).max().unwrap_or(0)
    }

    /// Same policy with the other incomplete-pair member at the top order.
    pub fn with_alternate_top(&self) -> Result<Self> {
        let top = match self.top {
            TopTruncation::CosFirst => TopTruncation::SinFirst,
            TopTruncation::SinFirst => TopTruncation::CosFirst,
        };
        Self::new(self.policy, self.len(), top)
    }
}

pub fn default_basis(n: usize) -> Result<BasisSet> {
    BasisSet::new(BasisPolicy::Canonical, n, TopTruncation::CosFirst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    fn all_up_to(m: u32) -> Vec<TrefftzFunction> {
        let mut v = vec![TrefftzFunction::CONSTANT];
        for k in 1..=m {
            v.push(TrefftzFunction::cos(k));
            v.push(TrefftzFunction::sin(k));
        }
        v
    }

    #[test]
    fn point_values() {
        assert_eq!(TrefftzFunction::CONSTANT.u_star(3.0, 1.0), 1.0);
        assert!((TrefftzFunction::cos(1).u_star(2.0, 0.0) - 2.0).abs() < 1e-15);
        assert!((TrefftzFunction::sin(2).u_star(1.0, FRAC_PI_4) - 1.0).abs() < 1e-15);
        let s = 0.5f64.sqrt();
        assert!((2.0 * s * s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_derivative_values() {
        assert_eq!(TrefftzFunction::CONSTANT.q_star(1.0, 0.3, 0.2), 0.0);
        assert!((TrefftzFunction::cos(1).q_star(0.7, 1.3, 0.0) - 1.0).abs() < 1e-15);
        assert!(TrefftzFunction::cos(2).q_star(1.0, FRAC_PI_2, 0.0).abs() < 1e-15);
        // m = 1 at the origin is well defined.
        assert!((TrefftzFunction::sin(1).q_star(0.0, 0.0, -FRAC_PI_2) - 1.0).abs() < 1e-15);
        assert_eq!(TrefftzFunction::cos(3).q_star(0.0, 0.0, 0.4), 0.0);
    }

    #[test]
    fn cartesian_forms() {
        assert_eq!(TrefftzFunction::cos(2).u_star_cartesian(1.0, 1.0), 0.0);
        assert_eq!(TrefftzFunction::sin(2).u_star_cartesian(1.0, 1.0), 2.0);
        let f = TrefftzFunction::cos(3);
        assert_eq!(f.u_star_cartesian(2.0, 1.0), 8.0 - 3.0 * 2.0 * 1.0);
    }

    #[test]
    fn polar_matches_cartesian() {
        let mut seed = 7;
        for f in all_up_to(8) {
            for _ in 0..100 {
                let x = 4.0 * lcg(&mut seed) - 2.0;
                let y = 4.0 * lcg(&mut seed) - 2.0;
                let (rho, theta) = (x.hypot(y), y.atan2(x));
                let a = f.u_star(rho, theta);
                let b = f.u_star_cartesian(x, y);
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{f:?} {a} {b}");
            }
        }
    }

    #[test]
    fn harmonic_by_finite_differences() {
        let mut seed = 11;
        for f in all_up_to(6) {
            for _ in 0..50 {
                let x = 2.0 * lcg(&mut seed) - 1.0;
                let y = 2.0 * lcg(&mut seed) - 1.0;
                let u = |x, y| f.u_star_cartesian(x, y);
                let lap = |h: f64| {
                    (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4.0 * u(x, y)) / (h * h)
                };
                // Richardson step cancels the O(h²) stencil error.
                let h = 1e-2;
                let lap = (4.0 * lap(h / 2.0) - lap(h)) / 3.0;
                let scale = 1.0 + (x.hypot(y) + h).powi(f.order as i32);
                assert!(lap.abs() < 1e-6 * scale, "{f:?} lap {lap}");
            }
        }
    }

    #[test]
    fn q_star_is_normal_derivative() {
        let mut seed = 3;
        let eps = 1e-6;
        for f in all_up_to(6) {
            for _ in 0..40 {
                let x = 2.0 * lcg(&mut seed) - 1.0;
                let y = 2.0 * lcg(&mut seed) - 1.0;
                let alpha = 2.0 * PI * lcg(&mut seed) - PI;
                let (nx, ny) = (alpha.cos(), -alpha.sin());
                let fd = (f.u_star_cartesian(x + eps * nx, y + eps * ny)
                    - f.u_star_cartesian(x - eps * nx, y - eps * ny))
                    / (2.0 * eps);
                let q = f.q_star(x.hypot(y), y.atan2(x), alpha);
                assert!((fd - q).abs() < 1e-7 * (1.0 + q.abs()), "{f:?} {fd} {q}");
                let (gx, gy) = f.gradient_cartesian(x, y);
                assert!((gx * nx + gy * ny - q).abs() < 1e-12 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn radial_factors_multiply() {
        for f in all_up_to(10).into_iter().skip(1) {
            for &(s, rho) in &[(0.5, 1.7), (2.0, 0.3), (10.0, 1.1), (100.0, 0.9)] {
                let ru = f.radial_u(s * rho);
                assert!((ru - f.radial_u(s) * f.radial_u(rho)).abs() <= 1e-12 * ru.abs());
                let rq = f.radial_q(s * rho);
                assert!((rq - f.radial_q(s) * f.radial_q(rho)).abs() <= 1e-12 * rq.abs());
                let ratio = f.radial_q(s) / f.radial_u(s);
                assert!((ratio - 1.0 / s).abs() <= 1e-12 / s);
            }
        }
    }

    #[test]
    fn default_sequences() {
        let b = default_basis(4).unwrap();
        assert_eq!(
            b.functions(),
            &[
                TrefftzFunction::CONSTANT,
                TrefftzFunction::cos(1),
                TrefftzFunction::sin(1),
                TrefftzFunction::cos(2)
            ]
        );
        let skip = BasisSet::new(BasisPolicy::SkipConstant, 4, TopTruncation::CosFirst).unwrap();
        assert_eq!(
            skip.functions(),
            &[
                TrefftzFunction::cos(1),
                TrefftzFunction::sin(1),
                TrefftzFunction::cos(2),
                TrefftzFunction::sin(2)
            ]
        );
        assert_eq!(default_basis(1).unwrap().functions(), &[TrefftzFunction::CONSTANT]);
        assert!(matches!(default_basis(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn alternate_top_swaps_only_incomplete_pairs() {
        let b = default_basis(4).unwrap();
        assert!(b.has_incomplete_top());
        let alt = b.with_alternate_top().unwrap();
        assert_eq!(alt.functions()[3], TrefftzFunction::sin(2));
        assert_eq!(&alt.functions()[..3], &b.functions()[..3]);
        let full = default_basis(5).unwrap();
        assert!(!full.has_incomplete_top());
        assert_eq!(full.with_alternate_top().unwrap().functions(), full.functions());
    }

    #[test]
    fn functions_are_distinct() {
        let b = default_basis(31).unwrap();
        let mut seen = std::collections::HashSet::new();
        assert!(b.functions().iter().all(|f| seen.insert(*f)));
        assert_eq!(b.max_order(), 15);
    }

    #[test]
    fn invalid_functions() {
        assert!(TrefftzFunction::new(TrefftzKind::Cos, 0).is_err());
        assert!(TrefftzFunction::new(TrefftzKind::Constant, 2).is_err());
        assert_eq!(BasisPolicy::from_id(1).unwrap(), BasisPolicy::SkipConstant);
        assert!(BasisPolicy::from_id(9).is_err());
    }
}
