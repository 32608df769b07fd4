//! Gauss-Legendre rules on the reference interval [-1, 1].

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss-Legendre rule with `order` points, exact for polynomials up to
    /// degree `2 * order - 1`.
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        let order = NonZeroUsize::new(order)
            .ok_or_else(|| Error::InvalidArgument("quadrature order must be at least 1".into()))?;
        let rule = GaussLegendre::new(order);
        let (points, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
        Ok(Self { points, weights })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Points needed so that a polynomial integrand of the given degree is integrated exactly.
pub fn points_for_degree(degree: usize) -> usize {
    degree / 2 + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in 1..=30 {
            let q = QuadratureRule::gauss_legendre(n).unwrap();
            let s: f64 = q.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "order {n}: {s}");
        }
    }

    #[test]
    fn exact_up_to_degree_2n_minus_1() {
        for n in 1..=12 {
            let q = QuadratureRule::gauss_legendre(n).unwrap();
            for p in 0..(2 * n) as i32 {
                let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
                let got = q.integrate(|x| x.powi(p));
                assert!((got - exact).abs() < 1e-13, "order {n}, degree {p}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn zero_order_is_rejected() {
        assert!(QuadratureRule::gauss_legendre(0).is_err());
    }
}
