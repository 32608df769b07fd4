//! Quadrature assembly of `H` and `G`, the boundary capacitance matrix
//! `C = G⁻¹H`, mixed boundary-condition solves and conditioning diagnostics.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisPolicy, BasisSet, TopTruncation};
use crate::error::{Error, Result};
use crate::geometry::{frame_at, node_box_corner, normalize, normalize_about, BoundaryMesh, FrameData, Point2};
use crate::linalg::{equilibrate, max_abs, norm_inf, scale_rows_cols, DenseMatrix, LuFactor};
use crate::quadrature::{points_for_degree, QuadratureRule};

pub use crate::linalg::condition_estimate;

/// Row-sum tolerance relative to `max |C|`.
pub const NULL_VECTOR_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyOptions {
    /// Gauss points per element; `None` picks the exactness-based default.
    pub quadrature_order: Option<usize>,
    /// Fail instead of warn when the quadrature order is below the degree bound.
    pub strict_quadrature: bool,
    /// Assemble on the centred, radius-1 mesh and rescale by `1/s`.
    pub normalized: bool,
    /// Retry with the sin member at an incomplete top order when `G` is badly conditioned.
    pub top_fallback: bool,
    pub fallback_rcond: f64,
    pub singular_rcond: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            quadrature_order: None,
            strict_quadrature: false,
            normalized: true,
            top_fallback: true,
            fallback_rcond: 1e-10,
            singular_rcond: 1e-15,
        }
    }
}

impl AssemblyOptions {
    pub fn raw() -> Self {
        Self {
            normalized: false,
            ..Self::default()
        }
    }
}

/// Boundary capacitance matrix with the node metadata needed downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bcm {
    pub matrix: DenseMatrix,
    pub node_points: Vec<Point2>,
    /// `∫ φ_ν J dξ` per field node (element length for constant elements).
    pub node_weights: Vec<f64>,
    pub basis_policy_id: u32,
    pub top_truncation: TopTruncation,
    /// 1-norm condition estimate of the row/column-equilibrated `G`.
    pub cond_estimate_g: f64,
}

impl Bcm {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max_i |Σ_j C_ij|`.
    pub fn row_sum_residual(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.matrix.nrows();
        if self.matrix.ncols() != n || self.node_points.len() != n || self.node_weights.len() != n {
            return Err(Error::InvalidArgument(format!(
                "inconsistent BCM: {}x{} matrix, {} points, {} weights",
                n,
                self.matrix.ncols(),
                self.node_points.len(),
                self.node_weights.len()
            )));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) || self.node_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("BCM has non-finite entries or non-positive weights".into()));
        }
        let residual = self.row_sum_residual();
        if residual > NULL_VECTOR_TOL * max_abs(&self.matrix) {
            return Err(Error::InvalidArgument(format!(
                "BCM row sums reach {residual:e}; uniform potential must give zero flux"
            )));
        }
        Ok(())
    }
}

pub fn default_quadrature_order(mesh: &BoundaryMesh, basis: &BasisSet) -> usize {
    basis.max_order() as usize + mesh.max_geometry_degree() + mesh.max_field_degree() + 2
}

/// Minimum Gauss order for which straight-element integrands are integrated exactly.
pub fn required_quadrature_order(mesh: &BoundaryMesh, basis: &BasisSet) -> usize {
    points_for_degree(basis.max_order() as usize + mesh.max_geometry_degree() + mesh.max_field_degree())
}

pub fn check_quadrature(mesh: &BoundaryMesh, basis: &BasisSet, quad: &QuadratureRule, strict: bool) -> Result<()> {
    let required = required_quadrature_order(mesh, basis);
    if quad.order() < required {
        if strict {
            return Err(Error::InsufficientQuadrature {
                points: quad.order(),
                required,
            });
        }
        log::warn!(
            "quadrature with {} points is below the exactness bound of {required}",
            quad.order()
        );
    }
    Ok(())
}

fn check_sizes(mesh: &BoundaryMesh, basis: &BasisSet) -> Result<()> {
    if basis.len() != mesh.node_count() {
        return Err(Error::InvalidArgument(format!(
            "basis has {} functions but the mesh has {} field nodes",
            basis.len(),
            mesh.node_count()
        )));
    }
    Ok(())
}

/// Frame, quadrature weight and field-shape values at one Gauss point.
struct Sample {
    frame: FrameData,
    weight: f64,
    shapes: Vec<f64>,
    col: usize,
}

fn samples(mesh: &BoundaryMesh, quad: &QuadratureRule) -> Result<Vec<Sample>> {
    let offsets = mesh.node_offsets();
    let mut out = Vec::with_capacity(mesh.element_count() * quad.order());
    for (e, &col) in mesh.elements().iter().zip(&offsets) {
        for (xi, w) in quad.iter() {
            let frame = frame_at(e, xi)?;
            let shapes = (0..e.field_node_count()).map(|nu| e.field_shape(nu, xi)).collect();
            out.push(Sample {
                frame,
                weight: w * frame.jacobian,
                shapes,
                col,
            });
        }
    }
    Ok(out)
}

fn assemble_rows(
    mesh: &BoundaryMesh,
    basis: &BasisSet,
    quad: &QuadratureRule,
    want_h: bool,
    want_g: bool,
) -> Result<(DenseMatrix, DenseMatrix, Vec<f64>)> {
    check_sizes(mesh, basis)?;
    let n = mesh.node_count();
    let samples = samples(mesh, quad)?;
    // Each basis function owns one row of H and G.
    let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = basis
        .functions()
        .par_iter()
        .map(|f| {
            let mut h = vec![0.0; if want_h { n } else { 0 }];
            let mut g = vec![0.0; if want_g { n } else { 0 }];
            let mut g_abs = 0.0;
            for s in &samples {
                let FrameData { rho, theta, alpha, .. } = s.frame;
                if want_h {
                    let q = f.radial_q(rho) * f.angular_q(theta, alpha) * s.weight;
                    for (nu, phi) in s.shapes.iter().enumerate() {
                        h[s.col + nu] += phi * q;
                    }
                }
                if want_g {
                    let u = f.radial_u(rho) * f.angular_u(theta) * s.weight;
                    for (nu, phi) in s.shapes.iter().enumerate() {
                        g[s.col + nu] += phi * u;
                        g_abs += (phi * u).abs();
                    }
                }
            }
            (h, g, g_abs)
        })
        .collect();
    let mut h = DenseMatrix::zeros(if want_h { n } else { 0 }, if want_h { n } else { 0 });
    let mut g = DenseMatrix::zeros(if want_g { n } else { 0 }, if want_g { n } else { 0 });
    let mut g_abs = Vec::with_capacity(rows.len());
    for (i, (hr, gr, ga)) in rows.into_iter().enumerate() {
        g_abs.push(ga);
        for (j, v) in hr.into_iter().enumerate() {
            h[(i, j)] = v;
        }
        for (j, v) in gr.into_iter().enumerate() {
            g[(i, j)] = v;
        }
    }
    Ok((h, g, g_abs))
}

/// `H_ij = ∫ φ_ν q*_i J dξ` over the element owning column `j`.
pub fn assemble_h(mesh: &BoundaryMesh, basis: &BasisSet, quad: &QuadratureRule) -> Result<DenseMatrix> {
    Ok(assemble_rows(mesh, basis, quad, true, false)?.0)
}

/// `G_ij = ∫ φ_ν u*_i J dξ` over the element owning column `j`.
pub fn assemble_g(mesh: &BoundaryMesh, basis: &BasisSet, quad: &QuadratureRule) -> Result<DenseMatrix> {
    Ok(assemble_rows(mesh, basis, quad, false, true)?.1)
}

pub fn assemble_hg(mesh: &BoundaryMesh, basis: &BasisSet, quad: &QuadratureRule) -> Result<(DenseMatrix, DenseMatrix)> {
    let (h, g, _) = assemble_rows(mesh, basis, quad, true, true)?;
    Ok((h, g))
}

/// A `G` row whose entries all cancel below this fraction of the row's
/// absolute integral is rounding noise: the weighting function is invisible
/// to the constant-element discretization (e.g. `2xy` on a centred rectangle).
pub const CANCELLATION_TOL: f64 = 1e-12;

fn quadrature_for(mesh: &BoundaryMesh, basis: &BasisSet, opts: &AssemblyOptions) -> Result<QuadratureRule> {
    let order = opts
        .quadrature_order
        .unwrap_or_else(|| default_quadrature_order(mesh, basis));
    let quad = QuadratureRule::gauss_legendre(order)?;
    check_quadrature(mesh, basis, &quad, opts.strict_quadrature)?;
    Ok(quad)
}

/// `G` and `H` after row/column equilibration of `G`; `C = diag(col) · lu⁻¹ · h`.
struct Factored {
    h: DenseMatrix,
    col: DVector<f64>,
    lu: LuFactor,
    rcond: f64,
    cond: f64,
    basis: BasisSet,
}

fn factor_with(mesh: &BoundaryMesh, basis: BasisSet, opts: &AssemblyOptions) -> Result<Factored> {
    let quad = quadrature_for(mesh, &basis, opts)?;
    let (h, mut g, g_abs) = assemble_rows(mesh, &basis, &quad, true, true)?;
    // Zero noise rows exactly so equilibration cannot blow them up to unit
    // size and hide the singularity.
    for (i, a) in g_abs.iter().enumerate() {
        if g.row(i).amax() <= CANCELLATION_TOL * a {
            g.row_mut(i).fill(0.0);
        }
    }
    // Rows of G span powers of the domain size and columns scale with element
    // length; neither says anything about solvability.
    let (row, col) = equilibrate(&g);
    let lu = LuFactor::new(&scale_rows_cols(&g, &row, &col))?;
    let cond = lu.condition_estimate();
    let rcond = if cond.is_finite() { 1.0 / cond } else { 0.0 };
    Ok(Factored {
        h: DenseMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * row[i]),
        col,
        lu,
        rcond,
        cond,
        basis,
    })
}

/// `C = G⁻¹H` on `mesh` exactly as given, with the supplied basis.
pub fn bcm_matrix_with_basis(mesh: &BoundaryMesh, basis: BasisSet, opts: &AssemblyOptions) -> Result<(DenseMatrix, f64)> {
    let f = factor_with(mesh, basis, opts)?;
    finish(f, opts).map(|(c, cond, _)| (c, cond))
}

fn finish(f: Factored, opts: &AssemblyOptions) -> Result<(DenseMatrix, f64, TopTruncation)> {
    if f.rcond < opts.singular_rcond {
        return Err(Error::Singular { rcond: f.rcond });
    }
    let mut c = f.lu.solve(&f.h).ok_or(Error::Singular { rcond: f.rcond })?;
    for (mut r, s) in c.row_iter_mut().zip(f.col.iter()) {
        r *= *s;
    }
    Ok((c, f.cond, f.basis.top_truncation()))
}

/// `C` on `mesh` as given (no normalization), with the cos/sin fallback.
fn bcm_matrix(mesh: &BoundaryMesh, policy: BasisPolicy, opts: &AssemblyOptions) -> Result<(DenseMatrix, f64, TopTruncation)> {
    let basis = BasisSet::new(policy, mesh.node_count(), TopTruncation::CosFirst)?;
    let first = factor_with(mesh, basis, opts)?;
    let chosen = if opts.top_fallback && first.rcond < opts.fallback_rcond && first.basis.has_incomplete_top() {
        let second = factor_with(mesh, first.basis.with_alternate_top()?, opts)?;
        log::debug!(
            "G badly conditioned (rcond {:e}); alternate top order gives rcond {:e}",
            first.rcond,
            second.rcond
        );
        if second.rcond > first.rcond {
            second
        } else {
            first
        }
    } else {
        first
    };
    finish(chosen, opts)
}

/// Boundary capacitance matrix of `mesh`.
pub fn compute_bcm(mesh: &BoundaryMesh, policy: BasisPolicy, opts: &AssemblyOptions) -> Result<Bcm> {
    let (matrix, cond, top) = if opts.normalized {
        // Without the constant, a centred expansion makes the odd harmonics
        // cancel on symmetric boundaries; expand about a box corner instead.
        let (normalized, scale, _) = match policy {
            BasisPolicy::Canonical => normalize(mesh)?,
            BasisPolicy::SkipConstant => normalize_about(mesh, node_box_corner(mesh))?,
        };
        let (c, cond, top) = bcm_matrix(&normalized, policy, opts)?;
        (c / scale, cond, top)
    } else {
        bcm_matrix(mesh, policy, opts)?
    };
    log::trace!("BCM of {} nodes, cond(G) ~ {cond:e}", matrix.nrows());
    Ok(Bcm {
        matrix,
        node_points: mesh.node_points(),
        node_weights: mesh.node_weights(),
        basis_policy_id: policy.id(),
        top_truncation: top,
        cond_estimate_g: cond,
    })
}

/// Potentials and fluxes on every node given Dirichlet values on some nodes
/// and Neumann values on the rest.
pub fn solve_mixed(
    bcm: &Bcm,
    dirichlet: &BTreeMap<usize, f64>,
    neumann: &BTreeMap<usize, f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = bcm.size();
    for &k in dirichlet.keys().chain(neumann.keys()) {
        if k >= n {
            return Err(Error::InvalidArgument(format!("node {k} out of range for {n} nodes")));
        }
    }
    if let Some(k) = dirichlet.keys().find(|k| neumann.contains_key(k)) {
        return Err(Error::InvalidArgument(format!("node {k} has both Dirichlet and Neumann data")));
    }
    if dirichlet.len() + neumann.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} of {n} nodes carry no boundary condition",
            n - dirichlet.len() - neumann.len()
        )));
    }
    let c = &bcm.matrix;
    let mut u = DVector::zeros(n);
    for (&k, &v) in dirichlet {
        u[k] = v;
    }
    if !neumann.is_empty() {
        let nn: Vec<usize> = neumann.keys().copied().collect();
        let dd: Vec<usize> = dirichlet.keys().copied().collect();
        let cnn = c.select_rows(&nn).select_columns(&nn);
        let lu = LuFactor::new(&cnn)?;
        let rcond = lu.rcond();
        if rcond < 1e-14 {
            return Err(Error::DegenerateBc(format!(
                "Neumann block is singular (rcond {rcond:e}); potential is undetermined"
            )));
        }
        let mut rhs = DVector::from_iterator(nn.len(), neumann.values().copied());
        for (a, &i) in nn.iter().enumerate() {
            for &j in &dd {
                rhs[a] -= c[(i, j)] * u[j];
            }
        }
        let un = lu
            .solve_vec(&rhs)
            .ok_or_else(|| Error::DegenerateBc("Neumann block solve failed".into()))?;
        for (a, &i) in nn.iter().enumerate() {
            u[i] = un[a];
        }
    }
    let q = c * &u;
    Ok((u, q))
}

/// `‖C·u − q‖_∞ / (‖C‖_∞ ‖u‖_∞)`.
pub fn mixed_residual(bcm: &Bcm, u: &DVector<f64>, q: &DVector<f64>) -> f64 {
    let r = (&bcm.matrix * u - q).amax();
    let scale = norm_inf(&bcm.matrix) * u.amax();
    if scale == 0.0 {
        r
    } else {
        r / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::default_basis;
    use crate::geometry::build_rect_mesh;

    fn unit_square() -> BoundaryMesh {
        build_rect_mesh(0.0, 0.0, 1.0, 1.0, [1; 4], 0).unwrap()
    }

    fn assert_close(a: &DenseMatrix, b: &[f64], tol: f64) {
        let b = DenseMatrix::from_row_slice(a.nrows(), a.ncols(), b);
        assert!((a - &b).amax() < tol, "{a}\nvs\n{b}");
    }

    #[test]
    fn unit_square_h_and_g() {
        let mesh = unit_square();
        let basis = default_basis(4).unwrap();
        let quad = QuadratureRule::gauss_legendre(default_quadrature_order(&mesh, &basis)).unwrap();
        let h = assemble_h(&mesh, &basis, &quad).unwrap();
        assert_close(
            &h,
            &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, -1.0, 0.0, 1.0, 0.0, 0.0, 2.0, -2.0, 0.0],
            1e-14,
        );
        let g = assemble_g(&mesh, &basis, &quad).unwrap();
        assert_close(&g.rows(0, 1).into_owned(), &[1.0, 1.0, 1.0, 1.0], 1e-14);
        assert_close(&g.rows(3, 1).into_owned(), &[1.0 / 3.0, 2.0 / 3.0, -2.0 / 3.0, -1.0 / 3.0], 1e-14);
    }

    #[test]
    fn unit_square_bcm() {
        let bcm = compute_bcm(&unit_square(), BasisPolicy::Canonical, &AssemblyOptions::default()).unwrap();
        assert_close(
            &bcm.matrix,
            &[2.5, -1.5, 0.5, -1.5, -1.5, 2.5, -1.5, 0.5, 0.5, -1.5, 2.5, -1.5, -1.5, 0.5, -1.5, 2.5],
            1e-12,
        );
        assert!(bcm.cond_estimate_g.is_finite());
        bcm.validate().unwrap();
    }

    #[test]
    fn translation_and_policy_invariance_on_square() {
        let base = compute_bcm(&unit_square(), BasisPolicy::Canonical, &AssemblyOptions::raw()).unwrap();
        let moved = build_rect_mesh(7.0, -2.0, 1.0, 1.0, [1; 4], 0).unwrap();
        for opts in [AssemblyOptions::raw(), AssemblyOptions::default()] {
            let c = compute_bcm(&moved, BasisPolicy::Canonical, &opts).unwrap();
            assert!((&c.matrix - &base.matrix).amax() < 1e-10);
        }
        let skip = compute_bcm(&unit_square(), BasisPolicy::SkipConstant, &AssemblyOptions::raw()).unwrap();
        assert!((&skip.matrix - &base.matrix).amax() < 1e-10);
        let skip = compute_bcm(&moved, BasisPolicy::SkipConstant, &AssemblyOptions::default()).unwrap();
        assert!((&skip.matrix - &base.matrix).amax() < 1e-10);
    }

    #[test]
    fn cancelled_row_is_singular_not_amplified() {
        // About the centre of a square, 2xy integrates to rounding noise on
        // every edge; without the constant nothing else fills that row.
        let centred = build_rect_mesh(-0.5, -0.5, 1.0, 1.0, [1; 4], 0).unwrap();
        let err = compute_bcm(&centred, BasisPolicy::SkipConstant, &AssemblyOptions::raw()).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }), "{err}");
    }

    #[test]
    fn constant_only_basis_gives_zero_h_row() {
        let mesh = build_rect_mesh(0.3, 0.1, 2.0, 1.0, [1, 2, 1, 2], 0).unwrap();
        let basis = default_basis(mesh.node_count()).unwrap();
        let quad = QuadratureRule::gauss_legendre(6).unwrap();
        let h = assemble_h(&mesh, &basis, &quad).unwrap();
        assert_eq!(h.row(0).amax(), 0.0);
    }

    #[test]
    fn size_mismatch_and_strict_quadrature() {
        let mesh = unit_square();
        let quad = QuadratureRule::gauss_legendre(3).unwrap();
        assert!(assemble_h(&mesh, &default_basis(5).unwrap(), &quad).is_err());
        let opts = AssemblyOptions {
            quadrature_order: Some(1),
            strict_quadrature: true,
            ..AssemblyOptions::default()
        };
        assert!(matches!(
            compute_bcm(&mesh, BasisPolicy::Canonical, &opts),
            Err(Error::InsufficientQuadrature { .. })
        ));
    }

    #[test]
    fn doubling_quadrature_changes_nothing() {
        let mesh = build_rect_mesh(-0.4, 1.3, 1.5, 0.8, [3, 2, 3, 2], 0).unwrap();
        let basis = default_basis(mesh.node_count()).unwrap();
        let q = default_quadrature_order(&mesh, &basis);
        let (h1, g1) = assemble_hg(&mesh, &basis, &QuadratureRule::gauss_legendre(q).unwrap()).unwrap();
        let (h2, g2) = assemble_hg(&mesh, &basis, &QuadratureRule::gauss_legendre(2 * q).unwrap()).unwrap();
        for (a, b) in h1.iter().chain(g1.iter()).zip(h2.iter().chain(g2.iter())) {
            assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()), "{a} {b}");
        }
    }

    #[test]
    fn mixed_solve_parallel_plate() {
        let bcm = compute_bcm(&unit_square(), BasisPolicy::Canonical, &AssemblyOptions::default()).unwrap();
        let dirichlet = BTreeMap::from([(0, 0.0), (2, 1.0)]);
        let neumann = BTreeMap::from([(1, 0.0), (3, 0.0)]);
        let (u, q) = solve_mixed(&bcm, &dirichlet, &neumann).unwrap();
        assert!((u[1] - 0.5).abs() < 1e-12 && (u[3] - 0.5).abs() < 1e-12);
        assert!((q[2] - 1.0).abs() < 1e-12 && (q[0] + 1.0).abs() < 1e-12);
        assert!(mixed_residual(&bcm, &u, &q) < 1e-10);
    }

    #[test]
    fn mixed_solve_edge_cases() {
        let bcm = compute_bcm(&unit_square(), BasisPolicy::Canonical, &AssemblyOptions::default()).unwrap();
        let ones = BTreeMap::from([(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)]);
        let (_, q) = solve_mixed(&bcm, &ones, &BTreeMap::new()).unwrap();
        assert!(q.amax() < 1e-12);
        let all_neumann = BTreeMap::from([(0, 0.0), (1, 0.0), (2, 0.0), (3, 0.0)]);
        assert!(matches!(
            solve_mixed(&bcm, &BTreeMap::new(), &all_neumann),
            Err(Error::DegenerateBc(_))
        ));
        assert!(solve_mixed(&bcm, &BTreeMap::from([(0, 1.0)]), &BTreeMap::new()).is_err());
    }

    #[test]
    fn singular_g_falls_back_to_sin_top() {
        // Two elements per side: cos-top truncation makes G singular here.
        let mesh = build_rect_mesh(0.0, 0.0, 1.0, 1.0, [2; 4], 0).unwrap();
        let strict = AssemblyOptions {
            top_fallback: false,
            ..AssemblyOptions::default()
        };
        assert!(matches!(
            compute_bcm(&mesh, BasisPolicy::Canonical, &strict),
            Err(Error::Singular { .. })
        ));
        let bcm = compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::default()).unwrap();
        assert_eq!(bcm.top_truncation, TopTruncation::SinFirst);
        bcm.validate().unwrap();
    }
}
