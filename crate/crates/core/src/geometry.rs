//! Boundary discretization: elements in local coordinates, Jacobians, outward
//! normals, polar frames and translation/scale normalization.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// Relative gap between consecutive element endpoints tolerated when checking closure.
pub const CLOSURE_TOL: f64 = 1e-9;

/// Quantization step applied to normalized coordinates in shape signatures.
pub const SIGNATURE_QUANTUM: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Equispaced Lagrange nodes on [-1, 1] including the endpoints.
fn geometry_locals(degree: usize) -> Vec<f64> {
    (0..=degree)
        .map(|k| -1.0 + 2.0 * k as f64 / degree as f64)
        .collect()
}

/// Interior equispaced nodes; a single midpoint node for degree 0.
fn field_locals(degree: usize) -> Vec<f64> {
    let n = degree + 1;
    (0..n)
        .map(|k| -1.0 + (2 * k + 1) as f64 / n as f64)
        .collect()
}

fn lagrange(nodes: &[f64], k: usize, xi: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &xj)| (xi - xj) / (nodes[k] - xj))
        .product()
}

fn lagrange_derivative(nodes: &[f64], k: usize, xi: f64) -> f64 {
    let mut sum = 0.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m == k {
            continue;
        }
        let mut term = 1.0 / (nodes[k] - xm);
        for (j, &xj) in nodes.iter().enumerate() {
            if j != k && j != m {
                term *= (xi - xj) / (nodes[k] - xj);
            }
        }
        sum += term;
    }
    sum
}

/// One boundary element: geometry interpolated through `geometry_nodes`
/// (ordered from local coordinate -1 to +1), fields approximated with
/// Lagrange polynomials of `field_degree`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryElement {
    geometry_nodes: Vec<Point2>,
    field_degree: usize,
    #[serde(skip)]
    geometry_locals: Vec<f64>,
    #[serde(skip)]
    field_node_locals: Vec<f64>,
}

impl BoundaryElement {
    pub fn new(geometry_nodes: Vec<Point2>, field_degree: usize) -> Result<Self> {
        if geometry_nodes.len() < 2 {
            return Err(Error::InvalidGeometry(
                "an element needs at least two geometry nodes".into(),
            ));
        }
        if geometry_nodes.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite element node".into()));
        }
        let degree = geometry_nodes.len() - 1;
        let element = Self {
            geometry_nodes,
            field_degree,
            geometry_locals: geometry_locals(degree),
            field_node_locals: field_locals(field_degree),
        };
        // Sample the Jacobian densely enough to catch folded curved elements.
        let samples = 4 * (degree + 1);
        for s in 0..=samples {
            let xi = -1.0 + 2.0 * s as f64 / samples as f64;
            let j = element.jacobian_at(xi);
            if !(j > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "non-positive Jacobian {j:e} at local coordinate {xi}"
                )));
            }
        }
        Ok(element)
    }

    pub fn straight(start: Point2, end: Point2, field_degree: usize) -> Result<Self> {
        Self::new(vec![start, end], field_degree)
    }

    /// Restores the cached local node tables after deserialization.
    fn rebuild(mut self) -> Self {
        self.geometry_locals = geometry_locals(self.geometry_nodes.len() - 1);
        self.field_node_locals = field_locals(self.field_degree);
        self
    }

    pub fn geometry_nodes(&self) -> &[Point2] {
        &self.geometry_nodes
    }

    pub fn geometry_degree(&self) -> usize {
        self.geometry_nodes.len() - 1
    }

    pub fn field_degree(&self) -> usize {
        self.field_degree
    }

    pub fn field_node_locals(&self) -> &[f64] {
        &self.field_node_locals
    }

    pub fn field_node_count(&self) -> usize {
        self.field_node_locals.len()
    }

    pub fn start(&self) -> Point2 {
        self.geometry_nodes[0]
    }

    pub fn end(&self) -> Point2 {
        *self.geometry_nodes.last().unwrap()
    }

    pub fn point_at(&self, xi: f64) -> Point2 {
        self.geometry_nodes
            .iter()
            .enumerate()
            .fold(Point2::ORIGIN, |acc, (k, &p)| {
                acc + p * lagrange(&self.geometry_locals, k, xi)
            })
    }

    /// `(dx/dξ, dy/dξ)`.
    pub fn tangent_at(&self, xi: f64) -> Point2 {
        self.geometry_nodes
            .iter()
            .enumerate()
            .fold(Point2::ORIGIN, |acc, (k, &p)| {
                acc + p * lagrange_derivative(&self.geometry_locals, k, xi)
            })
    }

    pub fn jacobian_at(&self, xi: f64) -> f64 {
        self.tangent_at(xi).norm()
    }

    /// Field interpolation polynomial of node `nu` at `xi`.
    pub fn field_shape(&self, nu: usize, xi: f64) -> f64 {
        lagrange(&self.field_node_locals, nu, xi)
    }

    pub fn field_nodes(&self) -> impl Iterator<Item = Point2> + '_ {
        self.field_node_locals.iter().map(|&xi| self.point_at(xi))
    }

    /// Integration weight of each field node, `∫ φ_ν J dξ`.
    pub fn field_node_weights(&self, quad: &QuadratureRule) -> Vec<f64> {
        (0..self.field_node_count())
            .map(|nu| quad.integrate(|xi| self.field_shape(nu, xi) * self.jacobian_at(xi)))
            .collect()
    }

    pub fn length(&self, quad: &QuadratureRule) -> f64 {
        quad.integrate(|xi| self.jacobian_at(xi))
    }

    fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self {
            geometry_nodes: self.geometry_nodes.iter().map(|&p| f(p)).collect(),
            field_degree: self.field_degree,
            geometry_locals: self.geometry_locals.clone(),
            field_node_locals: self.field_node_locals.clone(),
        }
    }
}

/// Local frame at a boundary point: polar position, corner angle and Jacobian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameData {
    pub point: Point2,
    pub rho: f64,
    pub theta: f64,
    /// Corner angle: `∂x/∂n = cos α = dy/dΓ`, `∂y/∂n = −sin α = −dx/dΓ`.
    pub alpha: f64,
    pub jacobian: f64,
}

impl FrameData {
    /// Outward unit normal `(cos α, -sin α)`.
    pub fn normal(&self) -> Point2 {
        Point2::new(self.alpha.cos(), -self.alpha.sin())
    }

    /// `∂ρ/∂n = cos(θ + α)`.
    pub fn drho_dn(&self) -> f64 {
        (self.theta + self.alpha).cos()
    }
}

pub fn frame_at(element: &BoundaryElement, xi: f64) -> Result<FrameData> {
    if !(-1.0..=1.0).contains(&xi) {
        return Err(Error::InvalidArgument(format!(
            "local coordinate {xi} outside [-1, 1]"
        )));
    }
    let point = element.point_at(xi);
    let tangent = element.tangent_at(xi);
    let jacobian = tangent.norm();
    if !(jacobian > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "degenerate element: Jacobian {jacobian:e} at local coordinate {xi}"
        )));
    }
    let (dx_ds, dy_ds) = (tangent.x / jacobian, tangent.y / jacobian);
    Ok(FrameData {
        point,
        rho: point.norm(),
        theta: point.y.atan2(point.x),
        alpha: dx_ds.atan2(dy_ds),
        jacobian,
    })
}

/// Closed, counter-clockwise discretized boundary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryMesh {
    elements: Vec<BoundaryElement>,
}

impl<'de> Deserialize<'de> for BoundaryMesh {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            elements: Vec<BoundaryElement>,
        }
        let raw = Raw::deserialize(d)?;
        let elements = raw
            .elements
            .into_iter()
            .map(|e| {
                if e.geometry_nodes.len() < 2 {
                    Err(serde::de::Error::custom("element with fewer than two nodes"))
                } else {
                    Ok(e.rebuild())
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        BoundaryMesh::new(elements).map_err(serde::de::Error::custom)
    }
}

impl BoundaryMesh {
    pub fn new(elements: Vec<BoundaryElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidGeometry("empty boundary".into()));
        }
        let perimeter: f64 = elements
            .iter()
            .map(|e| e.geometry_nodes.windows(2).map(|w| w[0].distance(w[1])).sum::<f64>())
            .sum();
        if !(perimeter > 0.0) {
            return Err(Error::InvalidGeometry("zero-length boundary".into()));
        }
        for (k, e) in elements.iter().enumerate() {
            let next = &elements[(k + 1) % elements.len()];
            let gap = e.end().distance(next.start());
            if gap > CLOSURE_TOL * perimeter {
                return Err(Error::InvalidGeometry(format!(
                    "boundary not closed: gap {gap:e} after element {k}"
                )));
            }
        }
        let mesh = Self { elements };
        let area = mesh.signed_area();
        if !(area > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "boundary must be counter-clockwise with positive area (signed area {area:e})"
            )));
        }
        Ok(mesh)
    }

    /// Closed polygon with one straight element per edge; the last vertex connects back to the first.
    pub fn from_polygon(vertices: &[Point2], field_degree: usize) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidGeometry("polygon needs at least three vertices".into()));
        }
        let elements = (0..vertices.len())
            .map(|k| {
                BoundaryElement::straight(vertices[k], vertices[(k + 1) % vertices.len()], field_degree)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(elements)
    }

    pub fn elements(&self) -> &[BoundaryElement] {
        &self.elements
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Total number of field nodes, `N_t`.
    pub fn node_count(&self) -> usize {
        self.elements.iter().map(BoundaryElement::field_node_count).sum()
    }

    /// Column offset of the first field node of each element.
    pub fn node_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.elements.len());
        let mut acc = 0;
        for e in &self.elements {
            offsets.push(acc);
            acc += e.field_node_count();
        }
        offsets
    }

    pub fn node_points(&self) -> Vec<Point2> {
        self.elements.iter().flat_map(|e| e.field_nodes()).collect()
    }

    pub fn node_weights(&self) -> Vec<f64> {
        let quad = self.default_geometry_quadrature();
        self.elements
            .iter()
            .flat_map(|e| e.field_node_weights(&quad))
            .collect()
    }

    pub fn max_geometry_degree(&self) -> usize {
        self.elements.iter().map(BoundaryElement::geometry_degree).max().unwrap_or(1)
    }

    pub fn max_field_degree(&self) -> usize {
        self.elements.iter().map(BoundaryElement::field_degree).max().unwrap_or(0)
    }

    fn default_geometry_quadrature(&self) -> QuadratureRule {
        // Straight elements have constant Jacobians; curved ones need more points.
        let order = if self.max_geometry_degree() == 1 {
            self.max_field_degree() + 1
        } else {
            16 + 2 * self.max_field_degree()
        };
        QuadratureRule::gauss_legendre(order).expect("positive order")
    }

    pub fn perimeter(&self) -> f64 {
        let quad = self.default_geometry_quadrature();
        self.elements.iter().map(|e| e.length(&quad)).sum()
    }

    /// `½ ∮ (x dy − y dx)`.
    pub fn signed_area(&self) -> f64 {
        let order = 2 * self.max_geometry_degree() + 1;
        let quad = QuadratureRule::gauss_legendre(order).expect("positive order");
        0.5 * self
            .elements
            .iter()
            .map(|e| {
                quad.integrate(|xi| {
                    let p = e.point_at(xi);
                    let t = e.tangent_at(xi);
                    p.x * t.y - p.y * t.x
                })
            })
            .sum::<f64>()
    }

    pub fn translated(&self, offset: Point2) -> Self {
        Self {
            elements: self.elements.iter().map(|e| e.map_points(|p| p + offset)).collect(),
        }
    }

    /// Uniform scaling about the origin; `s` must be positive.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidScale(s));
        }
        Ok(Self {
            elements: self.elements.iter().map(|e| e.map_points(|p| p * s)).collect(),
        })
    }

    pub fn field_node_centroid(&self) -> Point2 {
        let pts = self.node_points();
        let n = pts.len() as f64;
        pts.iter().fold(Point2::ORIGIN, |acc, &p| acc + p) * (1.0 / n)
    }
}

/// Rectangle `[a, a+w] × [b, b+h]` split into equal straight elements per side,
/// sides ordered bottom, right, top, left and traversed counter-clockwise.
pub fn build_rect_mesh(
    a: f64,
    b: f64,
    w: f64,
    h: f64,
    splits: [usize; 4],
    field_degree: usize,
) -> Result<BoundaryMesh> {
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "rectangle dimensions must be positive, got {w} x {h}"
        )));
    }
    if splits.contains(&0) {
        return Err(Error::InvalidGeometry("each side needs at least one element".into()));
    }
    let corners = [
        Point2::new(a, b),
        Point2::new(a + w, b),
        Point2::new(a + w, b + h),
        Point2::new(a, b + h),
    ];
    let mut vertices = Vec::with_capacity(splits.iter().sum());
    for side in 0..4 {
        let (p0, p1) = (corners[side], corners[(side + 1) % 4]);
        let n = splits[side];
        for k in 0..n {
            let t = k as f64 / n as f64;
            vertices.push(p0 + (p1 - p0) * t);
        }
    }
    BoundaryMesh::from_polygon(&vertices, field_degree)
}

/// Maps a mesh to field-node centroid at the origin and maximum node radius 1.
/// Returns `(normalized, scale, offset)` with `original = normalized * scale + offset`.
pub fn normalize(mesh: &BoundaryMesh) -> Result<(BoundaryMesh, f64, Point2)> {
    normalize_about(mesh, mesh.field_node_centroid())
}

/// Like [`normalize`] but with `offset` mapped to the origin and the largest
/// node distance from it mapped to 1.
pub fn normalize_about(mesh: &BoundaryMesh, offset: Point2) -> Result<(BoundaryMesh, f64, Point2)> {
    let scale = mesh
        .node_points()
        .into_iter()
        .map(|p| p.distance(offset))
        .fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidGeometry("mesh has zero extent".into()));
    }
    let inv = 1.0 / scale;
    let normalized = BoundaryMesh {
        elements: mesh
            .elements
            .iter()
            .map(|e| e.map_points(|p| (p - offset) * inv))
            .collect(),
    };
    Ok((normalized, scale, offset))
}

/// Lower-left corner of the field-node bounding box.
pub fn node_box_corner(mesh: &BoundaryMesh) -> Point2 {
    mesh.node_points()
        .into_iter()
        .fold(Point2::new(f64::INFINITY, f64::INFINITY), |m, p| Point2::new(m.x.min(p.x), m.y.min(p.y)))
}

/// Translation- and scale-invariant fingerprint of a discretized boundary.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShapeSignature {
    pub quantized_coords: Vec<i64>,
    /// `(geometry degree, field degree)` per element.
    pub structure: Vec<(u32, u32)>,
    pub basis_policy_id: u32,
}

pub fn signature(mesh: &BoundaryMesh, basis_policy_id: u32) -> Result<ShapeSignature> {
    let (normalized, _, _) = normalize(mesh)?;
    Ok(signature_of_normalized(&normalized, basis_policy_id))
}

pub(crate) fn signature_of_normalized(normalized: &BoundaryMesh, basis_policy_id: u32) -> ShapeSignature {
    let quantize = |v: f64| (v / SIGNATURE_QUANTUM).round() as i64;
    let mut quantized_coords = Vec::new();
    let mut structure = Vec::with_capacity(normalized.element_count());
    for e in normalized.elements() {
        // The end node is the next element's start node.
        for p in &e.geometry_nodes[..e.geometry_nodes.len() - 1] {
            quantized_coords.push(quantize(p.x));
            quantized_coords.push(quantize(p.y));
        }
        structure.push((e.geometry_degree() as u32, e.field_degree as u32));
    }
    ShapeSignature {
        quantized_coords,
        structure,
        basis_policy_id,
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}
