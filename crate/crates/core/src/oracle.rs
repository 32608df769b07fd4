//! Independent references: closed-form rectangle matrices, the parallel-plate
//! capacitance and a flat (non-hierarchical) coupled solver.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::assembly::{assemble_hg, default_quadrature_order};
use crate::basis::{BasisPolicy, BasisSet, TopTruncation};
use crate::decomposition::{Decomposition, LayerProblem, NodeTag};
use crate::error::{Error, Result};
use crate::geometry::normalize;
use crate::linalg::{equilibrated_rcond, DenseMatrix, LuFactor};
use crate::merge::{GeneralizedCapacitanceMatrix, EPSILON_0};
use crate::quadrature::QuadratureRule;

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormMatrices {
    pub h: DenseMatrix,
    pub g: DenseMatrix,
    pub c: DenseMatrix,
}

/// `H`, `G`, `C` of the rectangle `(a, b, w, h)` with one constant element per
/// side and weighting functions `1, x, y, x²−y²`.
pub fn exact_example1(a: f64, b: f64, w: f64, h: f64) -> ClosedFormMatrices {
    let hm = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            h,
            0.0,
            -h,
            -w,
            0.0,
            w,
            0.0,
            2.0 * b * w,
            2.0 * h * (a + w),
            -2.0 * w * (b + h),
            -2.0 * a * h,
        ],
    );
    let g41 = w * (a * a + a * w - b * b + w * w / 3.0);
    let g42 = h * ((a + w).powi(2) - b * b - b * h - h * h / 3.0);
    let g43 = w * (a * a + a * w - (b + h).powi(2) + w * w / 3.0);
    let g44 = h * (a * a - b * b - b * h - h * h / 3.0);
    let gm = DMatrix::from_row_slice(
        4,
        4,
        &[
            w,
            h,
            w,
            h,
            0.5 * w * w + a * w,
            h * (a + w),
            0.5 * w * w + a * w,
            a * h,
            b * w,
            0.5 * h * h + b * h,
            w * (b + h),
            0.5 * h * h + b * h,
            g41,
            g42,
            g43,
            g44,
        ],
    );
    let (h2, w2) = (h * h, w * w);
    let dh = h * h2 + h * w2;
    let dw = h2 * w + w * w2;
    let s = h2 + w2;
    let c = DMatrix::from_row_slice(
        4,
        4,
        &[
            (4.0 * h2 + w2) / dh,
            -3.0 * h / s,
            (2.0 * h2 - w2) / dh,
            -3.0 * h / s,
            -3.0 * w / s,
            (h2 + 4.0 * w2) / dw,
            -3.0 * w / s,
            (2.0 * w2 - h2) / dw,
            (2.0 * h2 - w2) / dh,
            -3.0 * h / s,
            (4.0 * h2 + w2) / dh,
            -3.0 * h / s,
            -3.0 * w / s,
            (2.0 * w2 - h2) / dw,
            -3.0 * w / s,
            (h2 + 4.0 * w2) / dw,
        ],
    );
    ClosedFormMatrices { h: hm, g: gm, c }
}

/// Published 5×5 `C` of the rectangle with its bottom side split in two.
/// With `strict` the (4,4) entry keeps its published denominator `h³ + hw`;
/// otherwise it reads `h³ + hw²`, which restores the zero row sum of row 4.
/// Rows 3 and 5 are reproduced as published (see [`example3_rederived`]).
pub fn exact_example3(w: f64, h: f64, strict: bool) -> DenseMatrix {
    let (h2, w2) = (h * h, w * w);
    let s = h2 + w2;
    let dh = h * h2 + h * w2;
    let dw = h2 * w + w * w2;
    let d44 = if strict { h * h2 + h * w } else { dh };
    let c11 = (6.0 * h2 + 3.0 * w2) / (2.0 * dh);
    let c12 = (2.0 * h2 - w2) / (2.0 * dh);
    let p = (2.0 * w * w2 - w * h2) / (4.0 * h2 * s);
    let q = (5.0 * w * h2 + 2.0 * w * w2) / (-4.0 * h2 * s);
    DMatrix::from_row_slice(
        5,
        5,
        &[
            c11,
            c12,
            -3.0 * h / s,
            (2.0 * h2 - w2) / dh,
            -3.0 * h / s,
            c12,
            c11,
            -3.0 * h / s,
            (2.0 * h2 - w2) / dh,
            -3.0 * h / s,
            p,
            q,
            (h2 + 4.0 * w2) / dw,
            -3.0 * w / s,
            (2.0 * w2 - h2) / dw,
            (2.0 * h2 - w2) / (2.0 * dh),
            (2.0 * h2 - w2) / (2.0 * dh),
            -3.0 * h / s,
            (4.0 * h2 + w2) / d44,
            -3.0 * h / s,
            q,
            p,
            (2.0 * w2 - h2) / dw,
            -3.0 * w / s,
            (h2 + 4.0 * w2) / dw,
        ],
    )
}

/// The same 5×5 `C` re-derived symbolically from `H` and `G` for the basis
/// `1, x, y, x²−y², 2xy`. It differs from the published matrix in entries
/// (3,1), (3,2), (5,1), (5,2), whose published values break the zero row sum.
pub fn example3_rederived(w: f64, h: f64) -> DenseMatrix {
    let mut c = exact_example3(w, h, false);
    let d = 4.0 * h * h * (h * h + w * w);
    let near = w * (w * w - 5.0 * h * h) / d;
    let far = -w * (7.0 * h * h + w * w) / d;
    c[(2, 0)] = near;
    c[(2, 1)] = far;
    c[(4, 0)] = far;
    c[(4, 1)] = near;
    c
}

/// `ε_0 ε_r w / h`, F/m.
pub fn parallel_plate_reference(w: f64, h: f64, epsilon_r: f64) -> f64 {
    EPSILON_0 * epsilon_r * w / h
}

pub const FLAT_RCOND_MIN: f64 = 1e-16;
const MATCH_TOL: f64 = 1e-9;

struct LeafSystem {
    h: DenseMatrix,
    /// `s·G` on the normalized leaf, so that `H u − sG q = 0` holds for the
    /// physical flux `q`.
    sg: DenseMatrix,
}

fn leaf_system(mesh: &crate::geometry::BoundaryMesh) -> Result<LeafSystem> {
    let (normalized, scale, _) = normalize(mesh)?;
    let n = normalized.node_count();
    let build = |top| -> Result<(DenseMatrix, DenseMatrix, f64)> {
        let basis = BasisSet::new(BasisPolicy::Canonical, n, top)?;
        let quad = QuadratureRule::gauss_legendre(default_quadrature_order(&normalized, &basis))?;
        let (h, g) = assemble_hg(&normalized, &basis, &quad)?;
        let rcond = equilibrated_rcond(&g);
        Ok((h, g, rcond))
    };
    let first = build(TopTruncation::CosFirst)?;
    let basis = BasisSet::new(BasisPolicy::Canonical, n, TopTruncation::CosFirst)?;
    let (h, g, _) = if first.2 < 1e-10 && basis.has_incomplete_top() {
        let second = build(TopTruncation::SinFirst)?;
        if second.2 > first.2 {
            second
        } else {
            first
        }
    } else {
        first
    };
    Ok(LeafSystem { h, sg: g * scale })
}

/// Stacks every leaf's `H u = G q`, potential continuity and ε-weighted flux
/// balance on shared nodes, Dirichlet rows on conductors and zero-flux rows on
/// the outer wall into one dense system, and solves it once per signal
/// conductor. Charges are integrated exactly as in the hierarchical path.
pub fn flat_reference(decomposition: &Decomposition, problem: &LayerProblem) -> Result<GeneralizedCapacitanceMatrix> {
    let leaves = &decomposition.leaves;
    let mut offsets = Vec::with_capacity(leaves.len());
    let mut total = 0;
    for l in leaves {
        offsets.push(total);
        total += l.node_tags.len();
    }
    // Unknowns: u for all nodes, then q for all nodes.
    let dim = 2 * total;
    let points: Vec<_> = leaves.iter().flat_map(|l| l.mesh.node_points()).collect();
    let weights: Vec<f64> = leaves.iter().flat_map(|l| l.mesh.node_weights()).collect();
    let tags: Vec<NodeTag> = leaves.iter().flat_map(|l| l.node_tags.iter().copied()).collect();
    let eps: Vec<f64> = leaves
        .iter()
        .flat_map(|l| std::iter::repeat_n(l.epsilon_r, l.node_tags.len()))
        .collect();

    let ground = problem.ground_id();
    let mut conductor_ids: Vec<usize> = tags
        .iter()
        .filter_map(|t| match t {
            NodeTag::Conductor(id) => Some(*id),
            _ => None,
        })
        .collect();
    conductor_ids.sort_unstable();
    conductor_ids.dedup();
    if conductor_ids.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "need at least two conductors including the ground, found {}",
            conductor_ids.len()
        )));
    }
    let signal: Vec<usize> = conductor_ids.iter().copied().filter(|&i| i != ground).collect();

    let mut a = DMatrix::zeros(dim, dim);
    let mut row = 0;
    for (leaf, &off) in leaves.iter().zip(&offsets) {
        let sys = leaf_system(&leaf.mesh)?;
        let n = leaf.node_tags.len();
        for i in 0..n {
            for j in 0..n {
                a[(row + i, off + j)] = sys.h[(i, j)];
                a[(row + i, total + off + j)] = -sys.sg[(i, j)];
            }
        }
        row += n;
    }

    // Pair interface nodes by position.
    let extent = points
        .iter()
        .fold(0.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()))
        .max(f64::MIN_POSITIVE);
    let quantum = MATCH_TOL * extent;
    let mut partners: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (k, t) in tags.iter().enumerate() {
        if t.is_interface() {
            let key = ((points[k].x / quantum).round() as i64, (points[k].y / quantum).round() as i64);
            partners.entry(key).or_default().push(k);
        }
    }
    for group in partners.values() {
        if group.len() != 2 {
            return Err(Error::PairingIncomplete(format!(
                "interface node at {:?} has {} partner(s)",
                points[group[0]],
                group.len() - 1
            )));
        }
    }

    let mut rhs_rows: Vec<(usize, usize)> = Vec::new();
    for (k, t) in tags.iter().enumerate() {
        match t {
            NodeTag::Conductor(id) => {
                a[(row, k)] = 1.0;
                rhs_rows.push((row, *id));
                row += 1;
            }
            NodeTag::OuterNeumann => {
                a[(row, total + k)] = 1.0;
                row += 1;
            }
            _ => {}
        }
    }
    for group in partners.values() {
        let (k, l) = (group[0], group[1]);
        a[(row, k)] = 1.0;
        a[(row, l)] = -1.0;
        a[(row + 1, total + k)] = eps[k];
        a[(row + 1, total + l)] = eps[l];
        row += 2;
    }
    debug_assert_eq!(row, dim);

    // Row equilibration.
    for mut r in a.row_iter_mut() {
        let m = r.amax();
        if m > 0.0 {
            r /= m;
        }
    }
    let lu = LuFactor::new(&a)?;
    let rcond = lu.rcond();
    if rcond < FLAT_RCOND_MIN {
        return Err(Error::FlatSingular { rcond });
    }
    log::debug!("flat reference: {dim} unknowns, rcond {rcond:e}");

    let mut b = DMatrix::zeros(dim, signal.len());
    for &(r, id) in &rhs_rows {
        if let Some(c) = signal.iter().position(|&s| s == id) {
            b[(r, c)] = 1.0;
        }
    }
    let x = lu.solve(&b).ok_or(Error::FlatSingular { rcond })?;

    let mut cg = DMatrix::zeros(signal.len(), signal.len());
    for (k, t) in tags.iter().enumerate() {
        if let NodeTag::Conductor(id) = t {
            if let Some(m) = signal.iter().position(|s| s == id) {
                for n in 0..signal.len() {
                    cg[(m, n)] += EPSILON_0 * eps[k] * x[(total + k, n)] * weights[k];
                }
            }
        }
    }
    Ok(GeneralizedCapacitanceMatrix {
        conductor_ids: signal,
        ground_id: ground,
        matrix: cg,
    })
}
