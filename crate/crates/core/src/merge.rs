//! Exact condensation of subdomain operators across shared interfaces,
//! Neumann elimination and the generalized capacitance matrix.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::Bcm;
use crate::basis::BasisPolicy;
use crate::decomposition::{position_key, Decomposition, NodeTag, Subdomain, TreeNode};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryMesh, Point2};
use crate::linalg::{max_abs, DenseMatrix, LuFactor};
use crate::scaling_cache::BcmCache;

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.8541878128e-12;

/// Pivots whose reciprocal condition estimate falls below this abort the merge.
pub const MERGE_RCOND_MIN: f64 = 1e-14;

const POSITION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetainedNode {
    pub point: Point2,
    pub tag: NodeTag,
    /// Integration weight (element length for constant elements), mm.
    pub weight: f64,
    pub leaf: usize,
}

/// Map from retained-node potentials to ε-weighted normal fluxes.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedOperator {
    pub matrix: DenseMatrix,
    pub nodes: Vec<RetainedNode>,
    pub epsilon_applied: bool,
}

impl CondensedOperator {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// `‖M·1‖_∞ / max |M|`.
    pub fn null_vector_residual(&self) -> f64 {
        let r = self.matrix.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        let m = max_abs(&self.matrix);
        if m == 0.0 {
            r
        } else {
            r / m
        }
    }

    fn select(&self, idx: &[usize]) -> Vec<RetainedNode> {
        idx.iter().map(|&i| self.nodes[i]).collect()
    }
}

/// `ε_r ε_0 C` on all nodes of the subdomain.
pub fn lift_bcm(bcm: &Bcm, subdomain: &Subdomain, leaf: usize) -> Result<CondensedOperator> {
    if bcm.size() != subdomain.node_tags.len() {
        return Err(Error::InvalidPairing(format!(
            "{}: BCM has {} nodes, subdomain has {}",
            subdomain.path,
            bcm.size(),
            subdomain.node_tags.len()
        )));
    }
    let nodes = bcm
        .node_points
        .iter()
        .zip(&bcm.node_weights)
        .zip(&subdomain.node_tags)
        .map(|((&point, &weight), &tag)| RetainedNode {
            point,
            tag,
            weight,
            leaf,
        })
        .collect();
    Ok(CondensedOperator {
        matrix: &bcm.matrix * (subdomain.epsilon_r * EPSILON_0),
        nodes,
        epsilon_applied: true,
    })
}

/// Pairs nodes of `a` and `b` that satisfy `filter` and sit at the same position.
pub fn interface_pairing(
    a: &CondensedOperator,
    b: &CondensedOperator,
    filter: impl Fn(&NodeTag) -> bool,
) -> Vec<(usize, usize)> {
    let extent = a
        .nodes
        .iter()
        .chain(&b.nodes)
        .fold(0.0f64, |m, n| m.max(n.point.x.abs()).max(n.point.y.abs()))
        .max(f64::MIN_POSITIVE);
    let quantum = POSITION_TOL * extent;
    let mut in_b: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (j, n) in b.nodes.iter().enumerate() {
        if filter(&n.tag) {
            in_b.insert(position_key(n.point, quantum), j);
        }
    }
    a.nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| filter(&n.tag))
        .filter_map(|(i, n)| in_b.get(&position_key(n.point, quantum)).map(|&j| (i, j)))
        .collect()
}

fn solve_pivot(k: &DenseMatrix, rhs: &DenseMatrix, what: &str) -> Result<DenseMatrix> {
    let lu = LuFactor::new(k)?;
    let rcond = lu.rcond();
    if rcond < MERGE_RCOND_MIN {
        return Err(Error::MergeSingular {
            interface: what.to_string(),
            rcond,
        });
    }
    lu.solve(rhs).ok_or(Error::MergeSingular {
        interface: what.to_string(),
        rcond,
    })
}

/// Glues `a` and `b` along `pairing`: continuity of potential and balance of
/// ε-weighted flux on paired nodes, interface potentials eliminated by Schur
/// complement. Unpaired nodes of `a` come first, then those of `b`.
pub fn merge_pair(
    a: &CondensedOperator,
    b: &CondensedOperator,
    pairing: &[(usize, usize)],
    label: &str,
) -> Result<CondensedOperator> {
    if a.epsilon_applied != b.epsilon_applied {
        return Err(Error::InvalidPairing(format!("{label}: mixing ε-weighted and raw operators")));
    }
    let mut used_a = vec![false; a.size()];
    let mut used_b = vec![false; b.size()];
    for &(i, j) in pairing {
        if i >= a.size() || j >= b.size() {
            return Err(Error::InvalidPairing(format!("{label}: pair ({i}, {j}) out of range")));
        }
        if std::mem::replace(&mut used_a[i], true) || std::mem::replace(&mut used_b[j], true) {
            return Err(Error::InvalidPairing(format!("{label}: node paired twice in ({i}, {j})")));
        }
        let (na, nb) = (&a.nodes[i], &b.nodes[j]);
        let spacing = na.weight.max(nb.weight);
        if na.point.distance(nb.point) > POSITION_TOL * spacing.max(na.point.norm()) {
            return Err(Error::InvalidPairing(format!(
                "{label}: paired nodes {:?} and {:?} do not coincide",
                na.point, nb.point
            )));
        }
        if (na.weight - nb.weight).abs() > POSITION_TOL * spacing {
            return Err(Error::InvalidPairing(format!(
                "{label}: paired nodes at {:?} have different element lengths",
                na.point
            )));
        }
    }
    let ea: Vec<usize> = (0..a.size()).filter(|&i| !used_a[i]).collect();
    let eb: Vec<usize> = (0..b.size()).filter(|&j| !used_b[j]).collect();
    let ia: Vec<usize> = pairing.iter().map(|p| p.0).collect();
    let ib: Vec<usize> = pairing.iter().map(|p| p.1).collect();
    let (na, nb, ni) = (ea.len(), eb.len(), pairing.len());

    let mut nodes = a.select(&ea);
    nodes.extend(b.select(&eb));
    let mut m = DMatrix::zeros(na + nb, na + nb);
    m.view_mut((0, 0), (na, na))
        .copy_from(&a.matrix.select_rows(&ea).select_columns(&ea));
    m.view_mut((na, na), (nb, nb))
        .copy_from(&b.matrix.select_rows(&eb).select_columns(&eb));
    if ni > 0 {
        let k = a.matrix.select_rows(&ia).select_columns(&ia) + b.matrix.select_rows(&ib).select_columns(&ib);
        // [C_A^ie, C_B^ie]
        let mut right = DMatrix::zeros(ni, na + nb);
        right
            .view_mut((0, 0), (ni, na))
            .copy_from(&a.matrix.select_rows(&ia).select_columns(&ea));
        right
            .view_mut((0, na), (ni, nb))
            .copy_from(&b.matrix.select_rows(&ib).select_columns(&eb));
        // [C_A^ei; C_B^ei]
        let mut left = DMatrix::zeros(na + nb, ni);
        left.view_mut((0, 0), (na, ni))
            .copy_from(&a.matrix.select_rows(&ea).select_columns(&ia));
        left.view_mut((na, 0), (nb, ni))
            .copy_from(&b.matrix.select_rows(&eb).select_columns(&ib));
        let x = solve_pivot(&k, &right, label)?;
        m -= left * x;
    }
    Ok(CondensedOperator {
        matrix: m,
        nodes,
        epsilon_applied: a.epsilon_applied,
    })
}

/// Imposes zero flux on `eliminate` and condenses those potentials away:
/// `C^DD − C^DN (C^NN)⁻¹ C^ND`.
pub fn eliminate_neumann(op: &CondensedOperator, eliminate: &[usize]) -> Result<CondensedOperator> {
    if eliminate.is_empty() {
        return Ok(op.clone());
    }
    let mut drop = vec![false; op.size()];
    for &i in eliminate {
        if i >= op.size() || std::mem::replace(&mut drop[i], true) {
            return Err(Error::InvalidArgument(format!("bad Neumann node index {i}")));
        }
    }
    let keep: Vec<usize> = (0..op.size()).filter(|&i| !drop[i]).collect();
    let c = &op.matrix;
    let cnn = c.select_rows(eliminate).select_columns(eliminate);
    let cnd = c.select_rows(eliminate).select_columns(&keep);
    let cdn = c.select_rows(&keep).select_columns(eliminate);
    let lu = LuFactor::new(&cnn)?;
    let rcond = lu.rcond();
    if rcond < MERGE_RCOND_MIN {
        return Err(Error::DegenerateBc(format!(
            "Neumann block of {} nodes is singular (rcond {rcond:e})",
            eliminate.len()
        )));
    }
    let x = lu
        .solve(&cnd)
        .ok_or_else(|| Error::DegenerateBc("Neumann block solve failed".into()))?;
    Ok(CondensedOperator {
        matrix: c.select_rows(&keep).select_columns(&keep) - cdn * x,
        nodes: op.select(&keep),
        epsilon_applied: op.epsilon_applied,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeOrder {
    /// Left child first, layers folded bottom-up.
    #[default]
    LeftFirst,
    /// Right child first, layers folded top-down.
    RightFirst,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReduceOptions {
    pub order: MergeOrder,
    pub policy: BasisPolicy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReduceInfo {
    pub leaves: usize,
    pub max_cond_estimate: f64,
}

fn merge_tree(
    node: &TreeNode,
    path: &str,
    lifted: &[CondensedOperator],
    order: MergeOrder,
) -> Result<CondensedOperator> {
    if node.is_leaf() {
        let idx = node.leaf.expect("leaf indices assigned by decompose");
        return Ok(lifted[idx].clone());
    }
    let (first, second) = match order {
        MergeOrder::LeftFirst => (&node.children[0], &node.children[1]),
        MergeOrder::RightFirst => (&node.children[1], &node.children[0]),
    };
    let p1 = format!("{path}/{}", first.label);
    let p2 = format!("{path}/{}", second.label);
    let (a, b) = rayon::join(
        || merge_tree(first, &p1, lifted, order),
        || merge_tree(second, &p2, lifted, order),
    );
    let (a, b) = (a?, b?);
    let pairing = interface_pairing(&a, &b, |t| *t == NodeTag::InternalInterface);
    merge_pair(&a, &b, &pairing, path)
}

fn finish_layer(op: CondensedOperator, layer: usize) -> Result<CondensedOperator> {
    if let Some(n) = op.nodes.iter().find(|n| n.tag == NodeTag::InternalInterface) {
        return Err(Error::PairingIncomplete(format!(
            "layer {layer}: internal interface node at {:?} has no partner",
            n.point
        )));
    }
    let neumann: Vec<usize> = (0..op.size())
        .filter(|&i| op.nodes[i].tag == NodeTag::OuterNeumann)
        .collect();
    eliminate_neumann(&op, &neumann)
}

/// Acquires every leaf BCM through `cache`, merges each layer tree bottom-up,
/// removes outer Neumann nodes and glues the layers at dielectric interfaces.
/// The result retains conductor nodes only.
pub fn reduce_tree(decomposition: &Decomposition, cache: &BcmCache, opts: ReduceOptions) -> Result<CondensedOperator> {
    reduce_tree_detailed(decomposition, cache, opts).map(|(op, _)| op)
}

pub fn reduce_tree_detailed(
    decomposition: &Decomposition,
    cache: &BcmCache,
    opts: ReduceOptions,
) -> Result<(CondensedOperator, ReduceInfo)> {
    let leaves = &decomposition.leaves;
    let meshes: Vec<&BoundaryMesh> = leaves.iter().map(|l| &l.mesh).collect();
    let bcms = cache.get_or_compute_many(&meshes, opts.policy);
    let mut max_cond: f64 = 0.0;
    let mut lifted = Vec::with_capacity(leaves.len());
    for (k, (bcm, leaf)) in bcms.into_iter().zip(leaves).enumerate() {
        let bcm = bcm.map_err(|e| Error::Stage {
            stage: "leaf BCM",
            source: Box::new(annotate(e, &leaf.path)),
        })?;
        max_cond = max_cond.max(bcm.cond_estimate_g);
        lifted.push(lift_bcm(&bcm, leaf, k)?);
    }

    let layers: Vec<CondensedOperator> = decomposition
        .trees
        .par_iter()
        .enumerate()
        .map(|(k, tree)| {
            let op = merge_tree(tree, &format!("layer {k}/{}", tree.label), &lifted, opts.order)?;
            finish_layer(op, k)
        })
        .collect::<Result<_>>()?;

    let dielectric = |t: &NodeTag| matches!(t, NodeTag::DielectricInterface { .. });
    let folded = match opts.order {
        MergeOrder::LeftFirst => {
            let mut it = layers.into_iter().enumerate();
            let (_, mut acc) = it.next().expect("at least one layer");
            for (k, next) in it {
                let pairing = interface_pairing(&acc, &next, dielectric);
                acc = merge_pair(&acc, &next, &pairing, &format!("interface {k}"))?;
            }
            acc
        }
        MergeOrder::RightFirst => {
            let mut it = layers.into_iter().enumerate().rev();
            let (_, mut acc) = it.next().expect("at least one layer");
            for (k, next) in it {
                let pairing = interface_pairing(&next, &acc, dielectric);
                acc = merge_pair(&next, &acc, &pairing, &format!("interface {}", k + 1))?;
            }
            acc
        }
    };
    if let Some(n) = folded.nodes.iter().find(|n| !matches!(n.tag, NodeTag::Conductor(_))) {
        return Err(Error::PairingIncomplete(format!(
            "{:?} node at {:?} survived the reduction",
            n.tag, n.point
        )));
    }
    Ok((
        folded,
        ReduceInfo {
            leaves: leaves.len(),
            max_cond_estimate: max_cond,
        },
    ))
}

fn annotate(e: Error, path: &str) -> Error {
    match e {
        Error::Singular { rcond } => Error::MergeSingular {
            interface: format!("{path} (leaf G matrix)"),
            rcond,
        },
        other => other,
    }
}

/// Per-unit-length capacitance matrix of the signal conductors, F/m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedCapacitanceMatrix {
    /// Signal conductor ids, in row/column order.
    pub conductor_ids: Vec<usize>,
    pub ground_id: usize,
    pub matrix: DenseMatrix,
}

impl GeneralizedCapacitanceMatrix {
    pub fn size(&self) -> usize {
        self.conductor_ids.len()
    }

    pub fn pf_per_m(&self) -> DenseMatrix {
        &self.matrix * 1e12
    }

    /// `‖C − Cᵀ‖_∞ / ‖C‖_∞`.
    pub fn asymmetry(&self) -> f64 {
        let d = crate::linalg::norm_inf(&(&self.matrix - self.matrix.transpose()));
        let n = crate::linalg::norm_inf(&self.matrix);
        if n == 0.0 {
            0.0
        } else {
            d / n
        }
    }

    /// Largest entrywise difference relative to the largest entry of `other`.
    pub fn max_relative_difference(&self, other: &GeneralizedCapacitanceMatrix) -> f64 {
        let scale = max_abs(&other.matrix);
        let d = max_abs(&(&self.matrix - &other.matrix));
        if scale == 0.0 {
            d
        } else {
            d / scale
        }
    }
}

/// Drives each signal conductor to 1 V (all others 0 V) and integrates the
/// ε-weighted flux over every conductor's nodes.
pub fn generalized_capacitance(op: &CondensedOperator, ground_id: usize) -> Result<GeneralizedCapacitanceMatrix> {
    let mut ids: Vec<usize> = Vec::new();
    for n in &op.nodes {
        match n.tag {
            NodeTag::Conductor(id) => {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "operator still holds a {other:?} node at {:?}",
                    n.point
                )))
            }
        }
    }
    ids.sort_unstable();
    if ids.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "need at least two conductors including the ground, found {}",
            ids.len()
        )));
    }
    if !ids.contains(&ground_id) {
        return Err(Error::InvalidArgument(format!("ground conductor {ground_id} has no nodes")));
    }
    let signal: Vec<usize> = ids.iter().copied().filter(|&i| i != ground_id).collect();
    let col = |id: usize| signal.iter().position(|&s| s == id);
    // Excitation P (nodes × signals) and weighted collection Wᵀ (signals × nodes).
    let n = op.size();
    let mut p = DMatrix::zeros(n, signal.len());
    let mut wt = DMatrix::zeros(signal.len(), n);
    for (k, node) in op.nodes.iter().enumerate() {
        if let NodeTag::Conductor(id) = node.tag {
            if let Some(c) = col(id) {
                p[(k, c)] = 1.0;
                wt[(c, k)] = node.weight;
            }
        }
    }
    Ok(GeneralizedCapacitanceMatrix {
        conductor_ids: signal,
        ground_id,
        matrix: wt * (&op.matrix * p),
    })
}

/// Root mean square entrywise difference, pF/m.
pub fn rmse(got: &GeneralizedCapacitanceMatrix, reference: &GeneralizedCapacitanceMatrix) -> Result<f64> {
    if got.matrix.shape() != reference.matrix.shape() {
        return Err(Error::InvalidComparison(format!(
            "{:?} vs {:?}",
            got.matrix.shape(),
            reference.matrix.shape()
        )));
    }
    let d = got.pf_per_m() - reference.pf_per_m();
    let count = d.len().max(1) as f64;
    Ok((d.iter().map(|v| v * v).sum::<f64>() / count).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{compute_bcm, AssemblyOptions};
    use crate::decomposition::{decompose, Conductor, Ground, Layer, LayerProblem, Rect};
    use crate::geometry::build_rect_mesh;

    fn square_subdomain(x: f64, tags: [NodeTag; 4], eps: f64) -> (Bcm, Subdomain) {
        let mesh = build_rect_mesh(x, 0.0, 1.0, 1.0, [1; 4], 0).unwrap();
        let bcm = compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::default()).unwrap();
        let sub = Subdomain {
            mesh,
            epsilon_r: eps,
            layer: 0,
            rect: Rect { x, y: 0.0, w: 1.0, h: 1.0 },
            node_tags: tags.to_vec(),
            path: "test".into(),
        };
        (bcm, sub)
    }

    fn gm(m: &DenseMatrix) -> Vec<f64> {
        m.iter().map(|v| v / EPSILON_0).collect()
    }

    #[test]
    fn lift_scales_by_permittivity() {
        use NodeTag::*;
        let tags = [Conductor(1), OuterNeumann, Conductor(2), OuterNeumann];
        let (bcm, sub) = square_subdomain(0.0, tags, 1.0);
        let op = lift_bcm(&bcm, &sub, 0).unwrap();
        assert!((op.matrix[(0, 0)] / EPSILON_0 - 2.5).abs() < 1e-12);
        let (bcm3, sub3) = square_subdomain(0.0, tags, 3.2);
        let op3 = lift_bcm(&bcm3, &sub3, 0).unwrap();
        assert!((&op3.matrix - &op.matrix * 3.2).amax() < 1e-12 * EPSILON_0);
        let mut bad = sub.clone();
        bad.node_tags.pop();
        assert!(matches!(lift_bcm(&bcm, &bad, 0), Err(Error::InvalidPairing(_))));
    }

    #[test]
    fn eliminate_sides_of_unit_square() {
        use NodeTag::*;
        let (bcm, sub) = square_subdomain(0.0, [Conductor(1), OuterNeumann, Conductor(2), OuterNeumann], 1.0);
        let op = lift_bcm(&bcm, &sub, 0).unwrap();
        let red = eliminate_neumann(&op, &[1, 3]).unwrap();
        let v = gm(&red.matrix);
        for (a, b) in v.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
        assert!(red.null_vector_residual() < 1e-9);
        assert_eq!(eliminate_neumann(&op, &[]).unwrap(), op);
    }

    #[test]
    fn merging_with_zero_operator_is_neumann() {
        use NodeTag::*;
        let (bcm, sub) = square_subdomain(0.0, [Conductor(1), InternalInterface, Conductor(2), OuterNeumann], 1.0);
        let a = lift_bcm(&bcm, &sub, 0).unwrap();
        let mut b = a.clone();
        b.matrix.fill(0.0);
        let merged = merge_pair(&a, &b, &[(1, 1)], "zero").unwrap();
        let expected = eliminate_neumann(&a, &[1]).unwrap();
        let block = merged.matrix.view((0, 0), (3, 3)).into_owned();
        assert!((block - &expected.matrix).amax() < 1e-12 * EPSILON_0);
    }

    #[test]
    fn side_by_side_squares_keep_null_vector() {
        use NodeTag::*;
        let (ba, sa) = square_subdomain(0.0, [Conductor(1), InternalInterface, Conductor(2), OuterNeumann], 1.0);
        let (bb, sb) = square_subdomain(1.0, [Conductor(1), OuterNeumann, Conductor(2), InternalInterface], 1.0);
        let a = lift_bcm(&ba, &sa, 0).unwrap();
        let b = lift_bcm(&bb, &sb, 1).unwrap();
        let pairing = interface_pairing(&a, &b, |t| *t == InternalInterface);
        assert_eq!(pairing, vec![(1, 3)]);
        let m = merge_pair(&a, &b, &pairing, "pair").unwrap();
        assert_eq!(m.size(), 6);
        assert!(m.null_vector_residual() < 1e-9);
        let red = eliminate_neumann(&m, &[2, 4]).unwrap();
        let cg = generalized_capacitance(&red, 1).unwrap();
        // Two unit parallel-plate cells side by side: 2 ε0.
        assert!((cg.matrix[(0, 0)] / EPSILON_0 - 2.0).abs() < 1e-10);
    }

    #[test]
    fn pairing_errors() {
        use NodeTag::*;
        let (ba, sa) = square_subdomain(0.0, [Conductor(1), InternalInterface, Conductor(2), OuterNeumann], 1.0);
        let (bb, sb) = square_subdomain(5.0, [Conductor(1), OuterNeumann, Conductor(2), InternalInterface], 1.0);
        let a = lift_bcm(&ba, &sa, 0).unwrap();
        let b = lift_bcm(&bb, &sb, 1).unwrap();
        assert!(matches!(merge_pair(&a, &b, &[(1, 3)], "far"), Err(Error::InvalidPairing(_))));
        assert!(matches!(merge_pair(&a, &a, &[(9, 0)], "range"), Err(Error::InvalidPairing(_))));
    }

    #[test]
    fn generalized_capacitance_checks() {
        use NodeTag::*;
        let (bcm, sub) = square_subdomain(0.0, [Conductor(1), OuterNeumann, Conductor(2), OuterNeumann], 1.0);
        let op = eliminate_neumann(&lift_bcm(&bcm, &sub, 0).unwrap(), &[1, 3]).unwrap();
        let a = generalized_capacitance(&op, 1).unwrap();
        let b = generalized_capacitance(&op, 2).unwrap();
        assert!((a.matrix[(0, 0)] - EPSILON_0).abs() < 1e-6 * EPSILON_0);
        assert!((a.matrix[(0, 0)] - b.matrix[(0, 0)]).abs() < 1e-8 * EPSILON_0);
        let one = CondensedOperator {
            matrix: DMatrix::zeros(1, 1),
            nodes: vec![op.nodes[0]],
            epsilon_applied: true,
        };
        assert!(matches!(generalized_capacitance(&one, 1), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn rmse_values() {
        let a = GeneralizedCapacitanceMatrix {
            conductor_ids: vec![1, 2],
            ground_id: 0,
            matrix: DMatrix::from_row_slice(2, 2, &[10e-12, -2e-12, -2e-12, 10e-12]),
        };
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.matrix.add_scalar_mut(1e-12);
        assert!((rmse(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = GeneralizedCapacitanceMatrix {
            conductor_ids: vec![1],
            ground_id: 0,
            matrix: DMatrix::zeros(1, 1),
        };
        assert!(matches!(rmse(&a, &c), Err(Error::InvalidComparison(_))));
    }

    fn plate_problem(level: usize) -> LayerProblem {
        LayerProblem {
            layers: vec![Layer { height: 1.0, epsilon_r: 1.0 }],
            box_width: 1.0,
            conductors: vec![
                Conductor { id: 1, interface: 0, x_offset: 0.0, width: 1.0 },
                Conductor { id: 2, interface: 1, x_offset: 0.0, width: 1.0 },
            ],
            ground: Ground::Conductor(1),
            mesh_level: level,
            elements_per_side: 2,
        }
    }

    #[test]
    fn parallel_plate_through_the_tree() {
        for level in 0..=3 {
            let d = decompose(&plate_problem(level)).unwrap();
            let cache = BcmCache::default();
            let op = reduce_tree(&d, &cache, ReduceOptions::default()).unwrap();
            let cg = generalized_capacitance(&op, 1).unwrap();
            assert!((cg.matrix[(0, 0)] / EPSILON_0 - 1.0).abs() < 1e-6, "level {level}: {}", cg.matrix);
        }
    }

    #[test]
    fn merge_order_does_not_matter() {
        let p = LayerProblem {
            layers: vec![Layer { height: 1.0, epsilon_r: 3.0 }, Layer { height: 1.0, epsilon_r: 1.0 }],
            box_width: 4.0,
            conductors: vec![
                Conductor { id: 1, interface: 1, x_offset: 0.5, width: 1.0 },
                Conductor { id: 2, interface: 1, x_offset: 2.5, width: 1.0 },
            ],
            ground: Ground::BottomPlane,
            mesh_level: 2,
            elements_per_side: 2,
        };
        let d = decompose(&p).unwrap();
        let cache = BcmCache::default();
        let l = reduce_tree(&d, &cache, ReduceOptions::default()).unwrap();
        let r = reduce_tree(
            &d,
            &cache,
            ReduceOptions {
                order: MergeOrder::RightFirst,
                ..ReduceOptions::default()
            },
        )
        .unwrap();
        let (cl, cr) = (generalized_capacitance(&l, 0).unwrap(), generalized_capacitance(&r, 0).unwrap());
        assert!(cl.max_relative_difference(&cr) < 1e-9, "{} vs {}", cl.matrix, cr.matrix);
        assert!(cl.matrix[(0, 0)] > 0.0 && cl.matrix[(0, 1)] < 0.0);
        assert!(cl.asymmetry() < 0.05);
    }
}
