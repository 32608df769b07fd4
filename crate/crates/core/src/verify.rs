//! Self-check suite behind `trefftz verify`, plus the reference geometries it
//! runs on.

use std::f64::consts::PI;

use serde::Serialize;

use crate::assembly::{assemble_hg, compute_bcm, default_quadrature_order, AssemblyOptions};
use crate::basis::{default_basis, BasisPolicy};
use crate::decomposition::{decompose, Conductor, Ground, Layer, LayerProblem};
use crate::error::Result;
use crate::geometry::{build_rect_mesh, BoundaryElement, BoundaryMesh, Point2};
use crate::linalg::{max_abs, norm_inf, DenseMatrix};
use crate::merge::{generalized_capacitance, reduce_tree, MergeOrder, ReduceOptions};
use crate::oracle::{example3_rederived, exact_example1, exact_example3, flat_reference, parallel_plate_reference};
use crate::quadrature::QuadratureRule;
use crate::scaling_cache::BcmCache;

/// Closed quadratic-geometry curve `r(φ) = 1 + 0.2 cos 3φ` centred at
/// `center`, `elements` three-node elements with the given field degree.
pub fn curved_blob(center: Point2, elements: usize, field_degree: usize) -> Result<BoundaryMesh> {
    let at = |t: f64| {
        let phi = 2.0 * PI * t / elements as f64;
        let r = 1.0 + 0.2 * (3.0 * phi).cos();
        center + Point2::new(r * phi.cos(), r * phi.sin())
    };
    let elems = (0..elements)
        .map(|k| {
            let k = k as f64;
            BoundaryElement::new(vec![at(k), at(k + 0.5), at(k + 1.0)], field_degree)
        })
        .collect::<Result<Vec<_>>>()?;
    BoundaryMesh::new(elems)
}

/// Unit square, ε_r = 1, conductors on the bottom (ground) and top walls.
pub fn parallel_plate_problem(level: usize) -> LayerProblem {
    LayerProblem {
        layers: vec![Layer {
            height: 1.0,
            epsilon_r: 1.0,
        }],
        box_width: 1.0,
        conductors: vec![
            Conductor {
                id: 1,
                interface: 0,
                x_offset: 0.0,
                width: 1.0,
            },
            Conductor {
                id: 2,
                interface: 1,
                x_offset: 0.0,
                width: 1.0,
            },
        ],
        ground: Ground::Conductor(1),
        mesh_level: level,
        elements_per_side: 1,
    }
}

/// Substrate (ε_r = 4) under air, ground plane at the bottom, two strips on
/// the dielectric interface. 8 leaves at level 1; level 0 cannot separate the
/// strips.
pub fn two_layer_problem(level: usize) -> LayerProblem {
    LayerProblem {
        layers: vec![
            Layer {
                height: 2.0,
                epsilon_r: 4.0,
            },
            Layer {
                height: 2.0,
                epsilon_r: 1.0,
            },
        ],
        box_width: 4.0,
        conductors: vec![
            Conductor {
                id: 1,
                interface: 1,
                x_offset: 1.0,
                width: 0.5,
            },
            Conductor {
                id: 2,
                interface: 1,
                x_offset: 2.5,
                width: 0.5,
            },
        ],
        ground: Ground::BottomPlane,
        mesh_level: level,
        elements_per_side: 2,
    }
}

/// Three translated copies of one rectangle.
pub fn three_same_shapes() -> Result<Vec<BoundaryMesh>> {
    [(0.0, 0.0), (2.0, 0.0), (4.5, 1.0)]
        .iter()
        .map(|&(a, b)| build_rect_mesh(a, b, 1.5, 0.5, [2, 1, 2, 1], 0))
        .collect()
}

pub fn rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Known, documented discrepancy; reported but does not fail the suite.
    pub advisory: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, tol: f64) -> Self {
        Check {
            name,
            passed: value <= tol,
            detail: format!("{value:.3e} (tolerance {tol:.0e})"),
            advisory: false,
        }
    }

    fn failed(name: &'static str, e: impl std::fmt::Display) -> Self {
        Check {
            name,
            passed: false,
            detail: e.to_string(),
            advisory: false,
        }
    }
}

fn run(name: &'static str, tol: f64, f: impl FnOnce() -> Result<f64>) -> Check {
    match f() {
        Ok(v) => Check::new(name, v, tol),
        Err(e) => Check::failed(name, e),
    }
}

pub fn run_suite() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(run("rectangle H and G closed form", 1e-12, || {
        let (a, b, w, h) = (0.3, -0.2, 1.5, 0.7);
        let mesh = build_rect_mesh(a, b, w, h, [1, 1, 1, 1], 0)?;
        let basis = default_basis(4)?;
        let quad = QuadratureRule::gauss_legendre(default_quadrature_order(&mesh, &basis))?;
        let (hm, gm) = assemble_hg(&mesh, &basis, &quad)?;
        let e = exact_example1(a, b, w, h);
        Ok(rel_diff(&hm, &e.h).max(rel_diff(&gm, &e.g)))
    }));
    out.push(run("rectangle C closed form", 1e-10, || {
        let mesh = build_rect_mesh(4.0, 1.0, 1.5, 0.7, [1, 1, 1, 1], 0)?;
        let c = compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::default())?;
        Ok(rel_diff(&c.matrix, &exact_example1(0.0, 0.0, 1.5, 0.7).c))
    }));
    let split = || -> Result<DenseMatrix> {
        let mesh = build_rect_mesh(0.0, 0.0, 1.5, 0.7, [2, 1, 1, 1], 0)?;
        Ok(compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::default())?.matrix)
    };
    out.push(run("split-bottom rectangle C (re-derived)", 1e-10, || {
        Ok(rel_diff(&split()?, &example3_rederived(1.5, 0.7)))
    }));
    let mut published = run("split-bottom rectangle C (published)", 1e-10, || {
        Ok(rel_diff(&split()?, &exact_example3(1.5, 0.7, false)))
    });
    published.advisory = true;
    published.detail += "; published rows 3 and 5 do not sum to zero";
    out.push(published);
    out.push(run("1/s scaling law", 1e-10, || {
        let mut worst: f64 = 0.0;
        for mesh in [
            build_rect_mesh(0.0, 0.0, 1.0, 1.0, [1, 1, 1, 1], 0)?,
            curved_blob(Point2::new(0.4, -0.3), 6, 1)?,
        ] {
            let base = compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::raw())?.matrix;
            for s in [0.5, 2.0, 10.0, 100.0] {
                let scaled = compute_bcm(&mesh.scaled(s)?, BasisPolicy::Canonical, &AssemblyOptions::raw())?.matrix;
                let expect = &base / s;
                worst = worst.max(norm_inf(&(scaled - &expect)) / norm_inf(&expect));
            }
        }
        Ok(worst)
    }));
    out.push(run("null vector C·1 = 0", 1e-9, || {
        let mut worst: f64 = 0.0;
        for mesh in [
            build_rect_mesh(0.0, 0.0, 2.0, 1.0, [3, 2, 3, 2], 0)?,
            curved_blob(Point2::ORIGIN, 8, 0)?,
        ] {
            let c = compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::default())?;
            worst = worst.max(c.row_sum_residual() / norm_inf(&c.matrix));
        }
        Ok(worst)
    }));
    let opts = ReduceOptions {
        order: MergeOrder::LeftFirst,
        policy: BasisPolicy::Canonical,
    };
    out.push(run("parallel plate ε0·w/h", 1e-6, || {
        let p = parallel_plate_problem(0);
        let op = reduce_tree(&decompose(&p)?, &BcmCache::default(), opts)?;
        let c = generalized_capacitance(&op, p.ground_id())?;
        let r = parallel_plate_reference(1.0, 1.0, 1.0);
        Ok((c.matrix[(0, 0)] - r).abs() / r)
    }));
    out.push(run("hierarchical vs flat", 1e-8, || {
        let p = two_layer_problem(1);
        let d = decompose(&p)?;
        let op = reduce_tree(&d, &BcmCache::default(), opts)?;
        let got = generalized_capacitance(&op, p.ground_id())?;
        Ok(got.max_relative_difference(&flat_reference(&d, &p)?))
    }));
    out.push(match three_same_shapes() {
        Ok(meshes) => {
            let cache = BcmCache::default();
            let refs: Vec<&BoundaryMesh> = meshes.iter().collect();
            let ok = cache
                .get_or_compute_many(&refs, BasisPolicy::Canonical)
                .into_iter()
                .all(|r| r.is_ok());
            let s = cache.stats();
            Check {
                name: "cache accounting (3 congruent shapes)",
                passed: ok && s.assemblies == 1 && s.hits == 2,
                detail: format!("{} assemblies, {} hits", s.assemblies, s.hits),
                advisory: false,
            }
        }
        Err(e) => Check::failed("cache accounting (3 congruent shapes)", e),
    });
    out
}

/// True when every non-advisory check passed.
pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed || c.advisory)
}
