//! Assembles H, G and C = G⁻¹H for a rectangle with one constant element per
//! side and compares them with the closed-form expressions.

use trefftz::assembly::{assemble_hg, compute_bcm, default_quadrature_order, AssemblyOptions};
use trefftz::basis::{default_basis, BasisPolicy};
use trefftz::geometry::{build_rect_mesh, Point2};
use trefftz::oracle::{example3_rederived, exact_example1};
use trefftz::quadrature::QuadratureRule;
use trefftz::verify::rel_diff;

fn main() -> trefftz::Result<()> {
    let (a, b, w, h) = (1.0, 0.5, 2.0, 1.0);
    let mesh = build_rect_mesh(a, b, w, h, [1, 1, 1, 1], 0)?;
    let basis = default_basis(mesh.node_count())?;
    let quad = QuadratureRule::gauss_legendre(default_quadrature_order(&mesh, &basis))?;
    let (hm, gm) = assemble_hg(&mesh, &basis, &quad)?;
    let exact = exact_example1(a, b, w, h);

    println!("H ={hm}G ={gm}");
    println!("max relative deviation: H {:.1e}, G {:.1e}", rel_diff(&hm, &exact.h), rel_diff(&gm, &exact.g));

    let bcm = compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::default())?;
    println!("C ={}", bcm.matrix);
    println!("max relative deviation: C {:.1e}", rel_diff(&bcm.matrix, &exact.c));
    println!("row sums ≤ {:.1e}", bcm.row_sum_residual());

    // Same rectangle moved elsewhere: C does not change.
    let moved = compute_bcm(&mesh.translated(Point2::new(-7.0, 3.0)), BasisPolicy::Canonical, &AssemblyOptions::default())?;
    println!("translated: {:.1e}", rel_diff(&moved.matrix, &bcm.matrix));

    // Bottom side split in two: five nodes, five weighting functions.
    let split = build_rect_mesh(0.0, 0.0, w, h, [2, 1, 1, 1], 0)?;
    let c5 = compute_bcm(&split, BasisPolicy::Canonical, &AssemblyOptions::default())?;
    println!("split bottom C ={}", c5.matrix);
    println!("vs symbolic: {:.1e}", rel_diff(&c5.matrix, &example3_rederived(w, h)));
    Ok(())
}
