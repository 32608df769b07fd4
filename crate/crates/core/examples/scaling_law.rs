//! Uniform scaling by s divides the BCM by s. Checks the law on a square, a
//! finely split rectangle and a curved quadratic-geometry domain, then the
//! underlying diagonal factorizations of H and G.

use trefftz::assembly::{assemble_hg, compute_bcm, default_quadrature_order, AssemblyOptions};
use trefftz::basis::{default_basis, BasisPolicy};
use trefftz::geometry::{build_rect_mesh, BoundaryMesh, Point2};
use trefftz::linalg::norm_inf;
use trefftz::quadrature::QuadratureRule;
use trefftz::scaling_cache::{diagonal_scale_factors, scale_bcm};
use trefftz::verify::{curved_blob, rel_diff};

fn main() -> trefftz::Result<()> {
    let domains: Vec<(&str, BoundaryMesh)> = vec![
        ("square", build_rect_mesh(0.0, 0.0, 1.0, 1.0, [1, 1, 1, 1], 0)?),
        ("rectangle 24", build_rect_mesh(0.3, 0.1, 2.0, 1.0, [8, 4, 8, 4], 0)?),
        ("curved blob", curved_blob(Point2::new(0.2, -0.1), 6, 1)?),
    ];
    // Default assembly works on the centred, radius-1 copy; raw assembly uses
    // the coordinates as given, so its error also reflects rounding in the
    // scaled coordinates amplified by cond(G).
    println!("{:>12}  {:>5}  {:>9}  {:>9}", "domain", "s", "default", "raw");
    for (name, mesh) in &domains {
        for s in [0.5, 2.0, 10.0, 100.0] {
            let mut errs = Vec::new();
            for opts in [AssemblyOptions::default(), AssemblyOptions::raw()] {
                let base = compute_bcm(mesh, BasisPolicy::Canonical, &opts)?;
                let direct = compute_bcm(&mesh.scaled(s)?, BasisPolicy::Canonical, &opts)?;
                let predicted = scale_bcm(&base, s)?;
                errs.push(norm_inf(&(&direct.matrix - &predicted.matrix)) / norm_inf(&predicted.matrix));
            }
            println!("{name:>12}  {s:>5}  {:>9.1e}  {:>9.1e}", errs[0], errs[1]);
        }
    }

    // H(sΩ) = H_s H(Ω) and G(sΩ) = G_s G(Ω) with diagonal H_s, G_s.
    let mesh = &domains[2].1;
    let basis = default_basis(mesh.node_count())?;
    let quad = QuadratureRule::gauss_legendre(default_quadrature_order(mesh, &basis))?;
    let (h1, g1) = assemble_hg(mesh, &basis, &quad)?;
    for s in [0.5, 10.0] {
        let (hs, gs) = assemble_hg(&mesh.scaled(s)?, &basis, &quad)?;
        let (dh, dg) = diagonal_scale_factors(&basis, s);
        let hp = nalgebra::DMatrix::from_diagonal(&dh) * &h1;
        let gp = nalgebra::DMatrix::from_diagonal(&dg) * &g1;
        println!("s = {s}: H factorization {:.1e}, G factorization {:.1e}", rel_diff(&hs, &hp), rel_diff(&gs, &gp));
    }
    Ok(())
}
