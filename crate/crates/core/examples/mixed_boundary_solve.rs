//! Single-domain potential problem from a BCM: potentials prescribed on the
//! left and right sides, fluxes on the top and bottom. The exact solution
//! u = 3 + 2x is linear, so linear field elements reproduce it to rounding;
//! constant elements do not.

use std::collections::BTreeMap;

use trefftz::assembly::{compute_bcm, mixed_residual, solve_mixed, AssemblyOptions};
use trefftz::basis::BasisPolicy;
use trefftz::geometry::build_rect_mesh;
use trefftz::io::{load_mesh, save_mesh};

fn main() -> trefftz::Result<()> {
    for degree in [1, 0] {
        solve(degree)?;
    }
    Ok(())
}

fn solve(field_degree: usize) -> trefftz::Result<()> {
    println!("field degree {field_degree}");
    let mesh = build_rect_mesh(0.0, 0.0, 2.0, 1.0, [2, 1, 2, 1], field_degree)?;
    // Round trip through the JSON mesh format read by `trefftz solve`.
    let path = std::env::temp_dir().join("trefftz-example-mesh.json");
    save_mesh(&mesh, &path)?;
    let mesh = load_mesh(&path)?;
    std::fs::remove_file(&path)?;

    let bcm = compute_bcm(&mesh, BasisPolicy::Canonical, &AssemblyOptions::default())?;
    let exact = |x: f64| 3.0 + 2.0 * x;
    let mut dirichlet = BTreeMap::new();
    let mut neumann = BTreeMap::new();
    for (k, p) in bcm.node_points.iter().enumerate() {
        if p.x < 1e-12 || p.x > 2.0 - 1e-12 {
            dirichlet.insert(k, exact(p.x));
        } else {
            neumann.insert(k, 0.0);
        }
    }
    let (u, q) = solve_mixed(&bcm, &dirichlet, &neumann)?;
    println!(" node      x      y         u     exact         q");
    for (k, p) in bcm.node_points.iter().enumerate() {
        println!("{k:>5} {:>6.3} {:>6.3} {:>9.6} {:>9.6} {:>9.6}", p.x, p.y, u[k], exact(p.x), q[k]);
    }
    let worst = bcm.node_points.iter().enumerate().map(|(k, p)| (u[k] - exact(p.x)).abs()).fold(0.0, f64::max);
    println!("max |u − exact| = {worst:.1e}, residual ‖Cu − q‖ = {:.1e}\n", mixed_residual(&bcm, &u, &q));
    Ok(())
}
