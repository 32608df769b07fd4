//! Unit-square parallel-plate capacitor through the full hierarchical
//! pipeline, compared with ε0·w/h at several mesh levels.

use trefftz::oracle::parallel_plate_reference;
use trefftz::pipeline::{run_extract, ExtractOptions};
use trefftz::verify::parallel_plate_problem;

fn main() -> trefftz::Result<()> {
    let exact = parallel_plate_reference(1.0, 1.0, 1.0);
    println!("analytic: {:.10} pF/m", exact * 1e12);
    for level in 0..=3 {
        let r = run_extract(&parallel_plate_problem(level), &ExtractOptions::default())?;
        let c = r.c_g.matrix[(0, 0)];
        println!(
            "level {level}: {:>3} leaves, C = {:.10} pF/m, relative error {:.1e}",
            r.leaves,
            c * 1e12,
            (c - exact).abs() / exact
        );
    }
    Ok(())
}
