//! Mesh-level sweep with cache-on (t_n) and cache-off (t_o) timings and a
//! plot-ready table. Timings are machine dependent and only reported.

use trefftz::decomposition::{Ground, LayerProblem};
use trefftz::merge::GeneralizedCapacitanceMatrix;
use trefftz::oracle::parallel_plate_reference;
use trefftz::pipeline::{bench, bench_table, format_report, run_extract, ExtractOptions};
use trefftz::verify::{parallel_plate_problem, two_layer_problem};

fn sweep(name: &str, problem: &LayerProblem, levels: &[usize], reference: Option<GeneralizedCapacitanceMatrix>) -> trefftz::Result<()> {
    let opts = ExtractOptions {
        reference,
        ..Default::default()
    };
    let rows = bench(problem, levels, &opts)?;
    println!("== {name}");
    print!("{}", bench_table(&rows));
    if let Some((_, Ok(last))) = rows.last() {
        print!("{}", format_report(last, true));
    }
    println!();
    Ok(())
}

fn main() -> trefftz::Result<()> {
    // The full-width capacitor is exact at every level.
    let plate = parallel_plate_problem(0);
    let exact = GeneralizedCapacitanceMatrix {
        conductor_ids: vec![2],
        ground_id: 1,
        matrix: nalgebra::DMatrix::from_element(1, 1, parallel_plate_reference(1.0, 1.0, 1.0)),
    };
    sweep("parallel plate vs ε0·w/h", &plate, &[0, 1, 2, 3], Some(exact))?;

    // No closed form for the microstrip pair: compare against a finer level.
    let microstrip = two_layer_problem(1);
    assert_eq!(microstrip.ground, Ground::BottomPlane);
    let fine = run_extract(&microstrip, &ExtractOptions {
        mesh_level: Some(7),
        timing_runs: 1,
        ..Default::default()
    })?;
    sweep("microstrip pair vs level 7", &microstrip, &[1, 2, 3, 4, 5], Some(fine.c_g))
}
