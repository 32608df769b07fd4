//! Full extraction from a problem file: decomposition, cached leaf BCMs,
//! hierarchical condensation, C_G in pF/m, cross-checked against the flat
//! global solve and exported as CSV and JSON.

use std::path::PathBuf;

use trefftz::decomposition::decompose;
use trefftz::io::{export_matrix, import_matrix, parse_problem, MatrixFormat};
use trefftz::oracle::flat_reference;
use trefftz::pipeline::{format_report, run_extract, ExtractOptions};

fn main() -> trefftz::Result<()> {
    let file = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/microstrip_pair.txt")));
    let problem = parse_problem(&file)?;
    let report = run_extract(&problem, &ExtractOptions::default())?;
    print!("{}", format_report(&report, true));
    println!("asymmetry {:.2e}", report.c_g.asymmetry());

    let flat = flat_reference(&decompose(&problem)?, &problem)?;
    println!("hierarchical vs flat: {:.1e}", report.c_g.max_relative_difference(&flat));

    let dir = std::env::temp_dir();
    for (name, format) in [("c_g.csv", MatrixFormat::Csv), ("c_g.json", MatrixFormat::Json)] {
        let path = dir.join(name);
        export_matrix(&report.c_g.pf_per_m(), &path, format)?;
        let back = import_matrix(&path)?;
        println!("{} round trip exact: {}", path.display(), back == report.c_g.pf_per_m());
        std::fs::remove_file(&path)?;
    }
    Ok(())
}
