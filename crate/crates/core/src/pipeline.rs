//! Extraction driver: decompose → leaf BCMs → condensation → C_G, with
//! cache-on/cache-off timings and an optional reference comparison.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::basis::BasisPolicy;
use crate::decomposition::{decompose_with, DecomposeOptions, Decomposition, LayerProblem};
use crate::error::{Error, Result, StageExt};
use crate::merge::{
    generalized_capacitance, reduce_tree_detailed, rmse, GeneralizedCapacitanceMatrix, MergeOrder, ReduceOptions,
};
use crate::scaling_cache::{BcmCache, CacheStats};

#[derive(Clone, Debug)]
pub struct ExtractOptions {
    /// Overrides the problem's own mesh level.
    pub mesh_level: Option<usize>,
    pub use_cache: bool,
    /// Reference C_G for the RMSE column.
    pub reference: Option<GeneralizedCapacitanceMatrix>,
    /// Timed repetitions per configuration; the median is reported.
    pub timing_runs: usize,
    pub reduce: ReduceOptions,
    pub decompose: DecomposeOptions,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            mesh_level: None,
            use_cache: true,
            reference: None,
            timing_runs: 3,
            reduce: ReduceOptions {
                order: MergeOrder::LeftFirst,
                policy: BasisPolicy::Canonical,
            },
            decompose: DecomposeOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub mesh_level: usize,
    pub leaves: usize,
    pub conductor_nodes: usize,
    pub total_nodes: usize,
    pub c_g: GeneralizedCapacitanceMatrix,
    /// pF/m
    pub rmse: Option<f64>,
    /// Median wall clock with the shape cache; `None` when the cache is off.
    pub time_with_cache_s: Option<f64>,
    pub time_without_cache_s: f64,
    pub cache_stats: CacheStats,
    /// Largest condition estimate of a leaf G matrix.
    pub cond_summary: f64,
    /// Largest relative entry difference between cache-on and cache-off C_G.
    pub cache_agreement: Option<f64>,
}

fn median(mut v: Vec<Duration>) -> f64 {
    v.sort();
    v[v.len() / 2].as_secs_f64()
}

struct Solved {
    c_g: GeneralizedCapacitanceMatrix,
    stats: CacheStats,
    cond: f64,
    elapsed: Duration,
}

fn solve_once(problem: &LayerProblem, decomposition: &Decomposition, cache: &BcmCache, opts: ReduceOptions) -> Result<Solved> {
    let start = Instant::now();
    let (op, info) = reduce_tree_detailed(decomposition, cache, opts).stage("reduce")?;
    let c_g = generalized_capacitance(&op, problem.ground_id()).stage("capacitance")?;
    Ok(Solved {
        c_g,
        stats: cache.stats(),
        cond: info.max_cond_estimate,
        elapsed: start.elapsed(),
    })
}

fn timed(
    problem: &LayerProblem,
    decomposition: &Decomposition,
    runs: usize,
    make_cache: impl Fn() -> BcmCache,
    opts: ReduceOptions,
) -> Result<(Solved, f64)> {
    let mut times = Vec::with_capacity(runs);
    let mut first = None;
    for _ in 0..runs.max(1) {
        // A fresh cache per run: the timing covers assembly, not a warm cache.
        let s = solve_once(problem, decomposition, &make_cache(), opts)?;
        times.push(s.elapsed);
        first.get_or_insert(s);
    }
    Ok((first.expect("at least one run"), median(times)))
}

pub fn run_extract(problem: &LayerProblem, opts: &ExtractOptions) -> Result<RunReport> {
    let mut problem = problem.clone();
    if let Some(level) = opts.mesh_level {
        problem.mesh_level = level;
    }
    problem.validate().stage("problem")?;
    let decomposition = decompose_with(&problem, opts.decompose).stage("decompose")?;

    let (off, t_off) = timed(&problem, &decomposition, opts.timing_runs, BcmCache::passthrough, opts.reduce)?;
    let (on, t_on) = if opts.use_cache {
        let (s, t) = timed(&problem, &decomposition, opts.timing_runs, BcmCache::default, opts.reduce)?;
        (Some(s), Some(t))
    } else {
        (None, None)
    };
    let cache_agreement = on.as_ref().map(|s| s.c_g.max_relative_difference(&off.c_g));
    let chosen = on.unwrap_or(off);

    let rmse = match &opts.reference {
        Some(r) => Some(rmse(&chosen.c_g, r).stage("reference")?),
        None => None,
    };
    log::info!(
        "level {}: {} leaves, {} nodes, t_n {:?} s, t_o {:.4} s",
        problem.mesh_level,
        decomposition.leaf_count(),
        decomposition.node_count(),
        t_on,
        t_off
    );
    Ok(RunReport {
        mesh_level: problem.mesh_level,
        leaves: decomposition.leaf_count(),
        conductor_nodes: decomposition.conductor_node_count(),
        total_nodes: decomposition.node_count(),
        c_g: chosen.c_g,
        rmse,
        time_with_cache_s: t_on,
        time_without_cache_s: t_off,
        cache_stats: chosen.stats,
        cond_summary: chosen.cond,
        cache_agreement,
    })
}

/// One report per level; a failing level does not stop the sweep.
pub fn bench(problem: &LayerProblem, levels: &[usize], opts: &ExtractOptions) -> Result<Vec<(usize, Result<RunReport>)>> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no mesh levels given".into()));
    }
    Ok(levels
        .iter()
        .map(|&level| {
            let o = ExtractOptions {
                mesh_level: Some(level),
                ..opts.clone()
            };
            let r = run_extract(problem, &o);
            if let Err(e) = &r {
                log::warn!("level {level} failed: {e}");
            }
            (level, r)
        })
        .collect())
}

fn sci_or_nan(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| format!("{v:.6e}"))
}

/// Whitespace-separated columns `level N_n N_total RMSE t_n t_o`, one row per
/// level; missing values are `nan`.
pub fn bench_table(rows: &[(usize, Result<RunReport>)]) -> String {
    let mut s = String::from("# level N_n N_total rmse_pF_per_m t_n_s t_o_s\n");
    for (level, r) in rows {
        match r {
            Ok(r) => writeln!(
                s,
                "{level} {} {} {} {} {:.6e}",
                r.conductor_nodes,
                r.total_nodes,
                sci_or_nan(r.rmse),
                sci_or_nan(r.time_with_cache_s),
                r.time_without_cache_s
            ),
            Err(e) => writeln!(s, "{level} nan nan nan nan nan # {e}"),
        }
        .unwrap();
    }
    s
}

/// Human-readable summary: node counts as `N_n (total)`, C_G in pF/m,
/// RMSE, timings and cache counters.
pub fn format_report(r: &RunReport, report_cond: bool) -> String {
    let mut s = String::new();
    writeln!(s, "mesh level        {}", r.mesh_level).unwrap();
    writeln!(s, "leaves            {}", r.leaves).unwrap();
    writeln!(s, "nodes             {} ({})", r.conductor_nodes, r.total_nodes).unwrap();
    writeln!(
        s,
        "ground            {}   signals {:?}",
        r.c_g.ground_id, r.c_g.conductor_ids
    )
    .unwrap();
    writeln!(s, "C_G [pF/m]").unwrap();
    for row in r.c_g.pf_per_m().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.4}")).collect();
        writeln!(s, "  {}", cells.join(" ")).unwrap();
    }
    if let Some(e) = r.rmse {
        writeln!(s, "RMSE [pF/m]       {e:.4}").unwrap();
    }
    match r.time_with_cache_s {
        Some(t) => writeln!(s, "t_n [s]           {t:.4}").unwrap(),
        None => writeln!(s, "t_n [s]           (cache off)").unwrap(),
    }
    writeln!(s, "t_o [s]           {:.4}", r.time_without_cache_s).unwrap();
    writeln!(
        s,
        "cache             {} assemblies, {} hits",
        r.cache_stats.assemblies, r.cache_stats.hits
    )
    .unwrap();
    if report_cond {
        writeln!(s, "max cond(G)       {:.3e}", r.cond_summary).unwrap();
    }
    s
}
