//! The BCM cache keys on normalized shape: translated and uniformly scaled
//! copies of one leaf cost a single assembly. The cache can be saved and
//! reloaded between runs.

use trefftz::assembly::{compute_bcm, AssemblyOptions};
use trefftz::basis::BasisPolicy;
use trefftz::geometry::{build_rect_mesh, BoundaryMesh};
use trefftz::scaling_cache::BcmCache;
use trefftz::verify::{rel_diff, three_same_shapes};

fn main() -> trefftz::Result<()> {
    let cache = BcmCache::default();

    // Three translated copies: one assembly, two hits.
    let copies = three_same_shapes()?;
    let refs: Vec<&BoundaryMesh> = copies.iter().collect();
    for r in cache.get_or_compute_many(&refs, BasisPolicy::Canonical) {
        r?;
    }
    let s = cache.stats();
    println!("3 congruent leaves: {} assemblies, {} hits", s.assemblies, s.hits);

    // A copy scaled by 4 is served from the same entry, rescaled by 1/4.
    let big = build_rect_mesh(10.0, 10.0, 6.0, 2.0, [2, 1, 2, 1], 0)?;
    let served = cache.get_or_compute(&big, BasisPolicy::Canonical)?;
    let direct = compute_bcm(&big, BasisPolicy::Canonical, &AssemblyOptions::default())?;
    println!(
        "scaled copy: {} hits total, cached vs direct {:.1e}",
        cache.stats().hits,
        rel_diff(&served.matrix, &direct.matrix)
    );

    // A different aspect ratio is a new shape class.
    cache.get_or_compute(&build_rect_mesh(0.0, 0.0, 1.0, 1.0, [2, 1, 2, 1], 0)?, BasisPolicy::Canonical)?;
    println!("after a square: {:?}, {} entries", cache.stats(), cache.len());

    let path = std::env::temp_dir().join("trefftz-example-cache.jsonl");
    cache.save(&path)?;
    let reloaded = BcmCache::default();
    let n = reloaded.load(&path)?;
    reloaded.get_or_compute(&copies[0], BasisPolicy::Canonical)?;
    println!("reloaded {n} entries from {}; lookup after reload: {:?}", path.display(), reloaded.stats());
    std::fs::remove_file(&path)?;
    Ok(())
}
