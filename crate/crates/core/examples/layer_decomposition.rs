//! Binary-tree decomposition of one dielectric layer with two conductors on
//! its bottom edge, then the conforming leaf meshes of a full problem.

use trefftz::decomposition::{decompose, decompose_layer, shape_classes, tiling_error, Footprint, NodeTag, Rect};
use trefftz::io::parse_problem;

fn main() -> trefftz::Result<()> {
    let layer = Rect {
        x: 0.0,
        y: 0.0,
        w: 8.0,
        h: 2.0,
    };
    let strips = [Footprint { x0: 1.5, x1: 2.5 }, Footprint { x0: 5.5, x1: 6.5 }];
    let tree = decompose_layer(layer, &strips, &[], 3);
    println!("tree: {}", tree.pattern());
    for (leaf, path) in tree.leaves_with_paths() {
        let r = leaf.rect;
        println!("  {path:<16} x {:>5.2}..{:<5.2} y {:>5.3}..{:<5.3}", r.x, r.x_end(), r.y, r.y_end());
    }

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/microstrip_pair.txt");
    let problem = parse_problem(path.as_ref())?;
    let d = decompose(&problem)?;
    println!(
        "\n{}: {} leaves, {} nodes ({} on conductors), tiling error {:.1e}",
        path,
        d.leaf_count(),
        d.node_count(),
        d.conductor_node_count(),
        tiling_error(&problem, &d)
    );
    let classes = shape_classes(&d.leaves, 0)?;
    println!("{} distinct leaf shapes", classes.len());
    let mut counts: Vec<usize> = classes.values().copied().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    println!("class sizes: {counts:?}");

    let tagged = |f: fn(&NodeTag) -> bool| d.leaves.iter().flat_map(|l| &l.node_tags).filter(|t| f(t)).count();
    println!(
        "nodes: {} internal, {} dielectric, {} outer wall",
        tagged(|t| matches!(t, NodeTag::InternalInterface)),
        tagged(|t| matches!(t, NodeTag::DielectricInterface { .. })),
        tagged(|t| matches!(t, NodeTag::OuterNeumann)),
    );
    Ok(())
}
