//! Binary-tree decomposition of dielectric layers into rectangles refined
//! toward conductor-bearing edges, and conforming constant-element meshes for
//! the leaves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{signature, BoundaryMesh, Point2, ShapeSignature};

/// Relative snapping tolerance for coordinates shared between leaves.
const SNAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// mm
    pub height: f64,
    pub epsilon_r: f64,
}

/// Zero-thickness strip on interface `interface` (0 = bottom of the box,
/// `layers.len()` = top).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conductor {
    pub id: usize,
    pub interface: usize,
    /// mm from the left wall
    pub x_offset: f64,
    /// mm
    pub width: f64,
}

impl Conductor {
    pub fn x_end(&self) -> f64 {
        self.x_offset + self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ground {
    Conductor(usize),
    /// The whole bottom wall held at zero; it takes id [`BOTTOM_PLANE_ID`].
    BottomPlane,
}

pub const BOTTOM_PLANE_ID: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProblem {
    /// Bottom-up.
    pub layers: Vec<Layer>,
    pub box_width: f64,
    pub conductors: Vec<Conductor>,
    pub ground: Ground,
    pub mesh_level: usize,
    /// Elements on each leaf edge before breakpoints from neighbours are added.
    pub elements_per_side: usize,
}

impl LayerProblem {
    pub fn interface_count(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn interface_y(&self, k: usize) -> f64 {
        self.layers[..k].iter().map(|l| l.height).sum()
    }

    pub fn total_height(&self) -> f64 {
        self.interface_y(self.layers.len())
    }

    pub fn conductor(&self, id: usize) -> Option<&Conductor> {
        self.conductors.iter().find(|c| c.id == id)
    }

    /// Conductor ids including the bottom plane when it is the ground.
    pub fn conductor_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.conductors.iter().map(|c| c.id).collect();
        if self.ground == Ground::BottomPlane {
            ids.push(BOTTOM_PLANE_ID);
        }
        ids.sort_unstable();
        ids
    }

    pub fn ground_id(&self) -> usize {
        match self.ground {
            Ground::Conductor(id) => id,
            Ground::BottomPlane => BOTTOM_PLANE_ID,
        }
    }

    /// Uniform scaling of every length.
    pub fn scaled(&self, s: f64) -> Self {
        let mut p = self.clone();
        p.box_width *= s;
        for l in &mut p.layers {
            l.height *= s;
        }
        for c in &mut p.conductors {
            c.x_offset *= s;
            c.width *= s;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        if !(self.box_width > 0.0 && self.box_width.is_finite()) {
            return bad(format!("box width must be positive, got {}", self.box_width));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if !(l.height > 0.0 && l.height.is_finite()) {
                return bad(format!("layer {k}: height must be positive, got {}", l.height));
            }
            if !(l.epsilon_r > 0.0 && l.epsilon_r.is_finite()) {
                return bad(format!("layer {k}: epsilon_r must be positive, got {}", l.epsilon_r));
            }
        }
        if self.elements_per_side == 0 {
            return bad("elements_per_side must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        let tol = SNAP_TOL * self.box_width;
        for c in &self.conductors {
            if !ids.insert(c.id) {
                return bad(format!("duplicate conductor id {}", c.id));
            }
            if !(c.width > 0.0 && c.width.is_finite() && c.x_offset.is_finite()) {
                return bad(format!("conductor {}: width must be positive, got {}", c.id, c.width));
            }
            if c.x_offset < -tol || c.x_end() > self.box_width + tol {
                return bad(format!("conductor {} extends outside the box", c.id));
            }
            if c.interface > self.layers.len() {
                return bad(format!(
                    "conductor {} on interface {} but there are only {} interfaces",
                    c.id,
                    c.interface,
                    self.interface_count()
                ));
            }
            if self.ground == Ground::BottomPlane && c.interface == 0 {
                return bad(format!("conductor {} lies on the grounded bottom plane", c.id));
            }
            if self.ground == Ground::BottomPlane && c.id == BOTTOM_PLANE_ID {
                return bad(format!("conductor id {BOTTOM_PLANE_ID} is reserved for the bottom plane"));
            }
        }
        for (i, a) in self.conductors.iter().enumerate() {
            for b in &self.conductors[i + 1..] {
                if a.interface == b.interface && a.x_offset < b.x_end() - tol && b.x_offset < a.x_end() - tol {
                    return bad(format!("conductors {} and {} overlap", a.id, b.id));
                }
            }
        }
        if let Ground::Conductor(id) = self.ground {
            if !ids.contains(&id) {
                return bad(format!("ground id {id} is not a conductor"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn x_end(&self) -> f64 {
        self.x + self.w
    }

    pub fn y_end(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn lower_half(&self) -> Rect {
        let mid = (self.y + self.y_end()) * 0.5;
        Rect { h: mid - self.y, ..*self }
    }

    fn upper_half(&self) -> Rect {
        let mid = (self.y + self.y_end()) * 0.5;
        Rect {
            y: mid,
            h: self.y_end() - mid,
            ..*self
        }
    }

    fn west_half(&self) -> Rect {
        let mid = (self.x + self.x_end()) * 0.5;
        Rect { w: mid - self.x, ..*self }
    }

    fn east_half(&self) -> Rect {
        let mid = (self.x + self.x_end()) * 0.5;
        Rect {
            x: mid,
            w: self.x_end() - mid,
            ..*self
        }
    }

    fn overlaps_span(&self, x0: f64, x1: f64) -> bool {
        x0 < self.x_end() && self.x < x1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Root,
    N,
    S,
    W,
    E,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Root => "root",
            Label::N => "N",
            Label::S => "S",
            Label::W => "W",
            Label::E => "E",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub rect: Rect,
    pub label: Label,
    /// Empty for leaves, otherwise exactly two children partitioning `rect`.
    pub children: Vec<TreeNode>,
    /// Index into [`Decomposition::leaves`] for leaves.
    pub leaf: Option<usize>,
}

impl TreeNode {
    fn leaf(rect: Rect, label: Label) -> Self {
        Self {
            rect,
            label,
            children: Vec::new(),
            leaf: None,
        }
    }

    fn split(rect: Rect, label: Label, a: TreeNode, b: TreeNode) -> Self {
        Self {
            rect,
            label,
            children: vec![a, b],
            leaf: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(TreeNode::leaf_count).sum()
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(TreeNode::depth).max().unwrap_or(0)
    }

    /// Leaves in depth-first order, each with its label path.
    pub fn leaves_with_paths(&self) -> Vec<(&TreeNode, String)> {
        let mut out = Vec::new();
        self.collect(String::new(), &mut out);
        out
    }

    fn collect<'a>(&'a self, prefix: String, out: &mut Vec<(&'a TreeNode, String)>) {
        let path = if prefix.is_empty() {
            self.label.to_string()
        } else {
            format!("{prefix}/{}", self.label)
        };
        if self.is_leaf() {
            out.push((self, path));
        } else {
            for c in &self.children {
                c.collect(path.clone(), out);
            }
        }
    }

    fn assign_leaf_indices(&mut self, next: &mut usize) {
        if self.is_leaf() {
            self.leaf = Some(*next);
            *next += 1;
        } else {
            for c in &mut self.children {
                c.assign_leaf_indices(next);
            }
        }
    }

    /// Compact bracket form, e.g. `root[N][S[W][E]]`.
    pub fn pattern(&self) -> String {
        let mut s = self.label.to_string();
        for c in &self.children {
            s.push('[');
            s.push_str(&c.pattern());
            s.push(']');
        }
        s
    }
}

/// Footprint `[x0, x1]` of a conductor on a layer edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub x0: f64,
    pub x1: f64,
}

/// Recursive split of a layer rectangle. Toward a conductor-bearing bottom
/// edge the upper half-height strip is peeled off as a north leaf and the rest
/// is bisected west/east; each half containing a footprint is refined again
/// with one level less. A top edge is handled symmetrically, and a rectangle
/// with footprints on both edges is first cut at mid-height.
pub fn decompose_layer(rect: Rect, bottom: &[Footprint], top: &[Footprint], depth: usize) -> TreeNode {
    refine(rect, Label::Root, bottom, top, depth)
}

fn refine(rect: Rect, label: Label, bottom: &[Footprint], top: &[Footprint], depth: usize) -> TreeNode {
    let touching = |fps: &[Footprint]| -> Vec<Footprint> {
        fps.iter().copied().filter(|f| rect.overlaps_span(f.x0, f.x1)).collect()
    };
    let bottom = touching(bottom);
    let top = touching(top);
    if depth == 0 || (bottom.is_empty() && top.is_empty()) {
        return TreeNode::leaf(rect, label);
    }
    match (bottom.is_empty(), top.is_empty()) {
        (false, false) => {
            let s = refine(rect.lower_half(), Label::S, &bottom, &[], depth - 1);
            let n = refine(rect.upper_half(), Label::N, &[], &top, depth - 1);
            TreeNode::split(rect, label, n, s)
        }
        (false, true) => {
            let north = TreeNode::leaf(rect.upper_half(), Label::N);
            let south = rect.lower_half();
            let w = refine(south.west_half(), Label::W, &bottom, &[], depth - 1);
            let e = refine(south.east_half(), Label::E, &bottom, &[], depth - 1);
            TreeNode::split(rect, label, north, TreeNode::split(south, Label::S, w, e))
        }
        (true, false) => {
            let south = TreeNode::leaf(rect.lower_half(), Label::S);
            let north = rect.upper_half();
            let w = refine(north.west_half(), Label::W, &[], &top, depth - 1);
            let e = refine(north.east_half(), Label::E, &[], &top, depth - 1);
            TreeNode::split(rect, label, TreeNode::split(north, Label::N, w, e), south)
        }
        (true, true) => unreachable!(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cut {
    /// West/east bisection.
    Vertical,
    /// North/south bisection.
    Horizontal,
}

fn collect_rects(node: &TreeNode, out: &mut Vec<Rect>) {
    if node.is_leaf() {
        out.push(node.rect);
    } else {
        for c in &node.children {
            collect_rects(c, out);
        }
    }
}

fn apply_cut(node: &mut TreeNode, target: &Rect, cut: Cut) -> bool {
    if node.is_leaf() {
        if node.rect != *target {
            return false;
        }
        let r = node.rect;
        *node = match cut {
            Cut::Vertical => TreeNode::split(
                r,
                node.label,
                TreeNode::leaf(r.west_half(), Label::W),
                TreeNode::leaf(r.east_half(), Label::E),
            ),
            Cut::Horizontal => TreeNode::split(
                r,
                node.label,
                TreeNode::leaf(r.upper_half(), Label::N),
                TreeNode::leaf(r.lower_half(), Label::S),
            ),
        };
        return true;
    }
    node.children.iter_mut().any(|c| apply_cut(c, target, cut))
}

/// Default largest width/height (or height/width) ratio a leaf may keep.
pub const MAX_LEAF_ASPECT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecomposeOptions {
    /// Leaves more elongated than this are bisected; `None` keeps the
    /// strip-peel leaves as they are (2:1 neighbour balancing still applies).
    pub max_leaf_aspect: Option<f64>,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            max_leaf_aspect: Some(MAX_LEAF_ASPECT),
        }
    }
}

impl DecomposeOptions {
    pub fn unbounded() -> Self {
        Self { max_leaf_aspect: None }
    }
}

/// The cut `a` needs so that it is no more elongated than `max_aspect` and no
/// edge neighbour is more than twice as fine along their shared side.
fn needed_cut(a: &Rect, others: &[Rect], max_aspect: Option<f64>, tol: f64) -> Option<Cut> {
    if let Some(k) = max_aspect {
        if a.w > k * a.h + tol {
            return Some(Cut::Vertical);
        }
        if a.h > k * a.w + tol {
            return Some(Cut::Horizontal);
        }
    }
    let mut cut = None;
    for b in others {
        let x_overlap = a.x_end().min(b.x_end()) - a.x.max(b.x);
        let y_overlap = a.y_end().min(b.y_end()) - a.y.max(b.y);
        let stacked = (a.y_end() - b.y).abs() <= tol || (b.y_end() - a.y).abs() <= tol;
        let beside = (a.x_end() - b.x).abs() <= tol || (b.x_end() - a.x).abs() <= tol;
        if stacked && x_overlap > tol && 2.0 * b.w < a.w - tol {
            return Some(Cut::Vertical);
        }
        if beside && y_overlap > tol && 2.0 * b.h < a.h - tol {
            cut = Some(Cut::Horizontal);
        }
    }
    cut
}

/// Aspect and 2:1 balancing across all layers. A coarse leaf next to a deeply
/// refined neighbour would inherit every breakpoint of that neighbour, and its
/// strongly graded edge makes the leaf's `G` matrix ill-conditioned; a thin
/// sliver is poorly represented by a polynomial BCM of any order.
fn balance(trees: &mut [TreeNode], max_aspect: Option<f64>, tol: f64) {
    loop {
        let mut rects = Vec::new();
        for t in trees.iter() {
            collect_rects(t, &mut rects);
        }
        let cuts: Vec<(Rect, Cut)> = rects
            .iter()
            .filter_map(|a| needed_cut(a, &rects, max_aspect, tol).map(|c| (*a, c)))
            .collect();
        if cuts.is_empty() {
            return;
        }
        for (rect, cut) in cuts {
            let applied = trees.iter_mut().any(|t| apply_cut(t, &rect, cut));
            debug_assert!(applied);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeTag {
    Conductor(usize),
    OuterNeumann,
    /// Layer boundary between layer `below` and layer `above`.
    DielectricInterface { below: usize, above: usize },
    /// Shared edge between two leaves of the same layer.
    InternalInterface,
}

impl NodeTag {
    pub fn is_interface(&self) -> bool {
        matches!(self, NodeTag::DielectricInterface { .. } | NodeTag::InternalInterface)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subdomain {
    pub mesh: BoundaryMesh,
    pub epsilon_r: f64,
    pub layer: usize,
    pub rect: Rect,
    /// One tag per field node.
    pub node_tags: Vec<NodeTag>,
    /// Label path in the layer tree, e.g. `root/S/W/N`.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    /// One tree per layer, bottom-up.
    pub trees: Vec<TreeNode>,
    pub leaves: Vec<Subdomain>,
}

impl Decomposition {
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn node_count(&self) -> usize {
        self.leaves.iter().map(|l| l.node_tags.len()).sum()
    }

    pub fn conductor_node_count(&self) -> usize {
        self.leaves
            .iter()
            .flat_map(|l| &l.node_tags)
            .filter(|t| matches!(t, NodeTag::Conductor(_)))
            .count()
    }
}

/// Canonical representatives for coordinates that should coincide.
struct Snapper {
    quantum: f64,
    values: BTreeMap<i64, f64>,
}

impl Snapper {
    fn new(extent: f64) -> Self {
        Self {
            quantum: SNAP_TOL * extent,
            values: BTreeMap::new(),
        }
    }

    fn key(&self, v: f64) -> i64 {
        (v / self.quantum).round() as i64
    }

    /// Registers `v` (first value wins) and returns its key.
    fn snap(&mut self, v: f64) -> i64 {
        let k = self.key(v);
        // Neighbouring keys catch values straddling a rounding boundary.
        for probe in [k, k - 1, k + 1] {
            if self.values.contains_key(&probe) {
                return probe;
            }
        }
        self.values.insert(k, v);
        k
    }

    fn value(&self, k: i64) -> f64 {
        self.values[&k]
    }
}

fn snap_rect(r: &Rect, xs: &mut Snapper, ys: &mut Snapper) -> [i64; 4] {
    [xs.snap(r.x), ys.snap(r.y), xs.snap(r.x_end()), ys.snap(r.y_end())]
}

/// Decomposes every layer and meshes the leaves conformingly.
pub fn decompose(problem: &LayerProblem) -> Result<Decomposition> {
    decompose_with(problem, DecomposeOptions::default())
}

pub fn decompose_with(problem: &LayerProblem, opts: DecomposeOptions) -> Result<Decomposition> {
    problem.validate()?;
    if let Some(k) = opts.max_leaf_aspect {
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!("leaf aspect bound {k} must be a finite number >= 1")));
        }
    }
    let width = problem.box_width;
    let mut trees = Vec::with_capacity(problem.layers.len());
    for (k, layer) in problem.layers.iter().enumerate() {
        let rect = Rect {
            x: 0.0,
            y: problem.interface_y(k),
            w: width,
            h: layer.height,
        };
        let fps = |iface: usize| -> Vec<Footprint> {
            problem
                .conductors
                .iter()
                .filter(|c| c.interface == iface)
                .map(|c| Footprint {
                    x0: c.x_offset,
                    x1: c.x_end(),
                })
                .collect()
        };
        trees.push(decompose_layer(rect, &fps(k), &fps(k + 1), problem.mesh_level));
    }
    balance(
        &mut trees,
        opts.max_leaf_aspect,
        SNAP_TOL * problem.box_width.max(problem.total_height()),
    );
    let mut next = 0;
    for t in &mut trees {
        t.assign_leaf_indices(&mut next);
    }
    let leaves = mesh_leaves(problem, &trees)?;
    check_conformity(&leaves)?;
    Ok(Decomposition { trees, leaves })
}

struct LeafRef {
    layer: usize,
    rect: Rect,
    path: String,
    keys: [i64; 4],
}

fn mesh_leaves(problem: &LayerProblem, trees: &[TreeNode]) -> Result<Vec<Subdomain>> {
    let extent = problem.box_width.max(problem.total_height());
    let mut xs = Snapper::new(extent);
    let mut ys = Snapper::new(extent);
    let iface_keys: Vec<i64> = (0..problem.interface_count())
        .map(|k| ys.snap(problem.interface_y(k)))
        .collect();
    xs.snap(0.0);
    xs.snap(problem.box_width);

    let mut refs = Vec::new();
    for (layer, tree) in trees.iter().enumerate() {
        for (node, path) in tree.leaves_with_paths() {
            let keys = snap_rect(&node.rect, &mut xs, &mut ys);
            refs.push(LeafRef {
                layer,
                rect: node.rect,
                path: format!("layer {layer}/{path}"),
                keys,
            });
        }
    }

    // Breakpoints per horizontal line (x keys) and per vertical line (y keys).
    let mut h_breaks: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let mut v_breaks: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let n = problem.elements_per_side;
    for r in &refs {
        let [x0, y0, x1, y1] = r.keys;
        let (xa, xb) = (xs.value(x0), xs.value(x1));
        let (ya, yb) = (ys.value(y0), ys.value(y1));
        let x_parts: Vec<i64> = (0..=n).map(|i| xs.snap(subdivide(xa, xb, i, n))).collect();
        let y_parts: Vec<i64> = (0..=n).map(|i| ys.snap(subdivide(ya, yb, i, n))).collect();
        for line in [y0, y1] {
            h_breaks.entry(line).or_default().extend(&x_parts);
        }
        for line in [x0, x1] {
            v_breaks.entry(line).or_default().extend(&y_parts);
        }
    }
    for c in &problem.conductors {
        let line = ys.snap(problem.interface_y(c.interface));
        let (a, b) = (xs.snap(c.x_offset.max(0.0)), xs.snap(c.x_end().min(problem.box_width)));
        h_breaks.entry(line).or_default().extend([a, b]);
    }

    let mut leaves = Vec::with_capacity(refs.len());
    for r in &refs {
        let [x0, y0, x1, y1] = r.keys;
        let on = |set: &BTreeSet<i64>, lo: i64, hi: i64| -> Vec<i64> { set.range(lo..=hi).copied().collect() };
        let bottom = on(&h_breaks[&y0], x0, x1);
        let right = on(&v_breaks[&x1], y0, y1);
        let top = on(&h_breaks[&y1], x0, x1);
        let left = on(&v_breaks[&x0], y0, y1);

        let mut vertices = Vec::new();
        for &x in &bottom[..bottom.len() - 1] {
            vertices.push(Point2::new(xs.value(x), ys.value(y0)));
        }
        for &y in &right[..right.len() - 1] {
            vertices.push(Point2::new(xs.value(x1), ys.value(y)));
        }
        for &x in top[1..].iter().rev() {
            vertices.push(Point2::new(xs.value(x), ys.value(y1)));
        }
        for &y in left[1..].iter().rev() {
            vertices.push(Point2::new(xs.value(x0), ys.value(y)));
        }
        let mesh = BoundaryMesh::from_polygon(&vertices, 0)?;

        let y_bottom_iface = iface_keys.iter().position(|&k| k == y0);
        let y_top_iface = iface_keys.iter().position(|&k| k == y1);
        let x_left_wall = x0 == xs.snap(0.0);
        let x_right_wall = x1 == xs.snap(problem.box_width);

        let counts = [bottom.len() - 1, right.len() - 1, top.len() - 1, left.len() - 1];
        let mut tags = Vec::with_capacity(mesh.node_count());
        let points = mesh.node_points();
        let mut node = 0;
        for (side, &count) in counts.iter().enumerate() {
            let mut edge_conductors = BTreeSet::new();
            for _ in 0..count {
                let p = points[node];
                node += 1;
                let tag = match side {
                    0 => horizontal_tag(problem, y_bottom_iface, p.x, r.layer, true),
                    2 => horizontal_tag(problem, y_top_iface, p.x, r.layer, false),
                    1 if x_right_wall => NodeTag::OuterNeumann,
                    3 if x_left_wall => NodeTag::OuterNeumann,
                    _ => NodeTag::InternalInterface,
                };
                if let NodeTag::Conductor(id) = tag {
                    if id != BOTTOM_PLANE_ID || problem.ground != Ground::BottomPlane {
                        edge_conductors.insert(id);
                    }
                }
                tags.push(tag);
            }
            if edge_conductors.len() > 1 {
                return Err(Error::Refinement(format!(
                    "{}: one leaf edge touches conductors {:?}; increase mesh_level to separate them",
                    r.path, edge_conductors
                )));
            }
        }
        leaves.push(Subdomain {
            mesh,
            epsilon_r: problem.layers[r.layer].epsilon_r,
            layer: r.layer,
            rect: r.rect,
            node_tags: tags,
            path: r.path.clone(),
        });
    }
    Ok(leaves)
}

fn subdivide(a: f64, b: f64, i: usize, n: usize) -> f64 {
    if i == 0 {
        a
    } else if i == n {
        b
    } else {
        a + (b - a) * (i as f64 / n as f64)
    }
}

/// Tag of a node on a horizontal leaf edge. `iface` is the interface the edge
/// lies on, if any; `is_bottom` says whether it is the leaf's bottom edge.
fn horizontal_tag(problem: &LayerProblem, iface: Option<usize>, x: f64, layer: usize, is_bottom: bool) -> NodeTag {
    let Some(k) = iface else {
        return NodeTag::InternalInterface;
    };
    // Only the interfaces bounding this layer count.
    if (is_bottom && k != layer) || (!is_bottom && k != layer + 1) {
        return NodeTag::InternalInterface;
    }
    if let Some(c) = problem
        .conductors
        .iter()
        .find(|c| c.interface == k && c.x_offset <= x && x <= c.x_end())
    {
        return NodeTag::Conductor(c.id);
    }
    if k == 0 {
        return match problem.ground {
            Ground::BottomPlane => NodeTag::Conductor(BOTTOM_PLANE_ID),
            Ground::Conductor(_) => NodeTag::OuterNeumann,
        };
    }
    if k == problem.layers.len() {
        return NodeTag::OuterNeumann;
    }
    NodeTag::DielectricInterface { below: k - 1, above: k }
}

/// Position key for interface-node matching.
pub(crate) fn position_key(p: Point2, quantum: f64) -> (i64, i64) {
    ((p.x / quantum).round() as i64, (p.y / quantum).round() as i64)
}

fn check_conformity(leaves: &[Subdomain]) -> Result<()> {
    let extent = leaves
        .iter()
        .flat_map(|l| l.mesh.node_points())
        .fold(0.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()))
        .max(f64::MIN_POSITIVE);
    let quantum = SNAP_TOL * extent;
    let mut seen: BTreeMap<(i64, i64), Vec<(usize, NodeTag)>> = BTreeMap::new();
    for (li, leaf) in leaves.iter().enumerate() {
        for (p, tag) in leaf.mesh.node_points().into_iter().zip(&leaf.node_tags) {
            if tag.is_interface() {
                seen.entry(position_key(p, quantum)).or_default().push((li, *tag));
            }
        }
    }
    for (key, owners) in &seen {
        let ok = owners.len() == 2 && owners[0].0 != owners[1].0 && owners[0].1 == owners[1].1;
        if !ok {
            let (li, _) = owners[0];
            return Err(Error::Conformity(format!(
                "interface node near ({:.6}, {:.6}) in {} has {} matching node(s)",
                key.0 as f64 * quantum,
                key.1 as f64 * quantum,
                leaves[li].path,
                owners.len() - 1
            )));
        }
    }
    Ok(())
}

/// Histogram of leaf shapes under the given basis policy id.
pub fn shape_classes(leaves: &[Subdomain], basis_policy_id: u32) -> Result<BTreeMap<ShapeSignature, usize>> {
    let mut classes = BTreeMap::new();
    for l in leaves {
        *classes.entry(signature(&l.mesh, basis_policy_id)?).or_insert(0) += 1;
    }
    Ok(classes)
}

/// `|Σ leaf areas − layer area| / layer area`, worst layer.
pub fn tiling_error(problem: &LayerProblem, decomposition: &Decomposition) -> f64 {
    problem
        .layers
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            let area = layer.height * problem.box_width;
            let sum: f64 = decomposition
                .leaves
                .iter()
                .filter(|l| l.layer == k)
                .map(|l| l.rect.area())
                .sum();
            (sum - area).abs() / area
        })
        .fold(0.0, f64::max)
}
