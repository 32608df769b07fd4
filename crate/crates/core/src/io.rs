//! Problem files, mesh files and matrix export.
//!
//! # Problem file grammar
//!
//! ```text
//! file     = { line }
//! line     = [ section | pair ] [ comment ] "\n"
//! section  = "[" ( "options" | "layer" | "conductor" ) "]"
//! pair     = key "=" value
//! comment  = "#" { any character }
//! ```
//!
//! Blank space around tokens is ignored. Exactly one `[options]` section is
//! required; `[layer]` sections are listed bottom-up; each `[conductor]`
//! section describes one zero-thickness strip. Keys:
//!
//! | section       | key                 | value                               | default |
//! |---------------|---------------------|-------------------------------------|---------|
//! | `[options]`   | `box_width`         | mm, > 0                             | —       |
//! |               | `ground`            | `bottom` or a conductor number      | —       |
//! |               | `mesh_level`        | integer ≥ 0                         | 2       |
//! |               | `elements_per_side` | integer ≥ 1                         | 2       |
//! | `[layer]`     | `height`            | mm, > 0                             | —       |
//! |               | `epsilon_r`         | > 0                                 | —       |
//! | `[conductor]` | `interface`         | 0 = bottom wall … layer count = lid | —       |
//! |               | `x_offset`          | mm from the left wall               | —       |
//! |               | `width`             | mm, > 0                             | —       |
//!
//! Conductors are numbered 1, 2, … by interface (lowest first) and then from
//! left to right, whatever their order in the file; `ground` refers to that
//! numbering. The bottom plane, when grounded, has number 0.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decomposition::{Conductor, Ground, Layer, LayerProblem};
use crate::error::{Error, Result};
use crate::geometry::BoundaryMesh;
use crate::linalg::DenseMatrix;
use crate::merge::GeneralizedCapacitanceMatrix;

pub const DEFAULT_MESH_LEVEL: usize = 2;
pub const DEFAULT_ELEMENTS_PER_SIDE: usize = 2;

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Options,
    Layer,
    Conductor,
}

struct Entry<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
    key_col: usize,
    value_col: usize,
}

struct Block<'a> {
    kind: Section,
    line: usize,
    entries: Vec<Entry<'a>>,
}

impl<'a> Block<'a> {
    fn take(&mut self, key: &str) -> Option<Entry<'a>> {
        let i = self.entries.iter().position(|e| e.key == key)?;
        Some(self.entries.remove(i))
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<(T, usize)> {
        let name = section_name(self.kind);
        let e = self
            .take(key)
            .ok_or_else(|| parse_err(self.line, 1, format!("[{name}] is missing `{key}`")))?;
        e.value
            .parse()
            .map(|v| (v, e.line))
            .map_err(|_| parse_err(e.line, e.value_col, format!("invalid value `{}` for `{key}`", e.value)))
    }

    fn optional<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.entries.iter().any(|e| e.key == key) {
            true => self.required(key).map(|(v, _)| v),
            false => Ok(default),
        }
    }

    fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !known.contains(&e.key)) {
            Some(e) => Err(parse_err(
                e.line,
                e.key_col,
                format!("unknown key `{}` in [{}]", e.key, section_name(self.kind)),
            )),
            None => Ok(()),
        }
    }
}

const OPTION_KEYS: &[&str] = &["box_width", "ground", "mesh_level", "elements_per_side"];
const LAYER_KEYS: &[&str] = &["height", "epsilon_r"];
const CONDUCTOR_KEYS: &[&str] = &["interface", "x_offset", "width"];

fn section_name(s: Section) -> &'static str {
    match s {
        Section::Options => "options",
        Section::Layer => "layer",
        Section::Conductor => "conductor",
    }
}

fn positive(v: f64, line: usize, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(line, 1, format!("{what} must be positive, got {v}")))
    }
}

fn tokenize(text: &str) -> Result<Vec<Block<'_>>> {
    let mut blocks: Vec<Block> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, indent + trimmed.len(), "expected `]`"))?
                .trim();
            let kind = match name {
                "options" => Section::Options,
                "layer" => Section::Layer,
                "conductor" => Section::Conductor,
                _ => return Err(parse_err(line, indent + 2, format!("unknown section `[{name}]`"))),
            };
            blocks.push(Block {
                kind,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let eq = content
            .find('=')
            .ok_or_else(|| parse_err(line, indent + 1, "expected `key = value` or a `[section]` header"))?;
        let key = content[..eq].trim();
        let value_part = &content[eq + 1..];
        let value = value_part.trim();
        let value_col = eq + 2 + (value_part.len() - value_part.trim_start().len());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(parse_err(line, indent + 1, format!("invalid key `{key}`")));
        }
        if value.is_empty() {
            return Err(parse_err(line, value_col, format!("missing value for `{key}`")));
        }
        let block = blocks
            .last_mut()
            .ok_or_else(|| parse_err(line, indent + 1, "key outside of any section"))?;
        if block.entries.iter().any(|e| e.key == key) {
            return Err(parse_err(line, indent + 1, format!("duplicate key `{key}`")));
        }
        block.entries.push(Entry {
            key,
            value,
            line,
            key_col: indent + 1,
            value_col,
        });
    }
    Ok(blocks)
}

/// Parses a problem description; see the module documentation for the grammar.
pub fn parse_problem_str(text: &str) -> Result<LayerProblem> {
    let blocks = tokenize(text)?;
    let mut options = None;
    let mut layers = Vec::new();
    // (conductor, defining line)
    let mut strips: Vec<(Conductor, usize)> = Vec::new();
    for mut b in blocks {
        match b.kind {
            Section::Options => {
                if options.is_some() {
                    return Err(parse_err(b.line, 1, "duplicate [options] section"));
                }
                b.check_keys(OPTION_KEYS)?;
                let (box_width, l) = b.required::<f64>("box_width")?;
                let box_width = positive(box_width, l, "box_width")?;
                let ground = b
                    .take("ground")
                    .ok_or_else(|| parse_err(b.line, 1, "[options] is missing `ground`"))?;
                let ground_value = if ground.value == "bottom" {
                    Ground::BottomPlane
                } else {
                    Ground::Conductor(ground.value.parse().map_err(|_| {
                        parse_err(
                            ground.line,
                            ground.value_col,
                            format!("ground must be `bottom` or a conductor number, got `{}`", ground.value),
                        )
                    })?)
                };
                let mesh_level = b.optional("mesh_level", DEFAULT_MESH_LEVEL)?;
                let elements_per_side = b.optional("elements_per_side", DEFAULT_ELEMENTS_PER_SIDE)?;
                if elements_per_side == 0 {
                    return Err(parse_err(b.line, 1, "elements_per_side must be at least 1"));
                }
                let line = b.line;
                options = Some((box_width, (ground_value, ground.line, ground.value_col), mesh_level, elements_per_side, line));
            }
            Section::Layer => {
                b.check_keys(LAYER_KEYS)?;
                let (height, l) = b.required::<f64>("height")?;
                let height = positive(height, l, "height")?;
                let (epsilon_r, l) = b.required::<f64>("epsilon_r")?;
                let epsilon_r = positive(epsilon_r, l, "epsilon_r")?;
                layers.push(Layer { height, epsilon_r });
            }
            Section::Conductor => {
                b.check_keys(CONDUCTOR_KEYS)?;
                let (interface, _) = b.required::<usize>("interface")?;
                let (x_offset, l) = b.required::<f64>("x_offset")?;
                if !x_offset.is_finite() {
                    return Err(parse_err(l, 1, "x_offset must be finite"));
                }
                let (width, l) = b.required::<f64>("width")?;
                let width = positive(width, l, "width")?;
                let line = b.line;
                strips.push((
                    Conductor {
                        id: 0,
                        interface,
                        x_offset,
                        width,
                    },
                    line,
                ));
            }
        }
    }
    let (box_width, (ground, ground_line, ground_col), mesh_level, elements_per_side, options_line) =
        options.ok_or_else(|| parse_err(1, 1, "missing [options] section"))?;
    if layers.is_empty() {
        return Err(parse_err(options_line, 1, "at least one [layer] section is required"));
    }

    strips.sort_by(|(a, _), (b, _)| a.interface.cmp(&b.interface).then(a.x_offset.total_cmp(&b.x_offset)));
    for (k, (c, _)) in strips.iter_mut().enumerate() {
        c.id = k + 1;
    }
    for (i, (a, la)) in strips.iter().enumerate() {
        if a.interface > layers.len() {
            return Err(parse_err(
                *la,
                1,
                format!("conductor {} on interface {} but there are only {} interfaces", a.id, a.interface, layers.len() + 1),
            ));
        }
        if a.x_offset < 0.0 || a.x_end() > box_width {
            return Err(parse_err(*la, 1, format!("conductor {} extends outside the box", a.id)));
        }
        if let Some((b, lb)) = strips[i + 1..]
            .iter()
            .find(|(b, _)| b.interface == a.interface && b.x_offset < a.x_end())
        {
            return Err(parse_err(
                *la.max(lb),
                1,
                format!(
                    "conductors {} (line {la}) and {} (line {lb}) overlap on interface {}",
                    a.id, b.id, a.interface
                ),
            ));
        }
    }
    if let Ground::Conductor(id) = ground {
        if !strips.iter().any(|(c, _)| c.id == id) {
            return Err(parse_err(ground_line, ground_col, format!("ground {id} is not a conductor")));
        }
    }
    let problem = LayerProblem {
        layers,
        box_width,
        conductors: strips.into_iter().map(|(c, _)| c).collect(),
        ground,
        mesh_level,
        elements_per_side,
    };
    problem
        .validate()
        .map_err(|e| parse_err(options_line, 1, e.to_string()))?;
    Ok(problem)
}

pub fn parse_problem(path: &Path) -> Result<LayerProblem> {
    parse_problem_str(&std::fs::read_to_string(path)?)
}

/// Writes `problem` in the problem-file format. Conductors are emitted in
/// their canonical order, so parsing the output reproduces the problem.
pub fn write_problem(problem: &LayerProblem) -> String {
    let mut s = String::new();
    let mut conductors = problem.conductors.clone();
    conductors.sort_by(|a, b| a.interface.cmp(&b.interface).then(a.x_offset.total_cmp(&b.x_offset)));
    let ground = match problem.ground {
        Ground::BottomPlane => "bottom".to_string(),
        Ground::Conductor(id) => {
            let k = conductors.iter().position(|c| c.id == id).map_or(id, |k| k + 1);
            k.to_string()
        }
    };
    writeln!(s, "[options]").unwrap();
    writeln!(s, "box_width = {:?}", problem.box_width).unwrap();
    writeln!(s, "ground = {ground}").unwrap();
    writeln!(s, "mesh_level = {}", problem.mesh_level).unwrap();
    writeln!(s, "elements_per_side = {}", problem.elements_per_side).unwrap();
    for l in &problem.layers {
        writeln!(s, "\n[layer]\nheight = {:?}\nepsilon_r = {:?}", l.height, l.epsilon_r).unwrap();
    }
    for c in &conductors {
        writeln!(
            s,
            "\n[conductor]\ninterface = {}\nx_offset = {:?}\nwidth = {:?}",
            c.interface, c.x_offset, c.width
        )
        .unwrap();
    }
    s
}

pub fn save_problem(problem: &LayerProblem, path: &Path) -> Result<()> {
    std::fs::write(path, write_problem(problem))?;
    Ok(())
}

/// A boundary mesh as JSON: `{"elements": [{"geometry_nodes": [{"x":..,"y":..}, ..], "field_degree": 0}, ..]}`,
/// elements counter-clockwise.
pub fn load_mesh(path: &Path) -> Result<BoundaryMesh> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.column(), e.to_string()))
}

pub fn save_mesh(mesh: &BoundaryMesh, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(mesh).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MatrixFormat {
    #[default]
    Csv,
    Json,
}

impl MatrixFormat {
    /// `.json` → JSON, anything else → CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => MatrixFormat::Json,
            _ => MatrixFormat::Csv,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MatrixFormat::Csv),
            "json" => Ok(MatrixFormat::Json),
            _ => Err(Error::InvalidArgument(format!("unknown matrix format `{s}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonMatrix {
    dims: (usize, usize),
    entries: Vec<f64>,
}

/// CSV: one row per line, 17 significant digits. JSON: `{"dims": [r, c], "entries": [row-major]}`.
pub fn format_matrix(m: &DenseMatrix, format: MatrixFormat) -> String {
    match format {
        MatrixFormat::Csv => {
            let mut s = String::new();
            for r in m.row_iter() {
                let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            s
        }
        MatrixFormat::Json => {
            let j = JsonMatrix {
                dims: (m.nrows(), m.ncols()),
                entries: m.transpose().iter().copied().collect(),
            };
            serde_json::to_string(&j).expect("finite matrices serialize") + "\n"
        }
    }
}

pub fn parse_matrix(text: &str, format: MatrixFormat) -> Result<DenseMatrix> {
    match format {
        MatrixFormat::Csv => {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut row = Vec::new();
                let mut col = 1;
                for cell in line.split(',') {
                    let v = cell
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| parse_err(i + 1, col, format!("invalid number `{}`", cell.trim())))?;
                    row.push(v);
                    col += cell.len() + 1;
                }
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(parse_err(
                            i + 1,
                            1,
                            format!("row has {} entries, expected {}", row.len(), first.len()),
                        ));
                    }
                }
                rows.push(row);
            }
            let ncols = rows.first().map_or(0, Vec::len);
            Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
        }
        MatrixFormat::Json => {
            let j: JsonMatrix = serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.column(), e.to_string()))?;
            if j.entries.len() != j.dims.0 * j.dims.1 {
                return Err(parse_err(
                    1,
                    1,
                    format!("dims {:?} need {} entries, found {}", j.dims, j.dims.0 * j.dims.1, j.entries.len()),
                ));
            }
            Ok(DMatrix::from_row_iterator(j.dims.0, j.dims.1, j.entries))
        }
    }
}

pub fn export_matrix(m: &DenseMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    std::fs::write(path, format_matrix(m, format))?;
    Ok(())
}

/// Reads a matrix, choosing the format from the extension.
pub fn import_matrix(path: &Path) -> Result<DenseMatrix> {
    parse_matrix(&std::fs::read_to_string(path)?, MatrixFormat::from_path(path))
}

/// Reference C_G in pF/m (CSV or JSON by extension), rows and columns in the
/// problem's signal-conductor order.
pub fn load_reference(path: &Path, problem: &LayerProblem) -> Result<GeneralizedCapacitanceMatrix> {
    let m = import_matrix(path)?;
    let ground_id = problem.ground_id();
    let conductor_ids: Vec<usize> = problem.conductor_ids().into_iter().filter(|&i| i != ground_id).collect();
    let n = conductor_ids.len();
    if m.shape() != (n, n) {
        return Err(Error::InvalidComparison(format!(
            "reference is {}x{}, problem has {n} signal conductors",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(GeneralizedCapacitanceMatrix {
        conductor_ids,
        ground_id,
        matrix: m * 1e-12,
    })
}
