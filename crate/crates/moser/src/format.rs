//! On-disk formats.
//!
//! A density is a JSON manifest `{dim, side, res, topology, data}` next to a
//! raw file of little-endian `f64` in row-major order (last axis fastest).
//! Vector fields use the same manifest with a `components` count; the
//! components are stored one after another.

use std::fs;
use std::path::{Path, PathBuf};

use moser_core::cube::{CutoffFamily, Diagnostics, TriangularSolution};
use moser_core::field::SuffixField;
use moser_core::measure::{AtomicMeasure, Domain};
use moser_core::smoothing::SampledHomeo;
use moser_core::{Grid, GridDensity, Topology};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldManifest {
    pub dim: usize,
    pub side: f64,
    pub res: usize,
    pub topology: Topology,
    /// Binary file, relative to the manifest.
    pub data: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub components: usize,
}

fn one() -> usize {
    1
}

fn is_one(c: &usize) -> bool {
    *c == 1
}

impl FieldManifest {
    pub fn grid(&self, path: &Path) -> CliResult<Grid> {
        Grid::new(self.dim, self.side, self.res, self.topology).map_err(|e| CliError::format(path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

pub fn write_f64s(path: &Path, values: &[f64]) -> CliResult<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_f64s(path: &Path, expected: usize) -> CliResult<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(CliError::format(path, format!("expected {} bytes, found {}", expected * 8, bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight"))).collect())
}

fn data_path(manifest: &Path) -> (PathBuf, String) {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "field".into());
    let name = format!("{stem}.bin");
    (manifest.with_file_name(&name), name)
}

/// Writes `components` stacked fields on `grid`; `values` holds them back to back.
pub fn write_field(path: &Path, grid: &Grid, components: usize, values: &[f64]) -> CliResult<()> {
    assert_eq!(values.len(), grid.len() * components);
    let (bin, name) = data_path(path);
    write_f64s(&bin, values)?;
    let m = FieldManifest { dim: grid.dim(), side: grid.side(), res: grid.res(), topology: grid.topology(), data: name, components };
    write_json(path, &m)
}

pub fn read_field(path: &Path) -> CliResult<(Grid, usize, Vec<f64>)> {
    let m: FieldManifest = read_json(path)?;
    let grid = m.grid(path)?;
    if m.components == 0 {
        return Err(CliError::format(path, "components must be positive"));
    }
    let bin = path.parent().unwrap_or(Path::new(".")).join(&m.data);
    let values = read_f64s(&bin, grid.len() * m.components)?;
    Ok((grid, m.components, values))
}

pub fn write_density(path: &Path, d: &GridDensity) -> CliResult<()> {
    write_field(path, d.grid(), 1, d.values())
}

pub fn read_density(path: &Path) -> CliResult<GridDensity> {
    let (grid, components, values) = read_field(path)?;
    if components != 1 {
        return Err(CliError::format(path, "a density has one component"));
    }
    Ok(GridDensity::new(grid, values)?)
}

/// Interleaved per-node vectors (`n` values per node) to stacked components.
pub fn write_vector_field(path: &Path, grid: &Grid, interleaved: &[f64]) -> CliResult<()> {
    let n = grid.dim();
    let len = grid.len();
    let mut stacked = vec![0.0; len * n];
    for i in 0..len {
        for d in 0..n {
            stacked[d * len + i] = interleaved[i * n + d];
        }
    }
    write_field(path, grid, n, &stacked)
}

/// A sampled homeomorphism of `T²`: the displacement `h(x) − x` as two components.
pub fn write_homeo(path: &Path, h: &SampledHomeo) -> CliResult<()> {
    let mut v = h.displacement(0).to_vec();
    v.extend_from_slice(h.displacement(1));
    write_field(path, h.grid(), 2, &v)
}

pub fn read_homeo(path: &Path, claimed_area_preserving: bool, area_tol: Option<f64>) -> CliResult<SampledHomeo> {
    let (grid, components, mut values) = read_field(path)?;
    if components != 2 {
        return Err(CliError::format(path, "a homeomorphism file has two components"));
    }
    let tol = area_tol.unwrap_or(8.0 / grid.res() as f64);
    let dy = values.split_off(grid.len());
    Ok(SampledHomeo::new(grid, values, dy, claimed_area_preserving, tol)?)
}

/// CSV with header `x1,...,xn,weight`.
pub fn write_measure_csv(path: &Path, m: &AtomicMeasure) -> CliResult<()> {
    let n = m.dim();
    let mut out = (1..=n).map(|d| format!("x{d}")).collect::<Vec<_>>().join(",");
    out.push_str(",weight\n");
    for i in 0..m.len() {
        for x in m.point(i) {
            out.push_str(&format!("{x:e},"));
        }
        out.push_str(&format!("{:e}\n", m.weights()[i]));
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_measure_csv(path: &Path, domain: Domain) -> CliResult<AtomicMeasure> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| CliError::format(path, "empty file"))?.split(',').map(str::trim).collect();
    let n = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=n).map(|d| format!("x{d}")).chain(["weight".to_string()]).collect();
    if n == 0 || header != expected {
        return Err(CliError::format(path, "header must be x1,...,xn,weight"));
    }
    let (mut points, mut weights) = (Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::format(path, format!("row {}: {e}", k + 1)))?;
        if row.len() != n + 1 {
            return Err(CliError::format(path, format!("row {} has {} fields", k + 1, row.len())));
        }
        points.extend_from_slice(&row[..n]);
        weights.push(row[n]);
    }
    Ok(AtomicMeasure::new(n, domain, points, weights)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub axis: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionManifest {
    pub n: usize,
    #[serde(rename = "K")]
    pub side: f64,
    pub res: usize,
    pub eta: f64,
    pub cutoffs: CutoffFamily,
    pub diagnostics: Diagnostics,
    pub layers: Vec<LayerEntry>,
}

/// Manifest plus one field per layer; layer `k` lives on the last `n − k` axes.
pub fn write_solution(dir: &Path, sol: &TriangularSolution) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let grid = sol.grid();
    let mut layers = Vec::new();
    for (k, layer) in sol.layers().iter().enumerate() {
        let file = format!("layer_{k}.json");
        let lg = Grid::cube(layer.dims(), layer.side(), layer.res())?;
        write_field(&dir.join(&file), &lg, 1, layer.data())?;
        layers.push(LayerEntry { axis: k, file });
    }
    let m = SolutionManifest {
        n: grid.dim(),
        side: grid.side(),
        res: grid.res(),
        eta: sol.cutoffs().eta(),
        cutoffs: sol.cutoffs().clone(),
        diagnostics: sol.diagnostics().clone(),
        layers,
    };
    write_json(&dir.join("manifest.json"), &m)
}

pub fn read_solution(dir: &Path) -> CliResult<TriangularSolution> {
    let path = dir.join("manifest.json");
    let m: SolutionManifest = read_json(&path)?;
    let grid = Grid::cube(m.n, m.side, m.res).map_err(|e| CliError::format(&path, e))?;
    let mut layers = Vec::with_capacity(m.layers.len());
    for entry in &m.layers {
        let lp = dir.join(&entry.file);
        let (lg, components, data) = read_field(&lp)?;
        if components != 1 || lg.dim() + entry.axis != m.n || lg.res() != m.res {
            return Err(CliError::format(&lp, "layer shape does not match the manifest"));
        }
        layers.push(SuffixField::from_data(m.n, entry.axis, m.res, m.side, data));
    }
    Ok(TriangularSolution::from_layers(grid, m.cutoffs, layers, m.diagnostics)?)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> CliResult<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}
