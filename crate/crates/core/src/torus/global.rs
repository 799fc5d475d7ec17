use alloc::boxed::Box;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::atlas::TorusAtlas;
use super::decompose::{check_torus, decompose_pair, Decomposition};
use super::map::{dbar_between, pullback_defect, ChartMap, TorusMap};
use crate::cube::{dm_solve, estimate_dm, CutoffFamily, DbarReport, DmOptions};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridDensity};
use crate::instances::bump;

#[derive(Debug, Clone, PartialEq)]
pub struct TorusOptions {
    /// Chart lattice resolution; `None` uses half the torus spacing.
    pub chart_res: Option<usize>,
    pub eps0: f64,
    pub dm: DmOptions,
}

impl Default for TorusOptions {
    fn default() -> Self {
        TorusOptions { chart_res: None, eps0: 0.3, dm: DmOptions::fast() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub chart: usize,
    pub trivial: bool,
    pub chart_res: usize,
    /// Cube residual `|g(ψ) det∇ψ − f|∞` on the chart lattice.
    pub residual_sup: f64,
    pub u_sup: f64,
    /// Coefficient of the interior bump that matches the chart masses.
    pub mass_fix: f64,
    /// `|φ_j* p_{j−1} − p_j|∞` on the torus nodes.
    pub defect: f64,
    /// `d̄(φ_j, id)` over chart nodes and every tracked trajectory point.
    pub dbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalReport {
    pub lambda: f64,
    /// `|σ(ψ₂) det∇ψ₂ − λτ|∞` on the torus nodes.
    pub pullback_residual: f64,
    pub dbar: DbarReport,
    /// `Σ_j d̄(φ_j, id)`.
    pub dbar_sum: f64,
    pub edge_defect_sum: f64,
    pub c2: f64,
    pub c3: f64,
    pub min_intermediate: f64,
    pub edges: Vec<EdgeReport>,
}

fn chart_res_for(grid: &Grid, side: f64, opts: &TorusOptions) -> usize {
    let r = opts.chart_res.unwrap_or_else(|| (libm::ceil(2.0 * grid.res() as f64 * side) as usize + 1).max(65));
    r | 1
}

fn solve_edge(
    j: usize,
    atlas: &TorusAtlas,
    grid: &Grid,
    below: &[f64],
    piece: &[f64],
    fam: &CutoffFamily,
    res: usize,
    opts: &TorusOptions,
) -> Result<(ChartMap, f64)> {
    let l = atlas.side();
    let chart = Grid::cube(atlas.n(), l, res)?;
    let origin = atlas.origin(j).to_vec();
    let mut gv = Vec::with_capacity(chart.len());
    let mut dv = Vec::with_capacity(chart.len());
    let mut bv = Vec::with_capacity(chart.len());
    for i in 0..chart.len() {
        let xi = chart.point(i);
        let x: Vec<f64> = xi.iter().zip(&origin).map(|(s, o)| s + o).collect();
        gv.push(grid.interpolate_cubic(below, &x)?);
        dv.push(grid.interpolate_cubic(piece, &x)?);
        bv.push(xi.iter().map(|s| bump(s / l)).product::<f64>());
    }
    let c = -chart.integrate(&dv) / chart.integrate(&bv);
    let fv: Vec<f64> = (0..chart.len()).map(|i| gv[i] + dv[i] + c * bv[i]).collect();
    let g = GridDensity::new(chart, gv)?;
    let f = GridDensity::new(chart, fv).map_err(|_| Error::Positivity { index: j, min: 0.0 })?;
    let sol = dm_solve(&f, &g, fam, &opts.dm)?;
    Ok((ChartMap { chart: j, origin, sol }, c))
}

/// `ψ₂` with `ψ₂* σ = λ τ`, `λ = ∫σ / ∫τ`, built chart by chart.
pub fn global_solve(sigma: &GridDensity, tau: &GridDensity, atlas: &TorusAtlas, opts: &TorusOptions) -> Result<(TorusMap, GlobalReport)> {
    let grid = *sigma.grid();
    check_torus(&grid, atlas)?;
    if tau.grid() != &grid {
        return Err(Error::ShapeMismatch("sigma and tau grids differ".into()));
    }
    let lambda = sigma.mass() / tau.mass();
    let sigma_hat = GridDensity::new(grid, sigma.values().iter().map(|v| v / lambda).collect())?;
    let dec = decompose_pair(&sigma_hat, tau, atlas)?;
    global_from_decomposition(sigma, tau, lambda, &sigma_hat, &dec, atlas, opts)
}

fn global_from_decomposition(
    sigma: &GridDensity,
    tau: &GridDensity,
    lambda: f64,
    sigma_hat: &GridDensity,
    dec: &Decomposition,
    atlas: &TorusAtlas,
    opts: &TorusOptions,
) -> Result<(TorusMap, GlobalReport)> {
    let grid = *sigma.grid();
    let res = chart_res_for(&grid, atlas.side(), opts);
    let nontrivial = (0..dec.chart_count()).any(|j| !dec.is_trivial(j));
    let fam = if nontrivial { Some(CutoffFamily::build(atlas.n(), atlas.side(), atlas.eta(), opts.eps0)?) } else { None };
    let mut edges = Vec::new();
    let mut reports = Vec::new();
    let mut slot = Vec::new();
    for j in 0..dec.chart_count() {
        let below = if j == 0 { sigma_hat.values() } else { &dec.intermediates[j - 1][..] };
        if dec.is_trivial(j) {
            reports.push(EdgeReport {
                chart: j,
                trivial: true,
                chart_res: 0,
                residual_sup: 0.0,
                u_sup: 0.0,
                mass_fix: 0.0,
                defect: 0.0,
                dbar: 0.0,
            });
            slot.push(None);
            continue;
        }
        let fam = fam.as_ref().expect("built for nontrivial pieces");
        let (edge, c) = solve_edge(j, atlas, &grid, below, &dec.pieces[j], fam, res, opts)
            .map_err(|e| Error::EdgeSolve { edge: j, source: Box::new(e) })?;
        let single = TorusMap::from_edges(grid, alloc::vec![edge.clone()]);
        let below_density = GridDensity::new(grid, below.to_vec())?;
        let defect = pullback_defect(&grid, &single.displacements(), &below_density, &dec.intermediates[j])?;
        reports.push(EdgeReport {
            chart: j,
            trivial: false,
            chart_res: res,
            residual_sup: edge.sol.diagnostics().residual_sup,
            u_sup: edge.sol.u_sup(),
            mass_fix: c,
            defect,
            dbar: edge.sol.dbar_identity().dbar,
        });
        slot.push(Some(edges.len()));
        edges.push(edge);
    }
    let map = TorusMap::from_edges(grid, edges);
    let (dbar, steps) = map.dbar_tracked();
    for (j, s) in slot.iter().enumerate() {
        if let Some(k) = s {
            reports[j].dbar = reports[j].dbar.max(steps[*k]);
        }
    }
    let target: Vec<f64> = tau.values().iter().map(|t| lambda * t).collect();
    let pullback_residual =
        if map.edges().is_empty() { 0.0 } else { pullback_defect(&grid, &map.displacements(), sigma, &target)? };
    let min_intermediate =
        dec.intermediates.iter().flat_map(|v| v.iter().copied()).fold(sigma_hat.min(), f64::min);
    let report = GlobalReport {
        lambda,
        pullback_residual,
        dbar,
        dbar_sum: reports.iter().map(|r| r.dbar).sum(),
        edge_defect_sum: reports.iter().map(|r| r.defect).sum(),
        c2: dec.c2,
        c3: dec.c3,
        min_intermediate,
        edges: reports,
    };
    Ok((map, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricOptions {
    /// Largest admissible `Lid₁` between consecutive members.
    pub step_bound: f64,
    /// Required `d̄(ψ_{s_i}, ψ_{s_{i+1}}) ≤ modulus · Lid₁ step`.
    pub modulus: f64,
    pub metric_atoms: usize,
    pub max_refinements: usize,
}

impl Default for ParametricOptions {
    fn default() -> Self {
        ParametricOptions { step_bound: 0.05, modulus: f64::INFINITY, metric_atoms: 500, max_refinements: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricReport {
    pub params: Vec<f64>,
    pub lid_steps: Vec<f64>,
    pub dbar_steps: Vec<f64>,
    /// `max_i d̄ step / Lid₁ step` over steps with a positive metric step.
    pub max_ratio: f64,
    pub continuity_ok: bool,
    pub refinements: usize,
    pub members: Vec<GlobalReport>,
}

/// Solves `ψ_{2,s}* σ_s = λ_s τ` along a partition of the parameter, refining
/// intervals whose metric step exceeds the bound.
pub fn parametric_solve(
    tau: &GridDensity,
    family: &dyn Fn(f64) -> Result<GridDensity>,
    partition: &[f64],
    atlas: &TorusAtlas,
    opts: &TorusOptions,
    popts: &ParametricOptions,
) -> Result<(Vec<TorusMap>, ParametricReport)> {
    parametric_solve_pairs(&|s| Ok((family(s)?, tau.clone())), partition, atlas, opts, popts)
}

/// As [`parametric_solve`] with both densities depending on `s`; the metric
/// step is `Lid₁(σ_a, σ_b) + Lid₁(τ_a, τ_b)`.
pub fn parametric_solve_pairs(
    family: &dyn Fn(f64) -> Result<(GridDensity, GridDensity)>,
    partition: &[f64],
    atlas: &TorusAtlas,
    opts: &TorusOptions,
    popts: &ParametricOptions,
) -> Result<(Vec<TorusMap>, ParametricReport)> {
    if partition.len() < 2 || partition.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("partition must be strictly increasing with at least two points".into()));
    }
    let mut params = partition.to_vec();
    let mut members: Vec<(GridDensity, GridDensity)> = params.iter().map(|&s| family(s)).collect::<Result<_>>()?;
    let step = |a: &(GridDensity, GridDensity), b: &(GridDensity, GridDensity)| -> Result<f64> {
        let ds = if a.0 == b.0 { 0.0 } else { estimate_dm(&a.0, &b.0, popts.metric_atoms)? };
        let dt = if a.1 == b.1 { 0.0 } else { estimate_dm(&a.1, &b.1, popts.metric_atoms)? };
        Ok(ds + dt)
    };
    let mut refinements = 0;
    let lid_steps = loop {
        let steps: Vec<f64> = members.windows(2).map(|w| step(&w[0], &w[1])).collect::<Result<_>>()?;
        let bad: Vec<usize> = (0..steps.len()).filter(|&i| steps[i] > popts.step_bound).collect();
        if bad.is_empty() {
            break steps;
        }
        if refinements == popts.max_refinements {
            return Err(Error::Refinement { from: params[bad[0]], to: params[bad[0] + 1] });
        }
        for &i in bad.iter().rev() {
            let mid = 0.5 * (params[i] + params[i + 1]);
            params.insert(i + 1, mid);
            members.insert(i + 1, family(mid)?);
        }
        refinements += 1;
    };
    let mut maps = Vec::with_capacity(params.len());
    let mut reports = Vec::with_capacity(params.len());
    for (sigma, tau) in &members {
        let (map, rep) = global_solve(sigma, tau, atlas, opts)?;
        maps.push(map);
        reports.push(rep);
    }
    let dbar_steps: Vec<f64> = maps.windows(2).map(|w| dbar_between(&w[0], &w[1]).dbar).collect();
    let mut max_ratio = 0.0f64;
    let mut continuity_ok = true;
    for (d, l) in dbar_steps.iter().zip(&lid_steps) {
        if *l > 0.0 {
            max_ratio = max_ratio.max(d / l);
        }
        continuity_ok &= *d <= popts.modulus * l + 1e-12;
    }
    Ok((maps, ParametricReport { params, lid_steps, dbar_steps, max_ratio, continuity_ok, refinements, members: reports }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    fn sine_sigma(res: usize, amp: f64) -> GridDensity {
        instances::torus_sine(res, amp).unwrap()
    }

    #[test]
    fn equal_densities_give_the_identity() {
        let atlas = TorusAtlas::build(2, 2).unwrap();
        let s = sine_sigma(32, 0.2);
        let (map, rep) = global_solve(&s, &s, &atlas, &TorusOptions::default()).unwrap();
        assert!(map.is_identity());
        assert_eq!(rep.lambda, 1.0);
        let doubled = s.scaled(2.0).unwrap();
        let (map, rep) = global_solve(&doubled, &s, &atlas, &TorusOptions::default()).unwrap();
        assert!(map.is_identity());
        assert_eq!(rep.lambda, 2.0);
    }

    #[test]
    fn sine_instance_is_corrected() {
        let atlas = TorusAtlas::build(2, 2).unwrap();
        let sigma = sine_sigma(64, 0.1);
        let tau = GridDensity::constant(*sigma.grid(), 1.0).unwrap();
        let (map, rep) = global_solve(&sigma, &tau, &atlas, &TorusOptions::default()).unwrap();
        assert!(rep.pullback_residual < 2e-2, "{rep:?}");
        assert!(rep.pullback_residual <= rep.edge_defect_sum + 1e-9);
        assert!(rep.dbar.dbar > 0.0);
        assert!(rep.dbar.dbar <= rep.dbar_sum + 1e-9);
        assert!((rep.dbar.forward - rep.dbar.inverse).abs() < 1e-8);
        let x = [0.3, 0.7];
        let back = map.apply_inverse(&map.apply(&x));
        assert!(super::super::map::torus_distance(&back, &x) < 1e-9);
    }

    #[test]
    fn scaling_by_a_power_of_two_is_exact() {
        let atlas = TorusAtlas::build(2, 2).unwrap();
        let sigma = sine_sigma(48, 0.1);
        let tau = GridDensity::constant(*sigma.grid(), 1.0).unwrap();
        let (a, _) = global_solve(&sigma, &tau, &atlas, &TorusOptions::default()).unwrap();
        let (b, _) = global_solve(&sigma.scaled(4.0).unwrap(), &tau, &atlas, &TorusOptions::default()).unwrap();
        assert_eq!(a.displacements(), b.displacements());
    }

    #[test]
    fn circle_instance() {
        let atlas = TorusAtlas::build(1, 2).unwrap();
        let grid = Grid::torus(1, 1.0, 128).unwrap();
        let sigma = GridDensity::from_fn(grid, |x| 1.0 + 0.2 * libm::sin(2.0 * core::f64::consts::PI * x[0])).unwrap();
        let tau = GridDensity::constant(grid, 1.0).unwrap();
        let (_, rep) = global_solve(&sigma, &tau, &atlas, &TorusOptions::default()).unwrap();
        assert!(rep.pullback_residual < 1e-2, "{rep:?}");
    }

    #[test]
    fn parametric_constant_and_linear_families() {
        let atlas = TorusAtlas::build(2, 2).unwrap();
        let sigma = sine_sigma(32, 0.1);
        let tau = GridDensity::constant(*sigma.grid(), 1.0).unwrap();
        let popts = ParametricOptions { metric_atoms: 300, ..Default::default() };
        let constant = |_s: f64| Ok(sigma.clone());
        let (maps, rep) = parametric_solve(&tau, &constant, &[0.0, 0.5, 1.0], &atlas, &TorusOptions::default(), &popts).unwrap();
        assert!(maps.windows(2).all(|w| w[0] == w[1]));
        assert!(rep.dbar_steps.iter().all(|&d| d == 0.0));

        let linear = |s: f64| GridDensity::new(*tau.grid(), tau.values().iter().zip(sigma.values()).map(|(t, g)| (1.0 - s) * t + s * g).collect());
        let (maps, rep) = parametric_solve(&tau, &linear, &[0.0, 0.5, 1.0], &atlas, &TorusOptions::default(), &popts).unwrap();
        assert!(maps[0].is_identity());
        assert_eq!(rep.params.len(), 3);
        assert!(rep.max_ratio.is_finite() && rep.max_ratio > 0.0);
    }

    #[test]
    fn coarse_partition_is_refused() {
        let atlas = TorusAtlas::build(2, 2).unwrap();
        let sigma = sine_sigma(16, 0.5);
        let tau = GridDensity::constant(*sigma.grid(), 1.0).unwrap();
        let popts = ParametricOptions { step_bound: 1e-9, max_refinements: 1, metric_atoms: 100, ..Default::default() };
        let linear = |s: f64| GridDensity::new(*tau.grid(), tau.values().iter().zip(sigma.values()).map(|(t, g)| (1.0 - s) * t + s * g).collect());
        let r = parametric_solve(&tau, &linear, &[0.0, 1.0], &atlas, &TorusOptions::default(), &popts);
        assert!(matches!(r, Err(Error::Refinement { .. })), "{r:?}");
    }
}
