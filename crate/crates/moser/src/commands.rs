//! One function per subcommand. Each writes its artifacts into `out` along
//! with `manifest.json` echoing the resolved configuration.

use std::fs;
use std::path::Path;

use moser_core::cube::{coerciveness_check, dm_solve, CutoffFamily, DmOptions, TriangularSolution};
use moser_core::instances;
use moser_core::measure::{box_discrepancy, brute_force_lid, lid_metric_capped, AtomicMeasure, Domain, MetricReport};
use moser_core::smoothing::{self, SampledHomeo, SmoothedMap, SmoothingReport};
use moser_core::torus::{global_solve, jacobian_determinants, ParametricOptions, TorusAtlas};
use moser_core::{Grid, GridDensity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DomainKind, Resolved};
use crate::error::{CliError, CliResult};
use crate::format::{self, write_csv, write_json};
use crate::svg::{self, Series, Style};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a crate::config::RunConfig,
    overrides: &'a [String],
    artifacts: Vec<String>,
    summary: Value,
}

/// Artifact directory; the manifest lists whatever it holds at the end.
struct Artifacts<'a> {
    dir: &'a Path,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts { dir })
    }

    fn path(&mut self, name: &str) -> std::path::PathBuf {
        self.dir.join(name)
    }

    fn listing(&self) -> CliResult<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(self.dir).map_err(|e| CliError::io(self.dir, e))? {
            let entry = entry.map_err(|e| CliError::io(self.dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != "manifest.json" && name != "error.json" {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    fn finish(self, command: &str, r: &Resolved, summary: Value) -> CliResult<Value> {
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: &r.config,
            overrides: &r.overrides,
            artifacts: self.listing()?,
            summary: summary.clone(),
        };
        write_json(&self.dir.join("manifest.json"), &m)?;
        Ok(summary)
    }
}

fn write_svg(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn cube_inputs(r: &Resolved) -> CliResult<(GridDensity, GridDensity)> {
    let c = &r.config.cube;
    match (&c.f, &c.g) {
        (Some(f), Some(g)) => Ok((format::read_density(f)?, format::read_density(g)?)),
        (None, None) => {
            let inst = instances::interior_bump(c.res, c.amp)?;
            Ok((inst.f, inst.g))
        }
        _ => Err(CliError::Usage("give both f and g, or neither for the built-in instance".into())),
    }
}

fn cube_cutoffs(r: &Resolved, grid: &Grid) -> CliResult<CutoffFamily> {
    let c = &r.config.cube;
    Ok(CutoffFamily::build(grid.dim(), grid.side(), c.eta, c.eps0)?)
}

pub fn solve_cube(r: &Resolved, out: &Path) -> CliResult<Value> {
    let (f, g) = cube_inputs(r)?;
    let fam = cube_cutoffs(r, f.grid())?;
    let sol = dm_solve(&f, &g, &fam, &r.config.cube.options(r.config.seed))?;
    let mut a = Artifacts::new(out)?;
    format::write_solution(&a.path("solution"), &sol)?;
    write_json(&a.path("diagnostics.json"), sol.diagnostics())?;
    let grid = *f.grid();
    let field = sol.residual_field(&f, &g)?;
    let n = grid.dim();
    let mut header: Vec<String> = (1..=n).map(|d| format!("x{d}")).collect();
    header.push("residual".into());
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| {
            let mut row = grid.point(i);
            row.push(field[i]);
            row
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&a.path("residual.csv"), &h, &rows)?;
    let d = sol.diagnostics();
    let summary = json!({ "residual_sup": d.residual_sup, "u_sup": d.u_sup, "d_m": d.d_m, "box_defect": d.box_defect });
    a.finish("solve-cube", r, summary)
}

fn torus_inputs(r: &Resolved) -> CliResult<(GridDensity, GridDensity)> {
    let t = &r.config.torus;
    match (&t.sigma, &t.tau) {
        (Some(s), Some(u)) => Ok((format::read_density(s)?, format::read_density(u)?)),
        (None, None) => {
            let sigma = instances::torus_sine(t.res, t.amp)?;
            let tau = GridDensity::constant(*sigma.grid(), 1.0)?;
            Ok((sigma, tau))
        }
        _ => Err(CliError::Usage("give both sigma and tau, or neither for the built-in instance".into())),
    }
}

pub fn solve_torus(r: &Resolved, out: &Path) -> CliResult<Value> {
    let t = &r.config.torus;
    let (sigma, tau) = torus_inputs(r)?;
    let atlas = TorusAtlas::with_eta(sigma.grid().dim(), t.charts_per_axis, t.eta)?;
    let (map, report) = global_solve(&sigma, &tau, &atlas, &t.options())?;
    let mut a = Artifacts::new(out)?;
    write_json(&a.path("atlas.json"), &atlas)?;
    let grid = *sigma.grid();
    format::write_vector_field(&a.path("map.json"), &grid, &map.displacements())?;
    format::write_vector_field(&a.path("map_inverse.json"), &grid, &map.inverse_displacements())?;
    write_json(&a.path("report.json"), &report)?;
    let summary = json!({
        "lambda": report.lambda,
        "pullback_residual": report.pullback_residual,
        "dbar": report.dbar.dbar,
        "dbar_sum": report.dbar_sum,
        "edges": report.edges.len(),
    });
    a.finish("solve-torus", r, summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub d_m: f64,
    pub box_value: f64,
    pub u_sup: f64,
    pub dbar: f64,
    pub bound: f64,
    pub applicable: bool,
    pub bound_ok: bool,
}

pub fn coercive_sweep(r: &Resolved, out: &Path) -> CliResult<Value> {
    let (f, g) = cube_inputs(r)?;
    let fam = cube_cutoffs(r, f.grid())?;
    let base = instances::CubeInstance { f, g };
    let opts = DmOptions { boxes: 0, metric_atoms: 0, ..r.config.cube.options(r.config.seed) };
    let mut rows = Vec::new();
    for &eps in &r.config.sweep.eps {
        let inst = instances::eps_family(&base, eps)?;
        let sol = dm_solve(&inst.f, &inst.g, &fam, &opts)?;
        let c = coerciveness_check(&sol, &inst.f, &inst.g, r.config.sweep.metric_atoms)?;
        rows.push(SweepRow {
            eps,
            d_m: c.d_m,
            box_value: c.box_value,
            u_sup: c.u_sup,
            dbar: c.dbar.dbar,
            bound: c.bound,
            applicable: c.applicable,
            bound_ok: c.bound_ok,
        });
    }
    let mut a = Artifacts::new(out)?;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let table: Vec<Vec<f64>> =
        rows.iter().map(|w| vec![w.eps, w.d_m, w.box_value, w.u_sup, w.dbar, w.bound, flag(w.bound_ok), flag(w.applicable)]).collect();
    write_csv(&a.path("sweep.csv"), &["eps", "dM", "box", "u_sup", "dbar", "2MgdM", "bound_ok", "applicable"], &table)?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|w| (w.d_m, w.dbar)).collect();
    let us: Vec<(f64, f64)> = rows.iter().map(|w| (w.d_m, w.u_sup)).collect();
    let chart = svg::chart(
        "coerciveness sweep",
        "Lid_1(m_f, m_g)",
        "sup distance",
        &[Series { label: "dbar(psi, id)", points: &pts, style: Style::Points }, Series { label: "u_sup", points: &us, style: Style::Points }],
    );
    write_svg(&a.path("sweep.svg"), &chart)?;
    write_json(&a.path("report.json"), &rows)?;
    let summary = json!({ "rows": rows.len(), "bound_ok": rows.iter().all(|w| w.bound_ok) });
    a.finish("coercive-sweep", r, summary)
}

fn sheared(r: &Resolved, t: f64) -> CliResult<SampledHomeo> {
    let s = &r.config.smooth;
    let grid = Grid::torus(2, 1.0, s.res)?;
    let tol = s.area_tol.unwrap_or(8.0 / s.res as f64);
    Ok(SampledHomeo::from_map(grid, |p| instances::sheared_hamiltonian(p, s.flow * t, s.shear * t), true, tol)?)
}

fn smooth_atlas(r: &Resolved) -> CliResult<TorusAtlas> {
    Ok(TorusAtlas::with_eta(2, r.config.torus.charts_per_axis, r.config.torus.eta)?)
}

/// `det − 1` of the input displacement and of the smoothed map.
fn write_member(a: &mut Artifacts, prefix: &str, h: &SampledHomeo, phi: &SmoothedMap, report: &SmoothingReport) -> CliResult<()> {
    let grid = *h.grid();
    let before: Vec<f64> = jacobian_determinants(&grid, &h.interleaved())?.iter().map(|d| d - 1.0).collect();
    let after: Vec<f64> = jacobian_determinants(&grid, &phi.displacements())?.iter().map(|d| d - 1.0).collect();
    format::write_field(&a.path(&format!("{prefix}defect_before.json")), &grid, 1, &before)?;
    format::write_field(&a.path(&format!("{prefix}defect_after.json")), &grid, 1, &after)?;
    format::write_vector_field(&a.path(&format!("{prefix}phi.json")), &grid, &phi.displacements())?;
    format::write_homeo(&a.path(&format!("{prefix}psi1.json")), &phi.psi1)?;
    write_json(&a.path(&format!("{prefix}report.json")), report)
}

pub fn smooth(r: &Resolved, out: &Path) -> CliResult<Value> {
    let s = &r.config.smooth;
    let h = match &s.homeo {
        Some(p) => format::read_homeo(p, true, s.area_tol)?,
        None => sheared(r, 1.0)?,
    };
    let atlas = smooth_atlas(r)?;
    let (phi, report) = smoothing::smooth(&h, s.scale, &atlas, &r.config.torus.options(), s.metric_atoms)?;
    let mut a = Artifacts::new(out)?;
    write_member(&mut a, "", &h, &phi, &report)?;
    let summary = json!({
        "scale": report.scale,
        "det_defect": report.det_defect,
        "dbar_phi_h": report.dbar_phi_h,
        "dbar_psi1_h": report.dbar_psi1_h,
        "dbar_correction": report.dbar_correction,
    });
    a.finish("smooth", r, summary)
}

pub fn smooth_isotopy(r: &Resolved, out: &Path) -> CliResult<Value> {
    let s = &r.config.smooth;
    let members: Vec<SampledHomeo> = if s.members.is_empty() {
        if s.count < 2 {
            return Err(CliError::Usage("an isotopy needs at least two members".into()));
        }
        (0..s.count).map(|i| sheared(r, i as f64 / (s.count - 1) as f64)).collect::<CliResult<_>>()?
    } else {
        s.members.iter().map(|p| format::read_homeo(p, true, s.area_tol)).collect::<CliResult<_>>()?
    };
    let atlas = smooth_atlas(r)?;
    let popts = ParametricOptions {
        step_bound: s.step_bound,
        metric_atoms: s.metric_atoms,
        max_refinements: s.max_refinements,
        ..ParametricOptions::default()
    };
    let (maps, report) = smoothing::smooth_isotopy(&members, s.scale, s.max_step, &atlas, &r.config.torus.options(), &popts)?;
    let mut a = Artifacts::new(out)?;
    for (i, (h, phi)) in members.iter().zip(&maps).enumerate() {
        write_member(&mut a, &format!("member_{i}_"), h, phi, &report.members[i])?;
    }
    let rows: Vec<Vec<f64>> = report.input_steps.iter().zip(&report.output_steps).enumerate().map(|(i, (x, y))| vec![i as f64, *x, *y]).collect();
    write_csv(&a.path("steps.csv"), &["step", "input_dbar", "output_dbar"], &rows)?;
    let pin: Vec<(f64, f64)> = rows.iter().map(|w| (w[0], w[1])).collect();
    let pout: Vec<(f64, f64)> = rows.iter().map(|w| (w[0], w[2])).collect();
    let chart = svg::chart(
        "isotopy steps",
        "step",
        "dbar between members",
        &[Series { label: "input", points: &pin, style: Style::Line }, Series { label: "output", points: &pout, style: Style::Line }],
    );
    write_svg(&a.path("steps.svg"), &chart)?;
    write_json(&a.path("isotopy.json"), &report)?;
    let summary = json!({
        "scale": report.scale,
        "max_ratio": report.max_ratio,
        "det_defects": report.members.iter().map(|m| m.det_defect).collect::<Vec<_>>(),
        "identity_start": maps[0].is_identity(),
    });
    a.finish("smooth-isotopy", r, summary)
}

fn load_measure(path: &Path, r: &Resolved) -> CliResult<(AtomicMeasure, Option<Grid>)> {
    if path.extension().is_some_and(|e| e == "json") {
        let d = format::read_density(path)?;
        Ok((AtomicMeasure::atomize(&d), Some(*d.grid())))
    } else {
        let m = &r.config.metric;
        let domain = match m.domain {
            DomainKind::Cube => Domain::Cube { side: m.side },
            DomainKind::Torus => Domain::Torus { side: m.side },
        };
        Ok((format::read_measure_csv(path, domain)?, None))
    }
}

#[derive(Debug, Serialize)]
pub struct MetricOutput {
    #[serde(flatten)]
    pub report: MetricReport,
    #[serde(rename = "box")]
    pub box_value: f64,
}

pub fn metric(r: &Resolved, out: &Path) -> CliResult<Value> {
    let m = &r.config.metric;
    let (Some(pa), Some(pb)) = (&m.a, &m.b) else {
        return Err(CliError::Usage("metric needs two inputs".into()));
    };
    let (mu, ga) = load_measure(pa, r)?;
    let (nu, gb) = load_measure(pb, r)?;
    if mu.dim() != nu.dim() || mu.domain() != nu.domain() {
        return Err(moser_core::Error::ShapeMismatch("measures live on different domains".into()).into());
    }
    let report = lid_metric_capped(&mu, &nu, m.lid_b, m.atom_cap)?;
    let grid = match (ga, gb) {
        (Some(g), _) | (None, Some(g)) => g,
        (None, None) => {
            let topo = match mu.domain() {
                Domain::Cube { .. } => moser_core::Topology::Cube,
                Domain::Torus { .. } => moser_core::Topology::Torus,
            };
            Grid::new(mu.dim(), mu.domain().side(), m.box_res, topo)?
        }
    };
    let box_value = box_discrepancy(&mu, &nu, &grid)?;
    let output = MetricOutput { report, box_value };
    let mut a = Artifacts::new(out)?;
    write_json(&a.path("metric.json"), &output)?;
    let summary = json!({ "value": output.report.value, "b": output.report.b, "box": box_value });
    a.finish("metric", r, summary)
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> CliResult<(bool, String)>) -> Check {
    match run() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
    }
}

/// Small fast invariant suite; exit 5 if anything fails.
pub fn selftest(r: &Resolved, out: &Path) -> CliResult<Value> {
    let seed = r.config.seed;
    let checks = vec![
        check("rearrangement_1d", || {
            let grid = Grid::cube(1, 1.0, 1025)?;
            let g = GridDensity::constant(grid, 1.0)?;
            let f = GridDensity::from_fn(grid, |x| 0.5 + x[0])?;
            let fam = CutoffFamily::build(1, 1.0, 0.1, 0.3)?;
            let sol = dm_solve(&f, &g, &fam, &DmOptions::fast())?;
            let mut err = 0.0f64;
            for i in 0..=1000 {
                let t = i as f64 / 1000.0;
                err = err.max((sol.apply(&[t])?[0] - (0.5 * t + 0.5 * t * t)).abs());
            }
            Ok((err <= 1e-6, format!("sup error {err:.2e}")))
        }),
        check("equal_densities_identity", || {
            let inst = instances::interior_bump(65, 0.2)?;
            let fam = CutoffFamily::build(2, 1.0, 0.1, 0.3)?;
            let sol: TriangularSolution = dm_solve(&inst.g, &inst.g, &fam, &DmOptions::fast())?;
            let u = sol.u_sup();
            Ok((u == 0.0, format!("u_sup {u:e}")))
        }),
        check("metric_lp_vs_brute_force", || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let mut m = || -> CliResult<AtomicMeasure> {
                    let k = rng.gen_range(1..=3);
                    let pts: Vec<f64> = (0..2 * k).map(|_| rng.gen::<f64>()).collect();
                    let ws: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
                    Ok(AtomicMeasure::new(2, Domain::Cube { side: 1.0 }, pts, ws)?)
                };
                let (a, b) = (m()?, m()?);
                let lp = lid_metric_capped(&a, &b, 1.0, 16)?.value;
                worst = worst.max((lp - brute_force_lid(&a, &b, 1.0)?).abs());
            }
            Ok((worst <= 1e-9, format!("max gap {worst:.2e}")))
        }),
        check("torus_round_trip", || {
            let sigma = instances::torus_sine(32, 0.1)?;
            let tau = GridDensity::constant(*sigma.grid(), 1.0)?;
            let atlas = TorusAtlas::build(2, 2)?;
            let (map, rep) = global_solve(&sigma, &tau, &atlas, &Default::default())?;
            let x = [0.3, 0.7];
            let back = map.apply_inverse(&map.apply(&x));
            let err = moser_core::torus::torus_distance(&back, &x);
            Ok((err < 1e-9 && rep.dbar.dbar <= rep.dbar_sum + 1e-9, format!("round trip {err:.1e}, pullback residual {:.2e}", rep.pullback_residual)))
        }),
        check("smoothing_identity", || {
            let grid = Grid::torus(2, 1.0, 32)?;
            let id = SampledHomeo::identity(grid)?;
            let (phi, rep) = smoothing::smooth(&id, 0.1, &TorusAtlas::build(2, 2)?, &Default::default(), 200)?;
            Ok((phi.is_identity() && rep.det_defect <= 1e-12, format!("det defect {:e}", rep.det_defect)))
        }),
    ];
    let mut a = Artifacts::new(out)?;
    write_json(&a.path("selftest.json"), &checks)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let summary = json!({ "checks": checks.len(), "failed": failed });
    let summary = a.finish("selftest", r, summary)?;
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::Check(format!("selftest failed: {}", failed.join(", "))))
    }
}
