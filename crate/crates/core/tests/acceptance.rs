//! Acceptance suite: one line per criterion, pass/fail against pinned tolerances.

use std::process::ExitCode;
use std::time::Instant;

use moser_core::cube::{coerciveness_check, dm_solve, nonlinear_term, CutoffFamily, DmOptions, TriangularSolution};
use moser_core::field::SuffixField;
use moser_core::grid::{Grid, GridDensity};
use moser_core::instances::{self, CubeInstance};
use moser_core::linear::{self, TriangularFieldVector};
use moser_core::measure::{brute_force_lid, lid_metric, AtomicMeasure, Domain};
use moser_core::cube::estimate_dm;
use moser_core::smoothing::{self, SampledHomeo};
use moser_core::torus::{global_solve, parametric_solve, ParametricOptions, TorusAtlas, TorusOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const ETA: f64 = 0.1;
const EPS0: f64 = 0.3;
const SWEEP: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

fn cutoffs(n: usize) -> CutoffFamily {
    CutoffFamily::build(n, 1.0, ETA, EPS0).expect("cutoffs")
}

fn a1() -> Outcome {
    let t = Instant::now();
    let grid = Grid::cube(1, 1.0, 4097).map_err(|e| e.to_string())?;
    let g = GridDensity::constant(grid, 1.0).map_err(|e| e.to_string())?;
    let f = GridDensity::from_fn(grid, |x| 0.5 + x[0]).map_err(|e| e.to_string())?;
    let sol = dm_solve(&f, &g, &cutoffs(1), &DmOptions::default()).map_err(|e| e.to_string())?;
    let mut err = 0.0f64;
    for i in 0..=10_000 {
        let a = i as f64 / 10_000.0;
        let v = sol.apply(&[a]).map_err(|e| e.to_string())?[0];
        err = err.max((v - (0.5 * a + 0.5 * a * a)).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((err <= 1e-6 && secs < 2.0, format!("sup |v - (a/2 + a^2/2)| = {err:.3e} (<= 1e-6), {secs:.2} s (< 2 s)")))
}

fn solve(inst: &CubeInstance, opts: &DmOptions) -> Result<TriangularSolution, String> {
    dm_solve(&inst.f, &inst.g, &cutoffs(2), opts).map_err(|e| e.to_string())
}

fn a2_a3() -> (Outcome, Outcome) {
    let run = || -> Result<(TriangularSolution, CubeInstance, f64, f64), String> {
        let coarse = instances::interior_bump(129, 0.2).map_err(|e| e.to_string())?;
        let sol = solve(&coarse, &DmOptions::default())?;
        let t = Instant::now();
        let fine = instances::interior_bump(257, 0.2).map_err(|e| e.to_string())?;
        let fine_sol = solve(&fine, &DmOptions::fast())?;
        let secs = t.elapsed().as_secs_f64();
        Ok((sol, coarse, fine_sol.diagnostics().residual_sup, secs))
    };
    match run() {
        Err(e) => (Err(e.clone()), Err(e)),
        Ok((sol, inst, fine, secs)) => {
            let r = sol.diagnostics().residual_sup;
            let ratio = r / fine;
            let a2 = Ok((
                r <= 5e-3 && ratio >= 3.0 && secs < 60.0,
                format!("residual {r:.3e} at h=1/128 (<= 5e-3), {fine:.3e} at h=1/256, ratio {ratio:.2} (>= 3), {secs:.1} s (< 60 s)"),
            ));
            let a3 = sol.box_defects(&inst.f, &inst.g, 100_000, 100, 7).map_err(|e| e.to_string()).map(|boxes| {
                let worst = boxes
                    .iter()
                    .map(|b| b.defect.abs() - (3.0 * r * b.volume + 3.0 * b.sigma))
                    .fold(f64::NEG_INFINITY, f64::max);
                let max_defect = boxes.iter().map(|b| b.defect.abs()).fold(0.0, f64::max);
                (worst <= 0.0, format!("100 boxes, max |defect| {max_defect:.3e}, worst margin {worst:.3e} (<= 0 vs 3*res*vol + 3 sigma)"))
            });
            (a2, a3)
        }
    }
}

struct SweepRow {
    eps: f64,
    d_m: f64,
    box_value: f64,
    psi0_sup: f64,
    u_sup: f64,
    dbar: f64,
    bound: f64,
    applicable: bool,
    n_sup: f64,
    slack: f64,
    tolerance: f64,
}

fn sweep(res: usize) -> Result<Vec<SweepRow>, String> {
    let base = instances::interior_bump(res, 0.2).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for &eps in &SWEEP {
        let inst = instances::eps_family(&base, eps).map_err(|e| e.to_string())?;
        let sol = solve(&inst, &DmOptions::fast())?;
        let c = coerciveness_check(&sol, &inst.f, &inst.g, 2000).map_err(|e| e.to_string())?;
        let nl = nonlinear_term(&sol, &inst.f, &inst.g).map_err(|e| e.to_string())?;
        let psi0_sup = linear::psi0(&inst.f, &inst.g).map_err(|e| e.to_string())?.sup_abs();
        rows.push(SweepRow {
            eps,
            d_m: c.d_m,
            box_value: c.box_value,
            psi0_sup,
            u_sup: c.u_sup,
            dbar: c.dbar.dbar,
            bound: c.bound,
            applicable: c.applicable,
            n_sup: nl.n_sup,
            slack: nl.slack,
            tolerance: nl.tolerance,
        });
    }
    Ok(rows)
}

fn monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= 1.05 * w[0])
}

fn a4(rows: &[SweepRow]) -> Outcome {
    let dm: Vec<f64> = rows.iter().map(|r| r.d_m).collect();
    let us: Vec<f64> = rows.iter().map(|r| r.u_sup).collect();
    let db: Vec<f64> = rows.iter().map(|r| r.dbar).collect();
    let mono = monotone(&dm) && monotone(&us) && monotone(&db);
    let bound_rows: Vec<&SweepRow> = rows.iter().filter(|r| r.applicable).collect();
    let bound_ok = bound_rows.iter().all(|r| r.u_sup <= r.bound);
    let worst = bound_rows.iter().map(|r| r.u_sup / r.bound).fold(0.0, f64::max);
    let table: Vec<String> = rows.iter().map(|r| format!("eps {}: dM {:.2e} box {:.2e} |Psi(0)| {:.2e} u {:.2e} dbar {:.2e}", r.eps, r.d_m, r.box_value, r.psi0_sup, r.u_sup, r.dbar)).collect();
    Ok((
        mono && bound_ok,
        format!(
            "monotone (5% slack) {mono}; u_sup <= 2 Mg dM on {}/{} applicable rows (max ratio {worst:.3}); {}",
            bound_rows.iter().filter(|r| r.u_sup <= r.bound).count(),
            bound_rows.len(),
            table.join("; ")
        ),
    ))
}

fn smooth_field(n: usize, res: usize, rng: &mut ChaCha8Rng) -> TriangularFieldVector {
    let comps = (0..n)
        .map(|c| {
            let coef: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            SuffixField::from_fn(n, c, res, 1.0, |x| {
                let mut v = coef[0];
                for (d, xi) in x.iter().enumerate() {
                    v += 0.5 * coef[1 + d] * (std::f64::consts::PI * xi + coef[2 * n - 1 + d]).sin();
                }
                v
            })
        })
        .collect();
    TriangularFieldVector::new(comps).unwrap()
}

/// Corner-box integrals of `g − f` for a random low-mode density `f`.
fn random_psi0(res: usize, g: &GridDensity, rng: &mut ChaCha8Rng) -> Result<TriangularFieldVector, String> {
    let modes: Vec<(f64, f64, f64)> = (0..4).map(|_| (rng.gen_range(-0.1..0.1), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))).collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    let f = GridDensity::from_fn(*g.grid(), |x| {
        1.0 + modes
            .iter()
            .enumerate()
            .map(|(k, (a, p, q))| a * (two_pi * ((k % 2 + 1) as f64 * x[0] + p)).cos() * (two_pi * ((k / 2 + 1) as f64 * x[1] + q)).cos())
            .sum::<f64>()
    })
    .map_err(|e| e.to_string())?;
    let _ = res;
    linear::psi0(&f, g).map_err(|e| e.to_string())
}

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fam = cutoffs(2);
    let round_trip = |res: usize, rng: &mut ChaCha8Rng| -> Result<f64, String> {
        let grid = Grid::cube(2, 1.0, res).map_err(|e| e.to_string())?;
        let g = GridDensity::from_fn(grid, |x| 1.0 + 0.3 * x[0] * x[1]).map_err(|e| e.to_string())?;
        let k = linear::build_kernel(&g, &fam).map_err(|e| e.to_string())?;
        let xs = smooth_field(2, res, rng);
        let y = linear::apply_dpsi0(&k, &xs).map_err(|e| e.to_string())?;
        let mut back = linear::invert_dpsi0(&k, &y).map_err(|e| e.to_string())?;
        back.axpy(-1.0, &xs);
        Ok(back.sup_abs())
    };
    let e64 = round_trip(65, &mut rng.clone())?;
    let e128 = round_trip(129, &mut rng)?;
    let order = (e64 / e128).log2();

    let grid = Grid::cube(2, 1.0, 65).map_err(|e| e.to_string())?;
    let g = GridDensity::from_fn(grid, |x| 0.75 + 0.5 * x[0] * x[1]).map_err(|e| e.to_string())?;
    let mg = linear::mg_bound(&g, 2);
    let k = linear::build_kernel(&g, &fam).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut violations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..20 {
        let y = random_psi0(65, &g, &mut rng)?;
        let x = linear::invert_dpsi0(&k, &y).map_err(|e| e.to_string())?;
        let ratio = x.sup_abs() / y.sup_abs();
        worst = worst.max(ratio);
        if x.sup_abs() > mg * y.sup_abs() + 1e-8 {
            violations += 1;
        }
    }
    let mg_example = linear::mg_from_range(0.5, 2.0, 2);
    Ok((
        e64 <= 5e-3 && order >= 1.5 && violations == 0 && mg_example == 16.0,
        format!(
            "round trip {e64:.3e} at h=1/64 (<= 5e-3), order {order:.2} (>= 1.5); |X|/|Y| max {worst:.3} vs Mg {mg:.3}, {violations}/20 violations; Mg(2, 1/2, 2) = {mg_example}"
        ),
    ))
}

fn random_measure(rng: &mut ChaCha8Rng, atoms: usize) -> AtomicMeasure {
    let points: Vec<f64> = (0..atoms * 2).map(|_| rng.gen::<f64>()).collect();
    let weights: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.05..1.0)).collect();
    AtomicMeasure::new(2, Domain::Cube { side: 1.0 }, points, weights).unwrap()
}

fn a9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = rng.gen_range(1..=3);
        let b = rng.gen_range(1..=3);
        let mu = random_measure(&mut rng, a);
        let nu = random_measure(&mut rng, b);
        let bb = rng.gen_range(0.2..2.0);
        let lp = lid_metric(&mu, &nu, bb).map_err(|e| e.to_string())?.value;
        let bf = brute_force_lid(&mu, &nu, bb).map_err(|e| e.to_string())?;
        worst = worst.max((lp - bf).abs());
    }
    let mut axiom_slack = f64::INFINITY;
    let mut sym = 0.0f64;
    let mut identity_ok = true;
    for _ in 0..100 {
        let ms: Vec<AtomicMeasure> = (0..3).map(|_| {
            let k = rng.gen_range(1..=10);
            random_measure(&mut rng, k)
        }).collect();
        let d = |x: &AtomicMeasure, y: &AtomicMeasure| lid_metric(x, y, 1.0).unwrap().value;
        let (ab, ba, bc, ac) = (d(&ms[0], &ms[1]), d(&ms[1], &ms[0]), d(&ms[1], &ms[2]), d(&ms[0], &ms[2]));
        sym = sym.max((ab - ba).abs());
        axiom_slack = axiom_slack.min(ab + bc - ac);
        identity_ok &= d(&ms[0], &ms[0]) == 0.0 && ab > 0.0;
    }
    Ok((
        worst <= 1e-9 && sym <= 1e-9 && axiom_slack >= -1e-9 && identity_ok,
        format!("LP vs brute max gap {worst:.2e} (<= 1e-9); symmetry {sym:.2e}; triangle slack {axiom_slack:.2e} (>= -1e-9); identity {identity_ok}"),
    ))
}

fn a10(rows: &[SweepRow], extra: &[(f64, f64)]) -> Outcome {
    let xs: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.n_sup.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    let mut all: Vec<(f64, f64)> = rows.iter().map(|r| (r.slack, r.tolerance)).collect();
    all.extend_from_slice(extra);
    let worst = all.iter().map(|(s, t)| s + t).fold(f64::INFINITY, f64::min);
    let ns: Vec<String> = rows.iter().map(|r| format!("{:.2e}", r.n_sup)).collect();
    Ok((
        slope >= 1.8 && worst >= 0.0,
        format!("|N(u_eps)| = [{}], slope {slope:.2} (>= 1.8); min slack + tolerance {worst:.3e} (>= 0) over {} instances", ns.join(", "), all.len()),
    ))
}

fn a6() -> Outcome {
    let atlas = TorusAtlas::build(2, 2).map_err(|e| e.to_string())?;
    let sigma = instances::torus_sine(64, 0.1).map_err(|e| e.to_string())?;
    let tau = GridDensity::constant(*sigma.grid(), 1.0).map_err(|e| e.to_string())?;
    let family = |s: f64| -> moser_core::Result<GridDensity> {
        let v: Vec<f64> = tau.values().iter().zip(sigma.values()).map(|(t, x)| (1.0 - s) * t + s * x).collect();
        let d = GridDensity::new(*tau.grid(), v)?;
        let m = d.mass();
        d.scaled(1.0 / m)
    };
    let opts = TorusOptions::default();
    let partition: Vec<f64> = (0..=6).map(|i| i as f64 / 6.0).collect();
    // pre-sweep: d̄(ψ_s, id) / Lid(σ_s, τ)
    let mut modulus = 0.0f64;
    for &s in &partition[1..] {
        let fs = family(s).map_err(|e| e.to_string())?;
        let (map, _) = global_solve(&fs, &tau, &atlas, &opts).map_err(|e| e.to_string())?;
        let lid = estimate_dm(&fs, &tau, 500).map_err(|e| e.to_string())?;
        modulus = modulus.max(map.dbar_identity().dbar / lid);
    }
    let popts = ParametricOptions { modulus: 2.0 * modulus, ..ParametricOptions::default() };
    let (_, rep) = parametric_solve(&tau, &family, &partition, &atlas, &opts, &popts).map_err(|e| e.to_string())?;
    let steps: Vec<String> = rep.dbar_steps.iter().zip(&rep.lid_steps).map(|(d, l)| format!("{d:.2e}/{l:.2e}")).collect();
    Ok((
        rep.continuity_ok && rep.refinements == 0,
        format!(
            "modulus {modulus:.3}; dbar/lid steps [{}]; max ratio {:.3} (<= {:.3}); refinements {}",
            steps.join(", "),
            rep.max_ratio,
            2.0 * modulus,
            rep.refinements
        ),
    ))
}

fn sheared(res: usize, t: f64) -> Result<SampledHomeo, String> {
    let grid = Grid::torus(2, 1.0, res).map_err(|e| e.to_string())?;
    SampledHomeo::from_map(grid, |p| instances::sheared_hamiltonian(p, 0.05 * t, 0.03 * t), true, 8.0 / res as f64).map_err(|e| e.to_string())
}

fn a7() -> Outcome {
    let atlas = TorusAtlas::build(2, 2).map_err(|e| e.to_string())?;
    let opts = TorusOptions::default();
    let run = |res: usize, scale: f64| -> Result<smoothing::SmoothingReport, String> {
        let h = sheared(res, 1.0)?;
        smoothing::smooth(&h, scale, &atlas, &opts, 500).map(|(_, r)| r).map_err(|e| e.to_string())
    };
    let r128 = run(128, 0.04)?;
    let r256 = run(256, 0.04)?;
    let det_ok = r128.det_defect <= 1e-2 && r256.det_defect <= 1e-2 / 3.0;
    let mut triangle = true;
    let mut dbars = Vec::new();
    for scale in [0.08, 0.04, 0.02] {
        let r = run(128, scale)?;
        triangle &= r.dbar_phi_h <= r.dbar_psi1_h + r.dbar_correction + 1e-9;
        dbars.push(r.dbar_phi_h);
    }
    let decreasing = dbars.windows(2).all(|w| w[1] < w[0]);
    Ok((
        det_ok && triangle && decreasing,
        format!(
            "|det - 1| {:.2e} at res 128 (<= 1e-2), {:.2e} at res 256 (<= 3.33e-3, ratio {:.2}); triangle bound {triangle}; dbar(phi, h) over scales 0.08/0.04/0.02 = [{:.2e}, {:.2e}, {:.2e}] decreasing {decreasing}",
            r128.det_defect,
            r256.det_defect,
            r256.det_defect / r128.det_defect,
            dbars[0],
            dbars[1],
            dbars[2]
        ),
    ))
}

fn a8() -> Outcome {
    let atlas = TorusAtlas::build(2, 2).map_err(|e| e.to_string())?;
    let members: Vec<SampledHomeo> = (0..6).map(|i| sheared(128, i as f64 / 5.0)).collect::<Result<_, _>>()?;
    let (maps, rep) = smoothing::smooth_isotopy(&members, 0.04, 0.05, &atlas, &TorusOptions::default(), &ParametricOptions::default())
        .map_err(|e| e.to_string())?;
    let id_ok = maps[0].is_identity();
    let defects: Vec<f64> = rep.members.iter().map(|m| m.det_defect).collect();
    let triangles = rep.members.iter().all(|m| m.dbar_phi_h <= m.dbar_psi1_h + m.dbar_correction + 1e-9);
    let defect_ok = defects[1..].iter().all(|&d| d <= 1e-2);
    let cont_ok = rep.output_steps.iter().zip(&rep.input_steps).all(|(o, i)| *o <= 2.0 * i);
    let d: Vec<String> = defects.iter().map(|v| format!("{v:.1e}")).collect();
    Ok((
        id_ok && defect_ok && triangles && cont_ok,
        format!(
            "phi_0 = id {id_ok}; |det - 1| per member [{}] (<= 1e-2); triangle bounds {triangles}; output/input step max ratio {:.3} (<= 2)",
            d.join(", "),
            rep.max_ratio
        ),
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: &str, o: Outcome| {
        let line = match o {
            Ok((true, d)) => format!("{id} PASS {d}"),
            Ok((false, d)) => {
                failed += 1;
                format!("{id} FAIL {d}")
            }
            Err(e) => {
                failed += 1;
                format!("{id} FAIL error: {e}")
            }
        };
        println!("{line}");
    };
    report("A1", a1());
    let (r2, r3) = a2_a3();
    report("A2", r2);
    report("A3", r3);
    let rows = sweep(std::env::var("SWEEP_RES").ok().and_then(|s| s.parse().ok()).unwrap_or(257));
    match &rows {
        Ok(rows) => report("A4", a4(rows)),
        Err(e) => report("A4", Err(e.clone())),
    }
    report("A5", a5());
    report("A6", a6());
    report("A7", a7());
    report("A8", a8());
    report("A9", a9());
    let extra = (|| -> Result<Vec<(f64, f64)>, String> {
        let inst = instances::interior_bump(129, 0.2).map_err(|e| e.to_string())?;
        let sol = solve(&inst, &DmOptions::fast())?;
        let nl = nonlinear_term(&sol, &inst.f, &inst.g).map_err(|e| e.to_string())?;
        Ok(vec![(nl.slack, nl.tolerance)])
    })();
    match (&rows, &extra) {
        (Ok(rows), Ok(extra)) => report("A10", a10(rows, extra)),
        (Err(e), _) | (_, Err(e)) => report("A10", Err(e.clone())),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
