//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `cargo test --release --test acceptance -- --regenerate-g0` recomputes the
//! pinned lamination gap with much larger search settings instead.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cohesive_gamma::envelopes::*;
use cohesive_gamma::gamma_harness::{gamma_sweep, SweepConfig};
use cohesive_gamma::material_laws::{gamma_eps, h_scal_conv};
use cohesive_gamma::phasefield::{
    alternate_minimize, assemble_energy, elastic_state, energy_gradient, DisplacementBc, Face, GridSpec,
    PhaseFieldState, SolveConfig, VectorField,
};
use cohesive_gamma::surface_density::{g_vectorial, gscal_curve, sliced_cell, CellOptions, SurfaceDensityCurve};
use cohesive_gamma::{MaterialLaw, MatrixArg};

/// Gap `lamination(diag(1,1)) − h^conv` at depth 3, ℓ = 1, recorded from the
/// heavy-settings run of [`regenerate_g0`].
const G0: f64 = 0.224759;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = Result<Outcome, Box<dyn std::error::Error>>;

fn outcome(pass: bool, detail: String) -> Check {
    Ok(Outcome { pass, detail })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    loop {
        // Box-Muller keeps the directions isotropic
        let v: Vec<f64> = (0..k)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen_range(0.0..1.0));
                (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
            })
            .collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn c1_closed_form_envelopes() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_1d, mut worst_grid) = (0.0f64, 0.0f64);
    for ell in [0.5, 1.0, 2.0] {
        let hull = convex_envelope_1d(&ScalarFunction::h_scal(ell), 3.0 * ell, 20_001)?;
        let top = 4.5 * ell;
        for _ in 0..1000 {
            let t = rng.gen_range(0.1 * top..0.9 * top);
            let exact = h_scal_conv(t, ell);
            worst_1d = worst_1d.max((hull.query(&[t])? - exact).abs() / exact);
        }
        let law = MaterialLaw::euclidean(ell, 1, 1)?;
        let grid = convex_envelope_grid(&law, &[AxisSpec::new(-3.0 * ell, 3.0 * ell, 20_001)?])?;
        for _ in 0..1000 {
            let x = rng.gen_range(-2.4 * ell..2.4 * ell);
            let exact = h_scal_conv(x.abs(), ell);
            // the envelope vanishes at the center of the grid, so errors there
            // are measured against the kink value ℓ²/4
            let scale = exact.max(0.25 * ell * ell);
            worst_grid = worst_grid.max((grid.query(&[x])? - exact).abs() / scale);
        }
    }
    outcome(
        worst_1d <= 1e-5 && worst_grid <= 1e-5,
        format!("max rel error 1d hull {worst_1d:.2e}, grid transform {worst_grid:.2e} (<= 1e-5)"),
    )
}

fn c2_lamination_sandwich() -> Check {
    let ell = 1.0;
    let law = MaterialLaw::euclidean(ell, 2, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut sandwich_bad, mut mono_bad, mut r1_worst, mut r1_count) = (0, 0, 0.0f64, 0);
    for k in 0..200 {
        let r = rng.gen_range(0.0..3.0 * ell);
        let rank_one = k % 2 == 0;
        let dir = if rank_one {
            let (a, b) = (unit_gaussian(&mut rng, 2), unit_gaussian(&mut rng, 2));
            vec![a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
        } else {
            unit_gaussian(&mut rng, 4)
        };
        let entries: Vec<f64> = dir.iter().map(|x| x * r).collect();
        let xi = MatrixArg::new(2, 2, &entries)?;
        let nrm = xi.norm();
        let lam = lamination_envelope(&law, &xi, 3, 512)?;
        let tol = 1e-3 * (1.0 + nrm);
        let lower = (ell * nrm - 0.25 * ell * ell).max(0.0);
        let upper = law.h_eval(&xi)?.min(ell * nrm);
        if lam < lower - tol || lam > upper + tol {
            sandwich_bad += 1;
        }
        if k < 20 {
            let d1 = lamination_envelope(&law, &xi, 1, 512)?;
            let d2 = lamination_envelope(&law, &xi, 2, 512)?;
            if !(d1 >= d2 && d2 >= lam) {
                mono_bad += 1;
            }
        }
        if rank_one && nrm > 0.5 * ell {
            let conv = h_scal_conv(nrm, ell);
            r1_worst = r1_worst.max((lam - conv).abs() / conv);
            r1_count += 1;
        }
    }
    outcome(
        sandwich_bad == 0 && mono_bad == 0 && r1_worst <= 0.02,
        format!(
            "200 points, {sandwich_bad} outside the sandwich, {mono_bad} depth-order breaks in 20, \
             rank-one max rel gap to convex {r1_worst:.4} over {r1_count} points (<= 0.02)"
        ),
    )
}

fn diag_gap(depth: usize, budget: usize, opts: &LaminationOptions) -> Result<f64, Box<dyn std::error::Error>> {
    let law = MaterialLaw::euclidean(1.0, 2, 2)?;
    let xi = MatrixArg::identity(2);
    let lam = lamination_envelope_with(&law, &xi, depth, budget, opts)?;
    Ok(lam - h_scal_conv(xi.norm(), 1.0))
}

fn c3_nonconvexity_gap() -> Check {
    let gap = diag_gap(3, 512, &LaminationOptions::default())?;
    let rel = (gap - G0).abs() / G0;
    outcome(
        gap >= G0 && rel <= 0.05,
        format!("gap {gap:.6} vs pinned {G0:.6}, rel diff {rel:.4} (gap >= pinned, <= 0.05)"),
    )
}

fn regenerate_g0() -> Result<(), Box<dyn std::error::Error>> {
    let opts = LaminationOptions {
        inner_directions: 16,
        section_samples: 12,
        screen_keep: 16,
        refine_evals: 400,
        ..LaminationOptions::default()
    };
    let clock = Instant::now();
    let gap = diag_gap(3, 4096, &opts)?;
    println!("g0 = {gap:.6} ({:.1} s)", clock.elapsed().as_secs_f64());
    Ok(())
}

fn c4_recession() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = [0.0f64; 2];
    for (i, ell) in [0.8, 1.3].into_iter().enumerate() {
        let law = if i == 0 {
            MaterialLaw::euclidean(ell, 2, 2)?
        } else {
            MaterialLaw::dist_sq_so(ell, 2)?
        };
        for _ in 0..20 {
            let d = MatrixArg::new(2, 2, &unit_gaussian(&mut rng, 4))?;
            let probe = RayProbe::log_spaced(d, 1, 4, 5)?;
            let r = recession_numeric(&RecessionSource::Law(&law), &probe)?;
            worst[i] = worst[i].max((r - ell).abs() / ell);
        }
    }
    outcome(
        worst[0] <= 0.01 && worst[1] <= 0.02,
        format!(
            "20 directions each, max rel error simple {:.2e} (<= 0.01), dist_sq_SOn {:.2e} (<= 0.02)",
            worst[0], worst[1]
        ),
    )
}

fn interpolate(c: &SurfaceDensityCurve, t: f64) -> f64 {
    let a = &c.amplitudes;
    if t <= a[0] {
        return c.g_values[0] * t / a[0];
    }
    let j = a.iter().position(|&x| x >= t).unwrap_or(a.len() - 1).max(1);
    let s = (t - a[j - 1]) / (a[j] - a[j - 1]);
    (1.0 - s) * c.g_values[j - 1] + s * c.g_values[j]
}

fn c5_gscal_properties(c: &SurfaceDensityCurve) -> Check {
    let ell = c.ell;
    let a = &c.amplitudes;
    let g = &c.g_values;
    let bounds_ok = a
        .iter()
        .zip(g)
        .all(|(&t, &v)| v >= 0.0 && v <= (ell * t).min(1.0) * 1.02);
    let peak = a
        .iter()
        .zip(g)
        .map(|(&t, &v)| v / (ell * t).min(1.0))
        .fold(0.0, f64::max);
    let mut sub_bad = 0;
    let mut pairs = 0;
    for i in 0..a.len() {
        for j in i..a.len() {
            let s = a[i] + a[j];
            if s <= a[a.len() - 1] {
                pairs += 1;
                if interpolate(c, s) > (g[i] + g[j]) * 1.02 {
                    sub_bad += 1;
                }
            }
        }
    }
    let slopes = [g[0] / a[0], g[1] / a[1]];
    let secant = (g[1] - g[0]) / (a[1] - a[0]);
    let slope_ok = slopes.iter().all(|s| (0.95..=1.05).contains(s));
    let g_last = *g.last().unwrap_or(&0.0);
    let doubling = c.extrapolation_meta.iter().map(|p| p.rel_change).fold(0.0, f64::max);
    let first_doubling = c
        .extrapolation_meta
        .iter()
        .map(|p| (p.g_by_t[1].1 - p.g_by_t[0].1).abs() / p.g_by_t[1].1.max(1e-300))
        .fold(0.0, f64::max);
    outcome(
        bounds_ok && sub_bad == 0 && slope_ok && g_last >= 0.9 && doubling < 0.02,
        format!(
            "(a) max g/min(1,t) {peak:.4} (<= 1.02); (b) {sub_bad} of {pairs} pairs break 2% subadditivity; \
             (c) g/t {:.4}, {:.4} (secant {secant:.4}) in [0.95, 1.05]; (d) g({}) = {g_last:.4} (>= 0.9); \
             (e) last T doubling {doubling:.4} (< 0.02, first doubling {first_doubling:.4})",
            slopes[0],
            slopes[1],
            a[a.len() - 1]
        ),
    )
}

fn c6_solver() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // gradient against central differences, away from the kink of f_eps
    let eps = 0.05;
    let mut grad_worst = 0.0f64;
    for case in 0..20 {
        let (law, grid, m) = match case % 3 {
            0 => (MaterialLaw::euclidean(1.0, 1, 1)?, GridSpec::bar(1.0, 17), 1),
            1 => (MaterialLaw::euclidean(0.7, 2, 2)?, GridSpec::rect(1.0, 0.8, 6, 5), 2),
            _ => (MaterialLaw::dist_sq_so(1.0, 2)?, GridSpec::rect(1.0, 1.0, 5, 5), 2),
        };
        let mut cfg = SolveConfig::default();
        if case % 4 == 1 {
            cfg.fidelity_w = Some(VectorField::Constant { value: vec![0.1; m] });
            cfg.fidelity_q = 2.5;
        }
        let mut s = PhaseFieldState::undamaged(&grid, m, eps);
        for k in 0..grid.node_count() {
            let x = grid.coords(k);
            for i in 0..m {
                let base = if case % 3 == 2 { x[i] } else { 0.0 };
                s.u[k * m + i] = base + rng.gen_range(-0.1..0.1);
            }
            s.v[k] = rng.gen_range(0.05..0.95 * gamma_eps(eps, law.ell()));
        }
        let (gu, gv) = energy_gradient(&s, &law, &grid, &cfg)?;
        let scale = gu.iter().chain(&gv).fold(1e-8f64, |a, b| a.max(b.abs()));
        let h = 1e-6;
        let total = |st: &PhaseFieldState| assemble_energy(st, &law, &grid, &cfg).map(|p| p.total());
        for k in 0..s.u.len() + s.v.len() {
            let (mut p, mut q) = (s.clone(), s.clone());
            let (fd_exact, field_p, field_q) = if k < s.u.len() {
                (gu[k], &mut p.u[k], &mut q.u[k])
            } else {
                let j = k - s.u.len();
                (gv[j], &mut p.v[j], &mut q.v[j])
            };
            *field_p += h;
            *field_q -= h;
            let fd = (total(&p)? - total(&q)?) / (2.0 * h);
            grad_worst = grad_worst.max((fd - fd_exact).abs() / scale);
        }
    }
    // monotone energy traces
    let mut trace_bad = 0;
    for run in 0..50 {
        let eps: f64 = rng.gen_range(0.03..0.12);
        let (law, grid, mut cfg) = if run % 3 == 2 {
            let a = rng.gen_range(-1.5..1.5);
            let mut cfg = SolveConfig::default();
            cfg.u_bc = vec![
                DisplacementBc {
                    face: Face::XMin,
                    value: VectorField::Constant { value: vec![0.0, 0.0] },
                },
                DisplacementBc {
                    face: Face::XMax,
                    value: VectorField::Constant {
                        value: vec![a, 0.3 * a],
                    },
                },
            ];
            (MaterialLaw::euclidean(1.0, 2, 2)?, GridSpec::rect(1.0, 0.5, 9, 5), cfg)
        } else {
            let nodes = (20.0 / eps).ceil() as usize + 1;
            let cfg = SolveConfig::bar_loading(rng.gen_range(0.0..3.0));
            (MaterialLaw::euclidean(1.0, 1, 1)?, GridSpec::bar(1.0, nodes), cfg)
        };
        cfg.max_rounds = 60;
        let mut init = elastic_state(&law, &grid, &cfg, eps)?;
        if run % 2 == 1 {
            init.v.iter_mut().for_each(|v| *v = rng.gen_range(0.3..1.0));
        }
        let (_, report) = alternate_minimize(&init, &law, &grid, &cfg)?;
        if report.trace.windows(2).any(|w| w[1].total() > w[0].total()) {
            trace_bad += 1;
        }
    }
    // recovery construction at eps = 1e-4
    let eps = 1e-4;
    let law = MaterialLaw::euclidean(1.0, 1, 1)?;
    let grid = GridSpec::bar(1.0, 200_001);
    let mut rec_worst = 0.0f64;
    for xi in [0.5f64, 2.0] {
        let cfg = SolveConfig::bar_loading(xi);
        let mut s = elastic_state(&law, &grid, &cfg, eps)?;
        let v = (1.0 - (2.0 * eps).sqrt() * xi.abs().sqrt()).clamp(0.0, 1.0);
        s.v.iter_mut().for_each(|x| *x = v);
        let e = assemble_energy(&s, &law, &grid, &cfg)?.total();
        rec_worst = rec_worst.max((e - xi.abs()).abs() / xi.abs());
    }
    outcome(
        grad_worst < 1e-5 && trace_bad == 0 && rec_worst <= 0.03,
        format!(
            "gradient rel error {grad_worst:.2e} over 20 states (< 1e-5); {trace_bad} of 50 traces increase; \
             recovery energy rel error {rec_worst:.4} (<= 0.03)"
        ),
    )
}

fn c7_gamma_sweeps(c: &SurfaceDensityCurve) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (t, gate) in [(0.3, 0.05), (1.0, 0.10), (3.0, 0.10)] {
        let cfg = SweepConfig::dirichlet(1.0, t, 1.0, vec![0.1, 0.05, 0.02, 0.01]);
        let r = gamma_sweep(&cfg, c)?;
        let last = *r.rel_errors.last().unwrap_or(&f64::INFINITY);
        let ok = r.monotone_tail && last <= gate;
        pass &= ok;
        let errs: Vec<String> = r.rel_errors.iter().map(|e| format!("{e:.4}")).collect();
        parts.push(format!(
            "t={t}: limit {:.4}, rel errors [{}] (final <= {gate}{}{})",
            r.limit_value,
            errs.join(", "),
            if r.monotone_tail { "" } else { ", not monotone" },
            if r.flagged { ", flagged" } else { "" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c8_nu_independence(c: &SurfaceDensityCurve) -> Check {
    let law = MaterialLaw::euclidean(c.ell, 2, 2)?;
    let z = [0.3, 0.4];
    let nus: Vec<[f64; 2]> = (0..5)
        .map(|k| {
            let a = 0.37 + 1.1 * k as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    let values: Vec<f64> = nus
        .iter()
        .map(|nu| g_vectorial(&z, nu, &law, c))
        .collect::<Result<_, _>>()?;
    let identical = values.iter().all(|v| v.to_bits() == values[0].to_bits());
    let scalar = c.g_at(norm(&z))?;
    let cells = (c.t_used * c.cells_per_unit as f64).round() as usize;
    let sliced = sliced_cell(&z, &nus[1], &law, c.t_used, cells, &CellOptions::default())?.energy;
    let rel = (sliced - scalar).abs() / scalar;
    outcome(
        identical && rel <= 0.02,
        format!(
            "5 normals give {} values ({:.6}); sliced solve {sliced:.6} vs curve {scalar:.6}, rel {rel:.2e} (<= 0.02)",
            if identical { "bitwise identical" } else { "different" },
            values[0]
        ),
    )
}

fn report(n: usize, budget_s: f64, f: impl FnOnce() -> Check) -> bool {
    let clock = Instant::now();
    let res = f();
    let secs = clock.elapsed().as_secs_f64();
    let (pass, detail) = match res {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let within = secs <= budget_s;
    let tag = if pass && within { "PASS" } else { "FAIL" };
    let time = if within {
        format!("{secs:.1} s")
    } else {
        format!("{secs:.1} s, over the {budget_s} s budget")
    };
    println!("{tag} criterion {n}: {detail} [{time}]");
    pass && within
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--regenerate-g0") {
        return match regenerate_g0() {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }
    let mut ok = true;
    ok &= report(1, 5.0, c1_closed_form_envelopes);
    ok &= report(2, 120.0, c2_lamination_sandwich);
    ok &= report(3, 120.0, c3_nonconvexity_gap);
    ok &= report(4, 30.0, c4_recession);
    // 24 log-spaced amplitudes on [0.02, 10], cells of width 1/128, T ladder 16, 32, 64
    let clock = Instant::now();
    let amps: Vec<f64> = (0..24).map(|k| 0.02 * 500f64.powf(k as f64 / 23.0)).collect();
    let curve = gscal_curve(1.0, &amps, &[16.0, 32.0, 64.0], 128);
    let curve_secs = clock.elapsed().as_secs_f64();
    match curve {
        Ok(c) => {
            ok &= report(5, 600.0 - curve_secs, || c5_gscal_properties(&c));
            println!("  (surface density curve: {curve_secs:.1} s, shared by criteria 5, 7 and 8)");
            ok &= report(6, 120.0, c6_solver);
            ok &= report(7, 900.0, || c7_gamma_sweeps(&c));
            ok &= report(8, 60.0, || c8_nu_independence(&c));
        }
        Err(e) => {
            println!("FAIL criterion 5: curve computation failed: {e}");
            ok = false;
            ok &= report(6, 120.0, c6_solver);
            println!("FAIL criterion 7: needs the curve");
            println!("FAIL criterion 8: needs the curve");
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
