use cohesive_gamma::material_laws::gamma_eps;
use cohesive_gamma::phasefield::*;
use cohesive_gamma::MaterialLaw;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn no_eta() -> EtaRule {
    EtaRule::Power {
        coef: 0.0,
        exponent: 2.0,
    }
}

fn random_state(rng: &mut ChaCha8Rng, grid: &GridSpec, m: usize, eps: f64, near_identity: bool) -> PhaseFieldState {
    let mut s = PhaseFieldState::undamaged(grid, m, eps);
    for k in 0..grid.node_count() {
        let x = grid.coords(k);
        for i in 0..m {
            let base = if near_identity { x[i] } else { 0.0 };
            s.u[k * m + i] = base + rng.gen_range(-0.1..0.1);
        }
        // element averages stay well below the kink of f_eps
        s.v[k] = rng.gen_range(0.05..0.7);
    }
    s
}

fn total(s: &PhaseFieldState, law: &MaterialLaw, g: &GridSpec, cfg: &SolveConfig) -> f64 {
    assemble_energy(s, law, g, cfg).unwrap().total()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps = 0.05;
    assert!(0.7 < gamma_eps(eps, 1.0));
    let mut checked = 0;
    for case in 0..20 {
        let (law, grid, m, near_id) = match case % 4 {
            0 => (
                MaterialLaw::euclidean(1.0, 1, 1).unwrap(),
                GridSpec::bar(1.0, 17),
                1,
                false,
            ),
            1 => (
                MaterialLaw::euclidean(0.7, 2, 2).unwrap(),
                GridSpec::rect(1.0, 0.8, 6, 5),
                2,
                false,
            ),
            2 => (
                MaterialLaw::dist_sq_so(1.0, 2).unwrap(),
                GridSpec::rect(1.0, 1.0, 5, 5),
                2,
                true,
            ),
            _ => (
                MaterialLaw::euclidean(1.5, 1, 2).unwrap(),
                GridSpec::rect(0.5, 1.0, 4, 7),
                1,
                false,
            ),
        };
        let mut cfg = SolveConfig::default();
        if case % 3 == 1 {
            cfg.fidelity_w = Some(VectorField::Constant { value: vec![0.05; m] });
            cfg.fidelity_q = if case % 2 == 0 { 2.0 } else { 3.0 };
        }
        let s = random_state(&mut rng, &grid, m, eps, near_id);
        let (gu, gv) = energy_gradient(&s, &law, &grid, &cfg).unwrap();
        let scale = gu.iter().chain(&gv).fold(0.0f64, |a, b| a.max(b.abs())).max(1e-8);
        let step = 1e-6;
        let fd = |field: usize, k: usize| {
            let mut p = s.clone();
            let mut q = s.clone();
            if field == 0 {
                p.u[k] += step;
                q.u[k] -= step;
            } else {
                p.v[k] += step;
                q.v[k] -= step;
            }
            (total(&p, &law, &grid, &cfg) - total(&q, &law, &grid, &cfg)) / (2.0 * step)
        };
        let mut worst = 0.0f64;
        for k in 0..s.u.len() {
            worst = worst.max((fd(0, k) - gu[k]).abs() / scale);
        }
        for k in 0..s.v.len() {
            worst = worst.max((fd(1, k) - gv[k]).abs() / scale);
        }
        assert!(worst < 1e-5, "case {case}: relative gradient error {worst:e}");
        checked += 1;
    }
    assert_eq!(checked, 20);
}

#[test]
fn energy_trace_is_nonincreasing_on_random_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for run in 0..50 {
        let eps: f64 = rng.gen_range(0.03..0.12);
        let (law, grid, mut cfg) = match run % 5 {
            0 | 1 => {
                let t = rng.gen_range(0.0..3.0);
                let nodes = (20.0 / eps).ceil() as usize + 1;
                (
                    MaterialLaw::euclidean(1.0, 1, 1).unwrap(),
                    GridSpec::bar(1.0, nodes),
                    SolveConfig::bar_loading(t),
                )
            }
            2 => {
                let mut cfg = SolveConfig::default();
                cfg.fidelity_w = Some(VectorField::Affine {
                    matrix: vec![rng.gen_range(-2.0..2.0)],
                    offset: vec![0.0],
                });
                cfg.fidelity_q = rng.gen_range(1.5..3.0);
                (MaterialLaw::euclidean(1.0, 1, 1).unwrap(), GridSpec::bar(1.0, 41), cfg)
            }
            3 => {
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
                            value: vec![a, 0.5 * a],
                        },
                    },
                ];
                (
                    MaterialLaw::euclidean(1.0, 2, 2).unwrap(),
                    GridSpec::rect(1.0, 0.5, 9, 5),
                    cfg,
                )
            }
            _ => {
                let a = rng.gen_range(0.5..2.0);
                let mut cfg = SolveConfig::default();
                cfg.u_bc = vec![
                    DisplacementBc {
                        face: Face::XMin,
                        value: VectorField::Constant { value: vec![0.0, 0.0] },
                    },
                    DisplacementBc {
                        face: Face::XMax,
                        value: VectorField::Affine {
                            matrix: vec![0.0, 0.0, 0.0, 1.0],
                            offset: vec![a, 0.0],
                        },
                    },
                ];
                (
                    MaterialLaw::dist_sq_so(1.0, 2).unwrap(),
                    GridSpec::rect(1.0, 1.0, 6, 6),
                    cfg,
                )
            }
        };
        cfg.max_rounds = 60;
        let init = elastic_state(&law, &grid, &cfg, eps).unwrap();
        let mut start = init.clone();
        if run % 2 == 1 {
            // a random damaged start exercises the damage step from both sides
            for v in start.v.iter_mut() {
                *v = rng.gen_range(0.3..1.0);
            }
            start.energy_parts = assemble_energy(&start, &law, &grid, &cfg).unwrap();
        }
        let (end, report) = alternate_minimize(&start, &law, &grid, &cfg).unwrap();
        for w in report.trace.windows(2) {
            assert!(
                w[1].total() <= w[0].total(),
                "run {run}: {} then {}",
                w[0].total(),
                w[1].total()
            );
        }
        assert!(end.v.iter().all(|v| (0.0..=1.0).contains(v)), "run {run}");
        // Dirichlet nodes keep their data
        for bc in &cfg.u_bc {
            for k in grid.face_nodes(bc.face).unwrap() {
                let want = bc.value.at_node(&grid, k, law.m()).unwrap();
                assert_eq!(&end.u[k * law.m()..(k + 1) * law.m()], &want[..], "run {run}");
            }
        }
    }
}

#[test]
fn recovery_construction_approaches_the_crack_free_limit() {
    let eps = 1e-4;
    let law = MaterialLaw::euclidean(1.0, 1, 1).unwrap();
    let grid = GridSpec::bar(1.0, (20.0 / eps) as usize + 1);
    for xi in [0.5, 1.0, 2.0, 4.0] {
        let cfg = SolveConfig::bar_loading(xi);
        let mut s = elastic_state(&law, &grid, &cfg, eps).unwrap();
        let psi: f64 = xi * xi;
        let v = (1.0 - (2.0 * eps).sqrt() * psi.powf(0.25)).clamp(0.0, 1.0);
        s.v.iter_mut().for_each(|x| *x = v);
        let e = total(&s, &law, &grid, &cfg);
        let target = psi.sqrt();
        assert!((e - target).abs() <= 0.03 * target, "xi = {xi}: {e} vs {target}");
    }
}

#[test]
fn elastic_energy_converges_quadratically_under_refinement() {
    let law = MaterialLaw::euclidean(1.0, 1, 2).unwrap();
    let mut cfg = SolveConfig::default();
    cfg.eta_rule = no_eta();
    let energy = |n: usize| {
        let g = GridSpec::rect(1.0, 1.0, n, n);
        let mut s = PhaseFieldState::undamaged(&g, 1, 0.1);
        for k in 0..g.node_count() {
            let x = g.coords(k);
            s.u[k] = (2.0 * x[0]).sin() * x[1] * x[1];
        }
        total(&s, &law, &g, &cfg)
    };
    let (a, b, c) = (energy(33), energy(65), energy(129));
    let ratio = (a - b) / (b - c);
    assert!((ratio - 4.0).abs() < 0.3, "{a} {b} {c}: ratio {ratio}");
}

#[test]
fn notched_bar_under_large_load_fractures() {
    let eps = 1e-3;
    let law = MaterialLaw::euclidean(1.0, 1, 1).unwrap();
    let grid = GridSpec::bar(1.0, 20_001);
    let mut cfg = SolveConfig::bar_loading(5.0);
    cfg.eta_rule = EtaRule::Power {
        coef: 1.0,
        exponent: 3.0,
    };
    let mut init = elastic_state(&law, &grid, &cfg, eps).unwrap();
    for k in 0..grid.node_count() {
        let x = grid.coords(k)[0];
        init.v[k] = 1.0 - (-(x - 0.5).abs() / (2.0 * eps)).exp();
    }
    minimize_u(&mut init, &law, &grid, &cfg).unwrap();
    let (s, report) = alternate_minimize(&init, &law, &grid, &cfg).unwrap();
    assert!(report.converged);
    assert!(s.energy() <= 1.0 + 0.05, "{}", s.energy());
    assert!(s.v.iter().any(|&v| v < gamma_eps(eps, 1.0)));
}

#[test]
fn run_config_round_trips_and_writes_outputs() {
    let cfg = RunConfig {
        grid: GridSpec::bar(1.0, 51),
        law: cohesive_gamma::material_laws::LawSpec {
            psi: cohesive_gamma::material_laws::BuiltinPsi::EuclideanSquared,
            ell: 1.0,
            m: 1,
            n: 1,
        },
        eps: 0.05,
        solve: SolveConfig::bar_loading(0.2),
    };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let (state, report) = cfg.run().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.csv");
    cfg.write_outputs(&state, &report, &path).unwrap();
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert!(dir.path().join("state.json").exists());
}
