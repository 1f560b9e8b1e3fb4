use std::f64::consts::PI;
use std::fs;

use serde_json::json;
use wulff_core::io::{
    execute, read_report, run_command, to_json, Command, ExperimentConfig, Format, KappaReport, Report,
    EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION,
};
use wulff_core::lab::QuantizeReport;
use wulff_core::NormSpec;

fn family(lambdas: &[f64], grid: Option<usize>) -> serde_json::Value {
    let mut f = json!({
        "N": 2,
        "norm": NormSpec::euclidean(2).unwrap(),
        "centers": [[0.25, 0.0], [-0.25, 0.0]],
        "lambda_schedule": lambdas,
        "V0": 1.0,
        "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
    });
    if let Some(g) = grid {
        f["grid"] = json!(g);
    }
    f
}

fn quantize(lambdas: &[f64], grid: Option<usize>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Command::Quantize);
    c.params = json!({"family": family(lambdas, grid), "radii": [0.1, 0.2], "quad_tol": 1e-10});
    c
}

#[test]
fn kappa_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::new(Command::Kappa);
    c.norm = Some(NormSpec::euclidean(2).unwrap());
    c.out = Some(dir.path().join("kappa.json"));
    let exit = run_command(&c);
    assert_eq!(exit.status, EXIT_OK, "{exit:?}");
    let r: KappaReport = read_report(exit.report_path.as_deref().unwrap()).unwrap();
    assert!((r.kappa - PI).abs() < 1e-10);
    assert!((r.bubble_mass - 8.0 * PI).abs() < 1e-9);
    // The report survives a second serialization unchanged.
    assert_eq!(to_json(&r).unwrap(), fs::read_to_string(dir.path().join("kappa.json")).unwrap());
}

#[test]
fn quantize_report_is_sorted_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quantize(&[1e2, 1e3, 1e4], None);
    let mut texts = Vec::new();
    for name in ["a.json", "b.json"] {
        c.out = Some(dir.path().join(name));
        assert_eq!(run_command(&c).status, EXIT_OK);
        texts.push(fs::read(dir.path().join(name)).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let r: QuantizeReport = read_report(&dir.path().join("a.json")).unwrap();
    for m in &r.members {
        for rep in &m.reports {
            assert!(rep.entries.windows(2).all(|w| w[0].center <= w[1].center));
        }
    }
    // CSV has one row per (λ, radius, center).
    c.out = Some(dir.path().join("q.csv"));
    c.format = Format::Csv;
    assert_eq!(run_command(&c).status, EXIT_OK);
    let csv = fs::read_to_string(dir.path().join("q.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("lambda,radius,mass"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
}

#[test]
fn validation_failures_exit_2_without_report() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ExperimentConfig::from_json("{\"command\": \"kappa\",").is_err());
    // Unknown option.
    let mut c = ExperimentConfig::new(Command::Kappa);
    c.norm = Some(NormSpec::euclidean(2).unwrap());
    c.params = json!({"tolerance": 1e-3});
    c.out = Some(dir.path().join("x.json"));
    let exit = run_command(&c);
    assert_eq!(exit.status, EXIT_VALIDATION);
    assert!(exit.diagnostic.is_some() && !dir.path().join("x.json").exists());
    // Missing output directory.
    let mut c = ExperimentConfig::new(Command::Kappa);
    c.norm = Some(NormSpec::euclidean(2).unwrap());
    c.out = Some(dir.path().join("missing").join("x.json"));
    assert_eq!(run_command(&c).status, EXIT_VALIDATION);
    // Decreasing schedule.
    let c = quantize(&[1e3, 1e2], None);
    assert_eq!(run_command(&c).status, EXIT_VALIDATION);
    // Family norm disagrees with the top-level one.
    let mut c = quantize(&[1e2], None);
    c.norm = Some(NormSpec::q_norm(3.0, 2).unwrap());
    assert_eq!(run_command(&c).status, EXIT_VALIDATION);
}

#[test]
fn unresolved_concentration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quantize(&[10.0, 1e4], Some(65));
    c.out = Some(dir.path().join("q.json"));
    let exit = run_command(&c);
    assert_eq!(exit.status, EXIT_NUMERICAL, "{exit:?}");
    assert!(exit.diagnostic.unwrap().contains("resolve"));
    assert!(!dir.path().join("q.json").exists());
}

#[test]
fn dual_and_bubble_mass_commands() {
    let mut c = ExperimentConfig::new(Command::Dual);
    c.norm = Some(NormSpec::q_norm(3.0, 3).unwrap());
    c.params = json!({"random": 50});
    c.seed = 7;
    match execute(&c).unwrap() {
        Report::Dual(r) => {
            assert_eq!(r.entries.len(), 50);
            assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        }
        other => panic!("{other:?}"),
    }
    let mut c = ExperimentConfig::new(Command::BubbleMass);
    c.norm = Some(NormSpec::q_norm(1.5, 2).unwrap());
    c.params = json!({"lambda": [1.0, 10.0], "V0": 2.0});
    match execute(&c).unwrap() {
        Report::BubbleMass(r) => {
            for e in &r.entries {
                assert!(e.rel_error.abs() < 1e-7, "{e:?}");
            }
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn radial_and_solve_commands() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::new(Command::RadialSolve);
    c.norm = Some(NormSpec::euclidean(2).unwrap());
    c.params = json!({"rhs": "const:4", "R": 1.0, "points": 5});
    match execute(&c).unwrap() {
        // −Δu = 4 on the unit disc: u = 1 − r².
        Report::Radial(r) => {
            for (s, u) in r.r.iter().zip(&r.u) {
                assert!((u - (1.0 - s * s)).abs() < 1e-9, "{s} {u}");
            }
        }
        other => panic!("{other:?}"),
    }
    let mut c = ExperimentConfig::new(Command::Solve);
    c.norm = Some(NormSpec::euclidean(2).unwrap());
    c.params = json!({"grid": 17, "domain": "[-0.5,0.5]^2", "boundary": "bubble:lambda=1"});
    c.out = Some(dir.path().join("u.csv"));
    c.format = Format::Csv;
    assert_eq!(run_command(&c).status, EXIT_OK);
    let u = wulff_core::grid::GridField::read_csv(&dir.path().join("u.csv")).unwrap();
    assert_eq!(u.len(), 17 * 17);
    c.format = Format::Json;
    c.out = None;
    match execute(&c).unwrap() {
        Report::Solve(s) => assert!(s.bubble_error.unwrap() < 1e-2),
        other => panic!("{other:?}"),
    }
    c.params = json!({"grid": 17, "domain": "[-0.5,0.5]^3", "boundary": "const:0"});
    assert_eq!(run_command(&c).status, EXIT_VALIDATION);
}
