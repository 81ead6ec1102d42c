//! End-to-end properties of the flow, the envelope check and the exports.

use dsm_core::export::{to_file, write_path, write_riccati, write_sweep, write_trajectory};
use dsm_core::operator::{cubic_default_solution, cubic_with_solution};
use dsm_core::riccati::{comparison_check, envelope_samples, LinearEnvelope, RiccatiSpec};
use dsm_core::*;

fn diagonal() -> LinearProblem {
    make_diagonal_problem(&[1.0, 0.1, 0.01], &Vector::from(vec![1.0, 1.0, 1.0])).unwrap()
}

#[test]
fn halving_tolerance_converges() {
    let p = cubic_with_solution(1.0, &cubic_default_solution(5)).unwrap();
    let u0 = Vector::zeros(5);
    let s = derive_for_problem(&p, &u0, 2.0, 0.5, 1.0).unwrap();
    let finals: Vec<Vector> = [1e-5, 1e-7, 1e-9, 1e-11]
        .iter()
        .map(|&tol| {
            let cfg = FlowConfig::new(50.0).with_tolerances(tol, tol * 1e-2).with_path_diagnostics(false);
            integrate(&p, &s, &u0, &cfg).unwrap().final_state().clone()
        })
        .collect();
    let reference = finals.last().unwrap();
    let errors: Vec<f64> = finals[..3].iter().map(|u| u.distance(reference)).collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    assert!(errors[2] < 1e-8);
}

#[test]
fn residual_tail_decreases_on_diagonal() {
    let lp = diagonal();
    let p = lp.to_problem().unwrap();
    let s = EpsilonSchedule::from_initial(1.0, 0.9).unwrap();
    let cfg = FlowConfig::new(2e4).with_stride(200).with_path_diagnostics(false);
    let traj = integrate(&p, &s, &Vector::zeros(3), &cfg).unwrap();
    let tail: Vec<f64> = traj.diagnostics.iter().filter(|d| d.eps < 1e-2).map(|d| d.residual).collect();
    assert!(tail.len() > 10);
    assert!(tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)));
    assert!(tail.last().unwrap() < &1e-3);
}

#[test]
fn linear_deviation_respects_linear_bound() {
    // M = 0: g' <= -g + |y| |eps'| / eps
    let lp = diagonal();
    let p = lp.to_problem().unwrap();
    let y_norm = lp.known_solution().unwrap().norm();
    let u0 = Vector::zeros(3);
    let s = derive_for_problem(&p, &u0, y_norm, 0.5, 1.0).unwrap();
    let traj = integrate(&p, &s, &u0, &FlowConfig::new(500.0).with_stride(10)).unwrap();
    let bound = LinearEnvelope::dsm(&s, y_norm, traj.diagnostics[0].g.unwrap());
    for (&t, d) in traj.times.iter().zip(&traj.diagnostics) {
        let b = bound.eval(t, 1e-10).unwrap();
        assert!(d.g.unwrap() <= b * 1.05 + 1e-12, "t = {t}: g = {:?} > {b}", d.g);
        assert!(d.envelope.is_none());
    }
}

#[test]
fn cubic_trajectory_under_dsm_envelope() {
    let y = cubic_default_solution(8);
    let p = cubic_with_solution(1.0, &y).unwrap();
    let u0 = Vector::zeros(8);
    let s = derive_for_problem(&p, &u0, y.norm(), 0.5, 1.0).unwrap();
    let m = s.derivation().unwrap().m;
    let traj = integrate(&p, &s, &u0, &FlowConfig::new(2e3).with_stride(5)).unwrap();
    let g0 = traj.diagnostics[0].g.unwrap();
    let spec = RiccatiSpec::dsm(&s, m, y.norm(), g0).unwrap();
    let samples: Vec<(f64, f64)> = traj.times.iter().zip(&traj.diagnostics).map(|(&t, d)| (t, d.g.unwrap())).collect();
    let report = comparison_check(&samples, &spec, 0.05, 1e-10).unwrap();
    assert!(report.passed, "{report:?}");
    // the Riccati envelope is itself below eps / (2M)
    let env = envelope_samples(&spec, &traj.times, 1e-10).unwrap();
    assert!(env.iter().all(|e| e.envelope < s.eps(e.t) / (2.0 * m)));
}

#[test]
fn exports_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let lp = diagonal();
    let p = lp.to_problem().unwrap();
    let s = EpsilonSchedule::from_initial(1.0, 0.9).unwrap();
    let traj = integrate(&p, &s, &Vector::zeros(3), &FlowConfig::new(10.0)).unwrap();
    to_file(dir.path().join("traj.csv"), |f| write_trajectory(f, &traj, false)).unwrap();
    let points = path(&p, &s, &[0.0, 1.0, 2.0], &NewtonOptions::default()).unwrap();
    to_file(dir.path().join("path.csv"), |f| write_path(f, &points)).unwrap();
    let spec = RiccatiSpec::dsm(&derive_schedule(1.0, 1.0, 0.5).unwrap(), 1.0, 1.0, 0.5).unwrap();
    let times = [0.0, 1.0, 2.0];
    let env = envelope_samples(&spec, &times, 1e-10).unwrap();
    let maj = integrate_majorant(&spec, &times, 1e-9).unwrap();
    to_file(dir.path().join("riccati.csv"), |f| write_riccati(f, &env, &maj)).unwrap();
    let rule = StoppingRule::new(1e-3, s).unwrap();
    let sweep = delta_sweep(&p, &rule, &Vector::zeros(3), &[1e-2], 1, &FlowConfig::new(1.0)).unwrap();
    to_file(dir.path().join("sweep.csv"), |f| write_sweep(f, &sweep)).unwrap();

    let traj_csv = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_eq!(traj_csv.lines().count(), traj.len() + 1);
    assert!(traj_csv.starts_with("t,eps,residual,g,v,envelope,dist_from_u0\n"));
    let path_csv = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert!(path_csv.starts_with("t,eps,V_norm,v,residual,newton_iters\n"));
    assert_eq!(path_csv.lines().count(), 4);
    let ric = std::fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    assert!(ric.starts_with("t,g_majorant,envelope,one_over_mu\n"));
    let sweep_csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep_csv.lines().count(), 2);
}
