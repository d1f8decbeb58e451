//! The attacker running example end to end: residual, φ, and the repair.

mod common;

use std::time::Instant;

use rsm_core::repair::{correct_all, correct_one, srtr, validate_solution, Constraint, Rel, RepairConfig};
use rsm_core::residual::make_residual;
use rsm_core::eval_transition;

const RESIDUAL: &str = r#"if (0.05235987755982988 < param.aimMargin && 50 < param.maxDist && 40 < param.maxDist * 0.49999999999999994 && 5 > 2 + param.kickTimeout) {
  return "KICK";
} else {
  return "GOTO";
}
"#;

#[test]
fn residual_matches_hand_derivation() {
    let res = make_residual(&common::attacker(), &common::tau5(5), &common::example_params(), None, false).unwrap();
    assert_eq!(res.symbols, ["aimMargin", "maxDist", "kickTimeout"]);
    assert_eq!(res.render(), RESIDUAL);
    assert_eq!(res.paths.len(), 2);
    assert_eq!(res.paths[0].guards.len(), 1);
    assert_eq!(res.paths[0].target.as_str(), "KICK");
    assert_eq!(res.paths[1].target.as_str(), "GOTO");
    // π/60 folded at full precision
    assert_eq!(0.05235987755982988, std::f64::consts::PI / 60.0);
}

#[test]
fn phi_has_the_four_atoms() {
    let t = common::attacker();
    let p = common::example_params();
    let syms: Vec<String> = ["aimMargin", "maxDist", "kickTimeout"].map(String::from).to_vec();
    let phi = correct_one(&t, &common::example_trace(), &p, &syms, &common::c5()).unwrap();
    assert!(phi.positive);
    assert_eq!(
        phi.render(&p),
        "(0.05235987755982988 < (0.06283185307179587 + d.aimMargin) && 50 < (80 + d.maxDist) && \
         40 < (80 + d.maxDist) * 0.49999999999999994 && 5 > 2 + (2 + d.kickTimeout))"
    );
    let Constraint::And(atoms) = &phi.constraint else {
        panic!("expected a conjunction, got {:?}", phi.constraint)
    };
    assert_eq!(atoms.len(), 4);
    // `lhs - rhs < 0` for each atom, derived by hand: (coefficients, value at δ = 0)
    let pi = std::f64::consts::PI;
    let half = (pi / 6.0).sin();
    let expect = [
        ([-1.0, 0.0, 0.0], pi / 60.0 - pi / 50.0),
        ([0.0, -1.0, 0.0], 50.0 - 80.0),
        ([0.0, -half, 0.0], 40.0 - 80.0 * half),
        ([0.0, 0.0, 1.0], 2.0 + 2.0 - 5.0),
    ];
    for (a, (coeffs, at_zero)) in atoms.iter().zip(expect) {
        let Constraint::Atom(a) = a else { panic!("{a:?}") };
        assert_eq!(a.rel, Rel::Lt);
        assert_eq!(a.a.coeffs, coeffs, "{a:?}");
        assert!((a.a.eval(&[0.0; 3]) - at_zero).abs() < 1e-12, "{a:?}, want {at_zero}");
    }
}

#[test]
fn repair_moves_only_max_dist() {
    let t = common::attacker();
    let p = common::example_params();
    let trace = common::example_trace();
    let cs = [common::c5()];
    let start = Instant::now();
    let sols = srtr(&t, &p, &trace, &cs, &RepairConfig::default()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(sols.solutions.len(), 1);
    let s = &sols.solutions[0];
    assert_eq!(s.penalties, [0.0]);
    assert_eq!(s.satisfied, [0]);
    assert_eq!(s.adjustments["aimMargin"], 0.0);
    assert_eq!(s.adjustments["kickTimeout"], 0.0);
    assert_eq!(s.adjustments["viewAng"], 0.0);
    let d2 = s.adjustments["maxDist"];
    assert!(d2 > 0.0 && d2 <= 1.0, "δ² = {d2}");
    // ε = 1e-3 on `40 < maxDist/2` needs δ² ≥ 2ε
    assert!((d2 - 0.002).abs() < 1e-9, "δ² = {d2}");
    let e = trace.get(5).unwrap();
    assert_eq!(eval_transition(&t, &e.state, &e.inputs, &e.vars, &s.params).unwrap().as_str(), "KICK");
    assert!(validate_solution(&t, &trace, &cs, s).is_empty());
}

#[test]
fn single_clause_formula() {
    let (f, phis) = correct_all(
        &common::attacker(),
        &common::example_params(),
        &common::example_trace(),
        &[common::c5()],
        &RepairConfig::default(),
    )
    .unwrap();
    assert_eq!(f.deltas, ["aimMargin", "maxDist", "kickTimeout"]);
    assert_eq!(f.clauses.len(), 1);
    assert_eq!(f.clauses[0].weight, 1.0);
    assert_eq!(f.clauses[0].dnf.len(), 1);
    assert_eq!(phis.len(), 1);
}

#[test]
fn larger_penalty_still_repairs() {
    for h in [0.01, 0.5, 10.0] {
        let cfg = RepairConfig { h, ..Default::default() };
        let s = srtr(&common::attacker(), &common::example_params(), &common::example_trace(), &[common::c5()], &cfg).unwrap();
        // repairing costs 0.002, so it pays off for any H above that
        assert_eq!(s.solutions[0].satisfied, [0], "H = {h}");
    }
    let cfg = RepairConfig { h: 0.001, ..Default::default() };
    let s = srtr(&common::attacker(), &common::example_params(), &common::example_trace(), &[common::c5()], &cfg).unwrap();
    assert!(s.solutions[0].satisfied.is_empty());
    assert_eq!(s.solutions[0].adjustments["maxDist"], 0.0);
}
