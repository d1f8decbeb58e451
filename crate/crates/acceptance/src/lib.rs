//! End-to-end experiments for the repair pipeline. Each `criterion_*`
//! function runs one experiment and reports whether it met its threshold.

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsm_core::corrections::{bundle, fork_continue, Correction, CorrectionKind};
use rsm_core::repair::{
    correct_all, correct_one, solve_oracle, srtr, Assignment, Backend, Constraint, NativeBackend, OracleError,
    RepairConfig, RepairFormula, SmtBackend,
};
use rsm_core::residual::make_residual;
use rsm_core::trace::Trace;
use rsm_core::{eval_transition, Label, ParameterMap, TransitionFn};
use rsm_sim::fixtures::{self, first_transition, KICK_READY};
use rsm_sim::grid::{evaluate_grid, GridSpec};
use rsm_sim::search::{divergence_correction, exhaustive_search, first_divergence, label, Axis};
use rsm_sim::{corpus, run_episode, Simulator, Task};

#[path = "../../core/tests/common/mod.rs"]
mod common;
use common::gen;

#[derive(Clone, Debug)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} — {}", if self.pass { "PASS" } else { "FAIL" }, self.detail)
    }
}

fn run(f: impl FnOnce() -> Result<Verdict, String>) -> Verdict {
    f().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")))
}

fn err(e: impl fmt::Display) -> String {
    e.to_string()
}

fn success(t: &TransitionFn, p: &ParameterMap, g: &GridSpec) -> Result<f64, String> {
    Ok(evaluate_grid(t, p, g).map_err(err)?.aggregate())
}

fn repair(t: &TransitionFn, p: &ParameterMap, parts: &[(Trace, Vec<Correction>)], cfg: &RepairConfig) -> Result<rsm_core::repair::Solutions, String> {
    let refs: Vec<(&Trace, &[Correction])> = parts.iter().map(|(t, c)| (t, c.as_slice())).collect();
    let (trace, cs) = bundle(&refs);
    srtr(t, p, &trace, &cs, cfg).map_err(err)
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

const FIG_RESIDUAL: &str = r#"if (0.05235987755982988 < param.aimMargin && 50 < param.maxDist && 40 < param.maxDist * 0.49999999999999994 && 5 > 2 + param.kickTimeout) {
  return "KICK";
} else {
  return "GOTO";
}
"#;

/// The attacker running example: residual, φ, and the repair.
pub fn criterion_1() -> Verdict {
    run(|| {
        let start = Instant::now();
        let t = common::attacker();
        let p = common::example_params();
        let trace = common::example_trace();
        let res = make_residual(&t, &common::tau5(5), &p, None, false).map_err(err)?;
        let residual_ok = res.render() == FIG_RESIDUAL;
        let phi = correct_one(&t, &trace, &p, &res.symbols, &common::c5()).map_err(err)?;
        let atoms = match &phi.constraint {
            Constraint::And(a) => a.len(),
            _ => 0,
        };
        let cs = [common::c5()];
        let sols = srtr(&t, &p, &trace, &cs, &RepairConfig::default()).map_err(err)?;
        let s = sols.solutions.first().ok_or("no solution")?;
        let d = |k: &str| s.adjustments.get(k).copied().unwrap_or(f64::NAN);
        let d2 = d("maxDist");
        let e = trace.get(5).ok_or("missing τ5")?;
        let out = eval_transition(&t, &e.state, &e.inputs, &e.vars, &s.params).map_err(err)?;
        let elapsed = start.elapsed();
        let pass = residual_ok
            && atoms == 4
            && s.penalties == [0.0]
            && d("aimMargin") == 0.0
            && d("kickTimeout") == 0.0
            && d2 > 0.0
            && d2 <= 1.0
            && out.as_str() == "KICK"
            && elapsed < Duration::from_secs(1);
        Ok(Verdict::new(
            pass,
            format!(
                "residual {}, φ atoms {atoms}, w¹={}, δ²={d2}, output {out}, {:.1} ms",
                if residual_ok { "verbatim" } else { "differs" },
                s.penalties[0],
                elapsed.as_secs_f64() * 1e3
            ),
        ))
    })
}

/// Residual at δ = 0 agrees with the interpreter on random programs.
pub fn criterion_2() -> Verdict {
    run(|| {
        let (mut agree, mut compared, mut interp_errors) = (0, 0, 0);
        for seed in 0..1000u64 {
            let mut r = gen::rng(seed);
            let t = gen::program(&mut r);
            let e = gen::element(&mut r, &t, 0);
            let p = gen::params(&mut r, &t);
            let want = eval_transition(&t, &e.state, &e.inputs, &e.vars, &p);
            let Ok(want) = want else {
                interp_errors += 1;
                continue;
            };
            compared += 1;
            let got = make_residual(&t, &e, &p, None, seed % 2 == 1).ok().and_then(|r| r.select(&p).ok());
            if got == Some(want) {
                agree += 1;
            }
        }
        Ok(Verdict::new(
            agree == compared && compared > 900,
            format!("{agree}/{compared} residuals match ({interp_errors} cases with interpreter errors skipped)"),
        ))
    })
}

fn oracle_instances(seed: u64, n: usize, cfg: &RepairConfig) -> Vec<(RepairFormula, Option<Assignment>)> {
    let mut r = gen::rng(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let i = gen::instance(&mut r, 8);
        let Ok((f, _)) = correct_all(&i.t, &i.p, &i.trace, &i.corrections, cfg) else { continue };
        match solve_oracle(&f) {
            Ok(a) => out.push((f, a)),
            Err(OracleError::TooLarge(_)) => {}
        }
    }
    out
}

fn agrees(f: &RepairFormula, reference: &Option<Assignment>, got: &Option<Assignment>) -> bool {
    match (reference, got) {
        (None, None) => true,
        (Some(a), Some(b)) => {
            f.admits(b, 1e-6)
                && (f.cost(a).total() - f.cost(b).total()).abs() <= 1e-6 + f.margins.epsilon
                && a.satisfied == b.satisfied
        }
        _ => false,
    }
}

/// Solver backends against the exhaustive oracle.
pub fn criterion_3() -> Verdict {
    run(|| {
        let start = Instant::now();
        let insts = oracle_instances(1, 200, &RepairConfig::default());
        let mut backends: Vec<Box<dyn Backend>> = vec![Box::new(NativeBackend::default())];
        let z3 = SmtBackend::z3(Duration::from_secs(30));
        let z3_note = if z3.available() {
            backends.push(Box::new(z3));
            ""
        } else {
            " (z3 not found, native only)"
        };
        let mut parts = Vec::new();
        let mut pass = true;
        for b in &backends {
            let mut ok = 0;
            for (f, a) in &insts {
                if b.solve(f).is_ok_and(|got| agrees(f, a, &got)) {
                    ok += 1;
                }
            }
            pass &= ok == insts.len();
            parts.push(format!("{} {ok}/{}", b.id(), insts.len()));
        }
        let elapsed = start.elapsed();
        pass &= elapsed < Duration::from_secs(300);
        Ok(Verdict::new(
            pass,
            format!("{} agree with the oracle{z3_note}, {:.1} s", parts.join(", "), elapsed.as_secs_f64()),
        ))
    })
}

/// Labelled positions for the exhaustive-search comparison: first-divergence
/// kicks plus "keep approaching" labels half a second earlier.
fn search_labels(t: &TransitionFn, init: &ParameterMap, nominal: &ParameterMap) -> Result<Vec<(Trace, Vec<Correction>)>, String> {
    let g = GridSpec { jitter: 0.3, seed: 11, ..GridSpec::attacker() };
    let (mut kicks, mut waits) = (Vec::new(), Vec::new());
    for (_, s) in g.scenarios().into_iter().step_by(5) {
        let ep = run_episode(t, init, &s).map_err(err)?;
        let Some(c) = first_divergence(t, nominal, init, &ep.trace).map_err(err)? else { continue };
        if c.state.as_str() != "KICK" {
            continue;
        }
        if kicks.len() < 10 {
            kicks.push((ep.trace, vec![c]));
        } else if waits.len() < 3 && c.t >= 30 {
            waits.push((ep.trace, vec![label(c.t - 30, "GOTO", true)]));
        }
        if kicks.len() == 10 && waits.len() == 3 {
            break;
        }
    }
    kicks.extend(waits);
    Ok(kicks)
}

/// Repair from 13 labelled positions against an exhaustive grid search on
/// the same labels.
pub fn criterion_4() -> Verdict {
    run(|| {
        let t = corpus::attacker_simple();
        let init = fixtures::simple_initial();
        let parts = search_labels(&t, &init, &fixtures::simple_nominal())?;
        if parts.len() != 13 {
            return Err(format!("only {} labelled positions", parts.len()));
        }
        let refs: Vec<(&Trace, &[Correction])> = parts.iter().map(|(t, c)| (t, c.as_slice())).collect();
        let (trace, labels) = bundle(&refs);

        let start = Instant::now();
        let sols = srtr(&t, &init, &trace, &labels, &RepairConfig::default()).map_err(err)?;
        let srtr_time = start.elapsed();
        let repaired = &sols.solutions.first().ok_or("no solution")?.params;

        let axes = [
            Axis::linspace("aimMargin", 0.0, 0.2, 41),
            Axis::linspace("maxDist", 0.05, 0.45, 41),
            Axis::linspace("kickTimeout", 0.0, 2.0, 41),
        ];
        let start = Instant::now();
        let best = exhaustive_search(&t, &init, &axes, &trace, &labels);
        let search_time = start.elapsed();

        let held_out = GridSpec::attacker();
        let a = success(&t, repaired, &held_out)?;
        let b = success(&t, &best.params, &held_out)?;
        let base = success(&t, &init, &held_out)?;
        let ratio = search_time.as_secs_f64() / srtr_time.as_secs_f64();
        let pass = (a - b).abs() <= 0.05 && srtr_time < Duration::from_secs(1) && ratio >= 100.0;
        Ok(Verdict::new(
            pass,
            format!(
                "initial {}, repaired {} in {:.1} ms, grid optimum {} ({}/{} labels, {} points) in {:.2} s ({ratio:.0}×)",
                pct(base),
                pct(a),
                srtr_time.as_secs_f64() * 1e3,
                pct(b),
                best.agreement,
                labels.len(),
                best.evaluated,
                search_time.as_secs_f64()
            ),
        ))
    })
}

/// Immediate corrections on the attacker and docker baselines.
pub fn criterion_5() -> Verdict {
    run(|| {
        // attacker: five first-divergence corrections from failing runs
        let t = corpus::attacker();
        let g = GridSpec::attacker();
        let (nominal, base) = (fixtures::attacker_nominal(), fixtures::attacker_baseline());
        let mut parts = Vec::new();
        for (_, s) in g.scenarios().into_iter().step_by(7) {
            if parts.len() == 5 {
                break;
            }
            if let Some((ep, c)) = divergence_correction(&t, &nominal, &base, &s).map_err(err)? {
                parts.push((ep.trace, vec![c]));
            }
        }
        let before = success(&t, &base, &g)?;
        let sols = repair(&t, &base, &parts, &RepairConfig::default())?;
        let after = success(&t, &sols.solutions[0].params, &g)?;
        let n_attacker = parts.len();
        let attacker_ok = n_attacker <= 5 && before <= 0.5 && after - before >= 0.25;

        // docker: one correction per round from the first failing scenario,
        // each round repairing with everything collected so far
        let t = corpus::docker();
        let g = GridSpec::docker();
        let (nominal, base) = (fixtures::docker_nominal(), fixtures::docker_baseline());
        let dock_before = success(&t, &base, &g)?;
        let mut cur = base.clone();
        let mut parts = Vec::new();
        for _ in 0..3 {
            let mut found = None;
            for (_, s) in g.scenarios() {
                if let Some(x) = divergence_correction(&t, &nominal, &cur, &s).map_err(err)? {
                    found = Some(x);
                    break;
                }
            }
            let Some((ep, c)) = found else { break };
            parts.push((ep.trace, vec![c]));
            cur = repair(&t, &base, &parts, &RepairConfig::default())?.solutions[0].params.clone();
        }
        let dock_after = success(&t, &cur, &g)?;
        let docker_ok = dock_before == 0.0 && parts.len() <= 3 && dock_after >= 0.9;
        Ok(Verdict::new(
            attacker_ok && docker_ok,
            format!(
                "attacker {} → {} with {} corrections; docker {} → {} with {} corrections",
                pct(before),
                pct(after),
                n_attacker,
                pct(dock_before),
                pct(dock_after),
                parts.len()
            ),
        ))
    })
}

/// The premature-kick fixture: the failing episode and the step of its kick.
pub fn premature_kick(t: &TransitionFn, p: &ParameterMap, g: &GridSpec) -> Result<(Trace, usize), String> {
    for (_, s) in g.scenarios() {
        let ep = run_episode(t, p, &s).map_err(err)?;
        if ep.success {
            continue;
        }
        if let Some(k) = first_transition(&ep.trace, "KICK") {
            return Ok((ep.trace, k));
        }
    }
    Err("no failing kick".into())
}

/// Nominal corrections at the kicks of `n` successful episodes, picked by a
/// seeded shuffle.
fn nominal_kicks(t: &TransitionFn, p: &ParameterMap, g: &GridSpec, n: usize, seed: u64) -> Result<Vec<(Trace, Vec<Correction>)>, String> {
    let mut good = Vec::new();
    for (_, s) in g.scenarios() {
        let ep = run_episode(t, p, &s).map_err(err)?;
        if let (true, Some(k)) = (ep.success, first_transition(&ep.trace, "KICK")) {
            good.push((ep.trace, k));
        }
    }
    good.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(good
        .into_iter()
        .take(n)
        .map(|(tr, k)| {
            let c = Correction { kind: CorrectionKind::Nominal, t: k, state: Label::new("KICK"), params: None };
            (tr, vec![c])
        })
        .collect())
}

/// One negative correction against a continue correction plus nominals.
pub fn criterion_6() -> Verdict {
    run(|| {
        let t = corpus::attacker();
        let g = GridSpec::attacker();
        let p = fixtures::attacker_premature();
        let cfg = RepairConfig::default();
        let base = success(&t, &p, &g)?;
        let (trace, k) = premature_kick(&t, &p, &g)?;

        let neg = Correction { kind: CorrectionKind::Negative, t: k, state: Label::new("KICK"), params: None };
        let one = repair(&t, &p, &[(trace.clone(), vec![neg])], &cfg)?;
        let d_neg = success(&t, &one.solutions[0].params, &g)? - base;

        let sim = Simulator::new(Task::Goal);
        let mut sess = fork_continue(&sim, &t, &p, &trace, k, "KICK", None).map_err(err)?;
        let stop = sess.run_until(|e| KICK_READY.matches(e), 600).map_err(err)?;
        let cont = sess.finalize(stop).map_err(err)?;
        let n_cont = cont.len();
        let mut parts = vec![(sess.trace().clone(), cont)];
        parts.extend(nominal_kicks(&t, &p, &g, 20, 7)?);
        let both = repair(&t, &p, &parts, &cfg)?;
        let d_both = success(&t, &both.solutions[0].params, &g)? - base;

        Ok(Verdict::new(
            d_neg.abs() < 0.02 && d_both > d_neg,
            format!(
                "premature {}; one negative {:+.1} pp; continue ({n_cont} corrections) + 20 nominal {:+.1} pp",
                pct(base),
                100.0 * d_neg,
                100.0 * d_both
            ),
        ))
    })
}

/// Inputs of trace elements, for picking conflicting labels.
struct Probe {
    dist: f64,
    away: f64,
}

fn probe(e: &rsm_core::trace::TraceElement) -> Option<Probe> {
    let v = |k: &str| e.inputs.get(k).and_then(|v| v.as_vec2());
    let (b, r, bv) = (v("ballLoc")?, v("robotLoc")?, v("ballVel")?);
    let rel = [b[0] - r[0], b[1] - r[1]];
    let dist = rel[0].hypot(rel[1]);
    Some(Probe { dist, away: (bv[0] * rel[0] + bv[1] * rel[1]) / (dist + 0.001) })
}

/// Degraded-baseline corrections: six kicks plus two pairs of labels that
/// cannot both hold (one on `interceptSpeed`, one on `catchSpeed`).
pub fn exploration_fixture(t: &TransitionFn) -> Result<(ParameterMap, Vec<(Trace, Vec<Correction>)>), String> {
    let g = GridSpec::attacker();
    let (nominal, base) = (fixtures::attacker_nominal(), fixtures::attacker_baseline());
    let mut parts = Vec::new();
    let mut pool = Vec::new();
    for (_, s) in g.scenarios().into_iter().step_by(5) {
        let Some((ep, c)) = divergence_correction(t, &nominal, &base, &s).map_err(err)? else { continue };
        if parts.len() < 6 {
            parts.push((ep.trace.clone(), vec![c]));
        }
        pool.push(ep.trace);
    }
    // first element in the pool matching `want`, labelled `state`
    let pick = |want: &dyn Fn(&Probe) -> bool, state: &str| -> Result<(Trace, Vec<Correction>), String> {
        for tr in &pool {
            for e in tr.elements() {
                if matches!(e.state.as_str(), "START" | "KICK" | "END") {
                    continue;
                }
                if probe(e).is_some_and(|p| p.dist > 0.7 && want(&p)) {
                    return Ok((tr.clone(), vec![label(e.t, state, true)]));
                }
            }
        }
        Err(format!("no element for a {state} label"))
    };
    let speed = |k: &str| base.get(k).unwrap_or(0.0);
    let (is, cs) = (speed("interceptSpeed"), speed("catchSpeed"));
    // intercept earlier vs. keep chasing a faster ball
    parts.push(pick(&|p| p.away > is - 0.12 && p.away < is - 0.08, "INTERCEPT")?);
    parts.push(pick(&|p| p.away > is + 0.08 && p.away < is + 0.12, "GOTO")?);
    // catch a slower ball vs. ignore a faster one further away
    parts.push(pick(&|p| -p.away > cs - 0.12 && -p.away < cs - 0.08 && p.dist < 1.0, "CATCH")?);
    parts.push(pick(&|p| -p.away > cs + 0.08 && -p.away < cs + 0.12 && p.dist > 1.2, "GOTO")?);
    Ok((base, parts))
}

/// Solution exploration on conflicting corrections.
pub fn criterion_7() -> Verdict {
    run(|| {
        let t = corpus::attacker();
        let g = GridSpec::attacker();
        let (base, parts) = exploration_fixture(&t)?;
        let n: usize = parts.iter().map(|(_, c)| c.len()).sum();
        let before = success(&t, &base, &g)?;
        let sols = repair(&t, &base, &parts, &RepairConfig { k: 3, ..Default::default() })?;
        let mut rates = Vec::new();
        for s in &sols.solutions {
            rates.push(success(&t, &s.params, &g)?);
        }
        let sets: Vec<&Vec<usize>> = sols.solutions.iter().map(|s| &s.satisfied).collect();
        let distinct = sets.iter().enumerate().all(|(i, a)| sets[i + 1..].iter().all(|b| a != b));
        let pass = n == 10 && sols.solutions.len() == 3 && distinct && rates.iter().all(|&r| r > before);
        let shown: Vec<String> = sols
            .solutions
            .iter()
            .zip(&rates)
            .map(|(s, r)| format!("{:?} {}", s.satisfied.iter().filter(|&&i| i >= 6).collect::<Vec<_>>(), pct(*r)))
            .collect();
        Ok(Verdict::new(
            pass,
            format!(
                "{n} corrections, baseline {}; {} solutions (conflict labels kept, success): {}",
                pct(before),
                sols.solutions.len(),
                shown.join("; ")
            ),
        ))
    })
}

/// Satisfied counts never drop as the penalty grows.
pub fn criterion_8() -> Verdict {
    run(|| {
        let hs = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
        let mut r = gen::rng(6);
        let (mut done, mut monotone, mut varied) = (0, 0, 0);
        while done < 20 {
            let i = gen::instance(&mut r, 8);
            let counts: Option<Vec<usize>> = hs
                .iter()
                .map(|&h| {
                    let cfg = RepairConfig { h, ..Default::default() };
                    let (f, _) = correct_all(&i.t, &i.p, &i.trace, &i.corrections, &cfg).ok()?;
                    let a = solve_oracle(&f).ok()?;
                    Some(a.map_or(0, |a| a.satisfied.iter().filter(|s| **s).count()))
                })
                .collect();
            let Some(counts) = counts else { continue };
            done += 1;
            if counts.windows(2).all(|w| w[0] <= w[1]) {
                monotone += 1;
            }
            if counts[0] < counts[hs.len() - 1] {
                varied += 1;
            }
        }
        Ok(Verdict::new(
            monotone == done,
            format!("{monotone}/{done} instances monotone over H ∈ {hs:?} ({varied} sensitive to H)"),
        ))
    })
}

pub const CRITERIA: [(&str, fn() -> Verdict); 8] = [
    ("running example", criterion_1),
    ("residual soundness", criterion_2),
    ("backend/oracle equivalence", criterion_3),
    ("exhaustive-search parity", criterion_4),
    ("repair improvement", criterion_5),
    ("continue corrections", criterion_6),
    ("exploration", criterion_7),
    ("H-monotonicity", criterion_8),
];
