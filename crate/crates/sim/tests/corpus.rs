use rsm_core::lang::{check, parse_transition_named};
use rsm_core::residual::classify_params;

#[test]
fn corpus_parses_and_checks() {
    for (name, src) in rsm_sim::corpus::ALL {
        let t = parse_transition_named(name, src).unwrap_or_else(|e| panic!("{name}: {e}"));
        check(&t).unwrap_or_else(|e| panic!("{name}: {e}"));
        let c = classify_params(&t, false);
        println!("{name}: {c:?}");
    }
}
