//! Acceptance gate: one test per criterion of the built-in verification
//! suite, so `cargo test --test acceptance` prints one pass/fail line each.

use mkv_core::verify;

fn check(id: usize) {
    let r = verify::run_one(id).expect("criterion id is registered");
    println!(
        "criterion {:2} [{}] {} — {} ({:.1}s)",
        r.id,
        if r.passed { "PASS" } else { "FAIL" },
        r.name,
        r.details,
        r.seconds
    );
    assert!(r.passed, "criterion {} ({}) failed: {}", r.id, r.name, r.details);
}

#[test]
fn criterion_01_exact_transport_matches_brute_force() {
    check(1);
}

#[test]
fn criterion_02_concave_distance_function_machinery() {
    check(2);
}

#[test]
fn criterion_03_reflection_coupling_contracts_at_the_analytic_rate() {
    check(3);
}

#[test]
fn criterion_04_synchronous_coupling_obeys_the_squared_growth_bound() {
    check(4);
}

#[test]
fn criterion_05_measure_map_iterates_contract_geometrically() {
    check(5);
}

#[test]
fn criterion_06_phase_transition_of_the_scalar_self_consistent_model() {
    check(6);
}

#[test]
fn criterion_07_subordinator_moment_identities() {
    check(7);
}

#[test]
fn criterion_08_synchronous_distance_bound_under_subordinated_noise() {
    check(8);
}

#[test]
fn criterion_09_resolvent_drift_regularization() {
    check(9);
}

#[test]
fn criterion_10_interaction_thresholds_are_resolution_stable_and_bracketed() {
    check(10);
}

#[test]
fn criterion_11_bitwise_determinism_and_semigroup_splitting() {
    check(11);
}
