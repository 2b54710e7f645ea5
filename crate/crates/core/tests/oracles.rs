use relnav::ranging::measurement_covariance;
use relnav::selftest::{
    covariance_suite, discretization_suite, flipped_offset_sign_covariance, jacobian_suite, lie_suite,
    preint_suite, run_all, SelftestOptions,
};

#[test]
fn lie_suite_within_tolerance_and_fast() {
    let r = lie_suite(1000, 21);
    println!("{}", r.line());
    assert!(r.passed);
    assert!(r.elapsed.as_secs_f64() < 5.0);
}

#[test]
fn discretization_below_micrometre() {
    let r = discretization_suite();
    println!("{}", r.line());
    assert!(r.passed);
}

#[test]
fn covariance_matches_monte_carlo() {
    let r = covariance_suite(1_000_000, 5, measurement_covariance);
    println!("{}", r.line());
    assert!(r.passed);
}

#[test]
fn covariance_suite_rejects_flipped_offset_sign() {
    let r = covariance_suite(200_000, 5, flipped_offset_sign_covariance);
    println!("{}", r.line());
    assert!(!r.passed);
}

#[test]
fn preint_and_jacobians() {
    for r in [preint_suite(100, 8), jacobian_suite(100, 8)] {
        println!("{}", r.line());
        assert!(r.passed);
    }
}

#[test]
fn run_all_reports_every_suite() {
    let opts = SelftestOptions {
        covariance_samples: 20_000,
        lie_samples: 50,
        preint_windows: 5,
        jacobian_cases: 5,
        ..Default::default()
    };
    let names: Vec<&str> = run_all(&opts, measurement_covariance).iter().map(|r| r.name).collect();
    assert_eq!(names, ["lie", "discretization", "covariance", "preint", "jacobians"]);
}
