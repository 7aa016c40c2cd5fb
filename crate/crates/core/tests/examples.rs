// Every example in examples/ runs to completion.

macro_rules! example {
    ($m:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $m {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }
    };
}

example!(riccati_scalar, "riccati_scalar.rs");
example!(lq_equilibrium, "lq_equilibrium.rs");
example!(graphon_diagnostics, "graphon_diagnostics.rs");
example!(wasserstein, "wasserstein.rs");
example!(hjb_best_response, "hjb_best_response.rs");
example!(gmfg_picard, "gmfg_picard.rs");
example!(enash_population, "enash_population.rs");
example!(scenario_cli, "scenario_cli.rs");

#[test]
fn riccati_example_matches_tanh() {
    assert!(riccati_scalar::run_example().unwrap() < 1e-8);
}

#[test]
fn lq_example_runs() {
    lq_equilibrium::run_example().unwrap();
}

#[test]
fn graphon_example_decreases() {
    let h = graphon_diagnostics::run_example().unwrap();
    assert!(h.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn wasserstein_example_recovers_brownian_exponent() {
    let eta = wasserstein::run_example().unwrap();
    assert!((eta - 0.5).abs() < 0.05, "{eta}");
}

#[test]
fn hjb_example_value_matches_rollout() {
    let (v, j) = hjb_best_response::run_example().unwrap();
    assert!((v - j).abs() < 0.05, "{v} vs {j}");
}

#[test]
fn picard_example_converges() {
    assert!(gmfg_picard::run_example().unwrap() >= 4);
}

#[test]
fn enash_example_runs() {
    enash_population::run_example().unwrap();
}

#[test]
fn scenario_example_exits_cleanly() {
    assert_eq!(scenario_cli::run_example().unwrap(), 0);
}
