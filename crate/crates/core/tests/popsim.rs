// Finite-population properties: common random numbers, exchangeability and
// the CLT rate of the intra-cluster perturbation.

use gmfg::gmfg::{picard_solve, GmfgProblem, GmfgSolution, PicardOptions};
use gmfg::graphon::Graphon;
use gmfg::measure::InitialLaw;
use gmfg::model::{Basis, Coefficient, ControlSet, Couplings, ProblemFunctions, Term};
use gmfg::popsim::{build_population, deviation_metrics, Enash, EnashOptions};

fn solved() -> (GmfgProblem, GmfgSolution) {
    let tanh = |c0: f64, c1: f64| {
        Coefficient::from_terms(vec![
            Term::new(c0, Basis::One, Basis::One, Basis::One),
            Term::new(c1, Basis::One, Basis::One, Basis::Tanh { k: 1.0 }),
        ])
    };
    let f = ProblemFunctions::new(
        Couplings::Structured {
            f0: tanh(0.5, 0.3),
            f: tanh(1.0, 0.5),
            l1: Coefficient::squared_difference(1.0),
            l2: Coefficient::constant(0.5),
            l3: Coefficient::squared_difference(0.5),
            l4: Coefficient::constant(0.5),
        },
        ControlSet::new(-1.0, 1.0).unwrap(),
        0.3,
        0.5,
    )
    .unwrap();
    let law = InitialLaw::Normal { mean: 0.5, std: 0.4 };
    let p = GmfgProblem::with_auto_space(f, Graphon::uniform_attachment(), law, 4, 32, 121, 2000, 21).unwrap();
    let sol = picard_solve(&p, &PicardOptions { tol: 0.12, ..Default::default() }).unwrap();
    (p, sol)
}

#[test]
fn exchangeable_within_clusters() {
    let (p, sol) = solved();
    let pop = build_population(&p.graphon, 1, &[6], &p.initial, 8).unwrap();
    let en = Enash::new(&p, &sol, &pop, 1e-6, 100).unwrap();
    let laws = en.system_c_laws(1e-6, 100).unwrap();
    let reps = 300;
    let last = p.time.steps();
    let mut sums = vec![[0.0f64; 3]; pop.n()];
    let mut sq = vec![[0.0f64; 3]; pop.n()];
    for r in 0..reps {
        let noise = pop.noise(r, p.time.steps());
        let runs = [en.run_system_a(&noise), en.run_system_c(&noise, &laws), en.run_system_d(&noise)];
        for i in 0..pop.n() {
            for (s, run) in runs.iter().enumerate() {
                let x = run.path(i)[last];
                sums[i][s] += x;
                sq[i][s] += x * x;
            }
        }
    }
    let n = reps as f64;
    for s in 0..3 {
        let means: Vec<f64> = sums.iter().map(|v| v[s] / n).collect();
        let var = sq.iter().zip(&means).map(|(q, m)| q[s] / n - m * m).fold(0.0, f64::max);
        let band = 4.0 * (2.0 * var / n).sqrt();
        for a in &means {
            for b in &means {
                assert!((a - b).abs() < band, "system {s}: {a} vs {b}, band {band}");
            }
        }
    }
}

#[test]
fn intra_cluster_perturbation_has_clt_rate() {
    let (p, sol) = solved();
    let opts = EnashOptions { replications: 12, ..Default::default() };
    let mut pts = Vec::new();
    for size in [25, 100, 400] {
        let pop = build_population(&p.graphon, 1, &[size], &p.initial, 3).unwrap();
        let en = Enash::new(&p, &sol, &pop, 1e-6, 100).unwrap();
        let r = deviation_metrics(&en, &opts).unwrap();
        pts.push((size as f64, r.perturbation.delta_f0));
    }
    let slope = gmfg::cli::loglog_slope(&pts).unwrap();
    assert!((slope + 0.5).abs() <= 0.2, "slope {slope}, {pts:?}");
}

#[test]
fn gmfg_policy_deviation_is_bit_identical() {
    let (p, sol) = solved();
    let pop = build_population(&p.graphon, 3, &[3, 4, 5], &p.initial, 2).unwrap();
    let en = Enash::new(&p, &sol, &pop, 1e-6, 100).unwrap();
    for rep in 0..3 {
        let noise = pop.noise(rep, p.time.steps());
        let a = en.run_system_a(&noise);
        for iota in [0, 5, 11] {
            assert_eq!(a, en.run_system_b(&noise, iota, en.policy(iota)).unwrap());
        }
    }
}
