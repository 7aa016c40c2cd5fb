// Nonlinear graphon game by Picard iteration, with the per-iteration trace
// and a finite-difference probe of the contraction constants.

use gmfg::gmfg::{picard_solve, sensitivity_probe, GmfgProblem, PicardOptions};
use gmfg::graphon::Graphon;
use gmfg::measure::InitialLaw;
use gmfg::model::{Basis, Coefficient, ControlSet, Couplings, ProblemFunctions, Term};

pub fn run_example() -> gmfg::Result<usize> {
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
        ControlSet::new(-1.0, 1.0)?,
        0.3,
        0.5,
    )?;
    let law = InitialLaw::Normal { mean: 0.3, std: 0.4 };
    let problem = GmfgProblem::with_auto_space(f, Graphon::uniform_attachment(), law, 4, 32, 121, 1000, 7)?;
    let opts = PicardOptions { tol: 0.16, min_outer: 4, ..Default::default() };
    let sol = picard_solve(&problem, &opts)?;
    for e in &sol.trace {
        println!("iteration {}: distance {:.3e}, ratio {:?}", e.iteration, e.distance, e.ratio);
    }
    let probe = sensitivity_probe(&problem, &sol, 0.05, 1e-6, 50)?;
    println!("c1 ~ {:?}, c2 ~ {:?}", probe.c1, probe.c2);
    Ok(sol.trace.len())
}

fn main() {
    run_example().expect("picard example");
}
