// The limit strategies on finite clustered populations: pathwise gaps
// between the interacting, law-coupled and limit systems, and the cost gain
// available to one deviating agent.

use gmfg::gmfg::{picard_solve, GmfgProblem, PicardOptions};
use gmfg::graphon::Graphon;
use gmfg::measure::InitialLaw;
use gmfg::model::{Basis, Coefficient, ControlSet, Couplings, ProblemFunctions, Term};
use gmfg::popsim::{build_population, deviation_metrics, Enash, EnashOptions};

pub fn run_example() -> gmfg::Result<()> {
    let f = ProblemFunctions::new(
        Couplings::Structured {
            f0: Coefficient::from_terms(vec![
                Term::new(0.5, Basis::One, Basis::One, Basis::One),
                Term::new(0.3, Basis::One, Basis::One, Basis::Tanh { k: 1.0 }),
            ]),
            f: Coefficient::constant(1.0),
            l1: Coefficient::squared_difference(1.0),
            l2: Coefficient::constant(0.5),
            l3: Coefficient::zero(),
            l4: Coefficient::constant(0.5),
        },
        ControlSet::new(-1.0, 1.0)?,
        0.3,
        0.5,
    )?;
    let law = InitialLaw::Normal { mean: 0.5, std: 0.3 };
    let problem = GmfgProblem::with_auto_space(f, Graphon::uniform_attachment(), law, 8, 32, 121, 1000, 5)?;
    let sol = picard_solve(&problem, &PicardOptions { tol: 0.16, ..Default::default() })?;
    let opts = EnashOptions { replications: 6, ..Default::default() };
    for (m, size) in [(2, 10), (4, 20)] {
        let pop = build_population(&problem.graphon, m, &vec![size; m], &problem.initial, 5)?;
        let en = Enash::new(&problem, &sol, &pop, 1e-6, 100)?;
        let r = deviation_metrics(&en, &opts)?;
        println!(
            "N = {:>3}: eps1 {:.2e}  eps2 {:.2e}  eps3 {:.2e}  gap {:.2e} (+- {:.1e})",
            r.n, r.eps1.value, r.eps2.value, r.eps3.value, r.gap.value, r.gap.se
        );
    }
    Ok(())
}

fn main() {
    run_example().expect("enash example");
}
