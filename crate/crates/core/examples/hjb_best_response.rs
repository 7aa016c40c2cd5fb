// Best response of one agent against a frozen population: the HJB value at
// the start against a Monte-Carlo rollout of the resulting feedback.

use gmfg::control::{auto_space_grid, rollout_cost, solve_hjb, Policy};
use gmfg::grid::TimeGrid;
use gmfg::measure::InitialLaw;
use gmfg::model::{Coefficient, ControlSet, Couplings, FrozenFields, ProblemFunctions};

pub fn run_example() -> gmfg::Result<(f64, f64)> {
    let u = ControlSet::new(-1.0, 1.0)?;
    let f = ProblemFunctions::new(
        Couplings::Structured {
            f0: Coefficient::constant(1.0),
            f: Coefficient::zero(),
            l1: Coefficient::squared_difference(1.0),
            l2: Coefficient::constant(0.5),
            l3: Coefficient::zero(),
            l4: Coefficient::zero(),
        },
        u,
        0.3,
        0.5,
    )?;
    let model = f.compile();
    let law = InitialLaw::Normal { mean: 0.0, std: 0.5 };
    let space = auto_space_grid(&f, &law, 201, 0.0)?;
    let time = TimeGrid::new(0.5, 64)?;
    // population frozen at E y = 0.4, E y^2 = 0.25 for every time node
    let nb = model.n_bases();
    let own: Vec<f64> =
        (0..time.nodes()).flat_map(|_| model.bases().iter().map(|b| b.eval(0.4)).collect::<Vec<_>>()).collect();
    let fields = FrozenFields::from_parts(nb, own, vec![0.0; nb * time.nodes()])?;
    let (value, policy) = solve_hjb(&model, &fields, f.sigma, &space, &time)?;
    let x0 = -0.5;
    let best = rollout_cost(&model, &fields, f.sigma, &time, &policy, x0, 4000, 3)?;
    let idle = rollout_cost(&model, &fields, f.sigma, &time, &Policy::constant(space, time, u, 0.0), x0, 4000, 3)?;
    println!("V(0, {x0}) = {:.4}", value.at(0, x0));
    println!("rollout of best response {:.4} +- {:.4}, of u = 0: {:.4}", best.mean, best.se, idle.mean);
    Ok((value.at(0, x0), best.mean))
}

fn main() {
    run_example().expect("hjb example");
}
