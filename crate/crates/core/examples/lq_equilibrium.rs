// LQ graphon game on the uniform-attachment kernel: mean-field fixed point,
// contraction bound and a Monte-Carlo check of the mean paths.

use gmfg::graphon::Graphon;
use gmfg::lq::{
    lq_consistency_vs_simulation, solve_lq_fixed_point, LqConfig, LqOptions, LqParams, MatrixInput, VectorInput,
};

pub fn run_example() -> gmfg::Result<()> {
    let c = LqConfig {
        a: MatrixInput::Scalar(0.0),
        b: MatrixInput::Scalar(1.0),
        d0: MatrixInput::Scalar(0.0),
        d: MatrixInput::Scalar(0.2),
        sigma: MatrixInput::Scalar(0.5),
        q: MatrixInput::Scalar(1.0),
        r: MatrixInput::Scalar(1.0),
        q_t: MatrixInput::Scalar(0.0),
        gamma0: 0.0,
        gamma: 0.5,
        eta: VectorInput::Scalar(1.0),
        x0: VectorInput::Scalar(1.0),
        horizon: 1.0,
    };
    let p = LqParams::from_config(&c, Graphon::uniform_attachment(), 8, 100)?;
    let sol = solve_lq_fixed_point(&p, &LqOptions::default())?;
    println!("c_lambda = {:.4}, {} iterations, residual {:.2e}", sol.c_lambda, sol.iterations, sol.residual);
    let last = sol.nodes() - 1;
    for a in [0, 7] {
        println!("vertex {a}: mean state at T = {:.5}", sol.xbar_at(a, last)[0]);
    }
    let mc = lq_consistency_vs_simulation(&p, &sol, 2000, 1)?;
    println!("Monte-Carlo deviation {:.2e} (band ratio {:.2})", mc.max_deviation, mc.max_band_ratio);
    Ok(())
}

fn main() {
    run_example().expect("lq example");
}
