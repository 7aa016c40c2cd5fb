// Scalar Riccati equation against its closed form tanh(T - t).

use gmfg::graphon::Graphon;
use gmfg::lq::{solve_riccati, LqConfig, LqParams, MatrixInput, VectorInput};

pub fn run_example() -> gmfg::Result<f64> {
    let c = LqConfig {
        a: MatrixInput::Scalar(0.0),
        b: MatrixInput::Scalar(1.0),
        d0: MatrixInput::Scalar(0.0),
        d: MatrixInput::Scalar(0.0),
        sigma: MatrixInput::Scalar(0.0),
        q: MatrixInput::Scalar(1.0),
        r: MatrixInput::Scalar(1.0),
        q_t: MatrixInput::Scalar(0.0),
        gamma0: 0.0,
        gamma: 0.0,
        eta: VectorInput::Scalar(0.0),
        x0: VectorInput::Scalar(0.0),
        horizon: 1.0,
    };
    let p = LqParams::from_config(&c, Graphon::constant(0.0), 1, 200)?;
    let pi = solve_riccati(&p)?;
    let mut worst: f64 = 0.0;
    for k in 0..pi.nodes() {
        worst = worst.max((pi.at(k)[(0, 0)] - (1.0 - p.time.t(k)).tanh()).abs());
    }
    println!("Pi(0) = {:.12}, max error vs tanh = {worst:.2e}", pi.at(0)[(0, 0)]);
    Ok(worst)
}

fn main() {
    run_example().expect("riccati example");
}
