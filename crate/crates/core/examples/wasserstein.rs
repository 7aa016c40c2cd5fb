// W1 between discrete laws and the time-regularity fit of a Brownian ensemble.

use gmfg::grid::TimeGrid;
use gmfg::measure::{holder_modulus, w1, Measure1D, MeasureEnsemble, TestFn};

pub fn run_example() -> gmfg::Result<f64> {
    let mu = Measure1D::new(vec![0.0, 1.0], vec![0.5, 0.5])?;
    let nu = Measure1D::dirac(0.5);
    println!("W1(mu, nu) = {}", w1(&mu, &nu));
    println!("W1(mu, mu + 0.3) = {}", w1(&mu, &mu.shifted(0.3)));

    // exact Brownian marginals on a quantile lattice
    let time = TimeGrid::new(1.0, 64)?;
    let z: Vec<f64> = (1..400)
        .map(|i| {
            let p: f64 = i as f64 / 400.0;
            // logistic approximation to the normal quantile is enough here
            (p / (1.0 - p)).ln() / 1.702
        })
        .collect();
    let e = MeasureEnsemble::from_fn(vec![0.5], time, |_, k| {
        let s = time.t(k).sqrt();
        Measure1D::empirical(&z.iter().map(|x| x * s).collect::<Vec<_>>()).expect("finite samples")
    });
    let fit = holder_modulus(&e, &TestFn::default_family())?;
    println!("fitted Hoelder exponent {:.3} (Brownian motion: 0.5)", fit.eta);
    Ok(fit.eta)
}

fn main() {
    run_example().expect("wasserstein example");
}
