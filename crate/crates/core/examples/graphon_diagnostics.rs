// Step graphons sampled from uniform attachment and their distance to the
// limit, by the sectional deviation and a cut-norm lower bound.

use gmfg::graphon::{cut_distance_to_limit, h11_deviation, sample_step_graphon, CutNormOptions, Graphon};

pub fn run_example() -> gmfg::Result<Vec<f64>> {
    let g = Graphon::uniform_attachment();
    let mut h11 = Vec::new();
    println!("{:>4} {:>12} {:>12}", "M", "h11", "cut bound");
    for m in [4, 8, 16, 32] {
        let gk = sample_step_graphon(&g, m)?;
        let h = h11_deviation(&gk, &g, 8)?;
        let cut = cut_distance_to_limit(&gk, &g, 128, &CutNormOptions::default())?;
        println!("{m:>4} {h:>12.3e} {cut:>12.3e}");
        h11.push(h);
    }
    Ok(h11)
}

fn main() {
    run_example().expect("graphon example");
}
