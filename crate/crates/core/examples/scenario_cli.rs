// Scenario file round trip: parse, dispatch a subcommand, read its outputs.

use gmfg::cli::{dispatch, parse_scenario_str, Command, RunOptions};

const SCENARIO: &str = r#"{
    "seed": 1,
    "graphon": {"kind": "uniform_attachment"},
    "problem": {"type": "lq", "a": 0, "b": 1, "d": 0.2, "sigma": 0.5, "q": 1, "r": 1,
                "gamma": 0.5, "eta": 1, "x0": 1, "horizon": 1},
    "grids": {"m": 8, "k": 100}
}"#;

pub fn run_example() -> gmfg::Result<i32> {
    let sc = parse_scenario_str(SCENARIO)?;
    let out = std::env::temp_dir().join(format!("gmfg-scenario-example-{}", std::process::id()));
    let code = dispatch(Command::SolveLq, &sc, &out, &RunOptions::default())?;
    let diag = std::fs::read_to_string(out.join("diagnostics.json"))?;
    println!("exit {code}\n{}", diag.lines().take(8).collect::<Vec<_>>().join("\n"));
    std::fs::remove_dir_all(&out)?;
    Ok(code)
}

fn main() {
    run_example().expect("scenario example");
}
