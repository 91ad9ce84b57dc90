// Running a configured experiment from code.
//
// Parses a JSON config, runs it into a temporary directory, and prints the
// summary table. The same config works with the `dbmh` binary.

use dbmh::experiment::{parse_config_str, run, summarize};

pub fn run_example() -> dbmh::Result<()> {
    let mut cfg = parse_config_str(
        r#"{
            "experiment": "regularity",
            "seed": 5,
            "n_list": [200],
            "t_list": [0.1, 0.5, 1.0],
            "trials": 3
        }"#,
    )?;
    let dir = std::env::temp_dir().join("dbmh-example");
    cfg.output_dir = Some(dir);
    let record = run(&cfg, None)?;
    print!("{}", summarize(std::slice::from_ref(&record)).text);
    println!("artifacts in {}", record.output_dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> dbmh::Result<()> {
    run_example()
}
