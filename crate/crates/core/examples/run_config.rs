//! Runs a TOML experiment config through the library runner, as the
//! `emergent-qm run` command does.
//!
//! ```text
//! cargo run --example run_config -- configs/pure_decomposition.toml out/
//! ```

use std::path::PathBuf;

use emergent_qm::experiment::{parse_config, run_experiment};

fn main() {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/classical_vs_quantum.toml".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out".into()));
    let text = std::fs::read_to_string(&config).expect("readable config");
    let outcome = parse_config(&text).and_then(|cfg| run_experiment(&cfg, &text, &out));
    match outcome {
        Ok(files) => files.iter().for_each(|f| println!("{}", f.display())),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
