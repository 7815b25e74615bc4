//! Runs a CLI command in-process from a TOML config string.

use adia::cli::{cmd_exact_evolve, Run};

const CONFIG: &str = r#"
[problem]
total_time = 20.0
steps = 20
sweep_total_times = [5.0, 10.0, 20.0, 40.0]
sweep_steps = [5, 10, 20, 40]
"#;

fn main() -> adia::Result<()> {
    let out = std::env::temp_dir().join("adia_config_run");
    let run = Run::new(CONFIG, Some(1), Some(out.clone()))?;
    let manifest = cmd_exact_evolve(&run)?;
    println!("config sha256 {}", manifest.config_sha256);
    for f in &manifest.files {
        println!("{}", out.join(f).display());
    }
    print!("{}", std::fs::read_to_string(out.join("summary.csv"))?);
    Ok(())
}
