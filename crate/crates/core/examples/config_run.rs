//! Parse a run config, execute it and list the files written.
//!
//! cargo run --release --example config_run -- [config.toml] [out-dir]

use std::path::PathBuf;

use rbrhc::cli::{cmd_run, format_summary, parse_config};

fn main() -> rbrhc::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/clear_road.toml"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("rbrhc-example"));
    let run = parse_config(&config)?;
    println!("resolved config:\n{}", run.config.emit());
    let result = cmd_run(&run, &out)?;
    print!("{}", format_summary(&result.summary));
    for entry in std::fs::read_dir(&out).map_err(|e| rbrhc::Error::Io {
        path: out.display().to_string(),
        message: e.to_string(),
    })?
    .flatten()
    {
        println!("wrote {}", entry.path().display());
    }
    Ok(())
}
