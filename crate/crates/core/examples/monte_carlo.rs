//! Seeded, paired Monte Carlo comparison of the four controllers.
//!
//! cargo run --release --example monte_carlo -- [scenario] [trials]

use rbrhc::cli::format_summary;
use rbrhc::controller::Algorithm;
use rbrhc::scenario::builtin;
use rbrhc::sim::{paired_t_interval, run_monte_carlo, SimMode};

fn main() -> rbrhc::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "pcl_adversarial".into());
    let trials = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let scenario = builtin(&name).expect("unknown scenario").build()?;
    let start = std::time::Instant::now();
    let run = run_monte_carlo(&scenario, &Algorithm::ALL, &scenario.irb, trials, 0, SimMode::Guarantee)?;
    print!("{}", format_summary(&run.summary));
    let rb = run.costs(Algorithm::RbRhc);
    for alg in [Algorithm::JccFh, Algorithm::JccRhc, Algorithm::PclRhc] {
        let (lo, hi) = paired_t_interval(&rb, &run.costs(alg));
        println!("mean cost rb-rhc - {alg}: 95% interval [{lo:.3}, {hi:.3}]");
    }
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
