//! Exact policy risk of every controller on randomized small models, next
//! to the interval bound and Boole's sum of per-step collision mass.
//!
//! cargo run --example discrete_corpus -- [count] [seed]

use rbrhc::controller::{Algorithm, ControllerKind};
use rbrhc::discrete::{exact_policy_risk, random_corpus, ControllerPolicy};

fn main() -> rbrhc::Result<()> {
    let mut args = std::env::args().skip(1);
    let count = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);

    let mut worst = [f64::NEG_INFINITY; 4];
    println!("seed  states T N  bound   rb-rhc  jcc-fh  jcc-rhc pcl-rhc");
    for inst in random_corpus(count, seed) {
        let t = inst.model.horizon;
        let mut line = format!(
            "{:<5} {:<6} {} {}  {:.4} ",
            inst.seed,
            inst.model.n_states(),
            t,
            inst.n,
            inst.irb.total()
        );
        for (i, alg) in Algorithm::ALL.into_iter().enumerate() {
            let kind = ControllerKind::from_irb(alg, &inst.irb, inst.n);
            let r = exact_policy_risk(&inst.model, ControllerPolicy::new(kind, &inst.irb, inst.n, t))?;
            assert!(r.boole + 1e-12 >= r.exact, "Boole's inequality");
            worst[i] = worst[i].max(r.exact - inst.irb.total());
            line.push_str(&format!(" {:.4}", r.exact));
        }
        println!("{line}");
    }
    for (alg, w) in Algorithm::ALL.iter().zip(worst) {
        println!("{alg:<8} max(risk - bound) = {w:+.4}");
    }
    Ok(())
}
