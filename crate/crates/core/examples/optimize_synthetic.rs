//! Bayesian optimization of the weight on a synthetic objective, with the
//! GP-Hedge log and a comparison of single acquisition functions.

use ckmerge::harness::SyntheticObjective;
use ckmerge::{optimize, OptConfig, Portfolio, SearchBounds};

fn main() -> ckmerge::Result<()> {
    let f: SyntheticObjective = "two-bump:0.6,0.7,0.9,1.0,0.05".parse()?;
    let bounds = SearchBounds::new(0.5)?;
    let (oracle, peak) = f.dense_max(0.5, 1.0, 100_001);
    println!("objective {f}: dense-grid maximum {peak:.4} at {oracle:.4}");

    let res = optimize(|x| Ok(f.eval(x)), &bounds, &OptConfig::default())?;
    for (i, o) in res.trace.iter().enumerate() {
        println!("eval {:>2}: lambda {:.4} -> {:.4} (best so far {:.4})", i + 1, o.lambda, o.value, res.per_step_best[i]);
    }
    println!("best lambda {:.4}, value {:.4}", res.best_lambda, res.best_value);

    println!("\nhedge weights (EI, PI, UCB) per step:");
    for h in &res.hedge_log {
        println!(
            "  eval {:>2}: [{:.3}, {:.3}, {:.3}] nominees {:?}",
            h.eval_index + 1,
            h.weights[0],
            h.weights[1],
            h.weights[2],
            h.nominees
        );
    }

    println!("\nsingle acquisitions at budget 10:");
    for portfolio in [Portfolio::Ei, Portfolio::Pi, Portfolio::Ucb, Portfolio::Hedge] {
        let cfg = OptConfig { budget: 10, portfolio, ..Default::default() };
        let r = optimize(|x| Ok(f.eval(x)), &bounds, &cfg)?;
        println!("  {portfolio:?}: best {:.4} at {:.4}", r.best_value, r.best_lambda);
    }
    Ok(())
}
