//! Bayesian optimization against grid, random and greedy search at equal budget
//! on randomly drawn objectives.

use ckmerge::baselines::{greedy_search, grid_search, random_search, BaselineConfig};
use ckmerge::harness::SyntheticObjective;
use ckmerge::{optimize, OptConfig, SearchBounds};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn main() -> ckmerge::Result<()> {
    let bounds = SearchBounds::new(0.5)?;
    let budget = 10;
    let seeds = 20u64;
    let mut found: [Vec<f64>; 4] = Default::default();
    let mut regret: [Vec<f64>; 4] = Default::default();
    for seed in 0..seeds {
        let f = SyntheticObjective::gp_sample(seed)?;
        let (_, best) = f.dense_max(0.5, 1.0, 10_001);
        let obj = |x: f64| Ok(f.eval(x));
        let base = BaselineConfig { budget, seed, ..Default::default() };
        let runs = [
            optimize(obj, &bounds, &OptConfig { budget, seed, ..Default::default() })?,
            grid_search(obj, &bounds, &base)?,
            random_search(obj, &bounds, &base)?,
            greedy_search(obj, &bounds, &base)?,
        ];
        for (i, r) in runs.iter().enumerate() {
            found[i].push(r.best_value);
            regret[i].push(best - r.best_value);
        }
    }
    println!("{seeds} gp-sample objectives, budget {budget}");
    for (i, name) in ["bo", "grid", "random", "greedy"].iter().enumerate() {
        println!(
            "{name:>7}: median best {:.4}, median simple regret {:.4}",
            median(found[i].clone()),
            median(regret[i].clone())
        );
    }
    Ok(())
}
