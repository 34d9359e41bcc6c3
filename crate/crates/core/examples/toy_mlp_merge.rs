//! Train the two-moons MLP, merge its last two snapshots with a weight chosen
//! on the dev split, and report test accuracy.

use ckmerge::harness::{make_toy_checkpoints, SgdConfig, Split, ToyEvaluator, ToyModel, ToyTask};
use ckmerge::{optimize_merge, OptConfig, SearchBounds};

fn main() -> ckmerge::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let task = ToyTask { seed, ..Default::default() };
    let model = ToyModel::default();
    let sgd = SgdConfig::default();
    let ckpts = make_toy_checkpoints(&task, &model, &sgd, seed)?;
    let (prev, curr) = (&ckpts[0], &ckpts[1]);

    let dev = ToyEvaluator::new(&task, model, Split::Dev, 1.0)?;
    let test = dev.on(Split::Test, 1.0);
    println!(
        "snapshots at steps {:?}: dev {:.4} / {:.4}, test {:.4} / {:.4}",
        sgd.snapshot_steps,
        dev.eval(prev)?,
        dev.eval(curr)?,
        test.eval(prev)?,
        test.eval(curr)?
    );

    let bounds = SearchBounds::new(0.5)?;
    for fraction in [0.25, 0.5, 1.0] {
        let dev_part = dev.on(Split::Dev, fraction);
        let cfg = OptConfig { seed, ..Default::default() };
        let (merged, res) = optimize_merge(prev, curr, |c| dev_part.eval(c), &bounds, &cfg)?;
        println!(
            "dev fraction {fraction:.2}: lambda {:.4}, dev {:.4}, test {:.4}",
            res.best_lambda,
            res.best_value,
            test.eval(&merged)?
        );
    }
    Ok(())
}
