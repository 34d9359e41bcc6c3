//! Dev accuracy along the whole merge path of two late snapshots, and the
//! share of weights that beat both endpoints.

use ckmerge::harness::{make_toy_checkpoints, SgdConfig, Split, ToyEvaluator, ToyModel, ToyTask};
use ckmerge::pairwise_merge;

fn main() -> ckmerge::Result<()> {
    let task = ToyTask::default();
    let sgd = SgdConfig { snapshot_steps: vec![800, 900, 1000], ..Default::default() };
    let ckpts = make_toy_checkpoints(&task, &ToyModel::default(), &sgd, 0)?;
    let dev = ToyEvaluator::new(&task, ToyModel::default(), Split::Dev, 1.0)?;

    for pair in ckpts.windows(2) {
        let (a, b) = (dev.eval(&pair[0])?, dev.eval(&pair[1])?);
        let mut beats = 0;
        let mut best = (1.0, b);
        let mut curve = String::new();
        for i in 0..=100 {
            let lambda = i as f64 / 100.0;
            let v = dev.eval(&pairwise_merge(&pair[0], &pair[1], lambda)?)?;
            beats += usize::from(v > a && v > b);
            if v > best.1 {
                best = (lambda, v);
            }
            if i % 10 == 0 {
                curve.push_str(&format!(" {v:.3}"));
            }
        }
        println!(
            "steps {} -> {}: endpoints {a:.4} / {b:.4}, best {:.4} at lambda {:.2}, {}/101 weights beat both",
            pair[0].meta()["step"],
            pair[1].meta()["step"],
            best.1,
            best.0,
            beats
        );
        println!("  curve every 0.1:{curve}");
    }
    Ok(())
}
