//! Pairwise merging, weighted and uniform soups, greedy soup, and the file format.

use ckmerge::checkpoint::validate_compat;
use ckmerge::{
    greedy_soup, load_checkpoint, pairwise_merge, save_checkpoint, soup, uniform_soup, Checkpoint, MergeWeights,
    Tensor,
};

fn ckpt(w: [f32; 4], b: f32) -> Checkpoint {
    Checkpoint::new()
        .with_tensor("layer.weight", Tensor::new(vec![2, 2], w.to_vec()).unwrap())
        .unwrap()
        .with_tensor("layer.bias", Tensor::from_vec(vec![b]))
        .unwrap()
}

fn main() -> ckmerge::Result<()> {
    let snapshots = [
        ckpt([1.0, 0.0, 0.0, 1.0], 0.0),
        ckpt([1.2, 0.1, -0.1, 0.9], 0.2),
        ckpt([1.3, 0.1, -0.2, 0.8], 0.3),
    ];

    let merged = pairwise_merge(&snapshots[1], &snapshots[2], 0.7)?;
    println!("0.7 * s2 + 0.3 * s1 weight = {:?}", merged.get("layer.weight").unwrap().data());

    let weighted = soup(&snapshots, &MergeWeights::new(vec![0.2, 0.3, 0.5])?)?;
    println!("weighted soup bias = {:?}", weighted.get("layer.bias").unwrap().data());
    println!("uniform soup bias = {:?}", uniform_soup(&snapshots)?.get("layer.bias").unwrap().data());

    // Greedy soup keeps a snapshot only if averaging it in raises the score.
    let target = 0.25f32;
    let (best, trace) = greedy_soup(&snapshots, |c| {
        Ok(-((c.get("layer.bias").unwrap().data()[0] - target).abs() as f64))
    })?;
    println!("greedy soup members {:?}, score {:.3}", trace.final_members, trace.final_score);
    for step in &trace.considered {
        println!("  snapshot {} score {:.3} accepted {}", step.index, step.score, step.accepted);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("greedy.ckpt");
    save_checkpoint(&best, &path)?;
    let loaded = load_checkpoint(&path)?;
    println!("saved {} bytes, reload bit-exact: {}", std::fs::metadata(&path)?.len(), loaded.bit_eq(&best));

    let other = Checkpoint::new().with_tensor("layer.weight", Tensor::from_vec(vec![1.0]))?;
    println!("compat with a mismatched checkpoint: {}", validate_compat(&best, &other));
    Ok(())
}
