//! The proximal maps behind every penalty, on one small vector.

use groupsvm::prox::{lq_norm, prox_group, prox_l1, regularizer_value};
use groupsvm::{GroupPartition, Penalty};
use ndarray::array;

fn main() -> groupsvm::Result<()> {
    let u = array![3.0, -1.0, 0.5, 0.2, -0.1, 2.0];
    let groups = GroupPartition::new(6, vec![vec![0, 1], vec![2, 3, 4], vec![5]])?;
    let tau = 1.0;

    println!("u            = {u}");
    println!("l1           = {:.4}", prox_l1(u.view(), tau)?.x);
    for q in [1.0, 1.2, 1.5, 2.0] {
        let p = prox_group(u.view(), tau, &groups, q)?;
        let norms: Vec<String> = groups.groups().iter().map(|g| {
            let block: Vec<f64> = g.iter().map(|&j| p.x[j]).collect();
            format!("{:.3}", lq_norm(&block, q))
        }).collect();
        println!("l1-l{q:<3}      = {:.4}  block norms [{}]  inner iterations {}", p.x, norms.join(", "), p.inner_iterations);
    }

    // The middle group is small enough to vanish as a whole.
    let p = prox_group(u.view(), tau, &groups, 2.0)?;
    assert!(groups.group(1).iter().all(|&j| p.x[j] == 0.0));

    let omega = regularizer_value(u.view(), Penalty::GroupLq { q: 2.0 }, &groups)?;
    println!("sum of group l2 norms of u = {omega:.4}");
    Ok(())
}
