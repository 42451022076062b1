//! AUC, channel-selection F-measure and the paired Wilcoxon test.

use std::collections::BTreeSet;

use groupsvm::evaluation::{auc, f_measure, wilcoxon_signed_rank};

fn main() -> groupsvm::Result<()> {
    let scores = [0.9, 0.8, 0.35, 0.6, 0.1, 0.35];
    let labels = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
    println!("auc = {:.4}", auc(&scores, &labels)?);

    let relevant: BTreeSet<usize> = (0..8).collect();
    let all: BTreeSet<usize> = (0..16).collect();
    let some: BTreeSet<usize> = [0, 1, 2, 3, 4, 12].into();
    println!("F(all 16 selected) = {:.4}", f_measure(&all, &relevant));
    println!("F(6 selected, 5 right) = {:.4}", f_measure(&some, &relevant));

    // Per-seed AUCs of two methods.
    let a = [0.81, 0.79, 0.83, 0.80, 0.82, 0.78, 0.84, 0.80, 0.81, 0.83];
    let b = [0.79, 0.79, 0.80, 0.78, 0.80, 0.77, 0.80, 0.79, 0.80, 0.80];
    let w = wilcoxon_signed_rank(&a, &b)?;
    println!("wilcoxon: statistic {}, p = {:.5} ({:?}, {} nonzero)", w.statistic, w.p_value, w.method, w.n_nonzero);
    Ok(())
}
