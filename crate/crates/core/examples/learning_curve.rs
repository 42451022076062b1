//! Multi-subject learning curve: joint MTL against one SVM per subject as
//! the number of training trials per subject grows.
//!
//! cargo run --release --example learning_curve -- [seeds]

use groupsvm::protocol::{learning_curve_point, MtlGrid, MtlMethod};
use groupsvm::{SimConfig, SolveSettings};

fn main() -> groupsvm::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed count"));
    let methods = [MtlMethod::Mgsvm2s, MtlMethod::Mgsvm2, MtlMethod::Svm, MtlMethod::SvmFull];
    // A noisier setting than the default so the curve is not flat.
    let config = SimConfig {
        noise_std: 1.5,
        ..Default::default()
    };
    println!("{:>6} {}", "n", methods.map(|m| format!("{:>9}", m.name())).join(" "));
    for n in [50, 100, 200, 400] {
        let mut sums = [0.0; 4];
        for seed in 0..seeds {
            let pts = learning_curve_point(&config, 3, n, seed, &methods, &MtlGrid::default(), &SolveSettings::default())?;
            for (s, p) in sums.iter_mut().zip(&pts) {
                *s += p.mean_auc / seeds as f64;
            }
        }
        println!("{n:>6} {}", sums.map(|a| format!("{a:>9.4}")).join(" "));
    }
    Ok(())
}
