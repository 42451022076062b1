//! Grid search over lambda and q with 3-fold cross-validation, then a refit
//! on the full training set.

use groupsvm::evaluation::evaluate;
use groupsvm::{cv_select, generate, sensor_groups, GridSpec, Penalty, SimConfig, SolveSettings};

fn main() -> groupsvm::Result<()> {
    let sim = generate(&SimConfig {
        noise_std: 1.0,
        ..SimConfig::with_seed(3)
    })?;
    let groups = sensor_groups(sim.train.layout());
    let grid = GridSpec {
        qs: Some(vec![1.0, 1.5, 2.0]),
        seed: 3,
        ..Default::default()
    };
    let report = cv_select(&sim.train, Penalty::GroupLq { q: 2.0 }, &grid, &groups, &SolveSettings::default())?;

    println!("{:>10} {:>4} {:>9}", "lambda", "q", "mean auc");
    for p in &report.points {
        println!("{:>10.4} {:>4} {:>9.5}", p.lambda, p.q.unwrap(), p.mean_auc);
    }
    let best = report.best();
    let e = evaluate(&report.model, &sim.test, Some(&sim.truth))?;
    println!("chosen lambda {:.4}, q {}", best.lambda, best.q.unwrap());
    println!("test auc {:.4}, sensors {:?}, F {:.3}", e.auc, e.selected_sensors, e.f_measure.unwrap());
    Ok(())
}
