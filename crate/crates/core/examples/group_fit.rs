//! Plain, sparse and group-sparse fits at one lambda on simulated data.
//!
//! cargo run --release --example group_fit -- [lambda]

use groupsvm::evaluation::evaluate;
use groupsvm::{fit, generate, sensor_groups, RegularizerSpec, SimConfig, SolveSettings};

fn main() -> groupsvm::Result<()> {
    let lambda: f64 = std::env::args().nth(1).map_or(1.0, |s| s.parse().expect("lambda"));
    let sim = generate(&SimConfig::with_seed(1))?;
    let groups = sensor_groups(sim.train.layout());
    let settings = SolveSettings::default();
    println!("relevant sensors {:?}", sim.truth.relevant_sensors);

    let specs = [
        ("l2", RegularizerSpec::l2(lambda)?),
        ("l1", RegularizerSpec::l1(lambda)?),
        ("l1-l2", RegularizerSpec::group_l2(lambda)?),
        ("l1-l1.5", RegularizerSpec::group_lq(1.5, lambda)?),
    ];
    for (name, spec) in specs {
        let model = fit(&sim.train, &spec, &groups, &settings)?;
        let e = evaluate(&model, &sim.test, Some(&sim.truth))?;
        let d = &model.diagnostics;
        println!(
            "{name:>8}: auc {:.4}  sel {:>5.1}%  F {:.3}  {} iterations ({:?})  sensors {:?}",
            e.auc,
            100.0 * e.selection_rate,
            e.f_measure.unwrap_or(f64::NAN),
            d.iterations,
            d.stop_reason,
            e.selected_sensors
        );
        assert!(d.is_monotone(1e-12));
    }
    Ok(())
}
