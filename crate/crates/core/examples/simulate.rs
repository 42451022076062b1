//! Draws a simulated dataset and writes it in the CLI's file formats.
//!
//! cargo run --example simulate -- [seed] [out-dir]

use groupsvm::{generate, SimConfig};

fn main() -> groupsvm::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let sim = generate(&SimConfig::with_seed(seed))?;

    println!("train: {} trials ({} positive)", sim.train.n(), sim.train.n_positive());
    println!("test:  {} trials ({} positive)", sim.test.n(), sim.test.n_positive());
    println!("dim {} = {} sensors x {} samples", sim.train.dim(), sim.train.layout().p(), sim.train.layout().r());
    println!("relevant sensors {:?}", sim.truth.relevant_sensors);

    // Class means on the first relevant sensor show the template.
    let s = sim.truth.relevant_sensors[0];
    let r = sim.train.layout().r();
    for (label, name) in [(1.0, "positive"), (-1.0, "negative")] {
        let rows: Vec<&[f64]> = (0..sim.train.n())
            .filter(|&i| sim.train.labels()[i] == label)
            .map(|i| sim.train.row(i))
            .collect();
        let mean: Vec<String> = (0..r)
            .map(|k| format!("{:+.2}", rows.iter().map(|x| x[s * r + k]).sum::<f64>() / rows.len() as f64))
            .collect();
        println!("{name:>8} mean on sensor {s}: {}", mean.join(" "));
    }

    if let Some(dir) = args.next() {
        std::fs::create_dir_all(&dir).expect("create output dir");
        sim.train.write_csv(format!("{dir}/train.csv"))?;
        sim.test.write_csv(format!("{dir}/test.csv"))?;
        sim.train.layout().save(format!("{dir}/layout.json"))?;
        sim.truth.save(format!("{dir}/truth.json"))?;
        println!("wrote {dir}/{{train,test}}.csv, layout.json, truth.json");
    }
    Ok(())
}
