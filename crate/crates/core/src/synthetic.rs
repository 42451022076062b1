//! Simulated P300 data with known discriminative sensors.
//!
//! Positive trials carry a template waveform on each relevant sensor;
//! every feature of every trial gets i.i.d. Gaussian noise.

use ndarray::{Array1, Array2};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_json, SensorLayout, TrialSet};
use crate::error::{Error, Result};

/// Sensors that carry the template on positive trials.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub relevant_sensors: Vec<usize>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub p: usize,
    pub relevant: usize,
    pub r: usize,
    pub n_total: usize,
    pub n_train: usize,
    pub noise_std: f64,
    pub positive_rate: f64,
    /// Defaults to [`default_template`] when absent.
    pub template: Option<Vec<f64>>,
    /// Fixes the relevant sensors instead of drawing them; its length
    /// must equal `relevant`.
    pub relevant_sensors: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p: 16,
            relevant: 8,
            r: 8,
            n_total: 11_000,
            n_train: 1_000,
            noise_std: 0.2,
            positive_rate: 1.0 / 6.0,
            template: None,
            relevant_sensors: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        SimConfig {
            seed,
            ..Default::default()
        }
    }

    /// The same configuration with another seed.
    pub fn with_seed_value(self, seed: u64) -> Self {
        SimConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.r == 0 {
            return Err(Error::invalid("p, r", "sensor and sample counts must be positive"));
        }
        if self.relevant == 0 || self.relevant > self.p {
            return Err(Error::invalid(
                "relevant",
                format!("{} relevant sensors out of {}", self.relevant, self.p),
            ));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::invalid("positive_rate", format!("{} is not in (0, 1)", self.positive_rate)));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std", format!("{} is negative or non-finite", self.noise_std)));
        }
        if self.n_train == 0 || self.n_train >= self.n_total {
            return Err(Error::invalid(
                "n_train",
                format!("{} training trials out of {}", self.n_train, self.n_total),
            ));
        }
        if let Some(t) = &self.template {
            if t.len() != self.r || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("template", format!("expected {} finite values", self.r)));
            }
        }
        if let Some(rel) = &self.relevant_sensors {
            let mut sorted = rel.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.relevant || sorted.iter().any(|&s| s >= self.p) {
                return Err(Error::invalid(
                    "relevant_sensors",
                    format!("expected {} distinct sensors below {}", self.relevant, self.p),
                ));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<SensorLayout> {
        SensorLayout::new(self.p, self.r)
    }

    pub fn resolved_template(&self) -> Vec<f64> {
        self.template.clone().unwrap_or_else(|| default_template(self.r))
    }
}

/// Unit-peak Gaussian bump centred at `round(0.3 r)` with width `r / 4`.
pub fn default_template(r: usize) -> Vec<f64> {
    let center = (0.3 * r as f64).round();
    let width = r as f64 / 4.0;
    (0..r)
        .map(|i| {
            let z = (i as f64 - center) / width;
            (-0.5 * z * z).exp()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub train: TrialSet,
    pub test: TrialSet,
    pub truth: GroundTruth,
}

/// Draws the full dataset, shuffles it, and splits off the first `n_train` trials.
pub fn generate(config: &SimConfig) -> Result<SimulatedData> {
    config.validate()?;
    let layout = config.layout()?;
    let template = config.resolved_template();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut relevant: Vec<usize> = match &config.relevant_sensors {
        Some(fixed) => fixed.clone(),
        None => index::sample(&mut rng, config.p, config.relevant).into_vec(),
    };
    relevant.sort_unstable();

    let d = layout.dim();
    let n = config.n_total;
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::invalid("noise_std", e.to_string()))?;
    let mut features = Array2::zeros((n, d));
    let mut labels = Array1::zeros(n);
    for i in 0..n {
        let positive = rng.random::<f64>() < config.positive_rate;
        labels[i] = if positive { 1.0 } else { -1.0 };
        let mut row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = noise.sample(&mut rng);
        }
        if positive {
            for &s in &relevant {
                for (k, t) in template.iter().enumerate() {
                    row[s * config.r + k] += t;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let all = TrialSet::new(features, labels, layout)?;
    let train = all.select(&order[..config.n_train])?;
    let test = all.select(&order[config.n_train..])?;
    Ok(SimulatedData {
        train,
        test,
        truth: GroundTruth {
            relevant_sensors: relevant,
        },
    })
}
