//! Synthetic datasets, their on-disk form and train/validation splits.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::noise::{NoiseKind, NoiseModel};
use crate::model::{ReferenceSystem, Scenario};
use crate::ode::{integrate, SolverConfig, Trajectory};

/// Means below this are raised before count sampling.
const NEGBIN_MEAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mechanistic: Vec<(String, f64)>,
    pub noise: NoiseModel,
    /// Noise-free states at the observation times.
    pub reference: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub times: Vec<f64>,
    /// One row per time, one column per observable.
    pub observations: Vec<Vec<f64>>,
    pub scenario: Scenario,
    pub seed: u64,
    pub noise: NoiseModel,
    pub ground_truth: Option<GroundTruth>,
}

/// Sidecar metadata stored next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    scenario: Scenario,
    seed: u64,
    noise: NoiseModel,
    x0: Vec<f64>,
    ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_y(&self) -> usize {
        self.observations.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.times.len() {
            return Err(Error::Data(format!(
                "{} observation rows for {} times",
                self.observations.len(),
                self.times.len()
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("observation times must be strictly increasing".into()));
        }
        let n_y = self.n_y();
        if self.observations.iter().any(|r| r.len() != n_y) {
            return Err(Error::Data("ragged observation rows".into()));
        }
        if self.observations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite observation".into()));
        }
        if self.noise.kind() == NoiseKind::NegBin
            && self
                .observations
                .iter()
                .flatten()
                .any(|v| *v < 0.0 || v.fract() != 0.0)
        {
            return Err(Error::Data("count observations must be non-negative integers".into()));
        }
        Ok(())
    }

    /// Rows `idx` (in the given order) as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let ground_truth = self.ground_truth.as_ref().map(|g| GroundTruth {
            reference: Trajectory {
                times: idx.iter().map(|&i| g.reference.times[i]).collect(),
                states: idx.iter().map(|&i| g.reference.states[i].clone()).collect(),
                ..g.reference.clone()
            },
            ..g.clone()
        });
        Dataset {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            observations: idx.iter().map(|&i| self.observations[i].clone()).collect(),
            ground_truth,
            ..self.clone()
        }
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_y()).map(|j| format!("y{j}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.observations) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let meta = Metadata {
            scenario: self.scenario,
            seed: self.seed,
            noise: self.noise,
            x0: self.scenario.x0(self.noise.kind()),
            ground_truth: self.ground_truth.clone(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&json_path, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Dataset> {
        let json_path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let meta: Metadata = serde_json::from_str(&text)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut r = csv::Reader::from_path(&csv_path)?;
        let mut times = Vec::new();
        let mut observations = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Data(format!("unparseable value `{s}` in {}", csv_path.display())))
                })
                .collect::<Result<_>>()?;
            let (t, row) = vals
                .split_first()
                .ok_or_else(|| Error::Data(format!("empty row in {}", csv_path.display())))?;
            times.push(*t);
            observations.push(row.to_vec());
        }
        let data = Dataset {
            times,
            observations,
            scenario: meta.scenario,
            seed: meta.seed,
            noise: meta.noise,
            ground_truth: meta.ground_truth,
        };
        data.validate()?;
        Ok(data)
    }
}

/// Noise-free reference states of a scenario at `times`.
pub fn reference_trajectory(scenario: Scenario, x0: &[f64], times: &[f64]) -> Result<Trajectory> {
    let system = ReferenceSystem::new(scenario);
    let traj = integrate(&system, x0, scenario.t_span().0, times, &[], &SolverConfig::reference())?;
    if !traj.success {
        return Err(Error::SimulationFailure(
            traj.failure_reason.unwrap_or_else(|| "reference solve failed".into()),
        ));
    }
    Ok(traj)
}

/// Synthetic dataset for a catalog scenario/noise combination.
pub fn generate_dataset(scenario: Scenario, noise: NoiseModel, seed: u64) -> Result<Dataset> {
    if !scenario.in_catalog(&noise) {
        return Err(Error::Config(format!(
            "noise {noise:?} is not in the catalog for {}; use a custom dataset",
            scenario.name()
        )));
    }
    generate_custom_dataset(scenario, noise, seed)
}

/// Like [`generate_dataset`] but accepts any valid noise parameter.
pub fn generate_custom_dataset(scenario: Scenario, noise: NoiseModel, seed: u64) -> Result<Dataset> {
    noise.validate()?;
    if scenario == Scenario::Quadratic && noise.kind() != NoiseKind::Gaussian {
        return Err(Error::Config("the quadratic scenario uses Gaussian noise".into()));
    }
    let times = scenario.observation_times();
    let x0 = scenario.x0(noise.kind());
    let reference = reference_trajectory(scenario, &x0, &times)?;
    let observed: &[usize] = if scenario.is_seir() { &[2, 3] } else { &[0] };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observations = reference
        .states
        .iter()
        .map(|x| {
            observed
                .iter()
                .map(|&j| match noise {
                    NoiseModel::Gaussian { .. } => noise.sample(x[j], &mut rng),
                    NoiseModel::NegBin { .. } => noise.sample(x[j].max(NEGBIN_MEAN_FLOOR), &mut rng),
                })
                .collect()
        })
        .collect();
    let mechanistic = scenario
        .true_parameters()
        .into_iter()
        .map(|(n, v)| (n.to_string(), v))
        .collect();
    Ok(Dataset {
        times,
        observations,
        scenario,
        seed,
        noise,
        ground_truth: Some(GroundTruth {
            mechanistic,
            noise,
            reference,
        }),
    })
}

/// Validation rows of a random split: round(n·fraction), at least one
/// row on each side.
pub fn split_indices(n: usize, seed: u64, val_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} observations")));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = sample(&mut rng, n, n_val).into_vec();
    val.sort_unstable();
    let train = (0..n).filter(|i| val.binary_search(i).is_err()).collect();
    Ok((train, val))
}

pub fn train_val_split(data: &Dataset, seed: u64, val_fraction: f64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(data.len(), seed, val_fraction)?;
    Ok((data.subset(&train), data.subset(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_shapes() {
        let d = generate_dataset(Scenario::SeirWaves, NoiseModel::Gaussian { sigma: 0.01 }, 1).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(d.n_y(), 2);
        assert_eq!(Scenario::SeirWaves.x0(NoiseKind::Gaussian), vec![0.995, 0.004, 0.001, 0.0]);
        let d = generate_dataset(Scenario::SeirPulse, NoiseModel::NegBin { dispersion: 1.2 }, 2).unwrap();
        assert!(d.observations.iter().flatten().all(|v| v.fract() == 0.0 && *v >= 0.0));
        assert_eq!(d.ground_truth.as_ref().unwrap().reference.states[0].len(), 4);
        let d = generate_dataset(Scenario::Quadratic, NoiseModel::Gaussian { sigma: 0.05 }, 3).unwrap();
        assert_eq!((d.len(), d.n_y()), (12, 1));
        assert!(d.times[0] > 0.0 && *d.times.last().unwrap() == 10.0);
    }

    #[test]
    fn off_catalog_requires_custom() {
        let noise = NoiseModel::Gaussian { sigma: 0.2 };
        assert!(matches!(generate_dataset(Scenario::Quadratic, noise, 1), Err(Error::Config(_))));
        assert!(generate_custom_dataset(Scenario::Quadratic, noise, 1).is_ok());
    }

    #[test]
    fn reproducible_and_conservative() {
        let noise = NoiseModel::Gaussian { sigma: 0.03 };
        let a = generate_dataset(Scenario::SeirPulse, noise, 9).unwrap();
        let b = generate_dataset(Scenario::SeirPulse, noise, 9).unwrap();
        assert_eq!(a, b);
        for x in &a.ground_truth.unwrap().reference.states {
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn split_sizes_and_union() {
        let d = generate_dataset(Scenario::SeirWaves, NoiseModel::Gaussian { sigma: 0.05 }, 4).unwrap();
        let (tr, va) = train_val_split(&d, 17, 0.2).unwrap();
        assert_eq!((tr.len(), va.len()), (24, 6));
        let (tr2, _) = train_val_split(&d, 17, 0.2).unwrap();
        assert_eq!(tr, tr2);
        let mut union: Vec<f64> = tr.times.iter().chain(&va.times).copied().collect();
        union.sort_by(f64::total_cmp);
        assert_eq!(union, d.times);
        assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(train_val_split(&d, 1, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset(Scenario::Quadratic, NoiseModel::Gaussian { sigma: 0.01 }, 5).unwrap();
        d.save(dir.path(), "data").unwrap();
        let back = Dataset::load(dir.path(), "data").unwrap();
        assert_eq!(back, d);
        let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
        assert!(text.starts_with("t,y1\n"));
    }
}
