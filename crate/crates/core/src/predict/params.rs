use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::dataset::GroundTruth;
use crate::likelihood::NoiseModel;
use crate::model::{ParamSpace, SegmentRole, UdeProblem};
use crate::stats::{mean, quantile_sorted};

const N_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn new(sorted: &[f64], n_bins: usize) -> Self {
        let lower = sorted[0];
        let mut upper = sorted[sorted.len() - 1];
        if upper <= lower {
            upper = lower + 1e-12_f64.max(lower.abs() * 1e-12);
        }
        let width = (upper - lower) / n_bins as f64;
        let mut counts = vec![0; n_bins];
        for &v in sorted {
            let b = (((v - lower) / width) as usize).min(n_bins - 1);
            counts[b] += 1;
        }
        Self { lower, upper, counts }
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let w = (self.upper - self.lower) / self.counts.len() as f64;
        (self.lower + w * b as f64, self.lower + w * (b + 1) as f64)
    }
}

/// Marginal of one scalar parameter on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub q01: f64,
    pub q99: f64,
    pub histogram: Histogram,
    pub truth: Option<f64>,
}

/// Summaries for the mechanistic and noise parameters. The noise parameter is
/// reported as σ (Gaussian) or the dispersion d (negative binomial).
pub fn parameter_posteriors(
    draws: &[Vec<f64>],
    problem: &UdeProblem,
    space: &ParamSpace,
    truth: Option<&GroundTruth>,
) -> Result<Vec<ParameterSummary>> {
    if draws.is_empty() {
        return Err(Error::Contract("parameter summaries need at least one draw".into()));
    }
    let mut out = Vec::new();
    for (seg, range) in space.iter() {
        if seg.role == SegmentRole::Network {
            continue;
        }
        for (k, i) in range.clone().enumerate() {
            let (name, true_value) = match seg.role {
                SegmentRole::Noise => {
                    let name = match problem.noise_from_natural(1.0) {
                        NoiseModel::Gaussian { .. } => "sigma",
                        NoiseModel::NegBin { .. } => "dispersion",
                    };
                    (name.to_string(), truth.map(|g| g.noise.parameter()))
                }
                _ => {
                    let name = if seg.len == 1 { seg.name.clone() } else { format!("{}[{k}]", seg.name) };
                    let tv = truth.and_then(|g| g.mechanistic.iter().find(|(n, _)| *n == name).map(|(_, v)| *v));
                    (name, tv)
                }
            };
            let mut values: Vec<f64> = draws
                .iter()
                .map(|d| {
                    let nat = seg.transform.to_natural(d[i]);
                    match seg.role {
                        SegmentRole::Noise => problem.noise_from_natural(nat).parameter(),
                        _ => nat,
                    }
                })
                .collect();
            values.sort_by(|a, b| a.total_cmp(b));
            out.push(ParameterSummary {
                name,
                mean: mean(&values),
                median: quantile_sorted(&values, 0.5),
                q01: quantile_sorted(&values, 0.01),
                q99: quantile_sorted(&values, 0.99),
                histogram: Histogram::new(&values, N_BINS),
                truth: true_value,
            });
        }
    }
    Ok(out)
}

/// `<stem>_summary.csv` and `<stem>_histograms.csv` under `dir`.
pub fn write_parameter_csvs(dir: &Path, stem: &str, summaries: &[ParameterSummary]) -> Result<()> {
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let path = dir.join(format!("{stem}_summary.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["parameter", "mean", "median", "q01", "q99", "truth"])?;
    for s in summaries {
        w.write_record([
            s.name.clone(),
            s.mean.to_string(),
            s.median.to_string(),
            s.q01.to_string(),
            s.q99.to_string(),
            fmt_opt(s.truth),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(format!("{stem}_histograms.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["parameter", "bin", "lower", "upper", "count"])?;
    for s in summaries {
        for (b, c) in s.histogram.counts.iter().enumerate() {
            let (lo, hi) = s.histogram.bin_edges(b);
            w.write_record([s.name.clone(), b.to_string(), lo.to_string(), hi.to_string(), c.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
