//! Mean-field Gaussian variational inference on the raw parameter scale.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::prior::LOG_DENSITY_SENTINEL;
use crate::optimize::{Adam, AdamConfig};
use crate::target::LogDensity;

/// 0.5 · ln(2πe), the entropy of a standard normal.
const NORMAL_ENTROPY: f64 = 1.418_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPosterior {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    /// ELBO estimate at every optimization step.
    #[serde(default)]
    pub elbo_trace: Vec<f64>,
}

impl MeanFieldPosterior {
    pub fn new(mu: Vec<f64>, log_sigma: f64) -> Self {
        let log_sigma = vec![log_sigma; mu.len()];
        Self {
            mu,
            log_sigma,
            elbo_trace: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    /// Closed-form entropy Σ (log σ + ½ log 2πe).
    pub fn entropy(&self) -> f64 {
        self.log_sigma.iter().map(|l| l + NORMAL_ENTROPY).sum()
    }

    fn draw(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .zip(eps)
            .map(|((m, l), e)| m + l.exp() * e)
            .collect()
    }

    /// Write `<stem>.json` (named μ and log σ) and `<stem>_elbo.csv`.
    pub fn save(&self, dir: &Path, stem: &str, names: &[String]) -> Result<()> {
        Error::check_len("dimension names", self.dim(), names.len())?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = VariationalFile {
            dimensions: names
                .iter()
                .zip(self.mu.iter().zip(&self.log_sigma))
                .map(|(n, (m, l))| NamedDimension {
                    name: n.clone(),
                    mu: *m,
                    log_sigma: *l,
                })
                .collect(),
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&file)? + "\n").map_err(|e| Error::io(&path, e))?;
        let path = dir.join(format!("{stem}_elbo.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["step", "elbo"])?;
        for (i, v) in self.elbo_trace.iter().enumerate() {
            w.write_record([(i + 1).to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Read back a posterior written by [`MeanFieldPosterior::save`].
    pub fn load(dir: &Path, stem: &str) -> Result<(Self, Vec<String>)> {
        let path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: VariationalFile = serde_json::from_str(&text)?;
        let mut elbo_trace = Vec::new();
        let path = dir.join(format!("{stem}_elbo.csv"));
        if path.exists() {
            let mut r = csv::Reader::from_path(&path)?;
            for rec in r.records() {
                let rec = rec?;
                elbo_trace.push(
                    rec[1]
                        .parse()
                        .map_err(|_| Error::Data(format!("bad ELBO value in {}", path.display())))?,
                );
            }
        }
        let names = file.dimensions.iter().map(|d| d.name.clone()).collect();
        Ok((
            Self {
                mu: file.dimensions.iter().map(|d| d.mu).collect(),
                log_sigma: file.dimensions.iter().map(|d| d.log_sigma).collect(),
                elbo_trace,
            },
            names,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct VariationalFile {
    dimensions: Vec<NamedDimension>,
}

#[derive(Serialize, Deserialize)]
struct NamedDimension {
    name: String,
    mu: f64,
    log_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViConfig {
    pub steps: usize,
    /// Monte Carlo draws per ELBO gradient.
    pub n_mc: usize,
    pub lr: f64,
    pub init_log_sigma: f64,
    /// Fraction of final steps whose iterates are averaged into the result.
    pub tail_average: f64,
    pub seed: u64,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            n_mc: 5,
            lr: 1e-2,
            init_log_sigma: -2.0,
            tail_average: 0.25,
            seed: 0,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0
            || !(self.lr > 0.0)
            || !self.init_log_sigma.is_finite()
            || !(0.0..1.0).contains(&self.tail_average)
        {
            return Err(Error::Config(format!("invalid variational settings: {self:?}")));
        }
        Ok(())
    }
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Monte Carlo ELBO: mean log density over `n_mc` reparameterized draws plus
/// the closed-form entropy. Sentinel values enter the mean unchanged.
pub fn elbo_estimate<T: LogDensity>(target: &T, q: &MeanFieldPosterior, n_mc: usize, seed: u64) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::Config("the ELBO needs at least one draw".into()));
    }
    Error::check_len("variational family", target.dim(), q.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = (0..n_mc)
        .map(|_| target.log_density(&q.draw(&standard_normals(&mut rng, q.dim()))))
        .sum::<f64>()
        / n_mc as f64;
    Ok(mean + q.entropy())
}

/// Maximize the ELBO over (μ, log σ) with ADAM and reparameterized
/// gradients. Draws landing on the sentinel count in the recorded ELBO but
/// contribute no gradient; a step where every draw failed leaves q unchanged.
/// The result averages the iterates of the last `tail_average` fraction of
/// steps, which removes most of the step-to-step jitter of the final iterate.
pub fn vi_fit<T: LogDensity>(target: &T, init: &[f64], cfg: &ViConfig) -> Result<MeanFieldPosterior> {
    cfg.validate()?;
    Error::check_len("initial mean", target.dim(), init.len())?;
    let dim = init.len();
    let mut q = MeanFieldPosterior::new(init.to_vec(), cfg.init_log_sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let mut adam_mu = Adam::new(dim, adam_cfg);
    let mut adam_ls = Adam::new(dim, adam_cfg);
    let mut g = vec![0.0; dim];
    let n_avg = (cfg.tail_average * cfg.steps as f64).floor() as usize;
    let mut avg_mu = vec![0.0; dim];
    let mut avg_ls = vec![0.0; dim];
    for step in 0..cfg.steps {
        let mut d_mu = vec![0.0; dim];
        let mut d_ls = vec![0.0; dim];
        let mut total = 0.0;
        let mut usable = 0usize;
        for _ in 0..cfg.n_mc {
            let eps = standard_normals(&mut rng, dim);
            let theta = q.draw(&eps);
            let lp = target.log_density_grad(&theta, &mut g);
            total += lp;
            if lp <= LOG_DENSITY_SENTINEL || !g.iter().all(|v| v.is_finite()) {
                continue;
            }
            usable += 1;
            for i in 0..dim {
                d_mu[i] += g[i];
                d_ls[i] += g[i] * eps[i] * q.log_sigma[i].exp();
            }
        }
        q.elbo_trace.push(total / cfg.n_mc as f64 + q.entropy());
        if usable > 0 {
            // ADAM minimizes, so feed the negated ELBO gradient
            let k = usable as f64;
            d_mu.iter_mut().for_each(|v| *v = -*v / k);
            d_ls.iter_mut().for_each(|v| *v = -(*v / k + 1.0));
            adam_mu.step(&mut q.mu, &d_mu);
            adam_ls.step(&mut q.log_sigma, &d_ls);
        }
        if step + n_avg >= cfg.steps {
            for i in 0..dim {
                avg_mu[i] += q.mu[i] / n_avg as f64;
                avg_ls[i] += q.log_sigma[i] / n_avg as f64;
            }
        }
    }
    if n_avg > 0 {
        q.mu = avg_mu;
        q.log_sigma = avg_ls;
    }
    Ok(q)
}

/// `n` independent draws from q.
pub fn vi_sample(q: &MeanFieldPosterior, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| q.draw(&standard_normals(&mut rng, q.dim()))).collect()
}

/// KL(q ‖ N(mean, diag(sd²))) in closed form.
pub fn kl_to_diag_gaussian(q: &MeanFieldPosterior, mean: &[f64], sd: &[f64]) -> f64 {
    q.mu.iter()
        .zip(&q.log_sigma)
        .zip(mean.iter().zip(sd))
        .map(|((m, l), (m2, s2))| {
            let s = l.exp();
            s2.ln() - l + (s * s + (m - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
        })
        .sum()
}
