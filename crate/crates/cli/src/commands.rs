use std::path::PathBuf;
use std::time::Instant;

use log::info;
use udeuq_core::ensemble::{build_ensemble, sample_start_points};
use udeuq_core::likelihood::generate_custom_dataset;
use udeuq_core::mcmc::{chain_diagnostics, nuts_chains, parallel_tempering, warm_start, PtConfig, WarmStartConfig};
use udeuq_core::model::NetInit;
use udeuq_core::vi::vi_fit;
use udeuq_core::{Dataset, LikelihoodModel, UdeProblem};

use crate::config::{MethodConfig, RunConfig};
use crate::{create_dir, write_json, CliError, Layout, Manifest, DATASET_STEM};

/// Write the synthetic dataset of the config into `<output>/data`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let layout = Layout::new(cfg);
    let dir = layout.data_dir();
    create_dir(&dir)?;
    let data = generate_custom_dataset(cfg.scenario, cfg.noise, cfg.seed)?;
    data.save(&dir, DATASET_STEM)?;
    Manifest::new("generate", cfg, start.elapsed().as_secs_f64()).write(&dir)?;
    info!("wrote {} observations to {}", data.len(), dir.display());
    Ok(dir)
}

/// Dataset written by `generate`, checked against the config.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = Layout::new(cfg).data_dir();
    if !dir.join(format!("{DATASET_STEM}.csv")).exists() {
        return Err(CliError::Data(format!(
            "no dataset in {}; run `udeuq generate` with this config first",
            dir.display()
        )));
    }
    let data = Dataset::load(&dir, DATASET_STEM)?;
    if data.scenario != cfg.scenario || data.noise != cfg.noise {
        return Err(CliError::Data(format!(
            "dataset in {} was generated for {} with {:?}, config asks for {} with {:?}; regenerate it",
            dir.display(),
            data.scenario.name(),
            data.noise,
            cfg.scenario.name(),
            cfg.noise
        )));
    }
    Ok(data)
}

pub(crate) fn build_model(cfg: &RunConfig, data: Dataset) -> Result<LikelihoodModel, CliError> {
    let problem = UdeProblem::new(cfg.scenario, cfg.noise.kind(), &cfg.model)?;
    let space = problem.default_space();
    Ok(LikelihoodModel::new(problem, space, data, cfg.solver_config())?)
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub method: &'static str,
    pub dir: PathBuf,
    pub wall_time_s: f64,
}

fn warm(model: &LikelihoodModel, ws: &WarmStartConfig, seed: u64) -> Result<Vec<f64>, CliError> {
    let mut ws = ws.clone();
    ws.fit.seed = seed;
    Ok(warm_start(model, &ws)?)
}

/// Run the configured UQ method and write its artifacts into
/// `<output>/fit/<method>`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutcome, CliError> {
    let start = Instant::now();
    let data = load_dataset(cfg)?;
    let model = build_model(cfg, data)?;
    let layout = Layout::new(cfg);
    let method = cfg.method.name();
    let dir = layout.fit_dir(method);
    create_dir(&dir)?;
    let columns = model.space().column_names();
    let seed = cfg.seed;
    let par = cfg.parallelism;
    info!("fitting {} with {method}", cfg.scenario.name());
    match &cfg.method {
        MethodConfig::Ensemble(e) => {
            let mut e = e.clone();
            e.fit.seed = seed;
            let ens = build_ensemble(&model, &e, par)?;
            info!("{} of {} members accepted", ens.accepted_indices().len(), ens.fits.len());
            ens.save(&dir)?;
        }
        MethodConfig::Nuts(n) => {
            let inits = (0..n.chains as u64)
                .map(|k| warm(&model, &n.warm_start, seed.wrapping_add(k)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut sampler = n.sampler.clone();
            sampler.seed = seed;
            let chains = nuts_chains(&model, &inits, &sampler, par)?;
            for c in &chains {
                c.write_csv(&dir.join(format!("chain_{}.csv", c.chain_id)), &columns)?;
            }
            let diagnostics = if chains.len() >= 2 && sampler.n_samples >= 4 {
                Some(chain_diagnostics(&chains)?)
            } else {
                None
            };
            let per_chain: Vec<_> = chains
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "chain_id": c.chain_id,
                        "divergences": c.divergence_count,
                        "acceptance": c.acceptance_stats,
                    })
                })
                .collect();
            write_json(
                &dir.join("diagnostics.json"),
                &serde_json::json!({ "chains": per_chain, "convergence": diagnostics }),
            )?;
        }
        MethodConfig::Pt(p) => {
            let theta0 = warm(&model, &p.warm_start, seed)?;
            let mut nuts = p.sampler.clone();
            nuts.seed = seed;
            let pt = PtConfig {
                temperatures: p.ladder(),
                nuts,
            };
            let res = parallel_tempering(&model, &theta0, &pt, par)?;
            res.chain.write_csv(&dir.join("chain_0.csv"), &columns)?;
            write_json(
                &dir.join("diagnostics.json"),
                &serde_json::json!({
                    "ladder": res.ladder,
                    "swap_rates": res.ladder.swap_rates(),
                    "rung_accept": res.rung_accept,
                    "rung_jump": res.rung_jump,
                    "divergences": res.chain.divergence_count,
                    "acceptance": res.chain.acceptance_stats,
                }),
            )?;
        }
        MethodConfig::Vi(v) => {
            let init = match &v.warm_start {
                Some(ws) => warm(&model, ws, seed)?,
                None => sample_start_points(model.space(), &model.problem().mlp, 1, seed, NetInit::default())?
                    .pop()
                    .expect("one start"),
            };
            let mut vc = v.vi.clone();
            vc.seed = seed;
            let q = vi_fit(&model, &init, &vc)?;
            q.save(&dir, "posterior", &columns)?;
        }
    }
    let wall = start.elapsed().as_secs_f64();
    Manifest::new("fit", cfg, wall).write(&dir)?;
    info!("{method} finished in {wall:.1} s");
    Ok(FitOutcome {
        method,
        dir,
        wall_time_s: wall,
    })
}
