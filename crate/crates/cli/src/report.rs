use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use udeuq_core::ensemble::{waterfall, Ensemble};
use udeuq_core::likelihood::dataset::reference_trajectory;
use udeuq_core::mcmc::read_samples_csv;
use udeuq_core::predict::svg::{band_chart, histogram_chart, line_chart, waterfall_chart, write_svg};
use udeuq_core::predict::{
    parameter_posteriors, uniform_grid, write_bands_csv, write_parameter_csvs, BandKind, PosteriorSamples,
    PredictionBand, Predictor, SampleMethod,
};
use udeuq_core::vi::{vi_sample, MeanFieldPosterior};
use udeuq_core::{LikelihoodModel, Trajectory};

use crate::commands::{build_model, load_dataset};
use crate::config::RunConfig;
use crate::{create_dir, write_json, CliError, Layout, METHODS};

/// Time-averaged band widths and reference coverage of one method and state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub state: String,
    /// (level, mean width) of the epistemic bands.
    pub widths: Vec<(f64, f64)>,
    /// Share of grid points where the noise-free reference lies inside the
    /// widest epistemic band.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub dir: PathBuf,
    pub methods: Vec<String>,
    pub comparison: Vec<ComparisonRow>,
}

struct Loaded {
    method: &'static str,
    samples: PosteriorSamples,
    elbo: Vec<f64>,
    waterfall: Option<(Vec<(usize, f64)>, f64)>,
}

/// Evenly spaced subset of at most `max` draws.
fn thin(draws: Vec<Vec<f64>>, max: usize) -> Vec<Vec<f64>> {
    let n = draws.len();
    if n <= max {
        return draws;
    }
    (0..max).map(|i| draws[i * n / max].clone()).collect()
}

fn check_columns(path: &Path, got: &[String], want: &[String]) -> Result<(), CliError> {
    if got != want {
        return Err(CliError::Data(format!(
            "{} has columns for a different parameter layout; refit with this config",
            path.display()
        )));
    }
    Ok(())
}

fn chain_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let idx = name.strip_prefix("chain_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((idx, e.path()))
        })
        .collect();
    files.sort();
    Ok(files.into_iter().map(|f| f.1).collect())
}

fn load_method(method: &'static str, dir: &Path, cfg: &RunConfig, model: &LikelihoodModel) -> Result<Option<Loaded>, CliError> {
    let columns = model.space().column_names();
    let max = cfg.report.max_draws;
    let loaded = match method {
        "ensemble" => {
            if !dir.join("members.jsonl").exists() {
                return Ok(None);
            }
            let ens = Ensemble::load(dir)?;
            Loaded {
                method,
                samples: PosteriorSamples::from_ensemble(&ens),
                elbo: Vec::new(),
                waterfall: Some((waterfall(&ens.fits), ens.threshold / 2.0)),
            }
        }
        "nuts" | "pt" => {
            let files = chain_files(dir)?;
            if files.is_empty() {
                return Ok(None);
            }
            let mut draws = Vec::new();
            for f in &files {
                let (cols, d, _) = read_samples_csv(f)?;
                check_columns(f, &cols, &columns)?;
                draws.extend(d);
            }
            Loaded {
                method,
                samples: PosteriorSamples::new(thin(draws, max), SampleMethod::Mcmc),
                elbo: Vec::new(),
                waterfall: None,
            }
        }
        "vi" => {
            if !dir.join("posterior.json").exists() {
                return Ok(None);
            }
            let (q, names): (MeanFieldPosterior, _) = MeanFieldPosterior::load(dir, "posterior")?;
            check_columns(&dir.join("posterior.json"), &names, &columns)?;
            Loaded {
                method,
                samples: PosteriorSamples::new(vi_sample(&q, cfg.report.vi_draws, cfg.seed), SampleMethod::Vi),
                elbo: q.elbo_trace,
                waterfall: None,
            }
        }
        _ => unreachable!("unknown method {method}"),
    };
    Ok(Some(loaded))
}

fn coverage(band: &PredictionBand, state: usize, level: f64, reference: &Trajectory) -> f64 {
    let b = band.states[state].level(level).expect("level present");
    let hits = reference
        .states
        .iter()
        .enumerate()
        .filter(|(i, x)| b.lower[*i] <= x[state] && x[state] <= b.upper[*i])
        .count();
    hits as f64 / reference.states.len() as f64
}

fn column(traj: &Trajectory, j: usize) -> Vec<f64> {
    traj.states.iter().map(|x| x[j]).collect()
}

fn write_comparison(path: &Path, levels: &[f64], rows: &[ComparisonRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(udeuq_core::Error::from)?;
    let widest = levels.iter().copied().fold(0.0, f64::max);
    let mut header = vec!["method".to_string(), "state".to_string()];
    header.extend(levels.iter().map(|l| format!("width_{l}")));
    header.push(format!("coverage_{widest}"));
    w.write_record(&header).map_err(udeuq_core::Error::from)?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.state.clone()];
        rec.extend(r.widths.iter().map(|(_, v)| v.to_string()));
        rec.push(r.coverage.map(|c| c.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(udeuq_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Bands, parameter summaries, charts and a method comparison for every
/// method with artifacts under `<output>/fit`.
pub fn cmd_report(cfg: &RunConfig) -> Result<ReportOutcome, CliError> {
    let data = load_dataset(cfg)?;
    let model = build_model(cfg, data)?;
    let layout = Layout::new(cfg);
    let mut loaded = Vec::new();
    for m in METHODS {
        if let Some(l) = load_method(m, &layout.fit_dir(m), cfg, &model)? {
            loaded.push(l);
        }
    }
    if loaded.is_empty() {
        return Err(CliError::Data(format!(
            "no fit artifacts under {}; run `udeuq fit` first",
            layout.root.join("fit").display()
        )));
    }
    let dir = layout.report_dir();
    create_dir(&dir)?;

    let r = &cfg.report;
    let problem = model.problem();
    let data = model.data();
    let predictor = Predictor::from_model(&model).with_parallelism(cfg.parallelism);
    let grid = uniform_grid(problem.t_span, r.grid_points);
    let widest = r.levels.iter().copied().fold(0.0, f64::max);
    let x0_new = r.x0_override.clone();
    if let Some(x0) = &x0_new {
        if x0.len() != problem.n_x {
            return Err(CliError::Config(format!(
                "x0_override has {} entries, the model has {} states",
                x0.len(),
                problem.n_x
            )));
        }
    }
    let truth = data.ground_truth.as_ref();
    let reference = match truth {
        Some(_) => Some(reference_trajectory(data.scenario, &problem.x0, &grid)?),
        None => None,
    };
    let reference_new = match (&x0_new, truth) {
        (Some(x0), Some(_)) => Some(reference_trajectory(data.scenario, x0, &grid)?),
        _ => None,
    };

    let mut comparison = Vec::new();
    let mut summary = Vec::new();
    for l in &loaded {
        let m = l.method;
        info!("reporting {m} ({} draws)", l.samples.len());
        let epi = predictor.trajectory_bands(&l.samples, None, &grid, &r.levels, BandKind::EpistemicOnly, 0, cfg.seed)?;
        let full = predictor.trajectory_bands(
            &l.samples,
            None,
            &grid,
            &r.levels,
            BandKind::FullPredictive,
            r.noise_draws,
            cfg.seed,
        )?;
        write_bands_csv(&dir.join(format!("bands_{m}.csv")), &[&epi, &full])?;

        if problem.scenario.is_seir() {
            let beta = predictor.beta_bands(&l.samples, &grid, &r.levels)?;
            beta.write_csv(&dir.join(format!("beta_{m}.csv")))?;
            if r.charts {
                write_svg(
                    &dir.join(format!("{m}_beta.svg")),
                    &band_chart(&format!("{m}: beta(t)"), &grid, &beta.states[0], None, None),
                )?;
            }
        }

        let params = parameter_posteriors(&l.samples.draws, problem, model.space(), truth)?;
        write_parameter_csvs(&dir, &format!("params_{m}"), &params)?;

        let new_ic = match &x0_new {
            Some(x0) => {
                let e = predictor.predict_new_ic(&l.samples, x0, &grid, &r.levels, BandKind::EpistemicOnly, 0, cfg.seed)?;
                let f = predictor.predict_new_ic(&l.samples, x0, &grid, &r.levels, BandKind::FullPredictive, r.noise_draws, cfg.seed)?;
                write_bands_csv(&dir.join(format!("new_ic_{m}.csv")), &[&e, &f])?;
                Some(e)
            }
            None => None,
        };

        for (j, s) in epi.states.iter().enumerate() {
            comparison.push(ComparisonRow {
                method: m.to_string(),
                state: s.name.clone(),
                widths: r.levels.iter().map(|&lv| (lv, s.mean_width(lv).expect("level present"))).collect(),
                coverage: reference.as_ref().map(|t| coverage(&epi, j, widest, t)),
            });
        }

        if r.charts {
            for (j, s) in epi.states.iter().enumerate() {
                let obs = problem.observed.iter().position(|&k| k == j).map(|col| {
                    let y: Vec<f64> = data.observations.iter().map(|row| row[col]).collect();
                    (data.times.clone(), y)
                });
                let refc = reference.as_ref().map(|t| column(t, j));
                let svg = band_chart(
                    &format!("{m}: {}", s.name),
                    &grid,
                    s,
                    obs.as_ref().map(|(t, y)| (t.as_slice(), y.as_slice())),
                    refc.as_ref().map(|y| (grid.as_slice(), y.as_slice())),
                );
                write_svg(&dir.join(format!("{m}_{}.svg", s.name)), &svg)?;
                if let Some(b) = &new_ic {
                    let refn = reference_new.as_ref().map(|t| column(t, j));
                    let svg = band_chart(
                        &format!("{m}: {} (new initial state)", s.name),
                        &grid,
                        &b.states[j],
                        None,
                        refn.as_ref().map(|y| (grid.as_slice(), y.as_slice())),
                    );
                    write_svg(&dir.join(format!("{m}_new_ic_{}.svg", s.name)), &svg)?;
                }
            }
            for p in &params {
                write_svg(&dir.join(format!("{m}_hist_{}.svg", p.name)), &histogram_chart(p))?;
            }
            if let Some((w, thr)) = &l.waterfall {
                write_svg(&dir.join("ensemble_waterfall.svg"), &waterfall_chart(w, *thr))?;
            }
            if !l.elbo.is_empty() {
                let steps: Vec<f64> = (0..l.elbo.len()).map(|i| i as f64).collect();
                write_svg(
                    &dir.join("vi_elbo.svg"),
                    &line_chart("ELBO", "step", "ELBO", &[("elbo", &steps, &l.elbo)]),
                )?;
            }
        }
        summary.push(serde_json::json!({
            "method": m,
            "n_draws": l.samples.len(),
            "failed_draws": epi.failed_draws,
        }));
    }
    write_comparison(&dir.join("comparison.csv"), &r.levels, &comparison)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(ReportOutcome {
        dir,
        methods: loaded.iter().map(|l| l.method.to_string()).collect(),
        comparison,
    })
}
