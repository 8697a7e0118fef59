use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{fmt, parse_f64, parse_usize, read_csv, read_toml, write_csv, write_toml, AppendWriter, Provenance};
use super::{streams, Pipeline, PipelineError, StageStatus};
use crate::constitutive::PlasticParams;
use crate::inverse::{misfit_from_outputs, misfit_gradient, Dataset, NoiseModel};
use crate::mcmc::{self, mh_active, reconstruct, thin_effective, thin_indices, McmcError};
use crate::prior::{sample_prior, KdeEstimate, UNITS};
use crate::subspace::{bootstrap_errors, estimate_c, ActiveSubspace};
use crate::surrogate::{fit, SurrogateFit};

const DATASET: &str = "dataset.csv";
const TRUTH: &str = "truth.csv";
const GRADIENTS: &str = "gradients.csv";
const GRADIENTS_PARTIAL: &str = "gradients.partial.csv";
const GRADIENT_FAILURES: &str = "gradient_failures.csv";
const SPECTRUM: &str = "spectrum.csv";
const EIGENVECTORS: &str = "eigenvectors.csv";
const SUBSPACE_ERRORS: &str = "subspace_errors.csv";
const SUMMARY_PLOT: &str = "summary_plot.csv";
const SUBSPACE_SUMMARY: &str = "subspace.toml";

fn with_k(stem: &str, k: usize, ext: &str) -> String {
    format!("{stem}_k{k}.{ext}")
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn param_name(i: usize) -> String {
    PlasticParams::NAMES
        .get(i)
        .map_or_else(|| format!("x{}", i + 1), |s| s.to_string())
}

fn param_unit(i: usize) -> &'static str {
    UNITS.get(i).copied().unwrap_or("-")
}

/// Observations with their noise model and the noise-free response.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    pub dataset: Dataset,
    pub noise: NoiseModel,
    pub clean: Vec<f64>,
}

pub fn load_dataset(path: &Path) -> Result<ObservedData, PipelineError> {
    let t = read_csv(path)?;
    let col = |name: &str| -> Result<Vec<f64>, PipelineError> {
        let c = t
            .column(name)
            .ok_or_else(|| PipelineError::io(path, format!("missing column {name}")))?;
        t.rows.iter().map(|r| parse_f64(&r[c], path)).collect()
    };
    let stations = col("station")?;
    let dataset = Dataset {
        stations,
        vol_strain: col("vol_strain")?,
        shear_stress: col("shear_stress")?,
    };
    let mut sigma = col("sigma_vol_strain")?;
    sigma.extend(col("sigma_shear_stress")?);
    let mut clean = col("clean_vol_strain")?;
    clean.extend(col("clean_shear_stress")?);
    let noise = NoiseModel::new(sigma).map_err(|e| PipelineError::io(path, e.to_string()))?;
    Ok(ObservedData {
        dataset,
        noise,
        clean,
    })
}

/// One row of the gradient file.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRow {
    pub index: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
}

fn load_gradients(path: &Path, n: usize) -> Result<Vec<GradientRow>, PipelineError> {
    let t = read_csv(path)?;
    t.rows
        .iter()
        .map(|r| {
            if r.len() != 2 * n + 3 {
                return Err(PipelineError::io(path, "unexpected column count"));
            }
            Ok(GradientRow {
                index: parse_usize(&r[0], path)?,
                x: r[1..=n].iter().map(|s| parse_f64(s, path)).collect::<Result<_, _>>()?,
                f: parse_f64(&r[n + 1], path)?,
                grad: r[n + 2..2 * n + 2].iter().map(|s| parse_f64(s, path)).collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

fn load_matrix(path: &Path, n: usize) -> Result<DMatrix<f64>, PipelineError> {
    let t = read_csv(path)?;
    if t.rows.len() != n || t.rows.iter().any(|r| r.len() != n + 1) {
        return Err(PipelineError::io(path, format!("expected {n} rows of {n} components")));
    }
    let mut w = DMatrix::zeros(n, n);
    for (i, r) in t.rows.iter().enumerate() {
        for j in 0..n {
            w[(i, j)] = parse_f64(&r[j + 1], path)?;
        }
    }
    Ok(w)
}

fn load_rows(path: &Path, skip: usize) -> Result<Vec<Vec<f64>>, PipelineError> {
    let t = read_csv(path)?;
    t.rows
        .iter()
        .map(|r| r[skip..].iter().map(|s| parse_f64(s, path)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSummary {
    pub n_samples: usize,
    pub suggested_dim: usize,
    pub eigenvalues: Vec<f64>,
    pub gap_ratios: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSummary {
    pub k: usize,
    pub n_steps: usize,
    pub burn_in: usize,
    pub acceptance_rate: f64,
    pub ess: Vec<f64>,
    pub min_ess: f64,
    pub n_y_ess: usize,
    pub kde_samples: usize,
    pub kde_bandwidth: Vec<f64>,
    pub start: Vec<f64>,
    pub inactive_chains: usize,
    pub inactive_dropped: usize,
    pub inactive_unconverged: usize,
    pub inactive_mean_acceptance: f64,
    pub inactive_total_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSummary {
    pub k: usize,
    pub n_samples: usize,
    pub mean_normalized: Vec<f64>,
    pub misfit_at_mean: f64,
    /// Fraction of observations with `|response - data| <= 3 sigma`.
    pub fraction_within_3sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub unit: String,
    pub prior_lower: f64,
    pub prior_upper: f64,
    pub truth: f64,
    pub posterior_mean: f64,
    pub posterior_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub k: usize,
    pub n_gradients: usize,
    pub n_gradient_failures: usize,
    pub eigenvalues: Vec<f64>,
    pub suggested_dim: usize,
    pub surrogate_r2: f64,
    pub acceptance_rate: f64,
    pub min_ess: f64,
    pub n_y_ess: usize,
    pub n_posterior_samples: usize,
    pub fraction_within_3sigma: f64,
    pub parameters: Vec<ParameterSummary>,
}

impl Pipeline {
    fn provenance(&self, hash: &str, seed: u64) -> Provenance {
        Provenance {
            config_hash: hash.to_string(),
            seed,
        }
    }

    fn require(&self, stage: &str, prerequisite: &str, hash: &str) -> Result<(), PipelineError> {
        if self.manifest()?.is_current(self.out_dir(), prerequisite, hash) {
            Ok(())
        } else {
            Err(PipelineError::Prerequisite {
                stage: stage.into(),
                prerequisite: prerequisite.into(),
            })
        }
    }

    fn up_to_date(&self, stage: &str, hash: &str) -> Result<bool, PipelineError> {
        Ok(self.manifest()?.is_current(self.out_dir(), stage, hash))
    }

    fn finish(&self, stage: &str, hash: &str, seed: u64, files: &[String], computed: usize) -> Result<StageStatus, PipelineError> {
        let mut m = self.manifest()?;
        m.record(self.out_dir(), stage, hash, seed, files)?;
        m.save(self.out_dir())?;
        Ok(StageStatus::Ran { computed })
    }

    pub fn load_observed(&self) -> Result<ObservedData, PipelineError> {
        load_dataset(&self.path(DATASET))
    }

    /// Active dimension: configured, or the largest spectral gap.
    pub fn active_dim(&self) -> Result<usize, PipelineError> {
        if let Some(k) = self.cfg.subspace.dim {
            return Ok(k);
        }
        self.require("surrogate", "subspace", &self.subspace_hash())?;
        let s: SubspaceSummary = read_toml(&self.path(SUBSPACE_SUMMARY))?;
        Ok(s.suggested_dim)
    }

    fn active_subspace(&self, k: usize) -> Result<ActiveSubspace, PipelineError> {
        let n = self.cfg.prior.dim();
        let w = load_matrix(&self.path(EIGENVECTORS), n)?;
        ActiveSubspace::from_basis(&w, k).map_err(|e| PipelineError::Internal(e.to_string()))
    }

    pub(super) fn synth_data(&self) -> Result<StageStatus, PipelineError> {
        const STAGE: &str = "synth-data";
        let hash = self.synth_hash();
        let seed = self.stage_seed(streams::SYNTH);
        if self.up_to_date(STAGE, &hash)? {
            return Ok(StageStatus::UpToDate);
        }
        let cfg = &self.cfg;
        let x = &cfg.synthetic.x_true;
        let clean = self
            .forward()
            .evaluate(x)
            .map_err(|e| PipelineError::stage(STAGE, format!("forward evaluation at x_true failed: {e}")))?;
        let stations = cfg.station_values();
        let clean_ds = Dataset::from_vector(stations.clone(), &clean).map_err(|e| PipelineError::stage(STAGE, e))?;
        let noise = NoiseModel::relative_to(&clean_ds, &cfg.noise).map_err(|e| PipelineError::stage(STAGE, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = clean
            .iter()
            .zip(&noise.sigma)
            .map(|(g, s)| {
                let eta: f64 = rng.sample(StandardNormal);
                if cfg.synthetic.add_noise { g + s * eta } else { *g }
            })
            .collect();
        let m = stations.len();
        let prov = self.provenance(&hash, seed);
        write_csv(
            &self.path(DATASET),
            &prov,
            &header(&[
                "station",
                "vol_strain",
                "shear_stress",
                "sigma_vol_strain",
                "sigma_shear_stress",
                "clean_vol_strain",
                "clean_shear_stress",
            ]),
            (0..m).map(|i| {
                [stations[i], d[i], d[m + i], noise.sigma[i], noise.sigma[m + i], clean[i], clean[m + i]].map(fmt)
            }),
        )?;
        write_csv(
            &self.path(TRUTH),
            &prov,
            &header(&["parameter", "unit", "normalized", "physical"]),
            x.iter().enumerate().map(|(i, v)| {
                vec![
                    param_name(i),
                    param_unit(i).to_string(),
                    fmt(*v),
                    fmt(cfg.prior.scale_to_physical(i, *v)),
                ]
            }),
        )?;
        self.finish(STAGE, &hash, seed, &[DATASET.into(), TRUTH.into()], 0)
    }

    pub(super) fn gradients(&self) -> Result<StageStatus, PipelineError> {
        const STAGE: &str = "gradients";
        let hash = self.gradients_hash();
        let seed = self.stage_seed(streams::GRADIENTS);
        if self.up_to_date(STAGE, &hash)? {
            return Ok(StageStatus::UpToDate);
        }
        self.require(STAGE, "synth-data", &self.synth_hash())?;
        let cfg = &self.cfg;
        let n = cfg.prior.dim();
        let count = cfg.gradients.n_samples;
        let obs = self.load_observed()?;
        let forward = self.forward();
        let xs = sample_prior(&mut ChaCha8Rng::seed_from_u64(seed), count, n);
        let prov = self.provenance(&hash, seed);
        let mut cols = vec!["index".to_string()];
        cols.extend(numbered("x", n));
        cols.push("f".into());
        cols.extend(numbered("g", n));
        cols.push("clamped".into());

        // rows already computed by an interrupted run with the same hash
        let partial = self.path(GRADIENTS_PARTIAL);
        let mut done: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        if partial.exists() {
            let t = read_csv(&partial)?;
            if t.provenance.as_ref() == Some(&prov) && t.header == cols {
                for r in t.rows {
                    let Ok(i) = r[0].parse::<usize>() else { continue };
                    let matches = i < count && r.len() == cols.len() && (0..n).all(|j| r[1 + j] == fmt(xs[i][j]));
                    if matches {
                        done.insert(i, r);
                    }
                }
                log::info!("{STAGE}: resuming with {} of {count} samples done", done.len());
            } else {
                std::fs::remove_file(&partial).map_err(|e| PipelineError::io(&partial, e.to_string()))?;
            }
        }
        let missing: Vec<usize> = (0..count).filter(|i| !done.contains_key(i)).collect();
        let writer = Mutex::new(AppendWriter::open(&partial, &prov, &cols)?);
        let results: Vec<(usize, Result<Vec<String>, String>)> = missing
            .par_iter()
            .map(|&i| {
                let r = misfit_gradient(&xs[i], &obs.dataset, &obs.noise, forward.as_ref(), cfg.gradients.fd_step);
                match r {
                    Ok(s) => {
                        let mut row = vec![i.to_string()];
                        row.extend(s.x.iter().map(|v| fmt(*v)));
                        row.push(fmt(s.f));
                        row.extend(s.grad.iter().map(|v| fmt(*v)));
                        row.push(u8::from(s.clamped).to_string());
                        let written = writer.lock().expect("writer lock").append(&row);
                        log::debug!("{STAGE}: sample {i} done (f = {:.6e})", s.f);
                        (i, written.map(|_| row).map_err(|e| e.to_string()))
                    }
                    Err(e) => {
                        log::warn!("{STAGE}: sample {i} failed: {e}");
                        (i, Err(e.to_string()))
                    }
                }
            })
            .collect();
        drop(writer);
        let computed = missing.len();
        let mut failures = Vec::new();
        for (i, r) in results {
            match r {
                Ok(row) => {
                    done.insert(i, row);
                }
                Err(msg) => failures.push((i, msg)),
            }
        }
        let mut fail_cols = vec!["index".to_string()];
        fail_cols.extend(numbered("x", n));
        fail_cols.push("error".into());
        write_csv(
            &self.path(GRADIENT_FAILURES),
            &prov,
            &fail_cols,
            failures.iter().map(|(i, msg)| {
                let mut row = vec![i.to_string()];
                row.extend(xs[*i].iter().map(|v| fmt(*v)));
                row.push(msg.clone());
                row
            }),
        )?;
        if failures.len() as f64 > cfg.gradients.max_failure_fraction * count as f64 {
            return Err(PipelineError::stage(
                STAGE,
                format!(
                    "{} of {count} samples failed (limit {:.1}%); see {GRADIENT_FAILURES}",
                    failures.len(),
                    100.0 * cfg.gradients.max_failure_fraction
                ),
            ));
        }
        write_csv(&self.path(GRADIENTS), &prov, &cols, done.values())?;
        std::fs::remove_file(&partial).map_err(|e| PipelineError::io(&partial, e.to_string()))?;
        self.finish(STAGE, &hash, seed, &[GRADIENTS.into(), GRADIENT_FAILURES.into()], computed)
    }

    pub fn load_gradient_rows(&self) -> Result<Vec<GradientRow>, PipelineError> {
        load_gradients(&self.path(GRADIENTS), self.cfg.prior.dim())
    }

    pub(super) fn subspace(&self) -> Result<StageStatus, PipelineError> {
        const STAGE: &str = "subspace";
        let hash = self.subspace_hash();
        let seed = self.stage_seed(streams::BOOTSTRAP);
        if self.up_to_date(STAGE, &hash)? {
            return Ok(StageStatus::UpToDate);
        }
        self.require(STAGE, "gradients", &self.gradients_hash())?;
        let n = self.cfg.prior.dim();
        let rows = self.load_gradient_rows()?;
        let grads: Vec<Vec<f64>> = rows.iter().map(|r| r.grad.clone()).collect();
        let spec = estimate_c(&grads).map_err(|e| PipelineError::stage(STAGE, e))?;
        let boot = bootstrap_errors(&grads, &spec, self.cfg.subspace.n_boot, seed).map_err(|e| PipelineError::stage(STAGE, e))?;
        let gaps = spec.gap_ratios();
        let prov = self.provenance(&hash, seed);

        write_csv(
            &self.path(SPECTRUM),
            &prov,
            &header(&["index", "eigenvalue", "lower", "upper", "gap_ratio"]),
            (0..n).map(|i| {
                vec![
                    (i + 1).to_string(),
                    fmt(spec.eigenvalues[i]),
                    fmt(boot.eigenvalue_intervals[i][0]),
                    fmt(boot.eigenvalue_intervals[i][1]),
                    gaps.get(i).map_or_else(String::new, |g| fmt(*g)),
                ]
            }),
        )?;
        let mut cols = vec!["parameter".to_string()];
        cols.extend(numbered("w", n));
        write_csv(
            &self.path(EIGENVECTORS),
            &prov,
            &cols,
            (0..n).map(|i| {
                let mut row = vec![param_name(i)];
                row.extend((0..n).map(|j| fmt(spec.eigenvectors[(i, j)])));
                row
            }),
        )?;
        write_csv(
            &self.path(SUBSPACE_ERRORS),
            &prov,
            &header(&["k", "mean_distance"]),
            boot.subspace_errors
                .iter()
                .enumerate()
                .map(|(i, e)| vec![(i + 1).to_string(), fmt(*e)]),
        )?;
        let w = &spec.eigenvectors;
        let project = |x: &[f64], j: usize| (0..n).map(|i| w[(i, j)] * x[i]).sum::<f64>();
        write_csv(
            &self.path(SUMMARY_PLOT),
            &prov,
            &header(&["index", "y1", "y2", "f"]),
            rows.iter().map(|r| {
                vec![
                    r.index.to_string(),
                    fmt(project(&r.x, 0)),
                    fmt(project(&r.x, 1.min(n - 1))),
                    fmt(r.f),
                ]
            }),
        )?;
        write_toml(
            &self.path(SUBSPACE_SUMMARY),
            &prov,
            &SubspaceSummary {
                n_samples: rows.len(),
                suggested_dim: spec.suggested_dimension().min(n - 1),
                eigenvalues: spec.eigenvalues.clone(),
                gap_ratios: gaps,
                degenerate: spec.degenerate,
            },
        )?;
        let files = [SPECTRUM, EIGENVECTORS, SUBSPACE_ERRORS, SUMMARY_PLOT, SUBSPACE_SUMMARY].map(String::from);
        self.finish(STAGE, &hash, seed, &files, 0)
    }

    pub(super) fn surrogate(&self) -> Result<StageStatus, PipelineError> {
        let k = self.active_dim()?;
        let stage = format!("surrogate_k{k}");
        let hash = self.surrogate_hash(k);
        if self.up_to_date(&stage, &hash)? {
            return Ok(StageStatus::UpToDate);
        }
        self.require(&stage, "subspace", &self.subspace_hash())?;
        let sub = self.active_subspace(k)?;
        let rows = self.load_gradient_rows()?;
        let ys: Vec<Vec<f64>> = rows.iter().map(|r| sub.project_active(&r.x)).collect();
        let fs: Vec<f64> = rows.iter().map(|r| r.f).collect();
        let fitted = fit(&ys, &fs, k).map_err(|e| PipelineError::stage(&stage, e))?;
        let s = &fitted.surface;
        let prov = self.provenance(&hash, self.cfg.seed);

        let surrogate_file = with_k("surrogate", k, "toml");
        write_toml(&self.path(&surrogate_file), &prov, &fitted)?;
        let fit_file = with_k("surrogate_fit", k, "csv");
        let mut cols = vec!["index".to_string()];
        cols.extend(numbered("y", k));
        cols.extend(["f".to_string(), "g".to_string()]);
        write_csv(
            &self.path(&fit_file),
            &prov,
            &cols,
            rows.iter().zip(&ys).map(|(r, y)| {
                let mut row = vec![r.index.to_string()];
                row.extend(y.iter().map(|v| fmt(*v)));
                row.extend([fmt(r.f), fmt(s.eval_unchecked(y))]);
                row
            }),
        )?;

        // fitted surface over the range of the training inputs, remaining
        // coordinates held at zero
        let grid = self.cfg.report.surface_grid;
        let axes = k.min(2);
        let range: Vec<(f64, f64)> = (0..axes)
            .map(|d| {
                ys.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y[d]), hi.max(y[d])))
            })
            .collect();
        let at = |d: usize, i: usize| range[d].0 + (range[d].1 - range[d].0) * i as f64 / (grid - 1) as f64;
        let grid_file = with_k("surface_grid", k, "csv");
        let mut grid_rows = Vec::new();
        for i in 0..grid {
            for j in 0..if axes == 2 { grid } else { 1 } {
                let mut y = vec![0.0; k];
                y[0] = at(0, i);
                if axes == 2 {
                    y[1] = at(1, j);
                }
                let mut row: Vec<String> = y[..axes].iter().map(|v| fmt(*v)).collect();
                row.push(fmt(s.eval_unchecked(&y)));
                grid_rows.push(row);
            }
        }
        let mut cols = numbered("y", axes);
        cols.push("g".into());
        write_csv(&self.path(&grid_file), &prov, &cols, grid_rows)?;
        log::info!("{stage}: r2 = {:.4}", fitted.r2);
        self.finish(&stage, &hash, self.cfg.seed, &[surrogate_file, fit_file, grid_file], 0)
    }

    pub(super) fn mcmc(&self) -> Result<StageStatus, PipelineError> {
        let k = self.active_dim()?;
        let stage = format!("mcmc_k{k}");
        let hash = self.mcmc_hash(k);
        let active_seed = self.stage_seed(streams::ACTIVE);
        if self.up_to_date(&stage, &hash)? {
            return Ok(StageStatus::UpToDate);
        }
        self.require(&stage, &format!("surrogate_k{k}"), &self.surrogate_hash(k))?;
        let cfg = &self.cfg;
        let n = cfg.prior.dim();
        let sub = self.active_subspace(k)?;
        let fitted: SurrogateFit = read_toml(&self.path(&with_k("surrogate", k, "toml")))?;
        let surface = fitted.surface;

        let kde_points: Vec<Vec<f64>> = sample_prior(
            &mut ChaCha8Rng::seed_from_u64(self.stage_seed(streams::KDE)),
            cfg.kde.n_samples,
            n,
        )
        .iter()
        .map(|x| sub.project_active(x))
        .collect();
        let kde = KdeEstimate::fit_scaled(&kde_points, cfg.kde.bandwidth_factor).map_err(|e| PipelineError::stage(&stage, e))?;
        drop(kde_points);

        // start at the gradient sample with the smallest misfit
        let rows = self.load_gradient_rows()?;
        let best = rows
            .iter()
            .min_by(|a, b| a.f.total_cmp(&b.f).then(a.index.cmp(&b.index)))
            .ok_or_else(|| PipelineError::stage(&stage, "no gradient samples"))?;
        let start = sub.project_active(&best.x);

        let chain_cfg = cfg.mcmc.active_chain(k, active_seed);
        log::info!("{stage}: running {} active steps", chain_cfg.n_steps);
        let chain = mh_active(&surface, &kde, &chain_cfg, &start).map_err(|e| PipelineError::stage(&stage, e))?;
        let n_y_ess = (chain.min_ess.floor() as usize).clamp(1, chain.len());
        let ys = thin_effective(&chain.rows(), n_y_ess);
        log::info!(
            "{stage}: acceptance {:.3}, min ESS {:.1}, {n_y_ess} effective active samples",
            chain.acceptance_rate,
            chain.min_ess
        );

        let inactive_cfg = cfg.mcmc.inactive_chain(k, self.stage_seed(streams::INACTIVE));
        let chains: Vec<Result<mcmc::InactiveChain, McmcError>> = ys
            .par_iter()
            .enumerate()
            .map(|(i, y)| {
                let mut rng = ChaCha8Rng::seed_from_u64(inactive_cfg.seed);
                rng.set_stream(i as u64);
                mcmc::mh_inactive(y, &sub, &inactive_cfg, &mut rng)
            })
            .collect();
        let prov = self.provenance(&hash, active_seed);

        let trace_file = with_k("active_trace", k, "csv");
        let mut cols = vec!["step".to_string()];
        cols.extend(numbered("y", k));
        write_csv(
            &self.path(&trace_file),
            &prov,
            &cols,
            thin_indices(chain.len(), cfg.mcmc.trace_rows).into_iter().map(|i| {
                let mut row = vec![(chain_cfg.burn_in + i).to_string()];
                row.extend(chain.sample(i).iter().map(|v| fmt(*v)));
                row
            }),
        )?;
        let acf_file = with_k("active_autocorrelation", k, "csv");
        let mut cols = vec!["lag".to_string()];
        cols.extend(numbered("r_y", k));
        let lags = chain.autocorrelation.first().map_or(0, Vec::len);
        write_csv(
            &self.path(&acf_file),
            &prov,
            &cols,
            (0..lags).map(|l| {
                let mut row = vec![l.to_string()];
                row.extend(chain.autocorrelation.iter().map(|r| fmt(r[l])));
                row
            }),
        )?;
        let eff_file = with_k("active_effective", k, "csv");
        let mut cols = vec!["index".to_string()];
        cols.extend(numbered("y", k));
        write_csv(
            &self.path(&eff_file),
            &prov,
            &cols,
            ys.iter().enumerate().map(|(i, y)| {
                let mut row = vec![i.to_string()];
                row.extend(y.iter().map(|v| fmt(*v)));
                row
            }),
        )?;

        let inactive_file = with_k("inactive", k, "csv");
        let mut cols = vec!["y_index".to_string(), "z_index".to_string()];
        cols.extend(numbered("z", n - k));
        let mut z_rows = Vec::new();
        let mut chain_rows = Vec::new();
        let mut dropped = 0;
        let mut unconverged = 0;
        let mut acc_sum = 0.0;
        let mut steps = 0;
        for (i, c) in chains.into_iter().enumerate() {
            match c {
                Ok(c) => {
                    for (j, z) in c.z.iter().enumerate() {
                        let mut row = vec![i.to_string(), j.to_string()];
                        row.extend(z.iter().map(|v| fmt(*v)));
                        z_rows.push(row);
                    }
                    unconverged += usize::from(!c.converged);
                    acc_sum += c.acceptance_rate;
                    steps += c.steps;
                    chain_rows.push(vec![
                        i.to_string(),
                        c.steps.to_string(),
                        fmt(c.acceptance_rate),
                        fmt(c.min_ess),
                        u8::from(c.converged).to_string(),
                    ]);
                }
                Err(McmcError::NoFeasibleStart { y }) => {
                    log::warn!("{stage}: active sample {i} at {y:?} has no in-box inactive start; dropped");
                    dropped += 1;
                }
                Err(e) => return Err(PipelineError::stage(&stage, e)),
            }
        }
        if chain_rows.is_empty() {
            return Err(PipelineError::stage(&stage, "no active sample admits an in-box inactive chain"));
        }
        write_csv(&self.path(&inactive_file), &prov, &cols, z_rows)?;
        let chains_file = with_k("inactive_chains", k, "csv");
        write_csv(
            &self.path(&chains_file),
            &prov,
            &header(&["y_index", "steps", "acceptance_rate", "min_ess", "converged"]),
            &chain_rows,
        )?;
        let summary_file = with_k("mcmc", k, "toml");
        let kept = chain_rows.len();
        write_toml(
            &self.path(&summary_file),
            &prov,
            &McmcSummary {
                k,
                n_steps: chain_cfg.n_steps,
                burn_in: chain_cfg.burn_in,
                acceptance_rate: chain.acceptance_rate,
                ess: chain.ess.clone(),
                min_ess: chain.min_ess,
                n_y_ess,
                kde_samples: kde.len(),
                kde_bandwidth: kde.bandwidth().to_vec(),
                start,
                inactive_chains: kept,
                inactive_dropped: dropped,
                inactive_unconverged: unconverged,
                inactive_mean_acceptance: acc_sum / kept as f64,
                inactive_total_steps: steps,
            },
        )?;
        let files = [trace_file, acf_file, eff_file, inactive_file, chains_file, summary_file];
        self.finish(&stage, &hash, active_seed, &files, 0)
    }

    pub(super) fn reconstruct(&self) -> Result<StageStatus, PipelineError> {
        let k = self.active_dim()?;
        let stage = format!("reconstruct_k{k}");
        let hash = self.reconstruct_hash(k);
        if self.up_to_date(&stage, &hash)? {
            return Ok(StageStatus::UpToDate);
        }
        self.require(&stage, &format!("mcmc_k{k}"), &self.mcmc_hash(k))?;
        let cfg = &self.cfg;
        let n = cfg.prior.dim();
        let sub = self.active_subspace(k)?;
        let ys_all = load_rows(&self.path(&with_k("active_effective", k, "csv")), 1)?;
        let zt = read_csv(&self.path(&with_k("inactive", k, "csv")))?;
        let zpath = self.path(&with_k("inactive", k, "csv"));
        let mut grouped: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for r in &zt.rows {
            let i = parse_usize(&r[0], &zpath)?;
            let z = r[2..].iter().map(|s| parse_f64(s, &zpath)).collect::<Result<Vec<_>, _>>()?;
            grouped.entry(i).or_default().push(z);
        }
        let ys: Vec<Vec<f64>> = grouped.keys().map(|i| ys_all[*i].clone()).collect();
        let zs: Vec<Vec<Vec<f64>>> = grouped.into_values().collect();
        let post = reconstruct(&ys, &zs, &sub, &cfg.prior).map_err(|e| PipelineError::stage(&stage, e))?;
        let prov = self.provenance(&hash, cfg.seed);

        let samples_file = with_k("posterior_samples", k, "csv");
        let mut cols = vec!["index".to_string()];
        cols.extend(numbered("x", n));
        cols.extend((0..n).map(param_name));
        write_csv(
            &self.path(&samples_file),
            &prov,
            &cols,
            post.samples.iter().enumerate().map(|(i, x)| {
                let mut row = vec![i.to_string()];
                row.extend(x.iter().map(|v| fmt(*v)));
                row.extend(x.iter().enumerate().map(|(d, v)| fmt(cfg.prior.scale_to_physical(d, *v))));
                row
            }),
        )?;

        let truth: Vec<f64> = cfg.synthetic.x_true.clone();
        let summary_file = with_k("posterior_summary", k, "csv");
        write_csv(
            &self.path(&summary_file),
            &prov,
            &header(&["parameter", "unit", "prior_lower", "prior_upper", "truth", "mean", "std"]),
            (0..n).map(|i| {
                let [lo, hi] = cfg.prior.bounds[i];
                vec![
                    param_name(i),
                    param_unit(i).to_string(),
                    fmt(lo),
                    fmt(hi),
                    fmt(cfg.prior.scale_to_physical(i, truth[i])),
                    fmt(post.mean_physical[i]),
                    fmt(post.std_physical[i]),
                ]
            }),
        )?;

        let bins = cfg.report.histogram_bins;
        let hist_file = with_k("posterior_histograms", k, "csv");
        let mut hist_rows = Vec::new();
        for i in 0..n {
            let mut counts = vec![0usize; bins];
            for x in &post.samples {
                let b = (((x[i] + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1);
                counts[b] += 1;
            }
            let [lo, hi] = cfg.prior.bounds[i];
            let width = (hi - lo) / bins as f64;
            for (b, c) in counts.iter().enumerate() {
                hist_rows.push(vec![
                    param_name(i),
                    b.to_string(),
                    fmt(lo + width * b as f64),
                    fmt(lo + width * (b + 1) as f64),
                    c.to_string(),
                    fmt(*c as f64 / (post.len() as f64 * width)),
                ]);
            }
        }
        write_csv(
            &self.path(&hist_file),
            &prov,
            &header(&["parameter", "bin", "lower", "upper", "count", "density"]),
            hist_rows,
        )?;

        // forward response at the posterior mean against the data
        let obs = self.load_observed()?;
        let response = self
            .forward()
            .evaluate(&post.mean_normalized)
            .map_err(|e| PipelineError::stage(&stage, format!("forward evaluation at the posterior mean failed: {e}")))?;
        let d = obs.dataset.to_vector();
        let m = obs.dataset.stations.len();
        let misfit = misfit_from_outputs(&d, &response, &obs.noise).map_err(|e| PipelineError::stage(&stage, e))?;
        let within = (0..2 * m)
            .filter(|&i| (response[i] - d[i]).abs() <= 3.0 * obs.noise.sigma[i])
            .count();
        let response_file = with_k("posterior_response", k, "csv");
        write_csv(
            &self.path(&response_file),
            &prov,
            &header(&["station", "quantity", "data", "sigma", "posterior_mean_response", "clean_response", "z_score"]),
            (0..2 * m).map(|i| {
                vec![
                    fmt(obs.dataset.stations[i % m]),
                    if i < m { "vol_strain" } else { "shear_stress" }.to_string(),
                    fmt(d[i]),
                    fmt(obs.noise.sigma[i]),
                    fmt(response[i]),
                    fmt(obs.clean[i]),
                    fmt((response[i] - d[i]) / obs.noise.sigma[i]),
                ]
            }),
        )?;
        let toml_file = with_k("reconstruct", k, "toml");
        write_toml(
            &self.path(&toml_file),
            &prov,
            &ReconstructSummary {
                k,
                n_samples: post.len(),
                mean_normalized: post.mean_normalized.clone(),
                misfit_at_mean: misfit,
                fraction_within_3sigma: within as f64 / (2 * m) as f64,
            },
        )?;
        let files = [samples_file, summary_file, hist_file, response_file, toml_file];
        self.finish(&stage, &hash, cfg.seed, &files, 0)
    }

    pub(super) fn report(&self) -> Result<StageStatus, PipelineError> {
        let k = self.active_dim()?;
        let stage = format!("report_k{k}");
        let hash = self.report_hash(k);
        if self.up_to_date(&stage, &hash)? {
            return Ok(StageStatus::UpToDate);
        }
        self.require(&stage, &format!("reconstruct_k{k}"), &self.reconstruct_hash(k))?;
        let sub: SubspaceSummary = read_toml(&self.path(SUBSPACE_SUMMARY))?;
        let fitted: SurrogateFit = read_toml(&self.path(&with_k("surrogate", k, "toml")))?;
        let mc: McmcSummary = read_toml(&self.path(&with_k("mcmc", k, "toml")))?;
        let rec: ReconstructSummary = read_toml(&self.path(&with_k("reconstruct", k, "toml")))?;
        let failures = read_csv(&self.path(GRADIENT_FAILURES))?.rows.len();
        let spath = self.path(&with_k("posterior_summary", k, "csv"));
        let st = read_csv(&spath)?;
        let parameters = st
            .rows
            .iter()
            .map(|r| {
                Ok(ParameterSummary {
                    name: r[0].clone(),
                    unit: r[1].clone(),
                    prior_lower: parse_f64(&r[2], &spath)?,
                    prior_upper: parse_f64(&r[3], &spath)?,
                    truth: parse_f64(&r[4], &spath)?,
                    posterior_mean: parse_f64(&r[5], &spath)?,
                    posterior_std: parse_f64(&r[6], &spath)?,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let report = Report {
            k,
            n_gradients: sub.n_samples,
            n_gradient_failures: failures,
            eigenvalues: sub.eigenvalues,
            suggested_dim: sub.suggested_dim,
            surrogate_r2: fitted.r2,
            acceptance_rate: mc.acceptance_rate,
            min_ess: mc.min_ess,
            n_y_ess: mc.n_y_ess,
            n_posterior_samples: rec.n_samples,
            fraction_within_3sigma: rec.fraction_within_3sigma,
            parameters,
        };
        let file = with_k("report", k, "toml");
        write_toml(&self.path(&file), &self.provenance(&hash, self.cfg.seed), &report)?;
        self.finish(&stage, &hash, self.cfg.seed, &[file], 0)
    }
}
