//! Command execution. Each command is a pure function of its resolved
//! [`Invocation`] and output path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use enkbf_core::enkbf::{run_enkbf, FilterVariant};
use enkbf_core::experiments::mse_study;
use enkbf_core::kalman_reference::reference_lognc;
use enkbf_core::models::{grid_steps, simulate_truth, Model, PathPair};
use enkbf_core::seeding::sub_seed;
use enkbf_core::spsa::rml_trajectories;
use enkbf_core::Variant;

use crate::error::{CliError, CliResult};
use crate::io::{num, numbered, read_path_pair, write_path_pair, CsvOut};
use crate::manifest::{manifest_path, Invocation, RunManifest};
use crate::plot;

/// Files a command writes for output path `out`, manifest excluded.
pub fn output_paths(inv: &Invocation, out: &Path) -> Vec<PathBuf> {
    let mut paths = vec![out.to_path_buf()];
    if let Invocation::Filter { emit_cov, .. } = inv {
        paths.push(sibling(out, "mean"));
        if *emit_cov {
            paths.push(sibling(out, "cov"));
        }
    }
    paths
}

/// `dir/run.csv` → `dir/run_<tag>.csv`.
pub fn sibling(out: &Path, tag: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    out.with_file_name(name)
}

fn seeds_for(inv: &Invocation) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    let mut add = |master: u64, roles: &[&str]| {
        seeds.insert("master".to_string(), master);
        for role in roles {
            seeds.insert((*role).to_string(), sub_seed(master, role));
        }
    };
    match inv {
        Invocation::Simulate { config } => add(config.seed, &["truth", "cstar"]),
        Invocation::Filter { config, .. } => add(config.seed, &["filter", "cstar"]),
        Invocation::MseStudy { config } => add(config.seed, &["truth", "filter", "cstar"]),
        Invocation::Spsa { config, .. } => add(config.seed, &["truth", "spsa", "cstar"]),
        Invocation::Plot { .. } => {}
    }
    seeds
}

/// Runs `inv`, writing its outputs and manifest next to `out`.
pub fn execute(inv: &Invocation, out: &Path, force: bool) -> CliResult<RunManifest> {
    let outputs = output_paths(inv, out);
    let manifest_file = manifest_path(out);
    if !force {
        for p in outputs.iter().chain(std::iter::once(&manifest_file)) {
            if p.exists() {
                return Err(CliError::Io(format!(
                    "{} already exists (pass --force to overwrite)",
                    p.display()
                )));
            }
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    match inv {
        Invocation::Simulate { config } => simulate(config, out)?,
        Invocation::Filter {
            config,
            data,
            variant,
            particles,
            pinv_tol,
            emit_cov,
        } => filter(config, data, *variant, *particles, *pinv_tol, *emit_cov, &outputs)?,
        Invocation::MseStudy { config } => study(config, out)?,
        Invocation::Spsa { config, data } => spsa(config, data.as_deref(), out)?,
        Invocation::Plot { input } => plot::plot(input, out)?,
    }
    let manifest = RunManifest::new(inv.clone(), seeds_for(inv), outputs)?;
    manifest.write(&manifest_file)?;
    log::info!("{} wrote {}", inv.name(), out.display());
    Ok(manifest)
}

/// Re-executes a recorded run, optionally to a different output path.
pub fn replay(manifest: &RunManifest, out: Option<&Path>, force: bool) -> CliResult<RunManifest> {
    manifest.verify_inputs()?;
    let target = match out {
        Some(p) => p.to_path_buf(),
        None => manifest
            .outputs
            .first()
            .cloned()
            .ok_or_else(|| CliError::Config("manifest lists no outputs".into()))?,
    };
    execute(&manifest.invocation, &target, force)
}

fn simulate(config: &crate::config::ModelConfig, out: &Path) -> CliResult<()> {
    let model = config.model(Variant::F1)?;
    let pp = simulate_truth(&model, config.horizon, config.level, sub_seed(config.seed, "truth"))?;
    write_path_pair(out, &pp)
}

fn truncate_to(pp: PathPair<f64>, horizon: f64, level: u32) -> CliResult<PathPair<f64>> {
    if pp.level() != level {
        return Err(CliError::Data(format!(
            "data grid is 2^-{} but the config asks for L = {level}",
            pp.level()
        )));
    }
    let steps = grid_steps(horizon, level)?;
    if pp.steps() < steps {
        return Err(CliError::Data(format!(
            "data covers t <= {} but T = {horizon}",
            pp.horizon()
        )));
    }
    Ok(pp.truncated(steps))
}

#[allow(clippy::too_many_arguments)]
fn filter(
    config: &crate::config::ModelConfig,
    data: &Path,
    variant: Variant,
    particles: usize,
    pinv_tol: Option<f64>,
    emit_cov: bool,
    outputs: &[PathBuf],
) -> CliResult<()> {
    if particles < 2 {
        return Err(CliError::Config(format!("--particles must be at least 2, got {particles}")));
    }
    let model = config.model(variant)?;
    let obs = truncate_to(read_path_pair(data)?, config.horizon, config.level)?;
    if obs.state_dim() != enkbf_core::models::Signal::state_dim(&model)
        || obs.obs_dim() != enkbf_core::models::Signal::obs_dim(&model)
    {
        return Err(CliError::Data(format!(
            "data has r1 = {}, r2 = {}; the model expects r1 = {}, r2 = {}",
            obs.state_dim(),
            obs.obs_dim(),
            enkbf_core::models::Signal::state_dim(&model),
            enkbf_core::models::Signal::obs_dim(&model)
        )));
    }
    let fv = FilterVariant::new(variant, pinv_tol)?;
    let run = run_enkbf(&obs, &model, fv, particles, config.level, sub_seed(config.seed, "filter"), emit_cov)?;
    let reference = match &model {
        Model::Linear(m) => Some(reference_lognc(&obs, m, config.level)?),
        Model::Nonlinear(_) => None,
    };

    let mut header = vec!["t".to_string(), "u_n".to_string()];
    if reference.is_some() {
        header.push("u_ref".to_string());
    }
    let mut u_out = CsvOut::create(&outputs[0], &header)?;
    for (k, &(t, u)) in run.u_path.iter().enumerate() {
        let mut row = vec![num(t), num(u)];
        if let Some(r) = &reference {
            row.push(num(r[k].1));
        }
        u_out.row(row)?;
    }
    u_out.finish()?;

    let r1 = obs.state_dim();
    let header: Vec<String> = std::iter::once("t".to_string()).chain(numbered("m", r1)).collect();
    let mut m_out = CsvOut::create(&outputs[1], &header)?;
    for (k, m) in run.mean_path.iter().enumerate() {
        m_out.row(std::iter::once(num(obs.time(k))).chain(m.iter().map(|&v| num(v))))?;
    }
    m_out.finish()?;

    if let Some(covs) = &run.cov_path {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=r1).flat_map(|i| (1..=r1).map(move |j| format!("p_{i}_{j}"))))
            .collect();
        let mut c_out = CsvOut::create(&outputs[2], &header)?;
        for (k, p) in covs.iter().enumerate() {
            let row = std::iter::once(num(obs.time(k)))
                .chain((0..r1).flat_map(|i| (0..r1).map(move |j| num(p[(i, j)]))));
            c_out.row(row)?;
        }
        c_out.finish()?;
    }
    Ok(())
}

fn study(config: &crate::config::StudyConfig, out: &Path) -> CliResult<()> {
    let rows = mse_study(&config.study()?)?;
    let mut w = CsvOut::create(out, &["variant", "t", "N", "M", "mse", "rate", "stderr"])?;
    for r in &rows {
        w.row([
            r.variant.to_string(),
            num(r.t),
            r.n.to_string(),
            r.m.to_string(),
            num(r.mse),
            num(r.rate),
            num(r.stderr),
        ])?;
    }
    w.finish()
}

fn spsa(config: &crate::config::SpsaFileConfig, data: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = config.spsa()?;
    let horizon = config.horizon as f64;
    let obs = match (data, config.truth_theta()?) {
        (Some(path), _) => truncate_to(read_path_pair(path)?, horizon, config.level)?,
        (None, Some(theta)) => {
            let truth = cfg.map.apply(&theta)?;
            simulate_truth(&truth, horizon, config.level, sub_seed(config.seed, "truth"))?
        }
        (None, None) => {
            return Err(CliError::Config(
                "spsa needs observations: pass --data or set theta_true".into(),
            ))
        }
    };
    let traces = rml_trajectories(&cfg, &obs, config.trajectories.unwrap_or(1))?;
    let d = cfg.map.theta_dim();
    let header: Vec<String> = ["trajectory".to_string(), "t".to_string()]
        .into_iter()
        .chain(numbered("theta", d))
        .collect();
    let mut w = CsvOut::create(out, &header)?;
    for (j, tr) in traces.iter().enumerate() {
        for (t, theta) in &tr.points {
            w.row([j.to_string(), t.to_string()].into_iter().chain(theta.iter().map(|&v| num(v))))?;
        }
        if tr.projections > 0 {
            log::warn!("trajectory {j}: {} projections onto the parameter domain", tr.projections);
        }
    }
    w.finish()
}
