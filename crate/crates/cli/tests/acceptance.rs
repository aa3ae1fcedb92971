//! Acceptance suite.
//!
//! Prints one `PASS`/`FAIL` line per criterion (with its pinned tolerance) and
//! exits non-zero if any criterion fails. Set `ACCEPTANCE=1,5,9` to run a
//! subset. The full run takes about two hours on a single core.

use std::ops::Range;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use enkbf_core::enkbf::{
    ensemble_mean, sample_covariance, Ensemble, EnsembleFilter, FilterVariant, NoiseStreams,
};
use enkbf_core::experiments::{
    aggregate, benchmark_tables, median, rate_summary, run_repetition_until, MseRow,
    MseStudyConfig, RepetitionErrors,
};
use enkbf_core::kalman_reference::{steady_state_riccati, KalmanBucyFilter, LogNcAccumulator};
use enkbf_core::models::{
    draw_cstar, scalar_benchmark, simulate_truth, FilterModel, InitialLaw, LinearGaussianModel,
    PathPair, ThetaMap,
};
use enkbf_core::seeding::{indexed_seed, stream, sub_seed, standard_normal, StreamRng};
use enkbf_core::spsa::{
    average_final, perturb, rml_trajectories, spsa_update, RmlEstimator, SpsaConfig, SpsaSchedule,
};
use enkbf_core::{NoiseSpec, Variant};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

/// Master seed of every acceptance run.
const SEED: u64 = 1;
/// `C` of the scalar MSE-study model (the benchmark leaves it as a draw from (0, 1]).
const CSTAR: f64 = 0.078;
const LEVEL: u32 = 8;
const STUDY_REPS: usize = 100;

// Pinned tolerances.
const RATIO_FACTOR: f64 = 4.0;
const CONSTANT_BAND: (f64, f64) = (1e-3, 3e-2);
const F3_T_FACTOR: f64 = 3.0;
const BIAS_SIGMAS: f64 = 3.0;
const ORACLE_TOL: f64 = 0.05;
const RICCATI_ROOT: f64 = 0.207_106_781_186_547_5; // (√2 − 1)/2
const RICCATI_TOL: f64 = 1e-6;
const RICCATI_T20_TOL: f64 = 1e-4;
const LINEAR_SPSA_TOL: f64 = 0.3;
const L96_SPSA_TOL: f64 = 0.5;

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn study_cfg(variant: Variant, horizons: &[f64], particles: &[usize], reps: usize) -> MseStudyConfig<f64> {
    MseStudyConfig {
        variant: FilterVariant::with_defaults(variant),
        horizons: horizons.to_vec(),
        particles: particles.to_vec(),
        level: LEVEL,
        repetitions: reps,
        seed: SEED,
        model: scalar_benchmark(CSTAR).expect("benchmark model"),
    }
}

fn run_reps(cfg: &MseStudyConfig<f64>, reps: Range<usize>) -> Vec<RepetitionErrors<f64>> {
    reps.into_par_iter()
        .map(|rep| run_repetition_until(cfg, rep, None).expect("repetition"))
        .collect()
}

fn print_rows(rows: &[MseRow]) {
    println!("      {:>6} {:>6} {:>4} {:>11} {:>11} {:>10}", "t", "N", "M", "mse", "rate", "stderr");
    for r in rows {
        println!(
            "      {:>6} {:>6} {:>4} {:>11.4e} {:>11.4e} {:>10.3e}",
            r.t, r.n, r.m, r.mse, r.rate, r.stderr
        );
    }
}

/// Largest `max(r/med, med/r)` over the rows' rates.
fn spread_about_median(rows: &[&MseRow]) -> (f64, f64) {
    let rates: Vec<f64> = rows.iter().map(|r| r.rate).collect();
    let med = median(&rates);
    let worst = rates
        .iter()
        .map(|&r| (r / med).max(med / r))
        .fold(1.0, f64::max);
    (med, worst)
}

fn rate_constancy(id: u32, variant: Variant, rows: &[MseRow]) -> Outcome {
    print_rows(rows);
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [250, 1000] {
        let sel: Vec<&MseRow> = rows.iter().filter(|r| r.n == n).collect();
        let (med, worst) = spread_about_median(&sel);
        pass &= worst <= RATIO_FACTOR && worst.is_finite();
        parts.push(format!("N={n}: median ratio {med:.3e}, worst factor {worst:.2} (tol {RATIO_FACTOR})"));
    }
    let summary = rate_summary(rows).expect("rows");
    let in_band = (CONSTANT_BAND.0..=CONSTANT_BAND.1).contains(&summary.constant);
    pass &= in_band;
    parts.push(format!(
        "fitted constant {:.3e} (band [{:.0e}, {:.0e}])",
        summary.constant, CONSTANT_BAND.0, CONSTANT_BAND.1
    ));
    let table = if variant == Variant::F1 { benchmark_tables::F1 } else { benchmark_tables::F2 };
    for transposed in [false, true] {
        if let Some(d) = table.log_discrepancy(rows, transposed) {
            println!(
                "      reference values ({} column labels): mean |log(mse/reference)| = {d:.2}",
                if transposed { "reversed" } else { "as printed" }
            );
        }
    }
    for &t in &[50.0, 200.0, 800.0, 3200.0] {
        let small = rows.iter().find(|r| r.n == 250 && r.t == t);
        let large = rows.iter().find(|r| r.n == 1000 && r.t == t);
        if let (Some(s), Some(l)) = (small, large) {
            let z = (s.mse - l.mse) / (s.stderr.powi(2) + l.stderr.powi(2)).sqrt();
            println!("      t={t}: mse(N=250) − mse(N=1000) = {:.2} standard errors", z);
        }
    }
    Outcome {
        id,
        title: if variant == Variant::F1 { "F1 rate constancy" } else { "F2 rate constancy" },
        pass,
        detail: parts.join("; "),
    }
}

const F1_HORIZONS: [f64; 5] = [50.0, 200.0, 800.0, 1600.0, 3200.0];
const RATE_HORIZONS: [f64; 4] = [50.0, 200.0, 800.0, 3200.0];
const RATE_SIZES: [usize; 2] = [250, 1000];

/// F1 repetitions shared by criteria 1 and 4 (every horizon of both).
struct F1Runs {
    cfg: MseStudyConfig<f64>,
    reps: Vec<RepetitionErrors<f64>>,
}

fn f1_runs() -> F1Runs {
    let cfg = study_cfg(Variant::F1, &F1_HORIZONS, &RATE_SIZES, STUDY_REPS);
    let reps = run_reps(&cfg, 0..STUDY_REPS);
    F1Runs { cfg, reps }
}

fn criterion_1(runs: &F1Runs) -> Outcome {
    let rows: Vec<MseRow> = aggregate(&runs.cfg, &runs.reps)
        .into_iter()
        .filter(|r| RATE_HORIZONS.contains(&r.t))
        .collect();
    rate_constancy(1, Variant::F1, &rows)
}

fn criterion_2() -> Outcome {
    let cfg = study_cfg(Variant::F2, &RATE_HORIZONS, &RATE_SIZES, STUDY_REPS);
    let rows = aggregate(&cfg, &run_reps(&cfg, 0..STUDY_REPS));
    rate_constancy(2, Variant::F2, &rows)
}

fn criterion_3() -> Outcome {
    let sizes = [50, 200, 800, 3200];
    let cfg = study_cfg(Variant::F3, &[100.0], &sizes, STUDY_REPS);
    let rows = aggregate(&cfg, &run_reps(&cfg, 0..STUDY_REPS));
    print_rows(&rows);
    let sel: Vec<&MseRow> = rows.iter().collect();
    let (med, worst) = spread_about_median(&sel);
    for r in &rows {
        if let Some(j) = benchmark_tables::F3_SIZES.iter().position(|&n| n == r.n) {
            println!("      N={}: reference mse·N = {:.3e}", r.n, benchmark_tables::F3_MSE[j] * r.n as f64);
        }
    }

    let long = study_cfg(Variant::F3, &[100.0, 400.0], &[200], STUDY_REPS);
    let long_rows = aggregate(&long, &run_reps(&long, 0..STUDY_REPS));
    print_rows(&long_rows);
    let ratio = long_rows[1].mse / long_rows[0].mse;
    let flat = (1.0 / F3_T_FACTOR..=F3_T_FACTOR).contains(&ratio);
    Outcome {
        id: 3,
        title: "F3 time-uniform 1/N rate",
        pass: worst <= RATIO_FACTOR && flat,
        detail: format!(
            "mse·N median {med:.3e}, worst factor {worst:.2} (tol {RATIO_FACTOR}); \
             N=200 mse(t=400)/mse(t=100) = {ratio:.2} (tol factor {F3_T_FACTOR})"
        ),
    }
}

fn criterion_4(runs: &F1Runs) -> Outcome {
    const N: usize = 250;
    const T: f64 = 1600.0;
    const REPS: usize = 200;
    let cfg = study_cfg(Variant::F1, &[T], &[N], REPS);
    let ni = runs.cfg.particles.iter().position(|&n| n == N).expect("shared size");
    let hi = runs.cfg.horizons.iter().position(|&h| h == T).expect("shared horizon");
    // the first repetitions coincide with the shared F1 runs (same seeds)
    let mut reps: Vec<RepetitionErrors<f64>> = runs
        .reps
        .iter()
        .map(|r| RepetitionErrors {
            rep: r.rep,
            errors: vec![vec![r.errors[ni][hi]]],
        })
        .collect();
    reps.extend(run_reps(&cfg, runs.reps.len()..REPS));
    let row = aggregate(&cfg, &reps)[0];
    let pass = row.bias <= BIAS_SIGMAS * row.bias_stderr;
    Outcome {
        id: 4,
        title: "F1 estimator bias sign",
        pass,
        detail: format!(
            "mean(U^N − U) = {:.4e} ± {:.2e} over M = {} (pass if ≤ {BIAS_SIGMAS}·stderr)",
            row.bias, row.bias_stderr, row.m
        ),
    }
}

fn criterion_5() -> Outcome {
    const N: usize = 10_000;
    const T: f64 = 10.0;
    const L: u32 = 10;
    const SEEDS: u64 = 20;
    let model = scalar_benchmark(1.0).expect("model");
    let mut pass = true;
    let mut parts = Vec::new();
    for variant in [Variant::F1, Variant::F2, Variant::F3] {
        let errs: Vec<(f64, f64)> = (0..SEEDS)
            .into_par_iter()
            .map(|s| {
                let obs = simulate_truth(&model, T, L, indexed_seed(sub_seed(SEED, "oracle-truth"), s))
                    .expect("truth");
                let mut kb = KalmanBucyFilter::new(&model);
                let mut filter = EnsembleFilter::from_initial_law(
                    &model,
                    FilterVariant::with_defaults(variant),
                    N,
                    indexed_seed(sub_seed(SEED, "oracle-filter"), s),
                )
                .expect("filter");
                let mut dy = DVector::zeros(1);
                for k in 0..obs.steps() {
                    obs.increment_into(k, dy.as_mut_slice());
                    kb.step(&dy, obs.dt()).expect("kb");
                    filter.advance(dy.as_slice(), obs.dt()).expect("enkbf");
                }
                let m = ensemble_mean(filter.ensemble())[0];
                let p = sample_covariance(filter.ensemble()).expect("cov")[(0, 0)];
                ((m - kb.state().x_hat[0]).abs(), (p - kb.state().p[(0, 0)]).abs())
            })
            .collect();
        let dm = errs.iter().map(|e| e.0).sum::<f64>() / SEEDS as f64;
        let dp = errs.iter().map(|e| e.1).sum::<f64>() / SEEDS as f64;
        pass &= dm <= ORACLE_TOL && dp <= ORACLE_TOL;
        parts.push(format!("{variant}: mean |m−X̂| = {dm:.2e}, mean |p−P| = {dp:.2e}"));
    }
    Outcome {
        id: 5,
        title: "oracle agreement (N = 1e4, T = 10, L = 10, 20 seeds)",
        pass,
        detail: format!("{} (tol {ORACLE_TOL})", parts.join("; ")),
    }
}

fn criterion_6() -> Outcome {
    // A = −2, R1 = 1, C = 1, R2 = 1/4, so S = 4
    let model = scalar_benchmark(1.0).expect("model");
    let p_inf = steady_state_riccati(&model, 1e-13, 1_000_000).expect("riccati")[(0, 0)];
    let mut kb = KalmanBucyFilter::new(&model);
    let dt = 2f64.powi(-10);
    let zero = DVector::zeros(1);
    for _ in 0..20 * 1024 {
        kb.step(&zero, dt).expect("kb");
    }
    let p20 = kb.state().p[(0, 0)];
    let pass = (p_inf - RICCATI_ROOT).abs() <= RICCATI_TOL && (p20 - p_inf).abs() <= RICCATI_T20_TOL;
    Outcome {
        id: 6,
        title: "Riccati fixed point",
        pass,
        detail: format!(
            "steady state {p_inf:.9} (target {RICCATI_ROOT:.9} ± {RICCATI_TOL:.0e}); \
             P(20) = {p20:.9}, |P(20) − P∞| = {:.1e} (tol {RICCATI_T20_TOL:.0e})",
            (p20 - p_inf).abs()
        ),
    }
}

/// Linear family with default α constants. The SPSA check reads `θ2 R` as the
/// signal-noise square root: under the inverse reading the likelihood is nearly
/// flat in θ2 around the starting point.
fn linear_map(r: usize) -> ThetaMap<f64> {
    ThetaMap::linear_scaled(
        draw_cstar(r, r, sub_seed(SEED, "cstar")),
        1.0 / (r as f64).sqrt(),
        1.0,
        NoiseSpec::Sqrt,
        InitialLaw::isotropic(r, 4.0, 1.0).expect("law"),
    )
    .expect("map")
}

fn spsa_average(
    map: ThetaMap<f64>,
    obs: &PathPair<f64>,
    variant: Variant,
    schedule: SpsaSchedule,
    theta0: &[f64],
    horizon: usize,
    trajectories: usize,
) -> DVector<f64> {
    let cfg = SpsaConfig {
        map,
        schedule,
        variant: FilterVariant::with_defaults(variant),
        particles: 100,
        level: LEVEL,
        theta0: DVector::from_column_slice(theta0),
        horizon,
        seed: sub_seed(SEED, "spsa"),
    };
    let traces = rml_trajectories(&cfg, obs, trajectories).expect("rml");
    for (j, tr) in traces.iter().enumerate() {
        let last = &tr.points.last().expect("points").1;
        println!("      {variant} trajectory {j}: theta_T = {:?}", last.as_slice());
    }
    average_final(&traces).expect("traces")
}

fn criterion_7() -> Outcome {
    const T: usize = 1000;
    let truth_theta = [-2.0, 1.0];
    let map = linear_map(2);
    let truth = map.apply(&DVector::from_column_slice(&truth_theta)).expect("truth model");
    let obs = simulate_truth(&truth, T as f64, LEVEL, sub_seed(SEED, "truth")).expect("truth");
    let mut pass = true;
    let mut parts = Vec::new();
    for variant in [Variant::F1, Variant::F2, Variant::F3] {
        let avg = spsa_average(map.clone(), &obs, variant, SpsaSchedule::linear(variant), &[-1.0, 2.0], T, 5);
        let err = (0..2).map(|k| (avg[k] - truth_theta[k]).abs()).fold(0.0, f64::max);
        pass &= err <= LINEAR_SPSA_TOL;
        parts.push(format!("{variant}: theta_T = ({:.3}, {:.3}), max error {err:.3}", avg[0], avg[1]));
    }
    Outcome {
        id: 7,
        title: "SPSA linear recovery (r1 = r2 = 2, sqrt noise reading, T = 1000, 5 trajectories)",
        pass,
        detail: format!("{} (tol {LINEAR_SPSA_TOL})", parts.join("; ")),
    }
}

fn l96_point(r1: usize) -> InitialLaw<f64> {
    let mut x0 = DVector::from_element(r1, 8.0);
    x0[0] = 8.01;
    InitialLaw::point(x0)
}

fn criterion_8() -> Outcome {
    const R1: usize = 20;
    const T: usize = 300;
    let truth_map = ThetaMap::lorenz96(R1, l96_point(R1)).expect("map");
    let truth = truth_map.apply(&DVector::from_element(1, 8.0)).expect("truth model");
    let obs = simulate_truth(&truth, T as f64, LEVEL, sub_seed(SEED, "truth")).expect("truth");
    let mut pass = true;
    let mut parts = Vec::new();
    for variant in [Variant::F1, Variant::F2, Variant::F3] {
        let initial = match variant {
            Variant::F3 => InitialLaw::isotropic(R1, 8.0, 0.05).expect("law"),
            _ => l96_point(R1),
        };
        let map = ThetaMap::lorenz96(R1, initial).expect("map");
        let avg = spsa_average(map, &obs, variant, SpsaSchedule::lorenz96(), &[10.0], T, 5);
        let err = (avg[0] - 8.0).abs();
        pass &= err <= L96_SPSA_TOL;
        parts.push(format!("{variant}: theta_T = {:.3}", avg[0]));
    }
    Outcome {
        id: 8,
        title: "SPSA Lorenz '96 recovery (r1 = 20, T = 300, 5 trajectories)",
        pass,
        detail: format!("{} (tol {L96_SPSA_TOL} around 8)", parts.join("; ")),
    }
}

fn uniform(rng: &mut StreamRng) -> f64 {
    rng.random()
}

fn permutation(n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn two_dim_model() -> LinearGaussianModel<f64> {
    LinearGaussianModel::new(
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.5]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
        DMatrix::identity(2, 2) * 0.7,
        DMatrix::identity(1, 1),
        InitialLaw::isotropic(2, 1.0, 2.0).expect("law"),
    )
    .expect("model")
}

type Trace = (Ensemble<f64>, NoiseStreams, LogNcAccumulator<f64>, Vec<(Vec<f64>, DMatrix<f64>)>);

fn run_filter<M: FilterModel<f64>>(
    model: &M,
    variant: Variant,
    start: (Ensemble<f64>, NoiseStreams, LogNcAccumulator<f64>),
    obs: &PathPair<f64>,
    steps: Range<usize>,
) -> Trace {
    let mut f =
        EnsembleFilter::resume(model, FilterVariant::with_defaults(variant), start.0, start.1, start.2).expect("filter");
    let mut dy = vec![0.0; obs.obs_dim()];
    let mut moments = Vec::new();
    for k in steps {
        obs.increment_into(k, &mut dy);
        f.advance(&dy, obs.dt()).expect("step");
        moments.push((f.last_mean().to_vec(), f.last_covariance().clone()));
    }
    let (e, n, u) = f.into_parts();
    (e, n, u, moments)
}

fn exchangeable<M: FilterModel<f64>>(model: &M, variant: Variant, n: usize, seed: u64) -> bool {
    let obs = simulate_truth(model, 1.0, 6, seed).expect("truth");
    let mut noise = NoiseStreams::new(seed ^ 0xA5A5, n);
    let ens = Ensemble::sample(model.initial_law(), &mut noise).expect("sample");
    let perm = permutation(n, &mut stream(seed));
    let steps = 0..obs.steps();
    let a = run_filter(model, variant, (ens.clone(), noise.clone(), LogNcAccumulator::new()), &obs, steps.clone());
    let b = run_filter(
        model,
        variant,
        (ens.permuted(&perm), noise.permuted(&perm), LogNcAccumulator::new()),
        &obs,
        steps,
    );
    a.2.value.to_bits() == b.2.value.to_bits() && a.3 == b.3 && a.0.permuted(&perm).particles() == b.0.particles()
}

fn additive<M: FilterModel<f64>>(model: &M, variant: Variant, split: usize, seed: u64) -> bool {
    let obs = simulate_truth(model, 1.0, 6, seed).expect("truth");
    let mut noise = NoiseStreams::new(seed, 16);
    let ens = Ensemble::sample(model.initial_law(), &mut noise).expect("sample");
    let whole = run_filter(model, variant, (ens.clone(), noise.clone(), LogNcAccumulator::new()), &obs, 0..64);
    let head = run_filter(model, variant, (ens, noise, LogNcAccumulator::new()), &obs, 0..split);
    let carried = run_filter(model, variant, (head.0.clone(), head.1.clone(), head.2), &obs, split..64);
    let fresh = run_filter(model, variant, (head.0, head.1, LogNcAccumulator::new()), &obs, split..64);
    let sum = head.2.value + fresh.2.value;
    carried.2.value.to_bits() == whole.2.value.to_bits()
        && (sum - whole.2.value).abs() <= 1e-12 * (1.0 + whole.2.value.abs())
}

fn manifest_replay(dir: &std::path::Path) -> Result<(), String> {
    let cli = |args: &[&str]| {
        let argv = std::iter::once("enkbf-lab").chain(args.iter().copied());
        enkbf_lab::run(&enkbf_lab::Cli::parse_from(argv)).map_err(|e| e.to_string())
    };
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(
        dir.join("model.json"),
        r#"{"family":"linear_scaled","r1":1,"r2":1,"theta":[-2,1],"L":6,"T":4,"seed":3,"alpha1":1,"alpha2":2,"x0":{"mean":0.5,"variance":0.2}}"#,
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(dir.join("study.json"), r#"{"variant":"f3","horizons":[1,2],"N":[8,16],"L":5,"M":3,"seed":4}"#)
        .map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("fit.json"),
        r#"{"family":"lorenz63","variant":"f2","theta0":[7.5,26.7,6.5],"theta_true":[10,28,2.6666666666666665],"N":12,"L":6,"T":3,"seed":5,"trajectories":2}"#,
    )
    .map_err(|e| e.to_string())?;
    cli(&["simulate", "--config", &p("model.json"), "--out", &p("pp.csv")])?;
    cli(&["filter", "--config", &p("model.json"), "--data", &p("pp.csv"), "--out", &p("u.csv"), "--variant", "f3", "--emit-cov"])?;
    cli(&["mse-study", "--config", &p("study.json"), "--out", &p("study.csv")])?;
    cli(&["spsa", "--config", &p("fit.json"), "--out", &p("theta.csv")])?;
    cli(&["plot", "--input", &p("study.csv"), "--out", &p("study.dat")])?;
    for (out, extra) in [
        ("pp.csv", vec![]),
        ("u.csv", vec!["u_mean.csv", "u_cov.csv"]),
        ("study.csv", vec![]),
        ("theta.csv", vec![]),
        ("study.dat", vec![]),
    ] {
        let replayed = format!("replay_{out}");
        cli(&["replay", "--manifest", &p(&format!("{out}.manifest.json")), "--out", &p(&replayed)])?;
        let mut pairs = vec![(out.to_string(), replayed.clone())];
        for e in extra {
            pairs.push((e.to_string(), format!("replay_{e}")));
        }
        for (a, b) in pairs {
            let (x, y) = (std::fs::read(dir.join(&a)), std::fs::read(dir.join(&b)));
            match (x, y) {
                (Ok(x), Ok(y)) if x == y => {}
                _ => return Err(format!("{a} and {b} differ")),
            }
        }
    }
    Ok(())
}

fn criterion_9() -> Outcome {
    let mut failures = Vec::new();
    let scalar = scalar_benchmark(1.0).expect("model");
    let planar = two_dim_model();

    let mut ok = true;
    for variant in [Variant::F1, Variant::F2, Variant::F3] {
        for (s, n) in [(1u64, 2usize), (2, 7), (3, 40)] {
            ok &= exchangeable(&scalar, variant, n, s) && exchangeable(&planar, variant, n, s + 10);
        }
    }
    if !ok {
        failures.push("exchangeability");
    }

    let mut rng = stream(sub_seed(SEED, "psd"));
    let mut ok = true;
    for case in 0..300 {
        let r = 1 + case % 6;
        let n = 2 + case % 37;
        let offset = 1e3 * standard_normal::<f64, _>(&mut rng);
        let x = DMatrix::from_fn(r, n, |i, _| 10f64.powi(i as i32 - 2) * standard_normal::<f64, _>(&mut rng) + offset);
        let p = sample_covariance(&Ensemble::new(x, 0.0).expect("ensemble")).expect("cov");
        let tol = 1e-10 * p.diagonal().amax().max(f64::MIN_POSITIVE);
        ok &= p == p.transpose() && p.clone().symmetric_eigen().eigenvalues.iter().all(|&l| l >= -tol);
    }
    if !ok {
        failures.push("PSD covariance");
    }

    let mut ok = true;
    for variant in [Variant::F1, Variant::F2, Variant::F3] {
        for (split, seed) in [(1, 5u64), (17, 6), (63, 7)] {
            ok &= additive(&scalar, variant, split, seed) && additive(&planar, variant, split, seed);
        }
    }
    if !ok {
        failures.push("accumulator additivity");
    }

    let dir = std::env::temp_dir().join(format!("enkbf-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("temp dir");
    let replay = manifest_replay(&dir);
    let _ = std::fs::remove_dir_all(&dir);
    if let Err(e) = &replay {
        println!("      replay: {e}");
        failures.push("manifest replay");
    }

    let mut rng = stream(sub_seed(SEED, "perturb"));
    let mut ok = true;
    for _ in 0..2000 {
        let d = 1 + (uniform(&mut rng) * 4.0) as usize;
        let theta = DVector::from_fn(d, |_, _| 20.0 * standard_normal::<f64, _>(&mut rng));
        let nu = 2.0 * uniform(&mut rng);
        let delta = DVector::from_fn(d, |_, _| if uniform(&mut rng) < 0.5 { -1.0 } else { 1.0 });
        let (plus, minus) = perturb(&theta, nu, &delta);
        let sum = plus + minus;
        ok &= (0..d).all(|k| (sum[k] - 2.0 * theta[k]).abs() <= 1e-12 * (theta[k].abs() + nu));
        let u = standard_normal::<f64, _>(&mut rng);
        ok &= spsa_update(&theta, u, u, uniform(&mut rng), nu.max(1e-3), &delta, 1).expect("update") == theta;
    }
    if !ok {
        failures.push("perturbation symmetry / zero-difference update");
    }

    // ν_t underflows to 0 after the first unit: branches coincide and θ must freeze bit for bit
    let map = linear_map(2);
    let truth = map.apply(&DVector::from_column_slice(&[-2.0, 1.0])).expect("truth");
    let obs = simulate_truth(&truth, 4.0, 6, 11).expect("truth");
    let mut schedule = SpsaSchedule::linear(Variant::F1);
    schedule.nu_exp = 2000.0;
    let cfg = SpsaConfig {
        map,
        schedule,
        variant: FilterVariant::with_defaults(Variant::F2),
        particles: 20,
        level: 6,
        theta0: DVector::from_column_slice(&[-1.0, 2.0]),
        horizon: 4,
        seed: 12,
    };
    let mut est = RmlEstimator::new(&cfg, &obs).expect("estimator");
    let first = est.step().expect("step").1;
    let frozen = (0..3).all(|_| est.step().expect("step").1 == first);
    if !frozen {
        failures.push("zero-finite-difference stationarity");
    }

    Outcome {
        id: 9,
        title: "property suites",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "exchangeability, PSD covariance, additivity, manifest replay, perturbation symmetry, \
             zero-difference stationarity all hold (exact equality where bit-exactness is claimed)"
                .into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    }
}

fn selected() -> Vec<u32> {
    match std::env::var("ACCEPTANCE") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        _ => (1..=9).collect(),
    }
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored
    let want = selected();
    println!("acceptance: seed {SEED}, scalar study C = {CSTAR}, L = {LEVEL}, criteria {want:?}");
    let mut outcomes = Vec::new();
    let mut record = |o: Outcome, started: Instant| {
        println!(
            "C{} {} {}: {} [{:.0}s]",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.title,
            o.detail,
            started.elapsed().as_secs_f64()
        );
        outcomes.push(o);
    };
    let f1 = (want.contains(&1) || want.contains(&4)).then(|| {
        let started = Instant::now();
        let runs = f1_runs();
        (runs, started)
    });
    if want.contains(&1) {
        let (runs, started) = f1.as_ref().expect("F1 runs");
        record(criterion_1(runs), *started);
    }
    type Check = fn() -> Outcome;
    let plain: [(u32, Check); 2] = [(2, criterion_2), (3, criterion_3)];
    for (id, f) in plain {
        if want.contains(&id) {
            let started = Instant::now();
            record(f(), started);
        }
    }
    if want.contains(&4) {
        let started = Instant::now();
        record(criterion_4(&f1.as_ref().expect("F1 runs").0), started);
    }
    let rest: [(u32, Check); 5] = [
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    for (id, f) in rest {
        if want.contains(&id) {
            let started = Instant::now();
            record(f(), started);
        }
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        outcomes.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
