//! Study dispatch, thread selection and the output layout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::corrector::{
    homogenized_map, per_sample, solve_corrector, solve_corrector_from, solve_flux_corrector, solve_linearized, Ensemble,
};
use crate::diagnostics::radius::{
    inf_convolution_brute, lipschitz_excess, lower_meyers_radius, lower_meyers_radius_brute, linear_minimal_radius_brute,
};
use crate::diagnostics::{
    calibrate_c1, clt_scaling, corrector_bounds, corrector_growth, inf_convolution, linear_minimal_radius, meyers_radius,
    radial_profile_check, sandwich_check, verify_strong_monotonicity, ELL,
};
use crate::error::{Error, Result};
use crate::grid::{add3, norm3, scale3, unit, Vec3, VectorField};
use crate::solver::SolveStats;
use crate::twoscale::{control_errors, run_rate_study_fields, CoefficientMode};

use super::config::{ExperimentConfig, StudyKind};
use super::report::{columns, num, opt, Check, RunReport, Status, Table};
use super::snapshot;
use super::verify;

pub const THREADS_ENV: &str = "MONOHOM_THREADS";

/// Brute-force radius oracles run up to this many lattice points.
pub const BRUTE_FORCE_POINTS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Threads {
    pub count: usize,
    pub source: &'static str,
}

/// Flag, then config, then `MONOHOM_THREADS`, then the hardware default.
pub fn resolve_threads(flag: Option<usize>, config: Option<usize>) -> Result<Threads> {
    resolve_threads_with(flag, config, std::env::var(THREADS_ENV).ok().as_deref())
}

pub fn resolve_threads_with(flag: Option<usize>, config: Option<usize>, env: Option<&str>) -> Result<Threads> {
    let pick = |count: usize, source: &'static str| {
        if count == 0 {
            Err(Error::Config(format!("{source} thread count must be positive")))
        } else {
            Ok(Threads { count, source })
        }
    };
    if let Some(n) = flag {
        return pick(n, "flag");
    }
    if let Some(n) = config {
        return pick(n, "config");
    }
    if let Some(v) = env {
        let n = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        return pick(n, "env");
    }
    let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Ok(Threads { count: n, source: "hardware" })
}

/// Runs `f` inside a dedicated rayon pool of `threads` workers.
pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn classify(e: &Error) -> Status {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => Status::ConfigError,
        Error::Invariant(_) => Status::InvariantFailure,
        Error::Sample { source, .. } => classify(source),
        _ => Status::SolverFailure,
    }
}

/// Marks a finished run: `report.json`, and `FAILED` unless the status is ok.
pub fn finish(report: &mut RunReport, out: &Path, result: Result<()>) -> Result<()> {
    match result {
        Ok(()) => {
            if !report.failed_checks().is_empty() {
                report.status = Status::InvariantFailure;
            }
        }
        Err(e) => {
            report.status = classify(&e);
            report.error = Some(e.to_string());
        }
    }
    report.write(out)?;
    let marker = out.join("FAILED");
    if report.status == Status::Ok {
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
    } else {
        let mut text = String::new();
        if let Some(e) = &report.error {
            text.push_str(e);
            text.push('\n');
        }
        for c in report.failed_checks() {
            text.push_str(&format!("{}: {} (threshold {})\n", c.id, c.value, c.threshold));
        }
        fs::write(marker, text)?;
    }
    Ok(())
}

/// Runs one experiment, writing everything under `out`. Tables written
/// before a failure are kept.
pub fn run(config: &ExperimentConfig, out: &Path, threads: Threads) -> RunReport {
    let start = Instant::now();
    let mut ctx = Ctx {
        cfg: config,
        out: out.to_path_buf(),
        report: RunReport::new(config.study.name(), Some(config.clone()), threads.count, threads.source),
    };
    let result = config.validate().and_then(|_| in_pool(threads.count, || dispatch(&mut ctx))?);
    ctx.report.wall_time_s = start.elapsed().as_secs_f64();
    if let Err(e) = finish(&mut ctx.report, out, result) {
        ctx.report.status = Status::SolverFailure;
        ctx.report.error = Some(format!("could not write the report: {e}"));
    }
    ctx.report
}

/// Samples coefficient fields and writes `g` and `A` snapshots.
pub fn sample_field(config: &ExperimentConfig, out: &Path, threads: Threads) -> RunReport {
    let start = Instant::now();
    let mut report = RunReport::new("sample-field", Some(config.clone()), threads.count, threads.source);
    let result = config.validate().and_then(|_| {
        let grid = config.make_grid()?;
        let recipe = config
            .recipe()
            .ok_or_else(|| Error::Config("sample-field needs a recipe block".into()))?;
        let count = if recipe.is_deterministic() { 1 } else { config.params.sample_count };
        let dir = out.join("fields");
        let seed = config.seed;
        let ranges = in_pool(threads.count, || {
            per_sample(count, |i| {
                let (g, a) = recipe.sample(&grid, crate::rng::SampleSeed::new(seed, i))?;
                snapshot::write_scalar(&dir, &format!("g_s{i}"), &g, Some(seed), Some(i))?;
                snapshot::write_matrix(&dir, &format!("A_s{i}"), &a, Some(seed), Some(i))?;
                let (lo, hi) = g.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                Ok((g.mean(), lo, hi))
            })
        })??;
        let mut t = Table::new("samples", &["sample", "g_mean", "g_min", "g_max"]);
        for (i, (m, lo, hi)) in ranges.iter().enumerate() {
            t.push(vec![i.to_string(), num(*m), num(*lo), num(*hi)]);
        }
        t.write(out)?;
        report.tables.push("tables/samples.csv".into());
        report.summary.insert("sample_count".into(), json!(count));
        Ok(())
    });
    report.wall_time_s = start.elapsed().as_secs_f64();
    if let Err(e) = finish(&mut report, out, result) {
        report.status = Status::SolverFailure;
        report.error = Some(format!("could not write the report: {e}"));
    }
    report
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    report: RunReport,
}

impl Ctx<'_> {
    fn table(&mut self, t: Table) -> Result<()> {
        t.write(&self.out)?;
        self.report.tables.push(format!("tables/{}.csv", t.name));
        Ok(())
    }

    fn check(&mut self, c: Check) {
        self.report.checks.push(c);
    }

    fn summary(&mut self, key: &str, v: Value) {
        self.report.summary.insert(key.into(), v);
    }

    fn fields(&self) -> Option<PathBuf> {
        self.cfg.params.snapshots.then(|| self.out.join("fields"))
    }

    fn count(&self, ens: &Ensemble) -> usize {
        if ens.is_deterministic() {
            1
        } else {
            self.cfg.params.sample_count
        }
    }

    fn stats(&mut self, sample: u64, operation: &str, xi: &Vec3, s: &SolveStats) {
        self.report.samples.push(json!({
            "sample": sample,
            "operation": operation,
            "xi": &xi[..self.cfg.grid.d],
            "iterations": s.iterations,
            "krylov_iterations": s.krylov_iterations,
            "final_residual": s.final_residual,
            "wall_time_s": s.wall_time_s,
        }));
    }
}

fn cells(v: &Vec3, d: usize) -> Vec<String> {
    v[..d].iter().map(|x| num(*x)).collect()
}

fn header(parts: Vec<Vec<String>>) -> Vec<String> {
    parts.concat()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn table(name: &str, header: Vec<String>) -> Table {
    Table { name: name.into(), header, rows: Vec::new() }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn dispatch(ctx: &mut Ctx) -> Result<()> {
    match ctx.cfg.study {
        StudyKind::Corrector => corrector(ctx),
        StudyKind::Homogenize => homogenize(ctx),
        StudyKind::Tangent => tangent(ctx),
        StudyKind::Clt => clt(ctx),
        StudyKind::Growth => growth(ctx),
        StudyKind::Monotonicity => monotonicity(ctx),
        StudyKind::RadialOde => radial(ctx),
        StudyKind::TwoScale => two_scale(ctx),
        StudyKind::Radius => radius(ctx),
        StudyKind::Bounds => bounds(ctx),
        StudyKind::Verify => {
            let opts = verify::VerifyOptions { fast: false, tol: ctx.cfg.solver.tol, seed: ctx.cfg.seed };
            let checks = verify::checks_for(ctx.cfg.grid.d, opts)?;
            ctx.report.checks.extend(checks);
            Ok(())
        }
    }
}

struct CorrectorRow {
    sample: u64,
    xi: Vec3,
    abar: Vec3,
    energy: f64,
    stats: SolveStats,
    flux: f64,
    skew: f64,
    grad_mean: f64,
}

fn corrector(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let d = cfg.grid.d;
    let sc = cfg.solver;
    let ens = cfg.ensemble()?;
    let xis = cfg.xis()?;
    let fields = ctx.fields();
    let seed = cfg.seed;
    let per = per_sample(ctx.count(&ens), |i| {
        let op = ens.operator(i)?;
        let mut rows = Vec::new();
        for (k, xi) in xis.iter().enumerate() {
            let b = solve_flux_corrector(solve_corrector(&op, xi, &sc)?)?;
            let sigma = b.sigma.as_ref().expect("populated");
            if let Some(dir) = &fields {
                snapshot::write_scalar(dir, &format!("phi_x{k}_s{i}"), &b.phi, Some(seed), Some(i))?;
                snapshot::write_vector(dir, &format!("grad_phi_x{k}_s{i}"), &b.grad_phi, Some(seed), Some(i))?;
                snapshot::write_matrix(dir, &format!("sigma_x{k}_s{i}"), sigma, Some(seed), Some(i))?;
            }
            rows.push(CorrectorRow {
                sample: i,
                xi: *xi,
                abar: b.abar_sample,
                energy: b.energy(),
                flux: b.flux_identity_residual.unwrap_or(f64::NAN),
                skew: sigma.skew_defect(),
                grad_mean: norm3(&b.grad_phi.mean()),
                stats: b.stats,
            });
        }
        Ok(rows)
    })?;
    let rows: Vec<CorrectorRow> = per.into_iter().flatten().collect();
    let mut t = table(
        "corrector",
        header(vec![
            names(&["sample"]),
            columns("xi", d),
            columns("abar", d),
            names(&["energy", "newton_iterations", "krylov_iterations", "residual", "flux_identity_residual", "skew_defect", "mean_grad_phi"]),
        ]),
    );
    for r in &rows {
        t.push(
            [
                vec![r.sample.to_string()],
                cells(&r.xi, d),
                cells(&r.abar, d),
                vec![
                    num(r.energy),
                    r.stats.iterations.to_string(),
                    r.stats.krylov_iterations.to_string(),
                    num(r.stats.final_residual),
                    num(r.flux),
                    num(r.skew),
                    num(r.grad_mean),
                ],
            ]
            .concat(),
        );
        ctx.stats(r.sample, "corrector", &r.xi, &r.stats);
    }
    ctx.table(t)?;
    let tol = sc.tol;
    ctx.check(Check::at_most("corrector.residual", max_of(rows.iter().map(|r| r.stats.final_residual)), tol, "largest relative Newton residual"));
    ctx.check(Check::at_most("corrector.flux_identity", max_of(rows.iter().map(|r| r.flux)), 10.0 * tol, "||div sigma - (q - mean q)|| / ||q||"));
    ctx.check(Check::at_most("corrector.skew_symmetry", max_of(rows.iter().map(|r| r.skew)), 0.0, "largest |sigma_ij + sigma_ji|"));
    ctx.check(Check::at_most("corrector.zero_mean_gradient", max_of(rows.iter().map(|r| r.grad_mean)), 1e-12, "|mean grad phi|"));
    ctx.summary("sample_count", json!(rows.len() / xis.len()));
    Ok(())
}

fn homogenize(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let d = cfg.grid.d;
    let ens = cfg.ensemble()?;
    let count = ctx.count(&ens);
    let mut t = table(
        "homogenized",
        header(vec![names(&["p", "L", "N"]), columns("xi", d), columns("abar", d), columns("stderr", d), names(&["samples"])]),
    );
    let mut s = table("homogenized_samples", header(vec![names(&["xi_index", "sample"]), columns("abar", d)]));
    let mut finite = true;
    let mut summary = Vec::new();
    for (k, xi) in cfg.xis()?.iter().enumerate() {
        let est = homogenized_map(&ens, xi, count, &cfg.solver)?;
        finite &= est.mean[..d].iter().chain(&est.stderr[..d]).all(|v| v.is_finite());
        t.push(
            [
                vec![num(cfg.operator.p), num(cfg.grid.length), cfg.grid.n.to_string()],
                cells(xi, d),
                cells(&est.mean, d),
                cells(&est.stderr, d),
                vec![est.samples.len().to_string()],
            ]
            .concat(),
        );
        for (i, a) in est.samples.iter().enumerate() {
            s.push([vec![k.to_string(), i.to_string()], cells(a, d)].concat());
        }
        summary.push(json!({"xi": &xi[..d], "abar": &est.mean[..d], "stderr": &est.stderr[..d]}));
    }
    ctx.table(t)?;
    ctx.table(s)?;
    ctx.summary("abar", Value::Array(summary));
    ctx.check(Check::flag("homogenize.finite", finite, "every mean and standard error is finite"));
    Ok(())
}

struct TangentRow {
    sample: u64,
    xi: Vec3,
    tangent: [[f64; 3]; 3],
    fd: [[f64; 3]; 3],
    corrector_fd: Vec<f64>,
    lin_energy: f64,
}

/// Relative error per entry with the denominator floored at `1e-6 max|T|`.
fn componentwise_relative(t: &[[f64; 3]; 3], fd: &[[f64; 3]; 3], d: usize) -> [[f64; 3]; 3] {
    let scale = (0..d).flat_map(|i| (0..d).map(move |j| t[i][j].abs())).fold(0.0, f64::max);
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = (t[i][j] - fd[i][j]).abs() / t[i][j].abs().max(1e-6 * scale).max(f64::MIN_POSITIVE);
        }
    }
    out
}

fn tangent(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let d = cfg.grid.d;
    let sc = cfg.solver;
    let ens = cfg.ensemble()?;
    let xis = cfg.xis()?;
    let h = cfg.params.fd_step;
    let hc = cfg.params.corrector_fd_step;
    let per = per_sample(ctx.count(&ens), |i| {
        let op = ens.operator(i)?;
        let mut rows = Vec::new();
        for xi in &xis {
            let b = solve_corrector(&op, xi, &sc)?;
            let mut row = TangentRow {
                sample: i,
                xi: *xi,
                tangent: [[0.0; 3]; 3],
                fd: [[0.0; 3]; 3],
                corrector_fd: Vec::new(),
                lin_energy: 0.0,
            };
            for j in 0..d {
                let e = unit(j);
                let lin = solve_linearized(&op, &b, &e, &sc)?;
                let step = |s: f64| solve_corrector_from(&op, &add3(xi, &scale3(s, &e)), &sc, Some(&b.phi));
                let (plus, minus) = (step(h)?, step(-h)?);
                let (cp, cm) = (step(hc)?, step(-hc)?);
                for a in 0..d {
                    row.tangent[a][j] = lin.tangent_row[a];
                    row.fd[a][j] = (plus.abar_sample[a] - minus.abar_sample[a]) / (2.0 * h);
                }
                let mut q: VectorField = cp.grad_phi.clone();
                q.axpy(-1.0, &cm.grad_phi);
                q.scale(1.0 / (2.0 * hc));
                q.axpy(-1.0, &lin.grad_phi);
                let denom = lin.grad_phi.norm_l2();
                row.corrector_fd.push(if denom > 0.0 { q.norm_l2() / denom } else { q.norm_l2() });
                let norm = 1.0 + norm3(xi).powf(cfg.operator.p - 2.0);
                row.lin_energy = row.lin_energy.max(lin.weighted_energy / norm);
            }
            rows.push(row);
        }
        Ok(rows)
    })?;
    let rows: Vec<TangentRow> = per.into_iter().flatten().collect();
    let mut t = table(
        "tangent",
        header(vec![names(&["sample"]), columns("xi", d), names(&["i", "j", "tangent", "finite_difference", "relative_error"])]),
    );
    let mut c = table("corrector_fd", header(vec![names(&["sample"]), columns("xi", d), names(&["direction", "relative_l2"])]));
    let mut worst = 0.0f64;
    let mut asym = 0.0f64;
    for r in &rows {
        let rel = componentwise_relative(&r.tangent, &r.fd, d);
        let scale = max_of((0..d).flat_map(|i| (0..d).map(move |j| r.tangent[i][j].abs())));
        for i in 0..d {
            for j in 0..d {
                worst = worst.max(rel[i][j]);
                asym = asym.max((r.tangent[i][j] - r.tangent[j][i]).abs() / scale.max(f64::MIN_POSITIVE));
                t.push(
                    [
                        vec![r.sample.to_string()],
                        cells(&r.xi, d),
                        vec![(i + 1).to_string(), (j + 1).to_string(), num(r.tangent[i][j]), num(r.fd[i][j]), num(rel[i][j])],
                    ]
                    .concat(),
                );
            }
        }
        for (j, e) in r.corrector_fd.iter().enumerate() {
            c.push([vec![r.sample.to_string()], cells(&r.xi, d), vec![(j + 1).to_string(), num(*e)]].concat());
        }
    }
    ctx.table(t)?;
    ctx.table(c)?;
    let tol = cfg.params.fd_tolerance;
    ctx.check(Check::at_most("tangent.fd_consistency", worst, tol, format!("componentwise relative error, h = {h}")));
    let cworst = max_of(rows.iter().flat_map(|r| r.corrector_fd.iter().copied()));
    ctx.check(Check::at_most("tangent.corrector_fd", cworst, tol, format!("relative l2 error, h = {hc}")));
    ctx.check(Check::record("tangent.symmetry", asym, "largest |T_ij - T_ji| / max|T|"));
    ctx.check(Check::record(
        "tangent.weighted_linearized_energy",
        max_of(rows.iter().map(|r| r.lin_energy)),
        "largest mean |grad phi_tilde|^2 mu / (1 + |xi|^(p-2))",
    ));
    Ok(())
}

fn clt(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let d = cfg.grid.d as f64;
    let ens = cfg.ensemble()?;
    let xi = cfg.xis()?[0];
    let rep = clt_scaling(&ens, &xi, cfg.params.quantity, &cfg.params.radii, ctx.count(&ens), &cfg.solver)?;
    let mut t = Table::new("clt", &["radius", "variance", "variance_stderr"]);
    for ((r, v), s) in rep.radii.iter().zip(&rep.variances).zip(&rep.variance_stderr) {
        t.push(vec![num(*r), num(*v), num(*s)]);
    }
    ctx.table(t)?;
    ctx.summary("sample_count", json!(rep.sample_count));
    ctx.summary("quantity", json!(rep.quantity));
    match &rep.fit {
        Some(fit) => {
            ctx.summary("slope", json!(fit.slope));
            ctx.summary("slope_ci95", json!([fit.ci95.0, fit.ci95.1]));
            ctx.check(Check::at_most(
                "clt.slope",
                (fit.slope + d).abs(),
                cfg.params.slope_tolerance,
                format!("|slope + d|, slope = {:.4}", fit.slope),
            ));
        }
        None => ctx.check(Check::record("clt.slope", f64::NAN, "every variance vanishes; no fit")),
    }
    Ok(())
}

fn growth(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let d = cfg.grid.d;
    let ens = cfg.ensemble()?;
    let xi = cfg.xis()?[0];
    let rep = corrector_growth(&ens, &xi, &cfg.growth_points()?, ctx.count(&ens), &cfg.solver)?;
    let mut t = table(
        "growth",
        header(vec![
            columns("x", d),
            names(&["weight", "phi_m1", "phi_m2", "phi_m4", "sigma_m1", "sigma_m2", "sigma_m4", "phi_sup_ratio", "sigma_sup_ratio"]),
        ]),
    );
    let mut finite = true;
    for pt in &rep.points {
        let vals = [
            vec![pt.weight],
            pt.phi_moments.to_vec(),
            pt.sigma_moments.to_vec(),
            vec![pt.phi_sup_ratio, pt.sigma_sup_ratio],
        ]
        .concat();
        finite &= vals.iter().all(|v| v.is_finite());
        t.push([cells(&pt.x, d), vals.iter().map(|v| num(*v)).collect()].concat());
    }
    ctx.table(t)?;
    ctx.summary("sample_count", json!(rep.sample_count));
    ctx.check(Check::flag("growth.finite", finite, "every moment is finite"));
    Ok(())
}

fn monotonicity(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let d = cfg.grid.d;
    let ens = cfg.ensemble()?;
    let rep = verify_strong_monotonicity(&ens, &cfg.xis()?, ctx.count(&ens), &cfg.solver)?;
    let mut a = table("abar", header(vec![columns("xi", d), columns("abar", d)]));
    for (x, v) in rep.xis.iter().zip(&rep.abar) {
        a.push([cells(x, d), cells(v, d)].concat());
    }
    let mut t = table(
        "monotonicity",
        header(vec![columns("xi1", d), columns("xi2", d), names(&["ratio", "stderr", "ci_low", "ci_high"])]),
    );
    for pr in &rep.pairs {
        t.push([cells(&pr.xi1, d), cells(&pr.xi2, d), vec![num(pr.ratio), num(pr.stderr), num(pr.ci95.0), num(pr.ci95.1)]].concat());
    }
    ctx.table(a)?;
    ctx.table(t)?;
    ctx.summary("c_estimate", json!(rep.c_estimate));
    ctx.summary("c_stderr", json!(rep.c_stderr));
    ctx.summary("c_lower", json!(rep.c_lower));
    ctx.summary("witness", json!([&rep.witness.0[..d], &rep.witness.1[..d]]));
    ctx.summary("lipschitz", json!(rep.lipschitz));
    ctx.summary("sample_count", json!(rep.sample_count));
    ctx.check(Check::flag("monotonicity.c_lower", rep.c_lower > 0.0, format!("lower 95% bound {:e}", rep.c_lower)));
    ctx.check(Check::flag("monotonicity.lipschitz", rep.lipschitz.is_finite(), format!("constant {:e}", rep.lipschitz)));
    Ok(())
}

fn radial(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ens = cfg.ensemble()?;
    let rep = radial_profile_check(&ens, &cfg.params.ts, ctx.count(&ens), &cfg.solver)?;
    let mut t = Table::new("radial", &["t", "zeta", "zeta_prime", "h", "residual", "stderr", "floor", "pass"]);
    for pt in &rep.points {
        t.push(vec![
            num(pt.t),
            num(pt.zeta),
            num(pt.zeta_prime),
            num(pt.h),
            num(pt.residual),
            num(pt.stderr),
            num(pt.floor),
            pt.pass.to_string(),
        ]);
    }
    let mut s = Table::new("radial_second", &["t", "zeta_second"]);
    for (x, v) in &rep.zeta_second {
        s.push(vec![num(*x), num(*v)]);
    }
    ctx.table(t)?;
    ctx.table(s)?;
    ctx.summary("sample_count", json!(rep.sample_count));
    let failing = rep.points.iter().filter(|p| !p.pass).count();
    ctx.check(Check::flag("radial.residual", rep.pass, format!("{failing} radii outside three standard errors")));
    ctx.check(Check::record("radial.convexity_constant", rep.convexity_constant, "smallest zeta'' over the tested radii"));
    Ok(())
}

fn two_scale(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let study = cfg.rate_study();
    let (rep, fields) = run_rate_study_fields(&study, cfg.params.snapshots)?;
    let mut t = Table::new(
        "two_scale",
        &[
            "epsilon",
            "delta",
            "sample",
            "err_L2",
            "err_Lp",
            "remainder_L2",
            "slope_partial",
            "quantization_error",
            "correctors",
            "energy_lhs",
            "energy_rhs",
        ],
    );
    for r in &rep.rows {
        t.push(vec![
            num(r.epsilon),
            num(r.delta),
            r.sample.to_string(),
            num(r.err_l2),
            num(r.err_lp),
            num(r.remainder_l2),
            opt(r.slope_partial),
            num(r.quantization_error),
            r.correctors.to_string(),
            num(r.energy_lhs),
            num(r.energy_rhs),
        ]);
    }
    let mut m = Table::new("two_scale_means", &["epsilon", "mean_err_L2", "mean_remainder_L2"]);
    for ((e, a), b) in study.eps.iter().zip(&rep.mean_errors).zip(&rep.mean_remainders) {
        m.push(vec![num(*e), num(*a), num(*b)]);
    }
    ctx.table(t)?;
    ctx.table(m)?;
    if let Some(dir) = ctx.fields() {
        let seed = match &study.mode {
            CoefficientMode::Random { root, .. } => Some(*root),
            _ => None,
        };
        for f in &fields {
            let k = study.eps.iter().position(|e| *e == f.epsilon).unwrap_or(0);
            let s = Some(f.sample);
            snapshot::write_scalar(&dir, &format!("u_eps_e{k}_s{}", f.sample), &f.u_eps, seed, s)?;
            snapshot::write_scalar(&dir, &format!("u_two_scale_e{k}_s{}", f.sample), &f.u2s, seed, s)?;
            snapshot::write_scalar(&dir, &format!("u_bar_e{k}_s{}", f.sample), &f.ubar, seed, s)?;
        }
    }
    let target = cfg.slope_target();
    ctx.summary("error_slope", json!(rep.error_fit.slope));
    ctx.summary("error_slope_ci95", json!([rep.error_fit.ci95.0, rep.error_fit.ci95.1]));
    ctx.summary("remainder_slope", json!(rep.remainder_fit.slope));
    ctx.check(Check::at_least("twoscale.rate", rep.error_fit.slope, target, "fitted slope of log err against log eps"));
    ctx.check(Check::flag("twoscale.energy_estimate", rep.energy_checks_pass, "discrete energy identity holds on every run"));
    ctx.check(Check::flag(
        "twoscale.delta_equals_eps",
        rep.rows.iter().all(|r| r.delta == r.epsilon),
        "partition scale equals the oscillation scale",
    ));
    ctx.check(Check::record("twoscale.remainder_slope", rep.remainder_fit.slope, "fitted slope of the remainder"));
    if !matches!(study.mode, CoefficientMode::Constant { .. }) {
        let mut control = study.clone();
        control.mode = CoefficientMode::Constant { value: 1.0 };
        let eps = *study.eps.last().expect("validated");
        let (err, rem) = control_errors(&control, eps)?;
        ctx.summary("control_error", json!(err));
        ctx.check(Check::at_most("twoscale.control", err.max(rem), 1e-8, "constant-coefficient error and remainder"));
    }
    Ok(())
}

struct RadiusRow {
    sample: u64,
    meyers_mean: f64,
    meyers_max: f64,
    linear_mean: f64,
    lipschitz: Option<f64>,
    brute: Option<bool>,
    lower_violations: usize,
    upper_violations: usize,
}

fn radius(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let sc = cfg.solver;
    let ens = cfg.ensemble()?;
    let grid = ens.grid();
    let xi = cfg.xis()?[0];
    let c1 = match cfg.params.c1 {
        Some(c) => c,
        None => calibrate_c1(&[&solve_corrector(&ens.operator(0)?, &xi, &sc)?])?,
    };
    let lc = cfg.params.linear_c;
    let small = grid.len() <= BRUTE_FORCE_POINTS;
    let fields = ctx.fields();
    let seed = cfg.seed;
    let rows = per_sample(ctx.count(&ens), |i| {
        let op = ens.operator(i)?;
        let b = solve_corrector(&op, &xi, &sc)?;
        let lin = solve_linearized(&op, &b, &unit(0), &sc)?;
        let rm = meyers_radius(&b, c1)?;
        let rl = linear_minimal_radius(&b, &lin, lc)?;
        let sw = sandwich_check(&b, c1)?;
        let brute = small.then(|| -> Result<bool> {
            let lower = lower_meyers_radius(&b, c1)?;
            let lower_b = lower_meyers_radius_brute(&b, c1);
            Ok(lower == lower_b
                && rm.values == inf_convolution_brute(&lower_b, ELL)
                && inf_convolution(&lower_b, ELL) == inf_convolution_brute(&lower_b, ELL)
                && rl.values == linear_minimal_radius_brute(&b, &lin, lc))
        });
        let brute = brute.transpose()?;
        if let Some(dir) = &fields {
            snapshot::write_scalar(dir, &format!("meyers_radius_s{i}"), &rm.values, Some(seed), Some(i))?;
            snapshot::write_scalar(dir, &format!("linear_radius_s{i}"), &rl.values, Some(seed), Some(i))?;
        }
        Ok(RadiusRow {
            sample: i,
            meyers_mean: rm.values.mean(),
            meyers_max: rm.values.max_abs(),
            linear_mean: rl.values.mean(),
            lipschitz: small.then(|| lipschitz_excess(&rm.values, ELL)),
            brute,
            lower_violations: sw.lower_violations,
            upper_violations: sw.upper_violations,
        })
    })?;
    let mut t = Table::new(
        "radius",
        &["sample", "meyers_mean", "meyers_max", "linear_mean", "lipschitz_excess", "brute_force_equal", "lower_violations", "upper_violations"],
    );
    for r in &rows {
        t.push(vec![
            r.sample.to_string(),
            num(r.meyers_mean),
            num(r.meyers_max),
            num(r.linear_mean),
            opt(r.lipschitz),
            r.brute.map(|b| b.to_string()).unwrap_or_default(),
            r.lower_violations.to_string(),
            r.upper_violations.to_string(),
        ]);
    }
    ctx.table(t)?;
    ctx.summary("c1", json!(c1));
    ctx.summary("linear_c", json!(lc));
    if small {
        ctx.check(Check::flag(
            "radius.brute_force",
            rows.iter().all(|r| r.brute == Some(true)),
            "fast radii equal the double-loop oracles",
        ));
        let lip = rows.iter().filter_map(|r| r.lipschitz).fold(f64::NEG_INFINITY, f64::max);
        ctx.check(Check::at_most("radius.lipschitz", lip, 2.0 * grid.spacing(), "largest |r(x) - r(y)| - ell |x - y|"));
    } else {
        ctx.check(Check::record("radius.brute_force", f64::NAN, format!("skipped above {BRUTE_FORCE_POINTS} points")));
    }
    let violations: usize = rows.iter().map(|r| r.lower_violations + r.upper_violations).sum();
    ctx.check(Check::at_most("radius.sandwich", violations as f64, 0.0, "points outside the radius sandwich"));
    Ok(())
}

fn bounds(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ens = cfg.ensemble()?;
    let rep = corrector_bounds(&ens, &cfg.xis()?, ctx.count(&ens), &cfg.solver)?;
    let mut t = Table::new("bounds", &["sample", "energy_constant", "lipschitz_constant"]);
    for (i, (e, l)) in rep.energy_constants.iter().zip(&rep.lipschitz_constants).enumerate() {
        t.push(vec![i.to_string(), num(*e), num(*l)]);
    }
    ctx.table(t)?;
    ctx.summary("energy_constant", json!(rep.energy_constant));
    ctx.summary("lipschitz_constant", json!(rep.lipschitz_constant));
    ctx.check(Check::flag("bounds.finite", rep.finite, "no sample exceeds ten times the median constant"));
    Ok(())
}
