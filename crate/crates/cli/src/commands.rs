//! Subcommand drivers. Each writes its tables, a JSON summary and a manifest
//! into the output directory.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use mutsel_core::dynamics::{canonical_start, integrate, IntegrateOptions, Method, CANONICAL_AMPLITUDE};
use mutsel_core::equilibrium::{
    concentration_limits, iterate_coupled, lower_bound_check, multistart, mu_pinning_check,
    solve_uncoupled, superposition_error, Classification, CoupledSolve, EquilibriumSummary,
};
use mutsel_core::output::{field_rows, write_csv_file, write_json_file, SCHEMA_VERSION};
use mutsel_core::spectral::{r0_limits, spectral_gap, SweepOptions, DEFAULT_EPSILONS};
use mutsel_core::stability::{stability_spectrum, uncoupled_derivative_spectrum, StabilityOptions};
use mutsel_core::{Field, OpKind, Problem};

use crate::config::{Format, RunConfig};

/// A terminal mass of `A` below this counts as extinction.
pub const EXTINCTION_MASS: f64 = 1e-6;

/// Collects output paths and writes them in the configured format.
struct Outputs<'a> {
    cfg: &'a RunConfig,
    written: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out)
            .with_context(|| format!("creating {}", cfg.out.display()))?;
        Ok(Self {
            cfg,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.cfg.out.join(name)
    }

    fn table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<()> {
        match self.cfg.format {
            Format::Csv => {
                let path = self.path(&format!("{stem}.csv"));
                write_csv_file(&path, rows)?;
            }
            Format::Json => {
                let path = self.path(&format!("{stem}.json"));
                write_json_file(&path, &rows)?;
            }
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json_file(&path, value)?;
        Ok(())
    }

    /// Writes `manifest.json`: the resolved configuration, command options and
    /// the files produced.
    fn finish(mut self, command: &str, options: Value) -> Result<()> {
        let path = self.path("manifest.json");
        let manifest = json!({
            "tool": "mutsel",
            "version": env!("CARGO_PKG_VERSION"),
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "options": options,
            "config": self.cfg,
            "outputs": self.written,
        });
        write_json_file(&path, &manifest)?;
        Ok(())
    }
}

fn problem(cfg: &RunConfig, eps: f64) -> Result<Problem> {
    Ok(Problem::new(&cfg.model, eps, &cfg.grid, cfg.mode)?)
}

fn kind_name(kind: OpKind) -> String {
    match kind.host_index() {
        Some(k) => format!("L{}", k + 1),
        None => "L".into(),
    }
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    operator: String,
    epsilon: f64,
    nodes: usize,
    lambda1: f64,
    lambda2: f64,
    gap: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
}

pub fn spectrum(cfg: &RunConfig, host: Option<usize>) -> Result<()> {
    let eps = cfg.sweep_epsilons(&DEFAULT_EPSILONS);
    let kinds = match host {
        Some(k) => vec![OpKind::host(k - 1)],
        None => vec![OpKind::L1, OpKind::L2, OpKind::L],
    };
    let opts = SweepOptions {
        grid: cfg.grid,
        mode: cfg.mode,
        power: cfg.power,
    };
    let limits = r0_limits(&problem(cfg, eps[0])?);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for kind in kinds {
        let table = spectral_gap(&cfg.model, kind, &eps, &opts)?;
        let name = kind_name(kind);
        let r0 = kind.host_index().map_or(limits.r0, |k| limits.r0_host[k]);
        for r in &table.rows {
            println!(
                "{name} epsilon={} nodes={} lambda1={:.10} lambda2={:.10} gap={:.3e} converged={}",
                r.epsilon, r.nodes, r.lambda1, r.lambda2, r.gap, r.converged
            );
            rows.push(SpectrumRow {
                operator: name.clone(),
                epsilon: r.epsilon,
                nodes: r.nodes,
                lambda1: r.lambda1,
                lambda2: r.lambda2,
                gap: r.gap,
                residual: r.residual,
                iterations: r.iterations,
                converged: r.converged,
            });
        }
        if table.at_risk {
            warn!("{name}: spectral gap degenerate or collapsing faster than any moderate power of epsilon");
        }
        summaries.push(json!({
            "operator": name,
            "r0_limit": r0,
            "gap_exponent": table.exponent,
            "at_risk": table.at_risk,
        }));
    }
    let failed = rows.iter().filter(|r| !r.converged).count();
    let mut out = Outputs::new(cfg)?;
    out.table("spectrum", &rows)?;
    out.json("gap_summary.json", &json!({ "operators": summaries, "not_converged": failed }))?;
    out.finish("spectrum", json!({ "host": host, "epsilons": eps }))?;
    if failed > 0 && !cfg.allow_partial {
        bail!("{failed} spectral entries did not converge");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct HistoryRow {
    iteration: usize,
    residual: f64,
}

fn write_history(out: &mut Outputs, solve: &CoupledSolve) -> Result<()> {
    let rows: Vec<HistoryRow> = solve
        .history
        .iter()
        .enumerate()
        .map(|(iteration, &residual)| HistoryRow { iteration, residual })
        .collect();
    out.table("residual_history", &rows)
}

pub fn equilibrium(cfg: &RunConfig, starts: usize, with_stability: bool) -> Result<()> {
    let eps = cfg.single_epsilon()?;
    let p = problem(cfg, eps)?;
    info!("solving on {} nodes at epsilon {eps}", p.grid.len());
    let solve = iterate_coupled(&p, None, &cfg.fixed_point)?;
    let mut out = Outputs::new(cfg)?;
    write_history(&mut out, &solve)?;
    let options = json!({ "epsilon": eps, "starts": starts, "stability": with_stability });
    if !solve.converged {
        out.finish("equilibrium", options)?;
        bail!(
            "fixed point did not converge after {} iterations (residual {:.3e})",
            solve.iterations,
            solve.residual
        );
    }
    let state = &solve.state;
    let summary = state.summary(eps);
    let uncoupled = [
        solve_uncoupled(&p, 0, &cfg.power)?,
        solve_uncoupled(&p, 1, &cfg.power)?,
    ];
    let spectral = [&uncoupled[0].spectral, &uncoupled[1].spectral];
    let mut diagnostics = json!({
        "nodes": p.grid.len(),
        "iterations": solve.iterations,
        "r0": r0_limits(&p),
        "lambda1": [spectral[0].lambda1, spectral[1].lambda1],
        "limits": concentration_limits(&p),
        "lower_bounds": lower_bound_check(&p, state, spectral),
    });
    if state.classification == Classification::Endemic {
        diagnostics["mu_pinning"] = json!(mu_pinning_check(&p, state, spectral)?);
        diagnostics["superposition"] =
            json!(superposition_error(&p, &state.a, [&uncoupled[0], &uncoupled[1]])?);
    }
    if starts > 0 {
        let ms = multistart(&p, starts, cfg.seed, &cfg.fixed_point)?;
        diagnostics["multistart_max_distance"] = json!(ms.max_pairwise_distance);
    }
    if with_stability {
        let report = stability_spectrum(&p, &state.a, &StabilityOptions::default())?;
        println!(
            "stability: spectral radius {:.6} ({})",
            report.spectral_radius,
            if report.stable { "stable" } else { "not stable" }
        );
        diagnostics["stability"] = json!(report);
    }
    print_summary(&summary);
    out.table("equilibrium_fields", &field_rows(state))?;
    out.json(
        "equilibrium.json",
        &json!({ "summary": summary, "diagnostics": diagnostics }),
    )?;
    out.finish("equilibrium", options)
}

fn print_summary(s: &EquilibriumSummary) {
    let class = serde_json::to_value(s.classification).unwrap_or_default();
    println!(
        "classification={} epsilon={} S1={:.6} S2={:.6} int_I1={:.6} int_I2={:.6} int_A={:.6} int_xA={:.6} argmax_A={:.4} residual={:.2e}",
        class.as_str().unwrap_or("?"),
        s.epsilon,
        s.s1,
        s.s2,
        s.int_i1,
        s.int_i2,
        s.int_a,
        s.first_moment,
        s.argmax_a,
        s.residual
    );
}

#[derive(Debug, Serialize)]
struct SweepRow {
    epsilon: f64,
    nodes: usize,
    status: String,
    s1: Option<f64>,
    s2: Option<f64>,
    int_i1: Option<f64>,
    int_i2: Option<f64>,
    int_a: Option<f64>,
    first_moment: Option<f64>,
    argmax_a: Option<f64>,
    superposition_relative: Option<f64>,
    a_l1_sigma1: Option<f64>,
    a_l1_sigma2: Option<f64>,
    residual: Option<f64>,
    iterations: Option<usize>,
}

impl SweepRow {
    fn failed(epsilon: f64, nodes: usize, status: String) -> Self {
        Self {
            epsilon,
            nodes,
            status,
            s1: None,
            s2: None,
            int_i1: None,
            int_i2: None,
            int_a: None,
            first_moment: None,
            argmax_a: None,
            superposition_relative: None,
            a_l1_sigma1: None,
            a_l1_sigma2: None,
            residual: None,
            iterations: None,
        }
    }
}

fn sweep_entry(cfg: &RunConfig, eps: f64) -> SweepRow {
    let p = match problem(cfg, eps) {
        Ok(p) => p,
        Err(e) => return SweepRow::failed(eps, 0, format!("error: {e}")),
    };
    let nodes = p.grid.len();
    let run = || -> Result<SweepRow> {
        let solve = iterate_coupled(&p, None, &cfg.fixed_point)?;
        if !solve.converged {
            let mut row = SweepRow::failed(eps, nodes, "not_converged".into());
            row.residual = Some(solve.residual);
            row.iterations = Some(solve.iterations);
            return Ok(row);
        }
        let u = [solve_uncoupled(&p, 0, &cfg.power)?, solve_uncoupled(&p, 1, &cfg.power)?];
        let a = &solve.state.a;
        let sup = superposition_error(&p, a, [&u[0], &u[1]])?;
        let s = solve.state.summary(eps);
        Ok(SweepRow {
            epsilon: eps,
            nodes,
            status: "ok".into(),
            s1: Some(s.s1),
            s2: Some(s.s2),
            int_i1: Some(s.int_i1),
            int_i2: Some(s.int_i2),
            int_a: Some(s.int_a),
            first_moment: Some(s.first_moment),
            argmax_a: Some(s.argmax_a),
            superposition_relative: Some(sup.relative),
            a_l1_sigma1: Some(a.l1_norm_on(p.derived[0].sigma_support)),
            a_l1_sigma2: Some(a.l1_norm_on(p.derived[1].sigma_support)),
            residual: Some(solve.residual),
            iterations: Some(solve.iterations),
        })
    };
    run().unwrap_or_else(|e| SweepRow::failed(eps, nodes, format!("error: {e}")))
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let eps = cfg.sweep_epsilons(&DEFAULT_EPSILONS);
    let limits = concentration_limits(&problem(cfg, eps[0])?);
    let rows: Vec<SweepRow> = eps.par_iter().map(|&e| sweep_entry(cfg, e)).collect();
    for r in &rows {
        println!(
            "epsilon={} nodes={} status={} S1={} int_A={} superposition={} A_sigma2={}",
            r.epsilon,
            r.nodes,
            r.status,
            fmt_opt(r.s1),
            fmt_opt(r.int_a),
            fmt_opt(r.superposition_relative),
            fmt_opt(r.a_l1_sigma2)
        );
    }
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let mut out = Outputs::new(cfg)?;
    out.table("sweep", &rows)?;
    out.json("sweep_summary.json", &json!({ "limits": limits, "failed": failed }))?;
    out.finish("sweep", json!({ "epsilons": eps }))?;
    if failed > 0 && !cfg.allow_partial {
        bail!("{failed} sweep entries failed");
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.6e}"))
}

pub struct DynamicsArgs {
    pub t_end: f64,
    pub dt: f64,
    pub method: Method,
    pub sample_every: f64,
    pub amplitude: f64,
}

impl Default for DynamicsArgs {
    fn default() -> Self {
        let d = IntegrateOptions::default();
        Self {
            t_end: d.t_end,
            dt: d.dt,
            method: d.method,
            sample_every: d.sample_every,
            amplitude: CANONICAL_AMPLITUDE,
        }
    }
}

pub fn dynamics(cfg: &RunConfig, args: &DynamicsArgs) -> Result<()> {
    let eps = cfg.single_epsilon()?;
    let p = problem(cfg, eps)?;
    let opts = IntegrateOptions {
        t_end: args.t_end,
        dt: args.dt,
        method: args.method,
        sample_every: args.sample_every,
    };
    let eq = iterate_coupled(&p, None, &cfg.fixed_point)?;
    if !eq.converged {
        warn!("reference equilibrium not converged (residual {:.3e})", eq.residual);
    }
    let traj = integrate(&p, &canonical_start(&p, args.amplitude), &opts, Some(&eq.state.a))?;
    let last = traj.samples.last().context("empty trajectory")?;
    let extinct = last.a_mass < EXTINCTION_MASS;
    println!(
        "t={} A_mass={:.6e} distance_to_equilibrium={:.3e} clip_events={}{}",
        last.t,
        last.a_mass,
        last.distance.unwrap_or(f64::NAN),
        traj.clip_events,
        if extinct { " extinction" } else { "" }
    );
    let mut out = Outputs::new(cfg)?;
    out.table("trajectory", &traj.samples)?;
    out.json(
        "dynamics.json",
        &json!({
            "epsilon": eps,
            "nodes": p.grid.len(),
            "steps": traj.steps,
            "clip_events": traj.clip_events,
            "terminal_time": last.t,
            "terminal_a_mass": last.a_mass,
            "terminal_distance": last.distance,
            "extinct": extinct,
            "equilibrium": eq.state.summary(eps),
            "equilibrium_converged": eq.converged,
        }),
    )?;
    out.finish(
        "dynamics",
        json!({ "epsilon": eps, "integrate": opts, "amplitude": args.amplitude }),
    )
}

#[derive(Debug, Serialize)]
struct EigenRow {
    index: usize,
    re: f64,
    im: f64,
    modulus: f64,
}

pub fn stability(cfg: &RunConfig, at_zero: bool, uncoupled: usize) -> Result<()> {
    let eps = cfg.single_epsilon()?;
    let p = problem(cfg, eps)?;
    let (a, classification) = if at_zero {
        (Field::zeros(p.grid.clone()), None)
    } else {
        let solve = iterate_coupled(&p, None, &cfg.fixed_point)?;
        if !solve.converged {
            bail!("fixed point did not converge (residual {:.3e})", solve.residual);
        }
        let class = solve.state.classification;
        (solve.state.a, Some(class))
    };
    let opts = StabilityOptions {
        predict: true,
        ..StabilityOptions::default()
    };
    let report = stability_spectrum(&p, &a, &opts)?;
    println!(
        "spectral_radius={:.10} stable={} dimension={} method={:?}",
        report.spectral_radius, report.stable, report.dimension, report.method
    );
    let rows: Vec<EigenRow> = report
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(index, z)| EigenRow {
            index,
            re: z.re,
            im: z.im,
            modulus: z.norm(),
        })
        .collect();
    let hosts = if uncoupled > 0 {
        (0..2)
            .map(|k| uncoupled_derivative_spectrum(&p, k, uncoupled, &cfg.power))
            .collect::<mutsel_core::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut out = Outputs::new(cfg)?;
    out.table("eigenvalues", &rows)?;
    out.json(
        "stability.json",
        &json!({
            "epsilon": eps,
            "at_zero": at_zero,
            "classification": classification,
            "spectral_radius": report.spectral_radius,
            "stable": report.stable,
            "dimension": report.dimension,
            "method": report.method,
            "uncoupled_prediction": report.uncoupled_prediction,
            "uncoupled": hosts,
        }),
    )?;
    out.finish(
        "stability",
        json!({ "epsilon": eps, "at_zero": at_zero, "uncoupled": uncoupled }),
    )
}
