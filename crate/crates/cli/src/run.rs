//! Experiment dispatch.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dqtraj::channels::kraus_validate;
use dqtraj::environment::{EnvKind, EnvPoint, EnvSystem, StateAssignment};
use dqtraj::ergodics::{
    annealed_stationary, dyn_erg_certify, stationary_profile, verify_annealed_lln, verify_lln_outcomes,
    verify_quenched_ergodic, CertifyOptions, LlnOptions, StationaryOptions,
};
use dqtraj::measures::{
    annealed_cylinder, format_word, quenched_cylinder, shift_identity_check, AnnealedSet, CylinderSet, EnvEvent,
    Integration, MeasureRow, DEFAULT_ENUMERATION_BUDGET,
};
use dqtraj::rng::RngStream;
use dqtraj::trajectory::{sample_batch, write_csv as write_trajectories, OmegaMode, TrajectoryRecord};
use thiserror::Error;

use crate::config::{ExperimentConfig, ExperimentKind, IntegrationChoice, OmegaChoice};
use crate::output::{num, plot_csv, report_csv, table_csv, verdict, write_manifest, Manifest, PlotRow, Provenance, ReportRow};

/// Tolerance for identities that hold exactly up to roundoff.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Stream offset for environment points chosen by experiments.
const POINT_STREAM_BIT: u64 = 1 << 61;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] dqtraj::error::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cli: {0}")]
    Usage(String),
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub pass: bool,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub rows: Vec<ReportRow>,
}

/// The tables one experiment produces, before they are written.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub rows: Vec<ReportRow>,
    pub plot: Vec<PlotRow>,
    /// `(file name, contents)` of extra tables.
    pub tables: Vec<(String, String)>,
}

impl Artifacts {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    env: &'a EnvSystem,
    seed: u64,
    threads: Option<usize>,
    prov: Provenance,
}

impl Ctx<'_> {
    fn stationary_opts(&self) -> StationaryOptions {
        let mut o = StationaryOptions::for_env(self.env);
        if let Some(t) = self.cfg.knobs.tol {
            o.tol = t;
        }
        o.n_max = self.cfg.knobs.stationary_n_max;
        o
    }

    fn certify_opts(&self) -> CertifyOptions {
        let k = &self.cfg.knobs;
        CertifyOptions {
            anchors: k.anchors,
            seeds: k.seeds,
            stationary: self.stationary_opts(),
            orbit_len: k.orbit_len,
            master_seed: self.seed,
            threads: self.threads,
        }
    }

    fn lln_opts(&self) -> LlnOptions {
        let k = &self.cfg.knobs;
        LlnOptions {
            trajectories: k.trajectories,
            steps: k.steps,
            master_seed: self.seed,
            threads: self.threads,
            allow_unconverged: k.allow_unconverged,
            z_crit: k.z_crit.unwrap_or(3.0),
            target_samples: k.target_samples,
        }
    }

    fn point(&self, i: u64) -> EnvPoint {
        self.env.sample_invariant(&mut RngStream::new(self.seed, POINT_STREAM_BIT | i).rng())
    }

    fn omega_mode(&self) -> OmegaMode {
        match self.cfg.knobs.omega_mode {
            OmegaChoice::Resample => OmegaMode::ResampleInvariant,
            OmegaChoice::Fixed => OmegaMode::Fixed(self.point(0)),
        }
    }

    fn annealed_set(&self) -> Result<AnnealedSet, RunError> {
        let k = &self.cfg.knobs;
        let event = match &k.event {
            None => None,
            Some(symbols) => {
                let n = self.env.num_symbols().ok_or_else(|| RunError::Usage("events need a finite environment".into()))?;
                Some(EnvEvent { coordinate: 0, symbols: (0..n).map(|s| symbols.contains(&s)).collect() })
            }
        };
        Ok(AnnealedSet { event, cylinder: CylinderSet::new(k.start, k.word.clone())? })
    }
}

fn pattern_name(env: &EnvSystem, p: &[usize]) -> String {
    format_word(env, p)
}

fn validate(ctx: &Ctx) -> Result<Artifacts, RunError> {
    let env = ctx.env;
    let mut rows = Vec::new();
    match env.fiber_table() {
        Some(table) => {
            for (i, k) in table.iter().enumerate() {
                rows.push(ReportRow::at_most(format!("fiber {i} kraus residual"), kraus_validate(k).residual, 1e-10));
            }
        }
        None => {
            // spot-check the parametric family on the circle
            let worst = (0..1000)
                .map(|i| kraus_validate(&env.ensemble_at(&ctx.point(i))).residual)
                .fold(0.0, f64::max);
            rows.push(ReportRow::at_most("circle fibers kraus residual (1000 points)", worst, 1e-10));
        }
    }
    if let EnvKind::Markov { transition, stationary } = env.kind() {
        let k = stationary.len();
        let defect: f64 = (0..k)
            .map(|j| ((0..k).map(|i| stationary[i] * transition[i][j]).sum::<f64>() - stationary[j]).abs())
            .sum();
        rows.push(ReportRow::at_most("stationary law defect", defect, 1e-12));
    }
    let w = ctx.point(0);
    rows.push(ReportRow::flag("step_back inverts step", env.step_back(&env.step(&w)) == w));
    rows.push(ReportRow::within("initial state trace", ctx.cfg.initial.matrix().trace().re, 1.0, 1e-10));
    Ok(Artifacts { rows, ..Default::default() })
}

fn simulate(ctx: &Ctx) -> Result<Artifacts, RunError> {
    let (env, k) = (ctx.env, &ctx.cfg.knobs);
    let records: Vec<TrajectoryRecord> = sample_batch(
        env,
        &StateAssignment::Fixed(ctx.cfg.initial.clone()),
        k.steps,
        k.trajectories,
        ctx.seed,
        &ctx.omega_mode(),
        ctx.threads,
        false,
    )
    .into_iter()
    .collect::<Result<_, _>>()?;
    let mut worst: f64 = 0.0;
    for r in &records {
        let exact = quenched_cylinder(env, &r.env_start, &ctx.cfg.initial, &r.outcomes)?;
        worst = worst.max((r.step_probs.iter().product::<f64>() - exact).abs());
    }
    let mut rows = vec![ReportRow::at_most("chain rule max abs error", worst, IDENTITY_TOL)];
    let mut plot = Vec::new();
    for (a, label) in env.alphabet().iter().enumerate() {
        let mut n = 1;
        while n <= k.steps {
            let freqs: Vec<f64> =
                records.iter().map(|r| r.outcomes[..n].iter().filter(|&&b| b == a).count() as f64 / n as f64).collect();
            let est = dqtraj::measures::Estimate::from_samples(&freqs);
            plot.push(PlotRow { series: label.clone(), x: n as f64, y: est.value, yerr: est.stderr });
            n = if n == k.steps { n + 1 } else { (2 * n).min(k.steps) };
        }
        let total: usize = records.iter().map(|r| r.outcomes.iter().filter(|&&b| b == a).count()).sum();
        rows.push(ReportRow {
            quantity: format!("frequency[{label}]"),
            value: total as f64 / (records.len() * k.steps) as f64,
            target: f64::NAN,
            tolerance: f64::NAN,
            pass: true,
        });
    }
    let mut buf = Vec::new();
    write_trajectories(&mut buf, env, ctx.seed, &records)?;
    let body = String::from_utf8(buf).expect("csv is UTF-8");
    Ok(Artifacts { rows, plot, tables: vec![("trajectories.csv".into(), ctx.prov.header() + &body)] })
}

fn stationary(ctx: &Ctx) -> Result<Artifacts, RunError> {
    let (env, k) = (ctx.env, &ctx.cfg.knobs);
    let opts = ctx.stationary_opts();
    let anchors: Vec<EnvPoint> = (0..k.anchors as u64).map(|i| ctx.point(i)).collect();
    let profile = stationary_profile(env, &anchors, &ctx.cfg.initial, opts, ctx.threads)?;
    let mut rows = vec![
        ReportRow::at_most("max stationarity residual", profile.residual, opts.tol),
        ReportRow::flag("converged", profile.converged),
    ];
    if matches!(env.kind(), EnvKind::Constant | EnvKind::Periodic { .. }) {
        match annealed_stationary(env) {
            Ok(lift) => {
                for (a, (w, st)) in anchors.iter().zip(&profile.states).enumerate() {
                    let s = env.symbol(w).expect("finite kinds have symbols");
                    rows.push(ReportRow::at_most(
                        format!("anchor {a} distance to lifted fixed point"),
                        st.trace_norm_distance(&lift.states[s]),
                        10.0 * opts.tol,
                    ));
                }
            }
            Err(dqtraj::error::Error::Ergodics(_)) => rows.push(ReportRow::flag("unique lifted fixed point", false)),
            Err(e) => return Err(e.into()),
        }
    }
    let mut lines = Vec::new();
    for (a, (w, st)) in anchors.iter().zip(&profile.states).enumerate() {
        let d = st.dim();
        for r in 0..d {
            for c in 0..d {
                let z = st.matrix().get(r, c);
                lines.push(format!("{a},{w},{r},{c},{},{}", num(z.re), num(z.im)));
            }
        }
    }
    Ok(Artifacts {
        rows,
        plot: Vec::new(),
        tables: vec![("stationary.csv".into(), table_csv(&ctx.prov, "anchor,point,row,col,re,im", lines))],
    })
}

fn certify_rows(ctx: &Ctx) -> Result<Vec<ReportRow>, RunError> {
    let report = dyn_erg_certify(ctx.env, &ctx.certify_opts())?;
    let tol = report.tol;
    let mut rows = Vec::new();
    for (a, c) in report.anchors.iter().enumerate() {
        rows.push(ReportRow::at_most(format!("anchor {a} max pairwise distance"), c.max_pairwise, 10.0 * tol));
        rows.push(ReportRow::at_most(
            format!("anchor {a} max residual"),
            c.residuals.iter().copied().fold(0.0, f64::max),
            tol,
        ));
        rows.push(ReportRow::at_most(format!("anchor {a} orbit transport"), c.transport, 10.0 * tol));
        rows.push(ReportRow::flag(format!("anchor {a} converged"), c.converged));
    }
    if let Some(s) = &report.separation {
        rows.push(ReportRow::at_most(
            format!("separation anchor {} seeds {}/{}", s.anchor, s.seed_a, s.seed_b),
            s.distance,
            10.0 * tol,
        ));
    }
    Ok(rows)
}

fn certify(ctx: &Ctx) -> Result<Artifacts, RunError> {
    Ok(Artifacts { rows: certify_rows(ctx)?, ..Default::default() })
}

/// Certification rows when they fail, for experiments that require it.
fn certification_gate(ctx: &Ctx) -> Result<Option<Artifacts>, RunError> {
    let k = &ctx.cfg.knobs;
    if !k.require_certified || k.allow_unconverged {
        return Ok(None);
    }
    let rows = certify_rows(ctx)?;
    if rows.iter().all(|r| r.pass) {
        return Ok(None);
    }
    let mut rows: Vec<ReportRow> = rows.into_iter().map(|mut r| {
        r.quantity = format!("certify: {}", r.quantity);
        r
    }).collect();
    rows.push(ReportRow::flag("dynamical ergodicity certified", false));
    Ok(Some(Artifacts { rows, ..Default::default() }))
}

fn lln(ctx: &Ctx) -> Result<Artifacts, RunError> {
    if let Some(failed) = certification_gate(ctx)? {
        return Ok(failed);
    }
    let (env, k) = (ctx.env, &ctx.cfg.knobs);
    let reports = verify_lln_outcomes(
        env,
        &k.patterns,
        &StateAssignment::Fixed(ctx.cfg.initial.clone()),
        &ctx.omega_mode(),
        &ctx.lln_opts(),
    )?;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    let mut lines = Vec::new();
    for r in &reports {
        let name = pattern_name(env, &r.pattern);
        rows.push(ReportRow {
            quantity: format!("frequency[{name}]"),
            value: r.mean,
            target: r.target,
            tolerance: r.z_crit * r.stderr.hypot(r.target_stderr),
            pass: r.pass,
        });
        lines.push(format!(
            "{name},{},{},{},{},{},{},{},{},{}",
            r.trajectories,
            r.steps,
            num(r.mean),
            num(r.stderr),
            num(r.target),
            num(r.target_stderr),
            num(r.z),
            num(r.z_crit),
            verdict(r.pass)
        ));
        for (i, f) in r.frequencies.iter().enumerate() {
            plot.push(PlotRow { series: name.clone(), x: i as f64, y: *f, yerr: 0.0 });
        }
    }
    Ok(Artifacts {
        rows,
        plot,
        tables: vec![(
            "lln.csv".into(),
            table_csv(&ctx.prov, "pattern,trajectories,steps,mean,stderr,target,target_stderr,z,z_crit,pass", lines),
        )],
    })
}

fn annealed_lln(ctx: &Ctx) -> Result<Artifacts, RunError> {
    let (env, k) = (ctx.env, &ctx.cfg.knobs);
    let set = ctx.annealed_set()?;
    let initial = if k.from_stationary {
        annealed_stationary(env)?.assignment()
    } else {
        StateAssignment::Fixed(ctx.cfg.initial.clone())
    };
    let table = verify_annealed_lln(env, &initial, &set, k.n_max)?;
    let gap_tol = k.tol.unwrap_or(1e-3);
    let mut rows: Vec<ReportRow> = table
        .checkpoints
        .iter()
        .map(|&n| ReportRow {
            quantity: format!("cesaro gap at N={n}"),
            value: table.row(n).gap,
            target: 0.0,
            tolerance: gap_tol,
            pass: true,
        })
        .collect();
    rows.push(ReportRow::at_most(format!("final cesaro gap (N={})", k.n_max), table.row(k.n_max).gap, gap_tol));
    rows.push(ReportRow::flag("gap non-increasing over checkpoints", table.monotone));
    if k.from_stationary {
        rows.push(ReportRow::at_most("max per-term gap at stationarity", table.max_term_gap, 1e-9));
    }
    let mut plot = Vec::new();
    let mut lines = Vec::new();
    for r in &table.rows {
        plot.push(PlotRow { series: "term".into(), x: r.n as f64, y: r.term, yerr: 0.0 });
        plot.push(PlotRow { series: "cesaro".into(), x: r.n as f64, y: r.cesaro, yerr: 0.0 });
        lines.push(format!("{},{},{},{},{}", r.n, num(r.term), num(r.cesaro), num(table.target), num(r.gap)));
    }
    Ok(Artifacts {
        rows,
        plot,
        tables: vec![("annealed_lln.csv".into(), table_csv(&ctx.prov, "n,term,cesaro,target,gap", lines))],
    })
}

fn quenched_erg(ctx: &Ctx) -> Result<Artifacts, RunError> {
    if let Some(failed) = certification_gate(ctx)? {
        return Ok(failed);
    }
    let (env, k) = (ctx.env, &ctx.cfg.knobs);
    let omegas: Vec<EnvPoint> = (0..k.omega_samples as u64).map(|i| ctx.point(i)).collect();
    let pattern = &k.patterns[0];
    let report = verify_quenched_ergodic(env, pattern, &omegas, &k.thetas, &ctx.lln_opts(), k.z_crit)?;
    let rows = report
        .comparisons
        .iter()
        .map(|c| ReportRow { quantity: format!("z {}", c.name), value: c.z, target: 0.0, tolerance: report.z_crit, pass: c.pass })
        .collect();
    let lines = report
        .cells
        .iter()
        .map(|c| format!("{},{},{},{},{}", c.omega, c.theta, omegas[c.omega], num(c.mean), num(c.stderr)));
    Ok(Artifacts {
        rows,
        plot: Vec::new(),
        tables: vec![("cells.csv".into(), table_csv(&ctx.prov, "omega,theta,point,mean,stderr", lines))],
    })
}

fn shift_check(ctx: &Ctx) -> Result<Artifacts, RunError> {
    let (env, k) = (ctx.env, &ctx.cfg.knobs);
    let mut rows = Vec::new();
    let mut measure_rows = Vec::new();
    for i in 0..k.instances as u64 {
        let w = ctx.point(i);
        let residual = shift_identity_check(env, &w, k.shift_n, &k.word, DEFAULT_ENUMERATION_BUDGET)?;
        rows.push(ReportRow::at_most(format!("instance {i} shift identity residual (n={})", k.shift_n), residual, IDENTITY_TOL));
    }
    let cyl = CylinderSet::new(k.start, k.word.clone())?;
    let integration = match (k.integration, env.is_finite()) {
        (IntegrationChoice::Exact, true) => Integration::Exact,
        _ => Integration::Mc { samples: k.mc_samples, seed: ctx.seed },
    };
    let est = annealed_cylinder(env, &StateAssignment::Fixed(ctx.cfg.initial.clone()), &cyl, integration)?;
    measure_rows.push(MeasureRow {
        word: format_word(env, &k.word),
        start: k.start,
        mode: integration.name().into(),
        value: est.value,
        stderr: est.stderr,
    });
    let mut buf = Vec::new();
    dqtraj::measures::write_csv(&mut buf, &measure_rows)?;
    Ok(Artifacts {
        rows,
        plot: Vec::new(),
        tables: vec![("measures.csv".into(), ctx.prov.header() + &String::from_utf8(buf).expect("csv is UTF-8"))],
    })
}

/// Runs `kind` and returns its tables without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig, kind: ExperimentKind, seed: u64, threads: Option<usize>) -> Result<Artifacts, RunError> {
    let ctx = Ctx { cfg, env: &cfg.env, seed, threads, prov: Provenance { config_hash: cfg.hash.clone(), seed } };
    match kind {
        ExperimentKind::Validate => validate(&ctx),
        ExperimentKind::Simulate => simulate(&ctx),
        ExperimentKind::Stationary => stationary(&ctx),
        ExperimentKind::Certify => certify(&ctx),
        ExperimentKind::Lln => lln(&ctx),
        ExperimentKind::AnnealedLln => annealed_lln(&ctx),
        ExperimentKind::QuenchedErg => quenched_erg(&ctx),
        ExperimentKind::ShiftCheck => shift_check(&ctx),
    }
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, contents)?;
    files.push(p);
    Ok(())
}

/// Runs an experiment and writes its CSVs and `manifest.json`.
pub fn run(cfg: &ExperimentConfig, kind: ExperimentKind, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let seed = opts.seed.unwrap_or(cfg.knobs.seed);
    let out_dir = opts.out.clone().unwrap_or_else(|| cfg.output.join(kind.name()));
    let artifacts = execute(cfg, kind, seed, opts.threads)?;
    std::fs::create_dir_all(&out_dir)?;
    let prov = Provenance { config_hash: cfg.hash.clone(), seed };
    let mut files = Vec::new();
    write(&out_dir, "report.csv", &report_csv(&prov, &artifacts.rows), &mut files)?;
    if !artifacts.plot.is_empty() {
        write(&out_dir, "plot.csv", &plot_csv(&prov, &artifacts.plot), &mut files)?;
    }
    for (name, body) in &artifacts.tables {
        write(&out_dir, name, body, &mut files)?;
    }
    let pass = artifacts.pass();
    let manifest = Manifest {
        tool: "dqtraj",
        version: env!("CARGO_PKG_VERSION"),
        experiment: kind.name().into(),
        config_path: cfg.path.display().to_string(),
        config_sha256: cfg.hash.clone(),
        seed,
        threads: opts.threads,
        started_unix,
        wall_seconds: started.elapsed().as_secs_f64(),
        status: verdict(pass).into(),
        outputs: files.iter().filter_map(|f| f.file_name()).map(|f| f.to_string_lossy().into_owned()).collect(),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    files.push(out_dir.join("manifest.json"));
    Ok(RunOutcome { pass, out_dir, files, rows: artifacts.rows })
}
