//! Command-line front end: structured run configs, one subcommand per
//! pipeline stage, deterministic result files, and a manifest per run.
//!
//! Exit codes: 0 = every requested stage completed; 2 = config/schema or
//! input-format error; 3 = compute failure (partial files retained, noted
//! in the manifest); 4 = I/O error.

use clap::{Args, Parser, Subcommand};
use kzq::analysis::{
    correlation_function, correlation_function_from_map, domain_stats, fit_correlation_length,
    fit_power_law, rescale_collapse, Trace,
};
use kzq::config::{BackendKind, CcmBlock, LatticeBlock, RunConfig, RunManifest};
use kzq::error::KzqError;
use kzq::exact::exact_spectrum;
use kzq::kzm::{rate_scan, SweepResult};
use kzq::model::{ccm_terms, ccm_wall_energies};
use kzq::phasediag::{csv_report, energy_scan_cusps, gap_scan, ParameterLine};
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "kzq", version, about = "Quantum Kibble-Zurek toolkit for 1D Rydberg chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the base seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the backend: exact | mps.
    #[arg(long)]
    backend: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the per-rate shot count.
    #[arg(long)]
    shots: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Energy-density cusp scan and gap map over (R_B/a, Δ/Ω).
    PhaseDiagram {
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline: rate scan, correlation functions, ξ and μ fits,
    /// collapse data.
    Kzm {
        #[command(flatten)]
        common: Common,
        /// Compute G(r) from the final state instead of sampled shots.
        #[arg(long)]
        state_correlations: bool,
    },
    /// Sweeps only: shot files and ξ(Δ) checkpoints per rate.
    RateScan {
        #[command(flatten)]
        common: Common,
    },
    /// Analysis-only pipeline on external shot files.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Shot files (one bitstring per line, g/r or 0/1).
        #[arg(required = true)]
        shot_files: Vec<PathBuf>,
    },
    /// Rescale correlation traces produced by `kzm` and score the collapse.
    Collapse {
        #[command(flatten)]
        common: Common,
        /// Traces JSON file written by the kzm subcommand.
        traces: PathBuf,
    },
    /// Low-lying spectrum and wall energies of the 3-state chiral clock
    /// model.
    CcmSpectrum {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("KZQ_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        } else {
            eprintln!("kzq: ignoring non-numeric KZQ_THREADS={threads:?}");
        }
    }
    let result = match cli.command {
        Command::PhaseDiagram { common } => cmd_phase_diagram(&common),
        Command::Kzm {
            common,
            state_correlations,
        } => cmd_kzm(&common, state_correlations),
        Command::RateScan { common } => cmd_rate_scan(&common),
        Command::Analyze { common, shot_files } => cmd_analyze(&common, &shot_files),
        Command::Collapse { common, traces } => cmd_collapse(&common, &traces),
        Command::CcmSpectrum { common } => cmd_ccm_spectrum(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kzq: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: msg.into(),
    }
}

fn compute_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: 3,
        message: msg.into(),
    }
}

fn io_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: 4,
        message: msg.into(),
    }
}

/// Loaded config with CLI overrides applied, plus manifest bookkeeping.
/// Every output goes through `write_file` so the manifest lists all of
/// them.
struct Runner {
    cfg: RunConfig,
    out_dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Runner {
    fn new(common: &Common, config_required: bool) -> Result<Self, CliError> {
        let (mut cfg, raw) = match &common.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| io_err(format!("cannot read {}: {e}", path.display())))?;
                let cfg = RunConfig::from_toml_str(&raw)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                (cfg, raw)
            }
            None if config_required => {
                return Err(config_err("this subcommand requires --config <path>"));
            }
            None => (default_config(), String::from("(defaults)")),
        };
        if let Some(seed) = common.seed {
            cfg.seeds.base = seed;
        }
        if let Some(kind) = &common.backend {
            cfg.backend.kind = match kind.as_str() {
                "exact" => BackendKind::Exact,
                "mps" => BackendKind::Mps,
                other => return Err(config_err(format!("unknown backend {other:?}"))),
            };
        }
        if let Some(shots) = common.shots {
            match &mut cfg.schedule {
                Some(s) => s.shots = shots,
                None => return Err(config_err("--shots given but config has no [schedule]")),
            }
        }
        if let Some(out) = &common.out {
            cfg.output.dir = out.display().to_string();
        }
        let out_dir = PathBuf::from(&cfg.output.dir);
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| io_err(format!("cannot create {}: {e}", out_dir.display())))?;
        let mut manifest = RunManifest::new(&raw, cfg.lattice.omega_mhz);
        manifest.seeds.push(cfg.seeds.base);
        Ok(Self {
            cfg,
            out_dir,
            manifest,
            started: Instant::now(),
        })
    }

    fn write_file(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| io_err(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(value)
            .map_err(|e| compute_err(format!("serializing {name}: {e}")))?;
        self.write_file(name, &(json + "\n"))
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.manifest.notes.push(msg.into());
    }

    /// Writes the manifest (exactly once). Call on success and on partial
    /// failure alike.
    fn finish(&mut self) -> Result<(), CliError> {
        self.manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        self.manifest.files.push("manifest.json".into());
        self.manifest
            .write(&self.out_dir.join("manifest.json"))
            .map_err(|e| io_err(e.to_string()))
    }
}

/// Defaults for subcommands that can run without a config file
/// (analyze, ccm-spectrum).
fn default_config() -> RunConfig {
    RunConfig {
        lattice: LatticeBlock {
            n_sites: 2,
            rb_over_a: 1.0,
            omega_mhz: 2.0,
            cutoff: None,
        },
        schedule: None,
        backend: Default::default(),
        analysis: Default::default(),
        seeds: Default::default(),
        output: Default::default(),
        phase_diagram: None,
        ccm: None,
    }
}

/// Configured edge trim, reduced on short chains so a bulk window always
/// remains.
fn clamp_trim(cfg_trim: usize, n: usize) -> usize {
    cfg_trim.min(kzq::kzm::checkpoint_trim(n))
}

fn size_hint(e: &KzqError) -> String {
    match e {
        KzqError::SizeCap { dim, cap } => format!(
            "{e} — the exact backend holds the full state vector \
             (dimension {dim} > cap {cap}); switch to `--backend mps` for long chains"
        ),
        other => other.to_string(),
    }
}

fn cmd_phase_diagram(common: &Common) -> Result<(), CliError> {
    let mut run = Runner::new(common, true)?;
    let pd = run
        .cfg
        .phase_diagram
        .clone()
        .ok_or_else(|| config_err("config has no [phase_diagram] block"))?;
    let omega = run.cfg.omega();
    let n = pd.n_sites.unwrap_or(run.cfg.lattice.n_sites);
    let opts = run.cfg.dmrg_options();
    let mut failed = false;

    if !pd.line.is_empty() {
        let samples = pd.line.iter().map(|&[a, b]| (a, b)).collect();
        let mut line =
            ParameterLine::new(samples, omega).map_err(|e| config_err(e.to_string()))?;
        line.drive = pd.drive_fraction * omega;
        match energy_scan_cusps(&line, n, &opts) {
            Ok(scan) => {
                let mut boundary = String::from(
                    "rb_over_a,delta_over_omega,magnitude,method,uncertainty\n",
                );
                for c in &scan.cusps {
                    let _ = writeln!(
                        boundary,
                        "{:.6},{:.6},{:.6e},{:?},{:.6}",
                        c.rb_over_a, c.delta_over_omega, c.magnitude, c.method, c.uncertainty
                    );
                }
                run.write_file("boundary.csv", &boundary)?;
                run.write_file("scan.csv", &csv_report(&scan, None))?;
                run.write_json("summary.json", &scan)?;
            }
            Err(e) => {
                run.note(format!("energy scan failed: {e}"));
                failed = true;
            }
        }
    }
    if !pd.gap_grid.is_empty() {
        let grid: Vec<(f64, f64)> = pd.gap_grid.iter().map(|&[a, b]| (a, b)).collect();
        match gap_scan(&grid, omega, pd.drive_fraction * omega, n, &opts) {
            Ok(points) => {
                let mut csv =
                    String::from("rb_over_a,delta_over_omega,energy0,gap,converged\n");
                for p in &points {
                    let gap = p.gap.map_or(String::new(), |g| format!("{g:.12e}"));
                    let _ = writeln!(
                        csv,
                        "{:.6},{:.6},{:.12e},{},{}",
                        p.rb_over_a, p.delta_over_omega, p.energy0, gap, p.converged
                    );
                }
                run.write_file("gap_map.csv", &csv)?;
            }
            Err(e) => {
                run.note(format!("gap scan failed: {e}"));
                failed = true;
            }
        }
    }
    run.finish()?;
    if failed {
        return Err(compute_err("phase-diagram stage incomplete; see manifest notes"));
    }
    Ok(())
}

/// Runs the configured rate scan, writing shots and checkpoints per rate.
/// Returns the successful sweeps with their rate index.
fn scan_stage(run: &mut Runner) -> Result<(Vec<(usize, SweepResult)>, bool), CliError> {
    let model = run.cfg.model().map_err(|e| config_err(e.to_string()))?;
    let protocol = run.cfg.protocol().map_err(|e| config_err(e.to_string()))?;
    let rates = run.cfg.rates().map_err(|e| config_err(e.to_string()))?;
    let schedule = run
        .cfg
        .schedule
        .clone()
        .expect("schedule checked by rates()");
    let backend = run.cfg.backend();
    let checkpoints = run.cfg.checkpoints();
    let results = rate_scan(
        &model,
        &protocol,
        &rates,
        &backend,
        schedule.shots,
        run.cfg.seeds.base,
        &checkpoints,
    );

    let mut ok = Vec::new();
    let mut any_failed = false;
    let mut ck_csv = String::from("rate_index,rate_rad_per_us2,delta_rad_per_us,time_us,xi_sites\n");
    for (idx, res) in results.into_iter().enumerate() {
        match res {
            Ok(sweep) => {
                let mut shot_text = Vec::new();
                sweep
                    .ensemble
                    .write_to(&mut shot_text)
                    .map_err(|e| compute_err(e.to_string()))?;
                let name = format!("shots_rate{idx}.txt");
                run.write_file(&name, &String::from_utf8_lossy(&shot_text))?;
                for c in &sweep.checkpoints {
                    let xi = c.xi.map_or(String::new(), |x| format!("{x:.6}"));
                    let _ = writeln!(
                        ck_csv,
                        "{idx},{:.6e},{:.6e},{:.6},{xi}",
                        sweep.rate, c.delta, c.time
                    );
                }
                ok.push((idx, sweep));
            }
            Err(fail) => {
                any_failed = true;
                run.note(format!(
                    "rate {:.4e} failed: {} ({} checkpoints retained)",
                    fail.rate,
                    size_hint(&fail.error),
                    fail.checkpoints.len()
                ));
            }
        }
    }
    run.write_file("checkpoints.csv", &ck_csv)?;
    Ok((ok, any_failed))
}

fn cmd_rate_scan(common: &Common) -> Result<(), CliError> {
    let mut run = Runner::new(common, true)?;
    let (ok, failed) = scan_stage(&mut run)?;
    run.finish()?;
    if failed || ok.is_empty() {
        return Err(compute_err("rate-scan stage incomplete; see manifest notes"));
    }
    Ok(())
}

fn cmd_kzm(common: &Common, state_correlations: bool) -> Result<(), CliError> {
    let mut run = Runner::new(common, true)?;
    let fit_mode = run.cfg.fit_mode().map_err(|e| config_err(e.to_string()))?;
    let trim = clamp_trim(run.cfg.analysis.trim, run.cfg.lattice.n_sites);
    let (ok, scan_failed) = scan_stage(&mut run)?;
    let mut failed = scan_failed;

    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    let mut traces: Vec<Trace> = Vec::new();
    for (idx, sweep) in &ok {
        let corr = if state_correlations {
            correlation_function_from_map(&sweep.correlation_map, trim)
        } else {
            correlation_function(&sweep.ensemble, trim)
        };
        let corr = match corr {
            Ok(c) => c,
            Err(e) => {
                run.note(format!("correlation function at rate index {idx}: {e}"));
                failed = true;
                continue;
            }
        };
        run.write_file(&format!("corr_rate{idx}.csv"), &corr.to_csv())?;
        traces.push(Trace {
            s: sweep.rate,
            x: corr.r.iter().map(|&r| r as f64).collect(),
            y: corr.g.clone(),
        });
        match fit_correlation_length(&corr, fit_mode) {
            Ok(fit) if !fit.unreliable => points.push((sweep.rate, fit.xi, 0.0)),
            Ok(fit) => run.note(format!(
                "rate index {idx}: ξ fit unreliable (ξ = {:.3}), excluded from μ fit",
                fit.xi
            )),
            Err(e) => run.note(format!("rate index {idx}: ξ fit failed: {e}")),
        }
    }
    run.write_json("traces.json", &traces)?;

    match fit_power_law(&points) {
        Ok(fit) => {
            run.write_json("fit.json", &fit)?;
            let mode = run.cfg.collapse_mode().map_err(|e| config_err(e.to_string()))?;
            let mut exps = run.cfg.collapse_exponents();
            exps.mu = fit.mu;
            let s0 = run.cfg.analysis.collapse.s0.unwrap_or(fit.s0);
            match rescale_collapse(&traces, s0, mode, exps) {
                Ok(col) => {
                    run.write_file("collapse.csv", &collapse_csv(&col.rescaled))?;
                    run.note(format!("collapse residual {:.6e} at fitted μ", col.residual));
                }
                Err(e) => {
                    run.note(format!("collapse failed: {e}"));
                    failed = true;
                }
            }
        }
        Err(e) => {
            run.note(format!("power-law fit failed: {e}"));
            failed = true;
        }
    }
    run.finish()?;
    if failed {
        return Err(compute_err("kzm stage incomplete; see manifest notes"));
    }
    Ok(())
}

fn collapse_csv(traces: &[Trace]) -> String {
    let mut out = String::from("rate_rad_per_us2,x_rescaled,y\n");
    for t in traces {
        for (x, y) in t.x.iter().zip(&t.y) {
            let _ = writeln!(out, "{:.6e},{:.8e},{:.8e}", t.s, x, y);
        }
    }
    out
}

fn cmd_analyze(common: &Common, shot_files: &[PathBuf]) -> Result<(), CliError> {
    let mut run = Runner::new(common, false)?;
    let fit_mode = run.cfg.fit_mode().map_err(|e| config_err(e.to_string()))?;
    for path in shot_files {
        let file = std::fs::File::open(path)
            .map_err(|e| io_err(format!("cannot open {}: {e}", path.display())))?;
        let ensemble = kzq::shots::ShotEnsemble::read_from(BufReader::new(file))
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("shots");
        let trim = clamp_trim(run.cfg.analysis.trim, ensemble.n_sites);
        let corr = correlation_function(&ensemble, trim)
            .map_err(|e| compute_err(format!("{}: {e}", path.display())))?;
        run.write_file(&format!("{stem}_corr.csv"), &corr.to_csv())?;
        match fit_correlation_length(&corr, fit_mode) {
            Ok(fit) => run.write_json(&format!("{stem}_fit.json"), &fit)?,
            Err(e) => run.note(format!("{stem}: ξ fit failed: {e}")),
        }
        let domains = domain_stats(&ensemble, trim)
            .map_err(|e| compute_err(format!("{}: {e}", path.display())))?;
        run.write_json(&format!("{stem}_domains.json"), &domains)?;
    }
    run.finish()
}

fn cmd_collapse(common: &Common, traces_path: &Path) -> Result<(), CliError> {
    let mut run = Runner::new(common, false)?;
    let raw = std::fs::read_to_string(traces_path)
        .map_err(|e| io_err(format!("cannot read {}: {e}", traces_path.display())))?;
    let traces: Vec<Trace> = serde_json::from_str(&raw)
        .map_err(|e| config_err(format!("{}: {e}", traces_path.display())))?;
    let mode = run.cfg.collapse_mode().map_err(|e| config_err(e.to_string()))?;
    let exps = run.cfg.collapse_exponents();
    let s0 = run
        .cfg
        .analysis
        .collapse
        .s0
        .unwrap_or_else(|| geometric_mean_rate(&traces));
    let result = rescale_collapse(&traces, s0, mode, exps)
        .map_err(|e| compute_err(e.to_string()))?;
    run.write_file("collapse.csv", &collapse_csv(&result.rescaled))?;
    #[derive(serde::Serialize)]
    struct Report {
        residual: f64,
        mu: f64,
        kappa: f64,
        s0: f64,
    }
    run.write_json(
        "collapse.json",
        &Report {
            residual: result.residual,
            mu: exps.mu,
            kappa: exps.kappa,
            s0,
        },
    )?;
    run.finish()
}

fn geometric_mean_rate(traces: &[Trace]) -> f64 {
    if traces.is_empty() {
        return 1.0;
    }
    (traces.iter().map(|t| t.s.ln()).sum::<f64>() / traces.len() as f64).exp()
}

fn cmd_ccm_spectrum(common: &Common) -> Result<(), CliError> {
    let mut run = Runner::new(common, false)?;
    let block = run.cfg.ccm.clone().unwrap_or_else(CcmBlock::default);
    let params = run.cfg.ccm_params();
    let terms = ccm_terms(&params, block.n_sites).map_err(|e| config_err(e.to_string()))?;
    let spectrum =
        exact_spectrum(&terms, block.k).map_err(|e| compute_err(size_hint(&e)))?;
    let mut csv = String::from("index,energy_rad_per_us\n");
    for (i, (e, _)) in spectrum.iter().enumerate() {
        let _ = writeln!(csv, "{i},{e:.12e}");
    }
    run.write_file("ccm_spectrum.csv", &csv)?;
    let (e_plus, e_minus) = ccm_wall_energies(params.j, params.theta);
    #[derive(serde::Serialize)]
    struct Walls {
        clockwise: f64,
        counterclockwise: f64,
    }
    run.write_json(
        "ccm_walls.json",
        &Walls {
            clockwise: e_plus,
            counterclockwise: e_minus,
        },
    )?;
    run.finish()
}
