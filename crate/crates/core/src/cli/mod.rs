//! Command-line front end. Settings come from built-in defaults, then an
//! optional flat TOML file, then flags; later sources win.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error,
//! 3 numerical non-convergence.

pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bogoliubov::build_generator;
use crate::error::{Error, Result};
use crate::fock::FockBasis;
use crate::hamiltonians::{build_hn, build_ln_parts};
use crate::lattice::{Mode, MomentumLattice};
use crate::potential::{PotentialKind, PotentialSpec};
use crate::scattering::{eta_coefficients, scattering_length, solve_neumann, verify_scattering_relation};
use crate::spectra::{
    depletion_of, lanczos_lowest, condensate_chain, sandwich_check, condensation_pipeline, PipelineConfig, PipelineReport,
    CondensateChain, SandwichReport, SpectralResult,
};
use crate::symbolic::{count_terms, validate_order, visit_terms, ValidationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// Largest order whose terms are printed by `expand --dump`.
const DUMP_ORDER_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Picture {
    /// `H_N` on the canonical basis.
    Hamiltonian,
    /// `L_N` on the excitation basis.
    Excitation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub potential: PotentialKind,
    pub radius: f64,
    pub amplitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
    pub kappa: f64,
    pub ell: f64,
    pub pmax: u32,
    pub n: usize,
    pub n_range: Vec<usize>,
    pub sector: Mode,
    pub grid_points: usize,
    pub lanczos_tol: f64,
    pub lanczos_max_iter: usize,
    pub identity_tol: f64,
    pub boundary_ratio: f64,
    pub k: usize,
    pub seed: u64,
    pub format: Format,
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            potential: p.potential.kind,
            radius: p.potential.radius,
            amplitude: p.potential.amplitude,
            table: None,
            kappa: p.kappa,
            ell: p.ell,
            pmax: p.pmax,
            n: 3,
            n_range: p.n_values,
            sector: [0, 0, 0],
            grid_points: p.grid_points,
            lanczos_tol: p.lanczos_tol,
            lanczos_max_iter: p.lanczos_max_iter,
            identity_tol: 1e-12,
            boundary_ratio: crate::scattering::DEFAULT_BOUNDARY_RATIO,
            k: 3,
            seed: p.seed,
            format: Format::Json,
            output: None,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        let spec = match self.potential {
            PotentialKind::Tabulated => PotentialSpec::tabulated(
                self.table
                    .clone()
                    .ok_or_else(|| Error::Config("tabulated potential needs `table`".into()))?,
            )?,
            kind => PotentialSpec {
                kind,
                radius: self.radius,
                amplitude: self.amplitude,
                table: None,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self, spectral: bool) -> Result<()> {
        if !(self.ell > 0.0 && self.ell < 0.5) {
            return Err(Error::Config(format!("ell must lie in (0, 1/2), got {}", self.ell)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if spectral && self.pmax < 1 {
            return Err(Error::Config("pmax must be at least 1".into()));
        }
        if self.n == 0 || self.n_range.contains(&0) {
            return Err(Error::Config("particle numbers must be positive".into()));
        }
        self.potential_spec()?;
        Ok(())
    }

    fn pipeline(&self, sandwich: bool) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            potential: self.potential_spec()?,
            kappa: self.kappa,
            ell: self.ell,
            pmax: self.pmax,
            n_values: self.n_range.clone(),
            grid_points: self.grid_points,
            lanczos_tol: self.lanczos_tol,
            lanczos_max_iter: self.lanczos_max_iter,
            seed: self.seed,
            sandwich,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "gpbec", version, about = "Dilute Bose gas laboratory: scattering, spectra, identities, symbolic expansions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// Flat TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// ball, gaussian-truncated or tabulated.
    #[arg(long, global = true)]
    potential: Option<String>,
    #[arg(long, global = true)]
    radius: Option<f64>,
    #[arg(long, global = true)]
    amplitude: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    ell: Option<f64>,
    #[arg(long, global = true)]
    pmax: Option<u32>,
    /// Particle number.
    #[arg(long, short = 'n', global = true)]
    n: Option<usize>,
    /// `2..8` or `2,3,5`.
    #[arg(long, global = true)]
    n_range: Option<String>,
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    #[arg(long, global = true)]
    lanczos_tol: Option<f64>,
    #[arg(long, global = true)]
    lanczos_max_iter: Option<usize>,
    #[arg(long, global = true)]
    identity_tol: Option<f64>,
    #[arg(long, global = true)]
    boundary_ratio: Option<f64>,
    /// Number of eigenpairs.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    #[arg(long, short = 'o', global = true)]
    output: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scattering length, Neumann eigenvalue and η on the lattice.
    Scattering {
        #[command(flatten)]
        common: Common,
        /// Also evaluate the residual of the discrete scattering relation.
        #[arg(long)]
        residual: bool,
    },
    /// Low spectrum and observables for one particle number.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Picture::Hamiltonian)]
        picture: Picture,
        /// Write the operator in coordinate format to this file.
        #[arg(long)]
        dump_operator: Option<PathBuf>,
    },
    /// Ground-state scan over a range of particle numbers.
    Scan {
        #[command(flatten)]
        common: Common,
        /// Fit the sandwich constants for every N.
        #[arg(long)]
        sandwich: bool,
        /// Emit whitespace-separated gnuplot columns instead.
        #[arg(long)]
        plot_data: bool,
    },
    /// Identity suite on small bases.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Symbolic expansion of adⁿ_B(b_p).
    Expand {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        order: usize,
        #[arg(long)]
        validate: bool,
        /// Include the terms (orders up to 6).
        #[arg(long)]
        dump: bool,
    },
    /// Fitted constants of the operator sandwich over a range of N.
    Sandwich {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse N range `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let inclusive = b.starts_with('=');
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        let _ = inclusive;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn parse_kind(s: &str) -> Result<PotentialKind> {
    match s {
        "ball" => Ok(PotentialKind::Ball),
        "gaussian-truncated" => Ok(PotentialKind::GaussianTruncated),
        "tabulated" => Ok(PotentialKind::Tabulated),
        _ => Err(Error::Config(format!("unknown potential `{s}`"))),
    }
}

/// Loads a flat TOML configuration.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = c.$f.clone() { cfg.$f = v; })* };
    }
    set!(radius, amplitude, kappa, ell, pmax, n, grid_points, lanczos_tol, lanczos_max_iter, identity_tol,
        boundary_ratio, k, seed, format);
    if let Some(p) = &c.potential {
        cfg.potential = parse_kind(p)?;
    }
    if let Some(r) = &c.n_range {
        cfg.n_range = parse_range(r)?;
    }
    if c.output.is_some() {
        cfg.output = c.output.clone();
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    Ok(cfg)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ValidationFailure(_) => EXIT_VALIDATION,
        Error::NonConvergence(_) => EXIT_NONCONVERGENCE,
        _ => EXIT_CONFIG,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_threads(cfg: &RunConfig) {
    if let Some(t) = cfg.threads {
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
}

fn write_json<P: Serialize>(command: &str, cfg: &RunConfig, payload: &P) -> Result<()> {
    let doc = output::envelope(command, cfg, payload)?;
    output::emit(&doc, cfg.output.as_deref())
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Scattering { common, residual } => {
            let cfg = resolve(&common)?;
            cfg.validate(false)?;
            init_threads(&cfg);
            let payload = scattering_payload(&cfg, residual)?;
            write_json("scattering", &cfg, &payload)?;
            Ok(EXIT_OK)
        }
        Command::Spectrum {
            common,
            picture,
            dump_operator,
        } => {
            let cfg = resolve(&common)?;
            cfg.validate(true)?;
            init_threads(&cfg);
            let payload = spectrum_payload(&cfg, picture, dump_operator.as_deref())?;
            write_json("spectrum", &cfg, &payload)?;
            Ok(EXIT_OK)
        }
        Command::Scan {
            common,
            sandwich,
            plot_data,
        } => {
            let cfg = resolve(&common)?;
            cfg.validate(true)?;
            init_threads(&cfg);
            let report = condensation_pipeline(&cfg.pipeline(sandwich)?)?;
            if plot_data {
                output::emit(&plot_table(&report), cfg.output.as_deref())?;
            } else if cfg.format == Format::Csv {
                output::ensure_finite(&report)?;
                output::emit(&csv_table(&report), cfg.output.as_deref())?;
            } else {
                write_json("scan", &cfg, &report)?;
            }
            Ok(EXIT_OK)
        }
        Command::Verify { common, inject_fault } => {
            let cfg = resolve(&common)?;
            cfg.validate(true)?;
            init_threads(&cfg);
            let report = verify::run_checks(&verify::VerifyInput {
                pmax: cfg.pmax,
                n: cfg.n,
                kappa: cfg.kappa,
                potential: &cfg.potential_spec()?,
                tol: cfg.identity_tol,
                inject_fault,
            })?;
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("FAILED {}: defect {:.3e} > {:.1e}", c.name, c.max_defect, c.tol);
            }
            write_json("verify", &cfg, &report)?;
            Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Expand {
            common,
            order,
            validate,
            dump,
        } => {
            let cfg = resolve(&common)?;
            init_threads(&cfg);
            let payload = expand_payload(order, validate, dump)?;
            write_json("expand", &cfg, &payload)?;
            let ok = payload.validation.as_ref().is_none_or(|v| v.passed());
            Ok(if ok { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Sandwich { common } => {
            let cfg = resolve(&common)?;
            cfg.validate(true)?;
            init_threads(&cfg);
            let payload = sandwich_payload(&cfg)?;
            write_json("sandwich", &cfg, &payload)?;
            Ok(EXIT_OK)
        }
    }
}

#[derive(Debug, Serialize)]
struct ModeValue {
    mode: Mode,
    value: f64,
}

#[derive(Debug, Serialize)]
struct ResidualSummary {
    max_residual: f64,
    relative: f64,
    boundary_ratio: f64,
}

#[derive(Debug, Serialize)]
struct ScatteringPayload {
    a0: f64,
    a0_free_space: f64,
    lambda_ell: f64,
    /// `λ_ℓ / (3a₀/(Nℓ)³)`
    lambda_ratio: Option<f64>,
    eta_norm: f64,
    eta_tilde_zero: f64,
    eta_decay_constant: f64,
    eta: Vec<ModeValue>,
    residual: Option<ResidualSummary>,
}

fn scattering_payload(cfg: &RunConfig, residual: bool) -> Result<ScatteringPayload> {
    let v = cfg.potential_spec()?;
    let lat = MomentumLattice::new(cfg.pmax);
    let sol = eta_coefficients(solve_neumann(&v, cfg.kappa, cfg.n, cfg.ell, cfg.grid_points)?, &lat);
    let residual = if residual {
        let r = verify_scattering_relation(&sol, &lat, &v, cfg.boundary_ratio)?;
        Some(ResidualSummary {
            max_residual: r.max_residual,
            relative: r.relative,
            boundary_ratio: r.boundary_ratio,
        })
    } else {
        None
    };
    let r3 = (cfg.n as f64 * cfg.ell).powi(3);
    Ok(ScatteringPayload {
        a0: sol.a0,
        a0_free_space: scattering_length(&v, cfg.kappa)?,
        lambda_ell: sol.lambda_ell,
        lambda_ratio: (sol.a0 > 0.0).then(|| sol.lambda_ell / (3.0 * sol.a0 / r3)),
        eta_norm: sol.eta_norm(),
        eta_tilde_zero: sol.eta_tilde_zero,
        eta_decay_constant: sol.eta_decay_constant,
        eta: lat
            .nonzero_indices()
            .map(|i| ModeValue {
                mode: lat.mode_at(i),
                value: sol.eta[i],
            })
            .collect(),
        residual,
    })
}

#[derive(Debug, Serialize)]
struct SpectrumPayload {
    n: usize,
    picture: Picture,
    sector: Mode,
    dim: usize,
    a0: f64,
    spectrum: SpectralResult,
    cluster_size: usize,
    condensate_chain: CondensateChain,
}

fn spectrum_payload(cfg: &RunConfig, picture: Picture, dump: Option<&Path>) -> Result<SpectrumPayload> {
    let v = cfg.potential_spec()?;
    let lat = Arc::new(MomentumLattice::new(cfg.pmax));
    let sol = solve_neumann(&v, cfg.kappa, cfg.n, cfg.ell, cfg.grid_points)?;
    let (basis, op) = match picture {
        Picture::Hamiltonian => {
            let b = FockBasis::canonical(&lat, cfg.n, Some(cfg.sector))?;
            let h = build_hn(&b, &v, cfg.kappa)?;
            (b, h)
        }
        Picture::Excitation => {
            let b = FockBasis::excitation(&lat, cfg.n, Some(cfg.sector))?;
            let h = build_ln_parts(&b, &v, cfg.kappa)?.l_n();
            (b, h)
        }
    };
    if let Some(path) = dump {
        let f = std::fs::File::create(path)?;
        op.write_coordinate(std::io::BufWriter::new(f))?;
    }
    let k = cfg.k.min(basis.dim());
    let mut spec = lanczos_lowest(&op, k, cfg.lanczos_tol, cfg.lanczos_max_iter, cfg.seed)?;
    let mut obs = depletion_of(&spec.cluster, &basis);
    obs.energy_offset = Some(spec.ground_energy() - 4.0 * std::f64::consts::PI * sol.a0 * cfg.n as f64);
    let condensate_chain = condensate_chain(&obs, cfg.n);
    spec.observables = Some(obs);
    Ok(SpectrumPayload {
        n: cfg.n,
        picture,
        sector: cfg.sector,
        dim: basis.dim(),
        a0: sol.a0,
        cluster_size: spec.cluster_size(),
        spectrum: spec,
        condensate_chain,
    })
}

#[derive(Debug, Serialize)]
struct ExpandPayload {
    order: usize,
    count: u64,
    validation: Option<ValidationReport>,
    terms: Option<Vec<String>>,
}

fn expand_payload(order: usize, validate: bool, dump: bool) -> Result<ExpandPayload> {
    if order > crate::symbolic::MAX_ORDER {
        return Err(Error::OrderTooLarge {
            order,
            max: crate::symbolic::MAX_ORDER,
        });
    }
    let validation = if validate { Some(validate_order(order)?) } else { None };
    let terms = if dump {
        if order > DUMP_ORDER_LIMIT {
            return Err(Error::Config(format!("--dump supports orders up to {DUMP_ORDER_LIMIT}")));
        }
        let mut v = Vec::new();
        visit_terms(order, |t| v.push(t.to_string()))?;
        Some(v)
    } else {
        None
    };
    Ok(ExpandPayload {
        order,
        count: validation.as_ref().map(|v| v.count).unwrap_or_else(|| count_terms(order)),
        validation,
        terms,
    })
}

fn sandwich_payload(cfg: &RunConfig) -> Result<Vec<SandwichReport>> {
    let v = cfg.potential_spec()?;
    let lat = Arc::new(MomentumLattice::new(cfg.pmax));
    cfg.n_range
        .iter()
        .map(|&n| {
            let sol = eta_coefficients(solve_neumann(&v, cfg.kappa, n, cfg.ell, cfg.grid_points)?, &lat);
            let exc = FockBasis::excitation(&lat, n, Some([0, 0, 0]))?;
            let hams = build_ln_parts(&exc, &v, cfg.kappa)?;
            let gen = build_generator(&exc, &sol.eta)?;
            sandwich_check(&hams, &gen, sol.a0, n)
        })
        .collect()
}

pub const CSV_HEADER: &str = "N,kappa,pmax,E0,E0_minus_4pi_a0_N,depletion,N_times_depletion,vac_GN_offset,C_lo,C_mid,C_hi";

fn opt(v: Option<f64>, missing: &str) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| missing.to_string())
}

pub fn csv_table(report: &PipelineReport) -> String {
    let mut s = String::new();
    writeln!(s, "{CSV_HEADER}").unwrap();
    for r in &report.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.kappa,
            r.pmax,
            r.e0,
            r.e0_minus_4pi_a0_n,
            r.depletion,
            r.n_times_depletion,
            r.vac_gn_offset,
            opt(r.c_lo, ""),
            opt(r.c_mid, ""),
            opt(r.c_hi, "")
        )
        .unwrap();
    }
    s
}

/// Gnuplot columns; missing values are `?`.
pub fn plot_table(report: &PipelineReport) -> String {
    let mut s = String::new();
    writeln!(s, "# {}", report.note).unwrap();
    writeln!(s, "# {}", CSV_HEADER.replace(',', " ")).unwrap();
    for r in &report.rows {
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {}",
            r.n,
            r.kappa,
            r.pmax,
            r.e0,
            r.e0_minus_4pi_a0_n,
            r.depletion,
            r.n_times_depletion,
            r.vac_gn_offset,
            opt(r.c_lo, "?"),
            opt(r.c_mid, "?"),
            opt(r.c_hi, "?")
        )
        .unwrap();
    }
    s
}
