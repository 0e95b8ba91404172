//! Subcommands of the `photon-comb` tool. Each `run_*` returns an
//! [`Artifact`] holding both renderings; [`execute`] writes the requested one.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use photon_comb::acquisition::{histogram, sample_events, AcquisitionConfig, AcquisitionMode, EventHistogram};
use photon_comb::analysis::{
    bin_layout, bin_populations, classify_slopes, dark_window_times, phase_rate, phase_trace, pulse_times,
    BinPopulations, Slope,
};
use photon_comb::averaging::{averaged_exact, averaged_extrema, averaged_trace, ModelTag};
use photon_comb::fitting::{fit, scan_optimal_p, FitData, FitMode, FitParams, FreeMask, PARAM_NAMES};
use photon_comb::model::{default_config, parse_config, serialize_config, PhysicsConfig, Preset};
use photon_comb::numerics::{QuadratureSpec, SeriesTruncation};
use photon_comb::transmission::{exact_amplitude, improved_amplitude, probability_approx, satellite_kernel_trace};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_FIT: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Coincidence,
    FixedStart,
}

impl From<Mode> for AcquisitionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Coincidence => AcquisitionMode::Coincidence,
            Mode::FixedStart => AcquisitionMode::FixedStart,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceModel {
    Exact,
    Approx,
    Improved,
}

impl From<TraceModel> for ModelTag {
    fn from(m: TraceModel) -> Self {
        match m {
            TraceModel::Exact => ModelTag::Exact,
            TraceModel::Approx => ModelTag::Approx,
            TraceModel::Improved => ModelTag::Improved,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "photon-comb", version, about = "Single-photon waveform shaping by a vibrating resonant absorber")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in parameter set (fig1a, fig1b, ..., fig8); used when no config file is given.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Config override `key=value`, applied after loading; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for the physics kernels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Exact, approximate and improved detection probability.
    Waveform,
    /// Count rates averaged over the formation time.
    Averaged,
    /// Satellite kernels and misfits of the approximate models.
    Satellites {
        #[arg(long, default_value_t = 3)]
        n_max: u32,
    },
    /// Phase difference with pulse and dark-window markers.
    Phase {
        /// Periods searched for markers; defaults to the periods covered by the grid.
        #[arg(long)]
        periods: Option<usize>,
    },
    /// Time-bin populations and a sweep over the modulation phase.
    Bins {
        /// 2 (qubit) or 4 (ququart); defaults to 2 for m = 1 and 4 otherwise.
        #[arg(long)]
        dimension: Option<usize>,
        /// Phase of the router clock, rad.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        phi_lo: f64,
        #[arg(long, value_enum, default_value_t = TraceModel::Approx)]
        model: TraceModel,
    },
    /// Monte Carlo event histogram.
    Acquire {
        #[arg(long, value_enum, default_value_t = Mode::Coincidence)]
        mode: Mode,
        #[arg(long, default_value_t = 100_000)]
        events: u64,
        #[arg(long, default_value_t = 8.0)]
        channel_ns: f64,
        /// Start-selection window, ns.
        #[arg(long, default_value_t = 0.0)]
        window_ns: f64,
        /// Phase jitter, rad; defaults to `dphi_rad` of the config.
        #[arg(long)]
        dphi: Option<f64>,
    },
    /// Least-squares fit of a histogram CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Coincidence)]
        mode: Mode,
        /// Comma-separated free parameters out of p, phi, dphi, f_s, T_a, scale.
        #[arg(long, default_value = "p,phi,scale")]
        free: String,
    },
    /// Modulation index maximizing the resonant comb component.
    Scan {
        #[arg(long, default_value_t = 3)]
        m_max: i32,
        #[arg(long, default_value_t = 0.0)]
        p_min: f64,
        #[arg(long, default_value_t = 8.0)]
        p_max: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Waveform => "waveform",
            Command::Averaged => "averaged",
            Command::Satellites { .. } => "satellites",
            Command::Phase { .. } => "phase",
            Command::Bins { .. } => "bins",
            Command::Acquire { .. } => "acquire",
            Command::Fit { .. } => "fit",
            Command::Scan { .. } => "scan",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<photon_comb::Error> for CliError {
    fn from(e: photon_comb::Error) -> Self {
        use photon_comb::Error as E;
        let code = match &e {
            E::Config(_) | E::Invalid(_) => EXIT_CONFIG,
            E::FitNonConvergence { .. } => EXIT_FIT,
            E::Numerics(_) | E::OutOfScope(_) | E::Degenerate(_) => EXIT_NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<photon_comb::model::ConfigError> for CliError {
    fn from(e: photon_comb::model::ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

/// A parsed invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSpec {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub overrides: Vec<(String, f64)>,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl CommandSpec {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            config: None,
            preset: None,
            out: None,
            format: Format::Csv,
            overrides: Vec::new(),
            seed: 0,
            threads: None,
        }
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.preset = Some(preset);
        self
    }

    pub fn with_override(mut self, key: &str, value: f64) -> Self {
        self.overrides.push((key.into(), value));
        self
    }
}

pub fn parse_override(s: &str) -> Result<(String, f64), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{s}` is not key=value")))?;
    let value: f64 = v
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("override `{s}`: `{}` is not a number", v.trim())))?;
    Ok((k.trim().to_string(), value))
}

impl TryFrom<Cli> for CommandSpec {
    type Error = CliError;

    fn try_from(cli: Cli) -> Result<Self, CliError> {
        let preset = cli
            .preset
            .as_deref()
            .map(|p| p.parse::<Preset>())
            .transpose()?;
        let overrides = cli
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            command: cli.command,
            config: cli.config,
            preset,
            out: cli.out,
            format: cli.format,
            overrides,
            seed: cli.seed,
            threads: cli.threads,
        })
    }
}

/// Config file, else preset (default `fig1a`), then overrides.
pub fn resolve_config(spec: &CommandSpec) -> Result<PhysicsConfig, CliError> {
    let mut cfg = match &spec.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => default_config(spec.preset.unwrap_or(Preset::Fig1a)),
    };
    for (k, v) in &spec.overrides {
        cfg.apply(k, *v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Output of one subcommand in both formats.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub csv: String,
    pub data: Value,
}

impl Artifact {
    pub fn render(&self, spec: &CommandSpec, cfg: &PhysicsConfig) -> String {
        match spec.format {
            Format::Csv => self.csv.clone(),
            Format::Json => {
                let doc = json!({
                    "meta": {
                        "command": spec.command.name(),
                        "version": VERSION,
                        "seed": spec.seed,
                        "config": serde_json::to_value(cfg).unwrap_or(Value::Null),
                        "config_toml": serialize_config(cfg),
                    },
                    "data": self.data,
                });
                let mut s = serde_json::to_string_pretty(&doc).unwrap_or_default();
                s.push('\n');
                s
            }
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Numeric table as CSV plus a column-keyed JSON object.
pub fn table(columns: &[String], rows: &[Vec<f64>]) -> Artifact {
    let mut csv = columns.join(",");
    csv.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| num(v)).collect();
        csv.push_str(&line.join(","));
        csv.push('\n');
    }
    let mut data = Map::new();
    data.insert("columns".into(), json!(columns));
    for (j, c) in columns.iter().enumerate() {
        data.insert(c.clone(), json!(rows.iter().map(|r| r[j]).collect::<Vec<f64>>()));
    }
    Artifact {
        csv,
        data: Value::Object(data),
    }
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn run_waveform(spec: &CommandSpec) -> Result<Artifact, CliError> {
    let cfg = resolve_config(spec)?;
    let quad = QuadratureSpec::default();
    let exact = exact_amplitude(&cfg.grid, &cfg, &quad)?.probability();
    let improved = improved_amplitude(&cfg.grid, &cfg, &quad)?.probability();
    let times = cfg.grid.times();
    let mut rows = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        rows.push(vec![t, exact[i], probability_approx(t, &cfg)?, improved[i]]);
    }
    Ok(table(&cols(&["t_ns", "P_exact", "P_approx", "P_improved"]), &rows))
}

pub fn run_averaged(spec: &CommandSpec) -> Result<Artifact, CliError> {
    let cfg = resolve_config(spec)?;
    let quad = QuadratureSpec::default();
    let exact = averaged_exact(&cfg.grid, &cfg, &quad)?;
    let approx = averaged_trace(&cfg.grid, &cfg, ModelTag::Approx, &quad)?;
    let improved = averaged_trace(&cfg.grid, &cfg, ModelTag::Improved, &quad)?;
    let e = averaged_extrema(cfg.vibration.m, cfg.vibration.p, cfg.absorber.thickness);
    let rows: Vec<Vec<f64>> = cfg
        .grid
        .times()
        .iter()
        .enumerate()
        .map(|(i, &t)| vec![t, exact.values[i], approx.values[i], improved.values[i], e.max, e.min, e.res])
        .collect();
    Ok(table(
        &cols(&["t_ns", "N_exact", "N_approx", "N_improved", "N_max", "N_min", "N_res"]),
        &rows,
    ))
}

pub fn run_satellites(spec: &CommandSpec, n_max: u32) -> Result<Artifact, CliError> {
    let cfg = resolve_config(spec)?;
    let quad = QuadratureSpec::default();
    let trunc = SeriesTruncation::default();
    let times = cfg.grid.times();
    let mut columns = vec!["t_ns".to_string()];
    let mut kernels = Vec::new();
    for k in 1..=n_max as i32 {
        for n in [k, -k] {
            let tr = satellite_kernel_trace(n, &cfg.grid, &cfg, &trunc)?;
            columns.push(format!("K{n:+}_re"));
            columns.push(format!("K{n:+}_im"));
            kernels.push(tr.values);
        }
    }
    let exact = exact_amplitude(&cfg.grid, &cfg, &quad)?.probability();
    let improved = improved_amplitude(&cfg.grid, &cfg, &quad)?.probability();
    columns.push("misfit_improved".into());
    columns.push("misfit_approx".into());
    let mut rows = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let mut row = vec![t];
        for k in &kernels {
            row.push(k[i].re);
            row.push(k[i].im);
        }
        row.push(improved[i] - exact[i]);
        row.push(probability_approx(t, &cfg)? - exact[i]);
        rows.push(row);
    }
    Ok(table(&columns, &rows))
}

fn slope_name(s: Slope) -> &'static str {
    match s {
        Slope::PulseForming => "pulse-forming",
        Slope::Stopped => "stopped",
        Slope::Transitional => "transitional",
    }
}

pub fn run_phase(spec: &CommandSpec, periods: Option<usize>) -> Result<Artifact, CliError> {
    let cfg = resolve_config(spec)?;
    let span = cfg.grid.stop_ns - cfg.grid.start_ns;
    let periods = periods.unwrap_or(((span / cfg.period_ns()).floor() as usize).max(1));
    let trace = classify_slopes(phase_trace(&cfg.grid, &cfg), &cfg);
    let pulses = pulse_times(&cfg, periods)?;
    let darks = dark_window_times(&cfg, periods)?;
    let times = cfg.grid.times();
    let mut csv = String::from("kind,t_ns,psi,phase_rate,slope\n");
    for (i, &t) in times.iter().enumerate() {
        let _ = writeln!(
            csv,
            "trace,{},{},{},{}",
            num(t),
            num(trace.psi[i]),
            num(phase_rate(t, &cfg)),
            slope_name(trace.slopes[i])
        );
    }
    for (kind, list) in [("pulse", &pulses), ("dark", &darks)] {
        for &t in list.iter() {
            let _ = writeln!(
                csv,
                "{kind},{},{},{},",
                num(t),
                num(photon_comb::analysis::phase_difference(t, &cfg)),
                num(phase_rate(t, &cfg))
            );
        }
    }
    let data = json!({
        "t_ns": times,
        "psi": trace.psi,
        "phase_rate": times.iter().map(|&t| phase_rate(t, &cfg)).collect::<Vec<f64>>(),
        "slope": trace.slopes.iter().map(|&s| slope_name(s)).collect::<Vec<_>>(),
        "pulses": pulses,
        "darks": darks,
    });
    Ok(Artifact { csv, data })
}

fn populations_json(p: &BinPopulations) -> Value {
    let mut m = Map::new();
    for (l, v) in p.labels.iter().zip(&p.values) {
        m.insert(l.to_string(), json!(v));
    }
    Value::Object(m)
}

/// Modulation phases of the bin sweep.
pub const BIN_SWEEP: [f64; 5] = [0.0, FRAC_PI_2, -FRAC_PI_2, PI, -3.0 * FRAC_PI_2];

pub fn run_bins(spec: &CommandSpec, dimension: Option<usize>, phi_lo: f64, model: TraceModel) -> Result<Artifact, CliError> {
    let cfg = resolve_config(spec)?;
    let dim = dimension.unwrap_or(if cfg.vibration.m.abs() == 1 { 2 } else { 4 });
    if dim != 2 && dim != 4 {
        return Err(CliError::config(format!("bin dimension must be 2 or 4, got {dim}")));
    }
    let layout = bin_layout(dim, cfg.vibration.omega_mhz, phi_lo)?;
    let quad = QuadratureSpec::default();
    let tag: ModelTag = model.into();
    let at = |phi: f64| -> Result<BinPopulations, CliError> {
        let trace = averaged_trace(&cfg.grid, &cfg.with_phi(phi), tag, &quad)?;
        Ok(bin_populations(&trace, &layout)?)
    };
    let current = at(cfg.vibration.phi)?;
    let mut sweep = Vec::new();
    for &phi in &BIN_SWEEP {
        sweep.push((phi, at(phi)?));
    }
    let mut columns = vec!["phi".to_string()];
    columns.extend(layout.labels.iter().map(|l| format!("P_{l}")));
    let mut rows = vec![[vec![cfg.vibration.phi], current.values.clone()].concat()];
    rows.extend(sweep.iter().map(|(phi, p)| [vec![*phi], p.values.clone()].concat()));
    let mut art = table(&columns, &rows);
    art.data = json!({
        "dimension": dim,
        "model": format!("{tag:?}").to_lowercase(),
        "layout": serde_json::to_value(&layout).unwrap_or(Value::Null),
        "bounds": layout.bounds().iter().map(|(l, a, b)| json!({"label": l.to_string(), "start_ns": a, "end_ns": b})).collect::<Vec<_>>(),
        "phi": cfg.vibration.phi,
        "populations": populations_json(&current),
        "sweep": sweep.iter().map(|(phi, p)| json!({"phi": phi, "populations": populations_json(p)})).collect::<Vec<_>>(),
    });
    Ok(art)
}

pub fn acquisition_config(
    spec: &CommandSpec,
    cfg: &PhysicsConfig,
    mode: Mode,
    events: u64,
    channel_ns: f64,
    window_ns: f64,
    dphi: Option<f64>,
) -> AcquisitionConfig {
    let mut acq = AcquisitionConfig::new(mode.into(), cfg.grid.start_ns, cfg.grid.stop_ns, events, spec.seed);
    acq.channel_ns = channel_ns;
    acq.window_ns = window_ns;
    acq.dphi = dphi.unwrap_or(cfg.phase_jitter);
    acq
}

pub fn run_acquire(
    spec: &CommandSpec,
    mode: Mode,
    events: u64,
    channel_ns: f64,
    window_ns: f64,
    dphi: Option<f64>,
) -> Result<Artifact, CliError> {
    let cfg = resolve_config(spec)?;
    let acq = acquisition_config(spec, &cfg, mode, events, channel_ns, window_ns, dphi);
    let ev = sample_events(&cfg, &acq)?;
    let hist = histogram(&ev, &acq);
    Ok(Artifact {
        csv: hist.to_csv(),
        data: hist.to_json(),
    })
}

pub fn parse_free(list: &str) -> Result<FreeMask, CliError> {
    let mut mask = FreeMask::none();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "p" => mask.p = true,
            "phi" => mask.phi = true,
            "dphi" => mask.dphi = true,
            "f_s" => mask.f_s = true,
            "T_a" | "t_a" => mask.t_a = true,
            "scale" => mask.scale = true,
            other => {
                return Err(CliError::config(format!(
                    "unknown fit parameter `{other}` (expected one of {})",
                    PARAM_NAMES.join(", ")
                )))
            }
        }
    }
    Ok(mask)
}

pub fn run_fit(spec: &CommandSpec, data: &std::path::Path, mode: Mode, free: &str) -> Result<Artifact, CliError> {
    let cfg = resolve_config(spec)?;
    let mask = parse_free(free)?;
    let text = std::fs::read_to_string(data)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", data.display())))?;
    let template = AcquisitionConfig::new(mode.into(), cfg.grid.start_ns, cfg.grid.stop_ns, 0, spec.seed);
    let hist = EventHistogram::from_csv(&text, &template)?;
    let fit_data = FitData::from_histogram(&hist, &cfg)?;
    let init = FitParams::from_config(&cfg);
    let result = fit(&fit_data, &init, &mask, &cfg, FitMode::from(mode))?;
    let mut csv = String::from("name,value,error\n");
    let values = [
        result.params.p,
        result.params.phi,
        result.params.dphi,
        result.params.f_s,
        result.params.t_a.unwrap_or(cfg.absorber.thickness),
        result.params.scale,
    ];
    for ((name, v), e) in PARAM_NAMES.iter().zip(values).zip(result.errors) {
        let _ = writeln!(csv, "{name},{},{}", num(v), e.map(num).unwrap_or_default());
    }
    let _ = writeln!(csv, "chi2,{},", num(result.chi2));
    let _ = writeln!(csv, "dof,{},", result.dof);
    let _ = writeln!(csv, "iterations,{},", result.iterations);
    Ok(Artifact {
        csv,
        data: result.report(),
    })
}

pub fn run_scan(spec: &CommandSpec, m_max: i32, p_min: f64, p_max: f64, step: f64) -> Result<Artifact, CliError> {
    let _ = resolve_config(spec)?;
    let mut rows = Vec::new();
    for m in 1..=m_max {
        rows.push(vec![m as f64, scan_optimal_p(m, (p_min, p_max), step)?]);
    }
    Ok(table(&cols(&["m", "p_star"]), &rows))
}

/// Run the subcommand and return its rendered output.
pub fn run(spec: &CommandSpec) -> Result<String, CliError> {
    let art = match &spec.command {
        Command::Waveform => run_waveform(spec)?,
        Command::Averaged => run_averaged(spec)?,
        Command::Satellites { n_max } => run_satellites(spec, *n_max)?,
        Command::Phase { periods } => run_phase(spec, *periods)?,
        Command::Bins {
            dimension,
            phi_lo,
            model,
        } => run_bins(spec, *dimension, *phi_lo, *model)?,
        Command::Acquire {
            mode,
            events,
            channel_ns,
            window_ns,
            dphi,
        } => run_acquire(spec, *mode, *events, *channel_ns, *window_ns, *dphi)?,
        Command::Fit { data, mode, free } => run_fit(spec, data, *mode, free)?,
        Command::Scan {
            m_max,
            p_min,
            p_max,
            step,
        } => run_scan(spec, *m_max, *p_min, *p_max, *step)?,
    };
    let cfg = resolve_config(spec)?;
    Ok(art.render(spec, &cfg))
}

/// Run and write to `spec.out` or stdout.
pub fn execute(spec: &CommandSpec) -> Result<(), CliError> {
    if let Some(n) = spec.threads {
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let text = run(spec)?;
    match &spec.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::config(format!("cannot write output: {e}")))
        }
    }
}

/// Process exit code for `args`.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = CommandSpec::try_from(cli).and_then(|spec| execute(&spec));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
