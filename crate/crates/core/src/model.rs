//! Configuration records, unit conventions and the config-file format.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("invalid {field}: {reason}")]
    Invariant { field: &'static str, reason: String },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// Cyclic MHz to angular rad/us.
pub fn angular(rate_mhz: f64) -> f64 {
    TAU * rate_mhz
}

pub fn ns_to_us(t_ns: f64) -> f64 {
    t_ns * 1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Line half-width, cyclic MHz.
    pub gamma_mhz: f64,
    /// Carrier detuning from the absorber line, cyclic MHz.
    pub detuning_mhz: f64,
    /// Recoilless fraction.
    pub f_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorberParams {
    /// Line half-width, cyclic MHz.
    pub gamma_mhz: f64,
    /// Effective thickness `T_a`.
    pub thickness: f64,
    /// Recoilless fraction. `thickness` is already the effective value, so
    /// this is carried for reporting only.
    pub f_a: f64,
}

impl AbsorberParams {
    /// Coupling `b = gamma_a T_a / 2`, cyclic MHz.
    pub fn b_mhz(&self) -> f64 {
        self.gamma_mhz * self.thickness / 2.0
    }

    /// Superradiant time `1/b` in ns (angular `b`), if there is any coupling.
    pub fn superradiant_time_ns(&self) -> Option<f64> {
        let b = angular(self.b_mhz());
        (b > 0.0).then(|| 1e3 / b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibrationParams {
    /// Modulation frequency, cyclic MHz.
    pub omega_mhz: f64,
    /// Modulation index.
    pub p: f64,
    /// Modulation phase, rad.
    pub phi: f64,
    /// Resonant sideband index.
    pub m: i32,
}

impl VibrationParams {
    /// Vibration period in ns.
    pub fn period_ns(&self) -> f64 {
        1e3 / self.omega_mhz
    }
}

/// Uniform time grid in ns, both ends included when `stop - start` is a
/// multiple of `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_ns: f64,
    pub stop_ns: f64,
    pub step_ns: f64,
}

impl TimeGrid {
    pub fn new(start_ns: f64, stop_ns: f64, step_ns: f64) -> Result<Self, ConfigError> {
        let g = Self { start_ns, stop_ns, step_ns };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.step_ns > 0.0) || !self.step_ns.is_finite() {
            return Err(ConfigError::Invariant {
                field: "t_step_ns",
                reason: format!("must be positive, got {}", self.step_ns),
            });
        }
        if !(self.stop_ns > self.start_ns) || !self.start_ns.is_finite() || !self.stop_ns.is_finite() {
            return Err(ConfigError::Invariant {
                field: "t_stop_ns",
                reason: format!("must exceed t_start_ns ({} <= {})", self.stop_ns, self.start_ns),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.stop_ns - self.start_ns) / self.step_ns + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_ns + i as f64 * self.step_ns
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub source: SourceParams,
    pub absorber: AbsorberParams,
    pub vibration: VibrationParams,
    pub grid: TimeGrid,
    /// Spread `dphi` of the vibration phase across selected events, rad.
    pub phase_jitter: f64,
}

/// Angular rates (rad/us) used inside formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub gamma_s: f64,
    pub gamma_a: f64,
    pub b: f64,
    pub omega: f64,
    pub detuning: f64,
}

impl PhysicsConfig {
    /// A resonant configuration with `gamma_s = gamma_a`, unit recoilless
    /// fractions, zero phase and the 0..600 ns grid.
    pub fn new(gamma_mhz: f64, thickness: f64, omega_mhz: f64, m: i32, p: f64) -> Self {
        Self {
            source: SourceParams {
                gamma_mhz,
                detuning_mhz: m as f64 * omega_mhz,
                f_s: 1.0,
            },
            absorber: AbsorberParams {
                gamma_mhz,
                thickness,
                f_a: 1.0,
            },
            vibration: VibrationParams {
                omega_mhz,
                p,
                phi: 0.0,
                m,
            },
            grid: TimeGrid {
                start_ns: 0.0,
                stop_ns: 600.0,
                step_ns: 1.0,
            },
            phase_jitter: 0.0,
        }
    }

    pub fn rates(&self) -> Rates {
        Rates {
            gamma_s: angular(self.source.gamma_mhz),
            gamma_a: angular(self.absorber.gamma_mhz),
            b: angular(self.absorber.b_mhz()),
            omega: angular(self.vibration.omega_mhz),
            detuning: angular(self.source.detuning_mhz),
        }
    }

    pub fn b_mhz(&self) -> f64 {
        self.absorber.b_mhz()
    }

    pub fn period_ns(&self) -> f64 {
        self.vibration.period_ns()
    }

    pub fn equal_linewidths(&self) -> bool {
        self.source.gamma_mhz == self.absorber.gamma_mhz
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.vibration.p = p;
        self
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.vibration.phi = phi;
        self
    }

    pub fn with_thickness(mut self, thickness: f64) -> Self {
        self.absorber.thickness = thickness;
        self
    }

    pub fn with_grid(mut self, grid: TimeGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_sideband(mut self, m: i32) -> Self {
        self.vibration.m = m;
        self.source.detuning_mhz = m as f64 * self.vibration.omega_mhz;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite = |field: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invariant {
                    field,
                    reason: format!("must be finite, got {v}"),
                })
            }
        };
        finite("gamma_s_mhz", self.source.gamma_mhz)?;
        finite("gamma_a_mhz", self.absorber.gamma_mhz)?;
        finite("T_a", self.absorber.thickness)?;
        finite("omega_mhz", self.vibration.omega_mhz)?;
        finite("p", self.vibration.p)?;
        finite("phi_rad", self.vibration.phi)?;
        finite("detuning_mhz", self.source.detuning_mhz)?;
        finite("dphi_rad", self.phase_jitter)?;
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invariant {
                    field,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        positive("gamma_s_mhz", self.source.gamma_mhz)?;
        positive("gamma_a_mhz", self.absorber.gamma_mhz)?;
        positive("omega_mhz", self.vibration.omega_mhz)?;
        if self.absorber.thickness < 0.0 {
            return Err(ConfigError::Invariant {
                field: "T_a",
                reason: format!("must be non-negative, got {}", self.absorber.thickness),
            });
        }
        if self.vibration.p < 0.0 {
            return Err(ConfigError::Invariant {
                field: "p",
                reason: format!("must be non-negative, got {}", self.vibration.p),
            });
        }
        for (field, f) in [("f_s", self.source.f_s), ("f_a", self.absorber.f_a)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError::Invariant {
                    field,
                    reason: format!("must lie in [0, 1], got {f}"),
                });
            }
        }
        if !(0.0..=TAU).contains(&self.phase_jitter) {
            return Err(ConfigError::Invariant {
                field: "dphi_rad",
                reason: format!("must lie in [0, 2 pi], got {}", self.phase_jitter),
            });
        }
        let expected = self.vibration.m as f64 * self.vibration.omega_mhz;
        if (self.source.detuning_mhz - expected).abs() > 1e-12 * expected.abs().max(1.0) {
            return Err(ConfigError::Inconsistent(format!(
                "detuning {} MHz must equal m * omega = {} MHz",
                self.source.detuning_mhz, expected
            )));
        }
        self.grid.validate()
    }

    /// Set one field from its config-file key.
    pub fn apply(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        match key {
            "gamma_s_mhz" => self.source.gamma_mhz = value,
            "gamma_a_mhz" => self.absorber.gamma_mhz = value,
            "T_a" => self.absorber.thickness = value,
            "f_s" => self.source.f_s = value,
            "f_a" => self.absorber.f_a = value,
            "omega_mhz" => {
                self.vibration.omega_mhz = value;
                self.source.detuning_mhz = self.vibration.m as f64 * value;
            }
            "p" => self.vibration.p = value,
            "phi_rad" => self.vibration.phi = value,
            "m" => {
                if value.fract() != 0.0 || value.abs() > 1e6 {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        message: format!("expected an integer, got {value}"),
                    });
                }
                self.vibration.m = value as i32;
                self.source.detuning_mhz = self.vibration.m as f64 * self.vibration.omega_mhz;
            }
            "detuning_mhz" => self.source.detuning_mhz = value,
            "dphi_rad" => self.phase_jitter = value,
            "t_start_ns" => self.grid.start_ns = value,
            "t_stop_ns" => self.grid.stop_ns = value,
            "t_step_ns" => self.grid.step_ns = value,
            // `b` is derived; setting it rescales the thickness.
            "b_mhz" => self.absorber.thickness = 2.0 * value / self.absorber.gamma_mhz,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }
}

pub const CONFIG_KEYS: [&str; 14] = [
    "gamma_s_mhz",
    "gamma_a_mhz",
    "T_a",
    "f_s",
    "f_a",
    "omega_mhz",
    "p",
    "phi_rad",
    "m",
    "detuning_mhz",
    "dphi_rad",
    "t_start_ns",
    "t_stop_ns",
    "t_step_ns",
];

/// Parse a flat `key = value` document (TOML syntax).
///
/// Required keys: `gamma_a_mhz`, `T_a`, `omega_mhz`, `p`, `m`. When absent,
/// `gamma_s_mhz` defaults to `gamma_a_mhz`, recoilless fractions to 1,
/// phases to 0 and the grid to 0..600 ns in 1 ns steps. `detuning_mhz`, if
/// present, must equal `m * omega_mhz`.
pub fn parse_config(text: &str) -> Result<PhysicsConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        ConfigError::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    let mut values = std::collections::BTreeMap::new();
    for (key, value) in &table {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        let v = match value {
            toml::Value::Float(f) => *f,
            toml::Value::Integer(i) => *i as f64,
            other => {
                return Err(ConfigError::BadValue {
                    key: key.clone(),
                    message: format!("expected a number, got {}", other.type_str()),
                })
            }
        };
        if key == "m" && !matches!(value, toml::Value::Integer(_)) {
            return Err(ConfigError::BadValue {
                key: key.clone(),
                message: "expected an integer".into(),
            });
        }
        values.insert(key.as_str(), v);
    }
    for key in ["gamma_a_mhz", "T_a", "omega_mhz", "p", "m"] {
        if !values.contains_key(key) {
            return Err(ConfigError::BadValue {
                key: key.into(),
                message: "missing".into(),
            });
        }
    }
    let gamma_a = values["gamma_a_mhz"];
    let mut cfg = PhysicsConfig::new(
        gamma_a,
        values["T_a"],
        values["omega_mhz"],
        0,
        values["p"],
    );
    cfg.apply("m", values["m"])?;
    for (key, v) in &values {
        if matches!(*key, "m" | "detuning_mhz" | "omega_mhz") {
            continue;
        }
        cfg.apply(key, *v)?;
    }
    if let Some(d) = values.get("detuning_mhz") {
        cfg.source.detuning_mhz = *d;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize to the config-file format; [`parse_config`] restores the value
/// bit for bit.
pub fn serialize_config(cfg: &PhysicsConfig) -> String {
    let fields: [(&str, f64); 13] = [
        ("gamma_s_mhz", cfg.source.gamma_mhz),
        ("gamma_a_mhz", cfg.absorber.gamma_mhz),
        ("T_a", cfg.absorber.thickness),
        ("f_s", cfg.source.f_s),
        ("f_a", cfg.absorber.f_a),
        ("omega_mhz", cfg.vibration.omega_mhz),
        ("p", cfg.vibration.p),
        ("phi_rad", cfg.vibration.phi),
        ("detuning_mhz", cfg.source.detuning_mhz),
        ("dphi_rad", cfg.phase_jitter),
        ("t_start_ns", cfg.grid.start_ns),
        ("t_stop_ns", cfg.grid.stop_ns),
        ("t_step_ns", cfg.grid.step_ns),
    ];
    let mut out = String::new();
    for (key, v) in fields {
        out.push_str(&format!("{key} = {v:?}\n"));
        if key == "phi_rad" {
            out.push_str(&format!("m = {}\n", cfg.vibration.m));
        }
    }
    out
}

/// Parameter sets of the reference figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    Fig1a,
    Fig1b,
    Fig1c,
    Fig2a,
    Fig2b,
    Fig2c,
    Fig6,
    Fig8,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Fig1a,
        Preset::Fig1b,
        Preset::Fig1c,
        Preset::Fig2a,
        Preset::Fig2b,
        Preset::Fig2c,
        Preset::Fig6,
        Preset::Fig8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1a => "fig1a",
            Preset::Fig1b => "fig1b",
            Preset::Fig1c => "fig1c",
            Preset::Fig2a => "fig2a",
            Preset::Fig2b => "fig2b",
            Preset::Fig2c => "fig2c",
            Preset::Fig6 => "fig6",
            Preset::Fig8 => "fig8",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::UnknownPreset(s.into()))
    }
}

/// Half-width of the 14.4 keV line, cyclic MHz (`2 gamma` is the inverse
/// 141 ns lifetime).
pub const GAMMA_FE57_MHZ: f64 = 0.565;

pub fn default_config(preset: Preset) -> PhysicsConfig {
    let g = GAMMA_FE57_MHZ;
    let long = TimeGrid {
        start_ns: 0.0,
        stop_ns: 800.0,
        step_ns: 1.0,
    };
    match preset {
        Preset::Fig1a => PhysicsConfig::new(g, 5.2, 10.0, 1, 1.8),
        Preset::Fig1b => PhysicsConfig::new(g, 5.2, 10.0, 2, 3.1),
        Preset::Fig1c => PhysicsConfig::new(g, 5.2, 10.0, 3, 4.2),
        Preset::Fig2a => {
            let mut c = PhysicsConfig::new(g, 5.18, 10.2, 1, 1.8).with_grid(long);
            c.phase_jitter = FRAC_PI_2;
            c
        }
        Preset::Fig2b => {
            let mut c = PhysicsConfig::new(g, 5.18, 4.79, 2, 3.08).with_grid(long);
            c.phase_jitter = FRAC_PI_3;
            c
        }
        Preset::Fig2c => {
            let mut c = PhysicsConfig::new(g, 5.18, 2.94, 3, 4.21)
                .with_grid(long)
                .with_phi(-PI / 10.0);
            c.phase_jitter = PI / 5.0;
            c
        }
        Preset::Fig6 => PhysicsConfig::new(g, 12.0, 10.0, 1, 1.8),
        Preset::Fig8 => PhysicsConfig::new(g, 12.0, 10.0, 2, 3.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angular_scaling() {
        assert!((angular(10.0) - 62.8319).abs() < 1e-4);
        assert_eq!(angular(0.0), 0.0);
        assert!((angular(0.565) - 3.5500).abs() < 1e-4);
    }

    #[test]
    fn lifetime_and_coupling() {
        let cfg = default_config(Preset::Fig1a);
        let r = cfg.rates();
        assert!((2.0 * r.gamma_s * ns_to_us(141.0) - 1.0).abs() < 2e-3);
        assert!((cfg.b_mhz() - 1.469).abs() < 1e-3);
        assert!((cfg.b_mhz() / cfg.vibration.omega_mhz - 0.147).abs() < 1e-3);
        assert!((cfg.absorber.superradiant_time_ns().unwrap() - 1e3 / r.b).abs() < 1e-12);
    }

    #[test]
    fn presets() {
        let a = default_config(Preset::Fig1a);
        assert_eq!((a.vibration.m, a.vibration.p, a.vibration.omega_mhz, a.absorber.thickness), (1, 1.8, 10.0, 5.2));
        let b = default_config(Preset::Fig2b);
        assert_eq!((b.vibration.omega_mhz, b.vibration.p), (4.79, 3.08));
        assert!((b.phase_jitter - PI / 3.0).abs() < 1e-15);
        let c = default_config(Preset::Fig6);
        assert_eq!((c.absorber.thickness, c.vibration.omega_mhz, c.vibration.p), (12.0, 10.0, 1.8));
        for p in Preset::ALL {
            default_config(p).validate().unwrap();
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn parse_minimal_document() {
        let cfg = parse_config("gamma_a_mhz = 0.565\nT_a = 5.2\nomega_mhz = 10\np = 1.8\nm = 1\n").unwrap();
        assert!((cfg.b_mhz() - 1.47).abs() < 2e-3);
        assert_eq!(cfg.source.gamma_mhz, 0.565);
        assert_eq!(cfg.source.detuning_mhz, 10.0);
    }

    #[test]
    fn parse_rejects_bad_input() {
        let base = "gamma_a_mhz = 0.565\nomega_mhz = 10\np = 1.8\n";
        let e = parse_config(&format!("{base}m = 1\nT_a = -1\n")).unwrap_err();
        assert!(matches!(e, ConfigError::Invariant { field: "T_a", .. }));
        let e = parse_config(&format!("{base}T_a = 5.2\nm = 2\ndetuning_mhz = 10\n")).unwrap_err();
        assert!(matches!(e, ConfigError::Inconsistent(_)));
        let e = parse_config(&format!("{base}T_a = 5.2\nm = 1\ncolour = 3\n")).unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("colour".into()));
        let e = parse_config(&format!("{base}T_a = 5.2\nm = 1\np = = 2\n")).unwrap_err();
        assert!(matches!(e, ConfigError::Parse { line: 6, .. }), "{e:?}");
        let e = parse_config(&format!("{base}T_a = 5.2\nm = 1.5\n")).unwrap_err();
        assert!(matches!(e, ConfigError::BadValue { .. }));
    }

    #[test]
    fn round_trip_presets() {
        for p in Preset::ALL {
            let cfg = default_config(p);
            assert_eq!(parse_config(&serialize_config(&cfg)).unwrap(), cfg);
        }
    }
}
