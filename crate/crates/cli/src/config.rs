//! Run configuration: a TOML file of flat dotted keys, overridden by
//! `--set key=value` flags.
//!
//! Every key has a default, so an empty file is a valid configuration. The
//! resolved struct is what the manifest echoes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sllg_core::{InitialData, RandomSmoothParams, SchemeKind, WenteOperator, WindowMode};
use toml::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub s: f64,
    pub cutoff: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub kind: String,
    pub dt: f64,
    pub projection: bool,
    pub ito_correction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimSection {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub record_stride: usize,
    pub track_qv: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BubbleConfig {
    pub rho: f64,
    pub lambda: f64,
    /// `None` means half of the estimated `ε₁*`.
    pub eps1: Option<f64>,
    pub restart_cutoff: usize,
    pub window: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub count: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitialConfig {
    pub kind: String,
    pub seed: u64,
    pub modes: usize,
    pub amplitude: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<String>,
    pub snapshots: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoupleConfig {
    /// RMS size of the perturbation separating the two initial maps.
    pub perturbation: f64,
    pub fit_runs: usize,
    pub validation_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsConfig {
    pub c0_samples: usize,
    pub c0_max_k: i64,
    pub grids: Vec<usize>,
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WenteConfig {
    pub count: usize,
    pub max_k: i64,
    pub operator: String,
    pub grids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub grid: GridConfig,
    pub noise: NoiseConfig,
    pub scheme: SchemeConfig,
    pub sim: SimSection,
    pub bubble: BubbleConfig,
    pub ensemble: EnsembleConfig,
    pub initial: InitialConfig,
    pub output: OutputConfig,
    pub couple: CoupleConfig,
    pub constants: ConstantsConfig,
    pub wente: WenteConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        let rs = RandomSmoothParams::default();
        Self {
            grid: GridConfig { n: 64 },
            noise: NoiseConfig {
                sigma: 0.05,
                s: 3.0,
                cutoff: 8,
            },
            scheme: SchemeConfig {
                kind: SchemeKind::SemiImplicitEm.as_str().to_owned(),
                dt: 1e-4,
                projection: true,
                ito_correction: true,
            },
            sim: SimSection {
                t_final: 0.1,
                record_stride: 100,
                track_qv: true,
            },
            bubble: BubbleConfig {
                rho: PI / 4.0,
                lambda: sllg_core::DEFAULT_DILATION,
                eps1: None,
                restart_cutoff: 8,
                window: "smooth".to_owned(),
            },
            ensemble: EnsembleConfig {
                count: 200,
                master_seed: 2024,
            },
            initial: InitialConfig {
                kind: "random_smooth".to_owned(),
                seed: rs.seed,
                modes: rs.modes,
                amplitude: rs.amplitude,
                epsilon: 0.3,
            },
            output: OutputConfig {
                dir: PathBuf::from("out"),
                formats: vec!["csv".to_owned(), "json".to_owned()],
                snapshots: false,
            },
            couple: CoupleConfig {
                perturbation: 0.05,
                fit_runs: 10,
                validation_runs: 10,
            },
            constants: ConstantsConfig {
                c0_samples: 200,
                c0_max_k: 6,
                grids: vec![64, 128],
                radii: vec![PI / 8.0, PI / 4.0, PI / 2.0],
            },
            wente: WenteConfig {
                count: 1000,
                max_k: 8,
                operator: "coercive".to_owned(),
                grids: vec![64, 128],
            },
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Parse the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
fn parse_override(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}

fn as_f64(key: &str, v: &Value) -> Result<f64, CliError> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "expected a number")),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, "expected a non-negative integer")),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, CliError> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_bool(key: &str, v: &Value) -> Result<bool, CliError> {
    v.as_bool().ok_or_else(|| bad(key, "expected true or false"))
}

fn as_string(key: &str, v: &Value) -> Result<String, CliError> {
    v.as_str().map(str::to_owned).ok_or_else(|| bad(key, "expected a string"))
}

fn as_list<T>(key: &str, v: &Value, f: impl Fn(&str, &Value) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    v.as_array()
        .ok_or_else(|| bad(key, "expected an array"))?
        .iter()
        .map(|x| f(key, x))
        .collect()
}

impl SimConfig {
    /// Resolve defaults, then the file (if any), then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut flat = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            flatten("", &table, &mut flat);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            flat.insert(k.trim().to_owned(), parse_override(v.trim()));
        }
        let mut cfg = Self::default();
        for (k, v) in &flat {
            cfg.apply(k, v)?;
        }
        if let Some(s) = seed {
            cfg.ensemble.master_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<(), CliError> {
        match key {
            "grid.n" => self.grid.n = as_usize(key, v)?,
            "noise.sigma" => self.noise.sigma = as_f64(key, v)?,
            "noise.s" => self.noise.s = as_f64(key, v)?,
            "noise.cutoff" => self.noise.cutoff = as_usize(key, v)?,
            "scheme.kind" => self.scheme.kind = as_string(key, v)?,
            "scheme.dt" => self.scheme.dt = as_f64(key, v)?,
            "scheme.projection" => self.scheme.projection = as_bool(key, v)?,
            "scheme.ito_correction" => self.scheme.ito_correction = as_bool(key, v)?,
            "sim.T" => self.sim.t_final = as_f64(key, v)?,
            "sim.record_stride" => self.sim.record_stride = as_usize(key, v)?,
            "sim.track_qv" => self.sim.track_qv = as_bool(key, v)?,
            "bubble.rho" => self.bubble.rho = as_f64(key, v)?,
            "bubble.lambda" => self.bubble.lambda = as_f64(key, v)?,
            "bubble.eps1" => self.bubble.eps1 = Some(as_f64(key, v)?),
            "bubble.restart_cutoff" => self.bubble.restart_cutoff = as_usize(key, v)?,
            "bubble.window" => self.bubble.window = as_string(key, v)?,
            "ensemble.count" => self.ensemble.count = as_usize(key, v)?,
            "ensemble.master_seed" => self.ensemble.master_seed = as_u64(key, v)?,
            "initial.kind" => self.initial.kind = as_string(key, v)?,
            "initial.seed" => self.initial.seed = as_u64(key, v)?,
            "initial.modes" => self.initial.modes = as_usize(key, v)?,
            "initial.amplitude" => self.initial.amplitude = as_f64(key, v)?,
            "initial.epsilon" => self.initial.epsilon = as_f64(key, v)?,
            "output.dir" => self.output.dir = PathBuf::from(as_string(key, v)?),
            "output.formats" => self.output.formats = as_list(key, v, as_string)?,
            "output.snapshots" => self.output.snapshots = as_bool(key, v)?,
            "couple.perturbation" => self.couple.perturbation = as_f64(key, v)?,
            "couple.fit_runs" => self.couple.fit_runs = as_usize(key, v)?,
            "couple.validation_runs" => self.couple.validation_runs = as_usize(key, v)?,
            "constants.c0_samples" => self.constants.c0_samples = as_usize(key, v)?,
            "constants.c0_max_k" => self.constants.c0_max_k = as_u64(key, v)? as i64,
            "constants.grids" => self.constants.grids = as_list(key, v, as_usize)?,
            "constants.radii" => self.constants.radii = as_list(key, v, as_f64)?,
            "wente.count" => self.wente.count = as_usize(key, v)?,
            "wente.max_k" => self.wente.max_k = as_u64(key, v)? as i64,
            "wente.operator" => self.wente.operator = as_string(key, v)?,
            "wente.grids" => self.wente.grids = as_list(key, v, as_usize)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.grid.n < 8 || !self.grid.n.is_multiple_of(2) {
            return Err(bad("grid.n", "must be an even number ≥ 8"));
        }
        self.scheme_kind()?;
        self.window_mode()?;
        self.initial_data()?;
        self.wente_operator()?;
        if !(self.scheme.dt > 0.0 && self.scheme.dt.is_finite()) {
            return Err(bad("scheme.dt", "must be positive"));
        }
        if !(self.sim.t_final >= 0.0 && self.sim.t_final.is_finite()) {
            return Err(bad("sim.T", "must be non-negative"));
        }
        if let Some(e) = self.bubble.eps1 {
            if !(e > 0.0 && e.is_finite()) {
                return Err(bad("bubble.eps1", "must be positive"));
            }
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(bad("output.formats", format!("unknown format {f:?}")));
            }
        }
        if self.constants.grids.is_empty() || self.wente.grids.is_empty() {
            return Err(bad("grids", "need at least one grid"));
        }
        Ok(())
    }

    pub fn scheme_kind(&self) -> Result<SchemeKind, CliError> {
        SchemeKind::parse(&self.scheme.kind).ok_or_else(|| bad("scheme.kind", format!("unknown scheme {:?}", self.scheme.kind)))
    }

    pub fn window_mode(&self) -> Result<WindowMode, CliError> {
        match self.bubble.window.as_str() {
            "smooth" => Ok(WindowMode::Smooth),
            "sharp" => Ok(WindowMode::Sharp),
            w => Err(bad("bubble.window", format!("unknown window {w:?}"))),
        }
    }

    pub fn initial_data(&self) -> Result<InitialData, CliError> {
        let i = &self.initial;
        match i.kind.as_str() {
            "constant" => Ok(InitialData::Constant),
            "equator" => Ok(InitialData::Equator),
            "random_smooth" => Ok(InitialData::RandomSmooth(RandomSmoothParams {
                seed: i.seed,
                modes: i.modes,
                amplitude: i.amplitude,
            })),
            "concentrated" => Ok(InitialData::Concentrated { epsilon: i.epsilon }),
            k => Err(bad("initial.kind", format!("unknown kind {k:?}"))),
        }
    }

    pub fn wente_operator(&self) -> Result<WenteOperator, CliError> {
        match self.wente.operator.as_str() {
            "coercive" => Ok(WenteOperator::Coercive),
            "laplacian" => Ok(WenteOperator::Laplacian),
            "literal" => Ok(WenteOperator::Literal { project_kernel: false }),
            "literal-projected" => Ok(WenteOperator::Literal { project_kernel: true }),
            o => Err(bad("wente.operator", format!("unknown operator {o:?}"))),
        }
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(SimConfig::load(None, &[], None).unwrap(), SimConfig::default());
    }

    #[test]
    fn overrides_win_and_parse_types() {
        let c = SimConfig::load(
            None,
            &["grid.n=32".into(), "scheme.projection=false".into(), "initial.kind=equator".into()],
            Some(7),
        )
        .unwrap();
        assert_eq!(c.grid.n, 32);
        assert!(!c.scheme.projection);
        assert_eq!(c.initial.kind, "equator");
        assert_eq!(c.ensemble.master_seed, 7);
    }

    #[test]
    fn unknown_key_and_bad_value_are_config_errors() {
        assert!(matches!(SimConfig::load(None, &["grid.m=3".into()], None), Err(CliError::Config(_))));
        assert!(matches!(SimConfig::load(None, &["grid.n=7".into()], None), Err(CliError::Config(_))));
        assert!(matches!(SimConfig::load(None, &["scheme.kind=rk4".into()], None), Err(CliError::Config(_))));
    }
}
