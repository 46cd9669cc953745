//! Experiment configuration: one TOML file with a section per parameter block.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::circular::Angle;
use crate::error::{Error, Result};
use crate::laser::{DriveWaveform, IntegrateOptions, LaserParams, PulseSampling};
use crate::optics::{InputIntensity, NetworkConfig, Topology};
use crate::phase_model::CorrelationModel;
use crate::q_engine::{QuadratureScheme, QuadratureSpec, SearchOptions};
use crate::visibility::SweepGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SynthPhases,
    SimulateLaser,
    Visibility,
    Calibrate,
    EstimateQ,
    Table1,
    Table2,
    Fig3,
    Fig4,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::SynthPhases,
        ExperimentKind::SimulateLaser,
        ExperimentKind::Visibility,
        ExperimentKind::Calibrate,
        ExperimentKind::EstimateQ,
        ExperimentKind::Table1,
        ExperimentKind::Table2,
        ExperimentKind::Fig3,
        ExperimentKind::Fig4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SynthPhases => "synth-phases",
            ExperimentKind::SimulateLaser => "simulate-laser",
            ExperimentKind::Visibility => "visibility",
            ExperimentKind::Calibrate => "calibrate",
            ExperimentKind::EstimateQ => "estimate-q",
            ExperimentKind::Table1 => "table1",
            ExperimentKind::Table2 => "table2",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Fig4 => "fig4",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Correlation model. Give `r` directly, or `lc` with `r0` for geometric
/// weights (`lc = 1` needs neither).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub delta_phi_bar: f64,
}

impl ModelBlock {
    pub fn to_model(&self) -> Result<CorrelationModel> {
        let r = match (&self.r, self.lc, self.r0) {
            (Some(r), lc, _) => {
                if lc.is_some_and(|l| l != r.len()) {
                    return Err(Error::config("model.lc", format!("{} weights given for lc = {}", r.len(), lc.unwrap())));
                }
                r.clone()
            }
            (None, Some(1), _) => vec![1.0],
            (None, Some(l), Some(r0)) => (0..l).map(|k| r0.powi(k as i32)).collect(),
            (None, Some(_), None) => return Err(Error::config("model.r", "give `r` or `r0` when lc > 1")),
            (None, None, _) => return Err(Error::config("model.r", "give `r` or `lc`")),
        };
        CorrelationModel::new(r, self.delta_phi_bar, self.sigma).map_err(|e| Error::config("model", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub node_count: usize,
    pub scheme: QuadratureScheme,
    pub grid_points: usize,
    pub starts: usize,
    pub budget: u64,
    pub min_step: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        let s = SearchOptions::default();
        SolverBlock {
            node_count: q.node_count,
            scheme: q.scheme,
            grid_points: s.grid_points,
            starts: s.starts,
            budget: s.budget,
            min_step: s.min_step,
        }
    }
}

impl SolverBlock {
    pub fn quadrature(&self) -> Result<QuadratureSpec> {
        QuadratureSpec::new(self.node_count, self.scheme).map_err(|e| Error::config("solver.node_count", e.to_string()))
    }

    pub fn search(&self) -> Result<SearchOptions> {
        if self.grid_points < 4 || self.starts == 0 {
            return Err(Error::config("solver.grid_points", "need at least 4 grid points and 1 start"));
        }
        if !(self.min_step > 0.0) {
            return Err(Error::config("solver.min_step", "must be positive"));
        }
        Ok(SearchOptions {
            grid_points: self.grid_points,
            starts: self.starts,
            budget: self.budget,
            min_step: self.min_step,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBlock {
    pub topology: Topology,
    #[serde(default = "one")]
    pub ell_c: usize,
    #[serde(default)]
    pub phase_shift: f64,
    #[serde(default)]
    pub attenuators: Vec<f64>,
    #[serde(default = "ubs")]
    pub loop_reflectance: f64,
    #[serde(default = "unit")]
    pub mu: f64,
}

fn one() -> usize {
    1
}
fn ubs() -> f64 {
    0.9
}
fn unit() -> f64 {
    1.0
}

impl NetworkBlock {
    pub fn to_network(&self) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            topology: self.topology,
            ell_c: self.ell_c,
            phase_shift: Angle::new(self.phase_shift),
            attenuators: self.attenuators.clone(),
            splitter_ratio: 0.5,
            loop_reflectance: self.loop_reflectance,
            input_intensities: InputIntensity::Constant(self.mu),
        };
        cfg.validate().map_err(|e| Error::config("network", e.to_string()))?;
        Ok(cfg)
    }
}

/// Laser and drive, in lab units at the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserBlock {
    pub params: LaserParams,
    pub nu_ghz: f64,
    pub i_on_ma: f64,
    pub i_off_ma: f64,
    pub duty: f64,
    pub dt_ps: f64,
    pub pulses: usize,
    /// Leading pulses discarded as startup transient.
    pub startup_pulses: usize,
    pub sampling: PulseSampling,
    pub noise: f64,
    /// Stored-trajectory decimation; 0 stores no trajectory.
    pub decimate: usize,
}

impl Default for LaserBlock {
    fn default() -> Self {
        LaserBlock {
            params: LaserParams::default(),
            nu_ghz: 5.0,
            i_on_ma: 140.0,
            i_off_ma: 0.0,
            duty: 0.5,
            dt_ps: 0.01,
            pulses: 1000,
            startup_pulses: 5,
            sampling: PulseSampling::Peak,
            noise: 1.0,
            decimate: 1000,
        }
    }
}

impl LaserBlock {
    pub fn drive(&self) -> Result<DriveWaveform> {
        let d = DriveWaveform {
            nu: self.nu_ghz * 1e9,
            i_on: self.i_on_ma * 1e-3,
            i_off: self.i_off_ma * 1e-3,
            duty: self.duty,
        };
        d.validate().map_err(|e| Error::config("laser", e.to_string()))?;
        Ok(d)
    }

    pub fn options(&self) -> Result<IntegrateOptions> {
        let o = IntegrateOptions {
            dt: self.dt_ps * 1e-12,
            noise: self.noise,
            decimate: self.decimate,
            sampling: self.sampling,
            startup_periods: self.startup_pulses,
            ..IntegrateOptions::default()
        };
        o.validate().map_err(|e| Error::config("laser.dt_ps", e.to_string()))?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(|e| Error::config("laser.params", e.to_string()))?;
        if self.pulses < 2 {
            return Err(Error::config("laser.pulses", "need at least 2 pulses"));
        }
        self.drive()?;
        self.options().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceBlock {
    pub rounds: usize,
    /// Phase CSV to use instead of synthesising from the model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
}

impl Default for SequenceBlock {
    fn default() -> Self {
        SequenceBlock {
            rounds: 100_000,
            input: None,
            warmup: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub n_phase: usize,
    pub n_att: usize,
    pub refine: bool,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            n_phase: 64,
            n_att: 32,
            refine: true,
        }
    }
}

impl SweepBlock {
    pub fn grid(&self, attenuators: usize) -> Result<SweepGrid> {
        if self.n_phase == 0 || (attenuators > 0 && self.n_att == 0) {
            return Err(Error::config("sweep", "grid axes must be non-empty"));
        }
        let mut g = SweepGrid::uniform(self.n_phase, attenuators, self.n_att);
        g.refine = self.refine;
        Ok(g)
    }
}

/// Operating points for the laser tables and the sweep surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TablesBlock {
    pub nus_ghz: Vec<f64>,
    pub i_offs_ma: Vec<f64>,
    pub pulses: usize,
    /// Pulse count for repetition rates below 1 GHz; fewer pulses are flagged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slow_pulses: Option<usize>,
    /// Step for repetition rates below 1 GHz.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slow_dt_ps: Option<f64>,
    pub parallelism: usize,
}

impl Default for TablesBlock {
    fn default() -> Self {
        TablesBlock {
            nus_ghz: vec![0.1, 1.0, 5.0, 10.0],
            i_offs_ma: vec![0.0, 7.0, 14.0],
            pulses: 1000,
            slow_pulses: None,
            slow_dt_ps: None,
            parallelism: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Block {
    pub sigmas: Vec<f64>,
    pub r2s: Vec<f64>,
    pub delta_phi_bar: f64,
}

impl Default for Fig3Block {
    fn default() -> Self {
        Fig3Block {
            sigmas: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            r2s: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            delta_phi_bar: 0.0,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Json, OutputFormat::Csv]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laser: Option<LaserBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<TablesBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig3: Option<Fig3Block>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            seed: 0,
            out_dir: default_out(),
            formats: default_formats(),
            model: None,
            solver: None,
            network: None,
            laser: None,
            sequence: None,
            sweep: None,
            tables: None,
            fig3: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_value(toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?)
    }

    pub fn from_toml_value(v: toml::Value) -> Result<Self> {
        v.try_into().map_err(|e: toml::de::Error| Error::config(field_of(&e), e.to_string()))
    }

    /// Reads a config file and applies `key.path=value` overrides, values
    /// written as TOML literals (bare words are taken as strings).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::assemble(Some(path), None, overrides)
    }

    /// Builds a config from an optional file, a forced kind and overrides.
    /// A file written for another kind is rejected.
    pub fn assemble(path: Option<&Path>, kind: Option<ExperimentKind>, overrides: &[String]) -> Result<Self> {
        let mut v = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?
            }
            None => toml::Value::Table(toml::Table::new()),
        };
        if let Some(k) = kind {
            let t = v.as_table_mut().expect("TOML document is a table");
            match t.get("kind").and_then(|x| x.as_str()) {
                Some(have) if have != k.name() => {
                    return Err(Error::config("kind", format!("config is for `{have}`, not `{}`", k.name())));
                }
                _ => {
                    t.insert("kind".into(), toml::Value::String(k.name().into()));
                }
            }
        }
        apply_overrides(&mut v, overrides)?;
        Self::from_toml_value(v)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Fills optional blocks with defaults and checks that every block the
    /// experiment needs is present and valid.
    pub fn resolve(mut self) -> Result<Self> {
        use ExperimentKind::*;
        let needs = |have: bool, field: &str| {
            if have {
                Ok(())
            } else {
                Err(Error::config(field, format!("required for {}", self.kind.name())))
            }
        };
        if self.formats.is_empty() {
            return Err(Error::config("formats", "at least one output format"));
        }
        match self.kind {
            SynthPhases | EstimateQ => needs(self.model.is_some(), "model")?,
            Visibility | Calibrate => {
                needs(self.network.is_some(), "network")?;
                let input = self.sequence.as_ref().is_some_and(|s| s.input.is_some());
                needs(self.model.is_some() || input, "model")?;
            }
            SimulateLaser | Table1 | Table2 | Fig4 | Fig3 => {}
        }
        match self.kind {
            EstimateQ | Table1 | Table2 | Fig3 => {
                self.solver.get_or_insert_with(SolverBlock::default);
            }
            _ => {}
        }
        match self.kind {
            SynthPhases | Visibility | Calibrate => {
                self.sequence.get_or_insert_with(SequenceBlock::default);
            }
            _ => {}
        }
        if matches!(self.kind, Calibrate | Table1 | Table2 | Fig4) {
            self.sweep.get_or_insert_with(SweepBlock::default);
        }
        if matches!(self.kind, SimulateLaser | Table1 | Table2 | Fig4) {
            self.laser.get_or_insert_with(LaserBlock::default);
        }
        if matches!(self.kind, Table1 | Table2 | Fig4) {
            self.tables.get_or_insert_with(TablesBlock::default);
        }
        if self.kind == Fig3 {
            self.fig3.get_or_insert_with(Fig3Block::default);
        }
        if self.kind == EstimateQ && self.model.as_ref().is_some_and(|m| !(m.sigma > 0.0)) {
            return Err(Error::config("model.sigma", "q needs a positive spread"));
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if let Some(m) = &self.model {
            m.to_model()?;
        }
        if let Some(s) = &self.solver {
            s.quadrature()?;
            s.search()?;
        }
        if let Some(n) = &self.network {
            n.to_network()?;
        }
        if let Some(l) = &self.laser {
            l.validate()?;
        }
        if let Some(s) = &self.sequence {
            if s.rounds < 2 && s.input.is_none() {
                return Err(Error::config("sequence.rounds", "need at least 2 rounds"));
            }
        }
        if let Some(t) = &self.tables {
            if t.nus_ghz.is_empty() || t.i_offs_ma.is_empty() {
                return Err(Error::config("tables", "need at least one repetition rate and off current"));
            }
            if t.pulses < 2 || t.slow_pulses.is_some_and(|p| p < 2) {
                return Err(Error::config("tables.pulses", "need at least 2 pulses"));
            }
            if t.parallelism == 0 {
                return Err(Error::config("tables.parallelism", "must be >= 1"));
            }
        }
        if let Some(f) = &self.fig3 {
            if f.sigmas.is_empty() || f.r2s.is_empty() {
                return Err(Error::config("fig3", "grids must be non-empty"));
            }
            if f.sigmas.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::config("fig3.sigmas", "must be positive"));
            }
            if f.r2s.iter().any(|r| !(*r >= 0.0)) {
                return Err(Error::config("fig3.r2s", "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

fn field_of(e: &toml::de::Error) -> String {
    let msg = e.message();
    for key in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(key).nth(1) {
            return rest.split('`').next().unwrap_or("config").to_string();
        }
    }
    "config".to_string()
}

/// Sets `a.b.c = value` inside a TOML table, creating tables on the way.
pub fn apply_overrides(root: &mut toml::Value, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::config(o.as_str(), "override must look like key.path=value"))?;
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").unwrap(),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut node = &mut *root;
        for k in &keys[..keys.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::config(path.trim(), "parent is not a table"))?;
            node = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        node.as_table_mut()
            .ok_or_else(|| Error::config(path.trim(), "parent is not a table"))?
            .insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(())
}
