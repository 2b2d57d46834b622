//! Scenario files: one TOML document per experiment.

use efco::analysis::{
    FamilyParam, GroupCurveConfig, MapFamily, ReflectionConfig, ScanConfig, DEFAULT_SYNC_EPSILON,
};
use efco::currentmode::{CurrentScene, DetectConfig, SceneChange};
use efco::medium::{NoiseModel, SensingChain};
use efco::sim::{DeviceSpec, Engine, Scenario, TimeBound};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::CliError;
use crate::overrides::apply_override;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Simulate,
    Scan,
    Analyze,
    Calibrate,
    Currentmode,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Simulate => "simulate",
            Pipeline::Scan => "scan",
            Pipeline::Analyze => "analyze",
            Pipeline::Calibrate => "calibrate",
            Pipeline::Currentmode => "currentmode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// The figure whose data this scenario regenerates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<String>,
    pub pipeline: Pipeline,
    /// Master seed; it replaces every seed inside the pipeline section.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// Which analyses to run on a simulated trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimAnalysis {
    pub sync: bool,
    pub sync_epsilon: f64,
    pub reflection: bool,
    pub period: bool,
    pub period_tol: f64,
}

impl Default for SimAnalysis {
    fn default() -> Self {
        Self {
            sync: false,
            sync_epsilon: DEFAULT_SYNC_EPSILON,
            reflection: false,
            period: false,
            period_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default = "synchronous")]
    pub engine: Engine,
    pub scenario: Scenario,
    #[serde(default)]
    pub analysis: SimAnalysis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<ReflectionConfig>,
}

fn synchronous() -> Engine {
    Engine::Synchronous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task", deny_unknown_fields)]
pub enum AnalyzeSpec {
    /// Stationary states of one family member.
    FixedPoints { family: MapFamily },
    /// Stationary states and their multipliers along a parameter grid.
    StabilitySweep {
        family: MapFamily,
        param: FamilyParam,
        range: (f64, f64),
        grid_size: usize,
    },
    /// One bisected stability change per range.
    Bifurcations {
        family: MapFamily,
        param: FamilyParam,
        ranges: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "target", deny_unknown_fields)]
pub enum CalibrateSpec {
    /// Self-signal gains of a lone device.
    K1 {
        device: DeviceSpec,
        /// What the device hears of itself through the water.
        self_gain: f64,
        #[serde(default)]
        noise: NoiseModel,
        #[serde(default)]
        chain: SensingChain,
        cycles: u64,
    },
    /// Ratio-versus-group-size curve (and optionally ratio-versus-offset),
    /// with an optional round trip on fresh seeds.
    Group {
        #[serde(default)]
        config: GroupCurveConfig,
        #[serde(default)]
        m_values: Vec<usize>,
        #[serde(default = "default_offset")]
        e: f64,
        #[serde(default)]
        e_values: Vec<f64>,
        #[serde(default = "default_m")]
        m: usize,
        /// Seed offset of the round-trip batch; no round trip if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verify_seed_offset: Option<u64>,
    },
}

fn default_offset() -> f64 {
    -0.01
}
fn default_m() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentModeSpec {
    pub scene: CurrentScene,
    #[serde(default)]
    pub changes: Vec<SceneChange>,
    pub duration_s: f64,
    pub fs: f64,
    /// Frequencies to look for; defaults to those of the scene.
    #[serde(default)]
    pub candidates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect: Option<DetectConfig>,
}

impl CurrentModeSpec {
    pub fn candidate_freqs(&self) -> Vec<f64> {
        if !self.candidates.is_empty() {
            return self.candidates.clone();
        }
        std::iter::once(self.scene.sensor.frequency)
            .chain(self.scene.dipoles.iter().map(|d| d.frequency))
            .collect()
    }

    pub fn detect_config(&self) -> DetectConfig {
        self.detect.unwrap_or_else(|| DetectConfig::new(self.scene.sensor.frequency))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub metadata: Metadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currentmode: Option<CurrentModeSpec>,
}

/// Replace every `{ count = n, ... }` device table by n copies of itself.
fn expand_device_counts(doc: &mut Value) -> Result<(), CliError> {
    let Some(devices) = doc
        .get_mut("simulate")
        .and_then(|s| s.get_mut("scenario"))
        .and_then(|s| s.get_mut("devices"))
        .and_then(Value::as_array_mut)
    else {
        return Ok(());
    };
    let mut out = Vec::with_capacity(devices.len());
    for (i, d) in devices.drain(..).enumerate() {
        let mut d = d;
        let count = match d.as_table_mut().and_then(|t| t.remove("count")) {
            None => 1,
            Some(Value::Integer(n)) if n >= 0 => n as usize,
            Some(v) => {
                return Err(CliError::Invalid(format!(
                    "device {i}: count must be a non-negative integer, got {v}"
                )))
            }
        };
        out.extend(std::iter::repeat_n(d, count));
    }
    *devices = out;
    Ok(())
}

impl ScenarioFile {
    /// Parse a scenario document, expanding device counts and applying
    /// `key=value` overrides before the typed decode.
    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: Value = text
            .parse::<toml::Table>()
            .map(Value::Table)
            .map_err(|e| CliError::Invalid(format!("parse error: {e}")))?;
        expand_device_counts(&mut doc)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let file: ScenarioFile = doc
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Invalid(e.to_string()))?;
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::parse_with(text, &[])
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Invalid(format!("cannot serialize scenario: {e}")))
    }

    /// Copy the master seed into the pipeline section.
    pub fn propagate_seed(&mut self) {
        let seed = self.metadata.seed;
        if let Some(s) = &mut self.simulate {
            s.scenario.seed = seed;
            s.scenario.noise.seed = seed;
        }
        if let Some(s) = &mut self.scan {
            s.seed = seed;
        }
        if let Some(CalibrateSpec::Group { config, .. }) = &mut self.calibrate {
            config.seed_base = seed;
        }
        if let Some(CalibrateSpec::K1 { noise, .. }) = &mut self.calibrate {
            noise.seed = seed;
        }
        if let Some(c) = &mut self.currentmode {
            c.scene.field.seed = seed;
        }
    }

    /// Set the run length where the pipeline has one.
    pub fn set_steps(&mut self, steps: u64) -> Result<(), CliError> {
        match (self.metadata.pipeline, &mut self.simulate, &mut self.calibrate) {
            (Pipeline::Simulate, Some(s), _) => {
                if s.engine != Engine::Synchronous {
                    return Err(CliError::Invalid(
                        "--steps needs the synchronous engine; set the duration instead".into(),
                    ));
                }
                s.scenario.bound = TimeBound::Steps(steps);
                Ok(())
            }
            (Pipeline::Calibrate, _, Some(CalibrateSpec::Group { config, .. })) => {
                config.steps = steps;
                Ok(())
            }
            (Pipeline::Calibrate, _, Some(CalibrateSpec::K1 { cycles, .. })) => {
                *cycles = steps.div_ceil(2);
                Ok(())
            }
            (Pipeline::Scan, _, _) => {
                if let Some(s) = &mut self.scan {
                    s.samples = steps as usize;
                }
                Ok(())
            }
            (p, _, _) => Err(CliError::Invalid(format!("--steps does not apply to the {} pipeline", p.name()))),
        }
    }

    /// Structural checks that do not need a run: exactly the pipeline's own
    /// section is present and it is internally consistent.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.metadata;
        if m.name.trim().is_empty() {
            return Err(CliError::Invalid("metadata.name is empty".into()));
        }
        let present = [
            (Pipeline::Simulate, self.simulate.is_some()),
            (Pipeline::Scan, self.scan.is_some()),
            (Pipeline::Analyze, self.analyze.is_some()),
            (Pipeline::Calibrate, self.calibrate.is_some()),
            (Pipeline::Currentmode, self.currentmode.is_some()),
        ];
        for (p, has) in present {
            if p == m.pipeline && !has {
                return Err(CliError::Invalid(format!("pipeline {} needs a [{}] section", p.name(), p.name())));
            }
            if p != m.pipeline && has {
                return Err(CliError::Invalid(format!(
                    "[{}] section given but the pipeline is {}",
                    p.name(),
                    m.pipeline.name()
                )));
            }
        }
        if let Some(s) = &self.simulate {
            if s.scenario.devices.is_empty() {
                return Err(CliError::Invalid("scenario has no devices".into()));
            }
            s.scenario.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
            match (s.engine, s.scenario.bound) {
                (Engine::Synchronous, TimeBound::Steps(_)) | (Engine::EventDriven, TimeBound::Duration(_)) => {}
                (Engine::Synchronous, _) => {
                    return Err(CliError::Invalid("the synchronous engine needs bound = { steps = n }".into()))
                }
                (Engine::EventDriven, _) => {
                    return Err(CliError::Invalid(
                        "the event-driven engine needs bound = { duration = seconds }".into(),
                    ))
                }
            }
            if !(s.analysis.sync_epsilon > 0.0 && s.analysis.period_tol > 0.0) {
                return Err(CliError::Invalid("analysis tolerances must be positive".into()));
            }
        }
        if let Some(c) = &self.currentmode {
            c.scene.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[metadata]
name = "two"
pipeline = "simulate"
seed = 4

[simulate.scenario]
bound = { steps = 20 }
coupling = { kind = "sampled", offset = -0.01 }

[[simulate.scenario.devices]]
count = 3
x0 = 0.05
"#;

    #[test]
    fn counts_expand() {
        let f = ScenarioFile::parse(MINIMAL).unwrap();
        let s = f.simulate.unwrap();
        assert_eq!(s.scenario.devices.len(), 3);
        assert!(s.scenario.devices.iter().all(|d| d.x0 == 0.05));
    }

    #[test]
    fn round_trip_is_identity() {
        let f = ScenarioFile::parse(MINIMAL).unwrap();
        let text = f.to_toml().unwrap();
        let g = ScenarioFile::parse(&text).unwrap();
        assert_eq!(f, g);
        assert_eq!(text, g.to_toml().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("x0 = 0.05", "x0 = 0.05\nxzero = 1");
        assert!(matches!(ScenarioFile::parse(&bad), Err(CliError::Invalid(_))));
        let bad = MINIMAL.replace("seed = 4", "seed = 4\ncolour = \"red\"");
        assert!(matches!(ScenarioFile::parse(&bad), Err(CliError::Invalid(_))));
    }

    #[test]
    fn sections_must_match_pipeline() {
        let f = ScenarioFile::parse(&MINIMAL.replace("\"simulate\"", "\"scan\"")).unwrap();
        assert!(f.validate().is_err());
        let f = ScenarioFile::parse(&MINIMAL.replace("count = 3", "count = 0")).unwrap();
        assert!(f.validate().is_err());
        assert!(ScenarioFile::parse(&MINIMAL.replace("count = 3", "count = -1")).is_err());
    }

    #[test]
    fn seed_propagates() {
        let mut f = ScenarioFile::parse(MINIMAL).unwrap();
        f.propagate_seed();
        assert_eq!(f.simulate.unwrap().scenario.seed, 4);
    }
}
