//! Executes a scenario's pipeline and writes its outputs with a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use efco::analysis::{
    bifurcation_scan, build_e_curve, build_m_curve, classify_reflection_with, detect_period,
    dispersion_series, estimate_group_stats, find_bifurcation, settling_step, swarm_ratio,
    sync_envelope_metrics, time_to_sync, AnalysisError, GroupCalibration, MIN_TAIL,
};
use efco::currentmode::{detect_interference, rms_impedance, simulate_timeline, CurrentModeError};
use efco::medium::{CouplingMatrix, Medium};
use efco::sim::{calibrate_k1, run_event_driven, run_synchronous, Engine, SimError, SimTrace, TimeBound};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, EXIT_ANALYSIS, EXIT_DIVERGED, EXIT_OK};
use crate::report::{self, fmt_f64, fmt_opt, Csv};
use crate::scenario::{AnalyzeSpec, CalibrateSpec, CurrentModeSpec, Pipeline, ScenarioFile, SimulateSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// A device escaped; outputs hold the run up to that point.
    Diverged,
    /// The run finished but a requested analysis could not be carried out.
    AnalysisFailed,
}

impl RunStatus {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunStatus::Ok => EXIT_OK,
            RunStatus::Diverged => EXIT_DIVERGED,
            RunStatus::AnalysisFailed => EXIT_ANALYSIS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub figure: Option<String>,
    pub pipeline: Pipeline,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// The fully resolved scenario (overrides applied); replaying it
    /// reproduces the run.
    pub config: String,
    pub status: RunStatus,
    pub message: Option<String>,
    /// `step`, `device` and `value` of the escape, when there was one.
    pub divergence: Option<BTreeMap<String, String>>,
    /// Headline numbers, also present in the CSVs.
    pub summary: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Default)]
struct Output {
    files: Vec<Csv>,
    summary: BTreeMap<String, String>,
    metrics: Vec<(String, String)>,
    status: Option<(RunStatus, String)>,
    divergence: Option<BTreeMap<String, String>>,
}

impl Output {
    fn put(&mut self, key: &str, value: String) {
        self.summary.insert(key.into(), value.clone());
        self.metrics.push((key.into(), value));
    }

    fn fail(&mut self, msg: String) {
        if self.status.is_none() {
            self.status = Some((RunStatus::AnalysisFailed, msg));
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> u8 {
        self.manifest.status.exit_code()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Invalid(m) => CliError::Invalid(m),
        AnalysisError::UnknownParam { .. } => CliError::Invalid(e.to_string()),
        e => CliError::Analysis(e.to_string()),
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Invalid(_) | SimError::Medium(_) => CliError::Invalid(e.to_string()),
        e => CliError::Analysis(e.to_string()),
    }
}

fn current_err(e: CurrentModeError) -> CliError {
    match e {
        CurrentModeError::TooShort { .. } => CliError::Analysis(e.to_string()),
        e => CliError::Invalid(e.to_string()),
    }
}

fn opt_usize(v: Option<usize>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

fn run_trace(spec: &SimulateSpec) -> Result<SimTrace, CliError> {
    match (spec.engine, spec.scenario.bound) {
        (Engine::Synchronous, TimeBound::Steps(n)) => run_synchronous(&spec.scenario, n),
        (Engine::EventDriven, TimeBound::Duration(t)) => run_event_driven(&spec.scenario, t),
        _ => return Err(CliError::Invalid("engine and bound do not match".into())),
    }
    .map_err(sim_err)
}

fn simulate(spec: &SimulateSpec, out: &mut Output) -> Result<(), CliError> {
    let trace = run_trace(spec)?;
    out.files.push(report::trace_csv(&trace));
    out.files.push(report::events_csv(&trace));
    if let Some(div) = trace.divergence {
        let note = BTreeMap::from([
            ("step".to_string(), div.step.to_string()),
            ("device".to_string(), div.device.to_string()),
            ("value".to_string(), fmt_f64(div.value)),
        ]);
        out.divergence = Some(note);
        out.status = Some((
            RunStatus::Diverged,
            format!("device {} diverged at step {}", div.device, div.step),
        ));
        return Ok(());
    }
    let a = spec.analysis;
    if a.sync {
        match sync_envelope_metrics(&trace, a.sync_epsilon) {
            Ok(m) => {
                out.put("time_to_sync", opt_usize(m.time_to_sync));
                out.put("ratio", fmt_opt(m.ratio));
                let status = serde_json::to_string(&m.envelope_status).expect("unit enum");
                out.put("envelope_status", status.trim_matches('"').to_string());
                out.put("envelope_max", fmt_opt(m.envelope.map(|e| e.max)));
                out.put("envelope_min", fmt_opt(m.envelope.map(|e| e.min)));
                out.put("beat_period_s", fmt_opt(m.envelope.map(|e| e.beat_period_s)));
                out.put("beats", m.envelope.map_or_else(|| "NA".into(), |e| e.beats.to_string()));
                if !m.dispersion.is_empty() {
                    let mut csv = Csv::new("dispersion.csv", &["step", "dispersion"]);
                    for (k, &d) in m.dispersion.iter().enumerate() {
                        csv.row(&[k.to_string(), fmt_f64(d)]);
                    }
                    out.files.push(csv);
                }
            }
            Err(e) => out.fail(format!("sync metrics: {e}")),
        }
    }
    if a.period {
        let states = trace.oscillator_states();
        match states.first() {
            Some(x) if x.len() >= MIN_TAIL => match detect_period(&x[x.len() - MIN_TAIL..], a.period_tol) {
                Ok(c) => {
                    out.put("period_kind", c.kind.label());
                    out.put("period_min", fmt_f64(c.min));
                    out.put("period_max", fmt_f64(c.max));
                    let settle = c.period.and_then(|k| settling_step(x, k, a.period_tol));
                    out.put("settle_step", opt_usize(settle));
                    let synced = if states.len() >= 2 {
                        time_to_sync(&dispersion_series(&states), a.sync_epsilon)
                    } else {
                        Some(0)
                    };
                    let both = match (settle, synced) {
                        (Some(p), Some(s)) => Some(p.max(s)),
                        _ => None,
                    };
                    out.put("synchronized_periodic_step", opt_usize(both));
                }
                Err(e) => out.fail(format!("period: {e}")),
            },
            _ => out.fail(format!("period: needs an oscillator with at least {MIN_TAIL} steps")),
        }
    }
    if a.reflection {
        let cfg = spec.reflection.unwrap_or_default();
        match classify_reflection_with(&trace, &cfg) {
            Ok(r) => out.put("reflection", r.label().into()),
            Err(e) => out.fail(format!("reflection: {e}")),
        }
    }
    if !out.metrics.is_empty() {
        let name = if a.sync { "sync_metrics.csv" } else { "metrics.csv" };
        out.files.push(report::metrics_csv(name, &out.metrics));
    }
    Ok(())
}

fn scan(cfg: &efco::analysis::ScanConfig, out: &mut Output) -> Result<(), CliError> {
    let d = bifurcation_scan(cfg).map_err(analysis_err)?;
    out.files.push(report::diagram_csv(&d));
    out.files.push(report::scan_points_csv(&d));
    out.files.push(report::bifurcations_csv(&d.critical));
    let diverged: usize = d.points.iter().map(|p| p.diverged_runs).sum();
    out.summary.insert("grid_size".into(), d.points.len().to_string());
    out.summary.insert("diverged_runs".into(), diverged.to_string());
    for (i, b) in d.critical.iter().enumerate() {
        out.summary.insert(format!("critical_{i}"), format!("{} {}", b.kind.label(), fmt_f64(b.value)));
    }
    Ok(())
}

fn sweep_grid(range: (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                range.1
            } else {
                range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn analyze(spec: &AnalyzeSpec, out: &mut Output) -> Result<(), CliError> {
    match spec {
        AnalyzeSpec::FixedPoints { family } => {
            let r = family.fixed_points();
            out.files.push(report::fixed_points_csv(&r));
            out.summary.insert("points".into(), r.points.len().to_string());
            out.summary.insert("stable".into(), r.points.iter().filter(|p| p.stable).count().to_string());
            out.summary.insert("residual".into(), fmt_f64(r.residual));
            if r.is_empty() {
                out.fail("no stationary state found".into());
            }
        }
        AnalyzeSpec::StabilitySweep { family, param, range, grid_size } => {
            if *grid_size < 2 || !(range.0 < range.1) {
                return Err(CliError::Invalid("sweep needs grid_size ≥ 2 and an increasing range".into()));
            }
            use rayon::prelude::*;
            let sweep = sweep_grid(*range, *grid_size)
                .into_par_iter()
                .map(|v| Ok((v, family.with(*param, v)?.fixed_points())))
                .collect::<Result<Vec<_>, AnalysisError>>()
                .map_err(analysis_err)?;
            out.files.push(report::stability_csv(*param, &sweep));
            let stable = sweep.iter().filter(|(_, r)| r.margin() < 1.0).count();
            out.summary.insert("grid_size".into(), sweep.len().to_string());
            out.summary.insert("stable_values".into(), stable.to_string());
        }
        AnalyzeSpec::Bifurcations { family, param, ranges } => {
            let mut found = Vec::new();
            for &r in ranges {
                match find_bifurcation(family, *param, r, None) {
                    Ok(b) => found.push(b),
                    Err(e) => out.fail(format!("[{}, {}]: {e}", r.0, r.1)),
                }
            }
            for (i, b) in found.iter().enumerate() {
                out.summary.insert(format!("bifurcation_{i}"), format!("{} {}", b.kind.label(), fmt_f64(b.value)));
            }
            out.files.push(report::bifurcations_csv(&found));
        }
    }
    Ok(())
}

fn calibrate(spec: &CalibrateSpec, out: &mut Output) -> Result<(), CliError> {
    match spec {
        CalibrateSpec::K1 { device, self_gain, noise, chain, cycles } => {
            let medium = Medium {
                coupling: CouplingMatrix::new(1, vec![*self_gain]).map_err(|e| CliError::Invalid(e.to_string()))?,
                chain: *chain,
                noise: *noise,
            };
            let mut d = *device;
            match calibrate_k1(&mut d, &medium, *cycles) {
                Ok((pos, neg)) => {
                    out.put("k1_pos", fmt_f64(pos));
                    out.put("k1_neg", fmt_f64(neg));
                    out.files.push(report::metrics_csv("k1.csv", &out.metrics));
                }
                Err(e @ SimError::Calibration(_)) => out.fail(e.to_string()),
                Err(e) => return Err(sim_err(e)),
            }
        }
        CalibrateSpec::Group { config, m_values, e, e_values, m, verify_seed_offset } => {
            if m_values.is_empty() && e_values.is_empty() {
                return Err(CliError::Invalid("group calibration needs m_values or e_values".into()));
            }
            let m_curve = if m_values.is_empty() {
                None
            } else {
                let c = build_m_curve(m_values, *e, config).map_err(analysis_err)?;
                out.files.push(report::curve_csv("m_curve.csv", &c));
                out.summary.insert("m_curve_monotone".into(), c.is_strictly_monotone().to_string());
                Some(c)
            };
            let e_curve = if e_values.is_empty() {
                None
            } else {
                let c = build_e_curve(*m, e_values, config).map_err(analysis_err)?;
                out.files.push(report::curve_csv("e_curve.csv", &c));
                out.summary.insert("e_curve_monotone".into(), c.is_strictly_monotone().to_string());
                Some(c)
            };
            if let (Some(offset), Some(m_curve)) = (verify_seed_offset, m_curve) {
                let cal = GroupCalibration { m_curve, e_curve };
                let fresh = efco::analysis::GroupCurveConfig {
                    seed_base: config.seed_base + offset,
                    ..*config
                };
                let mut csv = Csv::new("round_trip.csv", &["m", "ratio", "m_estimate", "nearest_knot", "sensitivity"]);
                let mut hits = 0;
                for &mt in m_values {
                    let ratio = median_of(mt, *e, &fresh)?;
                    match estimate_group_stats(ratio, &cal) {
                        Ok(est) => {
                            if est.m.nearest_knot == mt as f64 {
                                hits += 1;
                            }
                            csv.row(&[
                                mt.to_string(),
                                fmt_f64(ratio),
                                fmt_f64(est.m.value),
                                fmt_f64(est.m.nearest_knot),
                                fmt_f64(est.m.sensitivity),
                            ]);
                        }
                        Err(err) => {
                            csv.row(&[mt.to_string(), fmt_f64(ratio), "NA".into(), "NA".into(), "NA".into()]);
                            out.fail(format!("m = {mt}: {err}"));
                        }
                    }
                }
                out.summary.insert("round_trip_hits".into(), format!("{hits}/{}", m_values.len()));
                out.files.push(csv);
            }
        }
    }
    Ok(())
}

/// Median swarm ratio over `cfg.seeds` runs.
pub fn median_of(m: usize, e: f64, cfg: &efco::analysis::GroupCurveConfig) -> Result<f64, CliError> {
    use rayon::prelude::*;
    let mut r: Vec<f64> = (0..cfg.seeds)
        .into_par_iter()
        .map(|k| swarm_ratio(m, e, cfg.seed_base + k, cfg))
        .collect::<Result<_, _>>()
        .map_err(analysis_err)?;
    if r.is_empty() {
        return Err(CliError::Invalid("seeds must be positive".into()));
    }
    r.sort_by(f64::total_cmp);
    let n = r.len();
    Ok(if n % 2 == 1 { r[n / 2] } else { 0.5 * (r[n / 2 - 1] + r[n / 2]) })
}

fn currentmode(spec: &CurrentModeSpec, out: &mut Output) -> Result<(), CliError> {
    let series = simulate_timeline(&spec.scene, &spec.changes, spec.duration_s, spec.fs).map_err(current_err)?;
    let cfg = spec.detect_config();
    let cands = spec.candidate_freqs();
    let rms = rms_impedance(&series, cfg.sensing_freq, cfg.window_cycles).map_err(current_err)?;
    let det = detect_interference(&series, &cands, &cfg).map_err(current_err)?;
    out.files.push(report::signal_csv(&series));
    out.files.push(report::rms_csv(&rms));
    out.files.push(report::detection_csv(&det, &cands));
    out.files.push(report::current_events_csv(&det));
    let beats: Vec<String> = det.beats().filter(|c| c.detected).map(|c| c.label_text(&cands)).collect();
    out.summary.insert("bin_hz".into(), fmt_f64(det.bin_hz));
    out.summary.insert("beats".into(), beats.join(" "));
    out.summary.insert("events".into(), det.events.len().to_string());
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Run a parsed scenario and write its outputs into `out_dir`.
///
/// Errors before any output is written are returned as `Err`; a divergence
/// or a failed analysis still writes everything that was produced and is
/// reported through the manifest status.
pub fn run_scenario(file: &ScenarioFile, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let mut file = file.clone();
    file.propagate_seed();
    file.validate()?;
    let config = file.to_toml()?;
    let mut out = Output::default();
    let result = match file.metadata.pipeline {
        Pipeline::Simulate => simulate(file.simulate.as_ref().expect("validated"), &mut out),
        Pipeline::Scan => scan(file.scan.as_ref().expect("validated"), &mut out),
        Pipeline::Analyze => analyze(file.analyze.as_ref().expect("validated"), &mut out),
        Pipeline::Calibrate => calibrate(file.calibrate.as_ref().expect("validated"), &mut out),
        Pipeline::Currentmode => currentmode(file.currentmode.as_ref().expect("validated"), &mut out),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Analysis(msg)) => out.fail(msg),
        Err(e) => return Err(e),
    }

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(out.files.len());
    for f in &out.files {
        let path = out_dir.join(&f.name);
        write_file(&path, f.text.as_bytes())?;
        entries.push(FileEntry {
            name: f.name.clone(),
            sha256: sha256_hex(f.text.as_bytes()),
            bytes: f.text.len(),
            rows: f.rows,
        });
    }
    let (status, message) = match out.status {
        Some((s, m)) => (s, Some(m)),
        None => (RunStatus::Ok, None),
    };
    let manifest = RunManifest {
        name: file.metadata.name.clone(),
        figure: file.metadata.figure.clone(),
        pipeline: file.metadata.pipeline,
        version: env!("CARGO_PKG_VERSION").into(),
        seed: file.metadata.seed,
        config_sha256: sha256_hex(config.as_bytes()),
        config,
        status,
        message,
        divergence: out.divergence,
        summary: out.summary,
        files: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&out_dir.join(MANIFEST_NAME), json.as_bytes())?;
    Ok(RunOutcome { manifest, out_dir: out_dir.to_path_buf() })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Re-run the configuration stored in a manifest and check that every
/// output reproduces its recorded checksum.
pub fn replay(manifest: &RunManifest, out_dir: &Path) -> Result<RunOutcome, CliError> {
    if sha256_hex(manifest.config.as_bytes()) != manifest.config_sha256 {
        return Err(CliError::Mismatch("stored configuration does not match its hash".into()));
    }
    let file = ScenarioFile::parse(&manifest.config)?;
    let outcome = run_scenario(&file, out_dir)?;
    let want: Vec<(&str, &str)> = manifest.files.iter().map(|f| (f.name.as_str(), f.sha256.as_str())).collect();
    let got: Vec<(&str, &str)> = outcome.manifest.files.iter().map(|f| (f.name.as_str(), f.sha256.as_str())).collect();
    if want != got {
        let diff: Vec<&str> = want
            .iter()
            .filter(|w| !got.contains(w))
            .map(|w| w.0)
            .chain(got.iter().filter(|g| !want.contains(g)).map(|g| g.0))
            .collect();
        return Err(CliError::Mismatch(format!("outputs differ: {}", diff.join(", "))));
    }
    if outcome.manifest.config_sha256 != manifest.config_sha256 {
        return Err(CliError::Mismatch("configuration hash changed on replay".into()));
    }
    Ok(outcome)
}
