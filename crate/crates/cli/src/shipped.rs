//! Scenarios compiled into the binary.

use crate::error::CliError;
use crate::scenario::ScenarioFile;

pub const SHIPPED: &[(&str, &str)] = &[
    ("fig11a_period2", include_str!("../scenarios/fig11a_period2.toml")),
    ("fig11b_chaos", include_str!("../scenarios/fig11b_chaos.toml")),
    ("fig21a_dipole_event", include_str!("../scenarios/fig21a_dipole_event.toml")),
    ("fig21a_object_event", include_str!("../scenarios/fig21a_object_event.toml")),
    ("fig21b_beat", include_str!("../scenarios/fig21b_beat.toml")),
    ("fig3_desync", include_str!("../scenarios/fig3_desync.toml")),
    ("fig4c_bifurcation", include_str!("../scenarios/fig4c_bifurcation.toml")),
    ("fig4c_bifurcation_points", include_str!("../scenarios/fig4c_bifurcation_points.toml")),
    ("fig5a_group_size", include_str!("../scenarios/fig5a_group_size.toml")),
    ("fig5b_group_offset", include_str!("../scenarios/fig5b_group_offset.toml")),
    ("fig6_delayed_k3", include_str!("../scenarios/fig6_delayed_k3.toml")),
    ("fig7_delayed_k4", include_str!("../scenarios/fig7_delayed_k4.toml")),
    ("fig8a_delayed_eigen_k3", include_str!("../scenarios/fig8a_delayed_eigen_k3.toml")),
    ("fig8b_delayed_eigen_k4", include_str!("../scenarios/fig8b_delayed_eigen_k4.toml")),
    ("fig9a_swarm_sync", include_str!("../scenarios/fig9a_swarm_sync.toml")),
    ("fig9b_mirror", include_str!("../scenarios/fig9b_mirror.toml")),
    ("k1_calibration", include_str!("../scenarios/k1_calibration.toml")),
    ("stationary_states", include_str!("../scenarios/stationary_states.toml")),
];

pub fn shipped_text(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn shipped(name: &str) -> Result<ScenarioFile, CliError> {
    let text = shipped_text(name).ok_or_else(|| CliError::Invalid(format!("no shipped scenario named `{name}`")))?;
    ScenarioFile::parse(text)
}
