//! 3GPP eV2X requirement profiles and compliance checks.

use serde::{Deserialize, Serialize};

use super::SimSummary;

const PROFILES_JSON: &str = include_str!("../../data/requirements_3gpp.json");

/// The profile the teleoperated-driving use case is held to.
pub const TELEOPERATION_PROFILE: &str = "advanced_driving/info_sharing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementProfile {
    pub id: String,
    pub category: String,
    pub description: String,
    pub entities: String,
    pub max_delay_ms: Option<f64>,
    /// Single data-rate figure, when the row gives no uplink/downlink split.
    #[serde(default)]
    pub datarate_mbps: Option<f64>,
    #[serde(default)]
    pub uplink_mbps: Option<f64>,
    #[serde(default)]
    pub downlink_mbps: Option<f64>,
    pub min_range_m: Option<f64>,
    /// Carried for completeness; no loss model evaluates it.
    pub reliability_pct: Option<f64>,
}

impl RequirementProfile {
    /// `"<category> / <description>"`, as the row is usually cited.
    pub fn name(&self) -> String {
        format!("{} / {}", self.category, self.description)
    }

    /// The rate budget that applies to the sensor uplink.
    pub fn uplink_budget_mbps(&self) -> Option<f64> {
        self.uplink_mbps.or(self.datarate_mbps)
    }
}

#[derive(Deserialize)]
struct ProfileFile {
    profiles: Vec<RequirementProfile>,
}

/// All rows of the requirements table, in table order.
pub fn profiles() -> Vec<RequirementProfile> {
    let file: ProfileFile =
        serde_json::from_str(PROFILES_JSON).expect("embedded requirements table is valid JSON");
    file.profiles
}

pub fn profile(id: &str) -> Option<RequirementProfile> {
    profiles().into_iter().find(|p| p.id == id)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub limit: f64,
    pub value: f64,
    /// `limit - value`; negative when the check fails.
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(value: f64, limit: f64) -> Check {
        Check {
            limit,
            value,
            margin: limit - value,
            pass: value <= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub profile: String,
    /// Mean end-to-end delay including encode and decode time.
    pub delay: Option<Check>,
    /// Mean delay with codec time excluded.
    pub delay_without_codec: Option<Check>,
    /// Required uplink rate, Mbps.
    pub datarate: Option<Check>,
    /// Always `"not evaluated"` when the profile states a reliability.
    pub reliability: Option<String>,
    /// Every evaluated check passes. Rows without any delay or rate figure
    /// pass vacuously.
    pub pass: bool,
}

pub fn check_compliance(summary: &SimSummary, profile: &RequirementProfile) -> ComplianceReport {
    let delay = profile
        .max_delay_ms
        .map(|l| Check::at_most(summary.total_ms.mean, l));
    let delay_without_codec = profile
        .max_delay_ms
        .map(|l| Check::at_most(summary.total_without_codec_ms.mean, l));
    let datarate = profile
        .uplink_budget_mbps()
        .map(|l| Check::at_most(summary.required_rate_bps / 1e6, l));
    let pass = [delay, delay_without_codec, datarate]
        .iter()
        .flatten()
        .all(|c| c.pass);
    ComplianceReport {
        profile: profile.id.clone(),
        delay,
        delay_without_codec,
        datarate,
        reliability: profile.reliability_pct.map(|_| "not evaluated".to_string()),
        pass,
    }
}
