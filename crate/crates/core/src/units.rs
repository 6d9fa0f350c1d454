//! Closed unit and series-kind vocabularies.
//!
//! Scalars inside the models carry their unit in the identifier (`_m3`,
//! `_gwh`, `_kwh_per_m3`); series carry a [`Unit`] tag. Conversions between
//! volume and energy happen only through the helpers below.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m3_per_month")]
    M3PerMonth,
    #[serde(rename = "GWh_per_month")]
    GwhPerMonth,
    #[serde(rename = "ha")]
    Hectare,
    #[serde(rename = "tonne")]
    Tonne,
    #[serde(rename = "percent")]
    Percent,
    #[serde(rename = "persons")]
    Persons,
    #[serde(rename = "dimensionless")]
    Dimensionless,
    #[serde(rename = "tCO2_per_month")]
    TCo2PerMonth,
    #[serde(rename = "degC")]
    DegC,
    #[serde(rename = "mm_per_month")]
    MmPerMonth,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::M3PerMonth => "m3_per_month",
            Unit::GwhPerMonth => "GWh_per_month",
            Unit::Hectare => "ha",
            Unit::Tonne => "tonne",
            Unit::Percent => "percent",
            Unit::Persons => "persons",
            Unit::Dimensionless => "dimensionless",
            Unit::TCo2PerMonth => "tCO2_per_month",
            Unit::DegC => "degC",
            Unit::MmPerMonth => "mm_per_month",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a quantity behaves under temporal aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Flow,
    Stock,
    Intensity,
    Share,
}

/// Energy in GWh needed to move `volume_m3` at `kwh_per_m3`.
pub fn energy_gwh(volume_m3: f64, kwh_per_m3: f64) -> f64 {
    volume_m3 * kwh_per_m3 / 1.0e6
}

/// Monthly energy capability of a plant in GWh.
pub fn capability_gwh(capacity_mw: f64, hours: f64) -> f64 {
    capacity_mw * hours / 1000.0
}

/// Depth in mm over an area in ha expressed as a volume in m3.
pub fn mm_over_ha_to_m3(depth_mm: f64, area_ha: f64) -> f64 {
    depth_mm * area_ha * 10.0
}
