//! Study-area dataset: a JSON manifest plus CSV climate, history, share-panel
//! and coefficient files, validated as a whole on load.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::branch::{BaseValue, BranchTree, TreeBuilder, VariableDef};
use crate::energy::EnergySystem;
use crate::error::{CoreError, Result};
use crate::fmlm::{FmlmCoefficients, PanelRow, SharePanel, INTERCEPT};
use crate::scenario::lever_definitions;
use crate::series::{Horizon, MonthlySeries, YearMonth};
use crate::units::{SeriesKind, Unit};
use crate::water::{
    Availability, DemandDriver, DemandNode, DemandSector, Et0Params, WaterNetwork, WaterSource,
};

pub const TMEAN: &str = "tmean_C";
pub const PRECIP: &str = "precip_mm";
pub const POPULATION: &str = "population";
pub const PRECIP_PREDICTOR: &str = "precip_100mm";

pub const REQUIRED_SOURCES: usize = 4;
pub const REQUIRED_CROPS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crop {
    pub id: String,
    pub label: String,
    /// Crop coefficient per calendar month.
    pub kc: [f64; 12],
    pub base_yield_t_per_ha: f64,
    /// When non-empty, the crop may only be planted in these districts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusive_to: Vec<String>,
}

impl Crop {
    pub fn allowed_in(&self, district: &str) -> bool {
        self.exclusive_to.is_empty() || self.exclusive_to.iter().any(|d| d == district)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct District {
    pub id: String,
    pub label: String,
    pub cropland_ha: f64,
    /// On-farm application efficiency before any scenario change.
    pub base_efficiency: f64,
    pub priority: u32,
    pub preference: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClimateRef {
    pub name: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryRef {
    pub file: String,
    pub start_year: i32,
    pub end_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmlmRef {
    pub coefficients_file: String,
    pub share_panel_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterSection {
    pub sources: Vec<WaterSource>,
    /// Non-district demand nodes; district nodes are derived from `districts`.
    pub demands: Vec<DemandNode>,
}

/// The on-disk manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub horizon: Horizon,
    pub history: HistoryRef,
    pub climate_files: Vec<ClimateRef>,
    pub crops: Vec<Crop>,
    pub districts: Vec<District>,
    pub et0: Et0Params,
    pub water: WaterSection,
    pub energy: EnergySystem,
    pub fmlm: FmlmRef,
}

/// Named monthly columns over a contiguous span of whole years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateBlock {
    pub horizon: Horizon,
    pub columns: BTreeMap<String, MonthlySeries>,
}

impl ClimateBlock {
    pub fn column(&self, name: &str) -> Result<&MonthlySeries> {
        self.columns.get(name).ok_or_else(|| CoreError::Unknown {
            kind: "climate column",
            name: name.to_string(),
        })
    }
}

/// Exogenous forcing for one climate pathway, with the historical block used
/// for fitting and lagged predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateFile {
    pub name: String,
    pub series: ClimateBlock,
    pub history: ClimateBlock,
}

impl ClimateFile {
    fn block_for(&self, year: i32) -> Option<&ClimateBlock> {
        if self.series.horizon.contains_year(year) {
            Some(&self.series)
        } else if self.history.horizon.contains_year(year) {
            Some(&self.history)
        } else {
            None
        }
    }

    pub fn value(&self, column: &str, at: YearMonth) -> Result<f64> {
        let block = self.block_for(at.year).ok_or(CoreError::YearOutsideHorizon {
            year: at.year,
            start: self.history.horizon.start_year,
            end: self.series.horizon.end_year,
        })?;
        block
            .column(column)?
            .get(at)
            .ok_or_else(|| CoreError::schema(format!("climate_files.{}.{column}", self.name), format!("no value at {at}")))
    }

    pub fn annual_mean(&self, column: &str, year: i32) -> Result<f64> {
        let block = self.block_for(year).ok_or(CoreError::YearOutsideHorizon {
            year,
            start: self.history.horizon.start_year,
            end: self.series.horizon.end_year,
        })?;
        block.column(column)?.annual_mean(year).ok_or_else(|| {
            CoreError::schema(format!("climate_files.{}.{column}", self.name), format!("year {year} incomplete"))
        })
    }

    /// Design row for crop decisions made for `year`: prices and yields lag
    /// one year, temperature and precipitation are the year's own.
    pub fn fmlm_predictors(&self, crops: &[Crop], year: i32) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(3 + 2 * crops.len());
        x.push(1.0);
        for c in crops {
            x.push(self.annual_mean(&price_column(&c.id), year - 1)?);
        }
        for c in crops {
            x.push(self.annual_mean(&yield_column(&c.id), year - 1)?);
        }
        x.push(self.annual_mean(TMEAN, year)?);
        x.push(self.annual_mean(PRECIP, year)? * 12.0 / 100.0);
        Ok(x)
    }
}

pub fn price_column(crop: &str) -> String {
    format!("price_{crop}")
}

pub fn yield_column(crop: &str) -> String {
    format!("yield_{crop}")
}

pub fn predictor_names(crops: &[Crop]) -> Vec<String> {
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(crops.iter().map(|c| price_column(&c.id)));
    names.extend(crops.iter().map(|c| yield_column(&c.id)));
    names.push(TMEAN.to_string());
    names.push(PRECIP_PREDICTOR.to_string());
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyAreaDataset {
    pub name: String,
    pub description: String,
    pub horizon: Horizon,
    pub crops: Vec<Crop>,
    pub districts: Vec<District>,
    pub et0: Et0Params,
    /// Includes one agricultural demand node per district.
    pub water: WaterNetwork,
    pub energy: EnergySystem,
    pub climates: Vec<ClimateFile>,
    pub share_panel: SharePanel,
    pub fmlm: FmlmCoefficients,
    pub tree: BranchTree,
}

impl StudyAreaDataset {
    pub fn climate(&self, name: &str) -> Result<&ClimateFile> {
        self.climates
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| CoreError::Unknown {
                kind: "climate file",
                name: name.to_string(),
            })
    }

    pub fn climate_names(&self) -> Vec<&str> {
        self.climates.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn district(&self, id: &str) -> Result<&District> {
        self.districts
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| CoreError::Unknown {
                kind: "district",
                name: id.to_string(),
            })
    }

    pub fn crop_ids(&self) -> Vec<String> {
        self.crops.iter().map(|c| c.id.clone()).collect()
    }

    /// Which crops may be planted in `district`, in catalog order.
    pub fn allowed_crops(&self, district: &str) -> Vec<bool> {
        self.crops.iter().map(|c| c.allowed_in(district)).collect()
    }

    /// Per-crop area (ha) in `district` for `year` under the given coefficients.
    pub fn project_crop_areas(
        &self,
        coefs: &FmlmCoefficients,
        climate: &ClimateFile,
        district: &str,
        year: i32,
    ) -> Result<Vec<f64>> {
        self.horizon.check_year(year)?;
        let d = self.district(district)?;
        let x = climate.fmlm_predictors(&self.crops, year)?;
        let shares = crate::fmlm::fmlm_predict(coefs, &x)?;
        Ok(crate::fmlm::project_crop_areas(
            &shares,
            &self.allowed_crops(&d.id),
            d.cropland_ha,
        ))
    }

    /// Checks every dataset invariant.
    pub fn validate(&self) -> Result<()> {
        validate_crops(&self.crops, &self.districts)?;
        validate_districts(&self.districts)?;
        if self.water.sources.len() != REQUIRED_SOURCES {
            return Err(CoreError::schema(
                "water.sources",
                format!(
                    "expected exactly {REQUIRED_SOURCES} supply sources, found {}",
                    self.water.sources.len()
                ),
            ));
        }
        self.water.validate()?;
        let links = self
            .water
            .demands
            .iter()
            .filter(|d| d.driver == DemandDriver::PowerPlantLink)
            .count();
        if links > 1 {
            return Err(CoreError::schema(
                "water.demands",
                "at most one node may carry the power-plant link",
            ));
        }
        for d in &self.districts {
            let ok = self.water.demands.iter().any(|n| {
                n.driver == DemandDriver::Irrigation {
                    district: d.id.clone(),
                }
            });
            if !ok {
                return Err(CoreError::schema(
                    format!("districts[{}]", d.id),
                    "no irrigation demand node",
                ));
            }
        }
        for n in &self.water.demands {
            if let DemandDriver::Irrigation { district } = &n.driver {
                if self.district(district).is_err() {
                    return Err(CoreError::schema(
                        format!("water.demands[{}].driver", n.id),
                        format!("unknown district `{district}`"),
                    ));
                }
            }
        }
        self.energy.validate(&self.water)?;
        validate_et0(&self.et0)?;

        if self.climates.is_empty() {
            return Err(CoreError::schema("climate_files", "at least one climate file is required"));
        }
        let mut names = HashSet::new();
        for c in &self.climates {
            if !names.insert(c.name.as_str()) {
                return Err(CoreError::schema(
                    "climate_files",
                    format!("duplicate climate file `{}`", c.name),
                ));
            }
            if c.series.horizon != self.horizon {
                return Err(CoreError::HorizonMismatch {
                    field: format!("climate_files.{}", c.name),
                    expected: self.horizon.len_months(),
                    found: c.series.horizon.len_months(),
                });
            }
            let field = format!("climate_files.{}", c.name);
            validate_block(&field, &c.series, &self.crops, &self.water)?;
            validate_block(&format!("{field}.history"), &c.history, &self.crops, &self.water)?;
            if c.history.horizon.end_year + 1 != self.horizon.start_year {
                return Err(CoreError::schema(
                    format!("{field}.history"),
                    "history must end the year before the simulation horizon",
                ));
            }
        }

        let crop_ids = self.crop_ids();
        let predictors = predictor_names(&self.crops);
        if self.fmlm.crops != crop_ids {
            return Err(CoreError::schema("fmlm.coefficients", "crop order differs from the crop catalog"));
        }
        if self.fmlm.predictors != predictors {
            return Err(CoreError::schema("fmlm.coefficients", "predictors differ from the design matrix"));
        }
        self.fmlm.validate()?;
        if self.share_panel.crops != crop_ids || self.share_panel.predictors != predictors {
            return Err(CoreError::schema("fmlm.share_panel", "columns differ from the crop catalog"));
        }
        self.share_panel.validate()?;

        self.tree.validate()?;
        validate_levers(&self.tree, &self.water, &self.energy)
    }
}

fn validate_crops(crops: &[Crop], districts: &[District]) -> Result<()> {
    if crops.len() != REQUIRED_CROPS {
        return Err(CoreError::schema(
            "crops",
            format!("expected exactly {REQUIRED_CROPS} crops, found {}", crops.len()),
        ));
    }
    let mut ids = HashSet::new();
    for c in crops {
        let field = format!("crops[{}]", c.id);
        if !ids.insert(c.id.as_str()) {
            return Err(CoreError::schema(field, "duplicate crop id"));
        }
        if c.kc.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(CoreError::schema(field + ".kc", "coefficients must be finite and >= 0"));
        }
        if !(c.base_yield_t_per_ha.is_finite() && c.base_yield_t_per_ha >= 0.0) {
            return Err(CoreError::schema(field + ".base_yield_t_per_ha", "must be finite and >= 0"));
        }
        for d in &c.exclusive_to {
            if !districts.iter().any(|x| &x.id == d) {
                return Err(CoreError::schema(
                    field + ".exclusive_to",
                    format!("unknown district `{d}`"),
                ));
            }
        }
    }
    Ok(())
}

fn validate_districts(districts: &[District]) -> Result<()> {
    let mut ids = HashSet::new();
    for d in districts {
        let field = format!("districts[{}]", d.id);
        if !ids.insert(d.id.as_str()) {
            return Err(CoreError::schema(field, "duplicate district id"));
        }
        if !(d.cropland_ha.is_finite() && d.cropland_ha >= 0.0) {
            return Err(CoreError::schema(field + ".cropland_ha", "must be finite and >= 0"));
        }
        if !(d.base_efficiency > 0.0 && d.base_efficiency <= 1.0) {
            return Err(CoreError::schema(field + ".base_efficiency", "must be in (0, 1]"));
        }
    }
    Ok(())
}

fn validate_et0(et0: &Et0Params) -> Result<()> {
    if et0.ra_mm_per_day.iter().chain(&et0.temp_range_c).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(CoreError::schema("et0", "radiation and temperature range must be finite and >= 0"));
    }
    if !(0.0..=1.0).contains(&et0.effective_precip_fraction) {
        return Err(CoreError::schema("et0.effective_precip_fraction", "must be in [0, 1]"));
    }
    Ok(())
}

fn required_columns(crops: &[Crop], network: &WaterNetwork) -> Vec<String> {
    let mut cols = vec![TMEAN.to_string(), PRECIP.to_string(), POPULATION.to_string()];
    for s in &network.sources {
        if let Availability::Climate { column } = &s.availability {
            cols.push(column.clone());
        }
    }
    cols.extend(crops.iter().map(|c| price_column(&c.id)));
    cols.extend(crops.iter().map(|c| yield_column(&c.id)));
    cols
}

fn validate_block(field: &str, block: &ClimateBlock, crops: &[Crop], network: &WaterNetwork) -> Result<()> {
    for col in required_columns(crops, network) {
        let s = block
            .columns
            .get(&col)
            .ok_or_else(|| CoreError::schema(format!("{field}.{col}"), "missing column"))?;
        s.check_covers(&format!("{field}.{col}"), &block.horizon)?;
        let kind = if col == TMEAN { None } else { Some(SeriesKind::Flow) };
        s.validate(&format!("{field}.{col}"), kind)?;
    }
    Ok(())
}

fn validate_levers(tree: &BranchTree, network: &WaterNetwork, energy: &EnergySystem) -> Result<()> {
    let defs = lever_definitions(network, energy);
    let adjustable = tree.adjustable();
    if adjustable.len() != defs.len() {
        return Err(CoreError::schema(
            "tree",
            format!(
                "{} adjustable variables in the tree, engine defines {}",
                adjustable.len(),
                defs.len()
            ),
        ));
    }
    for def in &defs {
        let hits: Vec<_> = adjustable
            .iter()
            .filter(|(_, v)| v.key == def.variable.key)
            .collect();
        if hits.len() != 1 || hits[0].0 != def.path {
            return Err(CoreError::schema(
                format!("tree.{}", def.path),
                format!("adjustable variable `{}` must appear exactly once", def.variable.key),
            ));
        }
    }
    Ok(())
}

fn fixed_var(key: String, label: String, unit: Unit, kind: SeriesKind, base: BaseValue) -> VariableDef {
    VariableDef {
        key,
        label,
        unit,
        kind,
        base_value: base,
        adjustable: false,
        default_delta_pct: 0.0,
        effect: None,
    }
}

/// Builds the branch tree from the network, plant catalog and crop catalog.
pub fn build_tree(
    crops: &[Crop],
    districts: &[District],
    water: &WaterNetwork,
    energy: &EnergySystem,
) -> BranchTree {
    let mut b = TreeBuilder::new();
    b.node("water/supply", "Supply").node("water/demand", "Demand");
    for s in &water.sources {
        b.node(&format!("water/supply/{}", s.id), &s.label);
        if let Availability::ReturnFlow { fraction, .. } = &s.availability {
            b.variable(
                &format!("water/supply/{}", s.id),
                fixed_var(
                    format!("{}_return_fraction", s.id.to_lowercase()),
                    format!("{} return-flow fraction", s.label),
                    Unit::Dimensionless,
                    SeriesKind::Share,
                    BaseValue::Number(*fraction),
                ),
            );
        }
    }
    for sector in DemandSector::ALL {
        if water.demands.iter().any(|d| d.sector == sector) {
            b.node(&format!("water/demand/{}", sector.slug()), sector.label());
        }
    }
    for d in &water.demands {
        b.node(&d.branch_path(), &d.label);
    }
    if water.demands.iter().any(|d| d.sector == DemandSector::Municipal) {
        b.variable(
            "water/demand/municipal",
            fixed_var(
                POPULATION.into(),
                "Population".into(),
                Unit::Persons,
                SeriesKind::Stock,
                BaseValue::Series(format!("climate:{POPULATION}")),
            ),
        );
    }

    b.node("energy/demand", "Demand").node("energy/supply", "Supply");
    for s in &energy.demand.sectors {
        let label = {
            let mut l = s.id.slug().to_string();
            l[..1].make_ascii_uppercase();
            l
        };
        b.node(&format!("energy/demand/{}", s.id.slug()), &label);
    }
    b.node("energy/demand/industrial/water_infrastructure", "Water infrastructure");
    for s in &water.sources {
        b.node(
            &format!("energy/demand/industrial/water_infrastructure/{}", s.id),
            &s.label,
        );
    }
    b.variable(
        "energy/demand",
        fixed_var(
            "loss_fraction".into(),
            "Transmission and distribution losses".into(),
            Unit::Dimensionless,
            SeriesKind::Share,
            BaseValue::Number(energy.loss_fraction),
        ),
    )
    .variable(
        "energy/demand",
        fixed_var(
            "reserve_margin".into(),
            "Reserve margin".into(),
            Unit::Dimensionless,
            SeriesKind::Share,
            BaseValue::Number(energy.reserve_margin),
        ),
    );
    b.node("energy/supply/in_area", "In-area plants")
        .node("energy/supply/out_of_area", "Out-of-area plants");
    for p in &energy.catalog.plants {
        b.node(&p.branch_path(), &p.label);
    }

    b.node("food/crops", "Crops").node("food/districts", "Irrigation districts");
    for c in crops {
        b.node(&format!("food/crops/{}", c.id), &c.label);
    }
    for d in districts {
        let path = format!("food/districts/{}", d.id);
        b.node(&path, &d.label).variable(
            &path,
            fixed_var(
                format!("{}_cropland", d.id),
                format!("{} cropland", d.label),
                Unit::Hectare,
                SeriesKind::Stock,
                BaseValue::Number(d.cropland_ha),
            ),
        );
        for c in crops.iter().filter(|c| c.allowed_in(&d.id)) {
            b.node(&format!("{path}/{}", c.id), &c.label);
        }
    }

    for def in lever_definitions(water, energy) {
        b.variable(&def.path, def.variable);
    }
    b.build()
}

/// Something that can hand out dataset files by name.
trait FileSource {
    fn read(&self, name: &str) -> Result<String>;
}

struct DirSource(PathBuf);

impl FileSource for DirSource {
    fn read(&self, name: &str) -> Result<String> {
        let path = self.0.join(name);
        std::fs::read_to_string(&path).map_err(|source| CoreError::MissingFile {
            path: path.display().to_string(),
            source,
        })
    }
}

struct BundledSource;

const BUNDLED: &[(&str, &str)] = &[
    ("manifest.json", include_str!("../data/phoenix_synthetic/manifest.json")),
    ("history.csv", include_str!("../data/phoenix_synthetic/history.csv")),
    ("ssp245.csv", include_str!("../data/phoenix_synthetic/ssp245.csv")),
    ("ssp585.csv", include_str!("../data/phoenix_synthetic/ssp585.csv")),
    ("share_panel.csv", include_str!("../data/phoenix_synthetic/share_panel.csv")),
    ("fmlm_coefficients.csv", include_str!("../data/phoenix_synthetic/fmlm_coefficients.csv")),
];

impl FileSource for BundledSource {
    fn read(&self, name: &str) -> Result<String> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| s.to_string())
            .ok_or_else(|| CoreError::MissingFile {
                path: format!("<bundled>/{name}"),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            })
    }
}

/// Directory of the bundled synthetic dataset inside the source tree.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/phoenix_synthetic")
}

/// Loads and validates the synthetic study area compiled into the crate.
pub fn load_bundled() -> Result<StudyAreaDataset> {
    load_from(&BundledSource)
}

/// Loads and validates a dataset directory containing `manifest.json`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<StudyAreaDataset> {
    load_from(&DirSource(path.as_ref().to_path_buf()))
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CoreError::schema(
            if path == "." { "manifest".to_string() } else { path },
            e.into_inner().to_string(),
        )
    })
}

fn load_from(files: &dyn FileSource) -> Result<StudyAreaDataset> {
    let manifest = parse_manifest(&files.read("manifest.json")?)?;
    let Manifest {
        name,
        description,
        horizon,
        history,
        climate_files,
        crops,
        districts,
        et0,
        water,
        energy,
        fmlm,
    } = manifest;
    validate_crops(&crops, &districts)?;
    validate_districts(&districts)?;

    let mut demands = water.demands;
    for d in &districts {
        demands.push(DemandNode {
            id: d.id.clone(),
            label: d.label.clone(),
            sector: DemandSector::Agricultural,
            priority: d.priority,
            preference: d.preference.clone(),
            driver: DemandDriver::Irrigation {
                district: d.id.clone(),
            },
        });
    }
    let network = WaterNetwork {
        sources: water.sources,
        demands,
    };

    let history_horizon = Horizon {
        start_year: history.start_year,
        end_year: history.end_year,
    };
    let history_block = parse_climate_csv(
        "history",
        &files.read(&history.file)?,
        history_horizon,
    )?;
    let mut climates = Vec::new();
    for c in &climate_files {
        let series = parse_climate_csv(
            &format!("climate_files.{}", c.name),
            &files.read(&c.file)?,
            horizon,
        )?;
        climates.push(ClimateFile {
            name: c.name.clone(),
            series,
            history: history_block.clone(),
        });
    }

    let crop_ids: Vec<String> = crops.iter().map(|c| c.id.clone()).collect();
    let coefficients = FmlmCoefficients::read_csv(
        files.read(&fmlm.coefficients_file)?.as_bytes(),
        &crop_ids,
    )?;
    let predictors = predictor_names(&crops);
    let share_panel = match climates.first() {
        Some(first) => parse_share_panel(
            &files.read(&fmlm.share_panel_file)?,
            &crops,
            &predictors,
            first,
        )?,
        None => return Err(CoreError::schema("climate_files", "at least one climate file is required")),
    };

    let tree = build_tree(&crops, &districts, &network, &energy);
    let dataset = StudyAreaDataset {
        name,
        description,
        horizon,
        crops,
        districts,
        et0,
        water: network,
        energy,
        climates,
        share_panel,
        fmlm: coefficients,
        tree,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Parses a climate CSV with one row per month covering `horizon` exactly.
pub fn parse_climate_csv(field: &str, text: &str, horizon: Horizon) -> Result<ClimateBlock> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for required in ["year", "month", TMEAN, PRECIP, POPULATION] {
        if !headers.iter().any(|h| h == required) {
            return Err(CoreError::schema(format!("{field}.{required}"), "missing column"));
        }
    }
    let data_cols: Vec<(usize, &String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != "year" && *h != "month")
        .collect();
    let year_col = headers.iter().position(|h| h == "year").unwrap_or(0);
    let month_col = headers.iter().position(|h| h == "month").unwrap_or(1);
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); data_cols.len()];
    let start = horizon.start();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let parse_int = |i: usize, name: &str| -> Result<i64> {
            rec.get(i)
                .and_then(|v| v.parse::<i64>().ok())
                .ok_or_else(|| CoreError::schema(format!("{field}.{name}"), format!("row {}: not an integer", rows + 1)))
        };
        let year = parse_int(year_col, "year")?;
        let month = parse_int(month_col, "month")?;
        if !(1..=12).contains(&month) {
            return Err(CoreError::schema(format!("{field}.month"), format!("row {}: month {month} outside 1..12", rows + 1)));
        }
        let at = YearMonth::new(year as i32, month as u32);
        let expected = start.plus_months(rows);
        if at != expected {
            return Err(CoreError::schema(
                format!("{field}.year"),
                format!("row {}: found {at}, expected {expected} (rows must be consecutive months)", rows + 1),
            ));
        }
        for (k, (i, name)) in data_cols.iter().enumerate() {
            let v = rec
                .get(*i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| CoreError::schema(format!("{field}.{name}"), format!("row {}: not a number", rows + 1)))?;
            values[k].push(v);
        }
        rows += 1;
    }
    if rows != horizon.len_months() {
        return Err(CoreError::HorizonMismatch {
            field: field.to_string(),
            expected: horizon.len_months(),
            found: rows,
        });
    }
    let mut columns = BTreeMap::new();
    for ((_, name), vals) in data_cols.into_iter().zip(values) {
        columns.insert(
            name.clone(),
            MonthlySeries {
                start,
                unit: column_unit(name),
                values: vals,
            },
        );
    }
    Ok(ClimateBlock { horizon, columns })
}

fn column_unit(name: &str) -> Unit {
    match name {
        TMEAN => Unit::DegC,
        PRECIP => Unit::MmPerMonth,
        POPULATION => Unit::Persons,
        n if n.starts_with("inflow_") => Unit::M3PerMonth,
        _ => Unit::Dimensionless,
    }
}

/// Parses `district,year,<crop shares...>` rows and attaches predictors from
/// the historical block.
pub fn parse_share_panel(
    text: &str,
    crops: &[Crop],
    predictors: &[String],
    climate: &ClimateFile,
) -> Result<SharePanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut expected = vec!["district".to_string(), "year".to_string()];
    expected.extend(crops.iter().map(|c| c.id.clone()));
    if headers != expected {
        return Err(CoreError::schema(
            "fmlm.share_panel",
            format!("header must be `{}`", expected.join(",")),
        ));
    }
    let mut rows = Vec::new();
    let mut cache: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| CoreError::schema("fmlm.share_panel", format!("row {}: {what}", n + 1));
        let district = rec.get(0).unwrap_or_default().to_string();
        let year: i32 = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad year"))?;
        let shares = (0..crops.len())
            .map(|j| rec.get(2 + j).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| bad("bad share")))
            .collect::<Result<Vec<f64>>>()?;
        let x = match cache.get(&year) {
            Some(x) => x.clone(),
            None => {
                let x = climate.fmlm_predictors(crops, year)?;
                cache.insert(year, x.clone());
                x
            }
        };
        rows.push(PanelRow {
            district,
            year,
            predictors: x,
            shares,
        });
    }
    let panel = SharePanel {
        crops: crops.iter().map(|c| c.id.clone()).collect(),
        predictors: predictors.to_vec(),
        rows,
    };
    panel.validate()?;
    Ok(panel)
}
