//! Ingestion of disease × county × year case tables and construction of the
//! train/test count panels.
//!
//! The expected input is a UTF-8 CSV with columns for disease, county, year,
//! sex, cases and (optionally) population. Column names and the delimiter are
//! configurable through [`ColumnMap`] and [`PanelSpec`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PhibpError, Result};
use crate::panel::CountPanel;

pub const FIRST_YEAR: i32 = 2001;
pub const LAST_YEAR: i32 = 2023;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub disease: String,
    pub county: String,
    pub year: i32,
    pub sex: String,
    pub cases: u64,
    pub population: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub disease: String,
    pub county: String,
    pub year: String,
    pub sex: String,
    pub cases: String,
    pub population: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            disease: "Disease".into(),
            county: "County".into(),
            year: "Year".into(),
            sex: "Sex".into(),
            cases: "Cases".into(),
            population: "Population".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureMode {
    /// `γ_{i,j}` = per-year exposure for every year.
    Unit,
    /// `γ_{i,j}` = population of county `j` in year `i` divided by the mean
    /// training-period population.
    Population,
}

impl std::str::FromStr for ExposureMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(Self::Unit),
            "population" => Ok(Self::Population),
            other => Err(format!("unknown exposure mode `{other}` (expected unit or population)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSpec {
    /// Inclusive year range used for fitting.
    pub train_years: (i32, i32),
    /// Inclusive held-out year range.
    pub test_years: (i32, i32),
    /// Drop every disease whose largest single county-year count exceeds this.
    pub rare_threshold: Option<u64>,
    /// Sex category kept (case-insensitive).
    pub sex_filter: String,
    /// County value marking statewide aggregate rows, which are dropped.
    pub aggregate_region: String,
    pub exposure_mode: ExposureMode,
    pub per_year_exposure: f64,
    pub columns: ColumnMap,
    pub delimiter: char,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self {
            train_years: (2001, 2014),
            test_years: (2015, 2023),
            rare_threshold: Some(1000),
            sex_filter: "Total".into(),
            aggregate_region: "California".into(),
            exposure_mode: ExposureMode::Unit,
            per_year_exposure: 1.0,
            columns: ColumnMap::default(),
            delimiter: ',',
        }
    }
}

impl PanelSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.train_years;
        let (c, d) = self.test_years;
        if a > b || c > d {
            return Err(invalid("years", "year ranges must be non-empty"));
        }
        if !(b < c || d < a) {
            return Err(invalid("years", "train and test year ranges overlap"));
        }
        if !(self.per_year_exposure.is_finite() && self.per_year_exposure > 0.0) {
            return Err(invalid("per_year_exposure", "must be finite and positive"));
        }
        if !self.delimiter.is_ascii() {
            return Err(invalid("delimiter", "must be a single ASCII character"));
        }
        Ok(())
    }

    fn train_year_list(&self) -> Vec<i32> {
        (self.train_years.0..=self.train_years.1).collect()
    }

    fn test_year_list(&self) -> Vec<i32> {
        (self.test_years.0..=self.test_years.1).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub records: Vec<RawRecord>,
    pub warnings: Vec<String>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
}

/// Reads a case table, keeping only the configured sex category and
/// dropping statewide aggregate rows. Malformed rows are skipped and reported
/// with their line numbers; missing mandatory columns are a hard error.
/// Records come back sorted by (disease, county, year).
pub fn ingest_csv(path: &Path, spec: &PanelSpec) -> Result<Ingested> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .flexible(true)
        .from_path(path)?;
    let mut out = Ingested::default();
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        out.warnings.push(format!("{}: empty file", path.display()));
        return Ok(out);
    }
    let cols = &spec.columns;
    let mandatory = [&cols.disease, &cols.county, &cols.year, &cols.sex, &cols.cases];
    let missing: Vec<&str> =
        mandatory.iter().filter(|c| column_index(&headers, c).is_none()).map(|c| c.as_str()).collect();
    if !missing.is_empty() {
        return Err(PhibpError::Schema(format!(
            "{}: missing column(s) {:?}; found {:?}",
            path.display(),
            missing,
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let idx = |c: &str| column_index(&headers, c).expect("checked above");
    let (i_dis, i_cty, i_yr, i_sex, i_cas) =
        (idx(&cols.disease), idx(&cols.county), idx(&cols.year), idx(&cols.sex), idx(&cols.cases));
    let i_pop = column_index(&headers, &cols.population);

    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.warnings.push(format!("line {line}: unreadable row ({e})"));
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).map(str::trim);
        let (Some(disease), Some(county), Some(year), Some(sex), Some(cases)) =
            (field(i_dis), field(i_cty), field(i_yr), field(i_sex), field(i_cas))
        else {
            out.warnings.push(format!("line {line}: too few fields"));
            continue;
        };
        if !sex.eq_ignore_ascii_case(&spec.sex_filter) {
            continue;
        }
        if county.eq_ignore_ascii_case(&spec.aggregate_region) {
            continue;
        }
        if disease.is_empty() || county.is_empty() {
            out.warnings.push(format!("line {line}: empty disease or county"));
            continue;
        }
        let year: i32 = match year.parse() {
            Ok(y) if (FIRST_YEAR..=LAST_YEAR).contains(&y) => y,
            Ok(y) => {
                out.warnings.push(format!("line {line}: year {y} outside {FIRST_YEAR}-{LAST_YEAR}"));
                continue;
            }
            Err(_) => {
                out.warnings.push(format!("line {line}: bad year `{year}`"));
                continue;
            }
        };
        let cases: u64 = match cases.parse::<u64>() {
            Ok(c) => c,
            Err(_) => match cases.parse::<f64>() {
                Ok(c) if c >= 0.0 && c.fract() == 0.0 && c < 9.0e15 => c as u64,
                _ => {
                    out.warnings.push(format!("line {line}: bad case count `{cases}`"));
                    continue;
                }
            },
        };
        let population = match i_pop.and_then(|i| row.get(i)).map(str::trim) {
            None | Some("") => None,
            Some(p) => match p.replace(',', "").parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Some(v),
                _ => {
                    out.warnings.push(format!("line {line}: bad population `{p}`"));
                    None
                }
            },
        };
        out.records.push(RawRecord {
            disease: disease.to_string(),
            county: county.to_string(),
            year,
            sex: sex.to_string(),
            cases,
            population,
        });
    }
    if out.records.is_empty() {
        out.warnings.push(format!("{}: no usable data rows", path.display()));
    }
    sort_records(&mut out.records);
    Ok(out)
}

pub fn sort_records(records: &mut [RawRecord]) {
    records.sort_by(|a, b| {
        (&a.disease, &a.county, a.year).cmp(&(&b.disease, &b.county, b.year))
    });
}

/// Writes records in the default ingestion schema.
pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let c = ColumnMap::default();
    w.write_record([&c.disease, &c.county, &c.year, &c.sex, &c.cases, &c.population])?;
    for r in records {
        w.write_record([
            r.disease.clone(),
            r.county.clone(),
            r.year.to_string(),
            r.sex.clone(),
            r.cases.to_string(),
            r.population.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps a disease only if its largest single (county, year) count is at most
/// `threshold`. A zero threshold keeps nothing.
pub fn filter_rare(records: &[RawRecord], threshold: u64) -> Vec<RawRecord> {
    if threshold == 0 {
        return Vec::new();
    }
    let mut cell: BTreeMap<(&str, &str, i32), u64> = BTreeMap::new();
    for r in records {
        *cell.entry((&r.disease, &r.county, r.year)).or_default() += r.cases;
    }
    let mut max: BTreeMap<&str, u64> = BTreeMap::new();
    for ((d, _, _), n) in cell {
        let m = max.entry(d).or_default();
        *m = (*m).max(n);
    }
    records.iter().filter(|r| max[r.disease.as_str()] <= threshold).cloned().collect()
}

pub fn disease_count(records: &[RawRecord]) -> usize {
    records.iter().map(|r| r.disease.as_str()).collect::<BTreeSet<_>>().len()
}

pub fn county_count(records: &[RawRecord]) -> usize {
    records.iter().map(|r| r.county.as_str()).collect::<BTreeSet<_>>().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelManifest {
    pub spec: PanelSpec,
    pub regions: Vec<String>,
    pub catalogue: Vec<String>,
    pub test_only_species: Vec<String>,
    pub train_exposures: Vec<Vec<f64>>,
    pub test_exposures: Vec<Vec<f64>>,
    pub train_hash: String,
    pub test_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panels {
    pub train: CountPanel,
    pub test: CountPanel,
    /// Diseases seen only in the test years, scored by the novelty term.
    pub test_only_species: Vec<String>,
}

impl Panels {
    pub fn manifest(&self, spec: &PanelSpec) -> Result<PanelManifest> {
        Ok(PanelManifest {
            spec: spec.clone(),
            regions: self.train.regions().to_vec(),
            catalogue: self.train.species().to_vec(),
            test_only_species: self.test_only_species.clone(),
            train_exposures: self.train.all_sample_exposures().to_vec(),
            test_exposures: self.test.all_sample_exposures().to_vec(),
            train_hash: self.train.content_hash()?,
            test_hash: self.test.content_hash()?,
        })
    }

    /// Writes `train_panel.csv`, `test_panel.csv`, `panels.json` and
    /// `panel_manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, spec: &PanelSpec) -> Result<PanelManifest> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train_panel.csv"), self.train.to_canonical_csv()?)?;
        std::fs::write(dir.join("test_panel.csv"), self.test.to_canonical_csv()?)?;
        std::fs::write(dir.join("panels.json"), serde_json::to_vec(self)?)?;
        let manifest = self.manifest(spec)?;
        std::fs::write(dir.join("panel_manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    /// Reads `panels.json` from a directory written by [`Self::write`], or
    /// from the file itself.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join("panels.json") } else { path.to_path_buf() };
        let bytes = std::fs::read(&file)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Aggregates filtered records into the training and held-out panels.
///
/// Regions are all counties present in `records`; the catalogue is every
/// disease with at least one training-period case.
pub fn build_panels(records: &[RawRecord], spec: &PanelSpec) -> Result<Panels> {
    spec.validate()?;
    let regions: Vec<String> =
        records.iter().map(|r| r.county.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let r_index: BTreeMap<&str, usize> =
        regions.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let in_range = |y: i32, (a, b): (i32, i32)| (a..=b).contains(&y);

    let mut train: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    let mut test: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    let mut population: BTreeMap<(usize, i32), f64> = BTreeMap::new();
    for r in records {
        let j = r_index[r.county.as_str()];
        if let Some(p) = r.population {
            population.entry((j, r.year)).or_insert(p);
        }
        let target = if in_range(r.year, spec.train_years) {
            &mut train
        } else if in_range(r.year, spec.test_years) {
            &mut test
        } else {
            continue;
        };
        target.entry(r.disease.as_str()).or_insert_with(|| vec![0; regions.len()])[j] += r.cases;
    }

    let catalogue: Vec<String> = train
        .iter()
        .filter(|(_, v)| v.iter().any(|&n| n > 0))
        .map(|(d, _)| d.to_string())
        .collect();
    if catalogue.is_empty() {
        return Err(PhibpError::Empty("no training-period cases after filtering".into()));
    }
    let test_only_species: Vec<String> = test
        .iter()
        .filter(|(d, v)| v.iter().any(|&n| n > 0) && !catalogue.iter().any(|c| c == *d))
        .map(|(d, _)| d.to_string())
        .collect();

    let grid = |src: &BTreeMap<&str, Vec<u64>>| -> Vec<Vec<u64>> {
        (0..regions.len())
            .map(|j| catalogue.iter().map(|d| src.get(d.as_str()).map_or(0, |v| v[j])).collect())
            .collect()
    };
    let (train_ex, test_ex) = exposures(spec, regions.len(), &population, &regions)?;
    let (train_grid, test_grid) = (grid(&train), grid(&test));
    Ok(Panels {
        train: CountPanel::new(regions.clone(), catalogue.clone(), train_grid, train_ex)?,
        test: CountPanel::held_out(regions, catalogue, test_grid, test_ex)?,
        test_only_species,
    })
}

type ExposurePair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn exposures(
    spec: &PanelSpec,
    n_regions: usize,
    population: &BTreeMap<(usize, i32), f64>,
    regions: &[String],
) -> Result<ExposurePair> {
    let train_years = spec.train_year_list();
    let test_years = spec.test_year_list();
    match spec.exposure_mode {
        ExposureMode::Unit => Ok((
            vec![vec![spec.per_year_exposure; train_years.len()]; n_regions],
            vec![vec![spec.per_year_exposure; test_years.len()]; n_regions],
        )),
        ExposureMode::Population => {
            let lookup = |j: usize, y: i32| -> Result<f64> {
                match population.get(&(j, y)) {
                    Some(&p) if p > 0.0 => Ok(p),
                    _ => Err(PhibpError::Schema(format!(
                        "population mode needs a positive population for `{}` in {y}",
                        regions[j]
                    ))),
                }
            };
            let mut train = vec![Vec::new(); n_regions];
            let mut sum = 0.0;
            for (j, row) in train.iter_mut().enumerate() {
                for &y in &train_years {
                    let p = lookup(j, y)?;
                    sum += p;
                    row.push(p);
                }
            }
            let scale = spec.per_year_exposure * (n_regions * train_years.len()) as f64 / sum;
            for row in &mut train {
                row.iter_mut().for_each(|p| *p *= scale);
            }
            let test = (0..n_regions)
                .map(|j| test_years.iter().map(|&y| lookup(j, y).map(|p| p * scale)).collect())
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok((train, test))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(d: &str, c: &str, y: i32, n: u64) -> RawRecord {
        RawRecord { disease: d.into(), county: c.into(), year: y, sex: "Total".into(), cases: n, population: Some(100.0) }
    }

    #[test]
    fn filter_rare_thresholds() {
        let recs = vec![rec("a", "x", 2001, 5), rec("a", "y", 2002, 2000), rec("b", "x", 2001, 7)];
        assert_eq!(disease_count(&filter_rare(&recs, 1000)), 1);
        assert_eq!(filter_rare(&recs, u64::MAX), recs);
        assert!(filter_rare(&recs, 0).is_empty());
    }

    #[test]
    fn panels_conserve_counts_and_split_years() {
        let recs = vec![
            rec("a", "x", 2001, 5),
            rec("a", "x", 2014, 1),
            rec("a", "y", 2015, 3),
            rec("b", "y", 2003, 2),
            rec("c", "x", 2020, 4),
        ];
        let p = build_panels(&recs, &PanelSpec::default()).unwrap();
        assert_eq!(p.train.species(), ["a", "b"]);
        assert_eq!(p.train.grand_total(), 8);
        assert_eq!(p.test.grand_total(), 3);
        assert_eq!(p.test_only_species, ["c"]);
        assert_eq!(p.train.total_exposure(0), 14.0);
        assert_eq!(p.test.total_exposure(1), 9.0);
    }

    #[test]
    fn population_mode_normalises_by_training_mean() {
        let mut recs = Vec::new();
        for y in 2001..=2023 {
            recs.push(RawRecord { population: Some(100.0), ..rec("a", "x", y, 1) });
            recs.push(RawRecord { population: Some(300.0), ..rec("a", "y", y, 0) });
        }
        let spec = PanelSpec { exposure_mode: ExposureMode::Population, ..PanelSpec::default() };
        let p = build_panels(&recs, &spec).unwrap();
        assert!((p.train.total_exposure(0) - 7.0).abs() < 1e-12);
        assert!((p.train.total_exposure(1) - 21.0).abs() < 1e-12);
        assert!((p.test.total_exposure(0) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn overlapping_years_rejected() {
        let spec = PanelSpec { test_years: (2010, 2020), ..PanelSpec::default() };
        assert!(spec.validate().is_err());
    }
}
