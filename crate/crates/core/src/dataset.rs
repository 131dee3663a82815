//! Observation and model-prediction tables, alignment on a shared set of
//! locations, and train/evidence/test splits.
//!
//! Observation files are CSV with one column per input coordinate (for the
//! nuclear case `Z,N`), a `value` column and an optional `id` column. Model
//! files carry the same coordinate columns plus `f` and optionally `delta`
//! (a fixed systematic correction).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the input space. Equality and hashing are exact on the parsed
/// coordinates; no tolerance matching is attempted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Location {
    coords: Vec<f64>,
}

impl Location {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Validation("location needs at least one coordinate".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Validation(format!("non-finite coordinate {c}")));
        }
        // -0.0 and 0.0 must hash identically
        let coords = coords.into_iter().map(|c| if c == 0.0 { 0.0 } else { c }).collect();
        Ok(Self { coords })
    }

    /// Nuclear-chart location `(Z, N)`.
    pub fn zn(z: i64, n: i64) -> Self {
        Self {
            coords: vec![z as f64, n as f64],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl PartialEq for Location {
    fn eq(&self, other: &Self) -> bool {
        self.coords.len() == other.coords.len()
            && self.coords.iter().zip(&other.coords).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Location {}

impl Hash for Location {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for c in &self.coords {
            c.to_bits().hash(state);
        }
    }
}

impl PartialOrd for Location {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Location {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.coords.iter().zip(&other.coords) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        self.coords.len().cmp(&other.coords.len())
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub location: Location,
    pub value: f64,
    pub id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub coord_names: Vec<String>,
    pub entries: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(coord_names: Vec<String>, entries: Vec<Observation>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.value.is_finite() {
                return Err(Error::Validation(format!("non-finite value at {}", e.location)));
            }
            if e.location.dim() != coord_names.len() {
                return Err(Error::Shape(format!(
                    "location {} has {} coordinates, expected {}",
                    e.location,
                    e.location.dim(),
                    coord_names.len()
                )));
            }
            if !seen.insert(e.location.clone()) {
                return Err(Error::DuplicateLocation(e.location.clone()));
            }
        }
        Ok(Self { coord_names, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Predictions of one model over its own grid, with optional fixed corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTable {
    pub name: String,
    pub coord_names: Vec<String>,
    locations: Vec<Location>,
    predictions: HashMap<Location, f64>,
    corrections: Option<HashMap<Location, f64>>,
}

impl ModelTable {
    pub fn new(
        name: impl Into<String>,
        coord_names: Vec<String>,
        rows: Vec<(Location, f64, Option<f64>)>,
    ) -> Result<Self> {
        let name = name.into();
        let has_delta = rows.first().map(|r| r.2.is_some()).unwrap_or(false);
        let mut locations = Vec::with_capacity(rows.len());
        let mut predictions = HashMap::with_capacity(rows.len());
        let mut corrections = has_delta.then(|| HashMap::with_capacity(rows.len()));
        for (loc, f, delta) in rows {
            if !f.is_finite() {
                return Err(Error::Validation(format!("{name}: non-finite prediction at {loc}")));
            }
            if predictions.insert(loc.clone(), f).is_some() {
                return Err(Error::DuplicateLocation(loc));
            }
            match (&mut corrections, delta) {
                (Some(c), Some(d)) if d.is_finite() => {
                    c.insert(loc.clone(), d);
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "{name}: corrections must cover every prediction (at {loc})"
                    )))
                }
            }
            locations.push(loc);
        }
        Ok(Self {
            name,
            coord_names,
            locations,
            predictions,
            corrections,
        })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn prediction(&self, loc: &Location) -> Option<f64> {
        self.predictions.get(loc).copied()
    }

    pub fn correction(&self, loc: &Location) -> Option<f64> {
        self.corrections.as_ref().and_then(|c| c.get(loc).copied())
    }

    pub fn has_corrections(&self) -> bool {
        self.corrections.is_some()
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let display = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| with_path(e.into(), &display))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| with_path(e.into(), &display))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec.map_err(|e| with_path(e.into(), &display))?);
    }
    Ok((headers, rows))
}

fn with_path(e: Error, path: &str) -> Error {
    match e {
        Error::Parse { row, msg, .. } => Error::Parse {
            path: path.to_string(),
            row,
            msg,
        },
        other => other,
    }
}

fn parse_cell(path: &str, row: usize, col: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_string(),
        row,
        msg: format!("column {col}: cannot parse {cell:?} as a number"),
    })
}

/// Split headers into coordinate columns and the named reserved ones.
fn coordinate_columns(headers: &[String], reserved: &[&str]) -> Vec<usize> {
    headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !reserved.contains(&h.as_str()))
        .map(|(i, _)| i)
        .collect()
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<ObservationSet> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let (headers, rows) = read_table(path)?;
    let value_col = headers.iter().position(|h| h == "value").ok_or_else(|| Error::Parse {
        path: display.clone(),
        row: 1,
        msg: "missing required column `value`".into(),
    })?;
    let id_col = headers.iter().position(|h| h == "id");
    let coord_cols = coordinate_columns(&headers, &["value", "id"]);
    if coord_cols.is_empty() {
        return Err(Error::Parse {
            path: display,
            row: 1,
            msg: "no coordinate columns".into(),
        });
    }
    let coord_names = coord_cols.iter().map(|&i| headers[i].clone()).collect();
    let mut entries = Vec::with_capacity(rows.len());
    for (r, rec) in rows.iter().enumerate() {
        // header is line 1
        let line = r + 2;
        let coords = coord_cols
            .iter()
            .map(|&c| parse_cell(&display, line, &headers[c], rec.get(c).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        let value = parse_cell(&display, line, "value", rec.get(value_col).unwrap_or(""))?;
        let id = id_col.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()).map(str::to_string);
        let location = Location::new(coords).map_err(|e| Error::Parse {
            path: display.clone(),
            row: line,
            msg: e.to_string(),
        })?;
        entries.push(Observation { location, value, id });
    }
    ObservationSet::new(coord_names, entries)
}

/// Load one model table; `name` defaults to the file stem.
pub fn load_model_table(path: impl AsRef<Path>, name: Option<&str>) -> Result<ModelTable> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let name = name
        .map(str::to_string)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| display.clone());
    let (headers, rows) = read_table(path)?;
    let f_col = headers.iter().position(|h| h == "f").ok_or_else(|| Error::Parse {
        path: display.clone(),
        row: 1,
        msg: "missing required column `f`".into(),
    })?;
    let delta_col = headers.iter().position(|h| h == "delta");
    let coord_cols = coordinate_columns(&headers, &["f", "delta"]);
    let coord_names = coord_cols.iter().map(|&i| headers[i].clone()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for (r, rec) in rows.iter().enumerate() {
        let line = r + 2;
        let coords = coord_cols
            .iter()
            .map(|&c| parse_cell(&display, line, &headers[c], rec.get(c).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        let f = parse_cell(&display, line, "f", rec.get(f_col).unwrap_or(""))?;
        let delta = match delta_col {
            Some(c) => Some(parse_cell(&display, line, "delta", rec.get(c).unwrap_or(""))?),
            None => None,
        };
        let loc = Location::new(coords).map_err(|e| Error::Parse {
            path: display.clone(),
            row: line,
            msg: e.to_string(),
        })?;
        out.push((loc, f, delta));
    }
    ModelTable::new(name, coord_names, out)
}

/// How systematic corrections are picked up during alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Corrections {
    /// Populate corrections iff every model carries them; mixed availability is an error.
    #[default]
    Auto,
    Disabled,
}

/// Model predictions over a list of locations, without observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub coord_names: Vec<String>,
    pub locations: Vec<Location>,
    /// `n × p` raw predictions.
    pub f: DMatrix<f64>,
    /// `n × p` corrections, when available.
    pub d: Option<DMatrix<f64>>,
    pub model_names: Vec<String>,
}

impl Domain {
    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn p(&self) -> usize {
        self.model_names.len()
    }

    /// The model outputs entering the mixture: `f`, or `f + δ` when corrected.
    pub fn effective(&self, use_corrections: bool) -> Result<DMatrix<f64>> {
        if !use_corrections {
            return Ok(self.f.clone());
        }
        match &self.d {
            Some(d) => Ok(&self.f + d),
            None => Err(Error::Validation(
                "use_corrections requested but the models carry no corrections".into(),
            )),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Domain {
        Domain {
            coord_names: self.coord_names.clone(),
            locations: idx.iter().map(|&i| self.locations[i].clone()).collect(),
            f: self.f.select_rows(idx),
            d: self.d.as_ref().map(|d| d.select_rows(idx)),
            model_names: self.model_names.clone(),
        }
    }
}

/// Observations joined with per-model predictions. Row `i` of every matrix
/// corresponds to `locations[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub domain: Domain,
    pub y: Vec<f64>,
}

impl AlignedDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.domain.p()
    }

    pub fn locations(&self) -> &[Location] {
        &self.domain.locations
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.domain.f
    }

    pub fn d(&self) -> Option<&DMatrix<f64>> {
        self.domain.d.as_ref()
    }

    pub fn model_names(&self) -> &[String] {
        &self.domain.model_names
    }

    pub fn subset(&self, idx: &[usize]) -> AlignedDataset {
        AlignedDataset {
            domain: self.domain.subset(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Keep only the models at the given column indices.
    pub fn select_models(&self, cols: &[usize]) -> AlignedDataset {
        let d = &self.domain;
        AlignedDataset {
            domain: Domain {
                coord_names: d.coord_names.clone(),
                locations: d.locations.clone(),
                f: d.f.select_columns(cols),
                d: d.d.as_ref().map(|m| m.select_columns(cols)),
                model_names: cols.iter().map(|&c| d.model_names[c].clone()).collect(),
            },
            y: self.y.clone(),
        }
    }

    pub fn index_of(&self, loc: &Location) -> Option<usize> {
        self.domain.locations.iter().position(|l| l == loc)
    }
}

fn correction_mode(models: &[ModelTable], mode: Corrections) -> Result<bool> {
    match mode {
        Corrections::Disabled => Ok(false),
        Corrections::Auto => {
            let with = models.iter().filter(|m| m.has_corrections()).count();
            if with == 0 {
                Ok(false)
            } else if with == models.len() {
                Ok(true)
            } else {
                let missing: Vec<_> = models
                    .iter()
                    .filter(|m| !m.has_corrections())
                    .map(|m| m.name.as_str())
                    .collect();
                Err(Error::Validation(format!(
                    "mixed correction availability (no corrections for {}); disable corrections explicitly",
                    missing.join(", ")
                )))
            }
        }
    }
}

/// Assemble model predictions at the given locations.
pub fn align_domain(locations: &[Location], models: &[ModelTable], mode: Corrections) -> Result<Domain> {
    if models.is_empty() {
        return Err(Error::Validation("at least one model table is required".into()));
    }
    let with_d = correction_mode(models, mode)?;
    let n = locations.len();
    let p = models.len();
    let mut f = DMatrix::zeros(n, p);
    let mut d = with_d.then(|| DMatrix::zeros(n, p));
    for (k, m) in models.iter().enumerate() {
        for (i, loc) in locations.iter().enumerate() {
            f[(i, k)] = m.prediction(loc).ok_or_else(|| Error::MissingPrediction {
                model: m.name.clone(),
                location: loc.clone(),
            })?;
            if let Some(d) = d.as_mut() {
                d[(i, k)] = m.correction(loc).ok_or_else(|| Error::MissingPrediction {
                    model: format!("{} (correction)", m.name),
                    location: loc.clone(),
                })?;
            }
        }
    }
    let coord_names = models[0].coord_names.clone();
    Ok(Domain {
        coord_names,
        locations: locations.to_vec(),
        f,
        d,
        model_names: models.iter().map(|m| m.name.clone()).collect(),
    })
}

pub fn align(obs: &ObservationSet, models: &[ModelTable], mode: Corrections) -> Result<AlignedDataset> {
    for m in models {
        if m.coord_names != obs.coord_names {
            return Err(Error::Validation(format!(
                "{}: coordinate columns {:?} do not match observations {:?}",
                m.name, m.coord_names, obs.coord_names
            )));
        }
    }
    let locations: Vec<Location> = obs.entries.iter().map(|e| e.location.clone()).collect();
    let domain = align_domain(&locations, models, mode)?;
    Ok(AlignedDataset {
        domain,
        y: obs.entries.iter().map(|e| e.value).collect(),
    })
}

/// Locations present in every model table, sorted.
pub fn common_locations(models: &[ModelTable]) -> Vec<Location> {
    let Some(first) = models.first() else {
        return Vec::new();
    };
    let mut out: Vec<Location> = first
        .locations()
        .iter()
        .filter(|l| models[1..].iter().all(|m| m.prediction(l).is_some()))
        .cloned()
        .collect();
    out.sort();
    out
}

/// How model predictions are combined before the positivity test.
#[derive(Debug, Clone, Copy)]
pub enum Combine<'a> {
    /// Arithmetic mean of the raw model predictions.
    Mean,
    /// Every model individually positive.
    PerModel,
    /// A supplied prediction map, typically the posterior-mean mixture.
    Mixture(&'a HashMap<Location, f64>),
}

/// Grid locations (common to all models) where the combined value is positive.
pub fn positive_domain(models: &[ModelTable], combine: Combine<'_>) -> Result<Vec<Location>> {
    let grid = common_locations(models);
    if grid.is_empty() {
        return Err(Error::Validation("empty prediction grid".into()));
    }
    let keep = |loc: &Location| -> bool {
        match combine {
            Combine::Mean => {
                let s: f64 = models.iter().map(|m| m.prediction(loc).unwrap_or(f64::NAN)).sum();
                s / models.len() as f64 > 0.0
            }
            Combine::PerModel => models.iter().all(|m| m.prediction(loc).is_some_and(|v| v > 0.0)),
            Combine::Mixture(map) => map.get(loc).is_some_and(|&v| v > 0.0),
        }
    };
    Ok(grid.into_iter().filter(|l| keep(l)).collect())
}

/// The eight evidence nuclei: three proton-rich (148Er, 188Po, 242Cf) and
/// five neutron-rich (64Cr, 116Ru, 160Nd, 168Hf, 232Ra), as `(Z, N)`.
pub fn nuclear_evidence_locations() -> Vec<Location> {
    [
        (68, 80),
        (84, 104),
        (98, 144),
        (24, 40),
        (44, 72),
        (60, 100),
        (72, 96),
        (88, 144),
    ]
    .iter()
    .map(|&(z, n)| Location::zn(z, n))
    .collect()
}

/// Index sets into an [`AlignedDataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    #[serde(default)]
    pub evidence: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
    /// Dropped from training whenever uncorrected models are mixed.
    #[serde(default)]
    pub exclusions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: AlignedDataset,
    pub evidence: AlignedDataset,
    pub test: AlignedDataset,
}

impl SplitSpec {
    /// Everything in `train`, nothing held out.
    pub fn all_train(n: usize) -> Self {
        Self {
            train: (0..n).collect(),
            ..Default::default()
        }
    }

    /// All rows not listed in `test` are training rows; evidence rows are
    /// looked up by location and must be training rows.
    pub fn with_evidence_locations(
        data: &AlignedDataset,
        evidence: &[Location],
        test: Vec<usize>,
    ) -> Result<Self> {
        let test_set: HashSet<usize> = test.iter().copied().collect();
        let train = (0..data.n()).filter(|i| !test_set.contains(i)).collect();
        let evidence = evidence
            .iter()
            .map(|loc| {
                data.index_of(loc)
                    .ok_or_else(|| Error::Validation(format!("evidence location {loc} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = Self {
            train,
            evidence,
            test,
            exclusions: Vec::new(),
        };
        spec.validate(data.n())?;
        Ok(spec)
    }

    /// Default nuclear split: the eight evidence nuclei inside the training set.
    /// The exclusion list ships empty; fill it from a split file when needed.
    pub fn nuclear_default(data: &AlignedDataset, test: Vec<usize>) -> Result<Self> {
        Self::with_evidence_locations(data, &nuclear_evidence_locations(), test)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, ids) in [
            ("train", &self.train),
            ("evidence", &self.evidence),
            ("test", &self.test),
            ("exclusions", &self.exclusions),
        ] {
            let mut seen = HashSet::new();
            for &i in ids {
                if i >= n {
                    return Err(Error::Validation(format!("{name} index {i} out of range (n = {n})")));
                }
                if !seen.insert(i) {
                    return Err(Error::Validation(format!("{name} index {i} repeated")));
                }
            }
        }
        let train: HashSet<usize> = self.train.iter().copied().collect();
        if let Some(i) = self.test.iter().find(|i| train.contains(i)) {
            return Err(Error::Validation(format!("test index {i} is also a training index")));
        }
        Ok(())
    }

    pub fn apply(&self, data: &AlignedDataset, uncorrected: bool) -> Result<Splits> {
        self.validate(data.n())?;
        let excluded: HashSet<usize> = if uncorrected {
            self.exclusions.iter().copied().collect()
        } else {
            HashSet::new()
        };
        let keep = |ids: &[usize]| -> Vec<usize> { ids.iter().copied().filter(|i| !excluded.contains(i)).collect() };
        Ok(Splits {
            train: data.subset(&keep(&self.train)),
            evidence: data.subset(&keep(&self.evidence)),
            test: data.subset(&self.test),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn table(name: &str, rows: &[((i64, i64), f64)]) -> ModelTable {
        ModelTable::new(
            name,
            vec!["Z".into(), "N".into()],
            rows.iter().map(|&((z, n), f)| (Location::zn(z, n), f, None)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn header_only_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "obs.csv", "Z,N,value\n");
        let obs = load_observations(&p).unwrap();
        assert_eq!(obs.len(), 0);
        assert_eq!(obs.coord_names, vec!["Z", "N"]);
    }

    #[test]
    fn duplicate_location_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "obs.csv", "Z,N,value\n40,60,10.5\n40,60,10.7\n");
        match load_observations(&p) {
            Err(Error::DuplicateLocation(l)) => assert_eq!(l, Location::zn(40, 60)),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "obs.csv", "Z,N,value\n40,60,10.5\n42,x,1\n");
        match load_observations(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn single_row_alignment_copies_values() {
        let obs = ObservationSet::new(
            vec!["Z".into(), "N".into()],
            vec![Observation {
                location: Location::zn(20, 20),
                value: 4.0,
                id: None,
            }],
        )
        .unwrap();
        let m = [table("a", &[((20, 20), 3.0)]), table("b", &[((20, 20), 5.0)])];
        let data = align(&obs, &m, Corrections::Auto).unwrap();
        assert_eq!(data.f().nrows(), 1);
        assert_eq!(data.f()[(0, 0)], 3.0);
        assert_eq!(data.f()[(0, 1)], 5.0);
        assert!(data.d().is_none());
    }

    #[test]
    fn missing_prediction_names_model_and_location() {
        let obs = ObservationSet::new(
            vec!["Z".into(), "N".into()],
            vec![Observation {
                location: Location::zn(50, 82),
                value: 1.0,
                id: None,
            }],
        )
        .unwrap();
        let m = [table("SkM*", &[((50, 82), 1.0)]), table("SkP", &[((50, 84), 1.0)])];
        let err = align(&obs, &m, Corrections::Auto).unwrap_err();
        assert_eq!(err.to_string(), "SkP missing (50,82)");
    }

    #[test]
    fn mixed_corrections_need_explicit_disable() {
        let obs = ObservationSet::new(
            vec!["Z".into(), "N".into()],
            vec![Observation {
                location: Location::zn(2, 2),
                value: 1.0,
                id: None,
            }],
        )
        .unwrap();
        let corrected = ModelTable::new(
            "c",
            vec!["Z".into(), "N".into()],
            vec![(Location::zn(2, 2), 1.0, Some(0.1))],
        )
        .unwrap();
        let m = [corrected, table("u", &[((2, 2), 2.0)])];
        assert!(align(&obs, &m, Corrections::Auto).is_err());
        let data = align(&obs, &m, Corrections::Disabled).unwrap();
        assert!(data.d().is_none());
    }

    #[test]
    fn corrections_load_from_delta_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "HFB.csv", "Z,N,f,delta\n8,8,12.5,0.25\n");
        let m = load_model_table(&p, None).unwrap();
        assert_eq!(m.name, "HFB");
        assert_eq!(m.correction(&Location::zn(8, 8)), Some(0.25));
    }

    #[test]
    fn positive_domain_cases() {
        let all_pos = [table("a", &[((2, 2), 1.0), ((2, 4), 2.0)])];
        assert_eq!(positive_domain(&all_pos, Combine::Mean).unwrap().len(), 2);

        let one_neg = [table("a", &[((2, 2), -1.0), ((2, 4), 2.0)])];
        assert_eq!(positive_domain(&one_neg, Combine::Mean).unwrap(), vec![Location::zn(2, 4)]);

        // mean of (+1, -3) is -1
        let two = [table("a", &[((2, 2), 1.0)]), table("b", &[((2, 2), -3.0)])];
        assert!(positive_domain(&two, Combine::Mean).unwrap().is_empty());

        let empty: [ModelTable; 0] = [];
        assert!(positive_domain(&empty, Combine::Mean).is_err());
    }

    #[test]
    fn nuclear_evidence_has_eight() {
        assert_eq!(nuclear_evidence_locations().len(), 8);
    }

    #[test]
    fn split_rejects_overlap() {
        let s = SplitSpec {
            train: vec![0, 1],
            test: vec![1],
            ..Default::default()
        };
        assert!(s.validate(3).is_err());
    }

    proptest! {
        #[test]
        fn split_roundtrip_is_stable(n in 1usize..40, mask in proptest::collection::vec(0u8..3, 40)) {
            let train: Vec<usize> = (0..n).filter(|&i| mask[i] != 2).collect();
            let test: Vec<usize> = (0..n).filter(|&i| mask[i] == 2).collect();
            let evidence: Vec<usize> = (0..n).filter(|&i| mask[i] == 1).collect();
            let s = SplitSpec { train, evidence, test, exclusions: vec![] };
            let back = SplitSpec::from_json(&s.to_json().unwrap()).unwrap();
            prop_assert_eq!(&s, &back);
            let obs = ObservationSet::new(
                vec!["x".into()],
                (0..n).map(|i| Observation { location: Location::new(vec![i as f64]).unwrap(), value: i as f64, id: None }).collect(),
            ).unwrap();
            let m = ModelTable::new("m", vec!["x".into()], (0..n).map(|i| (Location::new(vec![i as f64]).unwrap(), 2.0 * i as f64, None)).collect()).unwrap();
            let data = align(&obs, &[m], Corrections::Auto).unwrap();
            let a = s.apply(&data, true).unwrap();
            let b = back.apply(&data, true).unwrap();
            prop_assert_eq!(a.train.y, b.train.y);
            prop_assert_eq!(a.test.y, b.test.y);
            // values copied bit-exactly
            for i in 0..data.n() {
                prop_assert_eq!(data.f()[(i, 0)].to_bits(), (2.0 * i as f64).to_bits());
            }
        }
    }
}
