//! Concrete mixture records: CSV ingest, summary statistics and stratified
//! train/test assignment.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::{FeatureKind, Samples};

const SAMPLE_MIXES_CSV: &str = include_str!("../data/sample_mixes.csv");

/// Exact CSV header; the trailing `training` column is optional on input.
pub const CSV_HEADER: [&str; 11] = [
    "mix_id",
    "w_b",
    "binder",
    "fly_ash",
    "ggbs",
    "sp",
    "ca_fa",
    "curing_condition",
    "curing_days",
    "porosity",
    "training",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CuringCondition {
    Air,
    Water,
}

impl CuringCondition {
    pub fn code(self) -> f64 {
        match self {
            CuringCondition::Air => 0.0,
            CuringCondition::Water => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CuringCondition::Air => "air",
            CuringCondition::Water => "water",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "air" => Some(CuringCondition::Air),
            "water" => Some(CuringCondition::Water),
            _ => None,
        }
    }
}

/// The eight predictors, in design-matrix column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    WaterBinder,
    Binder,
    FlyAsh,
    Ggbs,
    Superplasticizer,
    AggregateRatio,
    CuringCondition,
    CuringDays,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::WaterBinder,
        Feature::Binder,
        Feature::FlyAsh,
        Feature::Ggbs,
        Feature::Superplasticizer,
        Feature::AggregateRatio,
        Feature::CuringCondition,
        Feature::CuringDays,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::WaterBinder => "w_b",
            Feature::Binder => "binder",
            Feature::FlyAsh => "fly_ash",
            Feature::Ggbs => "ggbs",
            Feature::Superplasticizer => "sp",
            Feature::AggregateRatio => "ca_fa",
            Feature::CuringCondition => "curing_condition",
            Feature::CuringDays => "curing_days",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::WaterBinder | Feature::AggregateRatio => "ratio",
            Feature::Binder => "kg/m3",
            Feature::FlyAsh | Feature::Ggbs | Feature::Superplasticizer => "% of binder",
            Feature::CuringCondition => "category",
            Feature::CuringDays => "days",
        }
    }

    pub fn kind(self) -> FeatureKind {
        match self {
            Feature::CuringCondition => FeatureKind::Categorical { levels: 2 },
            _ => FeatureKind::Numeric,
        }
    }

    pub fn from_name(name: &str) -> Result<Feature> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureDescriptor {
    pub name: &'static str,
    pub kind: FeatureKind,
    pub unit: &'static str,
}

pub fn schema() -> Vec<FeatureDescriptor> {
    Feature::ALL
        .iter()
        .map(|f| FeatureDescriptor {
            name: f.name(),
            kind: f.kind(),
            unit: f.unit(),
        })
        .collect()
}

/// One concrete specimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub mix_id: String,
    pub w_b: f64,
    pub binder: f64,
    pub fly_ash: f64,
    pub ggbs: f64,
    pub sp: f64,
    pub ca_fa: f64,
    pub curing_condition: CuringCondition,
    pub curing_days: u32,
    pub porosity: f64,
    pub training: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConcreteType {
    Opc,
    FlyAsh,
    Ggbs,
}

impl MixRecord {
    pub fn features(&self) -> [f64; 8] {
        [
            self.w_b,
            self.binder,
            self.fly_ash,
            self.ggbs,
            self.sp,
            self.ca_fa,
            self.curing_condition.code(),
            f64::from(self.curing_days),
        ]
    }

    pub fn concrete_type(&self) -> ConcreteType {
        if self.fly_ash > 0.0 {
            ConcreteType::FlyAsh
        } else if self.ggbs > 0.0 {
            ConcreteType::Ggbs
        } else {
            ConcreteType::Opc
        }
    }

    /// Returns the offending column and reason on failure.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [
            ("w_b", self.w_b),
            ("binder", self.binder),
            ("ca_fa", self.ca_fa),
            ("porosity", self.porosity),
        ];
        for (col, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err((col, format!("{v} must be > 0")));
            }
        }
        for (col, v) in [("fly_ash", self.fly_ash), ("ggbs", self.ggbs)] {
            if !(0.0..=100.0).contains(&v) {
                return Err((col, format!("{v} must lie in [0, 100]")));
            }
        }
        if self.fly_ash + self.ggbs >= 100.0 {
            return Err(("ggbs", "fly_ash + ggbs must be < 100".into()));
        }
        if !(self.sp.is_finite() && self.sp >= 0.0) {
            return Err(("sp", format!("{} must be >= 0", self.sp)));
        }
        if self.curing_days < 1 {
            return Err(("curing_days", "must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered collection of validated records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<MixRecord>,
}

impl Dataset {
    pub fn new(records: Vec<MixRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.check().map_err(|(column, reason)| Error::Value {
                line: i as u64 + 2,
                column: column.into(),
                reason,
            })?;
        }
        Ok(Self { records })
    }

    /// The 34 sample rows published with the porosity database.
    pub fn embedded() -> Dataset {
        read_csv(SAMPLE_MIXES_CSV.as_bytes()).expect("embedded corpus is valid")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_samples(&self) -> Samples {
        let rows = self.records.iter().map(|r| r.features().to_vec()).collect();
        let targets = self.records.iter().map(|r| r.porosity).collect();
        let kinds = Feature::ALL.iter().map(|f| f.kind()).collect();
        let names = Feature::ALL.iter().map(|f| f.name().to_string()).collect();
        Samples::new(rows, targets, kinds, names).expect("validated records form valid samples")
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Records flagged `training = true`; all records when no flags are present.
    pub fn training_part(&self) -> Dataset {
        if self.records.iter().all(|r| r.training.is_none()) {
            return self.clone();
        }
        self.filtered(|r| r.training == Some(true))
    }

    /// Records flagged `training = false`.
    pub fn testing_part(&self) -> Dataset {
        self.filtered(|r| r.training == Some(false))
    }

    fn filtered(&self, keep: impl Fn(&MixRecord) -> bool) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Writes the assignment into the `training` flags.
    pub fn apply_split(&mut self, split: &SplitAssignment) {
        for &i in &split.train_indices {
            self.records[i].training = Some(true);
        }
        for &i in &split.test_indices {
            self.records[i].training = Some(false);
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut columns = [0usize; 10];
    for (slot, name) in columns.iter_mut().zip(&CSV_HEADER[..10]) {
        *slot = position(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let training_col = position("training");

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |c: usize| row.get(columns[c]).unwrap_or("");
        let number = |c: usize| -> Result<f64> {
            let raw = field(c);
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: CSV_HEADER[c].into(),
                value: raw.into(),
            })
        };
        let curing_condition = CuringCondition::parse(field(7)).ok_or_else(|| Error::Value {
            line,
            column: "curing_condition".into(),
            reason: format!("`{}` is not one of air, water", field(7)),
        })?;
        let curing_days = field(8).parse::<u32>().map_err(|_| Error::Parse {
            line,
            column: "curing_days".into(),
            value: field(8).into(),
        })?;
        let training = match training_col.and_then(|c| row.get(c)) {
            None | Some("") => None,
            Some(v) => Some(match v.to_ascii_lowercase().as_str() {
                "true" => true,
                "false" => false,
                _ => {
                    return Err(Error::Value {
                        line,
                        column: "training".into(),
                        reason: format!("`{v}` is not True or False"),
                    })
                }
            }),
        };
        let record = MixRecord {
            mix_id: field(0).to_string(),
            w_b: number(1)?,
            binder: number(2)?,
            fly_ash: number(3)?,
            ggbs: number(4)?,
            sp: number(5)?,
            ca_fa: number(6)?,
            curing_condition,
            curing_days,
            porosity: number(9)?,
            training,
        };
        record.check().map_err(|(column, reason)| Error::Value {
            line,
            column: column.into(),
            reason,
        })?;
        records.push(record);
    }
    Ok(Dataset { records })
}

pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in &dataset.records {
        let training = match r.training {
            Some(true) => "True",
            Some(false) => "False",
            None => "",
        };
        w.write_record([
            r.mix_id.clone(),
            r.w_b.to_string(),
            r.binder.to_string(),
            r.fly_ash.to_string(),
            r.ggbs.to_string(),
            r.sp.to_string(),
            r.ca_fa.to_string(),
            r.curing_condition.as_str().to_string(),
            r.curing_days.to_string(),
            r.porosity.to_string(),
            training.to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(dataset, file)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single record.
    pub std: f64,
}

/// Summary of every continuous predictor plus porosity.
pub fn summarize(dataset: &Dataset) -> Result<Vec<ColumnStats>> {
    if dataset.is_empty() {
        return Err(Error::Empty("cannot summarize an empty dataset".into()));
    }
    let columns: [(&'static str, fn(&MixRecord) -> f64); 8] = [
        ("w_b", |r| r.w_b),
        ("binder", |r| r.binder),
        ("fly_ash", |r| r.fly_ash),
        ("ggbs", |r| r.ggbs),
        ("sp", |r| r.sp),
        ("ca_fa", |r| r.ca_fa),
        ("curing_days", |r| f64::from(r.curing_days)),
        ("porosity", |r| r.porosity),
    ];
    Ok(columns
        .iter()
        .map(|(name, get)| {
            // Sorting first makes the sums independent of record order.
            let mut values: Vec<f64> = dataset.records.iter().map(get).collect();
            values.sort_by(f64::total_cmp);
            let n = values.len() as f64;
            let mean = (values.iter().sum::<f64>() / n).clamp(values[0], values[values.len() - 1]);
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            ColumnStats {
                name,
                min: values[0],
                max: values[values.len() - 1],
                mean,
                std,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Strata keyed by (concrete type, curing-day quartile bin).
fn strata(dataset: &Dataset) -> BTreeMap<(ConcreteType, usize), Vec<usize>> {
    let mut by_type: BTreeMap<ConcreteType, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        by_type.entry(r.concrete_type()).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (ty, idx) in by_type {
        let mut days: Vec<f64> = idx
            .iter()
            .map(|&i| f64::from(dataset.records[i].curing_days))
            .collect();
        days.sort_by(f64::total_cmp);
        let cuts = [0.25, 0.5, 0.75].map(|q| quantile(&days, q));
        for i in idx {
            let d = f64::from(dataset.records[i].curing_days);
            // Boundary values fall into the lower bin.
            let bin = cuts.iter().filter(|&&c| d > c).count();
            out.entry((ty, bin)).or_insert_with(Vec::new).push(i);
        }
    }
    out
}

const ROUNDING_EPS: f64 = 1e-9;

/// Stratified train/test assignment.
///
/// Train quotas are apportioned so that the overall count is
/// `round(fraction * n)`, every concrete type stays within one record of its
/// proportional share and every stratum starts out that way. The global
/// extremes of `w_b` and `binder` are then swapped into the training part
/// where a training record of the same concrete type can make room.
pub fn stratified_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<SplitAssignment> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("fraction {fraction} outside (0, 1)")));
    }
    let n = dataset.len();
    let target = (fraction * n as f64).round() as usize;
    if target == 0 || target == n {
        return Err(Error::param(format!(
            "fraction {fraction} of {n} records leaves an empty train or test part"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<((ConcreteType, usize), Vec<usize>)> = strata(dataset).into_iter().collect();

    let floors: Vec<usize> = strata
        .iter()
        .map(|(_, idx)| (fraction * idx.len() as f64 + ROUNDING_EPS).floor() as usize)
        .collect();
    let remainders: Vec<f64> = strata
        .iter()
        .zip(&floors)
        .map(|((_, idx), &fl)| {
            let r = fraction * idx.len() as f64 - fl as f64;
            if r < ROUNDING_EPS {
                0.0
            } else {
                r
            }
        })
        .collect();
    let mut extra_total = target - floors.iter().sum::<usize>();

    // Distribute round-ups across types first, then across strata inside a type.
    let mut types: Vec<ConcreteType> = strata.iter().map(|((t, _), _)| *t).collect();
    types.dedup();
    let type_remainder = |t: ConcreteType| -> f64 {
        strata
            .iter()
            .zip(&remainders)
            .filter(|(((ty, _), _), _)| *ty == t)
            .map(|(_, r)| r)
            .sum()
    };
    let mut type_extra: BTreeMap<ConcreteType, usize> = BTreeMap::new();
    let mut type_frac = Vec::new();
    for &t in &types {
        let r = type_remainder(t);
        let fl = (r + ROUNDING_EPS).floor() as usize;
        type_extra.insert(t, fl);
        extra_total -= fl;
        type_frac.push((t, r - fl as f64, rng.random::<u64>()));
    }
    type_frac.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
    for (t, _, _) in type_frac.into_iter().take(extra_total) {
        *type_extra.get_mut(&t).expect("type present") += 1;
    }

    let mut quotas = floors.clone();
    for &t in &types {
        let mut members: Vec<(usize, f64, u64)> = strata
            .iter()
            .enumerate()
            .filter(|(s, ((ty, _), _))| *ty == t && remainders[*s] > 0.0)
            .map(|(s, _)| (s, remainders[s], rng.random::<u64>()))
            .collect();
        members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        for (s, _, _) in members.into_iter().take(type_extra[&t]) {
            quotas[s] += 1;
        }
    }

    let mut in_train = vec![false; n];
    let mut stratum_of = vec![0usize; n];
    for (s, (_, idx)) in strata.iter().enumerate() {
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        for (k, &i) in shuffled.iter().enumerate() {
            stratum_of[i] = s;
            in_train[i] = k < quotas[s];
        }
    }

    ensure_extremes_in_train(dataset, &strata, &stratum_of, &mut in_train);

    let (train_indices, test_indices): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train[i]);
    Ok(SplitAssignment {
        train_indices,
        test_indices,
        seed,
    })
}

fn ensure_extremes_in_train(
    dataset: &Dataset,
    strata: &[((ConcreteType, usize), Vec<usize>)],
    stratum_of: &[usize],
    in_train: &mut [bool],
) {
    let getters: [fn(&MixRecord) -> f64; 2] = [|r| r.w_b, |r| r.binder];
    let mut extremes = Vec::new();
    for get in getters {
        let values = dataset.records.iter().map(get);
        let lo = values.clone().fold(f64::INFINITY, f64::min);
        let hi = values.fold(f64::NEG_INFINITY, f64::max);
        extremes.push((get, lo));
        extremes.push((get, hi));
    }
    // A record is pinned while it is the only training holder of an extreme.
    let pinned = |i: usize, in_train: &[bool]| {
        extremes.iter().any(|(get, v)| {
            get(&dataset.records[i]) == *v
                && (0..dataset.len())
                    .filter(|&j| in_train[j] && get(&dataset.records[j]) == *v)
                    .count()
                    == 1
        })
    };

    for &(get, v) in &extremes {
        let holders: Vec<usize> = (0..dataset.len())
            .filter(|&i| get(&dataset.records[i]) == v)
            .collect();
        if holders.iter().any(|&i| in_train[i]) {
            continue;
        }
        for incoming in holders {
            let s = stratum_of[incoming];
            let ty = strata[s].0 .0;
            // Only same-type swaps, so the per-type shares are kept.
            let partner = (0..dataset.len())
                .filter(|&i| in_train[i] && strata[stratum_of[i]].0 .0 == ty && !pinned(i, in_train))
                .min_by_key(|&i| (stratum_of[i] != s, i));
            if let Some(out) = partner {
                in_train[out] = false;
                in_train[incoming] = true;
                break;
            }
        }
    }
}
