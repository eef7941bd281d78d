//! Report records and their JSON and CSV forms.
//!
//! Numbers are written with 17 significant digits in exponent form, and
//! non-finite values as the strings `"inf"`, `"-inf"` and `"nan"`, so a
//! report read back and written again is byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Num(pub f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        if v.is_nan() {
            f.write_str("nan")
        } else if v == f64::INFINITY {
            f.write_str("inf")
        } else if v == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{v:.16e}")
        }
    }
}

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        Num(v)
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let raw = RawValue::from_string(self.to_string()).map_err(serde::ser::Error::custom)?;
            raw.serialize(s)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

struct NumVisitor;

impl Visitor<'_> for NumVisitor {
    type Value = Num;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Num, E> {
        Ok(Num(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Num, E> {
        Ok(Num(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Num, E> {
        Ok(Num(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Num, E> {
        match v {
            "inf" => Ok(Num(f64::INFINITY)),
            "-inf" => Ok(Num(f64::NEG_INFINITY)),
            "nan" => Ok(Num(f64::NAN)),
            _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        d.deserialize_any(NumVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    pub value: Num,
}

impl Quantity {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value: Num(value),
        }
    }
}

/// One measured value against its band, with the instance it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub seed: Option<u64>,
    pub instance: BTreeMap<String, String>,
    pub value: Num,
    pub lower_band: Num,
    pub upper_band: Num,
    pub pass: bool,
    pub quantities: Vec<Quantity>,
    pub note: Option<String>,
}

impl CheckReport {
    /// Passes iff `lower <= value <= upper`.
    pub fn banded(check: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            check: check.into(),
            seed: None,
            instance: BTreeMap::new(),
            value: Num(value),
            lower_band: Num(lower),
            upper_band: Num(upper),
            pass: lower <= value && value <= upper,
            quantities: Vec::new(),
            note: None,
        }
    }

    /// A violation count that must be zero.
    pub fn count(check: impl Into<String>, violations: usize) -> Self {
        Self::banded(check, violations as f64, 0.0, 0.0)
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn quantity(mut self, name: impl Into<String>, value: f64) -> Self {
        self.quantities.push(Quantity::new(name, value));
        self
    }

    pub fn instance(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.instance.insert(key.into(), value.to_string());
        self
    }

    pub fn instances(mut self, map: BTreeMap<String, String>) -> Self {
        self.instance.extend(map);
        self
    }

    pub fn require(mut self, cond: bool) -> Self {
        self.pass &= cond;
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Values at one query point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: Vec<Num>,
    pub values: Vec<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub scenario: String,
    pub seed: Option<u64>,
    pub settings: BTreeMap<String, String>,
    pub results: Vec<Quantity>,
    pub points: Vec<PointRecord>,
    pub checks: Vec<CheckReport>,
    pub pass: bool,
}

impl Report {
    pub fn new(command: impl Into<String>, scenario: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.into(),
            seed,
            settings: BTreeMap::new(),
            results: Vec::new(),
            points: Vec::new(),
            checks: Vec::new(),
            pass: true,
        }
    }

    pub fn push_check(&mut self, c: CheckReport) {
        self.pass &= c.pass;
        self.checks.push(c);
    }

    pub fn extend_checks(&mut self, cs: impl IntoIterator<Item = CheckReport>) {
        cs.into_iter().for_each(|c| self.push_check(c));
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("report serialization: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))
    }

    /// Columns `check, seed, value, lower_band, upper_band, pass`.
    pub fn ratio_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["check", "seed", "value", "lower_band", "upper_band", "pass"])
            .map_err(csv_err)?;
        for c in &self.checks {
            w.write_record([
                c.check.clone(),
                c.seed.map_or(String::new(), |s| s.to_string()),
                c.value.to_string(),
                c.lower_band.to_string(),
                c.upper_band.to_string(),
                c.pass.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// One row per query point: coordinates `x0, x1, ...` then each value.
    pub fn points_csv(&self) -> Result<Option<String>> {
        let Some(first) = self.points.first() else {
            return Ok(None);
        };
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (0..first.x.len())
            .map(|i| format!("x{i}"))
            .chain(first.values.iter().map(|q| q.name.clone()))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for p in &self.points {
            let row: Vec<String> = p
                .x
                .iter()
                .map(Num::to_string)
                .chain(p.values.iter().map(|q| q.value.to_string()))
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        finish_csv(w).map(Some)
    }

    /// Writes `<command>.json`, `<command>.csv` and, when there are query
    /// points, `<command>_points.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_file(&dir.join(format!("{}.json", self.command)), &self.to_json()?)?;
        write_file(&dir.join(format!("{}.csv", self.command)), &self.ratio_csv()?)?;
        if let Some(p) = self.points_csv()? {
            write_file(&dir.join(format!("{}_points.csv", self.command)), &p)?;
        }
        Ok(())
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("verify", "sample", Some(7));
        r.settings.insert("mode".into(), "dyadic".into());
        r.results.push(Quantity::new("energy", 0.49));
        r.results.push(Quantity::new("third", 1.0 / 3.0));
        r.points.push(PointRecord {
            x: vec![Num(0.25)],
            values: vec![Quantity::new("wolff", f64::INFINITY)],
        });
        r.push_check(
            CheckReport::banded("ratio", 2.0f64.sqrt(), 1e-3, 1e3)
                .seed(7)
                .instance("index", 3)
                .quantity("min", 1e-300)
                .quantity("gap", f64::NAN),
        );
        r.push_check(CheckReport::count("violations", 1));
        r
    }

    #[test]
    fn numbers_use_seventeen_digits() {
        assert_eq!(Num(0.1).to_string(), "1.0000000000000001e-1");
        assert_eq!(Num(f64::INFINITY).to_string(), "inf");
        let s = serde_json::to_string(&Num(1.0 / 3.0)).unwrap();
        assert_eq!(s, "3.3333333333333331e-1");
        assert_eq!(serde_json::to_string(&Num(f64::NEG_INFINITY)).unwrap(), "\"-inf\"");
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let r = sample();
        assert!(!r.pass);
        let a = r.to_json().unwrap();
        let back = Report::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
        assert_eq!(back.checks[0].value, Num(2.0f64.sqrt()));
        assert_eq!(back.points[0].values[0].value, Num(f64::INFINITY));
        assert!(back.checks[0].quantities[1].value.0.is_nan());
    }

    #[test]
    fn plain_numbers_parse() {
        let n: Num = serde_json::from_str("2").unwrap();
        assert_eq!(n, Num(2.0));
        assert!(serde_json::from_str::<Num>("\"big\"").is_err());
    }

    #[test]
    fn csv_tables() {
        let r = sample();
        let t = r.ratio_csv().unwrap();
        let mut lines = t.lines();
        assert_eq!(lines.next(), Some("check,seed,value,lower_band,upper_band,pass"));
        assert_eq!(
            lines.next(),
            Some("ratio,7,1.4142135623730951e0,1.0000000000000000e-3,1.0000000000000000e3,true")
        );
        assert_eq!(
            lines.next(),
            Some("violations,,1.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,false")
        );
        let p = r.points_csv().unwrap().unwrap();
        assert_eq!(p, "x0,wolff\n2.5000000000000000e-1,inf\n");
    }
}
