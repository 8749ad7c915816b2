//! Unit-suffixed config keys: `chain.loop_inductance_nH = 5.7` is stored as
//! 5.7e-9 H under the base key `chain.loop_inductance`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Frequency,
    MagneticField,
    Length,
    Inductance,
    Capacitance,
    Power,
    Angle,
    Time,
    Current,
    Resistance,
    Decibel,
    PartsPerMillion,
}

impl Dimension {
    fn name(self) -> &'static str {
        match self {
            Dimension::Frequency => "frequency",
            Dimension::MagneticField => "magnetic field",
            Dimension::Length => "length",
            Dimension::Inductance => "inductance",
            Dimension::Capacitance => "capacitance",
            Dimension::Power => "power",
            Dimension::Angle => "angle",
            Dimension::Time => "time",
            Dimension::Current => "current",
            Dimension::Resistance => "resistance",
            Dimension::Decibel => "attenuation",
            Dimension::PartsPerMillion => "fractional offset",
        }
    }
}

/// Recognized suffixes; the internal value is `value * num / den`.
const UNITS: &[(&str, Dimension, f64, f64)] = &[
    ("Hz", Dimension::Frequency, 1.0, 1.0),
    ("kHz", Dimension::Frequency, 1e3, 1.0),
    ("MHz", Dimension::Frequency, 1e6, 1.0),
    ("GHz", Dimension::Frequency, 1e9, 1.0),
    ("T", Dimension::MagneticField, 1.0, 1.0),
    ("mT", Dimension::MagneticField, 1.0, 1e3),
    ("uT", Dimension::MagneticField, 1.0, 1e6),
    ("nT", Dimension::MagneticField, 1.0, 1e9),
    ("G", Dimension::MagneticField, 1.0, 1e4),
    ("m", Dimension::Length, 1.0, 1.0),
    ("mm", Dimension::Length, 1.0, 1e3),
    ("um", Dimension::Length, 1.0, 1e6),
    ("nm", Dimension::Length, 1.0, 1e9),
    ("H", Dimension::Inductance, 1.0, 1.0),
    ("nH", Dimension::Inductance, 1.0, 1e9),
    ("F", Dimension::Capacitance, 1.0, 1.0),
    ("pF", Dimension::Capacitance, 1.0, 1e12),
    ("fF", Dimension::Capacitance, 1.0, 1e15),
    ("W", Dimension::Power, 1.0, 1.0),
    ("mW", Dimension::Power, 1.0, 1e3),
    ("rad", Dimension::Angle, 1.0, 1.0),
    ("deg", Dimension::Angle, PI, 180.0),
    ("s", Dimension::Time, 1.0, 1.0),
    ("ms", Dimension::Time, 1.0, 1e3),
    ("us", Dimension::Time, 1.0, 1e6),
    ("ns", Dimension::Time, 1.0, 1e9),
    ("A", Dimension::Current, 1.0, 1.0),
    ("mA", Dimension::Current, 1.0, 1e3),
    ("ohm", Dimension::Resistance, 1.0, 1.0),
    ("dB", Dimension::Decibel, 1.0, 1.0),
    ("ppm", Dimension::PartsPerMillion, 1.0, 1.0),
];

#[derive(Debug, Clone, Copy)]
struct Scale {
    num: f64,
    den: f64,
}

impl Scale {
    fn to_internal(self, v: f64) -> f64 {
        v * self.num / self.den
    }

    fn to_unit(self, v: f64) -> f64 {
        v * self.den / self.num
    }
}

fn lookup_unit(suffix: &str) -> Option<(Dimension, Scale)> {
    UNITS
        .iter()
        .find(|u| u.0 == suffix)
        .map(|&(_, d, num, den)| (d, Scale { num, den }))
}

/// Splits `section.name_unit` into (`section.name`, unit) when the trailing
/// `_unit` is a recognized suffix.
fn split_unit(key: &str) -> (&str, Option<&'static str>) {
    if let Some(pos) = key.rfind('_') {
        let suffix = &key[pos + 1..];
        if let Some(u) = UNITS.iter().find(|u| u.0 == suffix) {
            return (&key[..pos], Some(u.0));
        }
    }
    (key, None)
}

#[derive(Debug, Clone)]
struct Entry {
    full_key: String,
    unit: Option<&'static str>,
    value: toml::Value,
    used: bool,
}

/// Parsed config document indexed by base key. Every accessor marks its key
/// as used so leftovers can be reported as unknown.
#[derive(Debug, Clone, Default)]
pub struct ConfigDoc {
    entries: BTreeMap<String, Entry>,
    echo: Vec<(String, String)>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn as_number(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be a number"))),
    }
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        let mut entries = BTreeMap::new();
        for (full_key, value) in flat {
            let (base, unit) = split_unit(&full_key);
            let entry = Entry {
                full_key: full_key.clone(),
                unit,
                value,
                used: false,
            };
            if let Some(prev) = entries.insert(base.to_string(), entry) {
                return Err(Error::Config(format!(
                    "`{}` and `{full_key}` set the same parameter",
                    prev.full_key
                )));
            }
        }
        Ok(Self {
            entries,
            echo: Vec::new(),
        })
    }

    fn take(&mut self, base: &str) -> Option<Entry> {
        let e = self.entries.get_mut(base)?;
        e.used = true;
        Some(e.clone())
    }

    fn factor(entry: &Entry, dim: Dimension) -> Result<Scale> {
        let unit = entry.unit.ok_or_else(|| {
            Error::Config(format!(
                "`{}` needs a unit suffix for a {} (e.g. `{}_{}`)",
                entry.full_key,
                dim.name(),
                entry.full_key,
                UNITS.iter().find(|u| u.1 == dim).map_or("", |u| u.0)
            ))
        })?;
        let (d, f) = lookup_unit(unit).expect("suffix came from the unit table");
        if d != dim {
            return Err(Error::Config(format!(
                "`{}` is a {}, but `_{unit}` is a {} unit",
                entry.full_key,
                dim.name(),
                d.name()
            )));
        }
        Ok(f)
    }

    fn record(&mut self, key: &str, text: String) {
        self.echo.push((key.to_string(), text));
    }

    /// Physical quantity in internal units.
    pub fn quantity(&mut self, base: &str, dim: Dimension, default: f64) -> Result<f64> {
        Ok(self.quantity_opt(base, dim)?.unwrap_or(default))
    }

    pub fn quantity_opt(&mut self, base: &str, dim: Dimension) -> Result<Option<f64>> {
        let Some(entry) = self.take(base) else {
            return Ok(None);
        };
        let f = Self::factor(&entry, dim)?;
        let v = as_number(&entry.full_key, &entry.value)?;
        let si = f.to_internal(v);
        // Echo goes back through the internal unit so the report shows what was used.
        self.record(&entry.full_key, format!("{:e}", f.to_unit(si)));
        Ok(Some(si))
    }

    /// Scalar or array of quantities.
    pub fn quantities(&mut self, base: &str, dim: Dimension, default: &[f64]) -> Result<Vec<f64>> {
        let Some(entry) = self.take(base) else {
            return Ok(default.to_vec());
        };
        let f = Self::factor(&entry, dim)?;
        let raw = match &entry.value {
            toml::Value::Array(items) => items
                .iter()
                .map(|v| as_number(&entry.full_key, v))
                .collect::<Result<Vec<_>>>()?,
            v => vec![as_number(&entry.full_key, v)?],
        };
        let si: Vec<f64> = raw.iter().map(|&v| f.to_internal(v)).collect();
        let echoed: Vec<String> = si.iter().map(|&v| format!("{:e}", f.to_unit(v))).collect();
        self.record(&entry.full_key, format!("[{}]", echoed.join(", ")));
        Ok(si)
    }

    /// Dimensionless number.
    pub fn number(&mut self, key: &str, default: f64) -> Result<f64> {
        let Some(entry) = self.unitless(key)? else {
            return Ok(default);
        };
        let v = as_number(&entry.full_key, &entry.value)?;
        self.record(&entry.full_key, format!("{v:e}"));
        Ok(v)
    }

    fn unitless(&mut self, key: &str) -> Result<Option<Entry>> {
        match self.take(key) {
            Some(e) if e.unit.is_some() => Err(Error::Config(format!(
                "`{}` is dimensionless; drop the unit suffix",
                e.full_key
            ))),
            other => Ok(other),
        }
    }

    pub fn integer(&mut self, key: &str, default: u64) -> Result<u64> {
        let Some(entry) = self.unitless(key)? else {
            return Ok(default);
        };
        match entry.value {
            toml::Value::Integer(i) if i >= 0 => {
                self.record(&entry.full_key, i.to_string());
                Ok(i as u64)
            }
            _ => Err(Error::Config(format!("`{}` must be a non-negative integer", entry.full_key))),
        }
    }

    pub fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        let Some(entry) = self.unitless(key)? else {
            return Ok(default);
        };
        match entry.value {
            toml::Value::Boolean(b) => {
                self.record(&entry.full_key, b.to_string());
                Ok(b)
            }
            _ => Err(Error::Config(format!("`{}` must be true or false", entry.full_key))),
        }
    }

    pub fn text(&mut self, key: &str) -> Result<Option<String>> {
        let Some(entry) = self.unitless(key)? else {
            return Ok(None);
        };
        match entry.value {
            toml::Value::String(s) => {
                self.record(&entry.full_key, format!("{s:?}"));
                Ok(Some(s))
            }
            _ => Err(Error::Config(format!("`{}` must be a string", entry.full_key))),
        }
    }

    /// String restricted to `allowed`; returns the index of the match.
    pub fn choice(&mut self, key: &str, allowed: &[&str], default: usize) -> Result<usize> {
        match self.text(key)? {
            None => Ok(default),
            Some(s) => allowed.iter().position(|a| *a == s).ok_or_else(|| {
                Error::Config(format!("`{key}` must be one of {allowed:?}, got {s:?}"))
            }),
        }
    }

    /// Fails on any key no accessor asked for.
    pub fn finish(self) -> Result<Vec<(String, String)>> {
        let unknown: Vec<&str> = self
            .entries
            .values()
            .filter(|e| !e.used)
            .map(|e| e.full_key.as_str())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown key(s): {}", unknown.join(", "))));
        }
        let mut echo = self.echo;
        echo.sort();
        Ok(echo)
    }
}
