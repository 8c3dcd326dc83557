use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sub-factor groups of the external vector, in order, with their widths.
pub const SUB_FACTORS: [(&str, usize); 6] = [
    ("day_of_week", 7),
    ("weekend", 1),
    ("holiday", 1),
    ("temperature", 1),
    ("wind_speed", 1),
    ("condition", 3),
];

pub const EXTERNAL_WIDTH: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Sun,
    Rain,
    Snow,
}

impl Condition {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sun" => Ok(Condition::Sun),
            "rain" => Ok(Condition::Rain),
            "snow" => Ok(Condition::Snow),
            other => Err(Error::Data(format!(
                "unknown weather condition {:?} (expected sun, rain or snow)",
                other
            ))),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Sun => "sun",
            Condition::Rain => "rain",
            Condition::Snow => "snow",
        })
    }
}

/// One row of `external.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRow {
    pub timestamp: NaiveDateTime,
    pub temperature: f64,
    pub wind_speed: f64,
    pub condition: Condition,
    pub holiday: bool,
}

/// Min-max scaling of temperature and wind speed to [0, 1], fitted on
/// training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherScaler {
    pub temperature: (f64, f64),
    pub wind_speed: (f64, f64),
}

impl WeatherScaler {
    pub fn fit(rows: &[WeatherRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("no weather rows to fit".into()));
        }
        let range = |f: fn(&WeatherRow) -> f64| {
            rows.iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        Ok(WeatherScaler {
            temperature: range(|r| r.temperature),
            wind_speed: range(|r| r.wind_speed),
        })
    }

    fn scale((lo, hi): (f64, f64), v: f64) -> f64 {
        // A constant training column carries no information.
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }
}

/// Encodes the calendar and weather at `t` (Monday = 0, weekend = Sat/Sun).
pub fn external_vector(t: NaiveDateTime, row: &WeatherRow, scaler: &WeatherScaler) -> Result<[f32; EXTERNAL_WIDTH]> {
    if row.timestamp != t {
        return Err(Error::Data(format!(
            "no weather row for {} (got {})",
            t, row.timestamp
        )));
    }
    let mut v = [0f32; EXTERNAL_WIDTH];
    let dow = t.weekday().num_days_from_monday() as usize;
    v[dow] = 1.0;
    v[7] = matches!(t.weekday(), Weekday::Sat | Weekday::Sun) as u8 as f32;
    v[8] = row.holiday as u8 as f32;
    v[9] = WeatherScaler::scale(scaler.temperature, row.temperature) as f32;
    v[10] = WeatherScaler::scale(scaler.wind_speed, row.wind_speed) as f32;
    v[11 + row.condition.index()] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ts: &str, temp: f64, holiday: bool) -> WeatherRow {
        WeatherRow {
            timestamp: NaiveDateTime::parse_from_str(ts, "%Y-%m-%dT%H:%M:%S").unwrap(),
            temperature: temp,
            wind_speed: 3.0,
            condition: Condition::Rain,
            holiday,
        }
    }

    #[test]
    fn widths_add_up() {
        assert_eq!(SUB_FACTORS.iter().map(|f| f.1).sum::<usize>(), EXTERNAL_WIDTH);
    }

    #[test]
    fn saturday_holiday_and_max_temperature() {
        let rows = [row("2024-03-16T10:00:00", 30.0, true), row("2024-03-18T10:00:00", 10.0, false)];
        let sc = WeatherScaler::fit(&rows).unwrap();
        let v = external_vector(rows[0].timestamp, &rows[0], &sc).unwrap();
        assert_eq!(&v[..7], &[0., 0., 0., 0., 0., 1., 0.]);
        assert_eq!(v[7], 1.0);
        assert_eq!(v[8], 1.0);
        assert_eq!(v[9], 1.0);
        assert_eq!(&v[11..], &[0., 1., 0.]);
        let m = external_vector(rows[1].timestamp, &rows[1], &sc).unwrap();
        assert_eq!(m[0], 1.0);
        assert_eq!(m[7], 0.0);
        assert_eq!(m[9], 0.0);
        // one-hot groups sum to 1
        assert_eq!(m[..7].iter().sum::<f32>(), 1.0);
        assert_eq!(m[11..].iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn mismatched_row_and_bad_label() {
        let r = row("2024-03-16T10:00:00", 1.0, false);
        let sc = WeatherScaler::fit(std::slice::from_ref(&r)).unwrap();
        let other = NaiveDateTime::parse_from_str("2024-03-16T11:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
        assert!(external_vector(other, &r, &sc).is_err());
        assert!("hail".parse::<Condition>().is_err());
        assert_eq!("snow".parse::<Condition>().unwrap().to_string(), "snow");
    }
}
