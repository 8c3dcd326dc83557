use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::external::WeatherRow;
use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const META: &str = "meta.json";
const FLOWS: &str = "flows.f32le";
const EXTERNAL: &str = "external.csv";
const EXTERNAL_HEADER: [&str; 5] = ["timestamp", "temperature", "wind_speed", "condition", "holiday"];

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub grid: [usize; 2],
    pub period_minutes: u32,
    pub start_timestamp: String,
    #[serde(rename = "T")]
    pub t: usize,
}

/// Inflow/outflow counts on an `n x m` grid at a fixed period, plus one
/// weather row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDataset {
    pub meta: Meta,
    pub start: NaiveDateTime,
    /// Row-major `(t, channel, row, col)`; channel 0 is inflow, 1 outflow.
    pub flows: Vec<f32>,
    pub weather: Vec<WeatherRow>,
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| Error::Data(format!("bad timestamp {:?}: {} (expected YYYY-MM-DDTHH:MM:SS)", s, e)))
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

impl FlowDataset {
    pub fn new(meta: Meta, flows: Vec<f32>, weather: Vec<WeatherRow>) -> Result<Self> {
        let start = parse_timestamp(&meta.start_timestamp)?;
        let ds = FlowDataset {
            meta,
            start,
            flows,
            weather,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.meta.grid[0], self.meta.grid[1])
    }

    pub fn len(&self) -> usize {
        self.meta.t
    }

    pub fn is_empty(&self) -> bool {
        self.meta.t == 0
    }

    pub fn period(&self) -> Duration {
        Duration::minutes(self.meta.period_minutes as i64)
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + self.period() * t as i32
    }

    /// Frame index of `at`, if it lies on the sampling grid.
    pub fn index_of(&self, at: NaiveDateTime) -> Option<usize> {
        let mins = (at - self.start).num_minutes();
        let p = self.meta.period_minutes as i64;
        if mins < 0 || mins % p != 0 || at != self.start + Duration::minutes(mins) {
            return None;
        }
        let t = (mins / p) as usize;
        (t < self.len()).then_some(t)
    }

    pub fn frame_len(&self) -> usize {
        2 * self.meta.grid[0] * self.meta.grid[1]
    }

    /// Frame `t` in `(channel, row, col)` order.
    pub fn frame(&self, t: usize) -> &[f32] {
        let f = self.frame_len();
        &self.flows[t * f..(t + 1) * f]
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = self.grid();
        if n == 0 || m == 0 || self.meta.t == 0 || self.meta.period_minutes == 0 {
            return Err(Error::Data(format!("degenerate meta {:?}", self.meta)));
        }
        let expect = self.meta.t * self.frame_len();
        if self.flows.len() != expect {
            return Err(Error::Data(format!(
                "{} holds {} values ({} bytes) but meta implies T*2*N*M = {} ({} bytes)",
                FLOWS,
                self.flows.len(),
                self.flows.len() * 4,
                expect,
                expect * 4
            )));
        }
        if let Some(i) = self.flows.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data(format!(
                "flow value {} at index {} is not a finite non-negative number",
                self.flows[i], i
            )));
        }
        if self.weather.len() != self.meta.t {
            return Err(Error::Data(format!(
                "{} has {} rows, expected one per frame ({})",
                EXTERNAL,
                self.weather.len(),
                self.meta.t
            )));
        }
        for (t, row) in self.weather.iter().enumerate() {
            if row.timestamp != self.timestamp(t) {
                return Err(Error::Data(format!(
                    "{}: row {} has timestamp {}, expected {} (period {} min)",
                    EXTERNAL,
                    t + 1,
                    row.timestamp,
                    self.timestamp(t),
                    self.meta.period_minutes
                )));
            }
            if !row.temperature.is_finite() || !row.wind_speed.is_finite() {
                return Err(Error::Data(format!("{}: non-finite weather at row {}", EXTERNAL, t + 1)));
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join(META);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Meta =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {}", meta_path.display(), e)))?;

        let flows_path = dir.join(FLOWS);
        let bytes = fs::read(&flows_path).map_err(|e| Error::io(&flows_path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Data(format!(
                "{} is {} bytes, not a whole number of 32-bit values",
                FLOWS,
                bytes.len()
            )));
        }
        let flows = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let ext_path = dir.join(EXTERNAL);
        let mut rdr = csv::Reader::from_path(&ext_path).map_err(|e| csv_error(&ext_path, e))?;
        let header = rdr.headers().map_err(|e| csv_error(&ext_path, e))?.clone();
        if header.iter().ne(EXTERNAL_HEADER) {
            return Err(Error::Data(format!(
                "{}: header must be {}",
                EXTERNAL,
                EXTERNAL_HEADER.join(",")
            )));
        }
        let mut weather = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(&ext_path, e))?;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("{}: row {}: bad number {:?}", EXTERNAL, i + 1, &rec[j])))
            };
            let holiday = match &rec[4] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Data(format!(
                        "{}: row {}: holiday must be 0 or 1, got {:?}",
                        EXTERNAL,
                        i + 1,
                        other
                    )))
                }
            };
            weather.push(WeatherRow {
                timestamp: parse_timestamp(&rec[0])?,
                temperature: num(1)?,
                wind_speed: num(2)?,
                condition: rec[3].parse()?,
                holiday,
            });
        }
        FlowDataset::new(meta, flows, weather)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        write(&dir.join(META), format!("{}\n", meta).as_bytes())?;

        let mut bytes = Vec::with_capacity(self.flows.len() * 4);
        for v in &self.flows {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write(&dir.join(FLOWS), &bytes)?;

        let mut out = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(EXTERNAL_HEADER).expect("in-memory write");
            for r in &self.weather {
                w.write_record([
                    format_timestamp(r.timestamp),
                    r.temperature.to_string(),
                    r.wind_speed.to_string(),
                    r.condition.to_string(),
                    (r.holiday as u8).to_string(),
                ])
                .expect("in-memory write");
            }
            w.flush().expect("in-memory write");
        }
        write(&dir.join(EXTERNAL), &out)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {:?}", path.display(), other)),
    }
}
