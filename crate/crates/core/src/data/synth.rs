use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use std::f64::consts::PI;

use super::dataset::{format_timestamp, parse_timestamp, FlowDataset, Meta};
use super::external::{Condition, WeatherRow};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Parameters of a synthetic city.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub grid: (usize, usize),
    pub days: usize,
    pub period_minutes: u32,
    /// Relative amplitude of the stochastic component; 0 gives flows that
    /// repeat exactly every week.
    pub noise: f64,
    pub hotspots: usize,
    /// Peak mean flow of a hot-spot cell.
    pub peak: f64,
    pub start: NaiveDateTime,
}

impl SynthSpec {
    pub fn new(grid: (usize, usize), days: usize, period_minutes: u32) -> Self {
        SynthSpec {
            grid,
            days,
            period_minutes,
            noise: 0.1,
            hotspots: 3,
            peak: 60.0,
            start: parse_timestamp("2024-01-01T00:00:00").expect("constant"),
        }
    }

    pub fn frames(&self) -> usize {
        self.days * 24 * 60 / self.period_minutes as usize
    }
}

struct Hotspot {
    row: f64,
    col: f64,
    width: f64,
    amp: f64,
    /// Hour of the inflow peak; outflow peaks ten hours later.
    peak_hour: f64,
}

// Fixed-date holidays used for the calendar column.
const HOLIDAYS: [(u32, u32); 6] = [(1, 1), (5, 27), (7, 4), (9, 2), (11, 28), (12, 25)];

/// Mean profile at a given day-of-week and minute-of-day, a pure function of
/// the calendar so identical slots give bit-identical values.
fn profile(weekday: u32, minute: u32, peak_hour: f64) -> f64 {
    let h = minute as f64 / 60.0;
    let daily = 0.55 + 0.45 * (2.0 * PI * (h - peak_hour) / 24.0).cos();
    let rush = (-(h - peak_hour).powi(2) / 4.0).exp();
    let weekly = if weekday >= 5 { 0.7 } else { 1.0 };
    weekly * (daily + 0.6 * rush)
}

/// Stationary AR(1) with unit variance.
struct Ar1 {
    rho: f64,
    state: f64,
}

impl Ar1 {
    fn new(rho: f64, rng: &mut Rng) -> Self {
        Ar1 { rho, state: rng.normal() }
    }

    fn step(&mut self, rng: &mut Rng) -> f64 {
        self.state = self.rho * self.state + (1.0 - self.rho * self.rho).sqrt() * rng.normal();
        self.state
    }
}

/// Generates flows as weekly-periodic means around Gaussian hot-spots,
/// modulated by temporally correlated city-wide and regional noise.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<FlowDataset> {
    let (n, m) = spec.grid;
    if n == 0 || m == 0 || spec.days == 0 || spec.period_minutes == 0 || 1440 % spec.period_minutes != 0 {
        return Err(Error::Config(format!(
            "synthetic spec needs a non-empty grid, at least one day and a period dividing 1440 minutes, got {:?}",
            spec
        )));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Config(format!("noise must be >= 0, got {}", spec.noise)));
    }
    let root = Rng::new(seed);
    let mut layout = root.fork(1);
    let mut noise = root.fork(2);
    let mut weather_rng = root.fork(3);

    let spots: Vec<Hotspot> = (0..spec.hotspots)
        .map(|_| Hotspot {
            row: layout.uniform(0.0, n as f64 - 1.0),
            col: layout.uniform(0.0, m as f64 - 1.0),
            width: layout.uniform(0.8, 2.0),
            amp: layout.uniform(0.5, 1.0) * spec.peak,
            peak_hour: layout.uniform(7.0, 10.0),
        })
        .collect();
    let base = 0.05 * spec.peak;
    let cells = n * m;

    let t_len = spec.frames();
    let period = Duration::minutes(spec.period_minutes as i64);
    let mut flows = vec![0f32; t_len * 2 * cells];
    let mut city = Ar1::new(0.95, &mut noise);
    let mut regional: Vec<Ar1> = (0..2 * cells).map(|_| Ar1::new(0.8, &mut noise)).collect();

    for t in 0..t_len {
        let ts = spec.start + period * t as i32;
        let weekday = ts.weekday().num_days_from_monday();
        let minute = ts.hour() * 60 + ts.minute();
        let c = city.step(&mut noise);
        for ch in 0..2 {
            for cell in 0..cells {
                let (r, col) = ((cell / m) as f64, (cell % m) as f64);
                let mut mean = base;
                for s in &spots {
                    let d2 = (r - s.row).powi(2) + (col - s.col).powi(2);
                    let peak = if ch == 0 { s.peak_hour } else { s.peak_hour + 10.0 };
                    mean += s.amp * (-d2 / (2.0 * s.width * s.width)).exp() * profile(weekday, minute, peak);
                }
                let reg = regional[ch * cells + cell].step(&mut noise);
                let white = noise.normal();
                let factor = 1.0 + spec.noise * (3.0 * c + 1.5 * reg + 0.5 * white);
                flows[(t * 2 + ch) * cells + cell] = (mean * factor).max(0.0) as f32;
            }
        }
    }

    let mut condition = Condition::Sun;
    let weather = (0..t_len)
        .map(|t| {
            let ts = spec.start + period * t as i32;
            let h = (ts.hour() * 60 + ts.minute()) as f64 / 60.0;
            let season = (2.0 * PI * (ts.ordinal() as f64 - 200.0) / 365.0).cos();
            let temperature = 12.0 + 10.0 * season + 4.0 * (2.0 * PI * (h - 15.0) / 24.0).cos()
                + weather_rng.normal();
            let wind_speed = (3.0 + 1.5 * weather_rng.normal()).abs();
            if weather_rng.uniform(0.0, 1.0) < 0.05 {
                condition = match weather_rng.below(3) {
                    0 => Condition::Sun,
                    1 => Condition::Rain,
                    _ if temperature < 2.0 => Condition::Snow,
                    _ => Condition::Rain,
                };
            }
            WeatherRow {
                timestamp: ts,
                temperature: (temperature * 10.0).round() / 10.0,
                wind_speed: (wind_speed * 10.0).round() / 10.0,
                condition,
                holiday: HOLIDAYS.contains(&(ts.month(), ts.day())),
            }
        })
        .collect();

    FlowDataset::new(
        Meta {
            grid: [n, m],
            period_minutes: spec.period_minutes,
            start_timestamp: format_timestamp(spec.start),
            t: t_len,
        },
        flows,
        weather,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::new((4, 4), 2, 60);
        assert_eq!(generate(&spec, 3).unwrap(), generate(&spec, 3).unwrap());
        assert_ne!(generate(&spec, 3).unwrap().flows, generate(&spec, 4).unwrap().flows);
    }

    #[test]
    fn frame_count_and_non_negative() {
        let mut spec = SynthSpec::new((16, 8), 30, 60);
        spec.noise = 0.5;
        let ds = generate(&spec, 7).unwrap();
        assert_eq!(ds.len(), 720);
        assert!(ds.flows.iter().all(|&v| v >= 0.0));
        assert!(ds.flows.contains(&0.0), "heavy noise should hit the clamp");
    }

    #[test]
    fn noise_free_repeats_weekly() {
        let mut spec = SynthSpec::new((4, 2), 15, 30);
        spec.noise = 0.0;
        let ds = generate(&spec, 1).unwrap();
        let week = 7 * 48;
        for t in 0..ds.len() - week {
            assert_eq!(ds.frame(t), ds.frame(t + week));
        }
    }

    #[test]
    fn rejects_bad_period() {
        assert!(generate(&SynthSpec::new((4, 4), 1, 7), 0).is_err());
    }
}
