//! Deterministic synthetic telemetry with known soiling ratio and cleaning
//! events.
//!
//! Power is `true_power(irradiance, temperature) * SR(t) * (1 + noise)`.
//! The true power function is a polynomial in `g = irradiance / 1000` and
//! module temperature in degrees Celsius, with coefficients in the same
//! graded-lexicographic order as the regression features. SR decays
//! linearly at the rate of the active regime and jumps towards 1 at every
//! cleaning by the event's recovery fraction. Only daylight rows are
//! emitted.
//!
//! Scenario files are flat `key = value` text whose keys are the
//! [`ScenarioConfig`] field names. Record lists take `;`-separated records
//! of `:`-separated fields: `regimes = start_day:decay`,
//! `cleanings = day:recovery`, `rains = day:hours:peak_mm:recovery`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::Datelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv;
use crate::regression::{n_features, poly_features};
use crate::types::{EventInterval, EventKind, Span, TelemetryRecord, TelemetrySeries, Timestamp};

/// SR never decays below this.
pub const SR_FLOOR: f64 = 0.05;

/// Rows with clear-sky-shaped irradiance below this are night.
const DAYLIGHT_MIN_IRRADIANCE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub start_day: f64,
    /// SR units per day, non-negative.
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleaningSpec {
    pub day: f64,
    pub recovery: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainSpec {
    pub day: f64,
    pub duration_hours: f64,
    pub peak_mm: f64,
    /// Fraction of the soiling loss removed at the end of the rain; 0 for
    /// a rain with no cleaning effect.
    pub recovery: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub start: Timestamp,
    pub duration_days: u32,
    pub cadence_minutes: u32,
    /// Midsummer clear-sky irradiance peak, W/m^2.
    pub irradiance_peak: f64,
    /// Fractional seasonal swing of the peak.
    pub irradiance_seasonal: f64,
    pub daylight_hours: f64,
    pub daylight_seasonal_hours: f64,
    /// 0 = always clear, 1 = heavily overcast at times.
    pub cloudiness: f64,
    pub ambient_mean: f64,
    pub ambient_seasonal: f64,
    pub ambient_diurnal: f64,
    /// Module heating in degrees per W/m^2.
    pub irradiance_heating: f64,
    pub power_coeffs: Vec<f64>,
    pub regimes: Vec<Regime>,
    pub cleanings: Vec<CleaningSpec>,
    pub rains: Vec<RainSpec>,
    /// Extra seeded rains with no cleaning effect, placed in daylight.
    pub random_rains: usize,
    pub random_rain_peak_mm: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            start: Timestamp::parse("2021-01-01T00:00:00Z").unwrap(),
            duration_days: 365,
            cadence_minutes: 15,
            irradiance_peak: 1000.0,
            irradiance_seasonal: 0.25,
            daylight_hours: 12.0,
            daylight_seasonal_hours: 2.5,
            cloudiness: 0.4,
            ambient_mean: 15.0,
            ambient_seasonal: 8.0,
            ambient_diurnal: 5.0,
            irradiance_heating: 0.03,
            // P = 275 g - 1.0 g T, i.e. 250 W at STC with -0.4 %/K.
            power_coeffs: vec![0.0, 275.0, 0.0, 0.0, -1.0, 0.0],
            regimes: vec![Regime {
                start_day: 0.0,
                decay: 0.002,
            }],
            cleanings: Vec::new(),
            rains: Vec::new(),
            random_rains: 0,
            random_rain_peak_mm: 2.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// A cleaning that actually happened in the synthetic data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueEvent {
    pub interval: EventInterval,
    pub recovery: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub series: TelemetrySeries,
    /// SR at each emitted timestamp.
    pub truth: Vec<(Timestamp, f64)>,
    /// Cleanings with a positive recovery, rains and manual alike, sorted.
    pub events: Vec<TrueEvent>,
    /// Manual cleanings, as they would appear in a cleaning log.
    pub manual_cleanings: Vec<EventInterval>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.duration_days == 0 || self.cadence_minutes == 0 {
            return bad("duration and cadence must be positive".into());
        }
        let degree = (0..=5).find(|&d| n_features(d) == self.power_coeffs.len());
        if degree.is_none() {
            return bad(format!(
                "power_coeffs has {} entries; expected a triangular count for degree <= 5",
                self.power_coeffs.len()
            ));
        }
        if self.regimes.iter().any(|r| !(r.decay >= 0.0) || !r.start_day.is_finite()) {
            return bad("decay rates must be finite and non-negative".into());
        }
        let recoveries = self
            .cleanings
            .iter()
            .map(|c| c.recovery)
            .chain(self.rains.iter().map(|r| r.recovery));
        for rec in recoveries {
            if !(0.0..=1.0).contains(&rec) {
                return bad(format!("recovery fraction {rec} outside [0, 1]"));
            }
        }
        if self.rains.iter().any(|r| !(r.duration_hours > 0.0) || !(r.peak_mm > 0.0)) {
            return bad("rains need positive duration and peak".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.irradiance_peak > 0.0) {
            return bad("noise must be non-negative and irradiance peak positive".into());
        }
        if !(0.0..=1.0).contains(&self.cloudiness) {
            return bad("cloudiness must lie in [0, 1]".into());
        }
        if !(self.daylight_hours > 0.0 && self.daylight_hours + self.daylight_seasonal_hours.abs() < 24.0) {
            return bad("daylight hours out of range".into());
        }
        Ok(())
    }

    fn truth_degree(&self) -> usize {
        (0..=5).find(|&d| n_features(d) == self.power_coeffs.len()).unwrap()
    }

    pub fn true_power(&self, irradiance: f64, module_temp: f64) -> f64 {
        poly_features(irradiance / 1000.0, module_temp, self.truth_degree())
            .iter()
            .zip(&self.power_coeffs)
            .map(|(f, c)| f * c)
            .sum()
    }

    fn decay_at(&self, day: f64) -> f64 {
        self.regimes
            .iter()
            .filter(|r| r.start_day <= day)
            .max_by(|a, b| a.start_day.total_cmp(&b.start_day))
            .map_or(0.0, |r| r.decay)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map = kv::parse(text).map_err(Error::InvalidScenario)?;
        let mut cfg = ScenarioConfig::default();
        for (key, value) in &map {
            let num = || kv::number(key, value).map_err(Error::InvalidScenario);
            match key.as_str() {
                "start" => {
                    cfg.start = Timestamp::parse(value)
                        .or_else(|| Timestamp::parse(&format!("{value}T00:00:00Z")))
                        .ok_or_else(|| Error::InvalidScenario(format!("bad start `{value}`")))?
                }
                "duration_days" => cfg.duration_days = num()? as u32,
                "cadence_minutes" => cfg.cadence_minutes = num()? as u32,
                "irradiance_peak" => cfg.irradiance_peak = num()?,
                "irradiance_seasonal" => cfg.irradiance_seasonal = num()?,
                "daylight_hours" => cfg.daylight_hours = num()?,
                "daylight_seasonal_hours" => cfg.daylight_seasonal_hours = num()?,
                "cloudiness" => cfg.cloudiness = num()?,
                "ambient_mean" => cfg.ambient_mean = num()?,
                "ambient_seasonal" => cfg.ambient_seasonal = num()?,
                "ambient_diurnal" => cfg.ambient_diurnal = num()?,
                "irradiance_heating" => cfg.irradiance_heating = num()?,
                "power_coeffs" => cfg.power_coeffs = kv::list(key, value).map_err(Error::InvalidScenario)?,
                "regimes" => {
                    cfg.regimes = kv::records(key, value, 2).map_err(Error::InvalidScenario)?
                        .into_iter()
                        .map(|f| Regime {
                            start_day: f[0],
                            decay: f[1],
                        })
                        .collect()
                }
                "cleanings" => {
                    cfg.cleanings = kv::records(key, value, 2).map_err(Error::InvalidScenario)?
                        .into_iter()
                        .map(|f| CleaningSpec {
                            day: f[0],
                            recovery: f[1],
                        })
                        .collect()
                }
                "rains" => {
                    cfg.rains = kv::records(key, value, 4).map_err(Error::InvalidScenario)?
                        .into_iter()
                        .map(|f| RainSpec {
                            day: f[0],
                            duration_hours: f[1],
                            peak_mm: f[2],
                            recovery: f[3],
                        })
                        .collect()
                }
                "random_rains" => cfg.random_rains = num()? as usize,
                "random_rain_peak_mm" => cfg.random_rain_peak_mm = num()?,
                "noise_sigma" => cfg.noise_sigma = num()?,
                "seed" => cfg.seed = num()? as u64,
                other => return Err(Error::InvalidScenario(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let recs = |rows: Vec<Vec<f64>>| {
            rows.iter()
                .map(|r| r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(":"))
                .collect::<Vec<_>>()
                .join("; ")
        };
        let mut out = BTreeMap::new();
        out.insert("start", self.start.to_string());
        out.insert("duration_days", self.duration_days.to_string());
        out.insert("cadence_minutes", self.cadence_minutes.to_string());
        out.insert("irradiance_peak", self.irradiance_peak.to_string());
        out.insert("irradiance_seasonal", self.irradiance_seasonal.to_string());
        out.insert("daylight_hours", self.daylight_hours.to_string());
        out.insert("daylight_seasonal_hours", self.daylight_seasonal_hours.to_string());
        out.insert("cloudiness", self.cloudiness.to_string());
        out.insert("ambient_mean", self.ambient_mean.to_string());
        out.insert("ambient_seasonal", self.ambient_seasonal.to_string());
        out.insert("ambient_diurnal", self.ambient_diurnal.to_string());
        out.insert("irradiance_heating", self.irradiance_heating.to_string());
        out.insert("power_coeffs", join(&self.power_coeffs));
        out.insert("regimes", recs(self.regimes.iter().map(|r| vec![r.start_day, r.decay]).collect()));
        out.insert("cleanings", recs(self.cleanings.iter().map(|c| vec![c.day, c.recovery]).collect()));
        out.insert(
            "rains",
            recs(self.rains.iter().map(|r| vec![r.day, r.duration_hours, r.peak_mm, r.recovery]).collect()),
        );
        out.insert("random_rains", self.random_rains.to_string());
        out.insert("random_rain_peak_mm", self.random_rain_peak_mm.to_string());
        out.insert("noise_sigma", self.noise_sigma.to_string());
        out.insert("seed", self.seed.to_string());
        out.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct DayShape {
    sunrise_hour: f64,
    length_hours: f64,
    peak: f64,
    ambient: f64,
    clearness: f64,
}

fn day_shape(cfg: &ScenarioConfig, day: usize, rng: &mut ChaCha8Rng) -> DayShape {
    // Season peaks near day 172 (late June) relative to the start date.
    let doy = cfg.start.date().ordinal0() as f64 + day as f64;
    let season = (2.0 * PI * (doy - 172.0) / 365.25).cos();
    let length_hours = cfg.daylight_hours + cfg.daylight_seasonal_hours * season;
    DayShape {
        sunrise_hour: 12.0 - length_hours / 2.0,
        length_hours,
        peak: cfg.irradiance_peak * (1.0 - cfg.irradiance_seasonal * (1.0 - season) / 2.0),
        ambient: cfg.ambient_mean + cfg.ambient_seasonal * season + rng.random_range(-3.0..3.0),
        clearness: 1.0 - cfg.cloudiness * rng.random_range(0.0..1.0f64).powi(2),
    }
}

pub fn generate(cfg: &ScenarioConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let cadence = Span::minutes(i64::from(cfg.cadence_minutes));
    let at_day = |d: f64| cfg.start + Span::fractional_days(d);

    let mut rains = cfg.rains.clone();
    for _ in 0..cfg.random_rains {
        let day = rng.random_range(0..cfg.duration_days) as f64;
        rains.push(RainSpec {
            day: day + rng.random_range(0.40..0.62),
            duration_hours: rng.random_range(0.5..3.0),
            peak_mm: rng.random_range(0.15..cfg.random_rain_peak_mm.max(0.16)),
            recovery: 0.0,
        });
    }
    rains.sort_by(|a, b| a.day.total_cmp(&b.day));

    // Cleaning effects keyed by the instant they take hold.
    let mut effects: Vec<(Timestamp, f64)> = Vec::new();
    let mut events: Vec<TrueEvent> = Vec::new();
    let mut manual = Vec::new();
    for c in &cfg.cleanings {
        let t = at_day(c.day);
        let iv = EventInterval::new(t, t, EventKind::ManualCleaning)?;
        manual.push(iv);
        effects.push((t, c.recovery));
        if c.recovery > 0.0 {
            events.push(TrueEvent {
                interval: iv,
                recovery: c.recovery,
            });
        }
    }
    let rain_windows: Vec<(Timestamp, Timestamp, f64)> = rains
        .iter()
        .map(|r| {
            let start = at_day(r.day);
            (start, start + Span::fractional_days(r.duration_hours / 24.0), r.peak_mm)
        })
        .collect();
    for (r, &(start, end, _)) in rains.iter().zip(&rain_windows) {
        if r.recovery > 0.0 {
            effects.push((end, r.recovery));
            events.push(TrueEvent {
                interval: EventInterval::new(start, end, EventKind::Rain)?,
                recovery: r.recovery,
            });
        }
    }
    effects.sort_by_key(|e| e.0);
    events.sort_by_key(|e| e.interval.start);
    manual.sort_by_key(|e| e.start);

    let mut records = Vec::new();
    let mut truth = Vec::new();
    let mut sr = 1.0f64;
    let mut last = cfg.start;
    let mut next_effect = 0;
    let mut rain_cursor = 0;
    let end = at_day(f64::from(cfg.duration_days));
    let ticks_per_day = (86_400 / cadence.as_secs()).max(1) as usize;
    let mut hour_factors: Vec<f64> = Vec::new();
    let mut shape = day_shape(cfg, 0, &mut rng);
    let mut tick = 0usize;
    let mut t = cfg.start;
    while t < end {
        let day = tick / ticks_per_day;
        if tick % ticks_per_day == 0 {
            shape = day_shape(cfg, day, &mut rng);
            hour_factors = (0..26).map(|_| rng.random_range(0.0..1.0)).collect();
        }
        let elapsed_days = (t - last).as_days();
        sr = (sr - cfg.decay_at(t.days_since(cfg.start)) * elapsed_days).max(SR_FLOOR);
        last = t;
        while next_effect < effects.len() && effects[next_effect].0 <= t {
            let rec = effects[next_effect].1;
            sr += rec * (1.0 - sr);
            next_effect += 1;
        }

        let hour = (t - (cfg.start + Span::days(day as i64))).as_days() * 24.0;
        let u = (hour - shape.sunrise_hour) / shape.length_hours;
        if (0.0..=1.0).contains(&u) {
            let h0 = (hour.floor() as usize).min(24);
            let frac = hour - hour.floor();
            let cloud = hour_factors[h0] * (1.0 - frac) + hour_factors[h0 + 1] * frac;
            let clearness = shape.clearness * (1.0 - 0.5 * cfg.cloudiness * cloud);
            let irradiance = shape.peak * (PI * u).sin().powf(1.2) * clearness;
            if irradiance >= DAYLIGHT_MIN_IRRADIANCE {
                let module_temp = shape.ambient
                    + cfg.ambient_diurnal * (PI * u).sin()
                    + cfg.irradiance_heating * irradiance;
                let eps = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma * noise.sample(&mut rng)
                } else {
                    0.0
                };
                let power = (cfg.true_power(irradiance, module_temp) * sr * (1.0 + eps)).max(0.0);

                // Each record reports the rain that fell in the interval
                // ending at its timestamp.
                let lo = t - cadence;
                while rain_cursor < rain_windows.len() && rain_windows[rain_cursor].1 <= lo {
                    rain_cursor += 1;
                }
                let precipitation = rain_windows[rain_cursor..]
                    .iter()
                    .take_while(|w| w.0 < t)
                    .filter(|w| w.1 > lo)
                    .map(|&(s, e, peak)| {
                        let (a, b) = (s.max(lo), e.min(t));
                        let mid = a + Span::seconds((b - a).as_secs() / 2);
                        let span = (e - s).as_secs().max(1) as f64;
                        let pos = (mid - s).as_secs() as f64 / span;
                        peak * (1.0 - 0.5 * (2.0 * pos - 1.0).abs())
                    })
                    .fold(0.0, f64::max);

                records.push(TelemetryRecord {
                    ts: t,
                    power,
                    irradiance,
                    module_temp,
                    precipitation,
                });
                truth.push((t, sr));
            }
        }
        tick += 1;
        t = t + cadence;
    }

    let series = TelemetrySeries::new(records, cadence)?;
    Ok(SyntheticDataset {
        series,
        truth,
        events,
        manual_cleanings: manual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> ScenarioConfig {
        ScenarioConfig {
            duration_days: 30,
            regimes: vec![],
            ..Default::default()
        }
    }

    fn sr_near(ds: &SyntheticDataset, cfg: &ScenarioConfig, day: f64) -> f64 {
        let t = cfg.start + Span::fractional_days(day);
        ds.truth.iter().find(|(u, _)| *u >= t).unwrap().1
    }

    #[test]
    fn clean_noiseless_scenario() {
        let cfg = quiet();
        let ds = generate(&cfg).unwrap();
        assert!(ds.series.len() > 30 * 30);
        assert!(ds.truth.iter().all(|(_, v)| *v == 1.0));
        for r in ds.series.records() {
            assert_eq!(r.power, cfg.true_power(r.irradiance, r.module_temp));
            assert_eq!(r.precipitation, 0.0);
        }
        assert!(ds.events.is_empty());
    }

    #[test]
    fn linear_decay() {
        let cfg = ScenarioConfig {
            regimes: vec![Regime { start_day: 0.0, decay: 0.002 }],
            ..quiet()
        };
        let ds = generate(&cfg).unwrap();
        // Noon of day 10 is 10.5 days in.
        let v = sr_near(&ds, &cfg, 10.5);
        assert!((v - 0.979).abs() < 1e-12, "{v}");
        for pair in ds.truth.windows(2) {
            assert!(pair[1].1 <= pair[0].1);
        }
    }

    #[test]
    fn full_recovery_resets_to_one() {
        let cfg = ScenarioConfig {
            regimes: vec![Regime { start_day: 0.0, decay: 0.004 }],
            cleanings: vec![CleaningSpec { day: 10.5, recovery: 1.0 }],
            ..quiet()
        };
        let ds = generate(&cfg).unwrap();
        assert!((sr_near(&ds, &cfg, 10.45) - (1.0 - 0.004 * 10.45)).abs() < 1e-3);
        assert_eq!(sr_near(&ds, &cfg, 10.5), 1.0);
        assert_eq!(ds.manual_cleanings.len(), 1);
        assert_eq!(ds.events.len(), 1);
    }

    #[test]
    fn rains_write_precipitation_and_clean() {
        let cfg = ScenarioConfig {
            regimes: vec![Regime { start_day: 0.0, decay: 0.003 }],
            rains: vec![
                RainSpec { day: 12.5, duration_hours: 2.0, peak_mm: 3.0, recovery: 0.5 },
                RainSpec { day: 20.45, duration_hours: 1.0, peak_mm: 0.5, recovery: 0.0 },
            ],
            ..quiet()
        };
        let ds = generate(&cfg).unwrap();
        let wet: Vec<_> = ds.series.records().iter().filter(|r| r.precipitation > 0.0).collect();
        assert!(wet.len() >= 8);
        assert!(wet.iter().all(|r| r.precipitation <= 3.0));
        let before = sr_near(&ds, &cfg, 12.5);
        let after = sr_near(&ds, &cfg, 12.6);
        assert!(after > before);
        assert_eq!(ds.events.len(), 1);
        assert_eq!(ds.events[0].interval.kind, EventKind::Rain);
        let rains = crate::ingestion::extract_rains(&ds.series, 0.1);
        assert_eq!(rains.len(), 2);
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let cfg = ScenarioConfig {
            noise_sigma: 0.01,
            random_rains: 5,
            seed: 99,
            ..quiet()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.truth, b.truth);
        let c = generate(&ScenarioConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn invalid_scenarios() {
        let mut cfg = quiet();
        cfg.power_coeffs = vec![1.0, 2.0];
        assert!(matches!(generate(&cfg), Err(Error::InvalidScenario(_))));
        let mut cfg = quiet();
        cfg.regimes = vec![Regime { start_day: 0.0, decay: -0.1 }];
        assert!(generate(&cfg).is_err());
        let mut cfg = quiet();
        cfg.cleanings = vec![CleaningSpec { day: 1.0, recovery: 1.5 }];
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ScenarioConfig {
            rains: vec![RainSpec { day: 3.5, duration_hours: 2.0, peak_mm: 1.5, recovery: 1.0 }],
            cleanings: vec![CleaningSpec { day: 9.0, recovery: 0.8 }],
            power_coeffs: vec![0.0; 21],
            seed: 4,
            ..quiet()
        };
        let back = ScenarioConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert!(ScenarioConfig::from_kv("bogus = 1").is_err());
    }
}
