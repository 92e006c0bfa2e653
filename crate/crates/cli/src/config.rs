//! Effective run configuration: method defaults, then the config file, then
//! `SOILSCOPE_SEED`, then command-line flags.

use std::fmt;
use std::fs;

use soilscope::estimation::Method;
use soilscope::ingestion::PrecipMode;
use soilscope::{kv, DetectorConfig, Span};

use crate::RunArgs;

pub const SEED_VAR: &str = "SOILSCOPE_SEED";

/// A problem with how the tool was invoked.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub detector: DetectorConfig,
    pub precip_mode: PrecipMode,
    pub smooth_days: f64,
}

pub fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Usage(format!("{SEED_VAR} must be an unsigned integer, got `{v}`")).into()),
        Err(_) => Ok(None),
    }
}

fn parse_method(s: &str) -> anyhow::Result<Method> {
    s.parse().map_err(|_| Usage(format!("unknown method `{s}`")).into())
}

fn parse_precip(s: &str) -> anyhow::Result<PrecipMode> {
    s.parse().map_err(|_| Usage(format!("unknown precipitation mode `{s}`")).into())
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| soilscope::Error::io(path, e))?;
                kv::parse(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?
            }
            None => Default::default(),
        };
        let method = match (&args.method, file.get("method")) {
            (Some(m), _) | (None, Some(m)) => parse_method(m)?,
            (None, None) => Method::Fcse,
        };
        let mut cfg = RunConfig {
            method,
            detector: match method {
                Method::Bcse => DetectorConfig::bcse(),
                _ => DetectorConfig::fcse(),
            },
            precip_mode: PrecipMode::default(),
            smooth_days: 1.0,
        };

        for (key, value) in &file {
            let num = || kv::number(key, value).map_err(Usage);
            let whole = || -> anyhow::Result<u64> {
                let v = num()?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Usage(format!("`{key}` must be a whole number")).into());
                }
                Ok(v as u64)
            };
            let d = &mut cfg.detector;
            match key.as_str() {
                "method" => {}
                "w1" => d.w1 = whole()? as u32,
                "w2" => d.w2 = whole()? as u32,
                "w3" => d.w3 = whole()? as u32,
                "q" => d.q = num()?,
                "w_train" => d.w_train = whole()? as u32,
                "mape_gate" => d.mape_gate = num()?,
                "poly_degree" => d.poly_degree = whole()? as usize,
                "ridge_alpha" => d.ridge_alpha = num()?,
                "min_rain_peak" => d.min_rain_peak = num()?,
                "min_irradiance" => d.min_irradiance = num()?,
                "seed" => d.seed = whole()?,
                "precip_mode" => cfg.precip_mode = parse_precip(value)?,
                "smooth_days" => cfg.smooth_days = num()?,
                other => return Err(Usage(format!("unknown config key `{other}`")).into()),
            }
        }
        if let Some(seed) = env_seed()? {
            cfg.detector.seed = seed;
        }

        let d = &mut cfg.detector;
        macro_rules! flag {
            ($($field:ident),*) => { $( if let Some(v) = args.$field { d.$field = v; } )* };
        }
        flag!(w1, w2, w3, q, w_train, mape_gate, poly_degree, ridge_alpha, min_rain_peak, min_irradiance, seed);
        if let Some(p) = &args.precip_mode {
            cfg.precip_mode = parse_precip(p)?;
        }
        if let Some(s) = args.smooth_days {
            cfg.smooth_days = s;
        }

        cfg.detector.validate().map_err(|e| Usage(e.to_string()))?;
        if !(cfg.smooth_days > 0.0 && cfg.smooth_days.is_finite()) {
            return Err(Usage("smooth_days must be positive".into()).into());
        }
        Ok(cfg)
    }

    pub fn smooth_window(&self) -> Span {
        Span::fractional_days(self.smooth_days)
    }

    pub fn to_kv(&self) -> String {
        let d = &self.detector;
        let precip = match self.precip_mode {
            PrecipMode::Instant => "instant",
            PrecipMode::Accumulated => "accumulated",
        };
        format!(
            "method = {}\nw1 = {}\nw2 = {}\nw3 = {}\nq = {}\nw_train = {}\nmape_gate = {}\npoly_degree = {}\n\
             ridge_alpha = {}\nmin_rain_peak = {}\nmin_irradiance = {}\nseed = {}\nprecip_mode = {precip}\n\
             smooth_days = {}\n",
            self.method,
            d.w1,
            d.w2,
            d.w3,
            d.q,
            d.w_train,
            d.mape_gate,
            d.poly_degree,
            d.ridge_alpha,
            d.min_rain_peak,
            d.min_irradiance,
            d.seed,
            self.smooth_days
        )
    }
}
