//! Ridge regression of power on polynomial features of irradiance and
//! module temperature.
//!
//! Features are all monomials `x^i * y^j` with `i + j <= degree`, ordered
//! graded-lexicographically with the bias first: for degree 2 that is
//! `1, x, y, x^2, xy, y^2`. Inputs and target are min-max scaled with the
//! series-wide [`ScalerParams`]; predictions are returned in raw watts.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingestion::{ChannelScale, ScalerParams};
use crate::types::{EventInterval, TelemetryRecord, TelemetrySeries};

pub fn n_features(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

pub fn poly_features(x: f64, y: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_features(degree));
    push_poly_features(x, y, degree, &mut out);
    out
}

fn push_poly_features(x: f64, y: f64, degree: usize, out: &mut Vec<f64>) {
    let mut xp = vec![1.0; degree + 1];
    let mut yp = vec![1.0; degree + 1];
    for k in 1..=degree {
        xp[k] = xp[k - 1] * x;
        yp[k] = yp[k - 1] * y;
    }
    for total in 0..=degree {
        for i in (0..=total).rev() {
            out.push(xp[i] * yp[total - i]);
        }
    }
}

/// Accumulates `X'X` and `X'y` row by row so the design matrix is never
/// materialized.
#[derive(Debug, Clone)]
pub(crate) struct NormalEquations {
    p: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    rows: usize,
}

impl NormalEquations {
    pub(crate) fn new(p: usize) -> Self {
        NormalEquations {
            p,
            gram: vec![0.0; p * p],
            rhs: vec![0.0; p],
            rows: 0,
        }
    }

    pub(crate) fn push(&mut self, row: &[f64], target: f64) {
        debug_assert_eq!(row.len(), self.p);
        for i in 0..self.p {
            let ri = row[i];
            self.rhs[i] += ri * target;
            // Upper triangle only; mirrored in solve.
            for j in i..self.p {
                self.gram[i * self.p + j] += ri * row[j];
            }
        }
        self.rows += 1;
    }

    pub(crate) fn solve(mut self, alpha: f64) -> Result<Vec<f64>> {
        let p = self.p;
        for i in 0..p {
            for j in 0..i {
                self.gram[i * p + j] = self.gram[j * p + i];
            }
            self.gram[i * p + i] += alpha;
        }
        cholesky_solve(&mut self.gram, &mut self.rhs, p)?;
        Ok(self.rhs)
    }
}

/// Solves the symmetric positive-definite system `a x = b` in place via
/// `a = L L'`. On return `b` holds `x`.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::SingularSystem);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    if b.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SingularSystem)
    }
}

/// `argmin_w |Xw - y|^2 + alpha |w|^2` over the given rows. The bias column,
/// if any, is penalized like every other coefficient.
pub fn fit_ridge(rows: &[Vec<f64>], targets: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::EmptyInput);
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig("ridge alpha must be positive".into()));
    }
    let p = rows[0].len();
    let mut ne = NormalEquations::new(p);
    for (row, &y) in rows.iter().zip(targets) {
        if row.len() != p {
            return Err(Error::InvalidConfig("ragged feature matrix".into()));
        }
        ne.push(row, y);
    }
    ne.solve(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub degree: usize,
    pub alpha: f64,
    pub coefficients: Vec<f64>,
    pub scaler: ScalerParams,
    pub trained_on: Vec<EventInterval>,
}

impl RidgeModel {
    /// Fits power against (irradiance, module temperature) on the given
    /// record indices.
    pub fn fit(
        series: &TelemetrySeries,
        indices: impl IntoIterator<Item = usize>,
        scaler: &ScalerParams,
        degree: usize,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidConfig("ridge alpha must be positive".into()));
        }
        let recs = series.records();
        let mut ne = NormalEquations::new(n_features(degree));
        let mut row = Vec::with_capacity(n_features(degree));
        for i in indices {
            let r = &recs[i];
            row.clear();
            push_poly_features(
                scaler.irradiance.apply(r.irradiance),
                scaler.module_temp.apply(r.module_temp),
                degree,
                &mut row,
            );
            ne.push(&row, scaler.power.apply(r.power));
        }
        if ne.rows == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(RidgeModel {
            degree,
            alpha,
            coefficients: ne.solve(alpha)?,
            scaler: *scaler,
            trained_on: Vec::new(),
        })
    }

    pub fn with_intervals(mut self, intervals: Vec<EventInterval>) -> Self {
        self.trained_on = intervals;
        self
    }

    /// Prediction in scaled power units from scaled inputs.
    pub fn predict_scaled(&self, irradiance: f64, module_temp: f64) -> f64 {
        let mut xp = [1.0f64; 8];
        let mut yp = [1.0f64; 8];
        if self.degree < xp.len() {
            for k in 1..=self.degree {
                xp[k] = xp[k - 1] * irradiance;
                yp[k] = yp[k - 1] * module_temp;
            }
            let mut c = self.coefficients.iter();
            let mut acc = 0.0;
            for total in 0..=self.degree {
                for i in (0..=total).rev() {
                    acc += c.next().unwrap() * xp[i] * yp[total - i];
                }
            }
            acc
        } else {
            poly_features(irradiance, module_temp, self.degree)
                .iter()
                .zip(&self.coefficients)
                .map(|(f, c)| f * c)
                .sum()
        }
    }

    /// Predicted power in raw watts.
    pub fn predict_power(&self, record: &TelemetryRecord) -> f64 {
        let s = self.predict_scaled(
            self.scaler.irradiance.apply(record.irradiance),
            self.scaler.module_temp.apply(record.module_temp),
        );
        self.scaler.power.invert(s)
    }

    pub fn predict_series(&self, series: &TelemetrySeries) -> Vec<f64> {
        series.records().iter().map(|r| self.predict_power(r)).collect()
    }

    /// Flat `key,value` text: degree, alpha, scaler parameters, then one
    /// `coef_<k>` line per feature in the documented order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "degree,{}", self.degree);
        let _ = writeln!(s, "alpha,{}", self.alpha);
        for (name, ch) in self.channels() {
            let _ = writeln!(s, "{name}_min,{}", ch.min);
            let _ = writeln!(s, "{name}_range,{}", ch.range);
        }
        for (k, c) in self.coefficients.iter().enumerate() {
            let _ = writeln!(s, "coef_{k},{c}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::MalformedFile(m);
        let mut kv = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("bad model line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("missing or bad `{k}`")))
        };
        let degree = num("degree")? as usize;
        let ch = |name: &str| -> Result<ChannelScale> {
            Ok(ChannelScale {
                min: num(&format!("{name}_min"))?,
                range: num(&format!("{name}_range"))?,
            })
        };
        let scaler = ScalerParams {
            power: ch("power")?,
            irradiance: ch("irradiance")?,
            module_temp: ch("module_temp")?,
        };
        let coefficients = (0..n_features(degree))
            .map(|k| num(&format!("coef_{k}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(RidgeModel {
            degree,
            alpha: num("alpha")?,
            coefficients,
            scaler,
            trained_on: Vec::new(),
        })
    }

    fn channels(&self) -> [(&'static str, ChannelScale); 3] {
        [
            ("power", self.scaler.power),
            ("irradiance", self.scaler.irradiance),
            ("module_temp", self.scaler.module_temp),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Span, Timestamp};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feature_examples() {
        assert_eq!(poly_features(0.0, 0.0, 3), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for d in 1..6 {
            let f = poly_features(1.0, 1.0, d);
            assert_eq!(f.len(), n_features(d));
            assert!(f.iter().all(|&v| v == 1.0));
        }
        assert_eq!(poly_features(2.0, 3.0, 2), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(
            poly_features(2.0, 3.0, 3)[6..],
            [8.0, 12.0, 18.0, 27.0]
        );
    }

    #[test]
    fn constant_fit() {
        let w = fit_ridge(&[vec![1.0], vec![1.0]], &[1.0, 1.0], 1e-12).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_point_two_by_two() {
        // (X'X + I) = [[2,5],[5,26]], X'y = [10,50]; det = 27.
        // w = 1/27 * [[26,-5],[-5,2]] [10,50] = [10/27, 50/27].
        let w = fit_ridge(&[vec![1.0, 5.0]], &[10.0], 1.0).unwrap();
        assert!((w[0] - 10.0 / 27.0).abs() < 1e-12);
        assert!((w[1] - 50.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_planted_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..50 {
            let x: f64 = rng.random_range(0.0..1.0);
            let y: f64 = rng.random_range(0.0..1.0);
            rows.push(poly_features(x, y, 2));
            ys.push(2.0 + 3.0 * x - x * x);
        }
        let w = fit_ridge(&rows, &ys, 1e-10).unwrap();
        for (got, want) in w.iter().zip([2.0, 3.0, 0.0, -1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{w:?}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(fit_ridge(&[], &[], 1.0), Err(Error::EmptyInput)));
        assert!(fit_ridge(&[vec![1.0]], &[1.0], 0.0).is_err());
        assert!(matches!(
            fit_ridge(&[vec![f64::NAN]], &[1.0], 1.0),
            Err(Error::SingularSystem)
        ));
    }

    fn synthetic_series(n: usize, seed: u64) -> TelemetrySeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let irr: f64 = rng.random_range(50.0..1000.0);
                let temp: f64 = rng.random_range(5.0..60.0);
                let g = irr / 1000.0;
                TelemetryRecord {
                    ts: Timestamp::from_unix(0) + Span::minutes(15 * i as i64),
                    power: 20.0 + 250.0 * g - 0.8 * g * temp + 30.0 * g * g * g,
                    irradiance: irr,
                    module_temp: temp,
                    precipitation: 0.0,
                }
            })
            .collect();
        TelemetrySeries::new(records, Span::minutes(15)).unwrap()
    }

    #[test]
    fn model_predicts_in_raw_watts() {
        let s = synthetic_series(400, 1);
        let sc = crate::ingestion::fit_scaler(&s).unwrap();
        let m = RidgeModel::fit(&s, 0..s.len(), &sc, 3, 1e-10).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for r in s.records() {
            num += (m.predict_power(r) - r.power).abs();
            den += r.power.abs();
        }
        assert!(num / den < 1e-6, "mape0 {}", num / den);

        let zero = RidgeModel {
            coefficients: vec![0.0; n_features(3)],
            ..m.clone()
        };
        assert_eq!(zero.predict_power(&s.records()[0]), sc.power.min);
    }

    #[test]
    fn refit_on_own_predictions_is_fixed_point() {
        let s = synthetic_series(500, 2);
        let sc = crate::ingestion::fit_scaler(&s).unwrap();
        let m = RidgeModel::fit(&s, 0..s.len(), &sc, 3, 1e-12).unwrap();
        let rows: Vec<Vec<f64>> = s
            .records()
            .iter()
            .map(|r| poly_features(sc.irradiance.apply(r.irradiance), sc.module_temp.apply(r.module_temp), 3))
            .collect();
        let targets: Vec<f64> = s
            .records()
            .iter()
            .map(|r| sc.power.apply(m.predict_power(r)))
            .collect();
        let refit = fit_ridge(&rows, &targets, 1e-12).unwrap();
        for (a, b) in refit.iter().zip(&m.coefficients) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn model_text_round_trip() {
        let s = synthetic_series(100, 3);
        let sc = crate::ingestion::fit_scaler(&s).unwrap();
        let m = RidgeModel::fit(&s, 0..s.len(), &sc, 3, 1e-4).unwrap();
        let back = RidgeModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = rng.random_range(1..=20);
        let degree = rng.random_range(1..=2);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| poly_features(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), degree))
            .collect();
        let ys = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        (rows, ys)
    }

    proptest! {
        #[test]
        fn normal_equation_residual_is_small(seed in any::<u64>(), alpha in 1e-6f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (rows, ys) = random_instance(&mut rng);
            let w = fit_ridge(&rows, &ys, alpha).unwrap();
            let p = w.len();
            let mut xty = vec![0.0; p];
            let mut lhs = vec![0.0; p];
            for (row, y) in rows.iter().zip(&ys) {
                let fit: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                for i in 0..p {
                    xty[i] += row[i] * y;
                    lhs[i] += row[i] * fit;
                }
            }
            let resid: f64 = (0..p).map(|i| (lhs[i] + alpha * w[i] - xty[i]).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = xty.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(resid <= 1e-8 * norm.max(1e-300) + 1e-12);
        }

        #[test]
        fn stronger_penalty_shrinks_coefficients(seed in any::<u64>(), a1 in 1e-4f64..1.0, factor in 1.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (rows, ys) = random_instance(&mut rng);
            let norm = |w: Vec<f64>| w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1 = norm(fit_ridge(&rows, &ys, a1).unwrap());
            let n2 = norm(fit_ridge(&rows, &ys, a1 * factor).unwrap());
            prop_assert!(n1 >= n2 * (1.0 - 1e-12));
        }
    }
}
