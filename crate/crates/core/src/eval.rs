//! Evaluation: RMSE/MAPE, weekday/weekend/peak slices, naive baselines, and
//! the multi-horizon report.

use std::collections::BTreeMap;

use crate::data::{in_clock_windows, is_weekend, CHANNELS};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{predict_horizon, ModelParams};

/// Root mean squared error over (prediction, actual) pairs; None when empty.
pub fn rmse(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let sum: f64 = pairs.iter().map(|(p, a)| (p - a) * (p - a)).sum();
    Some((sum / pairs.len() as f64).sqrt())
}

/// Mean absolute percentage error in percent, restricted to actuals at or
/// above `floor` so near-zero counts don't blow the ratio up. None when no
/// pair survives the floor.
pub fn mape(pairs: &[(f64, f64)], floor: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &(p, a) in pairs {
        if a >= floor {
            sum += (p - a).abs() / a;
            n += 1;
        }
    }
    (n > 0).then(|| 100.0 * sum / n as f64)
}

pub const SLICES: [&str; 4] = ["all", "weekday", "weekend", "peak"];

/// Morning and evening rush, half-open clock minutes.
pub fn default_peak_windows() -> Vec<(u32, u32)> {
    vec![(7 * 60, 10 * 60), (17 * 60, 20 * 60)]
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Number of recursive forecast steps (horizon sweep 1..=horizons).
    pub horizons: usize,
    /// Evaluate every `t_stride`-th interval.
    pub t_stride: usize,
    pub peak_windows: Vec<(u32, u32)>,
    /// MAPE denominator floor in raw counts.
    pub mape_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizons: 4,
            t_stride: 1,
            peak_windows: default_peak_windows(),
            mape_floor: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons == 0 || self.t_stride == 0 {
            return Err(Error::Config("horizons and t_stride must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that can forecast raw-count volume `steps` intervals ahead for
/// one region. Shorter return vectors mean the tail ran out of data.
pub trait Forecaster {
    fn predict(
        &self,
        ds: &Dataset,
        region: (usize, usize),
        t: usize,
        steps: usize,
    ) -> Result<Vec<(f64, f64)>>;
}

/// The trained model: normalized recursive rollout, denormalized back to
/// counts.
pub struct ModelForecaster<'a>(pub &'a ModelParams);

impl Forecaster for ModelForecaster<'_> {
    fn predict(
        &self,
        ds: &Dataset,
        region: (usize, usize),
        t: usize,
        steps: usize,
    ) -> Result<Vec<(f64, f64)>> {
        let preds = predict_horizon(
            self.0,
            &ds.normalized,
            &ds.mask,
            &ds.external,
            region,
            t,
            steps,
        )?;
        preds
            .into_iter()
            .map(|(s, e)| {
                Ok((
                    ds.scaler.denormalize_value(0, s)?,
                    ds.scaler.denormalize_value(1, e)?,
                ))
            })
            .collect()
    }
}

/// Historical average baseline: for each (cell, time-of-day, channel), the
/// mean raw count over valid training intervals.
pub struct HistoricalAverage {
    means: Vec<f64>, // [intervals_per_day × rows × cols × 2]
    intervals_per_day: usize,
    rows: usize,
    cols: usize,
}

impl HistoricalAverage {
    pub fn fit(ds: &Dataset, intervals_per_day: usize) -> Result<Self> {
        let (rows, cols) = (ds.raw.rows(), ds.raw.cols());
        let n = intervals_per_day * rows * cols * CHANNELS;
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for t in 0..ds.train_end.min(ds.intervals()) {
            let tod = t % intervals_per_day;
            for r in 0..rows {
                for c in 0..cols {
                    if !ds.mask.get(t, r, c) {
                        continue;
                    }
                    for ch in 0..CHANNELS {
                        let i = ((tod * rows + r) * cols + c) * CHANNELS + ch;
                        sums[i] += ds.raw.get(t, r, c, ch);
                        counts[i] += 1;
                    }
                }
            }
        }
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &k)| if k > 0 { s / k as f64 } else { 0.0 })
            .collect();
        Ok(HistoricalAverage { means, intervals_per_day, rows, cols })
    }

    fn mean(&self, t: usize, r: usize, c: usize, ch: usize) -> f64 {
        let tod = t % self.intervals_per_day;
        self.means[((tod * self.rows + r) * self.cols + c) * CHANNELS + ch]
    }
}

impl Forecaster for HistoricalAverage {
    fn predict(
        &self,
        ds: &Dataset,
        region: (usize, usize),
        t: usize,
        steps: usize,
    ) -> Result<Vec<(f64, f64)>> {
        let (r, c) = region;
        let mut out = Vec::with_capacity(steps);
        for s in 1..=steps {
            if t + s >= ds.intervals() {
                break;
            }
            out.push((self.mean(t + s, r, c, 0), self.mean(t + s, r, c, 1)));
        }
        Ok(out)
    }
}

/// Persistence baseline: repeat the most recent valid observation.
pub struct Persistence;

impl Forecaster for Persistence {
    fn predict(
        &self,
        ds: &Dataset,
        region: (usize, usize),
        t: usize,
        steps: usize,
    ) -> Result<Vec<(f64, f64)>> {
        let (r, c) = region;
        let mut tt = t as isize;
        while tt >= 0 && !ds.mask.get(tt as usize, r, c) {
            tt -= 1;
        }
        if tt < 0 {
            return Ok(Vec::new());
        }
        let last = (
            ds.raw.get(tt as usize, r, c, 0),
            ds.raw.get(tt as usize, r, c, 1),
        );
        Ok(vec![last; steps])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub slice: &'static str,
    /// "start" or "end".
    pub channel: &'static str,
    pub horizon_minutes: u32,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,channel,horizon_minutes,rmse,mape,n\n");
        for r in &self.rows {
            let mape = match r.mape {
                Some(m) => format!("{m:.6}"),
                None => "NA".into(),
            };
            out.push_str(&format!(
                "{},{},{},{:.6},{},{}\n",
                r.slice, r.channel, r.horizon_minutes, r.rmse, mape, r.n
            ));
        }
        out
    }

    pub fn get(&self, slice: &str, channel: &str, horizon_minutes: u32) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.slice == slice && r.channel == channel && r.horizon_minutes == horizon_minutes)
    }
}

const CHANNEL_LABELS: [&str; CHANNELS] = ["start", "end"];

/// Sweep [t_lo, t_hi) with the forecaster, scoring each horizon step against
/// raw counts at valid target cells, grouped by calendar slice and channel.
pub fn evaluate(
    ds: &Dataset,
    forecaster: &dyn Forecaster,
    cfg: &EvalConfig,
    t_lo: usize,
    t_hi: usize,
) -> Result<EvalReport> {
    cfg.validate()?;
    if t_lo >= t_hi || t_hi > ds.intervals() {
        return Err(Error::Argument(format!(
            "evaluation range [{t_lo}, {t_hi}) out of bounds for {} intervals",
            ds.intervals()
        )));
    }
    // (slice index, channel, horizon) -> pairs
    let mut buckets: BTreeMap<(usize, usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for t in (t_lo..t_hi).step_by(cfg.t_stride) {
        for r in 0..ds.raw.rows() {
            for c in 0..ds.raw.cols() {
                let preds = forecaster.predict(ds, (r, c), t, cfg.horizons)?;
                for (i, &(ps, pe)) in preds.iter().enumerate() {
                    let h = i + 1;
                    let tt = t + h;
                    if tt >= ds.intervals() || !ds.mask.get(tt, r, c) {
                        continue;
                    }
                    let ts = ds.raw.time_of(tt);
                    let mut slices = vec![0usize];
                    slices.push(if is_weekend(ts) { 2 } else { 1 });
                    if in_clock_windows(ts, &cfg.peak_windows) {
                        slices.push(3);
                    }
                    for ch in 0..CHANNELS {
                        let pred = if ch == 0 { ps } else { pe };
                        let actual = ds.raw.get(tt, r, c, ch);
                        for &s in &slices {
                            buckets.entry((s, ch, h)).or_default().push((pred, actual));
                        }
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (si, &slice) in SLICES.iter().enumerate() {
        for (ch, &channel) in CHANNEL_LABELS.iter().enumerate() {
            for h in 1..=cfg.horizons {
                if let Some(pairs) = buckets.get(&(si, ch, h)) {
                    rows.push(EvalRow {
                        slice,
                        channel,
                        horizon_minutes: h as u32 * ds.raw.interval_minutes,
                        rmse: rmse(pairs).expect("bucket is non-empty"),
                        mape: mape(pairs, cfg.mape_floor),
                        n: pairs.len(),
                    });
                }
            }
        }
    }
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[]), None);
        assert_eq!(rmse(&[(3.0, 3.0), (5.0, 5.0)]), Some(0.0));
        // errors 3 and 4 -> sqrt((9+16)/2) = 2.5·sqrt(2)
        let v = rmse(&[(0.0, 3.0), (0.0, 4.0)]).unwrap();
        assert!((v - (12.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[(1.0, 4.0)]), Some(3.0));
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[], 1.0), None);
        // 10% error on 100 -> 10
        let v = mape(&[(110.0, 100.0)], 1.0).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
        // actuals below the floor are excluded entirely
        assert_eq!(mape(&[(5.0, 0.5)], 1.0), None);
        let v = mape(&[(110.0, 100.0), (5.0, 0.0)], 1.0).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn historical_average_is_exact_on_periodic_data() {
        let cfg = SynthConfig {
            days: 14,
            noise: 0.0,
            weather_dip_prob: 0.0,
            weekly_weight: 0.0, // no weekend modulation either
            missing_rate: 0.0,
            outlier_rate: 0.0,
            ..SynthConfig::default()
        };
        let train_end = 7 * cfg.intervals_per_day;
        let (ds, _) = generate_dataset(&cfg, train_end, 1.0).unwrap();
        let ha = HistoricalAverage::fit(&ds, cfg.intervals_per_day).unwrap();
        let eval_cfg = EvalConfig { horizons: 1, t_stride: 7, ..EvalConfig::default() };
        let report = evaluate(&ds, &ha, &eval_cfg, train_end, ds.intervals() - 1).unwrap();
        let row = report.get("all", "start", 30).unwrap();
        assert!(row.rmse < 1e-9, "rmse {}", row.rmse);
        assert!(row.n > 0);
    }

    #[test]
    fn persistence_repeats_last_observation() {
        let cfg = SynthConfig {
            days: 10,
            missing_rate: 0.0,
            outlier_rate: 0.0,
            ..SynthConfig::default()
        };
        let (ds, _) = generate_dataset(&cfg, 7 * 48, 1.0).unwrap();
        let preds = Persistence.predict(&ds, (1, 2), 100, 3).unwrap();
        assert_eq!(preds.len(), 3);
        let expect = (ds.raw.get(100, 1, 2, 0), ds.raw.get(100, 1, 2, 1));
        assert!(preds.iter().all(|&p| p == expect));
    }

    #[test]
    fn report_csv_schema() {
        let report = EvalReport {
            rows: vec![EvalRow {
                slice: "all",
                channel: "start",
                horizon_minutes: 30,
                rmse: 1.25,
                mape: None,
                n: 10,
            }],
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("slice,channel,horizon_minutes,rmse,mape,n"));
        assert_eq!(lines.next(), Some("all,start,30,1.250000,NA,10"));
    }

    #[test]
    fn slices_partition_weekday_weekend() {
        let cfg = SynthConfig {
            days: 14,
            missing_rate: 0.0,
            outlier_rate: 0.0,
            ..SynthConfig::default()
        };
        let train_end = 7 * cfg.intervals_per_day;
        let (ds, _) = generate_dataset(&cfg, train_end, 1.0).unwrap();
        let ha = HistoricalAverage::fit(&ds, cfg.intervals_per_day).unwrap();
        let eval_cfg = EvalConfig { horizons: 1, t_stride: 3, ..EvalConfig::default() };
        let report = evaluate(&ds, &ha, &eval_cfg, train_end, ds.intervals() - 1).unwrap();
        let all = report.get("all", "start", 30).unwrap().n;
        let wd = report.get("weekday", "start", 30).unwrap().n;
        let we = report.get("weekend", "start", 30).unwrap().n;
        assert_eq!(all, wd + we);
        let peak = report.get("peak", "start", 30).unwrap().n;
        assert!(peak > 0 && peak < all);
    }
}
