//! Flat key = value run configuration. Every tunable lives here so a config
//! file plus a seed pins a run completely.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use gridcast_core::data::DEFAULT_MASK_UPPER;
use gridcast_core::model::ModelConfig;
use gridcast_core::synth::SynthConfig;
use gridcast_core::training::TrainConfig;
use gridcast_core::{Bbox, Error, EvalConfig, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,

    // data pipeline
    pub trips_csv: Option<PathBuf>,
    pub weather_csv: Option<PathBuf>,
    pub holidays_csv: Option<PathBuf>,
    pub bbox: Option<Bbox>,
    pub t0: Option<NaiveDateTime>,
    pub intervals: Option<usize>,
    pub rows: usize,
    pub cols: usize,
    pub mask_upper: f64,
    /// Test split: the last N days are held out (model never trains on them).
    pub holdout_days: usize,
    /// Validation split for early stopping: the N days before the holdout.
    pub val_days: usize,
    /// Subsample training times (every Nth interval).
    pub train_t_stride: usize,
    /// Subsample validation times (every Nth interval).
    pub val_t_stride: usize,
    /// Wall-clock seconds in the history CSV; off keeps same-seed runs
    /// byte-identical.
    pub with_timing: bool,

    // artifacts
    pub dataset_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
    pub eval_path: PathBuf,
    pub predict_path: PathBuf,
    pub report_path: PathBuf,

    // evaluate / predict
    pub forecaster: ForecasterKind,
    pub predict_t_start: Option<usize>,
    pub predict_t_end: Option<usize>,
    pub predict_steps: usize,

    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecasterKind {
    Model,
    HistoricalAverage,
    Persistence,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            trips_csv: None,
            weather_csv: None,
            holidays_csv: None,
            bbox: None,
            t0: None,
            intervals: None,
            rows: 10,
            cols: 10,
            mask_upper: DEFAULT_MASK_UPPER,
            holdout_days: 20,
            val_days: 5,
            train_t_stride: 1,
            val_t_stride: 1,
            with_timing: false,
            dataset_path: "dataset.gc".into(),
            checkpoint_path: "model.gc".into(),
            history_path: "history.csv".into(),
            eval_path: "eval.csv".into(),
            predict_path: "predictions.csv".into(),
            report_path: "report.csv".into(),
            forecaster: ForecasterKind::Model,
            predict_t_start: None,
            predict_t_end: None,
            predict_steps: 4,
            seed: 0,
        }
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("config line {line}: {msg}"))
}

fn parse_as<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(line, format!("bad value '{v}' for {key}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(line, format!("bad boolean '{v}' for {key}"))),
    }
}

fn parse_timestamp(line: usize, v: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(v, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(v, "%Y-%m-%d %H:%M:%S"))
        .map_err(|_| bad(line, format!("bad timestamp '{v}' (expected YYYY-MM-DDTHH:MM:SS)")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        // collect keys to diagnose unknown ones with their line numbers
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(lineno, format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            seen.insert(key, lineno);
            cfg.apply(lineno, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_as(line, key, v)?,

            // model
            "patch_size" => self.model.patch_size = parse_as(line, key, v)?,
            "conv_layers" => self.model.conv_layers = parse_as(line, key, v)?,
            "filters" => self.model.filters = parse_as(line, key, v)?,
            "hidden" => self.model.hidden = parse_as(line, key, v)?,
            "tau_short" => self.model.tau_short = parse_as(line, key, v)?,
            "half_window" => self.model.half_window = parse_as(line, key, v)?,
            "hour_anchors" => {
                self.model.hour_anchors = if v.is_empty() || v == "none" {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|s| parse_as(line, key, s.trim()))
                        .collect::<Result<_>>()?
                };
            }
            "daily_anchors" => self.model.daily_anchors = parse_as(line, key, v)?,
            "weekly_anchors" => self.model.weekly_anchors = parse_as(line, key, v)?,
            "interval_minutes" => self.model.interval_minutes = parse_as(line, key, v)?,
            "intervals_per_day" => self.model.intervals_per_day = parse_as(line, key, v)?,

            // training
            "batch_size" => self.train.batch_size = parse_as(line, key, v)?,
            "learning_rate" => self.train.learning_rate = parse_as(line, key, v)?,
            "max_epochs" => self.train.max_epochs = parse_as(line, key, v)?,
            "patience" => self.train.patience = parse_as(line, key, v)?,
            "cnn_freeze_epochs" => self.train.cnn_freeze_epochs = parse_as(line, key, v)?,
            "with_timing" => self.with_timing = parse_bool(line, key, v)?,
            "train_t_stride" => self.train_t_stride = parse_as(line, key, v)?,
            "val_t_stride" => self.val_t_stride = parse_as(line, key, v)?,

            // evaluation
            "horizons" => self.eval.horizons = parse_as(line, key, v)?,
            "eval_t_stride" => self.eval.t_stride = parse_as(line, key, v)?,
            "mape_floor" => self.eval.mape_floor = parse_as(line, key, v)?,
            "forecaster" => {
                self.forecaster = match v {
                    "model" => ForecasterKind::Model,
                    "historical_average" => ForecasterKind::HistoricalAverage,
                    "persistence" => ForecasterKind::Persistence,
                    _ => return Err(bad(line, format!("unknown forecaster '{v}'"))),
                };
            }

            // data pipeline
            "trips_csv" => self.trips_csv = Some(v.into()),
            "weather_csv" => self.weather_csv = Some(v.into()),
            "holidays_csv" => self.holidays_csv = Some(v.into()),
            "bbox_min_lat" | "bbox_max_lat" | "bbox_min_lon" | "bbox_max_lon" => {
                let b = self.bbox.get_or_insert(Bbox {
                    min_lat: f64::NAN,
                    max_lat: f64::NAN,
                    min_lon: f64::NAN,
                    max_lon: f64::NAN,
                });
                let val: f64 = parse_as(line, key, v)?;
                match key {
                    "bbox_min_lat" => b.min_lat = val,
                    "bbox_max_lat" => b.max_lat = val,
                    "bbox_min_lon" => b.min_lon = val,
                    _ => b.max_lon = val,
                }
            }
            "t0" => self.t0 = Some(parse_timestamp(line, v)?),
            "intervals" => self.intervals = Some(parse_as(line, key, v)?),
            "rows" => self.rows = parse_as(line, key, v)?,
            "cols" => self.cols = parse_as(line, key, v)?,
            "mask_upper" => self.mask_upper = parse_as(line, key, v)?,
            "holdout_days" => self.holdout_days = parse_as(line, key, v)?,
            "val_days" => self.val_days = parse_as(line, key, v)?,

            // synthetic generator
            "synth_days" => self.synth.days = parse_as(line, key, v)?,
            "synth_base_amplitude" => self.synth.base_amplitude = parse_as(line, key, v)?,
            "synth_daily_weight" => self.synth.daily_weight = parse_as(line, key, v)?,
            "synth_weekly_weight" => self.synth.weekly_weight = parse_as(line, key, v)?,
            "synth_peak_coupling_rho" => self.synth.peak_coupling_rho = parse_as(line, key, v)?,
            "synth_rain_prob" => self.synth.weather_dip_prob = parse_as(line, key, v)?,
            "synth_rain_dip" => self.synth.weather_dip_factor = parse_as(line, key, v)?,
            "synth_noise" => self.synth.noise = parse_as(line, key, v)?,
            "synth_missing_rate" => self.synth.missing_rate = parse_as(line, key, v)?,
            "synth_outlier_rate" => self.synth.outlier_rate = parse_as(line, key, v)?,

            // artifacts
            "dataset_path" => self.dataset_path = v.into(),
            "checkpoint_path" => self.checkpoint_path = v.into(),
            "history_path" => self.history_path = v.into(),
            "eval_path" => self.eval_path = v.into(),
            "predict_path" => self.predict_path = v.into(),
            "report_path" => self.report_path = v.into(),

            // predict
            "predict_t_start" => self.predict_t_start = Some(parse_as(line, key, v)?),
            "predict_t_end" => self.predict_t_end = Some(parse_as(line, key, v)?),
            "predict_steps" => self.predict_steps = parse_as(line, key, v)?,

            _ => return Err(bad(line, format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("rows and cols must be positive".into()));
        }
        if self.holdout_days == 0 || self.val_days == 0 {
            return Err(Error::Config("holdout_days and val_days must be positive".into()));
        }
        if self.train_t_stride == 0 || self.val_t_stride == 0 || self.predict_steps == 0 {
            return Err(Error::Config(
                "train_t_stride, val_t_stride and predict_steps must be positive".into(),
            ));
        }
        if !(self.mask_upper > 0.0) {
            return Err(Error::Config(format!(
                "mask_upper must be positive, got {}",
                self.mask_upper
            )));
        }
        if let Some(b) = self.bbox {
            if [b.min_lat, b.max_lat, b.min_lon, b.max_lon]
                .iter()
                .any(|v| v.is_nan())
            {
                return Err(Error::Config(
                    "bbox requires all four of bbox_min_lat/bbox_max_lat/bbox_min_lon/bbox_max_lon"
                        .into(),
                ));
            }
            b.validate()?;
        }
        Ok(())
    }

    /// Synthetic generator config aligned with the model clock and grid.
    pub fn synth_for_run(&self) -> SynthConfig {
        SynthConfig {
            rows: self.rows,
            cols: self.cols,
            intervals_per_day: self.model.intervals_per_day,
            interval_minutes: self.model.interval_minutes,
            seed: self.seed,
            ..self.synth.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.holdout_days, 20);
        assert_eq!(cfg.model.hour_anchors, vec![22]);
        assert!(!cfg.with_timing);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = RunConfig::parse(
            "# scaled run\nhidden = 32\nhalf_window = 2\nseed = 9\nhour_anchors = 22,44\n\nlearning_rate = 0.05\n",
        )
        .unwrap();
        assert_eq!(cfg.model.hidden, 32);
        assert_eq!(cfg.model.half_window, 2);
        assert_eq!(cfg.model.hour_anchors, vec![22, 44]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.learning_rate, 0.05);
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let err = RunConfig::parse("hidden = 32\nhiden = 16\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("hiden"), "{msg}");
    }

    #[test]
    fn bad_value_reports_line_number() {
        let err = RunConfig::parse("\n\nbatch_size = many\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(RunConfig::parse("patch_size = 4\n").is_err());
        assert!(RunConfig::parse("learning_rate = -1\n").is_err());
        assert!(RunConfig::parse("holdout_days = 0\n").is_err());
    }

    #[test]
    fn partial_bbox_rejected() {
        let err = RunConfig::parse("bbox_min_lat = 40.0\n").unwrap_err();
        assert!(err.to_string().contains("bbox"), "{err}");
    }
}
