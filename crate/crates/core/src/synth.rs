//! Synthetic spatio-temporal data with known ground truth: daily/weekly
//! periodicity, coupled morning/evening peaks, weather-driven dips, and
//! injected missing values and outlier spikes.

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ExternalTable, VolumeGrid, EXTERNAL_DIM, MISSING};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub days: usize,
    pub intervals_per_day: usize,
    pub interval_minutes: u32,
    pub t0: NaiveDateTime,
    /// Typical cell volume scale (raw trip counts).
    pub base_amplitude: f64,
    /// Strength of the morning/evening bumps relative to the floor level.
    pub daily_weight: f64,
    /// Strength of the weekend reduction.
    pub weekly_weight: f64,
    /// Evening peak level = rho · morning peak level (+ noise).
    pub peak_coupling_rho: f64,
    /// Probability a given day has a rain spell.
    pub weather_dip_prob: f64,
    /// Multiplicative volume factor during rain (1.0 = no dip).
    pub weather_dip_factor: f64,
    /// Scales per-day peak jitter and per-interval noise; 0 = fully periodic.
    pub noise: f64,
    pub missing_rate: f64,
    pub outlier_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 4,
            cols: 4,
            days: 60,
            intervals_per_day: 48,
            interval_minutes: 30,
            t0: NaiveDate::from_ymd_opt(2015, 1, 5)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(), // a Monday
            base_amplitude: 40.0,
            daily_weight: 1.0,
            weekly_weight: 1.0,
            peak_coupling_rho: 0.8,
            weather_dip_prob: 0.3,
            weather_dip_factor: 0.55,
            noise: 0.25,
            missing_rate: 0.01,
            outlier_rate: 0.005,
            seed: 7,
        }
    }
}

/// Ground-truth record of everything the generator injected.
#[derive(Debug, Clone)]
pub struct SynthOracle {
    pub injected_missing: Vec<(usize, usize, usize)>,
    pub injected_outliers: Vec<(usize, usize, usize)>,
    /// Per-interval rain flag.
    pub rainy: Vec<bool>,
    /// Per-day (morning, evening) peak levels actually drawn.
    pub peak_levels: Vec<(f64, f64)>,
    /// Clean volume before corruption, for reference.
    pub clean: Tensor,
}

const MORNING_PEAK_HOUR: f64 = 8.5;
const EVENING_PEAK_HOUR: f64 = 19.5;
const PEAK_WIDTH_HOURS: f64 = 1.0;
const FLOOR_LEVEL: f64 = 0.3;
const WEEKEND_REDUCTION: f64 = 0.3;

fn bump(hour: f64, center: f64) -> f64 {
    let z = (hour - center) / PEAK_WIDTH_HOURS;
    (-0.5 * z * z).exp()
}

pub fn generate(cfg: &SynthConfig) -> Result<(VolumeGrid, ExternalTable, SynthOracle)> {
    let intervals = cfg.days * cfg.intervals_per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Per-cell scale factors.
    let mut cell_factor = vec![0.0; cfg.rows * cfg.cols];
    for f in cell_factor.iter_mut() {
        *f = rng.gen_range(0.6..=1.4);
    }

    // Per-day peak draws: evening = rho · morning + noise. Morning levels
    // follow an AR(1) across days so adjacent days are genuinely correlated
    // (busy spells persist), which is what makes the ~11 h lookback useful.
    let mut peak_levels = Vec::with_capacity(cfg.days);
    let ar = 0.5f64;
    let mut level = 0.0f64;
    for _ in 0..cfg.days {
        let jitter_m: f64 = rng.gen_range(-1.0..=1.0);
        let jitter_e: f64 = rng.gen_range(-1.0..=1.0);
        level = ar * level + (1.0 - ar * ar).sqrt() * jitter_m;
        let morning = 1.0 + cfg.noise * level;
        let evening = cfg.peak_coupling_rho * morning + 0.3 * cfg.noise * jitter_e;
        peak_levels.push((morning, evening));
    }

    // Rain spells: per day, one contiguous block of 4..12 hours.
    let mut rainy = vec![false; intervals];
    let per_hour = 60 / cfg.interval_minutes as usize;
    for day in 0..cfg.days {
        if rng.gen_range(0.0..1.0) < cfg.weather_dip_prob {
            let len_h = rng.gen_range(4..=12usize);
            let start_h = rng.gen_range(0..(24 - len_h));
            let d0 = day * cfg.intervals_per_day;
            for h in start_h..start_h + len_h {
                for s in 0..per_hour {
                    let idx = d0 + h * per_hour + s;
                    if idx < intervals {
                        rainy[idx] = true;
                    }
                }
            }
        }
    }

    let mut grid = VolumeGrid::zeros(intervals, cfg.rows, cfg.cols, cfg.t0, cfg.interval_minutes);
    let hours_per_interval = cfg.interval_minutes as f64 / 60.0;
    for t in 0..intervals {
        let day = t / cfg.intervals_per_day;
        let tod = (t % cfg.intervals_per_day) as f64 * hours_per_interval;
        let ts = grid.time_of(t);
        let weekend = crate::data::is_weekend(ts);
        let dow_factor = if weekend { 1.0 - WEEKEND_REDUCTION * cfg.weekly_weight } else { 1.0 };
        let rain_factor = if rainy[t] { cfg.weather_dip_factor } else { 1.0 };
        let (m, e) = peak_levels[day];
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let scale = cfg.base_amplitude * cell_factor[r * cfg.cols + c];
                for ch in 0..2 {
                    // the end channel lags the start channel by one interval
                    let h = tod - ch as f64 * hours_per_interval;
                    let profile = FLOOR_LEVEL
                        + cfg.daily_weight
                            * (m * bump(h, MORNING_PEAK_HOUR) + e * bump(h, EVENING_PEAK_HOUR));
                    let mut v = scale * profile * dow_factor * rain_factor;
                    if cfg.noise > 0.0 {
                        v += scale * 0.4 * cfg.noise * rng.gen_range(-1.0..=1.0);
                    }
                    grid.set(t, r, c, ch, v.max(0.0).round());
                }
            }
        }
    }
    let clean = grid.values.clone();

    // Corruption: missing values and outlier spikes, both channels at once so
    // the cell-interval mask flips exactly at the injected positions.
    let natural_max = cfg.base_amplitude
        * 1.4
        * (FLOOR_LEVEL + cfg.daily_weight * 2.0 * (1.0 + cfg.noise))
        * 1.1;
    let mut injected_missing = Vec::new();
    let mut injected_outliers = Vec::new();
    for t in 0..intervals {
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let u: f64 = rng.gen_range(0.0..1.0);
                if u < cfg.missing_rate {
                    grid.set(t, r, c, 0, MISSING);
                    grid.set(t, r, c, 1, MISSING);
                    injected_missing.push((t, r, c));
                } else if u < cfg.missing_rate + cfg.outlier_rate {
                    let spike = 3.0 * natural_max * rng.gen_range(1.0..=1.2);
                    grid.set(t, r, c, 0, spike.round());
                    grid.set(t, r, c, 1, spike.round());
                    injected_outliers.push((t, r, c));
                }
            }
        }
    }

    let external = build_synth_external(cfg, &rainy)?;
    let oracle = SynthOracle { injected_missing, injected_outliers, rainy, peak_levels, clean };
    Ok((grid, external, oracle))
}

fn build_synth_external(cfg: &SynthConfig, rainy: &[bool]) -> Result<ExternalTable> {
    let intervals = rainy.len();
    let mut data = Vec::with_capacity(intervals * EXTERNAL_DIM);
    let hours_per_interval = cfg.interval_minutes as f64 / 60.0;
    for (t, &rain) in rainy.iter().enumerate() {
        let tod = (t % cfg.intervals_per_day) as f64 * hours_per_interval;
        let diurnal = 0.5 + 0.4 * ((tod - 14.0) / 24.0 * std::f64::consts::TAU).cos();
        let rain_f = if rain { 1.0 } else { 0.0 };
        // temperature, wind, humidity, uv, precip probability, pressure, visibility
        data.extend_from_slice(&[
            diurnal,
            0.3,
            f64::min(0.45 + 0.4 * rain_f, 1.0),
            (diurnal - 0.2).clamp(0.0, 1.0),
            rain_f,
            0.5 - 0.2 * rain_f,
            1.0 - 0.6 * rain_f,
        ]);
        let ts = cfg.t0 + chrono::Duration::minutes(cfg.interval_minutes as i64 * t as i64);
        let dow = chrono::Datelike::weekday(&ts).num_days_from_monday() as usize;
        for d in 0..7 {
            data.push(if d == dow { 1.0 } else { 0.0 });
        }
        data.push(0.0); // no synthetic holidays
    }
    Ok(ExternalTable { features: Tensor::new(vec![intervals, EXTERNAL_DIM], data)? })
}

/// Run the generator through the standard preparation pipeline.
pub fn generate_dataset(
    cfg: &SynthConfig,
    train_end: usize,
    mask_upper: f64,
) -> Result<(Dataset, SynthOracle)> {
    let (raw, external, oracle) = generate(cfg)?;
    let ds = Dataset::prepare(raw, external, train_end, mask_upper)?;
    Ok((ds, oracle))
}
