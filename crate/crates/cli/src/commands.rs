//! Subcommand implementations. Each one reads a RunConfig, produces its
//! artifacts by overwriting (never appending), and stays deterministic for a
//! fixed config + seed.

use std::fmt::Write as _;

use gridcast_core::data::{build_external, parse_holidays_csv, parse_trips, parse_weather_csv, rasterize};
use gridcast_core::eval::{evaluate, HistoricalAverage, ModelForecaster, Persistence};
use gridcast_core::model::{
    load_checkpoint, predict_horizon, save_checkpoint, usable_samples, ModelParams, Sample,
};
use gridcast_core::synth::generate_dataset;
use gridcast_core::training::fit;
use gridcast_core::{Dataset, Error, Result};

use crate::config::{ForecasterKind, RunConfig};

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let trips_csv = cfg
        .trips_csv
        .as_deref()
        .ok_or_else(|| Error::Config("ingest requires trips_csv".into()))?;
    let weather_csv = cfg
        .weather_csv
        .as_deref()
        .ok_or_else(|| Error::Config("ingest requires weather_csv".into()))?;
    let bbox = cfg
        .bbox
        .ok_or_else(|| Error::Config("ingest requires a bounding box".into()))?;
    let t0 = cfg
        .t0
        .ok_or_else(|| Error::Config("ingest requires t0".into()))?;
    let intervals = cfg
        .intervals
        .ok_or_else(|| Error::Config("ingest requires intervals".into()))?;

    let (trips, tstats) = parse_trips(trips_csv)?;
    let (grid, rstats) = rasterize(
        &trips,
        bbox,
        t0,
        intervals,
        cfg.model.interval_minutes,
        cfg.rows,
        cfg.cols,
    )?;
    let weather = parse_weather_csv(weather_csv)?;
    let holidays = match cfg.holidays_csv.as_deref() {
        Some(p) => parse_holidays_csv(p)?,
        None => Vec::new(),
    };
    let train_end = train_end_for(cfg, intervals)?;
    let external = build_external(
        &weather,
        &holidays,
        t0,
        intervals,
        cfg.model.interval_minutes,
        train_end,
    )?;
    let ds = Dataset::prepare(grid, external, train_end, cfg.mask_upper)?;
    ds.save(&cfg.dataset_path)?;
    println!(
        "ingest: {} trips parsed ({} malformed), {} pickups + {} dropoffs binned ({} + {} dropped), dataset -> {}",
        tstats.parsed,
        tstats.malformed,
        rstats.pickups_binned,
        rstats.dropoffs_binned,
        rstats.pickups_dropped,
        rstats.dropoffs_dropped,
        cfg.dataset_path.display()
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let sc = cfg.synth_for_run();
    let intervals = sc.days * sc.intervals_per_day;
    let train_end = train_end_for(cfg, intervals)?;
    let (ds, oracle) = generate_dataset(&sc, train_end, cfg.mask_upper)?;
    ds.save(&cfg.dataset_path)?;
    println!(
        "synth: {} intervals on a {}x{} grid ({} missing, {} outliers injected), dataset -> {}",
        intervals,
        sc.rows,
        sc.cols,
        oracle.injected_missing.len(),
        oracle.injected_outliers.len(),
        cfg.dataset_path.display()
    );
    Ok(())
}

/// First held-out test interval under the last-N-days split.
fn train_end_for(cfg: &RunConfig, intervals: usize) -> Result<usize> {
    let holdout = cfg.holdout_days * cfg.model.intervals_per_day;
    if holdout >= intervals {
        return Err(Error::Config(format!(
            "holdout of {} days consumes all {} intervals",
            cfg.holdout_days, intervals
        )));
    }
    Ok(intervals - holdout)
}

fn check_compatibility(cfg_model: &gridcast_core::ModelConfig, ds: &Dataset) -> Result<()> {
    if cfg_model.interval_minutes != ds.raw.interval_minutes {
        return Err(Error::Config(format!(
            "model expects {}-minute intervals but the dataset uses {}",
            cfg_model.interval_minutes, ds.raw.interval_minutes
        )));
    }
    if cfg_model.external_dim != ds.external.dim() {
        return Err(Error::Config(format!(
            "model expects {} external features but the dataset provides {}",
            cfg_model.external_dim,
            ds.external.dim()
        )));
    }
    let need = cfg_model.patch_size;
    if ds.raw.rows() < 1 || ds.raw.cols() < 1 || need == 0 {
        return Err(Error::Config("degenerate dataset grid".into()));
    }
    Ok(())
}

fn split_samples(cfg: &RunConfig, ds: &Dataset) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let test_start = ds.train_end;
    let val_span = cfg.val_days * cfg.model.intervals_per_day;
    if val_span >= test_start {
        return Err(Error::Config(format!(
            "val_days of {} days leaves no training data before interval {}",
            cfg.val_days, test_start
        )));
    }
    let val_start = test_start - val_span;
    let mut train = usable_samples(&ds.normalized, &ds.mask, &ds.external, &cfg.model, 0, val_start);
    if cfg.train_t_stride > 1 {
        let stride = cfg.train_t_stride;
        train.retain(|s| s.t % stride == 0);
    }
    let mut val = usable_samples(
        &ds.normalized,
        &ds.mask,
        &ds.external,
        &cfg.model,
        val_start,
        test_start,
    );
    if cfg.val_t_stride > 1 {
        let stride = cfg.val_t_stride;
        val.retain(|s| s.t % stride == 0);
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "split produced {} training and {} validation samples; widen the data or shrink the splits",
            train.len(),
            val.len()
        )));
    }
    Ok((train, val))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(&cfg.dataset_path)?;
    check_compatibility(&cfg.model, &ds)?;
    let (train_set, val_set) = split_samples(cfg, &ds)?;
    let mut params = ModelParams::init(cfg.model.clone(), cfg.seed)?;
    let history = fit(&mut params, &train_set, &val_set, &cfg.train)?;
    save_checkpoint(&cfg.checkpoint_path, &params)?;
    std::fs::write(&cfg.history_path, history.to_csv(cfg.with_timing))?;
    println!(
        "train: {} train / {} val samples, {} epochs, best val loss {:.6e} at epoch {}, checkpoint -> {}",
        train_set.len(),
        val_set.len(),
        history.epochs.len(),
        history.best_val_loss,
        history.best_epoch,
        cfg.checkpoint_path.display()
    );
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(&cfg.dataset_path)?;
    let test_start = ds.train_end;
    let t_hi = ds.intervals().saturating_sub(1);
    if test_start >= t_hi {
        return Err(Error::Config("dataset has no held-out test range".into()));
    }
    let report = match cfg.forecaster {
        ForecasterKind::Model => {
            let params = load_checkpoint(&cfg.checkpoint_path)?;
            check_compatibility(&params.cfg, &ds)?;
            evaluate(&ds, &ModelForecaster(&params), &cfg.eval, test_start, t_hi)?
        }
        ForecasterKind::HistoricalAverage => {
            let ha = HistoricalAverage::fit(&ds, cfg.model.intervals_per_day)?;
            evaluate(&ds, &ha, &cfg.eval, test_start, t_hi)?
        }
        ForecasterKind::Persistence => evaluate(&ds, &Persistence, &cfg.eval, test_start, t_hi)?,
    };
    std::fs::write(&cfg.eval_path, report.to_csv())?;
    println!(
        "evaluate: {} rows over test intervals [{test_start}, {t_hi}) -> {}",
        report.rows.len(),
        cfg.eval_path.display()
    );
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(&cfg.dataset_path)?;
    let params = load_checkpoint(&cfg.checkpoint_path)?;
    check_compatibility(&params.cfg, &ds)?;
    let t_start = cfg.predict_t_start.unwrap_or(ds.train_end);
    let t_end = cfg
        .predict_t_end
        .unwrap_or_else(|| ds.intervals().saturating_sub(1));
    if t_start >= t_end || t_end > ds.intervals() {
        return Err(Error::Config(format!(
            "predict range [{t_start}, {t_end}) out of bounds for {} intervals",
            ds.intervals()
        )));
    }
    let mut out = String::from("row,col,t,horizon_minutes,start,end\n");
    for t in t_start..t_end {
        for r in 0..ds.raw.rows() {
            for c in 0..ds.raw.cols() {
                let preds = predict_horizon(
                    &params,
                    &ds.normalized,
                    &ds.mask,
                    &ds.external,
                    (r, c),
                    t,
                    cfg.predict_steps,
                )?;
                for (i, (s, e)) in preds.into_iter().enumerate() {
                    let s = ds.scaler.denormalize_value(0, s)?;
                    let e = ds.scaler.denormalize_value(1, e)?;
                    let h = (i as u32 + 1) * ds.raw.interval_minutes;
                    writeln!(out, "{r},{c},{t},{h},{s:.6},{e:.6}").expect("string write");
                }
            }
        }
    }
    std::fs::write(&cfg.predict_path, out)?;
    println!("predict: wrote {}", cfg.predict_path.display());
    Ok(())
}

/// Returns false when any layer misses the tolerance (caller exits 5).
pub fn gradcheck() -> Result<bool> {
    let results = gridcast_core::verify::run_all(1e-5, 1e-4)?;
    let mut ok = true;
    for (name, err) in &results {
        let status = if *err < 1e-4 { "ok" } else { "FAIL" };
        println!("gradcheck {name}: max relative error {err:.3e} [{status}]");
        ok &= *err < 1e-4;
    }
    Ok(ok)
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let history = std::fs::read_to_string(&cfg.history_path)?;
    let eval = std::fs::read_to_string(&cfg.eval_path)?;
    let mut out = String::from("section,key,value\n");

    let mut last: Option<(String, String, String)> = None;
    let mut best: Option<(usize, f64)> = None;
    for line in history.lines().skip(1) {
        let mut f = line.split(',');
        let (Some(epoch), Some(train_loss), Some(val_loss)) = (f.next(), f.next(), f.next()) else {
            return Err(Error::Format(format!("bad history row '{line}'")));
        };
        let e: usize = epoch
            .parse()
            .map_err(|_| Error::Format(format!("bad epoch '{epoch}' in history")))?;
        let v: f64 = val_loss
            .parse()
            .map_err(|_| Error::Format(format!("bad val_loss '{val_loss}' in history")))?;
        if best.map_or(true, |(_, bv)| v < bv) {
            best = Some((e, v));
        }
        last = Some((epoch.into(), train_loss.into(), val_loss.into()));
    }
    let (Some((epochs, train_loss, val_loss)), Some((best_epoch, best_val))) = (last, best) else {
        return Err(Error::Format("history CSV holds no epochs".into()));
    };
    writeln!(out, "training,epochs,{epochs}").expect("string write");
    writeln!(out, "training,final_train_loss,{train_loss}").expect("string write");
    writeln!(out, "training,final_val_loss,{val_loss}").expect("string write");
    writeln!(out, "training,best_epoch,{best_epoch}").expect("string write");
    writeln!(out, "training,best_val_loss,{best_val:.12}").expect("string write");

    for line in eval.lines().skip(1) {
        let mut f = line.split(',');
        let (Some(slice), Some(channel), Some(h), Some(rmse), Some(mape), Some(n)) =
            (f.next(), f.next(), f.next(), f.next(), f.next(), f.next())
        else {
            return Err(Error::Format(format!("bad evaluation row '{line}'")));
        };
        writeln!(out, "eval,rmse_{slice}_{channel}_{h}m,{rmse}").expect("string write");
        writeln!(out, "eval,mape_{slice}_{channel}_{h}m,{mape}").expect("string write");
        writeln!(out, "eval,n_{slice}_{channel}_{h}m,{n}").expect("string write");
    }
    std::fs::write(&cfg.report_path, out)?;
    println!("report: wrote {}", cfg.report_path.display());
    Ok(())
}
