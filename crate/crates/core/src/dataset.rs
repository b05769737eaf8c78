//! A fully prepared dataset (raw grid, normalization, mask, externals) and
//! its persisted container form, shared by the real-data and synthetic paths.

use std::path::Path;

use chrono::NaiveDateTime;

use crate::container::{self, f64_from_meta, f64_to_meta, ArrayData, Container};
use crate::data::{
    build_mask, Bbox, ExternalTable, MaskGrid, Scaler, VolumeGrid, CHANNELS,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const DATASET_KIND: &str = "gridcast-dataset";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub raw: VolumeGrid,
    pub normalized: VolumeGrid,
    pub mask: MaskGrid,
    pub external: ExternalTable,
    pub scaler: Scaler,
    /// First test interval; the scaler is fit on [0, train_end).
    pub train_end: usize,
    pub mask_upper: f64,
}

impl Dataset {
    /// Fit the scaler on the training range, normalize, and derive the mask.
    pub fn prepare(
        raw: VolumeGrid,
        external: ExternalTable,
        train_end: usize,
        mask_upper: f64,
    ) -> Result<Self> {
        if external.intervals() != raw.intervals() {
            return Err(Error::Config(format!(
                "external table covers {} intervals but the grid has {}",
                external.intervals(),
                raw.intervals()
            )));
        }
        let scaler = Scaler::fit(&raw, train_end)?;
        let normalized = scaler.normalize(&raw)?;
        let mask = build_mask(&normalized, mask_upper);
        Ok(Dataset { raw, normalized, mask, external, scaler, train_end, mask_upper })
    }

    pub fn intervals(&self) -> usize {
        self.raw.intervals()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = vec![
            ("kind".into(), DATASET_KIND.into()),
            ("t0".into(), self.raw.t0.format("%Y-%m-%dT%H:%M:%S").to_string()),
            ("interval_minutes".into(), self.raw.interval_minutes.to_string()),
            ("train_end".into(), self.train_end.to_string()),
            ("mask_upper".into(), f64_to_meta(self.mask_upper)),
        ];
        if let Some(b) = self.raw.bbox {
            meta.push(("bbox_min_lat".into(), f64_to_meta(b.min_lat)));
            meta.push(("bbox_max_lat".into(), f64_to_meta(b.max_lat)));
            meta.push(("bbox_min_lon".into(), f64_to_meta(b.min_lon)));
            meta.push(("bbox_max_lon".into(), f64_to_meta(b.max_lon)));
        }
        let mask_bytes: Vec<u8> = self.mask.valid.iter().map(|&v| v as u8).collect();
        let c = Container {
            meta,
            arrays: vec![
                ("volume".into(), ArrayData::F64(self.raw.values.clone())),
                (
                    "mask".into(),
                    ArrayData::U8 {
                        shape: vec![self.mask.intervals, self.mask.rows, self.mask.cols],
                        data: mask_bytes,
                    },
                ),
                ("external".into(), ArrayData::F64(self.external.features.clone())),
                ("scaler_min".into(), ArrayData::F64(Tensor::vector(self.scaler.min.to_vec()))),
                ("scaler_max".into(), ArrayData::F64(Tensor::vector(self.scaler.max.to_vec()))),
            ],
        };
        container::write(path, &c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = container::read(path)?;
        if c.meta_get("kind")? != DATASET_KIND {
            return Err(Error::Format(format!("{} is not a dataset file", path.display())));
        }
        let t0 = NaiveDateTime::parse_from_str(c.meta_get("t0")?, "%Y-%m-%dT%H:%M:%S")
            .map_err(|_| Error::Format("bad t0 timestamp in dataset".into()))?;
        let interval_minutes: u32 = c
            .meta_get("interval_minutes")?
            .parse()
            .map_err(|_| Error::Format("bad interval_minutes in dataset".into()))?;
        let train_end: usize = c
            .meta_get("train_end")?
            .parse()
            .map_err(|_| Error::Format("bad train_end in dataset".into()))?;
        let mask_upper = f64_from_meta(c.meta_get("mask_upper")?)?;

        let volume = c.tensor_get("volume")?.clone();
        if volume.shape().len() != 4 || volume.shape()[3] != CHANNELS {
            return Err(Error::Format(format!(
                "dataset volume has shape {:?}, expected [T, rows, cols, 2]",
                volume.shape()
            )));
        }
        let bbox = match c.meta_get("bbox_min_lat") {
            Ok(v) => Some(Bbox {
                min_lat: f64_from_meta(v)?,
                max_lat: f64_from_meta(c.meta_get("bbox_max_lat")?)?,
                min_lon: f64_from_meta(c.meta_get("bbox_min_lon")?)?,
                max_lon: f64_from_meta(c.meta_get("bbox_max_lon")?)?,
            }),
            Err(_) => None,
        };
        let raw = VolumeGrid { values: volume, t0, interval_minutes, bbox };

        let (mask_shape, mask_data) = match c.array_get("mask")? {
            ArrayData::U8 { shape, data } => (shape.clone(), data.clone()),
            _ => return Err(Error::Format("dataset mask must be a u8 array".into())),
        };
        if mask_shape.len() != 3 {
            return Err(Error::Format("dataset mask must be 3-dimensional".into()));
        }
        let mask = MaskGrid {
            valid: mask_data.iter().map(|&b| b != 0).collect(),
            intervals: mask_shape[0],
            rows: mask_shape[1],
            cols: mask_shape[2],
        };

        let external = ExternalTable { features: c.tensor_get("external")?.clone() };

        let smin = c.tensor_get("scaler_min")?;
        let smax = c.tensor_get("scaler_max")?;
        if smin.len() != CHANNELS || smax.len() != CHANNELS {
            return Err(Error::Format("dataset scaler arrays must have one bound per channel".into()));
        }
        let scaler = Scaler::from_bounds(
            [smin.data()[0], smin.data()[1]],
            [smax.data()[0], smax.data()[1]],
        );
        let normalized = scaler.normalize(&raw)?;
        Ok(Dataset { raw, normalized, mask, external, scaler, train_end, mask_upper })
    }
}
