//! Dynamic spatio-temporal traffic-volume forecasting: local CNN spatial
//! encoding, masked bidirectional LSTMs, multi-scale periodic attention, and
//! external-feature fusion, plus the ingest/train/evaluate pipeline around
//! the model.

pub mod autodiff;
pub mod container;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod verify;

pub use autodiff::{Graph, NodeId, Param, ParamId, ParamStore};
pub use data::{
    build_external, build_mask, parse_holidays_csv, parse_trips, parse_weather_csv, rasterize,
    Bbox, ExternalTable, MaskGrid, Scaler, TripRecord, VolumeGrid, CHANNELS, EXTERNAL_DIM,
};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, EvalReport, Forecaster, HistoricalAverage, ModelForecaster, Persistence};
pub use model::{
    build_sample, load_checkpoint, predict_horizon, save_checkpoint, usable_samples, BranchKind,
    ModelConfig, ModelParams, Sample,
};
pub use synth::{generate, generate_dataset, SynthConfig, SynthOracle};
pub use tensor::Tensor;
pub use training::{fit, Adagrad, TrainConfig, TrainHistory};
