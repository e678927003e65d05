//! Synthetic B-mode frames and the vessel measurement pipeline.

mod render;
mod segment;

pub use render::{render_frame, SpeckleBank};
pub use segment::{segment_vessel, segment_vessel_near, Component, Mask, SegmentParams};

use serde::Deserialize;
use thiserror::Error;

use crate::error::ConfigError;
use crate::spatial::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid measure: w = {w}, h = {h}")]
    InvalidMeasure { w: f64, h: f64 },
    #[error("vessel not found in frame")]
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    pub image_width: usize,
    pub image_height: usize,
    pub mm_per_px: f64,
    pub footprint_length_mm: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            image_width: 512,
            image_height: 512,
            mm_per_px: 0.1,
            footprint_length_mm: 51.2,
        }
    }
}

impl ProbeSpec {
    pub fn px(&self) -> f64 {
        self.mm_per_px * 1e-3
    }
}

/// Saturating compression: `h' = h·F0/(F + F0)`, width grows to keep area.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionModel {
    pub f0: f64,
}

impl Default for CompressionModel {
    fn default() -> Self {
        Self { f0: 8.0 }
    }
}

impl CompressionModel {
    /// Height ratio `h'/h` under normal force `f`.
    pub fn squash(&self, f: f64) -> f64 {
        let f = f.max(0.0);
        1.0 - f / (f + self.f0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UltrasoundConfig {
    pub probe: ProbeSpec,
    pub compression: CompressionModel,
    pub segment: SegmentParams,
    pub center_box_px: usize,
    pub frame_rate_hz: f64,
    /// Angle between the array and a vessel below which it renders as a
    /// longitudinal band.
    pub longitudinal_tolerance_deg: f64,
    pub background: f64,
    pub vessel_intensity: f64,
    /// Shape of the gamma speckle law; larger is smoother.
    pub speckle_looks: f64,
    pub speckle_bank: usize,
}

impl Default for UltrasoundConfig {
    fn default() -> Self {
        Self {
            probe: ProbeSpec::default(),
            compression: CompressionModel::default(),
            segment: SegmentParams::default(),
            center_box_px: 50,
            frame_rate_hz: 10.0,
            longitudinal_tolerance_deg: 5.0,
            background: 120.0,
            vessel_intensity: 12.0,
            speckle_looks: 4.0,
            speckle_bank: 8,
        }
    }
}

impl UltrasoundConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.probe;
        if p.image_width == 0 || p.image_height == 0 || !(p.mm_per_px > 0.0) || !(p.footprint_length_mm > 0.0) {
            return Err(ConfigError::Invalid("probe dimensions must be positive".into()));
        }
        if !(self.compression.f0 > 0.0) {
            return Err(ConfigError::Invalid("compression f0 must be > 0".into()));
        }
        if !(self.frame_rate_hz > 0.0) || !(self.speckle_looks > 0.0) || self.speckle_bank == 0 {
            return Err(ConfigError::Invalid("frame rate, speckle looks and bank size must be > 0".into()));
        }
        if !(self.vessel_intensity >= 0.0 && self.vessel_intensity <= 30.0) {
            return Err(ConfigError::Invalid("vessel intensity must lie in [0, 30]".into()));
        }
        if !(self.background > 0.0 && self.background <= 255.0) {
            return Err(ConfigError::Invalid("background must lie in (0, 255]".into()));
        }
        if self.center_box_px == 0 || self.center_box_px > p.image_width {
            return Err(ConfigError::Invalid("center box must fit in the image".into()));
        }
        Ok(())
    }
}

/// Row-major 8-bit image; row index is depth.
#[derive(Debug, Clone, PartialEq)]
pub struct UltrasoundFrame {
    pub width: usize,
    pub height: usize,
    pub intensities: Vec<u8>,
    pub frame_id: u64,
    pub probe: Pose,
    /// Inclusive-exclusive column interval of the center box.
    pub center_box: (usize, usize),
}

impl UltrasoundFrame {
    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.intensities[row * self.width + col]
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.intensities);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselMeasure {
    /// (column, row) in pixels.
    pub centroid: (f64, f64),
    /// Lateral extent, px.
    pub w: f64,
    /// Depth extent, px.
    pub h: f64,
    pub e: f64,
    pub found: bool,
}

impl VesselMeasure {
    pub fn not_found() -> Self {
        Self {
            centroid: (0.0, 0.0),
            w: 0.0,
            h: 0.0,
            e: 0.0,
            found: false,
        }
    }
}

/// `√(1 − h²/w²)`, with the axes swapped first when `h > w`.
pub fn eccentricity(w: f64, h: f64) -> Result<f64, MeasureError> {
    if !(w > 0.0 && h > 0.0) {
        return Err(MeasureError::InvalidMeasure { w, h });
    }
    let (major, minor) = if h > w { (h, w) } else { (w, h) };
    let r = minor / major;
    Ok((1.0 - r * r).sqrt())
}

/// Absolute lateral distance of the centroid from the image center line.
pub fn centroid_deviation(measure: &VesselMeasure, frame: &UltrasoundFrame) -> Result<f64, MeasureError> {
    signed_centroid_deviation(measure, frame.width).map(f64::abs)
}

pub fn signed_centroid_deviation(measure: &VesselMeasure, width: usize) -> Result<f64, MeasureError> {
    if !measure.found {
        return Err(MeasureError::NotFound);
    }
    Ok(measure.centroid.0 - width as f64 / 2.0)
}
