//! Sensor schema, min-max normalization, one-hot encoding and observation
//! windows.
//!
//! Feature layout of an encoded row: every continuous sensor in
//! registration order, followed by one one-hot block per categorical sensor
//! in registration order. All entries lie in `[0, 1]`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SensorKind {
    Continuous { min: f64, max: f64 },
    Categorical { categories: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
}

impl SensorSpec {
    pub fn continuous(id: impl Into<String>, min: f64, max: f64) -> Result<Self> {
        let id = id.into();
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::Schema(format!(
                "sensor {id}: calibrated range needs min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self {
            id,
            kind: SensorKind::Continuous { min, max },
        })
    }

    pub fn categorical(id: impl Into<String>, categories: usize) -> Result<Self> {
        let id = id.into();
        if categories < 2 {
            return Err(Error::Schema(format!(
                "sensor {id}: needs at least 2 categories, got {categories}"
            )));
        }
        Ok(Self {
            id,
            kind: SensorKind::Categorical { categories },
        })
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, SensorKind::Continuous { .. })
    }

    /// Number of encoded columns this sensor occupies.
    pub fn width(&self) -> usize {
        match self.kind {
            SensorKind::Continuous { .. } => 1,
            SensorKind::Categorical { categories } => categories,
        }
    }
}

/// A raw sensor value: a float for continuous sensors, a category index for
/// categorical ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Reading {
    Value(f64),
    Category(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Simulation seconds.
    pub timestamp: f64,
    pub values: Vec<Reading>,
}

/// Min-max normalization, clamped to `[0, 1]` outside the calibrated range.
pub fn normalize(x: f64, spec: &SensorSpec) -> Result<f64> {
    match spec.kind {
        SensorKind::Continuous { min, max } => Ok(((x - min) / (max - min)).clamp(0.0, 1.0)),
        SensorKind::Categorical { .. } => Err(Error::usage(format!(
            "normalize called on categorical sensor {}",
            spec.id
        ))),
    }
}

pub fn one_hot(index: usize, spec: &SensorSpec) -> Result<Vec<f64>> {
    let SensorKind::Categorical { categories } = spec.kind else {
        return Err(Error::usage(format!(
            "one_hot called on continuous sensor {}",
            spec.id
        )));
    };
    if index >= categories {
        return Err(Error::Domain(format!(
            "sensor {}: category {index} out of range 0..{categories}",
            spec.id
        )));
    }
    let mut v = vec![0.0; categories];
    v[index] = 1.0;
    Ok(v)
}

/// Encoded row width for a spec list.
pub fn feature_count(specs: &[SensorSpec]) -> usize {
    specs.iter().map(SensorSpec::width).sum()
}

pub fn encode_observation(obs: &Observation, specs: &[SensorSpec]) -> Result<Vec<f64>> {
    if obs.values.len() != specs.len() {
        return Err(Error::Schema(format!(
            "observation has {} values, schema declares {} sensors",
            obs.values.len(),
            specs.len()
        )));
    }
    let mut row = Vec::with_capacity(feature_count(specs));
    for (reading, spec) in obs.values.iter().zip(specs) {
        if spec.is_continuous() {
            match reading {
                Reading::Value(x) => row.push(normalize(*x, spec)?),
                Reading::Category(_) => {
                    return Err(Error::Schema(format!(
                        "sensor {} is continuous but got a category",
                        spec.id
                    )))
                }
            }
        }
    }
    for (reading, spec) in obs.values.iter().zip(specs) {
        if !spec.is_continuous() {
            match reading {
                Reading::Category(i) => row.extend(one_hot(*i, spec)?),
                Reading::Value(_) => {
                    return Err(Error::Schema(format!(
                        "sensor {} is categorical but got a float",
                        spec.id
                    )))
                }
            }
        }
    }
    Ok(row)
}

/// Fixed-length sliding window of encoded rows.
///
/// The matrix view is `W × F` with the newest row always in the last
/// position; rows before the first valid one are zero padding. Valid rows run
/// oldest to newest.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    length: usize,
    features: usize,
    rows: VecDeque<Vec<f64>>,
}

impl ObservationWindow {
    pub fn new(length: usize, features: usize) -> Result<Self> {
        if length == 0 || features == 0 {
            return Err(Error::Schema(format!(
                "window needs positive length and width, got {length}×{features}"
            )));
        }
        Ok(Self {
            length,
            features,
            rows: VecDeque::with_capacity(length),
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn valid_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Appends a row, evicting the oldest when full.
    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.features {
            return Err(Error::Schema(format!(
                "row has {} features, window expects {}",
                row.len(),
                self.features
            )));
        }
        if self.rows.len() == self.length {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
        Ok(())
    }

    /// Value-returning form of [`push`](Self::push).
    pub fn pushed(mut self, row: Vec<f64>) -> Result<Self> {
        self.push(row)?;
        Ok(self)
    }

    /// `true` for valid positions, `false` for padding, in matrix order.
    pub fn mask(&self) -> Vec<bool> {
        let pad = self.length - self.rows.len();
        (0..self.length).map(|i| i >= pad).collect()
    }

    /// Row-major `W × F` matrix, padding first.
    pub fn matrix(&self) -> Vec<f64> {
        let pad = self.length - self.rows.len();
        let mut m = vec![0.0; pad * self.features];
        m.reserve(self.rows.len() * self.features);
        for r in &self.rows {
            m.extend_from_slice(r);
        }
        m
    }

    /// The most recent valid row, or `None` before the first push.
    pub fn latest(&self) -> Option<&[f64]> {
        self.rows.back().map(Vec::as_slice)
    }

    /// Valid rows, oldest first.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }
}
