//! Flat parameter storage with named segments.

use crate::error::{Error, Result};

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Flat parameter values plus a layout that partitions them exactly.
///
/// Flattening is canonical: segments appear in storage order with no gaps or
/// overlaps, so two vectors with equal layouts are comparable coordinate by
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0;
        for seg in &layout {
            if seg.start != cursor {
                return Err(Error::invalid(format!(
                    "segment {} starts at {} but previous segments end at {cursor}",
                    seg.name, seg.start
                )));
            }
            cursor += seg.len;
        }
        if cursor != values.len() {
            return Err(Error::invalid(format!(
                "layout covers {cursor} values but storage holds {}",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Zero vector with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.start..s.start + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let seg = self.layout.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.values[seg.start..seg.start + seg.len])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Coordinatewise `self += scale * other`; layouts must match.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::dims("parameter layouts differ"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }
}
