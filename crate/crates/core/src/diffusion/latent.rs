use std::fmt;

use super::DiffusionError;

/// Channel/height/width triple of a latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A C×H×W latent tensor stored row-major (channel, then row, then column).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    shape: GridShape,
    values: Vec<f32>,
}

impl LatentGrid {
    pub fn new(shape: GridShape, values: Vec<f32>) -> Result<Self, DiffusionError> {
        if shape.is_empty() {
            return Err(DiffusionError::EmptyGrid(shape));
        }
        if values.len() != shape.len() {
            return Err(DiffusionError::ValueCount {
                shape,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite);
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: GridShape, value: f32) -> Self {
        assert!(!shape.is_empty(), "latent grid must be non-empty");
        assert!(value.is_finite());
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable access for callers that keep values finite (hooks, blending).
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &LatentGrid) -> Result<(), DiffusionError> {
        if self.shape != other.shape {
            return Err(DiffusionError::ShapeMismatch {
                expected: self.shape,
                found: other.shape,
            });
        }
        Ok(())
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> f32 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_value_count() {
        let err = LatentGrid::new(GridShape::new(1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, DiffusionError::ValueCount { found: 3, .. }));
    }

    #[test]
    fn rejects_non_finite() {
        let err = LatentGrid::new(GridShape::new(1, 1, 2), vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, DiffusionError::NonFinite));
    }

    #[test]
    fn indexing_is_channel_major() {
        let g = LatentGrid::new(GridShape::new(2, 2, 3), (0..12).map(|v| v as f32).collect())
            .unwrap();
        assert_eq!(g.get(1, 0, 0), 6.0);
        assert_eq!(g.get(0, 1, 2), 5.0);
    }
}
