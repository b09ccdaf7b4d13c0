//! Masked injection of source latents into the edited trajectory.

use thiserror::Error;

use crate::diffusion::{GridShape, LatentGrid};
use crate::mask::BinaryMask;

#[derive(Debug, Error, PartialEq)]
pub enum BlendError {
    #[error("edited latent {edit} and source latent {src} differ in shape")]
    LatentShape { edit: GridShape, src: GridShape },
    #[error("mask is {mask:?} but latents are {latent:?}")]
    MaskShape {
        mask: (usize, usize),
        latent: (usize, usize),
    },
    #[error("injection window must satisfy 0 <= start <= end <= 1, got [{start}, {end}]")]
    InvalidWindow { start: f64, end: f64 },
}

/// Fractions of elapsed sampling steps during which injection is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionWindow {
    pub start: f64,
    pub end: f64,
}

pub const DEFAULT_INJECT_START: f64 = 0.2;
pub const DEFAULT_INJECT_END: f64 = 1.0;

impl InjectionWindow {
    pub fn new(start: f64, end: f64) -> Result<Self, BlendError> {
        if !(0.0 <= start && start <= end && end <= 1.0) {
            return Err(BlendError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn full() -> Self {
        Self { start: 0.0, end: 1.0 }
    }
}

impl Default for InjectionWindow {
    fn default() -> Self {
        Self {
            start: DEFAULT_INJECT_START,
            end: DEFAULT_INJECT_END,
        }
    }
}

/// Inclusive on both ends.
pub fn in_window(step_pos: f64, window: &InjectionWindow) -> bool {
    window.start <= step_pos && step_pos <= window.end
}

/// `mask ⊙ z_edit + (1 − mask) ⊙ z_src` inside the window, `z_edit` outside.
///
/// The mask is broadcast over channels. Cells are copied, not interpolated,
/// so background cells equal the source bitwise.
pub fn inject_background(
    z_edit: &LatentGrid,
    z_src: &LatentGrid,
    mask: &BinaryMask,
    step_pos: f64,
    window: &InjectionWindow,
) -> Result<LatentGrid, BlendError> {
    let shape = z_edit.shape();
    if shape != z_src.shape() {
        return Err(BlendError::LatentShape {
            edit: shape,
            src: z_src.shape(),
        });
    }
    if mask.dims() != (shape.height, shape.width) {
        return Err(BlendError::MaskShape {
            mask: mask.dims(),
            latent: (shape.height, shape.width),
        });
    }
    let mut out = z_edit.clone();
    if !in_window(step_pos, window) {
        return Ok(out);
    }
    let plane = shape.plane();
    for (c, chunk) in out.values_mut().chunks_exact_mut(plane).enumerate() {
        let src = &z_src.values()[c * plane..(c + 1) * plane];
        for ((v, s), keep) in chunk.iter_mut().zip(src).zip(mask.bits()) {
            if !keep {
                *v = *s;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: f32) -> LatentGrid {
        LatentGrid::filled(GridShape::new(2, 2, 2), v)
    }

    #[test]
    fn window_examples() {
        let d = InjectionWindow::default();
        assert!(!in_window(0.0, &d));
        assert!(in_window(0.2, &d));
        assert!(in_window(1.0, &d));
        assert!(!in_window(0.5, &InjectionWindow::new(0.6, 1.0).unwrap()));
        assert!(InjectionWindow::new(0.7, 0.6).is_err());
        assert!(InjectionWindow::new(-0.1, 0.6).is_err());
    }

    #[test]
    fn full_mask_keeps_edit() {
        let out = inject_background(&grid(2.0), &grid(0.0), &BinaryMask::full(2, 2), 0.5, &InjectionWindow::default()).unwrap();
        assert_eq!(out, grid(2.0));
    }

    #[test]
    fn empty_mask_takes_source() {
        let out = inject_background(&grid(2.0), &grid(-1.0), &BinaryMask::empty(2, 2), 0.5, &InjectionWindow::default()).unwrap();
        assert_eq!(out, grid(-1.0));
    }

    #[test]
    fn half_mask_mixes_cells() {
        let mask = BinaryMask::from_ascii(&["#.", "#."]);
        let out = inject_background(&grid(2.0), &grid(0.0), &mask, 1.0, &InjectionWindow::full()).unwrap();
        assert_eq!(out.values(), &[2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn outside_window_is_identity() {
        let out = inject_background(&grid(2.0), &grid(0.0), &BinaryMask::empty(2, 2), 0.1, &InjectionWindow::default()).unwrap();
        assert_eq!(out, grid(2.0));
    }

    #[test]
    fn shape_errors() {
        let w = InjectionWindow::default();
        let other = LatentGrid::zeros(GridShape::new(1, 2, 2));
        assert!(matches!(inject_background(&grid(0.0), &other, &BinaryMask::full(2, 2), 0.5, &w), Err(BlendError::LatentShape { .. })));
        assert!(matches!(inject_background(&grid(0.0), &grid(0.0), &BinaryMask::full(3, 2), 0.5, &w), Err(BlendError::MaskShape { .. })));
    }
}
