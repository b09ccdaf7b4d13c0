//! Per-frame editing loop: invert, sample with propagation and injection,
//! update the memory. Also the offline replay over recorded tensors.

mod config;
mod edit;
mod replay;
mod report;
mod toy;

use thiserror::Error;

use crate::blend::BlendError;
use crate::diffusion::{DiffusionError, GridShape, LatentGrid};
use crate::io::IoError;
use crate::mask::MaskError;
use crate::memory::MemoryError;
use crate::metrics::MetricsError;
use crate::propagation::PropagationError;

pub use config::{EditConfig, MaskSource};
pub use edit::{edit_video, edit_video_streaming, EditOutput, Editor, FrameOutput, Prompts};
pub use replay::{replay_edit, ReplayOutput, REPLAY_MASK_DIR};
pub use report::{EditReport, FrameReport, MemoryEvent, StepRecord, StorageStats};
pub use toy::{
    toy_feature_backend, Hotspot, ToyAttentionLayer, ToyFeatureBackend, ToyFeatureLayer, ToySpec,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("frame {frame} has shape {found}, expected {expected}")]
    ShapeDrift {
        frame: usize,
        expected: GridShape,
        found: GridShape,
    },
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("backend emitted layer '{layer}' features for frame {found} while editing frame {expected}")]
    FeatureFrame {
        layer: String,
        expected: usize,
        found: usize,
    },
    #[error("layer '{0}' appears twice in one step's features")]
    DuplicateLayer(String),
    #[error("recording is missing {kind} for frame {frame}, step {step}, layer '{layer}'")]
    MissingRecord {
        frame: usize,
        step: usize,
        layer: String,
        kind: String,
    },
    #[error("recorded tensor {path}: {source}")]
    Record {
        path: String,
        #[source]
        source: IoError,
    },
    #[error("recorded tensor {path}: {message}")]
    BadRecord { path: String, message: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Blend(#[from] BlendError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    pub(crate) fn in_frame(self, frame: usize) -> Self {
        match self {
            e @ PipelineError::Frame { .. } => e,
            e => PipelineError::Frame {
                frame,
                source: Box::new(e),
            },
        }
    }
}

/// An ordered sequence of equally shaped latent frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    frames: Vec<LatentGrid>,
}

impl LatentVideo {
    pub fn new(frames: Vec<LatentGrid>) -> Result<Self, PipelineError> {
        let first = frames.first().ok_or(PipelineError::EmptyVideo)?.shape();
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != first {
                return Err(PipelineError::ShapeDrift {
                    frame: i,
                    expected: first,
                    found: f.shape(),
                });
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> GridShape {
        self.frames[0].shape()
    }

    pub fn frames(&self) -> &[LatentGrid] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &LatentGrid {
        &self.frames[i]
    }

    pub fn into_frames(self) -> Vec<LatentGrid> {
        self.frames
    }
}
