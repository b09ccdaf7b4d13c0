use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use crate::memory::InsertReport;

/// One sampling step of one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub frame: usize,
    pub step: usize,
    /// L2 norm of the latent after the step; absent in replays.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_norm: Option<f64>,
    /// Replaced token count per layer.
    pub replaced: BTreeMap<String, usize>,
    pub injected: bool,
}

/// A memory insertion attempt for one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryEvent {
    pub layer: String,
    #[serde(flatten)]
    pub insert: InsertReport,
    /// Frames held by the bank after the attempt.
    pub bank_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    /// Mean fraction of replaced tokens over the frame's sampling steps.
    pub replacement_rate: BTreeMap<String, f64>,
    pub memory_events: Vec<MemoryEvent>,
    /// Foreground pixel count of the finalised mask, if one was produced.
    pub mask_pixels: Option<usize>,
    /// Feature values held by all banks after the frame.
    pub retained_elements: usize,
    /// Peak number of values buffered while the frame was processed
    /// (trajectory, attention records, staged features).
    pub transient_elements: usize,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
}

/// Storage accounting across the whole run, in f32 elements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StorageStats {
    pub retained_per_layer: BTreeMap<String, usize>,
    pub peak_retained: usize,
    pub peak_transient: usize,
}

impl StorageStats {
    pub fn peak_bytes_estimate(&self) -> usize {
        4 * (self.peak_retained + self.peak_transient)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EditReport {
    pub frames: Vec<FrameReport>,
    pub storage: StorageStats,
    pub elapsed: Duration,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line<'a> {
    Step(&'a StepRecord),
    Frame(&'a FrameReport),
    Summary {
        frames: usize,
        #[serde(flatten)]
        storage: &'a StorageStats,
        peak_bytes_estimate: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        elapsed_ms: Option<f64>,
    },
}

impl EditReport {
    /// One JSON object per line: step records, then a frame record, per
    /// frame, then a summary. Wall-clock time is only written when asked
    /// for so that repeated runs produce identical files.
    pub fn to_jsonl(&self, include_timing: bool) -> String {
        let mut out = String::new();
        let mut push = |line: Line<'_>| {
            out.push_str(&serde_json::to_string(&line).expect("report serializes"));
            out.push('\n');
        };
        for frame in &self.frames {
            for step in &frame.steps {
                push(Line::Step(step));
            }
            push(Line::Frame(frame));
        }
        push(Line::Summary {
            frames: self.frames.len(),
            storage: &self.storage,
            peak_bytes_estimate: self.storage.peak_bytes_estimate(),
            elapsed_ms: include_timing.then(|| self.elapsed.as_secs_f64() * 1e3),
        });
        out
    }

    pub fn eviction_log(&self) -> impl Iterator<Item = &MemoryEvent> {
        self.frames.iter().flat_map(|f| f.memory_events.iter())
    }
}
