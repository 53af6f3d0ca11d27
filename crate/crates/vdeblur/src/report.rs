//! JSON and plain-text renderings of evaluation and benchmark results.

use serde::{Deserialize, Serialize};
use vdeblur_core::stream::AblationTable;
use vdeblur_core::EvalReport;

use crate::checkpoint::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub model: ModelSpec,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub latency_frames: usize,
    pub psnr: Vec<f64>,
    pub mean_psnr: Option<f64>,
    pub input_psnr: Option<f64>,
    pub frame_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub mean_frame_seconds: f64,
    pub fps: f64,
}

impl From<&EvalReport> for StreamReport {
    fn from(r: &EvalReport) -> Self {
        StreamReport {
            model: ModelSpec::from(&r.config),
            width: r.width,
            height: r.height,
            frames: r.frames,
            latency_frames: r.latency_frames,
            psnr: r.psnr.clone(),
            mean_psnr: r.mean_psnr,
            input_psnr: r.input_psnr,
            frame_seconds: r.frame_seconds.clone(),
            total_seconds: r.total_seconds,
            mean_frame_seconds: r.mean_frame_seconds,
            fps: r.fps,
        }
    }
}

fn opt_db(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3} dB"))
}

impl StreamReport {
    pub fn render(&self) -> String {
        let rows = [
            ("variant", self.model.variant.clone()),
            ("input frames", (2 * self.model.window_m + 1).to_string()),
            ("resolution", format!("{}x{}", self.width, self.height)),
            ("frames", self.frames.to_string()),
            ("latency", format!("{} frames", self.latency_frames)),
            ("mean psnr", opt_db(self.mean_psnr)),
            ("input psnr", opt_db(self.input_psnr)),
            ("total compute", format!("{:.4} s", self.total_seconds)),
            ("per frame", format!("{:.4} s", self.mean_frame_seconds)),
            ("throughput", format!("{:.2} fps", self.fps)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
    }
}

/// One stream report per evaluated video plus the mean over videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub videos: Vec<StreamReport>,
    pub mean_psnr: f64,
    pub mean_input_psnr: f64,
    pub framewise_psnr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<String>,
    pub windows: Vec<usize>,
    pub psnr: Vec<Vec<f64>>,
}

impl From<&AblationTable> for AblationReport {
    fn from(t: &AblationTable) -> Self {
        AblationReport {
            variants: t.variants.iter().map(|v| v.name().to_string()).collect(),
            windows: t.windows.clone(),
            psnr: t.values.clone(),
        }
    }
}
