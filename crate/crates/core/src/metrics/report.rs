use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Views that were supervised during training.
    Reconstruction,
    /// Views never used as supervision.
    Synthesis,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rec" | "reconstruction" => Ok(Task::Reconstruction),
            "syn" | "synthesis" => Ok(Task::Synthesis),
            _ => Err(format!("unknown task {s:?} (rec|syn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadMetric {
    pub label: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Fidelity for one task and lead configuration, per-lead values averaged
/// over records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub n_input: usize,
    pub n_supervised: usize,
    pub n_synth: usize,
    pub per_lead: Vec<LeadMetric>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub stage: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    /// `label,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,stage,label,psnr,ssim\n");
        let task = match self.task {
            Task::Reconstruction => "rec",
            Task::Synthesis => "syn",
        };
        for l in &self.per_lead {
            let _ = writeln!(s, "{task},{},{},{:.6},{:.6}", self.stage, l.label, l.psnr, l.ssim);
        }
        let _ = writeln!(s, "{task},{},mean,{:.6},{:.6}", self.stage, self.mean_psnr, self.mean_ssim);
        s
    }
}
