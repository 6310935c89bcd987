use std::ops::Range;

use rayon::prelude::*;

use crate::dataset::MultiViewRecord;
use crate::dipole::{estimate_dipole_lsq, oracle_synthesize};
use crate::experiments::{ExperimentError, Protocol};
use crate::metrics::{mean, psnr_leads, ssim_leads, LeadMetric, MetricReport, Task};
use crate::model::{GeoVtModel, Views};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{record_views, stack_leads};

/// Anything that maps recorded leads to query views.
pub trait ViewSynthesizer<T: Scalar>: Sync {
    fn synthesize_views(&self, signals: &Tensor<T>, recorded: &Views, query: &Views) -> Result<Tensor<T>, ExperimentError>;
}

impl<T: Scalar> ViewSynthesizer<T> for GeoVtModel<T> {
    fn synthesize_views(&self, signals: &Tensor<T>, recorded: &Views, query: &Views) -> Result<Tensor<T>, ExperimentError> {
        Ok(self.synthesize(signals, recorded, query)?)
    }
}

/// Least-squares dipole fit of the recorded leads, projected onto each
/// query direction.
#[derive(Debug, Clone, Copy, Default)]
pub struct DipoleOracle;

impl<T: Scalar> ViewSynthesizer<T> for DipoleOracle {
    fn synthesize_views(&self, signals: &Tensor<T>, recorded: &Views, query: &Views) -> Result<Tensor<T>, ExperimentError> {
        let l = recorded.len();
        let rows: Vec<&[T]> = (0..l).map(|i| signals.row(i)).collect();
        // fs only labels the trajectory
        let p = estimate_dipole_lsq(&rows, &recorded.angles, 1.0)?;
        let t = signals.shape()[1];
        let data = query.angles.iter().flat_map(|&a| oracle_synthesize(&p, a)).collect();
        Ok(Tensor::new(&[query.len(), t], data)?)
    }
}

/// Scores one task on `records` over `window` (whole record when `None`).
/// Per-lead values are averaged over records.
pub fn eval_task<T: Scalar, S: ViewSynthesizer<T>>(
    synth: &S,
    records: &[&MultiViewRecord],
    protocol: &Protocol,
    task: Task,
    window: Option<Range<usize>>,
    stage: &str,
    seed: u64,
) -> Result<MetricReport, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::Empty);
    }
    protocol.validate(records[0].leads.len())?;
    let views: Vec<usize> = protocol
        .views(task)
        .iter()
        .copied()
        .filter(|i| !protocol.inputs.contains(i))
        .collect();
    if views.is_empty() {
        return Err(ExperimentError::Protocol(format!("no views to score for {task:?}")));
    }
    let per_record: Vec<Result<(Vec<f64>, Vec<f64>), ExperimentError>> = records
        .par_iter()
        .map(|r| {
            let w = window.clone().unwrap_or(0..r.n_samples());
            let x: Tensor<T> = stack_leads(r, &protocol.inputs, w.clone());
            let y = synth.synthesize_views(&x, &record_views(r, &protocol.inputs), &record_views(r, &views))?;
            let target: Tensor<T> = stack_leads(r, &views, w);
            Ok((psnr_leads(&y, &target)?, ssim_leads(&y, &target)?))
        })
        .collect();
    let mut psnr = vec![0.0; views.len()];
    let mut ssim = vec![0.0; views.len()];
    for r in per_record {
        let (p, s) = r?;
        for i in 0..views.len() {
            psnr[i] += p[i];
            ssim[i] += s[i];
        }
    }
    let n = records.len() as f64;
    let per_lead: Vec<LeadMetric> = views
        .iter()
        .enumerate()
        .map(|(k, &i)| LeadMetric {
            label: records[0].leads[i].label.clone(),
            psnr: psnr[k] / n,
            ssim: ssim[k] / n,
        })
        .collect();
    let mean_psnr = mean(&per_lead.iter().map(|l| l.psnr).collect::<Vec<_>>());
    let mean_ssim = mean(&per_lead.iter().map(|l| l.ssim).collect::<Vec<_>>());
    Ok(MetricReport {
        task,
        n_input: protocol.inputs.len(),
        n_supervised: protocol.supervised.len(),
        n_synth: protocol.synthesis.len(),
        per_lead,
        mean_psnr,
        mean_ssim,
        stage: stage.to_string(),
        seed,
    })
}
