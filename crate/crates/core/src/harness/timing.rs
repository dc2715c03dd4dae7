use std::time::Instant;

use crate::arch::{forward, ModelConfig, RunMode};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::phantom::MultiPhaseSample;

/// Median wall-clock seconds to classify 10 cases one at a time in eval mode,
/// over at least three repetitions. Cases cycle through `samples`.
pub fn time_inference(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    samples: &[MultiPhaseSample],
    reps: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples("timing needs at least one sample".into()));
    }
    let mut times: Vec<f64> = Vec::with_capacity(reps.max(3));
    for _ in 0..reps.max(3) {
        let start = Instant::now();
        for i in 0..10 {
            forward(params, cfg, samples[i % samples.len()].phases(), RunMode::eval())?;
        }
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}
