use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{SliceSampling, Volume};
use crate::error::Result;
use crate::head::{GateVerdict, TripletPipeline};
use crate::rng::Rng;

/// Volumes unlike any training class: a binary sphere mask, an all-zero
/// volume and uniform noise in [0, 1).
pub fn out_of_sample_volumes(dims: [usize; 3], rng: &mut Rng) -> Result<Vec<Volume>> {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let radius = 0.35 * nx.min(ny).min(nz) as f64;
    let center = [nx, ny, nz].map(|d| (d as f64 - 1.0) / 2.0);
    let mut mask = vec![0.0f32; n];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let r2 = (x as f64 - center[0]).powi(2) + (y as f64 - center[1]).powi(2) + (z as f64 - center[2]).powi(2);
                if r2 <= radius * radius {
                    mask[x + nx * (y + ny * z)] = 1.0;
                }
            }
        }
    }
    let noise: Vec<f32> = (0..n).map(|_| rng.uniform() as f32).collect();
    Ok(vec![
        Volume::new("binary_mask", dims, mask)?,
        Volume::filled("constant_zero", dims, 0.0)?,
        Volume::new("uniform_noise", dims, noise)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub input_id: String,
    /// `true` for the held-out volume of a training class.
    pub in_distribution_source: bool,
    pub loglik: f64,
    pub verdict: GateVerdict,
    pub tau: f64,
}

/// Scores the built-in out-of-sample volumes and one held-out volume against the gate.
pub fn run_uncertainty_demo(
    pipeline: &TripletPipeline,
    held_out: &Volume,
    sampling: &SliceSampling,
    seed: u64,
) -> Result<Vec<UncertaintyRow>> {
    let head = pipeline.head()?;
    let root = Rng::new(seed);
    let mut inputs = vec![(held_out.clone(), true)];
    inputs.extend(
        out_of_sample_volumes(held_out.dims, &mut root.split(0))?
            .into_iter()
            .map(|v| (v, false)),
    );
    inputs
        .iter()
        .enumerate()
        .map(|(i, (v, inside))| {
            let pred = pipeline.classify_volume(v, sampling, None, &mut root.split(1 + i as u64))?;
            Ok(UncertaintyRow {
                input_id: v.id.clone(),
                in_distribution_source: *inside,
                loglik: pred.mean_loglik,
                verdict: pred.verdict,
                tau: head.gate.tau,
            })
        })
        .collect()
}

pub fn render_uncertainty(rows: &[UncertaintyRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>14} {:>14}  verdict", "input", "loglik", "tau");
    for r in rows {
        let _ = writeln!(s, "{:<24} {:>14.4} {:>14.4}  {}", r.input_id, r.loglik, r.tau, r.verdict.as_str());
    }
    s
}
