//! Naive versus fused evaluator throughput.

use std::io::Write;
use std::time::Instant;

use fvsrn_core::fused::{fused_eval, FusedPlan};
use fvsrn_core::model::{FvsrnModel, Samples};
use fvsrn_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluator {
    Naive,
    Fused,
}

impl Evaluator {
    pub fn name(self) -> &'static str {
        match self {
            Evaluator::Naive => "naive",
            Evaluator::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub batch: usize,
    pub evaluator: Evaluator,
    /// Median over the timed runs.
    pub samples_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub runs: usize,
}

impl BenchReport {
    /// Fused over naive throughput for `batch`.
    pub fn speedup(&self, batch: usize) -> Option<f64> {
        let get = |e| {
            self.rows
                .iter()
                .find(|r| r.batch == batch && r.evaluator == e)
                .map(|r| r.samples_per_sec)
        };
        Some(get(Evaluator::Fused)? / get(Evaluator::Naive)?)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "batch,evaluator,samples_per_sec")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.1}",
                r.batch,
                r.evaluator.name(),
                r.samples_per_sec
            )?;
        }
        Ok(())
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Assembled inputs for `batch` random positions (and directions/times when
/// the model needs them).
pub fn bench_inputs(model: &FvsrnModel, batch: usize, seed: u64) -> Result<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Vec3> = (0..batch).map(|_| rng.random::<[f32; 3]>()).collect();
    let directions = vec![[0.0, 0.0, 1.0]; batch];
    let mut samples = Samples::positions(&positions).with_directions(&directions);
    let times;
    if let Some([a, b]) = model.temporal_span() {
        times = (0..batch)
            .map(|_| rng.random_range(a as f32..=b as f32))
            .collect::<Vec<_>>();
        samples = samples.with_times(&times);
    }
    Ok(model.assemble_batch(&samples)?.0)
}

/// Times both evaluators on identical inputs; one warm-up call each, then
/// `runs` timed calls (at least 5) summarized by their median.
pub fn bench_compare(model: &FvsrnModel, batches: &[usize], runs: usize) -> Result<BenchReport> {
    let runs = runs.max(5);
    let plan = FusedPlan::for_model(model)?;
    let mut rows = Vec::new();
    for &batch in batches {
        let x = bench_inputs(model, batch, 7)?;
        for evaluator in [Evaluator::Naive, Evaluator::Fused] {
            let call = || match evaluator {
                Evaluator::Naive => model.infer_inputs(&x, batch),
                Evaluator::Fused => fused_eval(&plan, model, &x, batch),
            };
            std::hint::black_box(call()?);
            let mut rates = Vec::with_capacity(runs);
            for _ in 0..runs {
                let start = Instant::now();
                std::hint::black_box(call()?);
                rates.push(batch as f64 / start.elapsed().as_secs_f64().max(1e-9));
            }
            rows.push(BenchRow {
                batch,
                evaluator,
                samples_per_sec: median(&mut rates),
            });
        }
    }
    Ok(BenchReport { rows, runs })
}
