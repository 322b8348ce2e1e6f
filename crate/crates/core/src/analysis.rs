//! Attention traces and their stable-rank series, with CSV export.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::env::{EnvConfig, EnvError, SoftBodyEnv};
use crate::model::{forward, GraphPlan, ModelError, Parameters};
use crate::morphology::{build_graph, VoxelGrid};
use crate::rl::observation_tensors;
use crate::tensor::{singular_values, Tensor, TensorError};

/// Half-width of the window used to call a point a peak or valley.
pub const EXTREMUM_HALF_WINDOW: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("stable rank is undefined for an all-zero matrix")]
    ZeroMatrix,
    #[error("layer {layer} out of range (model has {layers})")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("nothing to export")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// `Σσ_i² / σ_max²`, computed as `‖A‖_F² / σ_max²`.
pub fn stable_rank(a: &Tensor) -> Result<f64> {
    let sigma = singular_values(a)?;
    let top = sigma.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Err(AnalysisError::ZeroMatrix);
    }
    Ok(a.frobenius_norm_sq() / (top * top))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub step: usize,
    pub layer: usize,
    /// Head-averaged `n × n` weights, row = target, column = source.
    pub matrix: Tensor,
    /// Per-head matrices, kept only when requested.
    pub heads: Option<Vec<Tensor>>,
    pub stable_rank: f64,
    pub is_peak: bool,
    pub is_valley: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// Step-major, then layer.
    pub records: Vec<AttentionRecord>,
    /// `series[layer][step]`.
    pub series: Vec<Vec<f64>>,
    /// Layer whose series was searched for peaks and valleys.
    pub layer: usize,
    /// `r{row}c{col}` per node, row-major grid order.
    pub labels: Vec<String>,
}

/// Strict local maxima and minima: `t` qualifies when its full window of
/// `±EXTREMUM_HALF_WINDOW` steps exists and every other value in it is
/// strictly smaller (larger).
pub fn local_extrema(series: &[f64]) -> (Vec<bool>, Vec<bool>) {
    let w = EXTREMUM_HALF_WINDOW;
    let mut peaks = vec![false; series.len()];
    let mut valleys = vec![false; series.len()];
    for t in w..series.len().saturating_sub(w) {
        let window = (t - w..=t + w).filter(|&s| s != t);
        peaks[t] = window.clone().all(|s| series[s] < series[t]);
        valleys[t] = window.clone().all(|s| series[s] > series[t]);
    }
    (peaks, valleys)
}

/// Runs one deterministic episode of `steps` control steps and records every
/// layer's attention at each step.
pub fn trace_attention(
    params: &Parameters,
    grid: &VoxelGrid,
    env_config: &EnvConfig,
    steps: usize,
    layer: usize,
    seed: u64,
    keep_heads: bool,
) -> Result<AttentionTrace> {
    let config = params.config();
    if layer >= config.layers {
        return Err(AnalysisError::LayerOutOfRange {
            layer,
            layers: config.layers,
        });
    }
    let graph = build_graph(grid, config.scheme);
    let plan = GraphPlan::new(&graph, config)?;
    let env_config = EnvConfig {
        horizon: steps.max(1),
        ..env_config.clone()
    };
    let mut env = SoftBodyEnv::new(grid, env_config, seed)?;
    let mut obs = env.observe();
    let mut records = Vec::with_capacity(steps * config.layers);
    let mut series = vec![Vec::with_capacity(steps); config.layers];
    for step in 0..steps {
        let (local, global) = observation_tensors(&obs);
        let out = forward(params, &plan, &local, &global)?;
        for (l, (matrix, heads)) in out.attention.into_iter().zip(out.head_attention).enumerate() {
            let sr = stable_rank(&matrix)?;
            series[l].push(sr);
            records.push(AttentionRecord {
                step,
                layer: l,
                matrix,
                heads: keep_heads.then_some(heads),
                stable_rank: sr,
                is_peak: false,
                is_valley: false,
            });
        }
        let result = env.step(&out.mean)?;
        obs = result.observation;
        if result.done && step + 1 < steps {
            obs = env.reset(seed);
        }
    }
    let (peaks, valleys) = local_extrema(&series[layer]);
    for r in records.iter_mut().filter(|r| r.layer == layer) {
        r.is_peak = peaks[r.step];
        r.is_valley = valleys[r.step];
    }
    let labels = graph.nodes().iter().map(|n| format!("r{}c{}", n.row, n.col)).collect();
    Ok(AttentionTrace {
        records,
        series,
        layer,
        labels,
    })
}

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| AnalysisError::Io(format!("cannot write {}: {e}", path.display())))
}

/// `step,layer,stable_rank,is_peak,is_valley`, one row per record.
pub fn export_series_csv(trace: &AttentionTrace, path: &Path) -> Result<()> {
    if trace.records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut out = String::from("step,layer,stable_rank,is_peak,is_valley\n");
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            r.layer,
            format_real(r.stable_rank),
            r.is_peak as u8,
            r.is_valley as u8
        )
        .expect("writing to a String");
    }
    write_file(path, &out)
}

/// `step,layer,row,col,weight` for every nonzero head-averaged weight.
pub fn export_matrix_csv(trace: &AttentionTrace, path: &Path) -> Result<()> {
    if trace.records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut out = String::from("step,layer,row,col,weight\n");
    for r in &trace.records {
        push_nonzero(&mut out, &format!("{},{}", r.step, r.layer), &r.matrix);
    }
    write_file(path, &out)
}

/// `step,layer,head,row,col,weight` for every nonzero per-head weight.
pub fn export_head_matrix_csv(trace: &AttentionTrace, path: &Path) -> Result<()> {
    let mut out = String::from("step,layer,head,row,col,weight\n");
    let mut any = false;
    for r in &trace.records {
        for (h, m) in r.heads.iter().flatten().enumerate() {
            any = true;
            push_nonzero(&mut out, &format!("{},{},{h}", r.step, r.layer), m);
        }
    }
    if !any {
        return Err(AnalysisError::Empty);
    }
    write_file(path, &out)
}

fn push_nonzero(out: &mut String, prefix: &str, m: &Tensor) {
    let (rows, cols) = m.dims2().expect("attention matrices are rank 2");
    for i in 0..rows {
        for j in 0..cols {
            let w = m.get(i, j);
            if w != 0.0 {
                writeln!(out, "{prefix},{i},{j},{}", format_real(w)).expect("writing to a String");
            }
        }
    }
}
