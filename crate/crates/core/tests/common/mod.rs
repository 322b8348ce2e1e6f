#![allow(dead_code)]

use heteromorpheus::model::ModelConfig;
use heteromorpheus::morphology::{EdgeScheme, VoxelGrid};
use heteromorpheus::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

/// A random 4-connected morphology with `voxels` cells inside `rows × cols`
/// and at least one actuator.
pub fn random_grid<R: Rng>(rng: &mut R, rows: usize, cols: usize, voxels: usize) -> VoxelGrid {
    let voxels = voxels.clamp(2, rows * cols);
    let mut cells = vec![vec![0i64; cols]; rows];
    let start = (rng.gen_range(0..rows), rng.gen_range(0..cols));
    cells[start.0][start.1] = rng.gen_range(1..=4);
    let mut filled = vec![start];
    while filled.len() < voxels {
        let &(r, c) = filled.choose(rng).unwrap();
        let mut options = Vec::new();
        if r > 0 {
            options.push((r - 1, c));
        }
        if r + 1 < rows {
            options.push((r + 1, c));
        }
        if c > 0 {
            options.push((r, c - 1));
        }
        if c + 1 < cols {
            options.push((r, c + 1));
        }
        let &(nr, nc) = options.choose(rng).unwrap();
        if cells[nr][nc] == 0 {
            cells[nr][nc] = rng.gen_range(1..=4);
            filled.push((nr, nc));
        }
    }
    if !cells.iter().flatten().any(|&c| c == 3 || c == 4) {
        let &(r, c) = filled.choose(rng).unwrap();
        cells[r][c] = rng.gen_range(3..=4);
    }
    VoxelGrid::new("random", &cells).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn small_config(scheme: EdgeScheme, embed: usize, layers: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: embed,
        layers,
        heads,
        global_hidden: vec![8, 8],
        decoder_hidden: vec![8],
        scheme,
        ..Default::default()
    }
}

pub fn grid(rows: &[&[i64]]) -> VoxelGrid {
    let cells: Vec<Vec<i64>> = rows.iter().map(|r| r.to_vec()).collect();
    VoxelGrid::new("test", &cells).unwrap()
}
