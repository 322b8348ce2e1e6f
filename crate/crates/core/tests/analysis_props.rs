mod common;

use common::{random_matrix, small_config};
use heteromorpheus::analysis::*;
use heteromorpheus::env::EnvConfig;
use heteromorpheus::model::Parameters;
use heteromorpheus::morphology::{EdgeScheme, VoxelGrid};
use heteromorpheus::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn walker() -> VoxelGrid {
    VoxelGrid::new("walker", &[vec![3, 4, 3], vec![1, 0, 1]]).unwrap()
}

fn params(layers: usize) -> Parameters {
    Parameters::init(&small_config(EdgeScheme::NodePair, 8, layers, 2), 13).unwrap()
}

#[test]
fn series_shape_bounds_and_reproducibility() {
    let g = walker();
    let p = params(2);
    let env = EnvConfig::default();
    let trace = trace_attention(&p, &g, &env, 20, 0, 4, false).unwrap();
    assert_eq!(trace.series.len(), 2);
    assert!(trace.series.iter().all(|s| s.len() == 20));
    assert_eq!(trace.records.len(), 40);
    assert_eq!(trace.labels, vec!["r0c0", "r0c1", "r0c2", "r1c0", "r1c2"]);
    let n = g.voxel_count() as f64;
    for r in &trace.records {
        assert!(r.stable_rank >= 1.0 - 1e-12 && r.stable_rank <= n + 1e-12, "{}", r.stable_rank);
        assert!(r.heads.is_none());
        assert_eq!(r.stable_rank, trace.series[r.layer][r.step]);
        if r.layer != 0 {
            assert!(!r.is_peak && !r.is_valley);
        }
    }
    assert_eq!(trace, trace_attention(&p, &g, &env, 20, 0, 4, false).unwrap());

    let (peaks, valleys) = local_extrema(&trace.series[0]);
    for r in trace.records.iter().filter(|r| r.layer == 0) {
        assert_eq!(r.is_peak, peaks[r.step]);
        assert_eq!(r.is_valley, valleys[r.step]);
    }
}

#[test]
fn attention_rows_are_distributions_over_neighbors() {
    let g = walker();
    let trace = trace_attention(&params(1), &g, &EnvConfig::default(), 3, 0, 0, true).unwrap();
    for r in &trace.records {
        let (rows, cols) = r.matrix.dims2().unwrap();
        assert_eq!((rows, cols), (5, 5));
        for i in 0..rows {
            let s: f64 = (0..cols).map(|j| r.matrix.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        // r0c0 neighbors r0c1 and r1c0 only.
        assert_eq!(r.matrix.get(0, 2), 0.0);
        assert_eq!(r.matrix.get(0, 4), 0.0);
        assert_eq!(r.heads.as_ref().unwrap().len(), 2);
    }
}

#[test]
fn layer_out_of_range_is_rejected() {
    let err = trace_attention(&params(1), &walker(), &EnvConfig::default(), 3, 1, 0, false).unwrap_err();
    assert_eq!(err, AnalysisError::LayerOutOfRange { layer: 1, layers: 1 });
}

#[test]
fn csv_exports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = trace_attention(&params(3), &walker(), &EnvConfig::default(), 3, 1, 2, true).unwrap();

    let series = dir.path().join("series.csv");
    export_series_csv(&trace, &series).unwrap();
    let text = std::fs::read_to_string(&series).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,layer,stable_rank,is_peak,is_valley");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 9);
    for (row, r) in rows.iter().zip(&trace.records) {
        assert_eq!(row[0], r.step.to_string());
        assert_eq!(row[1], r.layer.to_string());
        let v: f64 = row[2].parse().unwrap();
        assert!((v - r.stable_rank).abs() < 1e-12);
    }

    let matrix = dir.path().join("attention.csv");
    export_matrix_csv(&trace, &matrix).unwrap();
    let text = std::fs::read_to_string(&matrix).unwrap();
    let mut rebuilt = vec![Tensor::zeros(vec![5, 5]); trace.records.len()];
    let mut entries_for_node0 = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (step, layer, i, j): (usize, usize, usize, usize) =
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
        let idx = step * 3 + layer;
        let mut data = rebuilt[idx].data().to_vec();
        data[i * 5 + j] = f[4].parse().unwrap();
        rebuilt[idx] = Tensor::matrix(5, 5, data).unwrap();
        if step == 0 && layer == 0 && i == 0 {
            entries_for_node0 += 1;
        }
    }
    // A node with two neighbors contributes exactly two weights.
    assert_eq!(entries_for_node0, 2);
    for (m, r) in rebuilt.iter().zip(&trace.records) {
        for (a, b) in m.data().iter().zip(r.matrix.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    let heads = dir.path().join("heads.csv");
    export_head_matrix_csv(&trace, &heads).unwrap();
    let text = std::fs::read_to_string(&heads).unwrap();
    assert!(text.starts_with("step,layer,head,row,col,weight\n"));
    let without = trace_attention(&params(3), &walker(), &EnvConfig::default(), 3, 1, 2, false).unwrap();
    assert_eq!(export_head_matrix_csv(&without, &heads).unwrap_err(), AnalysisError::Empty);
}

#[test]
fn stable_rank_is_scale_invariant_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for n in 2..=8 {
        assert_eq!(stable_rank(&Tensor::identity(n)).unwrap(), n as f64);
    }
    for _ in 0..50 {
        let a = random_matrix(&mut rng, 4, 6, 1.0);
        let sr = stable_rank(&a).unwrap();
        assert!((1.0 - 1e-12..=4.0 + 1e-12).contains(&sr));
        for c in [1e-3, 7.5, -2.0] {
            assert!((stable_rank(&a.map(|x| x * c)).unwrap() - sr).abs() < 1e-9 * sr);
        }
    }
}
