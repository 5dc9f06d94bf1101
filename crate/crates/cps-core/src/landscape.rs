//! Loss/accuracy landscape over (interpolated input task) x (interpolated
//! parameter) grids, with the per-input first-instance argmin column, plus
//! the comma-separated table export.

use std::path::Path;

use crate::error::CoreError;
use crate::nn;
use crate::params::interpolate_params;
use crate::subspace::Subspace;
use crate::task::{Coeffs, TaskSet};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub input_coeffs: Vec<Coeffs>,
    pub param_coeffs: Vec<Coeffs>,
    /// loss[input][param]
    pub loss: Vec<Vec<f64>>,
    /// accuracy[input][param]
    pub accuracy: Vec<Vec<f64>>,
    /// Per input row, the first-instance lowest-loss parameter index.
    pub argmin: Vec<usize>,
}

/// Evaluates every (input task, parameter point) pair. Tasks arrive as
/// (coefficients, pixel-domain task) pairs; they are normalized here.
pub fn landscape_map(
    subspace: &Subspace,
    input_grid: &[(Coeffs, TaskSet)],
    param_grid: &[Coeffs],
) -> Result<LandscapeGrid> {
    subspace.validate()?;
    if input_grid.is_empty() || param_grid.is_empty() {
        return Err(CoreError::Empty("landscape grids".into()));
    }
    let params: Vec<_> = param_grid
        .iter()
        .map(|c| interpolate_params(c, &subspace.endpoints))
        .collect::<Result<_>>()?;
    let mut loss = Vec::with_capacity(input_grid.len());
    let mut accuracy = Vec::with_capacity(input_grid.len());
    let mut argmin = Vec::with_capacity(input_grid.len());
    for (_, task) in input_grid {
        let norm = task.normalized();
        let mut row_loss = Vec::with_capacity(params.len());
        let mut row_acc = Vec::with_capacity(params.len());
        let mut best = 0usize;
        for (j, p) in params.iter().enumerate() {
            let metrics = nn::evaluate(&subspace.model, p, &norm)?;
            if metrics.loss < row_loss.get(best).copied().unwrap_or(f64::INFINITY) {
                best = j;
            }
            row_loss.push(metrics.loss);
            row_acc.push(metrics.accuracy);
        }
        loss.push(row_loss);
        accuracy.push(row_acc);
        argmin.push(best);
    }
    Ok(LandscapeGrid {
        input_coeffs: input_grid.iter().map(|(c, _)| c.clone()).collect(),
        param_coeffs: param_grid.to_vec(),
        loss,
        accuracy,
        argmin,
    })
}

fn coeff_table(coeffs: &[Coeffs], n_axes: usize) -> String {
    let mut out = String::from("index");
    for a in 0..n_axes {
        out.push_str(&format!(",alpha_{a}"));
    }
    out.push('\n');
    for (i, c) in coeffs.iter().enumerate() {
        out.push_str(&i.to_string());
        for a in c.alpha() {
            out.push_str(&format!(",{a}"));
        }
        out.push('\n');
    }
    out
}

fn matrix_table(matrix: &[Vec<f64>], value_name: &str) -> String {
    let cols = matrix.first().map(Vec::len).unwrap_or(0);
    let mut out = String::from("input_index");
    for j in 0..cols {
        out.push_str(&format!(",{value_name}_param_{j}"));
    }
    out.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Writes the grid as five self-describing comma-separated tables:
/// input_grid.csv, param_grid.csv, loss_matrix.csv, accuracy_matrix.csv,
/// and argmin.csv.
pub fn write_landscape(grid: &LandscapeGrid, dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let input_axes = grid.input_coeffs.first().map(Coeffs::len).unwrap_or(0);
    let param_axes = grid.param_coeffs.first().map(Coeffs::len).unwrap_or(0);
    let mut argmin_csv = String::from("input_index,argmin_param_index,loss,accuracy\n");
    for (i, &j) in grid.argmin.iter().enumerate() {
        argmin_csv.push_str(&format!("{i},{j},{},{}\n", grid.loss[i][j], grid.accuracy[i][j]));
    }
    let files = [
        ("input_grid.csv", coeff_table(&grid.input_coeffs, input_axes)),
        ("param_grid.csv", coeff_table(&grid.param_coeffs, param_axes)),
        ("loss_matrix.csv", matrix_table(&grid.loss, "loss")),
        ("accuracy_matrix.csv", matrix_table(&grid.accuracy, "accuracy")),
        ("argmin.csv", argmin_csv),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
        written.push(name.to_string());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{grid_coeffs, lowest_loss_interpolated};
    use crate::model::{InputShape, ModelSpec};
    use crate::shift::enumerate_task_grid;
    use crate::subspace::train_cps;
    use crate::task::{make_synthetic_tasks, SyntheticMode};
    use crate::trainer::TrainConfig;

    fn trained() -> (Subspace, Vec<TaskSet>) {
        let model = ModelSpec::dense(vec![12], InputShape::Flat { features: 100 }, 3).unwrap();
        let tasks = make_synthetic_tasks(1, 3, 3, 8, SyntheticMode::RotatedGaussians).unwrap();
        let cfg = TrainConfig { max_epochs: 8, early_stop_loss: 0.5, ..TrainConfig::default() };
        (train_cps(&model, &tasks, 1.0, &cfg).unwrap(), tasks)
    }

    #[test]
    fn single_cell_matches_direct_evaluation() {
        let (subspace, tasks) = trained();
        let input = vec![(Coeffs::one_hot(3, 0), tasks[0].clone())];
        let params = vec![Coeffs::uniform(3)];
        let grid = landscape_map(&subspace, &input, &params).unwrap();
        assert_eq!(grid.loss.len(), 1);
        assert_eq!(grid.loss[0].len(), 1);
        let direct = nn::evaluate(
            &subspace.model,
            &interpolate_params(&params[0], &subspace.endpoints).unwrap(),
            &tasks[0].normalized(),
        )
        .unwrap();
        assert_eq!(grid.loss[0][0], direct.loss);
        assert_eq!(grid.argmin, vec![0]);
    }

    #[test]
    fn argmin_column_agrees_with_interpolated_selection() {
        let (subspace, tasks) = trained();
        let input_grid = enumerate_task_grid(&tasks, 2).unwrap();
        let param_grid = grid_coeffs(3, 3, false).unwrap();
        let grid = landscape_map(&subspace, &input_grid, &param_grid).unwrap();
        for (i, (_, task)) in input_grid.iter().enumerate() {
            let report =
                lowest_loss_interpolated(&subspace, &task.normalized(), &param_grid).unwrap();
            assert_eq!(
                report.coeffs.as_ref().unwrap(),
                &param_grid[grid.argmin[i]],
                "row {i}"
            );
        }
    }

    #[test]
    fn export_writes_all_tables() {
        let (subspace, tasks) = trained();
        let input_grid = enumerate_task_grid(&tasks, 2).unwrap();
        let param_grid = grid_coeffs(2, 3, false).unwrap();
        let grid = landscape_map(&subspace, &input_grid, &param_grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_landscape(&grid, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        for f in files {
            let body = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(body.lines().count() > 1);
            // Self-describing: header names every column.
            let header_cols = body.lines().next().unwrap().split(',').count();
            let first_row_cols = body.lines().nth(1).unwrap().split(',').count();
            assert_eq!(header_cols, first_row_cols);
        }
    }
}
