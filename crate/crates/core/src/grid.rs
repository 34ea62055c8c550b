//! Quadrature grids on `[0, 1]`, sampled curves, and training datasets.
//!
//! Functions of `t` are represented by their values on a shared [`Grid`]; the
//! grid's composite trapezoid weights discretize every `L₂` integral.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{FlrError, Result};

/// Strictly increasing points on `[0, 1]` with trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Equally spaced grid `0, 1/(P-1), …, 1` with composite trapezoid weights.
    pub fn uniform(num_points: usize) -> Result<Arc<Grid>> {
        if num_points < 2 {
            return Err(FlrError::InvalidArgument(format!(
                "a grid needs at least 2 points, got {num_points}"
            )));
        }
        let last = (num_points - 1) as f64;
        let h = 1.0 / last;
        let points = (0..num_points).map(|i| i as f64 / last).collect();
        let mut weights = vec![h; num_points];
        weights[0] = 0.5 * h;
        weights[num_points - 1] = 0.5 * h;
        Ok(Arc::new(Grid { points, weights }))
    }

    /// Grid from arbitrary strictly increasing points spanning `[0, 1]`.
    ///
    /// Endpoints within `1e-12` of 0 and 1 are snapped onto them.
    pub fn from_points(mut points: Vec<f64>) -> Result<Arc<Grid>> {
        let p = points.len();
        if p < 2 {
            return Err(FlrError::InvalidArgument(format!(
                "a grid needs at least 2 points, got {p}"
            )));
        }
        if let Some(i) = points.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(FlrError::InvalidArgument(format!(
                "grid points must be strictly increasing (index {})",
                i + 1
            )));
        }
        if points[0].abs() > 1e-12 || (points[p - 1] - 1.0).abs() > 1e-12 {
            return Err(FlrError::InvalidArgument(format!(
                "grid must start at 0 and end at 1, got [{}, {}]",
                points[0],
                points[p - 1]
            )));
        }
        points[0] = 0.0;
        points[p - 1] = 1.0;
        let mut weights = vec![0.0; p];
        for i in 0..p - 1 {
            let half = 0.5 * (points[i + 1] - points[i]);
            weights[i] += half;
            weights[i + 1] += half;
        }
        Ok(Arc::new(Grid { points, weights }))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature of a sampled integrand.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Two grid handles describe the same discretization.
pub fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a.points == b.points
}

/// A real function sampled on a [`Grid`].
#[derive(Debug, Clone)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Curve> {
        if values.len() != grid.len() {
            return Err(FlrError::InvalidArgument(format!(
                "curve has {} values but the grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FlrError::InvalidArgument(format!(
                "curve value at index {i} is not finite"
            )));
        }
        Ok(Curve { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Curve {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Curve {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Curve {
        Curve {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `a·self + b·other`, pointwise.
    pub fn combine(&self, a: f64, other: &Curve, b: f64) -> Result<Curve> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(FlrError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Curve {
            grid: Arc::clone(&self.grid),
            values,
        })
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

/// Quadrature `L₂` inner product `Σ_p w_p f(t_p) g(t_p)`.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    if !same_grid(&f.grid, &g.grid) {
        return Err(FlrError::GridMismatch);
    }
    Ok(f
        .grid
        .weights()
        .iter()
        .zip(f.values.iter().zip(&g.values))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}

/// Training data `(x_i, y_i)`, `i = 1..n`, with all curves on one grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    grid: Arc<Grid>,
    curves: Vec<Curve>,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(grid: Arc<Grid>, curves: Vec<Curve>, responses: Vec<f64>) -> Result<Dataset> {
        if curves.is_empty() {
            return Err(FlrError::InvalidArgument(
                "a dataset needs at least one observation".into(),
            ));
        }
        if curves.len() != responses.len() {
            return Err(FlrError::InvalidArgument(format!(
                "{} curves but {} responses",
                curves.len(),
                responses.len()
            )));
        }
        if curves.iter().any(|c| !same_grid(&grid, &c.grid)) {
            return Err(FlrError::GridMismatch);
        }
        if let Some(i) = responses.iter().position(|y| !y.is_finite()) {
            return Err(FlrError::InvalidArgument(format!(
                "response {i} is not finite"
            )));
        }
        Ok(Dataset {
            grid,
            curves,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }
}

/// Result of [`center_dataset`].
#[derive(Debug, Clone)]
pub struct CenteredData {
    pub mean_curve: Curve,
    pub mean_response: f64,
    pub centered: Dataset,
}

/// Subtracts the pointwise mean curve `x̄` and the mean response `ȳ`.
pub fn center_dataset(data: &Dataset) -> CenteredData {
    let n = data.len() as f64;
    // Shifting by the first observation keeps identical inputs exactly zero
    // after centering.
    let anchor = &data.curves[0].values;
    let mut mean = vec![0.0; data.grid.len()];
    for c in &data.curves {
        for ((m, v), a) in mean.iter_mut().zip(&c.values).zip(anchor) {
            *m += v - a;
        }
    }
    for (m, a) in mean.iter_mut().zip(anchor) {
        *m = a + *m / n;
    }
    let y0 = data.responses[0];
    let mean_response = y0 + data.responses.iter().map(|y| y - y0).sum::<f64>() / n;

    let curves = data
        .curves
        .iter()
        .map(|c| Curve {
            grid: Arc::clone(&data.grid),
            values: c.values.iter().zip(&mean).map(|(v, m)| v - m).collect(),
        })
        .collect();
    let responses = data.responses.iter().map(|y| y - mean_response).collect();
    CenteredData {
        mean_curve: Curve {
            grid: Arc::clone(&data.grid),
            values: mean,
        },
        mean_response,
        centered: Dataset {
            grid: Arc::clone(&data.grid),
            curves,
            responses,
        },
    }
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| FlrError::Parse {
        row,
        column,
        message: format!("not a number: {cell:?}"),
    })?;
    if !v.is_finite() {
        return Err(FlrError::Parse {
            row,
            column,
            message: format!("non-finite value: {cell:?}"),
        });
    }
    Ok(v)
}

/// Reads the dataset CSV layout: a `t,<t_1>,…,<t_P>` header row followed by
/// one `y_i,<x_i(t_1)>,…,<x_i(t_P)>` row per observation.
///
/// Rows and columns in errors are 1-based.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(e, 1))?,
        None => {
            return Err(FlrError::Parse {
                row: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
    };
    if header.get(0).map(str::trim) != Some("t") {
        return Err(FlrError::Parse {
            row: 1,
            column: 1,
            message: "header must start with `t`".into(),
        });
    }
    let points = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, cell)| parse_cell(cell, 1, j + 1))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = points.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(FlrError::Parse {
            row: 1,
            column: i + 3,
            message: "grid points must be strictly increasing".into(),
        });
    }
    let grid = Grid::from_points(points).map_err(|e| FlrError::Parse {
        row: 1,
        column: 2,
        message: e.to_string(),
    })?;
    let width = grid.len() + 1;

    let mut curves = Vec::new();
    let mut responses = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(e, row))?;
        if rec.len() != width {
            return Err(FlrError::Parse {
                row,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} cells, found {}", rec.len()),
            });
        }
        responses.push(parse_cell(&rec[0], row, 1)?);
        let values = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, cell)| parse_cell(cell, row, j + 1))
            .collect::<Result<Vec<_>>>()?;
        curves.push(Curve {
            grid: Arc::clone(&grid),
            values,
        });
    }
    if curves.is_empty() {
        return Err(FlrError::Parse {
            row: 2,
            column: 1,
            message: "no curve rows".into(),
        });
    }
    Dataset::new(grid, curves, responses)
}

fn csv_error(e: csv::Error, row: usize) -> FlrError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FlrError::Io(io),
        other => FlrError::Parse {
            row,
            column: 1,
            message: format!("{other:?}"),
        },
    }
}

/// Writes the dataset CSV layout with shortest round-trip float formatting.
pub fn write_dataset_csv<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    let mut line = String::from("t");
    for t in data.grid.points() {
        line.push(',');
        line.push_str(&t.to_string());
    }
    line.push('\n');
    out.write_all(line.as_bytes())?;
    for (curve, y) in data.curves.iter().zip(&data.responses) {
        line.clear();
        line.push_str(&y.to_string());
        for v in curve.values() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_csv(BufReader::new(File::open(path)?))
}

pub fn save_dataset_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_csv(data, BufWriter::new(File::create(path)?))
}
