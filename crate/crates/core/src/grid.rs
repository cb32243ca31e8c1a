//! Regular sampling grids and scalar fields stored on them.
//!
//! Nodes are enumerated row-major with the last axis varying fastest, which
//! fixes the order of every sweep and every exported file.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + i as f64 * self.spacing()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        let spec = Self { axes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "at least one axis is required".into(),
            });
        }
        for axis in &self.axes {
            if axis.count < 2 {
                return Err(Error::InvalidParameter {
                    name: "grid",
                    reason: format!("every axis needs >= 2 nodes, got {}", axis.count),
                });
            }
            if !(axis.max > axis.min) || !axis.min.is_finite() || !axis.max.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "grid",
                    reason: format!("axis range [{}, {}] is empty", axis.min, axis.max),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    /// Per-axis indices of the flat node `flat`.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % axis.count;
            flat /= axis.count;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (i, axis)| acc * axis.count + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis.value(i))
            .collect()
    }
}

/// Scalar samples on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.node_count() {
            return Err(Error::MalformedGrid(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn<F>(grid: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let values = (0..grid.node_count()).map(|i| f(&grid.node(i))).collect();
        Self::new(grid, values)
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.flatten(idx)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// CSV with a two-line header: the axis names, then one
    /// `min:max:count` triple per axis; then one value per line in node order.
    pub fn write_csv<W: Write>(&self, names: &[&str], mut out: W) -> Result<()> {
        if names.len() != self.grid.dim() {
            return Err(Error::MalformedGrid(format!(
                "{} axis names for a {}-axis grid",
                names.len(),
                self.grid.dim()
            )));
        }
        writeln!(out, "{},value", names.join(","))?;
        let ranges: Vec<String> = self
            .grid
            .axes
            .iter()
            .map(|a| format!("{:e}:{:e}:{}", a.min, a.max, a.count))
            .collect();
        writeln!(out, "{},", ranges.join(","))?;
        for v in &self.values {
            writeln!(out, "{v:e}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`GridField::write_csv`]; returns the
    /// axis names alongside the field.
    pub fn read_csv<R: BufRead>(input: R) -> Result<(Vec<String>, Self)> {
        let mut lines = input.lines();
        let mut next_line = || -> Result<Option<String>> { Ok(lines.next().transpose()?) };
        let header = next_line()?.ok_or_else(|| Error::MalformedGrid("missing header".into()))?;
        let mut names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if names.pop().as_deref() != Some("value") {
            return Err(Error::MalformedGrid(
                "header must end with a `value` column".into(),
            ));
        }
        let ranges =
            next_line()?.ok_or_else(|| Error::MalformedGrid("missing axis ranges".into()))?;
        let mut axes = Vec::new();
        for cell in ranges.split(',').map(str::trim).filter(|c| !c.is_empty()) {
            let parts: Vec<&str> = cell.split(':').collect();
            let bad = || Error::MalformedGrid(format!("bad axis range `{cell}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            axes.push(GridAxis {
                min: parts[0].parse().map_err(|_| bad())?,
                max: parts[1].parse().map_err(|_| bad())?,
                count: parts[2].parse().map_err(|_| bad())?,
            });
        }
        if axes.len() != names.len() {
            return Err(Error::MalformedGrid(format!(
                "{} axis names but {} ranges",
                names.len(),
                axes.len()
            )));
        }
        let mut values = Vec::new();
        while let Some(line) = next_line()? {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(
                line.parse()
                    .map_err(|_| Error::MalformedGrid(format!("bad value `{line}`")))?,
            );
        }
        Ok((names, Self::new(GridSpec::new(axes)?, values)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_last_axis_fastest() {
        let grid =
            GridSpec::new(vec![GridAxis::new(0.0, 1.0, 2), GridAxis::new(0.0, 2.0, 3)]).unwrap();
        let nodes: Vec<Vec<f64>> = (0..grid.node_count()).map(|i| grid.node(i)).collect();
        assert_eq!(nodes[0], vec![0.0, 0.0]);
        assert_eq!(nodes[1], vec![0.0, 1.0]);
        assert_eq!(nodes[3], vec![1.0, 0.0]);
        for i in 0..grid.node_count() {
            assert_eq!(grid.flatten(&grid.unflatten(i)), i);
        }
    }

    #[test]
    fn rejects_single_node_axes() {
        assert!(GridSpec::new(vec![GridAxis::new(0.0, 1.0, 1)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let grid = GridSpec::new(vec![
            GridAxis::new(-1.0, 1.0, 3),
            GridAxis::new(0.0, 0.5, 2),
        ])
        .unwrap();
        let field = GridField::from_fn(grid, |p| p[0] * 3.0 + p[1]).unwrap();
        let mut buf = Vec::new();
        field.write_csv(&["x", "y"], &mut buf).unwrap();
        let (names, back) = GridField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(names, vec!["x", "y"]);
        assert_eq!(back, field);
    }

    #[test]
    fn csv_rejects_wrong_value_count() {
        let text = "x,value\n0e0:1e0:3,\n1\n2\n";
        assert!(GridField::read_csv(text.as_bytes()).is_err());
    }
}
