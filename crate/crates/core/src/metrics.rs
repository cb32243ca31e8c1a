//! Summary metrics over trajectory logs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{EventKind, TrajectoryLog};

/// Which log columns feed each metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRefs {
    pub inputs: Vec<String>,
    pub position_error: Vec<String>,
    pub orientation_error: Option<String>,
    pub barriers: Vec<String>,
}

impl MetricsRefs {
    pub fn arm() -> Self {
        Self {
            inputs: vec!["u1".into(), "u2".into()],
            position_error: vec!["ex".into(), "ey".into()],
            orientation_error: None,
            barriers: vec!["h".into()],
        }
    }

    pub fn magnetic() -> Self {
        Self {
            inputs: (1..=4).map(|i| format!("I{i}")).collect(),
            position_error: vec!["ex".into(), "ey".into()],
            orientation_error: Some("etheta".into()),
            barriers: vec!["h_min".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rms_position_error: f64,
    pub rms_orientation_error: Option<f64>,
    pub max_abs_input: Vec<f64>,
    /// Baseline peak over filtered peak, per input channel.
    pub spike_ratio: Option<Vec<f64>>,
    pub min_barrier_value: Option<f64>,
    pub qp_infeasible_count: usize,
    /// Seconds; filled in by whoever timed the run.
    pub wall_time: f64,
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn check_aligned(a: &TrajectoryLog, b: &TrajectoryLog) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::MisalignedLogs(format!(
            "{} rows vs {} rows",
            a.len(),
            b.len()
        )));
    }
    let (ta, tb) = (a.require_column("t")?, b.require_column("t")?);
    if let Some(k) = ta.iter().zip(&tb).position(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(Error::MisalignedLogs(format!(
            "time stamps differ at row {k}: {} vs {}",
            ta[k], tb[k]
        )));
    }
    Ok(())
}

pub fn compute_metrics(
    log: &TrajectoryLog,
    baseline: Option<&TrajectoryLog>,
    refs: &MetricsRefs,
) -> Result<MetricsReport> {
    if log.is_empty() {
        return Err(Error::MisalignedLogs("log is empty".into()));
    }
    let n = log.len() as f64;

    let mut sq = vec![0.0; log.len()];
    for name in &refs.position_error {
        for (acc, e) in sq.iter_mut().zip(log.require_column(name)?) {
            *acc += e * e;
        }
    }
    let rms_position_error = (sq.iter().sum::<f64>() / n).sqrt();

    let rms_orientation_error = refs
        .orientation_error
        .as_ref()
        .map(|name| -> Result<f64> {
            let col = log.require_column(name)?;
            Ok((col.iter().map(|e| wrap_angle(*e).powi(2)).sum::<f64>() / n).sqrt())
        })
        .transpose()?;

    let max_abs_input = refs
        .inputs
        .iter()
        .map(|name| log.require_column(name).map(|c| max_abs(&c)))
        .collect::<Result<Vec<_>>>()?;

    let spike_ratio = baseline
        .map(|base| -> Result<Vec<f64>> {
            check_aligned(log, base)?;
            refs.inputs
                .iter()
                .zip(&max_abs_input)
                .map(|(name, filtered)| {
                    let peak = max_abs(&base.require_column(name)?);
                    Ok(if peak == *filtered {
                        1.0
                    } else {
                        peak / filtered
                    })
                })
                .collect()
        })
        .transpose()?;

    let mut min_barrier_value: Option<f64> = None;
    for name in &refs.barriers {
        if let Some(col) = log.column(name) {
            let m = col.iter().copied().fold(f64::INFINITY, f64::min);
            min_barrier_value = Some(min_barrier_value.map_or(m, |v| v.min(m)));
        }
    }

    Ok(MetricsReport {
        rms_position_error,
        rms_orientation_error,
        max_abs_input,
        spike_ratio,
        min_barrier_value,
        qp_infeasible_count: log.count_events(EventKind::QpInfeasible),
        wall_time: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn magnetic_log(ex: f64, etheta: f64, current: f64) -> TrajectoryLog {
        let mut log = TrajectoryLog::new(&[
            "t",
            "x",
            "y",
            "theta",
            "I1",
            "I2",
            "I3",
            "I4",
            "h_min",
            "ex",
            "ey",
            "etheta",
            "active_obstacle",
        ]);
        for k in 0..5 {
            let t = k as f64 * 0.1;
            log.push(vec![
                t, 0.0, 0.0, 0.0, current, -current, 0.5, 0.0, 0.2, ex, 0.0, etheta, -1.0,
            ]);
        }
        log
    }

    #[test]
    fn constant_position_error() {
        let log = magnetic_log(3e-3, 0.0, 1.0);
        let r = compute_metrics(&log, None, &MetricsRefs::magnetic()).unwrap();
        assert_relative_eq!(r.rms_position_error, 3e-3, epsilon = 1e-15);
        assert_eq!(r.max_abs_input, vec![1.0, 1.0, 0.5, 0.0]);
        assert_eq!(r.min_barrier_value, Some(0.2));
        assert!(r.spike_ratio.is_none());
    }

    #[test]
    fn orientation_error_is_wrapped() {
        let log = magnetic_log(0.0, PI + 0.1, 1.0);
        let r = compute_metrics(&log, None, &MetricsRefs::magnetic()).unwrap();
        assert_relative_eq!(r.rms_orientation_error.unwrap(), PI - 0.1, epsilon = 1e-12);
    }

    #[test]
    fn identical_logs_have_unit_spike_ratio() {
        let log = magnetic_log(0.0, 0.0, 2.0);
        let r = compute_metrics(&log, Some(&log), &MetricsRefs::magnetic()).unwrap();
        assert_eq!(r.spike_ratio, Some(vec![1.0; 4]));
    }

    #[test]
    fn spike_ratio_divides_peaks() {
        let filtered = magnetic_log(0.0, 0.0, 2.0);
        let baseline = magnetic_log(0.0, 0.0, 50.0);
        let r = compute_metrics(&filtered, Some(&baseline), &MetricsRefs::magnetic()).unwrap();
        assert_relative_eq!(r.spike_ratio.unwrap()[0], 25.0);
    }

    #[test]
    fn misaligned_logs_are_rejected() {
        let a = magnetic_log(0.0, 0.0, 1.0);
        let mut b = a.clone();
        b.rows.pop();
        assert!(compute_metrics(&a, Some(&b), &MetricsRefs::magnetic()).is_err());
        let mut c = a.clone();
        c.rows[2][0] += 0.5;
        assert!(compute_metrics(&a, Some(&c), &MetricsRefs::magnetic()).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI + 0.25), -PI + 0.25, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.3), 0.3);
    }
}
