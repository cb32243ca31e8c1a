//! Scenario execution and the files each run leaves behind.
//!
//! A trajectory run writes `trajectory.csv`, `events.json`,
//! `metrics.json`, the fully resolved `config.toml`, per-step
//! `diagnostics.jsonl` when the filter is on, and SVG plots. A map run
//! writes `point_cloud.csv`, `sigma_grid.csv`, `singular_set.obj` (rig
//! only) and `map.json`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use singular_cbf::magnetic::WORKSPACE_DIAMETER;
use singular_cbf::metrics::MetricsRefs;
use singular_cbf::spectrum::{sigma_min_field, write_point_cloud_csv};
use singular_cbf::trajectory::LogEvent;
use singular_cbf::{
    compute_metrics, extract_boundary_mesh, run_arm_scenario, run_suturing_scenario,
    sample_singular_set, GridAxis, GridField, GridSpec, MetricsReport, ObstacleSet, PlanarArm,
    SystemModel, TrajectoryLog,
};

use crate::config::{MapSystem, ScenarioConfig, ScenarioKind};
use crate::output::{write_string, write_with};
use crate::plot::{render, Panel, Series};
use crate::CliError;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub log: TrajectoryLog,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub system: MapSystem,
    pub threshold: f64,
    pub grid: Vec<usize>,
    pub samples: usize,
    /// Boundary mesh components; absent for two-dimensional state spaces.
    pub components: Option<usize>,
    pub triangles: Option<usize>,
    pub wall_time: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn in_scenario(kind: ScenarioKind) -> impl FnOnce(singular_cbf::Error) -> CliError {
    move |source| CliError::Scenario {
        scenario: kind.name(),
        source,
    }
}

/// Runs an arm or rig scenario and writes its artifacts to `out`.
///
/// Fails with [`CliError::TooManyInfeasible`] after writing everything when
/// the QP gave up more often than the config tolerates.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<RunOutput, CliError> {
    let kind = cfg.scenario;
    let sim = cfg.simulator().map_err(in_scenario(kind))?;
    let start = Instant::now();
    let (log, refs) = match kind {
        ScenarioKind::ArmSpike => {
            let (p, s) = cfg.arm_setup();
            let log = run_arm_scenario(&p, &s, &sim).map_err(in_scenario(kind))?;
            (log, MetricsRefs::arm())
        }
        ScenarioKind::MagneticSuture => {
            let rig = cfg.rig().map_err(in_scenario(kind))?;
            let obstacles = build_obstacles(cfg, &rig)?;
            let scenario = cfg.suture_scenario();
            let log = run_suturing_scenario(&rig, &scenario, &obstacles, &sim)
                .map_err(in_scenario(kind))?;
            (log, MetricsRefs::magnetic())
        }
        ScenarioKind::SingularMap => {
            return Err(CliError::Usage(
                "singular_map configs produce maps, not trajectories; use `map`".into(),
            ))
        }
    };
    let mut report = compute_metrics(&log, None, &refs).map_err(in_scenario(kind))?;
    report.wall_time = start.elapsed().as_secs_f64();
    log::info!(
        "{}: {} steps in {:.2} s, rms position error {:.3e}",
        kind.name(),
        log.len(),
        report.wall_time,
        report.rms_position_error
    );

    write_run(cfg, out, &log, &report)?;
    if report.qp_infeasible_count > cfg.max_qp_infeasible {
        return Err(CliError::TooManyInfeasible {
            scenario: kind.name(),
            count: report.qp_infeasible_count,
            max: cfg.max_qp_infeasible,
        });
    }
    Ok(RunOutput {
        dir: out.to_path_buf(),
        log,
        report,
    })
}

/// Singular-value obstacles for the rig: from the configured grid file,
/// or sampled on the configured grid over the workspace.
pub fn build_obstacles(
    cfg: &ScenarioConfig,
    rig: &singular_cbf::MagneticRig,
) -> Result<ObstacleSet, CliError> {
    let kind = cfg.scenario;
    let o = cfg.obstacle_section();
    let set = match &o.field {
        Some(file) => {
            let path = cfg.resolve(file);
            let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
            let (_, field) = GridField::read_csv(reader).map_err(in_scenario(kind))?;
            ObstacleSet::from_field(&field, o.iso, o.delta_cells, o.max_rows)
        }
        None => ObstacleSet::build(rig, &rig_grid(&o.grid), o.iso, o.delta_cells, o.max_rows),
    }
    .map_err(in_scenario(kind))?;
    log::info!(
        "obstacles: {} components, {} triangles, delta {:.4}",
        set.mesh.component_count(),
        set.mesh.triangles.len(),
        set.delta
    );
    Ok(set)
}

fn rig_grid(counts: &[usize]) -> GridSpec {
    let r = WORKSPACE_DIAMETER / 2.0;
    GridSpec::new(vec![
        GridAxis::new(-r, r, counts[0]),
        GridAxis::new(-r, r, counts[1]),
        GridAxis::new(-PI, PI, counts[2]),
    ])
    .expect("validated counts")
}

fn write_run(
    cfg: &ScenarioConfig,
    dir: &Path,
    log: &TrajectoryLog,
    report: &MetricsReport,
) -> Result<(), CliError> {
    let file = |name: &str| dir.join(name);
    let p = file(TRAJECTORY_FILE);
    write_with(&p, |out| log.write_csv(out)).map_err(io_err(&p))?;
    let p = file(EVENTS_FILE);
    write_string(&p, &(to_json(&log.events) + "\n")).map_err(io_err(&p))?;
    let p = file(METRICS_FILE);
    write_string(&p, &(to_json(report) + "\n")).map_err(io_err(&p))?;
    let p = file("config.toml");
    write_string(&p, &cfg.resolved().to_toml()).map_err(io_err(&p))?;
    if !log.diagnostics.is_empty() {
        let p = file("diagnostics.jsonl");
        crate::output::write_atomic(&p, |out| {
            for d in &log.diagnostics {
                writeln!(out, "{}", d.to_json())?;
            }
            Ok(())
        })
        .map_err(io_err(&p))?;
    }
    for (name, svg) in run_plots(cfg.scenario, log) {
        let p = file(name);
        write_string(&p, &svg).map_err(io_err(&p))?;
    }
    Ok(())
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn series(log: &TrajectoryLog, column: &str, label: &str, scale: f64) -> Series {
    let y = log
        .column(column)
        .unwrap_or_default()
        .into_iter()
        .map(|v| v * scale)
        .collect();
    Series::new(label, log.times(), y)
}

fn run_plots(kind: ScenarioKind, log: &TrajectoryLog) -> Vec<(&'static str, String)> {
    match kind {
        ScenarioKind::ArmSpike => {
            let eps: Vec<f64> = log
                .column("lambda1")
                .unwrap_or_default()
                .iter()
                .zip(log.column("h").unwrap_or_default())
                .map(|(l, h)| l - h)
                .collect();
            vec![
                (
                    "joints.svg",
                    render(
                        "Joint angles and velocities",
                        "time [s]",
                        &[
                            Panel::new(
                                "Joint angles",
                                "angle [rad]",
                                vec![series(log, "q1", "q1", 1.0), series(log, "q2", "q2", 1.0)],
                            ),
                            Panel::new(
                                "Joint velocities",
                                "velocity [rad/s]",
                                vec![series(log, "u1", "dq1", 1.0), series(log, "u2", "dq2", 1.0)],
                            ),
                        ],
                    ),
                ),
                (
                    "barrier.svg",
                    render(
                        "Singularity margin and tracking",
                        "time [s]",
                        &[
                            Panel::new(
                                "Smallest eigenvalue of JJ^T",
                                "lambda1 [m^2]",
                                vec![
                                    series(log, "lambda1", "lambda1", 1.0),
                                    Series::new("epsilon", log.times(), eps).dashed(),
                                ],
                            ),
                            Panel::new(
                                "End-effector error",
                                "error [m]",
                                vec![series(log, "ex", "ex", 1.0), series(log, "ey", "ey", 1.0)],
                            ),
                        ],
                    ),
                ),
            ]
        }
        ScenarioKind::MagneticSuture => vec![
            (
                "pose_error.svg",
                render(
                    "Pose tracking and obstacle margin",
                    "time [s]",
                    &[
                        Panel::new(
                            "Position error",
                            "error [mm]",
                            vec![series(log, "ex", "ex", 1e3), series(log, "ey", "ey", 1e3)],
                        ),
                        Panel::new(
                            "Heading error",
                            "error [rad]",
                            vec![series(log, "etheta", "etheta", 1.0)],
                        ),
                        Panel::new(
                            "Closest obstacle barrier",
                            "h_min [unit cube^2]",
                            vec![series(log, "h_min", "h_min", 1.0)],
                        ),
                    ],
                ),
            ),
            (
                "currents.svg",
                render(
                    "Coil currents",
                    "time [s]",
                    &[Panel::new(
                        "Coil currents",
                        "current [A]",
                        (1..=4)
                            .map(|i| series(log, &format!("I{i}"), &format!("I{i}"), 1.0))
                            .collect(),
                    )],
                ),
            ),
        ],
        ScenarioKind::SingularMap => Vec::new(),
    }
}

/// Samples the singular set of the configured system and writes the point
/// cloud, the singular-value grid and (for the rig) the boundary mesh.
pub fn run_map(cfg: &ScenarioConfig, out: &Path) -> Result<MapSummary, CliError> {
    let kind = cfg.scenario;
    if kind != ScenarioKind::SingularMap {
        return Err(CliError::Usage(format!(
            "`map` needs a singular_map config, got {}",
            kind.name()
        )));
    }
    let map = cfg.map_section();
    let start = Instant::now();
    let (model, grid, names): (Box<dyn SystemModel>, GridSpec, Vec<&str>) = match map.system {
        MapSystem::Arm => {
            let counts = map.grid.clone().unwrap_or_else(|| vec![121, 121]);
            let grid = GridSpec::new(counts.iter().map(|n| GridAxis::new(-PI, PI, *n)).collect())
                .map_err(in_scenario(kind))?;
            let (p, _) = cfg.arm_setup();
            (Box::new(PlanarArm::new(p)), grid, vec!["q1", "q2"])
        }
        MapSystem::Rig => {
            let counts = map.grid.clone().unwrap_or_else(|| vec![40, 40, 60]);
            let rig = cfg.rig().map_err(in_scenario(kind))?;
            (Box::new(rig), rig_grid(&counts), vec!["x", "y", "theta"])
        }
    };
    let field = sigma_min_field(model.as_ref(), &grid).map_err(in_scenario(kind))?;
    let samples =
        sample_singular_set(model.as_ref(), &grid, map.threshold).map_err(in_scenario(kind))?;

    let p = out.join("point_cloud.csv");
    write_with(&p, |w| write_point_cloud_csv(&samples, w)).map_err(io_err(&p))?;
    let p = out.join("sigma_grid.csv");
    write_with(&p, |w| field.write_csv(&names, w)).map_err(io_err(&p))?;

    let (mut components, mut triangles) = (None, None);
    if grid.dim() == 3 {
        let mesh =
            extract_boundary_mesh(&unit_field(&field), map.threshold).map_err(in_scenario(kind))?;
        components = Some(mesh.component_count());
        triangles = Some(mesh.triangles.len());
        let p = out.join("singular_set.obj");
        write_with(&p, |w| mesh.write_obj(w)).map_err(io_err(&p))?;
    }
    let summary = MapSummary {
        system: map.system,
        threshold: map.threshold,
        grid: grid.counts(),
        samples: samples.len(),
        components,
        triangles,
        wall_time: start.elapsed().as_secs_f64(),
    };
    let p = out.join("map.json");
    write_string(&p, &(to_json(&summary) + "\n")).map_err(io_err(&p))?;
    log::info!(
        "map: {} singular samples, {:?} components",
        summary.samples,
        summary.components
    );
    Ok(summary)
}

/// The same node values on the unit cube, so the mesh is in the
/// coordinates the obstacle barriers use.
fn unit_field(field: &GridField) -> GridField {
    let axes = field
        .grid
        .axes
        .iter()
        .map(|a| GridAxis::new(0.0, 1.0, a.count))
        .collect();
    GridField::new(
        GridSpec::new(axes).expect("same counts"),
        field.values.clone(),
    )
    .expect("same node count")
}

fn read_run(dir: &Path) -> Result<TrajectoryLog, CliError> {
    let p = dir.join(TRAJECTORY_FILE);
    let file = File::open(&p).map_err(io_err(&p))?;
    let mut log =
        TrajectoryLog::read_csv(BufReader::new(file)).map_err(|source| CliError::Scenario {
            scenario: "metrics",
            source,
        })?;
    let p = dir.join(EVENTS_FILE);
    if p.exists() {
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        log.events = serde_json::from_str::<Vec<LogEvent>>(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
    }
    Ok(log)
}

fn refs_for(log: &TrajectoryLog) -> Result<(ScenarioKind, MetricsRefs), CliError> {
    if log.column_index("q1").is_some() {
        Ok((ScenarioKind::ArmSpike, MetricsRefs::arm()))
    } else if log.column_index("I1").is_some() {
        Ok((ScenarioKind::MagneticSuture, MetricsRefs::magnetic()))
    } else {
        Err(CliError::Usage(format!(
            "unrecognised trajectory columns: {}",
            log.columns.join(",")
        )))
    }
}

/// Compares a filtered run with its unfiltered baseline. Writes
/// `comparison.json` and `comparison.svg` into the filtered run's
/// directory.
pub fn compare_runs(dir_cbf: &Path, dir_nocbf: &Path) -> Result<MetricsReport, CliError> {
    let with = read_run(dir_cbf)?;
    let without = read_run(dir_nocbf)?;
    let (kind, refs) = refs_for(&with)?;
    if refs_for(&without)?.0 != kind {
        return Err(CliError::Usage(
            "the two runs come from different scenarios".into(),
        ));
    }
    let mut report =
        compute_metrics(&with, Some(&without), &refs).map_err(|source| CliError::Scenario {
            scenario: "metrics",
            source,
        })?;
    if let Ok(text) = std::fs::read_to_string(dir_cbf.join(METRICS_FILE)) {
        if let Ok(own) = serde_json::from_str::<MetricsReport>(&text) {
            report.wall_time = own.wall_time;
        }
    }
    let p = dir_cbf.join("comparison.json");
    write_string(&p, &(to_json(&report) + "\n")).map_err(io_err(&p))?;
    let p = dir_cbf.join("comparison.svg");
    write_string(&p, &comparison_plot(kind, &with, &without)).map_err(io_err(&p))?;
    Ok(report)
}

fn comparison_plot(kind: ScenarioKind, with: &TrajectoryLog, without: &TrajectoryLog) -> String {
    let pair = |column: &str, label: &str, scale: f64| {
        vec![
            series(without, column, &format!("{label} without CBF"), scale).dashed(),
            series(with, column, &format!("{label} with CBF"), scale),
        ]
    };
    match kind {
        ScenarioKind::ArmSpike => render(
            "Joint angles and velocities with and without the CBF",
            "time [s]",
            &[
                Panel::new(
                    "Joint angles",
                    "angle [rad]",
                    [pair("q1", "q1", 1.0), pair("q2", "q2", 1.0)].concat(),
                ),
                Panel::new(
                    "Joint velocities",
                    "velocity [rad/s]",
                    [pair("u1", "dq1", 1.0), pair("u2", "dq2", 1.0)].concat(),
                ),
            ],
        ),
        _ => render(
            "Rig runs with and without the CBF",
            "time [s]",
            &[
                Panel::new(
                    "Heading error",
                    "error [rad]",
                    pair("etheta", "etheta", 1.0),
                ),
                Panel::new(
                    "Closest obstacle barrier",
                    "h_min [unit cube^2]",
                    pair("h_min", "h_min", 1.0),
                ),
                Panel::new(
                    "Largest coil current",
                    "current [A]",
                    vec![
                        Series::new("without CBF", without.times(), peak_current(without)).dashed(),
                        Series::new("with CBF", with.times(), peak_current(with)),
                    ],
                ),
            ],
        ),
    }
}

fn peak_current(log: &TrajectoryLog) -> Vec<f64> {
    let cols: Vec<Vec<f64>> = (1..=4)
        .filter_map(|i| log.column(&format!("I{i}")))
        .collect();
    (0..log.len())
        .map(|k| cols.iter().map(|c| c[k].abs()).fold(0.0, f64::max))
        .collect()
}

/// Runs the config with and without the filter, concurrently, into
/// `root/cbf` and `root/nocbf`, then compares them.
pub fn run_pair(cfg: &ScenarioConfig, root: &Path) -> Result<MetricsReport, CliError> {
    let mut on = cfg.clone();
    on.cbf = true;
    let mut off = cfg.clone();
    off.cbf = false;
    let (dir_on, dir_off) = (root.join("cbf"), root.join("nocbf"));
    let (a, b) = std::thread::scope(|s| {
        let a = s.spawn(|| run_scenario(&on, &dir_on));
        let b = s.spawn(|| run_scenario(&off, &dir_off));
        (a.join(), b.join())
    });
    let unwrap = |r: std::thread::Result<Result<RunOutput, CliError>>| match r {
        Ok(r) => r,
        Err(panic) => std::panic::resume_unwind(panic),
    };
    // An unfiltered baseline that trips the infeasibility limit is still
    // a usable baseline; it never solves a QP anyway.
    unwrap(a)?;
    match unwrap(b) {
        Ok(_) | Err(CliError::TooManyInfeasible { .. }) => {}
        Err(e) => return Err(e),
    }
    compare_runs(&dir_on, &dir_off)
}
