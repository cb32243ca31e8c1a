//! Scenario files.
//!
//! A scenario is one TOML document. Only `scenario` is required; every
//! section falls back to the library defaults. Keys nobody reads are
//! rejected, and all problems found in a file are reported together.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use singular_cbf::arm::{GradientMode, Waypoint};
use singular_cbf::magnetic::TimedPose;
use singular_cbf::{
    AgentParams, AgentState, ArmParameters, ArmScenario, ArmState, ClassK, CoilConfig, Integrator,
    MagneticRig, MagneticScenario, PosePath, SimulatorConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ArmSpike,
    MagneticSuture,
    SingularMap,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ArmSpike => "arm_spike",
            ScenarioKind::MagneticSuture => "magnetic_suture",
            ScenarioKind::SingularMap => "singular_map",
        }
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::ArmSpike => &["sim", "arm"],
            ScenarioKind::MagneticSuture => &["sim", "rig", "suture", "obstacles"],
            ScenarioKind::SingularMap => &["arm", "rig", "map"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "enabled")]
    pub cbf: bool,
    /// Recorded with the outputs; the shipped scenarios are deterministic.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Infeasible QP steps tolerated before a run counts as failed.
    #[serde(default)]
    pub max_qp_infeasible: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<RigSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suture: Option<SutureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<ObstacleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSection>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub dt: f64,
    /// Defaults to 10 s for the arm and to the path length plus 2 s for
    /// the rig.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub integrator: Integrator,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimulatorConfig::default();
        Self {
            dt: d.dt,
            t_end: None,
            integrator: d.integrator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmSection {
    pub l1: f64,
    pub l2: f64,
    pub kp: f64,
    pub epsilon: f64,
    pub q0: [f64; 2],
    pub waypoints: Vec<Waypoint>,
    pub alpha: ClassK,
    pub gradient: GradientMode,
}

impl Default for ArmSection {
    fn default() -> Self {
        let p = ArmParameters::default();
        let s = ArmScenario::two_task(true);
        Self {
            l1: p.l1,
            l2: p.l2,
            kp: p.kp,
            epsilon: p.epsilon,
            q0: [s.q0.q1, s.q0.q2],
            waypoints: s.waypoints,
            alpha: s.alpha,
            gradient: s.gradient,
        }
    }
}

/// Either a ring of `count` coils or explicit positions and moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CoilSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0_over_4pi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSection {
    pub m0: f64,
    pub c_t: f64,
    pub c_r: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentParams::default();
        Self {
            m0: a.m0,
            c_t: a.c_t,
            c_r: a.c_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RigSection {
    pub coils: CoilSection,
    pub agent: AgentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathSection {
    Stitch {
        entries: Vec<f64>,
        half_width: f64,
        theta: f64,
        speed: f64,
        dwell: f64,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
        period: f64,
        theta: f64,
    },
    Waypoints {
        points: Vec<TimedPose>,
    },
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection::Stitch {
            entries: vec![-6e-3, 0.0, 6e-3],
            half_width: 5e-3,
            theta: 0.1,
            speed: 2e-3,
            dwell: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SutureSection {
    /// `[x, y, θ]`; defaults to the start of the path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 3]>,
    pub path: PathSection,
    pub gains: [f64; 3],
    pub weight: [f64; 3],
    pub regularization: f64,
    pub current_limit: f64,
    pub alpha: ClassK,
}

impl Default for SutureSection {
    fn default() -> Self {
        let s = MagneticScenario::suture(true);
        Self {
            start: None,
            path: PathSection::default(),
            gains: s.gains,
            weight: s.weight,
            regularization: s.regularization,
            current_limit: s.current_limit,
            alpha: s.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleSection {
    /// Singular-value level of the obstacle surface.
    pub iso: f64,
    /// Safety margin in grid cells.
    pub delta_cells: f64,
    pub max_rows: usize,
    /// Nodes along x, y and θ.
    pub grid: [usize; 3],
    /// Precomputed singular-value grid CSV (as written by `map`), used
    /// instead of sampling `grid`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<PathBuf>,
}

impl Default for ObstacleSection {
    fn default() -> Self {
        Self {
            iso: 1e-3,
            delta_cells: 1.0,
            max_rows: 16,
            grid: [40, 40, 60],
            field: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapSystem {
    Arm,
    #[default]
    Rig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapSection {
    pub system: MapSystem,
    pub threshold: f64,
    /// Nodes per state axis; defaults to 121 × 121 for the arm and
    /// 40 × 40 × 60 for the rig.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
}

impl Default for MapSection {
    fn default() -> Self {
        Self {
            system: MapSystem::Rig,
            threshold: 1e-3,
            grid: None,
        }
    }
}

/// One problem in a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted key path, e.g. `arm.epsilon`.
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("{} problem(s):\n  {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ScenarioConfig, ConfigError> {
    let mut unknown = Vec::new();
    let de = toml::Deserializer::new(text);
    let parsed: Result<ScenarioConfig, _> = serde_ignored::deserialize(de, |path| {
        // Optional sections show up as a `?` segment.
        let full = path.to_string();
        let key: Vec<&str> = full.split('.').filter(|s| *s != "?").collect();
        unknown.push(key.join("."));
    });
    let mut issues: Vec<ConfigIssue> = unknown
        .into_iter()
        .map(|key| ConfigIssue {
            key,
            message: "unknown key".into(),
        })
        .collect();
    let mut cfg = match parsed {
        Ok(cfg) => cfg,
        Err(e) if issues.is_empty() => {
            return Err(ConfigError::Syntax(e.to_string().trim().into()))
        }
        Err(e) => {
            issues.push(ConfigIssue {
                key: "(document)".into(),
                message: e.to_string().trim().into(),
            });
            return Err(ConfigError::Invalid(issues));
        }
    };
    cfg.base_dir = base_dir.to_path_buf();
    issues.extend(cfg.check());
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            key: key.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, key: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.push(key, format!("must be positive and finite, got {v}"));
        }
    }

    fn non_negative(&mut self, key: &str, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.push(key, format!("must be non-negative and finite, got {v}"));
        }
    }

    fn finite(&mut self, key: &str, values: &[f64]) {
        if values.iter().any(|v| !v.is_finite()) {
            self.push(key, "must be finite");
        }
    }

    fn class_k(&mut self, key: &str, alpha: &ClassK) {
        self.positive(&format!("{key}.gamma"), alpha.gamma());
    }

    /// Cross-field checks live in the library; report them against the
    /// section they came from.
    fn library(&mut self, section: &str, result: singular_cbf::Result<()>) {
        match result {
            Ok(()) => {}
            Err(singular_cbf::Error::InvalidParameter { name, reason }) => {
                let key = if section.ends_with(name) {
                    section.to_string()
                } else {
                    format!("{section}.{name}")
                };
                self.push(key, reason)
            }
            Err(e) => self.push(section, e.to_string()),
        }
    }
}

impl ScenarioConfig {
    fn check(&self) -> Vec<ConfigIssue> {
        let mut issues = Issues(Vec::new());
        let present = [
            ("sim", self.sim.is_some()),
            ("arm", self.arm.is_some()),
            ("rig", self.rig.is_some()),
            ("suture", self.suture.is_some()),
            ("obstacles", self.obstacles.is_some()),
            ("map", self.map.is_some()),
        ];
        let used = self.scenario.sections();
        for (name, here) in present {
            if here && !used.contains(&name) {
                issues.push(
                    name,
                    format!("section is not used by scenario {}", self.scenario.name()),
                );
            }
        }
        match self.scenario {
            ScenarioKind::ArmSpike => {
                self.check_sim(&mut issues);
                self.check_arm(&mut issues);
            }
            ScenarioKind::MagneticSuture => {
                self.check_sim(&mut issues);
                self.check_rig(&mut issues, true);
                self.check_suture(&mut issues);
                self.check_obstacles(&mut issues);
            }
            ScenarioKind::SingularMap => {
                let map = self.map_section();
                issues.positive("map.threshold", map.threshold);
                let dims = match map.system {
                    MapSystem::Arm => {
                        if self.rig.is_some() {
                            issues.push("rig", "section is not used when map.system = \"arm\"");
                        }
                        self.check_arm(&mut issues);
                        2
                    }
                    MapSystem::Rig => {
                        if self.arm.is_some() {
                            issues.push("arm", "section is not used when map.system = \"rig\"");
                        }
                        self.check_rig(&mut issues, false);
                        3
                    }
                };
                if let Some(grid) = &map.grid {
                    if grid.len() != dims {
                        issues.push(
                            "map.grid",
                            format!("needs {dims} node counts, got {}", grid.len()),
                        );
                    }
                    if grid.iter().any(|n| *n < 2) {
                        issues.push("map.grid", "every axis needs at least 2 nodes");
                    }
                }
            }
        }
        issues.0
    }

    fn check_sim(&self, issues: &mut Issues) {
        let sim = self.sim.clone().unwrap_or_default();
        issues.positive("sim.dt", sim.dt);
        if let Some(t) = sim.t_end {
            issues.positive("sim.t_end", t);
            if t > 0.0 && sim.dt > 0.0 && t < sim.dt {
                issues.push("sim.t_end", "must be at least one step long");
            }
        }
    }

    fn check_arm(&self, issues: &mut Issues) {
        let before = issues.0.len();
        let arm = self.arm_section();
        issues.positive("arm.l1", arm.l1);
        issues.positive("arm.l2", arm.l2);
        issues.positive("arm.kp", arm.kp);
        issues.positive("arm.epsilon", arm.epsilon);
        issues.finite("arm.q0", &arm.q0);
        issues.class_k("arm.alpha", &arm.alpha);
        if issues.0.len() == before {
            let (p, mut s) = self.arm_setup();
            // A map never starts from q0.
            s.cbf_enabled &= self.scenario == ScenarioKind::ArmSpike;
            issues.library("arm", s.validate(&p));
        }
    }

    fn check_rig(&self, issues: &mut Issues, needs_four: bool) {
        let before = issues.0.len();
        let rig = self.rig.clone().unwrap_or_default();
        let c = &rig.coils;
        let radial = c.count.is_some() || c.radius.is_some() || c.moment.is_some();
        let explicit = c.positions.is_some() || c.moments.is_some();
        if radial && explicit {
            issues.push(
                "rig.coils",
                "give either count/radius/moment or positions/moments, not both",
            );
        }
        if explicit && (c.positions.is_none() || c.moments.is_none()) {
            issues.push("rig.coils", "positions and moments must be given together");
        }
        if let Some(r) = c.radius {
            issues.positive("rig.coils.radius", r);
        }
        if let Some(m) = c.mu0_over_4pi {
            issues.positive("rig.coils.mu0_over_4pi", m);
        }
        if c.count == Some(0) {
            issues.push("rig.coils.count", "must be at least 1");
        }
        issues.positive("rig.agent.m0", rig.agent.m0);
        issues.positive("rig.agent.c_t", rig.agent.c_t);
        issues.positive("rig.agent.c_r", rig.agent.c_r);
        if issues.0.len() == before {
            let coils = self.coil_config();
            issues.library("rig.coils", coils.validate());
            if needs_four && coils.count() != 4 {
                issues.push(
                    "rig.coils",
                    format!(
                        "the suture controller drives 4 coils, got {}",
                        coils.count()
                    ),
                );
            }
        }
    }

    fn check_suture(&self, issues: &mut Issues) {
        let before = issues.0.len();
        let s = self.suture.clone().unwrap_or_default();
        for (k, g) in s.gains.iter().enumerate() {
            issues.positive(&format!("suture.gains[{k}]"), *g);
        }
        for (k, w) in s.weight.iter().enumerate() {
            issues.positive(&format!("suture.weight[{k}]"), *w);
        }
        issues.positive("suture.regularization", s.regularization);
        issues.positive("suture.current_limit", s.current_limit);
        issues.class_k("suture.alpha", &s.alpha);
        if let Some(start) = s.start {
            issues.finite("suture.start", &start);
        }
        match &s.path {
            PathSection::Stitch {
                entries,
                half_width,
                theta,
                speed,
                dwell,
            } => {
                if entries.is_empty() {
                    issues.push("suture.path.entries", "needs at least one entry point");
                }
                issues.finite("suture.path.entries", entries);
                issues.positive("suture.path.half_width", *half_width);
                issues.finite("suture.path.theta", &[*theta]);
                issues.positive("suture.path.speed", *speed);
                issues.non_negative("suture.path.dwell", *dwell);
            }
            PathSection::Circle { .. } | PathSection::Waypoints { .. } => {}
        }
        if issues.0.len() == before {
            issues.library("suture", self.suture_scenario().validate());
        }
    }

    fn check_obstacles(&self, issues: &mut Issues) {
        let o = self.obstacle_section();
        issues.positive("obstacles.iso", o.iso);
        issues.non_negative("obstacles.delta_cells", o.delta_cells);
        if o.grid.iter().any(|n| *n < 2) {
            issues.push("obstacles.grid", "every axis needs at least 2 nodes");
        }
        if let Some(field) = &o.field {
            let path = self.resolve(field);
            if !path.is_file() {
                issues.push(
                    "obstacles.field",
                    format!("file {} does not exist", path.display()),
                );
            }
        }
    }

    /// Paths in the file are relative to the file.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn arm_section(&self) -> ArmSection {
        self.arm.clone().unwrap_or_default()
    }

    pub fn obstacle_section(&self) -> ObstacleSection {
        self.obstacles.clone().unwrap_or_default()
    }

    pub fn map_section(&self) -> MapSection {
        self.map.clone().unwrap_or_default()
    }

    pub fn arm_setup(&self) -> (ArmParameters, ArmScenario) {
        let a = self.arm_section();
        let p = ArmParameters {
            l1: a.l1,
            l2: a.l2,
            kp: a.kp,
            epsilon: a.epsilon,
        };
        let s = ArmScenario {
            q0: ArmState::new(a.q0[0], a.q0[1]),
            waypoints: a.waypoints,
            cbf_enabled: self.cbf,
            alpha: a.alpha,
            gradient: a.gradient,
        };
        (p, s)
    }

    pub fn coil_config(&self) -> CoilConfig {
        let c = self.rig.clone().unwrap_or_default().coils;
        let mut coils = match (c.positions, c.moments) {
            (Some(positions), Some(moments)) => CoilConfig {
                positions,
                moments,
                ..CoilConfig::default()
            },
            _ => {
                let d = CoilConfig::default();
                CoilConfig::radial(
                    c.count.unwrap_or(d.count()),
                    c.radius.unwrap_or(d.position(0).norm()),
                    c.moment.unwrap_or(d.moment(0).norm()),
                )
            }
        };
        if let Some(k) = c.mu0_over_4pi {
            coils.mu0_over_4pi = k;
        }
        coils
    }

    pub fn rig(&self) -> singular_cbf::Result<MagneticRig> {
        let a = self.rig.clone().unwrap_or_default().agent;
        MagneticRig::new(
            self.coil_config(),
            AgentParams {
                m0: a.m0,
                c_t: a.c_t,
                c_r: a.c_r,
            },
        )
    }

    pub fn suture_scenario(&self) -> MagneticScenario {
        let s = self.suture.clone().unwrap_or_default();
        let path = match s.path {
            PathSection::Stitch {
                entries,
                half_width,
                theta,
                speed,
                dwell,
            } => PosePath::stitch(&entries, half_width, theta, speed, dwell),
            PathSection::Circle {
                center,
                radius,
                period,
                theta,
            } => PosePath::Circle {
                center,
                radius,
                period,
                theta,
            },
            PathSection::Waypoints { points } => PosePath::Waypoints { points },
        };
        let start = match s.start {
            Some([x, y, theta]) => AgentState::new(x, y, theta),
            None => path.sample(0.0).0,
        };
        MagneticScenario {
            start,
            path,
            gains: s.gains,
            weight: s.weight,
            regularization: s.regularization,
            current_limit: s.current_limit,
            alpha: s.alpha,
            cbf_enabled: self.cbf,
        }
    }

    /// Simulation settings, with the scenario-dependent default end time.
    pub fn simulator(&self) -> singular_cbf::Result<SimulatorConfig> {
        let sim = self.sim.clone().unwrap_or_default();
        let t_end = sim.t_end.unwrap_or_else(|| match self.scenario {
            ScenarioKind::MagneticSuture => self.suture_scenario().path.duration() + 2.0,
            _ => SimulatorConfig::default().t_end,
        });
        SimulatorConfig::new(sim.dt, t_end, sim.integrator)
    }

    /// The config with every default written out.
    pub fn resolved(&self) -> ScenarioConfig {
        let mut out = self.clone();
        let mut sim = self.sim.clone().unwrap_or_default();
        if let Ok(s) = self.simulator() {
            sim.t_end = Some(s.t_end);
        }
        match self.scenario {
            ScenarioKind::ArmSpike => {
                out.sim = Some(sim);
                out.arm = Some(self.arm_section());
            }
            ScenarioKind::MagneticSuture => {
                out.sim = Some(sim);
                out.rig = Some(self.resolved_rig());
                out.suture = Some(self.suture.clone().unwrap_or_default());
                out.obstacles = Some(self.obstacle_section());
            }
            ScenarioKind::SingularMap => {
                let map = self.map_section();
                match map.system {
                    MapSystem::Arm => out.arm = Some(self.arm_section()),
                    MapSystem::Rig => out.rig = Some(self.resolved_rig()),
                }
                out.map = Some(map);
            }
        }
        out
    }

    fn resolved_rig(&self) -> RigSection {
        let coils = self.coil_config();
        RigSection {
            coils: CoilSection {
                positions: Some(coils.positions),
                moments: Some(coils.moments),
                mu0_over_4pi: Some(coils.mu0_over_4pi),
                ..CoilSection::default()
            },
            agent: self.rig.clone().unwrap_or_default().agent,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
        parse_config_str(text, Path::new("."))
    }

    fn keys(e: &ConfigError) -> Vec<&str> {
        e.issues().iter().map(|i| i.key.as_str()).collect()
    }

    #[test]
    fn minimal_arm_config_takes_defaults() {
        let cfg = parse("scenario = \"arm_spike\"").unwrap();
        assert!(cfg.cbf);
        let (p, s) = cfg.arm_setup();
        assert_eq!(p, ArmParameters::default());
        assert_eq!(s, ArmScenario::two_task(true));
        assert_eq!(cfg.simulator().unwrap(), SimulatorConfig::default());
    }

    #[test]
    fn negative_epsilon_names_the_key() {
        let e = parse("scenario = \"arm_spike\"\n[arm]\nepsilon = -1.0\n").unwrap_err();
        assert_eq!(keys(&e), vec!["arm.epsilon"]);
    }

    #[test]
    fn unknown_key_is_listed() {
        let e = parse("scenario = \"arm_spike\"\n[arm]\nepsilonn = 0.2\n").unwrap_err();
        assert_eq!(keys(&e), vec!["arm.epsilonn"]);
    }

    #[test]
    fn all_problems_are_reported_together() {
        let text = "scenario = \"arm_spike\"\ntypo = 1\n[sim]\ndt = 0.0\n[arm]\nkp = -2.0\nepsilon = 0.0\n";
        let e = parse(text).unwrap_err();
        assert_eq!(keys(&e), vec!["typo", "sim.dt", "arm.kp", "arm.epsilon"]);
    }

    #[test]
    fn sections_must_match_the_scenario() {
        let e = parse("scenario = \"arm_spike\"\n[suture]\ncurrent_limit = 2.0\n").unwrap_err();
        assert_eq!(keys(&e), vec!["suture"]);
    }

    #[test]
    fn unreachable_waypoint_is_rejected() {
        let text =
            "scenario = \"arm_spike\"\n[arm]\nwaypoints = [{ target = [3.0, 0.0], until = inf }]\n";
        let e = parse(text).unwrap_err();
        assert_eq!(keys(&e), vec!["arm.waypoints"]);
    }

    #[test]
    fn start_below_epsilon_is_rejected_only_with_the_filter() {
        let text = "scenario = \"arm_spike\"\n[arm]\nq0 = [0.0, 0.05]\n";
        assert_eq!(keys(&parse(text).unwrap_err()), vec!["arm.q0"]);
        assert!(parse(&format!("cbf = false\n{text}")).is_ok());
    }

    #[test]
    fn suture_defaults_match_the_library() {
        let cfg = parse("scenario = \"magnetic_suture\"").unwrap();
        assert_eq!(cfg.suture_scenario(), MagneticScenario::suture(true));
        assert_eq!(cfg.coil_config(), CoilConfig::default());
        let sim = cfg.simulator().unwrap();
        assert_eq!(
            sim.t_end,
            MagneticScenario::suture(true).path.duration() + 2.0
        );
    }

    #[test]
    fn circle_path_and_explicit_coils() {
        let text = r#"
scenario = "magnetic_suture"
cbf = false
[rig.coils]
positions = [[0.04, 0.0], [0.0, 0.04], [-0.04, 0.0], [0.0, -0.04]]
moments = [[-5.0, 0.0], [0.0, -5.0], [5.0, 0.0], [0.0, 5.0]]
[suture.path]
kind = "circle"
center = [0.0, 0.0]
radius = 0.008
period = 20.0
theta = 0.785
"#;
        let cfg = parse(text).unwrap();
        assert!(!cfg.suture_scenario().cbf_enabled);
        assert!(matches!(
            cfg.suture_scenario().path,
            PosePath::Circle { .. }
        ));
        let coils = cfg.coil_config();
        let d = CoilConfig::default();
        for i in 0..4 {
            assert!((coils.position(i) - d.position(i)).amax() < 1e-15);
        }
    }

    #[test]
    fn mixed_coil_forms_are_rejected() {
        let text = "scenario = \"magnetic_suture\"\n[rig.coils]\ncount = 4\npositions = [[0.04, 0.0]]\nmoments = [[1.0, 0.0]]\n";
        let e = parse(text).unwrap_err();
        assert!(keys(&e).contains(&"rig.coils"));
    }

    #[test]
    fn missing_field_file_is_reported() {
        let text = "scenario = \"magnetic_suture\"\n[obstacles]\nfield = \"nope.csv\"\n";
        let e = parse(text).unwrap_err();
        assert_eq!(keys(&e), vec!["obstacles.field"]);
    }

    #[test]
    fn map_grid_dimension_follows_the_system() {
        let e =
            parse("scenario = \"singular_map\"\n[map]\nsystem = \"arm\"\ngrid = [10, 10, 10]\n")
                .unwrap_err();
        assert_eq!(keys(&e), vec!["map.grid"]);
        assert!(
            parse("scenario = \"singular_map\"\n[map]\nsystem = \"arm\"\ngrid = [10, 10]\n")
                .is_ok()
        );
    }

    #[test]
    fn syntax_errors_are_not_validation_errors() {
        assert!(matches!(parse("scenario = "), Err(ConfigError::Syntax(_))));
        assert!(matches!(
            parse("scenario = \"orbit\""),
            Err(ConfigError::Syntax(_))
        ));
    }

    #[test]
    fn resolved_config_round_trips() {
        let original = parse("scenario = \"magnetic_suture\"").unwrap();
        let cfg = original.resolved();
        let again = parse(&cfg.to_toml()).unwrap();
        assert_eq!(again.resolved(), cfg);
        assert_eq!(again.coil_config(), original.coil_config());
        assert_eq!(again.suture_scenario(), original.suture_scenario());
    }
}
