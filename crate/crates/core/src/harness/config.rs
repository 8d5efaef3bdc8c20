//! Scenario configuration, read from TOML. Every field has a default, so
//! an empty file describes the standard desk scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::{LadderConfig, ValueReplacement};
use crate::domain::{GridSpec, Point, TimeGrid};
use crate::error::{Error, Result};
use crate::flow::{AnalyticField, DiffusionSpec, DriftModel, EdgeConditions, Oscillation, SyntheticForcing};
use crate::placement::{PlannerConfig, WeightingConfig};
use crate::uncertainty::UncertaintyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    None,
    Industry,
    IndustryNoVelocity,
    ModelBased,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::None, Strategy::Industry, Strategy::IndustryNoVelocity, Strategy::ModelBased];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Industry => "industry",
            Strategy::IndustryNoVelocity => "industry-no-velocity",
            Strategy::ModelBased => "model-based",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    /// m
    pub dx: f64,
    pub dy: f64,
    pub edges: EdgeConditions,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 48,
            ny: 48,
            dx: 1000.0,
            dy: 1000.0,
            edges: EdgeConditions::periodic(),
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<GridSpec> {
        GridSpec::new(self.nx, self.ny, self.dx, self.dy, Point::new(0.5 * self.dx, 0.5 * self.dy))
    }
}

/// Times in seconds relative to the spill release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeConfig {
    pub dt: f64,
    /// Flow history simulated before the release.
    pub spin_up: f64,
    pub duration: f64,
    /// Cadence of reduced-model snapshots and model-based readings.
    pub snapshot_interval: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            dt: 60.0,
            spin_up: 12.0 * 3600.0,
            duration: 19.0 * 3600.0,
            snapshot_interval: 900.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpillConfig {
    pub x: f64,
    pub y: f64,
    /// m³; 100 barrels.
    pub volume: f64,
    pub particles: usize,
    pub realizations: u32,
    /// Standard deviation of the initial slick, m.
    pub spread: f64,
}

impl Default for SpillConfig {
    fn default() -> Self {
        Self {
            x: 16_000.0,
            y: 20_000.0,
            volume: 15.898_7,
            particles: 2000,
            realizations: 8,
            spread: 1500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcingConfig {
    /// Current, wind and tide shared by both models; the tide switches
    /// decide which model sees it.
    pub forcing: SyntheticForcing,
    pub truth_tide: bool,
    pub test_tide: bool,
    /// Relaxation time of the current layer toward its forcing, s.
    pub relaxation: f64,
    /// m²/s
    pub viscosity: f64,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        let period = 12.42 * 3600.0;
        let axis = std::f64::consts::FRAC_PI_4;
        let wavelength = 48_000.0 / std::f64::consts::SQRT_2;
        Self {
            forcing: SyntheticForcing {
                current: AnalyticField {
                    mean_u: 0.12,
                    mean_v: 0.04,
                    eddy_amplitude: 0.08,
                    eddy_wavelength: 24_000.0,
                    oscillation: Some(Oscillation {
                        amplitude: 0.08,
                        period,
                        phase: 0.0,
                        direction: axis,
                        wavelength,
                    }),
                },
                wind: AnalyticField {
                    mean_u: 4.0,
                    mean_v: 2.0,
                    ..AnalyticField::default()
                },
                tide: Oscillation {
                    amplitude: 0.25,
                    period,
                    phase: 1.2,
                    direction: axis,
                    wavelength,
                },
                include_tide: true,
            },
            truth_tide: true,
            test_tide: false,
            relaxation: 1800.0,
            viscosity: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub sensors: usize,
    /// m/s; 60 mph.
    pub v_sensor: f64,
    /// Where the sensors arrive from; the release point when absent.
    pub base: Option<(f64, f64)>,
    pub active_start: f64,
    pub active_end: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            sensors: 4,
            v_sensor: 26.8224,
            base: None,
            active_start: 3600.0,
            active_end: 15.0 * 3600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RomConfig {
    pub rank: usize,
    /// Snapshots in the fitting window.
    pub window: usize,
    pub k_id: f64,
    /// Multiplier on the default process noise.
    pub process_noise_scale: f64,
    /// Pull growing modes back onto the unit circle after each fit.
    pub stabilize: bool,
    /// Scale of the uncertainty tracer rows in the reduced state. At 1 the
    /// tracer carries as much snapshot energy as the current anomalies and
    /// splits the tidal mode pair.
    pub tracer_weight: f64,
}

impl Default for RomConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            window: 48,
            k_id: 0.5,
            process_noise_scale: 1.0,
            stabilize: true,
            tracer_weight: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementConfig {
    /// m/s
    pub velocity_noise: f64,
    /// Probability of a flipped oil reading.
    pub oil_noise: f64,
    /// Presence (relative to the map maximum) that counts as oil.
    pub presence_threshold: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            velocity_noise: 0.02,
            oil_noise: 0.0,
            presence_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Steps between field snapshots; 0 disables them.
    pub snapshot_every: usize,
    /// Steps between particle dumps; 0 disables them.
    pub particles_every: usize,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            snapshot_every: 0,
            particles_every: 0,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub spill: SpillConfig,
    pub forcing: ForcingConfig,
    pub drift: DriftModel,
    pub fleet: FleetConfig,
    pub uncertainty: UncertaintyConfig,
    pub planner: PlannerConfig,
    pub weighting: WeightingConfig,
    pub ladder: LadderConfig,
    pub replacement: ValueReplacement,
    pub rom: RomConfig,
    pub measurement: MeasurementConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            strategies: Strategy::ALL.to_vec(),
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            spill: SpillConfig::default(),
            forcing: ForcingConfig::default(),
            drift: DriftModel {
                diffusion: DiffusionSpec::Constant { value: 5.0 },
                ..DriftModel::default()
            },
            fleet: FleetConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            planner: PlannerConfig::default(),
            weighting: WeightingConfig::default(),
            ladder: LadderConfig::default(),
            replacement: ValueReplacement::default(),
            rom: RomConfig::default(),
            measurement: MeasurementConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn whole_steps(span: f64, dt: f64) -> Option<usize> {
    let n = span / dt;
    ((n - n.round()).abs() <= 1e-9 && n >= 0.0).then(|| n.round() as usize)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn release_point(&self) -> Point {
        Point::new(self.spill.x, self.spill.y)
    }

    pub fn base(&self) -> Point {
        self.fleet.base.map_or(self.release_point(), |(x, y)| Point::new(x, y))
    }

    pub fn steps(&self) -> usize {
        whole_steps(self.time.duration, self.time.dt).unwrap_or(0)
    }

    pub fn spin_up_steps(&self) -> usize {
        whole_steps(self.time.spin_up, self.time.dt).unwrap_or(0)
    }

    /// Simulation steps per snapshot.
    pub fn snapshot_stride(&self) -> usize {
        whole_steps(self.time.snapshot_interval, self.time.dt).unwrap_or(1)
    }

    /// Simulation steps per planner model step.
    pub fn uncertainty_stride(&self) -> usize {
        whole_steps(self.planner.model_dt, self.time.dt).unwrap_or(1)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.time.duration, self.time.dt)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        let t = &self.time;
        if !(t.dt > 0.0) || !(t.duration > 0.0) || !(t.spin_up >= 0.0) {
            return Err(Error::Config("time step and duration must be positive".into()));
        }
        for (name, span) in [
            ("duration", t.duration),
            ("spin_up", t.spin_up),
            ("snapshot_interval", t.snapshot_interval),
            ("planner.model_dt", self.planner.model_dt),
            ("planner.interval_s", self.planner.interval_s),
        ] {
            if whole_steps(span, t.dt).is_none() {
                return Err(Error::Config(format!("{name} must be a whole number of time steps")));
            }
        }
        if t.snapshot_interval <= 0.0 || (self.planner.interval_s - t.snapshot_interval).abs() > 1e-9 {
            return Err(Error::Config("planner interval must equal the snapshot interval".into()));
        }
        let f = &self.fleet;
        if !(0.0 <= f.active_start && f.active_start < f.active_end && f.active_end <= t.duration) {
            return Err(Error::Config("sensor active window must lie inside the simulation".into()));
        }
        if f.sensors == 0 {
            return Err(Error::Config("fleet needs at least one sensor".into()));
        }
        if !grid.contains(self.release_point()) || !grid.contains(self.base()) {
            return Err(Error::Config("release point and base must lie in the domain".into()));
        }
        if self.spill.particles == 0 || self.spill.realizations == 0 || !(self.spill.volume > 0.0) {
            return Err(Error::Config("spill needs particles, realizations and volume".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        let r = &self.rom;
        if r.rank == 0 || r.window < r.rank + 1 || spin_window(self) < r.window {
            return Err(Error::Config("reduced model window must exceed its rank and fit in the spin-up".into()));
        }
        if !(self.forcing.relaxation > 0.0) {
            return Err(Error::Config("relaxation time must be positive".into()));
        }
        let m = &self.measurement;
        if !(m.velocity_noise >= 0.0) || !(0.0..=1.0).contains(&m.oil_noise) || !(m.presence_threshold > 0.0) {
            return Err(Error::Config("invalid measurement settings".into()));
        }
        self.forcing.forcing.validate()?;
        self.drift.validate()?;
        self.planner.validate()?;
        self.weighting.validate()
    }
}

/// Snapshots available from the spin-up alone.
fn spin_window(cfg: &ScenarioConfig) -> usize {
    (cfg.time.spin_up / cfg.time.snapshot_interval).round() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), cfg);
        assert_eq!(cfg.steps(), 1140);
        assert_eq!(cfg.snapshot_stride(), 15);
    }

    #[test]
    fn partial_files_override_defaults() {
        let cfg = ScenarioConfig::from_toml("seed = 3\nstrategies = [\"none\", \"model-based\"]\n[fleet]\nsensors = 2\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.fleet.sensors, 2);
        assert_eq!(cfg.strategies, vec![Strategy::None, Strategy::ModelBased]);
        assert_eq!(cfg.grid, GridConfig::default());
    }

    #[test]
    fn violations_are_rejected() {
        for bad in [
            "[fleet]\nactive_end = 1e9\n",
            "[time]\ndt = 70.0\n",
            "strategies = []\n",
            "[spill]\nx = -5.0\n",
            "[rom]\nwindow = 3\nrank = 5\n",
            "[grid]\nnx = \"many\"\n",
        ] {
            assert!(matches!(ScenarioConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
        assert_eq!(Strategy::parse("industry-no-velocity").unwrap(), Strategy::IndustryNoVelocity);
        assert!(Strategy::parse("magic").is_err());
    }
}
