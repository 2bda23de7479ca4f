//! Run configuration: TOML sections with defaults for every key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control_space::{ControlHistory, ControlParameterization};
use crate::cost::{FluctuationCost, MeanMode, Objective, TerminalCost};
use crate::error::{Error, Result};
use crate::grid_field::{FluidParams, Grid};
use crate::ns_rhs::{ControlSource, ControlSourceConfig, NsOperators};
use crate::ns_system::{Forcing, NsSystem};
use crate::scalar::{CStep, Scalar};
use crate::stencil_ops::{load_drp_coefficients, DerivativeVariant};
use crate::testbed::{acoustic_pulse, KolmogorovFlow, PlaneJet};
use crate::timeloop::{DynamicalSystem, RkClock, RkScheme, StoreMode};
use crate::verify::lorenz::LorenzSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub grid: GridSection,
    pub fluid: FluidSection,
    pub numerics: NumericsSection,
    pub initial: InitialSection,
    pub forcing: ForcingSection,
    pub lorenz: LorenzSection,
    pub control: ControlSection,
    pub cost: CostSection,
    pub storage: StorageSection,
    pub optimize: OptimizeSection,
    pub lyapunov: LyapunovSection,
    pub blowup: BlowupSection,
    pub verify: VerifySection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Ns2d,
    Ns1d,
    Lorenz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub system: SystemKind,
    pub seed: u64,
    pub threads: usize,
    /// Free-form provenance copied into output headers.
    pub provenance: Option<String>,
    /// Write a snapshot every this many iterations (0: final state only).
    pub snapshot_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            system: SystemKind::Lorenz,
            seed: 1,
            threads: 1,
            provenance: None,
            snapshot_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: Vec<usize>,
    pub length: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n: vec![64, 64],
            length: vec![8.0, 8.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluidSection {
    pub gamma: f64,
    pub reynolds: f64,
    pub mach: f64,
    pub prandtl: f64,
}

impl Default for FluidSection {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            reynolds: 2000.0,
            mach: 0.9,
            prandtl: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    pub scheme: String,
    pub dt: f64,
    pub steps: usize,
    /// `central6` or `drp`.
    pub derivative: String,
    pub drp_file: Option<PathBuf>,
    /// Filter strength in (0, 1]; 0 disables filtering.
    pub filter_strength: f64,
    pub filter_every: usize,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            scheme: "ck45".into(),
            dt: 0.01,
            steps: 200,
            derivative: "central6".into(),
            drp_file: None,
            filter_strength: 0.2,
            filter_every: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Jet,
    Pulse,
    /// Sinusoidal shear profile `amplitude * sin(k y)` plus low-mode noise.
    Shear,
    State,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub momentum_thickness: f64,
    pub noise: f64,
    pub modes: usize,
    pub amplitude: f64,
    pub width: f64,
    /// Explicit initial state for ODE systems.
    pub state: Vec<f64>,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: InitialKind::State,
            momentum_thickness: 0.1,
            noise: 0.05,
            modes: 4,
            amplitude: 1e-2,
            width: 0.5,
            state: vec![1.0, 1.0, 20.0],
        }
    }
}

/// Steady body force `amplitude * sin(k y)` on the x momentum, linear
/// momentum drag and Newtonian cooling of the pressure towards its
/// reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingSection {
    pub enabled: bool,
    pub wavenumber: usize,
    pub amplitude: f64,
    pub drag: f64,
    pub cooling: f64,
}

impl Default for ForcingSection {
    fn default() -> Self {
        Self {
            enabled: false,
            wavenumber: 4,
            amplitude: 0.05,
            drag: 0.0,
            cooling: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzSection {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub forced: usize,
}

impl Default for LorenzSection {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            forced: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub enabled: bool,
    /// Inclusive grid-index box of the heat source (flow systems).
    pub region_start: Vec<usize>,
    pub region_end: Vec<usize>,
    /// Control interval in time iterations.
    pub first_step: usize,
    pub last_step: usize,
    /// Time iterations between control snapshots.
    pub snapshot_stride: usize,
    /// Spatial sampling stride per axis.
    pub gap: Vec<usize>,
    /// Optional control values file (one value per line).
    pub values_file: Option<PathBuf>,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            enabled: true,
            region_start: vec![8, 8],
            region_end: vec![23, 23],
            first_step: 0,
            last_step: 200,
            snapshot_stride: 10,
            gap: vec![1, 1],
            values_file: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Fluctuation,
    Terminal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub kind: CostKind,
    /// Observed iteration window; `last = 0` means the final iteration.
    pub first: usize,
    pub last: usize,
    /// Inclusive index box of the observed pressure (flow systems).
    pub box_lo: Vec<usize>,
    pub box_hi: Vec<usize>,
    /// Observed state entries (ODE systems).
    pub indices: Vec<usize>,
    /// Terminal target for the observed entries.
    pub target: Vec<f64>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            kind: CostKind::Fluctuation,
            first: 0,
            last: 0,
            box_lo: vec![40, 40],
            box_hi: vec![55, 55],
            indices: vec![0, 1, 2],
            target: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    StoreAll,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageSection {
    pub mode: StorageMode,
    pub checkpoint_stride: usize,
    /// Keep the trajectory in a file inside the output directory.
    pub to_file: bool,
}

impl Default for StorageSection {
    fn default() -> Self {
        Self {
            mode: StorageMode::StoreAll,
            checkpoint_stride: 50,
            to_file: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub initial_step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            memory: 8,
            c1: 1e-4,
            c2: 0.9,
            initial_step: 1.0,
            max_iters: 20,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovSection {
    pub t_transient: f64,
    pub t_fit: f64,
    pub renormalize_every: usize,
    /// Reynolds sweep; empty runs a single estimate.
    pub reynolds: Vec<f64>,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self {
            t_transient: 20.0,
            t_fit: 200.0,
            renormalize_every: 100,
            reynolds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupSection {
    pub horizons: Vec<f64>,
    pub epsilon: f64,
}

impl Default for BlowupSection {
    fn default() -> Self {
        Self {
            horizons: vec![1.0, 5.0, 30.0],
            epsilon: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub trials: usize,
    pub complex_step: f64,
    /// Amplitude of the Gaussian control perturbation.
    pub perturbation: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            trials: 100,
            complex_step: 1e-30,
            perturbation: 1e-4,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            grid: GridSection::default(),
            fluid: FluidSection::default(),
            numerics: NumericsSection::default(),
            initial: InitialSection::default(),
            forcing: ForcingSection::default(),
            lorenz: LorenzSection::default(),
            control: ControlSection::default(),
            cost: CostSection::default(),
            storage: StorageSection::default(),
            optimize: OptimizeSection::default(),
            lyapunov: LyapunovSection::default(),
            blowup: BlowupSection::default(),
            verify: VerifySection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        if self.run.seed > i64::MAX as u64 {
            return Err(Error::Validation(format!(
                "seed {} does not fit in a TOML integer (max {})",
                self.run.seed,
                i64::MAX
            )));
        }
        toml::to_string(self).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn clock(&self) -> Result<RkClock> {
        let scheme = RkScheme::by_name(&self.numerics.scheme)?;
        let every = if self.filter_strength().is_some() {
            self.numerics.filter_every
        } else {
            0
        };
        Ok(RkClock::new(scheme, self.numerics.dt, self.numerics.steps)?.with_filter_every(every))
    }

    fn filter_strength(&self) -> Option<f64> {
        (self.numerics.filter_strength > 0.0 && self.run.system != SystemKind::Lorenz)
            .then_some(self.numerics.filter_strength)
    }

    pub fn store_mode(&self) -> StoreMode {
        match self.storage.mode {
            StorageMode::StoreAll => StoreMode::StoreAll,
            StorageMode::Checkpoint => StoreMode::Checkpoint {
                stride: self.storage.checkpoint_stride.max(1),
            },
        }
    }

    fn cost_last(&self) -> usize {
        if self.cost.last == 0 {
            self.numerics.steps
        } else {
            self.cost.last
        }
    }

    /// Builds the system, initial state, controls and objective.
    pub fn build(&self) -> Result<Case> {
        match self.run.system {
            SystemKind::Lorenz => self.build_lorenz(),
            SystemKind::Ns1d | SystemKind::Ns2d => self.build_ns(),
        }
    }

    fn parameterization(&self, fine_shape: &[usize], gap: &[usize]) -> Result<ControlParameterization> {
        let c = &self.control;
        let last = if c.last_step == 0 { self.numerics.steps } else { c.last_step };
        ControlParameterization::with_temporal_stride(fine_shape, gap, c.first_step, last, c.snapshot_stride.max(1))
    }

    fn controls(&self, param: Option<ControlParameterization>) -> Result<Option<ControlHistory>> {
        let Some(param) = param else { return Ok(None) };
        match &self.control.values_file {
            Some(path) => {
                let values = read_values(path)?;
                Ok(Some(ControlHistory::new(param, values)?))
            }
            None => Ok(Some(ControlHistory::zeros(param))),
        }
    }

    fn build_lorenz(&self) -> Result<Case> {
        let l = &self.lorenz;
        let system = LorenzSystem::new(l.sigma, l.rho, l.beta, l.forced)?;
        if self.initial.state.len() != 3 {
            return Err(Error::Validation("Lorenz initial state needs three entries".into()));
        }
        let param = if self.control.enabled {
            Some(self.parameterization(&[1], &[1])?)
        } else {
            None
        };
        let controls = self.controls(param)?;
        let last = self.cost_last();
        let objective = match self.cost.kind {
            CostKind::Fluctuation => AnyObjective::Fluctuation(FluctuationCost::new(
                self.cost.indices.clone(),
                vec![1.0; self.cost.indices.len()],
                self.cost.first,
                last,
                self.numerics.dt,
                1.0,
                MeanMode::Running,
            )?),
            CostKind::Terminal => {
                AnyObjective::Terminal(TerminalCost::new(self.cost.indices.clone(), self.cost.target.clone(), last)?)
            }
        };
        Ok(Case {
            system: AnySystem::Lorenz(system),
            u0: self.initial.state.clone(),
            controls,
            objective,
            clock: self.clock()?,
        })
    }

    fn build_ns(&self) -> Result<Case> {
        let nd = if self.run.system == SystemKind::Ns1d { 1 } else { 2 };
        if self.grid.n.len() != nd || self.grid.length.len() != nd {
            return Err(Error::Validation(format!("{nd}-D system needs {nd} grid extents and lengths")));
        }
        let grid = Grid::new(&self.grid.n, &self.grid.length)?;
        let f = &self.fluid;
        let params = FluidParams::new(f.gamma, f.reynolds, f.mach, f.prandtl)?;
        let variant = match (self.numerics.derivative.as_str(), &self.numerics.drp_file) {
            ("drp", Some(path)) => DerivativeVariant::Drp(Some(load_drp_coefficients(path)?)),
            (name, _) => DerivativeVariant::parse(name)?,
        };
        let ops = NsOperators::new(&grid, &variant, self.filter_strength())?;
        let clock = self.clock()?;
        let (source, param) = if self.control.enabled {
            let c = &self.control;
            let last = if c.last_step == 0 { self.numerics.steps } else { c.last_step };
            let source = ControlSource::new(
                &grid,
                ControlSourceConfig {
                    region_start: c.region_start.clone(),
                    region_end: c.region_end.clone(),
                    t_start: clock.iteration_time(c.first_step),
                    t_end: clock.iteration_time(last),
                    dt: clock.dt,
                },
            )?;
            let gap = if c.gap.is_empty() { vec![1; nd] } else { c.gap.clone() };
            let param = self.parameterization(&source.region_shape, &gap)?;
            (Some(source), Some(param))
        } else {
            (None, None)
        };
        let init = &self.initial;
        let shear = KolmogorovFlow {
            wavenumber: self.forcing.wavenumber,
            forcing: self.forcing.amplitude,
            initial_amplitude: init.amplitude,
            noise: init.noise,
            seed: self.run.seed,
        };
        let mut system = NsSystem::new(ops, params.clone(), source)?;
        if self.forcing.enabled {
            system = system.with_forcing(Forcing {
                body: shear.body_force(&grid)?,
                drag: self.forcing.drag,
                cooling: self.forcing.cooling,
                p_ref: params.reference_pressure(),
            })?;
        }
        let u0 = match init.kind {
            InitialKind::Jet => PlaneJet {
                momentum_thickness: init.momentum_thickness,
                noise: init.noise,
                modes: init.modes,
                seed: self.run.seed,
            }
            .build(&grid, &params)?,
            InitialKind::Pulse => acoustic_pulse(&grid, &params, init.amplitude, init.width)?,
            InitialKind::Shear => shear.build(&grid, &params)?,
            InitialKind::State => {
                return Err(Error::Validation("flow systems need a jet, pulse or shear initial condition".into()))
            }
        };
        let last = self.cost_last();
        let objective = match self.cost.kind {
            CostKind::Fluctuation => AnyObjective::Fluctuation(FluctuationCost::pressure_box(
                &grid,
                &self.cost.box_lo,
                &self.cost.box_hi,
                self.cost.first,
                last,
                clock.dt,
                MeanMode::Running,
            )?),
            CostKind::Terminal => {
                AnyObjective::Terminal(TerminalCost::new(self.cost.indices.clone(), self.cost.target.clone(), last)?)
            }
        };
        Ok(Case {
            system: AnySystem::Ns(Box::new(system)),
            u0: u0.data,
            controls: self.controls(param)?,
            objective,
            clock,
        })
    }
}

/// Reads one value per line; `#` starts a comment.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse::<f64>().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Writes one value per line with full precision.
pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(values.len() * 26);
    for v in values {
        text.push_str(&format!("{v:.17e}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// A fully built run.
pub struct Case {
    pub system: AnySystem,
    pub u0: Vec<f64>,
    pub controls: Option<ControlHistory>,
    pub objective: AnyObjective,
    pub clock: RkClock,
}

pub enum AnySystem {
    Ns(Box<NsSystem>),
    Lorenz(LorenzSystem),
}

impl AnySystem {
    pub fn as_dyn(&self) -> &dyn DynamicalSystem {
        match self {
            AnySystem::Ns(s) => s.as_ref(),
            AnySystem::Lorenz(s) => s,
        }
    }
}

#[derive(Clone, Debug)]
pub enum AnyObjective {
    Fluctuation(FluctuationCost),
    Terminal(TerminalCost),
}

impl Objective for AnyObjective {
    fn observes(&self, n: usize) -> bool {
        match self {
            Self::Fluctuation(c) => c.observes(n),
            Self::Terminal(c) => c.observes(n),
        }
    }

    fn observe(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Self::Fluctuation(c) => c.observe(u),
            Self::Terminal(c) => c.observe(u),
        }
    }

    fn observe_complex(&self, u: &[CStep]) -> Vec<CStep> {
        match self {
            Self::Fluctuation(c) => c.observe_complex(u),
            Self::Terminal(c) => c.observe_complex(u),
        }
    }

    fn observe_transpose_add(&self, obs_bar: &[f64], out: &mut [f64]) {
        match self {
            Self::Fluctuation(c) => c.observe_transpose_add(obs_bar, out),
            Self::Terminal(c) => c.observe_transpose_add(obs_bar, out),
        }
    }

    fn value<T: Scalar>(&self, obs: &[Vec<T>]) -> T {
        match self {
            Self::Fluctuation(c) => c.value(obs),
            Self::Terminal(c) => c.value(obs),
        }
    }

    fn obs_gradient(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self {
            Self::Fluctuation(c) => c.obs_gradient(obs),
            Self::Terminal(c) => c.obs_gradient(obs),
        }
    }

    fn contributions(&self, obs: &[Vec<f64>]) -> Vec<f64> {
        match self {
            Self::Fluctuation(c) => c.contributions(obs),
            Self::Terminal(c) => c.contributions(obs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        let back = Config::from_toml(&c.to_toml().unwrap(), Path::new("x.toml")).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn parse_error_has_line() {
        let err = Config::from_toml("[run]\nsystem = \"lorenz\"\nseed = \"x\"\n", Path::new("bad.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml") && msg.contains("line 3"), "{msg}");
        assert!(Config::from_toml("[run]\nbogus = 1\n", Path::new("b.toml")).is_err());
    }

    #[test]
    fn builds_lorenz_and_ns() {
        let c = Config::default();
        let case = c.build().unwrap();
        assert_eq!(case.system.as_dyn().state_len(), 3);
        assert_eq!(case.controls.unwrap().values.len(), 21);
        let text = r#"
[run]
system = "ns2d"
[grid]
n = [32, 32]
length = [4.0, 4.0]
[initial]
kind = "jet"
[control]
region_start = [2, 2]
region_end = [13, 13]
last_step = 40
gap = [2, 2]
[cost]
box_lo = [20, 20]
box_hi = [27, 27]
[numerics]
steps = 40
dt = 0.02
"#;
        let c = Config::from_toml(text, Path::new("t.toml")).unwrap();
        let case = c.build().unwrap();
        assert_eq!(case.system.as_dyn().state_len(), 4 * 32 * 32);
        assert_eq!(case.system.as_dyn().control_len(), 144);
        assert_eq!(case.controls.as_ref().unwrap().param.coarse_len(), 36);
        assert!(case.system.as_dyn().has_filter());
    }

    #[test]
    fn builds_forced_shear() {
        let text = r#"
[run]
system = "ns2d"
[grid]
n = [16, 16]
length = [6.283185307179586, 6.283185307179586]
[initial]
kind = "shear"
amplitude = 0.2
noise = 0.02
[forcing]
enabled = true
[control]
enabled = false
[cost]
box_lo = [4, 4]
box_hi = [7, 7]
"#;
        let cfg = Config::from_toml(text, Path::new("s.toml")).unwrap();
        let case = cfg.build().unwrap();
        let AnySystem::Ns(sys) = &case.system else { panic!("expected flow system") };
        let f = sys.forcing.as_ref().unwrap();
        assert_eq!(f.cooling, 0.05);
        assert!(f.body[0].iter().any(|v| *v > 0.04) && f.body[1].iter().all(|v| *v == 0.0));
        let mut off = cfg.clone();
        off.forcing.enabled = false;
        let AnySystem::Ns(sys) = off.build().unwrap().system else { panic!() };
        assert!(sys.forcing.is_none());
    }

    #[test]
    fn values_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        write_values(&p, &[1.0, -2.5e-3]).unwrap();
        assert_eq!(read_values(&p).unwrap(), vec![1.0, -2.5e-3]);
        std::fs::write(&p, "1.0\n# c\nabc\n").unwrap();
        assert!(read_values(&p).unwrap_err().to_string().contains("line 3"));
    }
}
