//! Low-storage Runge-Kutta integration with filtering and control injection.
//!
//! Sub-steps are numbered globally over the whole horizon, `s = 1 ..= N` with
//! `N = n_steps * stages`:
//!
//! ```text
//! k_s = alpha_{s-1} k_{s-1} + dt R(u_{s-1}, g_{s-1}, t_{s-1})
//! u_s = F_s [u_{s-1} + beta_{s-1} k_s]
//! ```
//!
//! `alpha` is zero at the first stage of every time iteration, so `k` carries
//! no information across iterations and `u` at an iteration boundary is a
//! complete restart point. `F_s` is the identity except at the last stage of
//! every `filter_every`-th iteration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::control_space::ControlHistory;
use crate::cost::Objective;
use crate::error::{check_len, Error, Result};
use crate::grid_field::{read_snapshot, write_snapshot, SnapshotHeader};
use crate::scalar::CStep;

/// Two-register (2N) low-storage Runge-Kutta coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct RkScheme {
    pub name: String,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub order: usize,
    /// Stage time offsets in units of `dt`, derived from the coefficients.
    pub c: Vec<f64>,
}

impl RkScheme {
    pub fn new(name: &str, alpha: Vec<f64>, beta: Vec<f64>, order: usize) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != beta.len() {
            return Err(Error::Validation(format!(
                "scheme '{name}': alpha and beta must be non-empty and equally long"
            )));
        }
        if alpha[0] != 0.0 {
            return Err(Error::Validation(format!(
                "scheme '{name}': alpha_0 must be zero for a self-starting scheme"
            )));
        }
        // stage offsets: integrate y' = 1 from 0 over one step
        let mut c = Vec::with_capacity(alpha.len());
        let (mut y, mut k) = (0.0, 0.0);
        for (a, b) in alpha.iter().zip(&beta) {
            c.push(y);
            k = a * k + 1.0;
            y += b * k;
        }
        let scheme = Self {
            name: name.to_string(),
            alpha,
            beta,
            order,
            c,
        };
        scheme.check_order()?;
        Ok(scheme)
    }

    pub fn stages(&self) -> usize {
        self.alpha.len()
    }

    /// Coefficients of the amplification polynomial `y1/y0 = sum_k a_k z^k`.
    pub fn stability_polynomial(&self) -> Vec<f64> {
        let s = self.stages();
        let mut y = vec![0.0; s + 1];
        y[0] = 1.0;
        let mut k = vec![0.0; s + 1];
        for (a, b) in self.alpha.iter().zip(&self.beta) {
            // k <- a k + z y
            let mut nk = vec![0.0; s + 1];
            for i in 0..=s {
                nk[i] = a * k[i];
                if i > 0 {
                    nk[i] += y[i - 1];
                }
            }
            k = nk;
            for i in 0..=s {
                y[i] += b * k[i];
            }
        }
        y
    }

    /// Taylor comparison on the scalar test equation up to the design order.
    fn check_order(&self) -> Result<()> {
        let poly = self.stability_polynomial();
        let mut fact = 1.0;
        for (k, &a) in poly.iter().enumerate().take(self.order + 1) {
            if k > 0 {
                fact *= k as f64;
            }
            if (a - 1.0 / fact).abs() > 1e-10 {
                return Err(Error::Validation(format!(
                    "scheme '{}' does not reach order {} (z^{k} coefficient {a}, expected {})",
                    self.name,
                    self.order,
                    1.0 / fact
                )));
            }
        }
        Ok(())
    }

    /// Five-stage fourth-order 2N scheme of Carpenter and Kennedy.
    pub fn ck45() -> Self {
        Self::new(
            "ck45",
            vec![
                0.0,
                -567301805773.0 / 1357537059087.0,
                -2404267990393.0 / 2016746695238.0,
                -3550918686646.0 / 2091501179385.0,
                -1275806237668.0 / 842570457699.0,
            ],
            vec![
                1432997174477.0 / 9575080441755.0,
                5161836677717.0 / 13612068292357.0,
                1720146321549.0 / 2090206949498.0,
                3134564353537.0 / 4481467310338.0,
                2277821191437.0 / 14882151754819.0,
            ],
            4,
        )
        .expect("ck45 coefficients are consistent")
    }

    /// Three-stage third-order 2N scheme of Williamson.
    pub fn williamson3() -> Self {
        Self::new(
            "williamson3",
            vec![0.0, -5.0 / 9.0, -153.0 / 128.0],
            vec![1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0],
            3,
        )
        .expect("williamson3 coefficients are consistent")
    }

    /// Forward Euler as a one-stage scheme.
    pub fn euler() -> Self {
        Self::new("euler", vec![0.0], vec![1.0], 1).expect("euler is consistent")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ck45" => Ok(Self::ck45()),
            "williamson3" => Ok(Self::williamson3()),
            "euler" => Ok(Self::euler()),
            other => Err(Error::Validation(format!("unknown RK scheme '{other}'"))),
        }
    }
}

/// Generic explicit Butcher tableau, used as an oracle (e.g. classical RK4).
#[derive(Clone, Debug)]
pub struct ButcherTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn classical_rk4() -> Self {
        Self {
            a: vec![
                vec![],
                vec![0.5],
                vec![0.0, 0.5],
                vec![0.0, 0.0, 1.0],
            ],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
        }
    }

    /// One explicit step of `y' = f(t, y)`.
    pub fn step<F: Fn(f64, &[f64], &mut [f64])>(&self, f: F, t: f64, dt: f64, y: &mut [f64]) {
        let n = y.len();
        let mut ks: Vec<Vec<f64>> = Vec::with_capacity(self.b.len());
        for (i, row) in self.a.iter().enumerate() {
            let mut yi = y.to_vec();
            for (j, &aij) in row.iter().enumerate() {
                for q in 0..n {
                    yi[q] += dt * aij * ks[j][q];
                }
            }
            let mut k = vec![0.0; n];
            f(t + self.c[i] * dt, &yi, &mut k);
            ks.push(k);
        }
        for (bi, k) in self.b.iter().zip(&ks) {
            for q in 0..n {
                y[q] += dt * bi * k[q];
            }
        }
    }
}

/// A semi-discrete system `du/dt = R(u, g, t)` with its linearizations.
///
/// `g` is the full-resolution control at the evaluation point (`None` means
/// zero). `rhs_adjoint` must be the exact transpose of `rhs_tangent` in `v`,
/// and `rhs_control_adjoint` the transpose in `g_dot`.
pub trait DynamicalSystem {
    fn state_len(&self) -> usize;
    fn control_len(&self) -> usize;
    fn snapshot_header(&self) -> SnapshotHeader;

    fn rhs(&self, u: &[f64], g: Option<&[f64]>, t: f64, out: &mut [f64]);
    #[allow(clippy::too_many_arguments)]
    fn rhs_tangent(
        &self,
        u: &[f64],
        g: Option<&[f64]>,
        t: f64,
        v: &[f64],
        g_dot: Option<&[f64]>,
        out: &mut [f64],
    );
    fn rhs_adjoint(&self, u: &[f64], g: Option<&[f64]>, t: f64, xi: &[f64], out: &mut [f64]);
    fn rhs_control_adjoint(&self, u: &[f64], g: Option<&[f64]>, t: f64, xi: &[f64], out: &mut [f64]);

    fn has_filter(&self) -> bool {
        false
    }
    fn filter(&self, _u: &mut [f64]) {}
    fn filter_transpose(&self, _u: &mut [f64]) {}

    /// Validity of an accepted state.
    fn check_state(&self, u: &[f64]) -> Result<()> {
        match u.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("state entry {i}"))),
            None => Ok(()),
        }
    }
}

/// Complex-arithmetic evaluation of a system, for complex-step oracles.
pub trait ComplexDynamics: DynamicalSystem {
    fn rhs_complex(&self, u: &[CStep], g: Option<&[CStep]>, t: f64, out: &mut [CStep]);
    fn filter_complex(&self, _u: &mut [CStep]) {}
}

/// Maps the global sub-step index to stage, time, coefficients and filtering.
#[derive(Clone, Debug)]
pub struct RkClock {
    pub scheme: RkScheme,
    pub dt: f64,
    pub t0: f64,
    pub n_steps: usize,
    /// Filter after every `filter_every`-th time iteration; 0 disables.
    pub filter_every: usize,
}

impl RkClock {
    pub fn new(scheme: RkScheme, dt: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Validation("at least one time step is required".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            scheme,
            dt,
            t0: 0.0,
            n_steps,
            filter_every: 0,
        })
    }

    pub fn with_filter_every(mut self, every: usize) -> Self {
        self.filter_every = every;
        self
    }

    pub fn stages(&self) -> usize {
        self.scheme.stages()
    }

    pub fn total_substeps(&self) -> usize {
        self.n_steps * self.stages()
    }

    /// Control position (in iteration units) of the evaluation feeding `k_{e+1}`.
    pub fn eval_tau(&self, e: usize) -> f64 {
        let st = self.stages();
        (e / st) as f64 + self.scheme.c[e % st]
    }

    /// Physical time of the evaluation feeding `k_{e+1}`.
    pub fn eval_time(&self, e: usize) -> f64 {
        self.t0 + self.eval_tau(e) * self.dt
    }

    /// `alpha_{s-1}`, the weight of `k_{s-1}` in `k_s`.
    pub fn alpha_in(&self, s: usize) -> f64 {
        self.scheme.alpha[(s - 1) % self.stages()]
    }

    /// `beta_{s-1}`, the weight of `k_s` in `u_s`.
    pub fn beta_in(&self, s: usize) -> f64 {
        self.scheme.beta[(s - 1) % self.stages()]
    }

    /// Whether `F_s` is a filter application.
    pub fn filtered(&self, s: usize) -> bool {
        self.filter_every > 0 && s % self.stages() == 0 && (s / self.stages()) % self.filter_every == 0
    }

    /// Time at the end of iteration `n`.
    pub fn iteration_time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreMode {
    /// Nothing is kept (plain forward runs).
    Discard,
    /// Every sub-step state.
    StoreAll,
    /// States at every `stride`-th iteration boundary; the rest is recomputed.
    Checkpoint { stride: usize },
}

enum Backend {
    Memory(BTreeMap<usize, Vec<f64>>),
    File {
        path: PathBuf,
        file: File,
        header: SnapshotHeader,
        index: BTreeMap<usize, u64>,
        end: u64,
    },
}

/// Trajectory storage in memory or in a snapshot file with an index footer.
///
/// File layout: consecutive snapshot records, then `"AIDX"`, `u64 count`,
/// `count x (u64 substep, u64 offset)` and finally `u64 footer_offset`.
pub struct TrajectoryStore {
    pub mode: StoreMode,
    backend: Backend,
    stages: usize,
}

impl TrajectoryStore {
    pub fn in_memory(mode: StoreMode) -> Self {
        Self {
            mode,
            backend: Backend::Memory(BTreeMap::new()),
            stages: 1,
        }
    }

    pub fn in_file(mode: StoreMode, path: &Path, header: SnapshotHeader) -> Result<Self> {
        let file = File::options()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        Ok(Self {
            mode,
            backend: Backend::File {
                path: path.to_path_buf(),
                file,
                header,
                index: BTreeMap::new(),
                end: 0,
            },
            stages: 1,
        })
    }

    fn reset(&mut self, stages: usize) -> Result<()> {
        self.stages = stages;
        match &mut self.backend {
            Backend::Memory(m) => m.clear(),
            Backend::File { file, index, end, .. } => {
                file.set_len(0)?;
                index.clear();
                *end = 0;
            }
        }
        Ok(())
    }

    pub fn wants(&self, s: usize) -> bool {
        match self.mode {
            StoreMode::Discard => false,
            StoreMode::StoreAll => true,
            StoreMode::Checkpoint { stride } => {
                s % self.stages == 0 && (s / self.stages) % stride.max(1) == 0
            }
        }
    }

    pub fn record(&mut self, s: usize, u: &[f64]) -> Result<()> {
        match &mut self.backend {
            Backend::Memory(m) => {
                m.insert(s, u.to_vec());
            }
            Backend::File {
                file,
                header,
                index,
                end,
                ..
            } => {
                file.seek(SeekFrom::Start(*end))?;
                let mut buf = Vec::with_capacity(header.record_bytes());
                write_snapshot(&mut buf, header, u)?;
                file.write_all(&buf)?;
                index.insert(s, *end);
                *end += buf.len() as u64;
            }
        }
        Ok(())
    }

    pub fn contains(&self, s: usize) -> bool {
        match &self.backend {
            Backend::Memory(m) => m.contains_key(&s),
            Backend::File { index, .. } => index.contains_key(&s),
        }
    }

    pub fn get(&mut self, s: usize) -> Result<Vec<f64>> {
        match &mut self.backend {
            Backend::Memory(m) => m
                .get(&s)
                .cloned()
                .ok_or_else(|| Error::Storage(format!("sub-step {s} not stored"))),
            Backend::File { file, index, .. } => {
                let off = *index
                    .get(&s)
                    .ok_or_else(|| Error::Storage(format!("sub-step {s} not stored")))?;
                file.seek(SeekFrom::Start(off))?;
                let (_, data) = read_snapshot(&mut BufReader::new(&mut *file))?;
                Ok(data)
            }
        }
    }

    pub fn stored_substeps(&self) -> Vec<usize> {
        match &self.backend {
            Backend::Memory(m) => m.keys().copied().collect(),
            Backend::File { index, .. } => index.keys().copied().collect(),
        }
    }

    /// Writes the index footer (file backing only).
    pub fn finish(&mut self) -> Result<()> {
        if let Backend::File { file, index, end, .. } = &mut self.backend {
            file.seek(SeekFrom::Start(*end))?;
            let mut buf = Vec::new();
            buf.extend_from_slice(b"AIDX");
            buf.extend_from_slice(&(index.len() as u64).to_le_bytes());
            for (&s, &off) in index.iter() {
                buf.extend_from_slice(&(s as u64).to_le_bytes());
                buf.extend_from_slice(&off.to_le_bytes());
            }
            buf.extend_from_slice(&end.to_le_bytes());
            file.write_all(&buf)?;
            file.flush()?;
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.backend {
            Backend::File { path, .. } => Some(path),
            Backend::Memory(_) => None,
        }
    }
}

/// Reads the index footer of a trajectory file: `(substep, offset)` pairs.
pub fn read_trajectory_index(path: &Path) -> Result<Vec<(usize, u64)>> {
    let mut f = File::open(path)?;
    let len = f.seek(SeekFrom::End(0))?;
    if len < 8 {
        return Err(Error::Storage("trajectory file too short".into()));
    }
    f.seek(SeekFrom::Start(len - 8))?;
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b8)?;
    let footer = u64::from_le_bytes(b8);
    f.seek(SeekFrom::Start(footer))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != b"AIDX" {
        return Err(Error::Storage("missing trajectory index footer".into()));
    }
    f.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        f.read_exact(&mut b8)?;
        let s = u64::from_le_bytes(b8) as usize;
        f.read_exact(&mut b8)?;
        out.push((s, u64::from_le_bytes(b8)));
    }
    Ok(out)
}

/// Reads one stored state from a finished trajectory file.
pub fn read_trajectory_state(path: &Path, substep: usize) -> Result<Vec<f64>> {
    let index = read_trajectory_index(path)?;
    let off = index
        .iter()
        .find(|(s, _)| *s == substep)
        .map(|(_, o)| *o)
        .ok_or_else(|| Error::Storage(format!("sub-step {substep} not in trajectory file")))?;
    let mut f = File::open(path)?;
    f.seek(SeekFrom::Start(off))?;
    Ok(read_snapshot(&mut BufReader::new(f))?.1)
}

/// One sub-step `s` in place: `u` holds `u_{s-1}` on entry and `u_s` on exit.
pub fn rk_step<S: DynamicalSystem + ?Sized>(
    system: &S,
    clock: &RkClock,
    s: usize,
    u: &mut [f64],
    k: &mut [f64],
    g: Option<&[f64]>,
    scratch: &mut [f64],
) {
    let e = s - 1;
    system.rhs(u, g, clock.eval_time(e), scratch);
    let (a, b, dt) = (clock.alpha_in(s), clock.beta_in(s), clock.dt);
    for ((kv, &r), uv) in k.iter_mut().zip(scratch.iter()).zip(u.iter_mut()) {
        *kv = a * *kv + dt * r;
        *uv += b * *kv;
    }
    if clock.filtered(s) {
        system.filter(u);
    }
}

/// Tangent of one sub-step, evaluated at the primal state `u_prev = u_{s-1}`.
#[allow(clippy::too_many_arguments)]
pub fn rk_step_tangent<S: DynamicalSystem + ?Sized>(
    system: &S,
    clock: &RkClock,
    s: usize,
    u_prev: &[f64],
    g: Option<&[f64]>,
    u_dot: &mut [f64],
    k_dot: &mut [f64],
    g_dot: Option<&[f64]>,
    scratch: &mut [f64],
) {
    let e = s - 1;
    system.rhs_tangent(u_prev, g, clock.eval_time(e), u_dot, g_dot, scratch);
    let (a, b, dt) = (clock.alpha_in(s), clock.beta_in(s), clock.dt);
    for ((kv, &r), uv) in k_dot.iter_mut().zip(scratch.iter()).zip(u_dot.iter_mut()) {
        *kv = a * *kv + dt * r;
        *uv += b * *kv;
    }
    if clock.filtered(s) {
        system.filter(u_dot);
    }
}

/// Result of a forward sweep.
#[derive(Clone, Debug)]
pub struct ForwardRun {
    pub final_state: Vec<f64>,
    /// Observations at observed iterations, in time order.
    pub observations: Vec<Vec<f64>>,
    /// Iteration index of every observation.
    pub observed_iterations: Vec<usize>,
    pub cost: f64,
}

/// Integrates `n_steps` time iterations from `u0`.
pub fn integrate<S, O>(
    system: &S,
    clock: &RkClock,
    u0: &[f64],
    controls: Option<&ControlHistory>,
    store: &mut TrajectoryStore,
    objective: &O,
) -> Result<ForwardRun>
where
    S: DynamicalSystem + ?Sized,
    O: Objective + ?Sized,
{
    check_len(system.state_len(), u0.len())?;
    store.reset(clock.stages())?;
    let mut u = u0.to_vec();
    let mut k = vec![0.0; u.len()];
    let mut scratch = vec![0.0; u.len()];
    let mut observations = Vec::new();
    let mut observed_iterations = Vec::new();
    if objective.observes(0) {
        observations.push(objective.observe(&u));
        observed_iterations.push(0);
    }
    if store.wants(0) {
        store.record(0, &u)?;
    }
    let stages = clock.stages();
    for s in 1..=clock.total_substeps() {
        let g = controls.and_then(|c| c.fine_at(clock.eval_tau(s - 1)));
        rk_step(system, clock, s, &mut u, &mut k, g.as_deref(), &mut scratch);
        if s % stages == 0 {
            let n = s / stages;
            system.check_state(&u).map_err(|e| Error::IntegrationFailure {
                step: n,
                source: Box::new(e),
            })?;
            if objective.observes(n) {
                observations.push(objective.observe(&u));
                observed_iterations.push(n);
            }
        }
        if store.wants(s) {
            store.record(s, &u)?;
        }
    }
    store.finish()?;
    let cost = objective.value(&observations);
    Ok(ForwardRun {
        final_state: u,
        observations,
        observed_iterations,
        cost,
    })
}

/// Recomputes sub-step states `u_{first} ..= u_{last}` from a restart state at
/// iteration boundary `first` (where `k = 0`).
pub fn recompute_segment<S: DynamicalSystem + ?Sized>(
    system: &S,
    clock: &RkClock,
    controls: Option<&ControlHistory>,
    first: usize,
    last: usize,
    start_state: Vec<f64>,
) -> Vec<Vec<f64>> {
    debug_assert_eq!(first % clock.stages(), 0);
    let mut out = Vec::with_capacity(last - first + 1);
    let mut u = start_state;
    let mut k = vec![0.0; u.len()];
    let mut scratch = vec![0.0; u.len()];
    out.push(u.clone());
    for s in first + 1..=last {
        let g = controls.and_then(|c| c.fine_at(clock.eval_tau(s - 1)));
        rk_step(system, clock, s, &mut u, &mut k, g.as_deref(), &mut scratch);
        out.push(u.clone());
    }
    out
}

/// Complex-step forward sweep: state and control carry an imaginary
/// perturbation `h * direction`. Returns the complex cost.
pub fn integrate_complex<S, O>(
    system: &S,
    clock: &RkClock,
    u0: &[CStep],
    controls: Option<&ControlHistory>,
    control_dir: Option<&ControlHistory>,
    h: f64,
    objective: &O,
) -> Result<CStep>
where
    S: ComplexDynamics + ?Sized,
    O: Objective + ?Sized,
{
    check_len(system.state_len(), u0.len())?;
    let mut u = u0.to_vec();
    let zero = CStep::default();
    let mut k = vec![zero; u.len()];
    let mut r = vec![zero; u.len()];
    let mut observations = Vec::new();
    if objective.observes(0) {
        observations.push(objective.observe_complex(&u));
    }
    let stages = clock.stages();
    for s in 1..=clock.total_substeps() {
        let tau = clock.eval_tau(s - 1);
        let g_re = controls.and_then(|c| c.fine_at(tau));
        let g_im = control_dir.and_then(|c| c.fine_at(tau));
        let g: Option<Vec<CStep>> = match (g_re, g_im) {
            (None, None) => None,
            (re, im) => {
                let len = system.control_len();
                let re = re.unwrap_or_else(|| vec![0.0; len]);
                let im = im.unwrap_or_else(|| vec![0.0; len]);
                Some(re.iter().zip(&im).map(|(&a, &b)| CStep::new(a, h * b)).collect())
            }
        };
        system.rhs_complex(&u, g.as_deref(), clock.eval_time(s - 1), &mut r);
        let (a, b, dt) = (clock.alpha_in(s), clock.beta_in(s), clock.dt);
        for ((kv, &rv), uv) in k.iter_mut().zip(r.iter()).zip(u.iter_mut()) {
            *kv = *kv * a + rv * dt;
            *uv += *kv * b;
        }
        if clock.filtered(s) {
            system.filter_complex(&mut u);
        }
        if s % stages == 0 && objective.observes(s / stages) {
            observations.push(objective.observe_complex(&u));
        }
    }
    Ok(objective.value(&observations))
}
