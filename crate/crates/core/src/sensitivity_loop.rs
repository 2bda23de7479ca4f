//! Discrete adjoint and tangent-linear sweeps through the low-storage RK chain.
//!
//! With `k_s = a_s k_{s-1} + dt R(u_{s-1}, g_{s-1})` and
//! `u_s = F_s (u_{s-1} + b_s k_s)`, the adjoint pair (`omega_s = dJ/du_s`,
//! `xi_s = dJ/dk_s`) is swept backward:
//!
//! ```text
//! xi_s      = a_{s+1} xi_{s+1} + b_s F_s^T omega_s
//! omega_{s-1} = F_s^T omega_s + dt (dR/du)^T|_{u_{s-1}} xi_s + dJ_{s-1}/du
//! grad      += dt gamma(tau_{s-1}) (dR/dg)^T|_{u_{s-1}} xi_s
//! ```
//!
//! The tangent runs the same chain forward in lockstep with the primal.

use crate::control_space::{ControlHistory, GradientAccumulator};
use crate::cost::Objective;
use crate::error::{check_len, Error, Result};
use crate::grid_field::{dot, norm};
use crate::timeloop::{
    integrate, recompute_segment, rk_step, rk_step_tangent, DynamicalSystem, ForwardRun, RkClock, StoreMode,
    TrajectoryStore,
};

/// Perturbation direction: initial state and/or control values.
#[derive(Clone, Copy, Debug, Default)]
pub struct Direction<'a> {
    pub state: Option<&'a [f64]>,
    pub control: Option<&'a [f64]>,
}

#[derive(Clone, Debug)]
pub struct AdjointRun {
    pub forward: ForwardRun,
    /// Gradient in control space; empty without controls.
    pub gradient: Vec<f64>,
    /// Sensitivity to the initial state, `omega_0`.
    pub omega0: Vec<f64>,
    /// `|| (dR/dg)^T xi ||^2` per time iteration, in forward order.
    pub gradient_energy: Vec<f64>,
}

/// Forward sweep with trajectory storage followed by the backward sweep.
pub fn integrate_adjoint<S, O>(
    system: &S,
    clock: &RkClock,
    u0: &[f64],
    controls: Option<&ControlHistory>,
    store: &mut TrajectoryStore,
    objective: &O,
) -> Result<AdjointRun>
where
    S: DynamicalSystem + ?Sized,
    O: Objective + ?Sized,
{
    if store.mode == StoreMode::Discard {
        return Err(Error::Storage(
            "adjoint sweep needs a stored trajectory; use store-all or checkpoint mode".into(),
        ));
    }
    if let Some(c) = controls {
        check_len(system.control_len(), c.param.fine_len())?;
    }
    let forward = integrate(system, clock, u0, controls, store, objective)?;
    let grads = objective.obs_gradient(&forward.observations);
    let len = system.state_len();
    let st = clock.stages();
    let total = clock.total_substeps();

    let obs_at = |n: usize| forward.observed_iterations.iter().position(|&m| m == n);
    let add_cost = |s: usize, omega: &mut [f64]| {
        if s % st == 0 {
            if let Some(k) = obs_at(s / st) {
                objective.observe_transpose_add(&grads[k], omega);
            }
        }
    };

    let mut acc = controls.map(|c| GradientAccumulator::new(&c.param));
    let mut energy = vec![0.0; clock.n_steps];
    let mut omega = vec![0.0; len];
    add_cost(total, &mut omega);
    let mut xi = vec![0.0; len];
    let mut xi_next_weight = 0.0;
    let mut w = vec![0.0; len];
    let mut r = vec![0.0; len];
    let mut proj = vec![0.0; system.control_len()];

    let mut segment = Segment::default();
    for s in (1..=total).rev() {
        let u_prev = segment.state(s - 1, system, clock, controls, store)?;
        // w = F_s^T omega_s
        w.copy_from_slice(&omega);
        if clock.filtered(s) {
            system.filter_transpose(&mut w);
        }
        let b = clock.beta_in(s);
        for ((x, &wv), xv) in xi.iter_mut().zip(&w).zip(omega.iter_mut()) {
            *x = xi_next_weight * *x + b * wv;
            *xv = wv;
        }
        let e = s - 1;
        let t = clock.eval_time(e);
        let tau = clock.eval_tau(e);
        let g = controls.and_then(|c| c.fine_at(tau));
        system.rhs_adjoint(&u_prev, g.as_deref(), t, &xi, &mut r);
        for (o, &rv) in omega.iter_mut().zip(&r) {
            *o += clock.dt * rv;
        }
        if let (Some(acc), Some(c)) = (acc.as_mut(), controls) {
            if g.is_some() {
                system.rhs_control_adjoint(&u_prev, g.as_deref(), t, &xi, &mut proj);
                acc.add(&c.param, tau, clock.dt, &proj);
                energy[e / st] += dot(&proj, &proj);
            }
        }
        add_cost(e, &mut omega);
        xi_next_weight = clock.alpha_in(s);
    }
    let gradient = match (acc, controls) {
        (Some(acc), Some(c)) => acc.finish(&c.param)?,
        _ => Vec::new(),
    };
    Ok(AdjointRun {
        forward,
        gradient,
        omega0: omega,
        gradient_energy: energy,
    })
}

/// Source of primal sub-step states for the backward sweep, replaying
/// checkpoint segments on demand.
#[derive(Default)]
struct Segment {
    first: usize,
    states: Vec<Vec<f64>>,
}

impl Segment {
    fn state<S: DynamicalSystem + ?Sized>(
        &mut self,
        s: usize,
        system: &S,
        clock: &RkClock,
        controls: Option<&ControlHistory>,
        store: &mut TrajectoryStore,
    ) -> Result<Vec<f64>> {
        if let StoreMode::StoreAll = store.mode {
            return store.get(s);
        }
        if !self.states.is_empty() && s >= self.first && s < self.first + self.states.len() {
            return Ok(self.states[s - self.first].clone());
        }
        let st = clock.stages();
        // latest checkpoint at or before s
        let first = store
            .stored_substeps()
            .into_iter()
            .filter(|&c| c <= s && c % st == 0)
            .max()
            .ok_or_else(|| Error::Storage(format!("no checkpoint before sub-step {s}")))?;
        let next = store.stored_substeps().into_iter().find(|&c| c > first);
        let last = next.unwrap_or(clock.total_substeps()).max(s);
        let start = store.get(first)?;
        let states = recompute_segment(system, clock, controls, first, last, start);
        if let Some(n) = next {
            let stored = store.get(n)?;
            let replayed = &states[n - first];
            if stored.iter().zip(replayed).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(Error::ReplayMismatch { substep: n });
            }
        }
        self.first = first;
        self.states = states;
        Ok(self.states[s - first].clone())
    }
}

#[derive(Clone, Debug)]
pub struct TangentRun {
    /// Directional derivative of the objective; NaN after blow-up.
    pub jdot: f64,
    pub cost: f64,
    /// `||Y_dot||` after every time iteration (index 0 is the initial perturbation).
    pub norms: Vec<f64>,
    /// First iteration with a non-finite tangent.
    pub blowup: Option<usize>,
    pub final_state: Vec<f64>,
}

/// Tangent-linear sweep in lockstep with the primal.
pub fn integrate_tangent<S, O>(
    system: &S,
    clock: &RkClock,
    u0: &[f64],
    controls: Option<&ControlHistory>,
    direction: Direction<'_>,
    objective: &O,
) -> Result<TangentRun>
where
    S: DynamicalSystem + ?Sized,
    O: Objective + ?Sized,
{
    let len = system.state_len();
    check_len(len, u0.len())?;
    let xdot = match direction.control {
        Some(x) => {
            let c = controls.ok_or_else(|| Error::Validation("control direction given without controls".into()))?;
            Some(ControlHistory::new(c.param.clone(), x.to_vec())?)
        }
        None => None,
    };
    let mut u = u0.to_vec();
    let mut k = vec![0.0; len];
    let mut ud = match direction.state {
        Some(d) => {
            check_len(len, d.len())?;
            d.to_vec()
        }
        None => vec![0.0; len],
    };
    let mut kd = vec![0.0; len];
    let mut scratch = vec![0.0; len];
    let mut prev = vec![0.0; len];
    let mut obs = Vec::new();
    let mut obs_dot = Vec::new();
    if objective.observes(0) {
        obs.push(objective.observe(&u));
        obs_dot.push(objective.observe(&ud));
    }
    let mut norms = vec![norm(&ud)];
    let mut blowup = None;
    let st = clock.stages();
    for s in 1..=clock.total_substeps() {
        let tau = clock.eval_tau(s - 1);
        let g = controls.and_then(|c| c.fine_at(tau));
        let gd = xdot.as_ref().and_then(|c| c.fine_at(tau));
        prev.copy_from_slice(&u);
        rk_step(system, clock, s, &mut u, &mut k, g.as_deref(), &mut scratch);
        if blowup.is_none() {
            rk_step_tangent(system, clock, s, &prev, g.as_deref(), &mut ud, &mut kd, gd.as_deref(), &mut scratch);
        }
        if s % st == 0 {
            let n = s / st;
            system.check_state(&u).map_err(|e| Error::IntegrationFailure {
                step: n,
                source: Box::new(e),
            })?;
            if blowup.is_none() {
                let nd = norm(&ud);
                if !nd.is_finite() {
                    blowup = Some(n);
                }
                norms.push(nd);
            }
            if objective.observes(n) {
                obs.push(objective.observe(&u));
                obs_dot.push(objective.observe(&ud));
            }
        }
    }
    let cost = objective.value(&obs);
    let jdot = if blowup.is_some() {
        f64::NAN
    } else {
        objective
            .obs_gradient(&obs)
            .iter()
            .zip(&obs_dot)
            .map(|(g, d)| dot(g, d))
            .sum()
    };
    Ok(TangentRun {
        jdot,
        cost,
        norms,
        blowup,
        final_state: u,
    })
}

/// Forward finite difference `(J(X + eps Xdot) - J(X)) / eps`.
pub fn fd_directional<S, O>(
    system: &S,
    clock: &RkClock,
    u0: &[f64],
    controls: Option<&ControlHistory>,
    direction: Direction<'_>,
    epsilon: f64,
    objective: &O,
) -> Result<f64>
where
    S: DynamicalSystem + ?Sized,
    O: Objective + ?Sized,
{
    if !(epsilon > 0.0) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {epsilon}")));
    }
    let mut store = TrajectoryStore::in_memory(StoreMode::Discard);
    let base = integrate(system, clock, u0, controls, &mut store, objective)?.cost;
    let mut u1 = u0.to_vec();
    if let Some(d) = direction.state {
        check_len(u0.len(), d.len())?;
        for (a, &b) in u1.iter_mut().zip(d) {
            *a += epsilon * b;
        }
    }
    let perturbed = match (controls, direction.control) {
        (Some(c), Some(x)) => {
            check_len(c.values.len(), x.len())?;
            let vals = c.values.iter().zip(x).map(|(&a, &b)| a + epsilon * b).collect();
            Some(ControlHistory::new(c.param.clone(), vals)?)
        }
        (None, Some(_)) => return Err(Error::Validation("control direction given without controls".into())),
        (c, None) => c.cloned(),
    };
    let pert = integrate(system, clock, &u1, perturbed.as_ref(), &mut store, objective)?.cost;
    Ok((pert - base) / epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_space::ControlParameterization;
    use crate::cost::{FluctuationCost, MeanMode, TerminalCost};
    use crate::scalar::CStep;
    use crate::timeloop::{integrate_complex, RkScheme};
    use crate::verify::linear::LinearSystem;
    use crate::verify::lorenz::LorenzSystem;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs())
    }

    #[test]
    fn zero_cost_derivative_gives_zero_gradient() {
        let sys = LinearSystem::diagonal(&[0.5]);
        let clock = RkClock::new(RkScheme::ck45(), 0.1, 10).unwrap();
        let param = ControlParameterization::new(&[1], &[1], vec![0.0, 10.0]).unwrap();
        let ctrl = ControlHistory::new(param, vec![0.3, 0.1]).unwrap();
        let probe = TerminalCost::new(vec![0], vec![0.0], 10).unwrap();
        let mut store = TrajectoryStore::in_memory(StoreMode::StoreAll);
        // target = u_N makes the terminal derivative vanish
        let run = integrate(&sys, &clock, &[1.0], Some(&ctrl), &mut store, &probe).unwrap();
        let cost = TerminalCost::new(vec![0], run.final_state.clone(), 10).unwrap();
        let adj = integrate_adjoint(&sys, &clock, &[1.0], Some(&ctrl), &mut store, &cost).unwrap();
        assert!(adj.gradient.iter().all(|&g| g == 0.0));
        assert!(adj.omega0.iter().all(|&g| g == 0.0));
    }

    /// Scalar `y' = lam y + g` unrolled into an explicit affine map
    /// `y_N = P y_0 + sum_e q_e g_e`; the gradient follows by transposition.
    #[test]
    fn scalar_ode_matches_unrolled_oracle() {
        let lam = -0.7;
        let dt = 0.05;
        let n_steps = 12;
        let sys = LinearSystem::diagonal(&[lam]);
        let clock = RkClock::new(RkScheme::ck45(), dt, n_steps).unwrap();
        let param = ControlParameterization::new(&[1], &[1], vec![0.0, 4.0, 8.0, 12.0]).unwrap();
        let ctrl = ControlHistory::new(param.clone(), vec![0.2, -0.1, 0.4, 0.3]).unwrap();
        let y0 = 0.9;
        // Oracle: track (y, k) as affine functions of (y0, g_0..g_{E-1}).
        let total = clock.total_substeps();
        let nv = 1 + total;
        let mut y = vec![0.0; nv];
        y[0] = 1.0;
        let mut k = vec![0.0; nv];
        for s in 1..=total {
            let a = clock.alpha_in(s);
            let b = clock.beta_in(s);
            for j in 0..nv {
                k[j] = a * k[j] + dt * lam * y[j];
            }
            k[s] += dt;
            for j in 0..nv {
                y[j] += b * k[j];
            }
        }
        // g_e = sum_i gamma_i(tau_e) X_i
        let mut dy_dx = vec![0.0; 4];
        let mut y_n = y[0] * y0;
        for e in 0..total {
            for (i, w) in param.gamma_weights(clock.eval_tau(e)) {
                dy_dx[i] += y[1 + e] * w;
                y_n += y[1 + e] * w * ctrl.values[i];
            }
        }
        let target = 0.25;
        let want: Vec<f64> = dy_dx.iter().map(|d| (y_n - target) * d).collect();
        let cost = TerminalCost::new(vec![0], vec![target], n_steps).unwrap();
        let mut store = TrajectoryStore::in_memory(StoreMode::StoreAll);
        let adj = integrate_adjoint(&sys, &clock, &[y0], Some(&ctrl), &mut store, &cost).unwrap();
        assert!(rel(adj.forward.final_state[0], y_n) < 1e-14);
        for (g, w) in adj.gradient.iter().zip(&want) {
            assert!(rel(*g, *w) < 1e-13, "{g} vs {w}");
        }
        assert!(rel(adj.omega0[0], (y_n - target) * y[0]) < 1e-13);
    }

    fn lorenz_setup(n_steps: usize) -> (LorenzSystem, RkClock, ControlHistory, FluctuationCost) {
        let sys = LorenzSystem::default();
        let clock = RkClock::new(RkScheme::ck45(), 0.01, n_steps).unwrap();
        let param = ControlParameterization::with_temporal_stride(&[1], &[1], 0, n_steps, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals = (0..param.control_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ctrl = ControlHistory::new(param, vals).unwrap();
        let cost = FluctuationCost::new(vec![0, 1, 2], vec![1.0; 3], 0, n_steps, clock.dt, 1.0, MeanMode::Running).unwrap();
        (sys, clock, ctrl, cost)
    }

    #[test]
    fn lorenz_tangent_matches_complex_step() {
        let (sys, clock, ctrl, cost) = lorenz_setup(100);
        let u0 = [1.0, 1.0, 20.0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xd: Vec<f64> = (0..ctrl.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ud = [0.3, -0.2, 0.1];
        let tan = integrate_tangent(
            &sys,
            &clock,
            &u0,
            Some(&ctrl),
            Direction {
                state: Some(&ud),
                control: Some(&xd),
            },
            &cost,
        )
        .unwrap();
        let h = 1e-30;
        let uc: Vec<CStep> = u0.iter().zip(&ud).map(|(&a, &b)| CStep::new(a, h * b)).collect();
        let dir = ControlHistory::new(ctrl.param.clone(), xd.clone()).unwrap();
        let jc = integrate_complex(&sys, &clock, &uc, Some(&ctrl), Some(&dir), h, &cost).unwrap();
        assert!(rel(tan.jdot, jc.im / h) < 1e-12, "{} vs {}", tan.jdot, jc.im / h);
        assert!(rel(tan.cost, jc.re) < 1e-15);
    }

    #[test]
    fn adjoint_tangent_duality_lorenz() {
        let (sys, clock, ctrl, cost) = lorenz_setup(100);
        let u0 = [1.0, 1.0, 20.0];
        let mut store = TrajectoryStore::in_memory(StoreMode::StoreAll);
        let adj = integrate_adjoint(&sys, &clock, &u0, Some(&ctrl), &mut store, &cost).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let xd: Vec<f64> = (0..ctrl.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ud: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tan = integrate_tangent(
                &sys,
                &clock,
                &u0,
                Some(&ctrl),
                Direction {
                    state: Some(&ud),
                    control: Some(&xd),
                },
                &cost,
            )
            .unwrap();
            let lhs = dot(&adj.gradient, &xd) + dot(&adj.omega0, &ud);
            assert!(rel(lhs, tan.jdot) < 1e-12, "{lhs} vs {}", tan.jdot);
        }
    }

    #[test]
    fn checkpointing_matches_store_all() {
        let (sys, clock, ctrl, cost) = lorenz_setup(37);
        let u0 = [1.0, 1.0, 20.0];
        let mut all = TrajectoryStore::in_memory(StoreMode::StoreAll);
        let a = integrate_adjoint(&sys, &clock, &u0, Some(&ctrl), &mut all, &cost).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut ck = TrajectoryStore::in_file(StoreMode::Checkpoint { stride: 5 }, &dir.path().join("traj.bin"), sys.snapshot_header()).unwrap();
        let b = integrate_adjoint(&sys, &clock, &u0, Some(&ctrl), &mut ck, &cost).unwrap();
        assert_eq!(a.gradient, b.gradient);
        assert_eq!(a.omega0, b.omega0);
    }

    #[test]
    fn discard_mode_is_rejected() {
        let (sys, clock, ctrl, cost) = lorenz_setup(5);
        let mut store = TrajectoryStore::in_memory(StoreMode::Discard);
        let err = integrate_adjoint(&sys, &clock, &[1.0, 1.0, 1.0], Some(&ctrl), &mut store, &cost).unwrap_err();
        assert!(err.to_string().contains("checkpoint"));
    }

    #[test]
    fn zero_direction_gives_zero_tangent() {
        let (sys, clock, ctrl, cost) = lorenz_setup(50);
        let tan = integrate_tangent(&sys, &clock, &[1.0, 1.0, 20.0], Some(&ctrl), Direction::default(), &cost).unwrap();
        assert_eq!(tan.jdot, 0.0);
        assert!(tan.norms.iter().all(|&n| n == 0.0));
    }

    #[test]
    fn fd_matches_tangent_on_linear_dynamics() {
        let sys = LinearSystem::new(2, 1, vec![-0.5, 1.0, -1.0, -0.2], vec![1.0, 0.5]).unwrap();
        let clock = RkClock::new(RkScheme::ck45(), 0.05, 40).unwrap();
        let param = ControlParameterization::with_temporal_stride(&[1], &[1], 0, 40, 8).unwrap();
        let ctrl = ControlHistory::new(param, vec![0.1; 6]).unwrap();
        let cost = TerminalCost::new(vec![0, 1], vec![0.0, 0.0], 40).unwrap();
        let xd = vec![1.0, -1.0, 0.5, 0.0, 0.2, 1.0];
        let d = Direction {
            state: None,
            control: Some(&xd),
        };
        let tan = integrate_tangent(&sys, &clock, &[1.0, 0.0], Some(&ctrl), d, &cost).unwrap();
        let fd = fd_directional(&sys, &clock, &[1.0, 0.0], Some(&ctrl), d, 1e-6, &cost).unwrap();
        assert!(rel(fd, tan.jdot) < 1e-5);
        assert!(fd_directional(&sys, &clock, &[1.0, 0.0], Some(&ctrl), d, 0.0, &cost).is_err());
    }

    #[test]
    fn lorenz_tangent_norm_grows() {
        let sys = LorenzSystem::default();
        let clock = RkClock::new(RkScheme::ck45(), 0.01, 2000).unwrap();
        let cost = TerminalCost::new(vec![0], vec![0.0], 2000).unwrap();
        let ud = [1.0, 0.0, 0.0];
        let tan = integrate_tangent(
            &sys,
            &clock,
            &[-5.0, -7.0, 20.0],
            None,
            Direction {
                state: Some(&ud),
                control: None,
            },
            &cost,
        )
        .unwrap();
        let logs: Vec<f64> = tan.norms.iter().map(|n| n.ln()).collect();
        assert!(logs.last().unwrap() - logs[0] > 5.0);
    }
}
