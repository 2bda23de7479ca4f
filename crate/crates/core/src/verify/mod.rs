//! Verification battery: transpose identities, complex-step agreement,
//! gradient identity and sensitivity blow-up, plus small test systems.

pub mod linear;
pub mod lorenz;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chaos::linear_fit;
use crate::control_space::{ControlHistory, ControlParameterization};
use crate::cost::Objective;
use crate::error::{check_len, Error, Result};
use crate::grid_field::{dot, norm};
use crate::scalar::CStep;
use crate::sensitivity_loop::{fd_directional, integrate_adjoint, integrate_tangent, Direction};
use crate::timeloop::{ComplexDynamics, DynamicalSystem, RkClock, TrajectoryStore};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `|lhs - rhs|` normalized by the larger of `||Ja|| ||b||` and `||a|| ||J^T b||`.
pub fn relative_defect(lhs: f64, rhs: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// Max over random probes of the `<J a, b> = <a, J^T b>` defect, where `J`
/// is the Jacobian in state and (when `g` is given) control.
pub fn dot_product_test<S: DynamicalSystem + ?Sized>(
    system: &S,
    u: &[f64],
    g: Option<&[f64]>,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Validation("at least one probe is required".into()));
    }
    let n = system.state_len();
    check_len(n, u.len())?;
    let m = if g.is_some() { system.control_len() } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ja = vec![0.0; n];
    let mut jtb = vec![0.0; n];
    let mut btb = vec![0.0; m];
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let a = random_vec(&mut rng, n);
        let ag = random_vec(&mut rng, m);
        let b = random_vec(&mut rng, n);
        system.rhs_tangent(u, g, t, &a, g.map(|_| ag.as_slice()), &mut ja);
        system.rhs_adjoint(u, g, t, &b, &mut jtb);
        let mut rhs = dot(&a, &jtb);
        let mut adj_norm2 = dot(&jtb, &jtb);
        if m > 0 {
            system.rhs_control_adjoint(u, g, t, &b, &mut btb);
            rhs += dot(&ag, &btb);
            adj_norm2 += dot(&btb, &btb);
        }
        let lhs = dot(&ja, &b);
        let a_norm = (dot(&a, &a) + dot(&ag, &ag)).sqrt();
        let scale = (norm(&ja) * norm(&b)).max(a_norm * adj_norm2.sqrt());
        worst = worst.max(relative_defect(lhs, rhs, scale));
    }
    Ok(worst)
}

/// Max-norm relative error between `Im R(u + i h v) / h` and `(dR/du) v`.
pub fn complex_step_direction<S: ComplexDynamics + ?Sized>(
    system: &S,
    u: &[f64],
    g: Option<&[f64]>,
    t: f64,
    v: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Validation(format!("complex step must be positive, got {h}")));
    }
    let n = system.state_len();
    check_len(n, u.len())?;
    check_len(n, v.len())?;
    let uc: Vec<CStep> = u.iter().zip(v).map(|(&a, &b)| CStep::new(a, h * b)).collect();
    let gc: Option<Vec<CStep>> = g.map(|g| g.iter().map(|&x| CStep::new(x, 0.0)).collect());
    let mut rc = vec![CStep::default(); n];
    system.rhs_complex(&uc, gc.as_deref(), t, &mut rc);
    let mut tan = vec![0.0; n];
    system.rhs_tangent(u, g, t, v, None, &mut tan);
    let scale = tan.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let err = rc
        .iter()
        .zip(&tan)
        .fold(0.0f64, |m, (c, t)| m.max((c.im / h - t).abs()));
    Ok(if scale == 0.0 { err } else { err / scale })
}

/// [`complex_step_direction`] along the unit vector of one state entry.
pub fn complex_step_test<S: ComplexDynamics + ?Sized>(
    system: &S,
    u: &[f64],
    g: Option<&[f64]>,
    t: f64,
    component: usize,
    h: f64,
) -> Result<f64> {
    let n = system.state_len();
    if component >= n {
        return Err(Error::Validation(format!("component {component} out of range")));
    }
    let mut e = vec![0.0; n];
    e[component] = 1.0;
    complex_step_direction(system, u, g, t, &e, h)
}

/// Control perturbation with finite temporal support: a Gaussian bump over
/// the snapshots times a Gaussian over the fine control points, scaled so
/// that its largest entry is `amplitude`.
pub fn gaussian_perturbation(param: &ControlParameterization, amplitude: f64) -> Vec<f64> {
    let ns = param.n_snapshots();
    let mid = 0.5 * (ns as f64 - 1.0);
    let tw = (ns as f64 / 6.0).max(0.5);
    let coarse = param.coarse_len();
    let shape = &param.coarse_shape;
    let mut spatial = vec![1.0; coarse];
    for (k, w) in spatial.iter_mut().enumerate() {
        let mut rem = k;
        for &n in shape {
            let i = rem % n;
            rem /= n;
            if n > 1 {
                let c = 0.5 * (n as f64 - 1.0);
                *w *= (-((i as f64 - c) / (0.25 * n as f64)).powi(2)).exp();
            }
        }
    }
    let mut out = Vec::with_capacity(param.control_len());
    for s in 0..ns {
        // zero at both ends of the control interval
        let t = if s == 0 || s + 1 == ns {
            0.0
        } else {
            (-((s as f64 - mid) / tw).powi(2)).exp()
        };
        out.extend(spatial.iter().map(|w| t * w));
    }
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v *= amplitude / max);
    }
    out
}

/// Number of matching significant digits of `a` and `b` (17 when identical).
pub fn agreement_digits(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if a == b {
        return 17.0;
    }
    if !scale.is_finite() {
        return 0.0;
    }
    (-((a - b).abs() / scale).log10()).clamp(0.0, 17.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientIdentity {
    /// `<grad J, X'> + <omega_0, u'>` from the adjoint sweep.
    pub lhs: f64,
    /// Linear response from one tangent run.
    pub rhs: f64,
    pub digits: f64,
}

/// Compares the adjoint gradient against the tangent linear response for one
/// perturbation.
pub fn gradient_identity_test<S, O>(
    system: &S,
    clock: &RkClock,
    u0: &[f64],
    controls: Option<&ControlHistory>,
    direction: Direction<'_>,
    objective: &O,
    store: &mut TrajectoryStore,
) -> Result<GradientIdentity>
where
    S: DynamicalSystem + ?Sized,
    O: Objective + ?Sized,
{
    let adj = integrate_adjoint(system, clock, u0, controls, store, objective)?;
    let tan = integrate_tangent(system, clock, u0, controls, direction, objective)?;
    let mut lhs = 0.0;
    if let Some(x) = direction.control {
        lhs += dot(&adj.gradient, x);
    }
    if let Some(d) = direction.state {
        lhs += dot(&adj.omega0, d);
    }
    Ok(GradientIdentity {
        lhs,
        rhs: tan.jdot,
        digits: agreement_digits(lhs, tan.jdot),
    })
}

#[derive(Clone, Debug)]
pub struct BlowupRow {
    pub horizon: f64,
    pub n_steps: usize,
    pub tangent: f64,
    pub fd: f64,
    /// `|fd - tangent| / min(|fd|, |tangent|)`: above 1 the two estimates
    /// differ by more than the smaller of them.
    pub rel_gap: f64,
    pub norms: Vec<f64>,
    pub blowup: Option<usize>,
}

/// One blow-up experiment: controls, perturbation and objective for a horizon
/// of `n_steps` time iterations.
pub struct BlowupCase<O> {
    pub controls: Option<ControlHistory>,
    pub state_dir: Option<Vec<f64>>,
    pub control_dir: Option<Vec<f64>>,
    pub objective: O,
}

/// Tangent against forward finite differences over increasing horizons.
pub fn blowup_study<S, O, F>(
    system: &S,
    clock_template: &RkClock,
    u0: &[f64],
    horizons: &[f64],
    epsilon: f64,
    mut setup: F,
) -> Result<Vec<BlowupRow>>
where
    S: DynamicalSystem + ?Sized,
    O: Objective,
    F: FnMut(usize) -> Result<BlowupCase<O>>,
{
    if horizons.is_empty() || horizons.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("horizons must be non-empty and increasing".into()));
    }
    let mut rows = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let n_steps = (h / clock_template.dt).round() as usize;
        let clock = RkClock {
            n_steps,
            ..clock_template.clone()
        };
        let case = setup(n_steps)?;
        let dir = Direction {
            state: case.state_dir.as_deref(),
            control: case.control_dir.as_deref(),
        };
        let tan = integrate_tangent(system, &clock, u0, case.controls.as_ref(), dir, &case.objective)?;
        let fd = fd_directional(system, &clock, u0, case.controls.as_ref(), dir, epsilon, &case.objective)?;
        let rel_gap = if tan.jdot.is_finite() {
            symmetric_gap(fd, tan.jdot)
        } else {
            f64::INFINITY
        };
        rows.push(BlowupRow {
            horizon: h,
            n_steps,
            tangent: tan.jdot,
            fd,
            rel_gap,
            norms: tan.norms,
            blowup: tan.blowup,
        });
    }
    Ok(rows)
}

/// Slope of `log ||Y_dot||` against time, ignoring the first `t_skip`.
fn symmetric_gap(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / a.abs().min(b.abs())
    }
}

pub fn tangent_growth_rate(norms: &[f64], dt: f64, t_skip: f64) -> Result<f64> {
    let skip = (t_skip / dt).round() as usize;
    let pts: Vec<(f64, f64)> = norms
        .iter()
        .enumerate()
        .skip(skip)
        .filter(|(_, n)| n.is_finite() && **n > 0.0)
        .map(|(i, n)| (i as f64 * dt, n.ln()))
        .collect();
    let (t, l): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(linear_fit(&t, &l)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    AtLeast,
    Above,
    /// Within `threshold` relative distance of `target`.
    Within,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub metric: f64,
    pub threshold: f64,
    pub relation: Relation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, metric: f64, relation: Relation, threshold: f64) -> Self {
        let passed = match relation {
            Relation::Below => metric < threshold,
            Relation::AtLeast => metric >= threshold,
            Relation::Above => metric > threshold,
            Relation::Within => false,
        };
        Self {
            name: name.into(),
            metric,
            threshold,
            relation,
            target: None,
            passed,
        }
    }

    pub fn within(name: &str, metric: f64, target: f64, rel_tol: f64) -> Self {
        Self {
            name: name.into(),
            metric,
            threshold: rel_tol,
            relation: Relation::Within,
            target: Some(target),
            passed: (metric - target).abs() <= rel_tol * target.abs(),
        }
    }

    /// Boolean property recorded as metric 1 (holds) or 0.
    pub fn holds(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Relation::AtLeast, 1.0)
    }

    pub fn line(&self) -> String {
        let rel = match self.relation {
            Relation::Below => "<",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
            Relation::Within => "within",
        };
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match self.target {
            Some(t) => format!("{verdict} {}: {:.6e} {rel} {:.3e} of {t}", self.name, self.metric, self.threshold),
            None => format!("{verdict} {}: {:.6e} {rel} {:.3e}", self.name, self.metric, self.threshold),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::linear::LinearSystem;
    use super::lorenz::LorenzSystem;
    use super::*;
    use crate::cost::{FluctuationCost, MeanMode};
    use crate::timeloop::{RkScheme, StoreMode};

    #[test]
    fn lorenz_transpose_identity() {
        let l = LorenzSystem::default();
        let d = dot_product_test(&l, &[1.0, -2.0, 25.0], Some(&[0.3]), 0.0, 1000, 1).unwrap();
        assert!(d < 1e-14, "{d}");
    }

    #[test]
    fn gap_is_relative_to_the_smaller_estimate() {
        assert_eq!(symmetric_gap(2.0, 2.0), 0.0);
        assert_eq!(symmetric_gap(1.0, 4.0), 3.0);
        assert_eq!(symmetric_gap(4.0, 1.0), 3.0);
        assert_eq!(symmetric_gap(-1.0, 1.0), 2.0);
        assert_eq!(symmetric_gap(0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn zero_probe_has_zero_defect() {
        // a single state with zero Jacobian
        let sys = LinearSystem::diagonal(&[0.0, 0.0]);
        assert_eq!(dot_product_test(&sys, &[1.0, 1.0], None, 0.0, 5, 0).unwrap(), 0.0);
        assert!(dot_product_test(&sys, &[1.0, 1.0], None, 0.0, 0, 0).is_err());
    }

    #[test]
    fn square_harness() {
        let x = CStep::new(3.0, 1e-20);
        assert_eq!((x * x).im / 1e-20, 6.0);
    }

    #[test]
    fn complex_step_flat_in_h() {
        let l = LorenzSystem::default();
        let u = [1.5, -0.7, 21.0];
        let errs: Vec<f64> = [1e-10, 1e-20, 1e-30]
            .iter()
            .map(|&h| complex_step_test(&l, &u, None, 0.0, 1, h).unwrap())
            .collect();
        for e in &errs {
            assert!(*e < 1e-12);
        }
    }

    #[test]
    fn perturbation_has_finite_support() {
        let p = ControlParameterization::with_temporal_stride(&[8, 8], &[2, 2], 0, 40, 5).unwrap();
        let x = gaussian_perturbation(&p, 1e-4);
        assert_eq!(x.len(), p.control_len());
        let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max - 1e-4).abs() < 1e-18);
        assert!(x[..p.coarse_len()].iter().all(|&v| v == 0.0));
        assert!(x[x.len() - p.coarse_len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn digits() {
        assert_eq!(agreement_digits(1.0, 1.0), 17.0);
        assert!((agreement_digits(1.0, 1.0 + 1e-10) - 10.0).abs() < 1e-3);
        assert_eq!(agreement_digits(0.0, 0.0), 17.0);
    }

    #[test]
    fn lorenz_gradient_identity() {
        let l = LorenzSystem::default();
        let clock = RkClock::new(RkScheme::ck45(), 0.01, 100).unwrap();
        let param = ControlParameterization::with_temporal_stride(&[1], &[1], 0, 100, 10).unwrap();
        let ctrl = ControlHistory::zeros(param.clone());
        let cost = FluctuationCost::new(vec![0, 1, 2], vec![1.0; 3], 0, 100, 0.01, 1.0, MeanMode::Running).unwrap();
        let xd: Vec<f64> = (0..param.control_len()).map(|i| (-((i as f64 - 5.0) / 2.0).powi(2)).exp() * 1e-4).collect();
        let mut store = TrajectoryStore::in_memory(StoreMode::StoreAll);
        let gi = gradient_identity_test(
            &l,
            &clock,
            &[1.0, 1.0, 20.0],
            Some(&ctrl),
            Direction {
                state: None,
                control: Some(&xd),
            },
            &cost,
            &mut store,
        )
        .unwrap();
        assert!(gi.digits >= 12.0, "{gi:?}");
    }

    #[test]
    fn stable_linear_system_never_bifurcates() {
        let sys = LinearSystem::diagonal(&[-0.5, -1.0]);
        let clock = RkClock::new(RkScheme::ck45(), 0.01, 1).unwrap();
        let rows = blowup_study(&sys, &clock, &[1.0, 1.0], &[1.0, 5.0, 30.0], 1e-6, |n| {
            Ok(BlowupCase {
                controls: None,
                state_dir: Some(vec![1.0, 0.5]),
                control_dir: None,
                objective: FluctuationCost::new(vec![0, 1], vec![1.0, 1.0], 0, n, 0.01, 1.0, MeanMode::Running)?,
            })
        })
        .unwrap();
        for r in rows {
            assert!(r.rel_gap < 1e-6, "{r:?}");
            assert!(r.blowup.is_none());
        }
    }

    #[test]
    fn report_json() {
        let mut r = Report::default();
        r.push(Check::new("a", 1e-15, Relation::Below, 1e-13));
        r.push(Check::within("b", 0.9, 0.906, 0.05));
        assert!(r.all_passed());
        let j = r.to_json();
        assert!(j.contains("\"name\": \"a\"") && j.contains("\"passed\": true"));
        r.push(Check::holds("c", false));
        assert!(!r.all_passed());
        assert!(r.checks[2].line().starts_with("FAIL c"));
    }
}
