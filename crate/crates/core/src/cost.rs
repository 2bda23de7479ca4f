//! Cost functionals evaluated on observations of the trajectory.
//!
//! An [`Objective`] observes the state at selected time-iteration boundaries
//! through a linear selection and reduces the observation history to a
//! scalar. Its `obs_gradient` must be the exact total derivative with respect
//! to every observation, since both sensitivity engines rely on it.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid_field::Grid;
use crate::scalar::{CStep, Scalar};

pub trait Objective {
    /// Whether the state after iteration `n` is observed (`n = 0` is the initial state).
    fn observes(&self, n: usize) -> bool;
    /// Linear selection of the observed quantities.
    fn observe(&self, u: &[f64]) -> Vec<f64>;
    fn observe_complex(&self, u: &[CStep]) -> Vec<CStep>;
    /// `out += observe^T obs_bar`.
    fn observe_transpose_add(&self, obs_bar: &[f64], out: &mut [f64]);
    fn value<T: Scalar>(&self, obs: &[Vec<T>]) -> T;
    /// Total derivative of `value` with respect to each observation.
    fn obs_gradient(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>>;
    /// Contribution of each observation, for time-series output.
    fn contributions(&self, obs: &[Vec<f64>]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeanMode {
    /// Temporal mean over the observed interval.
    Running,
    /// Stored baseline mean, one value per observed point.
    Frozen(Vec<f64>),
}

/// `J = sum_s sum_x w_x (q_s(x) - qbar(x))^2 dt dV` over observed iterations.
///
/// For flows `q` is the pressure over the far-field region; the same form
/// applies to any selected state entries.
#[derive(Clone, Debug)]
pub struct FluctuationCost {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub first: usize,
    pub last: usize,
    pub dt: f64,
    pub cell_volume: f64,
    pub mean: MeanMode,
}

impl FluctuationCost {
    pub fn new(
        indices: Vec<usize>,
        weights: Vec<f64>,
        first: usize,
        last: usize,
        dt: f64,
        cell_volume: f64,
        mean: MeanMode,
    ) -> Result<Self> {
        if indices.is_empty() || indices.len() != weights.len() {
            return Err(Error::Validation("observation region is empty or inconsistent".into()));
        }
        if weights.iter().any(|&w| w < 0.0) || weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Validation("mask must be non-negative and not identically zero".into()));
        }
        if last < first {
            return Err(Error::Validation(format!("empty cost interval [{first}, {last}]")));
        }
        if let MeanMode::Frozen(m) = &mean {
            if m.len() != indices.len() {
                return Err(Error::ShapeMismatch {
                    expected: indices.len(),
                    got: m.len(),
                });
            }
        }
        Ok(Self {
            indices,
            weights,
            first,
            last,
            dt,
            cell_volume,
            mean,
        })
    }

    /// Pressure fluctuations over an index box `[lo, hi]` (inclusive) of a flow grid.
    pub fn pressure_box(grid: &Grid, lo: &[usize], hi: &[usize], first: usize, last: usize, dt: f64, mean: MeanMode) -> Result<Self> {
        let nd = grid.ndim();
        if lo.len() != nd || hi.len() != nd {
            return Err(Error::Validation("cost box dimension differs from grid".into()));
        }
        for d in 0..nd {
            if lo[d] > hi[d] || hi[d] >= grid.n[d] {
                return Err(Error::Validation(format!("axis {d}: cost box [{}, {}] outside grid", lo[d], hi[d])));
            }
        }
        let p_offset = (nd + 1) * grid.len();
        let mut indices = Vec::new();
        for k in 0..grid.len() {
            let m = grid.unravel(k);
            if (0..nd).all(|d| m[d] >= lo[d] && m[d] <= hi[d]) {
                indices.push(p_offset + k);
            }
        }
        let weights = vec![1.0; indices.len()];
        Self::new(indices, weights, first, last, dt, grid.cell_volume(), mean)
    }

    fn mean_of<T: Scalar>(&self, obs: &[Vec<T>]) -> Vec<T> {
        match &self.mean {
            MeanMode::Frozen(m) => m.iter().map(|&v| T::from_f64(v)).collect(),
            MeanMode::Running => {
                let mut acc = vec![T::zero(); self.indices.len()];
                for o in obs {
                    for (a, &v) in acc.iter_mut().zip(o) {
                        *a += v;
                    }
                }
                let inv = 1.0 / obs.len().max(1) as f64;
                acc.into_iter().map(|a| a * inv).collect()
            }
        }
    }

    fn quad_weight(&self) -> f64 {
        self.dt * self.cell_volume
    }
}

impl Objective for FluctuationCost {
    fn observes(&self, n: usize) -> bool {
        n >= self.first && n <= self.last
    }

    fn observe(&self, u: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| u[i]).collect()
    }

    fn observe_complex(&self, u: &[CStep]) -> Vec<CStep> {
        self.indices.iter().map(|&i| u[i]).collect()
    }

    fn observe_transpose_add(&self, obs_bar: &[f64], out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(obs_bar) {
            out[i] += v;
        }
    }

    fn value<T: Scalar>(&self, obs: &[Vec<T>]) -> T {
        let mean = self.mean_of(obs);
        let mut total = T::zero();
        for o in obs {
            let mut step = T::zero();
            for ((&v, &m), &w) in o.iter().zip(&mean).zip(&self.weights) {
                let d = v - m;
                step += d * d * w;
            }
            total += step;
        }
        total * self.quad_weight()
    }

    fn obs_gradient(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        // With a running mean the coupling term is proportional to
        // sum_s (q_s - qbar) = 0, so the separable derivative is exact.
        let mean = self.mean_of(obs);
        let qw = self.quad_weight();
        obs.iter()
            .map(|o| {
                o.iter()
                    .zip(&mean)
                    .zip(&self.weights)
                    .map(|((&v, &m), &w)| 2.0 * w * (v - m) * qw)
                    .collect()
            })
            .collect()
    }

    fn contributions(&self, obs: &[Vec<f64>]) -> Vec<f64> {
        let mean = self.mean_of(obs);
        obs.iter()
            .map(|o| {
                o.iter()
                    .zip(&mean)
                    .zip(&self.weights)
                    .map(|((&v, &m), &w)| w * (v - m) * (v - m))
                    .sum::<f64>()
                    * self.quad_weight()
            })
            .collect()
    }
}

/// `J = 1/2 sum_i w_i (u_N[i] - target_i)^2` at the final iteration.
#[derive(Clone, Debug)]
pub struct TerminalCost {
    pub indices: Vec<usize>,
    pub target: Vec<f64>,
    pub weights: Vec<f64>,
    pub final_iteration: usize,
}

impl TerminalCost {
    pub fn new(indices: Vec<usize>, target: Vec<f64>, final_iteration: usize) -> Result<Self> {
        if indices.is_empty() || indices.len() != target.len() {
            return Err(Error::Validation("terminal target inconsistent with observed entries".into()));
        }
        let weights = vec![1.0; indices.len()];
        Ok(Self {
            indices,
            target,
            weights,
            final_iteration,
        })
    }
}

impl Objective for TerminalCost {
    fn observes(&self, n: usize) -> bool {
        n == self.final_iteration
    }

    fn observe(&self, u: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| u[i]).collect()
    }

    fn observe_complex(&self, u: &[CStep]) -> Vec<CStep> {
        self.indices.iter().map(|&i| u[i]).collect()
    }

    fn observe_transpose_add(&self, obs_bar: &[f64], out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(obs_bar) {
            out[i] += v;
        }
    }

    fn value<T: Scalar>(&self, obs: &[Vec<T>]) -> T {
        let mut total = T::zero();
        for o in obs {
            for ((&v, &t), &w) in o.iter().zip(&self.target).zip(&self.weights) {
                let d = v - T::from_f64(t);
                total += d * d * (0.5 * w);
            }
        }
        total
    }

    fn obs_gradient(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        obs.iter()
            .map(|o| {
                o.iter()
                    .zip(&self.target)
                    .zip(&self.weights)
                    .map(|((&v, &t), &w)| w * (v - t))
                    .collect()
            })
            .collect()
    }

    fn contributions(&self, obs: &[Vec<f64>]) -> Vec<f64> {
        obs.iter().map(|o| self.value(std::slice::from_ref(o))).collect()
    }
}

/// State-space derivative `(dJ/du_n)^T` for the observation at position `k`
/// of the history; zero when the iteration is not observed.
pub fn dj_du<O: Objective + ?Sized>(objective: &O, obs: &[Vec<f64>], k: Option<usize>, state_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; state_len];
    if let Some(k) = k {
        let grads = objective.obs_gradient(obs);
        objective.observe_transpose_add(&grads[k], &mut out);
    }
    out
}

/// Writes `step,time,instantaneous,cumulative` rows.
pub fn write_cost_series<W: Write>(w: W, iterations: &[usize], dt: f64, contributions: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["step", "time", "instantaneous", "cumulative"])
        .map_err(csv_err)?;
    let mut cum = 0.0;
    for (&n, &c) in iterations.iter().zip(contributions) {
        cum += c;
        wtr.write_record(&[n.to_string(), format!("{:.12e}", n as f64 * dt), format!("{c:.17e}"), format!("{cum:.17e}")])
            .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Storage(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(dt: f64) -> FluctuationCost {
        FluctuationCost::new(vec![0], vec![1.0], 0, 100, dt, 0.25, MeanMode::Running).unwrap()
    }

    #[test]
    fn constant_pressure_costs_nothing() {
        let c = one_cell(0.1);
        let obs = vec![vec![3.0]; 10];
        assert_eq!(c.value(&obs), 0.0);
        assert!(c.obs_gradient(&obs).iter().all(|g| g[0] == 0.0));
    }

    #[test]
    fn alternating_signal() {
        let (a, dt, n) = (0.3, 0.1, 8);
        let obs: Vec<Vec<f64>> = (0..n).map(|k| vec![2.0 + if k % 2 == 0 { a } else { -a }]).collect();
        let c = one_cell(dt);
        let want = n as f64 * a * a * dt * 0.25;
        assert!((c.value(&obs) - want).abs() < 1e-15);
        let c2 = one_cell(2.0 * dt);
        assert!((c2.value(&obs) - 2.0 * c.value(&obs)).abs() < 1e-15);
    }

    #[test]
    fn running_mean_gradient_matches_fd() {
        let c = FluctuationCost::new(vec![0, 1], vec![1.0, 0.5], 0, 100, 0.1, 1.0, MeanMode::Running).unwrap();
        let obs: Vec<Vec<f64>> = (0..7).map(|k| vec![1.0 + 0.1 * (k as f64).sin(), 0.7 + 0.05 * (k as f64 * 1.3).cos()]).collect();
        let grad = c.obs_gradient(&obs);
        for k in 0..obs.len() {
            for q in 0..2 {
                let eps = 1e-6 * obs[k][q];
                let mut plus = obs.clone();
                let mut minus = obs.clone();
                plus[k][q] += eps;
                minus[k][q] -= eps;
                let fd = (c.value(&plus) - c.value(&minus)) / (2.0 * eps);
                assert!((fd - grad[k][q]).abs() <= 1e-9 * grad[k][q].abs().max(1e-3), "{k} {q}: {fd} {}", grad[k][q]);
            }
        }
    }

    #[test]
    fn dj_du_is_supported_on_mask() {
        let grid = Grid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let c = FluctuationCost::pressure_box(&grid, &[2, 3], &[4, 5], 0, 10, 0.1, MeanMode::Running).unwrap();
        assert_eq!(c.indices.len(), 9);
        let len = 4 * 64;
        let mut u = vec![1.0; len];
        let obs0 = c.observe(&u);
        u[c.indices[0]] = 1.5;
        let obs1 = c.observe(&u);
        let obs = vec![obs0, obs1];
        let d = dj_du(&c, &obs, Some(1), len);
        for (i, v) in d.iter().enumerate() {
            if !c.indices.contains(&i) {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(d[c.indices[0]] > 0.0);
        assert!(dj_du(&c, &obs, None, len).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(FluctuationCost::new(vec![], vec![], 0, 1, 0.1, 1.0, MeanMode::Running).is_err());
        assert!(FluctuationCost::new(vec![1], vec![0.0], 0, 1, 0.1, 1.0, MeanMode::Running).is_err());
        assert!(FluctuationCost::new(vec![1], vec![1.0], 3, 1, 0.1, 1.0, MeanMode::Running).is_err());
    }

    #[test]
    fn frozen_mean() {
        let c = FluctuationCost::new(vec![0], vec![1.0], 0, 10, 1.0, 1.0, MeanMode::Frozen(vec![1.0])).unwrap();
        let obs = vec![vec![2.0], vec![2.0]];
        assert_eq!(c.value(&obs), 2.0);
        assert_eq!(c.obs_gradient(&obs), vec![vec![2.0], vec![2.0]]);
    }

    #[test]
    fn terminal_cost() {
        let c = TerminalCost::new(vec![0, 2], vec![1.0, -1.0], 5).unwrap();
        assert!(c.observes(5) && !c.observes(4));
        let obs = vec![vec![2.0, 1.0]];
        assert_eq!(c.value(&obs), 0.5 * (1.0 + 4.0));
        assert_eq!(c.obs_gradient(&obs), vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn series_csv() {
        let mut buf = Vec::new();
        write_cost_series(&mut buf, &[0, 1], 0.5, &[1.0, 2.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,time,instantaneous,cumulative"));
        assert_eq!(text.lines().count(), 3);
    }
}
