//! Control parameterization: snapshots `Phi_i` linearly interpolated in time
//! and, optionally, subsampled in space with Catmull-Rom reconstruction.
//!
//! Spatial gaps follow the `gapCtrl{abc}{d}` convention: a stride per axis
//! between control sampling points, and a temporal stride between snapshots
//! in time iterations. Stride 1 everywhere is the identity map.

use crate::error::{check_len, Error, Result};

/// Sparse 1-D interpolation matrix: per fine index, `(coarse index, weight)`.
type AxisMap = Vec<Vec<(usize, f64)>>;

#[derive(Clone, Debug, PartialEq)]
pub struct ControlParameterization {
    /// Time-iteration positions of the snapshots, strictly increasing.
    pub snapshot_steps: Vec<f64>,
    pub fine_shape: Vec<usize>,
    pub gap: Vec<usize>,
    pub coarse_shape: Vec<usize>,
    maps: Vec<AxisMap>,
}

/// Catmull-Rom weights for the four knots around a segment at parameter `t`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t + 2.0 * t2 - t3),
        0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
        0.5 * (t + 4.0 * t2 - 3.0 * t3),
        0.5 * (-t2 + t3),
    ]
}

/// Knot `idx` (possibly a ghost) as a combination of real knots. Ghosts are
/// linear extrapolations so that linear data is reproduced.
fn knot_combo(idx: isize, count: usize) -> Vec<(usize, f64)> {
    let k = count as isize;
    if (0..k).contains(&idx) {
        return vec![(idx as usize, 1.0)];
    }
    if count == 1 {
        return vec![(0, 1.0)];
    }
    if idx < 0 {
        let d = (-idx) as f64;
        vec![(0, 1.0 + d), (1, -d)]
    } else {
        let d = (idx - (k - 1)) as f64;
        vec![(count - 1, 1.0 + d), (count - 2, -d)]
    }
}

fn axis_map(fine: usize, gap: usize) -> AxisMap {
    let count = fine / gap;
    (0..fine)
        .map(|f| {
            let seg = (f / gap) as isize;
            let t = (f % gap) as f64 / gap as f64;
            let w = catmull_rom(t);
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (q, &wq) in w.iter().enumerate() {
                if wq == 0.0 {
                    continue;
                }
                for (c, cw) in knot_combo(seg - 1 + q as isize, count) {
                    match row.iter_mut().find(|(i, _)| *i == c) {
                        Some(entry) => entry.1 += wq * cw,
                        None => row.push((c, wq * cw)),
                    }
                }
            }
            row
        })
        .collect()
}

fn apply_axis(data: &[f64], shape: &[usize], axis: usize, map: &AxisMap, out_len_axis: usize, transpose: bool) -> Vec<f64> {
    let stride: usize = shape[..axis].iter().product();
    let n_in = shape[axis];
    let outer: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; stride * out_len_axis * outer];
    for o in 0..outer {
        for inner in 0..stride {
            let base_in = o * stride * n_in + inner;
            let base_out = o * stride * out_len_axis + inner;
            if transpose {
                // map rows are indexed by the input (fine) axis
                for (f, row) in map.iter().enumerate() {
                    let v = data[base_in + f * stride];
                    for &(c, w) in row {
                        out[base_out + c * stride] += w * v;
                    }
                }
            } else {
                for (f, row) in map.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(c, w) in row {
                        acc += w * data[base_in + c * stride];
                    }
                    out[base_out + f * stride] = acc;
                }
            }
        }
    }
    out
}

impl ControlParameterization {
    pub fn new(fine_shape: &[usize], gap: &[usize], snapshot_steps: Vec<f64>) -> Result<Self> {
        if fine_shape.len() != gap.len() || fine_shape.is_empty() {
            return Err(Error::Validation("gap strides must match the region dimension".into()));
        }
        if snapshot_steps.len() < 2 {
            return Err(Error::Validation("at least two control snapshots are required".into()));
        }
        if snapshot_steps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("snapshot steps must be strictly increasing".into()));
        }
        let mut coarse_shape = Vec::with_capacity(gap.len());
        let mut maps = Vec::with_capacity(gap.len());
        for (axis, (&n, &g)) in fine_shape.iter().zip(gap).enumerate() {
            if g == 0 || n == 0 || n % g != 0 {
                return Err(Error::Validation(format!(
                    "axis {axis}: gap stride {g} must divide the region extent {n}"
                )));
            }
            coarse_shape.push(n / g);
            maps.push(axis_map(n, g));
        }
        Ok(Self {
            snapshot_steps,
            fine_shape: fine_shape.to_vec(),
            gap: gap.to_vec(),
            coarse_shape,
            maps,
        })
    }

    /// Snapshots every `delta` iterations from `first` until `last` is covered.
    pub fn with_temporal_stride(fine_shape: &[usize], gap: &[usize], first: usize, last: usize, delta: usize) -> Result<Self> {
        if delta == 0 || last <= first {
            return Err(Error::Validation(format!(
                "invalid control interval [{first}, {last}] with temporal stride {delta}"
            )));
        }
        let mut steps = Vec::new();
        let mut s = first;
        loop {
            steps.push(s as f64);
            if s >= last {
                break;
            }
            s += delta;
        }
        Self::new(fine_shape, gap, steps)
    }

    pub fn n_snapshots(&self) -> usize {
        self.snapshot_steps.len()
    }

    pub fn fine_len(&self) -> usize {
        self.fine_shape.iter().product()
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse_shape.iter().product()
    }

    /// Length of the full control vector (all coarse snapshots).
    pub fn control_len(&self) -> usize {
        self.n_snapshots() * self.coarse_len()
    }

    /// Interpolation weights `gamma` at position `tau` (in iteration units).
    /// Empty outside the snapshot interval.
    pub fn gamma_weights(&self, tau: f64) -> Vec<(usize, f64)> {
        let steps = &self.snapshot_steps;
        let (first, last) = (steps[0], steps[steps.len() - 1]);
        if !(tau >= first && tau <= last) {
            return Vec::new();
        }
        let j = match steps.iter().rposition(|&s| s <= tau) {
            Some(j) if j + 1 < steps.len() => j,
            _ => return vec![(steps.len() - 1, 1.0)],
        };
        let w = (tau - steps[j]) / (steps[j + 1] - steps[j]);
        let mut out = Vec::with_capacity(2);
        if w < 1.0 {
            out.push((j, 1.0 - w));
        }
        if w > 0.0 {
            out.push((j + 1, w));
        }
        out
    }

    /// Catmull-Rom expansion of one coarse snapshot to the full region.
    pub fn expand(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        check_len(self.coarse_len(), coarse.len())?;
        let mut shape = self.coarse_shape.clone();
        let mut data = coarse.to_vec();
        for axis in 0..shape.len() {
            if self.gap[axis] == 1 {
                continue;
            }
            data = apply_axis(&data, &shape, axis, &self.maps[axis], self.fine_shape[axis], false);
            shape[axis] = self.fine_shape[axis];
        }
        Ok(data)
    }

    /// Exact transpose of [`ControlParameterization::expand`].
    pub fn restrict(&self, fine: &[f64]) -> Result<Vec<f64>> {
        check_len(self.fine_len(), fine.len())?;
        let mut shape = self.fine_shape.clone();
        let mut data = fine.to_vec();
        for axis in (0..shape.len()).rev() {
            if self.gap[axis] == 1 {
                continue;
            }
            data = apply_axis(&data, &shape, axis, &self.maps[axis], self.coarse_shape[axis], true);
            shape[axis] = self.coarse_shape[axis];
        }
        Ok(data)
    }
}

/// Control values over all snapshots, with expanded snapshots cached.
#[derive(Clone, Debug)]
pub struct ControlHistory {
    pub param: ControlParameterization,
    pub values: Vec<f64>,
    fine: Vec<Vec<f64>>,
}

impl ControlHistory {
    pub fn new(param: ControlParameterization, values: Vec<f64>) -> Result<Self> {
        check_len(param.control_len(), values.len())?;
        let fine = values
            .chunks(param.coarse_len())
            .map(|c| param.expand(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { param, values, fine })
    }

    pub fn zeros(param: ControlParameterization) -> Self {
        let len = param.control_len();
        Self::new(param, vec![0.0; len]).expect("zero control has the right length")
    }

    /// Full-resolution control `sum_i gamma_i(tau) expand(Phi_i)`; `None` outside
    /// the control interval.
    pub fn fine_at(&self, tau: f64) -> Option<Vec<f64>> {
        let weights = self.param.gamma_weights(tau);
        if weights.is_empty() {
            return None;
        }
        let mut out = vec![0.0; self.param.fine_len()];
        for (i, w) in weights {
            for (o, v) in out.iter_mut().zip(&self.fine[i]) {
                *o += w * v;
            }
        }
        Some(out)
    }
}

/// Accumulates `dt * gamma_{e,i} * proj_e` per snapshot during a sweep.
#[derive(Clone, Debug)]
pub struct GradientAccumulator {
    fine: Vec<Vec<f64>>,
}

impl GradientAccumulator {
    pub fn new(param: &ControlParameterization) -> Self {
        Self {
            fine: vec![vec![0.0; param.fine_len()]; param.n_snapshots()],
        }
    }

    pub fn add(&mut self, param: &ControlParameterization, tau: f64, dt: f64, projection: &[f64]) {
        for (i, w) in param.gamma_weights(tau) {
            let f = dt * w;
            for (g, p) in self.fine[i].iter_mut().zip(projection) {
                *g += f * p;
            }
        }
    }

    /// Restricts every snapshot gradient to the coarse control space.
    pub fn finish(self, param: &ControlParameterization) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(param.control_len());
        for f in &self.fine {
            out.extend(param.restrict(f)?);
        }
        Ok(out)
    }
}

/// Gradient over snapshots from per-evaluation control projections
/// `(tau_e, (dR/dg)^T xi_{e+1})`.
pub fn assemble_gradient(param: &ControlParameterization, projections: &[(f64, Vec<f64>)], dt: f64) -> Result<Vec<f64>> {
    if projections.is_empty() {
        return Err(Error::Validation("no adjoint projections supplied".into()));
    }
    let mut acc = GradientAccumulator::new(param);
    for (tau, p) in projections {
        check_len(param.fine_len(), p.len())?;
        acc.add(param, *tau, dt, p);
    }
    acc.finish(param)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_field::dot;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn gamma_weights_basic() {
        let p = ControlParameterization::new(&[1], &[1], vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(p.gamma_weights(10.0), vec![(1, 1.0)]);
        assert_eq!(p.gamma_weights(5.0), vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(p.gamma_weights(20.0), vec![(2, 1.0)]);
        assert!(p.gamma_weights(20.5).is_empty());
        assert!(p.gamma_weights(-0.1).is_empty());
        for k in 0..200 {
            let tau = k as f64 * 0.1;
            let s: f64 = p.gamma_weights(tau).iter().map(|w| w.1).sum();
            assert!((s - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn gap_one_is_identity() {
        let p = ControlParameterization::new(&[4, 5, 3], &[1, 1, 1], vec![0.0, 1.0]).unwrap();
        let c = rand_vec(60, 1);
        assert_eq!(p.expand(&c).unwrap(), c);
        assert_eq!(p.restrict(&c).unwrap(), c);
    }

    #[test]
    fn reproduces_constants_and_linears() {
        let p = ControlParameterization::new(&[16, 12], &[4, 3], vec![0.0, 1.0]).unwrap();
        let c = vec![2.5; p.coarse_len()];
        assert!(p.expand(&c).unwrap().iter().all(|v| (v - 2.5).abs() < 1e-15));
        // linear in x: coarse knot i sits at fine index 4 i
        let lin: Vec<f64> = (0..p.coarse_len()).map(|k| 0.3 + 0.1 * (4 * (k % 4)) as f64).collect();
        let fine = p.expand(&lin).unwrap();
        for (k, v) in fine.iter().enumerate() {
            let x = (k % 16) as f64;
            assert!((v - (0.3 + 0.1 * x)).abs() < 1e-13, "{k}: {v}");
        }
    }

    #[test]
    fn knots_are_reproduced_exactly() {
        let p = ControlParameterization::new(&[12], &[3], vec![0.0, 1.0]).unwrap();
        let c = rand_vec(4, 2);
        let f = p.expand(&c).unwrap();
        for (i, v) in c.iter().enumerate() {
            assert_eq!(f[3 * i], *v);
        }
    }

    #[test]
    fn restrict_is_transpose_on_cube() {
        let p = ControlParameterization::new(&[16, 16, 16], &[2, 2, 2], vec![0.0, 1.0]).unwrap();
        let c = rand_vec(p.coarse_len(), 3);
        let f = rand_vec(p.fine_len(), 4);
        let lhs = dot(&p.expand(&c).unwrap(), &f);
        let rhs = dot(&c, &p.restrict(&f).unwrap());
        assert!((lhs - rhs).abs() < 1e-14 * lhs.abs().max(1.0));
        assert!(p.restrict(&vec![0.0; p.fine_len()]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_dividing_stride_is_rejected() {
        assert!(ControlParameterization::new(&[10], &[3], vec![0.0, 1.0]).is_err());
        assert!(ControlParameterization::new(&[10], &[2], vec![0.0]).is_err());
        assert!(ControlParameterization::new(&[10], &[2], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn temporal_stride_covers_interval() {
        let p = ControlParameterization::with_temporal_stride(&[4], &[1], 10, 25, 8).unwrap();
        assert_eq!(p.snapshot_steps, vec![10.0, 18.0, 26.0]);
    }

    #[test]
    fn gradient_support_follows_gamma() {
        let p = ControlParameterization::new(&[2], &[1], vec![0.0, 4.0, 8.0]).unwrap();
        let zero = assemble_gradient(&p, &[(1.0, vec![0.0, 0.0])], 0.1).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let g = assemble_gradient(&p, &[(5.0, vec![1.0, 2.0])], 0.5).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.375, 0.75, 0.125, 0.25]);
        assert!(assemble_gradient(&p, &[], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn expand_restrict_duality(seed in 0u64..1000, g0 in 1usize..4, g1 in 1usize..4) {
            let shape = [g0 * 4, g1 * 3];
            let p = ControlParameterization::new(&shape, &[g0, g1], vec![0.0, 1.0]).unwrap();
            let c = rand_vec(p.coarse_len(), seed);
            let f = rand_vec(p.fine_len(), seed + 7);
            let lhs = dot(&p.expand(&c).unwrap(), &f);
            let rhs = dot(&c, &p.restrict(&f).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + lhs.abs()));
        }
    }
}
