//! Maximal Lyapunov exponent from tangent growth, and turbulence scales.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::grid_field::norm;
use crate::ns_rhs::NsOperators;
use crate::timeloop::{rk_step, rk_step_tangent, DynamicalSystem, RkClock};

/// Least-squares line `y = slope x + intercept` and its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation("linear fit needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::Validation("linear fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

#[derive(Clone, Debug)]
pub struct MleEstimate {
    pub lambda: f64,
    pub r_squared: f64,
    /// `(t, accumulated log growth)` at every time iteration.
    pub series: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct MleOptions {
    pub t_transient: f64,
    pub t_fit: f64,
    /// Renormalization interval in RK sub-steps.
    pub renormalize_every: usize,
    pub seed: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            t_transient: 0.0,
            t_fit: 10.0,
            renormalize_every: 100,
            seed: 0,
        }
    }
}

/// Integrates the tangent from a random unit perturbation next to the
/// primal, renormalizing periodically, and fits the log growth after the
/// transient.
pub fn estimate_mle<S: DynamicalSystem + ?Sized>(
    system: &S,
    clock_template: &RkClock,
    u0: &[f64],
    opts: &MleOptions,
) -> Result<MleEstimate> {
    if !(opts.t_fit > 0.0) || opts.t_transient < 0.0 {
        return Err(Error::Validation("fit window must be positive".into()));
    }
    if opts.renormalize_every == 0 {
        return Err(Error::Validation("renormalization interval must be positive".into()));
    }
    let len = system.state_len();
    check_len(len, u0.len())?;
    let dt = clock_template.dt;
    let skip = (opts.t_transient / dt).round() as usize;
    let n_steps = skip + (opts.t_fit / dt).round().max(2.0) as usize;
    let clock = RkClock {
        n_steps,
        ..clock_template.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut ud: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n0 = norm(&ud);
    ud.iter_mut().for_each(|v| *v /= n0);
    let mut u = u0.to_vec();
    let mut k = vec![0.0; len];
    let mut kd = vec![0.0; len];
    let mut prev = vec![0.0; len];
    let mut scratch = vec![0.0; len];
    let mut log_acc = 0.0;
    let mut series = Vec::with_capacity(n_steps + 1);
    series.push((clock.t0, 0.0));
    let st = clock.stages();
    for s in 1..=clock.total_substeps() {
        prev.copy_from_slice(&u);
        rk_step(system, &clock, s, &mut u, &mut k, None, &mut scratch);
        rk_step_tangent(system, &clock, s, &prev, None, &mut ud, &mut kd, None, &mut scratch);
        let nd = norm(&ud);
        if !nd.is_finite() || nd == 0.0 {
            return Err(Error::NonFinite(format!(
                "tangent norm at sub-step {s}; use a smaller renormalization interval"
            )));
        }
        if s % opts.renormalize_every == 0 {
            log_acc += nd.ln();
            ud.iter_mut().for_each(|v| *v /= nd);
            kd.iter_mut().for_each(|v| *v /= nd);
        }
        if s % st == 0 {
            let n = s / st;
            system.check_state(&u).map_err(|e| Error::IntegrationFailure {
                step: n,
                source: Box::new(e),
            })?;
            series.push((clock.iteration_time(n), log_acc + norm(&ud).ln()));
        }
    }
    let fit = &series[skip..];
    let (t, l): (Vec<f64>, Vec<f64>) = fit.iter().copied().unzip();
    let (lambda, _, r_squared) = linear_fit(&t, &l)?;
    Ok(MleEstimate {
        lambda,
        r_squared,
        series,
    })
}

/// `eps = nu < du'_i/dx_j du'_i/dx_j + du'_i/dx_j du'_j/dx_i >` over the grid,
/// with `u' = u - mean`.
pub fn dissipation_rate(ops: &NsOperators, velocity: &[Vec<f64>], mean: &[Vec<f64>], nu: f64) -> Result<f64> {
    let nd = ops.ndim();
    if mean.len() != nd {
        return Err(Error::Validation("mean velocity field missing".into()));
    }
    if velocity.len() != nd {
        return Err(Error::ShapeMismatch {
            expected: nd,
            got: velocity.len(),
        });
    }
    let n = ops.npts();
    let mut grad = vec![vec![Vec::new(); nd]; nd];
    for i in 0..nd {
        check_len(n, velocity[i].len())?;
        check_len(n, mean[i].len())?;
        let fl: Vec<f64> = velocity[i].iter().zip(&mean[i]).map(|(a, b)| a - b).collect();
        for j in 0..nd {
            grad[i][j] = ops.d(j, &fl);
        }
    }
    let mut total = 0.0;
    for k in 0..n {
        for i in 0..nd {
            for j in 0..nd {
                total += grad[i][j][k] * grad[i][j][k] + grad[i][j][k] * grad[j][i][k];
            }
        }
    }
    Ok(nu * total / n as f64)
}

/// `(nu^3 / eps)^(1/4)`.
pub fn kolmogorov_length(nu: f64, epsilon: f64) -> Result<f64> {
    if !(nu > 0.0) || !(epsilon > 0.0) {
        return Err(Error::Validation(format!(
            "Kolmogorov length needs nu > 0 and eps > 0, got {nu}, {epsilon}"
        )));
    }
    Ok((nu.powi(3) / epsilon).powf(0.25))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub reynolds: f64,
    pub lambda: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug)]
pub struct ReSweep {
    pub rows: Vec<SweepRow>,
    /// Exponent of the power law `|lambda| ~ Re^a`.
    pub exponent: f64,
}

impl ReSweep {
    pub fn is_non_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].lambda >= w[0].lambda)
    }
}

/// Runs `estimate` for every Reynolds number, `threads` at a time.
pub fn mle_re_sweep<F>(reynolds: &[f64], threads: usize, estimate: F) -> Result<ReSweep>
where
    F: Fn(f64) -> Result<MleEstimate> + Sync,
{
    if reynolds.len() < 3 {
        return Err(Error::Validation("Reynolds sweep needs at least three values".into()));
    }
    let threads = threads.max(1);
    let mut results: Vec<Option<Result<MleEstimate>>> = (0..reynolds.len()).map(|_| None).collect();
    for (chunk_re, chunk_out) in reynolds.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|scope| {
            for (&re, slot) in chunk_re.iter().zip(chunk_out.iter_mut()) {
                let est = &estimate;
                scope.spawn(move || *slot = Some(est(re)));
            }
        });
    }
    let mut rows = Vec::with_capacity(reynolds.len());
    for (&re, r) in reynolds.iter().zip(results) {
        let m = r.expect("every sweep point ran")?;
        rows.push(SweepRow {
            reynolds: re,
            lambda: m.lambda,
            r_squared: m.r_squared,
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.reynolds.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.lambda.abs().ln()).collect();
    let (exponent, _, _) = linear_fit(&lx, &ly)?;
    Ok(ReSweep { rows, exponent })
}
