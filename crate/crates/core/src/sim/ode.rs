//! Explicit Runge–Kutta integrators: Dormand–Prince 4(5) with PI step-size
//! control and dense output, and classical fixed-step RK4 with cubic Hermite
//! interpolation between steps.

use crate::error::{Error, Result};

/// A first-order system `ẏ = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Upper bound on `‖y‖∞`; exceeding it aborts with [`Error::Diverged`].
    pub divergence_bound: f64,
}

/// Counters shared across consecutive integration segments.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

fn check_state(t: f64, y: &[f64], bound: f64) -> Result<()> {
    let mut norm = 0.0f64;
    for (index, v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { t, index });
        }
        norm = norm.max(v.abs());
    }
    if norm > bound {
        return Err(Error::Diverged { t, norm });
    }
    Ok(())
}

/// Sample instants in `(t0, t1]` are reported through `on_sample`, in order.
fn pending<'a>(samples: &'a [f64], t0: f64, t1: f64) -> impl Iterator<Item = f64> + 'a {
    samples.iter().copied().filter(move |&s| s > t0 && s <= t1)
}

struct Dopri<'s, S: OdeSystem> {
    sys: &'s S,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
}

impl<'s, S: OdeSystem> Dopri<'s, S> {
    fn new(sys: &'s S) -> Self {
        let n = sys.dim();
        Self {
            sys,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
        }
    }

    /// Takes a trial step from `(t, y)` with `k[0] = f(t, y)` already filled.
    fn trial(&mut self, t: f64, y: &[f64], h: f64, stats: &mut StepStats) -> Result<()> {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        self.sys.rhs(t + C2 * h, tmp, k2)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        self.sys.rhs(t + C3 * h, tmp, k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        self.sys.rhs(t + C4 * h, tmp, k4)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        self.sys.rhs(t + C5 * h, tmp, k5)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        self.sys.rhs(t + h, tmp, k6)?;
        for i in 0..n {
            self.y_new[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        self.sys.rhs(t + h, &self.y_new, k7)?;
        for i in 0..n {
            self.err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        stats.rhs_evals += 6;
        Ok(())
    }

    fn error_norm(&self, y: &[f64], opts: &AdaptiveOptions) -> f64 {
        let n = y.len().max(1);
        let sum: f64 = (0..y.len())
            .map(|i| {
                let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(self.y_new[i].abs());
                (self.err[i] / sc).powi(2)
            })
            .sum();
        (sum / n as f64).sqrt()
    }

    /// Dense output at `t + theta h` after an accepted step from `y`.
    fn interpolate(&self, y: &[f64], h: f64, theta: f64, out: &mut [f64]) {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let theta1 = 1.0 - theta;
        for i in 0..y.len() {
            let ydiff = self.y_new[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            let r4 = ydiff - h * k7[i] - bspl;
            let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            out[i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
        }
    }
}

fn initial_step<S: OdeSystem>(
    sys: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
    opts: &AdaptiveOptions,
    stats: &mut StepStats,
) -> Result<f64> {
    let n = y.len().max(1) as f64;
    let sc = |i: usize| opts.abs_tol + opts.rel_tol * y[i].abs();
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    sys.rhs(t + h0, &y1, &mut f1)?;
    stats.rhs_evals += 1;
    let d2 = (f1
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b) / sc(i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Integrates from `t0` to `t1` with Dormand–Prince 4(5).
///
/// `y` is advanced in place to `t1`. Every sample instant in `(t0, t1]` is
/// reported through `on_sample` using the continuous extension. `h_hint`
/// carries the step-size suggestion across consecutive calls.
pub fn integrate_dopri<S: OdeSystem>(
    sys: &S,
    t0: f64,
    t1: f64,
    y: &mut [f64],
    samples: &[f64],
    h_hint: &mut Option<f64>,
    opts: &AdaptiveOptions,
    stats: &mut StepStats,
    mut on_sample: impl FnMut(f64, &[f64]) -> Result<()>,
) -> Result<()> {
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(());
    }
    let mut st = Dopri::new(sys);
    let mut t = t0;
    sys.rhs(t, y, &mut st.k[0])?;
    stats.rhs_evals += 1;
    let mut h = match *h_hint {
        Some(h) => h.min(span),
        None => initial_step(sys, t, y, &st.k[0].clone(), span, opts, stats)?,
    };
    let mut fac_old = 1e-4f64;
    let mut samples = pending(samples, t0, t1).peekable();
    let mut dense = vec![0.0; y.len()];
    let mut steps = 0usize;
    let expo = 0.2 - PI_BETA * 0.75;

    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::TooManySteps {
                t,
                max_steps: opts.max_steps,
            });
        }
        steps += 1;
        let last = t + h >= t1 || t1 - (t + h) <= 1e-12 * span;
        if last {
            h = t1 - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, step: h });
        }
        st.trial(t, y, h, stats)?;
        let err = st.error_norm(y, opts);
        let fac11 = err.powf(expo);
        if err <= 1.0 {
            let fac = (fac11 / fac_old.powf(PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let h_new = h / fac;
            fac_old = err.max(1e-4);
            let t_new = if last { t1 } else { t + h };
            while let Some(&ts) = samples.peek() {
                if ts > t_new {
                    break;
                }
                if ts == t_new {
                    on_sample(ts, &st.y_new)?;
                } else {
                    st.interpolate(y, h, (ts - t) / h, &mut dense);
                    on_sample(ts, &dense)?;
                }
                samples.next();
            }
            y.copy_from_slice(&st.y_new);
            check_state(t_new, y, opts.divergence_bound)?;
            let [k1, .., k7] = &mut st.k;
            k1.copy_from_slice(k7);
            t = t_new;
            stats.accepted += 1;
            if !last {
                *h_hint = Some(h_new);
            }
            h = h_new;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }
    Ok(())
}

/// Classical RK4 from `t0` to `t1` with nominal step `step`; the final step
/// is shortened to land on `t1`. Samples strictly inside a step use cubic
/// Hermite interpolation.
pub fn integrate_rk4<S: OdeSystem>(
    sys: &S,
    t0: f64,
    t1: f64,
    y: &mut [f64],
    step: f64,
    samples: &[f64],
    divergence_bound: f64,
    stats: &mut StepStats,
    mut on_sample: impl FnMut(f64, &[f64]) -> Result<()>,
) -> Result<()> {
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(());
    }
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut f_new = vec![0.0; n];
    let mut dense = vec![0.0; n];
    let mut samples = pending(samples, t0, t1).peekable();

    let n_steps = ((span / step) - 1e-9).ceil().max(1.0) as usize;
    sys.rhs(t0, y, &mut k1)?;
    stats.rhs_evals += 1;
    for s in 0..n_steps {
        let t = t0 + s as f64 * step;
        let t_new = if s + 1 == n_steps { t1 } else { t0 + (s + 1) as f64 * step };
        let h = t_new - t;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.rhs(t + h, &tmp, &mut k4)?;
        for i in 0..n {
            y_new[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        sys.rhs(t_new, &y_new, &mut f_new)?;
        stats.rhs_evals += 4;
        while let Some(&ts) = samples.peek() {
            if ts > t_new {
                break;
            }
            if ts == t_new {
                on_sample(ts, &y_new)?;
            } else {
                let th = (ts - t) / h;
                let h00 = (1.0 + 2.0 * th) * (1.0 - th).powi(2);
                let h10 = th * (1.0 - th).powi(2);
                let h01 = th * th * (3.0 - 2.0 * th);
                let h11 = th * th * (th - 1.0);
                for i in 0..n {
                    dense[i] = h00 * y[i] + h10 * h * k1[i] + h01 * y_new[i] + h11 * h * f_new[i];
                }
                on_sample(ts, &dense)?;
            }
            samples.next();
        }
        y.copy_from_slice(&y_new);
        check_state(t_new, y, divergence_bound)?;
        k1.copy_from_slice(&f_new);
        stats.accepted += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -y[0];
            Ok(())
        }
    }

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    struct Blowup;
    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    fn opts() -> AdaptiveOptions {
        AdaptiveOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_steps: 1_000_000,
            divergence_bound: 1e12,
        }
    }

    #[test]
    fn dopri_dense_output_tracks_oscillator() {
        let mut y = [1.0, 0.0];
        let samples: Vec<f64> = (1..=40).map(|k| k as f64 * 0.25).collect();
        let mut seen = Vec::new();
        let mut stats = StepStats::default();
        integrate_dopri(&Oscillator, 0.0, 10.0, &mut y, &samples, &mut None, &opts(), &mut stats, |t, v| {
            seen.push((t, v[0]));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 40);
        for (t, v) in seen {
            assert!((v - t.cos()).abs() < 1e-8, "t = {t}: {v} vs {}", t.cos());
        }
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |h: f64| {
            let mut y = [1.0];
            let mut stats = StepStats::default();
            integrate_rk4(&Decay, 0.0, 2.0, &mut y, h, &[], 1e12, &mut stats, |_, _| Ok(())).unwrap();
            (y[0] - (-2.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_lands_on_endpoint_with_partial_step() {
        let mut y = [1.0];
        let mut last = None;
        let mut stats = StepStats::default();
        integrate_rk4(&Decay, 0.0, 1.03, &mut y, 0.01, &[0.5, 1.03], 1e12, &mut stats, |t, v| {
            last = Some((t, v[0]));
            Ok(())
        })
        .unwrap();
        let (t, v) = last.unwrap();
        assert_eq!(t, 1.03);
        assert_eq!(v, y[0]);
        assert!((y[0] - (-1.03f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn blowup_is_reported() {
        let mut y = [1.0];
        let mut stats = StepStats::default();
        let res = integrate_dopri(&Blowup, 0.0, 2.0, &mut y, &[], &mut None, &opts(), &mut stats, |_, _| Ok(()));
        assert!(
            matches!(res, Err(Error::Diverged { .. }) | Err(Error::StepUnderflow { .. })),
            "{res:?}"
        );
    }
}
