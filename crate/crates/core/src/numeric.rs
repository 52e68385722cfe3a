//! Small scalar root-finding and extremization helpers shared by the
//! kinematics, dynamics and analysis modules.

/// Golden ratio conjugate, (sqrt(5) - 1) / 2.
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Bisection on a bracketing interval. `f(lo)` and `f(hi)` must have
/// opposite signs (or one of them be zero). Returns the midpoint of the final
/// bracket once it is narrower than `tol`.
pub fn bisect<F>(mut lo: f64, mut hi: f64, tol: f64, mut f: F) -> Option<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return None;
    }
    // 200 halvings exhaust any f64 bracket.
    for _ in 0..200 {
        if (hi - lo).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Golden-section search for the maximum of a unimodal function on `[a, b]`.
/// Returns `(argmax, max)`.
pub fn golden_max<F>(mut a: f64, mut b: f64, tol: f64, mut f: F) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    // Keep the best point actually evaluated.
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 > best.1 { cand } else { best })
}

/// Global maximum of a `period`-periodic function: every local maximum of an
/// `n`-point grid is refined by golden-section search to `tol`, and the best
/// refined value wins.
pub fn periodic_max<F>(period: f64, n: usize, tol: f64, mut f: F) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let step = period / n as f64;
    let values: Vec<f64> = (0..n).map(|i| f(i as f64 * step)).collect();
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..n {
        let prev = values[(i + n - 1) % n];
        let next = values[(i + 1) % n];
        if values[i] >= prev && values[i] >= next {
            let centre = i as f64 * step;
            let cand = golden_max(centre - step, centre + step, tol, &mut f);
            let cand = if cand.1 >= values[i] { cand } else { (centre, values[i]) };
            if cand.1 > best.1 {
                best = cand;
            }
        }
    }
    (best.0.rem_euclid(period), best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(0.0, 2.0, 1e-12, |x| x * x - 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn bisect_rejects_non_bracket() {
        assert!(bisect(2.0, 3.0, 1e-12, |x| x * x - 2.0).is_none());
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_max(-1.0, 2.0, 1e-10, |x| -(x - 0.3) * (x - 0.3) + 1.0);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn periodic_max_picks_global_peak() {
        let f = |q: f64| q.sin() + 0.5 * (2.0 * q).sin();
        let (x, fx) = periodic_max(std::f64::consts::TAU, 512, 1e-12, f);
        // brute force
        let brute = (0..1_000_000)
            .map(|i| f(i as f64 * std::f64::consts::TAU / 1e6))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(fx >= brute - 1e-12);
        assert!((f(x) - fx).abs() < 1e-15);
    }
}
