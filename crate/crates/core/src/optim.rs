//! Derivative-free minimisation: Nelder–Mead restarted from its best vertex and
//! alternated with a coordinate pattern search until neither improves.

/// Settings for [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Stop once a full round improves the objective by less than this.
    pub tolerance: f64,
    pub max_evaluations: usize,
    /// Initial simplex edge relative to `max(|x_i|, 0.1)`.
    pub initial_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            tolerance: 1e-8,
            max_evaluations: 200_000,
            initial_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimise `f` from `x0`. Non-finite values are treated as `+inf` (infeasible).
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: SearchOptions) -> Minimum {
    let mut obj = Counted { f, evaluations: 0 };
    let mut x = x0.to_vec();
    let mut value = obj.eval(&x);
    let mut step = opts.initial_step;
    loop {
        let before = value;
        let (nx, nv) = nelder_mead(&mut obj, &x, value, step, opts);
        x = nx;
        value = nv;
        let (px, pv) = pattern_search(&mut obj, &x, value, step, opts);
        x = px;
        value = pv;
        if obj.evaluations >= opts.max_evaluations || !(before - value > opts.tolerance) {
            break;
        }
        step = (step * 0.5).max(1e-4);
    }
    Minimum {
        x,
        value,
        evaluations: obj.evaluations,
    }
}

fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    x0: &[f64],
    f0: f64,
    step: f64,
    opts: SearchOptions,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let nf = n as f64;
    // dimension-adaptive coefficients
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step * x0[i].abs().max(0.1);
        let fv = obj.eval(&v);
        simplex.push((v, fv));
    }
    let mut stall = 0;
    let budget = opts.max_evaluations;
    while obj.evaluations < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= opts.tolerance * 0.1 && worst.is_finite() {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = obj.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = obj.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(rho);
                let fc = obj.eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = obj.eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = x_best
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    let fv = obj.eval(&v);
                    *vertex = (v, fv);
                }
            }
        }
        let new_best = simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        if best - new_best < opts.tolerance * 0.1 {
            stall += 1;
            if stall > 50 * n {
                break;
            }
        } else {
            stall = 0;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

fn pattern_search<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    x0: &[f64],
    f0: f64,
    step: f64,
    opts: SearchOptions,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut h: Vec<f64> = x.iter().map(|v| step * v.abs().max(0.1)).collect();
    let min_h = 1e-9;
    while obj.evaluations < opts.max_evaluations && h.iter().any(|v| *v > min_h) {
        let mut improved = false;
        for i in 0..x.len() {
            if h[i] <= min_h {
                continue;
            }
            for dir in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[i] += dir * h[i];
                let ft = obj.eval(&trial);
                if ft < fx {
                    // keep moving while it pays
                    let mut cur = trial;
                    let mut fcur = ft;
                    loop {
                        let mut next = cur.clone();
                        next[i] += dir * h[i] * 2.0;
                        let fnext = obj.eval(&next);
                        if fnext < fcur {
                            cur = next;
                            fcur = fnext;
                            h[i] *= 2.0;
                        } else {
                            break;
                        }
                    }
                    x = cur;
                    fx = fcur;
                    improved = true;
                    break;
                }
            }
            if !improved {
                h[i] *= 0.5;
            }
        }
        if !improved && h.iter().all(|v| *v <= min_h) {
            break;
        }
    }
    (x, fx)
}

/// Central finite-difference Hessian of `f` at `x` with steps `h_i = rel·(1 + |x_i|)`.
///
/// Near the edge of the finite region a stencil can leave it; the steps of the
/// offending coordinates are then shrunk tenfold and the entries recomputed, up to
/// eight times. Entries that stay non-finite are returned as such.
pub fn hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], rel: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut h: Vec<f64> = x.iter().map(|v| rel * (1.0 + v.abs())).collect();
    let f0 = f(x);
    let mut out = vec![vec![f64::NAN; n]; n];
    let mut shifted = |pairs: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in pairs {
            y[i] += s;
        }
        f(&y)
    };
    let mut todo = vec![vec![true; n]; n];
    for _ in 0..9 {
        for i in 0..n {
            if todo[i][i] {
                let fp = shifted(&[(i, h[i])]);
                let fm = shifted(&[(i, -h[i])]);
                out[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            }
            for j in 0..i {
                if !todo[i][j] {
                    continue;
                }
                let fpp = shifted(&[(i, h[i]), (j, h[j])]);
                let fpm = shifted(&[(i, h[i]), (j, -h[j])]);
                let fmp = shifted(&[(i, -h[i]), (j, h[j])]);
                let fmm = shifted(&[(i, -h[i]), (j, -h[j])]);
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        let mut shrink: Vec<bool> = (0..n).map(|i| !out[i][i].is_finite()).collect();
        for i in 0..n {
            for j in 0..i {
                if !out[i][j].is_finite() && !shrink[i] && !shrink[j] {
                    shrink[i] = true;
                    shrink[j] = true;
                }
            }
        }
        if !shrink.iter().any(|s| *s) {
            break;
        }
        // a shrunk coordinate invalidates every entry that uses its step
        for i in 0..n {
            for j in 0..=i {
                todo[i][j] = !out[i][j].is_finite() || shrink[i] || shrink[j];
            }
        }
        for (hi, s) in h.iter_mut().zip(&shrink) {
            if *s {
                *hi *= 0.1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let target = [1.0, -2.0, 0.5, 3.0];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2))
                .sum::<f64>()
        };
        let m = minimize(f, &[0.0; 4], SearchOptions::default());
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{:?}", m.x);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], SearchOptions::default());
        assert!(
            (m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                f64::INFINITY
            } else {
                (x[0] - 0.01).powi(2) + x[1].powi(2)
            }
        };
        let m = minimize(f, &[1.0, 1.0], SearchOptions::default());
        assert!(m.x[0] > 0.0 && (m.x[0] - 0.01).abs() < 1e-4);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1];
        let h = hessian(f, &[0.3, -0.7], 1e-4);
        assert!((h[0][0] - 6.0).abs() < 1e-5);
        assert!((h[0][1] - 2.0).abs() < 1e-5);
        assert!((h[1][1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn hessian_shrinks_steps_at_a_barrier() {
        // finite only for x₀ > 0; the default step at x₀ = 1e-5 crosses the barrier
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                f64::INFINITY
            } else {
                -x[0].ln() + x[0] * x[1] + x[1] * x[1]
            }
        };
        let x0 = 1e-5;
        let h = hessian(f, &[x0, 0.5], 1e-4);
        assert!(
            (h[0][0] * x0 * x0 - 1.0).abs() < 1e-2,
            "{}",
            h[0][0] * x0 * x0
        );
        assert!((h[0][1] - 1.0).abs() < 1e-4);
        assert!((h[1][1] - 2.0).abs() < 1e-4);
    }
}
