//! Limited-memory BFGS with a strong-Wolfe line search.

/// Outcome of [`Lbfgs::minimize`].
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The caller's acceptance test returned true.
    Accepted,
    GradientTolerance,
    /// No decrease could be made along the search direction.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Lbfgs {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `‖∇f‖∞` falls below this value.
    pub gradient_tolerance: f64,
    /// Stop after this many consecutive iterations with relative decrease
    /// below `1e-12`.
    pub stall_iterations: usize,
}

impl Default for Lbfgs {
    fn default() -> Self {
        Self { memory: 20, max_iterations: 1000, gradient_tolerance: 1e-12, stall_iterations: 10 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    gradient: Vec<f64>,
}

impl Lbfgs {
    /// Minimizes `f` starting at `x0`. `fg` returns the value and gradient;
    /// `accept` is consulted after every iterate and ends the run when it
    /// returns true.
    pub fn minimize<F, A>(&self, x0: Vec<f64>, mut fg: F, mut accept: A) -> Minimum
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
        A: FnMut(&[f64], f64) -> bool,
    {
        let mut x = x0;
        let (mut fx, mut gx) = fg(&x);
        let mut history = vec![fx];
        let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
        let mut stalled = 0;

        let finish =
            |x, value, gradient, iterations, history, stop| Minimum { x, value, gradient, iterations, history, stop };

        if accept(&x, fx) {
            return finish(x, fx, gx, 0, history, StopReason::Accepted);
        }
        for iter in 1..=self.max_iterations {
            if inf_norm(&gx) < self.gradient_tolerance {
                return finish(x, fx, gx, iter - 1, history, StopReason::GradientTolerance);
            }
            let mut d = self.direction(&gx, &pairs);
            let mut slope = dot(&d, &gx);
            if slope >= 0.0 {
                pairs.clear();
                d = gx.iter().map(|g| -g).collect();
                slope = dot(&d, &gx);
            }
            let alpha0 = if pairs.is_empty() { (1.0 / inf_norm(&gx)).min(1.0) } else { 1.0 };
            let Some(best) = self.line_search(&mut fg, &x, fx, slope, &d, alpha0) else {
                if pairs.is_empty() {
                    return finish(x, fx, gx, iter - 1, history, StopReason::Stalled);
                }
                pairs.clear();
                continue;
            };
            let x_new = axpy(&x, best.alpha, &d);
            let s: Vec<f64> = d.iter().map(|v| v * best.alpha).collect();
            let y: Vec<f64> = best.gradient.iter().zip(&gx).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                if pairs.len() == self.memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
            let decrease = (fx - best.value) / fx.abs().max(1e-300);
            stalled = if decrease < 1e-12 { stalled + 1 } else { 0 };
            x = x_new;
            fx = best.value;
            gx = best.gradient;
            history.push(fx);
            if accept(&x, fx) {
                return finish(x, fx, gx, iter, history, StopReason::Accepted);
            }
            if stalled >= self.stall_iterations {
                return finish(x, fx, gx, iter, history, StopReason::Stalled);
            }
        }
        let iterations = self.max_iterations;
        finish(x, fx, gx, iterations, history, StopReason::MaxIterations)
    }

    /// Two-loop recursion for `−H∇f`.
    fn direction(&self, g: &[f64], pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter().map(|v| -v).collect()
    }

    fn line_search<F>(&self, fg: &mut F, x: &[f64], f0: f64, slope0: f64, d: &[f64], alpha0: f64) -> Option<Point>
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        const C1: f64 = 1e-4;
        const C2: f64 = 0.9;
        const MAX_EVALS: usize = 30;
        let mut eval = |alpha: f64| {
            let (value, gradient) = fg(&axpy(x, alpha, d));
            let slope = dot(&gradient, d);
            Point { alpha, value, slope, gradient }
        };
        let origin = Point { alpha: 0.0, value: f0, slope: slope0, gradient: Vec::new() };
        let mut prev = origin;
        let mut alpha = alpha0;
        let mut best: Option<Point> = None;
        let mut evals = 0;
        let (mut lo, mut hi) = loop {
            if evals >= MAX_EVALS {
                return best;
            }
            let p = eval(alpha);
            evals += 1;
            if p.value.is_finite() && p.value < f0 && best.as_ref().is_none_or(|b| p.value < b.value) {
                best = Some(Point { gradient: p.gradient.clone(), ..p });
            }
            if !p.value.is_finite() || p.value > f0 + C1 * alpha * slope0 || (evals > 1 && p.value >= prev.value) {
                break (prev, p);
            }
            if p.slope.abs() <= -C2 * slope0 {
                return Some(p);
            }
            if p.slope >= 0.0 {
                break (p, prev);
            }
            alpha *= 2.5;
            prev = p;
        };
        while evals < MAX_EVALS {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            if (b - a) < 1e-14 * b.max(1e-300) {
                break;
            }
            let trial = cubic_minimizer(&lo, &hi)
                .filter(|t| *t > a + 0.1 * (b - a) && *t < b - 0.1 * (b - a))
                .unwrap_or(0.5 * (a + b));
            let p = eval(trial);
            evals += 1;
            if p.value.is_finite() && p.value < f0 && best.as_ref().is_none_or(|bst| p.value < bst.value) {
                best = Some(Point { gradient: p.gradient.clone(), ..p });
            }
            if !p.value.is_finite() || p.value > f0 + C1 * trial * slope0 || p.value >= lo.value {
                hi = p;
            } else {
                if p.slope.abs() <= -C2 * slope0 {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        best
    }
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_minimizer(p: &Point, q: &Point) -> Option<f64> {
    if ![p.value, q.value, p.slope, q.slope].iter().all(|v| v.is_finite()) {
        return None;
    }
    let h = q.alpha - p.alpha;
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = disc.sqrt().copysign(h);
    let t = q.alpha - h * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let mut f = 0.0;
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * x[i] * a - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        (f, g)
    }

    #[test]
    fn minimizes_rosenbrock() {
        let opt = Lbfgs { gradient_tolerance: 1e-9, ..Default::default() };
        let m = opt.minimize(vec![-1.2, 1.0, -1.2, 1.0, 0.5], rosenbrock, |_, _| false);
        assert!(m.x.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?} {:?}", m.x, m.stop);
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn accept_callback_stops_early() {
        let opt = Lbfgs::default();
        let m = opt.minimize(vec![3.0, -2.0], |x| (dot(x, x), x.iter().map(|v| 2.0 * v).collect()), |_, f| f < 1e-3);
        assert_eq!(m.stop, StopReason::Accepted);
        assert!(m.value < 1e-3);
    }

    #[test]
    fn quadratic_converges_in_few_iterations() {
        let scales = [1.0, 10.0, 100.0, 0.1];
        let fg = |x: &[f64]| {
            let f = x.iter().zip(&scales).map(|(v, s)| s * v * v).sum();
            let g = x.iter().zip(&scales).map(|(v, s)| 2.0 * s * v).collect();
            (f, g)
        };
        let m = Lbfgs { gradient_tolerance: 1e-10, ..Default::default() }.minimize(vec![1.0; 4], fg, |_, _| false);
        assert!(m.value < 1e-18);
        assert!(m.iterations < 30);
    }
}
