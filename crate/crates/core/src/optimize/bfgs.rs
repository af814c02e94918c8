//! Quasi-Newton minimization with finite-difference gradients.

use nalgebra::{DMatrix, DVector};

/// Objective function for [`outer_minimize`]. Non-finite values reject a step.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;

    /// Called each time the optimizer moves to a new iterate, after the last
    /// `value` call at that point.
    fn accept(&mut self, _x: &[f64]) {}
}

impl<F: FnMut(&[f64]) -> f64> Objective for F {
    fn value(&mut self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterControl {
    /// Sup-norm gradient tolerance.
    pub tol: f64,
    /// Relative objective change treated as convergence.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Largest sup-norm change of any single step.
    pub max_step: f64,
}

impl Default for OuterControl {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            rel_tol: 1e-10,
            max_iter: 500,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub message: String,
}

/// Finite-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    (1e-7 * x.abs()).max(1e-6)
}

/// Central-difference gradient with steps scaled by [`fd_step`] times `scale`.
pub fn fd_gradient<O: Objective + ?Sized>(obj: &mut O, x: &[f64], scale: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = fd_step(x[k]) * scale;
            probe[k] = x[k] + h;
            let fp = obj.value(&probe);
            probe[k] = x[k] - h;
            let fm = obj.value(&probe);
            probe[k] = x[k];
            let g = (fp - fm) / (2.0 * h);
            if g.is_finite() {
                g
            } else {
                // One-sided fallback near the edge of the finite region.
                let f0 = obj.value(x);
                if fp.is_finite() {
                    (fp - f0) / h
                } else if fm.is_finite() {
                    (f0 - fm) / h
                } else {
                    0.0
                }
            }
        })
        .collect()
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backtracking line search with cubic interpolation. Returns the accepted
/// step length and objective value, or `None` when no decrease was found.
fn line_search<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    f0: f64,
    dir: &[f64],
    slope: f64,
    t0: f64,
    evals: &mut usize,
) -> Option<(f64, f64)> {
    const C1: f64 = 1e-4;
    const MAX_TRIES: usize = 60;
    let trial = |t: f64| -> Vec<f64> { x.iter().zip(dir).map(|(a, d)| a + t * d).collect() };
    let mut t = t0;
    let mut prev: Option<(f64, f64)> = None;
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..MAX_TRIES {
        let f = obj.value(&trial(t));
        *evals += 1;
        if f.is_finite() && f < f0 && best.is_none_or(|(_, fb)| f < fb) {
            best = Some((t, f));
        }
        if f.is_finite() && f <= f0 + C1 * t * slope {
            return Some((t, f));
        }
        let next = if !f.is_finite() {
            0.1 * t
        } else {
            match prev {
                None => {
                    // Minimizer of the quadratic through f0, slope and f(t).
                    -slope * t * t / (2.0 * (f - f0 - slope * t))
                }
                Some((tp, fp)) if fp.is_finite() => {
                    let r1 = f - f0 - slope * t;
                    let r2 = fp - f0 - slope * tp;
                    let a = (r1 / (t * t) - r2 / (tp * tp)) / (t - tp);
                    let b = (-tp * r1 / (t * t) + t * r2 / (tp * tp)) / (t - tp);
                    if a == 0.0 {
                        -slope / (2.0 * b)
                    } else {
                        let disc = b * b - 3.0 * a * slope;
                        if disc < 0.0 {
                            0.5 * t
                        } else if b <= 0.0 {
                            (-b + disc.sqrt()) / (3.0 * a)
                        } else {
                            -slope / (b + disc.sqrt())
                        }
                    }
                }
                Some(_) => 0.5 * t,
            }
        };
        prev = Some((t, f));
        t = if next.is_finite() { next.clamp(0.1 * t, 0.5 * t) } else { 0.5 * t };
        if t < 1e-14 {
            break;
        }
    }
    // Accept a plain decrease if the Armijo condition was never met.
    best.map(|(t, f)| {
        obj.value(&trial(t));
        *evals += 1;
        (t, f)
    })
}

/// Consecutive iterations with a relative change below `rel_tol` needed to
/// stop on that criterion.
const STALL_ITERS: usize = 3;

/// BFGS on an objective with finite-difference gradients.
///
/// Converges when the gradient sup-norm drops below `tol` or when the
/// relative change of the objective stays below `rel_tol` for
/// [`STALL_ITERS`] iterations. Only steps that decrease the objective are
/// accepted.
pub fn outer_minimize<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], control: &OuterControl) -> OuterResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut evals = 1;
    let mut f = obj.value(&x);
    let done = |x: Vec<f64>, f: f64, g: Vec<f64>, it: usize, evals: usize, converged: bool, msg: &str| OuterResult {
        gradient_norm: sup(&g),
        x,
        value: f,
        gradient: g,
        iterations: it,
        evaluations: evals,
        converged,
        message: msg.to_string(),
    };
    if !f.is_finite() {
        return done(x, f, vec![f64::NAN; n], 0, evals, false, "objective not finite at start");
    }
    obj.accept(&x);
    if n == 0 {
        return done(x, f, Vec::new(), 0, evals, true, "no parameters");
    }
    let mut g = fd_gradient(obj, &x, 1.0);
    evals += 2 * n;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut stalled = 0;
    for it in 0..control.max_iter {
        if sup(&g) <= control.tol {
            return done(x, f, g, it, evals, true, "gradient below tolerance");
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&hinv * &gv)).iter().copied().collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let t0 = (control.max_step / sup(&dir)).min(1.0);
        let step = match line_search(obj, &x, f, &dir, slope, t0, &mut evals) {
            Some(s) => s,
            None if !fresh => {
                // Retry along the gradient with a reset curvature estimate.
                hinv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            None => {
                // No decrease exists along steepest descent at this resolution.
                return done(x, f, g, it, evals, true, "no further decrease possible");
            }
        };
        let (t, fnew) = step;
        let s: Vec<f64> = dir.iter().map(|d| t * d).collect();
        let xnew: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        obj.accept(&xnew);
        let gnew = fd_gradient(obj, &xnew, 1.0);
        evals += 2 * n;
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let rel_change = (f - fnew).abs() / f.abs().max(1.0);
        x = xnew;
        f = fnew;
        g = gnew;
        stalled = if rel_change <= control.rel_tol { stalled + 1 } else { 0 };
        if stalled >= STALL_ITERS {
            return done(x, f, g, it + 1, evals, true, "relative objective change below tolerance");
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                // Scale the initial inverse Hessian to the observed curvature.
                hinv *= sy / dot(&y, &y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let sv = DVector::from_vec(s);
            let yv = DVector::from_vec(y);
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            hinv += (&sv * sv.transpose()) * (rho * rho * yhy + rho) - (&sv * hy.transpose() + &hy * sv.transpose()) * rho;
        }
    }
    done(x, f, g, control.max_iter, evals, false, "iteration limit reached")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges_to_minimum() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let b = [1.0, -2.0, 0.5];
        let mut f = |x: &[f64]| {
            let mut v = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    v += 0.5 * x[i] * a[i][j] * x[j];
                }
                v -= b[i] * x[i];
            }
            v
        };
        let control = OuterControl {
            tol: 1e-9,
            rel_tol: 0.0,
            ..OuterControl::default()
        };
        let r = outer_minimize(&mut f, &[0.0; 3], &control);
        assert!(r.converged);
        assert!(r.iterations <= 6, "{} iterations", r.iterations);
        let am = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        let sol = am.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        for i in 0..3 {
            assert!((r.x[i] - sol[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let control = OuterControl {
            rel_tol: 0.0,
            ..OuterControl::default()
        };
        let r = outer_minimize(&mut f, &[-1.2, 1.0], &control);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn never_accepts_an_increase() {
        let mut trace = Vec::new();
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(4) + (x[1] + 1.0).powi(2) + x[0] * x[1];
        struct Tracked<'a, F>(&'a mut F, &'a mut Vec<f64>);
        impl<F: FnMut(&[f64]) -> f64> Objective for Tracked<'_, F> {
            fn value(&mut self, x: &[f64]) -> f64 {
                (self.0)(x)
            }
            fn accept(&mut self, x: &[f64]) {
                let v = (self.0)(x);
                self.1.push(v);
            }
        }
        let r = outer_minimize(&mut Tracked(&mut f, &mut trace), &[0.0, 0.0], &OuterControl::default());
        assert!(r.converged);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infinite_regions_are_avoided() {
        let mut f = |x: &[f64]| if x[0] > 1.0 { f64::INFINITY } else { (x[0] - 0.9).powi(2) };
        let r = outer_minimize(&mut f, &[-5.0], &OuterControl::default());
        assert!(r.converged);
        assert!((r.x[0] - 0.9).abs() < 1e-5);
    }
}
