//! Small bounded Levenberg–Marquardt solver with forward-mode Jacobians.
//!
//! Residual functions are written once, generic over [`Real`]; the solver
//! evaluates them with [`Dual`] numbers to get exact Jacobians. An optional
//! Charbonnier penalty `√(r² + ε²) − ε` turns the least-squares fit into a
//! smooth L1 fit through iteratively reweighted normal equations.

use nalgebra::{DMatrix, DVector};

use crate::real::{Dual, Real};

/// Residual vector `r(x)` of an `N`-parameter problem.
pub trait Residuals<const N: usize> {
    fn eval<T: Real>(&self, x: &[T; N], out: &mut Vec<T>);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Loss {
    L2,
    /// Smooth L1 with the given transition scale.
    Charbonnier(f64),
}

impl Loss {
    pub fn rho(&self, r: f64) -> f64 {
        match *self {
            Loss::L2 => 0.5 * r * r,
            Loss::Charbonnier(e) => (r * r + e * e).sqrt() - e,
        }
    }

    /// `ρ'(r) / r`, the IRLS weight.
    fn weight(&self, r: f64) -> f64 {
        match *self {
            Loss::L2 => 1.0,
            Loss::Charbonnier(e) => 1.0 / (r * r + e * e).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig {
    pub max_iters: usize,
    pub loss: Loss,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when the step is below this (absolute, per parameter).
    pub xtol: f64,
    pub lambda0: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iters: 200, loss: Loss::L2, ftol: 1e-14, xtol: 1e-13, lambda0: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmReport<const N: usize> {
    pub x: [f64; N],
    pub cost: f64,
    pub iters: usize,
    pub converged: bool,
}

pub fn cost<const N: usize, P: Residuals<N>>(p: &P, x: &[f64; N], loss: Loss) -> f64 {
    let mut r = Vec::new();
    p.eval(x, &mut r);
    r.iter().map(|v| loss.rho(*v)).sum()
}

/// Residuals and Jacobian (`m × N`, row-major) at `x`.
pub fn jacobian<const N: usize, P: Residuals<N>>(p: &P, x: &[f64; N]) -> (Vec<f64>, Vec<[f64; N]>) {
    let xd: [Dual<N>; N] = std::array::from_fn(|i| Dual::var(x[i], i));
    let mut out = Vec::new();
    p.eval(&xd, &mut out);
    (out.iter().map(|d| d.re).collect(), out.iter().map(|d| d.du).collect())
}

/// Gradient of the total cost `Σ ρ(r_i)`.
pub fn gradient<const N: usize, P: Residuals<N>>(p: &P, x: &[f64; N], loss: Loss) -> [f64; N] {
    let (r, j) = jacobian(p, x);
    let mut g = [0.0; N];
    for (ri, ji) in r.iter().zip(&j) {
        let d = loss.weight(*ri) * ri;
        for k in 0..N {
            g[k] += d * ji[k];
        }
    }
    g
}

fn clamp<const N: usize>(x: &mut [f64; N], lo: &[f64; N], hi: &[f64; N]) {
    for k in 0..N {
        x[k] = x[k].clamp(lo[k], hi[k]);
    }
}

/// Minimize `Σ ρ(r_i(x))` subject to `lo ≤ x ≤ hi`, starting at `x0`.
/// Parameters whose bounds coincide are held fixed.
pub fn minimize<const N: usize, P: Residuals<N>>(
    p: &P,
    x0: [f64; N],
    lo: &[f64; N],
    hi: &[f64; N],
    cfg: &LmConfig,
) -> LmReport<N> {
    let mut x = x0;
    clamp(&mut x, lo, hi);
    let free: Vec<usize> = (0..N).filter(|k| lo[*k] < hi[*k]).collect();
    let mut f = cost(p, &x, cfg.loss);
    let mut lambda = cfg.lambda0;
    let mut converged = false;
    let mut iters = 0;
    let nf = free.len();
    if nf == 0 {
        return LmReport { x, cost: f, iters, converged: true };
    }
    while iters < cfg.max_iters {
        iters += 1;
        let (r, j) = jacobian(p, &x);
        let mut full = [[0.0; N]; N];
        let mut grad = [0.0; N];
        for (ri, ji) in r.iter().zip(&j) {
            let w = cfg.loss.weight(*ri);
            for u in 0..N {
                let wu = w * ji[u];
                grad[u] += wu * ri;
                for v in u..N {
                    full[u][v] += wu * ji[v];
                }
            }
        }
        // parameters pinned at a bound the gradient pushes against sit out
        // this step, otherwise clamping shrinks every step to a crawl
        let active: Vec<usize> = free
            .iter()
            .copied()
            .filter(|&k| !((x[k] <= lo[k] && grad[k] > 0.0) || (x[k] >= hi[k] && grad[k] < 0.0)))
            .collect();
        if active.is_empty() {
            converged = true;
            break;
        }
        let na = active.len();
        let a = DMatrix::<f64>::from_fn(na, na, |u, v| {
            let (ku, kv) = (active[u.min(v)], active[u.max(v)]);
            full[ku.min(kv)][ku.max(kv)]
        });
        let g = DVector::<f64>::from_fn(na, |u, _| grad[active[u]]);
        if g.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut m = a.clone();
            for u in 0..na {
                m[(u, u)] += lambda * a[(u, u)].max(1e-12 * (1.0 + a.amax()));
            }
            let Some(ch) = m.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = ch.solve(&(-&g));
            let mut xn = x;
            for (u, &k) in active.iter().enumerate() {
                xn[k] += step[u];
            }
            clamp(&mut xn, lo, hi);
            let fn_ = cost(p, &xn, cfg.loss);
            if fn_.is_finite() && fn_ <= f {
                let moved = free.iter().map(|k| (xn[*k] - x[*k]).abs()).fold(0.0, f64::max);
                let rel = (f - fn_) / f.max(f64::MIN_POSITIVE);
                x = xn;
                f = fn_;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if moved < cfg.xtol || rel < cfg.ftol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left at this damping: local minimum
            converged = true;
            break;
        }
        if converged || f == 0.0 {
            converged = true;
            break;
        }
    }
    LmReport { x, cost: f, iters, converged }
}
