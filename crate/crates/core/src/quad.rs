//! Adaptive Gauss-Kronrod (7/15) quadrature over a caller-supplied panel partition.

#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
pub(crate) struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs_value: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = kron.abs();
    let mut fv = [0.0; 14];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        kron += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kron;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let value = kron * half;
    let abs_value = abs_k * half.abs();
    let asc = asc * half.abs();
    let mut error = ((kron - gauss) * half).abs();
    if asc != 0.0 && error != 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    if abs_value > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * abs_value);
    }
    Panel { a, b, value, error, abs_value }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct QuadResult {
    pub value: f64,
    pub error: f64,
    /// Integral of |f|, the scale the relative tolerance is measured against.
    pub abs_value: f64,
    pub target: f64,
    pub converged: bool,
}

/// Integrates `f` over the partition given by sorted `breaks`, bisecting the
/// worst panel until the summed error estimate falls below
/// `rel_tol * integral(|f|)` or `max_panels` is reached.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], rel_tol: f64, max_panels: usize) -> QuadResult {
    let mut heap: BinaryHeap<Panel> =
        breaks.windows(2).filter(|p| p[1] > p[0]).map(|p| kronrod(&f, p[0], p[1])).collect();
    loop {
        // Re-sum in fixed order each round so results do not depend on heap internals.
        let mut panels: Vec<Panel> = heap.iter().copied().collect();
        panels.sort_by(|x, y| x.a.total_cmp(&y.a));
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let abs_value: f64 = panels.iter().map(|p| p.abs_value).sum();
        let target = rel_tol * abs_value;
        let converged = error <= target || abs_value == 0.0;
        if converged || heap.len() >= max_panels {
            return QuadResult { value, error, abs_value, target, converged };
        }
        // Refine a batch of the worst panels before re-summing.
        let batch = (heap.len() / 16).clamp(1, 256);
        for _ in 0..batch {
            let Some(worst) = heap.pop() else { break };
            let mid = 0.5 * (worst.a + worst.b);
            if !(mid > worst.a && mid < worst.b) {
                // cannot split further; keep as is with its error
                heap.push(Panel { error: 0.0, ..worst });
                continue;
            }
            heap.push(kronrod(&f, worst.a, mid));
            heap.push(kronrod(&f, mid, worst.b));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x.powi(5) - 3.0 * x * x, &[0.0, 2.0], 1e-12, 100);
        assert!((r.value - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
        assert!(r.converged);
    }

    #[test]
    fn oscillatory_with_many_panels() {
        let breaks: Vec<f64> = (0..=400).map(|i| i as f64 * 0.25).collect();
        let r = integrate(|x| (7.0 * x).cos(), &breaks, 1e-10, 10_000);
        assert!((r.value - (700.0f64).sin() / 7.0).abs() < 1e-11);
    }

    #[test]
    fn refines_near_singular_behaviour() {
        let r = integrate(|x: f64| x.sqrt(), &[0.0, 1.0], 1e-10, 10_000);
        assert!((r.value - 2.0 / 3.0).abs() < 1e-9);
    }
}
