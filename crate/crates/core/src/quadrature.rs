//! One-dimensional quadrature rules.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// ∫_a^b f.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + r * x);
        }
        s * r
    }

    /// Composite rule over the panels delimited by sorted `breaks`.
    pub fn integrate_panels(&self, breaks: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        breaks
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| self.integrate(w[0], w[1], &mut f))
            .sum()
    }

    /// Mapped nodes and weights for [a, b].
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + r * x, w * r))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared 32-point rule.
pub fn gl32() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(32))
}

/// Shared 16-point rule.
pub fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

/// Sort, deduplicate and clip a list of breakpoints to [a, b].
pub fn breakpoints(a: f64, b: f64, interior: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v = vec![a, b];
    v.extend(
        interior
            .into_iter()
            .filter(|x| x.is_finite() && *x > a && *x < b),
    );
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Breakpoints on [a, b] graded geometrically toward `p` with ratio `q`,
/// stopping once panels are shorter than `min_width`.
pub fn graded_toward(a: f64, b: f64, p: f64, q: f64, min_width: f64) -> Vec<f64> {
    let mut pts = vec![a, b];
    if p > a && p < b {
        pts.push(p);
    }
    for (from, dir) in [(a, 1.0), (b, -1.0)] {
        let mut d = (p - from).abs();
        if (p - from) * dir <= 0.0 {
            continue;
        }
        loop {
            d *= q;
            if d < min_width {
                break;
            }
            pts.push(p - dir * d);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Tanh-sinh (double exponential) quadrature of f on [a, b]. The integrand
/// is never evaluated at the endpoints, and receives both the abscissa and
/// its distances to a and b so endpoint singularities can be evaluated
/// without cancellation.
pub fn tanh_sinh(a: f64, b: f64, tol: f64, mut f: impl FnMut(f64, f64, f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mut eval = |t: f64| -> f64 {
        let s = 0.5 * PI * t.sinh();
        let ch = s.cosh();
        let w = 0.5 * PI * t.cosh() / (ch * ch);
        if w == 0.0 {
            return 0.0;
        }
        let (x, da, db) = if t >= 0.0 {
            let db = 2.0 * half / ((2.0 * s).exp() + 1.0);
            (b - db, b - a - db, db)
        } else {
            let da = 2.0 * half / ((-2.0 * s).exp() + 1.0);
            (a + da, da, b - a - da)
        };
        if da <= 0.0 || db <= 0.0 {
            return 0.0;
        }
        w * f(x, da, db)
    };
    let tmax = 4.5;
    let mut step = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while (k as f64) * step <= tmax {
        let t = k as f64 * step;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut prev = sum * step;
    for _ in 0..10 {
        step *= 0.5;
        let mut k = 1;
        while (k as f64) * step <= tmax {
            let t = k as f64 * step;
            sum += eval(t) + eval(-t);
            k += 2;
        }
        let cur = sum * step;
        if (cur - prev).abs() <= tol * cur.abs().max(1e-300) {
            return cur * half;
        }
        prev = cur;
    }
    prev * half
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_exactness() {
        let r = GaussLegendre::new(5);
        // exact through degree 9
        assert_relative_eq!(
            r.integrate(0.0, 2.0, |x| x.powi(9)),
            102.4,
            max_relative = 1e-13
        );
        let s: f64 = r.weights.iter().sum();
        assert_relative_eq!(s, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gl32_smooth() {
        let v = gl32().integrate(0.0, PI, f64::sin);
        assert_relative_eq!(v, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn tanh_sinh_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} (1-x)^{-1/2} dx = π
        let v = tanh_sinh(0.0, 1.0, 1e-12, |_, da, db| 1.0 / (da * db).sqrt());
        assert_relative_eq!(v, PI, max_relative = 1e-9);
    }

    #[test]
    fn graded_panels() {
        let b = graded_toward(0.0, 1.0, 0.0, 0.5, 1e-3);
        assert_eq!(b[0], 0.0);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert!(b[1] < 2e-3);
    }
}
