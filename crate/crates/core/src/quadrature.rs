//! Adaptive Gauss–Legendre quadrature.
//!
//! A fixed `n`-point rule is applied on each panel and compared against the
//! same rule on the two halves; panels are bisected until the two estimates
//! agree to within the panel's share of the tolerance. Callers pass known
//! kinks of the integrand as breakpoints so that every panel starts smooth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule size and stopping criterion for the adaptive integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub nodes: usize,
    /// Absolute tolerance on the whole integral.
    pub tolerance: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes: 64,
            tolerance: 1e-6,
            max_depth: 30,
        }
    }
}

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Newton iteration on P_n from the Tricomi initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
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
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Applies the rule on `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive integrator bound to one rule and tolerance.
#[derive(Debug, Clone)]
pub struct Integrator {
    rule: GaussLegendre,
    spec: QuadratureSpec,
}

impl Integrator {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        if spec.nodes == 0 || !(spec.tolerance > 0.0) {
            return Err(Error::config(
                "quadrature needs nodes >= 1 and a positive tolerance",
            ));
        }
        Ok(Integrator {
            rule: GaussLegendre::new(spec.nodes),
            spec,
        })
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// Same rule with a different absolute tolerance.
    pub fn with_tolerance(&self, tolerance: f64) -> Self {
        Integrator {
            rule: self.rule.clone(),
            spec: QuadratureSpec {
                tolerance,
                ..self.spec
            },
        }
    }

    /// Integrates over `[a, b]`, splitting at any of `breaks` strictly inside.
    pub fn integrate<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        breaks: &[f64],
        mut f: F,
    ) -> Result<f64> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite integration bounds [{a}, {b}]"
            )));
        }
        if b <= a {
            return Ok(0.0);
        }
        let mut points: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mut edges = Vec::with_capacity(points.len() + 2);
        edges.push(a);
        edges.extend(points);
        edges.push(b);

        let width = b - a;
        let mut total = 0.0;
        for w in edges.windows(2) {
            let share = self.spec.tolerance * (w[1] - w[0]) / width;
            let whole = self.rule.integrate(w[0], w[1], &mut f);
            total += self.refine(w[0], w[1], whole, share, 0, &mut f)?;
        }
        Ok(total)
    }

    fn refine<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
        f: &mut F,
    ) -> Result<f64> {
        let mid = 0.5 * (a + b);
        let left = self.rule.integrate(a, mid, &mut *f);
        let right = self.rule.integrate(mid, b, &mut *f);
        let split = left + right;
        let err = (split - whole).abs();
        if !split.is_finite() {
            return Err(Error::numerical(format!(
                "integrand not finite on [{a}, {b}]"
            )));
        }
        if err <= tol || err <= 1e-15 * split.abs() {
            return Ok(split);
        }
        if depth >= self.spec.max_depth || mid <= a || mid >= b {
            return Err(Error::numerical(format!(
                "quadrature did not converge on [{a}, {b}]: refinement changed the estimate by {err:e} > {tol:e}"
            )));
        }
        Ok(self.refine(a, mid, left, 0.5 * tol, depth + 1, f)?
            + self.refine(mid, b, right, 0.5 * tol, depth + 1, f)?)
    }
}
