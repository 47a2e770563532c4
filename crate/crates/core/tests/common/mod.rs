//! Test-only numerical oracles, independent of the library's own code
//! paths: tanh-sinh quadrature over the probability simplex and a direct
//! Dirichlet log-density.

use statrs::function::gamma::ln_gamma;

/// One tanh-sinh node on (0, 1) with stable log-coordinates of both tails.
#[derive(Clone, Copy)]
pub struct Node {
    pub t: f64,
    pub ln_t: f64,
    pub ln_1mt: f64,
    pub w: f64,
}

/// Tanh-sinh (double-exponential) quadrature on (0, 1). Handles the
/// algebraic endpoint singularities of Dirichlet kernels at machine-level
/// accuracy with a few hundred nodes.
pub struct TanhSinh {
    nodes: Vec<Node>,
}

impl TanhSinh {
    pub fn new(level: u32, x_max: f64) -> Self {
        let h = 0.5f64.powi(level as i32);
        let steps = (x_max / h).ceil() as i64;
        let mut nodes = Vec::with_capacity((2 * steps + 1) as usize);
        for k in -steps..=steps {
            let x = k as f64 * h;
            let s = std::f64::consts::FRAC_PI_2 * x.sinh();
            // t = 1 / (1 + exp(-2s)), with both tails in log space.
            let (ln_t, ln_1mt) = if s >= 0.0 {
                let e = (-2.0 * s).exp();
                (-(e.ln_1p()), -2.0 * s - e.ln_1p())
            } else {
                let e = (2.0 * s).exp();
                (2.0 * s - e.ln_1p(), -(e.ln_1p()))
            };
            let cosh_s = s.cosh();
            let w = h * std::f64::consts::FRAC_PI_4 * x.cosh() / (cosh_s * cosh_s);
            if w < 1e-300 {
                continue;
            }
            nodes.push(Node {
                t: ln_t.exp(),
                ln_t,
                ln_1mt,
                w,
            });
        }
        Self { nodes }
    }

    pub fn integrate(&self, f: impl Fn(&Node) -> f64) -> f64 {
        self.nodes.iter().map(|n| n.w * f(n)).sum()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}

/// Log of the Dirichlet normalization constant.
pub fn ln_dirichlet_const(alpha: &[f64]) -> f64 {
    let sum: f64 = alpha.iter().sum();
    ln_gamma(sum) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

/// Direct Dirichlet log-density without any clamping; `p` must be
/// interior.
pub fn ln_dirichlet_pdf(p: &[f64], alpha: &[f64]) -> f64 {
    ln_dirichlet_const(alpha)
        + p.iter()
            .zip(alpha)
            .map(|(&x, &a)| (a - 1.0) * x.max(1e-300).ln())
            .sum::<f64>()
}

/// Exact Bayes-fused posterior mean by simplex quadrature: the posterior
/// is proportional to `(sum_k lambda_k p_k) * Dir(p; beta)` and the mean
/// of component `i` is the ratio of two integrals. Supports 2 and 3
/// components. Also returns the quadrature's own estimate of
/// `integral Dir(p; beta) dp` as a self-check (should be 1).
pub fn fused_posterior_mean_quadrature(beta: &[f64], lambda: &[f64]) -> (Vec<f64>, f64) {
    assert_eq!(beta.len(), lambda.len());
    let quad = TanhSinh::new(5, 3.9);
    let ln_c = ln_dirichlet_const(beta);
    match beta.len() {
        2 => {
            let weight = |n: &Node| (ln_c + (beta[0] - 1.0) * n.ln_t + (beta[1] - 1.0) * n.ln_1mt).exp();
            let likelihood = |n: &Node| lambda[0] * n.t + lambda[1] * (1.0 - n.t);
            let norm = quad.integrate(weight);
            let denom = quad.integrate(|n| weight(n) * likelihood(n));
            let mean = (0..2)
                .map(|i| {
                    quad.integrate(|n| {
                        let p_i = if i == 0 { n.t } else { 1.0 - n.t };
                        weight(n) * likelihood(n) * p_i
                    }) / denom
                })
                .collect();
            (mean, norm)
        }
        3 => {
            // Stick-breaking substitution p = (u, (1-u)v, (1-u)(1-v)) with
            // Jacobian (1-u); the Dirichlet kernel factorizes into two
            // Beta kernels in u and v.
            let b12 = beta[1] + beta[2];
            let mut norm = 0.0;
            let mut denom = 0.0;
            let mut num = [0.0; 3];
            for nu in quad.nodes() {
                let ln_u_part = (beta[0] - 1.0) * nu.ln_t + (b12 - 1.0) * nu.ln_1mt;
                for nv in quad.nodes() {
                    let ln_w = ln_c
                        + ln_u_part
                        + (beta[1] - 1.0) * nv.ln_t
                        + (beta[2] - 1.0) * nv.ln_1mt;
                    let w = nu.w * nv.w * ln_w.exp();
                    if w == 0.0 {
                        continue;
                    }
                    let p = [nu.t, (1.0 - nu.t) * nv.t, (1.0 - nu.t) * (1.0 - nv.t)];
                    let likelihood: f64 = p.iter().zip(lambda).map(|(x, l)| x * l).sum();
                    norm += w;
                    denom += w * likelihood;
                    for i in 0..3 {
                        num[i] += w * likelihood * p[i];
                    }
                }
            }
            (num.iter().map(|v| v / denom).collect(), norm)
        }
        n => panic!("quadrature oracle supports 2 or 3 components, got {n}"),
    }
}
