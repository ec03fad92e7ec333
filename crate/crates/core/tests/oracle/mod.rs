//! Reference online-coding implementation used to cross-check the engine.
//!
//! Shares nothing with the library's probe code: each block's linear softmax
//! probe is fitted by full-batch accelerated gradient descent on the same
//! L2-regularized objective until the gradient norm falls below a tolerance,
//! and blocks are scored with a separate log-softmax.

#![allow(dead_code)]

pub struct OracleRun {
    pub per_block_bits: Vec<f64>,
    pub online_bits: f64,
    pub uniform_bits: f64,
    pub compression: f64,
    pub max_grad_norm: f64,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::MIN, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `theta` is `[W (c x d) | b (c)]`, class-major, deliberately unlike the library layout.
fn logits(theta: &[f64], x: &[f64], c: usize) -> Vec<f64> {
    let d = x.len();
    (0..c)
        .map(|k| theta[c * d + k] + (0..d).map(|i| theta[k * d + i] * x[i]).sum::<f64>())
        .collect()
}

fn objective_and_grad(theta: &[f64], xs: &[Vec<f64>], ys: &[usize], c: usize, l2: f64) -> (f64, Vec<f64>) {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut g = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let lp = log_softmax(&logits(theta, x, c));
        loss -= lp[y];
        for k in 0..c {
            let r = lp[k].exp() - if k == y { 1.0 } else { 0.0 };
            for i in 0..d {
                g[k * d + i] += r * x[i] / n;
            }
            g[c * d + k] += r / n;
        }
    }
    loss /= n;
    for j in 0..c * d {
        loss += 0.5 * l2 * theta[j] * theta[j];
        g[j] += l2 * theta[j];
    }
    (loss, g)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizes the regularized objective with Nesterov momentum and
/// function-value restarts. Returns the parameters and final gradient norm.
pub fn fit_full_batch(xs: &[Vec<f64>], ys: &[usize], c: usize, l2: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let d = xs[0].len();
    let max_sq = xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    let lipschitz = 0.5 * (max_sq + 1.0) + l2;
    let step = 1.0 / lipschitz;
    let mut theta = vec![0.0; c * d + c];
    let mut prev = theta.clone();
    let mut t = 1.0f64;
    let (mut f_prev, _) = objective_and_grad(&theta, xs, ys, c, l2);
    let mut gnorm = f64::INFINITY;
    for _ in 0..max_iter {
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        let look: Vec<f64> = theta.iter().zip(&prev).map(|(a, b)| a + beta * (a - b)).collect();
        let (_, g) = objective_and_grad(&look, xs, ys, c, l2);
        let next: Vec<f64> = look.iter().zip(&g).map(|(a, gi)| a - step * gi).collect();
        let (f_next, g_next) = objective_and_grad(&next, xs, ys, c, l2);
        gnorm = norm(&g_next);
        prev = theta;
        theta = next;
        t = t_next;
        if f_next > f_prev {
            t = 1.0;
            prev = theta.clone();
        }
        f_prev = f_next;
        if gnorm < tol {
            break;
        }
    }
    (theta, gnorm)
}

/// Online code length with boundaries `1 = n_0 < n_1 < ... < n_S = N`.
pub fn online_code_length(
    xs: &[Vec<f64>],
    ys: &[usize],
    c: usize,
    boundaries: &[usize],
    l2: f64,
    tol: f64,
) -> OracleRun {
    let log2c = (c as f64).log2();
    let mut per_block = vec![boundaries[1] as f64 * log2c];
    let mut worst = 0.0f64;
    for i in 1..boundaries.len() - 1 {
        let (start, end) = (boundaries[i], boundaries[i + 1]);
        let (theta, gnorm) = fit_full_batch(&xs[..start], &ys[..start], c, l2, tol, 2_000_000);
        worst = worst.max(gnorm);
        let bits: f64 = (start..end)
            .map(|r| -log_softmax(&logits(&theta, &xs[r], c))[ys[r]] / std::f64::consts::LN_2)
            .sum();
        per_block.push(bits);
    }
    let online: f64 = per_block.iter().sum();
    let uniform = xs.len() as f64 * log2c;
    OracleRun {
        per_block_bits: per_block,
        online_bits: online,
        uniform_bits: uniform,
        compression: uniform / online,
        max_grad_norm: worst,
    }
}
