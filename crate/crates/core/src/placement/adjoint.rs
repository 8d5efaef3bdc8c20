//! Discrete adjoint of an explicit time-stepped system.
//!
//! For `x_{k+1} = F_k(x_k, p)` and `J = Σ_{k=1}^{K} g_k(x_k)` the backward
//! sweep is `λ_K = ∂g_K/∂x`, `λ_k = ∂g_k/∂x + (∂F_k/∂x)ᵀ λ_{k+1}` and the
//! parameter gradient is `Σ_k (∂F_k/∂p)ᵀ λ_{k+1}`.

use crate::error::{Error, Result};

pub trait SteppedSystem {
    fn steps(&self) -> usize;
    fn param_len(&self) -> usize;
    /// `F_k(x, p)`
    fn step(&self, k: usize, x: &[f64], p: &[f64]) -> Result<Vec<f64>>;
    /// `(∂F_k/∂x)ᵀ λ` at `(x, p)`
    fn state_vjp(&self, k: usize, x: &[f64], p: &[f64], lambda: &[f64]) -> Vec<f64>;
    /// Adds `(∂F_k/∂p)ᵀ λ` to `out`.
    fn param_vjp(&self, k: usize, x: &[f64], p: &[f64], lambda: &[f64], out: &mut [f64]);
    /// `g_k(x_k)` for `k` in `1..=steps`.
    fn stage_cost(&self, k: usize, x: &[f64]) -> f64;
    fn stage_cost_grad(&self, k: usize, x: &[f64]) -> Vec<f64>;
}

/// States `x_0..=x_K` and stage costs `g_1..=g_K` of a forward run.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
}

impl Rollout {
    pub fn cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }
}

pub fn rollout<S: SteppedSystem + ?Sized>(sys: &S, x0: Vec<f64>, p: &[f64]) -> Result<Rollout> {
    let k_max = sys.steps();
    let mut states = Vec::with_capacity(k_max + 1);
    let mut stage_costs = Vec::with_capacity(k_max);
    states.push(x0);
    for k in 0..k_max {
        let next = sys.step(k, &states[k], p)?;
        stage_costs.push(sys.stage_cost(k + 1, &next));
        states.push(next);
    }
    Ok(Rollout { states, stage_costs })
}

/// Adjoint variables `λ_0..=λ_K`.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub lambda: Vec<Vec<f64>>,
}

pub fn solve_adjoint<S: SteppedSystem + ?Sized>(sys: &S, roll: &Rollout, p: &[f64]) -> Result<AdjointSolution> {
    let k_max = sys.steps();
    let mut lambda = vec![Vec::new(); k_max + 1];
    lambda[k_max] = sys.stage_cost_grad(k_max, &roll.states[k_max]);
    for k in (0..k_max).rev() {
        let mut l = sys.state_vjp(k, &roll.states[k], p, &lambda[k + 1]);
        if k > 0 {
            for (a, b) in l.iter_mut().zip(sys.stage_cost_grad(k, &roll.states[k])) {
                *a += b;
            }
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite adjoint at step {k}")));
        }
        lambda[k] = l;
    }
    Ok(AdjointSolution { lambda })
}

/// `dJ/dp` from a solved adjoint.
pub fn parameter_gradient<S: SteppedSystem + ?Sized>(sys: &S, roll: &Rollout, adj: &AdjointSolution, p: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; sys.param_len()];
    for k in 0..sys.steps() {
        sys.param_vjp(k, &roll.states[k], p, &adj.lambda[k + 1], &mut grad);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x' = A x + b p`, `J = cᵀ x_K`.
    struct Toy {
        a: [[f64; 2]; 2],
        b: [f64; 2],
        c: [f64; 2],
        steps: usize,
    }

    impl SteppedSystem for Toy {
        fn steps(&self) -> usize {
            self.steps
        }
        fn param_len(&self) -> usize {
            1
        }
        fn step(&self, _: usize, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
            Ok((0..2).map(|i| self.a[i][0] * x[0] + self.a[i][1] * x[1] + self.b[i] * p[0]).collect())
        }
        fn state_vjp(&self, _: usize, _: &[f64], _: &[f64], l: &[f64]) -> Vec<f64> {
            (0..2).map(|j| self.a[0][j] * l[0] + self.a[1][j] * l[1]).collect()
        }
        fn param_vjp(&self, _: usize, _: &[f64], _: &[f64], l: &[f64], out: &mut [f64]) {
            out[0] += self.b[0] * l[0] + self.b[1] * l[1];
        }
        fn stage_cost(&self, k: usize, x: &[f64]) -> f64 {
            if k == self.steps {
                self.c[0] * x[0] + self.c[1] * x[1]
            } else {
                0.0
            }
        }
        fn stage_cost_grad(&self, k: usize, _: &[f64]) -> Vec<f64> {
            if k == self.steps {
                self.c.to_vec()
            } else {
                vec![0.0; 2]
            }
        }
    }

    #[test]
    fn single_step_toy_matches_hand_solution() {
        let toy = Toy {
            a: [[2.0, 1.0], [-1.0, 3.0]],
            b: [0.5, -2.0],
            c: [1.0, 4.0],
            steps: 1,
        };
        let p = [0.7];
        let roll = rollout(&toy, vec![1.0, -1.0], &p).unwrap();
        let adj = solve_adjoint(&toy, &roll, &p).unwrap();
        // λ_1 = c, λ_0 = Aᵀ c = (2 - 4, 1 + 12)
        assert_eq!(adj.lambda[1], vec![1.0, 4.0]);
        assert!((adj.lambda[0][0] + 2.0).abs() < 1e-12);
        assert!((adj.lambda[0][1] - 13.0).abs() < 1e-12);
        // dJ/dp = cᵀ b = 0.5 - 8
        let g = parameter_gradient(&toy, &roll, &adj, &p);
        assert!((g[0] + 7.5).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_gives_zero_adjoint() {
        let toy = Toy {
            a: [[0.9, 0.2], [0.1, 0.8]],
            b: [1.0, 1.0],
            c: [0.0, 0.0],
            steps: 5,
        };
        let roll = rollout(&toy, vec![1.0, 2.0], &[0.3]).unwrap();
        let adj = solve_adjoint(&toy, &roll, &[0.3]).unwrap();
        assert!(adj.lambda.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn multi_step_gradient_matches_closed_form() {
        let toy = Toy {
            a: [[0.9, 0.2], [0.1, 0.8]],
            b: [1.0, -0.5],
            c: [2.0, 1.0],
            steps: 6,
        };
        let p = [0.4];
        let roll = rollout(&toy, vec![0.0, 0.0], &p).unwrap();
        let adj = solve_adjoint(&toy, &roll, &p).unwrap();
        let g = parameter_gradient(&toy, &roll, &adj, &p)[0];
        // J is linear in p from a zero start: J(p) = p J(1)
        let j1 = rollout(&toy, vec![0.0, 0.0], &[1.0]).unwrap().cost();
        assert!((g - j1).abs() < 1e-12);
    }
}
