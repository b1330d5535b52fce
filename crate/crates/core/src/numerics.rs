//! Shared numerical kernels: fixed-step RK4 integration, dense linear solve,
//! damped Newton root finding, and composite trapezoid quadrature.
//!
//! All norms are sup-norms. Every kernel is a pure function of its inputs and
//! safe to call concurrently.

use crate::expr::EvalError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("singular matrix: pivot {pivot:.3e} in column {column}")]
    Singular { column: usize, pivot: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("quadrature needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Settings for [`newton_solve`]. The defaults are tuned for chart inversion
/// near the base point: residual tolerance 1e-10 in sup-norm, at most 50
/// iterations, full steps with halving on residual increase, forward
/// finite-difference Jacobians with step 1e-6.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub fd_step: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
            damping: 1.0,
            fd_step: 1e-6,
        }
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Scratch buffers for repeated RK4 stepping.
#[derive(Debug, Clone, Default)]
pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn resize(&mut self, dim: usize) {
        self.k1.resize(dim, 0.0);
        self.k2.resize(dim, 0.0);
        self.k3.resize(dim, 0.0);
        self.k4.resize(dim, 0.0);
        self.tmp.resize(dim, 0.0);
    }
}

/// One classical RK4 step of size `h` for the autonomous field, in place.
pub fn rk4_step<F>(
    field: &mut F,
    x: &mut [f64],
    h: f64,
    scratch: &mut Rk4Scratch,
) -> Result<(), NumericsError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), EvalError>,
{
    let dim = x.len();
    scratch.resize(dim);
    field(x, &mut scratch.k1)?;
    for i in 0..dim {
        scratch.tmp[i] = x[i] + 0.5 * h * scratch.k1[i];
    }
    field(&scratch.tmp, &mut scratch.k2)?;
    for i in 0..dim {
        scratch.tmp[i] = x[i] + 0.5 * h * scratch.k2[i];
    }
    field(&scratch.tmp, &mut scratch.k3)?;
    for i in 0..dim {
        scratch.tmp[i] = x[i] + h * scratch.k3[i];
    }
    field(&scratch.tmp, &mut scratch.k4)?;
    for i in 0..dim {
        x[i] += h / 6.0 * (scratch.k1[i] + 2.0 * scratch.k2[i] + 2.0 * scratch.k3[i] + scratch.k4[i]);
    }
    Ok(())
}

/// Integrate `dx/dt = field(x)` from `x0` over time `t` with classical
/// fourth-order Runge-Kutta at fixed step `t/substeps`.
pub fn rk4_integrate<F>(
    mut field: F,
    x0: &[f64],
    t: f64,
    substeps: usize,
) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), EvalError>,
{
    assert!(substeps >= 1, "substeps must be at least 1");
    let mut x = x0.to_vec();
    if t == 0.0 {
        return Ok(x);
    }
    let h = t / substeps as f64;
    let mut scratch = Rk4Scratch::new(x0.len());
    for _ in 0..substeps {
        rk4_step(&mut field, &mut x, h, &mut scratch)?;
    }
    Ok(x)
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
///
/// `a` is row-major `n x n`. A pivot below `1e-12 * max|A|` reports the
/// matrix as singular.
pub fn solve_dense(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    assert_eq!(a.len(), n * n, "matrix shape");
    assert_eq!(b.len(), n, "rhs length");
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = norm_inf(a);
    let threshold = 1e-12 * scale;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = m[col * n + col].abs();
        for row in col + 1..n {
            let candidate = m[row * n + col].abs();
            if candidate > pivot_abs {
                pivot_abs = candidate;
                pivot_row = row;
            }
        }
        if pivot_abs <= threshold {
            return Err(NumericsError::Singular {
                column: col,
                pivot: pivot_abs,
            });
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            x.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            m[row * n + col] = 0.0;
            for k in col + 1..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            x[row] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}

/// Determinant via LU with partial pivoting; returns 0 for matrices that are
/// singular to working precision.
pub fn determinant(a: &[f64], n: usize) -> f64 {
    assert_eq!(a.len(), n * n, "matrix shape");
    let mut m = a.to_vec();
    let mut det = 1.0f64;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = m[col * n + col].abs();
        for row in col + 1..n {
            let candidate = m[row * n + col].abs();
            if candidate > pivot_abs {
                pivot_abs = candidate;
                pivot_row = row;
            }
        }
        if pivot_abs == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            det = -det;
        }
        let pivot = m[col * n + col];
        det *= pivot;
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            for k in col + 1..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
        }
    }
    det
}

/// Damped Newton iteration for `F(x) = 0` from `x0`.
///
/// Jacobians use forward finite differences with the configured step. On a
/// residual increase the step is halved, up to 8 times, after which the last
/// candidate is accepted and iteration continues.
pub fn newton_solve<F>(
    mut f: F,
    x0: &[f64],
    settings: &NewtonSettings,
) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), EvalError>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut residual = vec![0.0; n];
    let mut perturbed = vec![0.0; n];
    let mut candidate_res = vec![0.0; n];
    let mut jacobian = vec![0.0; n * n];
    f(&x, &mut residual)?;
    let mut res_norm = norm_inf(&residual);
    for _ in 0..settings.max_iterations {
        if res_norm <= settings.tolerance {
            return Ok(x);
        }
        let h = settings.fd_step;
        for col in 0..n {
            let saved = x[col];
            x[col] = saved + h;
            f(&x, &mut perturbed)?;
            x[col] = saved;
            for row in 0..n {
                jacobian[row * n + col] = (perturbed[row] - residual[row]) / h;
            }
        }
        let delta = solve_dense(&jacobian, n, &residual)?;
        let mut lambda = settings.damping;
        let mut candidate = x.clone();
        for halving in 0..=8 {
            for i in 0..n {
                candidate[i] = x[i] - lambda * delta[i];
            }
            f(&candidate, &mut candidate_res)?;
            let candidate_norm = norm_inf(&candidate_res);
            if candidate_norm < res_norm || halving == 8 {
                x.copy_from_slice(&candidate);
                residual.copy_from_slice(&candidate_res);
                res_norm = candidate_norm;
                break;
            }
            lambda *= 0.5;
        }
    }
    if res_norm <= settings.tolerance {
        return Ok(x);
    }
    Err(NumericsError::NoConvergence {
        iterations: settings.max_iterations,
        residual: res_norm,
    })
}

/// Composite trapezoid rule over samples `(s, value)` sorted by `s`.
/// Exact for affine integrands.
pub fn trapezoid(samples: &[(f64, f64)]) -> Result<f64, NumericsError> {
    if samples.len() < 2 {
        return Err(NumericsError::TooFewSamples(samples.len()));
    }
    debug_assert!(
        samples.windows(2).all(|w| w[0].0 <= w[1].0),
        "samples must be sorted by s"
    );
    let mut acc = 0.0;
    for pair in samples.windows(2) {
        let (s0, v0) = pair[0];
        let (s1, v1) = pair[1];
        acc += (s1 - s0) * 0.5 * (v0 + v1);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_field(v: Vec<f64>) -> impl FnMut(&[f64], &mut [f64]) -> Result<(), EvalError> {
        move |_x, out| {
            out.copy_from_slice(&v);
            Ok(())
        }
    }

    #[test]
    fn rk4_constant_field() {
        let x = rk4_integrate(constant_field(vec![1.0, 0.0]), &[0.0, 0.0], 0.5, 4).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn rk4_zero_time_is_identity() {
        let x0 = [1.25, -0.5];
        let x = rk4_integrate(constant_field(vec![3.0, 3.0]), &x0, 0.0, 1).unwrap();
        assert_eq!(x, x0.to_vec());
    }

    fn linear_field(x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        out[0] = x[0];
        Ok(())
    }

    #[test]
    fn rk4_exponential_flow() {
        // dx/dt = x from 1 over unit time: exact flow is e^t.
        let x = rk4_integrate(linear_field, &[1.0], 1.0, 100).unwrap();
        assert!(
            (x[0] - std::f64::consts::E).abs() < 1e-7,
            "got {} vs e",
            x[0]
        );
    }

    #[test]
    fn rk4_order_check_against_exponential() {
        // Halving the step should cut the error by roughly 2^4.
        let exact = std::f64::consts::E;
        let coarse = (rk4_integrate(linear_field, &[1.0], 1.0, 8).unwrap()[0] - exact).abs();
        let fine = (rk4_integrate(linear_field, &[1.0], 1.0, 16).unwrap()[0] - exact).abs();
        let factor = coarse / fine;
        assert!(
            (12.0..=20.0).contains(&factor),
            "order factor {factor} outside [12, 20]"
        );
    }

    #[test]
    fn rk4_group_property() {
        let spiral = |x: &[f64], out: &mut [f64]| -> Result<(), EvalError> {
            out[0] = -x[1];
            out[1] = x[0] + 0.2 * x[1].sin();
            Ok(())
        };
        let x0 = [0.7, -0.3];
        let t = 0.4;
        let s = 0.35;
        let direct = rk4_integrate(spiral, &x0, t + s, 75).unwrap();
        let mid = rk4_integrate(spiral, &x0, t, 40).unwrap();
        let composed = rk4_integrate(spiral, &mid, s, 35).unwrap();
        for i in 0..2 {
            assert!(
                (direct[i] - composed[i]).abs() < 1e-8,
                "group property component {i}: {} vs {}",
                direct[i],
                composed[i]
            );
        }
    }

    #[test]
    fn solve_identity() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let x = solve_dense(&a, 2, &[3.0, -1.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
    }

    #[test]
    fn solve_diagonal() {
        let a = [2.0, 0.0, 0.0, 4.0];
        let x = solve_dense(&a, 2, &[2.0, 8.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn solve_zero_matrix_is_singular() {
        let a = [0.0; 4];
        let err = solve_dense(&a, 2, &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, NumericsError::Singular { .. }));
    }

    #[test]
    fn solve_requires_pivoting() {
        // Zero in the leading position forces a row swap.
        let a = [0.0, 1.0, 1.0, 0.0];
        let x = solve_dense(&a, 2, &[2.0, 5.0]).unwrap();
        assert_eq!(x, vec![5.0, 2.0]);
    }

    #[test]
    fn solve_residual_small_for_well_conditioned() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.random_range(2..6);
            let mut a = vec![0.0; n * n];
            for (i, slot) in a.iter_mut().enumerate() {
                *slot = rng.random_range(-1.0..1.0);
                if i % (n + 1) == 0 {
                    *slot += 3.0; // diagonally dominant, well conditioned
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = solve_dense(&a, n, &b).unwrap();
            for row in 0..n {
                let mut acc = 0.0;
                for col in 0..n {
                    acc += a[row * n + col] * x[col];
                }
                assert!(
                    (acc - b[row]).abs() <= 1e-10 * norm_inf(&b).max(1e-300),
                    "residual too large"
                );
            }
        }
    }

    #[test]
    fn determinant_matches_known_values() {
        assert_eq!(determinant(&[1.0, 0.0, 0.0, 1.0], 2), 1.0);
        assert!((determinant(&[1.0, 2.0, 3.0, 4.0], 2) - (-2.0)).abs() < 1e-14);
        assert_eq!(determinant(&[0.0; 4], 2), 0.0);
        // Permutation matrix: det = -1.
        assert_eq!(determinant(&[0.0, 1.0, 1.0, 0.0], 2), -1.0);
    }

    #[test]
    fn newton_affine_in_one_step() {
        let target = [2.5, -1.0];
        let f = |x: &[f64], out: &mut [f64]| -> Result<(), EvalError> {
            out[0] = x[0] - target[0];
            out[1] = x[1] - target[1];
            Ok(())
        };
        let x = newton_solve(f, &[10.0, 10.0], &NewtonSettings::default()).unwrap();
        assert!((x[0] - 2.5).abs() < 1e-9);
        assert!((x[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn newton_quadratic_root() {
        let f = |x: &[f64], out: &mut [f64]| -> Result<(), EvalError> {
            out[0] = x[0] * x[0] - 4.0;
            Ok(())
        };
        let x = newton_solve(f, &[3.0], &NewtonSettings::default()).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-8, "got {}", x[0]);
    }

    #[test]
    fn newton_no_real_root_fails() {
        let f = |x: &[f64], out: &mut [f64]| -> Result<(), EvalError> {
            out[0] = x[0] * x[0] + 1.0;
            Ok(())
        };
        let err = newton_solve(f, &[1.5], &NewtonSettings::default()).unwrap_err();
        assert!(matches!(err, NumericsError::NoConvergence { .. }));
    }

    #[test]
    fn trapezoid_constant() {
        let samples: Vec<(f64, f64)> = (0..7).map(|k| (k as f64 / 6.0, 1.0)).collect();
        assert!((trapezoid(&samples).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_affine_exact() {
        let samples: Vec<(f64, f64)> = (0..11).map(|k| (k as f64 / 10.0, k as f64 / 10.0)).collect();
        assert!((trapezoid(&samples).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_quadratic_accuracy() {
        let samples: Vec<(f64, f64)> = (0..101)
            .map(|k| {
                let s = k as f64 / 100.0;
                (s, s * s)
            })
            .collect();
        let v = trapezoid(&samples).unwrap();
        assert!((v - 1.0 / 3.0).abs() <= 2e-5, "got {v}");
    }

    #[test]
    fn trapezoid_order_check() {
        let err_for = |steps: usize| {
            let samples: Vec<(f64, f64)> = (0..=steps)
                .map(|k| {
                    let s = k as f64 / steps as f64;
                    (s, s * s)
                })
                .collect();
            (trapezoid(&samples).unwrap() - 1.0 / 3.0).abs()
        };
        let factor = err_for(50) / err_for(100);
        assert!(
            (3.5..=4.5).contains(&factor),
            "order factor {factor} outside [3.5, 4.5]"
        );
    }

    #[test]
    fn trapezoid_too_few_samples() {
        assert!(matches!(
            trapezoid(&[(0.0, 1.0)]).unwrap_err(),
            NumericsError::TooFewSamples(1)
        ));
    }
}
