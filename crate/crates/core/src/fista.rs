//! Convolutional LASSO by FISTA.
//!
//! Solves `min_x ||y - D (*) x||_2^2 + lambda ||x||_1` for a fixed
//! single-channel effective dictionary `D`. The data term carries no 1/2
//! factor, so the proximal threshold is `lambda / (2 L)` where `L` is the
//! squared operator norm of the synthesis operator.

use ndarray::{ArrayBase, Axis, Data, DataMut, Dimension};

use crate::conv::{operator_norm_sq, ConvSynthesis, LinearOp, Plane, Tensor3};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::model::{Atoms, EffectiveDictionary, SparseCode};

/// Multiplier applied to the power-iteration estimate, which is a lower bound.
pub const LIPSCHITZ_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub struct FistaParams {
    /// Sparsity weight on the l1 term.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the relative change of the objective drops below this.
    pub rel_tol: f64,
    /// Power iterations used to estimate the Lipschitz constant.
    pub lipschitz_iters: usize,
    pub seed: u64,
}

impl Default for FistaParams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_iters: 200,
            rel_tol: 1e-6,
            lipschitz_iters: 50,
            seed: 0,
        }
    }
}

impl FistaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return domain_err(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.max_iters == 0 {
            return domain_err("max_iters must be at least 1");
        }
        if !(self.rel_tol > 0.0) {
            return domain_err(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if self.lipschitz_iters == 0 {
            return domain_err("lipschitz_iters must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FistaResult {
    pub code: SparseCode,
    /// Objective at the starting point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Step-size constant actually used (margin included).
    pub lipschitz: f64,
}

impl FistaResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }
}

#[inline]
pub(crate) fn shrink(v: f64, zeta: f64) -> f64 {
    if v > zeta {
        v - zeta
    } else if v < -zeta {
        v + zeta
    } else {
        0.0
    }
}

/// Entrywise `sign(x) * max(|x| - zeta, 0)`, with exact zeros where `|x| <= zeta`.
pub fn soft_threshold<S, D>(x: &ArrayBase<S, D>, zeta: f64) -> Result<ndarray::Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if !(zeta >= 0.0) {
        return domain_err(format!("threshold must be non-negative, got {zeta}"));
    }
    Ok(x.mapv(|v| shrink(v, zeta)))
}

pub fn soft_threshold_inplace<S, D>(x: &mut ArrayBase<S, D>, zeta: f64) -> Result<()>
where
    S: DataMut<Elem = f64>,
    D: Dimension,
{
    if !(zeta >= 0.0) {
        return domain_err(format!("threshold must be non-negative, got {zeta}"));
    }
    x.mapv_inplace(|v| shrink(v, zeta));
    Ok(())
}

fn sq_dist(a: &Tensor3, b: &Tensor3) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `||y - D (*) code||^2 + lambda ||code||_1`.
pub fn lasso_objective(y: &Plane, eff: &EffectiveDictionary, code: &SparseCode, lambda: f64) -> Result<f64> {
    let synth = eff.synthesize(code)?;
    if synth.dim() != y.dim() {
        return shape_err(format!(
            "code synthesizes a {:?} image but y is {:?}",
            synth.dim(),
            y.dim()
        ));
    }
    let data: f64 = y.iter().zip(synth.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(data + lambda * code.l1_norm())
}

/// Runs FISTA from a zero code.
pub fn fista_solve(y: &Plane, eff: &EffectiveDictionary, params: &FistaParams) -> Result<FistaResult> {
    fista_solve_from(y, eff, params, None)
}

/// Runs FISTA from `init`, or from zero when `init` is `None`.
pub fn fista_solve_from(
    y: &Plane,
    eff: &EffectiveDictionary,
    params: &FistaParams,
    init: Option<&SparseCode>,
) -> Result<FistaResult> {
    params.validate()?;
    let (mh, mw) = eff.code_size_for(y.dim())?;
    let op = ConvSynthesis::new(eff.atoms().view(), mh, mw)?;
    let code_shape = op.input_shape();
    let target = y.view().insert_axis(Axis(0)).to_owned();

    let mut x = match init {
        Some(c) if c.maps.dim() == code_shape => c.maps.clone(),
        Some(c) => {
            return shape_err(format!(
                "initial code {:?} does not match {:?}",
                c.maps.dim(),
                code_shape
            ))
        }
        None => Tensor3::zeros(code_shape),
    };
    let mut ax = op.forward(&x);
    let objective = |ax: &Tensor3, x: &Tensor3| {
        sq_dist(ax, &target) + params.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut trace = vec![objective(&ax, &x)];

    let lipschitz = operator_norm_sq(&op, params.lipschitz_iters, params.seed) * LIPSCHITZ_MARGIN;
    if lipschitz == 0.0 {
        return Ok(FistaResult {
            code: SparseCode::new(x, eff.depth()),
            objective_trace: trace,
            iterations_used: 0,
            converged: true,
            lipschitz,
        });
    }
    let step = 1.0 / lipschitz;
    let threshold = params.lambda / (2.0 * lipschitz);

    let mut x_prev = x.clone();
    let mut ax_prev = ax.clone();
    let mut t = 1.0_f64;
    let mut momentum = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    let mut v = Tensor3::zeros(code_shape);
    let mut residual = target.clone();
    for k in 1..=params.max_iters {
        iterations = k;
        // Extrapolated point and its image, the latter by linearity.
        for ((r, &a), (&a_prev, &t)) in residual
            .iter_mut()
            .zip(ax.iter())
            .zip(ax_prev.iter().zip(target.iter()))
        {
            *r = a + momentum * (a - a_prev) - t;
        }
        let grad = op.adjoint(&residual);
        for ((out, &xv), (&xp, &g)) in v
            .iter_mut()
            .zip(x.iter())
            .zip(x_prev.iter().zip(grad.iter()))
        {
            *out = shrink(xv + momentum * (xv - xp) - step * g, threshold);
        }
        let ax_next = op.forward(&v);
        let f = objective(&ax_next, &v);
        if !f.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                lipschitz,
            });
        }

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        momentum = (t - 1.0) / t_next;
        t = t_next;
        // Rotate: x_prev <- x <- v, reusing the old x_prev buffer for v.
        std::mem::swap(&mut x_prev, &mut x);
        std::mem::swap(&mut x, &mut v);
        ax_prev = std::mem::replace(&mut ax, ax_next);

        let f_prev = *trace.last().unwrap();
        trace.push(f);
        if f_prev == 0.0 || (f - f_prev).abs() <= params.rel_tol * f_prev.abs() {
            converged = true;
            break;
        }
    }

    Ok(FistaResult {
        code: SparseCode::new(x, eff.depth()),
        objective_trace: trace,
        iterations_used: iterations,
        converged,
        lipschitz,
    })
}
