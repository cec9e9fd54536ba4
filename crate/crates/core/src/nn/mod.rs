//! Differentiable primitives: tensors, the op tape, the GRU cell, linear
//! maps, distribution losses, and a finite-difference gradient checker.

mod tape;
mod tensor;

pub use tape::{softmax_slice, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use rand::Rng;

/// Weight matrix plus bias for an affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearParams {
    /// Fan-in scaled uniform init: U[-1/√in, 1/√in] weights, zero bias.
    pub fn new(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (in_dim as f64).sqrt();
        LinearParams {
            w: Tensor::uniform(out_dim, in_dim, -a, a, rng),
            b: Tensor::zeros(out_dim, 1),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearParams {
            w: Tensor::zeros(out_dim, in_dim),
            b: Tensor::zeros(out_dim, 1),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        let reg = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LinearVars {
            w: reg(tape, &self.w),
            b: reg(tape, &self.b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

/// W x + b.
pub fn linear(tape: &mut Tape, lin: &LinearVars, x: Var) -> Var {
    let wx = tape.matvec(lin.w, x);
    tape.add(wx, lin.b)
}

/// Bound on recurrent weight init, uniform in [-0.08, 0.08].
pub const RECURRENT_INIT: f64 = 0.08;

/// GRU cell parameters. Convention used throughout:
///
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn new(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let mut u = |r, c| Tensor::uniform(r, c, -RECURRENT_INIT, RECURRENT_INIT, rng);
        GruParams {
            w_z: u(hidden, input),
            u_z: u(hidden, hidden),
            b_z: Tensor::zeros(hidden, 1),
            w_r: u(hidden, input),
            u_r: u(hidden, hidden),
            b_r: Tensor::zeros(hidden, 1),
            w_h: u(hidden, input),
            u_h: u(hidden, hidden),
            b_h: Tensor::zeros(hidden, 1),
        }
    }

    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruParams {
            w_z: Tensor::zeros(hidden, input),
            u_z: Tensor::zeros(hidden, hidden),
            b_z: Tensor::zeros(hidden, 1),
            w_r: Tensor::zeros(hidden, input),
            u_r: Tensor::zeros(hidden, hidden),
            b_r: Tensor::zeros(hidden, 1),
            w_h: Tensor::zeros(hidden, input),
            u_h: Tensor::zeros(hidden, hidden),
            b_h: Tensor::zeros(hidden, 1),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GruVars {
        let reg = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        GruVars {
            w_z: reg(tape, &self.w_z),
            u_z: reg(tape, &self.u_z),
            b_z: reg(tape, &self.b_z),
            w_r: reg(tape, &self.w_r),
            u_r: reg(tape, &self.u_r),
            b_r: reg(tape, &self.b_r),
            w_h: reg(tape, &self.w_h),
            u_h: reg(tape, &self.u_h),
            b_h: reg(tape, &self.b_h),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

/// One GRU step; returns the new hidden state.
pub fn gru_step(tape: &mut Tape, p: &GruVars, x: Var, h_prev: Var) -> Var {
    let gate = |tape: &mut Tape, w, u, b, hx: Var| {
        let wx = tape.matvec(w, x);
        let uh = tape.matvec(u, hx);
        let a = tape.add(wx, uh);
        tape.add(a, b)
    };
    let z_pre = gate(tape, p.w_z, p.u_z, p.b_z, h_prev);
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, p.w_r, p.u_r, p.b_r, h_prev);
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul_elem(r, h_prev);
    let cand_pre = gate(tape, p.w_h, p.u_h, p.b_h, rh);
    let cand = tape.tanh(cand_pre);
    // h' = h + z ⊙ (h̃ − h)
    let delta = tape.sub(cand, h_prev);
    let zd = tape.mul_elem(z, delta);
    tape.add(h_prev, zd)
}

/// −Σ t(l)·log y(l) for a dense constant target. `predicted` is a
/// probability vector; entries are clamped at 1e-12 inside the log.
pub fn cross_entropy(tape: &mut Tape, predicted: Var, target: &[f64]) -> Var {
    let logp = tape.ln_clamped(predicted);
    let tl = tape.dot_const(logp, target.to_vec());
    tape.scale(tl, -1.0)
}

/// Sparse-target cross entropy over (index, probability) pairs.
pub fn cross_entropy_sparse(tape: &mut Tape, predicted: Var, target: &[(usize, f64)]) -> Var {
    let logp = tape.ln_clamped(predicted);
    let tl = tape.dot_sparse(logp, target.to_vec());
    tape.scale(tl, -1.0)
}

/// Shannon entropy −Σ p log p of a probability vector, in nats.
pub fn entropy(tape: &mut Tape, predicted: Var) -> Var {
    let logp = tape.ln_clamped(predicted);
    let plogp = tape.dot(predicted, logp);
    tape.scale(plogp, -1.0)
}

/// Max relative error between analytic and central-difference gradients.
///
/// `build` must construct the scalar loss on the given tape from leaves
/// bound in the order of `params`. When `sample_per_param` is 0 every
/// coordinate is checked; otherwise that many coordinates are sampled
/// per parameter with the given seed.
pub fn grad_check<F>(
    params: &[Tensor],
    eps: f64,
    sample_per_param: usize,
    seed: u64,
    mut build: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Var,
{
    use rand::SeedableRng;

    let eval = |tensors: &[Tensor], build: &mut F| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars);
        let value = tape.value(root).item();
        tape.backward(root);
        let grads = vars.iter().map(|&v| tape.grad(v)).collect();
        (value, grads)
    };

    let (value, analytic) = eval(params, &mut build);
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }

    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = if sample_per_param == 0 || sample_per_param >= p.len() {
            (0..p.len()).collect()
        } else {
            (0..sample_per_param).map(|_| rng.random_range(0..p.len())).collect()
        };
        for ci in coords {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let (fp, _) = eval_value(&work, &mut build)?;
            work[pi].data_mut()[ci] = orig - eps;
            let (fm, _) = eval_value(&work, &mut build)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[pi].data()[ci];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn eval_value<F>(tensors: &[Tensor], build: &mut F) -> Result<(f64, ())>
where
    F: FnMut(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars);
    let value = tape.value(root).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    Ok((value, ()))
}
