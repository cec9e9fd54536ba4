//! Loss terms: sequence reconstruction, the variational objective with
//! annealed KL weight, multi-task classifier losses, discriminator losses
//! (gradient-stopped at the latent), adversarial entropy objectives
//! (gradient-stopped at the discriminator), and the λ-weighted overall loss.

use crate::config::Config;
use crate::corpus::SparseDistribution;
use crate::model::head_forward;
use crate::nn::{cross_entropy_sparse, entropy, LinearVars, Tape, Var};

/// Loss weights and optimization constants.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub lambda_mul_s: f64,
    pub lambda_adv_s: f64,
    pub lambda_mul_c: f64,
    pub lambda_adv_c: f64,
    pub lambda_kl_s: f64,
    pub lambda_kl_c: f64,
    pub anneal_k: f64,
    pub anneal_t0: f64,
    pub lr_model: f64,
    pub lr_dis: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for HyperParams {
    fn default() -> HyperParams {
        HyperParams::from(&Config::default())
    }
}

impl From<&Config> for HyperParams {
    fn from(c: &Config) -> HyperParams {
        HyperParams {
            lambda_mul_s: c.lambda_mul_s,
            lambda_adv_s: c.lambda_adv_s,
            lambda_mul_c: c.lambda_mul_c,
            lambda_adv_c: c.lambda_adv_c,
            lambda_kl_s: c.lambda_kl_s,
            lambda_kl_c: c.lambda_kl_c,
            anneal_k: c.anneal_k,
            anneal_t0: c.anneal_t0,
            lr_model: c.lr_model,
            lr_dis: c.lr_dis,
            batch_size: c.batch_size,
            epochs: c.epochs,
        }
    }
}

/// Sigmoid KL-weight annealing: 1 / (1 + exp(−k (t − t₀))).
/// Monotone nondecreasing in t, exactly 0.5 at t = t₀.
pub fn kl_weight(step: f64, k: f64, t0: f64) -> f64 {
    assert!(k > 0.0, "annealing steepness must be positive");
    1.0 / (1.0 + (-k * (step - t0)).exp())
}

/// Per-batch loss components. `overall` excludes the discriminator losses,
/// which train separate parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl_s: f64,
    pub kl_c: f64,
    pub mul_s: f64,
    pub adv_s: f64,
    pub mul_c: f64,
    pub adv_c: f64,
    pub dis_s: f64,
    pub dis_c: f64,
    pub overall: f64,
}

impl LossBreakdown {
    pub const TSV_HEADER: &'static str =
        "recon\tkl_s\tkl_c\tmul_s\tadv_s\tmul_c\tadv_c\tdis_s\tdis_c\toverall";

    pub fn tsv_row(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.reconstruction,
            self.kl_s,
            self.kl_c,
            self.mul_s,
            self.adv_s,
            self.mul_c,
            self.adv_c,
            self.dis_s,
            self.dis_c,
            self.overall
        )
    }
}

/// −Σ_t log p(x_t | ·) over one sentence's gold positions, from the
/// teacher-forced logits.
pub fn sentence_reconstruction_nll(tape: &mut Tape, logits: &[Var], gold: &[u32]) -> Var {
    assert_eq!(logits.len(), gold.len(), "one logit vector per gold position");
    assert!(!gold.is_empty(), "all-pad sentence");
    let mut acc: Option<Var> = None;
    for (l, &g) in logits.iter().zip(gold) {
        let lp = tape.log_softmax(*l);
        let term = tape.pick(lp, g as usize);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    tape.scale(acc.unwrap(), -1.0)
}

/// Batch reconstruction loss: mean over per-sentence sums.
pub fn loss_reconstruction(tape: &mut Tape, per_sentence: &[Var]) -> Var {
    tape.mean_scalars(per_sentence)
}

/// recon + λ_kl(s)·w(t)·KL_s + λ_kl(c)·w(t)·KL_c.
pub fn loss_vae(
    tape: &mut Tape,
    recon: Var,
    kl_s: Var,
    kl_c: Var,
    lambda_kl_s: f64,
    lambda_kl_c: f64,
    anneal_weight: f64,
) -> Var {
    let ws = tape.scale(kl_s, lambda_kl_s * anneal_weight);
    let wc = tape.scale(kl_c, lambda_kl_c * anneal_weight);
    let a = tape.add(recon, ws);
    tape.add(a, wc)
}

/// Cross-entropy of a classifier head against a target distribution;
/// gradients flow to both the head and whatever produced `v`.
/// An empty (masked) target contributes exactly 0.
pub fn multitask_loss(
    tape: &mut Tape,
    head: &LinearVars,
    v: Var,
    target: &SparseDistribution,
) -> Var {
    let y = head_forward(tape, head, v);
    cross_entropy_sparse(tape, y, target.entries())
}

/// Same value as [`multitask_loss`], but the latent input is detached:
/// the gradient support is exactly the head's parameters and the
/// encoder-side gradient is identically zero.
pub fn discriminator_loss(
    tape: &mut Tape,
    head: &LinearVars,
    v: Var,
    target: &SparseDistribution,
) -> Var {
    let vd = tape.detach(v);
    let y = head_forward(tape, head, vd);
    cross_entropy_sparse(tape, y, target.entries())
}

/// Entropy of a frozen head's prediction on `v`. The head parameters are
/// detached, so the gradient support is exactly the encoder side feeding
/// `v`; the value is bounded by ln(output dim).
pub fn adversarial_entropy(tape: &mut Tape, head: &LinearVars, v: Var) -> Var {
    let frozen = LinearVars {
        w: tape.detach(head.w),
        b: tape.detach(head.b),
    };
    let y = head_forward(tape, &frozen, v);
    entropy(tape, y)
}

/// Batch-mean component losses feeding the overall objective.
/// `mul_c` is `None` when every sentence in the batch is content-masked.
#[derive(Clone, Copy, Debug)]
pub struct OverallInputs {
    pub reconstruction: Var,
    pub kl_s: Option<Var>,
    pub kl_c: Option<Var>,
    pub mul_s: Var,
    pub adv_s: Var,
    pub mul_c: Option<Var>,
    pub adv_c: Var,
}

/// The λ-weighted overall loss at global step `t`:
///
/// overall = recon + w(t)(λ_kl(s) KL_s + λ_kl(c) KL_c)
///         + λ_mul(s) mul_s − λ_adv(s) adv_s
///         + λ_mul(c) mul_c − λ_adv(c) adv_c
///
/// The adversarial entropies are subtracted — minimizing the overall loss
/// maximizes them. Discriminator losses are excluded; the breakdown's
/// `dis_*` fields are filled by the training loop.
pub fn loss_overall(
    tape: &mut Tape,
    inputs: &OverallInputs,
    hyper: &HyperParams,
    step: usize,
) -> (Var, LossBreakdown) {
    let w = kl_weight(step as f64, hyper.anneal_k, hyper.anneal_t0);
    let mut breakdown = LossBreakdown {
        reconstruction: tape.value(inputs.reconstruction).item(),
        ..LossBreakdown::default()
    };

    let mut overall = inputs.reconstruction;
    if let Some(kl_s) = inputs.kl_s {
        breakdown.kl_s = tape.value(kl_s).item();
        let t = tape.scale(kl_s, hyper.lambda_kl_s * w);
        overall = tape.add(overall, t);
    }
    if let Some(kl_c) = inputs.kl_c {
        breakdown.kl_c = tape.value(kl_c).item();
        let t = tape.scale(kl_c, hyper.lambda_kl_c * w);
        overall = tape.add(overall, t);
    }

    breakdown.mul_s = tape.value(inputs.mul_s).item();
    let t = tape.scale(inputs.mul_s, hyper.lambda_mul_s);
    overall = tape.add(overall, t);

    breakdown.adv_s = tape.value(inputs.adv_s).item();
    let t = tape.scale(inputs.adv_s, -hyper.lambda_adv_s);
    overall = tape.add(overall, t);

    if let Some(mul_c) = inputs.mul_c {
        breakdown.mul_c = tape.value(mul_c).item();
        let t = tape.scale(mul_c, hyper.lambda_mul_c);
        overall = tape.add(overall, t);
    }

    breakdown.adv_c = tape.value(inputs.adv_c).item();
    let t = tape.scale(inputs.adv_c, -hyper.lambda_adv_c);
    overall = tape.add(overall, t);

    breakdown.overall = tape.value(overall).item();
    (overall, breakdown)
}

/// Re-sum a breakdown from its components; the training loop asserts this
/// against `overall` to guard the decomposition identity.
pub fn resum_breakdown(b: &LossBreakdown, hyper: &HyperParams, step: usize) -> f64 {
    let w = kl_weight(step as f64, hyper.anneal_k, hyper.anneal_t0);
    b.reconstruction
        + hyper.lambda_kl_s * w * b.kl_s
        + hyper.lambda_kl_c * w * b.kl_c
        + hyper.lambda_mul_s * b.mul_s
        - hyper.lambda_adv_s * b.adv_s
        + hyper.lambda_mul_c * b.mul_c
        - hyper.lambda_adv_c * b.adv_c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, softmax_slice, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn kl_weight_examples() {
        assert_eq!(kl_weight(2500.0, 0.0025, 2500.0), 0.5);
        let k = 0.0025;
        let t0 = 2500.0;
        assert!((kl_weight(t0 + 30.0 / k, k, t0) - 1.0).abs() < 1e-9);
        let w = kl_weight(0.0, 0.01, 1000.0);
        assert!((w - 1.0 / (1.0 + 10f64.exp())).abs() < 1e-18);
        assert!((w - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn kl_weight_monotone() {
        let mut prev = -1.0;
        for t in (0..8000).step_by(37) {
            let w = kl_weight(t as f64, 0.0025, 2500.0);
            assert!(w >= prev);
            assert!((0.0..=1.0).contains(&w));
            prev = w;
        }
    }

    #[test]
    fn reconstruction_perfect_prediction_is_zero() {
        let mut tape = Tape::new();
        let gold = [2u32, 0];
        let logits: Vec<Var> = gold
            .iter()
            .map(|&g| {
                let mut z = vec![0.0; 4];
                z[g as usize] = 800.0; // softmax saturates to exactly 1
                tape.constant(Tensor::vector(z))
            })
            .collect();
        let nll = sentence_reconstruction_nll(&mut tape, &logits, &gold);
        assert_eq!(tape.value(nll).item(), 0.0);
    }

    #[test]
    fn reconstruction_uniform_is_n_ln_v() {
        let mut tape = Tape::new();
        let v = 7usize;
        let gold = [1u32, 3, 5];
        let logits: Vec<Var> = gold
            .iter()
            .map(|_| tape.constant(Tensor::vector(vec![0.0; v])))
            .collect();
        let nll = sentence_reconstruction_nll(&mut tape, &logits, &gold);
        assert!((tape.value(nll).item() - 3.0 * (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_matches_direct_summation_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let v = 9usize;
        let gold = [0u32, 4, 8, 2];
        let raw: Vec<Tensor> = gold.iter().map(|_| Tensor::uniform(v, 1, -2.0, 2.0, &mut rng)).collect();

        let mut tape = Tape::new();
        let logits: Vec<Var> = raw.iter().map(|t| tape.constant(t.clone())).collect();
        let nll = sentence_reconstruction_nll(&mut tape, &logits, &gold);

        let expect: f64 = raw
            .iter()
            .zip(&gold)
            .map(|(t, &g)| -softmax_slice(t.data())[g as usize].ln())
            .sum();
        assert!((tape.value(nll).item() - expect).abs() < 1e-10);
    }

    #[test]
    fn batch_reconstruction_is_mean() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(2.0));
        let b = tape.constant(Tensor::scalar(4.0));
        let m = loss_reconstruction(&mut tape, &[a, b]);
        assert_eq!(tape.value(m).item(), 3.0);
    }

    #[test]
    fn vae_loss_examples() {
        let mut tape = Tape::new();
        let recon = tape.constant(Tensor::scalar(1.25));
        let zero = tape.constant(Tensor::scalar(0.0));

        // standard-normal posteriors: KL = 0 → loss = recon
        let l = loss_vae(&mut tape, recon, zero, zero, 0.03, 0.03, 1.0);
        assert_eq!(tape.value(l).item(), 1.25);

        // annealing start: w = 0 → loss = recon
        let kl = tape.constant(Tensor::scalar(7.7));
        let l0 = loss_vae(&mut tape, recon, kl, kl, 0.03, 0.03, 0.0);
        assert_eq!(tape.value(l0).item(), 1.25);

        // μ_s = (1,0,…), σ = 1 → KL_s = 0.5; λ·w·KL = 0.03·0.5 = 0.015
        let mu = tape.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let lv = tape.constant(Tensor::zeros(3, 1));
        let kl_s = tape.kl_std_normal(mu, lv);
        let l1 = loss_vae(&mut tape, recon, kl_s, zero, 0.03, 0.03, 1.0);
        assert!((tape.value(l1).item() - (1.25 + 0.015)).abs() < 1e-12);
    }

    fn head_of(tape: &mut Tape, w: Tensor, b: Tensor, trainable: bool) -> LinearVars {
        if trainable {
            LinearVars {
                w: tape.leaf(w),
                b: tape.leaf(b),
            }
        } else {
            LinearVars {
                w: tape.constant(w),
                b: tape.constant(b),
            }
        }
    }

    #[test]
    fn multitask_examples() {
        let mut tape = Tape::new();
        // style head predicting the one-hot target with probability 1
        let head = head_of(&mut tape, Tensor::zeros(2, 3), Tensor::vector(vec![800.0, 0.0]), false);
        let v = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let t = SparseDistribution::one_hot(0, 2);
        let l = multitask_loss(&mut tape, &head, v, &t);
        assert_eq!(tape.value(l).item(), 0.0);

        // uniform prediction against a one-hot style target
        let uni = head_of(&mut tape, Tensor::zeros(2, 3), Tensor::zeros(2, 1), false);
        let l2 = multitask_loss(&mut tape, &uni, v, &t);
        assert!((tape.value(l2).item() - 2.0f64.ln()).abs() < 1e-12);

        // BoW target {1/3, 1/3, 1/3} vs uniform prediction over 10
        let bow_head = head_of(&mut tape, Tensor::zeros(10, 3), Tensor::zeros(10, 1), false);
        let t3 = SparseDistribution::from_entries(
            10,
            vec![(2, 1.0 / 3.0), (5, 1.0 / 3.0), (7, 1.0 / 3.0)],
        );
        let l3 = multitask_loss(&mut tape, &bow_head, v, &t3);
        assert!((tape.value(l3).item() - 10.0f64.ln()).abs() < 1e-12);

        // masked (empty) target contributes zero
        let l4 = multitask_loss(&mut tape, &bow_head, v, &SparseDistribution::empty(10));
        assert_eq!(tape.value(l4).item(), 0.0);
    }

    #[test]
    fn discriminator_equals_multitask_value() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let w = Tensor::uniform(2, 4, -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(2, 1, -1.0, 1.0, &mut rng);
        let vv = Tensor::uniform(4, 1, -1.0, 1.0, &mut rng);
        let t = SparseDistribution::one_hot(1, 2);

        let mut tape = Tape::new();
        let head = head_of(&mut tape, w, b, false);
        let v = tape.constant(vv);
        let lm = multitask_loss(&mut tape, &head, v, &t);
        let ld = discriminator_loss(&mut tape, &head, v, &t);
        assert!((tape.value(lm).item() - tape.value(ld).item()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_probability_quarter_gives_ln4() {
        // logits (0, ln 3): p(target=0) = 1/4
        let mut tape = Tape::new();
        let head = head_of(
            &mut tape,
            Tensor::zeros(2, 2),
            Tensor::vector(vec![0.0, 3.0f64.ln()]),
            false,
        );
        let v = tape.constant(Tensor::vector(vec![1.0, -1.0]));
        let t = SparseDistribution::one_hot(0, 2);
        let l = discriminator_loss(&mut tape, &head, v, &t);
        assert!((tape.value(l).item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_gradient_stops_at_latent() {
        // encoder-side leaf feeding v gets exactly zero gradient
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let mut tape = Tape::new();
        let enc_w = tape.leaf(Tensor::uniform(4, 3, -1.0, 1.0, &mut rng));
        let x = tape.constant(Tensor::uniform(3, 1, -1.0, 1.0, &mut rng));
        let v = tape.matvec(enc_w, x);
        let head = head_of(
            &mut tape,
            Tensor::uniform(2, 4, -1.0, 1.0, &mut rng),
            Tensor::zeros(2, 1),
            true,
        );
        let t = SparseDistribution::one_hot(0, 2);
        let l = discriminator_loss(&mut tape, &head, v, &t);
        tape.backward(l);
        assert!(tape.grad(enc_w).data().iter().all(|&g| g == 0.0));
        // while the head itself does receive gradient
        assert!(tape.grad(head.w).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn adversarial_entropy_examples_and_gradient_stop() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let mut tape = Tape::new();

        // W = 0: prediction independent of v → exactly ln K, zero v-gradient
        let flat = head_of(&mut tape, Tensor::zeros(3, 4), Tensor::zeros(3, 1), true);
        let enc_w = tape.leaf(Tensor::uniform(4, 2, -1.0, 1.0, &mut rng));
        let x = tape.constant(Tensor::uniform(2, 1, -1.0, 1.0, &mut rng));
        let v = tape.matvec(enc_w, x);
        let h = adversarial_entropy(&mut tape, &flat, v);
        assert!((tape.value(h).item() - 3.0f64.ln()).abs() < 1e-12);
        tape.backward(h);
        assert!(tape.grad(enc_w).data().iter().all(|&g| g == 0.0));
        // head parameters are frozen: exactly zero gradient
        assert!(tape.grad(flat.w).data().iter().all(|&g| g == 0.0));
        assert!(tape.grad(flat.b).data().iter().all(|&g| g == 0.0));

        // binary head at (0.5, 0.5)
        let mut tape = Tape::new();
        let head = head_of(&mut tape, Tensor::zeros(2, 2), Tensor::zeros(2, 1), false);
        let v = tape.constant(Tensor::vector(vec![0.3, 0.9]));
        let h2 = adversarial_entropy(&mut tape, &head, v);
        assert!((tape.value(h2).item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adversarial_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let head_w = Tensor::uniform(3, 4, -1.0, 1.0, &mut rng);
        let head_b = Tensor::uniform(3, 1, -0.5, 0.5, &mut rng);
        let v0 = Tensor::uniform(4, 1, -1.0, 1.0, &mut rng);
        let err = grad_check(&[v0], 1e-5, 0, 0, |tape, leaves| {
            let head = LinearVars {
                w: tape.constant(head_w.clone()),
                b: tape.constant(head_b.clone()),
            };
            adversarial_entropy(tape, &head, leaves[0])
        })
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn adversarial_entropy_bounded_by_ln_k() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for _ in 0..200 {
            let k = rng.random_range(2..7);
            let d = rng.random_range(1..5);
            let mut tape = Tape::new();
            let head = head_of(
                &mut tape,
                Tensor::uniform(k, d, -3.0, 3.0, &mut rng),
                Tensor::uniform(k, 1, -3.0, 3.0, &mut rng),
                false,
            );
            let v = tape.constant(Tensor::uniform(d, 1, -3.0, 3.0, &mut rng));
            let h = adversarial_entropy(&mut tape, &head, v);
            assert!(tape.value(h).item() <= (k as f64).ln() + 1e-12);
        }
    }

    fn scalar(tape: &mut Tape, v: f64) -> Var {
        tape.constant(Tensor::scalar(v))
    }

    #[test]
    fn overall_all_lambda_zero_reduces_to_reconstruction() {
        let mut tape = Tape::new();
        let inputs = OverallInputs {
            reconstruction: scalar(&mut tape, 3.5),
            kl_s: None,
            kl_c: None,
            mul_s: scalar(&mut tape, 1.0),
            adv_s: scalar(&mut tape, 0.6),
            mul_c: Some(scalar(&mut tape, 2.0)),
            adv_c: scalar(&mut tape, 0.4),
        };
        let hyper = HyperParams {
            lambda_mul_s: 0.0,
            lambda_adv_s: 0.0,
            lambda_mul_c: 0.0,
            lambda_adv_c: 0.0,
            ..HyperParams::default()
        };
        let (overall, b) = loss_overall(&mut tape, &inputs, &hyper, 0);
        assert_eq!(tape.value(overall).item(), 3.5);
        assert_eq!(b.overall, 3.5);
    }

    #[test]
    fn overall_adversarial_terms_subtract() {
        // recon 5, λ_adv(s)=1, adv_s = ln 2, everything else zero
        let mut tape = Tape::new();
        let inputs = OverallInputs {
            reconstruction: scalar(&mut tape, 5.0),
            kl_s: None,
            kl_c: None,
            mul_s: scalar(&mut tape, 0.0),
            adv_s: scalar(&mut tape, 2.0f64.ln()),
            mul_c: Some(scalar(&mut tape, 0.0)),
            adv_c: scalar(&mut tape, 0.0),
        };
        let hyper = HyperParams {
            lambda_mul_s: 0.0,
            lambda_adv_s: 1.0,
            lambda_mul_c: 0.0,
            lambda_adv_c: 0.0,
            ..HyperParams::default()
        };
        let (overall, _) = loss_overall(&mut tape, &inputs, &hyper, 0);
        assert!((tape.value(overall).item() - (5.0 - 0.693147)).abs() < 1e-6);
    }

    #[test]
    fn overall_with_reference_defaults_and_identity() {
        // defaults: recon + w·0.03·kls + w·0.03·klc + 10·mul_s − adv_s + 3·mul_c − 0.03·adv_c
        let hyper = HyperParams::default();
        let mut tape = Tape::new();
        let inputs = OverallInputs {
            reconstruction: scalar(&mut tape, 4.0),
            kl_s: Some(scalar(&mut tape, 0.7)),
            kl_c: Some(scalar(&mut tape, 0.9)),
            mul_s: scalar(&mut tape, 0.11),
            adv_s: scalar(&mut tape, 0.5),
            mul_c: Some(scalar(&mut tape, 1.3)),
            adv_c: scalar(&mut tape, 2.2),
        };
        let step = 3000;
        let (overall, b) = loss_overall(&mut tape, &inputs, &hyper, step);
        let w = kl_weight(step as f64, hyper.anneal_k, hyper.anneal_t0);
        let expect = 4.0 + w * 0.03 * 0.7 + w * 0.03 * 0.9 + 10.0 * 0.11 - 0.5 + 3.0 * 1.3 - 0.03 * 2.2;
        assert!((tape.value(overall).item() - expect).abs() < 1e-12);
        // decomposition identity from the recorded components
        assert!((resum_breakdown(&b, &hyper, step) - b.overall).abs() < 1e-12);
    }
}
