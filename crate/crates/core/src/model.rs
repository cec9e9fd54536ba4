//! The autoencoder: embedding, GRU encoder with style/content projection
//! heads, GRU decoder conditioned on the latent vector, and the four
//! classifier heads used by the auxiliary losses.
//!
//! The latent vector is the concatenation h = [s; c]. Decoder conditioning:
//! the initial decoder state is a linear map of h, and the output
//! projection reads [hidden_t; h] at every step.

use crate::config::ModelMode;
use crate::corpus::{EOS, SOS};
use crate::nn::{gru_step, linear, GruParams, GruVars, LinearParams, LinearVars, Tape, Tensor, Var};
use rand::Rng;

/// Named parameter groups. Every trainable tensor belongs to exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Decoder,
    MulS,
    MulC,
    DisS,
    DisC,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::MulS,
        ParamGroup::MulC,
        ParamGroup::DisS,
        ParamGroup::DisC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::MulS => "mul_s",
            ParamGroup::MulC => "mul_c",
            ParamGroup::DisS => "dis_s",
            ParamGroup::DisC => "dis_c",
        }
    }
}

/// Which parameter groups bind as trainable leaves on a tape.
#[derive(Clone, Copy, Debug, Default)]
pub struct Trainable {
    pub encoder: bool,
    pub decoder: bool,
    pub mul_s: bool,
    pub mul_c: bool,
    pub dis_s: bool,
    pub dis_c: bool,
}

impl Trainable {
    pub const NONE: Trainable = Trainable {
        encoder: false,
        decoder: false,
        mul_s: false,
        mul_c: false,
        dis_s: false,
        dis_c: false,
    };

    pub const ALL: Trainable = Trainable {
        encoder: true,
        decoder: true,
        mul_s: true,
        mul_c: true,
        dis_s: true,
        dis_c: true,
    };

    /// The autoencoder-side step of the training alternation:
    /// θ_E, θ_D, θ_mul(s), θ_mul(c).
    pub const MODEL: Trainable = Trainable {
        encoder: true,
        decoder: true,
        mul_s: true,
        mul_c: true,
        dis_s: false,
        dis_c: false,
    };

    /// The discriminator-side step: θ_dis(s), θ_dis(c).
    pub const DISCRIMINATORS: Trainable = Trainable {
        encoder: false,
        decoder: false,
        mul_s: false,
        mul_c: false,
        dis_s: true,
        dis_c: true,
    };

    pub fn includes(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Decoder => self.decoder,
            ParamGroup::MulS => self.mul_s,
            ParamGroup::MulC => self.mul_c,
            ParamGroup::DisS => self.dis_s,
            ParamGroup::DisC => self.dis_c,
        }
    }
}

/// Model dimensions, fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSizes {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub style: usize,
    pub content: usize,
    pub bow: usize,
    pub mode: ModelMode,
    pub max_len: usize,
}

impl ModelSizes {
    pub fn latent(&self) -> usize {
        self.style + self.content
    }
}

/// All trainable tensors, organized by named group.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub sizes: ModelSizes,
    // encoder group
    pub embedding: Tensor,
    pub enc: GruParams,
    pub enc_style: LinearParams,
    pub enc_content: LinearParams,
    pub enc_style_logvar: Option<LinearParams>,
    pub enc_content_logvar: Option<LinearParams>,
    // decoder group
    pub dec_init: LinearParams,
    pub dec: GruParams,
    pub dec_out: LinearParams,
    // classifier heads
    pub mul_s: LinearParams,
    pub dis_s: LinearParams,
    pub mul_c: LinearParams,
    pub dis_c: LinearParams,
}

impl ModelParams {
    /// Fresh parameters. `embedding` overrides the random init when given
    /// (e.g. a pretrained table); its shape must be vocab × embed.
    pub fn new(sizes: ModelSizes, rng: &mut impl Rng, embedding: Option<Tensor>) -> ModelParams {
        let embedding = match embedding {
            Some(e) => {
                assert_eq!(
                    (e.rows(), e.cols()),
                    (sizes.vocab, sizes.embed),
                    "embedding table shape mismatch"
                );
                e
            }
            None => Tensor::uniform(sizes.vocab, sizes.embed, -0.08, 0.08, rng),
        };
        let vae = sizes.mode == ModelMode::Vae;
        ModelParams {
            sizes,
            embedding,
            enc: GruParams::new(sizes.hidden, sizes.embed, rng),
            enc_style: LinearParams::new(sizes.style, sizes.hidden, rng),
            enc_content: LinearParams::new(sizes.content, sizes.hidden, rng),
            enc_style_logvar: vae.then(|| LinearParams::new(sizes.style, sizes.hidden, rng)),
            enc_content_logvar: vae.then(|| LinearParams::new(sizes.content, sizes.hidden, rng)),
            dec_init: LinearParams::new(sizes.hidden, sizes.latent(), rng),
            dec: GruParams::new(sizes.hidden, sizes.embed, rng),
            dec_out: LinearParams::new(sizes.vocab, sizes.hidden + sizes.latent(), rng),
            mul_s: LinearParams::new(2, sizes.style, rng),
            dis_s: LinearParams::new(2, sizes.content, rng),
            mul_c: LinearParams::new(sizes.bow, sizes.content, rng),
            dis_c: LinearParams::new(sizes.bow, sizes.style, rng),
        }
    }

    /// Visit every tensor with its group and stable name. The (group, name)
    /// pairs partition the parameter set; checkpointing and the optimizers
    /// rely on this ordering being fixed.
    pub fn for_each_tensor(&self, mut f: impl FnMut(ParamGroup, &str, &Tensor)) {
        let gru = |f: &mut dyn FnMut(ParamGroup, &str, &Tensor), g: ParamGroup, p: &str, t: &GruParams| {
            f(g, &format!("{p}.w_z"), &t.w_z);
            f(g, &format!("{p}.u_z"), &t.u_z);
            f(g, &format!("{p}.b_z"), &t.b_z);
            f(g, &format!("{p}.w_r"), &t.w_r);
            f(g, &format!("{p}.u_r"), &t.u_r);
            f(g, &format!("{p}.b_r"), &t.b_r);
            f(g, &format!("{p}.w_h"), &t.w_h);
            f(g, &format!("{p}.u_h"), &t.u_h);
            f(g, &format!("{p}.b_h"), &t.b_h);
        };
        let lin = |f: &mut dyn FnMut(ParamGroup, &str, &Tensor), g: ParamGroup, p: &str, t: &LinearParams| {
            f(g, &format!("{p}.w"), &t.w);
            f(g, &format!("{p}.b"), &t.b);
        };
        f(ParamGroup::Encoder, "embedding", &self.embedding);
        gru(&mut f, ParamGroup::Encoder, "enc", &self.enc);
        lin(&mut f, ParamGroup::Encoder, "enc_style", &self.enc_style);
        lin(&mut f, ParamGroup::Encoder, "enc_content", &self.enc_content);
        if let Some(lv) = &self.enc_style_logvar {
            lin(&mut f, ParamGroup::Encoder, "enc_style_logvar", lv);
        }
        if let Some(lv) = &self.enc_content_logvar {
            lin(&mut f, ParamGroup::Encoder, "enc_content_logvar", lv);
        }
        lin(&mut f, ParamGroup::Decoder, "dec_init", &self.dec_init);
        gru(&mut f, ParamGroup::Decoder, "dec", &self.dec);
        lin(&mut f, ParamGroup::Decoder, "dec_out", &self.dec_out);
        lin(&mut f, ParamGroup::MulS, "mul_s", &self.mul_s);
        lin(&mut f, ParamGroup::DisS, "dis_s", &self.dis_s);
        lin(&mut f, ParamGroup::MulC, "mul_c", &self.mul_c);
        lin(&mut f, ParamGroup::DisC, "dis_c", &self.dis_c);
    }

    /// Mutable tensor references for a group, in `for_each_tensor` order.
    pub fn group_tensors_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor> {
        fn gru<'a>(out: &mut Vec<&'a mut Tensor>, t: &'a mut GruParams) {
            let GruParams {
                w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h,
            } = t;
            out.extend([w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h]);
        }
        fn lin<'a>(out: &mut Vec<&'a mut Tensor>, t: &'a mut LinearParams) {
            out.push(&mut t.w);
            out.push(&mut t.b);
        }
        let mut out: Vec<&mut Tensor> = Vec::new();
        match group {
            ParamGroup::Encoder => {
                out.push(&mut self.embedding);
                gru(&mut out, &mut self.enc);
                lin(&mut out, &mut self.enc_style);
                lin(&mut out, &mut self.enc_content);
                if let Some(lv) = &mut self.enc_style_logvar {
                    lin(&mut out, lv);
                }
                if let Some(lv) = &mut self.enc_content_logvar {
                    lin(&mut out, lv);
                }
            }
            ParamGroup::Decoder => {
                lin(&mut out, &mut self.dec_init);
                gru(&mut out, &mut self.dec);
                lin(&mut out, &mut self.dec_out);
            }
            ParamGroup::MulS => lin(&mut out, &mut self.mul_s),
            ParamGroup::DisS => lin(&mut out, &mut self.dis_s),
            ParamGroup::MulC => lin(&mut out, &mut self.mul_c),
            ParamGroup::DisC => lin(&mut out, &mut self.dis_c),
        }
        out
    }

    /// Bind all parameters onto a tape; groups selected by `trainable`
    /// become leaves (receive gradients), the rest constants.
    pub fn bind(&self, tape: &mut Tape, trainable: Trainable) -> ModelVars {
        let e = trainable.encoder;
        let d = trainable.decoder;
        ModelVars {
            embedding: if e {
                tape.leaf(self.embedding.clone())
            } else {
                tape.constant(self.embedding.clone())
            },
            enc: self.enc.bind(tape, e),
            enc_style: self.enc_style.bind(tape, e),
            enc_content: self.enc_content.bind(tape, e),
            enc_style_logvar: self.enc_style_logvar.as_ref().map(|p| p.bind(tape, e)),
            enc_content_logvar: self.enc_content_logvar.as_ref().map(|p| p.bind(tape, e)),
            dec_init: self.dec_init.bind(tape, d),
            dec: self.dec.bind(tape, d),
            dec_out: self.dec_out.bind(tape, d),
            mul_s: self.mul_s.bind(tape, trainable.mul_s),
            dis_s: self.dis_s.bind(tape, trainable.dis_s),
            mul_c: self.mul_c.bind(tape, trainable.mul_c),
            dis_c: self.dis_c.bind(tape, trainable.dis_c),
        }
    }

    /// Leaf gradients for a group after `backward`, in group order.
    pub fn group_grads(&self, tape: &Tape, vars: &ModelVars, group: ParamGroup) -> Vec<Tensor> {
        vars.group_vars(group).iter().map(|&v| tape.grad(v)).collect()
    }
}

/// Tape-bound handles mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embedding: Var,
    pub enc: GruVars,
    pub enc_style: LinearVars,
    pub enc_content: LinearVars,
    pub enc_style_logvar: Option<LinearVars>,
    pub enc_content_logvar: Option<LinearVars>,
    pub dec_init: LinearVars,
    pub dec: GruVars,
    pub dec_out: LinearVars,
    pub mul_s: LinearVars,
    pub dis_s: LinearVars,
    pub mul_c: LinearVars,
    pub dis_c: LinearVars,
}

impl ModelVars {
    /// Vars of a group in the same order as `group_tensors_mut`.
    pub fn group_vars(&self, group: ParamGroup) -> Vec<Var> {
        let gru = |g: &GruVars| vec![g.w_z, g.u_z, g.b_z, g.w_r, g.u_r, g.b_r, g.w_h, g.u_h, g.b_h];
        let lin = |l: &LinearVars| vec![l.w, l.b];
        match group {
            ParamGroup::Encoder => {
                let mut v = vec![self.embedding];
                v.extend(gru(&self.enc));
                v.extend(lin(&self.enc_style));
                v.extend(lin(&self.enc_content));
                if let Some(lv) = &self.enc_style_logvar {
                    v.extend(lin(lv));
                }
                if let Some(lv) = &self.enc_content_logvar {
                    v.extend(lin(lv));
                }
                v
            }
            ParamGroup::Decoder => {
                let mut v = lin(&self.dec_init);
                v.extend(gru(&self.dec));
                v.extend(lin(&self.dec_out));
                v
            }
            ParamGroup::MulS => lin(&self.mul_s),
            ParamGroup::DisS => lin(&self.dis_s),
            ParamGroup::MulC => lin(&self.mul_c),
            ParamGroup::DisC => lin(&self.dis_c),
        }
    }
}

/// Gaussian posterior handles for one latent subspace.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub mu: Var,
    pub logvar: Var,
}

/// Encoder output on a tape.
#[derive(Clone, Debug)]
pub struct EncodeOut {
    pub style: Var,
    pub content: Var,
    pub post_s: Option<PosteriorVars>,
    pub post_c: Option<PosteriorVars>,
}

/// Inference-time latent state (plain values).
#[derive(Clone, Debug)]
pub struct LatentState {
    pub style: Vec<f64>,
    pub content: Vec<f64>,
    pub post_s: Option<(Vec<f64>, Vec<f64>)>,
    pub post_c: Option<(Vec<f64>, Vec<f64>)>,
    pub sampled: bool,
}

impl LatentState {
    pub fn latent(&self) -> Vec<f64> {
        let mut h = self.style.clone();
        h.extend_from_slice(&self.content);
        h
    }
}

/// Per-subspace standard-normal noise for the VAE sampling path.
#[derive(Clone, Debug)]
pub struct EncodeNoise {
    pub style: Vec<f64>,
    pub content: Vec<f64>,
}

impl EncodeNoise {
    pub fn zeros(sizes: &ModelSizes) -> EncodeNoise {
        EncodeNoise {
            style: vec![0.0; sizes.style],
            content: vec![0.0; sizes.content],
        }
    }

    pub fn sample(sizes: &ModelSizes, rng: &mut impl Rng) -> EncodeNoise {
        let draw = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    // Box-Muller from two uniforms
                    let u1: f64 = loop {
                        let u = rand::Rng::random::<f64>(rng);
                        if u > 0.0 {
                            break u;
                        }
                    };
                    let u2: f64 = rand::Rng::random::<f64>(rng);
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect()
        };
        EncodeNoise {
            style: draw(sizes.style, rng),
            content: draw(sizes.content, rng),
        }
    }
}

/// Run the encoder over a token sequence. DAE: s and c are deterministic
/// linear maps of the final GRU state. VAE: per-subspace (μ, logvar) heads,
/// sampled via reparameterization with the provided noise; noise defaults
/// to zero, which yields the posterior means.
pub fn encode(
    tape: &mut Tape,
    vars: &ModelVars,
    sizes: &ModelSizes,
    tokens: &[u32],
    noise: Option<&EncodeNoise>,
) -> EncodeOut {
    assert!(!tokens.is_empty(), "encode: empty token sequence");
    let mut h = tape.constant(Tensor::zeros(sizes.hidden, 1));
    for &tok in tokens {
        let x = tape.row(vars.embedding, tok as usize);
        h = gru_step(tape, &vars.enc, x, h);
    }
    match (&vars.enc_style_logvar, &vars.enc_content_logvar) {
        (Some(s_lv), Some(c_lv)) => {
            let mu_s = linear(tape, &vars.enc_style, h);
            let lv_s = linear(tape, s_lv, h);
            let mu_c = linear(tape, &vars.enc_content, h);
            let lv_c = linear(tape, c_lv, h);
            let zero = EncodeNoise::zeros(sizes);
            let n = noise.unwrap_or(&zero);
            let style = tape.reparam(mu_s, lv_s, n.style.clone());
            let content = tape.reparam(mu_c, lv_c, n.content.clone());
            EncodeOut {
                style,
                content,
                post_s: Some(PosteriorVars { mu: mu_s, logvar: lv_s }),
                post_c: Some(PosteriorVars { mu: mu_c, logvar: lv_c }),
            }
        }
        _ => EncodeOut {
            style: linear(tape, &vars.enc_style, h),
            content: linear(tape, &vars.enc_content, h),
            post_s: None,
            post_c: None,
        },
    }
}

/// Encode for inference: fresh tape, zero noise (VAE posterior means).
pub fn encode_latent(params: &ModelParams, tokens: &[u32]) -> LatentState {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, Trainable::NONE);
    let out = encode(&mut tape, &vars, &params.sizes, tokens, None);
    LatentState {
        style: tape.value(out.style).data().to_vec(),
        content: tape.value(out.content).data().to_vec(),
        post_s: out
            .post_s
            .map(|p| (tape.value(p.mu).data().to_vec(), tape.value(p.logvar).data().to_vec())),
        post_c: out
            .post_c
            .map(|p| (tape.value(p.mu).data().to_vec(), tape.value(p.logvar).data().to_vec())),
        sampled: false,
    }
}

/// Teacher-forced decode: one output logit vector per gold position. Step t
/// conditions on the gold prefix; the first input is the start marker.
pub fn decode_teacher_forced(
    tape: &mut Tape,
    vars: &ModelVars,
    sizes: &ModelSizes,
    latent: Var,
    gold: &[u32],
) -> Vec<Var> {
    assert!(!gold.is_empty(), "decode: empty gold sequence");
    assert!(
        gold.len() <= sizes.max_len,
        "decode: gold length {} exceeds configured max {}",
        gold.len(),
        sizes.max_len
    );
    let mut hidden = linear(tape, &vars.dec_init, latent);
    let mut prev = SOS;
    let mut logits = Vec::with_capacity(gold.len());
    for &tok in gold {
        let x = tape.row(vars.embedding, prev as usize);
        hidden = gru_step(tape, &vars.dec, x, hidden);
        let cat = tape.concat(hidden, latent);
        logits.push(linear(tape, &vars.dec_out, cat));
        prev = tok;
    }
    logits
}

/// Greedy argmax decoding from a latent vector; stops after emitting the
/// end marker or at `max_len` tokens. Deterministic.
pub fn decode_greedy(params: &ModelParams, latent: &[f64], max_len: usize) -> Vec<u32> {
    assert!(max_len >= 1, "decode_greedy: max_len must be >= 1");
    assert_eq!(latent.len(), params.sizes.latent(), "latent dimension mismatch");
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, Trainable::NONE);
    let h = tape.constant(Tensor::vector(latent.to_vec()));
    let mut hidden = linear(&mut tape, &vars.dec_init, h);
    let mut prev = SOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let x = tape.row(vars.embedding, prev as usize);
        hidden = gru_step(&mut tape, &vars.dec, x, hidden);
        let cat = tape.concat(hidden, h);
        let logits = linear(&mut tape, &vars.dec_out, cat);
        let next = argmax(tape.value(logits).data()) as u32;
        out.push(next);
        if next == EOS {
            break;
        }
        prev = next;
    }
    out
}

/// softmax(W v + b) for a classifier head.
pub fn head_forward(tape: &mut Tape, head: &LinearVars, v: Var) -> Var {
    let z = linear(tape, head, v);
    tape.softmax(z)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}
