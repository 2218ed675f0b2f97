//! Watermark codec: an embedder that hides a fixed bit-string in an image as
//! a low-amplitude residual, and an extractor that recovers it. The trained
//! embedder turns any benign image into a sample-specific invisible trigger
//! carrier.

use candle_core::{DType, Device, Tensor};
use candle_nn::loss::binary_cross_entropy_with_logit;
use candle_nn::optim::Optimizer;
use candle_nn::ops::sigmoid;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{batch_to_tensor, tensor_to_images, Image, CANONICAL_SIZE};
use crate::nn::{
    adam, lr_at_epoch, scalar_loss, sgd, Conv2dLayer, GroupNormLayer, LinearLayer, ParamStore,
};
use crate::rng;

pub const EMBEDDER_ARCH: &str = "stego-unet-v1";
pub const EXTRACTOR_ARCH: &str = "stego-conv-v1";

/// Fixed-length binary payload; attacker-chosen, content-unconstrained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkMessage {
    bits: Vec<bool>,
}

impl WatermarkMessage {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Argument("message must have at least one bit".into()));
        }
        Ok(WatermarkMessage { bits })
    }

    pub fn random(len: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::sub_rng(seed, 0x5e55a6e);
        WatermarkMessage::new((0..len).map(|_| rng.random_range(0..2) == 1).collect())
    }

    /// Parse from a string of `0`/`1` characters.
    pub fn from_bit_string(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Argument(format!("bad message bit `{other}`"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        WatermarkMessage::new(bits)
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn to_tensor(&self, rows: usize, device: &Device) -> Result<Tensor> {
        let row: Vec<f32> = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mut buf = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            buf.extend_from_slice(&row);
        }
        Ok(Tensor::from_vec(buf, (rows, self.bits.len()), device)?)
    }
}

/// Training hyperparameters for the codec. The four loss scale factors
/// weight, in order: residual energy, perceptual feature distance, message
/// reconstruction cross-entropy, and the realism critic.
#[derive(Debug, Clone)]
pub struct CodecTrainConfig {
    pub message_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub residual_weight: f64,
    pub perceptual_weight: f64,
    pub message_weight: f64,
    pub critic_weight: f64,
    /// Adam rate for the embedder and extractor.
    pub adam_lr: f64,
    /// SGD rate for the critic.
    pub sgd_lr: f64,
    /// Epochs (1-based) after which both rates decay by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Epochs over which the image-realism weights (residual, perceptual,
    /// critic) ramp linearly from zero to their configured values; the
    /// message weight is always in full effect. Lets the message pathway
    /// form before amplitude pressure kicks in.
    pub warmup_epochs: usize,
    /// Fraction of the training images held out for the bit-accuracy check.
    pub holdout_fraction: f64,
    /// Held-out bit accuracy below this flags a quality warning.
    pub bit_accuracy_floor: f64,
    /// Hard cap on per-pixel residual amplitude (tanh-bounded output).
    pub residual_bound: f64,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        CodecTrainConfig {
            message_len: 16,
            epochs: 25,
            batch_size: 32,
            residual_weight: 2.0,
            perceptual_weight: 1.5,
            message_weight: 0.5,
            critic_weight: 1.5,
            adam_lr: 1e-4,
            sgd_lr: 1e-3,
            decay_epochs: vec![15, 20],
            decay_factor: 0.1,
            warmup_epochs: 8,
            holdout_fraction: 0.2,
            bit_accuracy_floor: 0.95,
            residual_bound: 0.25,
            seed: 0,
        }
    }
}

impl CodecTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.message_len == 0 {
            return Err(Error::Argument("message_len must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        for w in [
            self.residual_weight,
            self.perceptual_weight,
            self.message_weight,
            self.critic_weight,
        ] {
            if w < 0.0 {
                return Err(Error::Argument("loss scale factors must be >= 0".into()));
            }
        }
        if let Some(&bad) = self.decay_epochs.iter().find(|&&e| e >= self.epochs) {
            return Err(Error::Argument(format!(
                "decay epoch {bad} must be below total epochs {}",
                self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Argument("holdout_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

struct EmbedderNet {
    msg_proj: LinearLayer,
    enc1: Conv2dLayer,
    enc1n: GroupNormLayer,
    enc2: Conv2dLayer,
    enc2n: GroupNormLayer,
    enc3: Conv2dLayer,
    enc3n: GroupNormLayer,
    dec2: Conv2dLayer,
    dec2n: GroupNormLayer,
    dec1: Conv2dLayer,
    dec1n: GroupNormLayer,
    out: Conv2dLayer,
    residual_bound: f64,
}

impl EmbedderNet {
    fn new(
        store: &mut ParamStore,
        message_len: usize,
        residual_bound: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(EmbedderNet {
            msg_proj: LinearLayer::new(store, "emb.msg", message_len, 3 * 8 * 8, rng)?,
            enc1: Conv2dLayer::new(store, "emb.enc1", 6, 16, 3, 1, 1, rng)?,
            enc1n: GroupNormLayer::new(store, "emb.enc1n", 16, 4, rng)?,
            enc2: Conv2dLayer::new(store, "emb.enc2", 16, 32, 3, 2, 1, rng)?,
            enc2n: GroupNormLayer::new(store, "emb.enc2n", 32, 4, rng)?,
            enc3: Conv2dLayer::new(store, "emb.enc3", 32, 48, 3, 2, 1, rng)?,
            enc3n: GroupNormLayer::new(store, "emb.enc3n", 48, 4, rng)?,
            dec2: Conv2dLayer::new(store, "emb.dec2", 48 + 32, 32, 3, 1, 1, rng)?,
            dec2n: GroupNormLayer::new(store, "emb.dec2n", 32, 4, rng)?,
            dec1: Conv2dLayer::new(store, "emb.dec1", 32 + 16, 16, 3, 1, 1, rng)?,
            dec1n: GroupNormLayer::new(store, "emb.dec1n", 16, 4, rng)?,
            out: Conv2dLayer::new(store, "emb.out", 16, 3, 3, 1, 1, rng)?,
            residual_bound,
        })
    }

    /// Residual image for (image batch, message batch); bounded to
    /// `[-residual_bound, residual_bound]` by a scaled tanh.
    fn forward(&self, imgs: &Tensor, msgs: &Tensor) -> Result<Tensor> {
        let n = imgs.dims4()?.0;
        let m = self
            .msg_proj
            .forward(msgs)?
            .reshape((n, 3, 8, 8))?
            .upsample_nearest2d(CANONICAL_SIZE, CANONICAL_SIZE)?;
        let x = Tensor::cat(&[imgs, &m], 1)?;
        let e1 = self.enc1n.forward(&self.enc1.forward(&x)?)?.relu()?;
        let e2 = self.enc2n.forward(&self.enc2.forward(&e1)?)?.relu()?;
        let e3 = self.enc3n.forward(&self.enc3.forward(&e2)?)?.relu()?;

        let u2 = e3.upsample_nearest2d(16, 16)?;
        let d2 = Tensor::cat(&[&u2, &e2], 1)?;
        let d2 = self.dec2n.forward(&self.dec2.forward(&d2)?)?.relu()?;

        let u1 = d2.upsample_nearest2d(CANONICAL_SIZE, CANONICAL_SIZE)?;
        let d1 = Tensor::cat(&[&u1, &e1], 1)?;
        let d1 = self.dec1n.forward(&self.dec1.forward(&d1)?)?.relu()?;

        let raw = self.out.forward(&d1)?;
        Ok((raw.tanh()? * self.residual_bound)?)
    }
}

struct ExtractorNet {
    c1: Conv2dLayer,
    n1: GroupNormLayer,
    c2: Conv2dLayer,
    n2: GroupNormLayer,
    c3: Conv2dLayer,
    n3: GroupNormLayer,
    f1: LinearLayer,
    f2: LinearLayer,
}

impl ExtractorNet {
    fn new(store: &mut ParamStore, message_len: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(ExtractorNet {
            c1: Conv2dLayer::new(store, "ext.c1", 3, 16, 3, 2, 1, rng)?,
            n1: GroupNormLayer::new(store, "ext.n1", 16, 4, rng)?,
            c2: Conv2dLayer::new(store, "ext.c2", 16, 32, 3, 2, 1, rng)?,
            n2: GroupNormLayer::new(store, "ext.n2", 32, 4, rng)?,
            c3: Conv2dLayer::new(store, "ext.c3", 32, 64, 3, 2, 1, rng)?,
            n3: GroupNormLayer::new(store, "ext.n3", 64, 4, rng)?,
            f1: LinearLayer::new(store, "ext.f1", 64 * 4 * 4, 128, rng)?,
            f2: LinearLayer::new(store, "ext.f2", 128, message_len, rng)?,
        })
    }

    /// Soft bit logits for an image batch.
    fn forward(&self, imgs: &Tensor) -> Result<Tensor> {
        let n = imgs.dims4()?.0;
        let h = self.n1.forward(&self.c1.forward(imgs)?)?.relu()?;
        let h = self.n2.forward(&self.c2.forward(&h)?)?.relu()?;
        let h = self.n3.forward(&self.c3.forward(&h)?)?.relu()?;
        let h = h.reshape((n, 64 * 4 * 4))?;
        self.f2.forward(&self.f1.forward(&h)?.relu()?)
    }
}

/// Small convnet judging cover vs. stego realism during training.
struct CriticNet {
    c1: Conv2dLayer,
    c2: Conv2dLayer,
    f: LinearLayer,
}

impl CriticNet {
    fn new(store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        Ok(CriticNet {
            c1: Conv2dLayer::new(store, "critic.c1", 3, 8, 3, 2, 1, rng)?,
            c2: Conv2dLayer::new(store, "critic.c2", 8, 16, 3, 2, 1, rng)?,
            f: LinearLayer::new(store, "critic.f", 16 * 8 * 8, 1, rng)?,
        })
    }

    fn forward(&self, imgs: &Tensor) -> Result<Tensor> {
        let n = imgs.dims4()?.0;
        let h = self.c1.forward(imgs)?.relu()?;
        let h = self.c2.forward(&h)?.relu()?;
        self.f.forward(&h.reshape((n, 16 * 8 * 8))?)
    }
}

/// Fixed random conv features standing in for a learned perceptual metric at
/// desk scale; never trained.
struct PerceptualNet {
    c1: Conv2dLayer,
    c2: Conv2dLayer,
}

impl PerceptualNet {
    fn new(store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        Ok(PerceptualNet {
            c1: Conv2dLayer::new(store, "perc.c1", 3, 8, 3, 2, 1, rng)?,
            c2: Conv2dLayer::new(store, "perc.c2", 8, 16, 3, 2, 1, rng)?,
        })
    }

    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let fa1 = self.c1.forward(a)?.relu()?;
        let fb1 = self.c1.forward(b)?.relu()?;
        let fa2 = self.c2.forward(&fa1)?.relu()?;
        let fb2 = self.c2.forward(&fb1)?.relu()?;
        let d1 = (fa1 - fb1)?.sqr()?.mean_all()?;
        let d2 = (fa2 - fb2)?.sqr()?.mean_all()?;
        Ok((d1 + d2)?)
    }
}

/// Result metadata recorded with a trained codec.
#[derive(Debug, Clone)]
pub struct CodecMeta {
    /// Held-out bit accuracy on embedded images.
    pub bit_accuracy: f64,
    /// Held-out bit accuracy on unmarked images (chance level expected).
    pub clean_bit_accuracy: f64,
    /// Set when `bit_accuracy` missed the configured floor.
    pub quality_warning: bool,
    /// Note on the perceptual-loss implementation in effect.
    pub perceptual_impl: String,
}

pub struct WatermarkCodec {
    emb_store: ParamStore,
    embedder: EmbedderNet,
    ext_store: ParamStore,
    extractor: ExtractorNet,
    message_len: usize,
    strength: f64,
    residual_bound: f64,
    pub meta: CodecMeta,
}

/// Per-epoch loss trace rows from codec training.
#[derive(Debug, Clone)]
pub struct CodecTrace {
    pub epoch: usize,
    pub residual: f64,
    pub perceptual: f64,
    pub message: f64,
    pub critic_fool: f64,
    pub critic: f64,
    pub learning_rate: f64,
}

impl WatermarkCodec {
    /// Untrained codec (random parameters); mainly useful for shape tests and
    /// as the load target for checkpoints.
    pub fn init(message_len: usize, residual_bound: f64, seed: u64) -> Result<Self> {
        let mut emb_store = ParamStore::new(Device::Cpu, DType::F32);
        let embedder = EmbedderNet::new(
            &mut emb_store,
            message_len,
            residual_bound,
            &mut rng::sub_rng(seed, 0xe3bed),
        )?;
        let mut ext_store = ParamStore::new(Device::Cpu, DType::F32);
        let extractor =
            ExtractorNet::new(&mut ext_store, message_len, &mut rng::sub_rng(seed, 0xe87a))?;
        Ok(WatermarkCodec {
            emb_store,
            embedder,
            ext_store,
            extractor,
            message_len,
            strength: 1.0,
            residual_bound,
            meta: CodecMeta {
                bit_accuracy: 0.0,
                clean_bit_accuracy: 0.0,
                quality_warning: true,
                perceptual_impl: "fixed-random-conv-features".into(),
            },
        })
    }

    pub fn message_len(&self) -> usize {
        self.message_len
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// Post-training residual multiplier applied by `embed`.
    pub fn set_strength(&mut self, strength: f64) {
        self.strength = strength;
    }

    pub fn residual_bound(&self) -> f64 {
        self.residual_bound
    }

    pub fn export_params(
        &self,
    ) -> Result<(
        Vec<(String, Vec<usize>, Vec<f32>)>,
        Vec<(String, Vec<usize>, Vec<f32>)>,
    )> {
        Ok((self.emb_store.export()?, self.ext_store.export()?))
    }

    pub fn import_params(
        &mut self,
        embedder: &[(String, Vec<usize>, Vec<f32>)],
        extractor: &[(String, Vec<usize>, Vec<f32>)],
    ) -> Result<()> {
        self.emb_store.import(embedder)?;
        self.ext_store.import(extractor)?;
        Ok(())
    }

    fn check_message(&self, msg: &WatermarkMessage) -> Result<()> {
        if msg.len() != self.message_len {
            return Err(Error::Argument(format!(
                "message length {} does not match codec length {}",
                msg.len(),
                self.message_len
            )));
        }
        Ok(())
    }

    /// Raw residuals for a batch (strength not applied).
    fn residual_batch(&self, imgs: &[Image], msg: &WatermarkMessage) -> Result<Tensor> {
        let device = Device::Cpu;
        let x = batch_to_tensor(imgs, &device)?;
        let m = msg.to_tensor(imgs.len(), &device)?;
        self.embedder.forward(&x, &m)
    }
}

/// Embed the message into one image: `stego = clamp(img + strength * residual)`.
/// Returns the stego image and the raw residual for inspection. Strength zero
/// returns the input bit-exactly.
pub fn embed(
    codec: &WatermarkCodec,
    img: &Image,
    msg: &WatermarkMessage,
) -> Result<(Image, Image)> {
    let mut out = embed_batch(codec, std::slice::from_ref(img), msg)?;
    Ok(out.pop().expect("one output per input"))
}

/// Element-wise `embed` over a batch; order preserved.
pub fn embed_batch(
    codec: &WatermarkCodec,
    imgs: &[Image],
    msg: &WatermarkMessage,
) -> Result<Vec<(Image, Image)>> {
    codec.check_message(msg)?;
    if imgs.is_empty() {
        return Ok(Vec::new());
    }
    for img in imgs {
        if !img.is_canonical() {
            return Err(Error::Argument("embed expects canonical 32x32 images".into()));
        }
    }
    let residuals = tensor_to_images(&codec.residual_batch(imgs, msg)?.clamp(-1.0, 1.0)?)?;
    let mut out = Vec::with_capacity(imgs.len());
    for (img, residual) in imgs.iter().zip(residuals) {
        let stego = if codec.strength == 0.0 {
            img.clone()
        } else {
            let mut s = img.clone();
            let strength = codec.strength as f32;
            for (v, r) in s.as_mut_slice().iter_mut().zip(residual.as_slice()) {
                *v = (*v + strength * r).clamp(0.0, 1.0);
            }
            s
        };
        out.push((stego, residual));
    }
    Ok(out)
}

/// Stego images only, in input order.
pub fn build_backdoored_set(
    codec: &WatermarkCodec,
    imgs: &[Image],
    msg: &WatermarkMessage,
) -> Result<Vec<Image>> {
    Ok(embed_batch(codec, imgs, msg)?
        .into_iter()
        .map(|(stego, _)| stego)
        .collect())
}

/// Recover (bits, per-bit confidence) from an image. Bits are the
/// confidences thresholded at 0.5.
pub fn extract(codec: &WatermarkCodec, img: &Image) -> Result<(Vec<bool>, Vec<f32>)> {
    let mut out = extract_batch(codec, std::slice::from_ref(img))?;
    Ok(out.pop().expect("one output per input"))
}

pub fn extract_batch(
    codec: &WatermarkCodec,
    imgs: &[Image],
) -> Result<Vec<(Vec<bool>, Vec<f32>)>> {
    if imgs.is_empty() {
        return Ok(Vec::new());
    }
    let x = batch_to_tensor(imgs, &Device::Cpu)?;
    let conf = sigmoid(&codec.extractor.forward(&x)?)?.to_vec2::<f32>()?;
    Ok(conf
        .into_iter()
        .map(|row| {
            let bits = row.iter().map(|&c| c > 0.5).collect();
            (bits, row)
        })
        .collect())
}

fn random_messages(rows: usize, len: usize, seed: u64, device: &Device) -> Result<Tensor> {
    let mut rng = rng::rng_from(seed);
    let buf: Vec<f32> = (0..rows * len)
        .map(|_| if rng.random_range(0..2) == 1 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(buf, (rows, len), device)?)
}

/// Fraction of positions where `bits` matches `msg`.
pub fn bit_accuracy(bits: &[bool], msg: &WatermarkMessage) -> Result<f64> {
    if bits.len() != msg.len() {
        return Err(Error::Argument("bit length mismatch".into()));
    }
    let matches = bits.iter().zip(msg.bits()).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / bits.len() as f64)
}

/// Jointly train embedder and extractor (plus the critic) on the watermark
/// dataset, minimizing the four weighted losses. Training messages are drawn
/// fresh per sample so the extractor learns to read whatever is embedded
/// rather than memorizing one payload; `msg` is the deployment message used
/// for the held-out accuracy measurement. Embedder and extractor train under
/// Adam, the critic under SGD, with both rates stepped down by
/// `decay_factor` after each listed decay epoch.
pub fn train_codec(
    images: &[Image],
    msg: &WatermarkMessage,
    cfg: &CodecTrainConfig,
) -> Result<(WatermarkCodec, Vec<CodecTrace>)> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Argument("codec training dataset is empty".into()));
    }
    if msg.len() != cfg.message_len {
        return Err(Error::Argument(format!(
            "message length {} does not match config message_len {}",
            msg.len(),
            cfg.message_len
        )));
    }

    let device = Device::Cpu;
    let mut codec = WatermarkCodec::init(cfg.message_len, cfg.residual_bound, cfg.seed)?;

    let mut critic_store = ParamStore::new(Device::Cpu, DType::F32);
    let critic = CriticNet::new(&mut critic_store, &mut rng::sub_rng(cfg.seed, 0xc617))?;
    let mut perc_store = ParamStore::new(Device::Cpu, DType::F32);
    let perceptual = PerceptualNet::new(&mut perc_store, &mut rng::sub_rng(cfg.seed, 0x9e6c))?;

    // held-out split for the post-training accuracy measurement
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng::sub_rng(cfg.seed, 0x5971f));
    let holdout_len = ((images.len() as f64 * cfg.holdout_fraction) as usize).min(images.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(holdout_len);
    let train_images: Vec<Image> = train_idx.iter().map(|&i| images[i].clone()).collect();
    let holdout_images: Vec<Image> = holdout_idx.iter().map(|&i| images[i].clone()).collect();
    if train_images.is_empty() {
        return Err(Error::Argument("no training images after holdout split".into()));
    }

    let mut main_vars = codec.emb_store.vars();
    main_vars.extend(codec.ext_store.vars());
    let mut opt_main = adam(main_vars, cfg.adam_lr)?;
    let mut opt_critic = sgd(critic_store.vars(), cfg.sgd_lr)?;

    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr_scale =
            lr_at_epoch(1.0, &cfg.decay_epochs, cfg.decay_factor, epoch);
        opt_main.set_learning_rate(cfg.adam_lr * lr_scale);
        opt_critic.set_learning_rate(cfg.sgd_lr * lr_scale);

        let mut order: Vec<usize> = (0..train_images.len()).collect();
        order.shuffle(&mut rng::sub_rng(cfg.seed, 0xc0dec_000 + epoch as u64));

        let ramp = if cfg.warmup_epochs == 0 {
            1.0
        } else {
            (epoch as f64 / cfg.warmup_epochs as f64).min(1.0)
        };
        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        for (step, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Image> = batch_idx.iter().map(|&i| train_images[i].clone()).collect();
            let x = batch_to_tensor(&batch, &device)?;
            let m = random_messages(
                batch.len(),
                cfg.message_len,
                rng::mix(cfg.seed, 0xb175_0000 + (epoch as u64) * 0x1_0000 + step as u64),
                &device,
            )?;

            let residual = codec.embedder.forward(&x, &m)?;
            let stego = (x.clone() + &residual)?.clamp(0.0, 1.0)?;

            // L2-norm (rms) regularization keeps squeeze pressure constant
            // at small amplitudes, unlike mean squared error
            let loss_res = (residual.sqr()?.mean_all()? + 1e-8)?.sqrt()?;
            let loss_perc = perceptual.distance(&stego, &x)?;
            let logits = codec.extractor.forward(&stego)?;
            let loss_msg = binary_cross_entropy_with_logit(&logits, &m)?;
            let ones = Tensor::ones(batch.len(), DType::F32, &device)?.reshape((batch.len(), 1))?;
            let zeros = ones.zeros_like()?;
            let loss_fool = binary_cross_entropy_with_logit(&critic.forward(&stego)?, &ones)?;

            let total = ((loss_res.clone() * (ramp * cfg.residual_weight))?
                + (loss_perc.clone() * (ramp * cfg.perceptual_weight))?)?;
            let total = (total
                + ((loss_msg.clone() * cfg.message_weight)?
                    + (loss_fool.clone() * (ramp * cfg.critic_weight))?)?)?;

            let report_err = |e: Error| match e {
                Error::Numeric(msg) => Error::Training { epoch, step, msg },
                other => other,
            };
            opt_main.backward_step(&total)?;

            // critic update on detached stego images
            let d_real = critic.forward(&x)?;
            let d_fake = critic.forward(&stego.detach())?;
            let loss_critic = (binary_cross_entropy_with_logit(&d_real, &ones)?
                + binary_cross_entropy_with_logit(&d_fake, &zeros)?)?;
            opt_critic.backward_step(&loss_critic)?;

            sums[0] += scalar_loss(&loss_res).map_err(report_err)?;
            sums[1] += scalar_loss(&loss_perc).map_err(report_err)?;
            sums[2] += scalar_loss(&loss_msg).map_err(report_err)?;
            sums[3] += scalar_loss(&loss_fool).map_err(report_err)?;
            sums[4] += scalar_loss(&loss_critic).map_err(report_err)?;
            steps += 1;
        }
        let d = steps.max(1) as f64;
        trace.push(CodecTrace {
            epoch,
            residual: sums[0] / d,
            perceptual: sums[1] / d,
            message: sums[2] / d,
            critic_fool: sums[3] / d,
            critic: sums[4] / d,
            learning_rate: cfg.adam_lr * lr_scale,
        });
    }

    // held-out measurement: embedded and clean bit accuracy
    let eval_images: &[Image] = if holdout_images.is_empty() {
        &train_images
    } else {
        &holdout_images
    };
    let mut marked_acc = 0.0;
    let mut clean_acc = 0.0;
    let marked = build_backdoored_set(&codec, eval_images, msg)?;
    for (marked_img, clean_img) in marked.iter().zip(eval_images) {
        let (bits, _) = extract(&codec, marked_img)?;
        marked_acc += bit_accuracy(&bits, msg)?;
        let (bits, _) = extract(&codec, clean_img)?;
        clean_acc += bit_accuracy(&bits, msg)?;
    }
    let n = eval_images.len() as f64;
    codec.meta.bit_accuracy = marked_acc / n;
    codec.meta.clean_bit_accuracy = clean_acc / n;
    codec.meta.quality_warning = codec.meta.bit_accuracy < cfg.bit_accuracy_floor;

    Ok((codec, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn train_tiny() -> (WatermarkCodec, WatermarkMessage, Vec<Image>) {
        let ds = synth_dataset(4, 24, 77).unwrap();
        let images = ds.images();
        let msg = WatermarkMessage::random(16, 4).unwrap();
        let cfg = CodecTrainConfig {
            epochs: 12,
            decay_epochs: vec![8, 10],
            seed: 5,
            ..Default::default()
        };
        let (codec, trace) = train_codec(&images, &msg, &cfg).unwrap();
        assert_eq!(trace.len(), 12);
        (codec, msg, images)
    }

    #[test]
    fn tiny_training_recovers_message() {
        let (codec, msg, images) = train_tiny();
        assert!(
            codec.meta.bit_accuracy > 0.9,
            "held-out bit accuracy {}",
            codec.meta.bit_accuracy
        );
        // clean images decode near chance
        assert!(
            (codec.meta.clean_bit_accuracy - 0.5).abs() < 0.25,
            "clean accuracy {}",
            codec.meta.clean_bit_accuracy
        );

        // residuals are sample-specific: distinct images, same message
        let (s0, r0) = embed(&codec, &images[0], &msg).unwrap();
        let (_, r1) = embed(&codec, &images[1], &msg).unwrap();
        assert_ne!(r0.as_slice(), r1.as_slice());
        s0.validate().unwrap();

        // determinism of embed
        let (s0b, r0b) = embed(&codec, &images[0], &msg).unwrap();
        assert_eq!(s0.as_slice(), s0b.as_slice());
        assert_eq!(r0.as_slice(), r0b.as_slice());
    }

    #[test]
    fn zero_strength_embedding_is_identity() {
        let ds = synth_dataset(2, 2, 3).unwrap();
        let mut codec = WatermarkCodec::init(16, 0.25, 1).unwrap();
        codec.set_strength(0.0);
        let msg = WatermarkMessage::random(16, 2).unwrap();
        let (stego, _) = embed(&codec, &ds.items[0].0, &msg).unwrap();
        assert_eq!(stego.as_slice(), ds.items[0].0.as_slice());
    }

    #[test]
    fn embed_respects_message_length() {
        let ds = synth_dataset(2, 1, 3).unwrap();
        let codec = WatermarkCodec::init(16, 0.25, 1).unwrap();
        let short = WatermarkMessage::random(8, 2).unwrap();
        assert!(matches!(
            embed(&codec, &ds.items[0].0, &short),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn outputs_stay_in_range_and_bounded() {
        let ds = synth_dataset(2, 4, 9).unwrap();
        let codec = WatermarkCodec::init(16, 0.25, 1).unwrap();
        let msg = WatermarkMessage::random(16, 2).unwrap();
        for (stego, residual) in embed_batch(&codec, &ds.images(), &msg).unwrap() {
            stego.validate().unwrap();
            for &r in residual.as_slice() {
                assert!(r.abs() <= 0.25 + 1e-6);
            }
        }
    }

    #[test]
    fn extract_confidence_has_message_length() {
        let ds = synth_dataset(2, 1, 3).unwrap();
        let codec = WatermarkCodec::init(16, 0.25, 1).unwrap();
        let (bits, conf) = extract(&codec, &ds.items[0].0).unwrap();
        assert_eq!(bits.len(), 16);
        assert_eq!(conf.len(), 16);
    }

    #[test]
    fn backdoored_set_preserves_order_and_size() {
        let ds = synth_dataset(2, 3, 3).unwrap();
        let codec = WatermarkCodec::init(16, 0.25, 1).unwrap();
        let msg = WatermarkMessage::random(16, 2).unwrap();
        assert!(build_backdoored_set(&codec, &[], &msg).unwrap().is_empty());
        let images = ds.images();
        let out = build_backdoored_set(&codec, &images, &msg).unwrap();
        assert_eq!(out.len(), images.len());
        let singles: Vec<Image> = images
            .iter()
            .map(|img| embed(&codec, img, &msg).unwrap().0)
            .collect();
        for (a, b) in out.iter().zip(&singles) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn config_rejects_bad_decay_epochs() {
        let cfg = CodecTrainConfig {
            epochs: 10,
            decay_epochs: vec![15, 20],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn message_round_trips_via_bit_string() {
        let msg = WatermarkMessage::random(20, 9).unwrap();
        let s = msg.to_bit_string();
        assert_eq!(WatermarkMessage::from_bit_string(&s).unwrap(), msg);
        assert!(WatermarkMessage::from_bit_string("01x").is_err());
    }
}
