use std::io::Write;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SpriteDataset;
use crate::diffgen::{Activation, DecoderGenerator, DenseGrads, DenseNet, GradAt};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng_for, Adam, AdamParams};
use crate::parallel::map_indexed;

/// Rows per gradient work item; fixed so results do not depend on the
/// worker count.
const GRAD_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub beta: f64,
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            latent_dim: 10,
            hidden: vec![512, 256],
            learning_rate: 5e-4,
            batch_size: 128,
            steps: 20_000,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be >= 0");
        }
        if self.latent_dim < 2 {
            return bad("latent dim must be >= 2");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be >= 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Freshly initialised `(encoder, decoder)` for `pixels` inputs.
    pub fn init_networks(&self, pixels: usize) -> Result<(DenseNet, DenseNet)> {
        let mut rng = rng_for(self.seed);
        let mut enc_w = vec![pixels];
        enc_w.extend(&self.hidden);
        enc_w.push(2 * self.latent_dim);
        let mut enc_a = vec![Activation::Relu; self.hidden.len()];
        enc_a.push(Activation::Identity);
        let mut dec_w: Vec<usize> = enc_w.iter().rev().copied().collect();
        dec_w[0] = self.latent_dim;
        let mut dec_a = vec![Activation::Relu; self.hidden.len()];
        dec_a.push(Activation::Sigmoid);
        let encoder = DenseNet::random(&enc_w, &enc_a, &mut rng)?;
        let decoder = DenseNet::random(&dec_w, &dec_a, &mut rng)?;
        Ok((encoder, decoder))
    }
}

/// Batch-mean objective and its parameter gradients.
#[derive(Clone, Debug)]
pub struct VaeLoss {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub encoder_grads: DenseGrads,
    pub decoder_grads: DenseGrads,
}

/// `softplus(a) - x a`, the Bernoulli cross-entropy of logit `a` against `x`.
#[inline]
fn bce_logit(a: f64, x: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p() - x * a
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Sums (not means) over one chunk of rows, given the noise `eps`.
fn chunk_loss(
    encoder: &DenseNet,
    decoder: &DenseNet,
    x: ArrayView2<f64>,
    eps: &Array2<f64>,
    beta: f64,
    scale: f64,
) -> Result<(f64, f64, DenseGrads, DenseGrads)> {
    let l = eps.ncols();
    let enc = encoder.forward_batch(x)?;
    let out = enc.output();
    let mu = out.slice(s![.., ..l]);
    let lv = out.slice(s![.., l..]);
    let sd = lv.mapv(|v| (0.5 * v).exp());
    let z = &mu + &(&sd * eps);
    let dec = decoder.forward_batch(z.view())?;
    let logits = dec.logits();

    let mut recon = 0.0;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    ndarray::Zip::from(&mut d_logits)
        .and(logits)
        .and(&x)
        .for_each(|g, &a, &t| {
            recon += bce_logit(a, t);
            *g = scale * (sigmoid(a) - t);
        });
    let mut kl = 0.0;
    ndarray::Zip::from(&mu).and(&lv).for_each(|&m, &v| {
        kl += 0.5 * (m * m + v.exp() - 1.0 - v);
    });

    let (d_z, dec_grads) = decoder.backward(&dec, d_logits.view(), GradAt::PreActivation)?;
    let mut d_out = Array2::zeros(out.raw_dim());
    {
        let (mut d_mu, mut d_lv) = d_out.multi_slice_mut((s![.., ..l], s![.., l..]));
        ndarray::Zip::from(&mut d_mu)
            .and(&d_z)
            .and(&mu)
            .for_each(|g, &dz, &m| *g = dz + scale * beta * m);
        ndarray::Zip::from(&mut d_lv)
            .and(&d_z)
            .and(eps)
            .and(&sd)
            .and(&lv)
            .for_each(|g, &dz, &e, &s, &v| {
                *g = 0.5 * dz * e * s + 0.5 * scale * beta * (v.exp() - 1.0)
            });
    }
    let (_, enc_grads) = encoder.backward(&enc, d_out.view(), GradAt::Output)?;
    Ok((recon, kl, enc_grads, dec_grads))
}

/// β-VAE objective averaged over the batch rows: Bernoulli cross-entropy
/// summed over pixels plus `beta` times the KL to the unit Gaussian.
///
/// Noise for chunk `c` of [`GRAD_CHUNK`] rows is drawn from
/// `derive_seed(noise_seed, c)`.
pub fn vae_loss(
    encoder: &DenseNet,
    decoder: &DenseNet,
    batch: ArrayView2<f64>,
    beta: f64,
    noise_seed: u64,
) -> Result<VaeLoss> {
    let rows = batch.nrows();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !encoder.output_dim().is_multiple_of(2) || encoder.output_dim() / 2 != decoder.input_dim() {
        return Err(Error::shape(
            format!("encoder output {}", 2 * decoder.input_dim()),
            encoder.output_dim(),
        ));
    }
    if encoder.input_dim() != decoder.output_dim() {
        return Err(Error::shape(
            format!("decoder output {}", encoder.input_dim()),
            decoder.output_dim(),
        ));
    }
    let l = decoder.input_dim();
    let scale = 1.0 / rows as f64;
    let chunks = rows.div_ceil(GRAD_CHUNK);
    let parts = map_indexed(chunks, |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(rows);
        let mut rng = rng_for(derive_seed(noise_seed, c as u64));
        let eps =
            Array2::from_shape_simple_fn((hi - lo, l), || rng.sample::<f64, _>(StandardNormal));
        chunk_loss(
            encoder,
            decoder,
            batch.slice(s![lo..hi, ..]),
            &eps,
            beta,
            scale,
        )
    });
    let mut recon = 0.0;
    let mut kl = 0.0;
    let mut enc_total = DenseGrads::zeros_like(encoder);
    let mut dec_total = DenseGrads::zeros_like(decoder);
    for part in parts {
        let (r, k, eg, dg) = part?;
        recon += r;
        kl += k;
        enc_total.add_assign(&eg);
        dec_total.add_assign(&dg);
    }
    let recon = recon * scale;
    let kl = kl * scale;
    Ok(VaeLoss {
        loss: recon + beta * kl,
        recon,
        kl,
        encoder_grads: enc_total,
        decoder_grads: dec_total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedVae {
    pub encoder: DenseNet,
    pub decoder: DecoderGenerator,
    pub curve: Vec<CurveRow>,
}

struct NetOptimizer {
    slots: Vec<Adam>,
}

impl NetOptimizer {
    fn new(net: &mut DenseNet, params: AdamParams) -> Self {
        let mut slots = Vec::new();
        net.for_each_param_mut(|_, p| slots.push(Adam::new(p.len(), params)));
        Self { slots }
    }

    fn step(&mut self, net: &mut DenseNet, grads: &DenseGrads) -> Result<()> {
        let mut flat: Vec<Vec<f64>> = Vec::with_capacity(self.slots.len());
        for (w, b) in &grads.layers {
            flat.push(w.as_standard_layout().iter().copied().collect());
            flat.push(b.to_vec());
        }
        let mut result = Ok(());
        net.for_each_param_mut(|slot, p| {
            if result.is_ok() {
                result = self.slots[slot].step(p, &flat[slot]);
            }
        });
        result
    }
}

/// Trains encoder and decoder jointly with Adam on minibatches drawn with
/// replacement. Step `k` uses noise seed `derive_seed(seed, k)`.
pub fn train_vae(config: &VaeConfig, dataset: &SpriteDataset) -> Result<TrainedVae> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::DatasetTooSmall(
            "VAE training needs at least one image".into(),
        ));
    }
    let (h, w) = dataset.image_size();
    let pixels = h * w;
    let (mut encoder, mut decoder) = config.init_networks(pixels)?;
    let params = AdamParams::with_lr(config.learning_rate);
    let mut enc_opt = NetOptimizer::new(&mut encoder, params);
    let mut dec_opt = NetOptimizer::new(&mut decoder, params);
    let mut batch_rng = rng_for(derive_seed(config.seed, u64::MAX));
    let mut batch = Array2::zeros((config.batch_size, pixels));
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        for mut row in batch.axis_iter_mut(Axis(0)) {
            let idx = batch_rng.random_range(0..dataset.len());
            for (dst, &b) in row.iter_mut().zip(dataset.image_bytes(idx)) {
                *dst = b as f64 / 255.0;
            }
        }
        let out = vae_loss(
            &encoder,
            &decoder,
            batch.view(),
            config.beta,
            derive_seed(config.seed, step as u64),
        )?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite {
                stage: "train_vae",
                step,
            });
        }
        curve.push(CurveRow {
            step,
            loss: out.loss,
            recon: out.recon,
            kl: out.kl,
        });
        enc_opt.step(&mut encoder, &out.encoder_grads)?;
        dec_opt.step(&mut decoder, &out.decoder_grads)?;
    }
    let decoder = DecoderGenerator::new(decoder, h, w)?;
    Ok(TrainedVae {
        encoder,
        decoder,
        curve,
    })
}

pub fn write_curve_csv<W: Write>(curve: &[CurveRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in curve {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}
