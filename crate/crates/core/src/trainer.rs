//! Per-garment training loop: pairs with shared jitter, alternating
//! discriminator / generator updates, epoch checkpoints, a JSON-lines run log
//! and holdout evaluation.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, DatasetRecord};
use crate::error::{Error, Result};
use crate::gsnet::{
    feature_matching_term, gan_terms, image_batch, perceptual_term, tensor_image, ArchConfig, Checkpoint,
    FeatureExtractor, GanForm, GsNet, LossBreakdown, Mode, PerceptualBackbone,
};
use crate::imaging::{self, apply_affine, concat_channels, AffineJitter, Image, Interp, JitterRanges, SoftMask};
use crate::metrics::{masked_l1, ssim};
use crate::nn::{Adam, AdamConfig, Graph, Tensor};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.tckp";
pub const DIVERGENCE_FILE: &str = "divergence.json";

/// Network size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetSize {
    #[default]
    Full,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub roi_size: usize,
    pub mode: Mode,
    pub seed: u64,
    pub net: NetSize,
    pub gan: GanForm,
    pub perceptual: PerceptualBackbone,
    pub jitter: JitterRanges,
    pub holdout_fraction: f64,
    /// learning rate decays linearly to zero over this many final epochs
    pub decay_epochs: u64,
    /// stop after this many optimizer steps (0 = no limit)
    pub max_steps: u64,
    /// keep only the newest N epoch checkpoints (0 = keep all)
    pub keep_checkpoints: usize,
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            lambda0: 1.0,
            lambda1: 1.0,
            roi_size: 512,
            mode: Mode::Hybrid,
            seed: 0,
            net: NetSize::Full,
            gan: GanForm::Log,
            perceptual: PerceptualBackbone::None,
            jitter: JitterRanges::default(),
            holdout_fraction: 0.05,
            decay_epochs: 50,
            max_steps: 0,
            keep_checkpoints: 0,
            ema_decay: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.roi_size > 0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2);
        if !positive {
            return Err(Error::config("epochs, batch size, learning rate and ROI size must be positive; betas in [0,1)"));
        }
        if !(self.lambda0 >= 0.0 && self.lambda1 >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("holdout fraction and EMA decay must be in [0,1)"));
        }
        if self.lambda1 > 0.0 && self.perceptual == PerceptualBackbone::None {
            return Err(Error::config(
                "perceptual loss weight is positive but no perceptual backbone is configured (set lambda1 to 0 or choose a backbone)",
            ));
        }
        self.jitter.validate().map_err(|e| Error::config(e.to_string()))?;
        let arch = self.arch();
        arch.validate()?;
        if !self.roi_size.is_multiple_of(arch.side_multiple()) || self.roi_size < 4 * arch.side_multiple() {
            return Err(Error::config(format!(
                "ROI size {} must be a multiple of {} and at least {}",
                self.roi_size,
                arch.side_multiple(),
                4 * arch.side_multiple()
            )));
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        let mut a = match self.net {
            NetSize::Full => ArchConfig::full(self.mode),
            NetSize::Tiny => ArchConfig::tiny(self.mode),
        };
        a.gan = self.gan;
        a
    }

    /// Learning rate for `epoch` (0-based).
    pub fn lr_at(&self, epoch: u64) -> f64 {
        let decay = self.decay_epochs.min(self.epochs);
        let remaining = self.epochs.saturating_sub(epoch);
        if decay == 0 || remaining > decay {
            self.learning_rate
        } else {
            self.learning_rate * (remaining as f64 / decay as f64)
        }
    }
}

/// Exponential moving averages of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossEma {
    pub gan_generator: f64,
    pub fm: f64,
    pub vgg: f64,
    pub total: f64,
    pub discriminator: f64,
    pub samples: u64,
}

impl LossEma {
    fn update(&mut self, b: &LossBreakdown, d: f64, decay: f64) {
        if self.samples == 0 {
            *self = LossEma {
                gan_generator: b.gan_generator,
                fm: b.fm,
                vgg: b.vgg,
                total: b.total,
                discriminator: d,
                samples: 1,
            };
            return;
        }
        let mix = |a: &mut f64, v: f64| *a = decay * *a + (1.0 - decay) * v;
        mix(&mut self.gan_generator, b.gan_generator);
        mix(&mut self.fm, b.fm);
        mix(&mut self.vgg, b.vgg);
        mix(&mut self.total, b.total);
        mix(&mut self.discriminator, d);
        self.samples += 1;
    }
}

/// Resumable loop position. Shuffles and jitter draws are derived from
/// `(seed, epoch, step)`, so no generator state needs saving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub ema: LossEma,
    pub seed: u64,
    pub config: TrainConfig,
}

/// One JSON-lines log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Step {
        step: u64,
        epoch: u64,
        lr: f64,
        loss: LossBreakdown,
        discriminator: f64,
        ema: LossEma,
    },
    Eval {
        step: u64,
        epoch: u64,
        summary: EvalSummary,
    },
    Checkpoint {
        step: u64,
        epoch: u64,
        path: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub masked_l1: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: u64,
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub last_eval: Option<EvalSummary>,
    pub ema: LossEma,
}

/// Decoded images of one record.
#[derive(Debug, Clone)]
pub struct RecordImages {
    pub vm: Image,
    pub sdp: Image,
    pub dp: Image,
    pub garment: Image,
    pub mask: SoftMask,
}

pub fn load_record(dir: &Path, r: &DatasetRecord) -> Result<RecordImages> {
    Ok(RecordImages {
        vm: imaging::load_png(&dir.join(&r.vm_path))?,
        sdp: imaging::load_png(&dir.join(&r.sdp_path))?,
        dp: imaging::load_png(&dir.join(&r.dp_path))?,
        garment: imaging::load_png(&dir.join(&r.garment_path))?,
        mask: imaging::load_mask_png(&dir.join(&r.mask_path))?,
    })
}

/// Network input for `mode` from a record's images.
pub fn mode_input(mode: Mode, vm: &Image, sdp: &Image, dp: &Image) -> Result<Image> {
    match mode {
        Mode::Hybrid => concat_channels(vm, sdp),
        Mode::Vmdp => concat_channels(vm, dp),
        Mode::Vm => Ok(vm.clone()),
        Mode::Sdp => Ok(sdp.clone()),
    }
}

/// Input `x` and target `y = garment ⊕ mask`, all warped by one jitter draw.
/// Color images are resampled bilinearly; label-like images (DensePose, mask) by nearest.
pub fn training_pair(images: &RecordImages, mode: Mode, jitter: &JitterRanges, seed: u64) -> Result<(Image, Image)> {
    jitter.validate()?;
    let (h, w) = images.vm.dims();
    let m = AffineJitter::sample(jitter, seed).matrix(h, w);
    let vm = apply_affine(&images.vm, &m, Interp::Bilinear)?;
    let sdp = apply_affine(&images.sdp, &m, Interp::Nearest)?;
    let dp = apply_affine(&images.dp, &m, Interp::Nearest)?;
    let garment = apply_affine(&images.garment, &m, Interp::Bilinear)?;
    let mask = apply_affine(&images.mask.to_image(), &m, Interp::Nearest)?;
    let x = mode_input(mode, &vm, &sdp, &dp)?;
    let y = concat_channels(&garment, &mask)?;
    Ok((x, y))
}

/// [`training_pair`] straight from a record on disk.
pub fn make_training_pair(
    dir: &Path,
    record: &DatasetRecord,
    mode: Mode,
    jitter: &JitterRanges,
    seed: u64,
) -> Result<(Image, Image)> {
    training_pair(&load_record(dir, record)?, mode, jitter, seed)
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Decoded-record cache shared by batch workers.
struct RecordCache {
    dir: PathBuf,
    enabled: bool,
    map: Mutex<HashMap<u64, Arc<RecordImages>>>,
}

impl RecordCache {
    fn new(dir: &Path, records: usize, roi: usize) -> Self {
        // 13 float planes per record
        let bytes = records * roi * roi * 13 * 4;
        Self {
            dir: dir.to_path_buf(),
            enabled: bytes <= 1 << 30,
            map: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, r: &DatasetRecord) -> Result<Arc<RecordImages>> {
        if let Some(v) = self.map.lock().expect("cache lock").get(&r.frame_id) {
            return Ok(Arc::clone(v));
        }
        let imgs = Arc::new(load_record(&self.dir, r)?);
        if self.enabled {
            self.map.lock().expect("cache lock").insert(r.frame_id, Arc::clone(&imgs));
        }
        Ok(imgs)
    }
}

/// Forward/backward pieces of one training step.
pub struct StepOutput {
    pub loss: LossBreakdown,
    pub discriminator: f64,
}

/// Generator update with the discriminator frozen. Returns the loss terms
/// and the generated `garment ⊕ mask` batch.
pub fn generator_step(
    net: &mut GsNet,
    opt_g: &mut Adam,
    extractor: Option<&dyn FeatureExtractor>,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(LossBreakdown, Tensor)> {
    let form = net.arch.gan;
    let mut g = Graph::new();
    let bg = net.generator.params.bind(&mut g, true);
    let bd = net.discriminator.params.bind(&mut g, false);
    let xv = g.input(x.clone());
    let yv = g.input(y.clone());
    let (garment, mask) = net.generator.forward(&mut g, &bg, xv);
    let fake = g.concat(garment, mask);
    let out_fake = net.discriminator.forward(&mut g, &bd, xv, fake, form);
    let out_real = net.discriminator.forward(&mut g, &bd, xv, yv, form);
    let gan = gan_terms(&mut g, &out_real.scores, &out_fake.scores, form)?;
    let fm = feature_matching_term(&mut g, &out_real.features, &out_fake.features)?;
    let vgg = match extractor {
        Some(ext) => {
            let target = g.slice_channels(yv, 0, 3);
            Some(perceptual_term(&mut g, ext, garment, mask, target)?)
        }
        None => None,
    };
    let mut terms = vec![(gan.generator, 1.0), (fm, cfg.lambda0)];
    if let Some(v) = vgg {
        terms.push((v, cfg.lambda1));
    }
    let total = g.weighted_sum(&terms);
    let grads = g.backward(total);
    let breakdown = LossBreakdown::new(
        g.value(gan.l_gan).item(),
        g.value(gan.generator).item(),
        g.value(fm).item(),
        vgg.map_or(0.0, |v| g.value(v).item()),
        cfg.lambda0,
        cfg.lambda1,
    );
    if !breakdown.total.is_finite() {
        return Err(Error::Diverged(format!("non-finite generator loss {breakdown:?}")));
    }
    opt_g.update(&mut net.generator.params, &bg, &grads, lr);
    Ok((breakdown, g.value(fake).clone()))
}

/// Discriminator update on real `y` against a fixed `fake`; the generator is
/// not part of the graph. Returns the minimized objective `-L_GAN`.
pub fn discriminator_step(net: &mut GsNet, opt_d: &mut Adam, x: &Tensor, y: &Tensor, fake: &Tensor, lr: f64) -> Result<f64> {
    let form = net.arch.gan;
    let mut g = Graph::new();
    let bd = net.discriminator.params.bind(&mut g, true);
    let xv = g.input(x.clone());
    let yv = g.input(y.clone());
    let fv = g.input(fake.clone());
    let real = net.discriminator.forward(&mut g, &bd, xv, yv, form);
    let fake = net.discriminator.forward(&mut g, &bd, xv, fv, form);
    let gan = gan_terms(&mut g, &real.scores, &fake.scores, form)?;
    let obj = g.affine(gan.l_gan, -1.0, 0.0);
    let v = g.value(obj).item();
    if !v.is_finite() {
        return Err(Error::Diverged(format!("non-finite discriminator loss {v}")));
    }
    let grads = g.backward(obj);
    opt_d.update(&mut net.discriminator.params, &bd, &grads, lr);
    Ok(v)
}

/// One generator update followed by one discriminator update on the same batch.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    net: &mut GsNet,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    extractor: Option<&dyn FeatureExtractor>,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepOutput> {
    let (loss, fake) = generator_step(net, opt_g, extractor, x, y, cfg, lr)?;
    let discriminator = discriminator_step(net, opt_d, x, y, &fake, lr)?;
    Ok(StepOutput { loss, discriminator })
}

/// Masked L1 and SSIM of `g̃ ⊙ m̃` against the stored garment over the holdout.
pub fn evaluate_epoch(net: &GsNet, dir: &Path, holdout: &[DatasetRecord]) -> Result<EvalSummary> {
    if holdout.is_empty() {
        return Err(Error::config("holdout split is empty"));
    }
    let mode = net.arch.mode;
    let per: Vec<(f64, f64)> = holdout
        .iter()
        .map(|r| {
            let imgs = load_record(dir, r)?;
            let x = mode_input(mode, &imgs.vm, &imgs.sdp, &imgs.dp)?;
            let out = net.gs_forward(&x)?;
            let pred = masked_prediction(&out.garment, &out.mask);
            Ok((masked_l1(&pred, &imgs.garment, &imgs.mask)?, ssim(&pred, &imgs.garment)?))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(EvalSummary {
        frames: per.len(),
        masked_l1: per.iter().map(|p| p.0).sum::<f64>() / n,
        ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// `garment ⊙ mask`.
pub fn masked_prediction(garment: &Image, mask: &SoftMask) -> Image {
    let (h, w) = garment.dims();
    Image::from_fn(3, h, w, |c, y, x| garment.get(c, y, x) * mask.get(y, x))
}

struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, e: &LogEntry) -> Result<()> {
        let line = serde_json::to_string(e).map_err(|err| Error::json("log entry", err))?;
        writeln!(self.file, "{line}").map_err(|err| Error::io(&self.path, err))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path.display().to_string(), e)))
        .collect()
}

/// Train on the dataset in `dataset_dir`, writing checkpoints and the run log
/// under `out_dir`. With `resume`, continue from that checkpoint's epoch.
pub fn train(dataset_dir: &Path, cfg: &TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(dataset_dir)?;
    if manifest.config.roi_size != cfg.roi_size {
        return Err(Error::config(format!(
            "dataset ROI is {} but training is configured for {}",
            manifest.config.roi_size, cfg.roi_size
        )));
    }
    if manifest.records.len() < 2 {
        return Err(Error::config("need at least 2 records to hold one out"));
    }
    let extractor = cfg.perceptual.load()?;
    let extractor = if cfg.lambda1 > 0.0 { extractor } else { None };
    let (train_set, holdout) = manifest.split_holdout(cfg.holdout_fraction);
    std::fs::create_dir_all(out_dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(out_dir, e))?;

    let adam_cfg = AdamConfig {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        ..AdamConfig::default()
    };
    let (mut net, mut opt_g, mut opt_d, mut state) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.net.arch != cfg.arch() {
                return Err(Error::config("resume checkpoint architecture differs from the configuration"));
            }
            if ck.manifest_hash != manifest.content_hash {
                return Err(Error::config("resume checkpoint was trained on a different dataset"));
            }
            let state: TrainState = serde_json::from_value(ck.state.clone())
                .map_err(|e| Error::json(format!("{} state", p.display()), e))?;
            let og = ck.opt_g.ok_or_else(|| Error::config("resume checkpoint has no optimizer state"))?;
            let od = ck.opt_d.ok_or_else(|| Error::config("resume checkpoint has no optimizer state"))?;
            (ck.net, og, od, state)
        }
        None => {
            let net = GsNet::new(&cfg.arch(), cfg.seed)?;
            let og = Adam::new(&net.generator.params, adam_cfg);
            let od = Adam::new(&net.discriminator.params, adam_cfg);
            let state = TrainState {
                step: 0,
                epoch: 0,
                ema: LossEma::default(),
                seed: cfg.seed,
                config: cfg.clone(),
            };
            (net, og, od, state)
        }
    };
    state.config = cfg.clone();
    let mut log = RunLog::open(&out_dir.join(LOG_FILE), resume.is_some())?;
    let cache = RecordCache::new(dataset_dir, manifest.records.len(), cfg.roi_size);
    let mut last_eval = None;
    let mut kept: Vec<PathBuf> = Vec::new();
    let started = Instant::now();

    let save = |net: &GsNet, og: &Adam, od: &Adam, state: &TrainState, path: &Path| -> Result<()> {
        Checkpoint {
            net: net.clone(),
            opt_g: Some(og.clone()),
            opt_d: Some(od.clone()),
            step: state.step,
            epoch: state.epoch,
            manifest_hash: manifest.content_hash.clone(),
            state: serde_json::to_value(state).map_err(|e| Error::json("train state", e))?,
        }
        .save(path)
    };

    'epochs: while state.epoch < cfg.epochs {
        let lr = cfg.lr_at(state.epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, state.epoch, u64::MAX)));
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && state.step >= cfg.max_steps {
                break 'epochs;
            }
            let step = state.step;
            let pairs: Vec<Option<(Image, Image)>> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, &idx)| {
                    let r = &train_set[idx];
                    let res = cache
                        .get(r)
                        .and_then(|imgs| training_pair(&imgs, cfg.mode, &cfg.jitter, mix_seed(cfg.seed, step, i as u64)));
                    match res {
                        Ok(p) => Some(p),
                        Err(e) => {
                            log::warn!("skipping record {}: {e}", r.frame_id);
                            None
                        }
                    }
                })
                .collect();
            let (xs, ys): (Vec<Image>, Vec<Image>) = pairs.into_iter().flatten().unzip();
            if xs.is_empty() {
                continue;
            }
            let (x, y) = (image_batch(&xs)?, image_batch(&ys)?);
            let out = match train_step(&mut net, &mut opt_g, &mut opt_d, extractor.as_deref(), &x, &y, cfg, lr) {
                Ok(o) => o,
                Err(Error::Diverged(msg)) => {
                    dump_divergence(out_dir, &state, &msg, &net)?;
                    return Err(Error::Diverged(format!(
                        "{msg} at step {} (state dumped to {})",
                        state.step,
                        out_dir.join(DIVERGENCE_FILE).display()
                    )));
                }
                Err(e) => return Err(e),
            };
            state.step += 1;
            state.ema.update(&out.loss, out.discriminator, cfg.ema_decay);
            log.write(&LogEntry::Step {
                step: state.step,
                epoch: state.epoch,
                lr,
                loss: out.loss,
                discriminator: out.discriminator,
                ema: state.ema,
            })?;
        }
        state.epoch += 1;
        if !holdout.is_empty() {
            let summary = evaluate_epoch(&net, dataset_dir, &holdout)?;
            log.write(&LogEntry::Eval {
                step: state.step,
                epoch: state.epoch,
                summary,
            })?;
            last_eval = Some(summary);
        }
        let path = out_dir.join(CHECKPOINT_DIR).join(format!("epoch_{:04}.tckp", state.epoch));
        save(&net, &opt_g, &opt_d, &state, &path)?;
        log.write(&LogEntry::Checkpoint {
            step: state.step,
            epoch: state.epoch,
            path: path.strip_prefix(out_dir).unwrap_or(&path).display().to_string(),
        })?;
        kept.push(path);
        if cfg.keep_checkpoints > 0 && kept.len() > cfg.keep_checkpoints {
            let old = kept.remove(0);
            std::fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
        }
    }
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    save(&net, &opt_g, &opt_d, &state, &final_path)?;
    log::info!(
        "trained {} steps over {} epochs in {:.1}s",
        state.step,
        state.epoch,
        started.elapsed().as_secs_f64()
    );
    Ok(TrainSummary {
        steps: state.step,
        epochs: state.epoch,
        final_checkpoint: final_path,
        log: out_dir.join(LOG_FILE),
        last_eval,
        ema: state.ema,
    })
}

fn dump_divergence(out_dir: &Path, state: &TrainState, msg: &str, net: &GsNet) -> Result<()> {
    let norms = |s: &crate::nn::ParamStore| -> Vec<(String, f64)> {
        s.names().iter().cloned().zip(s.tensors().map(|t| t.sq_norm().sqrt())).collect()
    };
    let dump = serde_json::json!({
        "message": msg,
        "state": state,
        "generator_param_norms": norms(&net.generator.params),
        "discriminator_param_norms": norms(&net.discriminator.params),
    });
    let path = out_dir.join(DIVERGENCE_FILE);
    let text = serde_json::to_string_pretty(&dump).map_err(|e| Error::json("divergence dump", e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Generator output for one record (no jitter) as an image pair.
pub fn predict_record(net: &GsNet, dir: &Path, r: &DatasetRecord) -> Result<(Image, SoftMask)> {
    let imgs = load_record(dir, r)?;
    let x = mode_input(net.arch.mode, &imgs.vm, &imgs.sdp, &imgs.dp)?;
    let (g, m) = net.predict(&image_batch(&[x])?)?;
    Ok((tensor_image(&g, 0)?, SoftMask::from_image(&tensor_image(&m, 0)?)?))
}
