//! Garment synthesis network, its multi-scale patch discriminator, the
//! adversarial / feature-matching / perceptual loss terms and checkpoints.
//!
//! Images enter in [0,1] and are mapped to [-1,1] only inside the networks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, SoftMask};
use crate::nn::{container, Adam, Bound, Graph, ParamId, ParamStore, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
pub const GAN_EPS: f64 = 1e-7;
pub const CHECKPOINT_FORMAT: &str = "tryon-gsnet";

/// Which person representation conditions the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// measurement garment + simplified DensePose
    Hybrid,
    /// measurement garment only
    Vm,
    /// measurement garment + full DensePose
    Vmdp,
    /// simplified DensePose only
    Sdp,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Hybrid, Mode::Vm, Mode::Vmdp, Mode::Sdp];

    pub fn input_channels(self) -> usize {
        match self {
            Mode::Hybrid | Mode::Vmdp => 6,
            Mode::Vm | Mode::Sdp => 3,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Hybrid => "hybrid",
            Mode::Vm => "vm",
            Mode::Vmdp => "vmdp",
            Mode::Sdp => "sdp",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(Mode::Hybrid),
            "vm" => Ok(Mode::Vm),
            "vmdp" => Ok(Mode::Vmdp),
            "sdp" => Ok(Mode::Sdp),
            other => Err(Error::config(format!("unknown mode {other:?} (expected hybrid, vm, vmdp or sdp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanForm {
    /// log-likelihood objective on sigmoid scores
    #[default]
    Log,
    /// least-squares objective on raw scores
    Lsgan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub ngf: usize,
    pub n_downsample: usize,
    pub n_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// condition channels + 4 (garment and mask)
    pub input_channels: usize,
    pub ndf: usize,
    pub n_layers: usize,
    pub num_d: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub mode: Mode,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub gan: GanForm,
}

impl ArchConfig {
    /// Production size: 64 base filters, 4 downsamplings, 9 residual blocks; 3-layer, 2-scale D.
    pub fn full(mode: Mode) -> Self {
        Self::sized(mode, 64, 4, 9, 64, 3)
    }

    /// A small network for tests and toy runs.
    pub fn tiny(mode: Mode) -> Self {
        Self::sized(mode, 8, 1, 2, 8, 2)
    }

    pub fn sized(mode: Mode, ngf: usize, n_downsample: usize, n_blocks: usize, ndf: usize, n_layers: usize) -> Self {
        Self {
            mode,
            generator: GeneratorConfig {
                input_channels: mode.input_channels(),
                ngf,
                n_downsample,
                n_blocks,
            },
            discriminator: DiscriminatorConfig {
                input_channels: mode.input_channels() + 4,
                ndf,
                n_layers,
                num_d: 2,
            },
            gan: GanForm::Log,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let d = &self.discriminator;
        if g.input_channels != self.mode.input_channels() {
            return Err(Error::config(format!(
                "mode {} needs {} input channels, generator declares {}",
                self.mode,
                self.mode.input_channels(),
                g.input_channels
            )));
        }
        if d.input_channels != g.input_channels + 4 {
            return Err(Error::config("discriminator must see condition + garment + mask channels"));
        }
        if g.ngf == 0 || d.ndf == 0 || d.n_layers == 0 || d.num_d == 0 {
            return Err(Error::config("network widths and depths must be positive"));
        }
        if g.n_downsample > 8 {
            return Err(Error::config("at most 8 downsampling stages"));
        }
        Ok(())
    }

    /// Input sides must be divisible by this.
    pub fn side_multiple(&self) -> usize {
        1 << self.generator.n_downsample
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvP {
    w: ParamId,
    b: ParamId,
}

fn conv_p(s: &mut ParamStore, name: &str, cout: usize, cin: usize, k: usize, rng: &mut ChaCha8Rng) -> ConvP {
    ConvP {
        w: s.add_normal(&format!("{name}.weight"), &[cout, cin, k, k], INIT_STD, rng),
        b: s.add_normal(&format!("{name}.bias"), &[cout], 0.0, rng),
    }
}

fn conv_t_p(s: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> ConvP {
    ConvP {
        w: s.add_normal(&format!("{name}.weight"), &[cin, cout, k, k], INIT_STD, rng),
        b: s.add_normal(&format!("{name}.bias"), &[cout], 0.0, rng),
    }
}

fn conv(g: &mut Graph, b: &Bound, p: ConvP, x: Var, stride: usize, pad: usize) -> Var {
    g.conv2d(x, b.var(p.w), Some(b.var(p.b)), stride, pad)
}

/// Encoder / residual trunk / decoder generator with a 4-channel head.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore,
    stem: ConvP,
    down: Vec<ConvP>,
    blocks: Vec<(ConvP, ConvP)>,
    up: Vec<ConvP>,
    head: ConvP,
}

impl Generator {
    pub fn new(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut s = ParamStore::new();
        let ngf = config.ngf;
        let stem = conv_p(&mut s, "stem", ngf, config.input_channels, 7, rng);
        let mut ch = ngf;
        let mut down = Vec::new();
        for i in 0..config.n_downsample {
            down.push(conv_p(&mut s, &format!("down{i}"), ch * 2, ch, 3, rng));
            ch *= 2;
        }
        let blocks = (0..config.n_blocks)
            .map(|i| {
                (
                    conv_p(&mut s, &format!("block{i}.a"), ch, ch, 3, rng),
                    conv_p(&mut s, &format!("block{i}.b"), ch, ch, 3, rng),
                )
            })
            .collect();
        let mut up = Vec::new();
        for i in 0..config.n_downsample {
            up.push(conv_t_p(&mut s, &format!("up{i}"), ch, ch / 2, 3, rng));
            ch /= 2;
        }
        let head = conv_p(&mut s, "head", 4, ngf, 7, rng);
        Self {
            config: config.clone(),
            params: s,
            stem,
            down,
            blocks,
            up,
            head,
        }
    }

    /// Returns `(garment [N,3,H,W] in [0,1], mask [N,1,H,W] in [0,1])`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> (Var, Var) {
        let x = g.affine(x, 2.0, -1.0);
        let mut h = g.reflect_pad(x, 3);
        h = conv(g, b, self.stem, h, 1, 0);
        h = g.instance_norm(h);
        h = g.relu(h);
        for p in &self.down {
            h = conv(g, b, *p, h, 2, 1);
            h = g.instance_norm(h);
            h = g.relu(h);
        }
        for (pa, pb) in &self.blocks {
            let mut r = g.reflect_pad(h, 1);
            r = conv(g, b, *pa, r, 1, 0);
            r = g.instance_norm(r);
            r = g.relu(r);
            r = g.reflect_pad(r, 1);
            r = conv(g, b, *pb, r, 1, 0);
            r = g.instance_norm(r);
            h = g.add(h, r);
        }
        for p in &self.up {
            h = g.conv_transpose2d(h, b.var(p.w), Some(b.var(p.b)), 2, 1, 1);
            h = g.instance_norm(h);
            h = g.relu(h);
        }
        h = g.reflect_pad(h, 3);
        let out = conv(g, b, self.head, h, 1, 0);
        let garment_raw = g.slice_channels(out, 0, 3);
        let garment_t = g.tanh(garment_raw);
        let garment = g.affine(garment_t, 0.5, 0.5);
        let mask_raw = g.slice_channels(out, 3, 1);
        let mask = g.sigmoid(mask_raw);
        (garment, mask)
    }

    /// Channel count the first layer accepts.
    pub fn stem_channels(&self) -> usize {
        self.params.get(self.stem.w).shape()[1]
    }
}

/// One patch discriminator: stride-2 blocks, one stride-1 block, a 1-channel score map.
#[derive(Debug, Clone)]
struct NLayer {
    layers: Vec<(ConvP, usize, bool)>,
    out: ConvP,
}

impl NLayer {
    fn new(s: &mut ParamStore, prefix: &str, cfg: &DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut nf = cfg.ndf;
        layers.push((conv_p(s, &format!("{prefix}.l0"), nf, cfg.input_channels, 4, rng), 2, false));
        for i in 1..cfg.n_layers {
            let prev = nf;
            nf = (nf * 2).min(512);
            layers.push((conv_p(s, &format!("{prefix}.l{i}"), nf, prev, 4, rng), 2, true));
        }
        let prev = nf;
        nf = (nf * 2).min(512);
        layers.push((conv_p(s, &format!("{prefix}.l{}", cfg.n_layers), nf, prev, 4, rng), 1, true));
        let out = conv_p(s, &format!("{prefix}.out"), 1, nf, 4, rng);
        Self { layers, out }
    }

    fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> (Var, Vec<Var>) {
        let mut h = x;
        let mut feats = Vec::new();
        for (p, stride, norm) in &self.layers {
            h = conv(g, b, *p, h, *stride, 2);
            if *norm {
                h = g.instance_norm(h);
            }
            h = g.leaky_relu(h, 0.2);
            feats.push(h);
        }
        (conv(g, b, self.out, h, 1, 2), feats)
    }
}

/// Per-scale, per-layer intermediate activations of the discriminator.
#[derive(Debug, Clone, Default)]
pub struct DiscriminatorFeatures {
    pub scales: Vec<Vec<Var>>,
}

/// Scores (probabilities in log form, raw in least-squares form) and features, per scale.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub scores: Vec<Var>,
    pub features: DiscriminatorFeatures,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    nets: Vec<NLayer>,
}

impl Discriminator {
    pub fn new(config: &DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut s = ParamStore::new();
        let nets = (0..config.num_d).map(|i| NLayer::new(&mut s, &format!("d{i}"), config, rng)).collect();
        Self {
            config: config.clone(),
            params: s,
            nets,
        }
    }

    /// Score `image` (`[N,4,H,W]`, garment ⊕ mask) under `condition`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, condition: Var, image: Var, form: GanForm) -> DiscriminatorOutput {
        let joined = g.concat(condition, image);
        let mut input = g.affine(joined, 2.0, -1.0);
        let mut scores = Vec::new();
        let mut scales = Vec::new();
        for (i, net) in self.nets.iter().enumerate() {
            if i > 0 {
                input = g.avg_pool(input);
            }
            let (raw, feats) = net.forward(g, b, input);
            scores.push(match form {
                GanForm::Log => g.sigmoid(raw),
                GanForm::Lsgan => raw,
            });
            scales.push(feats);
        }
        DiscriminatorOutput {
            scores,
            features: DiscriminatorFeatures { scales },
        }
    }
}

/// Adversarial terms: the full objective value and the generator's part of it.
#[derive(Debug, Clone, Copy)]
pub struct GanVars {
    pub l_gan: Var,
    pub generator: Var,
}

/// Adversarial loss on graph scores, averaged over scales.
///
/// Log form: `L = E[log D(x,y)] + E[log(1 - D(x,G(x)))]`, the discriminator
/// minimizes `-L` and the generator minimizes its second term. Scores are
/// clamped to `[eps, 1-eps]` before the log.
pub fn gan_terms(g: &mut Graph, real: &[Var], fake: &[Var], form: GanForm) -> Result<GanVars> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::invalid("real and fake score sets must have the same nonzero scale count"));
    }
    let mut l_terms = Vec::new();
    let mut g_terms = Vec::new();
    for (&r, &f) in real.iter().zip(fake) {
        match form {
            GanForm::Log => {
                let rc = g.clamp(r, GAN_EPS, 1.0 - GAN_EPS);
                let rl = g.log(rc);
                let real_term = g.mean(rl);
                let one_minus = g.affine(f, -1.0, 1.0);
                let fc = g.clamp(one_minus, GAN_EPS, 1.0 - GAN_EPS);
                let fl = g.log(fc);
                let fake_term = g.mean(fl);
                l_terms.push(g.add(real_term, fake_term));
                g_terms.push(fake_term);
            }
            GanForm::Lsgan => {
                let r1 = g.affine(r, 1.0, -1.0);
                let r2 = g.square(r1);
                let real_term = g.mean(r2);
                let f2 = g.square(f);
                let fake_term = g.mean(f2);
                let d_obj = g.add(real_term, fake_term);
                l_terms.push(g.affine(d_obj, -1.0, 0.0));
                let f1 = g.affine(f, 1.0, -1.0);
                let f1s = g.square(f1);
                g_terms.push(g.mean(f1s));
            }
        }
    }
    let w = 1.0 / real.len() as f64;
    let l_gan = g.weighted_sum(&l_terms.iter().map(|v| (*v, w)).collect::<Vec<_>>());
    let generator = g.weighted_sum(&g_terms.iter().map(|v| (*v, w)).collect::<Vec<_>>());
    Ok(GanVars { l_gan, generator })
}

/// Adversarial values for plain score arrays: `(L_GAN, discriminator objective, generator objective)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLoss {
    pub l_gan: f64,
    pub discriminator: f64,
    pub generator: f64,
}

pub fn gan_loss(d_real: &[f64], d_fake: &[f64], form: GanForm) -> Result<GanLoss> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("empty score set"));
    }
    let mut g = Graph::new();
    let r = g.input(Tensor::from_vec(&[d_real.len()], d_real.to_vec())?);
    let f = g.input(Tensor::from_vec(&[d_fake.len()], d_fake.to_vec())?);
    let t = gan_terms(&mut g, &[r], &[f], form)?;
    let l_gan = g.value(t.l_gan).item();
    Ok(GanLoss {
        l_gan,
        discriminator: -l_gan,
        generator: g.value(t.generator).item(),
    })
}

/// Mean absolute difference per layer, averaged over layers then scales.
/// Real features are treated as constants.
pub fn feature_matching_term(g: &mut Graph, real: &DiscriminatorFeatures, fake: &DiscriminatorFeatures) -> Result<Var> {
    if real.scales.len() != fake.scales.len() || real.scales.is_empty() {
        return Err(Error::invalid("feature sets have different scale counts"));
    }
    let mut per_scale = Vec::new();
    for (rs, fs) in real.scales.iter().zip(&fake.scales) {
        if rs.len() != fs.len() || rs.is_empty() {
            return Err(Error::invalid("feature sets have different layer counts"));
        }
        let mut layers = Vec::new();
        for (&r, &f) in rs.iter().zip(fs) {
            if g.value(r).shape() != g.value(f).shape() {
                return Err(Error::invalid(format!(
                    "feature shape mismatch: {:?} vs {:?}",
                    g.value(r).shape(),
                    g.value(f).shape()
                )));
            }
            let rd = g.detach(r);
            let d = g.sub(f, rd);
            let a = g.abs(d);
            layers.push(g.mean(a));
        }
        let w = 1.0 / layers.len() as f64;
        per_scale.push(g.weighted_sum(&layers.iter().map(|v| (*v, w)).collect::<Vec<_>>()));
    }
    let w = 1.0 / per_scale.len() as f64;
    Ok(g.weighted_sum(&per_scale.iter().map(|v| (*v, w)).collect::<Vec<_>>()))
}

/// [`feature_matching_term`] on plain tensors.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<f64> {
    let mut g = Graph::new();
    let mut lift = |s: &[Vec<Tensor>]| DiscriminatorFeatures {
        scales: s.iter().map(|l| l.iter().map(|t| g.input(t.clone())).collect()).collect(),
    };
    let (r, f) = (lift(real), lift(fake));
    let v = feature_matching_term(&mut g, &r, &f)?;
    Ok(g.value(v).item())
}

/// A frozen feature backbone for the perceptual loss.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    /// Per-layer loss weights; one per returned feature.
    fn weights(&self) -> Vec<f64>;
    /// Features of a `[N,3,H,W]` image batch in [0,1].
    fn features(&self, g: &mut Graph, x: Var) -> Vec<Var>;
}

/// Features are the pixels themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }
    fn weights(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn features(&self, _g: &mut Graph, x: Var) -> Vec<Var> {
        vec![x]
    }
}

const VGG19_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
pub const VGG_LAYER_WEIGHTS: [f64; 5] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0];

/// VGG-19 convolutional trunk; features are the first ReLU of each of the five blocks.
/// Weights come from a tensor container with `conv{block}_{i}.weight/.bias` entries.
pub struct Vgg19 {
    params: ParamStore,
    convs: Vec<Vec<ConvP>>,
}

impl Vgg19 {
    fn layout() -> Vec<Vec<(String, usize, usize)>> {
        let mut cin = 3;
        VGG19_BLOCKS
            .iter()
            .enumerate()
            .map(|(b, &(n, c))| {
                (0..n)
                    .map(|i| {
                        let e = (format!("conv{}_{}", b + 1, i + 1), c, cin);
                        cin = c;
                        e
                    })
                    .collect()
            })
            .collect()
    }

    fn with_store(params: ParamStore) -> Self {
        let mut idx = 0;
        let convs = Self::layout()
            .iter()
            .map(|blk| {
                blk.iter()
                    .map(|_| {
                        let p = ConvP {
                            w: ParamId(idx),
                            b: ParamId(idx + 1),
                        };
                        idx += 2;
                        p
                    })
                    .collect()
            })
            .collect();
        Self { params, convs }
    }

    /// Random weights in the right layout (tests and file generation).
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for blk in Self::layout() {
            for (name, cout, cin) in blk {
                conv_p(&mut s, &name, cout, cin, 3, &mut rng);
            }
        }
        Self::with_store(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::config(format!("perceptual backbone weights not found: {}", path.display())));
        }
        let (_, tensors) = container::read(path)?;
        let mut store = Self::random(0).params;
        store
            .load(tensors)
            .map_err(|e| Error::config(format!("{}: not a VGG-19 weight file: {e}", path.display())))?;
        Ok(Self::with_store(store))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.params.entries();
        let refs: Vec<(String, &Tensor)> = entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        container::write(path, serde_json::json!({"kind": "vgg19"}), &refs)
    }
}

impl FeatureExtractor for Vgg19 {
    fn name(&self) -> &str {
        "vgg19"
    }
    fn weights(&self) -> Vec<f64> {
        VGG_LAYER_WEIGHTS.to_vec()
    }
    fn features(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let b = self.params.bind(g, false);
        let chans: Vec<Var> = (0..3)
            .map(|c| {
                let s = g.slice_channels(x, c, 1);
                g.affine(s, 1.0 / IMAGENET_STD[c], -IMAGENET_MEAN[c] / IMAGENET_STD[c])
            })
            .collect();
        let rg = g.concat(chans[0], chans[1]);
        let mut h = g.concat(rg, chans[2]);
        let mut out = Vec::new();
        for (bi, blk) in self.convs.iter().enumerate() {
            if bi > 0 {
                h = g.max_pool2(h);
            }
            for (i, p) in blk.iter().enumerate() {
                h = conv(g, &b, *p, h, 1, 1);
                h = g.relu(h);
                if i == 0 {
                    out.push(h);
                }
            }
            if bi == self.convs.len() - 1 {
                break;
            }
        }
        out
    }
}

/// Which perceptual backbone to use.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PerceptualBackbone {
    /// no backbone; only valid when the perceptual weight is 0
    #[default]
    None,
    Identity,
    Vgg19 { weights: PathBuf },
}

impl PerceptualBackbone {
    pub fn load(&self) -> Result<Option<Arc<dyn FeatureExtractor>>> {
        Ok(match self {
            PerceptualBackbone::None => None,
            PerceptualBackbone::Identity => Some(Arc::new(IdentityExtractor)),
            PerceptualBackbone::Vgg19 { weights } => Some(Arc::new(Vgg19::load(weights)?)),
        })
    }
}

/// Weighted L1 between backbone features of `garment ⊙ mask` and of `target`.
pub fn perceptual_term(
    g: &mut Graph,
    extractor: &dyn FeatureExtractor,
    garment: Var,
    mask: Var,
    target: Var,
) -> Result<Var> {
    let masked = g.mul_channel(garment, mask);
    if g.value(masked).shape() != g.value(target).shape() {
        return Err(Error::invalid("prediction and target shapes differ"));
    }
    let target = g.detach(target);
    let fp = extractor.features(g, masked);
    let ft = extractor.features(g, target);
    let w = extractor.weights();
    if fp.len() != w.len() {
        return Err(Error::config(format!(
            "extractor {} returned {} layers for {} weights",
            extractor.name(),
            fp.len(),
            w.len()
        )));
    }
    let mut terms = Vec::new();
    for ((p, t), w) in fp.into_iter().zip(ft).zip(w) {
        let t = g.detach(t);
        let d = g.sub(p, t);
        let a = g.abs(d);
        terms.push((g.mean(a), w));
    }
    Ok(g.weighted_sum(&terms))
}

/// [`perceptual_term`] on images.
pub fn perceptual_loss(pred: &Image, mask: &SoftMask, target: &Image, extractor: &dyn FeatureExtractor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(image_batch(std::slice::from_ref(pred))?);
    let m = g.input(image_batch(&[mask.to_image()])?);
    let t = g.input(image_batch(std::slice::from_ref(target))?);
    let v = perceptual_term(&mut g, extractor, p, m, t)?;
    Ok(g.value(v).item())
}

/// Individual loss values for one generator step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// full adversarial value L_GAN
    pub gan: f64,
    /// generator's adversarial term
    pub gan_generator: f64,
    pub fm: f64,
    pub vgg: f64,
    pub total: f64,
    pub lambda0: f64,
    pub lambda1: f64,
}

/// The two optimizer objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    pub generator: f64,
    pub discriminator: f64,
}

impl LossBreakdown {
    pub fn new(gan: f64, gan_generator: f64, fm: f64, vgg: f64, lambda0: f64, lambda1: f64) -> Self {
        let mut b = Self {
            gan,
            gan_generator,
            fm,
            vgg,
            total: 0.0,
            lambda0,
            lambda1,
        };
        b.total = total_objective(&b).generator;
        b
    }
}

pub fn total_objective(parts: &LossBreakdown) -> Objectives {
    Objectives {
        generator: parts.gan_generator + parts.lambda0 * parts.fm + parts.lambda1 * parts.vgg,
        discriminator: -parts.gan,
    }
}

/// Generator and discriminator of one garment.
#[derive(Debug, Clone)]
pub struct GsNet {
    pub arch: ArchConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

/// Evaluation-mode output for one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct GsOutput {
    pub garment: Image,
    pub mask: SoftMask,
}

impl GsNet {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Generator::new(&arch.generator, &mut rng);
        let discriminator = Discriminator::new(&arch.discriminator, &mut rng);
        Ok(Self {
            arch: arch.clone(),
            generator,
            discriminator,
        })
    }

    /// A network whose output is the constant `color` with constant `mask`
    /// regardless of input. Used to probe which network produced a frame.
    pub fn constant(arch: &ArchConfig, color: [f32; 3], mask: f32) -> Result<Self> {
        let mut net = Self::new(arch, 0)?;
        let mut entries = net.generator.params.entries();
        let head_w = net.generator.head.w.0;
        let head_b = net.generator.head.b.0;
        entries[head_w].1 = Tensor::zeros(entries[head_w].1.shape());
        let to_raw = |c: f32| {
            let t = (2.0 * c as f64 - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            t.atanh()
        };
        let mask_raw = if mask >= 1.0 {
            1000.0
        } else if mask <= 0.0 {
            -1000.0
        } else {
            (mask as f64 / (1.0 - mask as f64)).ln()
        };
        entries[head_b].1 = Tensor::from_vec(&[4], vec![to_raw(color[0]), to_raw(color[1]), to_raw(color[2]), mask_raw])?;
        net.generator.params.load(entries)?;
        Ok(net)
    }

    fn check_input(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        if channels != self.arch.mode.input_channels() {
            return Err(Error::invalid(format!(
                "network trained for mode {} expects {} input channels, got {channels}",
                self.arch.mode,
                self.arch.mode.input_channels()
            )));
        }
        let m = self.arch.side_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) || h < m * 4 || w < m * 4 {
            return Err(Error::invalid(format!(
                "input {h}x{w} must be a multiple of {m} and at least {}",
                m * 4
            )));
        }
        Ok(())
    }

    /// Batch evaluation: `[N,C,H,W]` → (`[N,3,H,W]`, `[N,1,H,W]`).
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if x.shape().len() != 4 {
            return Err(Error::invalid("expected an [N,C,H,W] batch"));
        }
        let (_, c, h, w) = x.dims4();
        self.check_input(c, h, w)?;
        let mut g = Graph::new();
        let b = self.generator.params.bind(&mut g, false);
        let xv = g.input(x.clone());
        let (gar, m) = self.generator.forward(&mut g, &b, xv);
        Ok((g.value(gar).clone(), g.value(m).clone()))
    }

    /// Evaluate on one representation image.
    pub fn gs_forward(&self, rep: &Image) -> Result<GsOutput> {
        let x = image_batch(std::slice::from_ref(rep))?;
        let (gar, m) = self.predict(&x)?;
        Ok(GsOutput {
            garment: tensor_image(&gar, 0)?,
            mask: SoftMask::from_image(&tensor_image(&m, 0)?)?,
        })
    }
}

/// Stack images (`C,H,W` each) into an `[N,C,H,W]` tensor.
pub fn image_batch(images: &[Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (c, (h, w)) = (first.channels(), first.dims());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.channels() != c || img.dims() != (h, w) {
            return Err(Error::invalid("images in a batch must share a shape"));
        }
        data.extend(img.data().iter().map(|v| *v as f64));
    }
    Tensor::from_vec(&[images.len(), c, h, w], data)
}

/// Sample `n` of an `[N,C,H,W]` tensor as an image.
pub fn tensor_image(t: &Tensor, n: usize) -> Result<Image> {
    let (_, c, h, w) = t.dims4();
    let s = t.sample(n);
    Image::from_vec(c, h, w, s.data().iter().map(|v| *v as f32).collect())
}

/// A checkpoint: architecture, both networks, optional optimizer state and
/// training bookkeeping.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: GsNet,
    pub opt_g: Option<Adam>,
    pub opt_d: Option<Adam>,
    pub step: u64,
    pub epoch: u64,
    pub manifest_hash: String,
    /// trainer-owned state (schedule position, rng, loss averages)
    pub state: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    arch: ArchConfig,
    step: u64,
    epoch: u64,
    manifest_hash: String,
    state: serde_json::Value,
    opt_g: Option<OptMeta>,
    opt_d: Option<OptMeta>,
}

#[derive(Serialize, Deserialize)]
struct OptMeta {
    config: crate::nn::AdamConfig,
    step: u64,
}

impl Checkpoint {
    pub fn inference(net: GsNet) -> Self {
        Self {
            net,
            opt_g: None,
            opt_d: None,
            step: 0,
            epoch: 0,
            manifest_hash: String::new(),
            state: serde_json::Value::Null,
        }
    }

    pub fn mode(&self) -> Mode {
        self.net.arch.mode
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            arch: self.net.arch.clone(),
            step: self.step,
            epoch: self.epoch,
            manifest_hash: self.manifest_hash.clone(),
            state: self.state.clone(),
            opt_g: self.opt_g.as_ref().map(|o| OptMeta { config: o.config, step: o.step }),
            opt_d: self.opt_d.as_ref().map(|o| OptMeta { config: o.config, step: o.step }),
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::json("checkpoint header", e))?;
        let g = self.net.generator.params.entries();
        let d = self.net.discriminator.params.entries();
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        tensors.extend(g.iter().map(|(n, t)| (format!("g/{n}"), t)));
        tensors.extend(d.iter().map(|(n, t)| (format!("d/{n}"), t)));
        for (tag, opt) in [("opt_g", &self.opt_g), ("opt_d", &self.opt_d)] {
            if let Some(o) = opt {
                tensors.extend(o.m.iter().enumerate().map(|(i, t)| (format!("{tag}/m/{i}"), t)));
                tensors.extend(o.v.iter().enumerate().map(|(i, t)| (format!("{tag}/v/{i}"), t)));
            }
        }
        container::write(path, meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = container::read(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta).map_err(|e| Error::json(path.display().to_string(), e))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::codec(path, format!("unexpected checkpoint format {:?}", meta.format)));
        }
        let mut net = GsNet::new(&meta.arch, 0)?;
        let mut groups: std::collections::BTreeMap<&str, Vec<(String, Tensor)>> = Default::default();
        for (name, t) in tensors {
            let (tag, rest) = match name.split_once('/') {
                Some(("g", r)) => ("g", r.to_string()),
                Some(("d", r)) => ("d", r.to_string()),
                Some((other, r)) => match other {
                    "opt_g" | "opt_d" => {
                        let key = if other == "opt_g" { "opt_g" } else { "opt_d" };
                        (key, r.to_string())
                    }
                    _ => return Err(Error::codec(path, format!("unexpected tensor {name}"))),
                },
                None => return Err(Error::codec(path, format!("unexpected tensor {name}"))),
            };
            groups.entry(tag).or_default().push((rest, t));
        }
        let mismatch = |e: Error| Error::codec(path, e.to_string());
        net.generator.params.load(groups.remove("g").unwrap_or_default()).map_err(mismatch)?;
        net.discriminator.params.load(groups.remove("d").unwrap_or_default()).map_err(mismatch)?;
        if net.generator.stem_channels() != meta.arch.mode.input_channels() {
            return Err(Error::codec(path, "mode stamp does not match the first layer"));
        }
        let mut opt = |tag: &str, m: Option<OptMeta>, store: &ParamStore| -> Result<Option<Adam>> {
            let Some(m) = m else { return Ok(None) };
            let entries = groups.remove(tag).unwrap_or_default();
            let mut adam = Adam::new(store, m.config);
            adam.step = m.step;
            let n = store.len();
            if entries.len() != 2 * n {
                return Err(Error::codec(path, format!("{tag}: expected {} moment tensors", 2 * n)));
            }
            for (name, t) in entries {
                let (kind, idx) = name.split_once('/').ok_or_else(|| Error::codec(path, "bad moment name"))?;
                let i: usize = idx.parse().map_err(|_| Error::codec(path, "bad moment index"))?;
                let slot = match kind {
                    "m" => adam.m.get_mut(i),
                    "v" => adam.v.get_mut(i),
                    _ => None,
                }
                .ok_or_else(|| Error::codec(path, "bad moment entry"))?;
                if slot.shape() != t.shape() {
                    return Err(Error::codec(path, "moment shape mismatch"));
                }
                *slot = t;
            }
            Ok(Some(adam))
        };
        let opt_g = opt("opt_g", meta.opt_g, &net.generator.params)?;
        let opt_d = opt("opt_d", meta.opt_d, &net.discriminator.params)?;
        Ok(Self {
            net,
            opt_g,
            opt_d,
            step: meta.step,
            epoch: meta.epoch,
            manifest_hash: meta.manifest_hash,
            state: meta.state,
        })
    }
}
