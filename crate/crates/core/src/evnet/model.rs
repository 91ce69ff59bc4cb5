use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    self, concat_channels, conv3d_backward, conv3d_forward, downconv, downconv_backward, prelu,
    prelu_backward, raw_input_at_level, softmax_backward, softmax_channels, split_channels,
    tile_channels, upconv, upconv_backward, ConvParams,
};
use super::{EvNetConfig, MultiscaleMode, Tensor5};
use crate::{Error, Result};

/// Convolution chain with a PReLU after every convolution and a residual
/// added before the last activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub convs: Vec<ConvParams>,
    pub slopes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLevel {
    /// Downsampling convolution and its activation (absent at level 0).
    pub down: Option<(ConvParams, Vec<f64>)>,
    pub block: Block,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLevel {
    pub up: ConvParams,
    pub up_slopes: Vec<f64>,
    pub block: Block,
}

/// All learnable parameters. Gradients and optimizer state use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub encoder: Vec<EncoderLevel>,
    /// `decoder[l]` produces the level-`l` features.
    pub decoder: Vec<DecoderLevel>,
    pub head: ConvParams,
}

fn conv_named<'a>(
    out: &mut Vec<(String, Vec<usize>, &'a [f64])>,
    prefix: &str,
    c: &'a ConvParams,
) {
    out.push((format!("{prefix}.weight"), c.kernel.shape().to_vec(), c.kernel.data()));
    out.push((format!("{prefix}.bias"), vec![c.bias.len()], &c.bias));
}

fn conv_named_mut<'a>(out: &mut Vec<(String, &'a mut [f64])>, prefix: &str, c: &'a mut ConvParams) {
    out.push((format!("{prefix}.weight"), c.kernel.data_mut()));
    out.push((format!("{prefix}.bias"), &mut c.bias));
}

impl Params {
    /// Every tensor as `(name, shape, values)` in a fixed order.
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (l, e) in self.encoder.iter().enumerate() {
            if let Some((d, s)) = &e.down {
                conv_named(&mut out, &format!("enc{l}.down"), d);
                out.push((format!("enc{l}.down.slope"), vec![s.len()], s));
            }
            block_named(&mut out, &format!("enc{l}"), &e.block);
        }
        for (l, d) in self.decoder.iter().enumerate() {
            conv_named(&mut out, &format!("dec{l}.up"), &d.up);
            out.push((format!("dec{l}.up.slope"), vec![d.up_slopes.len()], &d.up_slopes));
            block_named(&mut out, &format!("dec{l}"), &d.block);
        }
        conv_named(&mut out, "head", &self.head);
        out
    }

    /// Mutable view of every tensor, same order as [`Params::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, e) in self.encoder.iter_mut().enumerate() {
            if let Some((d, s)) = &mut e.down {
                conv_named_mut(&mut out, &format!("enc{l}.down"), d);
                out.push((format!("enc{l}.down.slope"), s.as_mut_slice()));
            }
            block_named_mut(&mut out, &format!("enc{l}"), &mut e.block);
        }
        for (l, d) in self.decoder.iter_mut().enumerate() {
            conv_named_mut(&mut out, &format!("dec{l}.up"), &mut d.up);
            out.push((format!("dec{l}.up.slope"), d.up_slopes.as_mut_slice()));
            block_named_mut(&mut out, &format!("dec{l}"), &mut d.block);
        }
        conv_named_mut(&mut out, "head", &mut self.head);
        out
    }

    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        for (_, v) in z.named_mut() {
            v.fill(0.0);
        }
        z
    }

    pub fn num_values(&self) -> usize {
        self.named().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Zero every kernel weight that reads a raw-input channel.
    pub fn zero_raw_input_weights(&mut self, cfg: &EvNetConfig) {
        if !cfg.multiscale_inputs || cfg.multiscale_mode != MultiscaleMode::Concat {
            return;
        }
        for (l, e) in self.encoder.iter_mut().enumerate().skip(1) {
            let k = &mut e.block.convs[0].kernel;
            let [cout, cin, ..] = k.shape();
            debug_assert_eq!(cin, cfg.channels(l) + 1);
            for oc in 0..cout {
                k.plane_mut(oc, cin - 1).fill(0.0);
            }
        }
    }

    /// Drop the raw-input channels, giving parameters for `cfg.plain()`.
    pub fn without_raw_inputs(&self, cfg: &EvNetConfig) -> Params {
        let mut p = self.clone();
        if !cfg.multiscale_inputs || cfg.multiscale_mode != MultiscaleMode::Concat {
            return p;
        }
        for e in p.encoder.iter_mut().skip(1) {
            let conv = &mut e.block.convs[0];
            let [cout, cin, kd, kh, kw] = conv.kernel.shape();
            let kernel = Tensor5::from_fn([cout, cin - 1, kd, kh, kw], |i| conv.kernel.get(i));
            conv.kernel = kernel;
        }
        p
    }
}

fn block_named<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, prefix: &str, b: &'a Block) {
    for (i, (c, s)) in b.convs.iter().zip(&b.slopes).enumerate() {
        conv_named(out, &format!("{prefix}.conv{i}"), c);
        out.push((format!("{prefix}.conv{i}.slope"), vec![s.len()], s));
    }
}

fn block_named_mut<'a>(out: &mut Vec<(String, &'a mut [f64])>, prefix: &str, b: &'a mut Block) {
    for (i, (c, s)) in b.convs.iter_mut().zip(b.slopes.iter_mut()).enumerate() {
        conv_named_mut(out, &format!("{prefix}.conv{i}"), c);
        out.push((format!("{prefix}.conv{i}.slope"), s.as_mut_slice()));
    }
}

struct Init<'a> {
    rng: ChaCha8Rng,
    cfg: &'a EvNetConfig,
}

impl Init<'_> {
    /// Fan-in scaled uniform kernel, zero bias.
    fn conv(&mut self, shape: [usize; 5], fan_in: usize, gain: f64, stride: usize, padding: usize) -> ConvParams {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let kernel = Tensor5::from_fn(shape, |_| rng.random_range(-bound..=bound));
        ConvParams {
            kernel,
            bias: vec![0.0; shape[0]],
            stride,
            padding,
        }
    }

    fn prelu_gain(&self) -> f64 {
        let a = self.cfg.prelu_init;
        (2.0 / (1.0 + a * a)).sqrt()
    }

    fn block(&mut self, in_ch: usize, ch: usize, n: usize) -> Block {
        let k = self.cfg.kernel_size;
        let gain = self.prelu_gain();
        let mut convs = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n);
        for i in 0..n {
            let cin = if i == 0 { in_ch } else { ch };
            convs.push(self.conv([ch, cin, k, k, k], cin * k * k * k, gain, 1, k / 2));
            slopes.push(vec![self.cfg.prelu_init; ch]);
        }
        Block { convs, slopes }
    }
}

fn block_input_channels(cfg: &EvNetConfig, level: usize) -> usize {
    if level == 0 {
        1
    } else if cfg.multiscale_inputs && cfg.multiscale_mode == MultiscaleMode::Concat {
        cfg.channels(level) + 1
    } else {
        cfg.channels(level)
    }
}

/// Seeded initialization for `cfg`.
pub fn init_params(cfg: &EvNetConfig) -> Result<Params> {
    cfg.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        cfg,
    };
    let gain = init.prelu_gain();
    let mut encoder = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let ch = cfg.channels(l);
        let down = (l > 0).then(|| {
            let prev = cfg.channels(l - 1);
            let c = init.conv([ch, prev, 2, 2, 2], prev * 8, gain, 2, 0);
            (c, vec![cfg.prelu_init; ch])
        });
        let block = init.block(block_input_channels(cfg, l), ch, cfg.convs_per_block[l]);
        encoder.push(EncoderLevel { down, block });
    }
    let mut decoder = Vec::with_capacity(cfg.levels - 1);
    for l in 0..cfg.levels - 1 {
        let ch = cfg.channels(l);
        let below = cfg.channels(l + 1);
        // transposed kernel: (input side, output side, 2, 2, 2); each output voxel sees one tap
        let mut up = init.conv([below, ch, 2, 2, 2], below, gain, 2, 0);
        up.bias = vec![0.0; ch];
        let block = init.block(2 * ch, ch, cfg.convs_per_block[l]);
        decoder.push(DecoderLevel {
            up,
            up_slopes: vec![cfg.prelu_init; ch],
            block,
        });
    }
    let c0 = cfg.channels(0);
    let head = init.conv([2, c0, 1, 1, 1], c0, 1.0, 1, 0);
    Ok(Params {
        encoder,
        decoder,
        head,
    })
}

struct BlockCache {
    /// Input of each convolution.
    inputs: Vec<Tensor5>,
    /// Input of each activation (the last includes the residual).
    pre: Vec<Tensor5>,
}

fn block_forward(x: Tensor5, residual: &Tensor5, b: &Block) -> Result<(Tensor5, BlockCache)> {
    let n = b.convs.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut h = x;
    for (i, (c, s)) in b.convs.iter().zip(&b.slopes).enumerate() {
        let mut z = conv3d_forward(&h, c)?;
        if i + 1 == n {
            if z.shape() != residual.shape() {
                return Err(Error::Shape("residual shape differs from block output".into()));
            }
            z.add_assign(residual);
        }
        let out = prelu(&z, s)?;
        inputs.push(h);
        pre.push(z);
        h = out;
    }
    Ok((h, BlockCache { inputs, pre }))
}

/// Returns `(grad_input, grad_residual)` and writes parameter grads into `g`.
fn block_backward(cache: &BlockCache, b: &Block, g: &mut Block, grad_out: Tensor5) -> Result<(Tensor5, Tensor5)> {
    let n = b.convs.len();
    let mut grad = grad_out;
    let mut grad_res = None;
    for i in (0..n).rev() {
        let (gz, gs) = prelu_backward(&cache.pre[i], &b.slopes[i], &grad)?;
        g.slopes[i] = gs;
        if i + 1 == n {
            grad_res = Some(gz.clone());
        }
        let (gx, cg) = conv3d_backward(&cache.inputs[i], &b.convs[i], &gz)?;
        g.convs[i].kernel = cg.kernel;
        g.convs[i].bias = cg.bias;
        grad = gx;
    }
    Ok((grad, grad_res.expect("block has at least one conv")))
}

struct EncoderCache {
    down_in: Option<Tensor5>,
    down_pre: Option<Tensor5>,
    block: BlockCache,
    /// Feature channels of the block input that came from the downconv.
    feature_channels: usize,
}

struct DecoderCache {
    up_in: Tensor5,
    up_pre: Tensor5,
    block: BlockCache,
}

/// Intermediate values needed by [`backward`].
pub struct ForwardCache {
    encoder: Vec<EncoderCache>,
    decoder: Vec<DecoderCache>,
    head_in: Tensor5,
    output: Tensor5,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor5 {
        &self.output
    }
}

fn check_input(input: &Tensor5, params: &Params, cfg: &EvNetConfig) -> Result<()> {
    cfg.validate()?;
    if input.channels() != 1 {
        return Err(Error::Shape(format!(
            "network input must have 1 channel, got {}",
            input.channels()
        )));
    }
    let m = cfg.size_multiple();
    if input.spatial().iter().any(|&n| n == 0 || n % m != 0) {
        return Err(Error::Shape(format!(
            "input spatial dims {:?} must be positive multiples of {m}",
            input.spatial()
        )));
    }
    if params.encoder.len() != cfg.levels || params.decoder.len() + 1 != cfg.levels {
        return Err(Error::Shape("parameters do not match the configured levels".into()));
    }
    for (l, e) in params.encoder.iter().enumerate() {
        let want = block_input_channels(cfg, l);
        if e.block.convs[0].in_channels() != want {
            return Err(Error::Shape(format!(
                "encoder level {l} block expects {} input channels, config implies {want}",
                e.block.convs[0].in_channels()
            )));
        }
    }
    Ok(())
}

/// Forward pass keeping the activations for [`backward`].
pub fn forward_train(input: &Tensor5, params: &Params, cfg: &EvNetConfig) -> Result<ForwardCache> {
    check_input(input, params, cfg)?;
    let mut enc_cache = Vec::with_capacity(cfg.levels);
    let mut skips = Vec::with_capacity(cfg.levels);

    let residual = tile_channels(input, cfg.channels(0));
    let (mut h, block) = block_forward(input.clone(), &residual, &params.encoder[0].block)?;
    enc_cache.push(EncoderCache {
        down_in: None,
        down_pre: None,
        block,
        feature_channels: 1,
    });
    for l in 1..cfg.levels {
        let (dc, ds) = params.encoder[l]
            .down
            .as_ref()
            .ok_or_else(|| Error::Shape(format!("encoder level {l} lacks a downconv")))?;
        let a = downconv(&h, dc)?;
        let d = prelu(&a, ds)?;
        let ch = d.channels();
        let block_in = if cfg.multiscale_inputs {
            let raw = raw_input_at_level(input, l)?;
            match cfg.multiscale_mode {
                MultiscaleMode::Concat => concat_channels(&d, &raw)?,
                MultiscaleMode::Add => ops::add(&d, &tile_channels(&raw, ch))?,
            }
        } else {
            d.clone()
        };
        let (out, block) = block_forward(block_in, &d, &params.encoder[l].block)?;
        let prev = std::mem::replace(&mut h, out);
        enc_cache.push(EncoderCache {
            down_in: Some(prev.clone()),
            down_pre: Some(a),
            block,
            feature_channels: ch,
        });
        skips.push(prev);
    }

    let mut dec_cache: Vec<Option<DecoderCache>> = (0..cfg.levels - 1).map(|_| None).collect();
    for l in (0..cfg.levels - 1).rev() {
        let dp = &params.decoder[l];
        let a = upconv(&h, &dp.up)?;
        let u = prelu(&a, &dp.up_slopes)?;
        let block_in = concat_channels(&u, &skips[l])?;
        let (out, block) = block_forward(block_in, &u, &dp.block)?;
        let up_in = std::mem::replace(&mut h, out);
        dec_cache[l] = Some(DecoderCache {
            up_in,
            up_pre: a,
            block,
        });
    }
    let logits = conv3d_forward(&h, &params.head)?;
    let output = softmax_channels(&logits);
    Ok(ForwardCache {
        encoder: enc_cache,
        decoder: dec_cache.into_iter().map(|c| c.expect("filled")).collect(),
        head_in: h,
        output,
    })
}

/// Per-voxel two-label distribution `(batch, 2, d, h, w)`.
pub fn evnet_forward(input: &Tensor5, params: &Params, cfg: &EvNetConfig) -> Result<Tensor5> {
    Ok(forward_train(input, params, cfg)?.output)
}

/// Parameter gradients given the gradient of the loss w.r.t. the network output.
pub fn backward(cache: &ForwardCache, params: &Params, cfg: &EvNetConfig, grad_out: &Tensor5) -> Result<Params> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::Shape("output gradient shape mismatch".into()));
    }
    let mut g = params.zeros_like();
    let g_logits = softmax_backward(&cache.output, grad_out);
    let (mut gh, hg) = conv3d_backward(&cache.head_in, &params.head, &g_logits)?;
    g.head.kernel = hg.kernel;
    g.head.bias = hg.bias;

    let mut g_skip: Vec<Tensor5> = Vec::with_capacity(cfg.levels - 1);
    for l in 0..cfg.levels - 1 {
        let dc = &cache.decoder[l];
        let dp = &params.decoder[l];
        let (g_in, g_res) = block_backward(&dc.block, &dp.block, &mut g.decoder[l].block, gh)?;
        let ch = cfg.channels(l);
        let (mut g_u, gs) = split_channels(&g_in, ch)?;
        g_u.add_assign(&g_res);
        g_skip.push(gs);
        let (g_a, g_slopes) = prelu_backward(&dc.up_pre, &dp.up_slopes, &g_u)?;
        g.decoder[l].up_slopes = g_slopes;
        let (g_prev, ug) = upconv_backward(&dc.up_in, &dp.up, &g_a)?;
        g.decoder[l].up.kernel = ug.kernel;
        g.decoder[l].up.bias = ug.bias;
        gh = g_prev;
    }

    // gh now holds the gradient w.r.t. the bottom encoder output
    for l in (0..cfg.levels).rev() {
        if l < cfg.levels - 1 {
            gh.add_assign(&g_skip[l]);
        }
        let ec = &cache.encoder[l];
        let ep = &params.encoder[l];
        let (g_in, g_res) = block_backward(&ec.block, &ep.block, &mut g.encoder[l].block, gh)?;
        if l == 0 {
            break;
        }
        let mut g_d = if cfg.multiscale_inputs && cfg.multiscale_mode == MultiscaleMode::Concat {
            split_channels(&g_in, ec.feature_channels)?.0
        } else {
            g_in
        };
        g_d.add_assign(&g_res);
        let (dc, ds) = ep.down.as_ref().expect("checked in forward");
        let (g_a, g_slopes) = prelu_backward(ec.down_pre.as_ref().expect("level > 0"), ds, &g_d)?;
        let (g_prev, dg) = downconv_backward(ec.down_in.as_ref().expect("level > 0"), dc, &g_a)?;
        let gd = g.encoder[l].down.as_mut().expect("same layout");
        gd.0.kernel = dg.kernel;
        gd.0.bias = dg.bias;
        gd.1 = g_slopes;
        gh = g_prev;
    }
    Ok(g)
}
