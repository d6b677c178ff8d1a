//! The four studied architectures assembled from the shared blocks.
//!
//! One builder covers the grid: `use_residual` picks residual vs plain double
//! convolution blocks, `use_attention_gates` toggles gated skip connections.
//! Both on is the flagship model; both off is the standard U-Net baseline.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{AttentionBlock, AttentionBlockCfg, AttentionGate, Conv2dLayer, ConvBlock, UpConv2x};
use super::params::{Attached, Fwd, ParamStore};
use crate::error::{AruError, Result};
use crate::tensor::conv::maxpool2d;
use crate::tensor::io::{NamedTensor, TensorFile};
use crate::tensor::{ensure_finite, Element, Mode, Tensor};
use crate::tensor::tape::Tape;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ArchKind {
    Unet,
    Resunet,
    Attunet,
    Attresunet,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        ArchKind::Unet,
        ArchKind::Resunet,
        ArchKind::Attunet,
        ArchKind::Attresunet,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(ArchKind::Unet),
            "resunet" => Ok(ArchKind::Resunet),
            "attunet" => Ok(ArchKind::Attunet),
            "attresunet" => Ok(ArchKind::Attresunet),
            other => Err(AruError::InvalidArgument(format!(
                "unknown arch {other:?}; expected one of unet, resunet, attunet, attresunet"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Unet => "unet",
            ArchKind::Resunet => "resunet",
            ArchKind::Attunet => "attunet",
            ArchKind::Attresunet => "attresunet",
        }
    }

    /// (use_residual, use_attention_gates)
    pub fn flags(self) -> (bool, bool) {
        match self {
            ArchKind::Unet => (false, false),
            ArchKind::Resunet => (true, false),
            ArchKind::Attunet => (false, true),
            ArchKind::Attresunet => (true, true),
        }
    }

    pub fn from_flags(residual: bool, gates: bool) -> Self {
        match (residual, gates) {
            (false, false) => ArchKind::Unet,
            (true, false) => ArchKind::Resunet,
            (false, true) => ArchKind::Attunet,
            (true, true) => ArchKind::Attresunet,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NetworkConfig {
    pub encoder_channels: Vec<usize>,
    pub bottleneck_channels: usize,
    pub input_size: (usize, usize),
    pub use_residual: bool,
    pub use_attention_gates: bool,
    pub use_attention_blocks: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_channels: vec![64, 128, 256, 512],
            bottleneck_channels: 1024,
            input_size: (256, 256),
            use_residual: true,
            use_attention_gates: true,
            use_attention_blocks: false,
            in_channels: 1,
            out_channels: 1,
        }
    }
}

impl NetworkConfig {
    pub fn for_arch(kind: ArchKind) -> Self {
        let (use_residual, use_attention_gates) = kind.flags();
        NetworkConfig {
            use_residual,
            use_attention_gates,
            ..Default::default()
        }
    }

    pub fn arch_kind(&self) -> ArchKind {
        ArchKind::from_flags(self.use_residual, self.use_attention_gates)
    }

    pub fn levels(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(AruError::InvalidArgument(
                "encoder_channels must not be empty".into(),
            ));
        }
        if self.encoder_channels.iter().any(|&c| c == 0)
            || self.bottleneck_channels == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(AruError::InvalidArgument(
                "channel counts must be positive".into(),
            ));
        }
        let div = 1usize << self.levels();
        let (h, w) = self.input_size;
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(AruError::InvalidArgument(format!(
                "input size {h}x{w} must be divisible by {div} (one halving per encoder level)"
            )));
        }
        // A 1x1 bottleneck is degenerate: batch norm over a single spatial
        // element has zero variance and collapses the whole block to its
        // (zero-initialized) shift, leaving a silently dead bottleneck that
        // the decoder merely routes around through the skips.
        if h / div < 2 || w / div < 2 {
            return Err(AruError::InvalidArgument(format!(
                "input size {h}x{w} pools down to {}x{} at the bottleneck; \
                 need at least 2x2 after {} halvings",
                h / div,
                w / div,
                self.levels()
            )));
        }
        Ok(())
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let chans: Vec<String> = self.encoder_channels.iter().map(|c| c.to_string()).collect();
        vec![
            ("encoder_channels".into(), chans.join(",")),
            ("bottleneck_channels".into(), self.bottleneck_channels.to_string()),
            (
                "input_size".into(),
                format!("{}x{}", self.input_size.0, self.input_size.1),
            ),
            ("use_residual".into(), self.use_residual.to_string()),
            ("use_attention_gates".into(), self.use_attention_gates.to_string()),
            ("use_attention_blocks".into(), self.use_attention_blocks.to_string()),
            ("in_channels".into(), self.in_channels.to_string()),
            ("out_channels".into(), self.out_channels.to_string()),
        ]
    }

    pub fn from_meta(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let get = |key: &str| {
            lookup(key).ok_or_else(|| AruError::Format(format!("checkpoint meta missing {key:?}")))
        };
        let parse_usize = |key: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|_| AruError::Format(format!("bad {key:?} value {v:?}")))
        };
        let parse_bool = |key: &str, v: &str| {
            v.parse::<bool>()
                .map_err(|_| AruError::Format(format!("bad {key:?} value {v:?}")))
        };
        let chans_raw = get("encoder_channels")?;
        let encoder_channels = chans_raw
            .split(',')
            .map(|c| parse_usize("encoder_channels", c.trim()))
            .collect::<Result<Vec<_>>>()?;
        let size_raw = get("input_size")?;
        let (h, w) = size_raw
            .split_once('x')
            .ok_or_else(|| AruError::Format(format!("bad input_size {size_raw:?}")))?;
        let cfg = NetworkConfig {
            encoder_channels,
            bottleneck_channels: parse_usize("bottleneck_channels", &get("bottleneck_channels")?)?,
            input_size: (parse_usize("input_size", h)?, parse_usize("input_size", w)?),
            use_residual: parse_bool("use_residual", &get("use_residual")?)?,
            use_attention_gates: parse_bool("use_attention_gates", &get("use_attention_gates")?)?,
            use_attention_blocks: parse_bool("use_attention_blocks", &get("use_attention_blocks")?)?,
            in_channels: parse_usize("in_channels", &get("in_channels")?)?,
            out_channels: parse_usize("out_channels", &get("out_channels")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

struct DecoderStage {
    up: UpConv2x,
    gate: Option<AttentionGate>,
    block: ConvBlock,
    attn: Option<AttentionBlock>,
}

pub struct Network<T: Element> {
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    enc: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    dec: Vec<DecoderStage>,
    final_conv: Conv2dLayer,
}

/// Per-stage activations captured during one forward pass, plus the attached
/// parameter leaves (needed to pull gradients out of the tape afterwards).
pub struct Trace<T: Element> {
    /// E_1..E_L, pre-pool, finest to coarsest.
    pub encoder: Vec<Tensor<T>>,
    pub bottleneck: Tensor<T>,
    /// U_1..U_L, post-upconv decoder signals, coarsest to finest.
    pub ups: Vec<Tensor<T>>,
    /// Attention-gate coefficient maps, coarsest to finest; empty without gates.
    pub alphas: Vec<Tensor<T>>,
    /// D_1..D_L decoder block outputs, coarsest to finest.
    pub decoder: Vec<Tensor<T>>,
    /// Pre-sigmoid output of the final 1x1 conv.
    pub logits: Tensor<T>,
    pub attached: Attached<T>,
}

impl<T: Element> Network<T> {
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chans = &config.encoder_channels;
        let levels = chans.len();

        let mut enc = Vec::with_capacity(levels);
        let mut prev = config.in_channels;
        for (i, &c) in chans.iter().enumerate() {
            enc.push(ConvBlock::new(
                &mut store,
                &mut rng,
                &format!("enc{}", i + 1),
                prev,
                c,
                config.use_residual,
            ));
            prev = c;
        }

        let bottleneck = ConvBlock::new(
            &mut store,
            &mut rng,
            "bottleneck",
            prev,
            config.bottleneck_channels,
            config.use_residual,
        );
        prev = config.bottleneck_channels;

        let mut dec = Vec::with_capacity(levels);
        for i in 0..levels {
            let skip_c = chans[levels - 1 - i];
            let name = format!("dec{}", i + 1);
            let up = UpConv2x::new(&mut store, &mut rng, &format!("{name}.up"), prev, skip_c);
            let gate = config.use_attention_gates.then(|| {
                AttentionGate::new(&mut store, &mut rng, &format!("{name}.gate"), skip_c, skip_c)
            });
            let block = ConvBlock::new(
                &mut store,
                &mut rng,
                &format!("{name}.block"),
                2 * skip_c,
                skip_c,
                config.use_residual,
            );
            // self-attention stays at the two coarsest stages, where the
            // quadratic position-by-position matrix is still small
            let attn = (config.use_attention_blocks && i < 2).then(|| {
                AttentionBlock::new(
                    &mut store,
                    &mut rng,
                    &format!("{name}.attn"),
                    skip_c,
                    AttentionBlockCfg::default(),
                )
            });
            dec.push(DecoderStage {
                up,
                gate,
                block,
                attn,
            });
            prev = skip_c;
        }

        let final_conv = Conv2dLayer::new(
            &mut store,
            &mut rng,
            "final",
            chans[0],
            config.out_channels,
            1,
            1,
            0,
            true,
        );

        Ok(Network {
            config,
            store,
            enc,
            bottleneck,
            dec,
            final_conv,
        })
    }

    /// Runs the network, returning sigmoid probabilities in `(0, 1)` and the
    /// captured per-stage trace. Pass a tape to make the pass differentiable.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        tape: Option<&Tape<T>>,
    ) -> Result<(Tensor<T>, Trace<T>)> {
        let (_, c, h, w) = x.shape().dims4("network forward")?;
        if c != self.config.in_channels {
            return Err(AruError::ShapeMismatch {
                op: "network forward",
                detail: format!("{c} input channels, network expects {}", self.config.in_channels),
            });
        }
        let div = 1usize << self.config.levels();
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(AruError::ShapeMismatch {
                op: "network forward",
                detail: format!("spatial {h}x{w} not divisible by {div}"),
            });
        }

        let Network {
            store,
            enc,
            bottleneck,
            dec,
            final_conv,
            ..
        } = self;
        let attached = store.attach(tape);
        let mut fwd = Fwd {
            store,
            attached: &attached,
            mode,
        };

        let mut encoder = Vec::with_capacity(enc.len());
        let mut cur = x.clone();
        for (i, block) in enc.iter().enumerate() {
            let e = block.forward(&mut fwd, &cur)?;
            ensure_finite(e.data(), "forward", Some(&format!("enc{}", i + 1)))?;
            cur = maxpool2d(&e)?;
            encoder.push(e);
        }

        let b = bottleneck.forward(&mut fwd, &cur)?;
        ensure_finite(b.data(), "forward", Some("bottleneck"))?;

        let mut ups = Vec::with_capacity(dec.len());
        let mut alphas = Vec::new();
        let mut decoder = Vec::with_capacity(dec.len());
        let mut prev = b.clone();
        let levels = enc.len();
        for (i, stage) in dec.iter().enumerate() {
            let u = stage.up.forward(&mut fwd, &prev)?;
            let skip = &encoder[levels - 1 - i];
            let gated = match &stage.gate {
                Some(gate) => {
                    let (gated, alpha) = gate.forward(&mut fwd, skip, &u)?;
                    alphas.push(alpha);
                    gated
                }
                None => skip.clone(),
            };
            let cat = gated.concat_channels(&u)?;
            let mut d = stage.block.forward(&mut fwd, &cat)?;
            if let Some(attn) = &stage.attn {
                d = attn.forward(&mut fwd, &d)?;
            }
            ensure_finite(d.data(), "forward", Some(&format!("dec{}", i + 1)))?;
            ups.push(u);
            decoder.push(d.clone());
            prev = d;
        }

        let logits = final_conv.forward(&fwd, &prev)?;
        let probs = logits.sigmoid();
        ensure_finite(probs.data(), "forward", Some("output"))?;

        Ok((
            probs,
            Trace {
                encoder,
                bottleneck: b,
                ups,
                alphas,
                decoder,
                logits,
                attached,
            },
        ))
    }

    /// Convenience inference: probabilities only, no tape.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, Mode::Eval, None)?.0)
    }

    /// Exact per-module and total trainable parameter counts.
    pub fn count_parameters(&self) -> ParamCount {
        let mut by_module: Vec<(String, usize)> = Vec::new();
        for p in self.store.params() {
            let module = p.name.split('.').next().unwrap_or(&p.name).to_string();
            match by_module.iter_mut().find(|(m, _)| *m == module) {
                Some((_, n)) => *n += p.value.len(),
                None => by_module.push((module, p.value.len())),
            }
        }
        ParamCount {
            total: self.store.num_scalars(),
            by_module,
        }
    }

    /// Analytic forward FLOPs (2 per multiply-accumulate, convolutions and
    /// attention matmuls only) for one sample at the given input size.
    pub fn count_flops(&self, input_size: (usize, usize)) -> u64 {
        let (mut h, mut w) = input_size;
        let mut total = 0u64;
        for block in &self.enc {
            total += block.flops(h, w);
            h /= 2;
            w /= 2;
        }
        total += self.bottleneck.flops(h, w);
        for stage in &self.dec {
            total += stage.up.flops(h, w);
            h *= 2;
            w *= 2;
            if let Some(gate) = &stage.gate {
                total += gate.flops(h, w);
            }
            total += stage.block.flops(h, w);
            if let Some(attn) = &stage.attn {
                total += attn.flops(h, w);
            }
        }
        total += self.final_conv.flops(h, w);
        total
    }

    pub fn num_gates(&self) -> usize {
        self.dec.iter().filter(|s| s.gate.is_some()).count()
    }

    pub fn save_checkpoint(&self, path: &Path, extra_meta: &[(String, String)]) -> Result<()> {
        let mut tf = TensorFile::new();
        tf.add_meta("dtype", T::DTYPE.name());
        for (k, v) in self.config.to_meta() {
            tf.add_meta(k, v);
        }
        for (k, v) in extra_meta {
            tf.add_meta(k.clone(), v.clone());
        }
        for p in self.store.params() {
            tf.tensors
                .push(NamedTensor::from_values(&p.name, p.shape.clone(), &p.value)?);
        }
        for b in self.store.buffers() {
            tf.tensors
                .push(NamedTensor::from_values(&b.name, b.shape.clone(), &b.value)?);
        }
        tf.save(path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, TensorFile)> {
        let tf = TensorFile::load(path)?;
        let config = NetworkConfig::from_meta(|k| tf.meta_value(k).map(str::to_string))?;
        let mut net = Network::build(config, 0)?;
        net.store.load_values(&tf)?;
        Ok((net, tf))
    }
}

pub struct ParamCount {
    pub total: usize,
    pub by_module: Vec<(String, usize)>,
}
