//! Discrepant two-stream encoders and the fusion-mode switch.
//!
//! Both streams run four residual stages whose spatial sizes match stage by stage (strides
//! 2, 4, 8, 16 relative to the input). Event features are projected to the RGB channel counts
//! with 1x1 convs and fused at stages 2, 3 and 4.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use renet_nn::layers::{Conv2d, ConvBnRelu};
use renet_nn::{Graph, NnError, ParamStore, Real, Result, Var};

use crate::bdc::{BdcStage, ConcatConvStage};
use crate::blocks::{stem, ResidualStage};
use crate::etma::{Etma, EtmaConfig};

/// Stages that fuse the two streams (0-based stage indices).
pub const FUSED_STAGES: [usize; 3] = [1, 2, 3];

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $s),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($s => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} `{s}`", stringify!($name))),
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(FusionMode {
    RgbOnly => "rgb_only",
    EventOnly => "event_only",
    Early => "early",
    Late => "late",
    ConcatConv => "concat_conv",
    Renet => "renet",
});

string_enum!(EventMode {
    Etma => "etma",
    Accumulate => "accumulate",
    Single => "single",
});

string_enum!(ArchPreset {
    Desk => "desk",
    Paper => "paper",
});

impl FusionMode {
    pub fn uses_rgb(self) -> bool {
        self != FusionMode::EventOnly
    }

    pub fn uses_events(self) -> bool {
        self != FusionMode::RgbOnly
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamConfig {
    pub stem_channels: usize,
    pub channels: [usize; 4],
    pub blocks: [usize; 4],
}

impl StreamConfig {
    pub fn desk_rgb() -> Self {
        Self { stem_channels: 16, channels: [16, 32, 64, 128], blocks: [2, 2, 2, 2] }
    }

    pub fn desk_event() -> Self {
        Self { stem_channels: 8, channels: [8, 16, 32, 64], blocks: [1, 1, 1, 1] }
    }

    /// ResNet-101 stage layout, built from basic blocks.
    pub fn paper_rgb() -> Self {
        Self { stem_channels: 64, channels: [64, 128, 256, 512], blocks: [3, 4, 23, 3] }
    }

    /// ResNet-18 stage layout.
    pub fn paper_event() -> Self {
        Self { stem_channels: 64, channels: [64, 128, 256, 512], blocks: [2, 2, 2, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub preset: ArchPreset,
    pub fusion_mode: FusionMode,
    pub event_mode: EventMode,
    pub ca_enabled: bool,
    pub sa_enabled: bool,
    pub input_size: usize,
    /// RGB frames channel-stacked at the RGB stem, newest last.
    pub k_frames: usize,
    pub n_classes: usize,
    pub rgb: StreamConfig,
    pub event: StreamConfig,
    pub etma_kernels: [usize; 3],
    pub head_channels: usize,
}

impl ArchConfig {
    pub fn desk() -> Self {
        Self {
            preset: ArchPreset::Desk,
            fusion_mode: FusionMode::Renet,
            event_mode: EventMode::Etma,
            ca_enabled: true,
            sa_enabled: true,
            input_size: 96,
            k_frames: 3,
            n_classes: 1,
            rgb: StreamConfig::desk_rgb(),
            event: StreamConfig::desk_event(),
            etma_kernels: [2, 4, 8],
            head_channels: 32,
        }
    }

    pub fn paper() -> Self {
        Self {
            preset: ArchPreset::Paper,
            input_size: 288,
            rgb: StreamConfig::paper_rgb(),
            event: StreamConfig::paper_event(),
            head_channels: 64,
            ..Self::desk()
        }
    }

    pub fn for_preset(preset: ArchPreset) -> Self {
        match preset {
            ArchPreset::Desk => Self::desk(),
            ArchPreset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::ShapeMismatch(m));
        if self.input_size % 16 != 0 || self.input_size == 0 {
            return bad(format!("input_size {} must be a positive multiple of 16", self.input_size));
        }
        if self.k_frames == 0 || self.n_classes == 0 {
            return bad("k_frames and n_classes must be positive".into());
        }
        if self.event_mode == EventMode::Etma {
            let k1 = self.etma_kernels[0];
            if k1 != 2 {
                return bad(format!("the event stem must halve resolution, got first kernel {k1}"));
            }
            let k3 = self.etma_kernels[2];
            if self.input_size % k3 != 0 {
                return bad(format!("input_size {} not divisible by pooling kernel {k3}", self.input_size));
            }
            EtmaConfig { in_channels: 2, stem_channels: self.event.stem_channels, kernels: self.etma_kernels }.validate()?;
        }
        Ok(())
    }

    /// Channel count of the first RGB-stream layer.
    pub fn rgb_in_channels(&self) -> usize {
        let rgb = 3 * self.k_frames;
        if self.fusion_mode == FusionMode::Early {
            rgb + 6
        } else {
            rgb
        }
    }

    /// Channels of the head's three inputs (strides 4, 8, 16).
    pub fn head_in_channels(&self) -> [usize; 3] {
        let r = &self.rgb.channels;
        let e = &self.event.channels;
        match self.fusion_mode {
            FusionMode::EventOnly => [e[1], e[2], e[3]],
            FusionMode::Late => [r[1] + e[1], r[2] + e[2], r[3]],
            _ => [r[1], r[2], r[3]],
        }
    }
}

/// Input leaves of one batch.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInputs {
    /// `(N, 3K, H, W)` stacked RGB frames.
    pub rgb: Var,
    /// Three `(N, 2, H, W)` event frames, shortest window first.
    pub ranges: [Var; 3],
}

#[derive(Debug, Clone)]
pub enum EventStem {
    Etma(Etma),
    Conv(ConvBnRelu),
}

#[derive(Debug, Clone)]
pub struct RgbStream {
    pub stem: ConvBnRelu,
    pub stages: Vec<ResidualStage>,
}

#[derive(Debug, Clone)]
pub struct EventStreamNet {
    pub stem: EventStem,
    pub stages: Vec<ResidualStage>,
}

fn run_stages<T: Real>(stages: &[ResidualStage], g: &mut Graph<'_, T>, mut x: Var) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(stages.len());
    for s in stages {
        x = s.forward(g, x)?;
        out.push(x);
    }
    Ok(out)
}

fn build_stages<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: &StreamConfig, rng: &mut R) -> Vec<ResidualStage> {
    let mut cin = cfg.stem_channels;
    (0..4)
        .map(|i| {
            let stride = if i == 0 { 1 } else { 2 };
            let s = ResidualStage::new(store, &format!("{name}.stage{}", i + 1), cin, cfg.channels[i], cfg.blocks[i], stride, rng);
            cin = cfg.channels[i];
            s
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Fusion {
    None,
    Late(Conv2d),
    ConcatConv(Vec<ConcatConvStage>),
    Bdc(Vec<BdcStage>),
}

/// Per-stage features of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct StageFeatures {
    pub rgb: Vec<Var>,
    /// Event features before projection.
    pub event: Vec<Var>,
    /// Projected event features at the fused stages (`f_E`).
    pub projected: Vec<Var>,
    /// Fused outputs at the fused stages.
    pub fused: Vec<Var>,
    /// What the head consumes, strides 4, 8 and 16.
    pub head: Vec<Var>,
}

#[derive(Debug)]
pub struct Encoder {
    pub arch: ArchConfig,
    pub rgb: RgbStream,
    pub event: EventStreamNet,
    /// 1x1 projections of event stages 2..4; `None` where channel counts already agree.
    pub projections: Vec<Option<Conv2d>>,
    pub fusion: Fusion,
    rgb_evals: AtomicUsize,
    event_evals: AtomicUsize,
}

impl Encoder {
    /// Registers parameters under `rgb.*`, `event.*`, `proj.*` and `fusion.*`. Both streams
    /// exist in every mode; modes that ignore a stream simply never evaluate it.
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let rgb = RgbStream {
            stem: stem(store, "rgb.stem", arch.rgb_in_channels(), arch.rgb.stem_channels, rng),
            stages: build_stages(store, "rgb", &arch.rgb, rng),
        };
        let event_stem = match arch.event_mode {
            EventMode::Etma => {
                let cfg = EtmaConfig { in_channels: 2, stem_channels: arch.event.stem_channels, kernels: arch.etma_kernels };
                EventStem::Etma(Etma::new(store, "event.etma", cfg, rng)?)
            }
            EventMode::Accumulate => EventStem::Conv(stem(store, "event.stem", 6, arch.event.stem_channels, rng)),
            EventMode::Single => EventStem::Conv(stem(store, "event.stem", 2, arch.event.stem_channels, rng)),
        };
        let event = EventStreamNet { stem: event_stem, stages: build_stages(store, "event", &arch.event, rng) };

        let fuses = matches!(arch.fusion_mode, FusionMode::ConcatConv | FusionMode::Renet);
        let projections = FUSED_STAGES
            .iter()
            .map(|&i| {
                let (ce, cr) = (arch.event.channels[i], arch.rgb.channels[i]);
                (fuses && ce != cr).then(|| Conv2d::same(store, &format!("proj.stage{}", i + 1), ce, cr, 1, true, rng))
            })
            .collect();
        let fusion = match arch.fusion_mode {
            FusionMode::Renet => Fusion::Bdc(
                FUSED_STAGES
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let prev = (j > 0).then(|| arch.rgb.channels[i - 1]);
                        let name = format!("fusion.stage{}", i + 1);
                        BdcStage::new(store, &name, arch.rgb.channels[i], prev, arch.ca_enabled, arch.sa_enabled, rng)
                    })
                    .collect(),
            ),
            FusionMode::ConcatConv => Fusion::ConcatConv(
                FUSED_STAGES
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let prev = (j > 0).then(|| arch.rgb.channels[i - 1]);
                        ConcatConvStage::new(store, &format!("fusion.stage{}", i + 1), arch.rgb.channels[i], prev, rng)
                    })
                    .collect(),
            ),
            FusionMode::Late => {
                let c = arch.rgb.channels[3] + arch.event.channels[3];
                Fusion::Late(Conv2d::same(store, "fusion.late", c, arch.rgb.channels[3], 1, true, rng))
            }
            _ => Fusion::None,
        };
        Ok(Self {
            arch: arch.clone(),
            rgb,
            event,
            projections,
            fusion,
            rgb_evals: AtomicUsize::new(0),
            event_evals: AtomicUsize::new(0),
        })
    }

    /// How many times each stream has been evaluated, `(rgb, event)`.
    pub fn evaluation_counts(&self) -> (usize, usize) {
        (self.rgb_evals.load(Ordering::Relaxed), self.event_evals.load(Ordering::Relaxed))
    }

    fn rgb_forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        self.rgb_evals.fetch_add(1, Ordering::Relaxed);
        let x = self.rgb.stem.forward(g, x)?;
        run_stages(&self.rgb.stages, g, x)
    }

    /// Event stream from the three range leaves.
    pub fn event_forward<T: Real>(&self, g: &mut Graph<'_, T>, ranges: [Var; 3]) -> Result<Vec<Var>> {
        self.event_evals.fetch_add(1, Ordering::Relaxed);
        let x = match &self.event.stem {
            EventStem::Etma(etma) => etma.forward(g, ranges)?,
            EventStem::Conv(conv) => {
                let x = match self.arch.event_mode {
                    EventMode::Accumulate => g.concat(&ranges)?,
                    _ => ranges[0],
                };
                conv.forward(g, x)?
            }
        };
        run_stages(&self.event.stages, g, x)
    }

    /// 1x1 projection of an event stage feature to the RGB width of fused stage `j` (0..3).
    pub fn project_event_channels<T: Real>(&self, g: &mut Graph<'_, T>, j: usize, f: Var) -> Result<Var> {
        match &self.projections[j] {
            Some(conv) => conv.forward(g, f),
            None => Ok(f),
        }
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, inputs: EncoderInputs) -> Result<StageFeatures> {
        let mut out = StageFeatures::default();
        match self.arch.fusion_mode {
            FusionMode::RgbOnly => {
                out.rgb = self.rgb_forward(g, inputs.rgb)?;
                out.head = out.rgb[1..].to_vec();
            }
            FusionMode::EventOnly => {
                out.event = self.event_forward(g, inputs.ranges)?;
                out.head = out.event[1..].to_vec();
            }
            FusionMode::Early => {
                let mut parts = vec![inputs.rgb];
                parts.extend_from_slice(&inputs.ranges);
                let x = g.concat(&parts)?;
                out.rgb = self.rgb_forward(g, x)?;
                out.head = out.rgb[1..].to_vec();
            }
            FusionMode::Late => {
                out.rgb = self.rgb_forward(g, inputs.rgb)?;
                out.event = self.event_forward(g, inputs.ranges)?;
                let Fusion::Late(conv) = &self.fusion else { unreachable!("late fusion conv") };
                for i in 1..3 {
                    out.head.push(g.concat(&[out.rgb[i], out.event[i]])?);
                }
                let last = g.concat(&[out.rgb[3], out.event[3]])?;
                out.head.push(conv.forward(g, last)?);
            }
            FusionMode::ConcatConv | FusionMode::Renet => {
                out.rgb = self.rgb_forward(g, inputs.rgb)?;
                out.event = self.event_forward(g, inputs.ranges)?;
                let mut prev = None;
                for (j, &i) in FUSED_STAGES.iter().enumerate() {
                    let f_e = self.project_event_channels(g, j, out.event[i])?;
                    out.projected.push(f_e);
                    let f = match &self.fusion {
                        Fusion::Bdc(stages) => stages[j].forward(g, out.rgb[i], f_e, prev)?,
                        Fusion::ConcatConv(stages) => stages[j].forward(g, out.rgb[i], f_e, prev)?,
                        _ => unreachable!("fusing mode without fusion stages"),
                    };
                    out.fused.push(f);
                    prev = Some(f);
                }
                out.head = out.fused.clone();
            }
        }
        Ok(out)
    }
}
