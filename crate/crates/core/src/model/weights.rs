//! Parameter containers generic over the stored element: concrete tensors for
//! inference, tape variables for training, or shape specs for layout queries.

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Weight and bias of a conv, deconv or linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<W> {
    pub w: W,
    pub b: W,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prelu<W> {
    pub a: W,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<W> {
    pub g: W,
    pub b: W,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<W> {
    pub wi: W,
    pub wh: W,
    pub bi: W,
    pub bh: W,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullBand<W> {
    pub conv: Affine<W>,
    pub prelu1: Prelu<W>,
    pub norm1: Norm<W>,
    pub lstm: Lstm<W>,
    pub lin: Affine<W>,
    pub norm2: Norm<W>,
    pub prelu2: Prelu<W>,
    pub deconv: Affine<W>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubBand<W> {
    pub conv: Affine<W>,
    pub prelu: Prelu<W>,
    pub norm: Norm<W>,
    pub lstm: Lstm<W>,
    pub deconv: Affine<W>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage<W> {
    pub fb: FullBand<W>,
    pub sb: Option<SubBand<W>>,
}

/// Every parameter of one network, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<W> {
    pub input_conv: Affine<W>,
    pub stages: Vec<Stage<W>>,
    pub output_deconv: Affine<W>,
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `(-bound, bound)`.
    Uniform(f64),
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

trait Group<W> {
    type Mapped<U>;
    fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a W)>);
    fn refs_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut W)>);
    fn map_with<U>(&self, f: &mut dyn FnMut(&W) -> U) -> Self::Mapped<U>;
}

macro_rules! leaves {
    ($ty:ident { $($f:ident),* }) => {
        impl<W> Group<W> for $ty<W> {
            type Mapped<U> = $ty<U>;
            fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a W)>) {
                $( out.push((format!("{prefix}.{}", stringify!($f)), &self.$f)); )*
            }
            fn refs_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut W)>) {
                $( out.push((format!("{prefix}.{}", stringify!($f)), &mut self.$f)); )*
            }
            fn map_with<U>(&self, f: &mut dyn FnMut(&W) -> U) -> $ty<U> {
                $ty { $( $f: f(&self.$f), )* }
            }
        }
    };
}

macro_rules! groups {
    ($ty:ident { $($f:ident),* }) => {
        impl<W> Group<W> for $ty<W> {
            type Mapped<U> = $ty<U>;
            fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a W)>) {
                $( self.$f.refs(&format!("{prefix}.{}", stringify!($f)), out); )*
            }
            fn refs_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut W)>) {
                $( self.$f.refs_mut(&format!("{prefix}.{}", stringify!($f)), out); )*
            }
            fn map_with<U>(&self, f: &mut dyn FnMut(&W) -> U) -> $ty<U> {
                $ty { $( $f: self.$f.map_with(f), )* }
            }
        }
    };
}

leaves!(Affine { w, b });
leaves!(Prelu { a });
leaves!(Norm { g, b });
leaves!(Lstm { wi, wh, bi, bh });
groups!(FullBand { conv, prelu1, norm1, lstm, lin, norm2, prelu2, deconv });
groups!(SubBand { conv, prelu, norm, lstm, deconv });

impl<W> ModelWeights<W> {
    /// `(canonical name, value)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &W)> {
        let mut out = Vec::new();
        self.input_conv.refs("input_conv", &mut out);
        for (i, s) in self.stages.iter().enumerate() {
            s.fb.refs(&format!("block{i}.fb"), &mut out);
            if let Some(sb) = &s.sb {
                sb.refs(&format!("block{i}.sb"), &mut out);
            }
        }
        self.output_deconv.refs("output_deconv", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut W)> {
        let mut out = Vec::new();
        self.input_conv.refs_mut("input_conv", &mut out);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.fb.refs_mut(&format!("block{i}.fb"), &mut out);
            if let Some(sb) = &mut s.sb {
                sb.refs_mut(&format!("block{i}.sb"), &mut out);
            }
        }
        self.output_deconv.refs_mut("output_deconv", &mut out);
        out
    }

    pub fn values(&self) -> Vec<&W> {
        self.named().into_iter().map(|(_, w)| w).collect()
    }

    /// Same structure with every leaf transformed by `f` in canonical order.
    pub fn map<U>(&self, mut f: impl FnMut(&W) -> U) -> ModelWeights<U> {
        let f: &mut dyn FnMut(&W) -> U = &mut f;
        ModelWeights {
            input_conv: self.input_conv.map_with(f),
            stages: self
                .stages
                .iter()
                .map(|s| Stage { fb: s.fb.map_with(f), sb: s.sb.as_ref().map(|sb| sb.map_with(f)) })
                .collect(),
            output_deconv: self.output_deconv.map_with(f),
        }
    }

    /// Like [`map`](Self::map) but stops at the first error.
    pub fn try_map<U>(&self, f: impl FnMut(&W) -> Result<U>) -> Result<ModelWeights<U>> {
        let values = self.values().into_iter().map(f).collect::<Result<Vec<U>>>()?;
        self.with_values(values)
    }

    /// Rebuilds this structure from values listed in canonical order.
    pub fn with_values<U>(&self, values: Vec<U>) -> Result<ModelWeights<U>> {
        let n = self.named().len();
        if values.len() != n {
            return Err(Error::Shape(format!("expected {n} parameter tensors, got {}", values.len())));
        }
        let mut it = values.into_iter();
        Ok(self.map(|_| it.next().expect("length checked")))
    }
}

fn uniform(shape: &[usize], fan_in: usize) -> ParamSpec {
    ParamSpec { shape: shape.to_vec(), init: Init::Uniform(1.0 / (fan_in as f64).sqrt()) }
}

fn constant(shape: &[usize], v: f64) -> ParamSpec {
    ParamSpec { shape: shape.to_vec(), init: Init::Const(v) }
}

/// Conv `Cout×Cin×I`; fan-in is `Cin·I`.
fn conv(cin: usize, cout: usize, k: usize) -> Affine<ParamSpec> {
    Affine { w: uniform(&[cout, cin, k], cin * k), b: uniform(&[cout], cin * k) }
}

/// Deconv `Cin×Cout×I`; fan-in is the number of taps reaching one output.
fn deconv(cin: usize, cout: usize, k: usize, stride: usize) -> Affine<ParamSpec> {
    let fan = cin * k.div_ceil(stride);
    Affine { w: uniform(&[cin, cout, k], fan), b: uniform(&[cout], fan) }
}

fn lstm(n_in: usize, h: usize) -> Lstm<ParamSpec> {
    Lstm {
        wi: uniform(&[4 * h, n_in], h),
        wh: uniform(&[4 * h, h], h),
        bi: uniform(&[4 * h], h),
        bh: uniform(&[4 * h], h),
    }
}

fn norm(n: usize) -> Norm<ParamSpec> {
    Norm { g: constant(&[n], 1.0), b: constant(&[n], 0.0) }
}

fn prelu() -> Prelu<ParamSpec> {
    Prelu { a: constant(&[1], 0.25) }
}

impl ModelWeights<ParamSpec> {
    /// Shapes and initializers implied by `cfg`.
    pub fn layout(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let fb = cfg.full_band;
        let sb = cfg.sub_band;
        let a = cfg.frame_dim();
        let stage = || Stage {
            fb: FullBand {
                conv: conv(d, fb.channels, fb.kernel),
                prelu1: prelu(),
                norm1: norm(a),
                lstm: lstm(a, fb.hidden),
                lin: Affine { w: uniform(&[a, fb.hidden], fb.hidden), b: uniform(&[a], fb.hidden) },
                norm2: norm(a),
                prelu2: prelu(),
                deconv: deconv(fb.channels, d, fb.kernel, fb.stride),
            },
            sb: cfg.has_sub_band().then(|| SubBand {
                conv: conv(d, sb.channels, sb.kernel),
                prelu: prelu(),
                norm: norm(sb.channels),
                lstm: lstm(sb.channels, sb.hidden),
                deconv: deconv(sb.hidden, d, sb.kernel, sb.stride),
            }),
        };
        Ok(Self {
            input_conv: conv(cfg.input_channels(), d, 3),
            stages: (0..cfg.stages()).map(|_| stage()).collect(),
            output_deconv: deconv(d, 2, 3, 1),
        })
    }

    pub fn num_params(&self) -> usize {
        self.values().iter().map(|s| s.numel()).sum()
    }
}
