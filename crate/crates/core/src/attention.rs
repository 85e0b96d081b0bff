//! Channel-wise and temporal-wise excitation attention over video features
//! laid out (N, T, C, H, W), and the four block orderings built from them.
//!
//! Both modules follow the same squeeze-excite pattern: average-pool away
//! every axis except the attended one, pass the pooled vector through a
//! reduce/expand pair of linear layers (ReLU between, sigmoid after), and
//! re-weight the input with a residual connection: `out = x + a ⊙ x`.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::param::{ParamId, ParamStore, ParamVars};
use crate::real::Real;
use crate::rng::{uniform_fan_in, RunRng};
use crate::tensor::Tensor;

pub const AXIS_N: usize = 0;
pub const AXIS_T: usize = 1;
pub const AXIS_C: usize = 2;
pub const AXIS_H: usize = 3;
pub const AXIS_W: usize = 4;

/// Which attention modules a block applies, and in what order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockVariant {
    /// Channel attention only.
    C,
    /// Temporal attention only.
    T,
    /// Temporal, then channel.
    TC,
    /// Channel, then temporal.
    CT,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 4] = [BlockVariant::C, BlockVariant::T, BlockVariant::TC, BlockVariant::CT];

    pub fn uses_channel(self) -> bool {
        !matches!(self, BlockVariant::T)
    }

    pub fn uses_temporal(self) -> bool {
        !matches!(self, BlockVariant::C)
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BlockVariant::C => "C",
            BlockVariant::T => "T",
            BlockVariant::TC => "TC",
            BlockVariant::CT => "CT",
        };
        f.write_str(s)
    }
}

impl FromStr for BlockVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" => Ok(BlockVariant::C),
            "T" => Ok(BlockVariant::T),
            "TC" => Ok(BlockVariant::TC),
            "CT" => Ok(BlockVariant::CT),
            other => Err(Error::InvalidArgument(format!("unknown block variant `{other}`"))),
        }
    }
}

/// Reduce/expand weights of one attention module. `w1` is (reduced × extent),
/// `w2` is (extent × reduced).
#[derive(Clone, Debug)]
pub struct ExcitationParams {
    pub extent: usize,
    pub reduced: usize,
    pub reduction: usize,
    pub w1: ParamId,
    pub b1: Option<ParamId>,
    pub w2: ParamId,
    pub b2: Option<ParamId>,
}

impl ExcitationParams {
    fn register<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        extent: usize,
        reduced: usize,
        reduction: usize,
        with_bias: bool,
        rng: &mut RunRng,
    ) -> Result<Self> {
        let w1 = store.add(format!("{prefix}.w1"), uniform_fan_in(rng, &[reduced, extent], extent))?;
        let b1 = if with_bias {
            Some(store.add(format!("{prefix}.b1"), Tensor::zeros(&[reduced]))?)
        } else {
            None
        };
        let w2 = store.add(format!("{prefix}.w2"), uniform_fan_in(rng, &[extent, reduced], reduced))?;
        let b2 = if with_bias {
            Some(store.add(format!("{prefix}.b2"), Tensor::zeros(&[extent]))?)
        } else {
            None
        };
        Ok(ExcitationParams { extent, reduced, reduction, w1, b1, w2, b2 })
    }

    /// Number of scalars this module registers.
    pub fn count(extent: usize, reduced: usize, with_bias: bool) -> usize {
        2 * extent * reduced + if with_bias { extent + reduced } else { 0 }
    }

    /// Pools `x` over `pool_axes`, excites along `axis`, and returns the
    /// re-weighted output together with the gate tensor.
    fn excite<F: Real>(
        &self,
        g: &mut Graph<F>,
        pv: &ParamVars,
        x: Var,
        axis: usize,
        pool_axes: &[usize],
        force_gate: Option<Var>,
    ) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        let mut gate_shape = vec![1; 5];
        gate_shape[AXIS_N] = shape[AXIS_N];
        gate_shape[axis] = shape[axis];
        let gate = match force_gate {
            Some(f) => {
                if g.shape(f) != gate_shape.as_slice() {
                    return shape_err(format!(
                        "forced gate has shape {:?}, expected {gate_shape:?}",
                        g.shape(f)
                    ));
                }
                f
            }
            None => {
                let pooled = g.avg_pool_axes(x, pool_axes)?;
                let flat = g.reshape(pooled, &[shape[AXIS_N], shape[axis]])?;
                let h = g.linear(pv.var(self.w1), pv.opt(self.b1), flat)?;
                let h = g.relu(h)?;
                let z = g.linear(pv.var(self.w2), pv.opt(self.b2), h)?;
                let a = g.sigmoid(z)?;
                g.reshape(a, &gate_shape)?
            }
        };
        let excited = g.broadcast_mul(gate, x)?;
        let out = g.add(x, excited)?;
        Ok((out, gate))
    }
}

fn check_video(shape: &[usize]) -> Result<()> {
    if shape.len() != 5 {
        return shape_err(format!("video feature must be (N, T, C, H, W), got {shape:?}"));
    }
    Ok(())
}

/// Channel attention: gates of shape (N, 1, C, 1, 1) from the (T, H, W) mean.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub params: ExcitationParams,
}

impl ChannelAttention {
    /// `channels` must be divisible by `reduction`.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        with_bias: bool,
        rng: &mut RunRng,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "channel extent {channels} is not divisible by reduction ratio {reduction}"
            )));
        }
        let params = ExcitationParams::register(
            store,
            prefix,
            channels,
            channels / reduction,
            reduction,
            with_bias,
            rng,
        )?;
        Ok(ChannelAttention { params })
    }

    pub fn channels(&self) -> usize {
        self.params.extent
    }

    /// Returns `(x + A_c ⊙ x, A_c)`. A supplied `force_gate` replaces `A_c`.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        pv: &ParamVars,
        x: Var,
        force_gate: Option<Var>,
    ) -> Result<(Var, Var)> {
        let shape = g.shape(x);
        check_video(shape)?;
        if shape[AXIS_C] != self.params.extent {
            return shape_err(format!(
                "channel attention built for C = {}, input has C = {}",
                self.params.extent, shape[AXIS_C]
            ));
        }
        self.params
            .excite(g, pv, x, AXIS_C, &[AXIS_T, AXIS_H, AXIS_W], force_gate)
    }
}

/// Temporal attention: gates of shape (N, T, 1, 1, 1) from the (C, H, W) mean.
#[derive(Clone, Debug)]
pub struct TemporalAttention {
    pub params: ExcitationParams,
}

impl TemporalAttention {
    /// Reduced width is `max(1, frames / reduction)`; `frames` need not be
    /// divisible by `reduction`.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        frames: usize,
        reduction: usize,
        with_bias: bool,
        rng: &mut RunRng,
    ) -> Result<Self> {
        if reduction == 0 || frames == 0 {
            return Err(Error::Config("temporal attention needs positive T and r".into()));
        }
        let reduced = Self::reduced_extent(frames, reduction);
        let params = ExcitationParams::register(store, prefix, frames, reduced, reduction, with_bias, rng)?;
        Ok(TemporalAttention { params })
    }

    pub fn reduced_extent(frames: usize, reduction: usize) -> usize {
        (frames / reduction).max(1)
    }

    pub fn frames(&self) -> usize {
        self.params.extent
    }

    /// Returns `(x + A_t ⊙ x, A_t)`. A supplied `force_gate` replaces `A_t`.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        pv: &ParamVars,
        x: Var,
        force_gate: Option<Var>,
    ) -> Result<(Var, Var)> {
        let shape = g.shape(x);
        check_video(shape)?;
        if shape[AXIS_T] != self.params.extent {
            return shape_err(format!(
                "temporal attention built for T = {}, input has T = {}",
                self.params.extent, shape[AXIS_T]
            ));
        }
        self.params
            .excite(g, pv, x, AXIS_T, &[AXIS_C, AXIS_H, AXIS_W], force_gate)
    }
}

/// Gates to force in place of the learned ones, per module.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForcedGates {
    pub channel: Option<Var>,
    pub temporal: Option<Var>,
}

/// One attention block at an insertion point.
#[derive(Clone, Debug)]
pub struct CtaBlock {
    pub variant: BlockVariant,
    pub channel: Option<ChannelAttention>,
    pub temporal: Option<TemporalAttention>,
}

impl CtaBlock {
    /// Registers parameters under `prefix.channel.*` and `prefix.temporal.*`.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        variant: BlockVariant,
        frames: usize,
        channels: usize,
        reduction: usize,
        rng: &mut RunRng,
    ) -> Result<Self> {
        let channel = if variant.uses_channel() {
            Some(ChannelAttention::new(
                store,
                &format!("{prefix}.channel"),
                channels,
                reduction,
                true,
                rng,
            )?)
        } else {
            None
        };
        let temporal = if variant.uses_temporal() {
            Some(TemporalAttention::new(
                store,
                &format!("{prefix}.temporal"),
                frames,
                reduction,
                true,
                rng,
            )?)
        } else {
            None
        };
        Ok(CtaBlock { variant, channel, temporal })
    }

    /// Scalar parameter count of a block with these extents.
    pub fn param_count(variant: BlockVariant, frames: usize, channels: usize, reduction: usize) -> usize {
        let mut n = 0;
        if variant.uses_channel() {
            n += ExcitationParams::count(channels, channels / reduction, true);
        }
        if variant.uses_temporal() {
            n += ExcitationParams::count(frames, TemporalAttention::reduced_extent(frames, reduction), true);
        }
        n
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, pv: &ParamVars, x: Var) -> Result<Var> {
        self.forward_forced(g, pv, x, ForcedGates::default())
    }

    pub fn forward_forced<F: Real>(
        &self,
        g: &mut Graph<F>,
        pv: &ParamVars,
        x: Var,
        gates: ForcedGates,
    ) -> Result<Var> {
        let ch = |g: &mut Graph<F>, x| -> Result<Var> {
            let m = self.channel.as_ref().expect("variant has channel attention");
            Ok(m.forward(g, pv, x, gates.channel)?.0)
        };
        let tm = |g: &mut Graph<F>, x| -> Result<Var> {
            let m = self.temporal.as_ref().expect("variant has temporal attention");
            Ok(m.forward(g, pv, x, gates.temporal)?.0)
        };
        match self.variant {
            BlockVariant::C => ch(g, x),
            BlockVariant::T => tm(g, x),
            BlockVariant::CT => {
                let y = ch(g, x)?;
                tm(g, y)
            }
            BlockVariant::TC => {
                let y = tm(g, x)?;
                ch(g, y)
            }
        }
    }
}
