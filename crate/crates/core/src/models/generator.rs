use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use voxdn_tensor::{ConvSpec, Graph, Padding, Var};

use super::{bias_param, bind_params, count, expect_bound, kernel_param, replace_values, Param};
use crate::CoreError;

pub const DEPTH_WINDOW: usize = 9;
const KERNEL: usize = 3;
const LAYERS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorVariant {
    Hybrid,
    Pure2d,
    Pure3d,
}

impl GeneratorVariant {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorVariant::Hybrid => "hybrid",
            GeneratorVariant::Pure2d => "pure2d",
            GeneratorVariant::Pure3d => "pure3d",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CoreError> {
        match s {
            "hybrid" => Ok(GeneratorVariant::Hybrid),
            "pure2d" => Ok(GeneratorVariant::Pure2d),
            "pure3d" => Ok(GeneratorVariant::Pure3d),
            other => Err(CoreError::config(format!(
                "unknown generator variant {other:?} (hybrid, pure2d, pure3d)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub variant: GeneratorVariant,
    pub channels: usize,
    /// (source layer, target layer) pairs; the post-activation output of the
    /// source (layer 0 = the input itself) is added to the target layer's
    /// pre-activation. Sources and targets must mirror: source + target = 10.
    pub skip_plan: Vec<(usize, usize)>,
}

fn default_skips() -> Vec<(usize, usize)> {
    vec![(0, 10), (2, 8), (4, 6)]
}

impl GeneratorConfig {
    pub fn hybrid() -> Self {
        GeneratorConfig { variant: GeneratorVariant::Hybrid, channels: 32, skip_plan: default_skips() }
    }

    pub fn pure3d() -> Self {
        GeneratorConfig { variant: GeneratorVariant::Pure3d, channels: 32, skip_plan: default_skips() }
    }

    pub fn pure2d() -> Self {
        GeneratorConfig { variant: GeneratorVariant::Pure2d, channels: 48, skip_plan: default_skips() }
    }

    /// Every mirrored pair, not just every second one.
    pub fn with_full_skips(mut self) -> Self {
        self.skip_plan = vec![(0, 10), (1, 9), (2, 8), (3, 7), (4, 6)];
        self
    }

    pub fn for_variant(variant: GeneratorVariant) -> Self {
        match variant {
            GeneratorVariant::Hybrid => Self::hybrid(),
            GeneratorVariant::Pure2d => Self::pure2d(),
            GeneratorVariant::Pure3d => Self::pure3d(),
        }
    }

    fn min_plane(&self) -> usize {
        match self.variant {
            // three unpadded 3x3 convs need at least one surviving pixel
            GeneratorVariant::Hybrid => 7,
            // five unpadded 3x3 convs
            GeneratorVariant::Pure2d => 11,
            GeneratorVariant::Pure3d => 7,
        }
    }
}

enum LayerKind {
    Conv3,
    Conv2,
    Deconv3,
    Deconv2,
}

struct LayerDef {
    kind: LayerKind,
    in_ch: usize,
    out_ch: usize,
}

fn schedule(config: &GeneratorConfig) -> Vec<LayerDef> {
    use LayerKind::*;
    let c = config.channels;
    let mut kinds: Vec<LayerKind> = Vec::with_capacity(LAYERS);
    match config.variant {
        GeneratorVariant::Hybrid => {
            kinds.extend([Conv3, Conv3, Conv2, Conv2, Conv2, Deconv2, Deconv2, Deconv2, Deconv3, Deconv3]);
        }
        GeneratorVariant::Pure3d => {
            kinds.extend([Conv3, Conv3, Conv3, Conv3, Conv3, Deconv3, Deconv3, Deconv3, Deconv3, Deconv3]);
        }
        GeneratorVariant::Pure2d => {
            kinds.extend([Conv2, Conv2, Conv2, Conv2, Conv2, Deconv2, Deconv2, Deconv2, Deconv2, Deconv2]);
        }
    }
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| LayerDef {
            kind,
            in_ch: if i == 0 { 1 } else { c },
            out_ch: if i == LAYERS - 1 { 1 } else { c },
        })
        .collect()
}

/// Per-layer shapes at a reference 64x64 input, used to validate the skip
/// plan. Entry l is (post-activation shape of layer l, pre-activation shape
/// of layer l); entry 0 holds the input shape twice.
fn reference_trace(config: &GeneratorConfig) -> Vec<(Vec<usize>, Vec<usize>)> {
    let c = config.channels;
    let h = 64usize;
    let mut trace = Vec::with_capacity(LAYERS + 1);
    match config.variant {
        GeneratorVariant::Hybrid => {
            let vol = |ch: usize, p: usize| vec![1, ch, DEPTH_WINDOW, p, p];
            let plane = |ch: usize, p: usize| vec![1, ch, p, p];
            trace.push((vol(1, h), vol(1, h)));
            trace.push((vol(c, h), vol(c, h)));
            trace.push((vol(c, h), vol(c, h)));
            for l in 3..=5 {
                let p = h - 2 * (l - 2);
                trace.push((plane(c, p), plane(c, p)));
            }
            for l in 6..=7 {
                let p = h - 2 * (10 - l - 2);
                trace.push((plane(c, p), plane(c, p)));
            }
            // layer 8 re-enters 3D through the z-concat before its activation
            trace.push((vol(c, h), vol(c, h)));
            trace.push((vol(c, h), vol(c, h)));
            trace.push((vol(1, h), vol(1, h)));
        }
        GeneratorVariant::Pure3d => {
            let vol = |ch: usize, p: usize| vec![1, ch, DEPTH_WINDOW, p, p];
            trace.push((vol(1, h), vol(1, h)));
            for l in 1..=LAYERS {
                let ch = if l == LAYERS { 1 } else { c };
                trace.push((vol(ch, h), vol(ch, h)));
            }
        }
        GeneratorVariant::Pure2d => {
            let plane = |ch: usize, p: usize| vec![1, ch, p, p];
            trace.push((plane(1, h), plane(1, h)));
            for l in 1..=LAYERS {
                let ch = if l == LAYERS { 1 } else { c };
                let p = if l <= 5 { h - 2 * l } else { h - 2 * (10 - l) };
                trace.push((plane(ch, p), plane(ch, p)));
            }
        }
    }
    trace
}

fn validate_skip_plan(config: &GeneratorConfig) -> Result<(), CoreError> {
    let trace = reference_trace(config);
    let mut targets_seen = Vec::new();
    for &(s, t) in &config.skip_plan {
        if t > LAYERS || s >= t {
            return Err(CoreError::config(format!(
                "skip ({s} -> {t}) is out of range: need source < target <= {LAYERS}"
            )));
        }
        let source_shape = &trace[s].0;
        let target_shape = &trace[t].1;
        if source_shape != target_shape {
            return Err(CoreError::config(format!(
                "skip ({s} -> {t}) cannot add layer-{s} output of shape {source_shape:?} \
                 into layer-{t} pre-activation of shape {target_shape:?} (at a 64x64 reference input)"
            )));
        }
        if s + t != LAYERS {
            return Err(CoreError::config(format!(
                "skip ({s} -> {t}) does not mirror: source + target must equal {LAYERS}"
            )));
        }
        if targets_seen.contains(&t) {
            return Err(CoreError::config(format!("two skips feed layer {t}")));
        }
        targets_seen.push(t);
    }
    Ok(())
}

/// The ten-layer denoising network. Parameters are stored in layer order as
/// ("lNN.kernel", "lNN.bias") pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: Vec<Param>,
}

impl Generator {
    pub fn build(config: GeneratorConfig, seed: u64) -> Result<Self, CoreError> {
        if config.channels == 0 {
            return Err(CoreError::config("generator needs at least one channel".to_string()));
        }
        validate_skip_plan(&config)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * LAYERS);
        for (i, layer) in schedule(&config).iter().enumerate() {
            let l = i + 1;
            let taps = match layer.kind {
                LayerKind::Conv3 | LayerKind::Deconv3 => KERNEL * KERNEL * KERNEL,
                LayerKind::Conv2 | LayerKind::Deconv2 => KERNEL * KERNEL,
            };
            let shape = match layer.kind {
                LayerKind::Conv3 => vec![layer.out_ch, layer.in_ch, KERNEL, KERNEL, KERNEL],
                LayerKind::Conv2 => vec![layer.out_ch, layer.in_ch, KERNEL, KERNEL],
                LayerKind::Deconv3 => vec![layer.in_ch, layer.out_ch, KERNEL, KERNEL, KERNEL],
                LayerKind::Deconv2 => vec![layer.in_ch, layer.out_ch, KERNEL, KERNEL],
            };
            params.push(kernel_param(
                format!("l{l:02}.kernel"),
                shape,
                layer.in_ch * taps,
                layer.out_ch * taps,
                &mut rng,
            ));
            params.push(bias_param(format!("l{l:02}.bias"), layer.out_ch));
        }
        Ok(Generator { config, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn count_parameters(&self) -> usize {
        count(&self.params)
    }

    pub fn bind(&self, g: &Graph<f32>, trainable: bool) -> Vec<Var> {
        bind_params(&self.params, g, trainable)
    }

    pub fn set_values(&mut self, values: Vec<voxdn_tensor::Tensor<f32>>) -> Result<(), CoreError> {
        replace_values(&mut self.params, values)
    }

    fn check_input(&self, g: &Graph<f32>, x: Var) -> Result<(), CoreError> {
        let shape = g.shape_of(x);
        if shape.len() != 5 || shape[1] != 1 {
            return Err(CoreError::config(format!(
                "generator input must be [B, 1, {DEPTH_WINDOW}, H, W], got {shape:?}"
            )));
        }
        if shape[2] != DEPTH_WINDOW {
            return Err(CoreError::config(format!(
                "generator depth window is fixed at {DEPTH_WINDOW}, got {}",
                shape[2]
            )));
        }
        let min = self.config.min_plane();
        if shape[3] < min || shape[4] < min {
            return Err(CoreError::config(format!(
                "{} generator needs H, W >= {min}, got {}x{}",
                self.config.variant.name(),
                shape[3],
                shape[4]
            )));
        }
        Ok(())
    }

    /// Denoise one batch of [B, 1, 9, H, W] windows; output keeps the shape.
    pub fn forward(&self, g: &Graph<f32>, vars: &[Var], x: Var) -> Result<Var, CoreError> {
        expect_bound(&self.params, vars)?;
        self.check_input(g, x)?;
        let skip_into: HashMap<usize, usize> =
            self.config.skip_plan.iter().map(|&(s, t)| (t, s)).collect();
        match self.config.variant {
            GeneratorVariant::Hybrid => self.forward_hybrid(g, vars, x, &skip_into),
            GeneratorVariant::Pure3d => self.forward_stack(g, vars, x, &skip_into),
            GeneratorVariant::Pure2d => {
                let slices = g.split_z(x)?;
                let outs = slices
                    .into_iter()
                    .map(|s| self.forward_stack(g, vars, s, &skip_into))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(g.concat_z(&outs)?)
            }
        }
    }

    /// Straight 10-layer column (pure2d per slice, pure3d whole volume):
    /// five convolutions down, five transposed convolutions back up.
    fn forward_stack(
        &self,
        g: &Graph<f32>,
        vars: &[Var],
        x: Var,
        skip_into: &HashMap<usize, usize>,
    ) -> Result<Var, CoreError> {
        let spec = match self.config.variant {
            GeneratorVariant::Pure3d => ConvSpec { stride: 1, padding: Padding::Zero },
            _ => ConvSpec { stride: 1, padding: Padding::Valid },
        };
        let mut acts = vec![x];
        for l in 1..=LAYERS {
            let (k, b) = (vars[2 * (l - 1)], vars[2 * l - 1]);
            let prev = acts[l - 1];
            let mut pre = if l <= 5 {
                g.conv(prev, k, Some(b), spec)?
            } else {
                g.deconv(prev, k, Some(b), spec)?
            };
            if let Some(&s) = skip_into.get(&l) {
                pre = g.add(pre, acts[s])?;
            }
            acts.push(g.relu(pre));
        }
        Ok(acts[LAYERS])
    }

    fn forward_hybrid(
        &self,
        g: &Graph<f32>,
        vars: &[Var],
        x: Var,
        skip_into: &HashMap<usize, usize>,
    ) -> Result<Var, CoreError> {
        let zero = ConvSpec { stride: 1, padding: Padding::Zero };
        let valid = ConvSpec { stride: 1, padding: Padding::Valid };
        let k = |l: usize| vars[2 * (l - 1)];
        let b = |l: usize| vars[2 * l - 1];

        let a1 = g.relu(g.conv(x, k(1), Some(b(1)), zero)?);
        let a2 = g.relu(g.conv(a1, k(2), Some(b(2)), zero)?);

        let mut pre8 = Vec::with_capacity(DEPTH_WINDOW);
        for slice in g.split_z(a2)? {
            let a3 = g.relu(g.conv(slice, k(3), Some(b(3)), valid)?);
            let a4 = g.relu(g.conv(a3, k(4), Some(b(4)), valid)?);
            let a5 = g.relu(g.conv(a4, k(5), Some(b(5)), valid)?);
            let mut p6 = g.deconv(a5, k(6), Some(b(6)), valid)?;
            if skip_into.get(&6) == Some(&4) {
                p6 = g.add(p6, a4)?;
            }
            let a6 = g.relu(p6);
            let mut p7 = g.deconv(a6, k(7), Some(b(7)), valid)?;
            if skip_into.get(&7) == Some(&3) {
                p7 = g.add(p7, a3)?;
            }
            let a7 = g.relu(p7);
            pre8.push(g.deconv(a7, k(8), Some(b(8)), valid)?);
        }

        // the per-slice stage ends before layer 8's activation: its outputs
        // are stacked back into a volume first, so the skip and the ReLU see
        // 3D tensors
        let mut c8 = g.concat_z(&pre8)?;
        if skip_into.get(&8) == Some(&2) {
            c8 = g.add(c8, a2)?;
        }
        let a8 = g.relu(c8);

        let mut p9 = g.deconv(a8, k(9), Some(b(9)), zero)?;
        if skip_into.get(&9) == Some(&1) {
            p9 = g.add(p9, a1)?;
        }
        let a9 = g.relu(p9);

        let mut p10 = g.deconv(a9, k(10), Some(b(10)), zero)?;
        if skip_into.get(&10) == Some(&0) {
            p10 = g.add(p10, x)?;
        }
        Ok(g.relu(p10))
    }
}
