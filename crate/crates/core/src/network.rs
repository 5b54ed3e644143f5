//! Networks as an ordered composition of units, `N = N_L ∘ … ∘ N_1`.
//!
//! Unit indices in the public API are 1-based, matching the way candidates
//! are named in reports (`unit-1` is the unit that sees the input).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerCache, LayerKind, Param};
use crate::rng::{label_key, Rng};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitRole {
    Standard,
    /// Image-to-image 1×1 convolution prepended in front of a pretrained network.
    Pixel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub name: String,
    pub role: UnitRole,
    pub layers: Vec<Layer>,
}

impl Unit {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>) -> Self {
        Self {
            name: name.into(),
            role: UnitRole::Standard,
            layers,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.layers.iter().map(Layer::scalar_count).sum()
    }

    /// True when the first parameterized layer is fully connected.
    pub fn is_fully_connected(&self) -> bool {
        self.layers
            .iter()
            .find(|l| !l.params.is_empty() && !l.is_scale_shift())
            .is_some_and(|l| matches!(l.kind, LayerKind::Dense { .. }))
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }
}

/// Which class of fine-tuning a mask represents; drives cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    SingleUnit,
    MultiUnit,
    All,
    ScaleShift,
    PixelUnit,
}

impl MaskKind {
    /// Whether an epoch under this mask counts as a full-network epoch.
    pub fn is_full_network(self) -> bool {
        !matches!(self, MaskKind::SingleUnit)
    }
}

/// Set of units whose parameters may change during fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask {
    pub unit_indices: BTreeSet<usize>,
    /// Also unfreeze every scale-shift layer in the network (`ft-ss`).
    pub include_scale_shift_everywhere: bool,
    covers_all: bool,
}

impl TrainableMask {
    pub fn unit(index: usize) -> Self {
        Self::units([index])
    }

    pub fn units(indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            unit_indices: indices.into_iter().collect(),
            include_scale_shift_everywhere: false,
            covers_all: false,
        }
    }

    pub fn all(num_units: usize) -> Self {
        Self {
            unit_indices: (1..=num_units).collect(),
            include_scale_shift_everywhere: false,
            covers_all: true,
        }
    }

    /// Last unit plus every scale-shift layer.
    pub fn scale_shift(num_units: usize) -> Self {
        Self {
            unit_indices: BTreeSet::from([num_units]),
            include_scale_shift_everywhere: true,
            covers_all: false,
        }
    }

    /// Mask that unfreezes nothing.
    pub fn none() -> Self {
        Self::units([])
    }

    pub fn kind(&self, net: &Network) -> MaskKind {
        if self.covers_all {
            MaskKind::All
        } else if self.include_scale_shift_everywhere {
            MaskKind::ScaleShift
        } else if self.unit_indices.len() == 1 {
            let idx = *self.unit_indices.iter().next().unwrap();
            match net.units.get(idx.wrapping_sub(1)).map(|u| u.role) {
                Some(UnitRole::Pixel) => MaskKind::PixelUnit,
                _ => MaskKind::SingleUnit,
            }
        } else {
            MaskKind::MultiUnit
        }
    }

    /// Key identifying the set of parameters this mask covers.
    ///
    /// Two masks covering the same parameters share a key, so candidates that
    /// are the same procedure also share their training seed.
    pub fn seed_key(&self) -> u64 {
        let units: Vec<String> = self.unit_indices.iter().map(|i| i.to_string()).collect();
        label_key(&format!(
            "units={};ss={}",
            units.join(","),
            self.include_scale_shift_everywhere as u8
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: String,
    input_shape: Vec<usize>,
    num_classes: usize,
    units: Vec<Unit>,
}

/// Caches for one training forward pass, per unit then per layer.
pub type ForwardTrace = Vec<Vec<LayerCache>>;

impl Network {
    /// Builds and validates a network; every parameter starts trainable.
    pub fn new(
        arch: impl Into<String>,
        input_shape: Vec<usize>,
        num_classes: usize,
        units: Vec<Unit>,
    ) -> Result<Self> {
        let net = Self {
            arch: arch.into(),
            input_shape,
            num_classes,
            units,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::Architecture("network has no units".into()));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        for unit in &self.units {
            for layer in &unit.layers {
                shape = layer.kind.output_shape(&shape).map_err(|e| {
                    Error::Architecture(format!("unit {}: {e}", unit.name))
                })?;
                for (p, want) in layer.params.iter().zip(layer.kind.param_shapes()) {
                    if p.value.shape() != want.as_slice() {
                        return Err(Error::Architecture(format!(
                            "unit {}: parameter shape {:?} does not match {}",
                            unit.name,
                            p.value.shape(),
                            layer.kind
                        )));
                    }
                }
            }
        }
        let last = self.units.last().and_then(|u| u.layers.last());
        match last.map(|l| l.kind) {
            Some(LayerKind::Dense { out_dim, .. }) if out_dim == self.num_classes => Ok(()),
            _ => Err(Error::Architecture(format!(
                "last unit must end in a dense layer with {} outputs",
                self.num_classes
            ))),
        }
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    /// Unit `index` (1-based).
    pub fn unit(&self, index: usize) -> Result<&Unit> {
        self.check_index(index)?;
        Ok(&self.units[index - 1])
    }

    pub fn unit_mut(&mut self, index: usize) -> Result<&mut Unit> {
        self.check_index(index)?;
        Ok(&mut self.units[index - 1])
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index == 0 || index > self.units.len() {
            return Err(Error::InvalidArgument(format!(
                "unit index {index} out of range 1..={}",
                self.units.len()
            )));
        }
        Ok(())
    }

    /// Index of the pixel unit, if one is attached.
    pub fn pixel_unit(&self) -> Option<usize> {
        self.units
            .iter()
            .position(|u| u.role == UnitRole::Pixel)
            .map(|i| i + 1)
    }

    /// 1-based indices of the fully-connected units, in order.
    pub fn fc_units(&self) -> Vec<usize> {
        (1..=self.units.len())
            .filter(|&i| self.units[i - 1].is_fully_connected())
            .collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.units.iter().flat_map(Unit::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.units.iter_mut().flat_map(Unit::params_mut)
    }

    pub fn scalar_count(&self) -> usize {
        self.units.iter().map(Unit::scalar_count).sum()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.params().filter(|p| p.trainable).map(Param::len).sum()
    }

    /// Lowest unit holding a trainable parameter.
    pub fn lowest_trainable_unit(&self) -> Option<usize> {
        self.units
            .iter()
            .position(|u| u.params().any(|p| p.trainable && !p.is_empty()))
            .map(|i| i + 1)
    }

    pub fn reset_optimizer(&mut self) {
        for p in self.params_mut() {
            p.reset_optimizer();
        }
    }

    /// Text block describing the architecture; equal descriptors mean
    /// parameter-compatible networks.
    pub fn descriptor(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("arch {}\n", self.arch));
        let dims: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("input {}\n", dims.join(" ")));
        s.push_str(&format!("classes {}\n", self.num_classes));
        for u in &self.units {
            let role = match u.role {
                UnitRole::Standard => "standard",
                UnitRole::Pixel => "pixel",
            };
            s.push_str(&format!("unit {} {role}\n", u.name));
            for l in &u.layers {
                s.push_str(&format!("  {}\n", l.kind));
            }
        }
        s
    }

    /// Rebuilds a zero-initialized network from a descriptor.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut arch = None;
        let mut input = None;
        let mut classes = None;
        let mut units: Vec<Unit> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(rest) = line.strip_prefix("  ") {
                let unit = units
                    .last_mut()
                    .ok_or_else(|| Error::Format("layer line before any unit".into()))?;
                unit.layers.push(Layer::new(LayerKind::parse(rest)?));
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "arch" => arch = Some(rest.to_string()),
                "input" => {
                    input = Some(
                        rest.split_whitespace()
                            .map(|t| t.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| Error::Format(format!("bad input line {line:?}")))?,
                    )
                }
                "classes" => {
                    classes = Some(
                        rest.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad classes line {line:?}")))?,
                    )
                }
                "unit" => {
                    let (name, role) = rest
                        .split_once(' ')
                        .ok_or_else(|| Error::Format(format!("bad unit line {line:?}")))?;
                    let role = match role {
                        "standard" => UnitRole::Standard,
                        "pixel" => UnitRole::Pixel,
                        _ => return Err(Error::Format(format!("bad unit role {role:?}"))),
                    };
                    units.push(Unit {
                        name: name.to_string(),
                        role,
                        layers: Vec::new(),
                    });
                }
                _ => return Err(Error::Format(format!("unknown descriptor line {line:?}"))),
            }
        }
        let missing = |what: &str| Error::Format(format!("descriptor lacks {what}"));
        Network::new(
            arch.ok_or_else(|| missing("arch"))?,
            input.ok_or_else(|| missing("input"))?,
            classes.ok_or_else(|| missing("classes"))?,
            units,
        )
        .map_err(|e| Error::Format(format!("invalid descriptor: {e}")))
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            let mut want = vec![batch.shape().first().copied().unwrap_or(0)];
            want.extend_from_slice(&self.input_shape);
            return Err(Error::shape(format!("network {}", self.arch), &want, batch.shape()));
        }
        Ok(())
    }

    /// Logits `[n, num_classes]` for a batch `[n, input_shape...]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.forward_units(batch, 1, self.units.len())
    }

    /// Applies units `first..=last` (1-based) to an activation. `first = last + 1`
    /// returns the input unchanged.
    pub fn forward_units(&self, x: &Tensor, first: usize, last: usize) -> Result<Tensor> {
        if first == 0 || last > self.units.len() || first > last + 1 {
            return Err(Error::InvalidArgument(format!(
                "unit range {first}..={last} invalid for {} units",
                self.units.len()
            )));
        }
        let mut cur = x.clone();
        for unit in &self.units[first - 1..last] {
            for layer in &unit.layers {
                cur = layer.forward(&cur)?.0;
            }
        }
        Ok(cur)
    }

    /// Activations after unit `depth`, flattened to `[n, d]`. Depth 0 is the input.
    pub fn features_at(&self, batch: &Tensor, depth: usize) -> Result<Tensor> {
        self.check_batch(batch)?;
        if depth > self.units.len() {
            return Err(Error::InvalidArgument(format!(
                "depth {depth} exceeds {} units",
                self.units.len()
            )));
        }
        let out = self.forward_units(batch, 1, depth)?;
        let n = out.rows();
        let d = out.row_len();
        out.reshape(&[n, d])
    }

    /// Forward pass from unit `first` onwards, keeping caches for backward.
    pub fn forward_trace(&self, x: &Tensor, first: usize) -> Result<(Tensor, ForwardTrace)> {
        self.check_index(first)?;
        let mut cur = x.clone();
        let mut trace = Vec::with_capacity(self.units.len() - first + 1);
        for unit in &self.units[first - 1..] {
            let mut caches = Vec::with_capacity(unit.layers.len());
            for layer in &unit.layers {
                let (out, cache) = layer.forward(&cur)?;
                caches.push(cache);
                cur = out;
            }
            trace.push(caches);
        }
        Ok((cur, trace))
    }

    /// Back-propagates logits gradients through a trace from [`forward_trace`](Self::forward_trace).
    ///
    /// Nothing below unit `first` is visited, and the input gradient of the
    /// lowest layer is not formed.
    pub fn backward_trace(&mut self, trace: &ForwardTrace, grad_logits: &Tensor, first: usize) -> Result<()> {
        if trace.len() != self.units.len() + 1 - first {
            return Err(Error::InvalidArgument("trace does not match unit range".into()));
        }
        let mut grad = grad_logits.clone();
        let units = &mut self.units[first - 1..];
        for (ui, (unit, caches)) in units.iter_mut().zip(trace).enumerate().rev() {
            for (li, (layer, cache)) in unit.layers.iter_mut().zip(caches).enumerate().rev() {
                let bottom = ui == 0 && li == 0;
                match layer.backward_impl(cache, &grad, !bottom)? {
                    Some(g) => grad = g,
                    None => return Ok(()),
                }
            }
        }
        Ok(())
    }

    /// Sets `trainable` to exactly the parameters the mask covers.
    pub fn apply_mask(&mut self, mask: &TrainableMask) -> Result<()> {
        for &i in &mask.unit_indices {
            self.check_index(i)?;
        }
        for (i, unit) in self.units.iter_mut().enumerate() {
            let whole = mask.unit_indices.contains(&(i + 1));
            for layer in &mut unit.layers {
                let on = whole || (mask.include_scale_shift_everywhere && layer.is_scale_shift());
                for p in &mut layer.params {
                    p.trainable = on;
                }
            }
        }
        Ok(())
    }

    /// Number of scalars a mask would unfreeze.
    pub fn masked_scalar_count(&self, mask: &TrainableMask) -> usize {
        self.units
            .iter()
            .enumerate()
            .flat_map(|(i, u)| u.layers.iter().map(move |l| (i + 1, l)))
            .filter(|(i, l)| {
                mask.unit_indices.contains(i) || (mask.include_scale_shift_everywhere && l.is_scale_shift())
            })
            .map(|(_, l)| l.scalar_count())
            .sum()
    }

    /// Order-sensitive checksum of all parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for v in p.value.data() {
                h = (h ^ v.to_bits() as u64).wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }

    /// Copies every parameter except those of unit `index`, which come from `donor`.
    pub fn surgery(base: &Network, donor: &Network, index: usize) -> Result<Network> {
        if base.descriptor() != donor.descriptor() {
            return Err(Error::Architecture(
                "surgery requires architecturally identical networks".into(),
            ));
        }
        base.check_index(index)?;
        let mut out = base.clone();
        let target = &mut out.units[index - 1];
        for (dst, src) in target.params_mut().zip(donor.units[index - 1].params()) {
            dst.value = src.value.clone();
        }
        Ok(out)
    }

    /// Prepends an identity-initialized 1×1 convolution over the input channels.
    pub fn attach_pixel_unit(&self) -> Result<Network> {
        if self.input_shape.len() != 3 {
            return Err(Error::Architecture("pixel unit needs image input".into()));
        }
        if self.pixel_unit().is_some() {
            return Err(Error::Architecture("pixel unit already attached".into()));
        }
        let c = self.input_shape[0];
        let mut conv = Layer::conv2d(c, c, 1, 1, 0);
        let w = conv.params[0].value.data_mut();
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        let mut units = Vec::with_capacity(self.units.len() + 1);
        units.push(Unit {
            name: "pixel".into(),
            role: UnitRole::Pixel,
            layers: vec![conv],
        });
        units.extend(self.units.iter().cloned());
        Network::new(self.arch.clone(), self.input_shape.clone(), self.num_classes, units)
    }

    /// Re-initializes every parameter (He-normal weights, identity scale-shift).
    pub fn init_params(&mut self, rng: &mut Rng) {
        for unit in &mut self.units {
            for layer in &mut unit.layers {
                layer.init_params(rng);
            }
        }
    }
}

/// Reference architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Two convolutional units followed by two fully-connected units.
    Mnist4,
    /// Five convolutional units followed by two fully-connected units.
    Cifar7,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Mnist4 => "mnist4",
            Architecture::Cifar7 => "cifar7",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist4" => Ok(Architecture::Mnist4),
            "cifar7" => Ok(Architecture::Cifar7),
            _ => Err(Error::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

const HIDDEN: usize = 64;

impl Architecture {
    /// Zero-initialized network for images `[channels, size, size]`.
    ///
    /// Every convolution and hidden dense layer is followed by a scale-shift
    /// layer (identity at creation) so `ft-ss` has something to tune.
    pub fn build(self, input_shape: &[usize], num_classes: usize) -> Result<Network> {
        let [c, h, w] = input_shape else {
            return Err(Error::Architecture(format!(
                "{self} expects [channels, height, width], got {input_shape:?}"
            )));
        };
        let (c, h, w) = (*c, *h, *w);
        let conv_unit = |name: &str, cin: usize, cout: usize, pool: bool, flatten: bool| {
            let mut layers = vec![Layer::conv2d(cin, cout, 3, 1, 1), Layer::scale_shift(cout), Layer::relu()];
            if pool {
                layers.push(Layer::max_pool(2, 2));
            }
            if flatten {
                layers.push(Layer::flatten());
            }
            Unit::new(name, layers)
        };
        let (mut units, channels, pools) = match self {
            Architecture::Mnist4 => (
                vec![conv_unit("conv1", c, 8, true, false), conv_unit("conv2", 8, 16, true, true)],
                16,
                2,
            ),
            Architecture::Cifar7 => (
                vec![
                    conv_unit("conv1", c, 16, false, false),
                    conv_unit("conv2", 16, 16, true, false),
                    conv_unit("conv3", 16, 32, false, false),
                    conv_unit("conv4", 32, 32, true, false),
                    conv_unit("conv5", 32, 32, true, true),
                ],
                32,
                3,
            ),
        };
        let div = 1 << pools;
        if h % div != 0 || w % div != 0 {
            return Err(Error::Architecture(format!(
                "{self} needs height and width divisible by {div}, got {h}×{w}"
            )));
        }
        let flat = channels * (h / div) * (w / div);
        units.push(Unit::new(
            "fc1",
            vec![Layer::dense(flat, HIDDEN), Layer::scale_shift(HIDDEN), Layer::relu()],
        ));
        units.push(Unit::new("fc2", vec![Layer::dense(HIDDEN, num_classes)]));
        Network::new(self.to_string(), input_shape.to_vec(), num_classes, units)
    }

    /// Built and He-initialized from `rng`.
    pub fn build_initialized(self, input_shape: &[usize], num_classes: usize, rng: &mut Rng) -> Result<Network> {
        let mut net = self.build(input_shape, num_classes)?;
        net.init_params(rng);
        Ok(net)
    }
}

/// Largest absolute difference between two equally shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Float {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, Float::max)
}
