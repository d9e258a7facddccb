use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::ImageGrid;

use super::{ParamVector, Tape, Tensor, Var};

/// Architecture of the encoder-decoder network.
///
/// Level `l` works at `base_channels * 2^l` channels and `1 / 2^l` resolution.
/// Every level applies two convolutions with leaky-rectifier activations; the
/// decoder upsamples (nearest neighbour + convolution), optionally concatenates
/// the encoder skip, and a final 1x1 convolution maps to one output channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub skip_connections: bool,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            kernel_size: 3,
            skip_connections: true,
            leaky_slope: 0.1,
        }
    }
}

impl NetConfig {
    /// Full-size U-Net (four levels, 64 base channels).
    pub fn full_size() -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }

    pub fn check_input(&self, width: usize) -> Result<()> {
        let m = 1usize << self.depth;
        if !width.is_multiple_of(m) {
            return Err(Error::mismatch(
                "network input width",
                format!("multiple of {m}"),
                width,
            ));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Closed-form parameter count. With `c_l = base * 2^l`, `conv(i, o) =
    /// o * (i * k^2 + 1)` and `s = 2` with skips (else 1):
    ///
    /// ```text
    /// conv(1, c_0) + conv(c_0, c_0)
    ///   + sum_{l=1..depth}   [conv(c_{l-1}, c_l) + conv(c_l, c_l)]
    ///   + sum_{l=0..depth-1} [conv(c_{l+1}, c_l) + conv(s c_l, c_l) + conv(c_l, c_l)]
    ///   + (c_0 + 1)
    /// ```
    pub fn param_count(&self) -> usize {
        let k2 = self.kernel_size * self.kernel_size;
        let conv = |i: usize, o: usize| o * (i * k2 + 1);
        let c = |l: usize| self.channels(l);
        let s = if self.skip_connections { 2 } else { 1 };
        let mut n = conv(1, c(0)) + conv(c(0), c(0));
        for l in 1..=self.depth {
            n += conv(c(l - 1), c(l)) + conv(c(l), c(l));
        }
        for l in 0..self.depth {
            n += conv(c(l + 1), c(l)) + conv(s * c(l), c(l)) + conv(c(l), c(l));
        }
        n + c(0) + 1
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    k: usize,
    offset: usize,
}

impl ConvLayer {
    fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn len(&self) -> usize {
        self.weights() + self.cout
    }
}

/// Parameter layout and forward graph for a [`NetConfig`].
///
/// Layers are laid out in execution order: encoder levels `0..=depth` (two
/// convolutions each), then decoder levels `depth-1..=0` (upsampling
/// convolution and two convolutions each), then the 1x1 head. Each layer stores
/// its weights `[cout, cin, k, k]` followed by its biases.
#[derive(Clone, Debug)]
pub struct UNet {
    cfg: NetConfig,
    layers: Vec<ConvLayer>,
    len: usize,
}

impl UNet {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.kernel_size;
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut add = |cin: usize, cout: usize, k: usize| {
            let layer = ConvLayer {
                cin,
                cout,
                k,
                offset,
            };
            offset += layer.len();
            layers.push(layer);
        };
        let c = |l: usize| cfg.channels(l);
        add(1, c(0), k);
        add(c(0), c(0), k);
        for l in 1..=cfg.depth {
            add(c(l - 1), c(l), k);
            add(c(l), c(l), k);
        }
        let s = if cfg.skip_connections { 2 } else { 1 };
        for l in (0..cfg.depth).rev() {
            add(c(l + 1), c(l), k);
            add(s * c(l), c(l), k);
            add(c(l), c(l), k);
        }
        add(c(0), 1, 1);
        Ok(Self {
            cfg: cfg.clone(),
            layers,
            len: offset,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn param_len(&self) -> usize {
        self.len
    }

    /// Fan-in scaled uniform weights (He bound for the leaky rectifier), zero
    /// biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.cfg.leaky_slope;
        let mut values = vec![0.0; self.len];
        for layer in &self.layers {
            let fan_in = (layer.cin * layer.k * layer.k) as f64;
            let bound = (6.0 / ((1.0 + a * a) * fan_in)).sqrt();
            for v in &mut values[layer.offset..layer.offset + layer.weights()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        ParamVector(values)
    }

    /// Offset and length of the final 1x1 layer in the parameter vector.
    pub fn head_range(&self) -> std::ops::Range<usize> {
        let last = self.layers.last().expect("at least one layer");
        last.offset..last.offset + last.len()
    }

    fn conv(&self, tape: &mut Tape<'_>, layer: usize, x: Var) -> Result<Var> {
        let l = &self.layers[layer];
        let w = tape.param(l.offset, [l.cout, l.cin, l.k * l.k])?;
        let b = tape.param(l.offset + l.weights(), [l.cout, 1, 1])?;
        tape.conv2d(x, w, b)
    }

    fn conv_act(&self, tape: &mut Tape<'_>, layer: usize, x: Var) -> Result<Var> {
        let y = self.conv(tape, layer, x)?;
        Ok(tape.leaky_relu(y, self.cfg.leaky_slope))
    }

    /// Records `f_theta(input)` on the tape. `input` must be `[1, w, w]`.
    pub fn forward(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var> {
        let [c, h, w] = tape.value(input).shape();
        if c != 1 || h != w {
            return Err(Error::mismatch(
                "network input",
                "[1, w, w]",
                format!("[{c}, {h}, {w}]"),
            ));
        }
        self.cfg.check_input(w)?;
        let mut layer = 0;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut x = input;
        for level in 0..=self.cfg.depth {
            if level > 0 {
                x = tape.max_pool2(x)?;
            }
            x = self.conv_act(tape, layer, x)?;
            x = self.conv_act(tape, layer + 1, x)?;
            layer += 2;
            if level < self.cfg.depth {
                skips.push(x);
            }
        }
        while let Some(skip) = skips.pop() {
            let up = tape.upsample2(x);
            let mut y = self.conv_act(tape, layer, up)?;
            if self.cfg.skip_connections {
                y = tape.concat(y, skip)?;
            }
            y = self.conv_act(tape, layer + 1, y)?;
            x = self.conv_act(tape, layer + 2, y)?;
            layer += 3;
        }
        self.conv(tape, layer, x)
    }
}

/// Applies the network to one image.
pub fn net_forward(params: &ParamVector, image: &ImageGrid, cfg: &NetConfig) -> Result<ImageGrid> {
    let net = UNet::new(cfg)?;
    apply(&net, params, image)
}

pub(crate) fn apply(net: &UNet, params: &ParamVector, image: &ImageGrid) -> Result<ImageGrid> {
    if params.len() != net.param_len() {
        return Err(Error::mismatch(
            "parameter vector",
            net.param_len(),
            params.len(),
        ));
    }
    let mut tape = Tape::new(params);
    let x = tape.constant(Tensor::from_image(image));
    let y = net.forward(&mut tape, x)?;
    tape.value(y).to_image(image.pixel_size())
}
