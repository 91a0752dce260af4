//! Encoder trunks and their mirrored decoders.

use deepjive_tensor::nn::{Conv2d, ConvTranspose2d, Dense};
use deepjive_tensor::{Graph, ParamId, ParamStore, Var};
use rand::Rng;

use super::spec::LayerSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
}

impl Layer {
    fn params(&self) -> Vec<ParamId> {
        match self {
            Layer::Dense(d) => d.params(),
            Layer::Conv(c) => c.params(),
            Layer::ConvT(c) => c.params(),
        }
    }
}

#[derive(Clone, Debug)]
struct Step {
    layer: Layer,
    relu: bool,
    /// Per-sample shape the output is reshaped to.
    out_shape: Vec<usize>,
}

fn run(steps: &[Step], g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
    for s in steps {
        let batch = g.value(x).shape()[0];
        x = match &s.layer {
            Layer::Dense(d) => {
                let flat = g.flatten(x)?;
                d.forward(g, store, flat)?
            }
            Layer::Conv(c) => c.forward(g, store, x)?,
            Layer::ConvT(c) => c.forward(g, store, x)?,
        };
        if s.relu {
            x = g.relu(x)?;
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&s.out_shape);
        if g.value(x).shape() != shape.as_slice() {
            x = g.reshape(x, &shape)?;
        }
    }
    Ok(x)
}

/// Hidden encoder layers; output is flattened to `[batch, out_len]`.
#[derive(Clone, Debug)]
pub struct Trunk {
    steps: Vec<Step>,
    pub out_len: usize,
}

impl Trunk {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        shapes: &[Vec<usize>],
        stack: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let mut steps = Vec::new();
        for (i, spec) in stack.iter().enumerate() {
            let (inp, out) = (&shapes[i], &shapes[i + 1]);
            let lname = format!("{name}.{i}");
            let layer = match *spec {
                LayerSpec::Dense { units, .. } => Layer::Dense(Dense::new(store, &lname, inp.iter().product(), units, true, rng)?),
                LayerSpec::Conv {
                    kernels,
                    size,
                    stride,
                    padding,
                    ..
                } => Layer::Conv(Conv2d::new(
                    store,
                    &lname,
                    inp[0],
                    kernels,
                    (size, size),
                    (stride, stride),
                    (padding, padding),
                    rng,
                )?),
            };
            steps.push(Step {
                layer,
                relu: spec.relu(),
                out_shape: out.clone(),
            });
        }
        Ok(Self {
            steps,
            out_len: shapes.last().expect("input shape").iter().product(),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = run(&self.steps, g, store, x)?;
        Ok(g.flatten(y)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.steps.iter().flat_map(|s| s.layer.params()).collect()
    }
}

/// Maps a latent vector back to the flattened input: a dense layer onto the
/// trunk output shape followed by the hidden stack inverted in reverse order.
/// The last layer is linear.
#[derive(Clone, Debug)]
pub struct Decoder {
    steps: Vec<Step>,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        shapes: &[Vec<usize>],
        stack: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let depth = stack.len();
        let top = &shapes[depth];
        let mut steps = vec![Step {
            layer: Layer::Dense(Dense::new(store, &format!("{name}.in"), width, top.iter().product(), true, rng)?),
            relu: depth > 0 && stack[depth - 1].relu(),
            out_shape: top.clone(),
        }];
        for i in (0..depth).rev() {
            let (inp, out) = (&shapes[i + 1], &shapes[i]);
            let lname = format!("{name}.{i}");
            let layer = match stack[i] {
                LayerSpec::Dense { .. } => Layer::Dense(Dense::new(store, &lname, inp.iter().product(), out.iter().product(), true, rng)?),
                LayerSpec::Conv {
                    size,
                    stride,
                    padding,
                    ..
                } => {
                    let mut op = [0usize; 2];
                    for axis in 0..2 {
                        let span = (inp[axis + 1] - 1) * stride + size;
                        let target = out[axis + 1] + 2 * padding;
                        if target < span || target - span >= stride.max(1) {
                            return Err(Error::Config(format!(
                                "cannot invert conv layer {i}: {:?} -> {:?}",
                                out, inp
                            )));
                        }
                        op[axis] = target - span;
                    }
                    Layer::ConvT(ConvTranspose2d::new(
                        store,
                        &lname,
                        inp[0],
                        out[0],
                        (size, size),
                        (stride, stride),
                        (padding, padding),
                        (op[0], op[1]),
                        rng,
                    )?)
                }
            };
            steps.push(Step {
                layer,
                relu: i > 0 && stack[i - 1].relu(),
                out_shape: out.clone(),
            });
        }
        Ok(Self { steps })
    }

    /// `[batch, width]` latent to `[batch, p]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let y = run(&self.steps, g, store, z)?;
        Ok(g.flatten(y)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.steps.iter().flat_map(|s| s.layer.params()).collect()
    }
}
