//! Stacked bidirectional GRU with a linear head.
//!
//! Per direction, with `h_0 = 0`:
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! c_t = tanh(W_c x_t + U_c (r_t * h_{t-1}) + b_c)
//! h_t = (1 - z_t) * h_{t-1} + z_t * c_t
//! ```
//!
//! The forward and backward direction outputs are concatenated per token.
//! Inverted dropout is applied to each layer's output (the last one feeds the
//! head) during training.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dropout::{dropout_rate, DropoutPolicy};
use super::init::{default_uniform_init, xavier_init, InitScheme};
use crate::crf::EmissionScores;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Input, recurrent and bias parameters of one gate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate<T> {
    /// `hidden x input`
    pub input: Array2<T>,
    /// `hidden x hidden`
    pub recurrent: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Gate<T> {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            input: Array2::zeros((hidden, input)),
            recurrent: Array2::zeros((hidden, hidden)),
            bias: Array1::zeros(hidden),
        }
    }

    fn random(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        Self {
            input: default_uniform_init((hidden, input), hidden, rng),
            recurrent: default_uniform_init((hidden, hidden), hidden, rng),
            bias: default_uniform_init((1, hidden), hidden, rng)
                .row(0)
                .to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell<T> {
    pub update: Gate<T>,
    pub reset: Gate<T>,
    pub candidate: Gate<T>,
}

impl<T: Scalar> GruCell<T> {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            update: Gate::zeros(hidden, input),
            reset: Gate::zeros(hidden, input),
            candidate: Gate::zeros(hidden, input),
        }
    }

    pub fn gates(&self) -> [(&'static str, &Gate<T>); 3] {
        [
            ("update", &self.update),
            ("reset", &self.reset),
            ("candidate", &self.candidate),
        ]
    }

    pub fn gates_mut(&mut self) -> [(&'static str, &mut Gate<T>); 3] {
        [
            ("update", &mut self.update),
            ("reset", &mut self.reset),
            ("candidate", &mut self.candidate),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer<T> {
    pub forward: GruCell<T>,
    pub backward: GruCell<T>,
}

/// Weights of the bidirectional GRU stack and the linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGruParams<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_labels: usize,
    pub layers: Vec<GruLayer<T>>,
    /// `(2 * hidden_dim) x num_labels`
    pub head_weights: Array2<T>,
    pub head_bias: Array1<T>,
}

/// Gradients share the parameter layout.
pub type NetworkGradients<T> = BiGruParams<T>;

impl<T: Scalar> BiGruParams<T> {
    pub fn zeros(
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        num_labels: usize,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { 2 * hidden_dim };
                GruLayer {
                    forward: GruCell::zeros(hidden_dim, in_dim),
                    backward: GruCell::zeros(hidden_dim, in_dim),
                }
            })
            .collect();
        Self {
            input_dim,
            hidden_dim,
            num_labels,
            layers,
            head_weights: Array2::zeros((2 * hidden_dim, num_labels)),
            head_bias: Array1::zeros(num_labels),
        }
    }

    /// Recurrent weights from `U(-1/sqrt(h), 1/sqrt(h))`; the head per `head_init`.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        num_labels: usize,
        head_init: InitScheme,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { 2 * hidden_dim };
                let mut cell = || GruCell {
                    update: Gate::random(hidden_dim, in_dim, &mut rng),
                    reset: Gate::random(hidden_dim, in_dim, &mut rng),
                    candidate: Gate::random(hidden_dim, in_dim, &mut rng),
                };
                GruLayer {
                    forward: cell(),
                    backward: cell(),
                }
            })
            .collect();
        let fan_in = 2 * hidden_dim;
        let (head_weights, head_bias) = match head_init {
            InitScheme::Xavier => (
                xavier_init(fan_in, num_labels, rng.random()),
                Array1::zeros(num_labels),
            ),
            InitScheme::FanIn => (
                default_uniform_init((fan_in, num_labels), fan_in, &mut rng),
                default_uniform_init((1, num_labels), fan_in, &mut rng)
                    .row(0)
                    .to_owned(),
            ),
        };
        Self {
            input_dim,
            hidden_dim,
            num_labels,
            layers,
            head_weights,
            head_bias,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.input_dim,
            self.hidden_dim,
            self.num_layers(),
            self.num_labels,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = if l == 0 { self.input_dim } else { 2 * h };
            for cell in [&layer.forward, &layer.backward] {
                for (name, gate) in cell.gates() {
                    if gate.input.dim() != (h, in_dim)
                        || gate.recurrent.dim() != (h, h)
                        || gate.bias.len() != h
                    {
                        return Err(Error::Shape(format!("layer {l} {name} gate")));
                    }
                }
            }
        }
        if self.head_weights.dim() != (2 * h, self.num_labels)
            || self.head_bias.len() != self.num_labels
        {
            return Err(Error::Shape("head".into()));
        }
        Ok(())
    }
}

/// Activations of one direction, indexed by token position.
#[derive(Clone, Debug)]
struct DirectionCache<T> {
    h_prev: Array2<T>,
    z: Array2<T>,
    r: Array2<T>,
    c: Array2<T>,
    h: Array2<T>,
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    input: Array2<T>,
    forward: DirectionCache<T>,
    backward: DirectionCache<T>,
    /// Inverted-dropout multipliers applied to this layer's output.
    mask: Option<Array2<T>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    head_input: Array2<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Input of the head, `n x (2 * hidden_dim)`.
    pub fn hidden(&self) -> &Array2<T> {
        &self.head_input
    }

    pub fn len(&self) -> usize {
        self.head_input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.head_input.nrows() == 0
    }
}

fn run_direction<T: Scalar>(cell: &GruCell<T>, x: &Array2<T>, reverse: bool) -> DirectionCache<T> {
    let n = x.nrows();
    let h = cell.update.bias.len();
    let project = |g: &Gate<T>| x.dot(&g.input.t()) + &g.bias;
    let (xz, xr, xc) = (
        project(&cell.update),
        project(&cell.reset),
        project(&cell.candidate),
    );
    let mut cache = DirectionCache {
        h_prev: Array2::zeros((n, h)),
        z: Array2::zeros((n, h)),
        r: Array2::zeros((n, h)),
        c: Array2::zeros((n, h)),
        h: Array2::zeros((n, h)),
    };
    let mut prev = Array1::<T>::zeros(h);
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let z = (&xz.row(t) + &cell.update.recurrent.dot(&prev)).mapv(sigmoid);
        let r = (&xr.row(t) + &cell.reset.recurrent.dot(&prev)).mapv(sigmoid);
        let rh = &r * &prev;
        let c = (&xc.row(t) + &cell.candidate.recurrent.dot(&rh)).mapv(|v| v.tanh());
        let next = Zip::from(&z)
            .and(&prev)
            .and(&c)
            .map_collect(|&z, &p, &c| (T::one() - z) * p + z * c);
        cache.h_prev.row_mut(t).assign(&prev);
        cache.z.row_mut(t).assign(&z);
        cache.r.row_mut(t).assign(&r);
        cache.c.row_mut(t).assign(&c);
        cache.h.row_mut(t).assign(&next);
        prev = next;
    }
    cache
}

/// Backpropagation through time for one direction. Accumulates into `grads`
/// and returns the gradient with respect to the direction's input.
fn backprop_direction<T: Scalar>(
    cell: &GruCell<T>,
    cache: &DirectionCache<T>,
    x: &Array2<T>,
    grad_out: ArrayView2<'_, T>,
    reverse: bool,
    grads: &mut GruCell<T>,
) -> Array2<T> {
    let (n, h) = cache.h.dim();
    let mut da_z = Array2::<T>::zeros((n, h));
    let mut da_r = Array2::<T>::zeros((n, h));
    let mut da_c = Array2::<T>::zeros((n, h));
    let mut carry = Array1::<T>::zeros(h);
    for step in (0..n).rev() {
        let t = if reverse { n - 1 - step } else { step };
        let dh = &grad_out.row(t) + &carry;
        let (hp, z, r, c) = (
            cache.h_prev.row(t),
            cache.z.row(t),
            cache.r.row(t),
            cache.c.row(t),
        );

        let dz = Zip::from(&dh)
            .and(&c)
            .and(&hp)
            .map_collect(|&d, &c, &p| d * (c - p));
        let dac = Zip::from(&dh)
            .and(&z)
            .and(&c)
            .map_collect(|&d, &z, &c| d * z * (T::one() - c * c));
        let mut next = Zip::from(&dh)
            .and(&z)
            .map_collect(|&d, &z| d * (T::one() - z));
        let drh = cell.candidate.recurrent.t().dot(&dac);
        let dar = Zip::from(&drh)
            .and(&hp)
            .and(&r)
            .map_collect(|&d, &p, &r| d * p * r * (T::one() - r));
        let daz = Zip::from(&dz)
            .and(&z)
            .map_collect(|&d, &z| d * z * (T::one() - z));
        Zip::from(&mut next)
            .and(&drh)
            .and(&r)
            .for_each(|n, &d, &r| *n += d * r);
        next += &cell.update.recurrent.t().dot(&daz);
        next += &cell.reset.recurrent.t().dot(&dar);

        da_z.row_mut(t).assign(&daz);
        da_r.row_mut(t).assign(&dar);
        da_c.row_mut(t).assign(&dac);
        carry = next;
    }

    let rh = &cache.r * &cache.h_prev;
    let accumulate = |g: &mut Gate<T>, da: &Array2<T>, recurrent_input: &Array2<T>| {
        g.input += &da.t().dot(x);
        g.recurrent += &da.t().dot(recurrent_input);
        g.bias += &da.sum_axis(Axis(0));
    };
    accumulate(&mut grads.update, &da_z, &cache.h_prev);
    accumulate(&mut grads.reset, &da_r, &cache.h_prev);
    accumulate(&mut grads.candidate, &da_c, &rh);

    da_z.dot(&cell.update.input) + da_r.dot(&cell.reset.input) + da_c.dot(&cell.candidate.input)
}

/// Runs the GRU stack. Returns the head input (`n x 2h`) and the cache for
/// [`emissions_backward`]. Dropout is drawn from `rng` only when `training`.
pub fn bigru_forward<T: Scalar, R: Rng>(
    embeddings: &Array2<T>,
    params: &BiGruParams<T>,
    dropout: &DropoutPolicy,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<T>, ForwardCache<T>)> {
    params.validate()?;
    if embeddings.nrows() == 0 {
        return Err(Error::Invalid("empty token sequence".into()));
    }
    if embeddings.ncols() != params.input_dim {
        return Err(Error::Shape(format!(
            "embeddings have dim {}, network expects {}",
            embeddings.ncols(),
            params.input_dim
        )));
    }
    let n = embeddings.nrows();
    let h = params.hidden_dim;
    let num_layers = params.num_layers();
    let mut input = embeddings.clone();
    let mut caches = Vec::with_capacity(num_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let fwd = run_direction(&layer.forward, &input, false);
        let bwd = run_direction(&layer.backward, &input, true);
        let mut out = Array2::zeros((n, 2 * h));
        out.slice_mut(s![.., ..h]).assign(&fwd.h);
        out.slice_mut(s![.., h..]).assign(&bwd.h);

        let rate = dropout_rate(l, num_layers, dropout);
        let mask = (training && rate > 0.0).then(|| {
            let keep = T::of(1.0 / (1.0 - rate));
            Array2::from_shape_simple_fn((n, 2 * h), || {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
        });
        if let Some(m) = &mask {
            out *= m;
        }
        caches.push(LayerCache {
            input: std::mem::replace(&mut input, out),
            forward: fwd,
            backward: bwd,
            mask,
        });
    }
    let cache = ForwardCache {
        layers: caches,
        head_input: input.clone(),
    };
    Ok((input, cache))
}

/// `hidden . head_weights + head_bias`, one row per token.
pub fn head_forward<T: Scalar>(
    hidden: &Array2<T>,
    params: &BiGruParams<T>,
) -> Result<EmissionScores<T>> {
    if hidden.ncols() != params.head_weights.nrows()
        || params.head_bias.len() != params.head_weights.ncols()
    {
        return Err(Error::Shape(format!(
            "hidden width {} vs head {:?}",
            hidden.ncols(),
            params.head_weights.dim()
        )));
    }
    Ok(EmissionScores::new(
        hidden.dot(&params.head_weights) + &params.head_bias,
    ))
}

/// Gradients of every network parameter and of the input embeddings, given
/// the gradient of the loss with respect to the emission scores.
pub fn emissions_backward<T: Scalar>(
    grad_emissions: &Array2<T>,
    cache: &ForwardCache<T>,
    params: &BiGruParams<T>,
) -> Result<(NetworkGradients<T>, Array2<T>)> {
    let n = cache.len();
    let h = params.hidden_dim;
    let stale = cache.layers.len() != params.num_layers()
        || cache.head_input.ncols() != 2 * h
        || cache
            .layers
            .first()
            .is_none_or(|l| l.input.ncols() != params.input_dim);
    if stale {
        return Err(Error::Shape(
            "forward cache does not match these parameters".into(),
        ));
    }
    if grad_emissions.dim() != (n, params.num_labels) {
        return Err(Error::Shape(format!(
            "emission gradient {:?}, expected ({n}, {})",
            grad_emissions.dim(),
            params.num_labels
        )));
    }
    let mut grads = params.zeros_like();
    grads.head_weights = cache.head_input.t().dot(grad_emissions);
    grads.head_bias = grad_emissions.sum_axis(Axis(0));
    let mut upstream = grad_emissions.dot(&params.head_weights.t());

    for (l, layer_cache) in cache.layers.iter().enumerate().rev() {
        if let Some(mask) = &layer_cache.mask {
            upstream *= mask;
        }
        let layer = &params.layers[l];
        let g = &mut grads.layers[l];
        let dx_fwd = backprop_direction(
            &layer.forward,
            &layer_cache.forward,
            &layer_cache.input,
            upstream.slice(s![.., ..h]),
            false,
            &mut g.forward,
        );
        let dx_bwd = backprop_direction(
            &layer.backward,
            &layer_cache.backward,
            &layer_cache.input,
            upstream.slice(s![.., h..]),
            true,
            &mut g.backward,
        );
        upstream = dx_fwd + dx_bwd;
    }
    Ok((grads, upstream))
}
