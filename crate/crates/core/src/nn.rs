//! Dense feed-forward Q-network with rectifier hidden layers, trained with
//! Adam on the squared TD error of the taken action.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has length {got}, network expects {expected}")]
    InputSize { got: usize, expected: usize },
    #[error("action index {index} out of range for {outputs} outputs")]
    ActionOutOfRange { index: usize, outputs: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().zip(self.weights.chunks_exact(self.inputs)).map(|(b, row)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

/// One regression item: push `Q(state, action)` towards `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTarget {
    pub state: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Post-activation outputs of every layer, input first.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
        if x.len() != self.input_size() {
            return Err(NnError::InputSize {
                got: x.len(),
                expected: self.input_size(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.activations(x)?.pop().expect("output layer"))
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    fn check_batch(&self, batch: &[QTarget]) -> Result<(), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let outputs = self.output_size();
        if let Some(q) = batch.iter().find(|q| q.action >= outputs) {
            return Err(NnError::ActionOutOfRange {
                index: q.action,
                outputs,
            });
        }
        Ok(())
    }

    /// Mean over the batch of `(target - Q(state, action))²`.
    pub fn q_loss(&self, batch: &[QTarget]) -> Result<f64, NnError> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for item in batch {
            let q = self.forward(&item.state)?[item.action];
            total += (item.target - q).powi(2);
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its gradient with respect to every parameter, by backprop.
    pub fn loss_and_gradient(&self, batch: &[QTarget]) -> Result<(f64, Mlp), NnError> {
        self.check_batch(batch)?;
        let mut grad = Mlp::zeros(&self.sizes());
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for item in batch {
            let acts = self.activations(&item.state)?;
            let q = acts[acts.len() - 1][item.action];
            let residual = q - item.target;
            loss += residual * residual * scale;
            // dL/d(output) is non-zero only at the taken action
            let mut delta = vec![0.0; self.output_size()];
            delta[item.action] = 2.0 * residual * scale;
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                let g = &mut grad.layers[i];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, &x) in row.iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
                if i == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // rectifier derivative at the hidden layer feeding this one
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the rate every `decay_steps` optimizer steps.
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            decay_rate: 0.95,
            decay_steps: 10_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Mlp,
    pub second_moment: Mlp,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: Mlp::zeros(&net.sizes()),
            second_moment: Mlp::zeros(&net.sizes()),
            step: 0,
        }
    }

    /// Staircase-decayed rate for the next step.
    pub fn effective_rate(&self) -> f64 {
        let c = &self.config;
        c.learning_rate * c.decay_rate.powi((self.step / c.decay_steps) as i32)
    }

    pub fn apply(&mut self, net: &mut Mlp, grad: &Mlp) -> Result<(), NnError> {
        if !grad.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        let rate = self.effective_rate();
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grad.params())
            .zip(self.first_moment.params_mut())
            .zip(self.second_moment.params_mut())
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }
}

/// One optimizer step on `batch`; returns the pre-step loss.
pub fn backward_and_step(net: &mut Mlp, adam: &mut AdamState, batch: &[QTarget]) -> Result<f64, NnError> {
    let (loss, grad) = net.loss_and_gradient(batch)?;
    adam.apply(net, &grad)?;
    Ok(loss)
}

/// Largest relative disagreement between the backprop gradient and central
/// differences with step `h`. Pairs where both are exactly zero count as 0.
pub fn gradient_check(net: &Mlp, batch: &[QTarget], h: f64) -> Result<f64, NnError> {
    let (_, analytic) = net.loss_and_gradient(batch)?;
    let analytic: Vec<f64> = analytic.params().copied().collect();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe.params_mut().nth(i).expect("index in range");
        *probe.params_mut().nth(i).expect("index in range") = original + h;
        let up = probe.q_loss(batch)?;
        *probe.params_mut().nth(i).expect("index in range") = original - h;
        let down = probe.q_loss(batch)?;
        *probe.params_mut().nth(i).expect("index in range") = original;
        let numeric = (up - down) / (2.0 * h);
        let scale = a.abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

const MAGIC: &[u8; 8] = b"AOIQNET\0";
const VERSION: u32 = 1;

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn put_params<W: Write>(w: &mut W, net: &Mlp) -> std::io::Result<()> {
    for l in &net.layers {
        put_f64s(w, &l.weights)?;
        put_f64s(w, &l.bias)?;
    }
    Ok(())
}

fn get_params<R: Read>(r: &mut R, sizes: &[usize]) -> std::io::Result<Mlp> {
    let mut net = Mlp::zeros(sizes);
    for p in net.params_mut() {
        *p = get_f64(r)?;
    }
    Ok(net)
}

/// Writes the network and, when given, the optimizer state. Little-endian
/// binary: magic, version, layer sizes, raw f64 bits.
pub fn save_checkpoint<W: Write>(mut w: W, net: &Mlp, adam: Option<&AdamState>) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let sizes = net.sizes();
    put_u64(&mut w, sizes.len() as u64)?;
    for s in &sizes {
        put_u64(&mut w, *s as u64)?;
    }
    put_params(&mut w, net)?;
    match adam {
        None => w.write_all(&[0])?,
        Some(a) => {
            w.write_all(&[1])?;
            let c = &a.config;
            put_f64s(&mut w, &[c.learning_rate, c.decay_rate])?;
            put_u64(&mut w, c.decay_steps)?;
            put_f64s(&mut w, &[c.beta1, c.beta2, c.epsilon])?;
            put_u64(&mut w, a.step)?;
            put_params(&mut w, &a.first_moment)?;
            put_params(&mut w, &a.second_moment)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<(Mlp, Option<AdamState>), NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("not a Q-network checkpoint".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = get_u64(&mut r)? as usize;
    if !(2..=64).contains(&n) {
        return Err(NnError::Checkpoint(format!("implausible layer count {n}")));
    }
    let sizes = (0..n).map(|_| get_u64(&mut r).map(|s| s as usize)).collect::<Result<Vec<_>, _>>()?;
    let net = get_params(&mut r, &sizes)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let adam = match flag[0] {
        0 => None,
        1 => {
            let learning_rate = get_f64(&mut r)?;
            let decay_rate = get_f64(&mut r)?;
            let decay_steps = get_u64(&mut r)?;
            let beta1 = get_f64(&mut r)?;
            let beta2 = get_f64(&mut r)?;
            let epsilon = get_f64(&mut r)?;
            let step = get_u64(&mut r)?;
            Some(AdamState {
                config: AdamConfig {
                    learning_rate,
                    decay_rate,
                    decay_steps,
                    beta1,
                    beta2,
                    epsilon,
                },
                first_moment: get_params(&mut r, &sizes)?,
                second_moment: get_params(&mut r, &sizes)?,
                step,
            })
        }
        f => return Err(NnError::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    Ok((net, adam))
}
