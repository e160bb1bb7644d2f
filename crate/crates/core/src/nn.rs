//! Feed-forward neural policy with hand-written backpropagation.
//!
//! The network is a stack of dense hidden layers followed by one output layer
//! (softmax logits) or two parallel output layers (Gaussian mean and
//! log-stddev). [`Mlp::grad_log_prob`] returns the exact gradient of
//! `log pi(a|s)` with respect to every parameter, flattened in the order of
//! [`Mlp::params`]: each hidden layer's weights (row-major, `out x in`) then
//! bias, followed by the output layers in the same form.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::Action;
use crate::error::{Error, Result};

/// Lower bound applied to every Gaussian standard deviation.
pub const MIN_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    fn xavier<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| {
                let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
                match self.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                }
            })
            .collect()
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Writes this layer's parameter gradient for upstream pre-activation
    /// error `delta` and input `x` into `out`, and returns the error with
    /// respect to `x`.
    fn backward(&self, x: &[f64], delta: &[f64], out: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = out.split_at_mut(self.weights.len());
        let mut dx = vec![0.0; self.inputs];
        for (o, d) in delta.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] = d * x[i];
                dx[i] += row[i] * d;
            }
            gb[o] = *d;
        }
        dx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Categorical policy over `actions` choices.
    Softmax { actions: usize },
    /// Diagonal Gaussian over `dims` continuous action dimensions.
    Gaussian { dims: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetShape {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub head: HeadKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    Discrete(Vec<f64>),
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl ActionDistribution {
    /// Probability (discrete) or joint density (Gaussian) of `action`.
    pub fn prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (ActionDistribution::Discrete(p), Action::Discrete(a)) => p
                .get(*a)
                .copied()
                .ok_or_else(|| Error::InvalidAction(format!("index {a} for {} actions", p.len()))),
            (ActionDistribution::Gaussian { mean, std }, Action::Continuous(a)) if a.len() == mean.len() => {
                Ok(a.iter()
                    .zip(mean.iter().zip(std))
                    .map(|(x, (m, s))| {
                        let z = (x - m) / s;
                        (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
                    })
                    .product())
            }
            _ => Err(Error::InvalidAction("action does not match the distribution".into())),
        }
    }

    /// Draws an action and returns it with its probability or density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Action, f64) {
        match self {
            ActionDistribution::Discrete(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                (Action::Discrete(pick), p[pick])
            }
            ActionDistribution::Gaussian { mean, std } => {
                let a: Vec<f64> = mean
                    .iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + s * z
                    })
                    .collect();
                let action = Action::Continuous(a);
                let density = self.prob(&action).expect("shapes agree");
                (action, density)
            }
        }
    }

    /// Most likely action: argmax probability or the mean.
    pub fn mode(&self) -> Action {
        match self {
            ActionDistribution::Discrete(p) => {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            ActionDistribution::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Step for the *ascent* direction `grad`, returning the parameter increment.
    fn increment(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(g, (m, v))| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                lr * (*m / b1t) / ((*v / b2t).sqrt() + self.eps)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    hidden: Vec<Dense>,
    /// One layer for softmax logits; mean then log-stddev for Gaussian.
    heads: Vec<Dense>,
    kind: HeadKind,
    optimizer: Adam,
}

struct Trace {
    /// Input to each hidden layer followed by the last hidden output.
    acts: Vec<Vec<f64>>,
    outs: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(shape: &NetShape, rng: &mut R) -> Result<Self> {
        if shape.inputs == 0 || shape.hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let mut hidden = Vec::with_capacity(shape.hidden.len());
        let mut width = shape.inputs;
        for &h in &shape.hidden {
            hidden.push(Dense::xavier(width, h, Activation::Tanh, rng));
            width = h;
        }
        let heads = match shape.head {
            HeadKind::Softmax { actions } if actions >= 2 => {
                vec![Dense::xavier(width, actions, Activation::Identity, rng)]
            }
            HeadKind::Gaussian { dims } if dims >= 1 => vec![
                Dense::xavier(width, dims, Activation::Identity, rng),
                Dense::xavier(width, dims, Activation::Identity, rng),
            ],
            _ => return Err(Error::InvalidConfig(format!("unsupported head {:?}", shape.head))),
        };
        Ok(Self::from_layers(hidden, heads, shape.head))
    }

    fn from_layers(hidden: Vec<Dense>, heads: Vec<Dense>, kind: HeadKind) -> Self {
        let n = hidden.iter().chain(&heads).map(Dense::n_params).sum();
        Mlp {
            hidden,
            heads,
            kind,
            optimizer: Adam::new(n),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.heads[0]).inputs
    }

    pub fn head(&self) -> HeadKind {
        self.kind
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            inputs: self.input_dim(),
            hidden: self.hidden.iter().map(|l| l.outputs).collect(),
            head: self.kind,
        }
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::n_params).sum()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain(&self.heads)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain(self.heads.iter_mut())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in self.layers_mut() {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// Mutable access to the output layers, e.g. to zero the logits layer.
    pub fn heads_mut(&mut self) -> &mut [Dense] {
        &mut self.heads
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "state has {} entries, network expects {}",
                state.len(),
                self.input_dim()
            )));
        }
        match state.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteState(i)),
            None => Ok(()),
        }
    }

    fn trace(&self, state: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(state.to_vec());
        for l in &self.hidden {
            let next = l.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        let h = acts.last().expect("non-empty");
        let outs = self.heads.iter().map(|l| l.forward(h)).collect();
        Trace { acts, outs }
    }

    fn distribution(&self, outs: &[Vec<f64>]) -> ActionDistribution {
        match self.kind {
            HeadKind::Softmax { .. } => ActionDistribution::Discrete(softmax(&outs[0])),
            HeadKind::Gaussian { .. } => ActionDistribution::Gaussian {
                mean: outs[0].clone(),
                std: outs[1].iter().map(|ls| ls.exp().max(MIN_STD)).collect(),
            },
        }
    }

    pub fn forward(&self, state: &[f64]) -> Result<ActionDistribution> {
        self.check_state(state)?;
        Ok(self.distribution(&self.trace(state).outs))
    }

    /// `log pi(action | state)` and its gradient.
    pub fn log_prob_and_grad(&self, state: &[f64], action: &Action) -> Result<(f64, Vec<f64>)> {
        self.check_state(state)?;
        let trace = self.trace(state);
        let dist = self.distribution(&trace.outs);
        let log_p = dist.prob(action)?.ln();

        let head_deltas: Vec<Vec<f64>> = match (&dist, action) {
            (ActionDistribution::Discrete(p), Action::Discrete(a)) => {
                let mut d: Vec<f64> = p.iter().map(|v| -v).collect();
                d[*a] += 1.0;
                vec![d]
            }
            (ActionDistribution::Gaussian { mean, std }, Action::Continuous(a)) => {
                let mut d_mean = Vec::with_capacity(mean.len());
                let mut d_log_std = Vec::with_capacity(mean.len());
                for j in 0..mean.len() {
                    let var = std[j] * std[j];
                    let diff = a[j] - mean[j];
                    d_mean.push(diff / var);
                    let floored = trace.outs[1][j].exp() < MIN_STD;
                    d_log_std.push(if floored { 0.0 } else { diff * diff / var - 1.0 });
                }
                vec![d_mean, d_log_std]
            }
            _ => unreachable!("prob() already matched the action kind"),
        };

        let mut grad = vec![0.0; self.num_params()];
        let hidden_params: usize = self.hidden.iter().map(Dense::n_params).sum();
        let h_last = trace.acts.last().expect("non-empty");
        let mut dh = vec![0.0; h_last.len()];
        let mut offset = hidden_params;
        for (layer, delta) in self.heads.iter().zip(&head_deltas) {
            let n = layer.n_params();
            let dx = layer.backward(h_last, delta, &mut grad[offset..offset + n]);
            dh.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
            offset += n;
        }

        let mut offset = hidden_params;
        for (i, layer) in self.hidden.iter().enumerate().rev() {
            let out = &trace.acts[i + 1];
            let delta: Vec<f64> = match layer.activation {
                Activation::Tanh => dh.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect(),
                Activation::Identity => dh.clone(),
            };
            let n = layer.n_params();
            offset -= n;
            dh = layer.backward(&trace.acts[i], &delta, &mut grad[offset..offset + n]);
        }
        Ok((log_p, grad))
    }

    pub fn grad_log_prob(&self, state: &[f64], action: &Action) -> Result<Vec<f64>> {
        self.log_prob_and_grad(state, action).map(|(_, g)| g)
    }

    /// `sum_t weight_t * grad log pi(a_t | s_t)`, accumulated in step order.
    pub fn weighted_score_sum<'a, I>(&self, steps: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = (&'a [f64], &'a Action, f64)>,
    {
        let mut acc = vec![0.0; self.num_params()];
        for (state, action, weight) in steps {
            let g = self.grad_log_prob(state, action)?;
            acc.iter_mut().zip(&g).for_each(|(a, gi)| *a += weight * gi);
        }
        Ok(acc)
    }

    /// One Adam step along the ascent direction `grad`.
    pub fn ascend(&mut self, grad: &[f64], learning_rate: f64) -> Result<()> {
        if grad.len() != self.num_params() {
            return Err(Error::InvalidInput("gradient length mismatch".into()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("non-finite gradient".into()));
        }
        let inc = self.optimizer.increment(grad, learning_rate);
        let mut k = 0;
        for l in self.layers_mut() {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p += inc[k];
                k += 1;
            }
        }
        Ok(())
    }

    /// Accumulates the weighted score terms of one episode and applies one
    /// ascent step. Returns the accumulated gradient.
    pub fn accumulate_and_step<'a, I>(&mut self, steps: I, learning_rate: f64) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = (&'a [f64], &'a Action, f64)>,
    {
        let g = self.weighted_score_sum(steps)?;
        self.ascend(&g, learning_rate)?;
        Ok(g)
    }

    /// Plain-text checkpoint. Optimizer state is not included.
    ///
    /// ```text
    /// sympol-mlp 1
    /// head softmax 2            (or: head gaussian <dims>)
    /// layer <in> <out> <tanh|identity>
    /// w <out*in values, row-major>
    /// b <out values>
    /// ...                       (hidden layers, then output layers)
    /// ```
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("sympol-mlp 1\n");
        match self.kind {
            HeadKind::Softmax { actions } => s.push_str(&format!("head softmax {actions}\n")),
            HeadKind::Gaussian { dims } => s.push_str(&format!("head gaussian {dims}\n")),
        }
        for l in self.layers() {
            s.push_str(&format!("layer {} {} {}\n", l.inputs, l.outputs, l.activation.name()));
            s.push('w');
            for v in &l.weights {
                s.push_str(&format!(" {v}"));
            }
            s.push_str("\nb");
            for v in &l.bias {
                s.push_str(&format!(" {v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("sympol-mlp 1") {
            return Err(bad("missing `sympol-mlp 1` header"));
        }
        let head_line = lines.next().ok_or_else(|| bad("missing head line"))?;
        let head: Vec<&str> = head_line.split_whitespace().collect();
        let (kind, n_heads) = match head.as_slice() {
            ["head", "softmax", n] => (
                HeadKind::Softmax {
                    actions: n.parse().map_err(|_| bad("bad action count"))?,
                },
                1,
            ),
            ["head", "gaussian", n] => (
                HeadKind::Gaussian {
                    dims: n.parse().map_err(|_| bad("bad dimension count"))?,
                },
                2,
            ),
            _ => return Err(bad("malformed head line")),
        };
        let mut layers = Vec::new();
        while let Some(line) = lines.next() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (inputs, outputs, act) = match parts.as_slice() {
                ["layer", i, o, a] => (
                    i.parse::<usize>().map_err(|_| bad("bad layer width"))?,
                    o.parse::<usize>().map_err(|_| bad("bad layer width"))?,
                    Activation::from_name(a).ok_or_else(|| bad("unknown activation"))?,
                ),
                _ => return Err(bad("expected `layer` line")),
            };
            let mut values = |tag: &str, n: usize| -> Result<Vec<f64>> {
                let line = lines.next().ok_or_else(|| bad("truncated layer"))?;
                let mut it = line.split_whitespace();
                if it.next() != Some(tag) {
                    return Err(bad(&format!("expected `{tag}` line")));
                }
                let v: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                    .collect::<Result<_>>()?;
                if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                    return Err(bad(&format!("`{tag}` needs {n} finite values")));
                }
                Ok(v)
            };
            let weights = values("w", inputs * outputs)?;
            let bias = values("b", outputs)?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
                activation: act,
            });
        }
        if layers.len() < n_heads {
            return Err(bad("not enough layers"));
        }
        let heads = layers.split_off(layers.len() - n_heads);
        let mut width = layers.first().map_or(heads[0].inputs, |l| l.inputs);
        for l in layers.iter().chain(&heads[..1]) {
            if l.inputs != width {
                return Err(bad("layer widths do not chain"));
            }
            width = l.outputs;
        }
        let expected_out = match kind {
            HeadKind::Softmax { actions } => actions,
            HeadKind::Gaussian { dims } => dims,
        };
        if heads.iter().any(|h| h.inputs != heads[0].inputs || h.outputs != expected_out) {
            return Err(bad("output layer shape does not match head"));
        }
        Ok(Self::from_layers(layers, heads, kind))
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(head: HeadKind, hidden: Vec<usize>, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::init(&NetShape { inputs: 4, hidden, head }, &mut rng).unwrap()
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut m = net(HeadKind::Softmax { actions: 3 }, vec![16], 0);
        m.heads_mut()[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let d = m.forward(&[0.1, -0.4, 2.0, 0.0]).unwrap();
        assert_eq!(d, ActionDistribution::Discrete(vec![1.0 / 3.0; 3]));
    }

    #[test]
    fn cartpole_shape_normalizes() {
        let m = net(HeadKind::Softmax { actions: 2 }, vec![128], 1);
        assert_eq!(m.num_params(), 4 * 128 + 128 + 128 * 2 + 2);
        match m.forward(&[0.01, 0.2, -0.03, 0.5]).unwrap() {
            ActionDistribution::Discrete(p) => {
                assert_eq!(p.len(), 2);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_states() {
        let m = net(HeadKind::Softmax { actions: 2 }, vec![8], 1);
        assert!(matches!(m.forward(&[0.0, f64::NAN, 0.0, 0.0]), Err(Error::NonFiniteState(1))));
        assert!(m.forward(&[0.0; 3]).is_err());
    }

    #[test]
    fn softmax_bias_gradient_at_uniform() {
        let mut m = net(HeadKind::Softmax { actions: 2 }, vec![8], 2);
        m.heads_mut()[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let g = m.grad_log_prob(&[0.3, 0.1, -0.2, 0.0], &Action::Discrete(0)).unwrap();
        let n = g.len();
        assert_eq!(&g[n - 2..], &[0.5, -0.5]);
    }

    #[test]
    fn gaussian_std_is_floored() {
        let mut m = net(HeadKind::Gaussian { dims: 2 }, vec![8], 3);
        let ls = &mut m.heads_mut()[1];
        ls.weights.iter_mut().for_each(|w| *w = 0.0);
        ls.bias = vec![-20.0, 0.0];
        match m.forward(&[0.0; 4]).unwrap() {
            ActionDistribution::Gaussian { std, .. } => assert_eq!(std, vec![MIN_STD, 1.0]),
            other => panic!("{other:?}"),
        }
    }

    fn max_rel_err(m: &Mlp, s: &[f64], a: &Action) -> f64 {
        let g = m.grad_log_prob(s, a).unwrap();
        let p0 = m.params();
        let h = 1e-5;
        let mut probe = m.clone();
        let mut worst: f64 = 0.0;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] = p0[i] + h;
            probe.set_params(&p).unwrap();
            let up = probe.forward(s).unwrap().prob(a).unwrap().ln();
            p[i] = p0[i] - h;
            probe.set_params(&p).unwrap();
            let dn = probe.forward(s).unwrap().prob(a).unwrap().ln();
            let fd = (up - dn) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for case in 0..4 {
            let sm = net(HeadKind::Softmax { actions: 3 }, vec![6, 5], case);
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(max_rel_err(&sm, &s, &Action::Discrete(case as usize % 3)) < 1e-4);
            let gm = net(HeadKind::Gaussian { dims: 2 }, vec![6], case);
            let a = Action::Continuous(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            assert!(max_rel_err(&gm, &s, &a) < 1e-4);
        }
    }

    #[test]
    fn first_layer_probe_matches_forward_difference() {
        let m = net(HeadKind::Softmax { actions: 2 }, vec![8], 4);
        let s = [0.2, -0.1, 0.05, 0.3];
        let a = Action::Discrete(1);
        let p = m.forward(&s).unwrap().prob(&a).unwrap();
        let g = m.grad_log_prob(&s, &a).unwrap();
        let eps = 1e-5;
        let mut params = m.params();
        params[0] += eps;
        let mut up = m.clone();
        up.set_params(&params).unwrap();
        params[0] -= 2.0 * eps;
        let mut dn = m.clone();
        dn.set_params(&params).unwrap();
        let fd = (up.forward(&s).unwrap().prob(&a).unwrap() - dn.forward(&s).unwrap().prob(&a).unwrap()) / (2.0 * eps);
        let analytic = p * g[0];
        assert!((fd - analytic).abs() / analytic.abs() < 1e-4, "{fd} vs {analytic}");
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let mut m = net(HeadKind::Softmax { actions: 2 }, vec![8], 5);
        let before = m.params();
        let s = [0.0, 0.1, 0.2, 0.3];
        let a = Action::Discrete(0);
        m.accumulate_and_step([(&s[..], &a, 0.0)], 3e-4).unwrap();
        assert_eq!(m.params(), before);
        assert_eq!(m.optimizer().steps(), 1);
    }

    #[test]
    fn ascent_increases_log_prob() {
        let mut m = net(HeadKind::Softmax { actions: 2 }, vec![8], 6);
        let s = [0.3, -0.2, 0.1, 0.0];
        let a = Action::Discrete(1);
        let before = m.forward(&s).unwrap().prob(&a).unwrap();
        for _ in 0..20 {
            m.accumulate_and_step([(&s[..], &a, 1.0)], 1e-2).unwrap();
        }
        assert!(m.forward(&s).unwrap().prob(&a).unwrap() > before);
    }

    #[test]
    fn expected_score_is_zero() {
        let m = net(HeadKind::Softmax { actions: 3 }, vec![8], 7);
        let s = [0.5, -0.5, 0.25, 0.1];
        let dist = m.forward(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let k = m.num_params() - 1;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let (a, _) = dist.sample(&mut rng);
            let g = m.grad_log_prob(&s, &a).unwrap()[k];
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{mean} vs se {se}");
    }

    #[test]
    fn checkpoint_round_trip() {
        for head in [HeadKind::Softmax { actions: 3 }, HeadKind::Gaussian { dims: 2 }] {
            let m = net(head, vec![5, 3], 11);
            let back = Mlp::from_checkpoint(&m.to_checkpoint()).unwrap();
            assert_eq!(back.params(), m.params());
            assert_eq!(back.shape(), m.shape());
        }
        assert!(Mlp::from_checkpoint("sympol-mlp 2\n").is_err());
        let text = net(HeadKind::Softmax { actions: 2 }, vec![3], 1).to_checkpoint();
        let truncated: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(Mlp::from_checkpoint(&truncated).is_err());
    }

    #[test]
    fn discrete_sampling_frequencies() {
        let d = ActionDistribution::Discrete(vec![0.2, 0.5, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = [0usize; 3];
        for _ in 0..30_000 {
            let (a, p) = d.sample(&mut rng);
            let Action::Discrete(i) = a else { unreachable!() };
            assert_eq!(p, [0.2, 0.5, 0.3][i]);
            c[i] += 1;
        }
        assert!((c[1] as f64 / 30_000.0 - 0.5).abs() < 0.01);
    }
}
