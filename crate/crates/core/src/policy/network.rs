//! Separate policy and value MLPs with tanh hidden layers, stored as one
//! flat parameter vector with a named tensor layout.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes shared by the policy and value networks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub action_count: usize,
}

impl Architecture {
    pub fn new(obs_dim: usize, hidden: Vec<usize>, action_count: usize) -> Self {
        Self { obs_dim, hidden, action_count }
    }

    fn net_sizes(&self, out: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.obs_dim);
        sizes.extend(&self.hidden);
        sizes.push(out);
        sizes
    }

    /// Named tensors in storage order: policy layers, then value layers.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        let mut offset = 0;
        for (net, out) in [("policy", self.action_count), ("value", 1)] {
            let sizes = self.net_sizes(out);
            for (l, w) in sizes.windows(2).enumerate() {
                let (fan_in, fan_out) = (w[0], w[1]);
                specs.push(TensorSpec {
                    name: format!("{net}.{l}.weight"),
                    shape: vec![fan_out, fan_in],
                    offset,
                });
                offset += fan_in * fan_out;
                specs.push(TensorSpec { name: format!("{net}.{l}.bias"), shape: vec![fan_out], offset });
                offset += fan_out;
            }
        }
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(TensorSpec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.action_count == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Shape(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Policy,
    Value,
}

/// Flat storage for one actor-critic's weights (or a gradient of them).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    arch: Architecture,
    data: Vec<f64>,
    policy_layers: Vec<Layer>,
    value_layers: Vec<Layer>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[k]` the output of layer `k - 1`.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl ParameterSet {
    pub fn zeros(arch: Architecture) -> Self {
        let layout = arch.layout();
        let n = layout.iter().map(TensorSpec::len).sum();
        let layers_of = |prefix: &str| -> Vec<Layer> {
            layout
                .chunks(2)
                .filter(|c| c[0].name.starts_with(prefix))
                .map(|c| Layer {
                    w: c[0].offset,
                    b: c[1].offset,
                    fan_in: c[0].shape[1],
                    fan_out: c[0].shape[0],
                })
                .collect()
        };
        let policy_layers = layers_of("policy.");
        let value_layers = layers_of("value.");
        Self { arch, data: vec![0.0; n], policy_layers, value_layers }
    }

    /// Orthogonal initialisation: gain sqrt(2) on hidden layers, 0.01 on the
    /// policy output and 1.0 on the value output; zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let n_hidden = p.arch.hidden.len();
        for head in [Head::Policy, Head::Value] {
            let layers = p.layers(head).to_vec();
            for (l, layer) in layers.iter().enumerate() {
                let gain = if l < n_hidden {
                    std::f64::consts::SQRT_2
                } else if head == Head::Policy {
                    0.01
                } else {
                    1.0
                };
                let m = orthogonal(layer.fan_out, layer.fan_in, rng);
                for (dst, v) in p.data[layer.w..layer.w + m.len()].iter_mut().zip(m) {
                    *dst = gain * v;
                }
            }
        }
        p
    }

    pub fn from_flat(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch);
        if data.len() != p.data.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self { data: vec![0.0; self.data.len()], ..self.clone() }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.arch == other.arch && self.data.len() == other.data.len()
    }

    /// Name of the tensor holding flat index `idx`.
    pub fn tensor_name(&self, idx: usize) -> String {
        self.arch
            .layout()
            .into_iter()
            .find(|t| idx >= t.offset && idx < t.offset + t.len())
            .map(|t| format!("{}[{}]", t.name, idx - t.offset))
            .unwrap_or_else(|| format!("#{idx}"))
    }

    /// Fails with the offending tensor's name on the first non-finite entry.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!(
                "non-finite {what} at {}",
                self.tensor_name(i)
            ))),
            None => Ok(()),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    fn layers(&self, head: Head) -> &[Layer] {
        match head {
            Head::Policy => &self.policy_layers,
            Head::Value => &self.value_layers,
        }
    }

    fn check_input(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.arch.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {} entries, network expects {}",
                obs.len(),
                self.arch.obs_dim
            )));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite observation".into()));
        }
        Ok(())
    }

    /// Raw network output with cached activations. Input is not validated.
    pub fn forward_cached(&self, head: Head, obs: &[f64]) -> ForwardCache {
        let layers = self.layers(head);
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(obs.to_vec());
        // observations are mostly zeros; skipping them in the first layer is exact
        let active = nonzero(obs);
        for (l, layer) in layers.iter().enumerate() {
            let x = acts.last().expect("input pushed above");
            let mut z = self.data[layer.b..layer.b + layer.fan_out].to_vec();
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &self.data[layer.w + j * layer.fan_in..layer.w + (j + 1) * layer.fan_in];
                *zj += match (&active, l) {
                    (Some(idx), 0) => idx.iter().map(|&i| row[i] * x[i]).sum(),
                    _ => dot(row, x),
                };
            }
            if l + 1 < layers.len() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        ForwardCache { acts }
    }

    /// Accumulates `d output` back through the network into `grad`.
    pub fn backward(&self, head: Head, cache: &ForwardCache, d_out: &[f64], grad: &mut ParameterSet) {
        let layers = self.layers(head);
        let mut delta = d_out.to_vec();
        for l in (0..layers.len()).rev() {
            let layer = layers[l];
            if l + 1 < layers.len() {
                for (d, a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &cache.acts[l];
            let active = if l == 0 { nonzero(input) } else { None };
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                grad.data[layer.b + j] += dj;
                let row = &mut grad.data[layer.w + j * layer.fan_in..layer.w + (j + 1) * layer.fan_in];
                match &active {
                    Some(idx) => idx.iter().for_each(|&i| row[i] += dj * input[i]),
                    None => row.iter_mut().zip(input).for_each(|(g, x)| *g += dj * x),
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.fan_in];
                for (j, &dj) in delta.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &self.data[layer.w + j * layer.fan_in..layer.w + (j + 1) * layer.fan_in];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += dj * w;
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn logits(&self, obs: &[f64]) -> Vec<f64> {
        self.forward_cached(Head::Policy, obs).acts.pop().unwrap_or_default()
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.forward_cached(Head::Value, obs).output()[0]
    }
}

/// Indices of the non-zero entries when they are at most half of `x`.
fn nonzero(x: &[f64]) -> Option<Vec<usize>> {
    let idx: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    (2 * idx.len() <= x.len()).then_some(idx)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-softmax of `logits`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Action distribution of the policy network at `observation`.
pub fn policy_forward(params: &ParameterSet, observation: &[f64]) -> Result<Vec<f64>> {
    params.check_input(observation)?;
    let probs = softmax(&params.logits(observation));
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite action probabilities".into()));
    }
    Ok(probs)
}

/// State-value estimate at `observation`.
pub fn value_forward(params: &ParameterSet, observation: &[f64]) -> Result<f64> {
    params.check_input(observation)?;
    let v = params.value(observation);
    if !v.is_finite() {
        return Err(Error::Numeric("non-finite value estimate".into()));
    }
    Ok(v)
}

/// Row-major `rows x cols` matrix with orthonormal rows (or columns, when
/// `rows > cols`), via modified Gram-Schmidt on a Gaussian draw.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (r, c) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut m: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..r {
        for k in 0..i {
            let proj = dot(&m[i], &m[k]);
            let (head, tail) = m.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                *x -= proj * y;
            }
        }
        let norm = dot(&m[i], &m[i]).sqrt().max(1e-12);
        m[i].iter_mut().for_each(|x| *x /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..r {
        for j in 0..c {
            if rows <= cols {
                out[i * cols + j] = m[i][j];
            } else {
                out[j * cols + i] = m[i][j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture::new(5, vec![8, 8], 4)
    }

    #[test]
    fn layout_is_contiguous() {
        let a = arch();
        let layout = a.layout();
        let mut expected = 0;
        for t in &layout {
            assert_eq!(t.offset, expected);
            expected += t.len();
        }
        assert_eq!(expected, a.parameter_count());
        assert_eq!(layout[0].name, "policy.0.weight");
        assert_eq!(layout[0].shape, vec![8, 5]);
        assert_eq!(layout.last().unwrap().name, "value.2.bias");
    }

    #[test]
    fn zero_network_is_uniform_and_zero_valued() {
        let p = ParameterSet::zeros(arch());
        let probs = policy_forward(&p, &[0.3, -1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        assert_eq!(value_forward(&p, &[1.0; 5]).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = ParameterSet::zeros(arch());
        assert!(matches!(policy_forward(&p, &[1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            value_forward(&p, &[f64::NAN, 0.0, 0.0, 0.0, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let l = [0.5, -1.0, 3.0];
        let shifted: Vec<f64> = l.iter().map(|x| x + 17.0).collect();
        for (a, b) in softmax(&l).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn random_networks_emit_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let mut p = ParameterSet::zeros(Architecture::new(3, vec![4], 3));
            for v in p.as_mut_slice() {
                *v = rng.gen_range(-20.0..20.0);
            }
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let probs = policy_forward(&p, &obs).unwrap();
            assert!(probs.iter().all(|&q| q >= 0.0));
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn value_is_deterministic_and_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ParameterSet::init(arch(), &mut rng);
        let obs = [0.1, 0.2, -0.3, 0.4, 0.5];
        let v = value_forward(&p, &obs).unwrap();
        assert_eq!(v, value_forward(&p, &obs).unwrap());
        for i in (0..p.len()).step_by(7) {
            let mut q = p.clone();
            q.as_mut_slice()[i] += 1e-7;
            assert!((value_forward(&q, &obs).unwrap() - v).abs() < 1e-5);
        }
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(4, 9), (9, 4), (6, 6)] {
            let m = orthogonal(r, c, &mut rng);
            let (n, len, stride, step) = if r <= c { (r, c, c, 1) } else { (c, r, 1, c) };
            for i in 0..n {
                for k in 0..n {
                    let d: f64 = (0..len)
                        .map(|j| m[i * stride + j * step] * m[k * stride + j * step])
                        .sum();
                    let want = if i == k { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-10, "{r}x{c} ({i},{k}) = {d}");
                }
            }
        }
    }
}
