//! Weight-tied feed-forward network over absorbing-state inputs.
//!
//! Input width `N·(K+1)`, tanh hidden layers, output width `N·K` read as
//! one block of logits per variable. Predictions for observed variables are
//! produced but ignored by the loss and by inference.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    check_target, encode_into, log_sum_exp, softmax_into, validate_batch, CategoricalPrediction, ConditionalModel,
    ConditionalQuery, Instance, TrainableModel, WeightedExample,
};
use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Rows per forward pass when evaluating many conditionals.
const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_vars: usize,
    pub alphabet_size: usize,
    pub hidden_sizes: Vec<usize>,
}

impl NetworkConfig {
    pub fn new(spec: &LatticeSpec, hidden_sizes: Vec<usize>) -> Result<Self> {
        let cfg = Self {
            n_vars: spec.n_vars(),
            alphabet_size: spec.alphabet_size(),
            hidden_sizes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        LatticeSpec::new(self.n_vars, self.alphabet_size)?;
        if self.hidden_sizes.is_empty() {
            return Err(MacError::Validation("network needs at least one hidden layer".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(MacError::Validation("hidden layer sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> LatticeSpec {
        LatticeSpec::new(self.n_vars, self.alphabet_size).expect("validated config")
    }

    pub fn input_width(&self) -> usize {
        self.n_vars * (self.alphabet_size + 1)
    }

    pub fn output_width(&self) -> usize {
        self.n_vars * self.alphabet_size
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden_sizes);
        widths.push(self.output_width());
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// All weights and biases in one flat buffer: per layer, a row-major
/// `fan_in × fan_out` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    shapes: Vec<(usize, usize)>,
    flat: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let shapes = config.layer_shapes();
        let len = shapes.iter().map(|(i, o)| i * o + o).sum();
        Self {
            shapes,
            flat: vec![0.0; len],
        }
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn offsets(&self, layer: usize) -> (usize, usize) {
        let start: usize = self.shapes[..layer].iter().map(|(i, o)| i * o + o).sum();
        let (fan_in, fan_out) = self.shapes[layer];
        (start, start + fan_in * fan_out)
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (w, b) = self.offsets(layer);
        ArrayView2::from_shape(self.shapes[layer], &self.flat[w..b]).expect("layer shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.offsets(layer);
        ArrayView1::from(&self.flat[b..b + self.shapes[layer].1])
    }

    fn layer_mut<'a>(
        flat: &'a mut [f64],
        shapes: &[(usize, usize)],
        layer: usize,
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let start: usize = shapes[..layer].iter().map(|(i, o)| i * o + o).sum();
        let (fan_in, fan_out) = shapes[layer];
        let (w, rest) = flat[start..start + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        (
            ArrayViewMut2::from_shape((fan_in, fan_out), w).expect("layer shape"),
            ArrayViewMut1::from(rest),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|v| v.is_finite())
    }
}

/// LeCun-normal initialization: hidden weights `N(0, 1/fan_in)`, the output
/// layer and every bias zero, so initial predictions are uniform.
pub fn init_network<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<NetworkParams> {
    config.validate()?;
    let mut params = NetworkParams::zeros(config);
    let shapes = params.shapes.clone();
    for layer in 0..shapes.len() - 1 {
        let (mut w, _) = NetworkParams::layer_mut(&mut params.flat, &shapes, layer);
        let scale = 1.0 / (shapes[layer].0 as f64).sqrt();
        w.iter_mut().for_each(|v| {
            let z: f64 = StandardNormal.sample(rng);
            *v = scale * z;
        });
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMlp {
    config: NetworkConfig,
    params: NetworkParams,
    seed: u64,
    step: u64,
}

struct Forward {
    /// Input followed by every hidden activation.
    activations: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl MaskedMlp {
    pub fn new(config: NetworkConfig, params: NetworkParams) -> Result<Self> {
        config.validate()?;
        if params.shapes != config.layer_shapes() {
            return Err(MacError::Validation("parameter shapes do not match the config".into()));
        }
        Ok(Self {
            config,
            params,
            seed: 0,
            step: 0,
        })
    }

    /// Initializes with [`init_network`] from a ChaCha8 stream keyed by `seed`.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = crate::rng::seeded(seed);
        let params = init_network(&config, &mut rng)?;
        let mut m = Self::new(config, params)?;
        m.seed = seed;
        Ok(m)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn network_params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    fn encode_batch<'a>(&self, rows: impl ExactSizeIterator<Item = (&'a Instance, Mask)>) -> Array2<f64> {
        let spec = self.config.spec();
        let mut input = Array2::zeros((rows.len(), self.config.input_width()));
        for (mut row, (x, e)) in input.outer_iter_mut().zip(rows) {
            encode_into(x, e, &spec, row.as_slice_mut().expect("standard layout"));
        }
        input
    }

    fn forward(&self, input: Array2<f64>) -> Forward {
        let n_layers = self.params.shapes.len();
        let mut activations = vec![input];
        for layer in 0..n_layers {
            let prev = activations.last().expect("input present");
            let mut z = prev.dot(&self.params.weights(layer));
            z += &self.params.bias(layer);
            if layer + 1 == n_layers {
                return Forward { activations, logits: z };
            }
            z.mapv_inplace(f64::tanh);
            activations.push(z);
        }
        unreachable!("network has an output layer")
    }

    fn block<'a>(&self, logits: &'a [f64], var: usize) -> &'a [f64] {
        let k = self.config.alphabet_size;
        &logits[var * k..(var + 1) * k]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layers = (0..self.params.shapes.len())
            .map(|l| {
                let (fan_in, fan_out) = self.params.shapes[l];
                LayerRecord {
                    weight_shape: [fan_in, fan_out],
                    weights: self.params.weights(l).iter().copied().collect(),
                    bias_shape: [fan_out],
                    bias: self.params.bias(l).to_vec(),
                }
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            n_vars: self.config.n_vars,
            alphabet_size: self.config.alphabet_size,
            hidden_sizes: self.config.hidden_sizes.clone(),
            seed: self.seed,
            step: self.step,
            layers,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(MacError::Validation(format!(
                "unsupported checkpoint format_version {}",
                ckpt.format_version
            )));
        }
        let config = NetworkConfig {
            n_vars: ckpt.n_vars,
            alphabet_size: ckpt.alphabet_size,
            hidden_sizes: ckpt.hidden_sizes.clone(),
        };
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != ckpt.layers.len() {
            return Err(MacError::Validation(
                "checkpoint layer count does not match hidden_sizes".into(),
            ));
        }
        let mut flat = Vec::new();
        for (rec, &(fan_in, fan_out)) in ckpt.layers.iter().zip(&shapes) {
            if rec.weight_shape != [fan_in, fan_out]
                || rec.bias_shape != [fan_out]
                || rec.weights.len() != fan_in * fan_out
                || rec.bias.len() != fan_out
            {
                return Err(MacError::Validation("checkpoint layer shape mismatch".into()));
            }
            flat.extend_from_slice(&rec.weights);
            flat.extend_from_slice(&rec.bias);
        }
        let params = NetworkParams { shapes, flat };
        if !params.is_finite() {
            return Err(MacError::Validation("checkpoint contains non-finite weights".into()));
        }
        let mut m = Self::new(config, params)?;
        m.seed = ckpt.seed;
        m.step = ckpt.step;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ckpt)
    }
}

/// Versioned JSON checkpoint. Floats are written in shortest round-trip
/// decimal form, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub n_vars: usize,
    pub alphabet_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
    pub step: u64,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub weight_shape: [usize; 2],
    pub weights: Vec<f64>,
    pub bias_shape: [usize; 1],
    pub bias: Vec<f64>,
}

impl ConditionalModel for MaskedMlp {
    fn spec(&self) -> LatticeSpec {
        self.config.spec()
    }

    fn predict_all(&self, x: &Instance, e: Mask) -> Result<CategoricalPrediction> {
        x.validate(&self.spec())?;
        let fwd = self.forward(self.encode_batch(std::iter::once((x, e))));
        let logits = fwd.logits.row(0);
        let logits = logits.as_slice().expect("standard layout");
        let k = self.config.alphabet_size;
        let entries = e
            .complement(self.config.n_vars)
            .iter()
            .map(|i| {
                let mut probs = vec![0.0; k];
                softmax_into(self.block(logits, i), &mut probs);
                (i, probs)
            })
            .collect();
        Ok(CategoricalPrediction::new(entries))
    }

    fn log_conditional(&self, x: &Instance, j: usize, e: Mask) -> Result<f64> {
        Ok(self.log_conditional_batch(&[ConditionalQuery { x, target: j, given: e }])?[0])
    }

    fn log_conditional_batch(&self, queries: &[ConditionalQuery<'_>]) -> Result<Vec<f64>> {
        let spec = self.spec();
        for q in queries {
            check_target(q.target, q.given, &spec)?;
            q.x.validate(&spec)?;
        }
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(EVAL_CHUNK) {
            let fwd = self.forward(self.encode_batch(chunk.iter().map(|q| (q.x, q.given))));
            for (q, row) in chunk.iter().zip(fwd.logits.outer_iter()) {
                let block = self.block(row.as_slice().expect("standard layout"), q.target);
                out.push(block[q.x.get(q.target)] - log_sum_exp(block));
            }
        }
        Ok(out)
    }
}

impl TrainableModel for MaskedMlp {
    fn params(&self) -> &[f64] {
        &self.params.flat
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.flat
    }

    fn loss_and_grad(&self, batch: &[WeightedExample<'_>]) -> Result<(f64, Vec<f64>)> {
        let spec = self.spec();
        validate_batch(batch, &spec)?;
        let n = spec.n_vars();
        let k = spec.alphabet_size();
        let b = batch.len() as f64;

        let fwd = self.forward(self.encode_batch(batch.iter().map(|ex| (ex.x, ex.mask))));
        let mut dz = Array2::<f64>::zeros(fwd.logits.raw_dim());
        let mut loss = 0.0;
        let mut probs = vec![0.0; k];
        for ((ex, logits), mut grad_row) in batch.iter().zip(fwd.logits.outer_iter()).zip(dz.outer_iter_mut()) {
            let logits = logits.as_slice().expect("standard layout");
            let missing = ex.mask.complement(n);
            let coef = ex.weight / missing.cardinality() as f64;
            let mut ce = 0.0;
            for i in missing.iter() {
                let block = self.block(logits, i);
                softmax_into(block, &mut probs);
                let target = ex.x.get(i);
                ce += log_sum_exp(block) - block[target];
                let mut g = grad_row.slice_mut(s![i * k..(i + 1) * k]);
                for (s, gv) in g.iter_mut().enumerate() {
                    let indicator = if s == target { 1.0 } else { 0.0 };
                    *gv = coef * (probs[s] - indicator) / b;
                }
            }
            loss += coef * ce;
        }
        loss /= b;

        let mut grad = vec![0.0; self.params.flat.len()];
        let shapes = &self.params.shapes;
        for layer in (0..shapes.len()).rev() {
            let prev = &fwd.activations[layer];
            let (mut gw, mut gb) = NetworkParams::layer_mut(&mut grad, shapes, layer);
            gw.assign(&prev.t().dot(&dz));
            gb.assign(&dz.sum_axis(Axis(0)));
            if layer > 0 {
                let mut da = dz.dot(&self.params.weights(layer).t());
                // tanh'(z) = 1 - tanh(z)^2, and `prev` holds tanh(z)
                da.zip_mut_with(prev, |d, &a| *d *= 1.0 - a * a);
                dz = da;
            }
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    use super::*;
    use crate::lattice::make_mask;
    use crate::rng::seeded;

    fn random_model(spec: &LatticeSpec, hidden: Vec<usize>, seed: u64) -> MaskedMlp {
        let cfg = NetworkConfig::new(spec, hidden).unwrap();
        let mut m = MaskedMlp::init(cfg, seed).unwrap();
        let mut rng = seeded(seed ^ 0xdead);
        m.params_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
        m
    }

    #[test]
    fn zero_output_layer_predicts_uniform() {
        let spec = LatticeSpec::new(3, 4).unwrap();
        let m = MaskedMlp::init(NetworkConfig::new(&spec, vec![8]).unwrap(), 1).unwrap();
        let x = Instance::new(vec![0, 3, 2], &spec).unwrap();
        let pred = m.predict_all(&x, Mask::singleton(1)).unwrap();
        assert_eq!(pred.len(), 2);
        for (_, p) in pred.iter() {
            for &v in p {
                assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
            }
        }
        assert!(m.predict_all(&x, spec.full_mask()).unwrap().is_empty());
    }

    #[test]
    fn init_is_deterministic_and_validated() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let cfg = NetworkConfig::new(&spec, vec![5, 4]).unwrap();
        assert_eq!(
            MaskedMlp::init(cfg.clone(), 9).unwrap(),
            MaskedMlp::init(cfg.clone(), 9).unwrap()
        );
        assert_ne!(
            MaskedMlp::init(cfg.clone(), 9).unwrap(),
            MaskedMlp::init(cfg, 10).unwrap()
        );
        assert!(NetworkConfig::new(&spec, vec![]).is_err());
        assert!(NetworkConfig::new(&spec, vec![3, 0]).is_err());
    }

    #[test]
    fn predictions_are_normalized() {
        let spec = LatticeSpec::new(4, 3).unwrap();
        let m = random_model(&spec, vec![6], 3);
        let x = Instance::new(vec![2, 0, 1, 1], &spec).unwrap();
        for bits in 0..16 {
            let e = Mask::from_bits(bits);
            for (i, p) in m.predict_all(&x, e).unwrap().iter() {
                assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(m.log_conditional(&x, i, e).unwrap(), p[x.get(i)].ln(), epsilon = 1e-12);
            }
        }
        assert!(m.log_conditional(&x, 0, Mask::singleton(0)).is_err());
    }

    #[test]
    fn loss_arithmetic_example() {
        // N=3, e={0}; true symbols predicted with 0.5 and 0.25
        let spec = LatticeSpec::new(3, 4).unwrap();
        let cfg = NetworkConfig::new(&spec, vec![2]).unwrap();
        let mut params = NetworkParams::zeros(&cfg);
        let last = params.shapes().len() - 1;
        let shapes = params.shapes().to_vec();
        {
            let (_, mut bias) = NetworkParams::layer_mut(params.as_mut_slice(), &shapes, last);
            // variable 1 block: probs (0.5, 1/6, 1/6, 1/6); variable 2 block: uniform 0.25
            bias[4] = 3f64.ln();
        }
        let m = MaskedMlp::new(cfg, params).unwrap();
        let x = Instance::new(vec![0, 0, 0], &spec).unwrap();
        let e = make_mask(&[0], &spec).unwrap();
        let (loss, _) = m
            .loss_and_grad(&[WeightedExample {
                x: &x,
                mask: e,
                weight: 1.0,
            }])
            .unwrap();
        assert_abs_diff_eq!(loss, -0.5 * (0.5f64.ln() + 0.25f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 1.039720770839918, epsilon = 1e-9);
    }

    #[test]
    fn full_mask_rejected() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let m = random_model(&spec, vec![3], 1);
        let x = Instance::new(vec![0, 1, 0], &spec).unwrap();
        let res = m.loss_and_grad(&[WeightedExample {
            x: &x,
            mask: spec.full_mask(),
            weight: 1.0,
        }]);
        assert!(matches!(res, Err(MacError::InvalidArgument(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let spec = LatticeSpec::new(4, 3).unwrap();
        let mut m = random_model(&spec, vec![7, 5], 21);
        m.set_step(123);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        m.save(&path).unwrap();
        let loaded = MaskedMlp::load(&path).unwrap();
        assert_eq!(loaded.step(), 123);
        assert_eq!(loaded.seed(), 21);
        for (a, b) in m.params().iter().zip(loaded.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // re-serialization is byte-identical
        assert_eq!(
            serde_json::to_string(&m.to_checkpoint()).unwrap(),
            serde_json::to_string(&loaded.to_checkpoint()).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_bad_documents() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let m = random_model(&spec, vec![3], 2);
        let mut ckpt = m.to_checkpoint();
        ckpt.format_version = 99;
        assert!(MaskedMlp::from_checkpoint(&ckpt).is_err());
        let mut ckpt = m.to_checkpoint();
        ckpt.layers[0].weights.pop();
        assert!(MaskedMlp::from_checkpoint(&ckpt).is_err());
        let mut value = serde_json::to_value(m.to_checkpoint()).unwrap();
        value["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<Checkpoint>(value).is_err());
    }
}
