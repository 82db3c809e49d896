//! Two-hidden-layer MLP in Q16.16 fixed point.
//!
//! All arithmetic on the proven path goes through [`GuestVm`] so both
//! backends execute identical instruction streams. Rounding is documented
//! once and applied everywhere: products accumulate exactly in Q32.32 and
//! are rounded to Q16.16 half up (toward +infinity) in a single step.
//! ReLU hidden activations, raw scores at the output, argmax ties broken
//! toward the lowest index.

use crate::encode::{put_count, put_i32, put_u32, put_u64, ByteReader, CanonicalDecode, CanonicalEncode, DecodeError};
use crate::guest::{Fx, GuestError, GuestVm};

use super::{Row, WeightScheme};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    /// Row-major `[n_out][n_in]` weights, Q16.16.
    pub weights: Vec<Fx>,
    pub biases: Vec<Fx>,
}

/// Parameters of the `[d_in, h1, h2, d_out]` network plus the federation
/// round that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelParams {
    pub layer_dims: [u32; 4],
    pub layers: Vec<Layer>,
    pub round: u64,
}

/// splitmix64; the documented round-1 initializer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ModelParams {
    /// Shapes of the three weight matrices as (n_out, n_in).
    pub fn layer_shapes(dims: [u32; 4]) -> [(usize, usize); 3] {
        [
            (dims[1] as usize, dims[0] as usize),
            (dims[2] as usize, dims[1] as usize),
            (dims[3] as usize, dims[2] as usize),
        ]
    }

    /// Deterministic round-0 model: weights uniform in [-0.5, 0.5) from a
    /// splitmix64 stream, biases zero, round 0.
    pub fn init_from_seed(layer_dims: [u32; 4], seed: u64) -> Self {
        let mut state = seed;
        let layers = Self::layer_shapes(layer_dims)
            .iter()
            .map(|&(n_out, n_in)| Layer {
                weights: (0..n_out * n_in)
                    .map(|_| (splitmix64(&mut state) & 0xffff) as Fx - 0x8000)
                    .collect(),
                biases: vec![0; n_out],
            })
            .collect();
        Self {
            layer_dims,
            layers,
            round: 0,
        }
    }

    pub fn total_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn layer_forward(vm: &mut GuestVm, layer: &Layer, input: &[Fx], apply_relu: bool) -> Vec<Fx> {
        let n_in = input.len();
        let n_out = layer.biases.len();
        let mut out = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &layer.weights[o * n_in..(o + 1) * n_in];
            let mut acc = vm.dot_q32(row, input);
            acc = vm.acc_add(acc, (layer.biases[o] as i64) << 16);
            let z = vm.round_q32(acc);
            out.push(if apply_relu { vm.relu(z) } else { z });
        }
        out
    }

    /// Full forward pass; returns the intermediate activations needed for
    /// backprop: (z1 pre-relu, a1, z2 pre-relu, a2, scores).
    fn forward_trace(
        &self,
        vm: &mut GuestVm,
        x: &[Fx],
    ) -> (Vec<Fx>, Vec<Fx>, Vec<Fx>, Vec<Fx>, Vec<Fx>) {
        let z1 = Self::layer_forward(vm, &self.layers[0], x, false);
        let a1: Vec<Fx> = z1.iter().map(|&z| vm.relu(z)).collect();
        let z2 = Self::layer_forward(vm, &self.layers[1], &a1, false);
        let a2: Vec<Fx> = z2.iter().map(|&z| vm.relu(z)).collect();
        let scores = Self::layer_forward(vm, &self.layers[2], &a2, false);
        (z1, a1, z2, a2, scores)
    }

    /// Forward pass producing class scores.
    pub fn forward(&self, vm: &mut GuestVm, x: &[Fx]) -> Vec<Fx> {
        let a1 = Self::layer_forward(vm, &self.layers[0], x, true);
        let a2 = Self::layer_forward(vm, &self.layers[1], &a1, true);
        Self::layer_forward(vm, &self.layers[2], &a2, false)
    }

    /// One SGD step on a single row against the MSE-on-one-hot loss,
    /// updating parameters in place. Deltas are computed with the
    /// pre-update weights, then all layers are updated.
    pub fn sgd_step(&mut self, vm: &mut GuestVm, row: &Row, learning_rate: Fx) {
        let d_out = self.layer_dims[3] as usize;
        let (z1, a1, z2, a2, scores) = self.forward_trace(vm, &row.features);

        // output delta: score - one_hot(label)
        let mut d3 = Vec::with_capacity(d_out);
        for (k, &s) in scores.iter().enumerate() {
            let y = if k as u32 == row.label { crate::guest::FX_ONE } else { 0 };
            d3.push(vm.sub(s, y));
        }

        // hidden deltas through the transposed weights, gated by relu'
        let d2 = Self::backprop_delta(vm, &self.layers[2], &d3, &z2);
        let d1 = Self::backprop_delta(vm, &self.layers[1], &d2, &z1);

        Self::apply_update(vm, &mut self.layers[2], &d3, &a2, learning_rate);
        Self::apply_update(vm, &mut self.layers[1], &d2, &a1, learning_rate);
        Self::apply_update(vm, &mut self.layers[0], &d1, &row.features, learning_rate);
    }

    fn backprop_delta(vm: &mut GuestVm, layer: &Layer, delta_out: &[Fx], z: &[Fx]) -> Vec<Fx> {
        let n_out = layer.biases.len();
        let n_in = z.len();
        let mut delta_in = Vec::with_capacity(n_in);
        for j in 0..n_in {
            // relu' gate on the pre-activation
            let gate = vm.relu(z[j]) > 0;
            if !gate {
                delta_in.push(0);
                continue;
            }
            let mut acc: i64 = 0;
            for k in 0..n_out {
                let p = vm.mul_q32(layer.weights[k * n_in + j], delta_out[k]);
                acc = vm.acc_add(acc, p);
            }
            delta_in.push(vm.round_q32(acc));
        }
        delta_in
    }

    fn apply_update(
        vm: &mut GuestVm,
        layer: &mut Layer,
        delta: &[Fx],
        input: &[Fx],
        learning_rate: Fx,
    ) {
        let n_in = input.len();
        for (k, &d) in delta.iter().enumerate() {
            let step = vm.mul(learning_rate, d);
            for (j, &inp) in input.iter().enumerate() {
                let grad = vm.mul(step, inp);
                let w = &mut layer.weights[k * n_in + j];
                *w = vm.sub(*w, grad);
            }
            layer.biases[k] = vm.sub(layer.biases[k], step);
        }
    }

    /// Weighted elementwise mean of `models` under `weights`. Each output
    /// parameter is `round_q32(sum_i w_i * p_i)`: exact Q32.32 accumulation,
    /// one rounding at the end.
    pub fn aggregate(
        vm: &mut GuestVm,
        models: &[ModelParams],
        weights: &WeightScheme,
    ) -> Result<ModelParams, GuestError> {
        let first = &models[0];
        for m in models {
            if m.layer_dims != first.layer_dims {
                return Err(GuestError::DimensionMismatch(
                    "models disagree on layer dims".into(),
                ));
            }
        }
        let mut out = ModelParams {
            layer_dims: first.layer_dims,
            layers: first
                .layers
                .iter()
                .map(|l| Layer {
                    weights: vec![0; l.weights.len()],
                    biases: vec![0; l.biases.len()],
                })
                .collect(),
            round: first.round,
        };
        for li in 0..out.layers.len() {
            for wi in 0..out.layers[li].weights.len() {
                let mut acc: i64 = 0;
                for (m, &w) in models.iter().zip(&weights.weights) {
                    let p = vm.mul_q32(w, m.layers[li].weights[wi]);
                    acc = vm.acc_add(acc, p);
                }
                out.layers[li].weights[wi] = vm.round_q32(acc);
            }
            for bi in 0..out.layers[li].biases.len() {
                let mut acc: i64 = 0;
                for (m, &w) in models.iter().zip(&weights.weights) {
                    let p = vm.mul_q32(w, m.layers[li].biases[bi]);
                    acc = vm.acc_add(acc, p);
                }
                out.layers[li].biases[bi] = vm.round_q32(acc);
            }
        }
        Ok(out)
    }

    /// Forward pass plus argmax; ties go to the lowest class index.
    pub fn infer(&self, vm: &mut GuestVm, features: &[Fx]) -> InferenceOutput {
        let scores = self.forward(vm, features);
        let mut argmax = 0u32;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[argmax as usize] {
                argmax = i as u32;
            }
        }
        InferenceOutput { scores, argmax }
    }

    /// Mean-squared-error against one-hot labels, Q16.16. A reporting
    /// helper — runs on a throwaway metering VM, never on the proven path.
    pub fn mse_loss(&self, rows: &[Row]) -> i64 {
        let mut vm = GuestVm::metering();
        let d_out = self.layer_dims[3] as usize;
        let mut total: i128 = 0;
        for row in rows {
            let scores = self.forward(&mut vm, &row.features);
            for (k, &s) in scores.iter().enumerate() {
                let y = if k as u32 == row.label { crate::guest::FX_ONE } else { 0 };
                let diff = s as i128 - y as i128;
                total += diff * diff; // Q32.32
            }
        }
        let n = (rows.len() * d_out) as i128;
        if n == 0 {
            return 0;
        }
        ((total / n) >> 16) as i64 // back to Q16.16
    }

    /// `mse_loss` as a float, for display.
    pub fn mse_loss_f64(&self, rows: &[Row]) -> f64 {
        self.mse_loss(rows) as f64 / crate::guest::FX_ONE as f64
    }
}

impl CanonicalEncode for ModelParams {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_count(out, self.layer_dims.len());
        for d in self.layer_dims {
            put_u32(out, d);
        }
        put_count(out, self.layers.len());
        for layer in &self.layers {
            put_count(out, layer.weights.len());
            for &w in &layer.weights {
                put_i32(out, w);
            }
            put_count(out, layer.biases.len());
            for &b in &layer.biases {
                put_i32(out, b);
            }
        }
        put_u64(out, self.round);
    }
}

impl CanonicalDecode for ModelParams {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let nd = reader.read_count()?;
        if nd != 4 {
            return Err(DecodeError::Malformed {
                what: "model params",
                detail: "expected 4 layer dims",
            });
        }
        let mut layer_dims = [0u32; 4];
        for d in &mut layer_dims {
            *d = reader.read_u32()?;
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(DecodeError::Malformed {
                what: "model params",
                detail: "zero layer dimension",
            });
        }
        let nl = reader.read_count()?;
        if nl != 3 {
            return Err(DecodeError::Malformed {
                what: "model params",
                detail: "expected 3 layers",
            });
        }
        let shapes = Self::layer_shapes(layer_dims);
        let mut layers = Vec::with_capacity(3);
        for shape in shapes {
            let nw = reader.read_count()?;
            if nw != shape.0 * shape.1 {
                return Err(DecodeError::Malformed {
                    what: "model params",
                    detail: "weight count does not match layer dims",
                });
            }
            let mut weights = Vec::with_capacity(nw);
            for _ in 0..nw {
                weights.push(reader.read_i32()?);
            }
            let nb = reader.read_count()?;
            if nb != shape.0 {
                return Err(DecodeError::Malformed {
                    what: "model params",
                    detail: "bias count does not match layer dims",
                });
            }
            let mut biases = Vec::with_capacity(nb);
            for _ in 0..nb {
                biases.push(reader.read_i32()?);
            }
            layers.push(Layer { weights, biases });
        }
        let round = reader.read_u64()?;
        Ok(Self {
            layer_dims,
            layers,
            round,
        })
    }
}

/// Journal payload of the inference guest: raw class scores and the argmax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceOutput {
    pub scores: Vec<Fx>,
    pub argmax: u32,
}

impl CanonicalEncode for InferenceOutput {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_count(out, self.scores.len());
        for &s in &self.scores {
            put_i32(out, s);
        }
        put_u32(out, self.argmax);
    }
}

impl CanonicalDecode for InferenceOutput {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let n = reader.read_count()?;
        let mut scores = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            scores.push(reader.read_i32()?);
        }
        let argmax = reader.read_u32()?;
        Ok(Self { scores, argmax })
    }
}
