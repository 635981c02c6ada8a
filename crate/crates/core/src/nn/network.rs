use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, im2col};
use super::tensor::{check_finite, Tensor};
use crate::env::Observation;
use crate::{Error, Result};

/// Hidden sizes of the Q-network; the input and output sizes come from the
/// environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkWidths {
    pub conv_filters: usize,
    pub kernel: usize,
    pub dense: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for NetworkWidths {
    fn default() -> Self {
        Self {
            conv_filters: 8,
            kernel: 5,
            dense: vec![128, 64, 32],
            head: vec![64],
        }
    }
}

impl NetworkWidths {
    pub fn spec_for(
        &self,
        input: (usize, usize, usize),
        history: usize,
        outputs: usize,
    ) -> QNetworkSpec {
        QNetworkSpec {
            input: [input.0, input.1, input.2],
            kernel: self.kernel,
            conv_filters: self.conv_filters,
            dense: self.dense.clone(),
            history,
            head: self.head.clone(),
            outputs,
        }
    }
}

/// Image branch: one valid stride-1 convolution, ReLU, then dense+ReLU
/// layers. The history bits join after the image branch; the head is
/// dense+ReLU layers and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetworkSpec {
    /// `[channels, rows, cols]`.
    pub input: [usize; 3],
    pub kernel: usize,
    pub conv_filters: usize,
    pub dense: Vec<usize>,
    pub history: usize,
    pub head: Vec<usize>,
    pub outputs: usize,
}

impl QNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input;
        if c == 0 || self.kernel == 0 || h < self.kernel || w < self.kernel {
            return Err(Error::Config(format!(
                "input {:?} cannot take a {}x{} kernel",
                self.input, self.kernel, self.kernel
            )));
        }
        if self.conv_filters == 0 || self.outputs == 0 || self.dense.is_empty() {
            return Err(Error::Config(
                "network needs filters, a dense layer and outputs".into(),
            ));
        }
        if self.dense.iter().chain(&self.head).any(|&n| n == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size after the convolution.
    pub fn conv_out(&self) -> (usize, usize) {
        (
            self.input[1] + 1 - self.kernel,
            self.input[2] + 1 - self.kernel,
        )
    }

    fn image_len(&self) -> usize {
        self.input.iter().product()
    }

    fn patch_len(&self) -> usize {
        self.input[0] * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    inp: usize,
    out: usize,
    relu: bool,
}

/// A batch of network inputs.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub images: Vec<f64>,
    /// Side inputs (history bits, then episode progress).
    pub history: Vec<f64>,
    pub size: usize,
}

impl Batch {
    pub fn from_observations<'a, I>(observations: I) -> Self
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let mut batch = Self::default();
        for obs in observations {
            batch.push(obs);
        }
        batch
    }

    pub fn push(&mut self, obs: &Observation) {
        self.images.extend_from_slice(&obs.image);
        self.history.extend(obs.side_inputs());
        self.size += 1;
    }

    pub fn clear(&mut self) {
        self.images.clear();
        self.history.clear();
        self.size = 0;
    }
}

struct Cache {
    cols: Vec<f64>,
    conv_z: Vec<f64>,
    /// Input of every dense layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every dense layer.
    pre: Vec<Vec<f64>>,
}

/// Q-network with all parameters in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    spec: QNetworkSpec,
    layout: Vec<TensorInfo>,
    dense: Vec<Dense>,
    /// Index of the first layer that sees the history bits.
    join: usize,
    params: Vec<f64>,
}

impl QNetwork {
    /// All parameters zero.
    pub fn zeros(spec: QNetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut layout = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let info = TensorInfo {
                name,
                shape,
                offset,
            };
            let start = offset;
            offset += info.len();
            layout.push(info);
            start
        };
        add(
            "conv.weight".into(),
            vec![spec.conv_filters, spec.patch_len()],
        );
        add("conv.bias".into(), vec![spec.conv_filters]);

        let (ho, wo) = spec.conv_out();
        let mut dense = Vec::new();
        let mut inp = spec.conv_filters * ho * wo;
        let mut push =
            |name: String, inp: usize, out: usize, relu: bool, dense: &mut Vec<Dense>| {
                let w = add(format!("{name}.weight"), vec![out, inp]);
                let b = add(format!("{name}.bias"), vec![out]);
                dense.push(Dense {
                    w,
                    b,
                    inp,
                    out,
                    relu,
                });
            };
        for (i, &out) in spec.dense.iter().enumerate() {
            push(format!("dense{i}"), inp, out, true, &mut dense);
            inp = out;
        }
        let join = dense.len();
        inp += spec.history;
        for (i, &out) in spec.head.iter().enumerate() {
            push(format!("head{i}"), inp, out, true, &mut dense);
            inp = out;
        }
        push("out".into(), inp, spec.outputs, false, &mut dense);
        let total = layout.last().map_or(0, |t| t.offset + t.len());
        Ok(Self {
            spec,
            layout,
            dense,
            join,
            params: vec![0.0; total],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new(spec: QNetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for info in &net.layout {
            if info.shape.len() == 2 {
                let bound = 1.0 / (info.shape[1] as f64).sqrt();
                for v in &mut net.params[info.offset..info.offset + info.len()] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &QNetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[TensorInfo] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.layout.iter().find(|t| t.name == name).map(|t| {
            Tensor::new(
                t.shape.clone(),
                self.params[t.offset..t.offset + t.len()].to_vec(),
            )
            .expect("layout is consistent")
        })
    }

    /// Overwrites the parameters with another network's.
    pub fn copy_from(&mut self, other: &QNetwork) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Shape {
                expected: format!("{:?}", self.spec),
                got: format!("{:?}", other.spec),
            });
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    /// Replaces the parameters wholesale; used when loading checkpoints.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.params.len()),
                got: params.len().to_string(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Q-values for one observation.
    pub fn forward(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.forward_batch(&Batch::from_observations([obs]))
    }

    /// Q-values, `batch.size x outputs` row-major.
    pub fn forward_batch(&self, batch: &Batch) -> Result<Vec<f64>> {
        self.run(batch).map(|(q, _)| q)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let (img, hist) = (self.spec.image_len(), self.spec.history);
        if batch.images.len() != batch.size * img || batch.history.len() != batch.size * hist {
            return Err(Error::Shape {
                expected: format!("{} x ({img} image + {hist} history)", batch.size),
                got: format!(
                    "{} image + {} history values",
                    batch.images.len(),
                    batch.history.len()
                ),
            });
        }
        Ok(())
    }

    fn run(&self, batch: &Batch) -> Result<(Vec<f64>, Cache)> {
        self.check_batch(batch)?;
        let spec = &self.spec;
        let bsz = batch.size;
        let (ho, wo) = spec.conv_out();
        let (hw, patch, f) = (ho * wo, spec.patch_len(), spec.conv_filters);
        let img_len = spec.image_len();
        let input = (spec.input[0], spec.input[1], spec.input[2]);
        let conv_w = &self.params[..f * patch];
        let conv_b = &self.params[f * patch..f * patch + f];

        let mut cols = vec![0.0; bsz * patch * hw];
        let mut conv_z = vec![0.0; bsz * f * hw];
        for s in 0..bsz {
            let c = &mut cols[s * patch * hw..(s + 1) * patch * hw];
            im2col(
                &batch.images[s * img_len..(s + 1) * img_len],
                input,
                spec.kernel,
                c,
            );
            let z = &mut conv_z[s * f * hw..(s + 1) * f * hw];
            gemm(f, patch, hw, conv_w, false, c, false, z, 0.0);
            for (row, &b) in z.chunks_mut(hw).zip(conv_b) {
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        let mut x: Vec<f64> = conv_z.iter().map(|&v| v.max(0.0)).collect();

        let mut inputs = Vec::with_capacity(self.dense.len());
        let mut pre = Vec::with_capacity(self.dense.len());
        for (l, layer) in self.dense.iter().enumerate() {
            if l == self.join {
                x = concat_rows(
                    &x,
                    layer.inp - spec.history,
                    &batch.history,
                    spec.history,
                    bsz,
                );
            }
            let mut z = vec![0.0; bsz * layer.out];
            let w = &self.params[layer.w..layer.w + layer.out * layer.inp];
            gemm(bsz, layer.inp, layer.out, &x, false, w, true, &mut z, 0.0);
            let b = &self.params[layer.b..layer.b + layer.out];
            for row in z.chunks_mut(layer.out) {
                row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
            }
            let next = if layer.relu {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        check_finite(&x, "q-values")?;
        Ok((
            x,
            Cache {
                cols,
                conv_z,
                inputs,
                pre,
            },
        ))
    }

    /// Gradient of `sum_ij dq_ij * q_ij` with respect to every parameter,
    /// written into `grad` (overwritten).
    fn backward(&self, batch: &Batch, cache: &Cache, dq: Vec<f64>, grad: &mut [f64]) {
        let spec = &self.spec;
        let bsz = batch.size;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut d = dq;
        for l in (0..self.dense.len()).rev() {
            let layer = self.dense[l];
            if layer.relu {
                d.iter_mut().zip(&cache.pre[l]).for_each(|(g, &z)| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let x = &cache.inputs[l];
            let (wlen, out, inp) = (layer.out * layer.inp, layer.out, layer.inp);
            gemm(
                out,
                bsz,
                inp,
                &d,
                true,
                x,
                false,
                &mut grad[layer.w..layer.w + wlen],
                1.0,
            );
            let gb = &mut grad[layer.b..layer.b + out];
            for row in d.chunks(out) {
                gb.iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
            let mut dx = vec![0.0; bsz * inp];
            gemm(
                bsz,
                out,
                inp,
                &d,
                false,
                &self.params[layer.w..layer.w + wlen],
                false,
                &mut dx,
                0.0,
            );
            if l == self.join {
                let keep = inp - spec.history;
                dx = dx
                    .chunks(inp)
                    .flat_map(|row| row[..keep].iter().copied())
                    .collect();
            }
            d = dx;
        }

        let (ho, wo) = spec.conv_out();
        let (hw, patch, f) = (ho * wo, spec.patch_len(), spec.conv_filters);
        d.iter_mut().zip(&cache.conv_z).for_each(|(g, &z)| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let (gw, rest) = grad.split_at_mut(f * patch);
        let gb = &mut rest[..f];
        for s in 0..bsz {
            let dz = &d[s * f * hw..(s + 1) * f * hw];
            let cols = &cache.cols[s * patch * hw..(s + 1) * patch * hw];
            gemm(f, hw, patch, dz, false, cols, true, gw, 1.0);
            for (g, row) in gb.iter_mut().zip(dz.chunks(hw)) {
                *g += row.iter().sum::<f64>();
            }
        }
    }

    /// Mean Huber loss (transition at 1) of `Q(s_b, a_b)` against `targets`;
    /// the gradient is written into `grad`.
    /// Smallest |pre-activation| of any ReLU unit on `batch`. Finite
    /// difference checks are only meaningful when this is well above the
    /// step size.
    pub fn relu_margin(&self, batch: &Batch) -> Result<f64> {
        let (_, cache) = self.run(batch)?;
        Ok(cache
            .conv_z
            .iter()
            .chain(cache.pre.iter().flatten())
            .fold(f64::INFINITY, |m, z| m.min(z.abs())))
    }

    pub fn loss_and_grad(
        &self,
        batch: &Batch,
        actions: &[usize],
        targets: &[f64],
        grad: &mut [f64],
    ) -> Result<f64> {
        let bsz = batch.size;
        let outputs = self.spec.outputs;
        if actions.len() != bsz || targets.len() != bsz || grad.len() != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{bsz} actions/targets and {} gradients", self.params.len()),
                got: format!("{}/{} and {}", actions.len(), targets.len(), grad.len()),
            });
        }
        if bsz == 0 {
            return Err(Error::Shape {
                expected: "non-empty batch".into(),
                got: "0".into(),
            });
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= outputs) {
            return Err(Error::Shape {
                expected: format!("action < {outputs}"),
                got: a.to_string(),
            });
        }
        let (q, cache) = self.run(batch)?;
        let mut dq = vec![0.0; q.len()];
        let mut loss = 0.0;
        for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let diff = q[b * outputs + a] - y;
            if !diff.is_finite() {
                return Err(Error::NonFinite {
                    context: "huber loss".into(),
                    index: b,
                });
            }
            loss += huber(diff);
            dq[b * outputs + a] = diff.clamp(-1.0, 1.0) / bsz as f64;
        }
        self.backward(batch, &cache, dq, grad);
        check_finite(grad, "gradient")?;
        Ok(loss / bsz as f64)
    }
}

pub fn huber(d: f64) -> f64 {
    if d.abs() <= 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn concat_rows(a: &[f64], a_w: usize, b: &[f64], b_w: usize, rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (a_w + b_w));
    for r in 0..rows {
        out.extend_from_slice(&a[r * a_w..(r + 1) * a_w]);
        out.extend_from_slice(&b[r * b_w..(r + 1) * b_w]);
    }
    out
}
