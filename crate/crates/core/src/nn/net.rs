use super::weights::{Activation, WeightsBundle};
use super::{batchnorm_infer, conv2d, gap, relu, softmax, KernelBank, NnError, Padding, Tensor};
use crate::imaging::{Patch, PATCH_SIZE};

/// Output index of the graspable class.
pub const GRASPABLE_CLASS: usize = 1;

#[derive(Debug, Clone)]
struct ConvStage {
    kernels: KernelBank,
    bias: Vec<f64>,
    stride: usize,
    bn: Option<[Vec<f64>; 4]>,
    relu: bool,
}

impl ConvStage {
    fn run(&self, x: &Tensor, eps: f64) -> Result<Tensor, NnError> {
        // an eighth valid 3x3 layer is impossible once the map is below the
        // kernel size, so such layers zero-pad instead
        let padding = if x.height() < self.kernels.kernel_h || x.width() < self.kernels.kernel_w {
            Padding::Same
        } else {
            Padding::Valid
        };
        let mut y = conv2d(x, &self.kernels, Some(&self.bias), self.stride, padding)?;
        if let Some([gamma, beta, mean, var]) = &self.bn {
            y = batchnorm_infer(&y, gamma, beta, mean, var, eps)?;
        }
        if self.relu {
            y = relu(&y);
        }
        Ok(y)
    }
}

/// A validated network with parameters widened to `f64`.
#[derive(Debug, Clone)]
pub struct GraspNet {
    body: Vec<ConvStage>,
    ascend: ConvStage,
    reduce: ConvStage,
    eps: f64,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

impl GraspNet {
    pub fn new(wts: &WeightsBundle) -> Result<Self, NnError> {
        wts.validate().map_err(|e| NnError::WeightMismatch(e.to_string()))?;
        let stages: Vec<ConvStage> = wts
            .layers
            .iter()
            .map(|l| {
                Ok(ConvStage {
                    kernels: KernelBank::new(
                        l.out_channels as usize,
                        l.kernel_h as usize,
                        l.kernel_w as usize,
                        l.in_channels as usize,
                        widen(&l.kernel),
                    )?,
                    bias: widen(&l.bias),
                    stride: l.stride as usize,
                    bn: l.batch_norm.as_ref().map(|bn| {
                        [
                            widen(&bn.gamma),
                            widen(&bn.beta),
                            widen(&bn.running_mean),
                            widen(&bn.running_var),
                        ]
                    }),
                    relu: l.activation == Activation::Relu,
                })
            })
            .collect::<Result<_, NnError>>()?;
        let mut it = stages.into_iter();
        let body: Vec<ConvStage> = it.by_ref().take(8).collect();
        let ascend = it.next().expect("validated");
        let reduce = it.next().expect("validated");
        Ok(Self {
            body,
            ascend,
            reduce,
            eps: wts.bn_eps as f64,
        })
    }

    /// Class probabilities `[ungraspable, graspable]` for a 24x24x3 input.
    pub fn class_probabilities(&self, input: &Tensor) -> Result<[f64; 2], NnError> {
        if input.shape() != (PATCH_SIZE, PATCH_SIZE, 3) {
            return Err(NnError::ShapeMismatch(format!(
                "input {:?}, expected ({PATCH_SIZE}, {PATCH_SIZE}, 3)",
                input.shape()
            )));
        }
        let mut x = input.clone();
        for stage in &self.body {
            x = stage.run(&x, self.eps)?;
        }
        let pooled = gap(&x);
        let n = pooled.len();
        let x = Tensor::new(1, 1, n, pooled)?;
        let x = self.ascend.run(&x, self.eps)?;
        let logits = self.reduce.run(&x, self.eps)?;
        let p = softmax(logits.data());
        Ok([p[0], p[1]])
    }

    pub fn graspable_probability(&self, patch: &Patch) -> Result<f64, NnError> {
        Ok(self.class_probabilities(&Tensor::from(patch))?[GRASPABLE_CLASS])
    }
}

/// Graspable-class probability of `patch` under `wts`.
pub fn forward(patch: &Patch, wts: &WeightsBundle) -> Result<f64, NnError> {
    GraspNet::new(wts)?.graspable_probability(patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Raster;

    fn patch(seed: usize) -> Patch {
        Patch::from_raster(Raster::from_fn(24, 24, 3, |c, r, ch| {
            (((c + 3) * (r + 5) * (ch + 7) + seed) % 101) as f64 / 100.0
        }))
        .unwrap()
    }

    #[test]
    fn zero_weights_give_softmax_of_biases() {
        let mut w = WeightsBundle::random(0);
        for l in &mut w.layers {
            l.kernel.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        w.layers[9].bias = vec![0.3, 0.3];
        assert_eq!(forward(&patch(0), &w).unwrap(), 0.5);
        w.layers[9].bias = vec![0.0, 1.0];
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((forward(&patch(0), &w).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn output_is_probability_pair() {
        let net = GraspNet::new(&WeightsBundle::random(5)).unwrap();
        for s in 0..5 {
            let p = net.class_probabilities(&Tensor::from(&patch(s))).unwrap();
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_bundle_is_weight_mismatch() {
        let mut w = WeightsBundle::random(0);
        w.layers.truncate(9);
        assert!(matches!(GraspNet::new(&w), Err(NnError::WeightMismatch(_))));
    }

    #[test]
    fn wrong_input_shape() {
        let net = GraspNet::new(&WeightsBundle::random(0)).unwrap();
        assert!(net.class_probabilities(&Tensor::zeros(22, 24, 3)).is_err());
    }
}
