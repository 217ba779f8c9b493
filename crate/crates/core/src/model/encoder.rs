use crate::error::{Error, Result};
use crate::kernel::{
    maxpool_bwd, maxpool_fwd, relu_bwd, relu_fwd, Conv2d, Linear, ParamSlot, PoolCache, Rng, Tensor,
    POOL_WIDTH,
};
use crate::model::config::ModelConfig;

/// Two conv→ReLU→pool sections and a fully connected layer whose output is
/// reshaped back to the input frame's shape.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Linear,
    height: usize,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Tensor,
    pre1: Tensor,
    pool1: PoolCache,
    pooled1: Tensor,
    pre2: Tensor,
    pool2: PoolCache,
    flat: Vec<f64>,
}

impl Encoder {
    pub fn new(name: &str, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2] = cfg.conv_channels;
        let cells = cfg.frame_height * cfg.frame_width;
        Ok(Encoder {
            conv1: Conv2d::new(&format!("{name}.conv1"), 1, c1, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), c1, c2, rng),
            fc: Linear::new(&format!("{name}.fc"), cfg.encoder_flat_len(), cells, rng),
            height: cfg.frame_height,
            width: cfg.frame_width,
        })
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `frame: [H, W]` to `C: [H, W]`.
    pub fn forward(&self, frame: &Tensor) -> Result<(Tensor, EncoderCache)> {
        if frame.shape() != [self.height, self.width] {
            return Err(Error::Dimension(format!(
                "encoder expects a {}x{} frame, got {:?}",
                self.height,
                self.width,
                frame.shape()
            )));
        }
        let input = frame.clone().reshape(&[1, self.height, self.width])?;
        let pre1 = self.conv1.forward(&input)?;
        let act1 = Tensor::new(pre1.shape().to_vec(), relu_fwd(pre1.data()))?;
        let (pooled1, pool1) = maxpool_fwd(&act1)?;
        let pre2 = self.conv2.forward(&pooled1)?;
        let act2 = Tensor::new(pre2.shape().to_vec(), relu_fwd(pre2.data()))?;
        let (pooled2, pool2) = maxpool_fwd(&act2)?;
        let flat = pooled2.into_data();
        let out = Tensor::new([self.height, self.width], self.fc.forward(&flat)?)?;
        let cache = EncoderCache {
            input,
            pre1,
            pool1,
            pooled1,
            pre2,
            pool2,
            flat,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the frame.
    pub fn backward(&mut self, cache: &EncoderCache, grad: &Tensor) -> Result<Tensor> {
        if grad.shape() != [self.height, self.width] {
            return Err(Error::Dimension(format!(
                "encoder gradient {:?} for a {}x{} frame",
                grad.shape(),
                self.height,
                self.width
            )));
        }
        let d_flat = self.fc.backward(&cache.flat, grad.data())?;
        let pooled2_shape = [cache.pre2.shape()[0], self.height, cache.pre2.shape()[2] / POOL_WIDTH];
        let d_act2 = maxpool_bwd(&Tensor::new(pooled2_shape, d_flat)?, &cache.pool2)?;
        let d_pre2 = Tensor::new(cache.pre2.shape().to_vec(), relu_bwd(d_act2.data(), cache.pre2.data()))?;
        let d_pooled1 = self.conv2.backward(&cache.pooled1, &d_pre2)?;
        let d_act1 = maxpool_bwd(&d_pooled1, &cache.pool1)?;
        let d_pre1 = Tensor::new(cache.pre1.shape().to_vec(), relu_bwd(d_act1.data(), cache.pre1.data()))?;
        let d_input = self.conv1.backward(&cache.input, &d_pre1)?;
        d_input.reshape(&[self.height, self.width])
    }

    pub fn params(&self) -> Vec<&ParamSlot> {
        [self.conv1.params(), self.conv2.params(), self.fc.params()].concat()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamSlot> {
        let mut v = Vec::with_capacity(6);
        v.extend(self.conv1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.fc.params_mut());
        v
    }
}
