use candle_core::Tensor;
use rand::Rng;

use super::{Init, ParamStore};
use crate::error::Result;

pub struct Conv2dLayer {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2dLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::KaimingNormal { fan_in },
            rng,
        )?;
        let bias = store.param(&format!("{name}.bias"), &[out_ch], Init::Zeros, rng)?;
        Ok(Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Zero-initialized variant; the layer contributes nothing until trained.
    pub fn new_zeroed(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        _rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut zero_rng = crate::rng::rng_from(0);
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::Zeros,
            &mut zero_rng,
        )?;
        let bias = store.param(&format!("{name}.bias"), &[out_ch], Init::Zeros, &mut zero_rng)?;
        Ok(Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_ch = self.weight.dims()[0];
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out_ch, 1, 1))?)?)
    }
}

/// Transposed convolution; used by decoder-style upsampling paths.
pub struct ConvTranspose2dLayer {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl ConvTranspose2dLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.param(
            &format!("{name}.weight"),
            &[in_ch, out_ch, kernel, kernel],
            Init::KaimingNormal { fan_in },
            rng,
        )?;
        let bias = store.param(&format!("{name}.bias"), &[out_ch], Init::Zeros, rng)?;
        Ok(ConvTranspose2dLayer {
            weight,
            bias,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_ch = self.weight.dims()[1];
        let y = x.conv_transpose2d(&self.weight, 0, 0, self.stride, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out_ch, 1, 1))?)?)
    }
}

pub struct LinearLayer {
    weight: Tensor,
    bias: Tensor,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_dim, in_dim],
            Init::KaimingNormal { fan_in: in_dim },
            rng,
        )?;
        let bias = store.param(&format!("{name}.bias"), &[out_dim], Init::Zeros, rng)?;
        Ok(LinearLayer { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Group normalization with affine parameters; per-sample statistics keep
/// inference free of running-state bookkeeping.
pub struct GroupNormLayer {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNormLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let gamma = store.param(&format!("{name}.gamma"), &[channels], Init::Ones, rng)?;
        let beta = store.param(&format!("{name}.beta"), &[channels], Init::Zeros, rng)?;
        Ok(GroupNormLayer {
            gamma,
            beta,
            groups,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = self.groups;
        let grouped = x.reshape((n, g, c / g * h * w))?;
        let mean = grouped.mean_keepdim(2)?;
        let centered = grouped.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let normed = normed.reshape((n, c, h, w))?;
        let scaled = normed.broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?;
        Ok(scaled.broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use crate::rng::rng_from;

    #[test]
    fn conv_shapes() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = rng_from(1);
        let conv = Conv2dLayer::new(&mut store, "c1", 3, 8, 3, 2, 1, &mut rng).unwrap();
        let x = Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 8, 16, 16]);
    }

    #[test]
    fn conv_transpose_upsamples() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = rng_from(1);
        let up = ConvTranspose2dLayer::new(&mut store, "u1", 8, 4, 2, 2, &mut rng).unwrap();
        let x = Tensor::zeros((2, 8, 8, 8), DType::F32, &Device::Cpu).unwrap();
        let y = up.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 4, 16, 16]);
    }

    #[test]
    fn group_norm_normalizes_groups() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = rng_from(2);
        let gn = GroupNormLayer::new(&mut store, "g1", 4, 2, &mut rng).unwrap();
        let x = Tensor::from_vec(
            (0..4 * 4 * 4).map(|i| i as f32).collect::<Vec<_>>(),
            (1, 4, 4, 4),
            &Device::Cpu,
        )
        .unwrap();
        let y = gn.forward(&x).unwrap();
        // with gamma=1, beta=0 each group has ~zero mean and unit variance
        let flat = y.reshape((2, 32)).unwrap();
        let mean = flat.mean(1).unwrap().to_vec1::<f32>().unwrap();
        for m in mean {
            assert!(m.abs() < 1e-4);
        }
    }

    #[test]
    fn linear_matches_manual_matmul() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = rng_from(3);
        let lin = LinearLayer::new(&mut store, "l1", 3, 2, &mut rng).unwrap();
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0], (1, 3), &Device::Cpu).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2]);
    }
}
