use rand::Rng;

use super::tensor::Tensor;
use crate::{Error, Result};

/// Fully connected layer. Weight shape `[out, in]`, optional bias `[out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Dense {
    /// Seeded Glorot-uniform init: weights in `±sqrt(6/(fan_in+fan_out))`.
    pub fn new<R: Rng>(n_in: usize, n_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let data: Vec<f64> = (0..n_in * n_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Dense {
            w: Tensor::new(vec![n_out, n_in], data).unwrap(),
            b: bias.then(|| Tensor::zeros(vec![n_out])),
        }
    }

    pub fn from_parts(w: Tensor, b: Option<Tensor>) -> Self {
        Dense { w, b }
    }

    fn n_in(&self) -> usize {
        self.w.shape()[1]
    }

    fn n_out(&self) -> usize {
        self.w.shape()[0]
    }
}

/// 2-d convolution over `[h, w, c]` inputs. Kernel shape `[c_out, k, k, c_in]`.
#[derive(Debug, Clone)]
pub struct Conv2D {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
}

impl Conv2D {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = kernel * kernel * c_in;
        let fan_out = kernel * kernel * c_out;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..c_out * kernel * kernel * c_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Conv2D {
            w: Tensor::new(vec![c_out, kernel, kernel, c_in], data).unwrap(),
            b: Tensor::zeros(vec![c_out]),
            stride,
        }
    }

    fn kernel(&self) -> usize {
        self.w.shape()[1]
    }

    fn c_in(&self) -> usize {
        self.w.shape()[3]
    }

    fn c_out(&self) -> usize {
        self.w.shape()[0]
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        if h < k || w < k {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel {k} larger than input {h}x{w}"
            )));
        }
        Ok(((h - k) / self.stride + 1, (w - k) / self.stride + 1))
    }
}

/// One node of a branch pipeline.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2D(Conv2D),
    ReLU,
    MaxPool2,
    Flatten,
    Identity,
}

impl Layer {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = match self {
            Layer::Dense(d) => dense_forward(d, x)?,
            Layer::Conv2D(c) => conv_forward(c, x)?,
            Layer::ReLU => Tensor::new(
                x.shape().to_vec(),
                x.data().iter().map(|&v| v.max(0.0)).collect(),
            )?,
            Layer::MaxPool2 => pool_forward(x)?,
            Layer::Flatten => x.flattened(),
            Layer::Identity => x.clone(),
        };
        y.check_finite(self.name())?;
        Ok(y)
    }

    /// Given the layer input `x`, output `y` and the gradient `gy` w.r.t.
    /// `y`, accumulate parameter gradients and return the gradient w.r.t. `x`.
    pub fn backward(&mut self, x: &Tensor, y: &Tensor, gy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => dense_backward(d, x, gy),
            Layer::Conv2D(c) => conv_backward(c, x, gy),
            Layer::ReLU => {
                let gx = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), gx)
            }
            Layer::MaxPool2 => pool_backward(x, y, gy),
            Layer::Flatten | Layer::Identity => Tensor::new(x.shape().to_vec(), gy.data().to_vec()),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => {
                let mut p = vec![&d.w];
                if let Some(b) = &d.b {
                    p.push(b);
                }
                p
            }
            Layer::Conv2D(c) => vec![&c.w, &c.b],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => {
                let mut p = vec![&mut d.w];
                if let Some(b) = &mut d.b {
                    p.push(b);
                }
                p
            }
            Layer::Conv2D(c) => vec![&mut c.w, &mut c.b],
            _ => vec![],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2D(_) => "conv2d",
            Layer::ReLU => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::Flatten => "flatten",
            Layer::Identity => "identity",
        }
    }
}

fn dense_forward(d: &Dense, x: &Tensor) -> Result<Tensor> {
    let (n_in, n_out) = (d.n_in(), d.n_out());
    if x.len() != n_in {
        return Err(Error::ShapeMismatch(format!(
            "dense expects input of length {n_in}, got {}",
            x.len()
        )));
    }
    let w = d.w.data();
    let xv = x.data();
    let mut out = vec![0.0; n_out];
    for o in 0..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = 0.0;
        for i in 0..n_in {
            acc += row[i] * xv[i];
        }
        out[o] = acc;
    }
    if let Some(b) = &d.b {
        for (o, v) in out.iter_mut().enumerate() {
            *v += b.data()[o];
        }
    }
    Tensor::new(vec![n_out], out)
}

fn dense_backward(d: &mut Dense, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
    let (n_in, n_out) = (d.n_in(), d.n_out());
    let xv: Vec<f64> = x.data().to_vec();
    let gyv: Vec<f64> = gy.data().to_vec();
    {
        let gw = d.w.grad_mut();
        for o in 0..n_out {
            let g = gyv[o];
            let row = &mut gw[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                row[i] += g * xv[i];
            }
        }
    }
    if let Some(b) = &mut d.b {
        let gb = b.grad_mut();
        for o in 0..n_out {
            gb[o] += gyv[o];
        }
    }
    let w = d.w.data();
    let mut gx = vec![0.0; n_in];
    for o in 0..n_out {
        let g = gyv[o];
        let row = &w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            gx[i] += g * row[i];
        }
    }
    Tensor::new(x.shape().to_vec(), gx)
}

fn conv_forward(c: &Conv2D, x: &Tensor) -> Result<Tensor> {
    let [h, w, ci] = image_dims(x)?;
    if ci != c.c_in() {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {ci}",
            c.c_in()
        )));
    }
    let (oh, ow) = c.out_hw(h, w)?;
    let (k, co, s) = (c.kernel(), c.c_out(), c.stride);
    let wd = c.w.data();
    let xd = x.data();
    let mut out = vec![0.0; oh * ow * co];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..co {
                let mut acc = c.b.data()[o];
                let kbase = o * k * k * ci;
                for ky in 0..k {
                    let xrow = ((oy * s + ky) * w + ox * s) * ci;
                    let krow = kbase + ky * k * ci;
                    for kx in 0..k * ci {
                        acc += wd[krow + kx] * xd[xrow + kx];
                    }
                }
                out[(oy * ow + ox) * co + o] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, co], out)
}

fn conv_backward(c: &mut Conv2D, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
    let [h, w, ci] = image_dims(x)?;
    let (oh, ow) = c.out_hw(h, w)?;
    let (k, co, s) = (c.kernel(), c.c_out(), c.stride);
    let xd: Vec<f64> = x.data().to_vec();
    let gyd: Vec<f64> = gy.data().to_vec();
    let mut gx = vec![0.0; h * w * ci];
    {
        let gw = c.w.grad_mut();
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let g = gyd[(oy * ow + ox) * co + o];
                    if g == 0.0 {
                        continue;
                    }
                    let kbase = o * k * k * ci;
                    for ky in 0..k {
                        let xrow = ((oy * s + ky) * w + ox * s) * ci;
                        let krow = kbase + ky * k * ci;
                        for kx in 0..k * ci {
                            gw[krow + kx] += g * xd[xrow + kx];
                        }
                    }
                }
            }
        }
    }
    {
        let wd = c.w.data().to_vec();
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let g = gyd[(oy * ow + ox) * co + o];
                    if g == 0.0 {
                        continue;
                    }
                    let kbase = o * k * k * ci;
                    for ky in 0..k {
                        let xrow = ((oy * s + ky) * w + ox * s) * ci;
                        let krow = kbase + ky * k * ci;
                        for kx in 0..k * ci {
                            gx[xrow + kx] += g * wd[krow + kx];
                        }
                    }
                }
            }
        }
    }
    {
        let gb = c.b.grad_mut();
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    gb[o] += gyd[(oy * ow + ox) * co + o];
                }
            }
        }
    }
    Tensor::new(vec![h, w, ci], gx)
}

fn pool_forward(x: &Tensor) -> Result<Tensor> {
    let [h, w, c] = image_dims(x)?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::ShapeMismatch(format!("input {h}x{w} too small to pool")));
    }
    let xd = x.data();
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for dy in 0..2 {
                let row = ((oy * 2 + dy) * w + ox * 2) * c;
                for dx in 0..2 {
                    for ch in 0..c {
                        let v = xd[row + dx * c + ch];
                        let slot = &mut out[(oy * ow + ox) * c + ch];
                        if v > *slot {
                            *slot = v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

fn pool_backward(x: &Tensor, y: &Tensor, gy: &Tensor) -> Result<Tensor> {
    let [h, w, c] = image_dims(x)?;
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let yd = y.data();
    let gyd = gy.data();
    let mut gx = vec![0.0; h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let maxv = yd[(oy * ow + ox) * c + ch];
                let g = gyd[(oy * ow + ox) * c + ch];
                // route to the first cell attaining the max
                'cell: for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
                        if xd[idx] == maxv {
                            gx[idx] += g;
                            break 'cell;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], gx)
}

fn image_dims(x: &Tensor) -> Result<[usize; 3]> {
    match x.shape() {
        [h, w, c] => Ok([*h, *w, *c]),
        other => Err(Error::ShapeMismatch(format!(
            "expected rank-3 [h,w,c] tensor, got {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_affine() {
        // weight 2, bias 1, input 3 -> 7
        let d = Dense::from_parts(
            Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            Some(Tensor::scalar(1.0)),
        );
        let y = Layer::Dense(d).forward(&Tensor::scalar(3.0)).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn relu_definition() {
        let y = Layer::ReLU
            .forward(&Tensor::vector(vec![-1.0, 0.0, 2.0]))
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn dense_single_neuron_chain_rule() {
        let mut layer = Layer::Dense(Dense::from_parts(
            Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            Some(Tensor::scalar(1.0)),
        ));
        let x = Tensor::scalar(3.0);
        let y = layer.forward(&x).unwrap();
        let gx = layer.backward(&x, &y, &Tensor::scalar(1.0)).unwrap();
        match &layer {
            Layer::Dense(d) => {
                assert_eq!(d.w.grad().unwrap(), &[3.0]);
                assert_eq!(d.b.as_ref().unwrap().grad().unwrap(), &[1.0]);
            }
            _ => unreachable!(),
        }
        assert_eq!(gx.data(), &[2.0]);
    }

    #[test]
    fn relu_dead_unit() {
        let x = Tensor::vector(vec![-1.0]);
        let mut layer = Layer::ReLU;
        let y = layer.forward(&x).unwrap();
        let gx = layer.backward(&x, &y, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(gx.data(), &[0.0]);
    }

    #[test]
    fn pool_halves_dims() {
        let x = Tensor::new(vec![4, 4, 1], (0..16).map(|v| v as f64).collect()).unwrap();
        let y = Layer::MaxPool2.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1: output equals input
        let c = Conv2D {
            w: Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
            b: Tensor::zeros(vec![1]),
            stride: 1,
        };
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Layer::Conv2D(c).forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }
}
