use super::layers::Layer;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Two-branch network: an optional tabular branch, an optional image branch,
/// and a fusion head applied to the concatenation of the branch outputs.
/// The head must produce a scalar per sample.
#[derive(Debug, Clone)]
pub struct Network {
    pub tabular: Vec<Layer>,
    pub image: Vec<Layer>,
    pub head: Vec<Layer>,
}

/// Per-sample activation record; input of each layer along every path.
pub struct ForwardCache {
    tabular: Vec<Tensor>,
    image: Vec<Tensor>,
    head: Vec<Tensor>,
    tab_width: usize,
}

impl Network {
    pub fn new(tabular: Vec<Layer>, image: Vec<Layer>, head: Vec<Layer>) -> Self {
        Network {
            tabular,
            image,
            head,
        }
    }

    /// Run one sample through the graph, keeping activations for backward.
    pub fn forward(
        &self,
        tabular: Option<&Tensor>,
        image: Option<&Tensor>,
    ) -> Result<(f64, ForwardCache)> {
        let mut cache = ForwardCache {
            tabular: Vec::new(),
            image: Vec::new(),
            head: Vec::new(),
            tab_width: 0,
        };
        let mut fused: Vec<f64> = Vec::new();
        if !self.tabular.is_empty() {
            let x = tabular
                .ok_or_else(|| Error::MissingField("tabular input port".into()))?;
            let out = run_branch(&self.tabular, x, &mut cache.tabular)?;
            cache.tab_width = out.len();
            fused.extend_from_slice(out.data());
        }
        if !self.image.is_empty() {
            let x = image.ok_or_else(|| Error::MissingField("image input port".into()))?;
            let out = run_branch(&self.image, x, &mut cache.image)?;
            fused.extend_from_slice(out.data());
        }
        if fused.is_empty() {
            return Err(Error::MissingField("no connected input port".into()));
        }
        let out = run_branch(&self.head, &Tensor::vector(fused), &mut cache.head)?;
        if out.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "head output must be scalar, got length {}",
                out.len()
            )));
        }
        Ok((out.data()[0], cache))
    }

    /// Prediction without gradient bookkeeping.
    pub fn predict(&self, tabular: Option<&Tensor>, image: Option<&Tensor>) -> Result<f64> {
        self.forward(tabular, image).map(|(y, _)| y)
    }

    /// Accumulate parameter gradients for one sample given `d loss / d output`.
    pub fn backward(&mut self, cache: &ForwardCache, loss_grad: f64) -> Result<()> {
        if cache.head.len() != self.head.len() + 1 {
            return Err(Error::ShapeMismatch("stale forward cache".into()));
        }
        let g_fused = backprop_branch(
            &mut self.head,
            &cache.head,
            Tensor::scalar(loss_grad),
        )?;
        let fused = g_fused.data();
        let mut offset = 0;
        if !self.tabular.is_empty() {
            let gt = Tensor::vector(fused[..cache.tab_width].to_vec());
            backprop_branch(&mut self.tabular, &cache.tabular, gt)?;
            offset = cache.tab_width;
        }
        if !self.image.is_empty() {
            let branch_out = cache.image.last().unwrap();
            if fused.len() - offset != branch_out.len() {
                return Err(Error::ShapeMismatch("stale forward cache".into()));
            }
            let gi = Tensor::new(
                branch_out.shape().to_vec(),
                fused[offset..].to_vec(),
            )?;
            backprop_branch(&mut self.image, &cache.image, gi)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.tabular
            .iter_mut()
            .chain(self.image.iter_mut())
            .chain(self.head.iter_mut())
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.tabular
            .iter()
            .chain(self.image.iter())
            .chain(self.head.iter())
    }
}

fn run_branch(layers: &[Layer], input: &Tensor, record: &mut Vec<Tensor>) -> Result<Tensor> {
    record.push(input.clone());
    let mut cur = input.clone();
    for layer in layers {
        cur = layer.forward(&cur)?;
        record.push(cur.clone());
    }
    Ok(cur)
}

fn backprop_branch(
    layers: &mut [Layer],
    record: &[Tensor],
    out_grad: Tensor,
) -> Result<Tensor> {
    let mut g = out_grad;
    for (i, layer) in layers.iter_mut().enumerate().rev() {
        g = layer.backward(&record[i], &record[i + 1], &g)?;
    }
    Ok(g)
}
