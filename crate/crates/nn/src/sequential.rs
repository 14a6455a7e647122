use crate::layers::{Layer, Mode, Param};
use crate::tensor::Tensor;

/// An ordered stack of named layers.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<(String, Box<dyn Layer>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &dyn Layer)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l.as_ref()))
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut dyn Layer {
        self.layers[index].1.as_mut()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let mut cur = x.clone();
        for (_, layer) in &mut self.layers {
            cur = layer.forward(&cur, mode);
        }
        cur
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for (_, layer) in &self.layers {
            cur = layer.infer(&cur);
        }
        cur
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut cur = grad.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    /// Propagates a shape through every layer, reporting the first failure
    /// with the offending layer's name.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        self.shape_trace(input).map(|t| t.last().map(|(_, s)| s.clone()).unwrap_or_else(|| input.to_vec()))
    }

    /// Layer-by-layer output shapes.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<(String, Vec<usize>)>, String> {
        let mut cur = input.to_vec();
        let mut trace = Vec::with_capacity(self.layers.len());
        for (name, layer) in &self.layers {
            cur = layer.output_shape(&cur).map_err(|e| format!("{name}: {e}"))?;
            trace.push((name.clone(), cur.clone()));
        }
        Ok(trace)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|(_, l)| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|(_, l)| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Persistent tensors named `<layer>.<tensor>`.
    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|(name, l)| l.state().into_iter().map(move |(t, v)| (format!("{name}.{t}"), v)))
            .collect()
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|(name, l)| {
                let name = name.clone();
                l.state_mut().into_iter().map(move |(t, v)| (format!("{name}.{t}"), v))
            })
            .collect()
    }
}

impl std::fmt::Debug for Sequential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.layers.iter().map(|(n, l)| format!("{n}:{}", l.kind()))).finish()
    }
}
