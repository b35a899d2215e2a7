//! Learnable parameter storage with encoder/decoder group tags and matching
//! gradient buffers. The adaptation loop updates parameters through an
//! optimizer that filters on the group tag, which is how "encoder only"
//! update scoping is enforced.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::elem::Elem;

/// Which half of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Decoder,
}

impl ParamGroup {
    pub fn code(self) -> u8 {
        match self {
            ParamGroup::Encoder => 0,
            ParamGroup::Decoder => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ParamGroup::Encoder),
            1 => Some(ParamGroup::Decoder),
            _ => None,
        }
    }
}

/// Stable index of a parameter within its store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// One named tensor plus its gradient buffer.
#[derive(Clone, Debug)]
pub struct ParamEntry<F: Elem> {
    pub name: String,
    pub group: ParamGroup,
    /// True for normalization affine parameters (the TENT/ETA update scope).
    pub norm_affine: bool,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Elem> {
    entries: Vec<ParamEntry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Elem> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        norm_affine: bool,
        value: ArrayD<F>,
    ) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let grad = ArrayD::zeros(value.raw_dim());
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, group, norm_affine, value, grad });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<F> {
        &self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<F>> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<F>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<F>> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(F::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Accumulate `delta` into the gradient buffer of `id`.
    pub fn add_grad(&mut self, id: ParamId, delta: &ArrayD<F>) {
        let g = &mut self.entries[id.0].grad;
        debug_assert_eq!(g.shape(), delta.shape());
        *g += delta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn grads_match_parameter_shapes() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add(
            "encoder.stage1.conv1.weight",
            ParamGroup::Encoder,
            false,
            ArrayD::zeros(ndarray::IxDyn(&[8, 3, 3, 3])),
        );
        assert_eq!(store.entry(id).grad.shape(), &[8, 3, 3, 3]);
        assert_eq!(store.param_count(), 8 * 3 * 3 * 3);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::<f32>::new();
        let v = ArrayD::zeros(ndarray::IxDyn(&[1]));
        store.add("w", ParamGroup::Encoder, false, v.clone());
        store.add("w", ParamGroup::Decoder, false, v);
    }
}
