//! Named parameter storage shared by the generator and discriminator.
//!
//! Entries keep insertion order, which is also the serialized order. Raw
//! values are what gets stored and optimized; equalized weights are scaled
//! on every forward pass when bound into a [`Graph`].

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::{Graph, Tensor, Var};

/// Runtime He scaling for an equalized weight: `effective = raw · sqrt(gain / fan_in)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EqualizedParam {
    pub fan_in: usize,
    pub gain: f64,
}

impl EqualizedParam {
    pub fn new(fan_in: usize, gain: f64) -> Self {
        assert!(fan_in >= 1, "fan_in must be positive");
        Self { fan_in, gain }
    }

    pub fn multiplier(&self) -> f32 {
        (self.gain / self.fan_in as f64).sqrt() as f32
    }

    /// Effective weight for `raw`. `raw` itself is left as is.
    pub fn scale(&self, raw: &Tensor) -> Tensor {
        let c = self.multiplier();
        raw.map(|v| v * c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Role {
    Weight(EqualizedParam),
    Bias,
    NoiseStrength,
    ConstInput,
    /// Not trained by gradient descent.
    Buffer,
}

impl Role {
    pub fn trainable(&self) -> bool {
        !matches!(self, Role::Buffer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub role: Role,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

/// Graph handles for every entry of a store.
pub struct Binding {
    raw: Vec<Var>,
    effective: Vec<Var>,
}

impl Binding {
    /// The value used by the forward pass.
    pub fn get(&self, id: ParamId) -> Var {
        self.effective[id.0]
    }

    /// Gradients with respect to the raw values, in store order.
    pub fn grads(&self, g: &Graph) -> Vec<Option<Tensor>> {
        self.raw.iter().map(|v| g.grad(*v).cloned()).collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: impl Into<String>, value: Tensor, role: Role) -> ParamId {
        let key = key.into();
        let (idx, old) = self.entries.insert_full(key.clone(), Param { value, role });
        assert!(old.is_none(), "duplicate parameter key {key}");
        ParamId(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_key(&self, key: &str) -> Option<&Param> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, p)| (k.as_str(), p))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Registers every entry as a leaf. Raw values require gradients when
    /// `trainable`; equalized weights get their runtime multiplier applied.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let mut raw = Vec::with_capacity(self.len());
        let mut effective = Vec::with_capacity(self.len());
        for p in self.entries.values() {
            let v = g.leaf(p.value.clone(), trainable && p.role.trainable());
            raw.push(v);
            effective.push(match p.role {
                Role::Weight(eq) => g.mul_scalar(v, eq.multiplier()),
                _ => v,
            });
        }
        Binding { raw, effective }
    }

    /// A copy whose equalized weights hold their effective values and carry
    /// a unit multiplier, so a forward pass does no runtime scaling.
    pub fn baked(&self) -> Self {
        let mut out = self.clone();
        for p in out.entries.values_mut() {
            if let Role::Weight(eq) = p.role {
                p.value = eq.scale(&p.value);
                p.role = Role::Weight(EqualizedParam::new(eq.fan_in, eq.fan_in as f64));
            }
        }
        out
    }

    /// Checks that `other` has the same keys, roles and shapes in the same order.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Architecture(format!(
                "{} parameters vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((ka, a), (kb, b)) in self.entries.iter().zip(&other.entries) {
            if ka != kb || a.value.shape() != b.value.shape() {
                return Err(Error::Architecture(format!(
                    "{ka} {:?} vs {kb} {:?}",
                    a.value.shape(),
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Replaces values from `(key, tensor)` pairs. Every key of the store
    /// must be present with a matching shape.
    pub fn load<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for (key, p) in self.entries.iter_mut() {
            let t = lookup(key).ok_or_else(|| Error::Architecture(format!("missing tensor {key}")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Architecture(format!(
                    "{key}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Sum of element counts over all entries.
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_values() {
        assert_eq!(EqualizedParam::new(2, 2.0).multiplier(), 1.0);
        assert_eq!(EqualizedParam::new(512, 2.0).multiplier(), 0.0625);
    }

    #[test]
    fn scale_leaves_raw_alone() {
        let raw = Tensor::new(vec![2], vec![1.0f32, -2.0]).unwrap();
        let eff = EqualizedParam::new(512, 2.0).scale(&raw);
        assert_eq!(raw.data(), &[1.0, -2.0]);
        assert_eq!(eff.data(), &[0.0625, -0.125]);
    }

    #[test]
    fn baked_multiplier_is_one() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::ones(vec![3]), Role::Weight(EqualizedParam::new(8, 2.0)));
        let b = s.baked();
        match b.by_key("w").unwrap().role {
            Role::Weight(eq) => assert_eq!(eq.multiplier(), 1.0),
            _ => unreachable!(),
        }
        assert_eq!(b.by_key("w").unwrap().value.data(), &[0.5; 3]);
    }
}
