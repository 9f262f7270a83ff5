//! Named parameter arrays with per-array trainable flags.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamArray<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// An array read from an external weights file.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<T> {
    arrays: Vec<ParamArray<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self { arrays: Vec::new() }
    }

    pub fn push(&mut self, name: &str, value: Tensor<T>, trainable: bool) {
        debug_assert!(self.index_of(name).is_none(), "duplicate array {}", name);
        self.arrays.push(ParamArray { name: name.to_string(), value, trainable });
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn arrays(&self) -> &[ParamArray<T>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [ParamArray<T>] {
        &mut self.arrays
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.arrays[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.arrays[i].value)
    }

    pub fn is_trainable(&self, name: &str) -> Option<bool> {
        self.index_of(name).map(|i| self.arrays[i].trainable)
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.arrays.iter().filter(|a| a.trainable).map(|a| a.name.as_str()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(|a| a.value.numel()).sum()
    }

    /// Registers every array as a graph leaf; trainable arrays track
    /// gradients. The returned handles follow array order.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .arrays
            .iter()
            .map(|a| {
                if a.trainable {
                    g.leaf(a.value.clone().with_requires_grad(true))
                } else {
                    g.constant(a.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Registers every array as a constant, for inference.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.arrays.iter().map(|a| g.constant(a.value.clone())).collect() }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arrays: self
                .arrays
                .iter()
                .map(|a| ParamArray { name: a.name.clone(), value: a.value.cast(), trainable: a.trainable })
                .collect(),
        }
    }

    pub fn export(&self) -> Vec<NamedArray> {
        self.arrays
            .iter()
            .map(|a| NamedArray {
                name: a.name.clone(),
                shape: a.value.shape().to_vec(),
                data: a.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect()
    }

    /// Overwrites arrays by name. Every incoming array must name a known
    /// array of identical shape; otherwise nothing is written and the error
    /// lists each offender.
    pub fn overwrite_from(&mut self, incoming: &[NamedArray]) -> Result<()> {
        let mut problems = Vec::new();
        for a in incoming {
            match self.get(&a.name) {
                None => problems.push(format!("{} (unknown array)", a.name)),
                Some(t) if t.shape() != a.shape.as_slice() => {
                    problems.push(format!("{} (expected {:?}, found {:?})", a.name, t.shape(), a.shape))
                }
                Some(_) if a.data.len() != a.shape.iter().product::<usize>() => {
                    problems.push(format!("{} ({} values for shape {:?})", a.name, a.data.len(), a.shape))
                }
                Some(_) => {}
            }
        }
        if !problems.is_empty() {
            return Err(Error::Load(format!("shape mismatch in {}", problems.join(", "))));
        }
        for a in incoming {
            let t = self.get_mut(&a.name).expect("checked above");
            for (dst, &src) in t.data_mut().iter_mut().zip(&a.data) {
                *dst = T::of(src as f64);
            }
        }
        Ok(())
    }

    /// Like [`ModelParams::overwrite_from`] but also requires every array to
    /// be present.
    pub fn load_complete(&mut self, incoming: &[NamedArray]) -> Result<()> {
        let missing: Vec<&str> = self
            .arrays
            .iter()
            .filter(|a| !incoming.iter().any(|n| n.name == a.name))
            .map(|a| a.name.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Load(format!("missing arrays: {}", missing.join(", "))));
        }
        self.overwrite_from(incoming)
    }
}

/// Graph handles for a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var<T: Real>(&self, params: &ModelParams<T>, name: &str) -> Var {
        let i = params.index_of(name).unwrap_or_else(|| panic!("no parameter array named {}", name));
        self.vars[i]
    }
}
