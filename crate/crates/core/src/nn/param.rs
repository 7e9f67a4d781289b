//! Learnable parameter: value, gradient accumulator and Adam state.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub w: Vec<T>,
    pub g: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, w: Vec<T>) -> Self {
        let len = shape.iter().product::<usize>();
        assert_eq!(len, w.len(), "param shape/data mismatch");
        Self {
            name: name.into(),
            shape,
            g: vec![T::zero(); len],
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            w,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product::<usize>();
        Self::new(name, shape, vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = T::zero());
    }
}
