use super::{AutodiffError, Tensor};

/// Named parameter tensors θ with matching per-element rates α.
///
/// Entries are kept sorted by name so iteration order is lexicographic and
/// independent of insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    rates: Vec<Tensor>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            rates: Vec::new(),
        }
    }

    /// Inserts or replaces `name`, with its rate tensor filled with `rate`.
    pub fn insert(&mut self, name: &str, value: Tensor, rate: f64) -> Result<(), AutodiffError> {
        let rates = Tensor::filled(value.shape(), rate);
        self.insert_with_rates(name, value, rates)
    }

    pub fn insert_with_rates(
        &mut self,
        name: &str,
        value: Tensor,
        rates: Tensor,
    ) -> Result<(), AutodiffError> {
        if rates.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "param_insert",
                left: value.shape().to_vec(),
                right: rates.shape().to_vec(),
            });
        }
        if rates.data().iter().any(|&a| a.is_nan() || a <= 0.0) {
            return Err(AutodiffError::NonPositiveRate(name.to_string()));
        }
        match self.names.binary_search_by(|n| n.as_str().cmp(name)) {
            Ok(i) => {
                self.values[i] = value;
                self.rates[i] = rates;
            }
            Err(i) => {
                self.names.insert(i, name.to_string());
                self.values.insert(i, value);
                self.rates.insert(i, rates);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name_at(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn value_at(&self, index: usize) -> &Tensor {
        &self.values[index]
    }

    pub fn value_at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.values[index]
    }

    pub fn rate_at(&self, index: usize) -> &Tensor {
        &self.rates[index]
    }

    pub fn rate_at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.rates[index]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn rates(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.rates[i])
    }

    /// `(name, θ, α)` in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.rates)
            .map(|((n, v), r)| (n.as_str(), v, r))
    }

    /// True when both sets have the same names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn check_layout(&self, other: &ParamSet) -> Result<(), AutodiffError> {
        if self.names != other.names {
            return Err(AutodiffError::LayoutMismatch(format!(
                "parameter names differ ({} vs {} entries)",
                self.names.len(),
                other.names.len()
            )));
        }
        for ((n, a), b) in self.names.iter().zip(&self.values).zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(AutodiffError::LayoutMismatch(format!(
                    "{n}: shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Flattened θ in iteration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Per-parameter gradients aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            names: params.names.clone(),
            tensors: params
                .values
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    /// Gradients with explicit values, one tensor per parameter of `layout` in order.
    pub fn from_tensors(layout: &ParamSet, tensors: Vec<Tensor>) -> Result<Self, AutodiffError> {
        if tensors.len() != layout.len()
            || tensors
                .iter()
                .zip(&layout.values)
                .any(|(g, v)| g.shape() != v.shape())
        {
            return Err(AutodiffError::LayoutMismatch(
                "gradient tensors do not match the parameter layout".into(),
            ));
        }
        Ok(Self {
            names: layout.names.clone(),
            tensors,
        })
    }

    pub(crate) fn accumulate(&mut self, index: usize, delta: &[f64]) {
        for (a, b) in self.tensors[index].data_mut().iter_mut().zip(delta) {
            *a += b;
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| &self.tensors[i])
    }

    pub fn at(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            for x in t.data_mut() {
                *x *= c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Sums in index order, so the result does not depend on how `parts` were produced.
    pub fn sum_ordered<'a>(
        layout: &ParamSet,
        parts: impl IntoIterator<Item = &'a Gradients>,
    ) -> Gradients {
        let mut total = Gradients::zeros_like(layout);
        for g in parts {
            total.add_assign(g);
        }
        total
    }
}
