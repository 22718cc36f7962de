use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config, dim, Result};

/// A configuration is one choice index per dimension.
pub type Config = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionKind {
    /// Unordered choices, one-hot encoded.
    Categorical,
    /// Ordered choices, encoded as `index / (n - 1)`.
    Ordinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    pub kind: DimensionKind,
    pub values: Vec<Value>,
    /// JSON pointer into a model configuration document where a chosen
    /// value is written. Object values are merged key by key.
    #[serde(default)]
    pub target: Option<String>,
}

impl Dimension {
    pub fn categorical(name: &str, values: Vec<Value>) -> Self {
        Self {
            name: name.into(),
            kind: DimensionKind::Categorical,
            values,
            target: None,
        }
    }

    pub fn ordinal(name: &str, values: Vec<Value>) -> Self {
        Self {
            name: name.into(),
            kind: DimensionKind::Ordinal,
            values,
            target: None,
        }
    }

    pub fn with_target(mut self, pointer: &str) -> Self {
        self.target = Some(pointer.into());
        self
    }

    fn width(&self) -> usize {
        match self.kind {
            DimensionKind::Categorical => self.values.len(),
            DimensionKind::Ordinal => 1,
        }
    }
}

/// Mixed categorical/ordinal search space with a unit-hypercube encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpace {
    pub dimensions: Vec<Dimension>,
}

impl ConfigSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        let s = Self { dimensions };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(config("search space has no dimensions"));
        }
        for d in &self.dimensions {
            if d.values.is_empty() {
                return Err(config(format!("dimension '{}' has no values", d.name)));
            }
        }
        let mut names: Vec<&str> = self.dimensions.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(config("dimension names must be unique"));
        }
        Ok(())
    }

    pub fn n_dims(&self) -> usize {
        self.dimensions.len()
    }

    /// Length of encoded vectors.
    pub fn encoded_len(&self) -> usize {
        self.dimensions.iter().map(Dimension::width).sum()
    }

    /// Number of configurations (saturating).
    pub fn size(&self) -> usize {
        self.dimensions
            .iter()
            .fold(1usize, |acc, d| acc.saturating_mul(d.values.len()))
    }

    pub fn contains(&self, c: &[usize]) -> bool {
        c.len() == self.n_dims() && c.iter().zip(&self.dimensions).all(|(&i, d)| i < d.values.len())
    }

    pub fn encode(&self, c: &[usize]) -> Result<Vec<f64>> {
        if !self.contains(c) {
            return Err(dim(format!("configuration {c:?} is not in the space")));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        for (&i, d) in c.iter().zip(&self.dimensions) {
            match d.kind {
                DimensionKind::Categorical => out.extend((0..d.values.len()).map(|j| (j == i) as u8 as f64)),
                DimensionKind::Ordinal => {
                    let n = d.values.len();
                    out.push(if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 });
                }
            }
        }
        Ok(out)
    }

    /// Nearest configuration to any point: argmax within one-hot blocks
    /// (first wins on ties), rounding for ordinal coordinates.
    pub fn decode(&self, x: &[f64]) -> Result<Config> {
        if x.len() != self.encoded_len() {
            return Err(dim(format!("encoded length {} != {}", x.len(), self.encoded_len())));
        }
        let mut out = Vec::with_capacity(self.n_dims());
        let mut k = 0;
        for d in &self.dimensions {
            let n = d.values.len();
            match d.kind {
                DimensionKind::Categorical => {
                    let block = &x[k..k + n];
                    let mut best = 0;
                    for j in 1..n {
                        if block[j] > block[best] {
                            best = j;
                        }
                    }
                    out.push(best);
                    k += n;
                }
                DimensionKind::Ordinal => {
                    let v = if x[k].is_finite() { x[k].clamp(0.0, 1.0) } else { 0.0 };
                    out.push(((v * (n - 1) as f64).round() as usize).min(n - 1));
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    /// Every configuration in lexicographic order.
    pub fn all_configs(&self) -> Vec<Config> {
        let mut out = vec![Vec::new()];
        for d in &self.dimensions {
            out = out
                .into_iter()
                .flat_map(|c| {
                    (0..d.values.len()).map(move |i| {
                        let mut c = c.clone();
                        c.push(i);
                        c
                    })
                })
                .collect();
        }
        out
    }

    /// Configurations differing from `c` in exactly one dimension.
    pub fn neighbours(&self, c: &[usize]) -> Vec<Config> {
        let mut out = Vec::new();
        for (k, d) in self.dimensions.iter().enumerate() {
            for i in 0..d.values.len() {
                if i != c[k] {
                    let mut n = c.to_vec();
                    n[k] = i;
                    out.push(n);
                }
            }
        }
        out
    }

    /// Named values of a configuration.
    pub fn describe(&self, c: &[usize]) -> serde_json::Map<String, Value> {
        self.dimensions
            .iter()
            .zip(c)
            .map(|(d, &i)| (d.name.clone(), d.values[i].clone()))
            .collect()
    }

    /// Configuration whose values equal `values` (by dimension order).
    pub fn lookup(&self, values: &[Value]) -> Result<Config> {
        if values.len() != self.n_dims() {
            return Err(dim("value count differs from dimension count"));
        }
        self.dimensions
            .iter()
            .zip(values)
            .map(|(d, v)| {
                d.values
                    .iter()
                    .position(|x| x == v)
                    .ok_or_else(|| config(format!("value {v} not a choice of '{}'", d.name)))
            })
            .collect()
    }

    /// Write the chosen values into a copy of `template` at each
    /// dimension's target pointer.
    pub fn apply(&self, template: &Value, c: &[usize]) -> Result<Value> {
        if !self.contains(c) {
            return Err(dim(format!("configuration {c:?} is not in the space")));
        }
        let mut doc = template.clone();
        for (d, &i) in self.dimensions.iter().zip(c) {
            let pointer = d.target.clone().unwrap_or_else(|| format!("/{}", d.name));
            let value = &d.values[i];
            let slot = doc
                .pointer_mut(&pointer)
                .ok_or_else(|| config(format!("target '{pointer}' of '{}' not in the template", d.name)))?;
            match (slot, value) {
                (Value::Object(dst), Value::Object(src)) => {
                    for (k, v) in src {
                        dst.insert(k.clone(), v.clone());
                    }
                }
                (slot, v) => *slot = v.clone(),
            }
        }
        Ok(doc)
    }
}
