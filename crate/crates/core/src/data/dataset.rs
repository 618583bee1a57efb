use std::collections::BTreeMap;

use crate::error::{Result, SimexError};
use crate::tensor::{Scalar, Tensor};

/// A set of single-channel `height x width` images in `[0, 1]`, optionally
/// labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    id: String,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    provenance: String,
}

/// Sample indices per class label.
pub type ClassPartition = BTreeMap<usize, Vec<usize>>;

impl Dataset {
    /// Validates pixel range and label bounds. `num_classes` defaults to
    /// one past the largest label.
    pub fn new(
        id: impl Into<String>,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        let area = height * width;
        if area == 0 {
            return Err(SimexError::invalid(format!("dataset `{id}` has zero-sized images")));
        }
        if pixels.len() % area != 0 {
            return Err(SimexError::shape("dataset pixels", &[area], &[pixels.len()]));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SimexError::invalid(format!("dataset `{id}` has pixel {bad} outside [0, 1]")));
        }
        let n = pixels.len() / area;
        let num_classes = match &labels {
            Some(l) => {
                if l.len() != n {
                    return Err(SimexError::shape("dataset labels", &[n], &[l.len()]));
                }
                let max_plus_one = l.iter().max().map_or(0, |m| m + 1);
                let k = num_classes.unwrap_or(max_plus_one);
                if max_plus_one > k {
                    return Err(SimexError::invalid(format!(
                        "dataset `{id}` has label {} but only {k} classes",
                        max_plus_one - 1
                    )));
                }
                k
            }
            None => 0,
        };
        Ok(Dataset {
            id,
            height,
            width,
            pixels,
            labels,
            num_classes,
            provenance: provenance.into(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.area()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let a = self.area();
        &self.pixels[i * a..(i + 1) * a]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Labels that actually occur, ascending.
    pub fn classes(&self) -> Vec<usize> {
        self.partition().keys().copied().collect()
    }

    pub fn partition(&self) -> ClassPartition {
        let mut map = ClassPartition::new();
        if let Some(labels) = &self.labels {
            for (i, &l) in labels.iter().enumerate() {
                map.entry(l).or_default().push(i);
            }
        }
        map
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], id: impl Into<String>) -> Dataset {
        let a = self.area();
        let mut pixels = Vec::with_capacity(indices.len() * a);
        for &i in indices {
            pixels.extend_from_slice(self.sample(i));
        }
        Dataset {
            id: id.into(),
            height: self.height,
            width: self.width,
            pixels,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        }
    }

    /// The samples of one class, labels kept.
    pub fn class_subset(&self, class: usize) -> Result<Dataset> {
        let idx = self
            .partition()
            .remove(&class)
            .ok_or_else(|| SimexError::invalid(format!("dataset `{}` has no class {class}", self.id)))?;
        Ok(self.subset(&idx, format!("{}/class-{class}", self.id)))
    }

    /// One dataset per class, ids `<id>/class-<k>`.
    pub fn class_subsets(&self) -> Vec<Dataset> {
        self.partition()
            .iter()
            .map(|(k, idx)| self.subset(idx, format!("{}/class-{k}", self.id)))
            .collect()
    }

    /// Every sample relabelled to `label`; the class count becomes
    /// `label + 1`.
    pub fn relabel_all(mut self, label: usize) -> Dataset {
        self.labels = Some(vec![label; self.len()]);
        self.num_classes = label + 1;
        self
    }

    /// Replace labels through `map`; samples whose label maps to `None` are
    /// dropped.
    pub fn remap_labels(&self, map: impl Fn(usize) -> Option<usize>, id: impl Into<String>) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| SimexError::invalid(format!("dataset `{}` is unlabeled", self.id)))?;
        let keep: Vec<usize> = (0..self.len()).filter(|&i| map(labels[i]).is_some()).collect();
        let mut out = self.subset(&keep, id);
        let new_labels: Vec<usize> = keep.iter().map(|&i| map(labels[i]).unwrap()).collect();
        out.num_classes = new_labels.iter().max().map_or(0, |m| m + 1);
        out.labels = Some(new_labels);
        Ok(out)
    }

    /// Concatenate datasets of equal image size. Labels are kept only if
    /// every part is labelled.
    pub fn concat(id: impl Into<String>, parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(SimexError::Empty("dataset concatenation"))?;
        let mut pixels = Vec::new();
        let mut labels = Some(Vec::new());
        let mut num_classes = 0;
        for p in parts {
            if (p.height, p.width) != (first.height, first.width) {
                return Err(SimexError::shape(
                    "dataset concatenation",
                    &[first.height, first.width],
                    &[p.height, p.width],
                ));
            }
            pixels.extend_from_slice(&p.pixels);
            match (&mut labels, &p.labels) {
                (Some(acc), Some(l)) => acc.extend_from_slice(l),
                _ => labels = None,
            }
            num_classes = num_classes.max(p.num_classes);
        }
        let provenance = parts.iter().map(|p| p.id.as_str()).collect::<Vec<_>>().join("+");
        Dataset::new(id, first.height, first.width, pixels, labels, Some(num_classes), provenance)
    }

    /// Samples shaped `(N, 1, H, W)`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
        Tensor::from_vec(&[self.len(), 1, self.height, self.width], data).expect("consistent dataset")
    }

    pub fn tensor_of<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let a = self.area();
        let mut data = Vec::with_capacity(indices.len() * a);
        for &i in indices {
            data.extend(self.sample(i).iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        Tensor::from_vec(&[indices.len(), 1, self.height, self.width], data).expect("consistent dataset")
    }

    /// Mean Euclidean norm of the samples.
    pub fn mean_l2_norm(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..self.len())
            .map(|i| {
                self.sample(i)
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        total / self.len() as f64
    }
}
