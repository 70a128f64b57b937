use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RealArray;

pub type ClassId = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Image, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

/// Borrowed view of one paired sample.
#[derive(Clone, Copy, Debug)]
pub struct Instance<'a> {
    pub image: &'a [f64],
    pub text: &'a [f64],
    pub attr: &'a [f64],
    pub label: ClassId,
}

/// Paired image/text features with per-class attribute vectors.
///
/// Features are stored as `n x d` matrices; row `i` of `image` and `text`
/// form instance `i`, labelled `labels[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub name: String,
    image: RealArray,
    text: RealArray,
    labels: Vec<ClassId>,
    class_attrs: BTreeMap<ClassId, Vec<f64>>,
}

impl Corpus {
    pub fn new(
        name: impl Into<String>,
        image: RealArray,
        text: RealArray,
        labels: Vec<ClassId>,
        class_attrs: BTreeMap<ClassId, Vec<f64>>,
    ) -> Result<Self> {
        if image.shape() != text.shape() {
            return Err(Error::Dimension {
                op: "corpus image/text",
                left: image.shape(),
                right: text.shape(),
            });
        }
        if labels.len() != image.rows() {
            return Err(Error::Dimension {
                op: "corpus labels",
                left: image.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(index) = image.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "image features".into(),
                index,
            });
        }
        if let Some(index) = text.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "text features".into(),
                index,
            });
        }
        for (class, attr) in &class_attrs {
            if attr.len() != image.cols() {
                return Err(Error::Dimension {
                    op: "corpus attributes",
                    left: (1, image.cols()),
                    right: (1, attr.len()),
                });
            }
            if let Some(index) = attr.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("attribute of class {class}"),
                    index,
                });
            }
        }
        if let Some(&missing) = labels.iter().find(|l| !class_attrs.contains_key(l)) {
            return Err(Error::MissingAttribute(missing));
        }
        Ok(Self {
            name: name.into(),
            image,
            text,
            labels,
            class_attrs,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature width shared by image, text and attribute vectors.
    pub fn dim(&self) -> usize {
        self.image.cols()
    }

    /// `(d_v, d_t, d_a)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.image.cols(), self.text.cols(), self.image.cols())
    }

    pub fn image(&self) -> &RealArray {
        &self.image
    }

    pub fn text(&self) -> &RealArray {
        &self.text
    }

    pub fn features(&self, modality: Modality) -> &RealArray {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn class_attrs(&self) -> &BTreeMap<ClassId, Vec<f64>> {
        &self.class_attrs
    }

    pub fn attr(&self, class: ClassId) -> Result<&[f64]> {
        self.class_attrs
            .get(&class)
            .map(Vec::as_slice)
            .ok_or(Error::MissingAttribute(class))
    }

    pub fn instance(&self, i: usize) -> Instance<'_> {
        let label = self.labels[i];
        Instance {
            image: self.image.row(i),
            text: self.text.row(i),
            attr: &self.class_attrs[&label],
            label,
        }
    }

    /// Sorted distinct labels that occur on at least one instance.
    pub fn classes(&self) -> Vec<ClassId> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Instance indices per class, ascending.
    pub fn members(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut out: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }

    /// Attribute rows for the given indices, `k x d_a`.
    pub fn attrs_for(&self, idx: &[usize]) -> RealArray {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.class_attrs[&self.labels[i]]);
        }
        RealArray::from_vec(idx.len(), d, data)
    }

    /// Sub-corpus holding only the given instances (attributes are kept whole).
    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus {
            name: self.name.clone(),
            image: self.image.select_rows(idx),
            text: self.text.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_attrs: self.class_attrs.clone(),
        }
    }

    /// Appends the instances of `other`, which must share dimensions and agree
    /// on any attribute both define.
    pub fn concat(&self, other: &Corpus) -> Result<Corpus> {
        if other.dim() != self.dim() {
            return Err(Error::Dimension {
                op: "corpus concat",
                left: self.image.shape(),
                right: other.image.shape(),
            });
        }
        let mut attrs = self.class_attrs.clone();
        for (c, a) in &other.class_attrs {
            match attrs.get(c) {
                Some(existing) if existing != a => {
                    return Err(Error::contract(format!(
                        "class {c} has conflicting attribute vectors"
                    )))
                }
                _ => {
                    attrs.insert(*c, a.clone());
                }
            }
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Corpus {
            name: self.name.clone(),
            image: RealArray::vstack(&[&self.image, &other.image])?,
            text: RealArray::vstack(&[&self.text, &other.text])?,
            labels,
            class_attrs: attrs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (RealArray, RealArray, Vec<ClassId>, BTreeMap<ClassId, Vec<f64>>) {
        let img = RealArray::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let txt = img.clone();
        let attrs = BTreeMap::from([(3, vec![1.0, 0.0]), (5, vec![0.0, 1.0])]);
        (img, txt, vec![3, 5], attrs)
    }

    #[test]
    fn validates_labels_and_dims() {
        let (img, txt, labels, attrs) = tiny();
        let c = Corpus::new("t", img.clone(), txt.clone(), labels, attrs.clone()).unwrap();
        assert_eq!(c.classes(), vec![3, 5]);
        assert_eq!(c.instance(1).attr, &[0.0, 1.0]);

        let err = Corpus::new("t", img.clone(), txt.clone(), vec![3, 7], attrs.clone()).unwrap_err();
        assert_eq!(err.to_string(), "missing attribute for class 7");

        let bad = RealArray::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(matches!(
            Corpus::new("t", img, bad, vec![3, 5], attrs),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn concat_rejects_conflicting_attributes() {
        let (img, txt, labels, attrs) = tiny();
        let a = Corpus::new("a", img.clone(), txt.clone(), labels.clone(), attrs).unwrap();
        let other = BTreeMap::from([(3, vec![0.5, 0.5]), (5, vec![0.0, 1.0])]);
        let b = Corpus::new("b", img, txt, labels, other).unwrap();
        assert!(a.concat(&a).is_ok());
        assert!(a.concat(&b).is_err());
    }
}
