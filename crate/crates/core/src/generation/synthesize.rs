use std::collections::BTreeMap;

use super::losses::standard_normal;
use super::model::VaeGanModel;
use crate::data::{ClassId, Corpus};
use crate::error::{Error, Result};
use crate::numerics::RealArray;
use crate::rng::stream;

/// Generates `per_class` pseudo image/text pairs for each listed class from
/// its attribute vector, mapped back into the original feature space.
///
/// Image and text noise come from separate streams, so each side is drawn
/// independently under the shared class condition.
pub fn synthesize_target_set(
    image: &VaeGanModel,
    text: &VaeGanModel,
    classes: &[ClassId],
    class_attrs: &BTreeMap<ClassId, Vec<f64>>,
    per_class: usize,
    seed: u64,
) -> Result<Corpus> {
    if per_class == 0 {
        return Err(Error::config("gen_num must be positive"));
    }
    if classes.is_empty() {
        return Err(Error::config("no classes to synthesize"));
    }
    let mut attr_rows = Vec::with_capacity(classes.len() * per_class);
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    let mut attrs = BTreeMap::new();
    for &c in classes {
        let a = class_attrs.get(&c).ok_or(Error::MissingAttribute(c))?;
        attrs.insert(c, a.clone());
        for _ in 0..per_class {
            attr_rows.push(a.as_slice());
            labels.push(c);
        }
    }
    let a = RealArray::from_rows(&attr_rows)?;
    let n = labels.len();
    let mut img_rng = stream(seed, "synth/image");
    let mut txt_rng = stream(seed, "synth/text");
    let zi = standard_normal(n, image.latent_dim(), &mut img_rng);
    let zt = standard_normal(n, text.latent_dim(), &mut txt_rng);
    let fake_img = image.scaler.inverse(&image.generator.apply(&zi, &a)?);
    let fake_txt = text.scaler.inverse(&text.generator.apply(&zt, &a)?);
    Corpus::new("pseudo", fake_img, fake_txt, labels, attrs)
}
