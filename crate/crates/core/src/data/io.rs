use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::quantize;
use crate::tensor::Tensor;

/// Decodes an image file to a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + i] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Clamps to `[0, 1]`, quantizes to 8 bits and writes a PNG.
pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (b, c, h, w) = image.dims4()?;
    if b != 1 || c != 3 {
        return Err(Error::dim("save_image", "batch,channels", "1,3", format!("{b},{c}")));
    }
    let d = image.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([quantize(d[i]), quantize(d[h * w + i]), quantize(d[2 * h * w + i])])
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Sorted PNG files in `dir`, keyed by file stem.
fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Pairs loaded from disk plus one message per file that had no partner.
#[derive(Debug)]
pub struct Dataset {
    pub pairs: Vec<ImagePair>,
    pub warnings: Vec<String>,
}

/// Loads `<root>/input/*.png` against `<root>/target/*.png`, matched by stem and
/// sorted by stem.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let inputs = png_stems(&root.join("input"))?;
    let targets = png_stems(&root.join("target"))?;
    let mut warnings = Vec::new();
    for (stem, path) in inputs.iter().filter(|(s, _)| !targets.contains_key(*s)) {
        warnings.push(format!("{}: no target for input `{stem}`, skipped", path.display()));
    }
    for (stem, path) in targets.iter().filter(|(s, _)| !inputs.contains_key(*s)) {
        warnings.push(format!("{}: no input for target `{stem}`, skipped", path.display()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut pairs = Vec::new();
    for (stem, input) in &inputs {
        let Some(target) = targets.get(stem) else { continue };
        let degraded = load_image(input)?;
        let clean = load_image(target)?;
        pairs.push(ImagePair::new(stem.clone(), degraded, clean)?);
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!("no matched image pairs under {}", root.display())));
    }
    Ok(Dataset { pairs, warnings })
}

/// Writes pairs as `<root>/input/<id>.png` and `<root>/target/<id>.png`.
pub fn save_dataset(root: &Path, pairs: &[ImagePair]) -> Result<()> {
    let (inp, tgt) = (root.join("input"), root.join("target"));
    fs::create_dir_all(&inp)?;
    fs::create_dir_all(&tgt)?;
    for p in pairs {
        save_image(&inp.join(format!("{}.png", p.id)), &p.degraded)?;
        save_image(&tgt.join(format!("{}.png", p.id)), &p.clean)?;
    }
    Ok(())
}
