use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pair::{DatasetSplit, MultiToOnePair, Severity};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stems of each split, as stored in `manifest.json`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "trainA")]
    pub train_a: Vec<String>,
    #[serde(rename = "trainB")]
    pub train_b: Vec<String>,
    pub test: Vec<String>,
}

/// An 8-bit PNG as a `3 x H x W` tensor in `[0, 1]`. Grey and alpha
/// channels are converted to RGB.
pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    }))
}

/// Writes an RGB PNG, clipping to `[0, 1]` and rounding to 8 bits.
pub fn write_png(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = img.chw();
    if c != 3 {
        return Err(Error::Shape(format!("PNG output needs 3 channels, got {c}")));
    }
    let mut raw = vec![0u8; h * w * 3];
    for (i, v) in img.data().iter().enumerate() {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    image::save_buffer(path, &raw, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|source| Error::Image { path: path.into(), source })
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `gt/<stem>.png`, `rain/<stem>__<severity>.png` and
/// `manifest.json` under `root`.
pub fn write_dataset(root: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    let root = root.as_ref();
    split.validate()?;
    let (gt_dir, rain_dir) = (root.join("gt"), root.join("rain"));
    create_dir(&gt_dir)?;
    create_dir(&rain_dir)?;
    let mut manifest = Manifest::default();
    for (pairs, stems) in [
        (&split.train_a, &mut manifest.train_a),
        (&split.train_b, &mut manifest.train_b),
        (&split.test, &mut manifest.test),
    ] {
        for p in pairs {
            write_png(gt_dir.join(format!("{}.png", p.name)), &p.gt)?;
            for (r, s) in p.rainy.iter().zip(&p.severities) {
                write_png(rain_dir.join(format!("{}__{}.png", p.name, s.name())), r)?;
            }
            stems.push(p.name.clone());
        }
    }
    let path = root.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(path, e))
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(s.to_owned());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Reads the layout written by [`write_dataset`]. Rainy images are grouped
/// by ground-truth stem and ordered light, medium, heavy. Orphan rainy
/// files, stems missing from disk or from the manifest, mismatched shapes
/// and backgrounds shared between trainA and trainB are errors.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<DatasetSplit> {
    let root = root.as_ref();
    let mpath = root.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;

    let gt_stems: BTreeSet<String> = png_stems(&root.join("gt"))?.into_iter().collect();
    let mut rainy: BTreeMap<String, Vec<(Severity, String)>> = BTreeMap::new();
    for file in png_stems(&root.join("rain"))? {
        let (stem, sev) = file
            .rsplit_once("__")
            .ok_or_else(|| Error::Dataset(format!("rainy file {file}.png is not named <stem>__<severity>.png")))?;
        if !gt_stems.contains(stem) {
            return Err(Error::Dataset(format!("rainy file {file}.png has no ground truth gt/{stem}.png")));
        }
        rainy.entry(stem.to_owned()).or_default().push((sev.parse()?, file.clone()));
    }

    let listed: Vec<&String> = manifest.train_a.iter().chain(&manifest.train_b).chain(&manifest.test).collect();
    let mut seen = BTreeSet::new();
    for s in &listed {
        if !seen.insert(s.as_str()) {
            return Err(Error::Dataset(format!("stem {s} is listed twice in the manifest")));
        }
        if !gt_stems.contains(s.as_str()) {
            return Err(Error::Dataset(format!("manifest lists {s} but gt/{s}.png is missing")));
        }
    }
    if let Some(s) = gt_stems.iter().find(|s| !seen.contains(s.as_str())) {
        return Err(Error::Dataset(format!("gt/{s}.png is not listed in the manifest")));
    }

    let load = |stems: &[String]| -> Result<Vec<MultiToOnePair>> {
        stems
            .iter()
            .map(|stem| {
                let gt = read_png(root.join("gt").join(format!("{stem}.png")))?;
                let mut group = rainy.get(stem).cloned().unwrap_or_default();
                group.sort();
                let images = group
                    .iter()
                    .map(|(_, f)| read_png(root.join("rain").join(format!("{f}.png"))))
                    .collect::<Result<Vec<_>>>()?;
                MultiToOnePair::new(stem.clone(), images, gt, group.into_iter().map(|g| g.0).collect())
            })
            .collect()
    };
    let split = DatasetSplit {
        train_a: load(&manifest.train_a)?,
        train_b: load(&manifest.train_b)?,
        test: load(&manifest.test)?,
    };
    split.verify_disjoint()?;
    Ok(split)
}
