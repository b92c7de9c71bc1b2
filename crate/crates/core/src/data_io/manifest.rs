//! Tab-separated dataset manifests: `id<TAB>rgb<TAB>depth<TAB>mask`, with
//! paths relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::image::Image;
use super::netpbm;
use super::sample::{binarize_mask, Sample};
use crate::{Error, Result};

/// Samples plus a tally of masks that needed thresholding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Records whose mask held values other than 0 and 255.
    pub binarized_masks: usize,
    pub binarized_pixels: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub mask: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<Record>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Data(format!(
                "manifest line {}: expected 4 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::Data(format!("manifest line {}: duplicate id {}", lineno + 1, fields[0])));
        }
        records.push(Record {
            id: fields[0].to_string(),
            rgb: base.join(fields[1]),
            depth: base.join(fields[2]),
            mask: base.join(fields[3]),
        });
    }
    Ok(records)
}

fn load_record(r: &Record, ds: &mut Dataset) -> Result<Sample> {
    let tag = |e: Error| Error::Data(format!("record {}: {e}", r.id));
    let rgb = netpbm::read_expecting(&r.rgb, 3).map_err(tag)?;
    let depth = netpbm::read_expecting(&r.depth, 1).map_err(tag)?;
    let mut mask: Image = netpbm::read_expecting(&r.mask, 1).map_err(tag)?;
    let changed = binarize_mask(&mut mask);
    if changed > 0 {
        ds.binarized_masks += 1;
        ds.binarized_pixels += changed;
        eprintln!("warning: record {}: mask binarized at 128 ({changed} pixels)", r.id);
    }
    Sample::new(r.id.clone(), rgb, depth, mask).map_err(tag)
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut ds = Dataset::default();
    for r in parse_manifest(&text, base)? {
        let s = load_record(&r, &mut ds)?;
        ds.samples.push(s);
    }
    Ok(ds)
}

/// Writes every sample as `<id>_rgb.ppm`, `<id>_depth.pgm`, `<id>_mask.pgm`
/// under `dir`, plus `manifest.tsv` listing them.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for s in samples {
        let names = [
            format!("{}_rgb.ppm", s.id),
            format!("{}_depth.pgm", s.id),
            format!("{}_mask.pgm", s.id),
        ];
        netpbm::write(&s.rgb, &dir.join(&names[0]))?;
        netpbm::write(&s.depth, &dir.join(&names[1]))?;
        netpbm::write(&s.mask, &dir.join(&names[2]))?;
        manifest.push_str(&format!("{}\t{}\t{}\t{}\n", s.id, names[0], names[1], names[2]));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
