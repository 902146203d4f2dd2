use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::Bindings;
use crate::diffcore::{Graph, Grid3};
use crate::error::{Error, Result};
use crate::fusion::QualityMap;
use crate::harness::{clip_pair, Checkpoint};
use crate::io::write_pgm;
use crate::model::Inference;
use crate::video::RawVideo;

/// Gray level used for every pixel of a constant map.
pub const DEGENERATE_GRAY: u8 = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapExport {
    pub name: String,
    /// `[T', H', W']`.
    pub grid: Grid3,
    pub min: f64,
    pub max: f64,
    /// Constant map; written as uniform mid-gray.
    pub degenerate: bool,
    pub mean: f64,
    /// One PGM per temporal slice.
    pub files: Vec<PathBuf>,
    #[serde(skip)]
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityMapReport {
    pub video_id: String,
    pub inference: Inference,
    pub score: f64,
    pub maps: Vec<MapExport>,
}

impl QualityMapReport {
    pub fn map(&self, name: &str) -> Option<&MapExport> {
        self.maps.iter().find(|m| m.name == name)
    }
}

/// Min-max scaling to 8 bits; `None` scale for a constant map.
pub fn scale_to_gray(values: &[f64]) -> (Vec<u8>, bool) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return (vec![DEGENERATE_GRAY; values.len()], true);
    }
    let gray = values
        .iter()
        .map(|&v| ((v - min) / (max - min) * 255.0).round() as u8)
        .collect();
    (gray, false)
}

fn write_map(dir: &Path, name: &str, grid: Grid3, values: Vec<f64>) -> Result<MapExport> {
    let [t, h, w] = grid;
    if values.len() != t * h * w {
        return Err(Error::dim("quality map", &grid, &[values.len()]));
    }
    let (gray, degenerate) = scale_to_gray(&values);
    let mut files = Vec::with_capacity(t);
    for s in 0..t {
        let path = dir.join(format!("{name}_t{s}.pgm"));
        write_pgm(&path, w, h, &gray[s * h * w..(s + 1) * h * w])?;
        files.push(path);
    }
    Ok(MapExport {
        name: name.to_string(),
        grid,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        degenerate,
        mean: values.iter().sum::<f64>() / values.len() as f64,
        files,
        values,
    })
}

fn read_map(g: &Graph<f32>, m: &QualityMap) -> Vec<f64> {
    g.data(m.var).iter().map(|&v| v as f64).collect()
}

/// Runs the model on `video` and writes the technical, aesthetic and
/// merged quality maps (whichever exist for the model and inference mode).
///
/// The merged map is the element-wise mean of the two branch maps, or the
/// single available map; its average equals the score.
pub fn export_quality_map(ckpt: &Checkpoint, video: &RawVideo, inference: Inference, out: &Path) -> Result<QualityMapReport> {
    fs::create_dir_all(out)?;
    let model = ckpt.model()?;
    let clips = clip_pair(video, &ckpt.config.sampler)?;
    let mut g = Graph::new();
    let mut bind = Bindings::frozen();
    let o = model.forward(&mut g, &ckpt.store, &mut bind, &clips, inference)?;
    let score = g.scalar(o.score) as f64;

    let mut maps = Vec::new();
    let t = o.technical.map(|m| (m.grid, read_map(&g, &m)));
    let a = o.aesthetic.map(|m| (m.grid, read_map(&g, &m)));
    let j = o.joint.map(|m| (m.grid, read_map(&g, &m)));
    let merged = match (&t, &a, &j) {
        (Some((gt, vt)), Some((ga, va)), _) if gt == ga => (*gt, vt.iter().zip(va).map(|(x, y)| 0.5 * (x + y)).collect()),
        (_, _, Some((gj, vj))) => (*gj, vj.clone()),
        (Some((gt, vt)), None, None) => (*gt, vt.clone()),
        (None, Some((ga, va)), None) => (*ga, va.clone()),
        _ => return Err(Error::Contract("model produced no quality map".into())),
    };
    if let Some((grid, v)) = t {
        maps.push(write_map(out, "technical", grid, v)?);
    }
    if let Some((grid, v)) = a {
        maps.push(write_map(out, "aesthetic", grid, v)?);
    }
    maps.push(write_map(out, "merged", merged.0, merged.1)?);

    let mut w = csv::Writer::from_path(out.join("quality_maps.csv"))?;
    w.write_record(["map", "t", "y", "x", "value"])?;
    for m in &maps {
        let [_, h, wd] = m.grid;
        for (i, v) in m.values.iter().enumerate() {
            let (s, y, x) = (i / (h * wd), (i / wd) % h, i % wd);
            w.write_record([m.name.clone(), s.to_string(), y.to_string(), x.to_string(), format!("{v:e}")])?;
        }
    }
    w.flush()?;
    let report = QualityMapReport {
        video_id: video.id.clone(),
        inference,
        score,
        maps,
    };
    fs::write(out.join("quality_maps.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_is_mid_gray() {
        assert_eq!(scale_to_gray(&[0.3; 5]), (vec![128; 5], true));
    }

    #[test]
    fn extremes_map_to_black_and_white() {
        assert_eq!(scale_to_gray(&[-1.0, 0.0, 1.0]).0, vec![0, 128, 255]);
    }
}
