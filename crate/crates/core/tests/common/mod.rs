#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use uqbench::grid::{Field, ValidityMask};
use uqbench::io::{write_mask_pgm, write_pfm};

/// Remaining-mean curve built by literally deleting pixels: at each step the
/// highest-ranked survivors are dropped (ranking: key descending, then
/// index ascending) until `round(fraction * n)` are gone, capped at n - 1.
pub fn remove_and_average(errors: &[f64], keys: &[f64], step: f64, root: bool) -> Vec<f64> {
    let n = errors.len();
    let steps = (1.0 / step + 1e-9).floor() as usize;
    let mut alive: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(steps);
    for j in 0..steps {
        let want = ((j as f64 * step * n as f64).round() as usize).min(n - 1);
        while n - alive.len() < want {
            let (pos, _) = alive
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| keys[a].partial_cmp(&keys[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            alive.remove(pos);
        }
        let mean = alive.iter().map(|&i| errors[i]).sum::<f64>() / alive.len() as f64;
        curve.push(if root { mean.sqrt() } else { mean });
    }
    curve
}

pub fn brute_ause(errors: &[f64], scores: &[f64], step: f64, normalize: bool, root: bool) -> f64 {
    let p = remove_and_average(errors, scores, step, root);
    let o = remove_and_average(errors, errors, step, root);
    let scale = if normalize { p[0] } else { 1.0 };
    if scale == 0.0 {
        return 0.0;
    }
    (1..p.len())
        .map(|j| step * ((p[j - 1] - o[j - 1]) + (p[j] - o[j])) / (2.0 * scale))
        .sum()
}

/// Mann–Whitney by enumerating every (unreliable, reliable) pair.
pub fn brute_auroc(scores: &[f64], reliable: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for k in 0..scores.len() {
            if !reliable[i] && reliable[k] {
                den += 1.0;
                num += if scores[i] > scores[k] {
                    1.0
                } else if scores[i] == scores[k] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Values on a coarse lattice so that duplicates are frequent.
pub fn with_duplicates(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = rng.random_range(1..=n.max(2));
    (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64 * 4.0)
        .collect()
}

/// Random field whose values are exactly representable as `f32`.
pub fn f32_field(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f32, hi: f32) -> Field {
    let data = (0..h * w * c).map(|_| rng.random_range(lo..hi) as f64).collect();
    Field::new(h, w, c, data).unwrap()
}

pub struct EntryFiles<'a> {
    pub stem: &'a str,
    pub prediction: &'a Field,
    pub uncertainty: &'a Field,
    pub ground_truth: &'a Field,
    pub mask: Option<&'a ValidityMask>,
}

/// Writes one entry's files into `dir` and returns its manifest JSON object.
pub fn write_entry(dir: &Path, e: &EntryFiles) -> serde_json::Value {
    let p = format!("{}_pred.pfm", e.stem);
    let u = format!("{}_unc.pfm", e.stem);
    let g = format!("{}_gt.pfm", e.stem);
    write_pfm(e.prediction, dir.join(&p)).unwrap();
    write_pfm(e.uncertainty, dir.join(&u)).unwrap();
    write_pfm(e.ground_truth, dir.join(&g)).unwrap();
    let mut obj = serde_json::json!({
        "prediction_path": p,
        "uncertainty_path": u,
        "ground_truth_path": g,
    });
    if let Some(mask) = e.mask {
        let m = format!("{}_mask.pgm", e.stem);
        write_mask_pgm(mask, dir.join(&m)).unwrap();
        obj["mask_path"] = serde_json::Value::String(m);
    }
    obj
}

pub fn write_manifest(dir: &Path, name: &str, task: &str, entries: Vec<serde_json::Value>, options: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join(name);
    let doc = serde_json::json!({ "task": task, "entries": entries, "options": options });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}
