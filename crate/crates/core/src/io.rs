//! On-disk formats: PFM float maps, PGM masks, JSON manifests, curve/report
//! exports and network checkpoints.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::{Field, ValidityMask};
use crate::metrics::DEFAULT_DEPTH_THRESHOLD;
use crate::nn::{Activation, DenseLayer, Mlp};
use crate::sparsify::{SparsificationResult, DEFAULT_FLOW_RELIABILITY_K, DEFAULT_FRACTION_STEP};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits off whitespace-separated header tokens, skipping `#` comments.
/// Returns the tokens and the offset just past the single whitespace byte
/// that terminates the last one.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return None;
    }
    Some((tokens, i + 1))
}

fn parse_dim(token: &str, what: &str, path: &Path) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::format(path, format!("bad {what} `{token}` in header"))),
    }
}

/// Re-tags a field-construction failure with the file it came from.
fn with_path(path: &Path, err: Error) -> Error {
    match err {
        Error::NonFinite { .. } => Error::format(path, err.to_string()),
        other => other,
    }
}

/// Decodes a PFM image. `Pf` yields one channel, `PF` three; rows are
/// stored bottom-up and a negative scale marks a little-endian payload.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Field> {
    let (tokens, offset) =
        header_tokens(bytes, 4).ok_or_else(|| Error::format(path, "truncated or malformed PFM header"))?;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::format(path, format!("unknown PFM magic `{other}`"))),
    };
    let width = parse_dim(&tokens[1], "width", path)?;
    let height = parse_dim(&tokens[2], "height", path)?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale `{}`", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, format!("bad scale `{}`", tokens[3])));
    }
    let little = scale < 0.0;
    let expected = width * height * channels * 4;
    let payload = &bytes[offset..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, expected {expected} for {width}x{height}x{channels}", payload.len()),
        ));
    }
    let mut data = vec![0.0; width * height * channels];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let row = k / (width * channels);
        let rest = k % (width * channels);
        data[(height - 1 - row) * width * channels + rest] = v as f64;
    }
    Field::new(height, width, channels, data).map_err(|e| with_path(path, e))
}

/// Encodes as little-endian PFM. Two-channel fields are padded to three
/// with a zero channel. Values are stored as `f32`.
pub fn encode_pfm(field: &Field) -> Result<Vec<u8>> {
    let (magic, stored) = match field.channels() {
        1 => ("Pf", 1),
        2 | 3 => ("PF", 3),
        c => {
            return Err(Error::InvalidArgument(format!(
                "PFM holds 1 or 3 channels, field has {c}"
            )))
        }
    };
    let (h, w, c) = (field.height(), field.width(), field.channels());
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * stored * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..stored {
                let v = if ch < c { field.get(y, x, ch) } else { 0.0 };
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "value {v} at pixel (x={x}, y={y}, c={ch}) overflows f32"
                    )));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    decode_pfm(&read_bytes(path)?, path)
}

pub fn write_pfm(field: &Field, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pfm(field)?)
}

/// Reads a binary (`P5`) or ASCII (`P2`) PGM; nonzero samples are valid.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<ValidityMask> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (tokens, offset) =
        header_tokens(&bytes, 4).ok_or_else(|| Error::format(path, "truncated or malformed PGM header"))?;
    let width = parse_dim(&tokens[1], "width", path)?;
    let height = parse_dim(&tokens[2], "height", path)?;
    let maxval = match tokens[3].parse::<u32>() {
        Ok(v) if (1..=65535).contains(&v) => v,
        _ => return Err(Error::format(path, format!("bad maxval `{}`", tokens[3]))),
    };
    let n = width * height;
    let valid: Vec<bool> = match tokens[0].as_str() {
        "P5" => {
            let sample = if maxval < 256 { 1 } else { 2 };
            let payload = &bytes[offset..];
            if payload.len() != n * sample {
                return Err(Error::format(
                    path,
                    format!("payload is {} bytes, expected {}", payload.len(), n * sample),
                ));
            }
            payload.chunks_exact(sample).map(|s| s.iter().any(|&b| b != 0)).collect()
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[offset..]);
            let values = text
                .split_ascii_whitespace()
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| Error::format(path, format!("bad sample `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != n {
                return Err(Error::format(path, format!("{} samples, expected {n}", values.len())));
            }
            values.into_iter().map(|v| v != 0).collect()
        }
        other => return Err(Error::format(path, format!("unknown PGM magic `{other}`"))),
    };
    ValidityMask::new(height, width, valid)
}

/// Writes a binary PGM with 255 for valid and 0 for invalid pixels.
pub fn write_mask_pgm(mask: &ValidityMask, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.flags().iter().map(|&v| if v { 255u8 } else { 0 }));
    write_bytes(path.as_ref(), &out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Depth,
    Flow,
}

impl Task {
    pub fn channels(self) -> usize {
        match self {
            Task::Depth => 1,
            Task::Flow => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Depth => "depth",
            Task::Flow => "flow",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub prediction_path: PathBuf,
    pub uncertainty_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestOptions {
    pub thr: f64,
    pub m: f64,
    pub normalize: bool,
    pub depth_clip: Option<(f64, f64)>,
    pub flow_k: f64,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            thr: DEFAULT_DEPTH_THRESHOLD,
            m: DEFAULT_FRACTION_STEP,
            normalize: true,
            depth_clip: None,
            flow_k: DEFAULT_FLOW_RELIABILITY_K,
        }
    }
}

/// Dataset description; entry paths are already resolved against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub entries: Vec<ManifestEntry>,
    pub options: ManifestOptions,
}

fn top_error(field: &'static str, message: impl Into<String>) -> Error {
    Error::Manifest {
        field,
        message: message.into(),
    }
}

fn entry_error(entry: usize, field: &'static str, message: impl Into<String>) -> Error {
    Error::ManifestEntry {
        entry,
        field,
        message: message.into(),
    }
}

fn option_f64(options: &Map<String, Value>, field: &'static str, default: f64) -> Result<f64> {
    match options.get(field) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| top_error(field, format!("expected a number, got {v}"))),
    }
}

fn entry_path(
    obj: &Map<String, Value>,
    index: usize,
    field: &'static str,
    base: &Path,
    required: bool,
) -> Result<Option<PathBuf>> {
    let raw = match obj.get(field) {
        None | Some(Value::Null) if !required => return Ok(None),
        None | Some(Value::Null) => return Err(entry_error(index, field, "missing")),
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(other) => return Err(entry_error(index, field, format!("expected a path string, got {other}"))),
    };
    let resolved = base.join(raw);
    if !resolved.is_file() {
        return Err(entry_error(
            index,
            field,
            format!("file not found: {}", resolved.display()),
        ));
    }
    Ok(Some(resolved))
}

/// Parses manifest JSON. Relative paths resolve against `base`; every file
/// must exist.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest> {
    let root: Value = serde_json::from_str(text).map_err(|e| top_error("<root>", format!("invalid JSON: {e}")))?;
    let root = root
        .as_object()
        .ok_or_else(|| top_error("<root>", "expected a JSON object"))?;
    for key in root.keys() {
        if !matches!(key.as_str(), "task" | "entries" | "options") {
            return Err(top_error("<root>", format!("unknown field `{key}`")));
        }
    }
    let task = match root.get("task").and_then(Value::as_str) {
        Some("depth") => Task::Depth,
        Some("flow") => Task::Flow,
        Some(other) => return Err(top_error("task", format!("expected `depth` or `flow`, got `{other}`"))),
        None => return Err(top_error("task", "missing or not a string")),
    };

    let mut options = ManifestOptions::default();
    if let Some(raw) = root.get("options") {
        let obj = raw
            .as_object()
            .ok_or_else(|| top_error("options", "expected an object"))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "thr" | "m" | "normalize" | "depth_clip" | "flow_k") {
                return Err(top_error("options", format!("unknown option `{key}`")));
            }
        }
        options.thr = option_f64(obj, "thr", options.thr)?;
        options.m = option_f64(obj, "m", options.m)?;
        options.flow_k = option_f64(obj, "flow_k", options.flow_k)?;
        if let Some(v) = obj.get("normalize") {
            options.normalize = v
                .as_bool()
                .ok_or_else(|| top_error("normalize", format!("expected a boolean, got {v}")))?;
        }
        match obj.get("depth_clip") {
            None | Some(Value::Null) => {}
            Some(v) => {
                let pair = v.as_array().filter(|a| a.len() == 2);
                let lo_hi = pair.and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)));
                match lo_hi {
                    Some((lo, hi)) if lo > 0.0 && lo < hi && hi.is_finite() => options.depth_clip = Some((lo, hi)),
                    _ => return Err(top_error("depth_clip", format!("expected [min, max] with 0 < min < max, got {v}"))),
                }
            }
        }
        if !(options.thr > 1.0) {
            return Err(top_error("thr", format!("must exceed 1, got {}", options.thr)));
        }
        if !(options.m > 0.0 && options.m <= 0.5) {
            return Err(top_error("m", format!("must lie in (0, 0.5], got {}", options.m)));
        }
        if !(options.flow_k > 0.0) {
            return Err(top_error("flow_k", format!("must be positive, got {}", options.flow_k)));
        }
    }

    let raw_entries = root
        .get("entries")
        .and_then(Value::as_array)
        .ok_or_else(|| top_error("entries", "missing or not an array"))?;
    if raw_entries.is_empty() {
        return Err(top_error("entries", "no entries"));
    }
    let entries = raw_entries
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let obj = raw
                .as_object()
                .ok_or_else(|| entry_error(i, "<entry>", "expected an object"))?;
            for key in obj.keys() {
                if !matches!(
                    key.as_str(),
                    "prediction_path" | "uncertainty_path" | "ground_truth_path" | "mask_path"
                ) {
                    return Err(entry_error(i, "<entry>", format!("unknown field `{key}`")));
                }
            }
            Ok(ManifestEntry {
                prediction_path: entry_path(obj, i, "prediction_path", base, true)?.unwrap_or_default(),
                uncertainty_path: entry_path(obj, i, "uncertainty_path", base, true)?.unwrap_or_default(),
                ground_truth_path: entry_path(obj, i, "ground_truth_path", base, true)?.unwrap_or_default(),
                mask_path: entry_path(obj, i, "mask_path", base, false)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest { task, entries, options })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

/// One manifest entry read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedEntry {
    pub prediction: Field,
    /// Single channel.
    pub uncertainty: Field,
    pub ground_truth: Field,
    pub mask: ValidityMask,
}

fn task_field(path: &Path, task: Task, index: usize, field: &'static str) -> Result<Field> {
    let raw = read_pfm(path)?;
    match (task, raw.channels()) {
        (Task::Depth, 1) => Ok(raw),
        (Task::Flow, 3) => {
            let data = (0..raw.pixel_count()).flat_map(|p| raw.pixel(p)[..2].to_vec()).collect();
            Field::new(raw.height(), raw.width(), 2, data)
        }
        (_, c) => Err(entry_error(
            index,
            field,
            format!("{} task expects a {} PFM, {} has {c} channel(s)", task.name(), if task == Task::Depth { "Pf" } else { "PF" }, path.display()),
        )),
    }
}

/// Uncertainty maps are single-channel; a flow uncertainty given as a
/// vector field is reduced to the norm of its first two channels.
fn uncertainty_field(path: &Path, task: Task, index: usize) -> Result<Field> {
    let raw = read_pfm(path)?;
    match (task, raw.channels()) {
        (_, 1) => Ok(raw),
        (Task::Flow, 3) => {
            let data = (0..raw.pixel_count())
                .map(|p| {
                    let v = raw.pixel(p);
                    v[0].hypot(v[1])
                })
                .collect();
            Field::new(raw.height(), raw.width(), 1, data)
        }
        (_, c) => Err(entry_error(
            index,
            "uncertainty_path",
            format!("{} has {c} channels, expected 1", path.display()),
        )),
    }
}

impl Manifest {
    pub fn load_entry(&self, index: usize) -> Result<LoadedEntry> {
        let entry = self
            .entries
            .get(index)
            .ok_or_else(|| top_error("entries", format!("no entry {index}")))?;
        let prediction = task_field(&entry.prediction_path, self.task, index, "prediction_path")?;
        let ground_truth = task_field(&entry.ground_truth_path, self.task, index, "ground_truth_path")?;
        let uncertainty = uncertainty_field(&entry.uncertainty_path, self.task, index)?;
        let (h, w) = (ground_truth.height(), ground_truth.width());
        for (field, f) in [("prediction_path", &prediction), ("uncertainty_path", &uncertainty)] {
            if (f.height(), f.width()) != (h, w) {
                return Err(entry_error(
                    index,
                    field,
                    format!("size {}x{} differs from ground truth {w}x{h}", f.width(), f.height()),
                ));
            }
        }
        let mask = match &entry.mask_path {
            Some(p) => {
                let m = read_mask_pgm(p)?;
                if (m.height(), m.width()) != (h, w) {
                    return Err(entry_error(
                        index,
                        "mask_path",
                        format!("size {}x{} differs from ground truth {w}x{h}", m.width(), m.height()),
                    ));
                }
                m
            }
            None => ValidityMask::all_valid(h, w),
        };
        Ok(LoadedEntry {
            prediction,
            uncertainty,
            ground_truth,
            mask,
        })
    }
}

/// Shortest form is not used: every float is written with 17 significant
/// digits so output is byte-stable and round-trips exactly.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Pretty JSON formatter writing floats via [`format_f64`] (non-finite as
/// `null`).
struct FixedDigits<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for FixedDigits<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        if v.is_finite() {
            w.write_all(format_f64(v).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, v as f64)
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        FixedDigits(serde_json::ser::PrettyFormatter::with_indent(b"  ")),
    );
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidArgument(format!("report serialisation failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Tagged<'a, T: Serialize + ?Sized> {
    tool: &'static str,
    version: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes `report` as JSON, tagged with the tool name and version.
pub fn export_report_json<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = to_json_string(&Tagged {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        body: report,
    })?;
    write_bytes(path.as_ref(), text.as_bytes())
}

pub fn curves_csv(result: &SparsificationResult) -> String {
    let mut out = String::from("fraction,predicted,oracle\n");
    for ((f, p), o) in result
        .fractions
        .iter()
        .zip(&result.predicted_curve)
        .zip(&result.oracle_curve)
    {
        out.push_str(&format!("{},{},{}\n", format_f64(*f), format_f64(*p), format_f64(*o)));
    }
    out
}

pub fn export_curves_csv(result: &SparsificationResult, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), curves_csv(result).as_bytes())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"UQBMLP\0\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic, version, dropout, layer count, then per layer
/// `(inputs, outputs, activation)` followed by row-major weights and biases,
/// all little-endian.
pub fn encode_checkpoint(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&net.dropout().to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
        out.push(layer.activation.code());
    }
    for layer in net.layers() {
        for v in layer.weights.iter().chain(layer.biases.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "checkpoint is truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Mlp> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a network checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let dropout = r.f64()?;
    let count = r.u32()? as usize;
    let mut shapes = Vec::new();
    for _ in 0..count {
        let (inputs, outputs) = (r.u32()? as usize, r.u32()? as usize);
        let code = r.take(1)?[0];
        let act = Activation::from_code(code)
            .ok_or_else(|| Error::format(path, format!("unknown activation code {code}")))?;
        shapes.push((inputs, outputs, act));
    }
    let mut layers = Vec::with_capacity(count);
    for (inputs, outputs, act) in shapes {
        let weights = (0..inputs * outputs).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let biases = (0..outputs).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let weights = Array2::from_shape_vec((outputs, inputs), weights).expect("length checked");
        layers.push(DenseLayer::new(weights, Array1::from(biases), act)?);
    }
    if r.at != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Mlp::from_layers(layers, dropout)
}

pub fn save_checkpoint(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    file.write_all(&encode_checkpoint(net))
        .map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    decode_checkpoint(&read_bytes(path)?, path)
}
