//! On-disk dataset layouts.
//!
//! Generic layout, one directory per clip under the root:
//!
//! ```text
//! root/manifest.json
//! root/<clip_id>/frames/000000.png ...
//! root/<clip_id>/ppg.csv      time_s,ppg      (optional)
//! root/<clip_id>/hr.csv       time_s,hr_bpm   (optional)
//! ```
//!
//! PURE-style roots hold `<seq>/` image folders next to `<seq>.json` files
//! (or the JSON inside the folder). UBFC-style roots hold `<subject>/frames/`
//! extracted from the video plus `<subject>/ground_truth.txt`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::{ClipSource, DatasetRecord, HrTrace};
use crate::augment::BBox;
use crate::error::{Result, SspdError};
use crate::signal::RealSignal;

pub const MANIFEST: &str = "manifest.json";
const WRITE_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Generic,
    Pure,
    Ubfc,
}

impl FromStr for Layout {
    type Err = SspdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(Self::Generic),
            "pure" | "pure-style" => Ok(Self::Pure),
            "ubfc" | "ubfc-style" => Ok(Self::Ubfc),
            other => Err(SspdError::Usage(format!("unknown dataset layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadOptions {
    /// Frame rate for layouts that do not record one.
    pub fs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub n_frames: usize,
    pub duration_s: f64,
    pub has_ppg: bool,
    pub has_hr: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[i64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub fs: f64,
    pub records: Vec<ManifestRecord>,
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| SspdError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| SspdError::parse(&path, e.to_string()))
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").map_err(|e| SspdError::io(&path, e))
}

/// Decodes one image to `3 x H x W` values in `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|e| SspdError::parse(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            out[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok((h, w, out))
}

fn write_frame(path: &Path, frame: &[f32], h: usize, w: usize) -> Result<()> {
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| (frame[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save(path)?;
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for (t, v) in rows {
        text.push_str(&format!("{t},{v}\n"));
    }
    fs::write(path, text).map_err(|e| SspdError::io(path, e))
}

/// Writes one record under `root/<clip_id>/` and returns its manifest entry.
pub fn write_generic(root: &Path, record: &DatasetRecord) -> Result<ManifestRecord> {
    let dir = root.join(&record.clip_id);
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| SspdError::io(&frames_dir, e))?;
    let n = record.n_frames();
    let mut bbox = None;
    let mut start = 0;
    while start < n {
        let count = WRITE_CHUNK.min(n - start);
        // a lone trailing frame is loaded together with its predecessor
        let skip = usize::from(count < 2);
        let clip = record.source.load(start - skip, count + skip)?;
        bbox = clip.bbox;
        for t in 0..count {
            let path = frames_dir.join(format!("{:06}.png", start + t));
            write_frame(&path, clip.frame(t + skip), clip.height(), clip.width())?;
        }
        start += count;
    }
    let fs_hz = record.fs();
    if let Some(ppg) = &record.gt_ppg {
        write_csv(
            &dir.join("ppg.csv"),
            "time_s,ppg",
            ppg.samples().iter().enumerate().map(|(i, &v)| (i as f64 / fs_hz, v)),
        )?;
    }
    if let Some(hr) = &record.gt_hr {
        write_csv(&dir.join("hr.csv"), "time_s,hr_bpm", hr.times.iter().copied().zip(hr.bpm.iter().copied()))?;
    }
    Ok(ManifestRecord {
        clip_id: record.clip_id.clone(),
        subject_id: record.subject_id.clone(),
        task: record.task.clone(),
        n_frames: n,
        duration_s: record.duration_s(),
        has_ppg: record.gt_ppg.is_some(),
        has_hr: record.gt_hr.is_some(),
        bbox: bbox.map(|b| [b.x, b.y, b.w, b.h]),
    })
}

/// Two-column CSV with the given header; the first column must strictly increase.
pub fn read_two_column_csv(path: &Path, header: [&str; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| SspdError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| SspdError::parse(path, "empty file"))?
        .split(',')
        .map(str::trim)
        .collect();
    if head != header {
        return Err(SspdError::parse(path, format!("expected header {}, got {}", header.join(","), head.join(","))));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SspdError::parse(path, format!("row {}: bad number {s:?}", i + 2)))
        };
        if cols.len() != 2 {
            return Err(SspdError::parse(path, format!("row {}: expected 2 columns, got {}", i + 2, cols.len())));
        }
        let (x, y) = (parse(cols[0])?, parse(cols[1])?);
        if xs.last().is_some_and(|&prev| x <= prev) {
            return Err(SspdError::parse(path, format!("row {}: time {x} is not increasing", i + 2)));
        }
        xs.push(x);
        ys.push(y);
    }
    if xs.is_empty() {
        return Err(SspdError::parse(path, "no data rows"));
    }
    Ok((xs, ys))
}

/// Linear interpolation of `(times, values)` at `i / fs` for every frame.
/// Exact knots are returned unchanged.
fn resample_to_frames(times: &[f64], values: &[f64], n: usize, fs: f64, path: &Path) -> Result<Vec<f64>> {
    let period = 1.0 / fs;
    let (first, last) = (times[0], times[times.len() - 1]);
    let span_end = (n as f64 - 1.0) / fs;
    if first > period + 1e-9 || last < span_end - period - 1e-9 {
        return Err(SspdError::parse(
            path,
            format!("signal covers [{first}, {last}] s but the clip spans [0, {span_end}] s"),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let q = i as f64 / fs;
            let k = times.partition_point(|&t| t <= q);
            if k > 0 && times[k - 1] == q {
                values[k - 1]
            } else if k == 0 {
                values[0]
            } else if k == times.len() {
                values[k - 1]
            } else {
                let (t0, t1) = (times[k - 1], times[k]);
                let w = (q - t0) / (t1 - t0);
                values[k - 1] + w * (values[k] - values[k - 1])
            }
        })
        .collect())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SspdError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp"))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn sorted_subdirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| SspdError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(root: &Path, layout: Layout, opts: LoadOptions) -> Result<Vec<DatasetRecord>> {
    if !root.is_dir() {
        return Err(SspdError::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found")));
    }
    match layout {
        Layout::Generic => load_generic(root),
        Layout::Pure => load_pure(root, opts),
        Layout::Ubfc => load_ubfc(root, opts),
    }
}

fn load_generic(root: &Path) -> Result<Vec<DatasetRecord>> {
    let manifest = read_manifest(root)?;
    let fs_hz = manifest.fs;
    if !(fs_hz > 0.0 && fs_hz.is_finite()) {
        return Err(SspdError::parse(root.join(MANIFEST), format!("invalid fs {fs_hz}")));
    }
    let mut out = Vec::with_capacity(manifest.records.len());
    for entry in &manifest.records {
        let dir = root.join(&entry.clip_id);
        let paths = list_images(&dir.join("frames"))?;
        if paths.len() != entry.n_frames {
            return Err(SspdError::parse(
                &dir,
                format!("manifest lists {} frames, found {}", entry.n_frames, paths.len()),
            ));
        }
        let n = paths.len();
        let ppg_path = dir.join("ppg.csv");
        let gt_ppg = if ppg_path.exists() {
            let (t, v) = read_two_column_csv(&ppg_path, ["time_s", "ppg"])?;
            Some(RealSignal::new(resample_to_frames(&t, &v, n, fs_hz, &ppg_path)?, fs_hz)?)
        } else {
            None
        };
        let hr_path = dir.join("hr.csv");
        let gt_hr = if hr_path.exists() {
            let (times, bpm) = read_two_column_csv(&hr_path, ["time_s", "hr_bpm"])?;
            Some(HrTrace { times, bpm })
        } else {
            None
        };
        out.push(DatasetRecord {
            subject_id: entry.subject_id.clone(),
            clip_id: entry.clip_id.clone(),
            task: entry.task.clone(),
            source: ClipSource::Frames {
                paths,
                fs: fs_hz,
                bbox: entry.bbox.map(|[x, y, w, h]| BBox::new(x, y, w, h)),
            },
            gt_ppg,
            gt_hr,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PureValue {
    waveform: f64,
    #[serde(rename = "pulseRate")]
    pulse_rate: Option<f64>,
}

#[derive(Deserialize)]
struct PureSample {
    #[serde(rename = "Timestamp")]
    timestamp: f64,
    #[serde(rename = "Value")]
    value: PureValue,
}

#[derive(Deserialize)]
struct PureImage {
    #[serde(rename = "Timestamp")]
    timestamp: f64,
}

#[derive(Deserialize)]
struct PureJson {
    #[serde(rename = "/FullPackage")]
    package: Vec<PureSample>,
    #[serde(rename = "/Image", default)]
    images: Vec<PureImage>,
}

fn load_pure(root: &Path, opts: LoadOptions) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for dir in sorted_subdirs(root)? {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let json_path = [root.join(format!("{name}.json")), dir.join(format!("{name}.json"))]
            .into_iter()
            .find(|p| p.exists());
        let Some(json_path) = json_path else { continue };
        let nested = dir.join(&name);
        let paths = list_images(if nested.is_dir() { &nested } else { &dir })?;
        if paths.len() < 2 {
            return Err(SspdError::parse(&dir, "fewer than 2 frames"));
        }
        let text = fs::read_to_string(&json_path).map_err(|e| SspdError::io(&json_path, e))?;
        let meta: PureJson = serde_json::from_str(&text).map_err(|e| SspdError::parse(&json_path, e.to_string()))?;
        if meta.package.is_empty() {
            return Err(SspdError::parse(&json_path, "no waveform samples"));
        }
        let t0 = meta.images.first().map_or(meta.package[0].timestamp, |i| i.timestamp);
        let fs_hz = match (opts.fs, meta.images.len() >= 2) {
            (Some(f), _) => f,
            (None, true) => {
                let span = (meta.images[meta.images.len() - 1].timestamp - t0) * 1e-9;
                (meta.images.len() - 1) as f64 / span
            }
            (None, false) => 30.0,
        };
        let mut times = Vec::with_capacity(meta.package.len());
        let mut wave = Vec::with_capacity(meta.package.len());
        let mut hr = HrTrace { times: Vec::new(), bpm: Vec::new() };
        for s in &meta.package {
            let t = (s.timestamp - t0) * 1e-9;
            if times.last().is_some_and(|&p| t <= p) {
                continue;
            }
            times.push(t);
            wave.push(s.value.waveform);
            if let Some(r) = s.value.pulse_rate {
                hr.times.push(t);
                hr.bpm.push(r);
            }
        }
        let ppg = resample_to_frames(&times, &wave, paths.len(), fs_hz, &json_path)?;
        let (subject, task) = match name.split_once('-') {
            Some((s, t)) => (s.to_string(), Some(t.to_string())),
            None => (name.clone(), None),
        };
        out.push(DatasetRecord {
            subject_id: subject,
            clip_id: name,
            task,
            source: ClipSource::Frames { paths, fs: fs_hz, bbox: None },
            gt_ppg: Some(RealSignal::new(ppg, fs_hz)?),
            gt_hr: (!hr.bpm.is_empty()).then_some(hr),
        });
    }
    Ok(out)
}

fn load_ubfc(root: &Path, opts: LoadOptions) -> Result<Vec<DatasetRecord>> {
    let fs_hz = opts.fs.unwrap_or(30.0);
    let mut out = Vec::new();
    for dir in sorted_subdirs(root)? {
        let gt_path = dir.join("ground_truth.txt");
        if !gt_path.exists() {
            continue;
        }
        let frames_dir = dir.join("frames");
        if !frames_dir.is_dir() {
            return Err(SspdError::parse(
                &dir,
                "no frames/ directory; extract frames first, e.g. ffmpeg -i vid.avi frames/%06d.png",
            ));
        }
        let paths = list_images(&frames_dir)?;
        let text = fs::read_to_string(&gt_path).map_err(|e| SspdError::io(&gt_path, e))?;
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_whitespace().map(|v| v.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SspdError::parse(&gt_path, e.to_string()))?;
        if rows.len() < 3 || rows[0].len() != rows[2].len() || rows[0].len() < 2 {
            return Err(SspdError::parse(&gt_path, "expected three equal-length rows: ppg, hr, time"));
        }
        let (ppg_raw, hr_raw, times) = (&rows[0], &rows[1], &rows[2]);
        let ppg = if ppg_raw.len() == paths.len() {
            ppg_raw.clone()
        } else {
            let t0 = times[0];
            let rel: Vec<f64> = times.iter().map(|t| t - t0).collect();
            resample_to_frames(&rel, ppg_raw, paths.len(), fs_hz, &gt_path)?
        };
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let gt_hr = (hr_raw.len() == times.len()).then(|| HrTrace {
            times: times.iter().map(|t| t - times[0]).collect(),
            bpm: hr_raw.clone(),
        });
        out.push(DatasetRecord {
            subject_id: name.clone(),
            clip_id: name,
            task: None,
            source: ClipSource::Frames { paths, fs: fs_hz, bbox: None },
            gt_ppg: Some(RealSignal::new(ppg, fs_hz)?),
            gt_hr,
        });
    }
    Ok(out)
}
