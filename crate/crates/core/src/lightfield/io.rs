//! On-disk formats: light-field container directories, PFM maps and raw
//! plenoptic PNGs.
//!
//! A container directory holds `meta.json` plus one file per view named by
//! `view_pattern` (`{r}` and `{c}` are replaced by the angular indices). Views
//! are 16-bit PNGs (value `round(x · 65535)`) or little-endian PFMs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use ndarray::{s, Array2, Array3, Array5};
use serde::{Deserialize, Serialize};

use super::{ColorSpace, LightField, PlenopticImage};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const PAIR_FILE: &str = "pair.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewFormat {
    Png,
    Pfm,
}

impl ViewFormat {
    fn extension(self) -> &'static str {
        match self {
            ViewFormat::Png => "png",
            ViewFormat::Pfm => "pfm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfMeta {
    pub angular: [usize; 2],
    pub color_space: ColorSpace,
    pub bit_depth: u32,
    pub white_level: f64,
    pub view_pattern: String,
}

impl LfMeta {
    pub fn view_file(&self, r: usize, c: usize) -> String {
        self.view_pattern
            .replace("{r}", &r.to_string())
            .replace("{c}", &c.to_string())
    }
}

/// Writes `bytes` to `path` through a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_dir(path);
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Builds a directory in a temp location, then renames it onto `dir`.
///
/// An existing `dir` is replaced only when it is empty or was written by
/// this toolkit (holds `meta.json` or `pair.json`).
pub fn write_dir_atomic(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = parent_dir(dir);
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".lfrt-staging")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    fill(staging.path())?;
    if dir.exists() {
        let replaceable = dir.join(META_FILE).exists()
            || dir.join(PAIR_FILE).exists()
            || fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_none();
        if !replaceable {
            return Err(Error::format(dir, "refusing to replace a non-container directory"));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_atomic(path, text.as_bytes())
}

/// Encodes `(c, h, w)` planes as PFM (`PF` for 3 channels, `Pf` for 1).
pub fn encode_pfm(planes: &Array3<f64>) -> Result<Vec<u8>> {
    let (c, h, w) = planes.dim();
    let tag = match c {
        1 => "Pf",
        3 => "PF",
        _ => return Err(Error::InvalidArgument(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(c * h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(planes[[ch, y, x]] as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Array3<f64>> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PFM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PFM header"))?);
    }
    pos += 1; // single whitespace byte after the scale
    let c = match fields[0] {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("missing PF/Pf magic")),
    };
    let w: usize = fields[1].parse().map_err(|_| bad("bad PFM width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad PFM scale"))?;
    let little = scale < 0.0;
    let body = bytes.get(pos..).ok_or_else(|| bad("truncated PFM body"))?;
    if body.len() < c * h * w * 4 {
        return Err(bad("truncated PFM body"));
    }
    let mut out = Array3::zeros((c, h, w));
    let mut k = 0;
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                let b = [body[k], body[k + 1], body[k + 2], body[k + 3]];
                let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
                out[[ch, y, x]] = f64::from(v);
                k += 4;
            }
        }
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, planes: &Array3<f64>) -> Result<()> {
    write_atomic(path, &encode_pfm(planes)?)
}

pub fn read_pfm(path: &Path) -> Result<Array3<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn save_png16(path: &Path, planes: &Array3<f64>) -> Result<()> {
    let (c, h, w) = planes.dim();
    let img_err = |e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    };
    let mut bytes = Vec::new();
    let cursor = std::io::Cursor::new(&mut bytes);
    match c {
        1 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([to_u16(planes[[0, y as usize, x as usize]])]));
            buf.write_to(&mut std::io::BufWriter::new(cursor), image::ImageFormat::Png)
                .map_err(img_err)?;
        }
        3 => {
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([
                    to_u16(planes[[0, y, x]]),
                    to_u16(planes[[1, y, x]]),
                    to_u16(planes[[2, y, x]]),
                ])
            });
            buf.write_to(&mut std::io::BufWriter::new(cursor), image::ImageFormat::Png)
                .map_err(img_err)?;
        }
        _ => return Err(Error::InvalidArgument(format!("PNG views hold 1 or 3 channels, got {c}"))),
    }
    write_atomic(path, &bytes)
}

fn open_png(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn planes(img: image::DynamicImage, channels: usize) -> Result<Array3<f64>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let buf = img.into_luma16();
            Ok(Array3::from_shape_fn((1, h, w), |(_, y, x)| f64::from(buf.get_pixel(x as u32, y as u32)[0])))
        }
        3 => {
            let buf = img.into_rgb16();
            Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| f64::from(buf.get_pixel(x as u32, y as u32)[c])))
        }
        _ => Err(Error::InvalidArgument(format!("PNG views hold 1 or 3 channels, got {channels}"))),
    }
}

/// Reads a PNG as `(c, h, w)` raw 16-bit sample values (8-bit files are
/// widened by the decoder).
pub fn read_png16(path: &Path, channels: usize) -> Result<Array3<f64>> {
    planes(open_png(path)?, channels)
}

/// Loads a container directory; values are clamped into `[0, 1]`.
pub fn read_light_field(dir: &Path) -> Result<LightField> {
    let meta: LfMeta = read_json(&dir.join(META_FILE))?;
    let [u, v] = meta.angular;
    let c = meta.color_space.channels();
    let mut views: Option<Array5<f64>> = None;
    for r in 0..u {
        for col in 0..v {
            let path = dir.join(meta.view_file(r, col));
            let plane = match path.extension().and_then(|e| e.to_str()) {
                Some("png") => read_png16(&path, c)? / 65535.0,
                Some("pfm") => read_pfm(&path)?,
                _ => return Err(Error::format(&path, "view files must be .png or .pfm")),
            };
            let (pc, h, w) = plane.dim();
            if pc != c {
                return Err(Error::format(&path, format!("expected {c} channels, found {pc}")));
            }
            let views = views.get_or_insert_with(|| Array5::zeros((u, v, c, h, w)));
            if views.dim().3 != h || views.dim().4 != w {
                return Err(Error::format(&path, "view size differs from view (0, 0)"));
            }
            views.slice_mut(s![r, col, .., .., ..]).assign(&plane);
        }
    }
    let views = views.ok_or_else(|| Error::format(dir, "container lists no views"))?;
    LightField::ingest(views, meta.color_space, meta.white_level)
}

/// Writes a container directory atomically.
pub fn write_light_field(lf: &LightField, dir: &Path, format: ViewFormat) -> Result<()> {
    let (u, v) = lf.angular_dims();
    let meta = LfMeta {
        angular: [u, v],
        color_space: lf.color(),
        bit_depth: match format {
            ViewFormat::Png => 16,
            ViewFormat::Pfm => 32,
        },
        white_level: lf.white_level(),
        view_pattern: format!("view_{{r}}_{{c}}.{}", format.extension()),
    };
    write_dir_atomic(dir, |staging| {
        for r in 0..u {
            for c in 0..v {
                let planes = lf.views().slice(s![r, c, .., .., ..]).to_owned();
                let path = staging.join(meta.view_file(r, c));
                match format {
                    ViewFormat::Png => save_png16(&path, &planes)?,
                    ViewFormat::Pfm => write_pfm(&path, &planes)?,
                }
            }
        }
        write_json(&staging.join(META_FILE), &meta)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlenopticGeometry {
    pub grid: [usize; 2],
    pub white_level: f64,
}

/// Reads a raw plenoptic PNG; pixel values stay in raw DN.
pub fn read_plenoptic(png: &Path, geometry: &Path) -> Result<PlenopticImage> {
    let geo: PlenopticGeometry = read_json(geometry)?;
    PlenopticImage::new(read_raw_png(png)?, (geo.grid[0], geo.grid[1]), geo.white_level)
}

/// Reads a PNG as raw sample values, one plane for gray files and three for
/// color files.
pub fn read_raw_png(png: &Path) -> Result<Array3<f64>> {
    let img = open_png(png)?;
    let channels = if img.color().has_color() { 3 } else { 1 };
    planes(img, channels)
}

/// Writes raw DN values (clamped to 16 bits) plus the geometry file.
pub fn write_plenoptic(p: &PlenopticImage, png: &Path, geometry: &Path) -> Result<()> {
    let scaled = p.pixels.mapv(|v| v / 65535.0);
    save_png16(png, &scaled)?;
    write_json(
        geometry,
        &PlenopticGeometry {
            grid: [p.grid.0, p.grid.1],
            white_level: p.white_level,
        },
    )
}

/// Single 2-D map as a one-channel PFM.
pub fn write_map_pfm(path: &Path, map: &Array2<f64>) -> Result<()> {
    write_pfm(path, &map.clone().insert_axis(ndarray::Axis(0)))
}
