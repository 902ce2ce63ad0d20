//! Single-channel intensity planes, binary masks, multi-channel slides and
//! their on-disk encodings (16-bit intensity PNG, {0,255} mask PNG).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Default physical pixel size in micrometers.
pub const DEFAULT_RESOLUTION_UM: f64 = 0.5;

/// Row-major single-channel `f32` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(width * height, data.len(), "plane data length");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Copies the `w x h` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Plane {
        assert!(x + w <= self.width && y + h <= self.height, "crop outside plane");
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Plane::new(w, h, data)
    }

    /// Mirror-pads (without repeating the edge pixel) up to at least `min_side` per axis.
    pub fn reflect_pad(&self, min_w: usize, min_h: usize) -> Plane {
        let (w, h) = (self.width.max(min_w), self.height.max(min_h));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = reflect_index(y, self.height);
            for x in 0..w {
                data.push(self.get(reflect_index(x, self.width), sy));
            }
        }
        Plane::new(w, h, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Applies one of the eight square symmetries, see [`dihedral`].
    pub fn dihedral(&self, code: u8) -> Plane {
        let (w, h, data) = dihedral(self.width, self.height, &self.data, code);
        Plane::new(w, h, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Mean over pixels where `mask` is set, `None` when the mask is empty.
    pub fn masked_mean(&self, mask: &Mask) -> Option<f64> {
        assert_eq!(self.dims(), mask.dims());
        let (mut sum, mut n) = (0.0f64, 0usize);
        for (&v, &m) in self.data.iter().zip(mask.data()) {
            if m {
                sum += v as f64;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Reorders a row-major grid by a flip/transpose code: bit 0 flips x,
/// bit 1 flips y, bit 2 transposes (after the flips).
pub fn dihedral<V: Copy>(width: usize, height: usize, data: &[V], code: u8) -> (usize, usize, Vec<V>) {
    let (fx, fy, tr) = (code & 1 != 0, code & 2 != 0, code & 4 != 0);
    let at = |x: usize, y: usize| {
        let sx = if fx { width - 1 - x } else { x };
        let sy = if fy { height - 1 - y } else { y };
        data[sy * width + sx]
    };
    if tr {
        let out = (0..width).flat_map(|x| (0..height).map(move |y| (x, y))).map(|(x, y)| at(x, y)).collect();
        (height, width, out)
    } else {
        let out = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| at(x, y)).collect();
        (width, height, out)
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Row-major binary image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(width * height, data.len(), "mask data length");
        Self { width, height, data }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![true; width * height])
    }

    /// Axis-aligned rectangle mask.
    pub fn rect(width: usize, height: usize, x: usize, y: usize, w: usize, h: usize) -> Self {
        let mut m = Self::empty(width, height);
        for yy in y..(y + h).min(height) {
            for xx in x..(x + w).min(width) {
                m.set(xx, yy, true);
            }
        }
        m
    }

    /// Pixels whose centers lie within `radius` of `(cx, cy)`.
    pub fn disk(width: usize, height: usize, cx: f64, cy: f64, radius: f64) -> Self {
        let mut m = Self::empty(width, height);
        let r2 = radius * radius;
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil() as usize).min(height.saturating_sub(1));
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(width.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r2 {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn dihedral(&self, code: u8) -> Mask {
        let (w, h, data) = dihedral(self.width, self.height, &self.data, code);
        Mask::new(w, h, data)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Mask {
        assert!(x + w <= self.width && y + h <= self.height, "crop outside mask");
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Mask::new(w, h, data)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Mask::new(self.width, self.height, data)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect();
        Mask::new(self.width, self.height, data)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect();
        Mask::new(self.width, self.height, data)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count()
    }

    /// Set pixels with at least one unset 4-neighbour (or on the image border).
    pub fn boundary(&self) -> Mask {
        let mut out = Mask::empty(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let edge = x == 0
                    || y == 0
                    || x + 1 == self.width
                    || y + 1 == self.height
                    || !self.get(x - 1, y)
                    || !self.get(x + 1, y)
                    || !self.get(x, y - 1)
                    || !self.get(x, y + 1);
                out.set(x, y, edge);
            }
        }
        out
    }
}

/// One named channel of a slide.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub plane: Plane,
}

/// Multi-channel slide raster with physical resolution metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideRaster {
    channels: Vec<Channel>,
    resolution_um: f64,
    bit_depth: u8,
}

impl SlideRaster {
    pub fn new(channels: Vec<Channel>, resolution_um: f64, bit_depth: u8) -> Result<Self> {
        if !(resolution_um > 0.0) {
            return Err(Error::invalid("slide", format!("resolution must be > 0, got {resolution_um}")));
        }
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("slide", "at least one channel is required"))?;
        let dims = first.plane.dims();
        if let Some(bad) = channels.iter().find(|c| c.plane.dims() != dims) {
            return Err(Error::shape(
                format!("slide channel {}", bad.name),
                format!("{}x{}", dims.0, dims.1),
                format!("{}x{}", bad.plane.width(), bad.plane.height()),
            ));
        }
        Ok(Self {
            channels,
            resolution_um,
            bit_depth,
        })
    }

    pub fn single(name: &str, plane: Plane, resolution_um: f64) -> Result<Self> {
        Self::new(
            vec![Channel {
                name: name.to_string(),
                plane,
            }],
            resolution_um,
            16,
        )
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&Plane> {
        self.channels
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
            .map(|c| &c.plane)
    }

    pub fn resolution_um(&self) -> f64 {
        self.resolution_um
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].plane.dims()
    }

    /// Reads per-channel files or the pages of a multi-page TIFF.
    ///
    /// With one path and several `names`, the file is treated as a multi-page
    /// TIFF with one page per channel.
    pub fn load(paths: &[PathBuf], names: &[String], resolution_um: f64) -> Result<Self> {
        if paths.len() == 1 && names.len() > 1 {
            let planes = read_tiff_pages(&paths[0])?;
            if planes.len() < names.len() {
                return Err(Error::invalid(
                    "slide",
                    format!("{} has {} page(s), {} channel name(s) given", paths[0].display(), planes.len(), names.len()),
                ));
            }
            let channels = names
                .iter()
                .zip(planes)
                .map(|(n, plane)| Channel { name: n.clone(), plane })
                .collect();
            return Self::new(channels, resolution_um, 16);
        }
        if paths.len() != names.len() {
            return Err(Error::invalid("slide", "one channel name per input file is required"));
        }
        let channels = paths
            .iter()
            .zip(names)
            .map(|(p, n)| {
                Ok(Channel {
                    name: n.clone(),
                    plane: read_intensity(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels, resolution_um, 16)
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = temp_sibling(path);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes `value` as pretty JSON and writes it atomically.
pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    static COUNTER: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    path.with_file_name(format!(".{name}.tmp{}-{n}", std::process::id()))
}

fn encode_png(img: image::DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf.into_inner())
}

/// Stores a plane as a 16-bit grayscale PNG (values rounded and clamped to `0..=65535`).
pub fn write_u16_png(path: &Path, plane: &Plane) -> Result<()> {
    let data: Vec<u16> = plane
        .data()
        .iter()
        .map(|&v| v.round().clamp(0.0, 65535.0) as u16)
        .collect();
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(plane.width() as u32, plane.height() as u32, data)
        .expect("buffer matches dims");
    write_atomic(path, &encode_png(img.into(), path)?)
}

/// Stores values in `[0, 1]` as an 8-bit PNG with `round(255 * p)`.
pub fn write_probability_png(path: &Path, plane: &Plane) -> Result<()> {
    let data: Vec<u8> = plane
        .data()
        .iter()
        .map(|&p| (255.0 * p.clamp(0.0, 1.0)).round() as u8)
        .collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(plane.width() as u32, plane.height() as u32, data)
        .expect("buffer matches dims");
    write_atomic(path, &encode_png(img.into(), path)?)
}

/// Stores a mask as an 8-bit PNG with values `{0, 255}`.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let data: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, data)
        .expect("buffer matches dims");
    write_atomic(path, &encode_png(img.into(), path)?)
}

/// Writes an 8-bit RGB image.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, rgb).expect("buffer matches dims");
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    write_atomic(path, &buf.into_inner())
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a grayscale intensity image into a plane of 16-bit-scale values.
pub fn read_intensity(path: &Path) -> Result<Plane> {
    let img = open_image(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32).collect();
    Ok(Plane::new(w as usize, h as usize, data))
}

/// Reads an 8-bit probability image back into `[0, 1]`.
pub fn read_probability(path: &Path) -> Result<Plane> {
    let img = open_image(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Ok(Plane::new(w as usize, h as usize, data))
}

/// Reads a mask image; pixels `>= 128` are set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open_image(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v >= 128).collect();
    Ok(Mask::new(w as usize, h as usize, data))
}

fn read_tiff_pages(path: &Path) -> Result<Vec<Plane>> {
    use tiff::decoder::{Decoder, DecodingResult};
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let tiff_err = |e: tiff::TiffError| Error::invalid("tiff", format!("{}: {e}", path.display()));
    let mut decoder = Decoder::new(std::io::BufReader::new(file)).map_err(tiff_err)?;
    let mut planes = Vec::new();
    loop {
        let (w, h) = decoder.dimensions().map_err(tiff_err)?;
        let data: Vec<f32> = match decoder.read_image().map_err(tiff_err)? {
            DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::F32(v) => v,
            _ => return Err(Error::invalid("tiff", format!("{}: unsupported sample format", path.display()))),
        };
        if data.len() != (w * h) as usize {
            return Err(Error::invalid("tiff", format!("{}: pages must be single-channel", path.display())));
        }
        planes.push(Plane::new(w as usize, h as usize, data));
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(tiff_err)?;
    }
    Ok(planes)
}
